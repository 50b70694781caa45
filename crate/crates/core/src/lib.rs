//! Single-packet IP traceback with per-port IDs carried in an IPv4 option.
//!
//! Marking routers append the ID of the port a packet leaves through; the
//! receiver walks the IDs backwards through the topology to recover the path.

pub mod codec;
pub mod document;
pub mod generate;
pub mod id_assignment;
pub mod marking;
pub mod reconstruction;
pub mod simulator;
pub mod topology;

pub use codec::{decode, encode, CodecError, CodecProfile, TraceOption};
pub use id_assignment::{assign_ids, validate, IdAssignment, TracemaxId};
pub use marking::{CapacityPolicy, MarkingConfig, Packet};
pub use reconstruction::{reconstruct, reconstruct_all, PathStatus, ReconstructedPath, ReconstructionError};
pub use topology::{PortRef, Router, RouterId, Topology};
