//! Per-router packet processing.
//!
//! * Ingress edge routers discard whatever option the packet carries and
//!   install a fresh zero-filled traceback option, optionally stamping the
//!   previous (external) hop into the sender slot.
//! * Every marking router appends the ID of its outgoing port.
//! * Egress edge routers stamp the next external device into the receiver
//!   slot.
//!
//! After ingress the option never changes size; all later writes are in place.

use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, CodecProfile, TraceOption, IPV4_BASE_HEADER_LEN};
use crate::id_assignment::IdAssignment;
use crate::topology::{PortRef, Router, RouterId};

/// Simulated IPv4 packet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    /// Raw option area including End-of-Option-List padding.
    pub option_bytes: Vec<u8>,
    pub payload: Vec<u8>,
}

impl Packet {
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, payload: Vec<u8>) -> Self {
        Packet {
            src,
            dst,
            option_bytes: Vec::new(),
            payload,
        }
    }

    pub fn header_len(&self) -> usize {
        IPV4_BASE_HEADER_LEN + self.option_bytes.len()
    }

    pub fn total_length(&self) -> usize {
        self.header_len() + self.payload.len()
    }

    pub fn payload_size(&self) -> usize {
        self.payload.len()
    }
}

/// What a marking router does when the option has no room left.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityPolicy {
    /// Forward unmodified; the trace stays valid but partial.
    #[default]
    StopMarking,
    DropPacket,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MarkingError {
    #[error("router {0} is not an edge router of this system")]
    NotBoundary(RouterId),
    #[error("router {0} does not mark packets")]
    NotMarking(RouterId),
    #[error("port {port} does not belong to router {router}")]
    ForeignPort { router: RouterId, port: PortRef },
    #[error("port {0} has no assigned ID")]
    Unassigned(PortRef),
    #[error("assignment bit width {assignment} differs from profile bit width {profile}")]
    WidthMismatch { assignment: u8, profile: u8 },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Clone, Debug)]
pub struct MarkingConfig {
    profile: CodecProfile,
    assignment: IdAssignment,
    system_boundary: BTreeSet<RouterId>,
    on_capacity: CapacityPolicy,
}

/// Result of [`MarkingConfig::mark`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkOutcome {
    Marked,
    /// Option full, packet left untouched (stop-marking policy).
    Truncated,
    /// Option full, packet must be discarded (drop policy).
    Dropped,
}

impl MarkingConfig {
    pub fn new(
        profile: CodecProfile,
        assignment: IdAssignment,
        system_boundary: impl IntoIterator<Item = RouterId>,
        on_capacity: CapacityPolicy,
    ) -> Result<Self, MarkingError> {
        profile.check()?;
        if assignment.bit_width() != profile.bit_width {
            return Err(MarkingError::WidthMismatch {
                assignment: assignment.bit_width(),
                profile: profile.bit_width,
            });
        }
        Ok(MarkingConfig {
            profile,
            assignment,
            system_boundary: system_boundary.into_iter().collect(),
            on_capacity,
        })
    }

    pub fn profile(&self) -> &CodecProfile {
        &self.profile
    }

    pub fn assignment(&self) -> &IdAssignment {
        &self.assignment
    }

    pub fn is_boundary(&self, router: RouterId) -> bool {
        self.system_boundary.contains(&router)
    }

    /// Replace any option the packet carries with a fresh traceback option.
    pub fn ingress_process(
        &self,
        pkt: &mut Packet,
        entry: &Router,
        prev_hop: Option<Ipv4Addr>,
    ) -> Result<(), MarkingError> {
        if !self.is_boundary(entry.id) {
            return Err(MarkingError::NotBoundary(entry.id));
        }
        let mut option = TraceOption::empty(&self.profile);
        if option.sender.is_some() {
            option.sender = Some(prev_hop.unwrap_or(pkt.src));
        }
        pkt.option_bytes = codec::encode(&option, &self.profile)?;
        Ok(())
    }

    /// Append the ID of `egress_port` at router `at`.
    pub fn mark(&self, pkt: &mut Packet, at: &Router, egress_port: PortRef) -> Result<MarkOutcome, MarkingError> {
        if !at.marking_enabled {
            return Err(MarkingError::NotMarking(at.id));
        }
        if egress_port.router != at.id {
            return Err(MarkingError::ForeignPort {
                router: at.id,
                port: egress_port,
            });
        }
        let id = self
            .assignment
            .get(egress_port)
            .ok_or(MarkingError::Unassigned(egress_port))?;
        match codec::append_id_in_place(&mut pkt.option_bytes, id, &self.profile) {
            Ok(()) => Ok(MarkOutcome::Marked),
            Err(CodecError::CapacityExceeded { .. }) => Ok(match self.on_capacity {
                CapacityPolicy::StopMarking => MarkOutcome::Truncated,
                CapacityPolicy::DropPacket => MarkOutcome::Dropped,
            }),
            Err(e) => Err(e.into()),
        }
    }

    /// Stamp the receiver slot with the next external device (or the
    /// packet's destination when there is none).
    pub fn egress_process(
        &self,
        pkt: &mut Packet,
        exit: &Router,
        next_external: Option<Ipv4Addr>,
    ) -> Result<(), MarkingError> {
        if !self.is_boundary(exit.id) {
            return Err(MarkingError::NotBoundary(exit.id));
        }
        let option = codec::decode(&pkt.option_bytes, &self.profile)?;
        if option.receiver.is_some() {
            codec::set_receiver(&mut pkt.option_bytes, next_external.unwrap_or(pkt.dst), &self.profile)?;
        }
        Ok(())
    }
}
