use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, CodecProfile};
use crate::document::{self, DocumentError};
use crate::id_assignment::{assign_ids, validate, AssignmentError, IdAssignment};
use crate::marking::{CapacityPolicy, MarkingError};
use crate::reconstruction::DEFAULT_BRIDGE_BUDGET;
use crate::topology::{RouterId, Topology};

use super::routing::{RouteError, RoutesTo, RoutingPolicy};

/// Largest payload that still fits a maximal IPv4 datagram with a full option area.
pub const MAX_PAYLOAD: usize = 65_535 - 60;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Source {
    pub attach: RouterId,
    /// Source address written into the packets; free to be spoofed.
    #[serde(rename = "src")]
    pub claimed_src: Ipv4Addr,
    pub packets: u32,
    #[serde(default = "default_payload")]
    pub payload: usize,
    /// Option bytes (hex) the attacker puts in the header before the
    /// packet reaches the first router.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forged_option: Option<String>,
}

fn default_payload() -> usize {
    1460
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Victim {
    pub attach: RouterId,
    pub address: Ipv4Addr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    pub assignment: IdAssignment,
    pub profile: CodecProfile,
    pub sources: Vec<Source>,
    pub victim: Victim,
    pub routing: RoutingPolicy,
    pub loss_rate: f64,
    pub seed: u64,
    pub on_capacity: CapacityPolicy,
    pub bridge_budget: usize,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Document(#[from] DocumentError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Marking(#[from] MarkingError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("{0}")]
    Invalid(String),
}

impl Scenario {
    /// Single source, default profile, shortest-path routing, no loss.
    pub fn simple(
        topology: Topology,
        assignment: IdAssignment,
        source: Source,
        victim: Victim,
    ) -> Self {
        Scenario {
            topology,
            assignment,
            profile: CodecProfile::default(),
            sources: vec![source],
            victim,
            routing: RoutingPolicy::ShortestPath,
            loss_rate: 0.0,
            seed: 0,
            on_capacity: CapacityPolicy::StopMarking,
            bridge_budget: DEFAULT_BRIDGE_BUDGET,
        }
    }

    /// Everything that can be wrong with a scenario before the first packet.
    pub fn check(&self) -> Result<(), ScenarioError> {
        self.profile.check()?;
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(ScenarioError::Invalid(format!(
                "loss_rate {} outside [0, 1]",
                self.loss_rate
            )));
        }
        if self.assignment.bit_width() != self.profile.bit_width {
            return Err(MarkingError::WidthMismatch {
                assignment: self.assignment.bit_width(),
                profile: self.profile.bit_width,
            }
            .into());
        }
        validate(&self.topology, &self.assignment)?;
        let routes = RoutesTo::new(&self.topology, self.victim.attach)?;
        for (i, s) in self.sources.iter().enumerate() {
            let Some(router) = self.topology.router(s.attach) else {
                return Err(ScenarioError::Invalid(format!(
                    "sources[{i}]: unknown router {}",
                    s.attach
                )));
            };
            if !router.marking_enabled {
                return Err(ScenarioError::Invalid(format!(
                    "sources[{i}]: attach router {} does not mark packets",
                    s.attach
                )));
            }
            if s.payload > MAX_PAYLOAD {
                return Err(ScenarioError::Invalid(format!(
                    "sources[{i}]: payload {} exceeds {MAX_PAYLOAD}",
                    s.payload
                )));
            }
            if let Some(hex) = &s.forged_option {
                codec::from_hex(hex).map_err(|e| ScenarioError::Invalid(format!("sources[{i}]: {e}")))?;
            }
            if routes.distance(s.attach).is_none() {
                return Err(RouteError::Unreachable {
                    src: s.attach,
                    dst: self.victim.attach,
                }
                .into());
            }
        }
        Ok(())
    }

    pub fn total_packets(&self) -> u64 {
        self.sources.iter().map(|s| u64::from(s.packets)).sum()
    }

    /// Resolve a scenario file; relative paths are taken from its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let doc: ScenarioDocument = document::from_yaml_str(&document::read_text(path)?)?;
        Self::from_document(doc, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_document(doc: ScenarioDocument, base: &Path) -> Result<Self, ScenarioError> {
        let topology = Topology::load(base.join(&doc.topology))?;
        let assignment = match &doc.assignment {
            Some(p) => IdAssignment::load(base.join(p))?,
            None => assign_ids(&topology, doc.assignment_seed.unwrap_or(doc.seed))?,
        }
        .with_bit_width(doc.profile.bit_width)?;
        let s = Scenario {
            topology,
            assignment,
            profile: doc.profile,
            sources: doc.sources,
            victim: doc.victim,
            routing: doc.routing,
            loss_rate: doc.loss_rate,
            seed: doc.seed,
            on_capacity: doc.on_capacity,
            bridge_budget: doc.bridge_budget,
        };
        s.check()?;
        Ok(s)
    }
}

/// On-disk form of a [`Scenario`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub topology: PathBuf,
    /// Without one, IDs come from the automatic assignment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<PathBuf>,
    /// Seed for the automatic assignment; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment_seed: Option<u64>,
    #[serde(default)]
    pub profile: CodecProfile,
    pub sources: Vec<Source>,
    pub victim: Victim,
    #[serde(default)]
    pub routing: RoutingPolicy,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub on_capacity: CapacityPolicy,
    #[serde(default = "default_bridge_budget")]
    pub bridge_budget: usize,
}

fn default_bridge_budget() -> usize {
    DEFAULT_BRIDGE_BUDGET
}
