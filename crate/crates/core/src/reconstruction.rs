//! Path reconstruction from a captured option.
//!
//! [`reconstruct`] is the production walk: starting at the router where the
//! packet was captured it consumes IDs from the back, each time moving to the
//! single marking neighbor whose port facing the current router carries the
//! ID. [`reconstruct_all`] is the exhaustive variant: it returns every path
//! consistent with the trail and can interpose non-marking (bridged) routers.
//!
//! Both are pure functions of the option, the receiver, the topology and the
//! assignment. The packet's claimed source address never enters them.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::Serialize;
use thiserror::Error;

use crate::codec::TraceOption;
use crate::id_assignment::{IdAssignment, TracemaxId};
use crate::topology::{RouterId, Topology};

/// Consecutive non-marking routers the oracle may interpose by default.
pub const DEFAULT_BRIDGE_BUDGET: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    /// Every ID consumed; the head router has no unmarked neighbor it could
    /// have received the packet from.
    Complete,
    /// Every ID consumed, but the head router borders non-marking routers,
    /// so the packet may have travelled further before the first mark.
    Partial,
    /// The option was full and the walk could only recover the hops that
    /// were marked before it filled up. The path does not reach the receiver.
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ReconstructedPath {
    /// Source-first.
    pub routers: Vec<RouterId>,
    pub addresses: Vec<Ipv4Addr>,
    pub status: PathStatus,
    pub external_sender: Option<Ipv4Addr>,
    pub external_receiver: Option<Ipv4Addr>,
}

impl ReconstructedPath {
    pub fn ingress(&self) -> RouterId {
        self.routers[0]
    }

    /// Number of routers identified.
    pub fn hops(&self) -> usize {
        self.routers.len()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
pub enum ReconstructionError {
    #[error("receiver {0} is not in the topology")]
    UnknownReceiver(RouterId),
    #[error("no neighbor of router {at} faces it with ID {id} ({remaining} IDs left)")]
    NoMatch {
        at: RouterId,
        id: TracemaxId,
        remaining: usize,
    },
    #[error("ID {id} at router {at} is ambiguous between routers {}", join(candidates))]
    Ambiguous {
        at: RouterId,
        id: TracemaxId,
        candidates: Vec<RouterId>,
    },
}

fn join(routers: &[RouterId]) -> String {
    routers.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Deterministic backward walk.
pub fn reconstruct(
    opt: &TraceOption,
    receiver: RouterId,
    t: &Topology,
    a: &IdAssignment,
) -> Result<ReconstructedPath, ReconstructionError> {
    if !t.contains(receiver) {
        return Err(ReconstructionError::UnknownReceiver(receiver));
    }
    if is_full(opt, a) {
        return from_full_option(opt, receiver, t, a);
    }
    let mut path = vec![receiver];
    let mut here = receiver;
    for (consumed, id) in opt.ids.iter().rev().enumerate() {
        let candidates = marked_predecessors(t, a, here, *id, &path);
        match candidates.len() {
            1 => {
                here = *candidates.first().expect("one candidate");
                path.push(here);
            }
            0 => {
                let no_match = ReconstructionError::NoMatch {
                    at: here,
                    id: *id,
                    remaining: opt.ids.len() - consumed,
                };
                return Err(no_match);
            }
            _ => {
                return Err(ReconstructionError::Ambiguous {
                    at: here,
                    id: *id,
                    candidates: candidates.into_iter().collect(),
                })
            }
        }
    }
    path.reverse();
    Ok(finish(path, opt, t))
}

/// Exhaustive backward search.
///
/// Returns every simple path ending at `receiver` whose ID trail equals the
/// option's, where up to `bridge_budget` consecutive non-marking routers may
/// sit between two marked hops. An empty result means no path matches.
pub fn reconstruct_all(
    opt: &TraceOption,
    receiver: RouterId,
    t: &Topology,
    a: &IdAssignment,
    bridge_budget: usize,
) -> Vec<ReconstructedPath> {
    if !t.contains(receiver) {
        return Vec::new();
    }
    if is_full(opt, a) {
        return forward_walks(opt, t, a)
            .into_iter()
            .map(|p| classify_walk(p, receiver, opt, t))
            .collect();
    }
    let mut found = BTreeSet::new();
    let mut path = vec![receiver];
    search(t, a, &opt.ids, bridge_budget, 0, &mut path, &mut found);
    found
        .into_iter()
        .map(|mut p| {
            p.reverse();
            finish(p, opt, t)
        })
        .collect()
}

fn search(
    t: &Topology,
    a: &IdAssignment,
    remaining: &[TracemaxId],
    budget: usize,
    bridges: usize,
    path: &mut Vec<RouterId>,
    found: &mut BTreeSet<Vec<RouterId>>,
) {
    let Some((&id, rest)) = remaining.split_last() else {
        found.insert(path.clone());
        return;
    };
    let here = *path.last().expect("non-empty path");
    for next in marked_predecessors(t, a, here, id, path) {
        path.push(next);
        search(t, a, rest, budget, 0, path, found);
        path.pop();
    }
    if bridges < budget {
        let bridges_here: BTreeSet<RouterId> = t
            .neighbors_unchecked(here)
            .filter(|n| !t.is_marking(n.router) && !path.contains(&n.router))
            .map(|n| n.router)
            .collect();
        for next in bridges_here {
            path.push(next);
            search(t, a, remaining, budget, bridges + 1, path, found);
            path.pop();
        }
    }
}

/// Marking neighbors of `here`, not yet on `path`, whose port facing `here`
/// carries `id`. Parallel links to the same router count once.
fn marked_predecessors(
    t: &Topology,
    a: &IdAssignment,
    here: RouterId,
    id: TracemaxId,
    path: &[RouterId],
) -> BTreeSet<RouterId> {
    t.neighbors_unchecked(here)
        .filter(|n| t.is_marking(n.router) && a.get(n.remote) == Some(id) && !path.contains(&n.router))
        .map(|n| n.router)
        .collect()
}

fn finish(routers: Vec<RouterId>, opt: &TraceOption, t: &Topology) -> ReconstructedPath {
    let head = routers[0];
    let borders_unmarked = t
        .neighbors_unchecked(head)
        .any(|n| !t.is_marking(n.router) && !routers.contains(&n.router));
    let status = if borders_unmarked {
        PathStatus::Partial
    } else {
        PathStatus::Complete
    };
    with_addresses(routers, status, opt, t)
}

fn with_addresses(routers: Vec<RouterId>, status: PathStatus, opt: &TraceOption, t: &Topology) -> ReconstructedPath {
    let addresses = routers
        .iter()
        .map(|r| t.router(*r).expect("path routers exist").address)
        .collect();
    ReconstructedPath {
        routers,
        addresses,
        status,
        external_sender: opt.sender,
        external_receiver: opt.receiver,
    }
}

/// A full option may have lost the marks closest to the receiver, so the
/// backward walk has no fixed starting point. The first-written IDs are
/// intact, so they are walked forward from every router that could have
/// written the first one.
fn from_full_option(
    opt: &TraceOption,
    receiver: RouterId,
    t: &Topology,
    a: &IdAssignment,
) -> Result<ReconstructedPath, ReconstructionError> {
    let mut walks = forward_walks(opt, t, a);
    match walks.len() {
        0 => Err(ReconstructionError::NoMatch {
            at: receiver,
            id: opt.ids[opt.ids.len() - 1],
            remaining: opt.ids.len(),
        }),
        1 => Ok(classify_walk(walks.pop().expect("one walk"), receiver, opt, t)),
        _ => Err(ReconstructionError::Ambiguous {
            at: receiver,
            id: opt.ids[0],
            candidates: walks.iter().map(|w| w[0]).collect::<BTreeSet<_>>().into_iter().collect(),
        }),
    }
}

/// A forward walk that reaches the receiver covers the whole path; anything
/// shorter is only its beginning.
fn classify_walk(routers: Vec<RouterId>, receiver: RouterId, opt: &TraceOption, t: &Topology) -> ReconstructedPath {
    if routers.last() == Some(&receiver) {
        finish(routers, opt, t)
    } else {
        with_addresses(routers, PathStatus::Truncated, opt, t)
    }
}

fn is_full(opt: &TraceOption, a: &IdAssignment) -> bool {
    !opt.ids.is_empty() && opt.hop_count() >= opt.capacity(a.bit_width())
}

fn forward_walks(opt: &TraceOption, t: &Topology, a: &IdAssignment) -> Vec<Vec<RouterId>> {
    let mut out = BTreeSet::new();
    for start in t.routers().filter(|r| r.marking_enabled) {
        let mut path = vec![start.id];
        forward(t, a, &opt.ids, &mut path, &mut out);
    }
    out.into_iter().collect()
}

fn forward(
    t: &Topology,
    a: &IdAssignment,
    remaining: &[TracemaxId],
    path: &mut Vec<RouterId>,
    out: &mut BTreeSet<Vec<RouterId>>,
) {
    let Some((&id, rest)) = remaining.split_first() else {
        out.insert(path.clone());
        return;
    };
    let here = *path.last().expect("non-empty path");
    let next: BTreeSet<RouterId> = t
        .neighbors_unchecked(here)
        .filter(|n| a.get(n.local) == Some(id) && !path.contains(&n.router))
        .map(|n| n.router)
        .collect();
    for n in next {
        // unmarked routers in between are not inferred on the truncated part
        if !t.is_marking(n) && !rest.is_empty() {
            continue;
        }
        path.push(n);
        forward(t, a, rest, path, out);
        path.pop();
    }
}

/// Reconstruct with the deterministic walk, falling back to the exhaustive
/// search (with bridging) when the walk finds no match.
pub fn resolve(
    opt: &TraceOption,
    receiver: RouterId,
    t: &Topology,
    a: &IdAssignment,
    bridge_budget: usize,
) -> Result<ReconstructedPath, ReconstructionError> {
    match reconstruct(opt, receiver, t, a) {
        Err(err @ ReconstructionError::NoMatch { at, id, .. }) if bridge_budget > 0 => {
            let mut all = reconstruct_all(opt, receiver, t, a, bridge_budget);
            match all.len() {
                0 => Err(err),
                1 => Ok(all.pop().expect("one path")),
                _ => Err(ReconstructionError::Ambiguous {
                    at,
                    id,
                    candidates: all.iter().map(|p| p.ingress()).collect::<BTreeSet<_>>().into_iter().collect(),
                }),
            }
        }
        other => other,
    }
}

/// Per-ingress packet counts, plus failures tallied separately.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Attribution {
    pub ingress: BTreeMap<RouterId, u64>,
    pub failures: Vec<(usize, ReconstructionError)>,
}

/// Group captures by the first router of their reconstructed path.
/// Claimed source addresses play no part.
pub fn attribute_sources(
    captures: &[(TraceOption, RouterId)],
    t: &Topology,
    a: &IdAssignment,
    bridge_budget: usize,
) -> Attribution {
    let mut out = Attribution::default();
    for (i, (opt, receiver)) in captures.iter().enumerate() {
        match resolve(opt, *receiver, t, a, bridge_budget) {
            Ok(path) => *out.ingress.entry(path.ingress()).or_default() += 1,
            Err(e) => out.failures.push((i, e)),
        }
    }
    out
}
