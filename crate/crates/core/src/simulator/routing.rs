//! Hop-count routing.

use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{PortRef, RouterId, Topology};

/// Written as `{ policy: shortest_path }` or `{ policy: ecmp_random, seed: 7 }`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum RoutingPolicy {
    /// Minimal hop count, ties broken toward the lowest next-hop router id.
    #[default]
    ShortestPath,
    /// Uniform choice among all minimal-hop router paths, drawn per packet.
    EcmpRandom { seed: u64 },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RouteError {
    #[error("unknown router {0}")]
    UnknownRouter(RouterId),
    #[error("router {dst} is unreachable from {src}")]
    Unreachable { src: RouterId, dst: RouterId },
}

/// Distances and shortest-path counts toward one destination.
#[derive(Clone, Debug)]
pub struct RoutesTo {
    dst: RouterId,
    dist: BTreeMap<RouterId, usize>,
    paths: BTreeMap<RouterId, u128>,
}

impl RoutesTo {
    pub fn new(t: &Topology, dst: RouterId) -> Result<Self, RouteError> {
        if !t.contains(dst) {
            return Err(RouteError::UnknownRouter(dst));
        }
        let mut dist = BTreeMap::from([(dst, 0usize)]);
        let mut order = vec![dst];
        let mut queue = VecDeque::from([dst]);
        while let Some(r) = queue.pop_front() {
            let d = dist[&r];
            for n in t.neighbors_unchecked(r) {
                if let Entry::Vacant(e) = dist.entry(n.router) {
                    e.insert(d + 1);
                    order.push(n.router);
                    queue.push_back(n.router);
                }
            }
        }
        let mut paths = BTreeMap::from([(dst, 1u128)]);
        for r in order.into_iter().skip(1) {
            let count = next_hops(t, &dist, r)
                .iter()
                .fold(0u128, |acc, n| acc.saturating_add(paths[n]));
            paths.insert(r, count);
        }
        Ok(RoutesTo { dst, dist, paths })
    }

    pub fn distance(&self, src: RouterId) -> Option<usize> {
        self.dist.get(&src).copied()
    }

    /// Number of distinct minimal-hop router paths from `src`.
    pub fn path_count(&self, src: RouterId) -> u128 {
        self.paths.get(&src).copied().unwrap_or(0)
    }

    pub fn route<R: Rng + ?Sized>(
        &self,
        t: &Topology,
        src: RouterId,
        policy: RoutingPolicy,
        rng: &mut R,
    ) -> Result<Vec<RouterId>, RouteError> {
        if !t.contains(src) {
            return Err(RouteError::UnknownRouter(src));
        }
        if !self.dist.contains_key(&src) {
            return Err(RouteError::Unreachable { src, dst: self.dst });
        }
        let mut path = vec![src];
        let mut here = src;
        while here != self.dst {
            let hops = next_hops(t, &self.dist, here);
            here = match policy {
                RoutingPolicy::ShortestPath => *hops.first().expect("reachable router has a next hop"),
                RoutingPolicy::EcmpRandom { .. } => {
                    let total = hops.iter().fold(0u128, |acc, n| acc.saturating_add(self.paths[n]));
                    let mut pick = rng.gen_range(0..total);
                    *hops
                        .iter()
                        .find(|n| {
                            let c = self.paths[*n];
                            if pick < c {
                                true
                            } else {
                                pick -= c;
                                false
                            }
                        })
                        .expect("pick below total")
                }
            };
            path.push(here);
        }
        Ok(path)
    }
}

fn next_hops(t: &Topology, dist: &BTreeMap<RouterId, usize>, r: RouterId) -> Vec<RouterId> {
    let d = dist[&r];
    t.neighbors_unchecked(r)
        .map(|n| n.router)
        .filter(|n| dist.get(n).is_some_and(|nd| nd + 1 == d))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn route<R: Rng + ?Sized>(
    t: &Topology,
    src: RouterId,
    dst: RouterId,
    policy: RoutingPolicy,
    rng: &mut R,
) -> Result<Vec<RouterId>, RouteError> {
    RoutesTo::new(t, dst)?.route(t, src, policy, rng)
}

/// Random stream for one packet: the same `(seed, packet)` always routes
/// the same way, whatever order packets are processed in.
pub fn packet_rng(seed: u64, packet: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(packet);
    rng
}

/// Port `from` uses to reach its neighbor `to` (lowest port on parallel links).
pub fn egress_port(t: &Topology, from: RouterId, to: RouterId) -> Option<PortRef> {
    t.neighbors_unchecked(from).find(|n| n.router == to).map(|n| n.local)
}
