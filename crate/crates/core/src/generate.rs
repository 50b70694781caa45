//! Topology builders used by the CLI, the bundled assets and the test suites.

use std::net::Ipv4Addr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::topology::{PortRef, Router, Topology};

/// Default address for router `id`: 10.0.0.0 + id.
pub fn router_address(id: u32) -> Ipv4Addr {
    Ipv4Addr::from(0x0a00_0000u32 + id)
}

/// `n` routers in a line, router `i` port 2 wired to router `i+1` port 1.
pub fn chain(n: u32) -> Topology {
    let mut t = Topology::new();
    for id in 1..=n {
        t.add_router(Router::new(id, router_address(id), 2))
            .expect("fresh id");
    }
    for id in 1..n {
        t.add_link(PortRef::new(id, 2), PortRef::new(id + 1, 1))
            .expect("free ports");
    }
    t
}

/// Center router 1 with `k` leaves (ids 2..=k+1); center port `i` faces leaf `i+1`.
pub fn star(k: u16) -> Topology {
    let mut t = Topology::new();
    t.add_router(Router::new(1, router_address(1), k.max(1)))
        .expect("fresh id");
    for i in 1..=k as u32 {
        let leaf = i + 1;
        t.add_router(Router::new(leaf, router_address(leaf), 1))
            .expect("fresh id");
        t.add_link(PortRef::new(1, i as u16), PortRef::new(leaf, 1))
            .expect("free ports");
    }
    t
}

/// 1 -> {2, 3} -> 4: two equal-cost paths between routers 1 and 4.
pub fn diamond() -> Topology {
    let mut t = Topology::new();
    for id in 1..=4 {
        t.add_router(Router::new(id, router_address(id), 2))
            .expect("fresh id");
    }
    for (a, b) in [((1, 1), (2, 1)), ((1, 2), (3, 1)), ((2, 2), (4, 1)), ((3, 2), (4, 2))] {
        t.add_link(PortRef::new(a.0, a.1), PortRef::new(b.0, b.1))
            .expect("free ports");
    }
    t
}

/// Random connected graph on routers `1..=n`.
///
/// A random spanning tree is grown first (each new router attaches to a
/// uniformly chosen earlier one), then every other unordered pair is linked
/// with probability `extra_link_prob`, and with probability
/// `parallel_link_prob` an existing tree edge receives a second, parallel
/// cable. Ports are handed out in ascending order, so every router's port
/// count equals its degree.
pub fn random_connected(n: u32, extra_link_prob: f64, parallel_link_prob: f64, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for v in 2..=n {
        let u = rng.gen_range(1..v);
        edges.push((u, v));
    }
    let tree_len = edges.len();
    for u in 1..=n {
        for v in u + 1..=n {
            if edges[..tree_len].contains(&(u, v)) {
                continue;
            }
            if rng.gen_bool(extra_link_prob) {
                edges.push((u, v));
            }
        }
    }
    for i in 0..tree_len {
        if rng.gen_bool(parallel_link_prob) {
            edges.push(edges[i]);
        }
    }

    let mut degree = vec![0u16; n as usize + 1];
    for &(u, v) in &edges {
        degree[u as usize] += 1;
        degree[v as usize] += 1;
    }
    let mut t = Topology::new();
    for id in 1..=n {
        t.add_router(Router::new(id, router_address(id), degree[id as usize].max(1)))
            .expect("fresh id");
    }
    let mut next_port = vec![1u16; n as usize + 1];
    for (u, v) in edges {
        let a = PortRef::new(u, next_port[u as usize]);
        let b = PortRef::new(v, next_port[v as usize]);
        next_port[u as usize] += 1;
        next_port[v as usize] += 1;
        t.add_link(a, b).expect("ports sized to degree");
    }
    t
}

/// Whether every router can reach every other one.
pub fn is_connected(t: &Topology) -> bool {
    let Some(start) = t.router_ids().next() else {
        return true;
    };
    let mut seen = std::collections::BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(r) = stack.pop() {
        for n in t.neighbors_unchecked(r) {
            if seen.insert(n.router) {
                stack.push(n.router);
            }
        }
    }
    seen.len() == t.len()
}
