//! Brute-force reference implementations shared by the integration tests.
//! None of these reuse the library's own search or bit-packing code.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use tracemax::codec::{CodecProfile, TraceOption};
use tracemax::id_assignment::{IdAssignment, TracemaxId};
use tracemax::topology::{RouterId, Topology};

/// Encode by building the option as a string of '0'/'1' characters.
pub fn oracle_encode(o: &TraceOption, p: &CodecProfile) -> Vec<u8> {
    let len = o.option_length as usize;
    let mut bits = String::new();
    let push = |bits: &mut String, v: u32, w: usize| bits.push_str(&format!("{v:0w$b}"));
    push(&mut bits, 0x56, 8);
    push(&mut bits, len as u32, 8);
    push(&mut bits, u32::from(o.sender.is_some()), 1);
    push(&mut bits, u32::from(o.receiver.is_some()), 1);
    push(&mut bits, o.ids.len() as u32, 6);
    if let Some(s) = o.sender {
        push(&mut bits, u32::from(s), 32);
    }
    for id in &o.ids {
        push(&mut bits, u32::from(id.get()), p.bit_width as usize);
    }
    let id_end = (len - if o.receiver.is_some() { 4 } else { 0 }) * 8;
    while bits.len() < id_end {
        bits.push('0');
    }
    if let Some(r) = o.receiver {
        push(&mut bits, u32::from(r), 32);
    }
    while !bits.len().is_multiple_of(32) {
        bits.push('0');
    }
    bits.as_bytes()
        .chunks(8)
        .map(|c| u8::from_str_radix(std::str::from_utf8(c).unwrap(), 2).unwrap())
        .collect()
}

/// Simple random walk of at most `max_routers` routers.
pub fn random_walk<R: Rng>(t: &Topology, rng: &mut R, max_routers: usize) -> Vec<RouterId> {
    let ids: Vec<RouterId> = t.router_ids().collect();
    let mut path = vec![*ids.choose(rng).unwrap()];
    while path.len() < max_routers {
        let here = *path.last().unwrap();
        let next: Vec<RouterId> = t
            .neighbors(here)
            .unwrap()
            .into_iter()
            .map(|n| n.router)
            .filter(|r| !path.contains(r))
            .collect();
        match next.choose(rng) {
            Some(r) => path.push(*r),
            None => break,
        }
    }
    path
}

/// IDs written along `path`: each marking router but the last contributes
/// the ID of its lowest port toward the next router.
pub fn marks_along(t: &Topology, a: &IdAssignment, path: &[RouterId]) -> Vec<TracemaxId> {
    path.windows(2)
        .filter(|w| t.is_marking(w[0]))
        .map(|w| {
            let port = t
                .neighbors(w[0])
                .unwrap()
                .into_iter()
                .filter(|n| n.router == w[1])
                .map(|n| n.local)
                .min()
                .unwrap();
            a.get(port).unwrap()
        })
        .collect()
}

pub fn option_for(p: &CodecProfile, ids: Vec<TracemaxId>) -> TraceOption {
    let mut o = TraceOption::empty(p);
    o.ids = ids;
    o
}

/// Every simple path of marking routers (the receiver excepted) that ends at
/// `receiver` and could have produced `ids`, found by forward enumeration
/// from every router over every cable.
pub fn oracle_paths(t: &Topology, a: &IdAssignment, receiver: RouterId, ids: &[TracemaxId]) -> BTreeSet<Vec<RouterId>> {
    fn go(
        t: &Topology,
        a: &IdAssignment,
        receiver: RouterId,
        ids: &[TracemaxId],
        path: &mut Vec<RouterId>,
        out: &mut BTreeSet<Vec<RouterId>>,
    ) {
        let here = *path.last().unwrap();
        let Some((&id, rest)) = ids.split_first() else {
            if here == receiver {
                out.insert(path.clone());
            }
            return;
        };
        if !t.is_marking(here) {
            return;
        }
        for link in t.links() {
            for (mine, theirs) in [(link.a, link.b), (link.b, link.a)] {
                if mine.router == here && a.get(mine) == Some(id) && !path.contains(&theirs.router) {
                    path.push(theirs.router);
                    go(t, a, receiver, rest, path, out);
                    path.pop();
                }
            }
        }
    }
    let mut out = BTreeSet::new();
    for start in t.router_ids() {
        go(t, a, receiver, ids, &mut vec![start], &mut out);
    }
    out
}

/// Every pair of different router paths (at most `max_len` links, starting
/// at any marking router) that end at the same router with the same trail.
/// Reports whether at least one exists.
pub fn oracle_has_collision(t: &Topology, a: &IdAssignment, max_len: usize) -> bool {
    let mut all: Vec<(RouterId, Vec<TracemaxId>, Vec<RouterId>)> = Vec::new();
    fn go(
        t: &Topology,
        a: &IdAssignment,
        max_len: usize,
        path: &mut Vec<RouterId>,
        trail: &mut Vec<TracemaxId>,
        all: &mut Vec<(RouterId, Vec<TracemaxId>, Vec<RouterId>)>,
    ) {
        let here = *path.last().unwrap();
        all.push((here, trail.clone(), path.clone()));
        if path.len() > max_len {
            return;
        }
        for link in t.links() {
            for (mine, theirs) in [(link.a, link.b), (link.b, link.a)] {
                if mine.router != here || path.contains(&theirs.router) {
                    continue;
                }
                let marks = t.is_marking(here);
                if marks {
                    trail.push(a.get(mine).unwrap());
                }
                path.push(theirs.router);
                go(t, a, max_len, path, trail, all);
                path.pop();
                if marks {
                    trail.pop();
                }
            }
        }
    }
    for start in t.routers().filter(|r| r.marking_enabled).map(|r| r.id) {
        go(t, a, max_len, &mut vec![start], &mut Vec::new(), &mut all);
    }
    all.sort();
    all.windows(2)
        .any(|w| w[0].0 == w[1].0 && w[0].1 == w[1].1 && w[0].2 != w[1].2)
}
