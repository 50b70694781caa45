//! Port-ID assignment.
//!
//! Every linked port of a marking router gets a small positive ID that the
//! router writes into packets leaving through that port. IDs need not be
//! globally unique; what matters is that no router sees the same ID arriving
//! from two different marking neighbors (its *incoming* IDs), because the
//! backward walk uses the incoming ID to pick the previous hop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::num::NonZeroU8;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::document::{self, DocumentError};
use crate::topology::{PortRef, RouterId, Topology};

/// Widest ID the packed codec can carry.
pub const MAX_BIT_WIDTH: u8 = 8;

/// Port identifier written into the option. Zero is reserved for "unwritten".
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TracemaxId(NonZeroU8);

impl TracemaxId {
    pub const fn new(value: u8) -> Option<Self> {
        match NonZeroU8::new(value) {
            Some(v) => Some(TracemaxId(v)),
            None => None,
        }
    }

    pub const fn get(self) -> u8 {
        self.0.get()
    }

    /// Number of bits needed to represent this ID.
    pub const fn bits(self) -> u8 {
        8 - self.get().leading_zeros() as u8
    }
}

impl TryFrom<u8> for TracemaxId {
    type Error = &'static str;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        TracemaxId::new(value).ok_or("ID 0 is reserved")
    }
}

impl From<TracemaxId> for u8 {
    fn from(id: TracemaxId) -> u8 {
        id.get()
    }
}

impl fmt::Display for TracemaxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.get())
    }
}

fn list(routers: &[RouterId]) -> String {
    routers.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssignmentError {
    #[error("topology has no marking routers")]
    NoMarkingRouters,
    #[error("marking subgraph is disconnected; unreachable routers: {}", list(unreachable))]
    Disconnected { unreachable: Vec<RouterId> },
    #[error("no free ID below 256 for port {0}")]
    IdSpaceExhausted(PortRef),
    #[error("assignment is empty")]
    Empty,
    #[error("bit width {0} outside 1..=8")]
    BitWidthOutOfRange(u8),
    #[error("ID {id} on port {port} does not fit in {bit_width} bits")]
    IdTooWide {
        port: PortRef,
        id: TracemaxId,
        bit_width: u8,
    },
    #[error("linked port {0} of a marking router has no ID")]
    MissingId(PortRef),
    #[error("assignment names port {0}, which does not exist in the topology")]
    UnknownPort(PortRef),
    #[error("maximum path length must be at least 1")]
    ZeroPathLength,
}

/// Map from port to ID plus the deployment-wide ID width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdAssignment {
    ids: BTreeMap<PortRef, TracemaxId>,
    bit_width: u8,
}

impl IdAssignment {
    pub fn new(bit_width: u8) -> Result<Self, AssignmentError> {
        if !(1..=MAX_BIT_WIDTH).contains(&bit_width) {
            return Err(AssignmentError::BitWidthOutOfRange(bit_width));
        }
        Ok(IdAssignment {
            ids: BTreeMap::new(),
            bit_width,
        })
    }

    pub fn from_entries(
        bit_width: u8,
        entries: impl IntoIterator<Item = (PortRef, TracemaxId)>,
    ) -> Result<Self, AssignmentError> {
        let mut a = Self::new(bit_width)?;
        for (port, id) in entries {
            a.insert(port, id)?;
        }
        Ok(a)
    }

    pub fn insert(&mut self, port: PortRef, id: TracemaxId) -> Result<Option<TracemaxId>, AssignmentError> {
        if id.bits() > self.bit_width {
            return Err(AssignmentError::IdTooWide {
                port,
                id,
                bit_width: self.bit_width,
            });
        }
        Ok(self.ids.insert(port, id))
    }

    pub fn get(&self, port: PortRef) -> Option<TracemaxId> {
        self.ids.get(&port).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PortRef, TracemaxId)> + '_ {
        self.ids.iter().map(|(p, i)| (*p, *i))
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn max_id(&self) -> Option<TracemaxId> {
        self.ids.values().max().copied()
    }

    /// `ceil(log2(max ID + 1))`.
    pub fn min_bit_width(&self) -> Result<u8, AssignmentError> {
        self.max_id().map(TracemaxId::bits).ok_or(AssignmentError::Empty)
    }

    /// Re-declare the deployment width. Widening is always fine; narrowing
    /// fails if some ID would no longer fit.
    pub fn with_bit_width(mut self, bit_width: u8) -> Result<Self, AssignmentError> {
        if !(1..=MAX_BIT_WIDTH).contains(&bit_width) {
            return Err(AssignmentError::BitWidthOutOfRange(bit_width));
        }
        if let Some((port, id)) = self.iter().find(|(_, id)| id.bits() > bit_width) {
            return Err(AssignmentError::IdTooWide { port, id, bit_width });
        }
        self.bit_width = bit_width;
        Ok(self)
    }

    pub fn to_document(&self) -> AssignmentDocument {
        AssignmentDocument {
            bit_width: self.bit_width,
            ids: self
                .iter()
                .map(|(p, id)| AssignmentEntry {
                    router: p.router,
                    port: p.port,
                    id,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: AssignmentDocument) -> Result<Self, DocumentError> {
        let mut a = IdAssignment::new(doc.bit_width).map_err(|e| DocumentError::invalid("bit_width", e))?;
        for (i, e) in doc.ids.into_iter().enumerate() {
            let port = PortRef::new(e.router, e.port);
            let previous = a
                .insert(port, e.id)
                .map_err(|err| DocumentError::invalid(format!("ids[{i}]"), err))?;
            if previous.is_some() {
                return Err(DocumentError::invalid(
                    format!("ids[{i}]"),
                    format!("port {port} listed twice"),
                ));
            }
        }
        Ok(a)
    }

    pub fn to_yaml(&self) -> Result<String, DocumentError> {
        document::to_yaml_string(&self.to_document())
    }

    pub fn from_yaml(text: &str) -> Result<Self, DocumentError> {
        Self::from_document(document::from_yaml_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DocumentError> {
        Self::from_yaml(&document::read_text(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DocumentError> {
        document::write_text(path.as_ref(), &self.to_yaml()?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentDocument {
    pub bit_width: u8,
    pub ids: Vec<AssignmentEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentEntry {
    pub router: RouterId,
    pub port: u16,
    pub id: TracemaxId,
}

/// Automatic ID assignment.
///
/// The seed picks the start router among the marking routers. Its linked
/// ports get their own port number as ID. After that the marking router with
/// the smallest id adjacent to the already selected set is selected next, and
/// each of its linked ports (ascending) receives the smallest ID that is
/// neither used on the router yet nor already among the incoming IDs of the
/// router at the far end of the cable.
pub fn assign_ids(t: &Topology, seed: u64) -> Result<IdAssignment, AssignmentError> {
    let marking: Vec<RouterId> = t.routers().filter(|r| r.marking_enabled).map(|r| r.id).collect();
    if marking.is_empty() {
        return Err(AssignmentError::NoMarkingRouters);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = marking[rng.gen_range(0..marking.len())];

    let mut ids: BTreeMap<PortRef, TracemaxId> = BTreeMap::new();
    for port in t.linked_ports(first) {
        let id = u8::try_from(port.port)
            .ok()
            .and_then(TracemaxId::new)
            .ok_or(AssignmentError::IdSpaceExhausted(port))?;
        ids.insert(port, id);
    }

    let mut selected = BTreeSet::from([first]);
    let mut frontier = BTreeSet::new();
    extend_frontier(t, first, &selected, &mut frontier);

    while let Some(node) = frontier.pop_first() {
        let mut used = BTreeSet::new();
        for port in t.linked_ports(node) {
            let far = t.far_end(port).expect("linked port");
            let incoming: BTreeSet<TracemaxId> = t
                .neighbors_unchecked(far.router)
                .filter_map(|n| ids.get(&n.remote).copied())
                .collect();
            let id = (1..=u8::MAX)
                .filter_map(TracemaxId::new)
                .find(|id| !used.contains(id) && !incoming.contains(id))
                .ok_or(AssignmentError::IdSpaceExhausted(port))?;
            used.insert(id);
            ids.insert(port, id);
        }
        selected.insert(node);
        extend_frontier(t, node, &selected, &mut frontier);
    }

    if selected.len() < marking.len() {
        let unreachable = marking.into_iter().filter(|r| !selected.contains(r)).collect();
        return Err(AssignmentError::Disconnected { unreachable });
    }

    let bit_width = ids.values().max().map_or(1, |id| id.bits());
    Ok(IdAssignment { ids, bit_width })
}

fn extend_frontier(
    t: &Topology,
    node: RouterId,
    selected: &BTreeSet<RouterId>,
    frontier: &mut BTreeSet<RouterId>,
) {
    for n in t.neighbors_unchecked(node) {
        if t.is_marking(n.router) && !selected.contains(&n.router) {
            frontier.insert(n.router);
        }
    }
}

/// A router that receives the same ID from more than one marking neighbor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub router: RouterId,
    pub id: TracemaxId,
    /// Neighbor ports (facing `router`) that all carry `id`.
    pub ports: Vec<PortRef>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub conflicts: Vec<Conflict>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.conflicts.is_empty()
    }
}

/// Check that every router's incoming IDs (from marking neighbors) are distinct.
pub fn validate(t: &Topology, a: &IdAssignment) -> Result<ValidationReport, AssignmentError> {
    for (port, _) in a.iter() {
        match t.router(port.router) {
            Some(r) if port.port >= 1 && port.port <= r.port_count => {}
            _ => return Err(AssignmentError::UnknownPort(port)),
        }
    }
    for r in t.routers().filter(|r| r.marking_enabled) {
        if let Some(port) = t.linked_ports(r.id).find(|p| a.get(*p).is_none()) {
            return Err(AssignmentError::MissingId(port));
        }
    }

    let mut conflicts = Vec::new();
    for r in t.router_ids() {
        let mut incoming: BTreeMap<TracemaxId, Vec<PortRef>> = BTreeMap::new();
        for n in t.neighbors_unchecked(r) {
            if !t.is_marking(n.router) {
                continue;
            }
            let id = a.get(n.remote).expect("checked above");
            incoming.entry(id).or_default().push(n.remote);
        }
        conflicts.extend(
            incoming
                .into_iter()
                .filter(|(_, ports)| ports.len() > 1)
                .map(|(id, ports)| Conflict { router: r, id, ports }),
        );
    }
    Ok(ValidationReport { conflicts })
}

/// Two distinct router paths that end at the same router and leave the same
/// ID trail behind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Collision {
    pub receiver: RouterId,
    pub ids: Vec<TracemaxId>,
    pub first: Vec<RouterId>,
    pub second: Vec<RouterId>,
}

/// Exhaustive reconstructibility check.
///
/// Enumerates every simple path of at most `max_len` links that starts at a
/// marking router, computes the ID trail it leaves (non-marking routers
/// write nothing), and reports the first pair of different router paths
/// ending at the same router with the same trail. `Ok(None)` means every
/// trail identifies its path.
pub fn check_reconstructible(
    t: &Topology,
    a: &IdAssignment,
    max_len: usize,
) -> Result<Option<Collision>, AssignmentError> {
    if max_len < 1 {
        return Err(AssignmentError::ZeroPathLength);
    }
    let mut seen: BTreeMap<(RouterId, Vec<TracemaxId>), Vec<RouterId>> = BTreeMap::new();
    for start in t.routers().filter(|r| r.marking_enabled) {
        let mut path = vec![start.id];
        let mut trail = Vec::new();
        if let Some(c) = walk_paths(t, a, max_len, &mut path, &mut trail, &mut seen)? {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

fn walk_paths(
    t: &Topology,
    a: &IdAssignment,
    max_len: usize,
    path: &mut Vec<RouterId>,
    trail: &mut Vec<TracemaxId>,
    seen: &mut BTreeMap<(RouterId, Vec<TracemaxId>), Vec<RouterId>>,
) -> Result<Option<Collision>, AssignmentError> {
    let here = *path.last().expect("non-empty path");
    let key = (here, trail.clone());
    match seen.get(&key) {
        Some(other) if other != path => {
            return Ok(Some(Collision {
                receiver: here,
                ids: key.1,
                first: other.clone(),
                second: path.clone(),
            }))
        }
        Some(_) => {}
        None => {
            seen.insert(key, path.clone());
        }
    }
    if path.len() > max_len {
        return Ok(None);
    }
    let marking = t.is_marking(here);
    for n in t.neighbors_unchecked(here) {
        if path.contains(&n.router) {
            continue;
        }
        if marking {
            trail.push(a.get(n.local).ok_or(AssignmentError::MissingId(n.local))?);
        }
        path.push(n.router);
        let found = walk_paths(t, a, max_len, path, trail, seen)?;
        path.pop();
        if marking {
            trail.pop();
        }
        if found.is_some() {
            return Ok(found);
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate;
    use crate::topology::Router;

    fn id(v: u8) -> TracemaxId {
        TracemaxId::new(v).unwrap()
    }

    #[test]
    fn bit_width_of_max_id() {
        for (max, bits) in [(1, 1), (3, 2), (31, 5), (32, 6), (255, 8)] {
            let a = IdAssignment::from_entries(8, [(PortRef::new(1, 1), id(max))]).unwrap();
            assert_eq!(a.min_bit_width().unwrap(), bits, "max {max}");
        }
        assert_eq!(IdAssignment::new(4).unwrap().min_bit_width(), Err(AssignmentError::Empty));
    }

    #[test]
    fn single_router_gets_port_numbers() {
        let mut t = Topology::new();
        t.add_router(Router::new(1, generate::router_address(1), 4)).unwrap();
        for seed in 0..5 {
            let a = assign_ids(&t, seed).unwrap();
            assert!(a.is_empty());
            assert!(validate(&t, &a).unwrap().is_valid());
        }
        // With a lone linked router, the start router's ports keep their number.
        let mut t = Topology::new();
        t.add_router(Router::new(1, generate::router_address(1), 4)).unwrap();
        t.add_router(Router::new(2, generate::router_address(2), 4).non_marking()).unwrap();
        t.add_link(PortRef::new(1, 2), PortRef::new(2, 1)).unwrap();
        t.add_link(PortRef::new(1, 4), PortRef::new(2, 3)).unwrap();
        let a = assign_ids(&t, 3).unwrap();
        assert_eq!(a.get(PortRef::new(1, 2)), Some(id(2)));
        assert_eq!(a.get(PortRef::new(1, 4)), Some(id(4)));
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn star_center_ports_get_one_to_k() {
        let t = generate::star(5);
        for seed in 0..20 {
            let a = assign_ids(&t, seed).unwrap();
            for p in 1..=5 {
                assert_eq!(a.get(PortRef::new(1, p)), Some(id(p as u8)), "seed {seed}");
            }
            assert!(validate(&t, &a).unwrap().is_valid());
        }
    }

    #[test]
    fn chain_of_three_is_valid() {
        let t = generate::chain(3);
        for seed in 0..10 {
            let a = assign_ids(&t, seed).unwrap();
            assert!(validate(&t, &a).unwrap().is_valid());
            assert!(a.max_id().unwrap().get() <= 2);
        }
    }

    /// Brute force: some assignment with IDs <= 2 on the 3-chain is valid.
    #[test]
    fn chain_of_three_brute_force() {
        let t = generate::chain(3);
        let ports: Vec<PortRef> = t.router_ids().flat_map(|r| t.linked_ports(r).collect::<Vec<_>>()).collect();
        assert_eq!(ports.len(), 4);
        let mut valid = 0;
        for mask in 0..(1u32 << ports.len()) {
            let a = IdAssignment::from_entries(
                2,
                ports.iter().enumerate().map(|(i, p)| (*p, id(1 + ((mask >> i) & 1) as u8))),
            )
            .unwrap();
            if validate(&t, &a).unwrap().is_valid() {
                valid += 1;
            }
        }
        // each router has at most two neighbors, one per side; only B sees two
        // incoming IDs (from A and from C), which must differ: 16 / 2 = 8.
        assert_eq!(valid, 8);
    }

    #[test]
    fn duplicate_incoming_id_is_a_conflict() {
        let mut t = Topology::new();
        for i in 1..=3 {
            t.add_router(Router::new(i, generate::router_address(i), 2)).unwrap();
        }
        t.add_link(PortRef::new(2, 1), PortRef::new(1, 1)).unwrap();
        t.add_link(PortRef::new(3, 1), PortRef::new(1, 2)).unwrap();
        let a = IdAssignment::from_entries(
            2,
            [
                (PortRef::new(1, 1), id(1)),
                (PortRef::new(1, 2), id(2)),
                (PortRef::new(2, 1), id(3)),
                (PortRef::new(3, 1), id(3)),
            ],
        )
        .unwrap();
        let report = validate(&t, &a).unwrap();
        assert_eq!(
            report.conflicts,
            vec![Conflict {
                router: RouterId(1),
                id: id(3),
                ports: vec![PortRef::new(2, 1), PortRef::new(3, 1)],
            }]
        );
        let c = check_reconstructible(&t, &a, 2).unwrap().unwrap();
        assert_eq!(c.receiver, RouterId(1));
        assert_eq!(c.ids, vec![id(3)]);
        assert_eq!(c.first, vec![RouterId(2), RouterId(1)]);
        assert_eq!(c.second, vec![RouterId(3), RouterId(1)]);
    }

    #[test]
    fn missing_and_unknown_ports() {
        let t = generate::chain(2);
        let a = IdAssignment::from_entries(1, [(PortRef::new(1, 2), id(1))]).unwrap();
        assert_eq!(validate(&t, &a), Err(AssignmentError::MissingId(PortRef::new(2, 1))));
        let a = IdAssignment::from_entries(
            1,
            [
                (PortRef::new(1, 2), id(1)),
                (PortRef::new(2, 1), id(1)),
                (PortRef::new(2, 9), id(1)),
            ],
        )
        .unwrap();
        assert_eq!(validate(&t, &a), Err(AssignmentError::UnknownPort(PortRef::new(2, 9))));
    }

    #[test]
    fn non_marking_routers_are_skipped() {
        let mut t = Topology::new();
        t.add_router(Router::new(1, generate::router_address(1), 1)).unwrap();
        t.add_router(Router::new(2, generate::router_address(2), 2).non_marking()).unwrap();
        t.add_router(Router::new(3, generate::router_address(3), 1)).unwrap();
        t.add_link(PortRef::new(1, 1), PortRef::new(2, 1)).unwrap();
        t.add_link(PortRef::new(2, 2), PortRef::new(3, 1)).unwrap();
        // 1 and 3 only touch each other through the bridge.
        assert!(matches!(assign_ids(&t, 0), Err(AssignmentError::Disconnected { .. })));

        let mut only_bridge = Topology::new();
        only_bridge
            .add_router(Router::new(1, generate::router_address(1), 1).non_marking())
            .unwrap();
        assert_eq!(assign_ids(&only_bridge, 0), Err(AssignmentError::NoMarkingRouters));
    }

    #[test]
    fn deterministic_per_seed() {
        let t = generate::random_connected(30, 0.1, 0.05, 7);
        for seed in 0..10 {
            let a = assign_ids(&t, seed).unwrap();
            let b = assign_ids(&t, seed).unwrap();
            assert_eq!(a.to_yaml().unwrap(), b.to_yaml().unwrap());
        }
    }

    #[test]
    fn zero_path_length_rejected() {
        let t = generate::chain(2);
        let a = assign_ids(&t, 0).unwrap();
        assert_eq!(check_reconstructible(&t, &a, 0), Err(AssignmentError::ZeroPathLength));
    }

    #[test]
    fn yaml_round_trip_and_rejections() {
        let t = generate::random_connected(10, 0.2, 0.0, 3);
        let a = assign_ids(&t, 1).unwrap();
        assert_eq!(IdAssignment::from_yaml(&a.to_yaml().unwrap()).unwrap(), a);

        let zero = "bit_width: 2\nids:\n  - {router: 1, port: 1, id: 0}\n";
        assert!(IdAssignment::from_yaml(zero).is_err());
        let wide = "bit_width: 2\nids:\n  - {router: 1, port: 1, id: 4}\n";
        let err = IdAssignment::from_yaml(wide).unwrap_err().to_string();
        assert!(err.contains("ids[0]"), "{err}");
        let twice = "bit_width: 2\nids:\n  - {router: 1, port: 1, id: 1}\n  - {router: 1, port: 1, id: 2}\n";
        assert!(IdAssignment::from_yaml(twice).is_err());
    }

    #[test]
    fn widening() {
        let a = assign_ids(&generate::chain(5), 0).unwrap();
        assert_eq!(a.bit_width(), a.min_bit_width().unwrap());
        let wide = a.clone().with_bit_width(4).unwrap();
        assert_eq!(wide.bit_width(), 4);
        assert!(matches!(
            IdAssignment::from_entries(8, [(PortRef::new(1, 1), id(9))]).unwrap().with_bit_width(3),
            Err(AssignmentError::IdTooWide { .. })
        ));
    }
}
