//! Router network model: routers with numbered physical ports, point-to-point
//! links between ports, and a per-router flag telling whether the router
//! writes marks.
//!
//! A [`Topology`] is mutated only while it is being built. Every mutation
//! re-checks the structural invariants (in debug builds) so that the rest of
//! the crate can rely on them: link endpoints exist, ports are in range and
//! every port carries at most one cable.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::document::{self, DocumentError};

/// Opaque router identifier, unique within a topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RouterId(pub u32);

impl fmt::Display for RouterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for RouterId {
    fn from(id: u32) -> Self {
        RouterId(id)
    }
}

/// A physical port of a router. Ports are numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRef {
    pub router: RouterId,
    pub port: u16,
}

impl PortRef {
    pub fn new(router: impl Into<RouterId>, port: u16) -> Self {
        PortRef {
            router: router.into(),
            port,
        }
    }
}

impl fmt::Display for PortRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.router, self.port)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed port reference {0:?}, expected \"router:port\"")]
pub struct PortRefParseError(String);

impl FromStr for PortRef {
    type Err = PortRefParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PortRefParseError(s.to_string());
        let (router, port) = s.trim().split_once(':').ok_or_else(err)?;
        let router = router.trim().parse::<u32>().map_err(|_| err())?;
        let port = port.trim().parse::<u16>().map_err(|_| err())?;
        Ok(PortRef::new(router, port))
    }
}

impl Serialize for PortRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Router {
    pub id: RouterId,
    pub address: Ipv4Addr,
    #[serde(rename = "ports")]
    pub port_count: u16,
    #[serde(rename = "marking", default = "default_marking")]
    pub marking_enabled: bool,
}

fn default_marking() -> bool {
    true
}

impl Router {
    pub fn new(id: impl Into<RouterId>, address: Ipv4Addr, port_count: u16) -> Self {
        Router {
            id: id.into(),
            address,
            port_count,
            marking_enabled: true,
        }
    }

    /// Same router with marking switched off (a bridged device).
    pub fn non_marking(mut self) -> Self {
        self.marking_enabled = false;
        self
    }

    pub fn port(&self, port: u16) -> PortRef {
        PortRef::new(self.id, port)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub a: PortRef,
    pub b: PortRef,
}

impl Link {
    /// The endpoint opposite to `port`, if `port` is one of the two ends.
    pub fn other_end(&self, port: PortRef) -> Option<PortRef> {
        if self.a == port {
            Some(self.b)
        } else if self.b == port {
            Some(self.a)
        } else {
            None
        }
    }
}

/// One entry of [`Topology::neighbors`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub router: RouterId,
    /// Port on the queried router.
    pub local: PortRef,
    /// Port on the neighbor facing the queried router.
    pub remote: PortRef,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("duplicate router id {0}")]
    DuplicateId(RouterId),
    #[error("duplicate router address {0}")]
    DuplicateAddress(Ipv4Addr),
    #[error("router {0} must have at least one port")]
    NoPorts(RouterId),
    #[error("unknown router {0}")]
    UnknownRouter(RouterId),
    #[error("port {port} out of range (router has {port_count} ports)")]
    PortOutOfRange { port: PortRef, port_count: u16 },
    #[error("port {0} already carries a link")]
    PortOccupied(PortRef),
    #[error("self-loop on router {0}")]
    SelfLoop(RouterId),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Topology {
    routers: BTreeMap<RouterId, Router>,
    links: Vec<Link>,
    occupancy: BTreeMap<PortRef, usize>,
    by_address: BTreeMap<Ipv4Addr, RouterId>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_router(&mut self, router: Router) -> Result<&mut Self, TopologyError> {
        if router.port_count == 0 {
            return Err(TopologyError::NoPorts(router.id));
        }
        if self.by_address.contains_key(&router.address) {
            return Err(TopologyError::DuplicateAddress(router.address));
        }
        match self.routers.entry(router.id) {
            Entry::Occupied(e) => return Err(TopologyError::DuplicateId(*e.key())),
            Entry::Vacant(e) => {
                self.by_address.insert(router.address, router.id);
                e.insert(router);
            }
        }
        debug_assert!(self.check_invariants().is_ok());
        Ok(self)
    }

    /// Connect two ports with a cable. Parallel links between the same two
    /// routers are allowed; self-loops are not.
    pub fn add_link(&mut self, a: PortRef, b: PortRef) -> Result<&mut Self, TopologyError> {
        self.check_port(a)?;
        self.check_port(b)?;
        if a.router == b.router {
            return Err(TopologyError::SelfLoop(a.router));
        }
        for p in [a, b] {
            if self.occupancy.contains_key(&p) {
                return Err(TopologyError::PortOccupied(p));
            }
        }
        let idx = self.links.len();
        self.links.push(Link { a, b });
        self.occupancy.insert(a, idx);
        self.occupancy.insert(b, idx);
        debug_assert!(self.check_invariants().is_ok());
        Ok(self)
    }

    fn check_port(&self, p: PortRef) -> Result<&Router, TopologyError> {
        let router = self
            .routers
            .get(&p.router)
            .ok_or(TopologyError::UnknownRouter(p.router))?;
        if p.port == 0 || p.port > router.port_count {
            return Err(TopologyError::PortOutOfRange {
                port: p,
                port_count: router.port_count,
            });
        }
        Ok(router)
    }

    /// Re-derive every structural invariant from scratch.
    pub fn check_invariants(&self) -> Result<(), TopologyError> {
        let mut seen = BTreeMap::new();
        for (idx, link) in self.links.iter().enumerate() {
            if link.a.router == link.b.router {
                return Err(TopologyError::SelfLoop(link.a.router));
            }
            for p in [link.a, link.b] {
                self.check_port(p)?;
                if seen.insert(p, idx).is_some() {
                    return Err(TopologyError::PortOccupied(p));
                }
            }
        }
        let mut addresses = BTreeMap::new();
        for r in self.routers.values() {
            if r.port_count == 0 {
                return Err(TopologyError::NoPorts(r.id));
            }
            if addresses.insert(r.address, r.id).is_some() {
                return Err(TopologyError::DuplicateAddress(r.address));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.routers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routers.is_empty()
    }

    pub fn router(&self, id: RouterId) -> Option<&Router> {
        self.routers.get(&id)
    }

    pub fn contains(&self, id: RouterId) -> bool {
        self.routers.contains_key(&id)
    }

    /// Routers in ascending id order.
    pub fn routers(&self) -> impl Iterator<Item = &Router> + '_ {
        self.routers.values()
    }

    pub fn router_ids(&self) -> impl Iterator<Item = RouterId> + '_ {
        self.routers.keys().copied()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn router_by_address(&self, address: Ipv4Addr) -> Option<RouterId> {
        self.by_address.get(&address).copied()
    }

    pub fn is_marking(&self, id: RouterId) -> bool {
        self.routers.get(&id).is_some_and(|r| r.marking_enabled)
    }

    /// The port at the far end of the cable plugged into `port`.
    pub fn far_end(&self, port: PortRef) -> Option<PortRef> {
        let idx = *self.occupancy.get(&port)?;
        self.links[idx].other_end(port)
    }

    /// Linked ports of a router in ascending port order.
    pub fn linked_ports(&self, id: RouterId) -> impl Iterator<Item = PortRef> + '_ {
        self.occupancy
            .range(PortRef::new(id, 0)..=PortRef::new(id, u16::MAX))
            .map(|(p, _)| *p)
    }

    /// One entry per link incident to `id`, sorted by local port index.
    pub fn neighbors(&self, id: RouterId) -> Result<Vec<Neighbor>, TopologyError> {
        if !self.contains(id) {
            return Err(TopologyError::UnknownRouter(id));
        }
        Ok(self.neighbors_unchecked(id).collect())
    }

    pub(crate) fn neighbors_unchecked(&self, id: RouterId) -> impl Iterator<Item = Neighbor> + '_ {
        self.linked_ports(id).map(move |local| {
            let remote = self.far_end(local).expect("occupied port has a far end");
            Neighbor {
                router: remote.router,
                local,
                remote,
            }
        })
    }

    pub fn degree(&self, id: RouterId) -> usize {
        self.linked_ports(id).count()
    }

    pub fn max_degree(&self) -> usize {
        self.router_ids().map(|r| self.degree(r)).max().unwrap_or(0)
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            routers: self.routers.values().cloned().collect(),
            links: self.links.clone(),
        }
    }

    pub fn from_document(doc: TopologyDocument) -> Result<Self, DocumentError> {
        let mut t = Topology::new();
        for (i, r) in doc.routers.into_iter().enumerate() {
            t.add_router(r)
                .map_err(|e| DocumentError::invalid(format!("routers[{i}]"), e))?;
        }
        for (i, l) in doc.links.into_iter().enumerate() {
            t.add_link(l.a, l.b)
                .map_err(|e| DocumentError::invalid(format!("links[{i}]"), e))?;
        }
        Ok(t)
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

/// On-disk form of a [`Topology`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDocument {
    pub routers: Vec<Router>,
    #[serde(default)]
    pub links: Vec<Link>,
}
