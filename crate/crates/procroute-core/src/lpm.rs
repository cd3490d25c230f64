//! Longest-prefix-match tries with composite fixed-prefix keys, shaped
//! like the kernel map layout: fixed-width header fields (principal index,
//! or peer address plus principal index) serialized big-endian in front of
//! the destination address bits, participating in matching as exact-match
//! high-order bits.
//!
//! The trie is an uncompressed binary bit-trie. The contract callers rely
//! on is the visit-count bound: a lookup touches at most
//! `8 * fixed_bytes + address_bits + 1` nodes regardless of how many
//! entries are stored.
//!
//! Concurrency: single writer, multiple readers. Lookups take `&self` and
//! may run concurrently; each insert or remove takes `&mut self` and is
//! therefore atomic with respect to lookups — no lookup can observe a
//! partially applied entry.

use std::collections::HashMap;
use std::net::IpAddr;

use thiserror::Error;

use crate::policy::{Cidr, PortRange, Proto};

/// Address family of the trailing address bits in a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    V4,
    V6,
}

impl Family {
    pub fn addr_bits(self) -> u32 {
        match self {
            Family::V4 => 32,
            Family::V6 => 128,
        }
    }

    pub fn of(ip: IpAddr) -> Family {
        match ip {
            IpAddr::V4(_) => Family::V4,
            IpAddr::V6(_) => Family::V6,
        }
    }
}

/// Key geometry of one trie: how many fixed bytes precede the address.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyGeometry {
    pub fixed_bytes: usize,
    pub family: Family,
}

impl KeyGeometry {
    pub fn new(fixed_bytes: usize, family: Family) -> Self {
        KeyGeometry { fixed_bytes, family }
    }

    /// Total bit width of a full-length key in this geometry.
    pub fn full_bits(&self) -> u32 {
        8 * self.fixed_bytes as u32 + self.family.addr_bits()
    }

    /// Upper bound on nodes touched by any lookup, including the root.
    pub fn visit_bound(&self) -> u32 {
        self.full_bits() + 1
    }
}

/// A trie key: fixed bytes followed by address bytes, matched over the
/// first `match_len` bits. Stored entries may be partial (down to the fixed
/// boundary); lookups supply full-length keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LpmKey {
    bytes: Vec<u8>,
    fixed_len: usize,
    match_len: u32,
    family: Family,
}

fn addr_bytes(ip: IpAddr, out: &mut Vec<u8>) {
    match ip {
        IpAddr::V4(a) => out.extend_from_slice(&a.octets()),
        IpAddr::V6(a) => out.extend_from_slice(&a.octets()),
    }
}

impl LpmKey {
    /// Key for a stored entry: fixed fields plus a prefix.
    pub fn entry(fixed: &[u8], prefix: &Cidr) -> LpmKey {
        let mut bytes = fixed.to_vec();
        addr_bytes(prefix.addr(), &mut bytes);
        LpmKey {
            bytes,
            fixed_len: fixed.len(),
            match_len: 8 * fixed.len() as u32 + prefix.prefix_len() as u32,
            family: Family::of(prefix.addr()),
        }
    }

    /// Full-length lookup key: fixed fields plus a concrete address.
    pub fn query(fixed: &[u8], ip: IpAddr) -> LpmKey {
        let mut bytes = fixed.to_vec();
        addr_bytes(ip, &mut bytes);
        let family = Family::of(ip);
        LpmKey {
            bytes,
            fixed_len: fixed.len(),
            match_len: 8 * fixed.len() as u32 + family.addr_bits(),
            family,
        }
    }

    pub fn match_len(&self) -> u32 {
        self.match_len
    }

    pub fn fixed(&self) -> &[u8] {
        &self.bytes[..self.fixed_len]
    }

    pub fn geometry(&self) -> KeyGeometry {
        KeyGeometry::new(self.fixed_len, self.family)
    }

    fn bit(&self, i: u32) -> usize {
        let byte = self.bytes[(i / 8) as usize];
        ((byte >> (7 - (i % 8))) & 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("key geometry ({key_fixed} fixed bytes, {key_family:?}) does not match trie geometry ({trie_fixed} fixed bytes, {trie_family:?})")]
pub struct GeometryMismatch {
    pub key_fixed: usize,
    pub key_family: Family,
    pub trie_fixed: usize,
    pub trie_family: Family,
}

#[derive(Debug, Clone)]
struct Node<V> {
    children: [Option<Box<Node<V>>>; 2],
    value: Option<V>,
}

impl<V> Node<V> {
    fn new() -> Self {
        Node { children: [None, None], value: None }
    }
}

/// Result of one lookup: the longest matching entry (if any), its total
/// match length in bits, and the number of nodes the walk touched.
#[derive(Debug)]
pub struct Lookup<'a, V> {
    pub value: Option<&'a V>,
    pub match_len: Option<u32>,
    pub visits: u32,
}

impl<V> Lookup<'_, V> {
    pub fn is_miss(&self) -> bool {
        self.value.is_none()
    }
}

/// Binary bit-trie keyed by fixed bytes plus address bits.
#[derive(Debug, Clone)]
pub struct LpmTrie<V> {
    root: Node<V>,
    geometry: KeyGeometry,
    len: usize,
}

impl<V> LpmTrie<V> {
    pub fn new(geometry: KeyGeometry) -> Self {
        LpmTrie { root: Node::new(), geometry, len: 0 }
    }

    pub fn geometry(&self) -> KeyGeometry {
        self.geometry
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn check_geometry(&self, key: &LpmKey) -> Result<(), GeometryMismatch> {
        if key.fixed_len != self.geometry.fixed_bytes || key.family != self.geometry.family {
            return Err(GeometryMismatch {
                key_fixed: key.fixed_len,
                key_family: key.family,
                trie_fixed: self.geometry.fixed_bytes,
                trie_family: self.geometry.family,
            });
        }
        Ok(())
    }

    /// Inserts an entry, replacing any existing entry with the identical
    /// key in a single step. Returns the replaced value.
    pub fn insert(&mut self, key: &LpmKey, value: V) -> Result<Option<V>, GeometryMismatch> {
        self.check_geometry(key)?;
        debug_assert!(key.match_len >= 8 * self.geometry.fixed_bytes as u32);
        let mut node = &mut self.root;
        for i in 0..key.match_len {
            let b = key.bit(i);
            node = node.children[b].get_or_insert_with(|| Box::new(Node::new()));
        }
        let old = node.value.replace(value);
        if old.is_none() {
            self.len += 1;
        }
        Ok(old)
    }

    /// Removes the entry with exactly this key, if present.
    pub fn remove(&mut self, key: &LpmKey) -> Option<V> {
        self.check_geometry(key).ok()?;
        let mut node = &mut self.root;
        for i in 0..key.match_len {
            let b = key.bit(i);
            node = node.children[b].as_deref_mut()?;
        }
        let old = node.value.take();
        if old.is_some() {
            self.len -= 1;
        }
        old
    }

    /// Longest-prefix lookup. Walks the query bits from the root, keeping
    /// the deepest entry seen; stops when the trie has no deeper branch or
    /// the full key width is consumed. `visits` counts nodes touched
    /// (including the root) and never exceeds [`KeyGeometry::visit_bound`].
    pub fn lookup(&self, key: &LpmKey) -> Lookup<'_, V> {
        debug_assert_eq!(key.match_len, self.geometry.full_bits(), "lookups take full-length keys");
        if self.check_geometry(key).is_err() {
            return Lookup { value: None, match_len: None, visits: 0 };
        }
        let mut node = &self.root;
        let mut visits = 1u32;
        let mut best: Option<(&V, u32)> = None;
        if let Some(v) = &node.value {
            best = Some((v, 0));
        }
        for i in 0..key.match_len {
            match &node.children[key.bit(i)] {
                Some(child) => {
                    node = child;
                    visits += 1;
                    if let Some(v) = &node.value {
                        best = Some((v, i + 1));
                    }
                }
                None => break,
            }
        }
        let (value, match_len) = match best {
            Some((v, len)) => (Some(v), Some(len)),
            None => (None, None),
        };
        Lookup { value, match_len, visits }
    }
}

/// Secondary exact-match table for cascaded grant sets: maps the matched
/// prefix (scoped by the composite key's fixed bytes) and concrete
/// protocol to the port predicate.
#[derive(Debug, Clone, Default)]
pub struct CascadeTable {
    map: HashMap<(Vec<u8>, Cidr, Proto), PortRange>,
}

impl CascadeTable {
    pub fn new() -> Self {
        CascadeTable::default()
    }

    pub fn insert(&mut self, fixed: &[u8], prefix: Cidr, proto: Proto, ports: PortRange) {
        self.map.insert((fixed.to_vec(), prefix, proto), ports);
    }

    pub fn remove(&mut self, fixed: &[u8], prefix: Cidr, proto: Proto) -> Option<PortRange> {
        self.map.remove(&(fixed.to_vec(), prefix, proto))
    }

    pub fn get(&self, fixed: &[u8], prefix: Cidr, proto: Proto) -> Option<PortRange> {
        self.map.get(&(fixed.to_vec(), prefix, proto)).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Cascaded lookup: one LPM hit, then exactly one cascade-table access
/// keyed by the matched prefix and the destination's concrete protocol.
/// Returns the port predicate still to be evaluated, or a miss.
pub fn cascaded_lookup<V>(
    trie: &LpmTrie<V>,
    cascade: &CascadeTable,
    query: &LpmKey,
    dst_ip: IpAddr,
    dst_proto: Proto,
) -> Option<PortRange> {
    let hit = trie.lookup(query);
    let match_len = hit.match_len?;
    let prefix_len = match_len - 8 * trie.geometry().fixed_bytes as u32;
    let prefix = Cidr::containing(dst_ip, prefix_len as u8).ok()?;
    cascade.get(query.fixed(), prefix, dst_proto)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cidr(s: &str) -> Cidr {
        s.parse().unwrap()
    }

    fn ip(s: &str) -> IpAddr {
        s.parse().unwrap()
    }

    const PLAIN_V4: KeyGeometry = KeyGeometry { fixed_bytes: 0, family: Family::V4 };

    #[test]
    fn insert_then_lookup_full_key() {
        let mut trie = LpmTrie::new(PLAIN_V4);
        trie.insert(&LpmKey::entry(&[], &cidr("10.0.0.5/32")), "host").unwrap();
        let hit = trie.lookup(&LpmKey::query(&[], ip("10.0.0.5")));
        assert_eq!(hit.value, Some(&"host"));
        assert_eq!(hit.match_len, Some(32));
    }

    #[test]
    fn longest_match_wins() {
        let mut trie = LpmTrie::new(PLAIN_V4);
        trie.insert(&LpmKey::entry(&[], &cidr("10.0.0.0/8")), "eight").unwrap();
        trie.insert(&LpmKey::entry(&[], &cidr("10.0.0.0/24")), "twentyfour").unwrap();
        let hit = trie.lookup(&LpmKey::query(&[], ip("10.0.0.9")));
        assert_eq!(hit.value, Some(&"twentyfour"));
        let hit = trie.lookup(&LpmKey::query(&[], ip("10.9.0.9")));
        assert_eq!(hit.value, Some(&"eight"));
    }

    #[test]
    fn empty_trie_misses() {
        let trie: LpmTrie<()> = LpmTrie::new(PLAIN_V4);
        let hit = trie.lookup(&LpmKey::query(&[], ip("10.0.0.1")));
        assert!(hit.is_miss());
        assert_eq!(hit.visits, 1);
    }

    #[test]
    fn replace_is_single_entry() {
        let mut trie = LpmTrie::new(PLAIN_V4);
        let key = LpmKey::entry(&[], &cidr("10.0.0.0/24"));
        assert_eq!(trie.insert(&key, 1).unwrap(), None);
        assert_eq!(trie.insert(&key, 2).unwrap(), Some(1));
        assert_eq!(trie.len(), 1);
        assert_eq!(trie.remove(&key), Some(2));
        assert!(trie.is_empty());
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let mut trie = LpmTrie::new(KeyGeometry::new(4, Family::V4));
        let err = trie.insert(&LpmKey::entry(&[], &cidr("10.0.0.0/8")), ()).unwrap_err();
        assert_eq!(err.trie_fixed, 4);
        assert_eq!(err.key_fixed, 0);
    }

    #[test]
    fn composite_key_isolates_fixed_fields() {
        // Gateway-style geometry: peer (4 bytes) + app_index (4 bytes).
        let geom = KeyGeometry::new(8, Family::V4);
        let mut trie = LpmTrie::new(geom);
        let mut fixed_a = ip_bytes("10.200.0.2");
        fixed_a.extend_from_slice(&3u32.to_be_bytes());
        trie.insert(&LpmKey::entry(&fixed_a, &cidr("10.0.0.0/24")), "peer-a").unwrap();

        // Same app_index on a different peer must miss.
        let mut fixed_b = ip_bytes("10.200.0.3");
        fixed_b.extend_from_slice(&3u32.to_be_bytes());
        let hit = trie.lookup(&LpmKey::query(&fixed_b, ip("10.0.0.7")));
        assert!(hit.is_miss());

        let hit = trie.lookup(&LpmKey::query(&fixed_a, ip("10.0.0.7")));
        assert_eq!(hit.value, Some(&"peer-a"));
    }

    fn ip_bytes(s: &str) -> Vec<u8> {
        match s.parse::<IpAddr>().unwrap() {
            IpAddr::V4(a) => a.octets().to_vec(),
            IpAddr::V6(a) => a.octets().to_vec(),
        }
    }

    #[test]
    fn visits_stay_within_geometry_bound() {
        let geom = KeyGeometry::new(4, Family::V4);
        let mut trie = LpmTrie::new(geom);
        let fixed = 7u32.to_be_bytes();
        trie.insert(&LpmKey::entry(&fixed, &cidr("10.0.0.1/32")), ()).unwrap();
        let hit = trie.lookup(&LpmKey::query(&fixed, ip("10.0.0.1")));
        assert_eq!(hit.visits, geom.visit_bound());
        let miss = trie.lookup(&LpmKey::query(&99u32.to_be_bytes(), ip("10.0.0.1")));
        assert!(miss.visits <= geom.visit_bound());
    }

    #[test]
    fn cascaded_lookup_returns_port_predicate() {
        // The overlapping pair that strict mode rejects: /8 on 443, /16 on 22.
        let mut trie = LpmTrie::new(PLAIN_V4);
        let mut cascade = CascadeTable::new();
        trie.insert(&LpmKey::entry(&[], &cidr("10.0.0.0/8")), ()).unwrap();
        trie.insert(&LpmKey::entry(&[], &cidr("10.1.0.0/16")), ()).unwrap();
        cascade.insert(&[], cidr("10.0.0.0/8"), Proto::Tcp, PortRange::new(443, 443).unwrap());
        cascade.insert(&[], cidr("10.1.0.0/16"), Proto::Tcp, PortRange::new(22, 22).unwrap());

        let q = |s: &str| LpmKey::query(&[], ip(s));
        let ports = cascaded_lookup(&trie, &cascade, &q("10.1.2.3"), ip("10.1.2.3"), Proto::Tcp);
        assert_eq!(ports, Some(PortRange::new(22, 22).unwrap()));
        // Port predicate is returned even when it will subsequently fail.
        assert!(!ports.unwrap().matches(443));

        let ports = cascaded_lookup(&trie, &cascade, &q("10.200.0.1"), ip("10.200.0.1"), Proto::Tcp);
        assert_eq!(ports, Some(PortRange::new(443, 443).unwrap()));
        assert!(ports.unwrap().matches(443));

        // No UDP rule anywhere: cascade miss.
        let ports = cascaded_lookup(&trie, &cascade, &q("10.1.2.3"), ip("10.1.2.3"), Proto::Udp);
        assert_eq!(ports, None);
    }
}
