//! Independent oracles for the test suites. Everything here re-derives
//! expected results from first principles (bit-by-bit prefix membership,
//! linear scans, direct formula evaluation) without touching the
//! implementation paths under test.
//!
//! Each test binary links this module separately and uses a subset of it.
#![allow(dead_code)]

use std::net::IpAddr;

use procroute_core::policy::{Cidr, Destination, Grant};

fn addr_bits(ip: IpAddr) -> Vec<u8> {
    match ip {
        IpAddr::V4(a) => {
            let v = u32::from(a);
            (0..32).rev().map(|i| ((v >> i) & 1) as u8).collect()
        }
        IpAddr::V6(a) => {
            let v = u128::from(a);
            (0..128).rev().map(|i| ((v >> i) & 1) as u8).collect()
        }
    }
}

/// Prefix membership by explicit bit comparison.
pub fn in_prefix_bitwise(ip: IpAddr, prefix: &Cidr) -> bool {
    if ip.is_ipv4() != prefix.addr().is_ipv4() {
        return false;
    }
    let q = addr_bits(ip);
    let p = addr_bits(prefix.addr());
    (0..prefix.prefix_len() as usize).all(|i| q[i] == p[i])
}

/// The covering relation evaluated from scratch.
pub fn covers_oracle(dst: &Destination, g: &Grant) -> bool {
    let proto_ok = match g.proto {
        procroute_core::policy::ProtoSel::Any => true,
        procroute_core::policy::ProtoSel::Tcp => dst.proto == procroute_core::policy::Proto::Tcp,
        procroute_core::policy::ProtoSel::Udp => dst.proto == procroute_core::policy::Proto::Udp,
    };
    let port_ok = g.ports.lo == 0 || (g.ports.lo <= dst.port && dst.port <= g.ports.hi);
    in_prefix_bitwise(dst.ip, &g.prefix) && proto_ok && port_ok
}

/// The local decision formula evaluated directly: external passes, bound
/// plus hash-satisfied plus any covering grant passes, everything else is
/// denied. This is union-of-grants semantics, valid for
/// destination-disjoint (strict) grant sets.
pub fn formula_allows(
    internal: &[Cidr],
    bound: bool,
    hash_satisfied: bool,
    grants: &[Grant],
    dst: &Destination,
) -> bool {
    let is_internal = internal.iter().any(|c| in_prefix_bitwise(dst.ip, c));
    if !is_internal {
        return true;
    }
    bound && hash_satisfied && grants.iter().any(|g| covers_oracle(dst, g))
}

/// Longest-match evaluation for overlapping (cascaded) grant sets: the
/// most specific prefix containing the destination shadows broader ones;
/// among grants at that prefix, any protocol-compatible entry supplies the
/// port predicate.
pub fn cascaded_allows(grants: &[Grant], dst: &Destination) -> bool {
    let best = grants
        .iter()
        .filter(|g| in_prefix_bitwise(dst.ip, &g.prefix))
        .map(|g| g.prefix.prefix_len())
        .max();
    let Some(len) = best else { return false };
    grants
        .iter()
        .filter(|g| g.prefix.prefix_len() == len && in_prefix_bitwise(dst.ip, &g.prefix))
        .any(|g| {
            let proto_ok = match g.proto {
                procroute_core::policy::ProtoSel::Any => true,
                procroute_core::policy::ProtoSel::Tcp => {
                    dst.proto == procroute_core::policy::Proto::Tcp
                }
                procroute_core::policy::ProtoSel::Udp => {
                    dst.proto == procroute_core::policy::Proto::Udp
                }
            };
            proto_ok && (g.ports.lo == 0 || (g.ports.lo <= dst.port && dst.port <= g.ports.hi))
        })
}

/// A stored trie entry as raw material for the scan oracle: the full key
/// bytes (fixed fields then address) and the match length in bits.
#[derive(Debug, Clone)]
pub struct ScanEntry {
    pub bytes: Vec<u8>,
    pub match_len: u32,
    pub tag: usize,
}

fn bit(bytes: &[u8], i: u32) -> u8 {
    (bytes[(i / 8) as usize] >> (7 - (i % 8))) & 1
}

/// Longest-prefix match by linear scan over all entries: the entry with
/// the greatest match length whose stored bits prefix-match the query.
pub fn scan_lookup(entries: &[ScanEntry], query: &[u8], query_bits: u32) -> Option<usize> {
    let mut best: Option<(&ScanEntry, u32)> = None;
    for e in entries {
        if e.match_len > query_bits {
            continue;
        }
        let matches = (0..e.match_len).all(|i| bit(&e.bytes, i) == bit(query, i));
        if matches {
            match best {
                Some((_, len)) if len >= e.match_len => {}
                _ => best = Some((e, e.match_len)),
            }
        }
    }
    best.map(|(e, _)| e.tag)
}
