//! Policy model: principals, grants, the internal route set, and the
//! local decision function.
//!
//! A policy instance is the triple of internal prefixes, principals, and
//! per-principal grant sets, plus per-peer gateway grants for split
//! deployments. The policy language is purely positive: grants authorize
//! access, there are no deny rules, and internal destinations without a
//! matching grant are denied by absence of a match.
//!
//! Everything in this module is a pure function over immutable inputs;
//! callers may evaluate concurrently without coordination.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while constructing or normalizing policy objects.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("non-canonical CIDR {addr}/{prefix_len}: host bits below the prefix boundary must be zero")]
    NonCanonicalCidr { addr: IpAddr, prefix_len: u8 },
    #[error("prefix length {prefix_len} out of range for this address family (max {max})")]
    PrefixLenOutOfRange { prefix_len: u8, max: u8 },
    #[error("invalid CIDR syntax: {0}")]
    BadCidrSyntax(String),
    #[error("invalid port range {lo}-{hi}: lo must not exceed hi")]
    InvalidPortRange { lo: u16, hi: u16 },
    #[error("ambiguous overlap between {a} and {b}: overlapping prefixes carry different protocol/port constraints")]
    AmbiguousOverlap { a: Cidr, b: Cidr },
    #[error("duplicate cascade key {prefix}/{proto}: same prefix and protocol mapped to different port ranges")]
    DuplicateCascadeKey { prefix: Cidr, proto: Proto },
    #[error("app_index 0 is reserved for the untagged sentinel (principal {name})")]
    AppIndexReserved { name: String },
    #[error("duplicate app_index {index}")]
    DuplicateAppIndex { index: u32 },
    #[error("duplicate principal name {name}")]
    DuplicatePrincipal { name: String },
    #[error("unknown principal {name}")]
    UnknownPrincipal { name: String },
    #[error("unknown app_index {index} in gateway grants")]
    UnknownAppIndex { index: u32 },
    #[error("app_index {index} of principal {name} exceeds the tag carrier limit {limit}")]
    AppIndexTooWide { name: String, index: u32, limit: u32 },
}

/// Transport protocol of a concrete connection attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Udp,
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proto::Tcp => write!(f, "tcp"),
            Proto::Udp => write!(f, "udp"),
        }
    }
}

/// Protocol selector of a grant. `Any` covers exactly TCP and UDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtoSel {
    Tcp,
    Udp,
    Any,
}

impl ProtoSel {
    pub fn matches(self, proto: Proto) -> bool {
        match self {
            ProtoSel::Any => true,
            ProtoSel::Tcp => proto == Proto::Tcp,
            ProtoSel::Udp => proto == Proto::Udp,
        }
    }

    /// Concrete protocols covered by this selector.
    pub fn concrete(self) -> &'static [Proto] {
        match self {
            ProtoSel::Tcp => &[Proto::Tcp],
            ProtoSel::Udp => &[Proto::Udp],
            ProtoSel::Any => &[Proto::Tcp, Proto::Udp],
        }
    }
}

impl fmt::Display for ProtoSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtoSel::Tcp => write!(f, "tcp"),
            ProtoSel::Udp => write!(f, "udp"),
            ProtoSel::Any => write!(f, "*"),
        }
    }
}

/// An IP prefix in canonical form: all bits below the prefix boundary are
/// zero. Non-canonical input is rejected at construction rather than
/// silently masked, so that overlap checks are unambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cidr {
    addr: IpAddr,
    prefix_len: u8,
}

impl Cidr {
    pub fn new(addr: IpAddr, prefix_len: u8) -> Result<Self, PolicyError> {
        let max = match addr {
            IpAddr::V4(_) => 32,
            IpAddr::V6(_) => 128,
        };
        if prefix_len > max {
            return Err(PolicyError::PrefixLenOutOfRange { prefix_len, max });
        }
        let canonical = match addr {
            IpAddr::V4(a) => {
                let bits = u32::from(a);
                prefix_len == 0 || bits & low_mask_v4(prefix_len) == 0
            }
            IpAddr::V6(a) => {
                let bits = u128::from(a);
                prefix_len == 0 || bits & low_mask_v6(prefix_len) == 0
            }
        };
        if !canonical {
            return Err(PolicyError::NonCanonicalCidr { addr, prefix_len });
        }
        Ok(Cidr { addr, prefix_len })
    }

    /// Builds the canonical prefix of `prefix_len` bits that contains `ip`,
    /// masking host bits away.
    pub fn containing(ip: IpAddr, prefix_len: u8) -> Result<Self, PolicyError> {
        let addr = match ip {
            IpAddr::V4(a) => {
                if prefix_len > 32 {
                    return Err(PolicyError::PrefixLenOutOfRange { prefix_len, max: 32 });
                }
                IpAddr::V4(Ipv4Addr::from(u32::from(a) & !low_mask_v4(prefix_len)))
            }
            IpAddr::V6(a) => {
                if prefix_len > 128 {
                    return Err(PolicyError::PrefixLenOutOfRange { prefix_len, max: 128 });
                }
                IpAddr::V6(Ipv6Addr::from(u128::from(a) & !low_mask_v6(prefix_len)))
            }
        };
        Ok(Cidr { addr, prefix_len })
    }

    pub fn addr(&self) -> IpAddr {
        self.addr
    }

    pub fn prefix_len(&self) -> u8 {
        self.prefix_len
    }

    pub fn is_v4(&self) -> bool {
        self.addr.is_ipv4()
    }

    /// Membership of a single address in this prefix. Differing address
    /// families never match.
    pub fn contains(&self, ip: IpAddr) -> bool {
        match (self.addr, ip) {
            (IpAddr::V4(net), IpAddr::V4(q)) => {
                self.prefix_len == 0
                    || (u32::from(net) ^ u32::from(q)) & !low_mask_v4(self.prefix_len) == 0
            }
            (IpAddr::V6(net), IpAddr::V6(q)) => {
                self.prefix_len == 0
                    || (u128::from(net) ^ u128::from(q)) & !low_mask_v6(self.prefix_len) == 0
            }
            _ => false,
        }
    }

    /// True when the two prefixes share any address. Two CIDR prefixes
    /// overlap exactly when one contains the other's network address.
    pub fn overlaps(&self, other: &Cidr) -> bool {
        self.contains(other.addr) || other.contains(self.addr)
    }
}

fn low_mask_v4(prefix_len: u8) -> u32 {
    match prefix_len {
        0 => u32::MAX,
        1..=31 => u32::MAX >> prefix_len,
        _ => 0,
    }
}

fn low_mask_v6(prefix_len: u8) -> u128 {
    match prefix_len {
        0 => u128::MAX,
        1..=127 => u128::MAX >> prefix_len,
        _ => 0,
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.prefix_len)
    }
}

impl FromStr for Cidr {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| PolicyError::BadCidrSyntax(s.to_string()))?;
        let addr: IpAddr = addr
            .parse()
            .map_err(|_| PolicyError::BadCidrSyntax(s.to_string()))?;
        let len: u8 = len
            .parse()
            .map_err(|_| PolicyError::BadCidrSyntax(s.to_string()))?;
        Cidr::new(addr, len)
    }
}

impl Serialize for Cidr {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cidr {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive destination port range. `lo == 0` is the all-ports sentinel;
/// `hi` is then ignored for matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
}

impl PortRange {
    pub const ALL: PortRange = PortRange { lo: 0, hi: 0 };

    pub fn new(lo: u16, hi: u16) -> Result<Self, PolicyError> {
        if lo > hi {
            return Err(PolicyError::InvalidPortRange { lo, hi });
        }
        Ok(PortRange { lo, hi })
    }

    pub fn is_all(&self) -> bool {
        self.lo == 0
    }

    pub fn matches(&self, port: u16) -> bool {
        self.lo == 0 || (self.lo <= port && port <= self.hi)
    }
}

impl fmt::Display for PortRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// A resource a principal may reach: prefix, protocol selector, port range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Grant {
    pub prefix: Cidr,
    pub proto: ProtoSel,
    pub ports: PortRange,
}

impl Grant {
    pub fn new(prefix: Cidr, proto: ProtoSel, ports: PortRange) -> Self {
        Grant { prefix, proto, ports }
    }

    /// The covering relation: a concrete destination is covered when its
    /// address lies in the prefix, the protocol selector matches, and the
    /// port satisfies the range (or the range is the all-ports sentinel).
    pub fn covers(&self, dst: &Destination) -> bool {
        self.prefix.contains(dst.ip) && self.proto.matches(dst.proto) && self.ports.matches(dst.port)
    }
}

impl fmt::Display for Grant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.prefix, self.proto, self.ports)
    }
}

/// 32-byte executable digest used by the optional binary verification gate.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    /// Deterministic digest derived from a short label; used by tests and
    /// scenario scripts in place of hashing a real binary image.
    pub fn from_label(label: &str) -> Self {
        let mut bytes = [0u8; 32];
        for (i, b) in label.bytes().enumerate().take(32) {
            bytes[i] = b;
        }
        let len = label.len() as u8;
        bytes[31] ^= len;
        Digest(bytes)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 {
            return None;
        }
        let mut bytes = [0u8; 32];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = (chunk[0] as char).to_digit(16)?;
            let lo = (chunk[1] as char).to_digit(16)?;
            bytes[i] = (hi * 16 + lo) as u8;
        }
        Some(Digest(bytes))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({self})")
    }
}

/// An application identity. `app_index` 0 is reserved as the untagged
/// sentinel, so indices start at 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Principal {
    pub name: String,
    pub app_index: u32,
    pub exec_hash: Option<Digest>,
}

impl Principal {
    pub fn new(name: impl Into<String>, app_index: u32) -> Self {
        Principal { name: name.into(), app_index, exec_hash: None }
    }

    pub fn with_exec_hash(mut self, digest: Digest) -> Self {
        self.exec_hash = Some(digest);
        self
    }
}

/// A concrete connection attempt: destination address, transport, port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Destination {
    pub ip: IpAddr,
    pub proto: Proto,
    pub port: u16,
}

impl Destination {
    pub fn new(ip: IpAddr, proto: Proto, port: u16) -> Self {
        Destination { ip, proto, port }
    }
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ip {
            IpAddr::V4(a) => write!(f, "{}:{}/{}", a, self.port, self.proto),
            IpAddr::V6(a) => write!(f, "[{}]:{}/{}", a, self.port, self.proto),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Allow,
    Deny,
}

/// Why a verdict came out the way it did. The first failing pipeline stage
/// supplies the reason on deny.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    External,
    GrantMatch,
    NoBinding,
    NoGrant,
    PortMismatch,
    HashUnverified,
    Untagged,
    StaleEpoch,
    CacheHit,
}

impl Reason {
    /// Reasons that accompany an allow; all others accompany a deny.
    pub fn allows(self) -> bool {
        matches!(self, Reason::External | Reason::GrantMatch | Reason::CacheHit)
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Reason::External => "external",
            Reason::GrantMatch => "grant_match",
            Reason::NoBinding => "no_binding",
            Reason::NoGrant => "no_grant",
            Reason::PortMismatch => "port_mismatch",
            Reason::HashUnverified => "hash_unverified",
            Reason::Untagged => "untagged",
            Reason::StaleEpoch => "stale_epoch",
            Reason::CacheHit => "cache_hit",
        };
        f.write_str(s)
    }
}

/// A decision plus its reason. The decision is derived from the reason, so
/// an inconsistent pair is unrepresentable through [`Verdict::from_reason`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    pub reason: Reason,
}

impl Verdict {
    pub fn from_reason(reason: Reason) -> Self {
        let decision = if reason.allows() { Decision::Allow } else { Decision::Deny };
        Verdict { decision, reason }
    }

    pub fn is_allow(&self) -> bool {
        self.decision == Decision::Allow
    }

    pub fn is_deny(&self) -> bool {
        self.decision == Decision::Deny
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.decision {
            Decision::Allow => write!(f, "ALLOW {}", self.reason),
            Decision::Deny => write!(f, "DENY {}", self.reason),
        }
    }
}

/// Whether grant sets must come out destination-disjoint (strict) or may
/// keep overlapping prefixes with differing constraints behind a cascade
/// table (cascaded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    Strict,
    Cascaded,
}

/// A normalized grant set. In strict mode the grants are
/// destination-disjoint: at most one prefix covers any destination IP, so a
/// single longest-prefix match plus that rule's predicate decides coverage.
/// In cascaded mode overlapping prefixes are retained and the per-protocol
/// port predicate lives in `cascade`, keyed by exact (prefix, protocol).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GrantSet {
    grants: Vec<Grant>,
    cascaded: bool,
    cascade: BTreeMap<(Cidr, Proto), PortRange>,
}

impl GrantSet {
    pub fn grants(&self) -> &[Grant] {
        &self.grants
    }

    pub fn is_cascaded(&self) -> bool {
        self.cascaded
    }

    pub fn cascade(&self) -> &BTreeMap<(Cidr, Proto), PortRange> {
        &self.cascade
    }

    pub fn is_empty(&self) -> bool {
        self.grants.is_empty()
    }

    pub fn as_set(&self) -> BTreeSet<Grant> {
        self.grants.iter().copied().collect()
    }

    /// Longest stored prefix containing `ip`, if any.
    pub fn longest_match(&self, ip: IpAddr) -> Option<&Grant> {
        self.grants
            .iter()
            .filter(|g| g.prefix.contains(ip))
            .max_by_key(|g| g.prefix.prefix_len())
    }
}

/// Normalizes a raw grant list.
///
/// Duplicates and overlaps with identical protocol/port constraints are
/// merged (the broader prefix wins). In strict mode, overlapping prefixes
/// with differing constraints are rejected as ambiguous. Cascaded mode
/// admits them, builds the (prefix, protocol) cascade table, and rejects
/// only duplicate cascade keys with conflicting port ranges.
pub fn normalize(grants: &[Grant], mode: NormalizationMode) -> Result<GrantSet, PolicyError> {
    let mut sorted: Vec<Grant> = grants.to_vec();
    sorted.sort();
    sorted.dedup();

    match mode {
        NormalizationMode::Strict => {
            // Broadest prefixes first: any overlap seen while sweeping is a
            // containment by an already-kept broader entry.
            sorted.sort_by_key(|g| (g.prefix.prefix_len(), g.prefix, g.proto, g.ports));
            let mut kept: Vec<Grant> = Vec::with_capacity(sorted.len());
            for g in sorted {
                let mut subsumed = false;
                for k in &kept {
                    if k.prefix.overlaps(&g.prefix) {
                        if k.proto == g.proto && k.ports == g.ports {
                            subsumed = true;
                            break;
                        }
                        return Err(PolicyError::AmbiguousOverlap { a: k.prefix, b: g.prefix });
                    }
                }
                if !subsumed {
                    kept.push(g);
                }
            }
            kept.sort();
            Ok(GrantSet { grants: kept, cascaded: false, cascade: BTreeMap::new() })
        }
        NormalizationMode::Cascaded => {
            let mut cascade: BTreeMap<(Cidr, Proto), PortRange> = BTreeMap::new();
            for g in &sorted {
                for &proto in g.proto.concrete() {
                    match cascade.get(&(g.prefix, proto)) {
                        Some(existing) if *existing != g.ports => {
                            return Err(PolicyError::DuplicateCascadeKey { prefix: g.prefix, proto });
                        }
                        _ => {
                            cascade.insert((g.prefix, proto), g.ports);
                        }
                    }
                }
            }
            Ok(GrantSet { grants: sorted, cascaded: true, cascade })
        }
    }
}

/// True iff `ip` lies in the union of the internal prefixes.
pub fn is_internal(ip: IpAddr, internal: &[Cidr]) -> bool {
    internal.iter().any(|c| c.contains(ip))
}

/// Which reachable set to compute: the local allow set, or the gateway
/// allow set for one peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Local,
    Split(IpAddr),
}

/// A full policy instance: the unit of atomic replacement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyInstance {
    internal: Vec<Cidr>,
    principals: BTreeMap<String, Principal>,
    by_index: BTreeMap<u32, String>,
    grants: BTreeMap<String, GrantSet>,
    gateway_grants: BTreeMap<(IpAddr, u32), GrantSet>,
    mode: NormalizationMode,
}

impl PolicyInstance {
    /// Validates and normalizes a policy. Every grant key must name a
    /// declared principal, app indices must be unique and nonzero, and the
    /// tag-carrier width limits apply as soon as gateway grants exist for
    /// the corresponding family (16-bit IPv4 identification field, 20-bit
    /// IPv6 flow label).
    pub fn new(
        internal: Vec<Cidr>,
        principals: Vec<Principal>,
        grants: Vec<(String, Vec<Grant>)>,
        gateway_grants: Vec<((IpAddr, u32), Vec<Grant>)>,
        mode: NormalizationMode,
    ) -> Result<Self, PolicyError> {
        let mut by_name = BTreeMap::new();
        let mut by_index = BTreeMap::new();
        for p in principals {
            if p.app_index == 0 {
                return Err(PolicyError::AppIndexReserved { name: p.name });
            }
            if by_index.contains_key(&p.app_index) {
                return Err(PolicyError::DuplicateAppIndex { index: p.app_index });
            }
            by_index.insert(p.app_index, p.name.clone());
            if by_name.insert(p.name.clone(), p.clone()).is_some() {
                return Err(PolicyError::DuplicatePrincipal { name: p.name });
            }
        }

        let mut norm_grants = BTreeMap::new();
        for (name, list) in grants {
            if !by_name.contains_key(&name) {
                return Err(PolicyError::UnknownPrincipal { name });
            }
            norm_grants.insert(name, normalize(&list, mode)?);
        }

        let mut norm_gw = BTreeMap::new();
        let mut v4_tagging = false;
        let mut v6_tagging = false;
        for ((peer, index), list) in gateway_grants {
            if !by_index.contains_key(&index) {
                return Err(PolicyError::UnknownAppIndex { index });
            }
            match peer {
                IpAddr::V4(_) => v4_tagging = true,
                IpAddr::V6(_) => v6_tagging = true,
            }
            norm_gw.insert((peer, index), normalize(&list, mode)?);
        }

        let limit = if v4_tagging {
            Some(1u32 << 16)
        } else if v6_tagging {
            Some(1u32 << 20)
        } else {
            None
        };
        if let Some(limit) = limit {
            for p in by_name.values() {
                if p.app_index >= limit {
                    return Err(PolicyError::AppIndexTooWide {
                        name: p.name.clone(),
                        index: p.app_index,
                        limit,
                    });
                }
            }
        }

        Ok(PolicyInstance {
            internal,
            principals: by_name,
            by_index,
            grants: norm_grants,
            gateway_grants: norm_gw,
            mode,
        })
    }

    /// A policy with no principals and no grants over the given internal
    /// set: everything internal is denied, everything external passes.
    pub fn empty(internal: Vec<Cidr>, mode: NormalizationMode) -> Self {
        PolicyInstance {
            internal,
            principals: BTreeMap::new(),
            by_index: BTreeMap::new(),
            grants: BTreeMap::new(),
            gateway_grants: BTreeMap::new(),
            mode,
        }
    }

    pub fn internal(&self) -> &[Cidr] {
        &self.internal
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn principals(&self) -> impl Iterator<Item = &Principal> {
        self.principals.values()
    }

    pub fn principal(&self, name: &str) -> Option<&Principal> {
        self.principals.get(name)
    }

    pub fn principal_by_index(&self, index: u32) -> Option<&Principal> {
        self.by_index.get(&index).and_then(|n| self.principals.get(n))
    }

    pub fn grant_set(&self, name: &str) -> Option<&GrantSet> {
        self.grants.get(name)
    }

    pub fn grant_sets(&self) -> impl Iterator<Item = (&String, &GrantSet)> {
        self.grants.iter()
    }

    pub fn gateway_set(&self, peer: IpAddr, index: u32) -> Option<&GrantSet> {
        self.gateway_grants.get(&(peer, index))
    }

    pub fn gateway_sets(&self) -> impl Iterator<Item = (&(IpAddr, u32), &GrantSet)> {
        self.gateway_grants.iter()
    }
}

/// The local decision function, evaluated at every connect()/sendmsg().
///
/// Total by construction: external destinations pass, internal destinations
/// require a bound principal, a satisfied hash gate, and a matching grant;
/// the first failing stage supplies the deny reason. A principal unknown to
/// the policy counts as unbound.
pub fn decide_local(
    prin: Option<&Principal>,
    verified: bool,
    dst: &Destination,
    policy: &PolicyInstance,
) -> Verdict {
    if !is_internal(dst.ip, &policy.internal) {
        return Verdict::from_reason(Reason::External);
    }
    let Some(p) = prin else {
        return Verdict::from_reason(Reason::NoBinding);
    };
    let Some(known) = policy.principals.get(&p.name) else {
        return Verdict::from_reason(Reason::NoBinding);
    };
    if known.exec_hash.is_some() && !verified {
        return Verdict::from_reason(Reason::HashUnverified);
    }
    let Some(set) = policy.grants.get(&known.name) else {
        return Verdict::from_reason(Reason::NoGrant);
    };
    decide_grant_set(set, dst)
}

/// Grant-set evaluation shared by the local and gateway decision paths:
/// longest-prefix match, then the matched rule's protocol/port predicate
/// (directly in strict mode, via the cascade table in cascaded mode).
pub fn decide_grant_set(set: &GrantSet, dst: &Destination) -> Verdict {
    let Some(hit) = set.longest_match(dst.ip) else {
        return Verdict::from_reason(Reason::NoGrant);
    };
    if set.is_cascaded() {
        let Some(ports) = set.cascade().get(&(hit.prefix, dst.proto)) else {
            return Verdict::from_reason(Reason::NoGrant);
        };
        if !ports.matches(dst.port) {
            return Verdict::from_reason(Reason::PortMismatch);
        }
        Verdict::from_reason(Reason::GrantMatch)
    } else {
        if !hit.proto.matches(dst.proto) || !hit.ports.matches(dst.port) {
            return Verdict::from_reason(Reason::PortMismatch);
        }
        Verdict::from_reason(Reason::GrantMatch)
    }
}

/// The set of resources reachable by a principal on the given side.
/// Unbound callers reach nothing; a principal missing from the policy is an
/// error. Split-side grants are keyed by (peer tunnel IP, app_index).
pub fn reachable_set(
    prin: Option<&Principal>,
    policy: &PolicyInstance,
    side: Side,
) -> Result<BTreeSet<Grant>, PolicyError> {
    let Some(p) = prin else {
        return Ok(BTreeSet::new());
    };
    let Some(known) = policy.principals.get(&p.name) else {
        return Err(PolicyError::UnknownPrincipal { name: p.name.clone() });
    };
    let set = match side {
        Side::Local => policy.grants.get(&known.name),
        Side::Split(peer) => policy.gateway_grants.get(&(peer, known.app_index)),
    };
    Ok(set.map(|s| s.as_set()).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ip(s: &str) -> IpAddr {
        s.parse().unwrap()
    }

    fn cidr(s: &str) -> Cidr {
        s.parse().unwrap()
    }

    fn grant(prefix: &str, proto: ProtoSel, lo: u16, hi: u16) -> Grant {
        Grant::new(cidr(prefix), proto, PortRange::new(lo, hi).unwrap())
    }

    fn dst(s: &str, proto: Proto, port: u16) -> Destination {
        Destination::new(ip(s), proto, port)
    }

    #[test]
    fn covers_wildcard_composition() {
        let r = grant("10.0.0.0/24", ProtoSel::Any, 0, 0);
        assert!(r.covers(&dst("10.0.0.5", Proto::Tcp, 443)));
    }

    #[test]
    fn covers_protocol_mismatch() {
        let r = grant("10.0.0.0/24", ProtoSel::Tcp, 0, 0);
        assert!(!r.covers(&dst("10.0.0.5", Proto::Udp, 53)));
    }

    #[test]
    fn covers_port_bounds_are_inclusive() {
        let r = grant("10.0.0.0/24", ProtoSel::Tcp, 440, 450);
        assert!(r.covers(&dst("10.0.0.5", Proto::Tcp, 440)));
        assert!(r.covers(&dst("10.0.0.5", Proto::Tcp, 450)));
        assert!(!r.covers(&dst("10.0.0.5", Proto::Tcp, 439)));
        assert!(!r.covers(&dst("10.0.0.5", Proto::Tcp, 451)));
    }

    #[test]
    fn internal_union_semantics() {
        let internal = vec![cidr("10.0.0.0/8")];
        assert!(!is_internal(ip("8.8.8.8"), &internal));
        assert!(is_internal(ip("10.250.0.7"), &internal));

        let overlapping = vec![cidr("10.0.0.0/8"), cidr("10.0.1.0/24")];
        assert!(is_internal(ip("10.0.1.5"), &overlapping));
        assert!(is_internal(ip("10.99.0.1"), &overlapping));
        assert!(!is_internal(ip("11.0.0.1"), &overlapping));
    }

    #[test]
    fn non_canonical_cidr_rejected() {
        assert!(matches!(
            Cidr::new(ip("10.0.0.1"), 24),
            Err(PolicyError::NonCanonicalCidr { .. })
        ));
        assert!(Cidr::new(ip("10.0.0.0"), 24).is_ok());
        assert!(Cidr::new(ip("0.0.0.0"), 0).is_ok());
        assert!(matches!(
            Cidr::new(ip("10.0.0.0"), 33),
            Err(PolicyError::PrefixLenOutOfRange { .. })
        ));
    }

    #[test]
    fn normalize_rejects_ambiguous_overlap_in_strict_mode() {
        // Overlapping prefixes with different port constraints.
        let grants = vec![
            grant("10.0.0.0/8", ProtoSel::Tcp, 443, 443),
            grant("10.1.0.0/16", ProtoSel::Tcp, 22, 22),
        ];
        let err = normalize(&grants, NormalizationMode::Strict).unwrap_err();
        match err {
            PolicyError::AmbiguousOverlap { a, b } => {
                assert_eq!(a, cidr("10.0.0.0/8"));
                assert_eq!(b, cidr("10.1.0.0/16"));
            }
            other => panic!("expected AmbiguousOverlap, got {other:?}"),
        }
    }

    #[test]
    fn normalize_merges_duplicates() {
        let grants = vec![
            grant("10.0.0.0/24", ProtoSel::Any, 0, 0),
            grant("10.0.0.0/24", ProtoSel::Any, 0, 0),
        ];
        let set = normalize(&grants, NormalizationMode::Strict).unwrap();
        assert_eq!(set.grants().len(), 1);
    }

    #[test]
    fn normalize_merges_subsumed_identical_constraints() {
        let grants = vec![
            grant("10.0.0.0/8", ProtoSel::Tcp, 443, 443),
            grant("10.1.0.0/16", ProtoSel::Tcp, 443, 443),
        ];
        let set = normalize(&grants, NormalizationMode::Strict).unwrap();
        assert_eq!(set.grants(), &[grant("10.0.0.0/8", ProtoSel::Tcp, 443, 443)]);
    }

    #[test]
    fn normalize_cascaded_retains_overlaps() {
        let grants = vec![
            grant("10.0.0.0/8", ProtoSel::Tcp, 443, 443),
            grant("10.1.0.0/16", ProtoSel::Tcp, 22, 22),
        ];
        let set = normalize(&grants, NormalizationMode::Cascaded).unwrap();
        assert!(set.is_cascaded());
        assert_eq!(set.grants().len(), 2);
        assert_eq!(
            set.cascade().get(&(cidr("10.1.0.0/16"), Proto::Tcp)),
            Some(&PortRange::new(22, 22).unwrap())
        );
    }

    #[test]
    fn normalize_cascaded_rejects_conflicting_keys() {
        let grants = vec![
            grant("10.0.0.0/8", ProtoSel::Any, 443, 443),
            grant("10.0.0.0/8", ProtoSel::Tcp, 22, 22),
        ];
        let err = normalize(&grants, NormalizationMode::Cascaded).unwrap_err();
        assert!(matches!(err, PolicyError::DuplicateCascadeKey { proto: Proto::Tcp, .. }));
    }

    fn small_policy() -> PolicyInstance {
        PolicyInstance::new(
            vec![cidr("10.0.0.0/8")],
            vec![Principal::new("browser", 1)],
            vec![(
                "browser".into(),
                vec![grant("10.0.0.0/24", ProtoSel::Tcp, 443, 443)],
            )],
            vec![],
            NormalizationMode::Strict,
        )
        .unwrap()
    }

    #[test]
    fn decide_unbound_internal_is_no_binding() {
        let policy = small_policy();
        let v = decide_local(None, false, &dst("10.0.0.5", Proto::Tcp, 22), &policy);
        assert_eq!(v, Verdict::from_reason(Reason::NoBinding));
    }

    #[test]
    fn decide_external_passes_for_anyone() {
        let policy = small_policy();
        let v = decide_local(None, false, &dst("1.1.1.1", Proto::Tcp, 443), &policy);
        assert_eq!(v, Verdict::from_reason(Reason::External));
    }

    #[test]
    fn decide_port_outside_range_is_port_mismatch() {
        let policy = small_policy();
        let p = Principal::new("browser", 1);
        let v = decide_local(Some(&p), true, &dst("10.0.0.9", Proto::Tcp, 8443), &policy);
        assert_eq!(v, Verdict::from_reason(Reason::PortMismatch));
    }

    #[test]
    fn decide_grant_match_allows() {
        let policy = small_policy();
        let p = Principal::new("browser", 1);
        let v = decide_local(Some(&p), true, &dst("10.0.0.9", Proto::Tcp, 443), &policy);
        assert_eq!(v, Verdict::from_reason(Reason::GrantMatch));
    }

    #[test]
    fn decide_hash_gate_blocks_unverified() {
        let policy = PolicyInstance::new(
            vec![cidr("10.0.0.0/8")],
            vec![Principal::new("db", 2).with_exec_hash(Digest::from_label("psql"))],
            vec![("db".into(), vec![grant("10.0.0.0/24", ProtoSel::Tcp, 5432, 5432)])],
            vec![],
            NormalizationMode::Strict,
        )
        .unwrap();
        let p = Principal::new("db", 2);
        let d = dst("10.0.0.7", Proto::Tcp, 5432);
        assert_eq!(
            decide_local(Some(&p), false, &d, &policy),
            Verdict::from_reason(Reason::HashUnverified)
        );
        assert_eq!(
            decide_local(Some(&p), true, &d, &policy),
            Verdict::from_reason(Reason::GrantMatch)
        );
    }

    #[test]
    fn reachable_set_unbound_is_empty() {
        let policy = small_policy();
        assert!(reachable_set(None, &policy, Side::Local).unwrap().is_empty());
    }

    #[test]
    fn reachable_set_single_grant_is_singleton() {
        let policy = small_policy();
        let p = Principal::new("browser", 1);
        let set = reachable_set(Some(&p), &policy, Side::Local).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.contains(&grant("10.0.0.0/24", ProtoSel::Tcp, 443, 443)));
    }

    #[test]
    fn reachable_set_unknown_principal_errors() {
        let policy = small_policy();
        let p = Principal::new("ghost", 9);
        assert!(matches!(
            reachable_set(Some(&p), &policy, Side::Local),
            Err(PolicyError::UnknownPrincipal { .. })
        ));
    }

    #[test]
    fn app_index_zero_is_reserved() {
        let err = PolicyInstance::new(
            vec![],
            vec![Principal::new("bad", 0)],
            vec![],
            vec![],
            NormalizationMode::Strict,
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::AppIndexReserved { .. }));
    }

    #[test]
    fn grants_for_unknown_principal_rejected() {
        let err = PolicyInstance::new(
            vec![],
            vec![Principal::new("a", 1)],
            vec![("b".into(), vec![])],
            vec![],
            NormalizationMode::Strict,
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::UnknownPrincipal { .. }));
    }

    #[test]
    fn v4_tagging_limits_app_index_width() {
        let err = PolicyInstance::new(
            vec![cidr("10.0.0.0/8")],
            vec![Principal::new("wide", 1 << 16)],
            vec![],
            vec![((ip("10.200.0.2"), 1 << 16), vec![])],
            NormalizationMode::Strict,
        )
        .unwrap_err();
        assert!(matches!(err, PolicyError::AppIndexTooWide { limit: 0x10000, .. }));
    }

    #[test]
    fn verdict_reason_consistency() {
        for reason in [
            Reason::External,
            Reason::GrantMatch,
            Reason::NoBinding,
            Reason::NoGrant,
            Reason::PortMismatch,
            Reason::HashUnverified,
            Reason::Untagged,
            Reason::StaleEpoch,
            Reason::CacheHit,
        ] {
            let v = Verdict::from_reason(reason);
            assert_eq!(v.is_allow(), reason.allows());
        }
    }

    #[test]
    fn port_range_sentinel_matches_everything() {
        let all = PortRange::ALL;
        assert!(all.matches(0));
        assert!(all.matches(65535));
        assert!(PortRange::new(5, 3).is_err());
    }

    #[test]
    fn cascaded_policy_shadows_broader_prefix() {
        let policy = PolicyInstance::new(
            vec![cidr("10.0.0.0/8")],
            vec![Principal::new("ops", 1)],
            vec![(
                "ops".into(),
                vec![
                    grant("10.0.0.0/8", ProtoSel::Tcp, 443, 443),
                    grant("10.1.0.0/16", ProtoSel::Tcp, 22, 22),
                ],
            )],
            vec![],
            NormalizationMode::Cascaded,
        )
        .unwrap();
        let p = Principal::new("ops", 1);
        // Inside the /16 the narrower rule wins: 22 allowed, 443 shadowed.
        assert!(decide_local(Some(&p), true, &dst("10.1.2.3", Proto::Tcp, 22), &policy).is_allow());
        assert_eq!(
            decide_local(Some(&p), true, &dst("10.1.2.3", Proto::Tcp, 443), &policy),
            Verdict::from_reason(Reason::PortMismatch)
        );
        // Outside the /16 the broad rule applies.
        assert!(decide_local(Some(&p), true, &dst("10.200.0.1", Proto::Tcp, 443), &policy).is_allow());
    }
}
