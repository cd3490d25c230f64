//! Policy file loading. Policies are TOML documents with four sections:
//! the internal prefix list, the principal table, per-principal grant
//! entries, and per-peer gateway grants, plus an options table.
//!
//! ```toml
//! internal = ["10.0.0.0/8", "172.16.0.0/12"]
//!
//! [options]
//! mode = "strict"          # strict | cascaded
//! cache = "on"             # on | off
//! sweep_interval_ms = 1000
//! cache_ttl_ms = 5000
//!
//! [[principal]]
//! name = "browser"
//! app_index = 1
//! # exec_hash = "<64 hex digits>"   # optional binary verification gate
//!
//! [grants]
//! browser = ["10.0.0.0/24 tcp 443-443", "10.1.0.0/16 * 0-0"]
//!
//! [gateway."10.200.0.2"]
//! browser = ["10.0.0.0/24 tcp 443-443"]
//! ```
//!
//! Grant entries are `CIDR PROTO LO-HI`, with `*` matching both TCP and
//! UDP and `0-0` the all-ports wildcard.

use std::collections::BTreeMap;
use std::net::IpAddr;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use procroute_core::policy::{
    Cidr, Digest, Grant, NormalizationMode, PolicyError, PolicyInstance, PortRange, Principal,
    ProtoSel,
};
use procroute_core::time::SimDuration;

#[derive(Debug, Error)]
pub enum PolicyFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    // toml errors carry line/column positions in their display output.
    #[error("parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("internal[{index}]: {source}")]
    BadInternal {
        index: usize,
        #[source]
        source: PolicyError,
    },
    #[error("{section}: bad grant entry {entry:?}: {msg}")]
    BadGrant { section: String, entry: String, msg: String },
    #[error("principal {name}: exec_hash must be 64 hex digits")]
    BadHash { name: String },
    #[error("gateway peer {peer:?} is not an IP address")]
    BadPeer { peer: String },
    #[error("gateway section references unknown principal {name:?}")]
    UnknownGatewayPrincipal { name: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptions {
    mode: Option<String>,
    cache: Option<String>,
    sweep_interval_ms: Option<u64>,
    cache_ttl_ms: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrincipal {
    name: String,
    app_index: u32,
    exec_hash: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicyFile {
    #[serde(default)]
    internal: Vec<String>,
    options: Option<RawOptions>,
    #[serde(default, rename = "principal")]
    principals: Vec<RawPrincipal>,
    #[serde(default)]
    grants: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    gateway: BTreeMap<String, BTreeMap<String, Vec<String>>>,
}

/// Runtime options carried alongside the policy.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOptions {
    pub mode: NormalizationMode,
    pub cache_enabled: bool,
    pub sweep_interval: SimDuration,
    pub cache_ttl: SimDuration,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        PolicyOptions {
            mode: NormalizationMode::Strict,
            cache_enabled: true,
            sweep_interval: SimDuration::from_millis(1_000),
            cache_ttl: SimDuration::from_millis(5_000),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedPolicy {
    pub policy: PolicyInstance,
    pub options: PolicyOptions,
}

/// Parses one `CIDR PROTO LO-HI` grant entry.
pub fn parse_grant_entry(section: &str, entry: &str) -> Result<Grant, PolicyFileError> {
    let bad = |msg: &str| PolicyFileError::BadGrant {
        section: section.to_string(),
        entry: entry.to_string(),
        msg: msg.to_string(),
    };
    let mut parts = entry.split_whitespace();
    let prefix: Cidr = parts
        .next()
        .ok_or_else(|| bad("missing CIDR"))?
        .parse()
        .map_err(|e: PolicyError| bad(&e.to_string()))?;
    let proto = match parts.next().ok_or_else(|| bad("missing protocol"))? {
        "tcp" => ProtoSel::Tcp,
        "udp" => ProtoSel::Udp,
        "*" | "any" => ProtoSel::Any,
        other => return Err(bad(&format!("unknown protocol {other:?}"))),
    };
    let ports = parts.next().ok_or_else(|| bad("missing port range"))?;
    let (lo, hi) = ports.split_once('-').ok_or_else(|| bad("port range must be LO-HI"))?;
    let lo: u16 = lo.parse().map_err(|_| bad("ports must be 0-65535"))?;
    let hi: u16 = hi.parse().map_err(|_| bad("ports must be 0-65535"))?;
    if parts.next().is_some() {
        return Err(bad("trailing tokens"));
    }
    let ports = PortRange::new(lo, hi).map_err(|e| bad(&e.to_string()))?;
    Ok(Grant::new(prefix, proto, ports))
}

pub fn parse_policy_str(
    text: &str,
    mode_override: Option<NormalizationMode>,
) -> Result<LoadedPolicy, PolicyFileError> {
    let raw: RawPolicyFile = toml::from_str(text)?;

    let mut options = PolicyOptions::default();
    if let Some(o) = &raw.options {
        if let Some(mode) = &o.mode {
            options.mode = match mode.as_str() {
                "strict" => NormalizationMode::Strict,
                "cascaded" => NormalizationMode::Cascaded,
                other => {
                    return Err(PolicyFileError::BadGrant {
                        section: "options".into(),
                        entry: other.into(),
                        msg: "mode must be strict or cascaded".into(),
                    })
                }
            };
        }
        if let Some(cache) = &o.cache {
            options.cache_enabled = match cache.as_str() {
                "on" => true,
                "off" => false,
                other => {
                    return Err(PolicyFileError::BadGrant {
                        section: "options".into(),
                        entry: other.into(),
                        msg: "cache must be on or off".into(),
                    })
                }
            };
        }
        if let Some(ms) = o.sweep_interval_ms {
            options.sweep_interval = SimDuration::from_millis(ms.max(1));
        }
        if let Some(ms) = o.cache_ttl_ms {
            options.cache_ttl = SimDuration::from_millis(ms.max(1));
        }
    }
    if let Some(mode) = mode_override {
        options.mode = mode;
    }

    let mut internal = Vec::with_capacity(raw.internal.len());
    for (index, s) in raw.internal.iter().enumerate() {
        internal
            .push(s.parse().map_err(|source| PolicyFileError::BadInternal { index, source })?);
    }

    let mut principals = Vec::with_capacity(raw.principals.len());
    let mut index_by_name: BTreeMap<String, u32> = BTreeMap::new();
    for p in &raw.principals {
        let mut principal = Principal::new(p.name.clone(), p.app_index);
        if let Some(hex) = &p.exec_hash {
            let digest = Digest::from_hex(hex)
                .ok_or_else(|| PolicyFileError::BadHash { name: p.name.clone() })?;
            principal = principal.with_exec_hash(digest);
        }
        index_by_name.insert(p.name.clone(), p.app_index);
        principals.push(principal);
    }

    let mut grants = Vec::new();
    for (name, entries) in &raw.grants {
        let section = format!("grants.{name}");
        let list = entries
            .iter()
            .map(|e| parse_grant_entry(&section, e))
            .collect::<Result<Vec<_>, _>>()?;
        grants.push((name.clone(), list));
    }

    let mut gateway = Vec::new();
    for (peer, by_principal) in &raw.gateway {
        let peer_ip: IpAddr =
            peer.parse().map_err(|_| PolicyFileError::BadPeer { peer: peer.clone() })?;
        for (name, entries) in by_principal {
            let app = *index_by_name
                .get(name)
                .ok_or_else(|| PolicyFileError::UnknownGatewayPrincipal { name: name.clone() })?;
            let section = format!("gateway.{peer}.{name}");
            let list = entries
                .iter()
                .map(|e| parse_grant_entry(&section, e))
                .collect::<Result<Vec<_>, _>>()?;
            gateway.push(((peer_ip, app), list));
        }
    }

    let policy = PolicyInstance::new(internal, principals, grants, gateway, options.mode)?;
    Ok(LoadedPolicy { policy, options })
}

pub fn load_policy(
    path: &Path,
    mode_override: Option<NormalizationMode>,
) -> Result<LoadedPolicy, PolicyFileError> {
    let text = std::fs::read_to_string(path).map_err(|source| PolicyFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_policy_str(&text, mode_override)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
internal = ["10.0.0.0/8"]

[options]
mode = "strict"
cache = "on"

[[principal]]
name = "browser"
app_index = 1

[[principal]]
name = "db"
app_index = 2
exec_hash = "00112233445566778899aabbccddeeff00112233445566778899aabbccddeeff"

[grants]
browser = ["10.0.0.0/24 tcp 443-443"]
db = ["10.1.0.0/16 tcp 5432-5432"]

[gateway."10.200.0.2"]
browser = ["10.0.0.0/24 tcp 443-443"]
"#;

    #[test]
    fn parses_full_document() {
        let loaded = parse_policy_str(SAMPLE, None).unwrap();
        assert_eq!(loaded.policy.principals().count(), 2);
        assert_eq!(loaded.policy.internal().len(), 1);
        assert!(loaded.policy.principal("db").unwrap().exec_hash.is_some());
        assert!(loaded
            .policy
            .gateway_set("10.200.0.2".parse().unwrap(), 1)
            .is_some());
        assert!(loaded.options.cache_enabled);
    }

    #[test]
    fn toml_errors_carry_positions() {
        let err = parse_policy_str("internal = [\nbroken", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "positional info expected, got: {msg}");
    }

    #[test]
    fn bad_grant_entries_name_the_section() {
        let text = r#"
internal = ["10.0.0.0/8"]
[[principal]]
name = "a"
app_index = 1
[grants]
a = ["10.0.0.0/24 bogus 1-2"]
"#;
        let err = parse_policy_str(text, None).unwrap_err();
        assert!(err.to_string().contains("grants.a"));
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn wildcards_parse() {
        let g = parse_grant_entry("t", "10.0.0.0/8 * 0-0").unwrap();
        assert_eq!(g.proto, ProtoSel::Any);
        assert!(g.ports.is_all());
    }

    #[test]
    fn mode_override_wins() {
        let text = r#"
internal = ["10.0.0.0/8"]
[options]
mode = "strict"
[[principal]]
name = "a"
app_index = 1
[grants]
a = ["10.0.0.0/8 tcp 443-443", "10.1.0.0/16 tcp 22-22"]
"#;
        assert!(parse_policy_str(text, None).is_err());
        let loaded = parse_policy_str(text, Some(NormalizationMode::Cascaded)).unwrap();
        assert_eq!(loaded.options.mode, NormalizationMode::Cascaded);
    }
}
