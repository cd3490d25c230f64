//! Destination spec grammar: `IP:PORT/PROTO`, with IPv6 addresses in
//! brackets (`[fd00::1]:443/tcp`). The wildcard port range in policy files
//! is written `0-0`; a destination spec always names a concrete port.

use std::net::IpAddr;

use thiserror::Error;

use procroute_core::policy::{Destination, Proto};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad destination spec {spec:?}: {msg} (expected IP:PORT/PROTO)")]
pub struct BadDestSpec {
    pub spec: String,
    pub msg: String,
}

pub fn parse_dest_spec(spec: &str) -> Result<Destination, BadDestSpec> {
    let bad = |msg: &str| BadDestSpec { spec: spec.to_string(), msg: msg.to_string() };
    let (addr_port, proto) = spec.rsplit_once('/').ok_or_else(|| bad("missing /PROTO"))?;
    let proto = match proto {
        "tcp" => Proto::Tcp,
        "udp" => Proto::Udp,
        other => return Err(bad(&format!("unknown protocol {other:?}"))),
    };
    let (addr, port) = if let Some(rest) = addr_port.strip_prefix('[') {
        let (v6, port) = rest.split_once("]:").ok_or_else(|| bad("unclosed [v6] address"))?;
        (v6.to_string(), port)
    } else {
        let (a, p) = addr_port.rsplit_once(':').ok_or_else(|| bad("missing :PORT"))?;
        (a.to_string(), p)
    };
    let ip: IpAddr = addr.parse().map_err(|_| bad("unparsable IP address"))?;
    let port: u16 = port.parse().map_err(|_| bad("port must be 0-65535"))?;
    Ok(Destination::new(ip, proto, port))
}
