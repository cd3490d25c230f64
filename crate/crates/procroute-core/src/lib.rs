//! Process-scoped route authorization: a reference model and simulator.
//!
//! Split-tunnel routes authorize a whole device; any local process can use
//! them. This crate models the enforcement that narrows that to explicitly
//! authorized applications: principals bound to processes through cgroup
//! membership, grants over destination prefixes with protocol and port
//! constraints, a total default-deny decision function in front of every
//! connect()/sendmsg(), and a split client/gateway mode where the client
//! tags packets and a tunnel gateway enforces per-peer policy.
//!
//! Modules:
//! - [`policy`] — domain types, the covering relation, grant-set
//!   normalization, the local decision function, reachable sets.
//! - [`lpm`] — longest-prefix-match tries with composite fixed-prefix
//!   keys, plus the cascade table for overlapping grant sets.
//! - [`host`] — simulated endpoint: cgroup tree, processes, exec-hash
//!   verification, conjunctive program-stack mediation.
//! - [`update`] — data-plane maps, fail-closed update planning, the
//!   interleaving explorer, epoch revocation, the TCP sweeper.
//! - [`gateway`] — client tagging, header tag encoding, the tunnel
//!   ingress pipeline, the flow cache.
//! - [`audit`] — bounded deny/exec event stream and line sink.
//! - [`sim`] — deterministic event-loop wiring of the above.
//! - [`scenario`] — the built-in experiment reproductions.

pub mod audit;
pub mod gateway;
pub mod host;
pub mod lpm;
pub mod policy;
pub mod scenario;
pub mod sim;
pub mod time;
pub mod update;

pub use policy::{
    decide_local, is_internal, normalize, reachable_set, Cidr, Decision, Destination, Digest,
    Grant, GrantSet, NormalizationMode, PolicyError, PolicyInstance, PortRange, Principal, Proto,
    ProtoSel, Reason, Side, Verdict,
};
