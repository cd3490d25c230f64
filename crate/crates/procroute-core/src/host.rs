//! Simulated endpoint: cgroup tree, process table, principal binding via
//! the data-plane maps, and mediation of connect()/sendmsg() through the
//! attached program stack.
//!
//! Programs attach to cgroup nodes and accumulate down the hierarchy.
//! Under `AllowMulti` they compose conjunctively — every program from the
//! outermost ancestor to the process's own cgroup must allow, so a
//! descendant can narrow but never widen what an ancestor permits.
//! `AllowOverride` is accepted and replaces the ancestors' verdict; it
//! exists for the property suite's negative test and is flagged on the
//! host when used. All programs are filters by construction: they return
//! verdicts and cannot rewrite the destination.
//!
//! The host advances on an externally supplied clock and is entirely
//! deterministic; tests order every event explicitly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::audit::{AuditEvent, EventBuffer};
use crate::policy::{Cidr, Destination, Digest, Proto, Reason, Verdict};
use crate::time::SimTime;
use crate::update::{DataPlaneState, RevocationConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("cgroup membership write denied for this actor")]
    UnauthorizedMigration,
    #[error("no such process {0}")]
    NoSuchProcess(u64),
    #[error("no such cgroup {0}")]
    NoSuchCgroup(u64),
    #[error("raw socket use requires CAP_NET_RAW")]
    RawSocketDenied,
}

/// Who is performing a control operation. Only the controller may write
/// membership of non-delegated cgroups or place processes into them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Controller,
    Unprivileged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachFlag {
    AllowMulti,
    AllowOverride,
}

/// A decision program attachable to a cgroup. `Enforce` is the
/// route-authorization hook evaluating the data-plane pipeline; the other
/// variants are supplementary restriction filters used to exercise
/// composition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Program {
    Enforce,
    AllowAll,
    DenyAll,
    DenyPort(u16),
    DenyPortRange(u16, u16),
    DenyPrefix(Cidr),
    DenyProto(Proto),
}

impl Program {
    fn evaluate_filter(&self, dst: &Destination) -> Verdict {
        match self {
            Program::Enforce => unreachable!("enforce is evaluated against the data plane"),
            Program::AllowAll => Verdict::from_reason(Reason::External),
            Program::DenyAll => Verdict::from_reason(Reason::NoGrant),
            Program::DenyPort(p) => {
                if dst.port == *p {
                    Verdict::from_reason(Reason::PortMismatch)
                } else {
                    Verdict::from_reason(Reason::External)
                }
            }
            Program::DenyPortRange(lo, hi) => {
                if (*lo..=*hi).contains(&dst.port) {
                    Verdict::from_reason(Reason::PortMismatch)
                } else {
                    Verdict::from_reason(Reason::External)
                }
            }
            Program::DenyPrefix(c) => {
                if c.contains(dst.ip) {
                    Verdict::from_reason(Reason::NoGrant)
                } else {
                    Verdict::from_reason(Reason::External)
                }
            }
            Program::DenyProto(p) => {
                if dst.proto == *p {
                    Verdict::from_reason(Reason::PortMismatch)
                } else {
                    Verdict::from_reason(Reason::External)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgroupNode {
    pub id: u64,
    pub parent: Option<u64>,
    pub delegated: bool,
    pub programs: Vec<(Program, AttachFlag)>,
}

#[derive(Debug, Clone)]
pub struct SimProcess {
    pub pid: u64,
    pub tgid: u64,
    pub cgroup: u64,
    pub comm: String,
    pub exe_digest: Digest,
    pub verified_as: Option<u32>,
    pub cap_net_raw: bool,
    pending_exec: bool,
}

#[derive(Debug, Clone)]
pub struct Socket {
    pub id: u64,
    pub pid: u64,
    pub dst: Destination,
    pub proto: Proto,
    pub epoch: u64,
    pub established: bool,
    pub mark: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Syscall {
    Connect,
    /// UDP send; `Some` names an existing socket, `None` is a first send
    /// that creates one.
    SendMsg(Option<u64>),
}

/// Local enforcement denies at the hook; tagging stamps the socket and
/// defers the verdict to a gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnforcementMode {
    Enforce,
    Tag,
}

/// How exec events reach the verifier. `Immediate` verifies synchronously;
/// `Manual` leaves the event pending so the pre-verification deny window
/// can be observed deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecDelivery {
    Immediate,
    Manual,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MediationCounters {
    pub evaluations: u64,
    pub allows: u64,
    pub denies: u64,
}

#[derive(Debug)]
pub struct MediationOutcome {
    pub verdict: Verdict,
    /// Socket created by an allowed connect or first send.
    pub socket: Option<u64>,
}

pub const ROOT_CGROUP: u64 = 1;

#[derive(Debug, Clone)]
pub struct SimHost {
    cgroups: BTreeMap<u64, CgroupNode>,
    procs: BTreeMap<u64, SimProcess>,
    sockets: BTreeMap<u64, Socket>,
    next_cgroup: u64,
    next_pid: u64,
    next_socket: u64,
    pub mode: EnforcementMode,
    pub exec_delivery: ExecDelivery,
    pub revocation: RevocationConfig,
    counters: MediationCounters,
    override_attached: bool,
}

impl SimHost {
    pub fn new(mode: EnforcementMode) -> Self {
        let mut cgroups = BTreeMap::new();
        cgroups.insert(
            ROOT_CGROUP,
            CgroupNode { id: ROOT_CGROUP, parent: None, delegated: false, programs: Vec::new() },
        );
        SimHost {
            cgroups,
            procs: BTreeMap::new(),
            sockets: BTreeMap::new(),
            next_cgroup: ROOT_CGROUP + 1,
            next_pid: 100,
            next_socket: 1,
            mode,
            exec_delivery: ExecDelivery::Immediate,
            revocation: RevocationConfig::default(),
            counters: MediationCounters::default(),
            override_attached: false,
        }
    }

    pub fn counters(&self) -> MediationCounters {
        self.counters
    }

    /// True once any program was attached with `AllowOverride`; reports
    /// surface this as monotonicity-breaking.
    pub fn override_attached(&self) -> bool {
        self.override_attached
    }

    pub fn cgroup(&self, id: u64) -> Option<&CgroupNode> {
        self.cgroups.get(&id)
    }

    pub fn process(&self, pid: u64) -> Option<&SimProcess> {
        self.procs.get(&pid)
    }

    pub fn socket(&self, id: u64) -> Option<&Socket> {
        self.sockets.get(&id)
    }

    pub fn sockets(&self) -> impl Iterator<Item = &Socket> {
        self.sockets.values()
    }

    pub fn terminate_socket(&mut self, id: u64) -> Option<Socket> {
        self.sockets.remove(&id)
    }

    /// Creates a cgroup. Unprivileged actors may only create under a
    /// delegated parent, and their children stay delegated.
    pub fn create_cgroup(
        &mut self,
        actor: Actor,
        parent: u64,
        delegated: bool,
    ) -> Result<u64, HostError> {
        let parent_node = self.cgroups.get(&parent).ok_or(HostError::NoSuchCgroup(parent))?;
        let delegated = match actor {
            Actor::Controller => delegated,
            Actor::Unprivileged => {
                if !parent_node.delegated {
                    return Err(HostError::UnauthorizedMigration);
                }
                true
            }
        };
        let id = self.next_cgroup;
        self.next_cgroup += 1;
        self.cgroups.insert(id, CgroupNode { id, parent: Some(parent), delegated, programs: Vec::new() });
        Ok(id)
    }

    pub fn attach_program(
        &mut self,
        cgroup: u64,
        program: Program,
        flag: AttachFlag,
    ) -> Result<(), HostError> {
        let node = self.cgroups.get_mut(&cgroup).ok_or(HostError::NoSuchCgroup(cgroup))?;
        if flag == AttachFlag::AllowOverride {
            self.override_attached = true;
        }
        node.programs.push((program, flag));
        Ok(())
    }

    /// Creates a process. With a target cgroup this is the atomic
    /// clone-into-cgroup path and is controller-only: the child exists in
    /// its cgroup before it can issue any connect. Without a target it is
    /// a fork, inheriting the parent's cgroup, image, and verification.
    /// Fresh images (spawn-with-target) leave a pending exec event.
    pub fn spawn(
        &mut self,
        actor: Actor,
        parent: Option<u64>,
        target_cgroup: Option<u64>,
        comm: &str,
        exe_digest: Digest,
        state: &mut DataPlaneState,
        exec_events: &mut EventBuffer,
        now: SimTime,
    ) -> Result<u64, HostError> {
        let pid = self.next_pid;
        match target_cgroup {
            Some(cg) => {
                if actor != Actor::Controller {
                    return Err(HostError::UnauthorizedMigration);
                }
                if !self.cgroups.contains_key(&cg) {
                    return Err(HostError::NoSuchCgroup(cg));
                }
                self.next_pid += 1;
                let proc = SimProcess {
                    pid,
                    tgid: pid,
                    cgroup: cg,
                    comm: comm.to_string(),
                    exe_digest,
                    verified_as: None,
                    cap_net_raw: false,
                    pending_exec: true,
                };
                let app = state.binding(cg).unwrap_or(0);
                exec_events.emit(AuditEvent::exec_event(pid, comm, cg, app, now));
                self.procs.insert(pid, proc);
                if self.exec_delivery == ExecDelivery::Immediate {
                    self.verify_exec(pid, state)?;
                }
                Ok(pid)
            }
            None => {
                let parent_pid = parent.ok_or(HostError::NoSuchProcess(0))?;
                let parent_proc =
                    self.procs.get(&parent_pid).ok_or(HostError::NoSuchProcess(parent_pid))?.clone();
                self.next_pid += 1;
                let proc = SimProcess {
                    pid,
                    tgid: pid,
                    cgroup: parent_proc.cgroup,
                    comm: parent_proc.comm.clone(),
                    exe_digest: parent_proc.exe_digest,
                    verified_as: parent_proc.verified_as,
                    cap_net_raw: parent_proc.cap_net_raw,
                    pending_exec: false,
                };
                // Fork keeps the parent's image, so the verification carries
                // over to the child's thread group.
                if let Some(app) = parent_proc.verified_as {
                    state.set_task_verified(pid, app);
                }
                self.procs.insert(pid, proc);
                Ok(pid)
            }
        }
    }

    pub fn grant_cap_net_raw(&mut self, pid: u64) -> Result<(), HostError> {
        let proc = self.procs.get_mut(&pid).ok_or(HostError::NoSuchProcess(pid))?;
        proc.cap_net_raw = true;
        Ok(())
    }

    /// Replaces the process image: the prior verification is invalidated
    /// and an exec event is emitted for the verifier.
    pub fn exec_image(
        &mut self,
        pid: u64,
        comm: &str,
        exe_digest: Digest,
        state: &mut DataPlaneState,
        exec_events: &mut EventBuffer,
        now: SimTime,
    ) -> Result<(), HostError> {
        let proc = self.procs.get_mut(&pid).ok_or(HostError::NoSuchProcess(pid))?;
        proc.comm = comm.to_string();
        proc.exe_digest = exe_digest;
        proc.verified_as = None;
        proc.pending_exec = true;
        let tgid = proc.tgid;
        let cgroup = proc.cgroup;
        state.clear_task_verified(tgid);
        let app = state.binding(cgroup).unwrap_or(0);
        exec_events.emit(AuditEvent::exec_event(pid, comm, cgroup, app, now));
        if self.exec_delivery == ExecDelivery::Immediate {
            self.verify_exec(pid, state)?;
        }
        Ok(())
    }

    /// The verifier half of the exec-hash gate: resolves the process's
    /// principal, compares the image digest against the declared hash, and
    /// marks the thread group verified on match. Principals without a
    /// declared hash skip the gate entirely. Without a pending exec event
    /// this is a no-op.
    pub fn verify_exec(&mut self, pid: u64, state: &mut DataPlaneState) -> Result<(), HostError> {
        let proc = self.procs.get_mut(&pid).ok_or(HostError::NoSuchProcess(pid))?;
        if !proc.pending_exec {
            return Ok(());
        }
        proc.pending_exec = false;
        let Some(app) = state.binding(proc.cgroup) else {
            return Ok(());
        };
        let Some(expected) = state.exec_hash(app) else {
            return Ok(());
        };
        if proc.exe_digest == expected {
            proc.verified_as = Some(app);
            state.set_task_verified(proc.tgid, app);
        } else {
            proc.verified_as = None;
            state.clear_task_verified(proc.tgid);
        }
        Ok(())
    }

    /// Moves a live process between cgroups. Unprivileged actors may only
    /// target delegated cgroups.
    pub fn migrate(&mut self, actor: Actor, pid: u64, target: u64) -> Result<(), HostError> {
        let node = self.cgroups.get(&target).ok_or(HostError::NoSuchCgroup(target))?;
        if actor == Actor::Unprivileged && !node.delegated {
            return Err(HostError::UnauthorizedMigration);
        }
        let proc = self.procs.get_mut(&pid).ok_or(HostError::NoSuchProcess(pid))?;
        proc.cgroup = target;
        Ok(())
    }

    pub fn exit(&mut self, pid: u64, state: &mut DataPlaneState) -> Result<(), HostError> {
        let proc = self.procs.remove(&pid).ok_or(HostError::NoSuchProcess(pid))?;
        state.clear_task_verified(proc.tgid);
        self.sockets.retain(|_, s| s.pid != pid);
        Ok(())
    }

    fn program_stack(&self, cgroup: u64) -> Vec<(u64, Program, AttachFlag)> {
        let mut chain = Vec::new();
        let mut cursor = Some(cgroup);
        while let Some(id) = cursor {
            let Some(node) = self.cgroups.get(&id) else { break };
            chain.push(node);
            cursor = node.parent;
        }
        // Ancestor first; attach order within a node.
        let mut stack = Vec::new();
        for node in chain.iter().rev() {
            for (prog, flag) in &node.programs {
                stack.push((node.id, prog.clone(), *flag));
            }
        }
        stack
    }

    fn evaluate_program(
        &self,
        program: &Program,
        proc: &SimProcess,
        syscall: Syscall,
        dst: &Destination,
        state: &DataPlaneState,
    ) -> Verdict {
        match program {
            Program::Enforce => match self.mode {
                // Client hooks in tag mode never deny; the verdict moves to
                // the gateway.
                EnforcementMode::Tag => Verdict::from_reason(Reason::External),
                EnforcementMode::Enforce => match syscall {
                    Syscall::Connect | Syscall::SendMsg(None) => {
                        state.decide(proc.cgroup, proc.tgid, dst)
                    }
                    Syscall::SendMsg(Some(socket)) => {
                        let epoch = self.sockets.get(&socket).map(|s| s.epoch).unwrap_or(0);
                        if self.revocation.udp_epoch_check {
                            state.decide_send(proc.cgroup, proc.tgid, dst, epoch)
                        } else {
                            state.decide(proc.cgroup, proc.tgid, dst)
                        }
                    }
                },
            },
            other => other.evaluate_filter(dst),
        }
    }

    /// Mediates one connect()/sendmsg(). Exactly one stack evaluation per
    /// call; a deny short-circuits with EPERM semantics (no packet, no
    /// socket) and emits exactly one audit event. An allowed connect or
    /// first send creates a socket stamped with the current epoch (and, in
    /// tag mode, the principal's mark).
    pub fn mediate(
        &mut self,
        pid: u64,
        syscall: Syscall,
        dst: &Destination,
        state: &DataPlaneState,
        deny_events: &mut EventBuffer,
        now: SimTime,
    ) -> Result<MediationOutcome, HostError> {
        let proc = self.procs.get(&pid).ok_or(HostError::NoSuchProcess(pid))?.clone();
        self.counters.evaluations += 1;

        let stack = self.program_stack(proc.cgroup);
        let mut composed: Option<Verdict> = None;
        for (_, program, flag) in &stack {
            let v = self.evaluate_program(program, &proc, syscall, dst, state);
            composed = Some(match (composed, flag) {
                (None, _) => v,
                (Some(_), AttachFlag::AllowOverride) => v,
                (Some(acc), AttachFlag::AllowMulti) => {
                    if acc.is_deny() {
                        acc
                    } else if v.is_deny() {
                        v
                    } else if acc.reason == Reason::GrantMatch || v.reason == Reason::GrantMatch {
                        Verdict::from_reason(Reason::GrantMatch)
                    } else {
                        acc
                    }
                }
            });
        }
        // Empty stack: process outside the mediated subtree, default allow.
        let verdict = composed.unwrap_or(Verdict::from_reason(Reason::External));

        if verdict.is_deny() {
            self.counters.denies += 1;
            let app = state.binding(proc.cgroup).unwrap_or(0);
            deny_events.emit(AuditEvent::deny(
                pid,
                &proc.comm,
                proc.cgroup,
                app,
                dst.ip,
                dst.port,
                dst.proto,
                now,
                verdict.reason,
            ));
            return Ok(MediationOutcome { verdict, socket: None });
        }

        self.counters.allows += 1;
        let socket = match syscall {
            Syscall::Connect | Syscall::SendMsg(None) => {
                let id = self.next_socket;
                self.next_socket += 1;
                let proto = dst.proto;
                let mark = if self.mode == EnforcementMode::Tag {
                    state.binding(proc.cgroup).unwrap_or(0)
                } else {
                    0
                };
                self.sockets.insert(
                    id,
                    Socket {
                        id,
                        pid,
                        dst: *dst,
                        proto,
                        epoch: state.epoch(),
                        established: proto == Proto::Tcp,
                        mark,
                    },
                );
                Some(id)
            }
            Syscall::SendMsg(Some(_)) => None,
        };
        Ok(MediationOutcome { verdict, socket })
    }

    /// Raw sockets bypass the socket-address hooks entirely, so the
    /// simulator only admits them for processes holding CAP_NET_RAW.
    pub fn raw_send(&self, pid: u64) -> Result<(), HostError> {
        let proc = self.procs.get(&pid).ok_or(HostError::NoSuchProcess(pid))?;
        if proc.cap_net_raw {
            Ok(())
        } else {
            Err(HostError::RawSocketDenied)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Grant, NormalizationMode, PolicyInstance, PortRange, Principal, ProtoSel};
    use crate::update::PolicySnapshot;

    fn dst(s: &str, proto: Proto, port: u16) -> Destination {
        Destination::new(s.parse().unwrap(), proto, port)
    }

    fn grant(prefix: &str, proto: ProtoSel, lo: u16, hi: u16) -> Grant {
        Grant::new(prefix.parse().unwrap(), proto, PortRange::new(lo, hi).unwrap())
    }

    struct Fixture {
        host: SimHost,
        state: DataPlaneState,
        deny: EventBuffer,
        exec: EventBuffer,
        app_cgroup: u64,
    }

    fn fixture(principal_hash: Option<Digest>) -> Fixture {
        let mut host = SimHost::new(EnforcementMode::Enforce);
        let app_cgroup = host.create_cgroup(Actor::Controller, ROOT_CGROUP, false).unwrap();
        host.attach_program(ROOT_CGROUP, Program::Enforce, AttachFlag::AllowMulti).unwrap();

        let mut principal = Principal::new("app", 1);
        if let Some(d) = principal_hash {
            principal = principal.with_exec_hash(d);
        }
        let policy = PolicyInstance::new(
            vec!["10.0.0.0/8".parse().unwrap()],
            vec![principal],
            vec![("app".into(), vec![grant("10.0.0.0/24", ProtoSel::Any, 0, 0)])],
            vec![],
            NormalizationMode::Strict,
        )
        .unwrap();
        let snapshot = PolicySnapshot::new(policy, [(app_cgroup, 1)].into_iter().collect());
        let state = DataPlaneState::install(&snapshot);
        Fixture { host, state, deny: EventBuffer::default(), exec: EventBuffer::default(), app_cgroup }
    }

    fn connect(fx: &mut Fixture, pid: u64, d: &Destination) -> Verdict {
        fx.host
            .mediate(pid, Syscall::Connect, d, &fx.state, &mut fx.deny, SimTime::ZERO)
            .unwrap()
            .verdict
    }

    #[test]
    fn fork_child_keeps_parent_principal() {
        let mut fx = fixture(None);
        let parent = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(fx.app_cgroup),
                "app",
                Digest::from_label("app"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        let child = fx
            .host
            .spawn(
                Actor::Unprivileged,
                Some(parent),
                None,
                "",
                Digest::from_label(""),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        let d = dst("10.0.0.5", Proto::Tcp, 443);
        assert!(connect(&mut fx, parent, &d).is_allow());
        assert!(connect(&mut fx, child, &d).is_allow());
    }

    #[test]
    fn exec_gate_denies_until_verified() {
        let mut fx = fixture(Some(Digest::from_label("trusted")));
        fx.host.exec_delivery = ExecDelivery::Manual;
        let pid = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(fx.app_cgroup),
                "app",
                Digest::from_label("trusted"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        let d = dst("10.0.0.5", Proto::Tcp, 443);
        // Verification has not run yet.
        assert_eq!(connect(&mut fx, pid, &d).reason, Reason::HashUnverified);
        fx.host.verify_exec(pid, &mut fx.state).unwrap();
        assert!(connect(&mut fx, pid, &d).is_allow());
    }

    #[test]
    fn mismatched_digest_stays_denied() {
        let mut fx = fixture(Some(Digest::from_label("trusted")));
        let pid = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(fx.app_cgroup),
                "imposter",
                Digest::from_label("imposter"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        let d = dst("10.0.0.5", Proto::Tcp, 443);
        assert_eq!(connect(&mut fx, pid, &d).reason, Reason::HashUnverified);
        // Re-running the verifier cannot help a wrong image.
        fx.host.verify_exec(pid, &mut fx.state).unwrap();
        assert_eq!(connect(&mut fx, pid, &d).reason, Reason::HashUnverified);
    }

    #[test]
    fn exec_invalidates_prior_verification() {
        let mut fx = fixture(Some(Digest::from_label("trusted")));
        let pid = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(fx.app_cgroup),
                "app",
                Digest::from_label("trusted"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        let d = dst("10.0.0.5", Proto::Tcp, 443);
        assert!(connect(&mut fx, pid, &d).is_allow());

        fx.host.exec_delivery = ExecDelivery::Manual;
        fx.host
            .exec_image(pid, "other", Digest::from_label("other"), &mut fx.state, &mut fx.exec, SimTime::ZERO)
            .unwrap();
        assert_eq!(connect(&mut fx, pid, &d).reason, Reason::HashUnverified);
    }

    #[test]
    fn principal_without_hash_skips_gate() {
        let mut fx = fixture(None);
        let pid = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(fx.app_cgroup),
                "app",
                Digest::from_label("anything"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        assert!(connect(&mut fx, pid, &dst("10.0.0.5", Proto::Tcp, 443)).is_allow());
    }

    #[test]
    fn adversary_cannot_clone_into_cgroup() {
        let mut fx = fixture(None);
        let err = fx
            .host
            .spawn(
                Actor::Unprivileged,
                None,
                Some(fx.app_cgroup),
                "evil",
                Digest::from_label("evil"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap_err();
        assert_eq!(err, HostError::UnauthorizedMigration);
    }

    #[test]
    fn adversary_cannot_migrate_into_bound_cgroup() {
        let mut fx = fixture(None);
        let outside = fx.host.create_cgroup(Actor::Controller, ROOT_CGROUP, true).unwrap();
        let pid = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(outside),
                "mal",
                Digest::from_label("mal"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        let err = fx.host.migrate(Actor::Unprivileged, pid, fx.app_cgroup).unwrap_err();
        assert_eq!(err, HostError::UnauthorizedMigration);
        // The process stays unbound and internally denied.
        let v = connect(&mut fx, pid, &dst("10.0.0.5", Proto::Tcp, 22));
        assert_eq!(v.reason, Reason::NoBinding);
    }

    #[test]
    fn descendant_program_narrows_allow_set() {
        let mut fx = fixture(None);
        let child_cg = fx.host.create_cgroup(Actor::Controller, fx.app_cgroup, false).unwrap();
        // Binding is an exact cgroup-id lookup; the controller binds the
        // child cgroup it places processes into.
        fx.state.apply(&crate::update::MapOp::InsertBinding { cgroup: child_cg, app: 1 });
        fx.host.attach_program(child_cg, Program::DenyPort(22), AttachFlag::AllowMulti).unwrap();
        let pid = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(child_cg),
                "app",
                Digest::from_label("app"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        assert!(connect(&mut fx, pid, &dst("10.0.0.5", Proto::Tcp, 443)).is_allow());
        assert!(connect(&mut fx, pid, &dst("10.0.0.5", Proto::Tcp, 22)).is_deny());
        // External port 22 is also narrowed by the descendant filter, while
        // other external traffic passes.
        assert!(connect(&mut fx, pid, &dst("1.1.1.1", Proto::Tcp, 22)).is_deny());
        assert!(connect(&mut fx, pid, &dst("1.1.1.1", Proto::Tcp, 443)).is_allow());
    }

    #[test]
    fn empty_stack_defaults_to_allow() {
        let mut fx = fixture(None);
        let mut bare = SimHost::new(EnforcementMode::Enforce);
        let pid = bare
            .spawn(
                Actor::Controller,
                None,
                Some(ROOT_CGROUP),
                "loose",
                Digest::from_label("loose"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        let out = bare
            .mediate(pid, Syscall::Connect, &dst("10.0.0.5", Proto::Tcp, 22), &fx.state, &mut fx.deny, SimTime::ZERO)
            .unwrap();
        assert!(out.verdict.is_allow());
    }

    #[test]
    fn every_deny_emits_exactly_one_event() {
        let mut fx = fixture(None);
        let pid = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(ROOT_CGROUP),
                "mal",
                Digest::from_label("mal"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        for port in [22, 443, 3389] {
            connect(&mut fx, pid, &dst("10.0.0.5", Proto::Tcp, port));
        }
        connect(&mut fx, pid, &dst("1.1.1.1", Proto::Tcp, 443));
        assert_eq!(fx.host.counters().denies, 3);
        assert_eq!(fx.deny.len(), 3);
        assert_eq!(fx.host.counters().evaluations, 4);
    }

    #[test]
    fn raw_send_requires_capability() {
        let mut fx = fixture(None);
        let pid = fx
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(ROOT_CGROUP),
                "raw",
                Digest::from_label("raw"),
                &mut fx.state,
                &mut fx.exec,
                SimTime::ZERO,
            )
            .unwrap();
        assert_eq!(fx.host.raw_send(pid).unwrap_err(), HostError::RawSocketDenied);
        fx.host.grant_cap_net_raw(pid).unwrap();
        assert!(fx.host.raw_send(pid).is_ok());
    }

    #[test]
    fn override_attachment_is_flagged() {
        let mut fx = fixture(None);
        assert!(!fx.host.override_attached());
        fx.host.attach_program(fx.app_cgroup, Program::AllowAll, AttachFlag::AllowOverride).unwrap();
        assert!(fx.host.override_attached());
    }
}
