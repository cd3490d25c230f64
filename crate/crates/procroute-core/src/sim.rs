//! Deterministic single-host simulation: one endpoint, its data-plane
//! maps, an optional gateway, the two event streams, and a millisecond
//! clock. Tests and scenarios drive it through explicit method calls, so
//! every run is a totally ordered event sequence.

use std::net::IpAddr;

use crate::audit::EventBuffer;
use crate::gateway::{
    encode_tag, gateway_ingress, GatewayConfig, GatewayState, IngressOutcome, SimPacket, TagError,
};
use crate::host::{
    Actor, AttachFlag, EnforcementMode, HostError, MediationOutcome, Program, SimHost, Syscall,
    ROOT_CGROUP,
};
use crate::policy::Destination;
use crate::time::{SimDuration, SimTime};
use crate::update::{
    plan_update, sweeper_tick, DataPlaneState, MapOp, PolicySnapshot, UpdatePlan,
};

/// One endpoint plus its enforcement state. The clock only moves through
/// [`Simulation::advance`], which also runs the revocation sweeper at its
/// configured interval.
#[derive(Debug)]
pub struct Simulation {
    pub host: SimHost,
    pub state: DataPlaneState,
    pub snapshot: PolicySnapshot,
    pub gateway: Option<GatewayState>,
    /// Deny and gateway-drop events share one stream; exec events have
    /// their own, mirroring the two ring buffers of the enforcement layer.
    pub deny_events: EventBuffer,
    pub exec_events: EventBuffer,
    pub clock: SimTime,
    /// Tunnel address this endpoint sources packets from in split mode.
    pub tunnel_ip: Option<IpAddr>,
    last_sweep: SimTime,
}

impl Simulation {
    /// Installs the snapshot and attaches the enforcement program at the
    /// root cgroup, covering the whole subtree.
    pub fn new(snapshot: PolicySnapshot, mode: EnforcementMode) -> Self {
        let state = DataPlaneState::install(&snapshot);
        let mut host = SimHost::new(mode);
        host.attach_program(ROOT_CGROUP, Program::Enforce, AttachFlag::AllowMulti)
            .expect("root cgroup exists");
        Simulation {
            host,
            state,
            snapshot,
            gateway: None,
            deny_events: EventBuffer::default(),
            exec_events: EventBuffer::default(),
            clock: SimTime::ZERO,
            tunnel_ip: None,
            last_sweep: SimTime::ZERO,
        }
    }

    pub fn with_gateway(mut self, config: GatewayConfig, tunnel_ip: IpAddr) -> Self {
        self.gateway = Some(GatewayState::install(&self.snapshot.policy, config));
        self.tunnel_ip = Some(tunnel_ip);
        self
    }

    pub fn connect(&mut self, pid: u64, dst: &Destination) -> Result<MediationOutcome, HostError> {
        let now = self.clock;
        self.host.mediate(pid, Syscall::Connect, dst, &self.state, &mut self.deny_events, now)
    }

    pub fn sendmsg(
        &mut self,
        pid: u64,
        socket: Option<u64>,
        dst: &Destination,
    ) -> Result<MediationOutcome, HostError> {
        let now = self.clock;
        self.host.mediate(pid, Syscall::SendMsg(socket), dst, &self.state, &mut self.deny_events, now)
    }

    /// Binds a cgroup to a principal index, in the live maps and in the
    /// deployed snapshot.
    pub fn bind(&mut self, cgroup: u64, app: u32) {
        self.state.apply(&MapOp::InsertBinding { cgroup, app });
        self.snapshot.bindings.insert(cgroup, app);
    }

    pub fn unbind(&mut self, cgroup: u64) {
        self.state.apply(&MapOp::DeleteBinding { cgroup });
        self.snapshot.bindings.remove(&cgroup);
    }

    /// Plans and applies a transition to a new snapshot with the
    /// fail-closed ordering, refreshing the gateway maps and forwarding
    /// the epoch bump to the gateway when the plan shrank anything.
    pub fn apply_update(&mut self, new: PolicySnapshot) -> UpdatePlan {
        let plan = plan_update(&self.snapshot, &new);
        plan.apply_all(&mut self.state);
        if let Some(gw) = &mut self.gateway {
            gw.reinstall_policy(&new.policy);
            if plan.bump_epoch {
                gw.bump_epoch();
            }
        }
        self.snapshot = new;
        plan
    }

    /// Manual epoch bump on both enforcement points.
    pub fn bump_epoch(&mut self) {
        self.state.bump_epoch();
        if let Some(gw) = &mut self.gateway {
            gw.bump_epoch();
        }
    }

    /// Advances the clock, running the sweeper at every interval boundary
    /// crossed. Returns the sockets terminated along the way.
    pub fn advance(&mut self, d: SimDuration) -> Vec<u64> {
        let target = self.clock + d;
        let interval = self.host.revocation.sweep_interval;
        let mut swept = Vec::new();
        loop {
            let next = self.last_sweep + interval;
            if next > target {
                break;
            }
            self.last_sweep = next;
            self.clock = next;
            swept.extend(sweeper_tick(&mut self.host, &self.state));
        }
        self.clock = target;
        swept
    }

    /// Builds the tagged tunnel packet a socket's traffic would carry:
    /// mark from the socket (stamped at connect time), epoch from the
    /// current counter.
    pub fn client_packet(&self, socket_id: u64, src_port: u16) -> Result<SimPacket, TagError> {
        let socket = self.host.socket(socket_id).expect("socket exists");
        let src = self.tunnel_ip.expect("tunnel address configured");
        let pkt = SimPacket::new(src, src_port, socket.dst);
        encode_tag(pkt, socket.mark, self.state.epoch())
    }

    /// Runs the gateway ingress pipeline against this simulation's
    /// internal set and clock. Drops land in the shared deny stream.
    pub fn ingress(&mut self, pkt: &SimPacket) -> IngressOutcome {
        let gw = self.gateway.as_mut().expect("gateway configured");
        let internal: Vec<_> = self.snapshot.policy.internal().to_vec();
        gateway_ingress(gw, pkt, &internal, self.clock, &mut self.deny_events)
    }

    /// Convenience for scenarios: a process placed by the controller into
    /// a fresh unbound cgroup under the root.
    pub fn spawn_unbound(&mut self, comm: &str) -> (u64, u64) {
        let cg = self
            .host
            .create_cgroup(Actor::Controller, ROOT_CGROUP, false)
            .expect("root exists");
        let now = self.clock;
        let pid = self
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(cg),
                comm,
                crate::policy::Digest::from_label(comm),
                &mut self.state,
                &mut self.exec_events,
                now,
            )
            .expect("spawn");
        (pid, cg)
    }

    /// A process placed into a fresh cgroup bound to `app`.
    pub fn spawn_bound(&mut self, comm: &str, app: u32) -> (u64, u64) {
        let cg = self
            .host
            .create_cgroup(Actor::Controller, ROOT_CGROUP, false)
            .expect("root exists");
        self.bind(cg, app);
        let now = self.clock;
        let pid = self
            .host
            .spawn(
                Actor::Controller,
                None,
                Some(cg),
                comm,
                crate::policy::Digest::from_label(comm),
                &mut self.state,
                &mut self.exec_events,
                now,
            )
            .expect("spawn");
        (pid, cg)
    }
}
