//! Built-in scenarios reproducing the desk-scale experiments: pivot
//! prevention, update safety, revocation, flow-cache effectiveness, and
//! composition monotonicity. Each returns a typed outcome plus a plain
//! text report with a stable key/value layout; identical inputs and seed
//! render byte-identical reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::IpAddr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audit::EventKind;
use crate::gateway::{encode_tag, gateway_ingress, GatewayConfig, GatewayState, SimPacket};
use crate::host::{Actor, AttachFlag, EnforcementMode, Program, Syscall, ROOT_CGROUP};
use crate::policy::{
    decide_local, Cidr, Destination, Grant, NormalizationMode, PolicyInstance, PortRange,
    Principal, Proto, ProtoSel, Reason,
};
use crate::sim::Simulation;
use crate::time::SimTime;
use crate::update::{
    explore_interleavings, plan_flush_reload, plan_update, DataPlaneState, ExploreBudget,
    ExploreOptions, PlanModel, PolicySnapshot, Probe,
};

/// Plain-text scenario report: ordered key/value lines, a one-line
/// summary, and the pass verdict.
#[derive(Debug, Clone)]
pub struct Report {
    pub scenario: &'static str,
    pub lines: Vec<(String, String)>,
    pub summary: String,
    pub pass: bool,
}

impl Report {
    pub fn new(scenario: &'static str) -> Self {
        Report { scenario, lines: Vec::new(), summary: String::new(), pass: false }
    }

    pub fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "scenario: {}", self.scenario).unwrap();
        for (k, v) in &self.lines {
            writeln!(out, "{k}: {v}").unwrap();
        }
        writeln!(out, "summary: {}", self.summary).unwrap();
        writeln!(out, "result: {}", if self.pass { "pass" } else { "fail" }).unwrap();
        out
    }
}

fn ip(s: &str) -> IpAddr {
    s.parse().expect("literal address")
}

fn cidr(s: &str) -> Cidr {
    s.parse().expect("literal prefix")
}

fn grant(prefix: &str, proto: ProtoSel, lo: u16, hi: u16) -> Grant {
    Grant::new(cidr(prefix), proto, PortRange::new(lo, hi).expect("literal range"))
}

fn tcp(s: &str, port: u16) -> Destination {
    Destination::new(ip(s), Proto::Tcp, port)
}

fn udp(s: &str, port: u16) -> Destination {
    Destination::new(ip(s), Proto::Udp, port)
}

// ---------------------------------------------------------------------------
// Pivot prevention
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct PivotOutcome {
    pub internal_attempts: usize,
    pub internal_denied: usize,
    pub audit_events: usize,
    pub external_attempts: usize,
    pub external_allowed: usize,
    /// Drained deny-event stream, one JSON object per line.
    pub audit_jsonl: String,
    pub report: Report,
}

/// The 82-attempt lateral-movement matrix: six service categories across
/// three internal subnets, issued by a process with no principal binding,
/// plus a companion set of external targets that must stay reachable.
pub fn pivot_matrix() -> Vec<Destination> {
    let mut matrix = Vec::with_capacity(82);
    // SSH: 30 attempts across 10.0.0.0/24 and 10.250.0.0/24.
    for i in 0..15 {
        matrix.push(tcp(&format!("10.0.0.{}", 10 + i), 22));
        matrix.push(tcp(&format!("10.250.0.{}", 10 + i), 22));
    }
    // HTTPS: 20 attempts.
    for i in 0..20 {
        matrix.push(tcp(&format!("10.0.0.{}", 30 + i), 443));
    }
    // RDP: 10 attempts.
    for i in 0..10 {
        matrix.push(tcp(&format!("10.0.0.{}", 50 + i), 3389));
    }
    // PostgreSQL: 10 attempts across 10.0.0.0/24 and 10.0.1.0/24.
    for i in 0..5 {
        matrix.push(tcp(&format!("10.0.0.{}", 60 + i), 5432));
        matrix.push(tcp(&format!("10.0.1.{}", 10 + i), 5432));
    }
    // Alternate HTTP: 10 attempts.
    for i in 0..10 {
        matrix.push(tcp(&format!("10.0.0.{}", 70 + i), 8080));
    }
    // Internal DNS: 2 UDP attempts.
    matrix.push(udp("10.0.0.53", 53));
    matrix.push(udp("10.0.1.53", 53));
    debug_assert_eq!(matrix.len(), 82);
    matrix
}

fn external_targets() -> Vec<Destination> {
    [
        "1.1.1.1", "8.8.8.8", "9.9.9.9", "93.184.216.34", "151.101.1.140", "140.82.112.3",
        "13.107.42.14", "52.84.0.1", "104.16.0.1", "172.217.0.1", "199.232.0.1", "23.185.0.1",
    ]
    .iter()
    .map(|s| tcp(s, 443))
    .collect()
}

fn pivot_policy() -> PolicySnapshot {
    let policy = PolicyInstance::new(
        vec![cidr("10.0.0.0/8")],
        vec![Principal::new("browser", 1)],
        vec![("browser".into(), vec![grant("10.0.0.0/24", ProtoSel::Tcp, 443, 443)])],
        vec![],
        NormalizationMode::Strict,
    )
    .expect("pivot policy");
    PolicySnapshot::new(policy, BTreeMap::new())
}

pub fn run_pivot(seed: u64) -> PivotOutcome {
    let mut sim = Simulation::new(pivot_policy(), EnforcementMode::Enforce);
    let (pid, _) = sim.spawn_unbound("dropper");

    let matrix = pivot_matrix();
    let mut denied = 0usize;
    for d in &matrix {
        if sim.connect(pid, d).expect("mediation").verdict.is_deny() {
            denied += 1;
        }
    }

    let externals = external_targets();
    let mut external_allowed = 0usize;
    for d in &externals {
        if sim.connect(pid, d).expect("mediation").verdict.is_allow() {
            external_allowed += 1;
        }
    }

    let audit_events = sim.deny_events.iter().filter(|e| e.kind == EventKind::Deny).count();
    let mut sink = Vec::new();
    sim.deny_events.drain(&mut sink).expect("in-memory sink");
    let audit_jsonl = String::from_utf8(sink).expect("utf8 audit lines");

    let mut report = Report::new("pivot");
    report.line("seed", seed);
    report.line("internal_attempts", matrix.len());
    report.line("internal_denied", denied);
    report.line("audit_events", audit_events);
    report.line("external_attempts", externals.len());
    report.line("external_allowed", external_allowed);
    report.pass = denied == matrix.len()
        && audit_events == matrix.len()
        && external_allowed == externals.len();
    report.summary = format!(
        "{denied}/{} denied, {audit_events} audit events, externals allowed",
        matrix.len()
    );

    PivotOutcome {
        internal_attempts: matrix.len(),
        internal_denied: denied,
        audit_events,
        external_attempts: externals.len(),
        external_allowed,
        audit_jsonl,
        report,
    }
}

// ---------------------------------------------------------------------------
// Update safety
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct UpdateSafetyOptions {
    pub model: PlanModel,
    pub probe_target: u64,
    pub seed: u64,
}

impl Default for UpdateSafetyOptions {
    fn default() -> Self {
        UpdateSafetyOptions { model: PlanModel::FailClosed, probe_target: 1_000_000, seed: 42 }
    }
}

#[derive(Debug)]
pub struct UpdateSafetyOutcome {
    pub model: PlanModel,
    pub op_count: usize,
    pub schedules: u32,
    pub probe_evaluations: u64,
    pub violations: u64,
    pub report: Report,
}

/// The reload-cycle policy pair: five principals, one losing a grant, one
/// narrowing, one removed with its cgroup rebound, one added.
pub fn reload_pair() -> (PolicySnapshot, PolicySnapshot) {
    let internal = vec![cidr("10.0.0.0/8"), cidr("172.16.0.0/12")];

    let old_policy = PolicyInstance::new(
        internal.clone(),
        vec![
            Principal::new("browser", 1),
            Principal::new("mail", 2),
            Principal::new("db", 3),
            Principal::new("monitor", 4),
            Principal::new("ops", 5),
        ],
        vec![
            ("browser".into(), vec![grant("10.0.0.0/24", ProtoSel::Tcp, 443, 443)]),
            (
                "mail".into(),
                vec![
                    grant("10.0.1.0/24", ProtoSel::Tcp, 25, 25),
                    grant("10.0.2.0/24", ProtoSel::Tcp, 993, 993),
                ],
            ),
            ("db".into(), vec![grant("10.1.0.0/16", ProtoSel::Tcp, 5432, 5432)]),
            ("monitor".into(), vec![grant("10.2.0.0/16", ProtoSel::Any, 0, 0)]),
            ("ops".into(), vec![grant("10.250.0.0/24", ProtoSel::Tcp, 22, 22)]),
        ],
        vec![],
        NormalizationMode::Strict,
    )
    .expect("old policy");
    let old_bindings: BTreeMap<u64, u32> =
        [(101, 1), (102, 2), (103, 3), (104, 4), (105, 5)].into_iter().collect();

    let new_policy = PolicyInstance::new(
        internal,
        vec![
            Principal::new("browser", 1),
            Principal::new("mail", 2),
            Principal::new("db", 3),
            Principal::new("ops", 5),
            Principal::new("backup", 6),
        ],
        vec![
            (
                "browser".into(),
                vec![
                    grant("10.0.0.0/24", ProtoSel::Tcp, 443, 443),
                    grant("10.3.0.0/24", ProtoSel::Tcp, 443, 443),
                ],
            ),
            ("mail".into(), vec![grant("10.0.1.0/24", ProtoSel::Tcp, 25, 25)]),
            ("db".into(), vec![grant("10.1.5.0/24", ProtoSel::Tcp, 5432, 5432)]),
            ("ops".into(), vec![grant("10.250.0.0/24", ProtoSel::Tcp, 22, 22)]),
            ("backup".into(), vec![grant("172.16.0.0/24", ProtoSel::Tcp, 873, 873)]),
        ],
        vec![],
        NormalizationMode::Strict,
    )
    .expect("new policy");
    let new_bindings: BTreeMap<u64, u32> =
        [(101, 1), (102, 2), (103, 3), (104, 1), (105, 5), (106, 6)].into_iter().collect();

    (
        PolicySnapshot::new(old_policy, old_bindings),
        PolicySnapshot::new(new_policy, new_bindings),
    )
}

/// Probe panel for the reload pair: every deployed cgroup plus an unbound
/// one, against destinations drawn from kept, removed, added, never
/// granted, and external space.
pub fn reload_probes() -> Vec<Probe> {
    let dsts = [
        tcp("10.0.0.9", 443),
        tcp("10.0.0.9", 80),
        tcp("10.0.1.9", 25),
        tcp("10.0.2.9", 993),
        tcp("10.1.0.9", 5432),
        tcp("10.1.5.9", 5432),
        tcp("10.2.3.4", 80),
        udp("10.2.3.4", 53),
        tcp("10.250.0.9", 22),
        tcp("10.250.0.9", 23),
        tcp("10.3.0.9", 443),
        tcp("172.16.0.9", 873),
        tcp("10.9.9.9", 443),
        udp("10.0.0.53", 53),
        tcp("1.1.1.1", 443),
        udp("8.8.8.8", 53),
    ];
    let cgroups = [101u64, 102, 103, 104, 105, 106, 999];
    let mut probes = Vec::with_capacity(dsts.len() * cgroups.len());
    for cg in cgroups {
        for d in dsts {
            probes.push(Probe { cgroup_id: cg, dst: d });
        }
    }
    probes
}

pub fn run_update_safety(opts: UpdateSafetyOptions) -> UpdateSafetyOutcome {
    let (old, new) = reload_pair();
    let plan = match opts.model {
        PlanModel::FailClosed => plan_update(&old, &new),
        PlanModel::FlushReload => plan_flush_reload(&old, &new),
        PlanModel::Reversed => crate::update::plan_reversed(&old, &new),
    };
    let probes = reload_probes();

    let states_per_schedule = (plan.op_count() + 1) as u64;
    let evals_per_schedule = states_per_schedule * probes.len() as u64;
    let schedules = opts.probe_target.div_ceil(evals_per_schedule).max(1) as u32;

    let explored = explore_interleavings(
        &old,
        &new,
        &plan,
        &probes,
        ExploreOptions { budget: ExploreBudget::Randomized { schedules }, seed: opts.seed },
    );

    let expectation_met = match opts.model {
        PlanModel::FailClosed => explored.violation_count == 0,
        PlanModel::FlushReload | PlanModel::Reversed => explored.violation_count > 0,
    };

    let model_name = match opts.model {
        PlanModel::FailClosed => "fail-closed",
        PlanModel::FlushReload => "flush-reload",
        PlanModel::Reversed => "reversed",
    };

    let mut report = Report::new("update-safety");
    report.line("seed", opts.seed);
    report.line("model", model_name);
    report.line("plan_ops", plan.op_count());
    report.line("fail_closed_ordering", plan.satisfies_fail_closed_ordering());
    report.line("schedules", schedules);
    report.line("states_explored", explored.states_explored);
    report.line("probes", probes.len());
    report.line("probe_evaluations", explored.probe_evaluations);
    report.line("violations", explored.violation_count);
    report.pass = expectation_met && explored.probe_evaluations >= opts.probe_target;
    report.summary = match opts.model {
        PlanModel::FailClosed => format!(
            "violations: {} across {} probe evaluations",
            explored.violation_count, explored.probe_evaluations
        ),
        _ => format!(
            "violations: {} (transient-allow window demonstrated)",
            explored.violation_count
        ),
    };

    UpdateSafetyOutcome {
        model: opts.model,
        op_count: plan.op_count(),
        schedules,
        probe_evaluations: explored.probe_evaluations,
        violations: explored.violation_count,
        report,
    }
}

/// Seeded generator of small snapshot pairs for exhaustive interleaving
/// sweeps. Prefix pools are mutually disjoint so strict normalization
/// always succeeds; mutations cover grant add/remove, rebinding,
/// unbinding, and internal-set growth.
pub fn random_snapshot_pairs(count: usize, seed: u64) -> Vec<(PolicySnapshot, PolicySnapshot)> {
    let prefixes = [
        "10.0.0.0/24", "10.0.1.0/24", "10.0.2.0/24", "10.1.0.0/16", "10.2.0.0/16",
        "10.250.0.0/24", "192.168.5.0/24",
    ];
    let ports: [(u16, u16); 4] = [(0, 0), (443, 443), (22, 22), (1024, 2048)];
    let protos = [ProtoSel::Tcp, ProtoSel::Udp, ProtoSel::Any];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    while pairs.len() < count {
        let n_prin = rng.gen_range(1..=3usize);
        let mut principals = Vec::new();
        let mut grants_old: Vec<(String, Vec<Grant>)> = Vec::new();
        for i in 0..n_prin {
            let name = format!("p{}", i + 1);
            principals.push(Principal::new(name.clone(), (i + 1) as u32));
            let mut gs = Vec::new();
            let mut pool: Vec<&str> = prefixes.to_vec();
            pool.shuffle(&mut rng);
            for p in pool.iter().take(rng.gen_range(0..=2usize)) {
                let (lo, hi) = ports[rng.gen_range(0..ports.len())];
                gs.push(grant(p, protos[rng.gen_range(0..protos.len())], lo, hi));
            }
            grants_old.push((name, gs));
        }
        let old_policy = PolicyInstance::new(
            vec![cidr("10.0.0.0/8")],
            principals.clone(),
            grants_old.clone(),
            vec![],
            NormalizationMode::Strict,
        )
        .expect("disjoint pool");
        let mut bindings: BTreeMap<u64, u32> = BTreeMap::new();
        for i in 0..n_prin {
            if rng.gen_bool(0.8) {
                bindings.insert(10 + i as u64, (i + 1) as u32);
            }
        }
        let old = PolicySnapshot::new(old_policy, bindings.clone());

        let mut grants_new = grants_old.clone();
        let mut internal_new = vec![cidr("10.0.0.0/8")];
        for _ in 0..rng.gen_range(1..=3usize) {
            match rng.gen_range(0..5u8) {
                0 => {
                    let idx = rng.gen_range(0..grants_new.len());
                    grants_new[idx].1.pop();
                }
                1 => {
                    let idx = rng.gen_range(0..grants_new.len());
                    let p = prefixes[rng.gen_range(0..prefixes.len())];
                    let (lo, hi) = ports[rng.gen_range(0..ports.len())];
                    let g = grant(p, protos[rng.gen_range(0..protos.len())], lo, hi);
                    let list = &mut grants_new[idx].1;
                    list.retain(|e| !e.prefix.overlaps(&g.prefix));
                    list.push(g);
                }
                2 => {
                    if let Some(cg) = bindings.keys().next().copied() {
                        bindings.insert(cg, rng.gen_range(1..=n_prin as u32));
                    }
                }
                3 => {
                    if let Some(cg) = bindings.keys().next().copied() {
                        bindings.remove(&cg);
                    }
                }
                _ => {
                    internal_new = vec![cidr("10.0.0.0/8"), cidr("192.168.5.0/24")];
                }
            }
        }
        let new_policy = PolicyInstance::new(
            internal_new,
            principals,
            grants_new,
            vec![],
            NormalizationMode::Strict,
        )
        .expect("disjoint pool");
        let new = PolicySnapshot::new(new_policy, bindings);

        if plan_update(&old, &new).op_count() <= 12 {
            pairs.push((old, new));
        }
    }
    pairs
}

/// Probe panel for generated pairs: every binding seen on either side plus
/// an unbound cgroup, against one destination in each pool prefix.
pub fn pool_probes(old: &PolicySnapshot, new: &PolicySnapshot) -> Vec<Probe> {
    let dsts = [
        tcp("10.0.0.9", 443),
        tcp("10.0.1.9", 22),
        udp("10.0.2.9", 1500),
        tcp("10.1.7.9", 443),
        udp("10.2.7.9", 53),
        tcp("10.250.0.9", 22),
        tcp("192.168.5.9", 443),
        tcp("10.77.0.1", 443),
        tcp("1.1.1.1", 443),
    ];
    let mut cgroups: Vec<u64> = old.bindings.keys().chain(new.bindings.keys()).copied().collect();
    cgroups.push(999);
    cgroups.sort_unstable();
    cgroups.dedup();
    let mut probes = Vec::new();
    for cg in cgroups {
        for d in dsts {
            probes.push(Probe { cgroup_id: cg, dst: d });
        }
    }
    probes
}

// ---------------------------------------------------------------------------
// Revocation
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct RevocationOutcome {
    pub udp_attempts: usize,
    pub udp_denied_stale: usize,
    pub stale_revoked_sockets: usize,
    pub swept: usize,
    pub retained_granted: usize,
    pub g1_consistent: bool,
    pub udp_recreate_allowed: bool,
    pub deny_verdicts: u64,
    pub deny_events: u64,
    /// Drained deny-event stream, one JSON object per line.
    pub audit_jsonl: String,
    pub report: Report,
}

fn revocation_snapshots() -> (PolicySnapshot, PolicySnapshot) {
    let internal = vec![cidr("10.0.0.0/8")];
    let principals = vec![Principal::new("agent", 1)];
    let old = PolicyInstance::new(
        internal.clone(),
        principals.clone(),
        vec![(
            "agent".into(),
            vec![
                grant("10.0.1.0/24", ProtoSel::Udp, 0, 0),
                grant("10.0.2.0/24", ProtoSel::Tcp, 0, 0),
                grant("10.0.3.0/24", ProtoSel::Tcp, 0, 0),
            ],
        )],
        vec![],
        NormalizationMode::Strict,
    )
    .expect("revocation policy");
    let new = PolicyInstance::new(
        internal,
        principals,
        vec![(
            "agent".into(),
            vec![
                grant("10.0.1.0/24", ProtoSel::Udp, 0, 0),
                grant("10.0.3.0/24", ProtoSel::Tcp, 0, 0),
            ],
        )],
        vec![],
        NormalizationMode::Strict,
    )
    .expect("revocation policy");
    (PolicySnapshot::new(old, BTreeMap::new()), PolicySnapshot::new(new, BTreeMap::new()))
}

pub fn run_revocation(seed: u64) -> RevocationOutcome {
    let (old, mut new) = revocation_snapshots();
    let mut sim = Simulation::new(old, EnforcementMode::Enforce);
    let (pid, cg) = sim.spawn_bound("agent", 1);
    new.bindings.insert(cg, 1);

    // 1,000 UDP sockets, all authorized at epoch 0.
    let mut udp_sockets = Vec::with_capacity(1_000);
    for i in 0..1_000u32 {
        let d = udp(&format!("10.0.1.{}", 10 + (i % 200)), 4_000 + (i % 1_000) as u16);
        let out = sim.sendmsg(pid, None, &d).expect("mediation");
        assert!(out.verdict.is_allow(), "pre-update UDP send must pass");
        udp_sockets.push((out.socket.expect("socket created"), d));
    }

    // 50 established TCP connections to the prefix about to be revoked,
    // 20 to a prefix that stays granted.
    let mut revoked_tcp = Vec::with_capacity(50);
    for i in 0..50u32 {
        let d = tcp(&format!("10.0.2.{}", 10 + i), 443);
        let out = sim.connect(pid, &d).expect("mediation");
        assert!(out.verdict.is_allow());
        revoked_tcp.push(out.socket.expect("socket"));
    }
    let mut retained_tcp = Vec::with_capacity(20);
    for i in 0..20u32 {
        let d = tcp(&format!("10.0.3.{}", 10 + i), 443);
        let out = sim.connect(pid, &d).expect("mediation");
        assert!(out.verdict.is_allow());
        retained_tcp.push(out.socket.expect("socket"));
    }

    // Shrinking update: the 10.0.2.0/24 grant disappears, epoch bumps.
    let plan = sim.apply_update(new.clone());
    debug_assert!(plan.bump_epoch);

    // G1: new connections are evaluated under the new policy immediately.
    let prin = Principal::new("agent", 1);
    let g1_panel = [
        tcp("10.0.2.15", 443),
        tcp("10.0.3.15", 443),
        udp("10.0.1.15", 4001),
        tcp("10.9.9.9", 80),
        tcp("1.1.1.1", 443),
    ];
    let mut g1_consistent = true;
    for d in g1_panel {
        let got = sim.state.decide(cg, pid, &d).decision;
        let want = decide_local(Some(&prin), true, &d, &new.policy).decision;
        if got != want {
            g1_consistent = false;
        }
    }

    // Every subsequent UDP send on a stale socket is denied immediately.
    let mut udp_denied_stale = 0usize;
    for (sock, d) in &udp_sockets {
        let out = sim.sendmsg(pid, Some(*sock), d).expect("mediation");
        if out.verdict.is_deny() && out.verdict.reason == Reason::StaleEpoch {
            udp_denied_stale += 1;
        }
    }

    // A re-created socket to a still-granted destination passes with the
    // fresh epoch.
    let recreated = sim.sendmsg(pid, None, &udp("10.0.1.77", 4077)).expect("mediation");
    let udp_recreate_allowed = recreated.verdict.is_allow();

    // One sweep interval later, every stale socket to a revoked
    // destination is gone; still-granted sockets survive.
    let swept_ids = sim.advance(sim.host.revocation.sweep_interval);
    let swept = swept_ids.len();
    let all_revoked_swept = revoked_tcp.iter().all(|id| swept_ids.contains(id));
    let retained_granted = retained_tcp.iter().filter(|id| sim.host.socket(**id).is_some()).count();

    let deny_verdicts = sim.host.counters().denies;
    let deny_events = sim.deny_events.emitted_count() + sim.deny_events.dropped_count();
    let mut sink = Vec::new();
    sim.deny_events.drain(&mut sink).expect("in-memory sink");
    let audit_jsonl = String::from_utf8(sink).expect("utf8 audit lines");

    let mut report = Report::new("revocation");
    report.line("seed", seed);
    report.line("udp_attempts", udp_sockets.len());
    report.line("udp_denied_stale", udp_denied_stale);
    report.line("udp_recreate_allowed", udp_recreate_allowed);
    report.line("stale_revoked_sockets", revoked_tcp.len());
    report.line("swept_within_one_interval", all_revoked_swept);
    report.line("swept", swept);
    report.line("retained_granted", retained_granted);
    report.line("g1_new_connections_consistent", g1_consistent);
    report.pass = udp_denied_stale == udp_sockets.len()
        && all_revoked_swept
        && swept == revoked_tcp.len()
        && retained_granted == retained_tcp.len()
        && g1_consistent
        && udp_recreate_allowed;
    report.summary = format!(
        "udp denied {udp_denied_stale}/{}, tcp swept {swept}/{} within one interval",
        udp_sockets.len(),
        revoked_tcp.len()
    );

    RevocationOutcome {
        udp_attempts: udp_sockets.len(),
        udp_denied_stale,
        stale_revoked_sockets: revoked_tcp.len(),
        swept,
        retained_granted,
        g1_consistent,
        udp_recreate_allowed,
        deny_verdicts,
        deny_events,
        audit_jsonl,
        report,
    }
}

// ---------------------------------------------------------------------------
// Flow cache
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct FlowcacheOptions {
    pub flows: u32,
    pub pkts_per_flow: u32,
    pub long_flows: u32,
    pub long_pkts: u32,
    pub cache_enabled: bool,
    pub seed: u64,
}

impl Default for FlowcacheOptions {
    fn default() -> Self {
        FlowcacheOptions {
            flows: 1_000,
            pkts_per_flow: 4,
            long_flows: 4,
            long_pkts: 1_000,
            cache_enabled: true,
            seed: 42,
        }
    }
}

#[derive(Debug)]
pub struct FlowcacheOutcome {
    pub hits: u64,
    pub misses: u64,
    pub hit_rate_pct: f64,
    pub long_misses: u64,
    pub transparency_ok: bool,
    pub drops: u64,
    pub audit_events: u64,
    pub report: Report,
}

fn flowcache_policy() -> PolicyInstance {
    PolicyInstance::new(
        vec![cidr("10.0.0.0/8")],
        vec![Principal::new("app", 3)],
        vec![("app".into(), vec![grant("10.0.0.0/16", ProtoSel::Any, 0, 0)])],
        vec![((ip("10.200.0.2"), 3), vec![grant("10.0.0.0/16", ProtoSel::Any, 0, 0)])],
        NormalizationMode::Strict,
    )
    .expect("flowcache policy")
}

fn flow_packet(i: u32, port: u16) -> SimPacket {
    let d = tcp(&format!("10.0.{}.{}", (i / 200) % 256, 10 + (i % 200)), port);
    let pkt = SimPacket::new(ip("10.200.0.2"), 10_000 + (i % 40_000) as u16, d);
    encode_tag(pkt, 3, 0).expect("tag fits")
}

pub fn run_flowcache(opts: FlowcacheOptions) -> FlowcacheOutcome {
    let policy = flowcache_policy();
    let internal = policy.internal().to_vec();
    let mut events = crate::audit::EventBuffer::default();

    let base_config =
        GatewayConfig { cache_enabled: opts.cache_enabled, ..GatewayConfig::default() };

    // Many short flows: the first packet of each takes the full lookup,
    // the rest hit the cache.
    let mut gw = GatewayState::install(&policy, base_config.clone());
    for i in 0..opts.flows {
        let pkt = flow_packet(i, 443);
        for _ in 0..opts.pkts_per_flow {
            let out = gateway_ingress(&mut gw, &pkt, &internal, SimTime::ZERO, &mut events);
            debug_assert!(out.passed());
        }
    }
    let short = gw.counters();
    let hit_rate_pct = if short.hits + short.misses == 0 {
        0.0
    } else {
        100.0 * short.hits as f64 / (short.hits + short.misses) as f64
    };

    // Few long flows: miss count equals flow count regardless of length.
    let mut gw_long = GatewayState::install(&policy, base_config);
    for i in 0..opts.long_flows {
        let pkt = flow_packet(i, 8443);
        for _ in 0..opts.long_pkts {
            let out = gateway_ingress(&mut gw_long, &pkt, &internal, SimTime::ZERO, &mut events);
            debug_assert!(out.passed());
        }
    }
    let long_misses = gw_long.counters().misses;

    // Cache transparency: one random trace, identical verdict sequences
    // with the cache on and off.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trace = Vec::with_capacity(300);
    for _ in 0..300 {
        let mark = *[0u32, 3, 3, 3, 9].choose(&mut rng).unwrap();
        let dst = match rng.gen_range(0..4u8) {
            0 => tcp(&format!("10.0.0.{}", rng.gen_range(1..=254)), 443),
            1 => tcp(&format!("10.0.{}.7", rng.gen_range(0..=255)), rng.gen_range(1..=9000)),
            2 => tcp(&format!("10.77.0.{}", rng.gen_range(1..=254)), 443),
            _ => tcp(&format!("93.184.216.{}", rng.gen_range(1..=254)), 443),
        };
        let pkt = SimPacket::new(ip("10.200.0.2"), rng.gen_range(1024..60_000), dst);
        trace.push(encode_tag(pkt, mark, 0).expect("tag fits"));
    }
    let run_trace = |cache_enabled: bool, events: &mut crate::audit::EventBuffer| {
        let config = GatewayConfig { cache_enabled, ..GatewayConfig::default() };
        let mut gw = GatewayState::install(&policy, config);
        let mut verdicts = Vec::with_capacity(trace.len());
        for (k, pkt) in trace.iter().enumerate() {
            let now = SimTime::from_millis(k as u64);
            verdicts.push(gateway_ingress(&mut gw, pkt, &internal, now, events).verdict.decision);
        }
        (verdicts, gw.counters())
    };
    let (with_cache, cache_counters) = run_trace(true, &mut events);
    let (without_cache, nocache_counters) = run_trace(false, &mut events);
    let transparency_ok = with_cache == without_cache;

    let drops =
        short.drops + gw_long.counters().drops + cache_counters.drops + nocache_counters.drops;
    let audit_events = events.emitted_count();

    let (expected_short_hits, expected_short_misses, expected_long_misses) = if opts.cache_enabled
    {
        ((opts.flows * (opts.pkts_per_flow - 1)) as u64, opts.flows as u64, opts.long_flows as u64)
    } else {
        (0, 0, 0)
    };
    let mut report = Report::new("flowcache");
    report.line("seed", opts.seed);
    report.line("cache", if opts.cache_enabled { "on" } else { "off" });
    report.line("flows", opts.flows);
    report.line("pkts_per_flow", opts.pkts_per_flow);
    report.line("hits", short.hits);
    report.line("misses", short.misses);
    report.line("hit_rate", format!("{hit_rate_pct:.1}%"));
    report.line("long_flows", opts.long_flows);
    report.line("long_pkts_per_flow", opts.long_pkts);
    report.line("long_misses", long_misses);
    report.line("cache_transparency", transparency_ok);
    report.pass = short.hits == expected_short_hits
        && short.misses == expected_short_misses
        && long_misses == expected_long_misses
        && transparency_ok;
    report.summary = if opts.cache_enabled {
        format!("hit rate {hit_rate_pct:.1}%, long-flow misses {long_misses}")
    } else {
        format!("cache off, transparency {transparency_ok}")
    };

    FlowcacheOutcome {
        hits: short.hits,
        misses: short.misses,
        hit_rate_pct,
        long_misses,
        transparency_ok,
        drops,
        audit_events,
        report,
    }
}

// ---------------------------------------------------------------------------
// Monotonicity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct MonotonicityOptions {
    pub stacks: u32,
    pub seed: u64,
}

impl Default for MonotonicityOptions {
    fn default() -> Self {
        MonotonicityOptions { stacks: 1_000, seed: 42 }
    }
}

#[derive(Debug)]
pub struct MonotonicityOutcome {
    pub stacks: u32,
    pub universe_size: usize,
    pub counterexamples: u64,
    pub override_widens: bool,
    pub audit_consistent: bool,
    pub report: Report,
}

fn destination_universe() -> Vec<Destination> {
    let mut universe = Vec::with_capacity(2_048);
    for host in 0..=255u32 {
        for proto in [Proto::Tcp, Proto::Udp] {
            for port in [22u16, 443, 5432, 8080] {
                universe.push(Destination::new(ip(&format!("10.0.0.{host}")), proto, port));
            }
        }
    }
    universe
}

fn random_filter(rng: &mut ChaCha8Rng) -> Program {
    match rng.gen_range(0..5u8) {
        0 => Program::DenyPort(*[22u16, 443, 5432, 8080].choose(rng).unwrap()),
        1 => {
            let a = rng.gen_range(0..9000u16);
            let b = rng.gen_range(0..9000u16);
            Program::DenyPortRange(a.min(b), a.max(b))
        }
        2 => {
            let base = rng.gen_range(0..4u8) as u32 * 64;
            Program::DenyPrefix(Cidr::containing(ip(&format!("10.0.0.{base}")), 26).unwrap())
        }
        3 => Program::DenyProto(*[Proto::Tcp, Proto::Udp].choose(rng).unwrap()),
        _ => Program::AllowAll,
    }
}

fn monotonicity_policy(rng: &mut ChaCha8Rng) -> PolicySnapshot {
    let candidates = [
        grant("10.0.0.0/25", ProtoSel::Tcp, 0, 0),
        grant("10.0.0.128/25", ProtoSel::Udp, 0, 0),
        grant("10.0.0.0/24", ProtoSel::Any, 443, 443),
        grant("10.0.0.64/26", ProtoSel::Any, 0, 0),
    ];
    let mut grants = vec![candidates[rng.gen_range(0..candidates.len())]];
    let second = candidates[rng.gen_range(0..candidates.len())];
    if !grants[0].prefix.overlaps(&second.prefix) {
        grants.push(second);
    }
    let policy = PolicyInstance::new(
        vec![cidr("10.0.0.0/8")],
        vec![Principal::new("app", 1)],
        vec![("app".into(), grants)],
        vec![],
        NormalizationMode::Strict,
    )
    .expect("disjoint candidates");
    PolicySnapshot::new(policy, BTreeMap::new())
}

pub fn run_monotonicity(opts: MonotonicityOptions) -> MonotonicityOutcome {
    let universe = destination_universe();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut counterexamples = 0u64;
    let mut audit_consistent = true;

    for _ in 0..opts.stacks {
        let mut sim = Simulation::new(monotonicity_policy(&mut rng), EnforcementMode::Enforce);
        let depth = rng.gen_range(1..=3usize);

        // A chain of cgroups, every node bound to the same principal, one
        // supplementary filter per node below the base.
        let base = sim.host.create_cgroup(Actor::Controller, ROOT_CGROUP, false).unwrap();
        sim.bind(base, 1);
        let mut chain = vec![base];
        for _ in 0..depth {
            let parent = *chain.last().unwrap();
            let node = sim.host.create_cgroup(Actor::Controller, parent, false).unwrap();
            sim.bind(node, 1);
            sim.host.attach_program(node, random_filter(&mut rng), AttachFlag::AllowMulti).unwrap();
            chain.push(node);
        }

        // One process per chain level; deeper processes see every ancestor
        // filter plus their own.
        let mut pids = Vec::with_capacity(chain.len());
        for cg in &chain {
            let now = sim.clock;
            let pid = sim
                .host
                .spawn(
                    Actor::Controller,
                    None,
                    Some(*cg),
                    "probe",
                    crate::policy::Digest::from_label("probe"),
                    &mut sim.state,
                    &mut sim.exec_events,
                    now,
                )
                .unwrap();
            pids.push(pid);
        }

        let mut prev_allow: Option<Vec<bool>> = None;
        for pid in &pids {
            let allow: Vec<bool> = universe
                .iter()
                .map(|d| {
                    sim.host
                        .mediate(*pid, Syscall::Connect, d, &sim.state, &mut sim.deny_events, SimTime::ZERO)
                        .unwrap()
                        .verdict
                        .is_allow()
                })
                .collect();
            if let Some(prev) = &prev_allow {
                for (i, allowed) in allow.iter().enumerate() {
                    if *allowed && !prev[i] {
                        counterexamples += 1;
                    }
                }
            }
            prev_allow = Some(allow);
        }

        let counters = sim.host.counters();
        let emitted = sim.deny_events.emitted_count() + sim.deny_events.dropped_count();
        if counters.denies != emitted {
            audit_consistent = false;
        }
    }

    // Negative control: an override attachment that re-allows everything a
    // parent denied widens the descendant's set.
    let mut sim = Simulation::new(monotonicity_policy(&mut rng), EnforcementMode::Enforce);
    let base = sim.host.create_cgroup(Actor::Controller, ROOT_CGROUP, false).unwrap();
    sim.bind(base, 1);
    let child = sim.host.create_cgroup(Actor::Controller, base, false).unwrap();
    sim.bind(child, 1);
    sim.host.attach_program(child, Program::AllowAll, AttachFlag::AllowOverride).unwrap();
    let now = sim.clock;
    let parent_pid = sim
        .host
        .spawn(
            Actor::Controller,
            None,
            Some(base),
            "p",
            crate::policy::Digest::from_label("p"),
            &mut sim.state,
            &mut sim.exec_events,
            now,
        )
        .unwrap();
    let child_pid = sim
        .host
        .spawn(
            Actor::Controller,
            None,
            Some(child),
            "c",
            crate::policy::Digest::from_label("c"),
            &mut sim.state,
            &mut sim.exec_events,
            now,
        )
        .unwrap();
    let mut override_widens = false;
    for d in &universe {
        let parent_allows = sim
            .host
            .mediate(parent_pid, Syscall::Connect, d, &sim.state, &mut sim.deny_events, SimTime::ZERO)
            .unwrap()
            .verdict
            .is_allow();
        let child_allows = sim
            .host
            .mediate(child_pid, Syscall::Connect, d, &sim.state, &mut sim.deny_events, SimTime::ZERO)
            .unwrap()
            .verdict
            .is_allow();
        if child_allows && !parent_allows {
            override_widens = true;
            break;
        }
    }
    let override_flagged = sim.host.override_attached();

    let mut report = Report::new("monotonicity");
    report.line("seed", opts.seed);
    report.line("stacks", opts.stacks);
    report.line("universe", universe.len());
    report.line("counterexamples", counterexamples);
    report.line("audit_consistent", audit_consistent);
    report.line("override_negative_widens", override_widens);
    report.line("override_flagged", override_flagged);
    report.pass = counterexamples == 0 && override_widens && override_flagged && audit_consistent;
    report.summary = format!(
        "{} stacks, {} destination universe, {counterexamples} counterexamples",
        opts.stacks,
        universe.len()
    );

    MonotonicityOutcome {
        stacks: opts.stacks,
        universe_size: universe.len(),
        counterexamples,
        override_widens,
        audit_consistent,
        report,
    }
}

// ---------------------------------------------------------------------------
// Cascaded-trie policy (shared by tests and the CLI)
// ---------------------------------------------------------------------------

/// The overlapping grant pair that strict mode rejects: a broad prefix on
/// one port and a nested prefix on another.
pub fn overlap_grants() -> Vec<Grant> {
    vec![grant("10.0.0.0/8", ProtoSel::Tcp, 443, 443), grant("10.1.0.0/16", ProtoSel::Tcp, 22, 22)]
}

pub fn cascaded_policy() -> PolicyInstance {
    PolicyInstance::new(
        vec![cidr("10.0.0.0/8")],
        vec![Principal::new("legacy", 1)],
        vec![("legacy".into(), overlap_grants())],
        vec![],
        NormalizationMode::Cascaded,
    )
    .expect("cascaded mode admits the overlap")
}

/// Cascaded data-plane state for the overlap policy, bound at `cgroup`.
pub fn cascaded_state(cgroup: u64) -> DataPlaneState {
    let snapshot = PolicySnapshot::new(cascaded_policy(), [(cgroup, 1)].into_iter().collect());
    DataPlaneState::install(&snapshot)
}
