//! Data-plane map state, policy update planning, and the interleaving
//! explorer.
//!
//! A deployed policy is realized as a set of maps: the internal-prefix
//! classifier, the cgroup-to-principal binding table, optional per-binary
//! hash requirements, the per-process verification table, and the
//! per-principal allow tries (plus the cascade table in cascaded mode).
//! Updates between two policy snapshots are planned as individual map
//! entry operations with a fail-closed ordering: maps whose miss means
//! deny see their deletes before any insert, while the internal classifier
//! (where a miss means external passthrough) sees inserts before deletes.
//! A plan ends with an authorization-epoch bump whenever it removed a
//! grant or a binding.
//!
//! The explorer walks intermediate map states reachable while a plan is
//! applied one operation at a time and reports any probe that is allowed
//! at an intermediate state while being denied by both the old and the new
//! policy — a transient allow. Plan application is single-writer; probes
//! model concurrent readers, which is precisely the interleaving the
//! explorer varies.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lpm::{cascaded_lookup, Family, KeyGeometry, LpmKey, LpmTrie};
use crate::policy::{
    Cidr, Destination, Digest, GrantSet, PolicyInstance, PortRange, Proto, ProtoSel, Reason,
    Verdict,
};
use crate::time::SimDuration;

/// A policy instance together with the cgroup placement the controller
/// intends to deploy with it. Bindings are deployment state, not part of
/// the policy triple itself, but they travel with it through updates
/// because the binding map participates in the fail-closed ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySnapshot {
    pub policy: PolicyInstance,
    pub bindings: BTreeMap<u64, u32>,
}

impl PolicySnapshot {
    pub fn new(policy: PolicyInstance, bindings: BTreeMap<u64, u32>) -> Self {
        PolicySnapshot { policy, bindings }
    }
}

/// Value stored in an allow trie: either the full protocol/port predicate
/// (strict mode) or a marker sending the lookup to the cascade table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleEntry {
    Predicate { proto: ProtoSel, ports: PortRange },
    Cascaded,
}

/// Revocation tuning: how often the sweeper runs and whether the
/// per-socket epoch check applies to UDP sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RevocationConfig {
    pub sweep_interval: SimDuration,
    pub udp_epoch_check: bool,
}

impl Default for RevocationConfig {
    fn default() -> Self {
        RevocationConfig {
            sweep_interval: SimDuration::from_millis(1_000),
            udp_epoch_check: true,
        }
    }
}

fn app_fixed(app: u32) -> [u8; 4] {
    app.to_be_bytes()
}

/// The local enforcement maps plus the authorization epoch.
///
/// Each mutation is a single map-entry operation, atomic with respect to
/// concurrent decisions; the epoch only ever increases.
#[derive(Debug, Clone)]
pub struct DataPlaneState {
    internal_v4: LpmTrie<()>,
    internal_v6: LpmTrie<()>,
    cgroup_to_app: HashMap<u64, u32>,
    app_exec_hash: HashMap<u32, Digest>,
    task_verified: HashMap<u64, u32>,
    app_allow_v4: LpmTrie<RuleEntry>,
    app_allow_v6: LpmTrie<RuleEntry>,
    cascade: crate::lpm::CascadeTable,
    epoch: u64,
}

impl DataPlaneState {
    pub fn new() -> Self {
        DataPlaneState {
            internal_v4: LpmTrie::new(KeyGeometry::new(0, Family::V4)),
            internal_v6: LpmTrie::new(KeyGeometry::new(0, Family::V6)),
            cgroup_to_app: HashMap::new(),
            app_exec_hash: HashMap::new(),
            task_verified: HashMap::new(),
            app_allow_v4: LpmTrie::new(KeyGeometry::new(4, Family::V4)),
            app_allow_v6: LpmTrie::new(KeyGeometry::new(4, Family::V6)),
            cascade: crate::lpm::CascadeTable::new(),
            epoch: 0,
        }
    }

    /// Populates fresh maps from a snapshot, as the controller does on
    /// startup. The epoch starts at zero.
    pub fn install(snapshot: &PolicySnapshot) -> Self {
        let mut state = DataPlaneState::new();
        for op in image(snapshot).insert_ops() {
            state.apply(&op);
        }
        state
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn bump_epoch(&mut self) {
        self.epoch += 1;
    }

    pub fn set_task_verified(&mut self, tgid: u64, app: u32) {
        self.task_verified.insert(tgid, app);
    }

    pub fn clear_task_verified(&mut self, tgid: u64) {
        self.task_verified.remove(&tgid);
    }

    pub fn task_verified(&self, tgid: u64) -> Option<u32> {
        self.task_verified.get(&tgid).copied()
    }

    pub fn binding(&self, cgroup_id: u64) -> Option<u32> {
        self.cgroup_to_app.get(&cgroup_id).copied()
    }

    pub fn exec_hash(&self, app: u32) -> Option<Digest> {
        self.app_exec_hash.get(&app).copied()
    }

    fn internal_trie(&self, ip: std::net::IpAddr) -> &LpmTrie<()> {
        if ip.is_ipv4() {
            &self.internal_v4
        } else {
            &self.internal_v6
        }
    }

    fn allow_trie(&self, ip: std::net::IpAddr) -> &LpmTrie<RuleEntry> {
        if ip.is_ipv4() {
            &self.app_allow_v4
        } else {
            &self.app_allow_v6
        }
    }

    pub fn is_internal(&self, ip: std::net::IpAddr) -> bool {
        !self.internal_trie(ip).lookup(&LpmKey::query(&[], ip)).is_miss()
    }

    /// The connect-time pipeline over the maps: internal classification,
    /// principal resolution, the optional hash gate, the per-principal
    /// allow lookup, and the matched rule's predicate. Total.
    pub fn decide(&self, cgroup_id: u64, tgid: u64, dst: &Destination) -> Verdict {
        if !self.is_internal(dst.ip) {
            return Verdict::from_reason(Reason::External);
        }
        self.decide_internal_path(cgroup_id, tgid, dst)
    }

    /// The sendmsg-time pipeline: identical, except that a socket stamped
    /// at an older epoch is denied as stale before grants are consulted.
    /// External destinations stay unimpeded.
    pub fn decide_send(
        &self,
        cgroup_id: u64,
        tgid: u64,
        dst: &Destination,
        socket_epoch: u64,
    ) -> Verdict {
        if !self.is_internal(dst.ip) {
            return Verdict::from_reason(Reason::External);
        }
        if socket_epoch < self.epoch {
            return Verdict::from_reason(Reason::StaleEpoch);
        }
        self.decide_internal_path(cgroup_id, tgid, dst)
    }

    fn decide_internal_path(&self, cgroup_id: u64, tgid: u64, dst: &Destination) -> Verdict {
        let Some(app) = self.cgroup_to_app.get(&cgroup_id).copied() else {
            return Verdict::from_reason(Reason::NoBinding);
        };
        if self.app_exec_hash.contains_key(&app) && self.task_verified.get(&tgid) != Some(&app) {
            return Verdict::from_reason(Reason::HashUnverified);
        }
        let fixed = app_fixed(app);
        let trie = self.allow_trie(dst.ip);
        let query = LpmKey::query(&fixed, dst.ip);
        let hit = trie.lookup(&query);
        let Some(entry) = hit.value else {
            return Verdict::from_reason(Reason::NoGrant);
        };
        match entry {
            RuleEntry::Predicate { proto, ports } => {
                if proto.matches(dst.proto) && ports.matches(dst.port) {
                    Verdict::from_reason(Reason::GrantMatch)
                } else {
                    Verdict::from_reason(Reason::PortMismatch)
                }
            }
            RuleEntry::Cascaded => {
                match cascaded_lookup(trie, &self.cascade, &query, dst.ip, dst.proto) {
                    Some(ports) if ports.matches(dst.port) => {
                        Verdict::from_reason(Reason::GrantMatch)
                    }
                    Some(_) => Verdict::from_reason(Reason::PortMismatch),
                    None => Verdict::from_reason(Reason::NoGrant),
                }
            }
        }
    }

    /// Applies one map-entry operation. Each call is one atomic step.
    pub fn apply(&mut self, op: &MapOp) {
        match op {
            MapOp::InsertInternal(c) => {
                let trie = if c.is_v4() { &mut self.internal_v4 } else { &mut self.internal_v6 };
                trie.insert(&LpmKey::entry(&[], c), ()).expect("internal key geometry");
            }
            MapOp::DeleteInternal(c) => {
                let trie = if c.is_v4() { &mut self.internal_v4 } else { &mut self.internal_v6 };
                trie.remove(&LpmKey::entry(&[], c));
            }
            MapOp::InsertBinding { cgroup, app } => {
                self.cgroup_to_app.insert(*cgroup, *app);
            }
            MapOp::DeleteBinding { cgroup } => {
                self.cgroup_to_app.remove(cgroup);
            }
            MapOp::InsertExecHash { app, digest } => {
                self.app_exec_hash.insert(*app, *digest);
            }
            MapOp::DeleteExecHash { app } => {
                self.app_exec_hash.remove(app);
            }
            MapOp::PurgeTaskVerified { app } => {
                self.task_verified.retain(|_, v| v != app);
            }
            MapOp::InsertRule { app, prefix, entry } => {
                let trie =
                    if prefix.is_v4() { &mut self.app_allow_v4 } else { &mut self.app_allow_v6 };
                trie.insert(&LpmKey::entry(&app_fixed(*app), prefix), *entry)
                    .expect("rule key geometry");
            }
            MapOp::DeleteRule { app, prefix } => {
                let trie =
                    if prefix.is_v4() { &mut self.app_allow_v4 } else { &mut self.app_allow_v6 };
                trie.remove(&LpmKey::entry(&app_fixed(*app), prefix));
            }
            MapOp::InsertCascade { app, prefix, proto, ports } => {
                self.cascade.insert(&app_fixed(*app), *prefix, *proto, *ports);
            }
            MapOp::DeleteCascade { app, prefix, proto } => {
                self.cascade.remove(&app_fixed(*app), *prefix, *proto);
            }
            MapOp::BumpEpoch => {
                self.epoch += 1;
            }
        }
    }
}

impl Default for DataPlaneState {
    fn default() -> Self {
        DataPlaneState::new()
    }
}

/// One map-entry operation of an update plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapOp {
    InsertInternal(Cidr),
    DeleteInternal(Cidr),
    InsertBinding { cgroup: u64, app: u32 },
    DeleteBinding { cgroup: u64 },
    InsertExecHash { app: u32, digest: Digest },
    DeleteExecHash { app: u32 },
    PurgeTaskVerified { app: u32 },
    InsertRule { app: u32, prefix: Cidr, entry: RuleEntry },
    DeleteRule { app: u32, prefix: Cidr },
    InsertCascade { app: u32, prefix: Cidr, proto: Proto, ports: PortRange },
    DeleteCascade { app: u32, prefix: Cidr, proto: Proto },
    BumpEpoch,
}

impl MapOp {
    /// True for operations the fail-closed ordering schedules first:
    /// deletes on miss-means-deny maps and inserts on the internal
    /// classifier.
    pub fn is_fail_closed_first(&self) -> bool {
        matches!(
            self,
            MapOp::DeleteBinding { .. }
                | MapOp::DeleteExecHash { .. }
                | MapOp::PurgeTaskVerified { .. }
                | MapOp::DeleteRule { .. }
                | MapOp::DeleteCascade { .. }
                | MapOp::InsertInternal(_)
        )
    }

    /// True for operations the fail-closed ordering schedules second:
    /// inserts on miss-means-deny maps and deletes on the internal
    /// classifier.
    pub fn is_fail_closed_second(&self) -> bool {
        matches!(
            self,
            MapOp::InsertBinding { .. }
                | MapOp::InsertExecHash { .. }
                | MapOp::InsertRule { .. }
                | MapOp::InsertCascade { .. }
                | MapOp::DeleteInternal(_)
        )
    }
}

/// Which controller behavior a plan models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanModel {
    /// Delete-before-insert on deny-biased maps, insert-before-delete on
    /// the internal classifier.
    FailClosed,
    /// Flush everything, then load the new policy — the behavior of a
    /// ruleset reload that reverts to default-accept mid-update.
    FlushReload,
    /// Fail-closed phases swapped; a negative control that widens
    /// transiently on rebinding updates.
    Reversed,
}

/// An ordered plan realizing one policy transition. Operations within a
/// phase touch distinct keys and commute; the phases themselves are
/// ordered, and the epoch bump (when present) runs strictly last.
#[derive(Debug, Clone)]
pub struct UpdatePlan {
    pub model: PlanModel,
    pub phase_one: Vec<MapOp>,
    pub phase_two: Vec<MapOp>,
    pub bump_epoch: bool,
}

impl UpdatePlan {
    /// Number of map operations, excluding the trailing epoch bump.
    pub fn op_count(&self) -> usize {
        self.phase_one.len() + self.phase_two.len()
    }

    pub fn is_empty(&self) -> bool {
        self.op_count() == 0
    }

    /// All operations in canonical application order.
    pub fn ops(&self) -> Vec<MapOp> {
        let mut out = Vec::with_capacity(self.op_count() + 1);
        out.extend(self.phase_one.iter().cloned());
        out.extend(self.phase_two.iter().cloned());
        if self.bump_epoch {
            out.push(MapOp::BumpEpoch);
        }
        out
    }

    /// Checks the fail-closed ordering invariants phase by phase.
    pub fn satisfies_fail_closed_ordering(&self) -> bool {
        self.phase_one.iter().all(|op| op.is_fail_closed_first())
            && self.phase_two.iter().all(|op| op.is_fail_closed_second())
    }

    /// Applies the full plan in canonical order.
    pub fn apply_all(&self, state: &mut DataPlaneState) {
        for op in self.ops() {
            state.apply(&op);
        }
    }
}

/// Flat image of the maps a snapshot deploys; the diff of two images is a
/// plan.
#[derive(Debug, Default)]
struct MapImage {
    internal: BTreeSet<Cidr>,
    bindings: BTreeMap<u64, u32>,
    exec_hash: BTreeMap<u32, Digest>,
    rules: BTreeMap<(u32, Cidr), RuleEntry>,
    cascade: BTreeMap<(u32, Cidr, Proto), PortRange>,
}

impl MapImage {
    fn insert_ops(&self) -> Vec<MapOp> {
        let mut ops = Vec::new();
        ops.extend(self.internal.iter().map(|c| MapOp::InsertInternal(*c)));
        ops.extend(
            self.bindings.iter().map(|(cg, app)| MapOp::InsertBinding { cgroup: *cg, app: *app }),
        );
        ops.extend(
            self.exec_hash
                .iter()
                .map(|(app, d)| MapOp::InsertExecHash { app: *app, digest: *d }),
        );
        ops.extend(self.rules.iter().map(|((app, prefix), entry)| MapOp::InsertRule {
            app: *app,
            prefix: *prefix,
            entry: *entry,
        }));
        ops.extend(self.cascade.iter().map(|((app, prefix, proto), ports)| {
            MapOp::InsertCascade { app: *app, prefix: *prefix, proto: *proto, ports: *ports }
        }));
        ops
    }

    fn delete_ops(&self) -> Vec<MapOp> {
        let mut ops = Vec::new();
        ops.extend(self.internal.iter().map(|c| MapOp::DeleteInternal(*c)));
        ops.extend(self.bindings.keys().map(|cg| MapOp::DeleteBinding { cgroup: *cg }));
        ops.extend(self.exec_hash.keys().map(|app| MapOp::DeleteExecHash { app: *app }));
        ops.extend(
            self.rules
                .keys()
                .map(|(app, prefix)| MapOp::DeleteRule { app: *app, prefix: *prefix }),
        );
        ops.extend(self.cascade.keys().map(|(app, prefix, proto)| MapOp::DeleteCascade {
            app: *app,
            prefix: *prefix,
            proto: *proto,
        }));
        ops
    }
}

fn grant_set_rules(app: u32, set: &GrantSet, image: &mut MapImage) {
    if set.is_cascaded() {
        for g in set.grants() {
            image.rules.insert((app, g.prefix), RuleEntry::Cascaded);
        }
        for ((prefix, proto), ports) in set.cascade() {
            image.cascade.insert((app, *prefix, *proto), *ports);
        }
    } else {
        for g in set.grants() {
            image
                .rules
                .insert((app, g.prefix), RuleEntry::Predicate { proto: g.proto, ports: g.ports });
        }
    }
}

fn image(snapshot: &PolicySnapshot) -> MapImage {
    let mut img = MapImage::default();
    for c in snapshot.policy.internal() {
        img.internal.insert(*c);
    }
    img.bindings = snapshot.bindings.clone();
    for p in snapshot.policy.principals() {
        if let Some(d) = p.exec_hash {
            img.exec_hash.insert(p.app_index, d);
        }
        if let Some(set) = snapshot.policy.grant_set(&p.name) {
            grant_set_rules(p.app_index, set, &mut img);
        }
    }
    img
}

/// Plans the transition from one snapshot to another with the fail-closed
/// ordering. Entries whose value changes are emitted as a delete followed
/// (in the later phase) by an insert, never as an in-place overwrite, so a
/// rebound cgroup passes through an unbound (deny) window rather than ever
/// pairing one policy's binding with the other policy's grants. The plan
/// ends with an epoch bump exactly when it removed a grant or a binding.
pub fn plan_update(old: &PolicySnapshot, new: &PolicySnapshot) -> UpdatePlan {
    let old_img = image(old);
    let new_img = image(new);

    let mut phase_one = Vec::new();
    let mut phase_two = Vec::new();

    for c in new_img.internal.difference(&old_img.internal) {
        phase_one.push(MapOp::InsertInternal(*c));
    }
    for c in old_img.internal.difference(&new_img.internal) {
        phase_two.push(MapOp::DeleteInternal(*c));
    }

    let mut shrink = false;

    for (cg, app) in &old_img.bindings {
        if new_img.bindings.get(cg) != Some(app) {
            phase_one.push(MapOp::DeleteBinding { cgroup: *cg });
            shrink = true;
        }
    }
    for (cg, app) in &new_img.bindings {
        if old_img.bindings.get(cg) != Some(app) {
            phase_two.push(MapOp::InsertBinding { cgroup: *cg, app: *app });
        }
    }

    for (app, digest) in &old_img.exec_hash {
        if new_img.exec_hash.get(app) != Some(digest) {
            phase_one.push(MapOp::DeleteExecHash { app: *app });
            phase_one.push(MapOp::PurgeTaskVerified { app: *app });
        }
    }
    for (app, digest) in &new_img.exec_hash {
        if old_img.exec_hash.get(app) != Some(digest) {
            if !phase_one.iter().any(|op| matches!(op, MapOp::PurgeTaskVerified { app: a } if a == app))
            {
                phase_one.push(MapOp::PurgeTaskVerified { app: *app });
            }
            phase_two.push(MapOp::InsertExecHash { app: *app, digest: *digest });
        }
    }

    for (key, entry) in &old_img.rules {
        if new_img.rules.get(key) != Some(entry) {
            phase_one.push(MapOp::DeleteRule { app: key.0, prefix: key.1 });
            shrink = true;
        }
    }
    for (key, entry) in &new_img.rules {
        if old_img.rules.get(key) != Some(entry) {
            phase_two.push(MapOp::InsertRule { app: key.0, prefix: key.1, entry: *entry });
        }
    }

    for (key, ports) in &old_img.cascade {
        if new_img.cascade.get(key) != Some(ports) {
            phase_one.push(MapOp::DeleteCascade { app: key.0, prefix: key.1, proto: key.2 });
            shrink = true;
        }
    }
    for (key, ports) in &new_img.cascade {
        if old_img.cascade.get(key) != Some(ports) {
            phase_two.push(MapOp::InsertCascade {
                app: key.0,
                prefix: key.1,
                proto: key.2,
                ports: *ports,
            });
        }
    }

    UpdatePlan { model: PlanModel::FailClosed, phase_one, phase_two, bump_epoch: shrink }
}

/// Plans the same transition the way a flush-and-reload controller would:
/// every old entry (including the internal classifier) is deleted, then
/// every new entry is inserted. The mid-update state is default-accept for
/// anything the classifier no longer marks internal.
pub fn plan_flush_reload(old: &PolicySnapshot, new: &PolicySnapshot) -> UpdatePlan {
    UpdatePlan {
        model: PlanModel::FlushReload,
        phase_one: image(old).delete_ops(),
        phase_two: image(new).insert_ops(),
        bump_epoch: false,
    }
}

/// The fail-closed plan with its phases swapped: inserts land before
/// deletes on deny-biased maps. A negative control for the explorer.
pub fn plan_reversed(old: &PolicySnapshot, new: &PolicySnapshot) -> UpdatePlan {
    let plan = plan_update(old, new);
    UpdatePlan {
        model: PlanModel::Reversed,
        phase_one: plan.phase_two,
        phase_two: plan.phase_one,
        bump_epoch: plan.bump_epoch,
    }
}

/// A probe models one concurrent reader: the decision the hook would make
/// for a process in `cgroup_id` connecting to `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    pub cgroup_id: u64,
    pub dst: Destination,
}

#[derive(Debug, Clone, Copy)]
pub enum ExploreBudget {
    /// Enumerate every reachable intermediate map state (feasible for
    /// plans of at most a dozen operations, since within-phase operations
    /// commute and states correspond to per-phase subsets).
    Exhaustive,
    /// Sample this many random within-phase schedules and walk each one
    /// operation at a time.
    Randomized { schedules: u32 },
}

#[derive(Debug, Clone, Copy)]
pub struct ExploreOptions {
    pub budget: ExploreBudget,
    pub seed: u64,
}

/// One observed transient allow: a probe allowed at an intermediate state
/// while denied under both endpoint policies.
#[derive(Debug, Clone)]
pub struct TransientAllow {
    pub probe: Probe,
    pub state_description: String,
}

#[derive(Debug, Clone)]
pub struct InterleaveReport {
    pub model: PlanModel,
    pub op_count: usize,
    pub states_explored: u64,
    pub probe_evaluations: u64,
    pub violation_count: u64,
    pub distinct_violating_probes: usize,
    pub examples: Vec<TransientAllow>,
    pub seed: u64,
    pub exhaustive: bool,
}

const MAX_EXAMPLES: usize = 8;

/// Explores intermediate states of `plan` and reports transient allows.
///
/// Endpoint verdicts are computed against freshly installed maps for the
/// old and new snapshots. A violation is a probe that some intermediate
/// state allows although both endpoints deny it. The trailing epoch bump
/// is not varied: it runs strictly last and connect-path verdicts do not
/// read the epoch.
pub fn explore_interleavings(
    old: &PolicySnapshot,
    new: &PolicySnapshot,
    plan: &UpdatePlan,
    probes: &[Probe],
    opts: ExploreOptions,
) -> InterleaveReport {
    let base_old = DataPlaneState::install(old);
    let base_new = DataPlaneState::install(new);

    let denied_both: Vec<bool> = probes
        .iter()
        .map(|p| {
            base_old.decide(p.cgroup_id, 0, &p.dst).is_deny()
                && base_new.decide(p.cgroup_id, 0, &p.dst).is_deny()
        })
        .collect();

    let mut report = InterleaveReport {
        model: plan.model,
        op_count: plan.op_count(),
        states_explored: 0,
        probe_evaluations: 0,
        violation_count: 0,
        distinct_violating_probes: 0,
        examples: Vec::new(),
        seed: opts.seed,
        exhaustive: matches!(opts.budget, ExploreBudget::Exhaustive),
    };
    let mut violating: BTreeSet<usize> = BTreeSet::new();

    let mut check_state = |state: &DataPlaneState,
                           desc: &dyn Fn() -> String,
                           report: &mut InterleaveReport| {
        report.states_explored += 1;
        for (i, p) in probes.iter().enumerate() {
            report.probe_evaluations += 1;
            if denied_both[i] && state.decide(p.cgroup_id, 0, &p.dst).is_allow() {
                report.violation_count += 1;
                violating.insert(i);
                if report.examples.len() < MAX_EXAMPLES {
                    report
                        .examples
                        .push(TransientAllow { probe: *p, state_description: desc() });
                }
            }
        }
    };

    match opts.budget {
        ExploreBudget::Exhaustive => {
            let n1 = plan.phase_one.len();
            let n2 = plan.phase_two.len();
            assert!(n1 <= 20 && n2 <= 20, "exhaustive exploration needs a small plan");
            for mask in 0u64..(1u64 << n1) {
                let mut state = base_old.clone();
                for (i, op) in plan.phase_one.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        state.apply(op);
                    }
                }
                check_state(&state, &|| format!("phase1 subset {mask:#b}"), &mut report);
            }
            let mut after_one = base_old.clone();
            for op in &plan.phase_one {
                after_one.apply(op);
            }
            for mask in 1u64..(1u64 << n2) {
                let mut state = after_one.clone();
                for (i, op) in plan.phase_two.iter().enumerate() {
                    if mask & (1 << i) != 0 {
                        state.apply(op);
                    }
                }
                check_state(&state, &|| format!("phase2 subset {mask:#b}"), &mut report);
            }
        }
        ExploreBudget::Randomized { schedules } => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            for s in 0..schedules {
                let mut one = plan.phase_one.clone();
                let mut two = plan.phase_two.clone();
                one.shuffle(&mut rng);
                two.shuffle(&mut rng);
                let mut state = base_old.clone();
                check_state(&state, &|| format!("schedule {s} step 0"), &mut report);
                for (k, op) in one.iter().chain(two.iter()).enumerate() {
                    state.apply(op);
                    check_state(&state, &|| format!("schedule {s} step {}", k + 1), &mut report);
                }
            }
        }
    }

    report.distinct_violating_probes = violating.len();
    report
}

/// Terminates every established TCP socket that is stale (stamped at an
/// older epoch) and whose destination the current maps no longer grant to
/// its owner. Sockets whose destination remains granted are left alone;
/// the epoch alone does not condemn an established flow.
pub fn sweeper_tick(host: &mut crate::host::SimHost, state: &DataPlaneState) -> Vec<u64> {
    let mut doomed = Vec::new();
    for socket in host.sockets() {
        if socket.proto != Proto::Tcp || !socket.established {
            continue;
        }
        if socket.epoch >= state.epoch() {
            continue;
        }
        let verdict = match host.process(socket.pid) {
            Some(proc) => state.decide(proc.cgroup, proc.tgid, &socket.dst),
            None => Verdict::from_reason(Reason::NoBinding),
        };
        if verdict.is_deny() {
            doomed.push(socket.id);
        }
    }
    doomed.sort_unstable();
    for id in &doomed {
        host.terminate_socket(*id);
    }
    doomed
}
