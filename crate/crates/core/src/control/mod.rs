//! Circuit control plane for OCS rails: communication interception,
//! first-iteration profiling, speculative provisioning, and FC-FS
//! reconfiguration with a per-group circuit cache.

mod circuits;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use circuits::{ring_config, CircuitConfig, PortId, RailCircuits};

use crate::model::{CommGroup, GroupId, RailId, RankId};
use crate::windows::{rail_phases, Timeline};
use crate::workload::{EventDag, EventId};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("group {group} needs {needed} ports per NIC for its ring but NICs have {ports}")]
    DegreeInfeasible { group: GroupId, needed: u32, ports: u32 },
    #[error("group {0} does not span a rail")]
    NotScaleOut(GroupId),
    #[error("reconfiguration queue cannot drain: {0} events never became schedulable")]
    ConflictDeadlock(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ControlPolicy {
    /// Reconfigure when a collective finds its ring missing.
    OnDemand,
    /// Additionally replay the profiled schedule and reconfigure as soon as
    /// the previous phase's last collective completes.
    Provisioning,
}

impl ControlPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControlPolicy::OnDemand => "on-demand",
            ControlPolicy::Provisioning => "provisioning",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "on-demand" | "ondemand" | "none" | "off" => Some(ControlPolicy::OnDemand),
            "provisioning" | "on" => Some(ControlPolicy::Provisioning),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconfigRequest {
    pub group: GroupId,
    pub issuer: RankId,
    pub issue_time: f64,
    pub speculative: bool,
    /// Collective the request prepares for, when known from the profile.
    pub target: Option<EventId>,
}

impl ReconfigRequest {
    fn key(&self) -> (f64, &GroupId, RankId) {
        (self.issue_time, &self.group, self.issuer)
    }
}

impl Eq for ReconfigRequest {}

impl Ord for ReconfigRequest {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.cmp(b.1))
            .then(a.2.cmp(&b.2))
            .then(self.target.cmp(&other.target))
            .then(self.speculative.cmp(&other.speculative))
    }
}

impl PartialOrd for ReconfigRequest {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Pending requests served first-come-first-serve: issue time, then group
/// id, then issuing rank.
#[derive(Debug, Clone, Default)]
pub struct FcfsQueue {
    pending: BTreeSet<ReconfigRequest>,
}

impl FcfsQueue {
    pub fn push(&mut self, req: ReconfigRequest) {
        self.pending.insert(req);
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.pending.first().map(|r| r.issue_time)
    }

    pub fn pop(&mut self) -> Option<ReconfigRequest> {
        self.pending.pop_first()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Per-rank order of rail collectives observed in the profiling iteration,
/// plus the per-rail phase sequence derived from it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Schedule {
    pub per_rank: BTreeMap<RankId, Vec<EventId>>,
    pub per_rail: BTreeMap<RailId, Vec<PhaseEntry>>,
    /// For each rank: completed event -> next event of a different group.
    /// A `None` key marks the transition that wraps into the next iteration.
    next: BTreeMap<(RankId, Option<EventId>), EventId>,
    /// For each target event, the ranks that switch groups to reach it.
    arrivals: BTreeMap<EventId, BTreeSet<RankId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEntry {
    pub groups: BTreeSet<GroupId>,
    /// Last collective of the preceding phase; `None` for the first phase.
    pub trigger: Option<EventId>,
}

impl Schedule {
    pub fn next_after(&self, rank: RankId, completed: Option<EventId>) -> Option<EventId> {
        self.next.get(&(rank, completed)).copied()
    }

    pub fn switching_ranks(&self, target: EventId) -> Option<&BTreeSet<RankId>> {
        self.arrivals.get(&target)
    }

    /// Group transitions across all ranks: the reconfigurations a perfectly
    /// predicted iteration needs at most.
    pub fn transition_count(&self) -> usize {
        self.arrivals.len()
    }

    /// Completed-event triggers of `rank`, with the wrap-around trigger first.
    pub fn triggers(&self) -> impl Iterator<Item = (RankId, Option<EventId>, EventId)> + '_ {
        self.next.iter().map(|(&(r, c), &t)| (r, c, t))
    }
}

/// Derives the phase schedule from a completed iteration.
pub fn profile_iteration(dag: &EventDag, timeline: &Timeline, num_rails: usize) -> Schedule {
    let mut per_rank: BTreeMap<RankId, Vec<(f64, EventId)>> = BTreeMap::new();
    for ev in dag.events.iter().filter(|ev| dag.rail_of(ev).is_some()) {
        let start = timeline.get(ev.id).map_or(0.0, |s| s.comm_start());
        for &r in &ev.ranks {
            per_rank.entry(r).or_default().push((start, ev.id));
        }
    }
    let group = |e: EventId| dag.events[e].group.as_ref();
    let mut sched = Schedule::default();
    for (rank, mut seq) in per_rank {
        seq.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let order: Vec<EventId> = seq.into_iter().map(|(_, e)| e).collect();
        for (i, &e) in order.iter().enumerate() {
            let prev = if i == 0 { *order.last().expect("nonempty") } else { order[i - 1] };
            if group(prev) != group(e) {
                let trigger = if i == 0 { None } else { Some(prev) };
                sched.next.insert((rank, trigger), e);
                sched.arrivals.entry(e).or_default().insert(rank);
            }
        }
        sched.per_rank.insert(rank, order);
    }
    for rail in 0..num_rails {
        let phases = rail_phases(dag, timeline, rail).unwrap_or_default();
        let mut entries = Vec::new();
        let mut trigger = None;
        for p in phases {
            let last = p.events.last().copied();
            entries.push(PhaseEntry { groups: p.groups, trigger });
            trigger = last;
        }
        if !entries.is_empty() {
            sched.per_rail.insert(rail, entries);
        }
    }
    sched
}

/// Speculative request `rank` issues when it completes `completed` (`None`
/// at the start of an iteration), if the profile says its next collective
/// belongs to another group.
pub fn provision(
    dag: &EventDag,
    schedule: &Schedule,
    rank: RankId,
    completed: Option<EventId>,
    now: f64,
) -> Option<ReconfigRequest> {
    let target = schedule.next_after(rank, completed)?;
    Some(ReconfigRequest {
        group: dag.events[target].group.clone()?,
        issuer: rank,
        issue_time: now,
        speculative: true,
        target: Some(target),
    })
}

/// What the interception layer does with a collective about to run.
#[derive(Debug, Clone, PartialEq)]
pub enum ShimAction {
    Serve,
    Request(GroupId),
}

/// Serve when the group's ring is already in place, otherwise ask the
/// controller for it.
pub fn shim_intercept(group: &GroupId, rail: &RailCircuits, table: &GroupTable) -> ShimAction {
    match table.cached(group) {
        Some(cfg) if rail.is_up(cfg) => ShimAction::Serve,
        None if table.is_circuitless(group) => ShimAction::Serve,
        _ => ShimAction::Request(group.clone()),
    }
}

/// Per-job controller state: cached ring configurations and the profile.
#[derive(Debug, Clone, Default)]
pub struct GroupTable {
    configs: BTreeMap<GroupId, CircuitConfig>,
    circuitless: BTreeSet<GroupId>,
    pub schedule: Option<Schedule>,
}

impl GroupTable {
    /// Builds and caches ring configurations for every scale-out group.
    pub fn populate<'a>(
        groups: impl IntoIterator<Item = &'a CommGroup>,
        nic_ports: u32,
    ) -> Result<Self, ControlError> {
        let mut t = GroupTable::default();
        for g in groups {
            if !g.is_scale_out() {
                t.circuitless.insert(g.id.clone());
                continue;
            }
            let cfg = ring_config(g, nic_ports)?;
            t.configs.insert(g.id.clone(), cfg);
        }
        Ok(t)
    }

    pub fn cached(&self, group: &GroupId) -> Option<&CircuitConfig> {
        self.configs.get(group)
    }

    pub fn is_circuitless(&self, group: &GroupId) -> bool {
        self.circuitless.contains(group)
    }
}

/// Collects speculative requests per target collective and releases the
/// target once every switching member has asked.
#[derive(Debug, Clone, Default)]
pub struct RequestBarrier {
    expected: BTreeMap<EventId, BTreeSet<RankId>>,
    received: BTreeMap<EventId, (BTreeSet<RankId>, f64)>,
}

impl RequestBarrier {
    pub fn new(expected: BTreeMap<EventId, BTreeSet<RankId>>) -> Self {
        Self { expected, received: BTreeMap::new() }
    }

    pub fn from_schedule(schedule: &Schedule) -> Self {
        Self::new(schedule.arrivals.clone())
    }

    /// Records `req`; returns the completed request, stamped with the last
    /// arrival time, once all expected members have asked.
    pub fn submit(&mut self, req: ReconfigRequest) -> Option<ReconfigRequest> {
        let target = req.target?;
        let expected = self.expected.get(&target)?;
        let entry = self.received.entry(target).or_insert_with(|| (BTreeSet::new(), f64::NEG_INFINITY));
        entry.0.insert(req.issuer);
        entry.1 = entry.1.max(req.issue_time);
        if expected.is_subset(&entry.0) {
            let (_, time) = self.received.remove(&target).expect("present");
            Some(ReconfigRequest { issue_time: time, issuer: *expected.first().expect("nonempty"), ..req })
        } else {
            None
        }
    }
}

/// Time at which each NIC port becomes free of traffic and switching.
#[derive(Debug, Clone)]
pub struct PortClocks {
    ports: u32,
    free: Vec<f64>,
}

impl PortClocks {
    pub fn new(num_ranks: usize, ports: u32) -> Self {
        Self { ports, free: vec![0.0; num_ranks * ports as usize] }
    }

    fn idx(&self, p: PortId) -> usize {
        p.rank * self.ports as usize + p.port as usize
    }

    pub fn free_at(&self, p: PortId) -> f64 {
        self.free[self.idx(p)]
    }

    pub fn rank_free_at(&self, rank: RankId) -> f64 {
        (0..self.ports).map(|p| self.free_at(PortId::new(rank, p))).fold(0.0, f64::max)
    }

    pub fn hold(&mut self, p: PortId, until: f64) {
        let i = self.idx(p);
        self.free[i] = self.free[i].max(until);
    }

    pub fn hold_rank(&mut self, rank: RankId, until: f64) {
        for p in 0..self.ports {
            self.hold(PortId::new(rank, p), until);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconfigRecord {
    /// Switching begins.
    pub time: f64,
    /// Circuits usable.
    pub ready: f64,
    pub rail: RailId,
    pub group: GroupId,
    pub speculative: bool,
    pub delay: f64,
    pub touched: Vec<PortId>,
    pub pairs: Vec<(PortId, PortId)>,
}

impl ReconfigRecord {
    pub fn ports_changed(&self) -> usize {
        self.touched.len()
    }
}

/// Installs `cfg` on `rail` no earlier than `now` and only once every touched
/// port has finished its traffic; touched ports stay blocked until the new
/// circuits are ready. Returns `None` when the ring is already in place.
pub fn controller_apply(
    rail: &mut RailCircuits,
    cfg: &CircuitConfig,
    now: f64,
    delay: f64,
    clocks: &mut PortClocks,
    speculative: bool,
) -> Option<ReconfigRecord> {
    if rail.is_up(cfg) {
        return None;
    }
    let touched = rail.touched(cfg);
    let begin = touched.iter().map(|&p| clocks.free_at(p)).fold(now, f64::max);
    let ready = begin + delay;
    for &p in &touched {
        clocks.hold(p, ready);
    }
    rail.apply(cfg);
    Some(ReconfigRecord {
        time: begin,
        ready,
        rail: cfg.rail,
        group: cfg.group.clone(),
        speculative,
        delay,
        touched: touched.into_iter().collect(),
        pairs: cfg.pairs.clone(),
    })
}
