use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{collective_time, FabricError, SimOptions};
use crate::control::{
    controller_apply, provision, shim_intercept, ControlError, FcfsQueue, GroupTable, PortClocks, RailCircuits,
    ReconfigRecord, RequestBarrier, Schedule, ShimAction,
};
use crate::model::Topology;
use crate::windows::{EventSpan, Timeline};
use crate::workload::{EventDag, EventId, EventKind};

/// Ready-queue entry ordered by readiness time, then event id.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ready {
    time: f64,
    id: EventId,
}

impl Eq for Ready {}

impl Ord for Ready {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time.total_cmp(&other.time).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Ready {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

pub(super) struct RunConfig<'a> {
    /// `None` for electrical rails.
    pub ocs: Option<OcsRun<'a>>,
    pub options: &'a SimOptions,
}

pub(super) struct OcsRun<'a> {
    pub table: &'a GroupTable,
    pub delay: f64,
    pub initial: Vec<RailCircuits>,
    /// Profiled schedule to replay speculatively; `None` disables provisioning.
    pub schedule: Option<&'a Schedule>,
}

pub(super) struct RunOutput {
    pub timeline: Timeline,
    pub makespan: f64,
    pub log: Vec<ReconfigRecord>,
    pub rails: Vec<RailCircuits>,
}

/// One iteration as a list schedule: events start in readiness order and
/// reserve the NIC ports of their members; on OCS rails a missing ring is
/// installed first, first-come-first-serve on the ports it touches.
pub(super) fn run(dag: &EventDag, topo: &Topology, cfg: RunConfig) -> Result<RunOutput, FabricError> {
    let n = dag.events.len();
    let ports = topo.nic().ports();
    let rail_bw = topo.rail_bandwidth_bytes_per_s();
    let up_bw = topo.scaleup_bandwidth_bytes_per_s();
    let alpha = cfg.options.alpha_s;

    let mut durations = vec![0.0; n];
    for ev in &dag.events {
        durations[ev.id] = match (ev.kind, ev.coll_kind) {
            (EventKind::Compute, _) => ev.duration_s,
            (EventKind::Collective, Some(kind)) => {
                let bw = if dag.rail_of(ev).is_some() { rail_bw } else { up_bw };
                collective_time(kind, ev.bytes, ev.ranks.len(), bw, alpha)?
            }
            (EventKind::Collective, None) => {
                return Err(FabricError::InvalidDag(format!("collective {} has no kind", ev.id)))
            }
        };
    }

    let succ = dag.successors();
    let mut indeg: Vec<usize> = dag.events.iter().map(|e| e.deps.len()).collect();
    let mut ready_at = vec![0.0f64; n];
    let mut heap: BinaryHeap<Reverse<Ready>> =
        (0..n).filter(|&i| indeg[i] == 0).map(|id| Reverse(Ready { time: 0.0, id })).collect();

    let mut clocks = PortClocks::new(topo.num_ranks(), ports);
    let mut start = vec![f64::NAN; n];
    let mut end = vec![f64::NAN; n];
    let mut served = vec![false; n];
    let mut scheduled = 0usize;
    let mut log = Vec::new();

    let mut ocs = cfg.ocs;
    let mut rails = match &mut ocs {
        Some(o) => std::mem::take(&mut o.initial),
        None => Vec::new(),
    };
    rails.resize(topo.num_rails(), RailCircuits::default());
    let mut queue = FcfsQueue::default();
    let mut barrier = ocs
        .as_ref()
        .and_then(|o| o.schedule)
        .map(RequestBarrier::from_schedule)
        .unwrap_or_default();

    // requests issued at the top of the iteration for the first phase
    if let Some(OcsRun { schedule: Some(sched), .. }) = &ocs {
        for (rank, completed, _) in sched.triggers() {
            if completed.is_none() {
                if let Some(req) = provision(dag, sched, rank, None, 0.0) {
                    if let Some(done) = barrier.submit(req) {
                        queue.push(done);
                    }
                }
            }
        }
    }

    loop {
        let next_event = heap.peek().map(|r| r.0.time);
        let next_req = queue.peek_time();
        let take_req = match (next_req, next_event) {
            (None, None) => break,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(q), Some(e)) => q <= e,
        };

        if take_req {
            let req = queue.pop().expect("peeked");
            let o = ocs.as_ref().expect("requests only exist on OCS rails");
            if req.target.is_some_and(|t| served[t]) {
                continue;
            }
            let Some(circuit) = o.table.cached(&req.group) else { continue };
            let rail = &mut rails[circuit.rail];
            if let Some(rec) = controller_apply(rail, circuit, req.issue_time, o.delay, &mut clocks, true) {
                log.push(rec);
            }
            continue;
        }

        let Reverse(Ready { time: now, id }) = heap.pop().expect("peeked");
        let ev = &dag.events[id];
        let rail = dag.rail_of(ev);
        let (s, e) = match rail {
            None => (now, now + durations[id]),
            Some(rail) => {
                if let (Some(o), Some(group)) = (&ocs, &ev.group) {
                    if let ShimAction::Request(g) = shim_intercept(group, &rails[rail], o.table) {
                        let circuit = o.table.cached(&g).expect("scale-out groups are cached");
                        if let Some(rec) = controller_apply(&mut rails[rail], circuit, now, o.delay, &mut clocks, false) {
                            log.push(rec);
                        }
                    }
                }
                let s = ev.ranks.iter().map(|&r| clocks.rank_free_at(r)).fold(now, f64::max);
                let e = s + durations[id];
                for &r in &ev.ranks {
                    clocks.hold_rank(r, e);
                }
                (s, e)
            }
        };
        start[id] = s;
        end[id] = e;
        served[id] = true;
        scheduled += 1;

        if let (Some(OcsRun { schedule: Some(sched), .. }), Some(_)) = (&ocs, rail) {
            for &r in &ev.ranks {
                if let Some(req) = provision(dag, sched, r, Some(id), e) {
                    if let Some(done) = barrier.submit(req) {
                        queue.push(done);
                    }
                }
            }
        }

        for &s in &succ[id] {
            ready_at[s] = ready_at[s].max(e);
            indeg[s] -= 1;
            if indeg[s] == 0 {
                heap.push(Reverse(Ready { time: ready_at[s], id: s }));
            }
        }
    }

    if scheduled < n {
        return Err(ControlError::ConflictDeadlock(n - scheduled).into());
    }

    let timeline = dag
        .events
        .iter()
        .map(|ev| EventSpan::uniform(ev.ranks.clone(), start[ev.id], end[ev.id]))
        .collect();
    let makespan = end.iter().copied().fold(0.0, f64::max);
    Ok(RunOutput { timeline, makespan, log, rails })
}
