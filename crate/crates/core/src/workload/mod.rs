//! Per-iteration event DAGs: generation for TP + FSDP + PP (1F1B) training,
//! trace ingestion, and structural validation.

pub(crate) mod generate;
mod trace;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::model::{CommGroup, GroupId, ModelError, RankId, RailId};

pub use generate::{generate_3d_schedule, one_f_one_b, ComputeTimes, PipelineOp, WorkloadParams};
pub use trace::{load_trace, read_trace, write_trace, TRACE_HEADER};
pub use validate::{validate_dag, Violation};

pub type EventId = usize;

/// Issue streams used by the generator. Sends and receives of pipeline
/// traffic sit on separate streams so a rank can post a receive while its
/// previous send is still pending.
pub mod streams {
    pub const COMPUTE: u32 = 0;
    pub const TP: u32 = 1;
    pub const DP: u32 = 2;
    pub const PP_SEND: u32 = 3;
    pub const PP_RECV: u32 = 4;
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload parameters: {0}")]
    InvalidParams(String),
    #[error("trace parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cyclic dependency involving event {0}")]
    CyclicDependency(EventId),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trace I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Compute,
    Collective,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Compute => "compute",
            EventKind::Collective => "collective",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CollKind {
    AllReduce,
    AllGather,
    ReduceScatter,
    SendRecv,
    AllToAll,
}

impl CollKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CollKind::AllReduce => "allreduce",
            CollKind::AllGather => "allgather",
            CollKind::ReduceScatter => "reducescatter",
            CollKind::SendRecv => "sendrecv",
            CollKind::AllToAll => "alltoall",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "allreduce" => CollKind::AllReduce,
            "allgather" => CollKind::AllGather,
            "reducescatter" => CollKind::ReduceScatter,
            "sendrecv" => CollKind::SendRecv,
            "alltoall" => CollKind::AllToAll,
            _ => return None,
        })
    }
}

impl fmt::Display for CollKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One node of the iteration DAG. `ranks` and `streams` are parallel: the
/// stream a rank issues the event on.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub id: EventId,
    pub kind: EventKind,
    pub ranks: Vec<RankId>,
    pub streams: Vec<u32>,
    pub group: Option<GroupId>,
    pub coll_kind: Option<CollKind>,
    /// Payload per participating rank.
    pub bytes: u64,
    /// Compute duration; zero for collectives.
    pub duration_s: f64,
    pub deps: Vec<EventId>,
    /// Observed (start, end) per rank, parallel to `ranks`, when replaying a trace.
    pub observed: Option<Vec<(f64, f64)>>,
}

impl Event {
    pub fn is_collective(&self) -> bool {
        self.kind == EventKind::Collective
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventDag {
    pub events: Vec<Event>,
    pub groups: BTreeMap<GroupId, CommGroup>,
}

impl EventDag {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn group_of(&self, ev: &Event) -> Option<&CommGroup> {
        ev.group.as_ref().and_then(|g| self.groups.get(g))
    }

    /// Scale-out rail of a collective; `None` for compute and scale-up events.
    pub fn rail_of(&self, ev: &Event) -> Option<RailId> {
        if !ev.is_collective() {
            return None;
        }
        self.group_of(ev).and_then(|g| g.rail())
    }

    pub fn successors(&self) -> Vec<Vec<EventId>> {
        let mut succ = vec![Vec::new(); self.events.len()];
        for ev in &self.events {
            for &d in &ev.deps {
                if d < succ.len() {
                    succ[d].push(ev.id);
                }
            }
        }
        succ
    }

    /// Kahn order with ties broken by id; errors on the first event left in a cycle.
    pub fn topo_order(&self) -> Result<Vec<EventId>, WorkloadError> {
        topo_order(self.events.len(), |i| self.events[i].deps.as_slice())
    }

    pub fn rail_collectives(&self, rail: RailId) -> impl Iterator<Item = &Event> + '_ {
        self.events
            .iter()
            .filter(move |ev| self.rail_of(ev) == Some(rail))
    }

    pub fn scale_out_collective_count(&self) -> usize {
        self.events.iter().filter(|ev| self.rail_of(ev).is_some()).count()
    }
}

pub(crate) fn topo_order<'a>(
    n: usize,
    deps: impl Fn(usize) -> &'a [EventId],
) -> Result<Vec<EventId>, WorkloadError> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let mut indeg = vec![0usize; n];
    let mut succ = vec![Vec::new(); n];
    for i in 0..n {
        for &d in deps(i) {
            indeg[i] += 1;
            succ[d].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap_or(0);
        return Err(WorkloadError::CyclicDependency(stuck));
    }
    Ok(order)
}
