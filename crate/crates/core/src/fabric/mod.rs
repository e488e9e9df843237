//! Deterministic discrete-event simulation of one training iteration over a
//! rail-optimized fabric with electrical or optical-circuit rails.

mod engine;
mod report;

use rayon::prelude::*;
use thiserror::Error;

pub use report::{sweep_svg, write_reconfig_csv, write_sweep_csv, write_timeline_csv};

use crate::control::{
    profile_iteration, ControlError, ControlPolicy, GroupTable, PortId, RailCircuits, ReconfigRecord, Schedule,
};
use crate::model::{ModelError, Topology};
use crate::windows::Timeline;
use crate::workload::{CollKind, EventDag};
use engine::{run, OcsRun, RunConfig};

#[derive(Debug, Error, PartialEq)]
pub enum FabricError {
    #[error("collective kind {0} is not supported on ring-only rails")]
    UnsupportedKind(CollKind),
    #[error("invalid collective parameters: {0}")]
    InvalidParams(String),
    #[error("invalid event DAG: {0}")]
    InvalidDag(String),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const DEFAULT_ALPHA_S: f64 = 1e-6;

/// Ring-algorithm duration of one collective under the α–β model.
/// `bytes_per_rank` is each member's payload.
pub fn collective_time(
    kind: CollKind,
    bytes_per_rank: u64,
    n: usize,
    bandwidth_bytes_per_s: f64,
    alpha_s: f64,
) -> Result<f64, FabricError> {
    if kind == CollKind::AllToAll {
        return Err(FabricError::UnsupportedKind(kind));
    }
    if n == 0 {
        return Err(FabricError::InvalidParams("group size must be at least 1".into()));
    }
    if !(bandwidth_bytes_per_s > 0.0) {
        return Err(FabricError::InvalidParams(format!("bandwidth must be positive, got {bandwidth_bytes_per_s}")));
    }
    if n == 1 {
        return Ok(0.0);
    }
    let s = bytes_per_rank as f64 / bandwidth_bytes_per_s;
    let steps = (n - 1) as f64;
    let frac = steps / n as f64;
    Ok(match kind {
        CollKind::AllReduce => 2.0 * frac * s + 2.0 * steps * alpha_s,
        CollKind::AllGather | CollKind::ReduceScatter => frac * s + steps * alpha_s,
        CollKind::SendRecv => s + alpha_s,
        CollKind::AllToAll => unreachable!(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub alpha_s: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { alpha_s: DEFAULT_ALPHA_S }
    }
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub makespan: f64,
    /// Per-event start and end on every member rank, indexed by event id.
    pub event_times: Timeline,
    pub reconfig_log: Vec<ReconfigRecord>,
    /// Makespan of the same iteration on electrical rails.
    pub baseline_makespan: f64,
    pub overhead_vs_baseline: f64,
    /// Schedule profiled during the cold first iteration (OCS only).
    pub profile: Option<Schedule>,
    /// Circuits per rail at the start of the reported iteration (OCS only).
    pub initial_circuits: Vec<Vec<(PortId, PortId)>>,
}

pub fn simulate(dag: &EventDag, topo: &Topology, policy: ControlPolicy) -> Result<SimResult, FabricError> {
    simulate_with(dag, topo, policy, &SimOptions::default())
}

fn check_dag(dag: &EventDag, topo: &Topology) -> Result<(), FabricError> {
    for (i, ev) in dag.events.iter().enumerate() {
        if ev.id != i {
            return Err(FabricError::InvalidDag(format!("event at position {i} has id {}", ev.id)));
        }
        if let Some(&r) = ev.ranks.iter().find(|&&r| r >= topo.num_ranks()) {
            return Err(FabricError::InvalidDag(format!("event {i} uses rank {r} outside the topology")));
        }
        if let Some(&d) = ev.deps.iter().find(|&&d| d >= dag.events.len()) {
            return Err(FabricError::InvalidDag(format!("event {i} depends on unknown event {d}")));
        }
        if ev.is_collective() && ev.group.is_some() && dag.group_of(ev).is_none() {
            return Err(FabricError::InvalidDag(format!("event {i} references an undeclared group")));
        }
    }
    Ok(())
}

fn electrical(dag: &EventDag, topo: &Topology, options: &SimOptions) -> Result<engine::RunOutput, FabricError> {
    run(dag, &topo.electrical_baseline(), RunConfig { ocs: None, options })
}

/// Simulates one steady-state iteration.
///
/// Electrical rails run the DAG once. OCS rails run a cold profiling
/// iteration with on-demand reconfiguration, then report a second iteration
/// that starts from the circuits the first one left behind and, under
/// [`ControlPolicy::Provisioning`], replays the profiled schedule.
pub fn simulate_with(
    dag: &EventDag,
    topo: &Topology,
    policy: ControlPolicy,
    options: &SimOptions,
) -> Result<SimResult, FabricError> {
    check_dag(dag, topo)?;
    let baseline = electrical(dag, topo, options)?;
    if !topo.rail_switch().is_ocs() {
        return Ok(SimResult {
            makespan: baseline.makespan,
            event_times: baseline.timeline,
            reconfig_log: Vec::new(),
            baseline_makespan: baseline.makespan,
            overhead_vs_baseline: 1.0,
            profile: None,
            initial_circuits: Vec::new(),
        });
    }
    let mut used = Vec::new();
    for ev in dag.events.iter().filter(|ev| dag.rail_of(ev).is_some()) {
        used.push(dag.group_of(ev).expect("rail collectives have groups"));
    }
    used.sort_by(|a, b| a.id.cmp(&b.id));
    used.dedup_by(|a, b| a.id == b.id);
    let table = GroupTable::populate(used, topo.nic().ports())?;
    let delay = topo.rail_switch().reconfig_delay_s();

    let cold = run(
        dag,
        topo,
        RunConfig { ocs: Some(OcsRun { table: &table, delay, initial: Vec::new(), schedule: None }), options },
    )?;
    let profile = profile_iteration(dag, &cold.timeline, topo.num_rails());
    let schedule = (policy == ControlPolicy::Provisioning).then_some(&profile);
    let initial_circuits = cold.rails.iter().map(RailCircuits::circuits).collect();
    let warm = run(
        dag,
        topo,
        RunConfig { ocs: Some(OcsRun { table: &table, delay, initial: cold.rails, schedule }), options },
    )?;
    Ok(SimResult {
        makespan: warm.makespan,
        event_times: warm.timeline,
        reconfig_log: warm.log,
        baseline_makespan: baseline.makespan,
        overhead_vs_baseline: ratio(warm.makespan, baseline.makespan),
        profile: Some(profile),
        initial_circuits,
    })
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub delay_s: f64,
    pub policy: ControlPolicy,
    pub makespan_s: f64,
    pub overhead: f64,
}

/// Simulates every (delay, policy) pair, in parallel when `parallel` is set.
/// Rows come back in input order: delays outer, policies inner.
pub fn sweep_delay(
    dag: &EventDag,
    topo: &Topology,
    delays: &[f64],
    policies: &[ControlPolicy],
    options: &SimOptions,
    parallel: bool,
) -> Result<Vec<SweepRow>, FabricError> {
    if let Some(d) = delays.iter().find(|d| !(**d >= 0.0)) {
        return Err(FabricError::InvalidParams(format!("delays must be >= 0, got {d}")));
    }
    let points: Vec<(f64, ControlPolicy)> =
        delays.iter().flat_map(|&d| policies.iter().map(move |&p| (d, p))).collect();
    let eval = |&(d, p): &(f64, ControlPolicy)| -> Result<SweepRow, FabricError> {
        let t = topo.with_reconfig_delay(d)?;
        let r = simulate_with(dag, &t, p, options)?;
        Ok(SweepRow { delay_s: d, policy: p, makespan_s: r.makespan, overhead: r.overhead_vs_baseline })
    };
    if parallel {
        points.par_iter().map(eval).collect()
    } else {
        points.iter().map(eval).collect()
    }
}
