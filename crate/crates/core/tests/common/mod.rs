#![allow(dead_code)]

use std::collections::BTreeMap;

use opus_core::control::{ring_config, PortId};
use opus_core::fabric::SimResult;
use opus_core::model::{build_topology, RailSwitch, Topology, TopologySpec};
use opus_core::workload::{ComputeTimes, EventDag, WorkloadParams};

pub const SCENARIO_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/llama3_8b_4x4.toml");

pub fn topology(domains: usize, delay_s: f64) -> Topology {
    build_topology(&TopologySpec {
        num_domains: domains,
        gpus_per_domain: 4,
        scaleup_bandwidth_bytes_per_s: 900e9,
        nic_ports: 2,
        nic_bandwidth_bps: 400e9,
        rail_switch: RailSwitch::Ocs { reconfig_delay_s: delay_s, radix: 64 },
    })
    .unwrap()
}

/// Llama3-8B-like payloads and compute times with a configurable pipeline shape.
pub fn workload(pp: usize, dp: usize, n_layer: usize, n_microbatch: usize, seed: u64) -> WorkloadParams {
    WorkloadParams {
        pp,
        dp,
        tp: 4,
        n_layer,
        n_microbatch,
        bytes_per_layer_param: 957_000_000,
        bytes_per_layer_grad: Some(3_829_000_000),
        bytes_activation: 64_000_000,
        bytes_sync_allreduce: 4096,
        n_sync_allreduce: 2,
        bytes_tp_allreduce: 100_000_000,
        compute: ComputeTimes { fwd_layer_s: 0.11, bwd_layer_s: 0.22, optimizer_s: 0.05, issue_latency_s: 0.002 },
        jitter: 0.05,
        seed,
    }
}

/// Replays the reconfiguration log against the timeline and reports every
/// breach of: one circuit per port, no switching under live traffic, at most
/// one circuit per NIC port of a rank, and every rail collective running on
/// its installed ring.
pub fn safety_violations(dag: &EventDag, topo: &Topology, r: &SimResult) -> Vec<String> {
    let mut out = Vec::new();
    let ports = topo.nic().ports();
    let eps = 1e-12;

    // transfer intervals per rank
    let mut busy: BTreeMap<usize, Vec<(f64, f64, usize)>> = BTreeMap::new();
    for ev in &dag.events {
        if dag.rail_of(ev).is_none() {
            continue;
        }
        let span = &r.event_times[ev.id];
        for (i, &rank) in span.ranks.iter().enumerate() {
            busy.entry(rank).or_default().push((span.starts[i], span.ends[i], ev.id));
        }
    }

    // (b) no switching overlaps a transfer on a touched port
    for rec in &r.reconfig_log {
        for p in &rec.touched {
            for &(s, e, id) in busy.get(&p.rank).map(Vec::as_slice).unwrap_or(&[]) {
                if s.max(rec.time) < e.min(rec.ready) - eps {
                    out.push(format!("reconfig of {} at {} overlaps event {id} on port {p}", rec.group, rec.time));
                }
            }
        }
    }

    // replay circuits per rail in booking order; check (a), (c), and that each
    // collective finds its ring at transfer start
    let mut state: Vec<BTreeMap<PortId, PortId>> = vec![BTreeMap::new(); topo.num_rails()];
    for (rail, circuits) in r.initial_circuits.iter().enumerate() {
        for &(a, b) in circuits {
            state[rail].insert(a, b);
            state[rail].insert(b, a);
        }
    }
    let mut timeline: Vec<(f64, u8, usize)> = Vec::new();
    for (i, rec) in r.reconfig_log.iter().enumerate() {
        timeline.push((rec.ready, 0, i));
    }
    for ev in &dag.events {
        if dag.rail_of(ev).is_some() && topo.rail_switch().is_ocs() {
            timeline.push((r.event_times[ev.id].comm_start(), 1, ev.id));
        }
    }
    timeline.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (_, kind, idx) in timeline {
        if kind == 0 {
            let rec = &r.reconfig_log[idx];
            let st = &mut state[rec.rail];
            for p in &rec.touched {
                if let Some(old) = st.remove(p) {
                    st.remove(&old);
                }
            }
            for &(a, b) in &rec.pairs {
                for p in [a, b] {
                    if st.contains_key(&p) {
                        out.push(format!("port {p} already in a circuit when {} is installed", rec.group));
                    }
                }
                st.insert(a, b);
                st.insert(b, a);
            }
            let mut per_rank: BTreeMap<usize, u32> = BTreeMap::new();
            for p in st.keys() {
                *per_rank.entry(p.rank).or_default() += 1;
                if p.port >= ports {
                    out.push(format!("port {p} beyond NIC port count {ports}"));
                }
            }
            if let Some((rank, n)) = per_rank.into_iter().find(|&(_, n)| n > ports) {
                out.push(format!("rank {rank} holds {n} circuits with {ports} ports"));
            }
        } else {
            let ev = &dag.events[idx];
            let group = dag.group_of(ev).unwrap();
            let cfg = ring_config(group, ports).unwrap();
            let st = &state[cfg.rail];
            if !cfg.pairs.is_empty() && !cfg.pairs.iter().all(|(a, b)| st.get(a) == Some(b)) {
                out.push(format!("event {idx} started without the ring of {}", group.id));
            }
        }
    }
    out
}
