use std::collections::{BTreeMap, BTreeSet};

use super::{EventDag, EventId, EventKind};
use crate::model::{GroupId, RankId};

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    CyclicDependency { event: EventId },
    UnknownDependency { event: EventId, dep: EventId },
    UnknownGroup { event: EventId, group: GroupId },
    MembershipViolation { event: EventId, group: GroupId, missing: Vec<RankId>, extra: Vec<RankId> },
    MalformedEvent { event: EventId, reason: String },
    StreamNotMonotonic { rank: RankId, stream: u32, earlier: EventId, later: EventId },
}

/// Structural checks: acyclicity, group membership of collectives, and
/// per-stream ordering of observed start times. Never fails; an empty list
/// means the DAG is consistent.
pub fn validate_dag(dag: &EventDag) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = dag.events.len();

    for ev in &dag.events {
        for &d in &ev.deps {
            if d >= n {
                out.push(Violation::UnknownDependency { event: ev.id, dep: d });
            }
        }
        if ev.ranks.len() != ev.streams.len() || ev.ranks.is_empty() {
            out.push(Violation::MalformedEvent {
                event: ev.id,
                reason: "ranks and streams must be non-empty and parallel".into(),
            });
        }
        if ev.kind == EventKind::Collective {
            let (Some(gid), Some(_)) = (&ev.group, ev.coll_kind) else {
                out.push(Violation::MalformedEvent {
                    event: ev.id,
                    reason: "collective without group or coll_kind".into(),
                });
                continue;
            };
            let Some(group) = dag.groups.get(gid) else {
                out.push(Violation::UnknownGroup { event: ev.id, group: gid.clone() });
                continue;
            };
            let want: BTreeSet<_> = group.members.iter().copied().collect();
            let have: BTreeSet<_> = ev.ranks.iter().copied().collect();
            if want != have {
                out.push(Violation::MembershipViolation {
                    event: ev.id,
                    group: gid.clone(),
                    missing: want.difference(&have).copied().collect(),
                    extra: have.difference(&want).copied().collect(),
                });
            }
        }
    }

    // acyclicity over the well-formed edges only
    if !out.iter().any(|v| matches!(v, Violation::UnknownDependency { .. })) {
        if let Err(super::WorkloadError::CyclicDependency(event)) = dag.topo_order() {
            out.push(Violation::CyclicDependency { event });
        }
    }

    let mut last: BTreeMap<(RankId, u32), (EventId, f64)> = BTreeMap::new();
    for ev in &dag.events {
        let Some(obs) = &ev.observed else { continue };
        for ((&rank, &stream), &(start, _)) in ev.ranks.iter().zip(&ev.streams).zip(obs) {
            if let Some(&(earlier, prev_start)) = last.get(&(rank, stream)) {
                if start < prev_start {
                    out.push(Violation::StreamNotMonotonic { rank, stream, earlier, later: ev.id });
                }
            }
            last.insert((rank, stream), (ev.id, start));
        }
    }
    out
}
