//! Idle windows between consecutive parallelism phases on a rail, their
//! distribution, and the closed-form window-count bound.

use std::collections::BTreeSet;
use std::io::Write;

use thiserror::Error;

use crate::model::{Axis, GroupId, RailId, RankId};
use crate::workload::{EventDag, EventId};

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("phase {0} contains no events")]
    EmptyPhase(usize),
    #[error("no windows to summarize")]
    EmptyInput,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("event {0} has no timing")]
    MissingTiming(EventId),
}

/// Per-rank execution interval of one event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSpan {
    pub ranks: Vec<RankId>,
    pub starts: Vec<f64>,
    pub ends: Vec<f64>,
}

impl EventSpan {
    pub fn uniform(ranks: Vec<RankId>, start: f64, end: f64) -> Self {
        let n = ranks.len();
        Self { ranks, starts: vec![start; n], ends: vec![end; n] }
    }

    /// The collective starts only once its slowest member has joined.
    pub fn comm_start(&self) -> f64 {
        self.starts.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn comm_end(&self) -> f64 {
        self.ends.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Timing of every event, indexed by event id.
pub type Timeline = Vec<EventSpan>;

/// Builds a timeline from a trace's observed timestamps, if every event has them.
pub fn timeline_from_observed(dag: &EventDag) -> Option<Timeline> {
    dag.events
        .iter()
        .map(|ev| {
            let obs = ev.observed.as_ref()?;
            Some(EventSpan {
                ranks: ev.ranks.clone(),
                starts: obs.iter().map(|o| o.0).collect(),
                ends: obs.iter().map(|o| o.1).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub id: usize,
    pub rail: RailId,
    pub groups: BTreeSet<GroupId>,
    pub events: Vec<EventId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub rail: RailId,
    pub before_phase: usize,
    pub after_phase: usize,
    pub start: f64,
    pub end: f64,
    pub size: f64,
    pub next_volume_bytes: u64,
}

/// A phase pair where the next phase started before the previous one ended.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    pub rail: RailId,
    pub before_phase: usize,
    pub after_phase: usize,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowReport {
    pub windows: Vec<Window>,
    pub overlaps: Vec<Overlap>,
}

/// Splits the scale-out collectives of `rail` into phases: collectives are
/// ordered by start time (ties by id) and cut wherever the axis family
/// changes, so DP and FSDP traffic share a phase.
pub fn rail_phases(dag: &EventDag, timeline: &Timeline, rail: RailId) -> Result<Vec<Phase>, WindowError> {
    let mut colls: Vec<(f64, EventId, Axis, GroupId)> = Vec::new();
    for ev in dag.rail_collectives(rail) {
        let span = timeline.get(ev.id).ok_or(WindowError::MissingTiming(ev.id))?;
        let group = dag.group_of(ev).expect("rail collectives have groups");
        colls.push((span.comm_start(), ev.id, group.axis.family(), group.id.clone()));
    }
    colls.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut phases: Vec<Phase> = Vec::new();
    let mut current: Option<Axis> = None;
    for (_, id, family, group) in colls {
        if current != Some(family) {
            phases.push(Phase { id: phases.len(), rail, groups: BTreeSet::new(), events: Vec::new() });
            current = Some(family);
        }
        let phase = phases.last_mut().expect("pushed above");
        phase.groups.insert(group);
        phase.events.push(id);
    }
    Ok(phases)
}

/// Applies the window definition to each consecutive phase pair: the window
/// opens when the last collective of the earlier phase ends and closes when
/// the first collective of the later phase starts.
pub fn extract_windows(dag: &EventDag, timeline: &Timeline, phases: &[Phase]) -> Result<WindowReport, WindowError> {
    let span = |id: EventId| timeline.get(id).ok_or(WindowError::MissingTiming(id));
    let mut report = WindowReport::default();
    for pair in phases.windows(2) {
        let (p1, p2) = (&pair[0], &pair[1]);
        for p in [p1, p2] {
            if p.events.is_empty() {
                return Err(WindowError::EmptyPhase(p.id));
            }
        }
        let mut start = f64::NEG_INFINITY;
        for &e in &p1.events {
            start = start.max(span(e)?.comm_end());
        }
        let mut end = f64::INFINITY;
        let mut first = p2.events[0];
        for &e in &p2.events {
            let s = span(e)?.comm_start();
            if s < end {
                end = s;
                first = e;
            }
        }
        if end >= start {
            report.windows.push(Window {
                rail: p1.rail,
                before_phase: p1.id,
                after_phase: p2.id,
                start,
                end,
                size: end - start,
                next_volume_bytes: dag.events.get(first).map_or(0, |ev| ev.bytes),
            });
        } else {
            report.overlaps.push(Overlap {
                rail: p1.rail,
                before_phase: p1.id,
                after_phase: p2.id,
                magnitude: start - end,
            });
        }
    }
    Ok(report)
}

/// Segments and extracts windows on every rail touched by `dag`.
pub fn analyze(dag: &EventDag, timeline: &Timeline, num_rails: usize) -> Result<WindowReport, WindowError> {
    let mut all = WindowReport::default();
    for rail in 0..num_rails {
        let phases = rail_phases(dag, timeline, rail)?;
        let r = extract_windows(dag, timeline, &phases)?;
        all.windows.extend(r.windows);
        all.overlaps.extend(r.overlaps);
    }
    Ok(all)
}

/// Empirical CDF as (size, fraction of windows with size ≤ that value).
pub fn window_cdf(windows: &[Window]) -> Result<Vec<(f64, f64)>, WindowError> {
    if windows.is_empty() {
        return Err(WindowError::EmptyInput);
    }
    let mut sizes: Vec<f64> = windows.iter().map(|w| w.size).collect();
    sizes.sort_by(f64::total_cmp);
    let n = sizes.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, s) in sizes.into_iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == s => last.1 = frac,
            _ => out.push((s, frac)),
        }
    }
    Ok(out)
}

/// Byte edges matching the synchronization / activation / parameter / gradient
/// traffic of the reference scenario.
pub const DEFAULT_CLASS_EDGES: [u64; 4] = [1_000_000, 64_000_000, 957_000_000, 3_829_000_000];

/// Class index of a volume: number of edges ≤ `bytes`, so a volume sitting
/// exactly on an edge belongs to the upper class.
pub fn class_index(edges: &[u64], bytes: u64) -> usize {
    edges.partition_point(|&e| e <= bytes)
}

pub fn format_bytes(bytes: u64) -> String {
    const UNITS: [(u64, &str); 3] = [(1_000_000_000_000, "TB"), (1_000_000, "MB"), (1_000, "KB")];
    for (scale, unit) in UNITS {
        if bytes >= scale && bytes % scale == 0 {
            return format!("{}{unit}", bytes / scale);
        }
    }
    if bytes >= 1_000_000 {
        return format!("{}MB", bytes as f64 / 1e6);
    }
    format!("{bytes}B")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub index: usize,
    pub label: String,
    pub count: usize,
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

fn range_label(edges: &[u64], idx: usize) -> String {
    match (idx.checked_sub(1).map(|i| edges[i]), edges.get(idx)) {
        (None, Some(&hi)) => format!("<{}", format_bytes(hi)),
        (Some(lo), Some(&hi)) => format!("{}-{}", format_bytes(lo), format_bytes(hi)),
        (Some(lo), None) => format!(">={}", format_bytes(lo)),
        (None, None) => "all".into(),
    }
}

/// Per-class statistics for the nonempty classes, in class order. A class
/// whose windows all share one volume is labelled with that exact value.
pub fn classify_by_volume(windows: &[Window], edges: &[u64]) -> Result<Vec<ClassStats>, WindowError> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(WindowError::InvalidParams("class edges must be strictly increasing".into()));
    }
    let mut out = Vec::new();
    for idx in 0..=edges.len() {
        let members: Vec<&Window> = windows
            .iter()
            .filter(|w| class_index(edges, w.next_volume_bytes) == idx)
            .collect();
        if members.is_empty() {
            continue;
        }
        let distinct: BTreeSet<u64> = members.iter().map(|w| w.next_volume_bytes).collect();
        let label = if distinct.len() == 1 {
            format_bytes(*distinct.first().expect("nonempty"))
        } else {
            range_label(edges, idx)
        };
        let sizes: Vec<f64> = members.iter().map(|w| w.size).collect();
        out.push(ClassStats {
            index: idx,
            label,
            count: sizes.len(),
            mean_s: sizes.iter().sum::<f64>() / sizes.len() as f64,
            min_s: sizes.iter().copied().fold(f64::INFINITY, f64::min),
            max_s: sizes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(out)
}

/// Upper bound on windows per iteration for PP + FSDP training, with the
/// CP/EP-dependent terms gated on the presence of those axes.
pub fn eq1_bound(pp: u64, n_layer: u64, n_microbatch: u64, has_cp: bool, has_ep: bool) -> Result<u64, WindowError> {
    if pp == 0 {
        return Err(WindowError::InvalidParams("pp must be at least 1".into()));
    }
    if n_layer == 0 || n_layer % pp != 0 {
        return Err(WindowError::InvalidParams(format!(
            "n_layer ({n_layer}) must be a positive multiple of pp ({pp})"
        )));
    }
    let per_stage = 2 * n_layer / pp - 1;
    let mut total = 4 * (pp - 1) + 4;
    if has_cp || has_ep {
        total += per_stage + 4 * n_microbatch;
    }
    if has_cp && has_ep {
        total += 2 * n_microbatch * per_stage;
    }
    Ok(total)
}

pub fn write_windows_csv<W: Write>(windows: &[Window], edges: &[u64], out: W) -> csv::Result<()> {
    let labels: Vec<(usize, String)> = classify_by_volume(windows, edges)
        .unwrap_or_default()
        .into_iter()
        .map(|c| (c.index, c.label))
        .collect();
    let label = |bytes| {
        let idx = class_index(edges, bytes);
        labels.iter().find(|(i, _)| *i == idx).map(|(_, l)| l.as_str()).unwrap_or("")
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rail", "start", "end", "size_s", "next_volume_bytes", "class"])?;
    for win in windows {
        w.write_record([
            win.rail.to_string(),
            win.start.to_string(),
            win.end.to_string(),
            win.size.to_string(),
            win.next_volume_bytes.to_string(),
            label(win.next_volume_bytes).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cdf_csv<W: Write>(cdf: &[(f64, f64)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["size_s", "fraction"])?;
    for (s, f) in cdf {
        w.write_record([s.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
