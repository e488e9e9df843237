//! Line-delimited trace format: a CSV header, then one record per
//! (rank, event). Group membership is declared by `kind=group` records, one
//! per member, before any collective that references the group.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::{CollKind, Event, EventDag, EventKind, WorkloadError};
use crate::model::{Axis, CommGroup, GroupId, RankId, Topology};

pub const TRACE_HEADER: [&str; 12] = [
    "event_id",
    "rank",
    "stream",
    "kind",
    "coll_kind",
    "group_id",
    "bytes",
    "dep_ids",
    "observed_start_s",
    "observed_end_s",
    "duration_s",
    "axis",
];

const REQUIRED: usize = 10;

pub fn load_trace(path: &Path, topo: &Topology) -> Result<EventDag, WorkloadError> {
    let file = std::fs::File::open(path)?;
    read_trace(file, topo)
}

struct Columns {
    idx: [Option<usize>; 12],
}

impl Columns {
    fn get<'r>(&self, rec: &'r csv::StringRecord, col: usize) -> &'r str {
        self.idx[col].and_then(|i| rec.get(i)).unwrap_or("").trim()
    }
}

struct Pending {
    kind: EventKind,
    coll_kind: Option<CollKind>,
    group: Option<GroupId>,
    bytes: u64,
    duration_s: Option<f64>,
    ranks: Vec<RankId>,
    streams: Vec<u32>,
    explicit_deps: Vec<(u64, usize)>,
    observed: Vec<Option<(f64, f64)>>,
    line: usize,
}

pub fn read_trace<R: Read>(reader: R, topo: &Topology) -> Result<EventDag, WorkloadError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(EventDag::default()),
        Some(h) => h.map_err(|e| csv_err(e, 1))?,
    };
    let mut cols = Columns { idx: [None; 12] };
    for (i, name) in header.iter().enumerate() {
        if let Some(c) = TRACE_HEADER.iter().position(|h| *h == name.trim()) {
            cols.idx[c] = Some(i);
        }
    }
    for (c, name) in TRACE_HEADER.iter().enumerate().take(REQUIRED) {
        if cols.idx[c].is_none() {
            return Err(WorkloadError::Parse { line: 1, message: format!("missing column `{name}`") });
        }
    }

    let mut group_decl: BTreeMap<GroupId, (Axis, Vec<RankId>, usize)> = BTreeMap::new();
    let mut order: Vec<u64> = Vec::new();
    let mut pending: HashMap<u64, Pending> = HashMap::new();
    // (rank, stream) -> last external event id issued there
    let mut last_on_stream: HashMap<(RankId, u32), u64> = HashMap::new();
    let mut stream_deps: Vec<(u64, u64)> = Vec::new();

    for (n, rec) in records.enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| csv_err(e, line))?;
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let perr = |message: String| WorkloadError::Parse { line, message };
        let kind = cols.get(&rec, 3);
        let rank: RankId = parse_num(cols.get(&rec, 1), "rank").map_err(perr)?;
        if topo.rank(rank).is_none() {
            return Err(perr(format!("rank {rank} outside topology of {} ranks", topo.num_ranks())));
        }
        if kind == "group" {
            let gid = cols.get(&rec, 5);
            if gid.is_empty() {
                return Err(perr("group record without group_id".into()));
            }
            let axis_s = cols.get(&rec, 11);
            let axis = Axis::parse(axis_s).ok_or_else(|| perr(format!("unknown axis `{axis_s}`")))?;
            let entry = group_decl.entry(GroupId::new(gid)).or_insert((axis, Vec::new(), line));
            if entry.0 != axis {
                return Err(perr(format!("group {gid} declared with conflicting axes")));
            }
            entry.1.push(rank);
            continue;
        }

        let event_id: u64 = parse_num(cols.get(&rec, 0), "event_id").map_err(perr)?;
        let stream: u32 = parse_num(cols.get(&rec, 2), "stream").map_err(perr)?;
        let ev_kind = match kind {
            "compute" => EventKind::Compute,
            "collective" => EventKind::Collective,
            other => return Err(perr(format!("unknown kind `{other}`"))),
        };
        let (coll_kind, group) = if ev_kind == EventKind::Collective {
            let ck_s = cols.get(&rec, 4);
            let ck = CollKind::parse(ck_s).ok_or_else(|| perr(format!("unknown coll_kind `{ck_s}`")))?;
            let gid = GroupId::new(cols.get(&rec, 5));
            if !group_decl.contains_key(&gid) {
                return Err(perr(format!("unknown group id `{gid}`")));
            }
            (Some(ck), Some(gid))
        } else {
            (None, None)
        };
        let bytes_s = cols.get(&rec, 6);
        let bytes: u64 = if bytes_s.is_empty() { 0 } else { parse_num(bytes_s, "bytes").map_err(perr)? };
        let dur_s = cols.get(&rec, 10);
        let duration_s = if dur_s.is_empty() { None } else { Some(parse_f64(dur_s, "duration_s").map_err(perr)?) };
        let start_s = cols.get(&rec, 8);
        let end_s = cols.get(&rec, 9);
        let observed = match (start_s.is_empty(), end_s.is_empty()) {
            (true, true) => None,
            (false, false) => Some((
                parse_f64(start_s, "observed_start_s").map_err(perr)?,
                parse_f64(end_s, "observed_end_s").map_err(perr)?,
            )),
            _ => return Err(perr("observed_start_s and observed_end_s must both be set".into())),
        };
        let mut explicit = Vec::new();
        for d in cols.get(&rec, 7).split(';').map(str::trim).filter(|d| !d.is_empty()) {
            explicit.push((parse_num::<u64>(d, "dep_ids").map_err(perr)?, line));
        }

        let p = pending.entry(event_id).or_insert_with(|| {
            order.push(event_id);
            Pending {
                kind: ev_kind,
                coll_kind,
                group: group.clone(),
                bytes,
                duration_s,
                ranks: Vec::new(),
                streams: Vec::new(),
                explicit_deps: Vec::new(),
                observed: Vec::new(),
                line,
            }
        });
        if p.kind != ev_kind || p.coll_kind != coll_kind || p.group != group || p.bytes != bytes {
            return Err(perr(format!("records of event {event_id} disagree on kind, group or bytes")));
        }
        if p.ranks.contains(&rank) {
            return Err(perr(format!("duplicate record for event {event_id} on rank {rank}")));
        }
        p.duration_s = p.duration_s.or(duration_s);
        p.ranks.push(rank);
        p.streams.push(stream);
        p.explicit_deps.extend(explicit);
        p.observed.push(observed);

        if let Some(prev) = last_on_stream.insert((rank, stream), event_id) {
            if prev != event_id {
                stream_deps.push((event_id, prev));
            }
        }
    }

    let mut groups = BTreeMap::new();
    for (gid, (axis, members, line)) in group_decl {
        let g = CommGroup::with_order(gid.clone(), axis, members, topo)
            .map_err(|e| WorkloadError::Parse { line, message: e.to_string() })?;
        groups.insert(gid, g);
    }

    let dense: HashMap<u64, usize> = order.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut events: Vec<Event> = Vec::with_capacity(order.len());
    for (i, ext) in order.iter().enumerate() {
        let p = pending.remove(ext).expect("every ordered id has a pending entry");
        let mut deps = Vec::new();
        for (d, line) in &p.explicit_deps {
            let di = *dense
                .get(d)
                .ok_or_else(|| WorkloadError::Parse { line: *line, message: format!("unknown dependency {d}") })?;
            deps.push(di);
        }
        let observed = if p.observed.iter().all(Option::is_some) && !p.observed.is_empty() {
            Some(p.observed.iter().map(|o| o.unwrap()).collect())
        } else {
            None
        };
        if p.kind == EventKind::Compute && p.duration_s.is_none() && observed.is_none() {
            return Err(WorkloadError::Parse {
                line: p.line,
                message: format!("compute event {ext} has neither duration_s nor observed times"),
            });
        }
        // without an explicit duration, a compute event lasts as long as its
        // longest observed per-rank interval
        let duration_s = p.duration_s.unwrap_or_else(|| {
            observed
                .as_ref()
                .map_or(0.0, |o: &Vec<(f64, f64)>| o.iter().map(|(s, e)| e - s).fold(0.0, f64::max))
        });
        events.push(Event {
            id: i,
            kind: p.kind,
            ranks: p.ranks,
            streams: p.streams,
            group: p.group,
            coll_kind: p.coll_kind,
            bytes: p.bytes,
            duration_s,
            deps,
            observed,
        });
    }
    for (ev, prev) in stream_deps {
        let (e, p) = (dense[&ev], dense[&prev]);
        if !events[e].deps.contains(&p) {
            events[e].deps.push(p);
        }
    }
    for ev in &mut events {
        ev.deps.sort_unstable();
        ev.deps.dedup();
    }
    let dag = EventDag { events, groups };
    dag.topo_order()?;
    Ok(dag)
}

fn csv_err(e: csv::Error, line: usize) -> WorkloadError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    WorkloadError::Parse { line, message: e.to_string() }
}

fn parse_num<T: std::str::FromStr>(s: &str, field: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("invalid {field} `{s}`"))
}

fn parse_f64(s: &str, field: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("invalid {field} `{s}`")),
    }
}

/// Writes `dag` in trace form. Each record carries the dependencies that
/// involve its own rank; dependencies touching none of the event's ranks go
/// on the event's first record.
pub fn write_trace<W: Write>(dag: &EventDag, writer: W) -> Result<(), WorkloadError> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let io = |e: csv::Error| WorkloadError::Io(std::io::Error::other(e.to_string()));
    w.write_record(TRACE_HEADER).map_err(io)?;
    for g in dag.groups.values() {
        for &m in &g.members {
            let rank = m.to_string();
            w.write_record(["", &rank, "", "group", "", g.id.as_str(), "", "", "", "", "", g.axis.as_str()])
                .map_err(io)?;
        }
    }
    for ev in &dag.events {
        let id = ev.id.to_string();
        let bytes = ev.bytes.to_string();
        let coll = ev.coll_kind.map(|c| c.as_str()).unwrap_or("");
        let group = ev.group.as_ref().map(|g| g.as_str()).unwrap_or("");
        let duration = if ev.kind == EventKind::Compute { ev.duration_s.to_string() } else { String::new() };
        for (pos, (&rank, &stream)) in ev.ranks.iter().zip(&ev.streams).enumerate() {
            let deps: Vec<String> = ev
                .deps
                .iter()
                .filter(|&&d| {
                    let dr = &dag.events[d].ranks;
                    dr.contains(&rank) || (pos == 0 && !ev.ranks.iter().any(|r| dr.contains(r)))
                })
                .map(|d| d.to_string())
                .collect();
            let (os, oe) = match &ev.observed {
                Some(obs) => (obs[pos].0.to_string(), obs[pos].1.to_string()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                id.as_str(),
                &rank.to_string(),
                &stream.to_string(),
                ev.kind.as_str(),
                coll,
                group,
                &bytes,
                &deps.join(";"),
                &os,
                &oe,
                &duration,
                "",
            ])
            .map_err(io)?;
        }
    }
    w.flush()?;
    Ok(())
}
