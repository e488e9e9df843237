use std::fmt::Write as _;
use std::io::Write;

use super::SweepRow;
use crate::control::{ControlPolicy, ReconfigRecord};
use crate::windows::Timeline;

pub fn write_timeline_csv<W: Write>(timeline: &Timeline, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["event_id", "rank", "start_s", "end_s"])?;
    for (id, span) in timeline.iter().enumerate() {
        for ((r, s), e) in span.ranks.iter().zip(&span.starts).zip(&span.ends) {
            w.write_record([id.to_string(), r.to_string(), s.to_string(), e.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_reconfig_csv<W: Write>(log: &[ReconfigRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "rail", "group_id", "speculative", "delay_s", "ports_changed"])?;
    for r in log {
        w.write_record([
            r.time.to_string(),
            r.rail.to_string(),
            r.group.to_string(),
            r.speculative.to_string(),
            r.delay.to_string(),
            r.ports_changed().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["delay_s", "policy", "makespan_s", "overhead"])?;
    for r in rows {
        w.write_record([
            r.delay_s.to_string(),
            r.policy.as_str().to_string(),
            r.makespan_s.to_string(),
            r.overhead.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 60.0;

/// Overhead-versus-delay line chart, one polyline per policy.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let max_x = rows.iter().map(|r| r.delay_s * 1e3).fold(0.0, f64::max).max(1e-9);
    let pct = |r: &SweepRow| (r.overhead - 1.0) * 100.0;
    let max_y = rows.iter().map(pct).fold(0.0, f64::max).max(1.0);
    let px = |x: f64| MARGIN + x / max_x * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - y / max_y * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (px(0.0), py(0.0), px(max_x), py(max_y));
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let fx = max_x * i as f64 / 4.0;
        let fy = max_y * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{:.3}</text>"#,
            px(fx),
            y0 + 16.0,
            fx
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{:.2}</text>"#,
            x0 - 6.0,
            py(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">reconfiguration delay (ms)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 15 {:.1})">iteration time overhead (%)</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    let styles = [(ControlPolicy::OnDemand, "#d62728"), (ControlPolicy::Provisioning, "#1f77b4")];
    for (k, (policy, color)) in styles.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.policy == *policy)
            .map(|r| format!("{:.2},{:.2}", px(r.delay_s * 1e3), py(pct(r))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 18.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}">{}</text>"#,
            MARGIN + 10.0,
            policy.as_str()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windows::EventSpan;

    #[test]
    fn timeline_rows_per_rank() {
        let tl = vec![EventSpan::uniform(vec![0, 4], 0.5, 1.25)];
        let mut buf = Vec::new();
        write_timeline_csv(&tl, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "event_id,rank,start_s,end_s\n0,0,0.5,1.25\n0,4,0.5,1.25\n");
    }

    #[test]
    fn svg_has_both_curves() {
        let rows: Vec<SweepRow> = [0.0, 0.1]
            .iter()
            .flat_map(|&d| {
                [ControlPolicy::OnDemand, ControlPolicy::Provisioning].map(|p| SweepRow {
                    delay_s: d,
                    policy: p,
                    makespan_s: 1.0 + d,
                    overhead: 1.0 + d,
                })
            })
            .collect();
        let svg = sweep_svg(&rows);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
