//! Output files: CSV tables, SVG line charts and the run manifest.
//!
//! Every file goes through [`write_atomic`], so a failed or interrupted
//! run never leaves a truncated file behind.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::harness::{EpisodeRecord, Metrics, Phase, Spread, SweepRow};

pub const EPISODE_HEADER: &str =
    "seed,phase,episode,total_reward,packets_sent,events_total,events_missed";
pub const SUMMARY_HEADER: &str =
    "agent,seed,average_reward,throughput,miss_detection_probability,convergence_episode";
pub const SWEEP_HEADER: &str = "parameter,value,agent,\
average_reward_median,average_reward_min,average_reward_max,\
throughput_median,throughput_min,throughput_max,\
miss_detection_probability_median,miss_detection_probability_min,miss_detection_probability_max";

/// Marker for undefined values (miss detection without events, no
/// convergence).
pub const NA: &str = "NA";

/// Temp file in the target directory, then rename over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

pub fn episodes_csv<'a>(rows: impl IntoIterator<Item = (u64, Phase, &'a EpisodeRecord)>) -> String {
    let mut out = format!("{EPISODE_HEADER}\n");
    for (seed, phase, r) in rows {
        writeln!(
            out,
            "{seed},{},{},{},{},{},{}",
            phase.as_str(),
            r.episode,
            r.total_reward,
            r.packets_sent,
            r.events_total,
            r.events_missed
        )
        .unwrap();
    }
    out
}

/// One row per seed followed by a `median` row built with the same
/// aggregation as sweeps.
pub fn summary_csv(agent: &str, per_seed: &[(u64, Metrics, Option<usize>)]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for (seed, m, conv) in per_seed {
        writeln!(
            out,
            "{agent},{seed},{},{},{},{}",
            m.average_reward,
            m.throughput,
            opt(m.miss_detection_probability),
            conv.map_or_else(|| NA.to_string(), |c| c.to_string())
        )
        .unwrap();
    }
    let row = crate::harness::summarize(
        0.0,
        agent,
        per_seed.iter().map(|(s, m, _)| (*s, *m)).collect(),
    );
    let convs: Vec<f64> = per_seed.iter().filter_map(|(_, _, c)| c.map(|c| c as f64)).collect();
    writeln!(
        out,
        "{agent},median,{},{},{},{}",
        row.average_reward.median,
        row.throughput.median,
        opt(row.miss_detection.map(|s| s.median)),
        opt((!convs.is_empty()).then(|| crate::harness::aggregate_seeds(&convs).median))
    )
    .unwrap();
    out
}

pub fn sweep_csv(parameter: &str, rows: &[SweepRow]) -> String {
    let spread = |s: &Spread| format!("{},{},{}", s.median, s.min, s.max);
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let miss = r
            .miss_detection
            .as_ref()
            .map_or_else(|| format!("{NA},{NA},{NA}"), spread);
        writeln!(
            out,
            "{parameter},{},{},{},{},{miss}",
            r.value,
            r.agent,
            spread(&r.average_reward),
            spread(&r.throughput)
        )
        .unwrap();
    }
    out
}

pub fn manifest_text(cfg: &ExperimentConfig, command: &str, created_unix: u64) -> String {
    let mut out = String::from("# Run manifest: pass this file back with --config to reproduce the run.\n");
    writeln!(out, "manifest.tool_version = \"{}\"", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "manifest.command = \"{command}\"").unwrap();
    writeln!(out, "manifest.created_unix = {created_unix}").unwrap();
    out.push_str(&cfg.to_text());
    out
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Minimal SVG line chart with axes, ticks and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title)).unwrap();
    writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, sx(xv), top + ph + 16.0, tick(xv)).unwrap();
        writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, sy(yv) + 4.0, tick(yv)).unwrap();
        writeln!(svg, r##"<line x1="{left}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, left + pw, sy(yv), sy(yv)).unwrap();
    }
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, h - 12.0, escape(x_label)).unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).unwrap();
        let ly = top + 14.0 + 16.0 * k as f64;
        writeln!(svg, r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, left + pw + 10.0, left + pw + 30.0).unwrap();
        writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, left + pw + 35.0, ly + 4.0, escape(&s.label)).unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
