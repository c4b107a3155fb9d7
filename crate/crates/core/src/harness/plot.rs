//! Standalone SVG charts and the CSV tables behind them.
//!
//! Every plotted point or bar carries a `data-value` attribute holding the
//! exact number written to the matching CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{mean_std, read_jsonl, summarize, write_csv, MetricsRecord, Phase};
use crate::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
<text x="{}" y="{}" text-anchor="end">{}</text>
<text x="{}" y="{}" text-anchor="end">{}</text>
"#,
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        W / 2.0,
        H - 16.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label),
        PAD - 6.0,
        H - PAD + 4.0,
        fmt_tick(y_lo),
        PAD - 6.0,
        PAD + 4.0,
        fmt_tick(y_hi),
    );
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(v), h.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let lo = lo.min(0.0);
    if hi - lo < 1e-12 {
        (lo, lo + 1.0)
    } else {
        (lo, hi)
    }
}

/// Line chart with one polyline per series.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let (y_lo, y_hi) = y_range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let xs = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(v), h.max(v))
    });
    let (x_lo, x_hi) = if x_lo.is_finite() && x_hi > x_lo {
        (x_lo, x_hi)
    } else {
        (x_lo.min(0.0), x_lo.max(0.0) + 1.0)
    };
    let sx = |x: f64| PAD + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label, y_lo, y_hi);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<g data-series="{}"><polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(name),
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" data-x="{x}" data-value="{y}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let _ = writeln!(
            out,
            r#"</g><text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD + 4.0,
            PAD + 16.0 * k as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart with one bar per label.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let (y_lo, y_hi) = y_range(bars.iter().map(|b| b.1));
    let sy = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
    let slot = (W - 2.0 * PAD) / bars.len().max(1) as f64;
    let mut out = String::new();
    frame(&mut out, title, "", y_label, y_lo, y_hi);
    for (k, (name, v)) in bars.iter().enumerate() {
        let x = PAD + slot * k as f64 + slot * 0.15;
        let top = sy(*v).min(sy(0.0));
        let height = (sy(*v) - sy(0.0)).abs();
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{top:.2}" width="{:.2}" height="{height:.2}" fill="{}" data-label="{}" data-value="{v}"/>"#,
            slot * 0.7,
            COLORS[k % COLORS.len()],
            escape(name)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            H - PAD + 16.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, Serialize)]
struct RewardRow {
    episode: usize,
    reward_mean: f64,
    reward_std: f64,
}

#[derive(Debug, Clone, Serialize)]
struct AccuracyRow {
    mode: String,
    iteration: usize,
    accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
struct BarRow {
    mode: String,
    value: f64,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Episode-level training reward over seeds.
fn reward_rows(records: &[MetricsRecord]) -> Vec<RewardRow> {
    let last: Vec<&MetricsRecord> = records
        .iter()
        .filter(|r| r.phase == Phase::Train)
        .filter(|r| {
            !records.iter().any(|o| {
                o.phase == Phase::Train
                    && o.seed == r.seed
                    && o.mode == r.mode
                    && o.episode == r.episode
                    && o.iteration > r.iteration
            })
        })
        .collect();
    let episodes = last.iter().map(|r| r.episode + 1).max().unwrap_or(0);
    let mut by_episode: Vec<Vec<f64>> = vec![Vec::new(); episodes];
    for r in last {
        by_episode[r.episode].push(r.cumulative_reward);
    }
    by_episode
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(episode, v)| {
            let (reward_mean, reward_std) = mean_std(v);
            RewardRow {
                episode,
                reward_mean,
                reward_std,
            }
        })
        .collect()
}

/// Renders the four charts of a run directory next to their CSVs.
/// Returns the written files; an empty run writes nothing.
pub fn emit_plots(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let records = read_jsonl(&run_dir.join("metrics.jsonl"))?;
    if records.is_empty() {
        log::warn!("{} has no metrics; no plots written", run_dir.display());
        return Ok(Vec::new());
    }
    let mut files = Vec::new();

    let rewards = reward_rows(&records);
    if rewards.is_empty() {
        log::info!(
            "no training episodes in {}; reward plot skipped",
            run_dir.display()
        );
    } else {
        let csv = run_dir.join("reward.csv");
        write_csv(&csv, &rewards)?;
        let pts = rewards
            .iter()
            .map(|r| (r.episode as f64, r.reward_mean))
            .collect();
        let svg = run_dir.join("reward.svg");
        write_file(
            &svg,
            &line_chart(
                "Reward during training",
                "episode",
                "cumulative reward",
                &[("MTD-FL".into(), pts)],
            ),
        )?;
        files.extend([csv, svg]);
    }

    let summary = summarize(&records);
    let mut modes: Vec<String> = Vec::new();
    for row in &summary {
        if !modes.contains(&row.mode) {
            modes.push(row.mode.clone());
        }
    }
    let accuracy: Vec<AccuracyRow> = summary
        .iter()
        .map(|r| AccuracyRow {
            mode: r.mode.clone(),
            iteration: r.iteration,
            accuracy: r.accuracy_mean,
        })
        .collect();
    if !accuracy.is_empty() {
        let csv = run_dir.join("accuracy.csv");
        write_csv(&csv, &accuracy)?;
        let series: Vec<(String, Vec<(f64, f64)>)> = modes
            .iter()
            .map(|m| {
                let pts = accuracy
                    .iter()
                    .filter(|r| &r.mode == m)
                    .map(|r| (r.iteration as f64, r.accuracy))
                    .collect();
                (m.clone(), pts)
            })
            .collect();
        let svg = run_dir.join("accuracy.svg");
        write_file(
            &svg,
            &line_chart("Accuracy", "iteration", "accuracy", &series),
        )?;
        files.extend([csv, svg]);

        for (stem, title, label, pick) in [
            (
                "excluded",
                "Excluded malicious models",
                "ratio",
                (|r: &super::metrics::SummaryRow| r.excluded_ratio_mean) as fn(&_) -> f64,
            ),
            ("recognition_time", "Recognition time", "seconds", |r| {
                r.t_int_mean
            }),
        ] {
            let rows: Vec<BarRow> = modes
                .iter()
                .map(|m| {
                    let v: Vec<f64> = summary.iter().filter(|r| &r.mode == m).map(pick).collect();
                    BarRow {
                        mode: m.clone(),
                        value: mean_std(&v).0,
                    }
                })
                .collect();
            let csv = run_dir.join(format!("{stem}.csv"));
            write_csv(&csv, &rows)?;
            let bars: Vec<(String, f64)> = rows.iter().map(|r| (r.mode.clone(), r.value)).collect();
            let svg = run_dir.join(format!("{stem}.svg"));
            write_file(&svg, &bar_chart(title, label, &bars))?;
            files.extend([csv, svg]);
        }
    }
    Ok(files)
}
