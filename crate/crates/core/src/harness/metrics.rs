//! Per-iteration records, JSONL persistence and summary statistics.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DefenseMode;
use crate::adversary::AttackKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Agent training episodes (MTD-FL only).
    Train,
    /// Greedy episodes reported for every mode.
    Eval,
}

/// Everything observed in one FL iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub mode: DefenseMode,
    pub attack: AttackKind,
    pub phase: Phase,
    pub episode: usize,
    pub iteration: usize,
    pub accuracy: f64,
    pub test_loss: f64,
    /// Executed participants, sorted.
    pub participants: Vec<usize>,
    /// Devices attacking in this iteration.
    pub compromised: Vec<usize>,
    pub excluded_ratio: f64,
    /// Anticipation profile; empty in modes without an anticipator.
    pub profile: Vec<f64>,
    /// Proposed devices at or above the confidence threshold.
    pub proposed_violations: usize,
    /// Executed devices at or above the confidence threshold.
    pub violations: usize,
    pub reward: f64,
    /// Reward accumulated so far in the episode.
    pub cumulative_reward: f64,
    pub t_local: f64,
    pub t_agg: f64,
    /// Aligned with `participants`.
    pub t_down: Vec<f64>,
    pub t_inf: Vec<f64>,
    pub t_int: Vec<f64>,
    pub mean_t_int: f64,
}

/// `|compromised ∧ excluded| / |compromised|`, 1.0 when nobody attacks.
pub fn excluded_ratio(compromised: &[usize], participants: &[usize]) -> f64 {
    if compromised.is_empty() {
        return 1.0;
    }
    let excluded = compromised
        .iter()
        .filter(|u| !participants.contains(u))
        .count();
    excluded as f64 / compromised.len() as f64
}

pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, k as u64 + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summary of one (mode, iteration) cell over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    pub iteration: usize,
    pub runs: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub excluded_ratio_mean: f64,
    pub excluded_ratio_std: f64,
    pub t_int_mean: f64,
    pub t_int_std: f64,
    pub participants_mean: f64,
    pub participants_std: f64,
}

/// Per-seed averages of eval-phase records, then mean and std over seeds,
/// for every mode (in first-seen order) and iteration.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let eval: Vec<&MetricsRecord> = records.iter().filter(|r| r.phase == Phase::Eval).collect();
    let mut modes: Vec<DefenseMode> = Vec::new();
    for r in &eval {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    let mut rows = Vec::new();
    for mode in modes {
        let of_mode: Vec<&&MetricsRecord> = eval.iter().filter(|r| r.mode == mode).collect();
        let mut seeds: Vec<u64> = of_mode.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let iterations = of_mode.iter().map(|r| r.iteration + 1).max().unwrap_or(0);
        for it in 0..iterations {
            let per_seed = |f: &dyn Fn(&MetricsRecord) -> f64| -> Vec<f64> {
                seeds
                    .iter()
                    .filter_map(|s| {
                        let v: Vec<f64> = of_mode
                            .iter()
                            .filter(|r| r.seed == *s && r.iteration == it)
                            .map(|r| f(r))
                            .collect();
                        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                    })
                    .collect()
            };
            let acc = per_seed(&|r| r.accuracy);
            let (accuracy_mean, accuracy_std) = mean_std(&acc);
            let (excluded_ratio_mean, excluded_ratio_std) =
                mean_std(&per_seed(&|r| r.excluded_ratio));
            let (t_int_mean, t_int_std) = mean_std(&per_seed(&|r| r.mean_t_int));
            let (participants_mean, participants_std) =
                mean_std(&per_seed(&|r| r.participants.len() as f64));
            rows.push(SummaryRow {
                mode: mode.to_string(),
                iteration: it + 1,
                runs: acc.len(),
                accuracy_mean,
                accuracy_std,
                excluded_ratio_mean,
                excluded_ratio_std,
                t_int_mean,
                t_int_std,
                participants_mean,
                participants_std,
            });
        }
    }
    rows
}

/// Cumulative reward of every training episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub seed: u64,
    pub episode: usize,
    pub reward: f64,
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (k, v) in values.iter().enumerate() {
        sum += v;
        if k >= w {
            sum -= values[k - w];
        }
        out.push(sum / (k + 1).min(w) as f64);
    }
    out
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(excluded_ratio(&[], &[0, 1]), 1.0);
        assert_eq!(excluded_ratio(&[1, 3], &[0, 1, 2]), 0.5);
        assert_eq!(excluded_ratio(&[4], &[0, 1]), 1.0);
    }

    #[test]
    fn stats() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
        assert_eq!(
            moving_average(&[1.0, 3.0, 5.0, 7.0], 2),
            vec![1.0, 2.0, 4.0, 6.0]
        );
    }
}
