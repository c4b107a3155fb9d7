//! Recognition-time model for one synchronous FL round.
//!
//! A round costs local training (all participants wait for the slowest),
//! upload plus partial aggregation at each base station, forwarding to and
//! aggregating at the cloud, downloading the new global model and finally
//! one inference on the device.

use serde::{Deserialize, Serialize};

use crate::netmodel::NetworkSnapshot;
use crate::{Error, Result};

/// Compute and size constants of the FL workload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeCosts {
    /// `f_s`: cycles to train on one sample for one epoch.
    pub train_cycles_per_sample: f64,
    /// `f_w`: cycles to aggregate one parameter unit.
    pub aggregate_cycles_per_unit: f64,
    /// `f_inf`: cycles for one inference.
    pub inference_cycles: f64,
    /// `K`.
    pub local_epochs: usize,
    /// `|w_g|`: parameter units per model.
    pub model_size: f64,
}

impl ComputeCosts {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.train_cycles_per_sample)
            || !ok(self.aggregate_cycles_per_unit)
            || !ok(self.inference_cycles)
            || !(self.model_size.is_finite() && self.model_size >= 0.0)
            || self.local_epochs == 0
        {
            return Err(Error::Config(format!("invalid compute costs: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AggregationMode {
    /// Stations aggregate among themselves; no backhaul or cloud time.
    #[serde(rename = "edge-only")]
    EdgeOnly,
    #[default]
    #[serde(rename = "edge+cloud")]
    EdgeCloud,
}

/// Time components of one round. Per-device vectors are aligned with
/// `participants`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub participants: Vec<usize>,
    /// Straggler training time shared by every participant.
    pub t_local: f64,
    /// Partial aggregation time per station (zero for inactive stations).
    pub t_partial: Vec<f64>,
    pub t_agg: f64,
    pub t_down: Vec<f64>,
    pub t_inf: Vec<f64>,
    pub t_int: Vec<f64>,
}

impl TimingBreakdown {
    pub fn mean_t_int(&self) -> f64 {
        if self.t_int.is_empty() {
            0.0
        } else {
            self.t_int.iter().sum::<f64>() / self.t_int.len() as f64
        }
    }

    pub fn t_int_of(&self, device: usize) -> Option<f64> {
        self.participants
            .iter()
            .position(|&u| u == device)
            .map(|k| self.t_int[k])
    }
}

fn check_rate(rate: f64, what: &str) -> Result<()> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InfeasibleLink(format!("{what} rate is {rate}")));
    }
    Ok(())
}

/// Upload of the slowest participant plus aggregation of all uploads at a
/// station with CPU `bs_cpu`. Zero for an empty station.
pub fn partial_agg_time(rates: &[f64], bs_cpu: f64, costs: &ComputeCosts) -> Result<f64> {
    if rates.is_empty() {
        return Ok(0.0);
    }
    let mut slowest = 0.0f64;
    for &r in rates {
        check_rate(r, "uplink")?;
        slowest = slowest.max(costs.model_size / r);
    }
    let agg = rates.len() as f64 * costs.model_size * costs.aggregate_cycles_per_unit / bs_cpu;
    Ok(slowest + agg)
}

/// Cloud-level aggregation time over the active stations.
///
/// The max ranges over stations flagged in `active`, and the cloud work
/// scales with how many of them forwarded a partial model.
pub fn total_agg_time(
    per_bs: &[f64],
    backhaul: &[f64],
    active: &[bool],
    costs: &ComputeCosts,
    cloud_cpu: f64,
) -> Result<f64> {
    if per_bs.len() != backhaul.len() || per_bs.len() != active.len() {
        return Err(Error::Shape(format!(
            "per-station lists differ in length: {} / {} / {}",
            per_bs.len(),
            backhaul.len(),
            active.len()
        )));
    }
    let mut m_active = 0usize;
    let mut slowest = 0.0f64;
    for i in 0..per_bs.len() {
        if !active[i] {
            continue;
        }
        check_rate(backhaul[i], "backhaul")?;
        m_active += 1;
        slowest = slowest.max(per_bs[i] + costs.model_size / backhaul[i]);
    }
    if m_active == 0 {
        return Ok(0.0);
    }
    Ok(slowest + m_active as f64 * costs.model_size * costs.aggregate_cycles_per_unit / cloud_cpu)
}

/// Cloud to station, then station to device.
pub fn download_time(cloud_to_bs: f64, bs_to_device: f64, costs: &ComputeCosts) -> Result<f64> {
    check_rate(cloud_to_bs, "backhaul")?;
    check_rate(bs_to_device, "downlink")?;
    Ok(costs.model_size / cloud_to_bs + costs.model_size / bs_to_device)
}

/// `K |D| f_s / f_u`.
pub fn local_train_time(data_size: usize, cpu: f64, costs: &ComputeCosts) -> f64 {
    costs.local_epochs as f64 * data_size as f64 * costs.train_cycles_per_sample / cpu
}

/// `f_inf / f_u`.
pub fn inference_time(cpu: f64, costs: &ComputeCosts) -> f64 {
    costs.inference_cycles / cpu
}

/// Timing of a whole round for the given participants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub costs: ComputeCosts,
    pub cloud_cpu: f64,
    pub mode: AggregationMode,
}

impl TimeModel {
    /// `data_sizes` is indexed by device id. Every participant must be covered.
    pub fn recognition_time(
        &self,
        participants: &[usize],
        data_sizes: &[usize],
        snapshot: &NetworkSnapshot,
    ) -> Result<TimingBreakdown> {
        let m = snapshot.num_stations();
        if participants.is_empty() {
            return Ok(TimingBreakdown {
                t_partial: vec![0.0; m],
                ..Default::default()
            });
        }
        if data_sizes.len() != snapshot.num_devices() {
            return Err(Error::Shape(format!(
                "{} data sizes for {} devices",
                data_sizes.len(),
                snapshot.num_devices()
            )));
        }
        let costs = &self.costs;
        let mut per_bs_rates: Vec<Vec<f64>> = vec![Vec::new(); m];
        let mut t_local = 0.0f64;
        for &u in participants {
            if u >= snapshot.num_devices() {
                return Err(Error::Shape(format!("participant {u} out of range")));
            }
            let i = snapshot.assignment[u].ok_or_else(|| {
                Error::InfeasibleLink(format!("participant {u} is outside coverage"))
            })?;
            per_bs_rates[i].push(snapshot.rate_matrix[u][i]);
            t_local = t_local.max(local_train_time(data_sizes[u], snapshot.dev_cpu[u], costs));
        }
        let t_partial = per_bs_rates
            .iter()
            .zip(&snapshot.bs_cpu)
            .map(|(rates, &cpu)| partial_agg_time(rates, cpu, costs))
            .collect::<Result<Vec<f64>>>()?;
        let active: Vec<bool> = per_bs_rates.iter().map(|r| !r.is_empty()).collect();
        let t_agg = match self.mode {
            AggregationMode::EdgeCloud => total_agg_time(
                &t_partial,
                &snapshot.backhaul,
                &active,
                costs,
                self.cloud_cpu,
            )?,
            AggregationMode::EdgeOnly => t_partial.iter().copied().fold(0.0, f64::max),
        };
        let mut t_down = Vec::with_capacity(participants.len());
        let mut t_inf = Vec::with_capacity(participants.len());
        let mut t_int = Vec::with_capacity(participants.len());
        for &u in participants {
            let i = snapshot.assignment[u].expect("checked above");
            let down_rate = snapshot.downlink_matrix[u][i];
            let down = match self.mode {
                AggregationMode::EdgeCloud => {
                    download_time(snapshot.backhaul[i], down_rate, costs)?
                }
                AggregationMode::EdgeOnly => {
                    check_rate(down_rate, "downlink")?;
                    costs.model_size / down_rate
                }
            };
            let inf = inference_time(snapshot.dev_cpu[u], costs);
            t_down.push(down);
            t_inf.push(inf);
            t_int.push(t_local + t_agg + down + inf);
        }
        Ok(TimingBreakdown {
            participants: participants.to_vec(),
            t_local,
            t_partial,
            t_agg,
            t_down,
            t_inf,
            t_int,
        })
    }
}
