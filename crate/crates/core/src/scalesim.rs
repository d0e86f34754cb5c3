//! End-to-end strong-scaling simulation: scenario files, per-n report rows,
//! crossover, time to convergence and the large-batch trade-off.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commmodel::{crossover_nodes, overlap_timeline, ClusterSpec, IterationTimeline};
use crate::datamodel::{data_layer_stall, DatasetSpec};
use crate::error::{Error, Result};
use crate::netspec::{check_reduction_factor, NetworkSpec};
use crate::perfmodel::{local_batch, serial_fraction, DeviceProfile};

/// How the step size follows a batch enlarged by `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// ε·k
    #[default]
    Linear,
    /// ε·√k
    Sqrt,
    Constant,
}

/// How the iteration budget follows a batch enlarged by `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationRule {
    /// T/k: same number of epochs.
    #[default]
    Inverse,
    /// T: k times the work.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LargeBatchPolicy {
    pub factors: Vec<u64>,
    #[serde(default)]
    pub step_rule: StepRule,
    #[serde(default)]
    pub iteration_rule: IterationRule,
}

impl LargeBatchPolicy {
    pub fn step(&self, base: f64, k: u64) -> f64 {
        match self.step_rule {
            StepRule::Linear => base * k as f64,
            StepRule::Sqrt => base * (k as f64).sqrt(),
            StepRule::Constant => base,
        }
    }

    pub fn iterations(&self, base: u64, k: u64) -> u64 {
        match self.iteration_rule {
            IterationRule::Inverse => base / k,
            IterationRule::Constant => base,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    network: PathBuf,
    device: PathBuf,
    global_batch: Option<u64>,
    n_list: Vec<u64>,
    #[serde(default = "unit")]
    reduction_factor: f64,
    backward_multiplier: Option<f64>,
    serial_fraction: Option<f64>,
    cluster: ClusterSpec,
    dataset: Option<DatasetSpec>,
    large_batch: Option<LargeBatchPolicy>,
}

fn unit() -> f64 {
    1.0
}

/// A fully resolved what-if configuration.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub network_path: PathBuf,
    pub device_path: PathBuf,
    pub net: NetworkSpec,
    pub device: DeviceProfile,
    pub cluster: ClusterSpec,
    pub dataset: Option<DatasetSpec>,
    pub n_list: Vec<u64>,
    pub global_batch: u64,
    pub reduction_factor: f64,
    /// Overrides the hint-derived serial fraction in Amdahl curves.
    pub serial_fraction: Option<f64>,
    pub large_batch: Option<LargeBatchPolicy>,
}

impl Scenario {
    /// Parses a scenario; `network` and `device` paths are resolved against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path, origin: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::syntax(origin, e.to_string()))?;
        let network_path = base_dir.join(&file.network);
        let device_path = base_dir.join(&file.device);
        let mut net = NetworkSpec::load(&network_path)?;
        if let Some(m) = file.backward_multiplier {
            net.backward_multiplier = m;
            net.validate()?;
        }
        let device = DeviceProfile::load(&device_path)?;
        let scenario = Scenario {
            name: file.name,
            network_path,
            device_path,
            global_batch: file.global_batch.unwrap_or(net.default_batch),
            net,
            device,
            cluster: file.cluster,
            dataset: file.dataset,
            n_list: file.n_list,
            reduction_factor: file.reduction_factor,
            serial_fraction: file.serial_fraction,
            large_batch: file.large_batch,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = format!("scenario `{}`", self.name);
        if self.n_list.is_empty() {
            return Err(Error::invariant(ctx, "n_list is empty"));
        }
        for &n in &self.n_list {
            local_batch(self.global_batch, n)?;
        }
        check_reduction_factor(self.reduction_factor)?;
        self.cluster.validate()?;
        if let Some(d) = &self.dataset {
            d.validate()?;
        }
        if let Some(s) = self.serial_fraction {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::invariant(format!("{ctx} serial_fraction"), format!("{s} is outside [0, 1]")));
            }
        }
        if let Some(p) = &self.large_batch {
            if p.factors.is_empty() || p.factors.contains(&0) {
                return Err(Error::invariant(format!("{ctx} large_batch"), "factors must be non-empty and >= 1"));
            }
        }
        Ok(())
    }

    /// Node counts in ascending order without duplicates.
    pub fn nodes(&self) -> Vec<u64> {
        let mut ns = self.n_list.clone();
        ns.sort_unstable();
        ns.dedup();
        ns
    }

    /// Serial fraction for Amdahl curves: the explicit override, else the
    /// time-weighted layer hints at the full batch on one node.
    pub fn effective_serial_fraction(&self) -> f64 {
        self.serial_fraction
            .unwrap_or_else(|| serial_fraction(&self.net, self.global_batch, &self.device))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub n: u64,
    pub b: u64,
    pub compute_s: f64,
    pub comm_s: f64,
    pub data_stall_s: f64,
    pub iteration_s: f64,
    pub speedup: f64,
    pub efficiency: f64,
    pub comm_bound: bool,
    pub convergence_h: f64,
    pub timeline: IterationTimeline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub scenario: String,
    pub global_batch: u64,
    pub rows: Vec<ScalingRow>,
    /// Hours to convergence on one node.
    pub convergence_hours: f64,
    pub crossover_n: Option<u64>,
    pub serial_fraction: f64,
}

impl ScalingReport {
    pub fn row(&self, n: u64) -> Option<&ScalingRow> {
        self.rows.iter().find(|r| r.n == n)
    }
}

fn with_row(n: u64, e: Error) -> Error {
    match e {
        Error::Invariant { context, message } => Error::Invariant { context: format!("n = {n}: {context}"), message },
        other => other,
    }
}

/// One row without the speedup columns, for `global_batch` on `n` nodes.
fn evaluate(s: &Scenario, global_batch: u64, iterations: u64, n: u64) -> Result<ScalingRow> {
    let b = local_batch(global_batch, n)?;
    let tl = overlap_timeline(&s.net, b, &s.device, &s.cluster.with_nodes(n), s.reduction_factor)?;
    let data_stall_s = match &s.dataset {
        Some(d) => {
            let residual = if tl.iteration_time > 0.0 {
                (1.0 - tl.link_busy / tl.iteration_time).clamp(0.0, 1.0)
            } else {
                1.0
            };
            data_layer_stall(b as f64 * d.sample_bytes(), b, &s.cluster, residual, d)?
        }
        None => 0.0,
    };
    let iteration_s = tl.iteration_time + data_stall_s;
    Ok(ScalingRow {
        n,
        b,
        compute_s: tl.backward_end,
        comm_s: tl.link_busy,
        data_stall_s,
        iteration_s,
        speedup: f64::NAN,
        efficiency: f64::NAN,
        comm_bound: tl.comm_bound(),
        convergence_h: iterations as f64 * iteration_s / 3600.0,
        timeline: tl,
    })
}

fn scaled_rows(s: &Scenario, global_batch: u64, iterations: u64) -> Result<(ScalingRow, Vec<ScalingRow>)> {
    let base = evaluate(s, global_batch, iterations, 1).map_err(|e| with_row(1, e))?;
    let rows = s
        .nodes()
        .par_iter()
        .map(|&n| {
            let mut row = evaluate(s, global_batch, iterations, n).map_err(|e| with_row(n, e))?;
            row.speedup = base.iteration_s / row.iteration_s;
            row.efficiency = row.speedup / n as f64;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((base, rows))
}

/// Strong scaling at the scenario's global batch over its node counts.
pub fn simulate(s: &Scenario) -> Result<ScalingReport> {
    s.validate()?;
    let (base, rows) = scaled_rows(s, s.global_batch, s.net.iterations_to_convergence)?;
    let crossover_n = crossover_nodes(&s.net, s.global_batch, &s.device, &s.cluster, s.reduction_factor)?;
    Ok(ScalingReport {
        scenario: s.name.clone(),
        global_batch: s.global_batch,
        rows,
        convergence_hours: base.convergence_h,
        crossover_n,
        serial_fraction: s.effective_serial_fraction(),
    })
}

/// Hours to convergence on `n` nodes.
pub fn time_to_convergence(s: &Scenario, n: u64) -> Result<f64> {
    let row = evaluate(s, s.global_batch, s.net.iterations_to_convergence, n).map_err(|e| with_row(n, e))?;
    Ok(row.convergence_h)
}

/// Accuracy measured for AlexNet on ImageNet when batch, step and iteration
/// budget are scaled together. Carried as reference data only: this model
/// does not predict accuracy, and toy-scale runs cannot reproduce it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceAccuracy {
    pub global_batch: u64,
    pub k: u64,
    pub step: f64,
    pub top1: f64,
}

pub const LARGE_BATCH_REFERENCE: [ReferenceAccuracy; 4] = [
    ReferenceAccuracy { global_batch: 256, k: 1, step: 0.01, top1: 0.572 },
    ReferenceAccuracy { global_batch: 512, k: 2, step: 0.02, top1: 0.564 },
    ReferenceAccuracy { global_batch: 1024, k: 4, step: 0.04, top1: 0.547 },
    ReferenceAccuracy { global_batch: 2048, k: 8, step: 0.08, top1: 0.522 },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LargeBatchRow {
    pub k: u64,
    pub global_batch: u64,
    pub step: f64,
    pub iterations: u64,
    pub n: u64,
    pub b: u64,
    pub iteration_s: f64,
    /// Against one node running the enlarged batch.
    pub enlarged_speedup: f64,
    /// Strong scaling of the original batch at the same n.
    pub original_speedup: f64,
    /// Time to solution of the original run on one node over this run's.
    pub work_normalized_speedup: f64,
    pub convergence_h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LargeBatchReport {
    pub scenario: String,
    pub rows: Vec<LargeBatchRow>,
    pub reference: &'static [ReferenceAccuracy],
}

impl LargeBatchReport {
    pub const NOTE: &'static str =
        "accuracy impact of larger batches is not modeled; reference accuracies are measured values, not predictions";
}

/// Scaling of the scenario with its global batch enlarged by each factor of
/// the large-batch policy (`k = 1` only when the scenario has none).
pub fn large_batch_tradeoff(s: &Scenario) -> Result<LargeBatchReport> {
    s.validate()?;
    let default_policy = LargeBatchPolicy { factors: vec![1], step_rule: StepRule::Linear, iteration_rule: IterationRule::Inverse };
    let policy = s.large_batch.as_ref().unwrap_or(&default_policy);
    let base_iters = s.net.iterations_to_convergence;
    let (orig_base, orig_rows) = scaled_rows(s, s.global_batch, base_iters)?;
    let mut factors = policy.factors.clone();
    factors.sort_unstable();
    factors.dedup();

    let mut rows = Vec::new();
    for k in factors {
        let global_batch = s
            .global_batch
            .checked_mul(k)
            .ok_or_else(|| Error::invariant(format!("k = {k}"), "enlarged batch overflows"))?;
        let iterations = policy.iterations(base_iters, k);
        let (base, scaled) = scaled_rows(s, global_batch, iterations)?;
        for (row, orig) in scaled.iter().zip(&orig_rows) {
            rows.push(LargeBatchRow {
                k,
                global_batch,
                step: policy.step(s.net.default_step, k),
                iterations,
                n: row.n,
                b: row.b,
                iteration_s: row.iteration_s,
                enlarged_speedup: base.iteration_s / row.iteration_s,
                original_speedup: orig.speedup,
                work_normalized_speedup: (base_iters as f64 * orig_base.iteration_s)
                    / (iterations as f64 * row.iteration_s),
                convergence_h: row.convergence_h,
            });
        }
    }
    Ok(LargeBatchReport { scenario: s.name.clone(), rows, reference: &LARGE_BATCH_REFERENCE })
}
