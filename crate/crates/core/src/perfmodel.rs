//! Compute-time model: device profiles, GEMM shape efficiency, per-layer and
//! per-iteration times, calibration, and the batch-size / Amdahl scaling
//! curves derived from them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netspec::{direction_factor, gemm_shapes, Direction, GemmShape, LayerKind, LayerSpec, NetworkSpec};

/// Below-saturation exponent used when a curve does not set one.
pub const DEFAULT_STALL_EXPONENT: f64 = 0.5;

/// GEMM efficiency as a function of `m`, the row count of the left matrix.
///
/// Either a power law `min(1, (m / saturation)^exponent)` or an explicit
/// table interpolated linearly in `m` and clamped at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum GemmCurve {
    PowerLaw {
        saturation: u64,
        #[serde(default = "default_exponent")]
        exponent: f64,
    },
    Table {
        points: Vec<(u64, f64)>,
    },
}

fn default_exponent() -> f64 {
    DEFAULT_STALL_EXPONENT
}

impl GemmCurve {
    pub fn power_law(saturation: u64, exponent: f64) -> Self {
        GemmCurve::PowerLaw { saturation, exponent }
    }

    /// Smallest `m` at which the curve reaches 1.
    pub fn saturation(&self) -> u64 {
        match self {
            GemmCurve::PowerLaw { saturation, exponent } => {
                if *exponent == 0.0 {
                    1
                } else {
                    *saturation
                }
            }
            GemmCurve::Table { points } => points
                .iter()
                .find(|(_, e)| *e >= 1.0)
                .map(|(m, _)| *m)
                .unwrap_or(u64::MAX),
        }
    }

    pub fn efficiency(&self, m: u64) -> f64 {
        match self {
            GemmCurve::PowerLaw { saturation, exponent } => {
                if m >= *saturation {
                    1.0
                } else {
                    (m as f64 / *saturation as f64).powf(*exponent)
                }
            }
            GemmCurve::Table { points } => {
                let (first, last) = (points[0], points[points.len() - 1]);
                if m <= first.0 {
                    return first.1;
                }
                if m >= last.0 {
                    return last.1;
                }
                let hi = points.partition_point(|(pm, _)| *pm < m);
                let (m0, e0) = points[hi - 1];
                let (m1, e1) = points[hi];
                e0 + (e1 - e0) * (m - m0) as f64 / (m1 - m0) as f64
            }
        }
    }

    fn validate(&self, ctx: &str) -> Result<()> {
        match self {
            GemmCurve::PowerLaw { saturation, exponent } => {
                if *saturation == 0 {
                    return Err(Error::invariant(ctx, "saturation must be at least 1"));
                }
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(Error::invariant(ctx, "exponent must be finite and >= 0"));
                }
            }
            GemmCurve::Table { points } => {
                if points.is_empty() {
                    return Err(Error::invariant(ctx, "curve table is empty"));
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::invariant(ctx, "curve m values must strictly increase"));
                    }
                    if w[1].1 < w[0].1 {
                        return Err(Error::invariant(ctx, "curve must be non-decreasing in m"));
                    }
                }
                if points.iter().any(|(_, e)| !(*e > 0.0 && *e <= 1.0)) {
                    return Err(Error::invariant(ctx, "efficiencies must lie in (0, 1]"));
                }
                if points[points.len() - 1].1 != 1.0 {
                    return Err(Error::invariant(ctx, "curve must end at efficiency 1"));
                }
            }
        }
        Ok(())
    }
}

/// Throughput loss of small individual GEMM calls (few FLOPs per call cannot
/// keep every core or SM busy). Applied to the per-sample convolution GEMMs
/// only: their size does not depend on the batch, whereas fully connected
/// GEMMs already degrade through the curve on `m`, and charging them twice
/// would make a smaller batch slower in absolute terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallGemm {
    /// FLOPs per call at and above which a call runs at full speed.
    pub saturation_flops: f64,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
}

impl SmallGemm {
    pub fn efficiency(&self, call_flops: f64) -> f64 {
        if call_flops >= self.saturation_flops {
            1.0
        } else {
            (call_flops / self.saturation_flops).powf(self.exponent)
        }
    }
}

/// Calibrated description of one compute device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    /// Sustained FLOP/s of a saturated GEMM on this device.
    pub effective_flops: f64,
    /// Seconds added to every layer pass (kernel launch, host/device copies).
    #[serde(default)]
    pub fixed_layer_latency: f64,
    /// Relative throughput of each layer kind; kinds not listed run at 1.
    #[serde(default)]
    pub per_kind_efficiency: BTreeMap<LayerKind, f64>,
    pub gemm_curve: GemmCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_gemm: Option<SmallGemm>,
}

impl DeviceProfile {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let profile: DeviceProfile =
            toml::from_str(text).map_err(|e| Error::syntax(origin, e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("device profile is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = format!("device `{}`", self.name);
        if !(self.effective_flops > 0.0 && self.effective_flops.is_finite()) {
            return Err(Error::invariant(ctx, "effective_flops must be positive and finite"));
        }
        if !(self.fixed_layer_latency >= 0.0 && self.fixed_layer_latency.is_finite()) {
            return Err(Error::invariant(ctx, "fixed_layer_latency must be finite and >= 0"));
        }
        for (kind, eff) in &self.per_kind_efficiency {
            if !(*eff > 0.0 && *eff <= 1.0) {
                return Err(Error::invariant(
                    format!("{ctx} per_kind_efficiency.{kind}"),
                    format!("{eff} is outside (0, 1]"),
                ));
            }
        }
        if let Some(sg) = &self.small_gemm {
            if !(sg.saturation_flops > 0.0 && sg.saturation_flops.is_finite()) {
                return Err(Error::invariant(
                    format!("{ctx} small_gemm"),
                    "saturation_flops must be positive and finite",
                ));
            }
            if !(sg.exponent.is_finite() && sg.exponent >= 0.0) {
                return Err(Error::invariant(format!("{ctx} small_gemm"), "exponent must be finite and >= 0"));
            }
        }
        self.gemm_curve.validate(&format!("{ctx} gemm_curve"))
    }

    pub fn kind_efficiency(&self, kind: LayerKind) -> f64 {
        self.per_kind_efficiency.get(&kind).copied().unwrap_or(1.0)
    }
}

pub fn gemm_efficiency(shape: &GemmShape, device: &DeviceProfile) -> f64 {
    device.gemm_curve.efficiency(shape.m)
}

/// Seconds spent on the arithmetic of one layer pass scaled by `flop_factor`
/// (1 for forward, the backward multiplier for backward), excluding latency.
fn layer_arith_time(layer: &LayerSpec, b: u64, device: &DeviceProfile, flop_factor: f64) -> f64 {
    let small = device.small_gemm.filter(|_| layer.kind == LayerKind::Convolutional);
    let gemm_time: f64 = gemm_shapes(layer, b)
        .iter()
        .map(|s| {
            let call = small.map_or(1.0, |sg| sg.efficiency(s.flops() / s.count as f64));
            s.flops() / (gemm_efficiency(s, device) * call)
        })
        .sum();
    flop_factor * (gemm_time + layer.elementwise_flops(b))
        / (device.effective_flops * device.kind_efficiency(layer.kind))
}

/// Forward-pass time of one layer on a local batch of `b` samples.
pub fn layer_compute_time(layer: &LayerSpec, b: u64, device: &DeviceProfile) -> f64 {
    layer_arith_time(layer, b, device, 1.0) + device.fixed_layer_latency
}

/// Forward and backward time of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerTime {
    pub forward: f64,
    pub backward: f64,
}

impl LayerTime {
    pub fn total(&self) -> f64 {
        self.forward + self.backward
    }
}

pub fn layer_times(net: &NetworkSpec, b: u64, device: &DeviceProfile) -> Vec<LayerTime> {
    let bwd = direction_factor(net, Direction::Backward);
    net.layers
        .iter()
        .map(|layer| LayerTime {
            forward: layer_compute_time(layer, b, device),
            backward: if bwd > 0.0 {
                layer_arith_time(layer, b, device, bwd) + device.fixed_layer_latency
            } else {
                0.0
            },
        })
        .collect()
}

/// Forward plus backward time of one training iteration on one worker.
pub fn iteration_compute_time(net: &NetworkSpec, b: u64, device: &DeviceProfile) -> f64 {
    layer_times(net, b, device).iter().map(LayerTime::total).sum()
}

/// Iteration time split by layer kind.
pub fn time_by_kind(net: &NetworkSpec, b: u64, device: &DeviceProfile) -> BTreeMap<LayerKind, f64> {
    let mut out = BTreeMap::new();
    for (layer, t) in net.layers.iter().zip(layer_times(net, b, device)) {
        *out.entry(layer.kind).or_insert(0.0) += t.total();
    }
    out
}

/// Time-weighted share of layers that do not parallelize, taken from the
/// layers' `serial_fraction_hint`.
pub fn serial_fraction(net: &NetworkSpec, b: u64, device: &DeviceProfile) -> f64 {
    let times = layer_times(net, b, device);
    let total: f64 = times.iter().map(LayerTime::total).sum();
    let serial: f64 = net
        .layers
        .iter()
        .zip(&times)
        .map(|(l, t)| l.serial_fraction_hint.unwrap_or(0.0) * t.total())
        .sum();
    serial / total
}

/// Part of the iteration time that does not depend on FLOPs.
fn latency_floor(net: &NetworkSpec, device: &DeviceProfile) -> f64 {
    let passes = if direction_factor(net, Direction::Backward) > 0.0 { 2.0 } else { 1.0 };
    passes * net.layers.len() as f64 * device.fixed_layer_latency
}

/// A measured iteration time used to calibrate a profile.
#[derive(Debug, Clone)]
pub struct Anchor<'a> {
    pub net: &'a NetworkSpec,
    pub batch: u64,
    pub seconds: f64,
}

/// Rescales `effective_flops` so predicted iteration times match the anchors
/// in the least-squares sense. Latency and every relative proportion are left
/// untouched.
pub fn calibrate(device: &DeviceProfile, anchors: &[Anchor<'_>]) -> Result<DeviceProfile> {
    let ctx = format!("calibrate `{}`", device.name);
    if anchors.is_empty() {
        return Err(Error::invariant(ctx, "at least one anchor is required"));
    }
    // predicted(x) = arith * x + latency, with x = old_flops / new_flops.
    let mut num = 0.0;
    let mut den = 0.0;
    for a in anchors {
        if !(a.seconds > 0.0 && a.seconds.is_finite()) {
            return Err(Error::invariant(
                ctx,
                format!("measured time {} for `{}` must be positive", a.seconds, a.net.name),
            ));
        }
        if a.batch == 0 {
            return Err(Error::invariant(ctx, "anchor batch must be at least 1"));
        }
        let latency = latency_floor(a.net, device);
        let arith = iteration_compute_time(a.net, a.batch, device) - latency;
        num += arith * (a.seconds - latency);
        den += arith * arith;
    }
    let x = num / den;
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::invariant(
            ctx,
            "anchors are below the latency floor of this profile",
        ));
    }
    let mut out = device.clone();
    // A profile that already fits its anchors is a fixed point.
    if (x - 1.0).abs() > 4.0 * f64::EPSILON {
        out.effective_flops = device.effective_flops / x;
    }
    Ok(out)
}

pub fn amdahl_speedup(serial_fraction: f64, n: u64) -> f64 {
    1.0 / (serial_fraction + (1.0 - serial_fraction) / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub n: u64,
    pub speedup: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScalingCurve {
    pub points: Vec<ScalingPoint>,
}

impl ScalingCurve {
    pub fn at(&self, n: u64) -> Option<&ScalingPoint> {
        self.points.iter().find(|p| p.n == n)
    }
}

fn sorted_nodes(n_list: &[u64]) -> Vec<u64> {
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    ns
}

pub fn amdahl_curve(serial_fraction: f64, n_list: &[u64]) -> ScalingCurve {
    let points = sorted_nodes(n_list)
        .into_iter()
        .map(|n| {
            let speedup = amdahl_speedup(serial_fraction, n);
            ScalingPoint { n, speedup, efficiency: speedup / n as f64 }
        })
        .collect();
    ScalingCurve { points }
}

/// Checks that `n` workers can split a global batch of `global_batch`.
pub fn local_batch(global_batch: u64, n: u64) -> Result<u64> {
    if n == 0 {
        return Err(Error::invariant("n", "node count must be at least 1"));
    }
    if n > global_batch {
        return Err(Error::invariant(
            format!("n = {n}"),
            format!("exceeds the global batch {global_batch} (local batch would be < 1)"),
        ));
    }
    if global_batch % n != 0 {
        return Err(Error::invariant(
            format!("n = {n}"),
            format!("does not divide the global batch {global_batch}"),
        ));
    }
    Ok(global_batch / n)
}

/// Strong scaling with communication for free: the speedup at `n` nodes is
/// the single-node time at `B` over the single-node time at `B / n`.
pub fn free_comm_speedup_curve(
    net: &NetworkSpec,
    global_batch: u64,
    device: &DeviceProfile,
    n_list: &[u64],
) -> Result<ScalingCurve> {
    let base = iteration_compute_time(net, global_batch, device);
    let mut points = Vec::with_capacity(n_list.len());
    for n in sorted_nodes(n_list) {
        let b = local_batch(global_batch, n)?;
        let speedup = base / iteration_compute_time(net, b, device);
        points.push(ScalingPoint { n, speedup, efficiency: speedup / n as f64 });
    }
    Ok(ScalingCurve { points })
}
