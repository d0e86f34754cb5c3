//! Gradient/model exchange cost under the three aggregation schemes, and the
//! per-iteration timeline that overlaps it with the backward pass.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netspec::{check_reduction_factor, direction_factor, model_bytes, Direction, NetworkSpec};
use crate::perfmodel::{layer_times, DeviceProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One server receives n-1 gradients and sends back n-1 models.
    ParameterServer,
    /// Reduce up and broadcast down a binary tree of depth ceil(log2 n).
    BinaryTree,
    RingAllReduce,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ParameterServer, Scheme::BinaryTree, Scheme::RingAllReduce];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::ParameterServer => "parameter_server",
            Scheme::BinaryTree => "binary_tree",
            Scheme::RingAllReduce => "ring_all_reduce",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        match key.as_str() {
            "parameterserver" | "ps" => Ok(Scheme::ParameterServer),
            "binarytree" | "tree" => Ok(Scheme::BinaryTree),
            "ringallreduce" | "ring" => Ok(Scheme::RingAllReduce),
            _ => Err(Error::invariant(
                "scheme",
                format!("unknown scheme `{s}` (expected parameter_server, binary_tree or ring_all_reduce)"),
            )),
        }
    }
}

/// How gradients are handed to the network during the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overlap {
    /// Each layer's gradient is sent as soon as it is computed.
    #[default]
    PerLayer,
    /// The whole gradient is sent after the backward pass (pessimistic bound).
    WholeModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    #[serde(default = "one")]
    pub n: u64,
    /// Peak link bandwidth in bytes/s; `inf` disables the bandwidth term.
    pub link_bandwidth: f64,
    pub bandwidth_efficiency: f64,
    /// Seconds per message.
    pub link_latency: f64,
    pub scheme: Scheme,
    #[serde(default)]
    pub overlap: Overlap,
}

fn one() -> u64 {
    1
}

impl ClusterSpec {
    pub fn with_nodes(&self, n: u64) -> Self {
        ClusterSpec { n, ..self.clone() }
    }

    pub fn effective_bandwidth(&self) -> f64 {
        self.link_bandwidth * self.bandwidth_efficiency
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invariant("cluster.n", "node count must be at least 1"));
        }
        if !(self.link_bandwidth > 0.0) {
            return Err(Error::invariant("cluster.link_bandwidth", "must be positive"));
        }
        if !(self.bandwidth_efficiency > 0.0 && self.bandwidth_efficiency <= 1.0) {
            return Err(Error::invariant(
                "cluster.bandwidth_efficiency",
                format!("{} is outside (0, 1]", self.bandwidth_efficiency),
            ));
        }
        if !(self.link_latency >= 0.0 && self.link_latency.is_finite()) {
            return Err(Error::invariant("cluster.link_latency", "must be finite and >= 0"));
        }
        Ok(())
    }
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(64 - (n - 1).leading_zeros())
    }
}

/// Total bytes put on the wire per iteration, summed over all links.
///
/// Every scheme moves n-1 gradients up and n-1 models down in aggregate; the
/// ring does it as n nodes each sending 2(n-1)/n of the model, so the scheme
/// changes the time, not the volume.
pub fn per_iteration_traffic(_scheme: Scheme, n: u64, model_bytes: f64) -> f64 {
    2.0 * n.saturating_sub(1) as f64 * model_bytes
}

/// Wall-clock time of one exchange of `model_bytes` among `n` workers.
pub fn comm_time(scheme: Scheme, n: u64, model_bytes: f64, cluster: &ClusterSpec) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let bw = cluster.effective_bandwidth();
    let lat = cluster.link_latency;
    let peers = (n - 1) as f64;
    match scheme {
        Scheme::ParameterServer => 2.0 * peers * model_bytes / bw + 2.0 * lat,
        Scheme::BinaryTree => 2.0 * ceil_log2(n) as f64 * (model_bytes / bw + lat),
        Scheme::RingAllReduce => 2.0 * peers * (model_bytes / n as f64) / bw + 2.0 * peers * lat,
    }
}

/// Phase boundaries of one iteration, in seconds from its start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationTimeline {
    pub forward_end: f64,
    pub backward_end: f64,
    pub comm_end: f64,
    pub iteration_time: f64,
    pub idle_fraction: f64,
    /// Seconds the link spends transferring within the iteration.
    pub link_busy: f64,
}

impl IterationTimeline {
    /// Communication outlasts the backward pass, idling the compute units.
    pub fn comm_bound(&self) -> bool {
        self.comm_end > self.backward_end
    }

    /// Time during which the link is busy outside the compute phases.
    pub fn exposed_comm(&self) -> f64 {
        (self.comm_end - self.backward_end).max(0.0)
    }
}

/// Schedules forward, backward and the gradient exchange of one iteration
/// for `cluster.n` workers with local batch `b`.
///
/// In per-layer mode a layer's gradient is released once its weight gradient
/// (one forward-equivalent of work, computed first) is done; the link serves
/// releases one at a time in backward order.
pub fn overlap_timeline(
    net: &NetworkSpec,
    b: u64,
    device: &DeviceProfile,
    cluster: &ClusterSpec,
    reduction_factor: f64,
) -> Result<IterationTimeline> {
    check_reduction_factor(reduction_factor)?;
    cluster.validate()?;
    if b == 0 {
        return Err(Error::invariant("b", "local batch must be at least 1"));
    }
    let times = layer_times(net, b, device);
    let forward_end: f64 = times.iter().map(|t| t.forward).sum();
    let n = cluster.n;
    let send = |bytes: f64| comm_time(cluster.scheme, n, bytes, cluster);

    let mut clock = forward_end;
    let mut link_free = forward_end;
    let mut link_busy = 0.0;
    match cluster.overlap {
        Overlap::PerLayer => {
            let bwd = direction_factor(net, Direction::Backward);
            let grad_share = if bwd > 1.0 { 1.0 / bwd } else { 1.0 };
            for (layer, t) in net.layers.iter().zip(&times).rev() {
                let release = clock + grad_share * t.backward;
                clock += t.backward;
                let params = layer.param_count();
                if params > 0 && n > 1 {
                    let bytes = params as f64 * net.precision_bytes as f64 / reduction_factor;
                    let dt = send(bytes);
                    link_free = link_free.max(release) + dt;
                    link_busy += dt;
                }
            }
        }
        Overlap::WholeModel => {
            clock += times.iter().map(|t| t.backward).sum::<f64>();
            if n > 1 {
                link_busy = send(model_bytes(net, reduction_factor)?);
                link_free = clock + link_busy;
            }
        }
    }
    let backward_end = clock;
    let comm_end = link_free;
    let iteration_time = backward_end.max(comm_end);
    let idle_fraction = if iteration_time > 0.0 {
        (comm_end - backward_end).max(0.0) / iteration_time
    } else {
        0.0
    };
    Ok(IterationTimeline { forward_end, backward_end, comm_end, iteration_time, idle_fraction, link_busy })
}

/// Smallest divisor `n` of `global_batch` at which the iteration becomes
/// communication bound, or `None` if it never does for `n <= global_batch`.
pub fn crossover_nodes(
    net: &NetworkSpec,
    global_batch: u64,
    device: &DeviceProfile,
    cluster: &ClusterSpec,
    reduction_factor: f64,
) -> Result<Option<u64>> {
    if global_batch == 0 {
        return Err(Error::invariant("global_batch", "must be at least 1"));
    }
    for n in (2..=global_batch).filter(|n| global_batch % n == 0) {
        let tl = overlap_timeline(net, global_batch / n, device, &cluster.with_nodes(n), reduction_factor)?;
        if tl.comm_bound() {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{LayerKind, LayerSpec};
    use crate::perfmodel::GemmCurve;

    fn cluster(scheme: Scheme) -> ClusterSpec {
        ClusterSpec {
            n: 1,
            link_bandwidth: 6.8e9,
            bandwidth_efficiency: 0.5,
            link_latency: 5e-6,
            scheme,
            overlap: Overlap::PerLayer,
        }
    }

    fn device() -> DeviceProfile {
        DeviceProfile {
            name: "flat".into(),
            effective_flops: 1e12,
            fixed_layer_latency: 0.0,
            per_kind_efficiency: Default::default(),
            gemm_curve: GemmCurve::power_law(1, 0.5),
            small_gemm: None,
        }
    }

    fn net() -> NetworkSpec {
        NetworkSpec {
            name: "mlp".into(),
            default_batch: 64,
            default_step: 0.01,
            iterations_to_convergence: 1,
            precision_bytes: 4,
            backward_multiplier: 2.0,
            layers: vec![
                LayerSpec::fully_connected("fc1", 4096, 4096),
                LayerSpec::new("relu1", LayerKind::Relu, 4096),
                LayerSpec::fully_connected("fc2", 4096, 1000),
            ],
        }
    }

    #[test]
    fn parameter_server_traffic() {
        assert_eq!(per_iteration_traffic(Scheme::ParameterServer, 1, 250e6), 0.0);
        assert_eq!(per_iteration_traffic(Scheme::ParameterServer, 4, 250e6), 1.5e9);
        assert_eq!(per_iteration_traffic(Scheme::ParameterServer, 2, 250e6) * 450_000.0, 225e12);
    }

    #[test]
    fn tree_has_log_stages() {
        let c = cluster(Scheme::BinaryTree);
        let stage = 1e6 / c.effective_bandwidth() + c.link_latency;
        assert_eq!(comm_time(Scheme::BinaryTree, 8, 1e6, &c), 6.0 * stage);
        assert_eq!(comm_time(Scheme::BinaryTree, 5, 1e6, &c), 6.0 * stage);
        assert!(comm_time(Scheme::BinaryTree, 16, 1e6, &c) > comm_time(Scheme::BinaryTree, 8, 1e6, &c));
    }

    #[test]
    fn single_node_has_no_comm() {
        for s in Scheme::ALL {
            assert_eq!(comm_time(s, 1, 1e9, &cluster(s)), 0.0);
            let tl = overlap_timeline(&net(), 64, &device(), &cluster(s), 1.0).unwrap();
            assert_eq!(tl.idle_fraction, 0.0);
            assert!(!tl.comm_bound());
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert_eq!("Ring".parse::<Scheme>().unwrap(), Scheme::RingAllReduce);
        assert!("mesh".parse::<Scheme>().is_err());
    }

    #[test]
    fn whole_model_is_pessimistic() {
        let mut c = cluster(Scheme::BinaryTree).with_nodes(4);
        let per_layer = overlap_timeline(&net(), 16, &device(), &c, 1.0).unwrap();
        c.overlap = Overlap::WholeModel;
        let whole = overlap_timeline(&net(), 16, &device(), &c, 1.0).unwrap();
        assert!(whole.iteration_time >= per_layer.iteration_time);
        assert_eq!(whole.backward_end, per_layer.backward_end);
        assert!(whole.comm_bound());
    }

    #[test]
    fn timeline_is_ordered() {
        let c = cluster(Scheme::ParameterServer).with_nodes(8);
        let tl = overlap_timeline(&net(), 8, &device(), &c, 1.0).unwrap();
        assert!(0.0 < tl.forward_end && tl.forward_end <= tl.backward_end);
        assert_eq!(tl.iteration_time, tl.backward_end.max(tl.comm_end));
    }

    #[test]
    fn infinite_bandwidth_never_crosses() {
        let mut c = cluster(Scheme::BinaryTree);
        c.link_bandwidth = f64::INFINITY;
        c.link_latency = 0.0;
        assert_eq!(crossover_nodes(&net(), 64, &device(), &c, 1.0).unwrap(), None);
    }

    #[test]
    fn rejects_bad_cluster() {
        let mut c = cluster(Scheme::BinaryTree);
        c.bandwidth_efficiency = 1.5;
        assert!(c.validate().is_err());
        c.bandwidth_efficiency = 0.5;
        c.n = 0;
        assert!(c.validate().is_err());
    }
}
