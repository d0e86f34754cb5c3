//! Network descriptions and the static quantities derived from them.
//!
//! A network is an ordered list of layers. Each layer consumes the output of
//! the layer before it unless it names its producers explicitly with
//! `inputs`, in which case its input size is the sum of their outputs
//! (branch/concat topologies such as inception modules).
//!
//! Everything here is a pure function of the [`NetworkSpec`]: parameter
//! counts, model bytes, GEMM shapes per forward pass and FLOPs per iteration.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ratio of backward to forward FLOPs (data-gradient plus
/// weight-gradient GEMM per forward GEMM).
pub const DEFAULT_BACKWARD_MULTIPLIER: f64 = 2.0;

/// LRN window size used when a layer does not set `kernel`.
pub const DEFAULT_LRN_SIZE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Data,
    Convolutional,
    FullyConnected,
    Pooling,
    Lrn,
    Dropout,
    Relu,
    Softmax,
    Concat,
    Accuracy,
}

impl LayerKind {
    pub const ALL: [LayerKind; 10] = [
        LayerKind::Data,
        LayerKind::Convolutional,
        LayerKind::FullyConnected,
        LayerKind::Pooling,
        LayerKind::Lrn,
        LayerKind::Dropout,
        LayerKind::Relu,
        LayerKind::Softmax,
        LayerKind::Concat,
        LayerKind::Accuracy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Data => "data",
            LayerKind::Convolutional => "convolutional",
            LayerKind::FullyConnected => "fully_connected",
            LayerKind::Pooling => "pooling",
            LayerKind::Lrn => "lrn",
            LayerKind::Dropout => "dropout",
            LayerKind::Relu => "relu",
            LayerKind::Softmax => "softmax",
            LayerKind::Concat => "concat",
            LayerKind::Accuracy => "accuracy",
        }
    }

    /// Layers that own trainable weights.
    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Convolutional | LayerKind::FullyConnected)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One layer as written in a network file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Input size in elements per sample.
    pub input: u64,
    /// Output size in elements per sample (fully connected, optionally pooling).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<u64>,
    /// Number of filters (convolution).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<u64>,
    /// Input channels seen by each filter (convolution; per group for grouped convs).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<u64>,
    /// Patch size in pixels; must be a perfect square (convolution).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<u64>,
    /// Kernel size (convolution, pooling; window size for LRN).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serial_fraction_hint: Option<f64>,
    /// Producers of this layer's input. Empty means "the previous layer".
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    /// Auxiliary-classifier layers are trained and communicated but are not
    /// part of the main classification path.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub auxiliary: bool,
}

impl LayerSpec {
    /// Bare layer of the given kind; used by tests and builders.
    pub fn new(name: impl Into<String>, kind: LayerKind, input: u64) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            input,
            output: None,
            filters: None,
            channels: None,
            patch: None,
            kernel: None,
            serial_fraction_hint: None,
            inputs: Vec::new(),
            auxiliary: false,
        }
    }

    pub fn fully_connected(name: impl Into<String>, input: u64, output: u64) -> Self {
        LayerSpec {
            output: Some(output),
            ..LayerSpec::new(name, LayerKind::FullyConnected, input)
        }
    }

    pub fn convolutional(
        name: impl Into<String>,
        input: u64,
        filters: u64,
        channels: u64,
        patch: u64,
        kernel: u64,
    ) -> Self {
        LayerSpec {
            filters: Some(filters),
            channels: Some(channels),
            patch: Some(patch),
            kernel: Some(kernel),
            ..LayerSpec::new(name, LayerKind::Convolutional, input)
        }
    }

    /// Output size in elements per sample. Only meaningful on validated layers.
    pub fn output_size(&self) -> u64 {
        match self.kind {
            LayerKind::FullyConnected => self.output.unwrap_or(0),
            LayerKind::Convolutional => {
                let z = conv_effective_size(self.patch.unwrap_or(0), self.kernel.unwrap_or(0))
                    .unwrap_or(0);
                self.filters.unwrap_or(0) * z
            }
            LayerKind::Pooling => self.output.unwrap_or(self.input),
            _ => self.input,
        }
    }

    /// Trainable weights including biases.
    pub fn param_count(&self) -> u64 {
        match self.kind {
            LayerKind::FullyConnected => {
                let o = self.output.unwrap_or(0);
                self.input * o + o
            }
            LayerKind::Convolutional => {
                let c_out = self.filters.unwrap_or(0);
                let k = self.kernel.unwrap_or(0);
                c_out * self.channels.unwrap_or(0) * k * k + c_out
            }
            _ => 0,
        }
    }

    /// Forward FLOPs for one pass over a local batch of `b` samples: GEMM
    /// FLOPs for GEMM layers, per-element work for the rest.
    pub fn forward_flops(&self, b: u64) -> f64 {
        let gemm: f64 = gemm_shapes(self, b).iter().map(GemmShape::flops).sum();
        gemm + self.elementwise_flops(b)
    }

    /// Forward FLOPs outside any GEMM.
    pub fn elementwise_flops(&self, b: u64) -> f64 {
        let per_sample = match self.kind {
            LayerKind::Data | LayerKind::Relu | LayerKind::Concat | LayerKind::Accuracy => {
                self.input as f64
            }
            LayerKind::Dropout => 2.0 * self.input as f64,
            LayerKind::Pooling => {
                let k = self.kernel.unwrap_or(1) as f64;
                k * k * self.output_size() as f64
            }
            LayerKind::Lrn => {
                let size = self.kernel.unwrap_or(DEFAULT_LRN_SIZE) as f64;
                (2.0 * size + 3.0) * self.input as f64
            }
            LayerKind::Convolutional | LayerKind::FullyConnected | LayerKind::Softmax => 0.0,
        };
        per_sample * b as f64
    }

    fn context(&self, field: &str) -> String {
        format!("layer `{}` field `{}`", self.name, field)
    }

    fn validate_fields(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invariant("layer", "empty layer name"));
        }
        if self.input == 0 {
            return Err(Error::invariant(self.context("input"), "must be positive"));
        }
        if let Some(hint) = self.serial_fraction_hint {
            if !(0.0..=1.0).contains(&hint) {
                return Err(Error::invariant(
                    self.context("serial_fraction_hint"),
                    format!("{hint} is outside [0, 1]"),
                ));
            }
        }

        let present = [
            ("output", self.output),
            ("filters", self.filters),
            ("channels", self.channels),
            ("patch", self.patch),
            ("kernel", self.kernel),
        ];
        let (required, allowed): (&[&str], &[&str]) = match self.kind {
            LayerKind::FullyConnected => (&["output"], &["output"]),
            LayerKind::Convolutional => (
                &["filters", "channels", "patch", "kernel"],
                &["filters", "channels", "patch", "kernel"],
            ),
            LayerKind::Pooling => (&["kernel"], &["kernel", "output"]),
            LayerKind::Lrn => (&[], &["kernel"]),
            _ => (&[], &[]),
        };
        for (field, value) in present {
            match value {
                Some(0) => return Err(Error::invariant(self.context(field), "must be positive")),
                Some(_) if !allowed.contains(&field) => {
                    return Err(Error::invariant(
                        self.context(field),
                        format!("not used by {} layers", self.kind),
                    ))
                }
                None if required.contains(&field) => {
                    return Err(Error::invariant(
                        self.context(field),
                        format!("required for {} layers", self.kind),
                    ))
                }
                _ => {}
            }
        }

        if self.kind == LayerKind::Convolutional {
            let k = self.kernel.unwrap_or(0);
            if k % 2 == 0 {
                return Err(Error::invariant(self.context("kernel"), format!("{k} must be odd")));
            }
            conv_effective_size(self.patch.unwrap_or(0), k)
                .map_err(|e| Error::invariant(self.context("patch"), e.to_string()))?;
        }
        if self.kind == LayerKind::Pooling {
            if let Some(out) = self.output {
                if out > self.input {
                    return Err(Error::invariant(
                        self.context("output"),
                        format!("pooling output {out} exceeds input {}", self.input),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Validated network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub name: String,
    /// Global batch size B.
    pub default_batch: u64,
    /// Step size used with `default_batch`.
    pub default_step: f64,
    /// Iterations until convergence, T.
    pub iterations_to_convergence: u64,
    /// Bytes per weight.
    pub precision_bytes: u64,
    #[serde(default = "default_backward_multiplier")]
    pub backward_multiplier: f64,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerSpec>,
}

fn default_backward_multiplier() -> f64 {
    DEFAULT_BACKWARD_MULTIPLIER
}

impl NetworkSpec {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let net: NetworkSpec =
            toml::from_str(text).map_err(|e| Error::syntax(origin, e.to_string()))?;
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("network spec is always representable as TOML")
    }

    /// Checks every field and the I/O chaining between layers.
    pub fn validate(&self) -> Result<()> {
        let ctx = format!("network `{}`", self.name);
        if self.layers.is_empty() {
            return Err(Error::invariant(ctx, "layer list is empty"));
        }
        if self.default_batch == 0 {
            return Err(Error::invariant(ctx, "default_batch must be at least 1"));
        }
        if !matches!(self.precision_bytes, 1 | 2 | 4 | 8) {
            return Err(Error::invariant(
                ctx,
                format!("precision_bytes {} not in {{1, 2, 4, 8}}", self.precision_bytes),
            ));
        }
        if !(self.default_step > 0.0) {
            return Err(Error::invariant(ctx, "default_step must be positive"));
        }
        if !(self.backward_multiplier >= 0.0 && self.backward_multiplier.is_finite()) {
            return Err(Error::invariant(ctx, "backward_multiplier must be finite and >= 0"));
        }

        let mut outputs: HashMap<&str, u64> = HashMap::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.validate_fields()?;
            if outputs.contains_key(layer.name.as_str()) {
                return Err(Error::invariant(
                    format!("layer `{}`", layer.name),
                    "duplicate layer name",
                ));
            }
            let expected = if !layer.inputs.is_empty() {
                let mut sum = 0;
                for src in &layer.inputs {
                    match outputs.get(src.as_str()) {
                        Some(size) => sum += size,
                        None => {
                            return Err(Error::invariant(
                                layer.context("inputs"),
                                format!("`{src}` is not an earlier layer"),
                            ))
                        }
                    }
                }
                Some(sum)
            } else if idx > 0 {
                Some(self.layers[idx - 1].output_size())
            } else {
                None
            };
            if let Some(expected) = expected {
                if expected != layer.input {
                    return Err(Error::invariant(
                        layer.context("input"),
                        format!("is {} but its producers output {expected}", layer.input),
                    ));
                }
            }
            outputs.insert(layer.name.as_str(), layer.output_size());
        }
        Ok(())
    }

    pub fn count_kind(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind == kind).count()
    }

    /// Fully connected layers on the main classification path.
    pub fn main_fc_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers
            .iter()
            .filter(|l| l.kind == LayerKind::FullyConnected && !l.auxiliary)
    }

    pub fn summary(&self) -> NetworkSummary {
        NetworkSummary {
            name: self.name.clone(),
            layers: self.layers.len(),
            conv_layers: self.count_kind(LayerKind::Convolutional),
            fc_layers: self.main_fc_layers().count(),
            auxiliary_fc_layers: self.count_kind(LayerKind::FullyConnected)
                - self.main_fc_layers().count(),
            fc_weights: fc_weight_count(self),
            total_weights: param_count(self),
            model_bytes: param_count(self) as f64 * self.precision_bytes as f64,
            batch: self.default_batch,
            flops_per_iteration: flops_per_iteration(
                self,
                self.default_batch,
                Direction::ForwardBackward,
            ),
            iterations_to_convergence: self.iterations_to_convergence,
        }
    }
}

/// The rows of a network properties table.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSummary {
    pub name: String,
    pub layers: usize,
    pub conv_layers: usize,
    pub fc_layers: usize,
    pub auxiliary_fc_layers: usize,
    pub fc_weights: u64,
    pub total_weights: u64,
    pub model_bytes: f64,
    pub batch: u64,
    pub flops_per_iteration: f64,
    pub iterations_to_convergence: u64,
}

impl NetworkSummary {
    pub fn flops_to_convergence(&self) -> f64 {
        self.flops_per_iteration * self.iterations_to_convergence as f64
    }
}

/// One GEMM of shape `m × k_dim * k_dim × n_dim`, executed `count` times per
/// forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GemmShape {
    pub m: u64,
    pub k_dim: u64,
    pub n_dim: u64,
    pub count: u64,
}

impl GemmShape {
    pub fn flops(&self) -> f64 {
        2.0 * self.m as f64 * self.k_dim as f64 * self.n_dim as f64 * self.count as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
    ForwardBackward,
}

/// Output pixels left after applying a `kernel`-sized filter to a square
/// patch of `patch` pixels: `(sqrt(P) - floor(k/2))^2`.
pub fn conv_effective_size(patch: u64, kernel: u64) -> Result<u64> {
    if kernel == 0 {
        return Err(Error::invariant("kernel", "must be at least 1"));
    }
    let side = patch.isqrt();
    if side * side != patch || patch == 0 {
        return Err(Error::invariant(
            "patch",
            format!("{patch} is not a positive perfect square"),
        ));
    }
    let half = kernel / 2;
    if half >= side {
        return Err(Error::invariant(
            "kernel",
            format!("kernel {kernel} leaves no output on a {side}x{side} patch"),
        ));
    }
    let base = side - half;
    Ok(base * base)
}

/// GEMMs issued by one forward pass of `layer` over a local batch of `b`.
///
/// Convolutions are lowered im2col-style: the filter matrix `C × (c·k²)`
/// multiplies a `(c·k²) × Z` patch matrix, once per sample.
pub fn gemm_shapes(layer: &LayerSpec, b: u64) -> Vec<GemmShape> {
    match layer.kind {
        LayerKind::FullyConnected => vec![GemmShape {
            m: b,
            k_dim: layer.input,
            n_dim: layer.output.unwrap_or(0),
            count: 1,
        }],
        LayerKind::Convolutional => {
            let k = layer.kernel.unwrap_or(0);
            let z = conv_effective_size(layer.patch.unwrap_or(0), k).unwrap_or(0);
            vec![GemmShape {
                m: layer.filters.unwrap_or(0),
                k_dim: layer.channels.unwrap_or(0) * k * k,
                n_dim: z,
                count: b,
            }]
        }
        LayerKind::Softmax => vec![GemmShape {
            m: layer.input,
            k_dim: 1,
            n_dim: 1,
            count: b,
        }],
        _ => Vec::new(),
    }
}

/// Trainable weights (with biases) over all layers.
pub fn param_count(net: &NetworkSpec) -> u64 {
    net.layers.iter().map(LayerSpec::param_count).sum()
}

/// Weights of the fully connected layers on the main classification path.
pub fn fc_weight_count(net: &NetworkSpec) -> u64 {
    net.main_fc_layers().map(LayerSpec::param_count).sum()
}

/// Bytes of one model (or gradient) copy after shrinking it by
/// `reduction_factor` (precision reduction, compression, sparsification).
pub fn model_bytes(net: &NetworkSpec, reduction_factor: f64) -> Result<f64> {
    check_reduction_factor(reduction_factor)?;
    Ok(param_count(net) as f64 * net.precision_bytes as f64 / reduction_factor)
}

pub(crate) fn check_reduction_factor(reduction_factor: f64) -> Result<()> {
    if !(reduction_factor >= 1.0) {
        return Err(Error::invariant(
            "reduction_factor",
            format!("{reduction_factor} must be >= 1"),
        ));
    }
    Ok(())
}

/// Scale applied to forward FLOPs for the given direction.
pub fn direction_factor(net: &NetworkSpec, direction: Direction) -> f64 {
    match direction {
        Direction::Forward => 1.0,
        Direction::Backward => net.backward_multiplier,
        Direction::ForwardBackward => 1.0 + net.backward_multiplier,
    }
}

pub fn flops_per_iteration(net: &NetworkSpec, b: u64, direction: Direction) -> f64 {
    let forward: f64 = net.layers.iter().map(|l| l.forward_flops(b)).sum();
    forward * direction_factor(net, direction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net(layers: Vec<LayerSpec>) -> NetworkSpec {
        NetworkSpec {
            name: "tiny".into(),
            default_batch: 8,
            default_step: 0.01,
            iterations_to_convergence: 10,
            precision_bytes: 4,
            backward_multiplier: DEFAULT_BACKWARD_MULTIPLIER,
            layers,
        }
    }

    #[test]
    fn effective_size_examples() {
        assert_eq!(conv_effective_size(49, 3).unwrap(), 36);
        assert_eq!(conv_effective_size(49, 1).unwrap(), 49);
        assert_eq!(conv_effective_size(50176, 11).unwrap(), 47961);
    }

    #[test]
    fn effective_size_errors() {
        assert!(conv_effective_size(50, 3).is_err());
        assert!(conv_effective_size(49, 15).is_err());
        assert!(conv_effective_size(0, 1).is_err());
        assert!(conv_effective_size(49, 0).is_err());
    }

    #[test]
    fn fc_gemm_shape() {
        let fc = LayerSpec::fully_connected("fc", 4096, 9192);
        let shapes = gemm_shapes(&fc, 256);
        assert_eq!(
            shapes,
            vec![GemmShape { m: 256, k_dim: 4096, n_dim: 9192, count: 1 }]
        );
        assert_eq!(gemm_shapes(&fc, 1)[0].m, 1);
    }

    #[test]
    fn softmax_and_elementwise_shapes() {
        let sm = LayerSpec::new("prob", LayerKind::Softmax, 1000);
        assert_eq!(
            gemm_shapes(&sm, 32),
            vec![GemmShape { m: 1000, k_dim: 1, n_dim: 1, count: 32 }]
        );
        let relu = LayerSpec::new("relu", LayerKind::Relu, 1000);
        assert!(gemm_shapes(&relu, 32).is_empty());
    }

    #[test]
    fn conv_shape_uses_receptive_field() {
        let conv = LayerSpec::convolutional("conv", 3 * 49, 8, 3, 49, 3);
        assert_eq!(
            gemm_shapes(&conv, 4),
            vec![GemmShape { m: 8, k_dim: 27, n_dim: 36, count: 4 }]
        );
        assert_eq!(conv.output_size(), 8 * 36);
        assert_eq!(conv.param_count(), 8 * 3 * 9 + 8);
    }

    #[test]
    fn single_fc_params_and_bytes() {
        let net = tiny_net(vec![LayerSpec::fully_connected("fc", 2, 3)]);
        net.validate().unwrap();
        assert_eq!(param_count(&net), 9);
        assert_eq!(model_bytes(&net, 1.0).unwrap(), 36.0);
        assert!(model_bytes(&net, 0.5).is_err());
    }

    #[test]
    fn one_weight_four_bytes() {
        // 1x1 FC without the bias would be one weight; with bias it is two.
        let layer = LayerSpec::fully_connected("fc", 1, 1);
        assert_eq!(layer.param_count(), 2);
        let net = tiny_net(vec![layer]);
        assert_eq!(model_bytes(&net, 1.0).unwrap(), 2.0 * 4.0);
    }

    #[test]
    fn single_fc_forward_flops() {
        let net = tiny_net(vec![LayerSpec::fully_connected("fc", 4096, 9192)]);
        let f = flops_per_iteration(&net, 1, Direction::Forward);
        assert_eq!(f, 2.0 * 4096.0 * 9192.0);
        assert!((f - 7.53e7).abs() / 7.53e7 < 1e-3);
        assert_eq!(flops_per_iteration(&net, 1, Direction::ForwardBackward), 3.0 * f);
    }

    #[test]
    fn empty_network_rejected() {
        let err = tiny_net(vec![]).validate().unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn chaining_violation_names_layer() {
        let net = tiny_net(vec![
            LayerSpec::fully_connected("fc1", 10, 20),
            LayerSpec::new("relu", LayerKind::Relu, 21),
        ]);
        let err = net.validate().unwrap_err().to_string();
        assert!(err.contains("`relu`") && err.contains("`input`"), "{err}");
    }

    #[test]
    fn inputs_sum_producers() {
        let mut concat = LayerSpec::new("cat", LayerKind::Concat, 30);
        concat.inputs = vec!["a".into(), "b".into()];
        let mut b = LayerSpec::fully_connected("b", 5, 20);
        b.inputs = vec!["src".into()];
        let net = tiny_net(vec![
            LayerSpec::new("src", LayerKind::Data, 5),
            LayerSpec::fully_connected("a", 5, 10),
            b,
            concat,
        ]);
        net.validate().unwrap();

        let mut bad = net.clone();
        bad.layers[3].inputs = vec!["nope".into()];
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kind_field_requirements() {
        let mut fc = LayerSpec::new("fc", LayerKind::FullyConnected, 4);
        assert!(fc.validate_fields().is_err());
        fc.output = Some(2);
        fc.validate_fields().unwrap();
        fc.kernel = Some(3);
        assert!(fc.validate_fields().is_err());

        let even = LayerSpec::convolutional("c", 16, 2, 1, 16, 2);
        assert!(even.validate_fields().is_err());

        let mut relu = LayerSpec::new("r", LayerKind::Relu, 4);
        relu.serial_fraction_hint = Some(1.5);
        assert!(relu.validate_fields().is_err());
    }

    #[test]
    fn precision_and_batch_checked() {
        let mut net = tiny_net(vec![LayerSpec::fully_connected("fc", 2, 3)]);
        net.precision_bytes = 3;
        assert!(net.validate().is_err());
        net.precision_bytes = 2;
        net.default_batch = 0;
        assert!(net.validate().is_err());
    }

    #[test]
    fn toml_roundtrip_preserves_order() {
        let text = r#"
            name = "toy"
            default_batch = 4
            default_step = 0.1
            iterations_to_convergence = 100
            precision_bytes = 4

            [[layer]]
            name = "in"
            kind = "data"
            input = 16

            [[layer]]
            name = "fc"
            kind = "fully_connected"
            input = 16
            output = 4

            [[layer]]
            name = "loss"
            kind = "softmax"
            input = 4
        "#;
        let net = NetworkSpec::from_toml_str(text, "inline").unwrap();
        let names: Vec<_> = net.layers.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["in", "fc", "loss"]);
        assert_eq!(net.backward_multiplier, DEFAULT_BACKWARD_MULTIPLIER);
        let again = NetworkSpec::from_toml_str(&net.to_toml_string(), "again").unwrap();
        assert_eq!(again, net);
    }

    #[test]
    fn syntax_error_is_reported_as_such() {
        let err = NetworkSpec::from_toml_str("name = ", "broken").unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }));
        let err = NetworkSpec::from_toml_str("name = \"x\"\nbogus = 1", "stray").unwrap_err();
        assert!(matches!(err, Error::Syntax { .. }));
    }
}
