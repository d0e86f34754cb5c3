//! Training-data distribution: total traffic over a run and the per-iteration
//! stall of the data layer when samples share the link with SGD exchange.

use serde::{Deserialize, Serialize};

use crate::commmodel::ClusterSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    /// Every node holds a full copy; nothing crosses the network after it.
    NodeLocal,
    /// Samples are read from a shared filesystem over the cluster links.
    SharedFs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub total_bytes: f64,
    pub sample_count: u64,
    pub epochs_to_convergence: u64,
    pub storage: Storage,
    /// Seconds per file open on the shared filesystem.
    #[serde(default)]
    pub fs_metadata_latency: f64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_bytes > 0.0 && self.total_bytes.is_finite()) {
            return Err(Error::invariant("dataset.total_bytes", "must be positive and finite"));
        }
        if self.sample_count == 0 {
            return Err(Error::invariant("dataset.sample_count", "must be at least 1"));
        }
        if !(self.fs_metadata_latency >= 0.0 && self.fs_metadata_latency.is_finite()) {
            return Err(Error::invariant("dataset.fs_metadata_latency", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn sample_bytes(&self) -> f64 {
        self.total_bytes / self.sample_count as f64
    }
}

/// Bytes read over the network during training, excluding any initial copy.
pub fn epoch_traffic(dataset: &DatasetSpec) -> f64 {
    match dataset.storage {
        Storage::SharedFs => dataset.epochs_to_convergence as f64 * dataset.total_bytes,
        Storage::NodeLocal => 0.0,
    }
}

/// Bytes copied up front to give `n` nodes their own replica.
pub fn initial_copy_bytes(dataset: &DatasetSpec, n: u64) -> f64 {
    match dataset.storage {
        Storage::NodeLocal => n as f64 * dataset.total_bytes,
        Storage::SharedFs => 0.0,
    }
}

/// Seconds per iteration a worker waits for its `batch_samples` samples
/// (`batch_bytes` in total) when only `residual` of its link bandwidth is
/// left over by the gradient exchange.
pub fn data_layer_stall(
    batch_bytes: f64,
    batch_samples: u64,
    cluster: &ClusterSpec,
    residual: f64,
    dataset: &DatasetSpec,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&residual) {
        return Err(Error::invariant(
            "residual_bandwidth_fraction",
            format!("{residual} is outside [0, 1]"),
        ));
    }
    match dataset.storage {
        Storage::NodeLocal => Ok(0.0),
        Storage::SharedFs => {
            if residual == 0.0 {
                return Err(Error::invariant(
                    "data layer",
                    "gradient exchange saturates the link; no bandwidth is left for loading samples",
                ));
            }
            Ok(batch_bytes / (cluster.effective_bandwidth() * residual)
                + batch_samples as f64 * dataset.fs_metadata_latency)
        }
    }
}
