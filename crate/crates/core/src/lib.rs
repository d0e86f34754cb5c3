//! Performance model and simulator for synchronous data-parallel training,
//! plus a small reference SGD engine that checks the algebra the model
//! relies on.

pub mod commmodel;
pub mod datamodel;
pub mod error;
pub mod netspec;
pub mod perfmodel;
pub mod scalesim;
pub mod sgdcore;

pub use commmodel::{ClusterSpec, IterationTimeline, Overlap, Scheme};
pub use datamodel::{DatasetSpec, Storage};
pub use error::{Error, Result};
pub use netspec::{GemmShape, LayerKind, LayerSpec, NetworkSpec, NetworkSummary};
pub use perfmodel::{DeviceProfile, GemmCurve, ScalingCurve, ScalingPoint, SmallGemm};
pub use scalesim::{LargeBatchPolicy, LargeBatchReport, Scenario, ScalingReport, ScalingRow};
pub use sgdcore::{Dataset, Gradient, ModelState, SgdConfig};
