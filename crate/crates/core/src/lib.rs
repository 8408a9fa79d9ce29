//! Vertebra identification toolkit: dual-factor density clustering of slice
//! detections into 3D centers, supervised contrastive and sequence losses,
//! Monte-Carlo uncertainty scoring, and uncertainty-weighted message fusion
//! that refines per-vertebra label confidences.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the common double-precision instantiations.

pub mod cluster;
pub mod domain;
mod error;
pub mod fusion;
pub mod harness;
pub mod losses;
pub mod scalar;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Real;

pub use domain::{label_from_name, DistanceMode, Plane, VertebraLabel, CLASS_COUNT};

pub type Confidence = domain::ConfidenceState<f64>;
pub type Confidence32 = domain::ConfidenceState<f32>;
pub type Samples = domain::McSampleSet<f64>;
pub type Case = domain::SpineCase<f64>;
pub type Case32 = domain::SpineCase<f32>;
pub type Detection = domain::SliceDetection<f64>;
pub type Detections = domain::DetectionSet<f64>;
pub type Center = domain::VertebraCenter<f64>;
pub type Params = domain::FusionParams<f64>;
pub type Params32 = domain::FusionParams<f32>;
pub type ClusterConfig = cluster::ClusterConfig<f64>;
pub type Batch = losses::EmbeddingBatch<f64>;
pub type Report = uncertainty::UncertaintyReport<f64>;
pub type Trace = fusion::FusionTrace<f64>;
pub type TrainConfig = fusion::TrainConfig<f64>;
