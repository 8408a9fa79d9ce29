//! Shared domain types, the label taxonomy and file I/O.

pub mod io;
mod label;
mod types;

pub use label::{label_from_name, Region, VertebraLabel, CLASS_COUNT};
pub use types::{
    identity_matrix, normal_extent, offsets, ConfidenceState, DetectionSet, DistanceMode,
    FusionParams, McSampleSet, PhiMatrix, Plane, SliceDetection, SpineCase, VertebraCenter,
    VertebraRecord, MAX_HOPS, PHI_LEN,
};
