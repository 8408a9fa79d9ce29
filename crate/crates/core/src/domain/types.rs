use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::label::{VertebraLabel, CLASS_COUNT};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::uncertainty::{UncertaintyReport, WeightMetric};

/// Anatomical plane a 2D slice was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// Normal along x; in-slice axes are (y, z).
    Sagittal,
    /// Normal along y; in-slice axes are (x, z).
    Coronal,
}

/// One detection box on one slice.
///
/// `cx` is the horizontal in-slice coordinate and `cy` the vertical one,
/// which always maps to volume z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDetection<T> {
    pub plane: Plane,
    pub slice_index: usize,
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
    pub confidence: T,
}

impl<T: Real> SliceDetection<T> {
    pub fn validate(&self, volume_shape: [usize; 3]) -> Result<()> {
        if !(self.w > T::zero() && self.h > T::zero()) || !self.w.is_finite() || !self.h.is_finite() {
            return Err(Error::invalid(
                "positive-dimensions",
                format!("box dims must be finite and > 0, got w={} h={}", self.w, self.h),
            ));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("finite-center", "box center must be finite"));
        }
        if !(self.confidence >= T::zero() && self.confidence <= T::one()) {
            return Err(Error::invalid(
                "confidence-range",
                format!("confidence {} outside [0, 1]", self.confidence),
            ));
        }
        let extent = normal_extent(self.plane, volume_shape);
        if self.slice_index >= extent {
            return Err(Error::invalid(
                "slice-in-volume",
                format!(
                    "{:?} slice {} outside extent {extent}",
                    self.plane, self.slice_index
                ),
            ));
        }
        Ok(())
    }
}

/// Extent of the volume along a plane's normal. `volume_shape` is `(d, h, w)`,
/// the extents along (z, y, x).
pub fn normal_extent(plane: Plane, volume_shape: [usize; 3]) -> usize {
    match plane {
        Plane::Sagittal => volume_shape[2],
        Plane::Coronal => volume_shape[1],
    }
}

/// All detections for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet<T> {
    pub case_id: String,
    pub volume_shape: [usize; 3],
    /// Slices cut per plane.
    pub k: usize,
    pub detections: Vec<SliceDetection<T>>,
}

impl<T: Real> DetectionSet<T> {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("positive-k", "slice count per plane must be > 0"));
        }
        for d in &self.detections {
            d.validate(self.volume_shape)?;
        }
        Ok(())
    }
}

/// A clustered 3D vertebra center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraCenter<T> {
    /// (x, y, z) in voxels.
    pub position: [T; 3],
    /// Robust (w, h) of the member boxes.
    pub mean_dims: [T; 2],
    pub member_count: usize,
    /// 0 is the most cranial (largest z).
    pub z_rank: usize,
}

/// A probability vector over the 24 classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfidenceState<T> {
    pub probs: Vec<T>,
}

impl<T: Real> ConfidenceState<T> {
    /// Builds a state, checking length, sign and normalization at `T::NORM_TOL`.
    pub fn new(probs: Vec<T>) -> Result<Self> {
        let s = ConfidenceState { probs };
        s.check(T::NORM_TOL)?;
        Ok(s)
    }

    /// Accepts a vector normalized within `T::INGEST_TOL` and renormalizes it
    /// when it is off by more than `T::NORM_TOL`. Vectors already within the
    /// internal tolerance are kept bit-for-bit.
    pub fn from_ingest(probs: Vec<T>) -> Result<Self> {
        let mut s = ConfidenceState { probs };
        s.check(T::INGEST_TOL)?;
        let sum = s.sum();
        if (sum - T::one()).abs() > T::NORM_TOL {
            s.probs.iter_mut().for_each(|p| *p = *p / sum);
        }
        Ok(s)
    }

    pub fn uniform() -> Self {
        ConfidenceState {
            probs: vec![T::one() / T::of_usize(CLASS_COUNT); CLASS_COUNT],
        }
    }

    pub fn one_hot(label: VertebraLabel) -> Self {
        let mut probs = vec![T::zero(); CLASS_COUNT];
        probs[label.index()] = T::one();
        ConfidenceState { probs }
    }

    pub fn sum(&self) -> T {
        self.probs.iter().copied().sum()
    }

    pub fn argmax(&self) -> VertebraLabel {
        VertebraLabel::new(crate::scalar::argmax(&self.probs)).expect("24 entries")
    }

    pub fn check(&self, tol: T) -> Result<()> {
        if self.probs.len() != CLASS_COUNT {
            return Err(Error::invalid(
                "class-count",
                format!("expected {CLASS_COUNT} probabilities, got {}", self.probs.len()),
            ));
        }
        if let Some(p) = self.probs.iter().find(|p| !(p.is_finite() && **p >= T::zero())) {
            return Err(Error::invalid(
                "nonnegative-probabilities",
                format!("probability {p} is negative or non-finite"),
            ));
        }
        let sum = self.sum();
        if (sum - T::one()).abs() > tol {
            return Err(Error::invalid(
                "normalized-probabilities",
                format!("probabilities sum to {sum}, tolerance {tol}"),
            ));
        }
        Ok(())
    }
}

/// N Monte-Carlo softmax samples for one vertebra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSampleSet<T> {
    pub samples: Vec<ConfidenceState<T>>,
}

impl<T: Real> McSampleSet<T> {
    pub fn new(samples: Vec<ConfidenceState<T>>) -> Result<Self> {
        let s = McSampleSet { samples };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("nonempty-samples", "sample set needs N >= 1"));
        }
        self.samples.iter().try_for_each(|s| s.check(T::NORM_TOL))
    }
}

/// One vertebra of a case, in cranial-to-caudal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct VertebraRecord<T> {
    pub center: VertebraCenter<T>,
    pub mc: McSampleSet<T>,
    #[serde(default)]
    pub truth: Option<VertebraLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintyReport<T>>,
}

/// A case: ordered vertebrae with MC samples and optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Real"))]
pub struct SpineCase<T> {
    pub case_id: String,
    pub vertebrae: Vec<VertebraRecord<T>>,
    /// Statistic the attached uncertainty weights were derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_metric: Option<WeightMetric>,
}

impl<T: Real> SpineCase<T> {
    pub fn len(&self) -> usize {
        self.vertebrae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertebrae.is_empty()
    }

    /// All truths, or `None` if any vertebra lacks one.
    pub fn truths(&self) -> Option<Vec<VertebraLabel>> {
        self.vertebrae.iter().map(|v| v.truth).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vertebrae.is_empty() {
            return Err(Error::invalid("nonempty-case", "case has no vertebrae"));
        }
        for (i, v) in self.vertebrae.iter().enumerate() {
            if v.center.z_rank != i {
                return Err(Error::invalid(
                    "z-rank-order",
                    format!("vertebra {i} has z_rank {}", v.center.z_rank),
                ));
            }
            if v.center.position.iter().chain(&v.center.mean_dims).any(|x| !x.is_finite()) {
                return Err(Error::invalid("finite-center", format!("vertebra {i} center not finite")));
            }
            v.mc.validate()?;
        }
        for (i, pair) in self.vertebrae.windows(2).enumerate() {
            if let (Some(a), Some(b)) = (pair[0].truth, pair[1].truth) {
                if b.index() != a.index() + 1 {
                    return Err(Error::invalid(
                        "consecutive-truths",
                        format!("truth {a} at {i} followed by {b}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// How `dis(i, j)` is measured in message fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    /// `|i - j|` in sequence positions.
    #[default]
    Index,
    /// Euclidean distance between center positions, in voxels.
    Physical,
}

/// A 24x24 nonnegative matrix stored row-major: entry (k, c) at `k * 24 + c`.
pub type PhiMatrix<T> = Vec<T>;

pub const PHI_LEN: usize = CLASS_COUNT * CLASS_COUNT;

/// Message-fusion hyper-parameters and per-offset matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T> {
    pub theta: T,
    pub hops: usize,
    /// Neighborhood size counting the target; odd, at most 7.
    pub window: usize,
    pub distance_mode: DistanceMode,
    /// Keyed by signed offset `j - i`, never 0.
    pub phi: BTreeMap<i32, PhiMatrix<T>>,
}

pub const MAX_HOPS: usize = 10;

impl<T: Real> FusionParams<T> {
    /// Parameters with identity matrices for every offset of `window`.
    pub fn identity(theta: T, hops: usize, window: usize, distance_mode: DistanceMode) -> Result<Self> {
        let phi = offsets(window)?
            .into_iter()
            .map(|d| (d, identity_matrix()))
            .collect();
        let p = FusionParams {
            theta,
            hops,
            window,
            distance_mode,
            phi,
        };
        p.validate()?;
        Ok(p)
    }

    /// Largest neighbor offset.
    pub fn radius(&self) -> usize {
        (self.window - 1) / 2
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta.is_finite() && self.theta >= T::zero()) {
            return Err(Error::invalid("theta-range", format!("theta {} must be finite and >= 0", self.theta)));
        }
        if self.hops > MAX_HOPS {
            return Err(Error::invalid("hops-range", format!("hops {} exceeds {MAX_HOPS}", self.hops)));
        }
        let expected = offsets(self.window)?;
        let keys: Vec<i32> = self.phi.keys().copied().collect();
        if keys != expected {
            return Err(Error::invalid(
                "phi-offsets",
                format!("window {} needs offsets {expected:?}, got {keys:?}", self.window),
            ));
        }
        for (d, m) in &self.phi {
            if m.len() != PHI_LEN {
                return Err(Error::invalid(
                    "phi-shape",
                    format!("phi[{d:+}] has {} entries, expected {PHI_LEN}", m.len()),
                ));
            }
            if m.iter().any(|x| !(x.is_finite() && *x >= T::zero())) {
                return Err(Error::invalid("phi-nonnegative", format!("phi[{d:+}] has a negative or non-finite entry")));
            }
        }
        Ok(())
    }
}

/// Signed neighbor offsets of an odd window, in ascending order.
pub fn offsets(window: usize) -> Result<Vec<i32>> {
    if window.is_multiple_of(2) || window > 7 {
        return Err(Error::invalid(
            "odd-window",
            format!("window must be one of 1, 3, 5, 7; got {window}"),
        ));
    }
    let r = ((window - 1) / 2) as i32;
    Ok((-r..=r).filter(|&d| d != 0).collect())
}

pub fn identity_matrix<T: Real>() -> PhiMatrix<T> {
    let mut m = vec![T::zero(); PHI_LEN];
    for k in 0..CLASS_COUNT {
        m[k * CLASS_COUNT + k] = T::one();
    }
    m
}
