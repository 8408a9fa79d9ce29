//! Seeded synthetic cases with planted ground truth.
//!
//! Each case is a consecutive run of vertebrae on a gently curved spine.
//! Classifier output is modeled as Dirichlet draws around a confusion vector
//! that leaks mass to the adjacent labels; detector output as per-slice boxes
//! with position and size jitter, missed boxes and uniform noise boxes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    ConfidenceState, DetectionSet, McSampleSet, Plane, SliceDetection, SpineCase, VertebraCenter,
    VertebraLabel, VertebraRecord, CLASS_COUNT,
};
use crate::error::{Error, Result};

/// Mass the base confidence vector puts on each label relative to the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    pub true_mass: f64,
    pub adjacent1_mass: f64,
    pub adjacent2_mass: f64,
    pub floor: f64,
}

impl Default for ConfusionModel {
    fn default() -> Self {
        ConfusionModel {
            true_mass: 0.6,
            adjacent1_mass: 0.15,
            adjacent2_mass: 0.03,
            floor: 0.0021,
        }
    }
}

impl ConfusionModel {
    /// A model with the given truth and first-neighbor mass; the remainder is
    /// split so that second neighbors get a fifth of the first-neighbor mass
    /// and the other 19 classes share what is left.
    pub fn from_masses(true_mass: f64, adjacent1_mass: f64) -> Self {
        let adjacent2_mass = adjacent1_mass / 5.0;
        let rest = (1.0 - true_mass - 2.0 * adjacent1_mass - 2.0 * adjacent2_mass).max(0.0);
        ConfusionModel {
            true_mass,
            adjacent1_mass,
            adjacent2_mass,
            floor: rest / (CLASS_COUNT - 5) as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let masses = [self.true_mass, self.adjacent1_mass, self.adjacent2_mass, self.floor];
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid("confusion-masses", "masses must be finite and >= 0"));
        }
        if !(self.true_mass > 0.0 && self.true_mass <= 1.0) {
            return Err(Error::invalid("confusion-masses", format!("true mass {} outside (0, 1]", self.true_mass)));
        }
        let total = self.true_mass
            + 2.0 * self.adjacent1_mass
            + 2.0 * self.adjacent2_mass
            + (CLASS_COUNT - 5) as f64 * self.floor;
        if (total - 1.0).abs() > 0.05 {
            return Err(Error::invalid(
                "confusion-masses",
                format!("interior masses sum to {total}, expected about 1"),
            ));
        }
        Ok(())
    }

    /// Base vector for `truth`, renormalized where neighbors fall off the
    /// label range.
    pub fn base_vector(&self, truth: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..CLASS_COUNT)
            .map(|c| match c.abs_diff(truth) {
                0 => self.true_mass,
                1 => self.adjacent1_mass,
                2 => self.adjacent2_mass,
                _ => self.floor,
            })
            .collect();
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    /// Dirichlet concentration; `inf` makes every sample equal to the base vector.
    pub concentration: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 20,
            concentration: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Probability that a box on a slice through a vertebra is missed.
    pub miss_rate: f64,
    /// Std of box center jitter, voxels.
    pub position_sigma: f64,
    /// Relative std of box width and height.
    pub dim_sigma: f64,
    /// Fraction of all emitted boxes that are uniform noise.
    pub noise_rate: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            miss_rate: 0.1,
            position_sigma: 1.0,
            dim_sigma: 0.05,
            noise_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub n_cases: usize,
    pub k_slices: usize,
    /// Inclusive bounds on the number of vertebrae per case.
    pub vertebrae_range: (usize, usize),
    pub confusion: ConfusionModel,
    pub mc: McConfig,
    pub detect: DetectConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_cases: 10,
            k_slices: 200,
            vertebrae_range: (5, 12),
            confusion: ConfusionModel::default(),
            mc: McConfig::default(),
            detect: DetectConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.confusion.validate()?;
        let (lo, hi) = self.vertebrae_range;
        if lo < 1 || hi > CLASS_COUNT || lo > hi {
            return Err(Error::invalid("vertebrae-range", format!("range ({lo}, {hi}) not within [1, 24]")));
        }
        if self.n_cases == 0 {
            return Err(Error::invalid("case-count", "n_cases must be >= 1"));
        }
        if self.k_slices < 100 {
            return Err(Error::invalid("slice-count", format!("k_slices {} < 100 cannot hold a spine", self.k_slices)));
        }
        if self.mc.samples == 0 || !(self.mc.concentration > 0.0) {
            return Err(Error::invalid("mc-config", "need samples >= 1 and concentration > 0"));
        }
        let d = &self.detect;
        if !(0.0..1.0).contains(&d.noise_rate) || !(0.0..1.0).contains(&d.miss_rate) {
            return Err(Error::invalid("detect-config", "noise_rate and miss_rate must lie in [0, 1)"));
        }
        if !(d.position_sigma >= 0.0 && d.dim_sigma >= 0.0 && d.dim_sigma < 0.3) {
            return Err(Error::invalid("detect-config", "sigmas must be >= 0 and dim_sigma < 0.3"));
        }
        Ok(())
    }
}

/// A generated case with its detections and the planted centers.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCase {
    pub case: SpineCase<f64>,
    pub detections: DetectionSet<f64>,
}

impl GeneratedCase {
    pub fn planted_centers(&self) -> Vec<[f64; 3]> {
        self.case.vertebrae.iter().map(|v| v.center.position).collect()
    }
}

/// Sub-seed of case `index` under `master`.
pub fn case_seed(master: u64, index: usize) -> u64 {
    splitmix64(splitmix64(master) ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one Dirichlet sample with parameters `concentration * base`.
pub fn dirichlet_sample<R: Rng>(rng: &mut R, base: &[f64], concentration: f64) -> Vec<f64> {
    if concentration.is_infinite() {
        return base.to_vec();
    }
    for _ in 0..64 {
        let draw: Vec<f64> = base
            .iter()
            .map(|&b| {
                let shape = concentration * b;
                if shape > 0.0 {
                    Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
                } else {
                    0.0
                }
            })
            .collect();
        let s: f64 = draw.iter().sum();
        if s > 0.0 && s.is_finite() {
            return draw.into_iter().map(|x| x / s).collect();
        }
    }
    base.to_vec()
}

/// Generates `cfg.n_cases` cases; case `i` depends only on `(cfg, i)`.
pub fn gen_cases(cfg: &GenConfig) -> Result<Vec<GeneratedCase>> {
    cfg.validate()?;
    (0..cfg.n_cases).map(|i| gen_case(cfg, i)).collect()
}

/// Per-level vertebra geometry in voxels.
struct Shape {
    height: f64,
    ap_depth: f64,
    lateral: f64,
}

fn shape_of(label: usize) -> Shape {
    let height = 16.0 + 10.0 * label as f64 / (CLASS_COUNT - 1) as f64;
    Shape {
        height,
        ap_depth: 1.6 * height,
        lateral: 1.9 * height,
    }
}

pub fn gen_case(cfg: &GenConfig, index: usize) -> Result<GeneratedCase> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed(cfg.seed, index));
    let (lo, hi) = cfg.vertebrae_range;
    let count = rng.gen_range(lo..=hi);
    let start = rng.gen_range(0..=CLASS_COUNT - count);
    let case_id = format!("case-{index:04}");

    // centers along a gently curved chain, cranial at large z
    let shapes: Vec<Shape> = (start..start + count).map(shape_of).collect();
    let margin = 30.0;
    let mut z_offsets = vec![0.0];
    for pair in shapes.windows(2) {
        let gap = 0.5 * (pair[0].height + pair[1].height) * 1.25;
        z_offsets.push(z_offsets.last().expect("non-empty") + gap);
    }
    let length = *z_offsets.last().expect("non-empty");
    let depth = (length + 2.0 * margin).ceil() as usize;
    let k = cfg.k_slices;
    let mid = k as f64 / 2.0;
    let phase_x: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_y: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let amp_x: f64 = rng.gen_range(0.0..8.0);
    let amp_y: f64 = rng.gen_range(0.0..8.0);
    let centers: Vec<[f64; 3]> = z_offsets
        .iter()
        .map(|&off| {
            let t = if length > 0.0 { off / length } else { 0.0 };
            [
                mid + amp_x * (std::f64::consts::PI * t + phase_x).sin(),
                mid + amp_y * (std::f64::consts::PI * t + phase_y).sin(),
                depth as f64 - margin - off,
            ]
        })
        .collect();

    // detections
    let det = &cfg.detect;
    let jitter = Normal::new(0.0, det.position_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let scale = Normal::new(1.0, det.dim_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let volume_shape = [depth, k, k];
    let mut detections = Vec::new();
    let mut member_counts = vec![0usize; count];
    for (v, (c, s)) in centers.iter().zip(&shapes).enumerate() {
        for (plane, normal_center, half, in_slice, width) in [
            (Plane::Sagittal, c[0], s.lateral / 2.0, c[1], s.ap_depth),
            (Plane::Coronal, c[1], s.ap_depth / 2.0, c[0], s.lateral),
        ] {
            let first = (normal_center - half).ceil().max(0.0) as usize;
            let last = ((normal_center + half).floor() as usize).min(k - 1);
            for slice in first..=last {
                if rng.gen::<f64>() < det.miss_rate {
                    continue;
                }
                detections.push(SliceDetection {
                    plane,
                    slice_index: slice,
                    cx: in_slice + jitter.sample(&mut rng),
                    cy: c[2] + jitter.sample(&mut rng),
                    w: width * scale.sample(&mut rng).max(0.5),
                    h: s.height * scale.sample(&mut rng).max(0.5),
                    confidence: rng.gen_range(0.5..1.0),
                });
                member_counts[v] += 1;
            }
        }
    }
    let true_boxes = detections.len();
    let noise = ((det.noise_rate / (1.0 - det.noise_rate)) * true_boxes as f64).round() as usize;
    for _ in 0..noise {
        let plane = if rng.gen::<bool>() { Plane::Sagittal } else { Plane::Coronal };
        let s = shape_of(rng.gen_range(start..start + count));
        detections.push(SliceDetection {
            plane,
            slice_index: rng.gen_range(0..k),
            cx: rng.gen_range(0.0..k as f64),
            cy: rng.gen_range(0.0..depth as f64),
            w: s.ap_depth * rng.gen_range(0.5..2.0),
            h: s.height * rng.gen_range(0.5..2.0),
            confidence: rng.gen_range(0.1..0.6),
        });
    }
    detections.shuffle(&mut rng);

    // classifier samples
    let mut vertebrae = Vec::with_capacity(count);
    for (i, (c, s)) in centers.iter().zip(&shapes).enumerate() {
        let truth = start + i;
        let base = cfg.confusion.base_vector(truth);
        let samples = (0..cfg.mc.samples)
            .map(|_| ConfidenceState::new(dirichlet_sample(&mut rng, &base, cfg.mc.concentration)))
            .collect::<Result<Vec<_>>>()?;
        vertebrae.push(VertebraRecord {
            center: VertebraCenter {
                position: *c,
                mean_dims: [(s.ap_depth + s.lateral) / 2.0, s.height],
                member_count: member_counts[i],
                z_rank: i,
            },
            mc: McSampleSet::new(samples)?,
            truth: Some(VertebraLabel::new(truth)?),
            uncertainty: None,
        });
    }

    let case = SpineCase {
        case_id: case_id.clone(),
        vertebrae,
        weight_metric: None,
    };
    case.validate()?;
    let detections = DetectionSet {
        case_id,
        volume_shape,
        k,
        detections,
    };
    detections.validate()?;
    Ok(GeneratedCase { case, detections })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_vector_edges_renormalize() {
        let m = ConfusionModel::default();
        for t in [0, 1, 11, 22, 23] {
            let v = m.base_vector(t);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(crate::scalar::argmax(&v), t);
        }
        assert!(m.base_vector(0)[0] > m.base_vector(11)[11]);
    }

    #[test]
    fn infeasible_masses_rejected() {
        let bad = ConfusionModel {
            true_mass: 0.9,
            adjacent1_mass: 0.3,
            ..ConfusionModel::default()
        };
        assert!(bad.validate().is_err());
        assert!(ConfusionModel { true_mass: 0.0, ..ConfusionModel::default() }.validate().is_err());
        assert!(ConfusionModel::from_masses(0.4, 0.2).validate().is_ok());
    }

    #[test]
    fn seeds_differ_per_case() {
        assert_ne!(case_seed(1, 0), case_seed(1, 1));
        assert_ne!(case_seed(1, 0), case_seed(2, 0));
        assert_eq!(case_seed(7, 3), case_seed(7, 3));
    }

    #[test]
    fn generated_cases_are_valid_and_consecutive() {
        let cfg = GenConfig {
            n_cases: 4,
            vertebrae_range: (3, 24),
            ..GenConfig::default()
        };
        for g in gen_cases(&cfg).unwrap() {
            g.case.validate().unwrap();
            let t = g.case.truths().unwrap();
            assert!(t.windows(2).all(|p| p[1].index() == p[0].index() + 1));
            assert_eq!(g.case.vertebrae[0].mc.len(), 20);
            assert!(g.detections.detections.len() > 30 * g.case.len());
        }
    }

    #[test]
    fn noiseless_limit_is_one_hot() {
        let cfg = GenConfig {
            n_cases: 2,
            confusion: ConfusionModel {
                true_mass: 1.0,
                adjacent1_mass: 0.0,
                adjacent2_mass: 0.0,
                floor: 0.0,
            },
            mc: McConfig {
                samples: 5,
                concentration: f64::INFINITY,
            },
            ..GenConfig::default()
        };
        for g in gen_cases(&cfg).unwrap() {
            for v in &g.case.vertebrae {
                for s in &v.mc.samples {
                    assert_eq!(s, &ConfidenceState::one_hot(v.truth.unwrap()));
                }
            }
        }
    }
}
