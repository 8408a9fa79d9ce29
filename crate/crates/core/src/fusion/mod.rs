//! Uncertainty-weighted message fusion along the vertebra chain.
//!
//! One hop updates every vertebra at once:
//!
//! ```text
//! omega_i = sum_{j in N(i)} u_j / dis(i, j) * (C_j x phi[j - i])
//! C_i'    = (C_i + theta * omega_i) / lambda_i
//! ```
//!
//! where `C_j x phi` is the row vector `C_j` times a 24x24 matrix, `u_j` is the
//! sender's certainty weight and `lambda_i` the sum of the unnormalized
//! update. `N(i)` holds the vertebrae at offsets `1..=r` on either side,
//! `r = (window - 1) / 2`, truncated at the ends of the chain. Every factor
//! is nonnegative, so the update never leaves the probability simplex.

mod train;

use serde::{Deserialize, Serialize};

pub use train::{initial_params, train_phi, PhiInit, TrainConfig, TrainReport, TrainingSet};

use crate::cluster::distance;
use crate::domain::{
    ConfidenceState, DistanceMode, FusionParams, SpineCase, VertebraLabel, CLASS_COUNT,
};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::uncertainty::{case_inputs, WeightMetric};

/// One incoming message edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link<T> {
    pub source: usize,
    /// `source - target`.
    pub offset: i32,
    /// `u_source / dis(target, source)`.
    pub scale: T,
}

/// Incoming edges per vertebra, fixed across hops.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood<T> {
    pub links: Vec<Vec<Link<T>>>,
}

impl<T: Real> Neighborhood<T> {
    /// Builds the edges of a chain of `weights.len()` vertebrae. `positions`
    /// are only read in physical distance mode.
    pub fn new(weights: &[T], positions: &[[T; 3]], window: usize, mode: DistanceMode) -> Result<Self> {
        let n = weights.len();
        if mode == DistanceMode::Physical && positions.len() != n {
            return Err(Error::domain(format!("{} positions for {n} vertebrae", positions.len())));
        }
        let r = crate::domain::offsets(window)?.last().copied().unwrap_or(0);
        let mut links = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::new();
            for d in (-r..=r).filter(|&d| d != 0) {
                let j = i as i64 + d as i64;
                if j < 0 || j >= n as i64 {
                    continue;
                }
                let j = j as usize;
                let dis = match mode {
                    DistanceMode::Index => T::of_usize(d.unsigned_abs() as usize),
                    DistanceMode::Physical => distance(&positions[i], &positions[j]),
                };
                if !(dis > T::zero()) || !dis.is_finite() {
                    return Err(Error::DegenerateGeometry(i, j));
                }
                row.push(Link {
                    source: j,
                    offset: d,
                    scale: weights[j] / dis,
                });
            }
            links.push(row);
        }
        Ok(Neighborhood { links })
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

/// `out += scale * (row x m)` for a row-major 24x24 matrix.
pub(crate) fn add_row_times_matrix<T: Real>(out: &mut [T], row: &[T], m: &[T], scale: T) {
    for (k, &rk) in row.iter().enumerate() {
        let a = scale * rk;
        if a == T::zero() {
            continue;
        }
        let mrow = &m[k * CLASS_COUNT..(k + 1) * CLASS_COUNT];
        for (o, &x) in out.iter_mut().zip(mrow) {
            *o = *o + a * x;
        }
    }
}

/// One hop on raw probability rows. Returns the new rows and each row's
/// normalizer `lambda_i`, or `None` when the row received no message and was
/// passed through unchanged.
pub(crate) fn step_rows<T: Real>(
    rows: &[Vec<T>],
    nb: &Neighborhood<T>,
    params: &FusionParams<T>,
) -> (Vec<Vec<T>>, Vec<Option<T>>) {
    let mut out = Vec::with_capacity(rows.len());
    let mut sums = Vec::with_capacity(rows.len());
    for (i, links) in nb.links.iter().enumerate() {
        let mut raw = rows[i].clone();
        let mut touched = false;
        for l in links {
            let a = params.theta * l.scale;
            if a != T::zero() {
                add_row_times_matrix(&mut raw, &rows[l.source], &params.phi[&l.offset], a);
                touched = true;
            }
        }
        if touched {
            let s: T = raw.iter().copied().sum();
            raw.iter_mut().for_each(|x| *x = *x / s);
            sums.push(Some(s));
        } else {
            sums.push(None);
        }
        out.push(raw);
    }
    (out, sums)
}

/// Applies one fusion hop to `states` with precomputed edges.
pub fn fuse_step<T: Real>(
    states: &[ConfidenceState<T>],
    nb: &Neighborhood<T>,
    params: &FusionParams<T>,
) -> Result<Vec<ConfidenceState<T>>> {
    if states.is_empty() {
        return Err(Error::domain("fusion over an empty case"));
    }
    if states.len() != nb.len() {
        return Err(Error::domain(format!("{} states for {} vertebrae", states.len(), nb.len())));
    }
    params.validate()?;
    let rows: Vec<Vec<T>> = states.iter().map(|s| s.probs.clone()).collect();
    let (out, _) = step_rows(&rows, nb, params);
    out.into_iter().map(ConfidenceState::new).collect()
}

/// Per-hop snapshots and the final argmax labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTrace<T> {
    /// `snapshots[t]` holds every vertebra's confidences after `t` hops.
    pub snapshots: Vec<Vec<ConfidenceState<T>>>,
    pub final_labels: Vec<VertebraLabel>,
}

impl<T: Real> FusionTrace<T> {
    pub fn last(&self) -> &[ConfidenceState<T>] {
        self.snapshots.last().expect("snapshot 0 always present")
    }
}

/// Runs `params.hops` hops from explicit initial states and edges.
pub fn fuse_states<T: Real>(
    states: Vec<ConfidenceState<T>>,
    nb: &Neighborhood<T>,
    params: &FusionParams<T>,
) -> Result<FusionTrace<T>> {
    let mut snapshots = vec![states];
    for _ in 0..params.hops {
        let next = fuse_step(snapshots.last().expect("non-empty"), nb, params)?;
        snapshots.push(next);
    }
    let final_labels = snapshots.last().expect("non-empty").iter().map(|s| s.argmax()).collect();
    Ok(FusionTrace {
        snapshots,
        final_labels,
    })
}

/// Edges of a case: certainty weights from its uncertainty reports, positions
/// from its centers.
pub fn case_neighborhood<T: Real>(
    case: &SpineCase<T>,
    weights: &[T],
    params: &FusionParams<T>,
) -> Result<Neighborhood<T>> {
    let positions: Vec<[T; 3]> = case.vertebrae.iter().map(|v| v.center.position).collect();
    Neighborhood::new(weights, &positions, params.window, params.distance_mode)
}

/// Fuses a whole case, starting from its mean MC confidences.
pub fn fuse<T: Real>(case: &SpineCase<T>, params: &FusionParams<T>, metric: WeightMetric) -> Result<FusionTrace<T>> {
    if case.is_empty() {
        return Err(Error::domain("fusion over an empty case"));
    }
    params.validate()?;
    let (states, weights) = case_inputs(case, metric)?;
    let nb = case_neighborhood(case, &weights, params)?;
    fuse_states(states, &nb, params)
}
