//! Gradient-descent training of the per-offset fusion matrices.
//!
//! The loss is the mean cross-entropy between the last-hop confidences and
//! the one-hot truths over every vertebra of every training case. Gradients
//! come from reverse accumulation through the unrolled hops; after each step
//! the matrices are projected back onto the nonnegative orthant.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{case_neighborhood, step_rows, Neighborhood};
use crate::domain::{DistanceMode, FusionParams, PhiMatrix, SpineCase, CLASS_COUNT, PHI_LEN};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::uncertainty::{case_inputs, WeightMetric};

/// Starting point for the matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiInit {
    #[default]
    Identity,
    /// Independent uniform entries in `[0, 0.01)`.
    UniformSmall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig<T> {
    pub learning_rate: T,
    pub epochs: usize,
    pub seed: u64,
    pub init: PhiInit,
}

pub const MAX_EPOCHS: usize = 100_000;

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= T::zero()) {
            return Err(Error::invalid("learning-rate", format!("learning rate {} invalid", self.learning_rate)));
        }
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return Err(Error::invalid("epochs", format!("epochs {} outside [1, {MAX_EPOCHS}]", self.epochs)));
        }
        Ok(())
    }
}

/// Parameters with matrices drawn according to `init`.
pub fn initial_params<T: Real>(
    theta: T,
    hops: usize,
    window: usize,
    mode: DistanceMode,
    init: PhiInit,
    seed: u64,
) -> Result<FusionParams<T>> {
    let mut p = FusionParams::identity(theta, hops, window, mode)?;
    if init == PhiInit::UniformSmall {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in p.phi.values_mut() {
            m.iter_mut().for_each(|x| *x = T::of(rng.gen_range(0.0..0.01)));
        }
    }
    Ok(p)
}

const CE_EPS: f64 = 1e-12;

struct Prepared<T> {
    states: Vec<Vec<T>>,
    nb: Neighborhood<T>,
    truths: Vec<usize>,
}

/// Training cases reduced to what the loss needs: initial confidences, fixed
/// message edges and truths.
pub struct TrainingSet<T> {
    cases: Vec<Prepared<T>>,
    vertebrae: usize,
    window: usize,
    mode: DistanceMode,
}

impl<T: Real> TrainingSet<T> {
    /// Edges are built for `window` and `mode`; the matrices and `theta`,
    /// `hops` come from the parameters passed to each evaluation.
    pub fn new(cases: &[SpineCase<T>], window: usize, mode: DistanceMode, metric: WeightMetric) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::domain("no training cases"));
        }
        let template = FusionParams::identity(T::zero(), 0, window, mode)?;
        let mut prepared = Vec::with_capacity(cases.len());
        let mut vertebrae = 0;
        for case in cases {
            case.validate()?;
            let truths = case
                .truths()
                .ok_or_else(|| Error::domain(format!("training case {} lacks ground truth", case.case_id)))?;
            let (states, weights) = case_inputs(case, metric)?;
            let nb = case_neighborhood(case, &weights, &template)?;
            vertebrae += truths.len();
            prepared.push(Prepared {
                states: states.into_iter().map(|s| s.probs).collect(),
                nb,
                truths: truths.iter().map(|l| l.index()).collect(),
            });
        }
        Ok(TrainingSet {
            cases: prepared,
            vertebrae,
            window,
            mode,
        })
    }

    pub fn vertebrae(&self) -> usize {
        self.vertebrae
    }

    fn check(&self, params: &FusionParams<T>) -> Result<()> {
        params.validate()?;
        if params.window != self.window || params.distance_mode != self.mode {
            return Err(Error::domain("parameters do not match the training set's window or distance mode"));
        }
        Ok(())
    }

    /// Mean cross-entropy of the last hop.
    pub fn loss(&self, params: &FusionParams<T>) -> Result<T> {
        self.check(params)?;
        let eps = T::of(CE_EPS);
        let mut total = T::zero();
        for c in &self.cases {
            let mut rows = c.states.clone();
            for _ in 0..params.hops {
                rows = step_rows(&rows, &c.nb, params).0;
            }
            for (row, &y) in rows.iter().zip(&c.truths) {
                total = total - (row[y] + eps).ln();
            }
        }
        Ok(total / T::of_usize(self.vertebrae))
    }

    /// Loss and its gradient with respect to every matrix entry.
    pub fn loss_and_grad(&self, params: &FusionParams<T>) -> Result<(T, BTreeMap<i32, PhiMatrix<T>>)> {
        self.check(params)?;
        Ok(self.loss_and_grad_unchecked(params))
    }

    /// As [`loss_and_grad`](Self::loss_and_grad) for parameters already known
    /// to match this set; non-finite matrix entries propagate into the loss.
    fn loss_and_grad_unchecked(&self, params: &FusionParams<T>) -> (T, BTreeMap<i32, PhiMatrix<T>>) {
        let eps = T::of(CE_EPS);
        let m = T::of_usize(self.vertebrae);
        let mut grad: BTreeMap<i32, PhiMatrix<T>> =
            params.phi.keys().map(|&d| (d, vec![T::zero(); PHI_LEN])).collect();
        let mut total = T::zero();

        for c in &self.cases {
            // forward, keeping every hop and its normalizers
            let mut hops = vec![c.states.clone()];
            let mut sums = Vec::with_capacity(params.hops);
            for _ in 0..params.hops {
                let (next, s) = step_rows(hops.last().expect("non-empty"), &c.nb, params);
                hops.push(next);
                sums.push(s);
            }
            let last = hops.last().expect("non-empty");
            let mut upstream: Vec<Vec<T>> = vec![vec![T::zero(); CLASS_COUNT]; last.len()];
            for (i, &y) in c.truths.iter().enumerate() {
                let p = last[i][y] + eps;
                total = total - p.ln();
                upstream[i][y] = -T::one() / (m * p);
            }

            // backward through each hop
            for t in (1..hops.len()).rev() {
                let out = &hops[t];
                let input = &hops[t - 1];
                let mut down: Vec<Vec<T>> = Vec::with_capacity(out.len());
                let mut raw_grads: Vec<Vec<T>> = Vec::with_capacity(out.len());
                for i in 0..out.len() {
                    // d/d raw of raw / sum(raw)
                    let g = &upstream[i];
                    let dot: T = g.iter().zip(&out[i]).map(|(&a, &b)| a * b).sum();
                    let rg: Vec<T> = match sums[t - 1][i] {
                        Some(s) => g.iter().map(|&a| (a - dot) / s).collect(),
                        None => g.clone(),
                    };
                    down.push(rg.clone());
                    raw_grads.push(rg);
                }
                for (i, links) in c.nb.links.iter().enumerate() {
                    let rg = &raw_grads[i];
                    for l in links {
                        let a = params.theta * l.scale;
                        let phi = &params.phi[&l.offset];
                        let gphi = grad.get_mut(&l.offset).expect("same offsets");
                        let src = &input[l.source];
                        for k in 0..CLASS_COUNT {
                            let ak = a * src[k];
                            let prow = &phi[k * CLASS_COUNT..(k + 1) * CLASS_COUNT];
                            let grow = &mut gphi[k * CLASS_COUNT..(k + 1) * CLASS_COUNT];
                            let mut back = T::zero();
                            for cc in 0..CLASS_COUNT {
                                grow[cc] = grow[cc] + ak * rg[cc];
                                back = back + prow[cc] * rg[cc];
                            }
                            down[l.source][k] = down[l.source][k] + a * back;
                        }
                    }
                }
                upstream = down;
            }
        }
        (total / m, grad)
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    /// Parameters with the lowest training loss seen, the initial ones included.
    pub params: FusionParams<T>,
    pub initial_loss: T,
    pub best_loss: T,
    /// Loss before each epoch's update.
    pub history: Vec<T>,
}

/// Full-batch projected gradient descent on the matrices of `params_init`.
pub fn train_phi<T: Real>(
    cases: &[SpineCase<T>],
    params_init: &FusionParams<T>,
    cfg: &TrainConfig<T>,
    metric: WeightMetric,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    params_init.validate()?;
    let set = TrainingSet::new(cases, params_init.window, params_init.distance_mode, metric)?;
    set.check(params_init)?;
    let mut params = params_init.clone();
    let mut best = params.clone();
    let mut best_loss = T::infinity();
    let mut initial_loss = T::nan();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..=cfg.epochs {
        let (loss, grad) = set.loss_and_grad_unchecked(&params);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: loss.to_f64_lossy(),
            });
        }
        if epoch == 0 {
            initial_loss = loss;
        }
        if loss < best_loss {
            best_loss = loss;
            best = params.clone();
        }
        if epoch == cfg.epochs {
            break;
        }
        history.push(loss);
        for (d, m) in params.phi.iter_mut() {
            for (x, &g) in m.iter_mut().zip(&grad[d]) {
                *x = (*x - cfg.learning_rate * g).max(T::zero());
            }
        }
    }
    Ok(TrainReport {
        params: best,
        initial_loss,
        best_loss,
        history,
    })
}
