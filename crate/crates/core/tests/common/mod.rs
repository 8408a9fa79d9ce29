//! Independent oracles and fixtures shared by the integration tests.
//!
//! Nothing here calls into the code under test except to build inputs, so a
//! bug in the library cannot hide behind a matching bug in its oracle.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twofloat::TwoFloat;

use vertid::domain::{ConfidenceState, DistanceMode, FusionParams, McSampleSet, SpineCase, VertebraCenter, VertebraLabel, VertebraRecord};
use vertid::CLASS_COUNT;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn tf(x: f64) -> TwoFloat {
    TwoFloat::from(x)
}

/// `a / b` in double-double by three steps of long division. The crate's own
/// division by a double-double operand keeps only double precision.
pub fn div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    tf(q1) + q2 + q3
}

pub fn label(i: usize) -> VertebraLabel {
    VertebraLabel::new(i).unwrap()
}

pub fn labels(ix: &[usize]) -> Vec<VertebraLabel> {
    ix.iter().map(|&i| label(i)).collect()
}

// ---------------------------------------------------------------- density

/// Number of points other than `i` whose squared distance to `i` is at most
/// `eps^2`, by a plain double loop without square roots.
pub fn brute_density_count(points: &[[f64; 3]], i: usize, eps: f64) -> usize {
    let e2 = eps * eps;
    (0..points.len())
        .filter(|&j| {
            j != i && {
                let d2: f64 = (0..3).map(|a| (points[i][a] - points[j][a]).powi(2)).sum();
                d2 <= e2
            }
        })
        .count()
}

/// A density instance: points on a half-voxel lattice (many exact ties at
/// the radius) for even seeds, continuous points for odd seeds.
pub fn density_instance(seed: u64) -> (Vec<[f64; 3]>, f64, usize) {
    let mut r = rng(seed);
    let n = r.gen_range(1..=500);
    let lattice = seed.is_multiple_of(2);
    let side = r.gen_range(4.0..40.0f64);
    let coord = |r: &mut ChaCha8Rng| {
        if lattice {
            (r.gen_range(0.0..side) * 2.0).round() / 2.0
        } else {
            r.gen_range(0.0..side)
        }
    };
    let points: Vec<[f64; 3]> = (0..n).map(|_| [coord(&mut r), coord(&mut r), coord(&mut r)]).collect();
    let eps = if lattice {
        r.gen_range(1..=12) as f64 / 2.0
    } else {
        r.gen_range(0.3..6.0)
    };
    let l_i = r.gen_range(1..=20);
    (points, eps, l_i)
}

// ---------------------------------------------------------------- supcon

/// Random unit rows with every label present at least twice and at least two
/// labels, so every member has both positives and negatives.
pub fn supcon_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<VertebraLabel>, f64) {
    let mut r = rng(seed);
    let pairs = r.gen_range(2..=8);
    let dim = r.gen_range(2..=8);
    let classes = r.gen_range(2..=pairs.min(4));
    let mut labs = Vec::new();
    for p in 0..pairs {
        let c = if p < classes { p } else { r.gen_range(0..classes) };
        labs.push(c);
        labs.push(c);
    }
    let n = labs.len();
    let vectors = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let tau = r.gen_range(0.05..1.0);
    (vectors, labels(&labs), tau)
}

/// The printed double loop, evaluated in double-double arithmetic:
/// `sum_v -ln( mean_{g in G(v)} exp(s_vg) / sum_{a != v} exp(s_va) )`.
pub fn supcon_oracle(vectors: &[Vec<f64>], labs: &[VertebraLabel], tau: f64) -> f64 {
    let rows: Vec<Vec<TwoFloat>> = vectors.iter().map(|r| r.iter().map(|&x| tf(x)).collect()).collect();
    supcon_oracle_dd(&rows, labs, tau).hi()
}

pub fn supcon_oracle_dd(vectors: &[Vec<TwoFloat>], labs: &[VertebraLabel], tau: f64) -> TwoFloat {
    let n = vectors.len();
    let dot = |a: &[TwoFloat], b: &[TwoFloat]| {
        let mut s = tf(0.0);
        for (&x, &y) in a.iter().zip(b) {
            s += x * y;
        }
        s / tau
    };
    let mut total = tf(0.0);
    for v in 0..n {
        let mut num = tf(0.0);
        let mut count = 0;
        let mut den = tf(0.0);
        for a in 0..n {
            if a == v {
                continue;
            }
            let e = dot(&vectors[v], &vectors[a]).exp();
            den += e;
            if labs[a] == labs[v] {
                num += e;
                count += 1;
            }
        }
        let mean = num / count as f64;
        total -= div(mean, den).ln();
    }
    total
}

/// Central differences of the double-double loss, step `h` per coordinate.
pub fn supcon_fd(vectors: &[Vec<f64>], labs: &[VertebraLabel], tau: f64, h: f64) -> Vec<Vec<f64>> {
    let base: Vec<Vec<TwoFloat>> = vectors.iter().map(|r| r.iter().map(|&x| tf(x)).collect()).collect();
    let mut out = vec![vec![0.0; vectors[0].len()]; vectors.len()];
    for i in 0..vectors.len() {
        for d in 0..vectors[0].len() {
            let mut plus = base.clone();
            plus[i][d] += tf(h);
            let mut minus = base.clone();
            minus[i][d] -= tf(h);
            let diff = supcon_oracle_dd(&plus, labs, tau) - supcon_oracle_dd(&minus, labs, tau);
            out[i][d] = (diff / (2.0 * h)).hi();
        }
    }
    out
}

// ---------------------------------------------------------------- sequences

/// Longest strictly increasing subsequence by enumerating every subset.
pub fn exhaustive_lis(seq: &[usize]) -> usize {
    let n = seq.len();
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        let picked: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| seq[i]).collect();
        if picked.windows(2).all(|w| w[0] < w[1]) {
            best = best.max(picked.len());
        }
    }
    best
}

/// Best start of a consecutive label window by exhaustive scoring.
pub fn brute_window(states: &[Vec<f64>]) -> usize {
    let k = states.len();
    let mut best = (f64::NEG_INFINITY, 0);
    for s in 0..=CLASS_COUNT - k {
        let score: f64 = states.iter().enumerate().map(|(i, p)| (p[s + i] + 1e-12).ln()).sum();
        if score > best.0 {
            best = (score, s);
        }
    }
    best.1
}

// ---------------------------------------------------------------- uncertainty

/// Mean, entropy and mean per-class unbiased variance in double-double.
pub struct McOracle {
    pub mean: Vec<f64>,
    pub entropy: f64,
    pub variance: f64,
}

pub fn mc_oracle(samples: &[Vec<f64>]) -> McOracle {
    let mut mean: Vec<TwoFloat> = (0..CLASS_COUNT)
        .map(|c| {
            let mut s = tf(0.0);
            for row in samples {
                s += tf(row[c]);
            }
            s / samples.len() as f64
        })
        .collect();
    let mut total = tf(0.0);
    for m in &mean {
        total += *m;
    }
    for m in mean.iter_mut() {
        *m = div(*m, total);
    }
    let mut h = tf(0.0);
    for &p in &mean {
        if p > tf(0.0) {
            h -= p * p.ln();
        }
    }
    let mut var = tf(0.0);
    for c in 0..CLASS_COUNT {
        let mut m = tf(0.0);
        for row in samples {
            m += tf(row[c]);
        }
        m /= samples.len() as f64;
        let mut ss = tf(0.0);
        for row in samples {
            let d = tf(row[c]) - m;
            ss += d * d;
        }
        var += ss / (samples.len() - 1) as f64;
    }
    McOracle {
        mean: mean.iter().map(|x| x.hi()).collect(),
        entropy: h.hi(),
        variance: (var / CLASS_COUNT as f64).hi(),
    }
}

// ---------------------------------------------------------------- fixtures

/// A random probability row; `peak` concentrates mass on `center`.
pub fn random_row<R: Rng>(r: &mut R, center: usize, peak: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..CLASS_COUNT).map(|_| r.gen_range(0.001..1.0)).collect();
    v[center] += peak;
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

pub fn random_samples<R: Rng>(r: &mut R, n: usize, center: usize, peak: f64) -> McSampleSet<f64> {
    McSampleSet::new(
        (0..n)
            .map(|_| ConfidenceState::new(random_row(r, center, peak)).unwrap())
            .collect(),
    )
    .unwrap()
}

/// A case of `k` consecutive vertebrae starting at a random label, with noisy
/// samples peaked near the truth and centers spaced along z.
pub fn random_case(seed: u64, k: usize, samples: usize) -> SpineCase<f64> {
    let mut r = rng(seed);
    let start = r.gen_range(0..=CLASS_COUNT - k);
    let vertebrae = (0..k)
        .map(|i| {
            let truth = start + i;
            let center = (truth as i64 + r.gen_range(-1..=1)).clamp(0, CLASS_COUNT as i64 - 1) as usize;
            VertebraRecord {
                center: VertebraCenter {
                    position: [
                        100.0 + r.gen_range(-3.0..3.0),
                        100.0 + r.gen_range(-3.0..3.0),
                        500.0 - 25.0 * i as f64 + r.gen_range(-2.0..2.0),
                    ],
                    mean_dims: [35.0, 20.0],
                    member_count: 40,
                    z_rank: i,
                },
                mc: {
                    let peak = r.gen_range(0.0..8.0);
                    random_samples(&mut r, samples, center, peak)
                },
                truth: Some(label(truth)),
                uncertainty: None,
            }
        })
        .collect();
    SpineCase {
        case_id: format!("rand-{seed}"),
        vertebrae,
        weight_metric: None,
    }
}

/// Random nonnegative matrices for every offset of `window`.
pub fn random_phi(seed: u64, window: usize, lo: f64, hi: f64) -> std::collections::BTreeMap<i32, Vec<f64>> {
    let mut r = rng(seed);
    vertid::domain::offsets(window)
        .unwrap()
        .into_iter()
        .map(|d| (d, (0..CLASS_COUNT * CLASS_COUNT).map(|_| r.gen_range(lo..hi)).collect()))
        .collect()
}

/// Three labeled cases of four vertebrae each, used for gradient checks.
pub fn toy_training_cases() -> Vec<SpineCase<f64>> {
    (0..3)
        .map(|i| {
            let mut case = random_case(9000 + i, 4, 5);
            let mut r = rng(9100 + i);
            for v in &mut case.vertebrae {
                let center = v.truth.unwrap().index();
                let samples = (0..5)
                    .map(|_| {
                        let mut p: Vec<f64> = (0..CLASS_COUNT).map(|_| r.gen_range(0.3..1.0)).collect();
                        p[center] += r.gen_range(0.0..6.0);
                        let s: f64 = p.iter().sum();
                        ConfidenceState::new(p.into_iter().map(|x| x / s).collect()).unwrap()
                    })
                    .collect();
                v.mc = McSampleSet::new(samples).unwrap();
            }
            case
        })
        .collect()
}

// ---------------------------------------------------------------- training

/// `p_truth + 1e-12` of every vertebra after fusing every case with `params`,
/// recomputed in double-double from the raw MC samples: certainty-weighted
/// messages from neighbors within the window and per-hop renormalization of
/// rows that received a message.
pub fn fused_truth_probs_dd(cases: &[SpineCase<f64>], params: &FusionParams<f64>) -> Vec<TwoFloat> {
    let r = (params.window / 2) as i64;
    let ln24 = (CLASS_COUNT as f64).ln();
    let theta = tf(params.theta);
    let mut out = Vec::new();
    for case in cases {
        let n = case.vertebrae.len();
        let mut rows = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for v in &case.vertebrae {
            let samples: Vec<Vec<f64>> = v.mc.samples.iter().map(|s| s.probs.clone()).collect();
            let o = mc_oracle(&samples);
            rows.push(o.mean.iter().map(|&x| tf(x)).collect::<Vec<_>>());
            weights.push(tf((1.0 - o.entropy / ln24).clamp(0.0, 1.0)));
        }
        for _ in 0..params.hops {
            let mut next = Vec::with_capacity(n);
            for i in 0..n {
                let mut raw = rows[i].clone();
                let mut touched = false;
                for d in (-r..=r).filter(|&d| d != 0) {
                    let j = i as i64 + d;
                    if j < 0 || j >= n as i64 {
                        continue;
                    }
                    let j = j as usize;
                    let dis = match params.distance_mode {
                        DistanceMode::Index => tf(d.unsigned_abs() as f64),
                        DistanceMode::Physical => {
                            let (a, b) = (&case.vertebrae[i].center.position, &case.vertebrae[j].center.position);
                            (0..3).map(|k| (tf(a[k]) - tf(b[k])) * (tf(a[k]) - tf(b[k]))).fold(tf(0.0), |s, x| s + x).sqrt()
                        }
                    };
                    let scale = div(theta * weights[j], dis);
                    if scale == tf(0.0) {
                        continue;
                    }
                    touched = true;
                    let m = &params.phi[&(d as i32)];
                    for (k, &src) in rows[j].iter().enumerate() {
                        for c in 0..CLASS_COUNT {
                            raw[c] += scale * src * tf(m[k * CLASS_COUNT + c]);
                        }
                    }
                }
                if touched {
                    let s = raw.iter().fold(tf(0.0), |a, &x| a + x);
                    raw.iter_mut().for_each(|x| *x = div(*x, s));
                }
                next.push(raw);
            }
            rows = next;
        }
        for (row, v) in rows.iter().zip(&case.vertebrae) {
            out.push(row[v.truth.unwrap().index()] + tf(1e-12));
        }
    }
    out
}

/// Mean cross-entropy of the fused truth probabilities.
pub fn training_loss_dd(cases: &[SpineCase<f64>], params: &FusionParams<f64>) -> TwoFloat {
    let p = fused_truth_probs_dd(cases, params);
    -p.iter().fold(tf(0.0), |s, &x| s + x.ln()) / p.len() as f64
}

/// `ln(a / b)` to full double-double accuracy when the ratio is near one,
/// through `2 atanh((a - b) / (a + b))`. The library `ln` of each side is
/// only good to about 1e-17, too coarse for differencing.
fn ln_ratio(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let z = div(a - b, a + b);
    if z.abs() > tf(0.2) {
        return a.ln() - b.ln();
    }
    let z2 = z * z;
    let (mut term, mut sum) = (z, tf(0.0));
    for k in 0..40 {
        sum += term / (2 * k + 1) as f64;
        term *= z2;
    }
    tf(2.0) * sum
}

/// Central difference of [`training_loss_dd`] in one matrix entry.
pub fn training_fd(cases: &[SpineCase<f64>], params: &FusionParams<f64>, offset: i32, idx: usize, h: f64) -> f64 {
    let x = params.phi[&offset][idx];
    let at = |value: f64| {
        let mut q = params.clone();
        q.phi.get_mut(&offset).unwrap()[idx] = value;
        fused_truth_probs_dd(cases, &q)
    };
    let (hi, lo) = (x + h, x - h);
    let (up, down) = (at(hi), at(lo));
    let diff = up.iter().zip(&down).fold(tf(0.0), |s, (&u, &d)| s - ln_ratio(u, d));
    // hi - lo is exact, so the quotient uses the step actually taken
    (diff / up.len() as f64 / (hi - lo)).hi()
}

// ---------------------------------------------------------------- cli

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the command-line binary in `dir`.
pub fn cli(dir: &std::path::Path, args: &[&str]) -> Run {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_vertid"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// A labeled case whose every sample puts all mass one label above the
/// truth, so the truth has probability zero.
pub fn hopeless_case() -> SpineCase<f64> {
    let mut case = random_case(55, 3, 2);
    for v in &mut case.vertebrae {
        let wrong = (v.truth.unwrap().index() + 1) % CLASS_COUNT;
        v.mc = McSampleSet::new(vec![ConfidenceState::one_hot(label(wrong)); 2]).unwrap();
    }
    case
}
