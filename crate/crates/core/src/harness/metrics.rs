use serde::{Deserialize, Serialize};

use crate::domain::{Region, VertebraLabel, CLASS_COUNT};
use crate::error::{Error, Result};

fn check_lengths(pred: &[VertebraLabel], truth: &[VertebraLabel]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::domain(format!(
            "{} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::domain("metrics need at least one vertebra"));
    }
    Ok(())
}

/// Fraction of exact label matches.
pub fn id_rate(pred: &[VertebraLabel], truth: &[VertebraLabel]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean squared difference of label indices.
pub fn label_mse(pred: &[VertebraLabel], truth: &[VertebraLabel]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let sq: usize = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| p.index().abs_diff(t.index()).pow(2))
        .sum();
    Ok(sq as f64 / pred.len() as f64)
}

/// Identification rate of one anatomical region; `None` when absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionRates {
    pub cervical: Option<f64>,
    pub thoracic: Option<f64>,
    pub lumbar: Option<f64>,
}

/// Aggregate metrics over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id_rate: f64,
    pub mse: f64,
    /// `per_class_confusion[truth][pred]`.
    pub per_class_confusion: Vec<Vec<usize>>,
    pub n_vertebrae: usize,
    pub n_cases: usize,
    /// Per-case identification rates in case order.
    pub per_case_id_rate: Vec<f64>,
    /// Cases with every vertebra correct.
    pub cases_all_correct: usize,
    pub per_region: RegionRates,
}

impl EvalReport {
    pub fn trace(&self) -> usize {
        (0..CLASS_COUNT).map(|i| self.per_class_confusion[i][i]).sum()
    }

    pub fn truth_count(&self, class: usize) -> usize {
        self.per_class_confusion[class].iter().sum()
    }

    /// Histogram of per-case rates over ten equal bins, the last closed.
    pub fn case_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        for &r in &self.per_case_id_rate {
            h[((r * 10.0) as usize).min(9)] += 1;
        }
        h
    }

    /// Plot-ready per-class table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,name,truth_count,correct,id_rate\n");
        for c in 0..CLASS_COUNT {
            let n = self.truth_count(c);
            let hit = self.per_class_confusion[c][c];
            let rate = if n == 0 { String::new() } else { format!("{}", hit as f64 / n as f64) };
            let name = VertebraLabel::new(c).expect("in range").name();
            out.push_str(&format!("{c},{name},{n},{hit},{rate}\n"));
        }
        out
    }
}

/// Aggregates metrics over `(predictions, truths)` pairs, one per case.
pub fn evaluate(cases: &[(Vec<VertebraLabel>, Vec<VertebraLabel>)]) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::domain("nothing to evaluate"));
    }
    let mut confusion = vec![vec![0usize; CLASS_COUNT]; CLASS_COUNT];
    let mut per_case = Vec::with_capacity(cases.len());
    let mut all_correct = 0;
    let mut n = 0;
    let mut sq = 0usize;
    let mut region = [(0usize, 0usize); 3];
    for (pred, truth) in cases {
        let rate = id_rate(pred, truth)?;
        if rate == 1.0 {
            all_correct += 1;
        }
        per_case.push(rate);
        for (p, t) in pred.iter().zip(truth) {
            confusion[t.index()][p.index()] += 1;
            sq += p.index().abs_diff(t.index()).pow(2);
            let r = match t.region() {
                Region::Cervical => 0,
                Region::Thoracic => 1,
                Region::Lumbar => 2,
            };
            region[r].0 += 1;
            region[r].1 += (p == t) as usize;
        }
        n += pred.len();
    }
    let hits: usize = (0..CLASS_COUNT).map(|i| confusion[i][i]).sum();
    let rate_of = |(total, hit): (usize, usize)| (total > 0).then(|| hit as f64 / total as f64);
    Ok(EvalReport {
        id_rate: hits as f64 / n as f64,
        mse: sq as f64 / n as f64,
        per_class_confusion: confusion,
        n_vertebrae: n,
        n_cases: cases.len(),
        per_case_id_rate: per_case,
        cases_all_correct: all_correct,
        per_region: RegionRates {
            cervical: rate_of(region[0]),
            thoracic: rate_of(region[1]),
            lumbar: rate_of(region[2]),
        },
    })
}
