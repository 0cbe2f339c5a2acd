//! Classification metrics: confusion matrix, overall and average accuracy,
//! and Cohen's kappa.
//!
//! All three metrics are ratios of integer counts, so they are computed as
//! exact reduced fractions in 128-bit integers and divided once at the end;
//! `0.7` comes out as the literal `0.7`. Count combinations too large for
//! 128-bit intermediates fall back to 64-bit floating point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K x K contingency counts. Rows index the true class, columns the
/// predicted class; classes are 1-based at the API edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// Counts label pairs. Both slices use 1-based classes; zero or
    /// out-of-range labels are rejected.
    pub fn from_pairs(truth: &[u16], pred: &[u16], k: usize) -> Result<ConfusionMatrix> {
        if truth.is_empty() {
            return Err(Error::invalid("no samples to score"));
        }
        if truth.len() != pred.len() {
            return Err(Error::invalid(format!(
                "{} true labels against {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut counts = vec![0u64; k * k];
        for (&t, &p) in truth.iter().zip(pred) {
            let (t, p) = (t as usize, p as usize);
            if t == 0 || t > k || p == 0 || p > k {
                return Err(Error::invalid(format!(
                    "label pair ({t}, {p}) outside 1..={k}"
                )));
            }
            counts[(t - 1) * k + (p - 1)] += 1;
        }
        Ok(ConfusionMatrix { k, counts })
    }

    /// Wraps row-major counts directly; `counts.len()` must be `k * k`.
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<ConfusionMatrix> {
        if k == 0 || counts.len() != k * k {
            return Err(Error::shape(format!(
                "{} counts do not form a {k}x{k} matrix",
                counts.len()
            )));
        }
        let total = counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| Error::numeric("confusion counts overflow 64 bits"))?;
        if total == 0 {
            return Err(Error::invalid("no samples to score"));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    /// Count of samples of true class `t` predicted as `p` (both 1-based).
    pub fn count(&self, t: usize, p: usize) -> u64 {
        assert!(t >= 1 && t <= self.k && p >= 1 && p <= self.k);
        self.counts[(t - 1) * self.k + (p - 1)]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i * self.k + i]).sum()
    }

    /// Samples whose true class is `t` (1-based).
    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[(t - 1) * self.k..t * self.k].iter().sum()
    }

    /// Samples predicted as class `p` (1-based).
    pub fn col_sum(&self, p: usize) -> u64 {
        (0..self.k).map(|i| self.counts[i * self.k + (p - 1)]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        self.counts
            .iter()
            .enumerate()
            .all(|(i, &c)| c == 0 || i / self.k == i % self.k)
    }

    /// Row-major nested rows, for serialization.
    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }
}

/// The three headline numbers plus per-class recalls. A class absent from
/// the true labels has an undefined recall: its entry is `None` and it is
/// excluded from the average accuracy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub per_class: Vec<Option<f64>>,
}

impl MetricsReport {
    /// 1-based classes that never occur as a true label.
    pub fn absent_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i + 1)
            .collect()
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `num / den` with the fraction reduced first, so representable ratios come
/// out exact (division of coprime integers rounds once, correctly).
fn ratio(num: u128, den: u128) -> f64 {
    debug_assert!(den != 0);
    let g = gcd(num, den).max(1);
    (num / g) as f64 / (den / g) as f64
}

fn signed_ratio(num: i128, den: i128) -> f64 {
    let sign = if (num < 0) != (den < 0) { -1.0 } else { 1.0 };
    sign * ratio(num.unsigned_abs(), den.unsigned_abs())
}

/// `a + b` over common denominator, reduced; `None` on 128-bit overflow.
fn add_frac(a: (u128, u128), b: (u128, u128)) -> Option<(u128, u128)> {
    let g = gcd(a.1, b.1).max(1);
    let den = (a.1 / g).checked_mul(b.1)?;
    let left = a.0.checked_mul(den / a.1)?;
    let right = b.0.checked_mul(den / b.1)?;
    let num = left.checked_add(right)?;
    let r = gcd(num, den).max(1);
    Some((num / r, den / r))
}

/// Metrics from an existing confusion matrix.
///
/// OA = trace/total. AA = mean of per-class recalls over classes that occur.
/// kappa = (p_o - p_e) / (1 - p_e) with p_e = sum_k row_k * col_k / total^2,
/// which clears to (trace * total - S) / (total^2 - S) for S = sum row*col;
/// a diagonal matrix scores exactly 1 (perfect agreement) even when the
/// denominator degenerates because one class holds every sample.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let k = cm.num_classes();
    let total = cm.total() as u128;
    if total == 0 {
        return Err(Error::invalid("no samples to score"));
    }
    let trace = cm.trace() as u128;
    let oa = ratio(trace, total);

    let mut per_class = Vec::with_capacity(k);
    let mut sum = Some((0u128, 1u128));
    let mut present = 0u128;
    for t in 1..=k {
        let row = cm.row_sum(t) as u128;
        if row == 0 {
            per_class.push(None);
            continue;
        }
        let diag = cm.count(t, t) as u128;
        per_class.push(Some(ratio(diag, row)));
        present += 1;
        sum = sum.and_then(|acc| add_frac(acc, (diag, row)));
    }
    let aa = match sum.and_then(|(num, den)| den.checked_mul(present).map(|d| (num, d))) {
        Some((num, den)) => ratio(num, den),
        None => per_class.iter().flatten().sum::<f64>() / present as f64,
    };

    let kappa = if cm.is_diagonal() {
        1.0
    } else {
        let exact = (1..=k)
            .try_fold(0u128, |acc, t| {
                let prod = (cm.row_sum(t) as u128).checked_mul(cm.col_sum(t) as u128)?;
                acc.checked_add(prod)
            })
            .and_then(|s| {
                let tt = trace.checked_mul(total)?;
                let den = total.checked_mul(total)?.checked_sub(s)?;
                if tt > i128::MAX as u128 || s > i128::MAX as u128 || den > i128::MAX as u128 {
                    return None;
                }
                Some((tt as i128 - s as i128, den as i128))
            });
        match exact {
            Some((num, den)) => signed_ratio(num, den),
            None => {
                let po = trace as f64 / total as f64;
                let pe = (1..=k)
                    .map(|t| cm.row_sum(t) as f64 * cm.col_sum(t) as f64)
                    .sum::<f64>()
                    / (total as f64 * total as f64);
                (po - pe) / (1.0 - pe)
            }
        }
    };

    Ok(MetricsReport {
        oa,
        aa,
        kappa,
        per_class,
    })
}

/// Builds the confusion matrix from 1-based label pairs and scores it.
pub fn confusion_and_metrics(
    truth: &[u16],
    pred: &[u16],
    k: usize,
) -> Result<(ConfusionMatrix, MetricsReport)> {
    let cm = ConfusionMatrix::from_pairs(truth, pred, k)?;
    let report = metrics_from_confusion(&cm)?;
    Ok((cm, report))
}
