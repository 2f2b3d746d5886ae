//! Scoring rankings against ground truth and the marginal baselines.

pub mod special;

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{accuracy, Network};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::util::rng_at;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Score threshold of each point after the origin (`+inf` for the origin).
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// ROC of `scores` against `mask`; equal scores form a single threshold.
pub fn roc_auc(scores: &[f64], mask: &[bool]) -> Result<RocCurve> {
    if scores.len() != mask.len() {
        return Err(Error::dims(
            format!("{} mask entries", scores.len()),
            mask.len(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("scores contain NaN".into()));
    }
    let pos = mask.iter().filter(|&&m| m).count();
    let neg = mask.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateMask(format!(
            "{pos} positives and {neg} negatives; need at least one of each"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if mask[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(s);
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
    }
    let auc = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[1] + t[0]) * 0.5)
        .sum();
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["threshold", "fpr", "tpr"])?;
        for i in 0..self.fpr.len() {
            wr.write_record([
                self.thresholds[i].to_string(),
                self.fpr[i].to_string(),
                self.tpr[i].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationCurve {
    pub fractions: Vec<f64>,
    pub mean_accuracy: Vec<f64>,
    pub std_accuracy: Vec<f64>,
}

impl DegradationCurve {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["fraction", "mean_accuracy", "std_accuracy"])?;
        for i in 0..self.fractions.len() {
            wr.write_record([
                self.fractions[i].to_string(),
                self.mean_accuracy[i].to_string(),
                self.std_accuracy[i].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `{0, 0.05, ..., 0.5}`.
pub fn default_fractions() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 20.0).collect()
}

pub const DEFAULT_REPEATS: usize = 10;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Permutes each of the `ceil(fraction * p)` top-ranked columns of the test
/// set independently and records the test accuracy, `repeats` times per
/// fraction.
pub fn shuffle_degradation(
    net: &Network,
    test: &Dataset,
    ranking: &[usize],
    fractions: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<DegradationCurve> {
    let (n, p) = (test.n(), test.p());
    if n == 0 {
        return Err(Error::InsufficientData("empty test set".into()));
    }
    if !net.config.output_link.is_classification() {
        return Err(Error::Unsupported(
            "shuffle degradation needs a classifier".into(),
        ));
    }
    let mut seen = vec![false; p];
    if ranking.len() != p
        || ranking
            .iter()
            .any(|&j| j >= p || std::mem::replace(&mut seen[j], true))
    {
        return Err(Error::InvalidInput(
            "ranking must be a permutation of the features".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let mut out = DegradationCurve {
        fractions: fractions.to_vec(),
        mean_accuracy: Vec::with_capacity(fractions.len()),
        std_accuracy: Vec::with_capacity(fractions.len()),
    };
    for (fi, &phi) in fractions.iter().enumerate() {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Config(format!("fraction {phi} outside [0, 1]")));
        }
        let count = ((phi * p as f64) - 1e-9).ceil().max(0.0) as usize;
        let selected = &ranking[..count.min(p)];
        let accs = (0..repeats)
            .into_par_iter()
            .map(|r| {
                let mut x: Matrix = test.x.clone();
                let mut g = rng_at(seed, &[fi as u64, r as u64]);
                let mut perm: Vec<usize> = (0..n).collect();
                for &j in selected {
                    perm.shuffle(&mut g);
                    let col: Vec<f64> = perm.iter().map(|&i| test.x[(i, j)]).collect();
                    for (i, v) in col.into_iter().enumerate() {
                        x[(i, j)] = v;
                    }
                }
                accuracy(net, &x, &test.y)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (m, s) = mean_std(&accs);
        out.mean_accuracy.push(m);
        out.std_accuracy.push(s);
    }
    Ok(out)
}

/// Pearson correlation of every column with `y`; zero-variance columns give 0.
pub fn marginal_correlation(x: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::dims(format!("{n} responses"), y.len()));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 rows, got {n}"
        )));
    }
    let nf = n as f64;
    let my = y.iter().sum::<f64>() / nf;
    let yc: Vec<f64> = y.iter().map(|v| v - my).collect();
    let syy: f64 = yc.iter().map(|v| v * v).sum();
    Ok(x.column_iter()
        .enumerate()
        .map(|(j, col)| {
            let mx = col.sum() / nf;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (xi, yi) in col.iter().zip(&yc) {
                let d = xi - mx;
                sxy += d * yi;
                sxx += d * d;
            }
            if sxx == 0.0 || syy == 0.0 {
                log::warn!("column {j} or the response has zero variance; correlation set to 0");
                0.0
            } else {
                (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Columns with `|rho| = 1`, where `t` is infinite.
    pub infinite: Vec<bool>,
}

/// Marginal association t-tests: `T_j = rho_j sqrt((n - 2) / (1 - rho_j²))`
/// against Student's t with `n - 2` degrees of freedom.
pub fn ttest_stats(x: &Matrix, y: &[f64]) -> Result<TTest> {
    let n = x.nrows();
    if n <= 2 {
        return Err(Error::InsufficientData(format!(
            "t-tests need n > 2, got {n}"
        )));
    }
    let rho = marginal_correlation(x, y)?;
    let df = (n - 2) as f64;
    let mut out = TTest {
        t: Vec::with_capacity(rho.len()),
        p_values: Vec::with_capacity(rho.len()),
        infinite: Vec::with_capacity(rho.len()),
    };
    for r in rho {
        let denom = 1.0 - r * r;
        if denom <= 0.0 {
            out.t.push(f64::INFINITY.copysign(r));
            out.p_values.push(0.0);
            out.infinite.push(true);
        } else {
            let t = r * (df / denom).sqrt();
            out.t.push(t);
            out.p_values.push(special::student_t_two_sided(t, df));
            out.infinite.push(false);
        }
    }
    Ok(out)
}
