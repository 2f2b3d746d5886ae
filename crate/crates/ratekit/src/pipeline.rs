//! Network plus data in, per-class importance reports out.

use serde::{Deserialize, Serialize};

use crate::bnn::{logit_posterior, Network};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::esa::{covariance_esa, EffectSizePosterior};
use crate::linalg::DEFAULT_JITTER;
use crate::rate::{
    build_precision, group_rate, rate_scores, GroupMap, ImportanceReport, KldPath, PrecisionModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportanceOptions {
    pub jitter: f64,
    pub path: KldPath,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        ImportanceOptions {
            jitter: DEFAULT_JITTER,
            path: KldPath::Fast,
        }
    }
}

/// Intermediate and final products for one output node.
#[derive(Clone, Debug)]
pub struct ClassImportance {
    pub effect_sizes: EffectSizePosterior,
    pub precision: PrecisionModel,
    pub report: ImportanceReport,
}

/// Effect-size posteriors of every output node with the data's feature names.
pub fn effect_sizes(net: &Network, data: &Dataset) -> Result<Vec<EffectSizePosterior>> {
    if data.p() != net.config.input_dim {
        return Err(Error::dims(
            format!("{} features", net.config.input_dim),
            data.p(),
        ));
    }
    let lp = logit_posterior(net, &data.x)?;
    covariance_esa(&data.x, &lp)?
        .into_iter()
        .map(|e| e.with_feature_names(data.feature_names.clone()))
        .collect()
}

fn precisions(
    net: &Network,
    data: &Dataset,
    opts: &ImportanceOptions,
) -> Result<Vec<(EffectSizePosterior, PrecisionModel)>> {
    effect_sizes(net, data)?
        .into_iter()
        .map(|e| {
            let pm = build_precision(&e, opts.jitter)?;
            Ok((e, pm))
        })
        .collect()
}

/// RATE for every variable, one report per output node.
pub fn variable_importance(
    net: &Network,
    data: &Dataset,
    opts: &ImportanceOptions,
) -> Result<Vec<ClassImportance>> {
    precisions(net, data, opts)?
        .into_iter()
        .map(|(effect_sizes, precision)| {
            let report = rate_scores(&precision, opts.path)?;
            Ok(ClassImportance {
                effect_sizes,
                precision,
                report,
            })
        })
        .collect()
}

/// groupRATE, one report per output node.
pub fn group_importance(
    net: &Network,
    data: &Dataset,
    groups: &GroupMap,
    opts: &ImportanceOptions,
) -> Result<Vec<ClassImportance>> {
    precisions(net, data, opts)?
        .into_iter()
        .map(|(effect_sizes, precision)| {
            let report = group_rate(&precision, groups, opts.path)?;
            Ok(ClassImportance {
                effect_sizes,
                precision,
                report,
            })
        })
        .collect()
}

/// Both estimators on one replicate of the two-feature collinear regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollinearityReplicate {
    pub replicate: usize,
    pub esa: [f64; 2],
    pub ols: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollinearityStudy {
    pub rho: f64,
    pub n: usize,
    pub replicates: Vec<CollinearityReplicate>,
    pub esa: EstimatorSummary,
    pub ols: EstimatorSummary,
}

fn summarize(values: impl Iterator<Item = [f64; 2]> + Clone) -> EstimatorSummary {
    let count = values.clone().count() as f64;
    let mut mean = [0.0; 2];
    for v in values.clone() {
        mean[0] += v[0] / count;
        mean[1] += v[1] / count;
    }
    let mut std = [0.0; 2];
    if count > 1.0 {
        for v in values {
            std[0] += (v[0] - mean[0]).powi(2);
            std[1] += (v[1] - mean[1]).powi(2);
        }
        std = [
            (std[0] / (count - 1.0)).sqrt(),
            (std[1] / (count - 1.0)).sqrt(),
        ];
    }
    EstimatorSummary { mean, std }
}

/// Repeats `y = 2 x1 - 2 x2 + eps` with `corr(x1, x2) = rho` and records the
/// covariance effect sizes (the sample covariances of each feature with `y`)
/// next to the OLS coefficients.
pub fn collinearity_study(n: usize, rho: f64, reps: usize, seed: u64) -> Result<CollinearityStudy> {
    use crate::esa::ols_effect_size;
    use crate::linalg::Matrix;
    use crate::simgen::collinear_regression;
    use crate::util::derive_seed;
    use rayon::prelude::*;

    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    let replicates = (0..reps)
        .into_par_iter()
        .map(|r| {
            let ds = collinear_regression(n, rho, derive_seed(seed, &[r as u64]))?;
            let y = Matrix::from_column_slice(n, 1, &ds.y);
            let lp = crate::bnn::LogitPosterior::from_parts(y, vec![Matrix::zeros(n, 1)])?;
            let esa = &covariance_esa(&ds.x, &lp)?[0];
            let ols = ols_effect_size(&ds.x, &ds.y)?;
            Ok(CollinearityReplicate {
                replicate: r,
                esa: [esa.mu[0], esa.mu[1]],
                ols: [ols.coefficients[0], ols.coefficients[1]],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CollinearityStudy {
        rho,
        n,
        esa: summarize(replicates.iter().map(|r| r.esa)),
        ols: summarize(replicates.iter().map(|r| r.ols)),
        replicates,
    })
}
