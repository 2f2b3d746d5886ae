//! Effect size analogues: the projection of the logit posterior onto the
//! input features.
//!
//! The covariance projection uses `beta = Xᵀ C f / (n - 1)`, the sample
//! covariance between every feature and the latent outputs. With
//! `f ~ N(H m + b, F Fᵀ)` this gives `beta ~ N(mu, G Gᵀ)` where
//! `mu = Xᵀ C (H m + b) / (n - 1)` and `G = Xᵀ C F / (n - 1)`. Constants added
//! to `f` vanish under `C`, so the bias never contributes.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bnn::LogitPosterior;
use crate::data::default_feature_names;
use crate::error::{Error, Result};
use crate::linalg::{center_columns, gram, Matrix, Vector};
use crate::util::rng_at;

/// Gaussian posterior `N(mu, G Gᵀ)` over the effect sizes of one output node.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectSizePosterior {
    pub mu: Vector,
    /// `p × k` covariance factor.
    pub factor: Matrix,
    pub n_used: usize,
    pub class: usize,
    pub feature_names: Vec<String>,
}

impl EffectSizePosterior {
    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::dims(
                format!("{} feature names", self.p()),
                names.len(),
            ));
        }
        self.feature_names = names;
        Ok(self)
    }

    /// Dense `Omega = G Gᵀ`.
    pub fn covariance(&self) -> Result<Matrix> {
        gram(&self.factor)
    }

    /// `diag(G Gᵀ)` without forming the full matrix.
    pub fn variances(&self) -> Vector {
        Vector::from_iterator(self.p(), self.factor.row_iter().map(|r| r.norm_squared()))
    }
}

/// One [`EffectSizePosterior`] per output node.
pub fn covariance_esa(x: &Matrix, lp: &LogitPosterior) -> Result<Vec<EffectSizePosterior>> {
    let n = x.nrows();
    if n != lp.n() {
        return Err(Error::dims(format!("{} rows", lp.n()), n));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "covariances need at least 2 observations, got {n}"
        )));
    }
    let xc = center_columns(x)?;
    let xct = xc.transpose();
    let denom = (n - 1) as f64;
    let means = center_columns(&lp.mean)?;
    let names = default_feature_names(x.ncols());
    lp.factors
        .iter()
        .enumerate()
        .map(|(c, f)| {
            let mu = &xct * means.column(c) / denom;
            let factor = &xct * f / denom;
            Ok(EffectSizePosterior {
                mu,
                factor,
                n_used: n,
                class: c,
                feature_names: names.clone(),
            })
        })
        .collect()
}

/// Least-squares fit with an intercept column.
#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    /// One coefficient per column of `X` (intercept excluded).
    pub coefficients: Vector,
    pub intercept: f64,
    pub rank_deficient: bool,
}

/// Minimum-norm least-squares coefficients of `y` on `[1 | X]`.
pub fn ols_effect_size(x: &Matrix, y: &[f64]) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::dims(format!("{n} responses"), y.len()));
    }
    if n == 0 {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let design = Matrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = (n.max(p + 1) as f64) * f64::EPSILON * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let rank_deficient = rank < p + 1;
    if rank_deficient {
        log::warn!(
            "design matrix has rank {rank} < {}; returning the minimum-norm solution",
            p + 1
        );
    }
    let b = svd
        .solve(&Vector::from_column_slice(y), tol)
        .map_err(|e| Error::Inconsistency(e.to_string()))?;
    Ok(OlsFit {
        coefficients: b.rows(1, p).into_owned(),
        intercept: b[0],
        rank_deficient,
    })
}

/// Sign of each posterior mean, with exact zeros mapped to 0.
pub fn effect_signs(esa: &EffectSizePosterior) -> Vec<i8> {
    esa.mu
        .iter()
        .map(|&m| {
            if m > 0.0 {
                1
            } else if m < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// `n_samples × p` draws `mu + G z`.
pub fn draw_effect_samples(
    esa: &EffectSizePosterior,
    n_samples: usize,
    seed: u64,
) -> Result<Matrix> {
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let k = esa.factor.ncols();
    let mut g = rng_at(seed, &[0xE5A]);
    let z = Matrix::from_fn(k, n_samples, |_, _| g.sample(StandardNormal));
    let mut draws = &esa.factor * z;
    for mut col in draws.column_iter_mut() {
        col += &esa.mu;
    }
    Ok(draws.transpose())
}

/// CSV with columns `feature,class,mu,omega_diag`.
pub fn write_effect_sizes_csv<W: Write>(posteriors: &[EffectSizePosterior], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["feature", "class", "mu", "omega_diag"])?;
    for esa in posteriors {
        let var = esa.variances();
        for j in 0..esa.p() {
            wr.write_record([
                esa.feature_names[j].clone(),
                esa.class.to_string(),
                esa.mu[j].to_string(),
                var[j].to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;

    fn gaussian(r: usize, c: usize, seed: u64) -> Matrix {
        let mut g = rng(seed);
        Matrix::from_fn(r, c, |_, _| g.sample(StandardNormal))
    }

    fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (n - 1.0)
    }

    fn posterior(mean: Matrix, factor: Matrix) -> LogitPosterior {
        LogitPosterior::from_parts(mean, vec![factor]).unwrap()
    }

    #[test]
    fn covariance_with_itself_is_variance() {
        let x = gaussian(9, 1, 1);
        let lp = posterior(x.clone(), Matrix::zeros(9, 2));
        let esa = &covariance_esa(&x, &lp).unwrap()[0];
        let col = x.column(0);
        let var = sample_cov(col.as_slice(), col.as_slice());
        assert!((esa.mu[0] - var).abs() < 1e-14);
        assert!(esa.factor.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_matches_covariance_loop() {
        let x = gaussian(6, 4, 2);
        let f = gaussian(6, 1, 3);
        let lp = posterior(f.clone(), gaussian(6, 3, 4));
        let esa = &covariance_esa(&x, &lp).unwrap()[0];
        for j in 0..4 {
            let direct = sample_cov(x.column(j).as_slice(), f.column(0).as_slice());
            assert!((esa.mu[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn factor_matches_centered_projection() {
        let n = 7;
        let x = gaussian(n, 3, 5);
        let fac = gaussian(n, 2, 6);
        let lp = posterior(gaussian(n, 1, 7), fac.clone());
        let esa = &covariance_esa(&x, &lp).unwrap()[0];
        let c = Matrix::identity(n, n) - Matrix::from_element(n, n, 1.0 / n as f64);
        let direct = x.transpose() * c * fac / (n as f64 - 1.0);
        assert!((&esa.factor - direct).amax() < 1e-12);
    }

    #[test]
    fn needs_two_rows() {
        let lp = posterior(Matrix::zeros(1, 1), Matrix::zeros(1, 1));
        assert!(matches!(
            covariance_esa(&Matrix::zeros(1, 2), &lp),
            Err(Error::InsufficientData(_))
        ));
        let lp3 = posterior(Matrix::zeros(3, 1), Matrix::zeros(3, 1));
        assert!(covariance_esa(&Matrix::zeros(4, 2), &lp3).is_err());
    }

    #[test]
    fn constant_shift_is_invisible() {
        let x = gaussian(20, 5, 8);
        let f = gaussian(20, 1, 9);
        let lp = posterior(f.clone(), gaussian(20, 3, 10));
        let shifted = posterior(f.add_scalar(41.5), lp.factors[0].clone());
        let a = &covariance_esa(&x, &lp).unwrap()[0];
        let b = &covariance_esa(&x, &shifted).unwrap()[0];
        assert!((&a.mu - &b.mu).amax() < 1e-12);
    }

    #[test]
    fn positive_scaling() {
        let x = gaussian(15, 4, 11);
        let lp = posterior(gaussian(15, 1, 12), gaussian(15, 3, 13));
        let scaled = posterior(&lp.mean * 2.5, &lp.factors[0] * 2.5);
        let a = &covariance_esa(&x, &lp).unwrap()[0];
        let b = &covariance_esa(&x, &scaled).unwrap()[0];
        assert!((&a.mu * 2.5 - &b.mu).amax() < 1e-12);
        assert!((&a.factor * 2.5 - &b.factor).amax() < 1e-12);
        assert_eq!(effect_signs(a), effect_signs(b));
    }

    #[test]
    fn signs_by_hand() {
        let esa = EffectSizePosterior {
            mu: Vector::from_column_slice(&[1.5, -2.0, 0.0]),
            factor: Matrix::zeros(3, 1),
            n_used: 10,
            class: 0,
            feature_names: default_feature_names(3),
        };
        assert_eq!(effect_signs(&esa), vec![1, -1, 0]);
    }

    #[test]
    fn feature_equal_to_logits_has_positive_sign() {
        let mut x = gaussian(50, 3, 14);
        let f = gaussian(50, 1, 15);
        x.set_column(1, &f.column(0));
        let lp = posterior(f, Matrix::zeros(50, 1));
        let esa = &covariance_esa(&x, &lp).unwrap()[0];
        assert_eq!(effect_signs(esa)[1], 1);
    }

    #[test]
    fn ols_recovers_noiseless_coefficients() {
        let x = gaussian(30, 3, 16);
        let beta = Vector::from_column_slice(&[1.5, -0.5, 3.0]);
        let y: Vec<f64> = (&x * &beta).iter().map(|v| v + 2.0).collect();
        let fit = ols_effect_size(&x, &y).unwrap();
        assert!((fit.coefficients - beta).amax() < 1e-8);
        assert!((fit.intercept - 2.0).abs() < 1e-8);
        assert!(!fit.rank_deficient);
    }

    #[test]
    fn ols_flags_rank_deficiency() {
        let mut x = gaussian(10, 2, 17);
        let c0 = x.column(0).into_owned();
        x.set_column(1, &c0);
        let y: Vec<f64> = c0.iter().map(|v| 2.0 * v).collect();
        let fit = ols_effect_size(&x, &y).unwrap();
        assert!(fit.rank_deficient);
        // minimum norm splits the effect evenly
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-8);
        assert!((fit.coefficients[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn samples_without_spread_equal_mean() {
        let esa = EffectSizePosterior {
            mu: Vector::from_column_slice(&[1.0, -2.0]),
            factor: Matrix::zeros(2, 3),
            n_used: 5,
            class: 0,
            feature_names: default_feature_names(2),
        };
        let s = draw_effect_samples(&esa, 4, 0).unwrap();
        for row in s.row_iter() {
            assert_eq!(row.transpose(), esa.mu);
        }
    }

    #[test]
    fn samples_reproducible_and_match_covariance() {
        let esa = EffectSizePosterior {
            mu: Vector::from_column_slice(&[0.5, 0.0, -1.0]),
            factor: gaussian(3, 2, 18),
            n_used: 5,
            class: 0,
            feature_names: default_feature_names(3),
        };
        let a = draw_effect_samples(&esa, 50_000, 3).unwrap();
        assert_eq!(a, draw_effect_samples(&esa, 50_000, 3).unwrap());
        let mean = a.row_mean();
        let centered = Matrix::from_fn(a.nrows(), 3, |i, j| a[(i, j)] - mean[j]);
        let cov = centered.transpose() * &centered / (a.nrows() as f64 - 1.0);
        let target = esa.covariance().unwrap();
        assert!((cov - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn csv_export() {
        let esa = EffectSizePosterior {
            mu: Vector::from_column_slice(&[0.25, -1.0]),
            factor: Matrix::from_row_slice(2, 1, &[1.0, 2.0]),
            n_used: 5,
            class: 0,
            feature_names: vec!["a".into(), "b".into()],
        };
        let mut buf = Vec::new();
        write_effect_sizes_csv(&[esa], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "feature,class,mu,omega_diag\na,0,0.25,1\nb,0,-1,4\n"
        );
    }
}
