//! Networks with deterministic ReLU hidden layers and a mean-field Gaussian
//! output layer.
//!
//! The latent outputs are `f = H(theta) w + b` where `H` is the activation of
//! the last hidden layer and `w ~ N(m, diag(v))`. Because `w` enters linearly,
//! the implied distribution over `f` is Gaussian with mean `H m + b` and
//! covariance `H diag(v) Hᵀ`; [`logit_posterior`] returns it in factored form.

mod objective;
mod serial;
mod train;

pub use objective::{elbo_loss, elbo_loss_and_grad, kl_q_prior, Gradients};
pub use serial::NETWORK_FORMAT_VERSION;
pub use train::{train, EpochRecord, KlScaleMode, TrainConfig, TrainHistory};

use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::util::rng_at;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLink {
    Sigmoid,
    Identity,
    Softmax,
}

impl OutputLink {
    pub fn is_classification(self) -> bool {
        !matches!(self, OutputLink::Identity)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub output_link: OutputLink,
    /// Output nodes: 1 for sigmoid and identity links.
    pub n_classes: usize,
    /// Standard deviation `s` of the prior `N(0, s² I)` on output weights.
    #[serde(default = "default_prior_scale")]
    pub prior_scale: f64,
    /// Noise variance of the Gaussian likelihood (identity link only).
    #[serde(default = "default_noise_var")]
    pub noise_var: f64,
}

fn default_activation() -> Activation {
    Activation::Relu
}
fn default_prior_scale() -> f64 {
    1.0
}
fn default_noise_var() -> f64 {
    1.0
}

impl NetworkConfig {
    /// Sigmoid binary classifier with the given hidden layers.
    pub fn binary(input_dim: usize, hidden_sizes: Vec<usize>) -> Self {
        NetworkConfig {
            input_dim,
            hidden_sizes,
            activation: Activation::Relu,
            output_link: OutputLink::Sigmoid,
            n_classes: 1,
            prior_scale: 1.0,
            noise_var: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::Config(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config(
                "hidden layers must have nonzero width".into(),
            ));
        }
        if !(self.prior_scale > 0.0 && self.prior_scale.is_finite()) {
            return Err(Error::Config("prior_scale must be positive".into()));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Config("noise_var must be positive".into()));
        }
        match self.output_link {
            OutputLink::Sigmoid | OutputLink::Identity if self.n_classes != 1 => Err(
                Error::Config(format!("{:?} link needs n_classes = 1", self.output_link)),
            ),
            OutputLink::Softmax if self.n_classes < 2 => {
                Err(Error::Config("softmax link needs n_classes >= 2".into()))
            }
            _ => Ok(()),
        }
    }

    /// Width `k` of the last hidden layer.
    pub fn k(&self) -> usize {
        *self.hidden_sizes.last().expect("validated config")
    }
}

/// Deterministic affine layer `x W + b` followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `fan_in × fan_out`.
    pub weights: Matrix,
    pub bias: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub hidden: Vec<DenseLayer>,
    /// Variational means `m`, `k × c`.
    pub mean: Matrix,
    /// Variational log-variances `rho`, `k × c`; `v = exp(rho)`.
    pub log_var: Matrix,
    /// Output bias, one entry per output node.
    pub bias: Vector,
    pub seed: u64,
}

/// Initial log-variance of the output layer.
pub const INIT_LOG_VAR: f64 = -5.0;
/// Standard deviation of the initial output means.
pub const INIT_MEAN_STD: f64 = 0.05;

pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let mut g = rng_at(seed, &[0xB1]);
    let mut hidden = Vec::with_capacity(config.hidden_sizes.len());
    let mut fan_in = config.input_dim;
    for &width in &config.hidden_sizes {
        // He-uniform
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights = Matrix::from_fn(fan_in, width, |_, _| g.random_range(-limit..limit));
        hidden.push(DenseLayer {
            weights,
            bias: Vector::zeros(width),
        });
        fan_in = width;
    }
    let k = config.k();
    let c = config.n_classes;
    let normal = Normal::new(0.0, INIT_MEAN_STD).expect("valid std");
    let mean = Matrix::from_fn(k, c, |_, _| g.sample(normal));
    Ok(Network {
        config: config.clone(),
        hidden,
        mean,
        log_var: Matrix::from_element(k, c, INIT_LOG_VAR),
        bias: Vector::zeros(c),
        seed,
    })
}

/// Per-layer intermediate values of a forward pass.
pub(crate) struct ForwardCache {
    /// Inputs to each hidden layer (the first is `X`).
    pub inputs: Vec<Matrix>,
    /// Pre-activations of each hidden layer.
    pub pre: Vec<Matrix>,
    /// Activation of the last hidden layer.
    pub h: Matrix,
}

fn add_row_bias(m: &mut Matrix, bias: &Vector) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(bias[j]);
    }
}

impl Network {
    pub fn k(&self) -> usize {
        self.config.k()
    }

    pub fn n_outputs(&self) -> usize {
        self.config.n_classes
    }

    /// Output-layer variances `v = exp(rho)`.
    pub fn variances(&self) -> Matrix {
        self.log_var.map(f64::exp)
    }

    pub fn n_params(&self) -> usize {
        self.hidden
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum::<usize>()
            + 2 * self.mean.len()
            + self.bias.len()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::dims(
                format!("{} input columns", self.config.input_dim),
                x.ncols(),
            ));
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> ForwardCache {
        let mut inputs = Vec::with_capacity(self.hidden.len());
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut a = x.clone();
        for layer in &self.hidden {
            let mut z = &a * &layer.weights;
            add_row_bias(&mut z, &layer.bias);
            let next = z.map(|v| v.max(0.0));
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        ForwardCache { inputs, pre, h: a }
    }

    /// Posterior-mean latent outputs `H m + b`, `n × c`.
    pub fn mean_logits(&self, x: &Matrix) -> Result<Matrix> {
        let h = penultimate_activations(self, x)?;
        let mut f = &h * &self.mean;
        add_row_bias(&mut f, &self.bias);
        Ok(f)
    }
}

/// Activations `H(theta)` of the last hidden layer, `n × k`.
pub fn penultimate_activations(net: &Network, x: &Matrix) -> Result<Matrix> {
    net.check_input(x)?;
    Ok(net.forward_cached(x).h)
}

/// Gaussian over the latent outputs, one factored covariance per output node.
#[derive(Clone, Debug)]
pub struct LogitPosterior {
    /// `n × c` posterior means `H m + b`.
    pub mean: Matrix,
    /// Per output node, `F_c = H diag(sqrt(v_c))` with covariance `F_c F_cᵀ`.
    pub factors: Vec<Matrix>,
    /// The activations the posterior was built from.
    pub activations: Matrix,
    pub bias: Vector,
}

impl LogitPosterior {
    pub fn n(&self) -> usize {
        self.mean.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.mean.ncols()
    }

    /// Builds a posterior directly from its mean and one covariance factor per
    /// output node.
    pub fn from_parts(mean: Matrix, factors: Vec<Matrix>) -> Result<Self> {
        if factors.len() != mean.ncols() {
            return Err(Error::dims(
                format!("{} factors", mean.ncols()),
                factors.len(),
            ));
        }
        for f in &factors {
            if f.nrows() != mean.nrows() {
                return Err(Error::dims(
                    format!("factor with {} rows", mean.nrows()),
                    f.nrows(),
                ));
            }
        }
        let bias = Vector::zeros(mean.ncols());
        Ok(LogitPosterior {
            activations: Matrix::zeros(mean.nrows(), 0),
            mean,
            factors,
            bias,
        })
    }

    /// Dense `n × n` covariance of output node `c`. For tests and small `n`.
    pub fn covariance(&self, c: usize) -> Matrix {
        let f = &self.factors[c];
        f * f.transpose()
    }
}

pub fn logit_posterior(net: &Network, x: &Matrix) -> Result<LogitPosterior> {
    let h = penultimate_activations(net, x)?;
    let mut mean = &h * &net.mean;
    add_row_bias(&mut mean, &net.bias);
    let sd = net.variances().map(f64::sqrt);
    let factors = (0..net.n_outputs())
        .map(|c| {
            let mut f = h.clone();
            for (k, mut col) in f.column_iter_mut().enumerate() {
                col *= sd[(k, c)];
            }
            f
        })
        .collect();
    Ok(LogitPosterior {
        mean,
        factors,
        activations: h,
        bias: net.bias.clone(),
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn apply_link(link: OutputLink, logits: &Matrix) -> Result<Matrix> {
    match link {
        OutputLink::Sigmoid => Ok(logits.map(sigmoid)),
        OutputLink::Softmax => {
            let mut out = logits.clone();
            for i in 0..logits.nrows() {
                let row: Vec<f64> = logits.row(i).iter().cloned().collect();
                for (c, v) in softmax_row(&row).into_iter().enumerate() {
                    out[(i, c)] = v;
                }
            }
            Ok(out)
        }
        OutputLink::Identity => Err(Error::Unsupported(
            "class probabilities are undefined for the identity link".into(),
        )),
    }
}

/// Link applied to the posterior-mean logits. For the sigmoid link this is
/// `P(y = 1)`; for softmax, one column per class.
pub fn predict_proba(net: &Network, x: &Matrix) -> Result<Matrix> {
    if !net.config.output_link.is_classification() {
        return Err(Error::Unsupported(
            "class probabilities are undefined for the identity link".into(),
        ));
    }
    apply_link(net.config.output_link, &net.mean_logits(x)?)
}

/// Hard class predictions from [`predict_proba`].
pub fn predict_class(net: &Network, x: &Matrix) -> Result<Vec<usize>> {
    let probs = predict_proba(net, x)?;
    Ok(match net.config.output_link {
        OutputLink::Sigmoid => probs.iter().map(|&p| usize::from(p > 0.5)).collect(),
        _ => probs
            .row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect(),
    })
}

pub fn accuracy(net: &Network, x: &Matrix, y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::InsufficientData("accuracy of an empty set".into()));
    }
    let pred = predict_class(net, x)?;
    let hits = pred.iter().zip(y).filter(|(&p, &t)| p as f64 == t).count();
    Ok(hits as f64 / y.len() as f64)
}

/// Probabilities averaged over `draws` samples of the logit posterior.
pub fn predict_proba_mc(net: &Network, x: &Matrix, draws: usize, seed: u64) -> Result<Matrix> {
    let lp = logit_posterior(net, x)?;
    let (n, c) = (lp.n(), lp.n_outputs());
    let mut g = rng_at(seed, &[0x3C]);
    let mut acc = Matrix::zeros(n, c);
    for _ in 0..draws {
        let mut f = lp.mean.clone();
        for (cls, factor) in lp.factors.iter().enumerate() {
            let z = Vector::from_fn(factor.ncols(), |_, _| g.sample(StandardNormal));
            f.column_mut(cls).axpy(1.0, &(factor * z), 1.0);
        }
        acc += apply_link(net.config.output_link, &f)?;
    }
    Ok(acc / draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;
    use rand_distr::StandardNormal;

    fn small_net(seed: u64) -> Network {
        build_network(&NetworkConfig::binary(4, vec![5, 3]), seed).unwrap()
    }

    #[test]
    fn shapes_follow_config() {
        let net = build_network(&NetworkConfig::binary(2, vec![3]), 0).unwrap();
        assert_eq!(net.hidden[0].weights.shape(), (2, 3));
        assert_eq!(net.mean.shape(), (3, 1));
        assert_eq!(net.log_var.shape(), (3, 1));
        assert!(net
            .variances()
            .iter()
            .all(|&v| (v - (-5.0f64).exp()).abs() < 1e-15));
        assert!((net.variances()[(0, 0)] - 6.737_946_999e-3).abs() < 1e-11);
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(small_net(11), small_net(11));
        assert_ne!(small_net(11), small_net(12));
    }

    #[test]
    fn zero_width_rejected() {
        let cfg = NetworkConfig::binary(2, vec![3, 0]);
        assert!(matches!(build_network(&cfg, 0), Err(Error::Config(_))));
        assert!(build_network(&NetworkConfig::binary(2, vec![]), 0).is_err());
        let mut bad = NetworkConfig::binary(2, vec![3]);
        bad.output_link = OutputLink::Softmax;
        assert!(build_network(&bad, 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero_activations() {
        let mut net = small_net(1);
        for l in net.hidden.iter_mut() {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let x = Matrix::from_fn(6, 4, |i, j| (i as f64) - (j as f64));
        let h = penultimate_activations(&net, &x).unwrap();
        assert_eq!(h.shape(), (6, 3));
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_layer_forward_by_hand() {
        let mut net = build_network(&NetworkConfig::binary(2, vec![2]), 0).unwrap();
        net.hidden[0].weights = Matrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        net.hidden[0].bias = Vector::from_column_slice(&[0.5, 0.0]);
        let x = Matrix::from_row_slice(2, 2, &[1.0, 7.0, -2.0, 3.0]);
        let h = penultimate_activations(&net, &x).unwrap();
        // row 1: relu(1 + .5), relu(-1); row 2: relu(-2 + .5), relu(2)
        assert_eq!(h, Matrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn input_width_checked() {
        let net = small_net(0);
        assert!(matches!(
            penultimate_activations(&net, &Matrix::zeros(2, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn posterior_with_identity_activations() {
        let k = 4;
        let mut net = build_network(&NetworkConfig::binary(k, vec![k]), 0).unwrap();
        net.hidden[0].weights = Matrix::identity(k, k);
        net.bias[0] = 0.7;
        net.log_var = Matrix::from_fn(k, 1, |i, _| -(i as f64));
        // inputs positive so ReLU is the identity
        let x = Matrix::identity(k, k);
        let lp = logit_posterior(&net, &x).unwrap();
        for i in 0..k {
            assert!((lp.mean[(i, 0)] - (net.mean[(i, 0)] + 0.7)).abs() < 1e-15);
        }
        let cov = lp.covariance(0);
        let expected = Matrix::from_diagonal(&net.variances().column(0).into_owned());
        assert!((cov - expected).amax() < 1e-15);
    }

    #[test]
    fn posterior_degenerates_without_variance() {
        let mut net = small_net(2);
        net.log_var.fill(-800.0);
        let x = Matrix::from_fn(5, 4, |i, j| ((i + j) as f64).sin());
        let lp = logit_posterior(&net, &x).unwrap();
        assert!(lp.factors[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn factor_matches_triple_product() {
        let net = build_network(&NetworkConfig::binary(3, vec![3]), 5).unwrap();
        let mut g = rng(5);
        let x = Matrix::from_fn(6, 3, |_, _| g.sample(StandardNormal));
        let lp = logit_posterior(&net, &x).unwrap();
        let h = &lp.activations;
        let direct =
            h * Matrix::from_diagonal(&net.variances().column(0).into_owned()) * h.transpose();
        assert!((lp.covariance(0) - direct).amax() < 1e-12);
    }

    #[test]
    fn posterior_is_linear_in_mean_and_sd() {
        let net = small_net(3);
        let x = Matrix::from_fn(5, 4, |i, j| ((2 * i + j) as f64).cos());
        let lp = logit_posterior(&net, &x).unwrap();
        let mut doubled = net.clone();
        doubled.mean *= 2.0;
        doubled.log_var.add_scalar_mut(2.0 * 2.0f64.ln());
        let lp2 = logit_posterior(&doubled, &x).unwrap();
        let centered = |m: &Matrix| m.add_scalar(-net.bias[0]);
        assert!((centered(&lp2.mean) - centered(&lp.mean) * 2.0).amax() < 1e-12);
        assert!((&lp2.factors[0] - &lp.factors[0] * 2.0).amax() < 1e-12);
    }

    #[test]
    fn zero_logits_give_half() {
        let mut net = small_net(4);
        net.mean.fill(0.0);
        let p = predict_proba(&net, &Matrix::zeros(3, 4)).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let cfg = NetworkConfig {
            output_link: OutputLink::Softmax,
            n_classes: 3,
            ..NetworkConfig::binary(4, vec![6])
        };
        let net = build_network(&cfg, 8).unwrap();
        let x = Matrix::from_fn(7, 4, |i, j| (i as f64 * 0.3) - j as f64);
        let p = predict_proba(&net, &x).unwrap();
        for row in p.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_link_has_no_probabilities() {
        let cfg = NetworkConfig {
            output_link: OutputLink::Identity,
            ..NetworkConfig::binary(4, vec![6])
        };
        let net = build_network(&cfg, 8).unwrap();
        assert!(matches!(
            predict_proba(&net, &Matrix::zeros(1, 4)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mean_probabilities_track_monte_carlo() {
        let mut net = build_network(&NetworkConfig::binary(3, vec![4]), 21).unwrap();
        net.mean *= 10.0;
        net.log_var.fill(-3.0);
        let mut g = rng(21);
        let x = Matrix::from_fn(10, 3, |_, _| g.sample(StandardNormal));
        let plug_in = predict_proba(&net, &x).unwrap();
        let mc = predict_proba_mc(&net, &x, 1000, 7).unwrap();
        assert!((plug_in - mc).amax() < 0.05);
    }
}
