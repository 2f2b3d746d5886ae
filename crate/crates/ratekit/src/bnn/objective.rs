//! Negative ELBO and its gradient.
//!
//! Output weights are never sampled directly. For each example the latent
//! output is drawn from `N(h_iᵀ m_c + b_c, Σ_k h_ik² v_kc)` (local
//! reparameterization), so one standard normal draw per example and output
//! node suffices.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{sigmoid, softmax_row, Network, OutputLink};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::util::rng_at;

/// `KL(N(m, diag(v)) || N(0, s² I))`.
pub fn kl_q_prior(m: &[f64], v: &[f64], s: f64) -> Result<f64> {
    if m.len() != v.len() {
        return Err(Error::dims(m.len(), v.len()));
    }
    if !(s > 0.0) {
        return Err(Error::InvalidInput(format!(
            "prior scale must be positive, got {s}"
        )));
    }
    let s2 = s * s;
    let mut total = 0.0;
    for (&mi, &vi) in m.iter().zip(v) {
        if !(vi > 0.0) {
            return Err(Error::InvalidInput(format!(
                "variance must be positive, got {vi}"
            )));
        }
        let r = vi / s2;
        total += r + mi * mi / s2 - 1.0 - r.ln();
    }
    Ok(0.5 * total)
}

/// Gradient of the loss with respect to every network parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<(Matrix, Vector)>,
    pub mean: Matrix,
    pub log_var: Matrix,
    pub bias: Vector,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            hidden: net
                .hidden
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.weights.nrows(), l.weights.ncols()),
                        Vector::zeros(l.bias.len()),
                    )
                })
                .collect(),
            mean: Matrix::zeros(net.mean.nrows(), net.mean.ncols()),
            log_var: Matrix::zeros(net.log_var.nrows(), net.log_var.ncols()),
            bias: Vector::zeros(net.bias.len()),
        }
    }

    /// Flat views in the same order as [`Network::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.hidden.len() + 3);
        for (w, b) in &self.hidden {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        out.push(self.mean.as_slice());
        out.push(self.log_var.as_slice());
        out.push(self.bias.as_slice());
        out
    }
}

impl Network {
    /// Mutable flat views of all trainable parameters.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.hidden.len() + 3);
        for layer in self.hidden.iter_mut() {
            out.push(layer.weights.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.mean.as_mut_slice());
        out.push(self.log_var.as_mut_slice());
        out.push(self.bias.as_mut_slice());
        out
    }
}

fn check_labels(net: &Network, x: &Matrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::dims(format!("{} labels", x.nrows()), y.len()));
    }
    if x.nrows() == 0 {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if x.ncols() != net.config.input_dim {
        return Err(Error::dims(
            format!("{} input columns", net.config.input_dim),
            x.ncols(),
        ));
    }
    let c = net.config.n_classes;
    let ok = match net.config.output_link {
        OutputLink::Sigmoid => y.iter().all(|&v| v == 0.0 || v == 1.0),
        OutputLink::Softmax => y
            .iter()
            .all(|&v| v >= 0.0 && v.fract() == 0.0 && (v as usize) < c),
        OutputLink::Identity => y.iter().all(|v| v.is_finite()),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "labels do not match the {:?} link",
            net.config.output_link
        )))
    }
}

/// Per-example NLL summed over the batch, and `dNLL/df` written into `grad`.
fn nll_and_grad(link: OutputLink, noise_var: f64, f: &Matrix, y: &[f64], grad: &mut Matrix) -> f64 {
    let mut total = 0.0;
    match link {
        OutputLink::Sigmoid => {
            for i in 0..f.nrows() {
                let z = f[(i, 0)];
                let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
                total += softplus - y[i] * z;
                grad[(i, 0)] = sigmoid(z) - y[i];
            }
        }
        OutputLink::Softmax => {
            for i in 0..f.nrows() {
                let row: Vec<f64> = f.row(i).iter().cloned().collect();
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let label = y[i] as usize;
                total += lse - row[label];
                for (c, p) in softmax_row(&row).into_iter().enumerate() {
                    grad[(i, c)] = p - if c == label { 1.0 } else { 0.0 };
                }
            }
        }
        OutputLink::Identity => {
            let half_log = 0.5 * (2.0 * std::f64::consts::PI * noise_var).ln();
            for i in 0..f.nrows() {
                let r = f[(i, 0)] - y[i];
                total += 0.5 * r * r / noise_var + half_log;
                grad[(i, 0)] = r / noise_var;
            }
        }
    }
    total
}

pub(crate) fn elbo_impl(
    net: &Network,
    x: &Matrix,
    y: &[f64],
    kl_weight: f64,
    mc_samples: usize,
    seed: u64,
    want_grad: bool,
) -> Result<(f64, Option<Gradients>)> {
    check_labels(net, x, y)?;
    if mc_samples == 0 {
        return Err(Error::Config("mc_samples must be at least 1".into()));
    }
    let cache = net.forward_cached(x);
    let h = &cache.h;
    let h2 = h.component_mul(h);
    let v = net.variances();
    let (n, c) = (x.nrows(), net.n_outputs());

    let mut mean_f = h * &net.mean;
    for (j, mut col) in mean_f.column_iter_mut().enumerate() {
        col.add_scalar_mut(net.bias[j]);
    }
    let sd = (&h2 * &v).map(f64::sqrt);

    let s2 = net.config.prior_scale.powi(2);
    let kl = kl_q_prior(net.mean.as_slice(), v.as_slice(), net.config.prior_scale)?;

    let inv_s = 1.0 / mc_samples as f64;
    let mut nll = 0.0;
    let mut d_mean = Matrix::zeros(n, c);
    let mut d_var = Matrix::zeros(n, c);
    let mut g = Matrix::zeros(n, c);
    for s in 0..mc_samples {
        let mut draw = rng_at(seed, &[s as u64]);
        let eps = Matrix::from_fn(n, c, |_, _| draw.sample::<f64, _>(StandardNormal));
        let f = &mean_f + sd.component_mul(&eps);
        nll += nll_and_grad(net.config.output_link, net.config.noise_var, &f, y, &mut g);
        if want_grad {
            d_mean += &g * inv_s;
            // df/dvar = eps / (2 sd); undefined where the row of H is zero
            for idx in 0..n * c {
                let sdv = sd[idx];
                if sdv > 0.0 {
                    d_var[idx] += inv_s * g[idx] * eps[idx] / (2.0 * sdv);
                }
            }
        }
    }
    let loss = kl_weight * kl + nll * inv_s;
    if !want_grad {
        return Ok((loss, None));
    }

    let mut grads = Gradients::zeros_like(net);
    grads.mean = h.transpose() * &d_mean + &net.mean * (kl_weight / s2);
    for j in 0..c {
        grads.bias[j] = d_mean.column(j).sum();
    }
    let dv = h2.transpose() * &d_var;
    grads.log_var = Matrix::from_fn(v.nrows(), c, |k, j| {
        let vk = v[(k, j)];
        dv[(k, j)] * vk + kl_weight * 0.5 * (vk / s2 - 1.0)
    });

    // dL/dH = d_mean mᵀ + 2 H ∘ (d_var vᵀ)
    let mut d_a =
        &d_mean * net.mean.transpose() + (h * 2.0).component_mul(&(&d_var * v.transpose()));
    for (l, layer) in net.hidden.iter().enumerate().rev() {
        let pre = &cache.pre[l];
        let d_z = d_a.zip_map(pre, |d, z| if z > 0.0 { d } else { 0.0 });
        let d_w = cache.inputs[l].transpose() * &d_z;
        let d_b = Vector::from_iterator(d_z.ncols(), d_z.column_iter().map(|col| col.sum()));
        if l > 0 {
            d_a = &d_z * layer.weights.transpose();
        }
        grads.hidden[l] = (d_w, d_b);
    }
    Ok((loss, Some(grads)))
}

/// Negative minibatch ELBO: `(B / n_total) KL(q || prior)` plus the
/// Monte Carlo average of the batch negative log-likelihood.
pub fn elbo_loss(
    net: &Network,
    x: &Matrix,
    y: &[f64],
    n_total: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<f64> {
    let w = batch_kl_weight(x.nrows(), n_total)?;
    Ok(elbo_impl(net, x, y, w, mc_samples, seed, false)?.0)
}

pub fn elbo_loss_and_grad(
    net: &Network,
    x: &Matrix,
    y: &[f64],
    n_total: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<(f64, Gradients)> {
    let w = batch_kl_weight(x.nrows(), n_total)?;
    let (loss, grads) = elbo_impl(net, x, y, w, mc_samples, seed, true)?;
    Ok((loss, grads.expect("gradient requested")))
}

pub(crate) fn batch_kl_weight(batch: usize, n_total: usize) -> Result<f64> {
    if n_total == 0 || batch > n_total {
        return Err(Error::InvalidInput(format!(
            "batch of {batch} is inconsistent with n_total = {n_total}"
        )));
    }
    Ok(batch as f64 / n_total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{build_network, NetworkConfig};
    use crate::util::rng;

    #[test]
    fn kl_is_zero_at_prior() {
        assert_eq!(kl_q_prior(&[0.0, 0.0], &[4.0, 4.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn kl_single_weight() {
        let s = 1.7;
        let kl = kl_q_prior(&[s], &[s * s], s).unwrap();
        assert!((kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_sums_per_weight_terms() {
        assert!((kl_q_prior(&[1.0, 0.0], &[1.0, 1.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_rejects_bad_inputs() {
        assert!(kl_q_prior(&[0.0], &[0.0], 1.0).is_err());
        assert!(kl_q_prior(&[0.0], &[1.0], 0.0).is_err());
        assert!(kl_q_prior(&[0.0], &[-1.0], 1.0).is_err());
    }

    #[test]
    fn kl_positive_away_from_prior() {
        let kl = kl_q_prior(&[0.3, -0.2], &[0.5, 2.0], 1.0).unwrap();
        assert!(kl > 0.0);
    }

    fn batch(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut g = rng(seed);
        let x = Matrix::from_fn(n, p, |_, _| g.sample(StandardNormal));
        let y = (0..n).map(|i| (i % 2) as f64).collect();
        (x, y)
    }

    #[test]
    fn zero_variance_limit_is_log_two() {
        let mut net = build_network(&NetworkConfig::binary(3, vec![4]), 0).unwrap();
        net.mean.fill(0.0);
        net.log_var.fill(-40.0);
        let (x, y) = batch(8, 3, 1);
        let (loss, _) = elbo_impl(&net, &x, &y, 0.0, 1, 0, false).unwrap();
        assert!((loss / 8.0 - std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn prior_matching_posterior_leaves_pure_nll() {
        let mut net = build_network(&NetworkConfig::binary(3, vec![4]), 0).unwrap();
        net.mean.fill(0.0);
        net.log_var.fill(0.0);
        let (x, y) = batch(8, 3, 2);
        let with_kl = elbo_loss(&net, &x, &y, 16, 2, 5).unwrap();
        let (without, _) = elbo_impl(&net, &x, &y, 0.0, 2, 5, false).unwrap();
        assert_eq!(with_kl, without);
    }

    #[test]
    fn label_link_mismatch() {
        let net = build_network(&NetworkConfig::binary(3, vec![4]), 0).unwrap();
        let (x, _) = batch(4, 3, 0);
        assert!(elbo_loss(&net, &x, &[0.0, 2.0, 1.0, 0.0], 4, 1, 0).is_err());
    }
}
