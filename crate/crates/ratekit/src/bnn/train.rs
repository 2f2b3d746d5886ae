use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::objective::{batch_kl_weight, elbo_impl};
use super::{accuracy, Network};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::util::{derive_seed, rng_at};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlScaleMode {
    /// KL weighted by `batch_size / n_total`.
    BatchFraction,
    /// Likelihood only.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub mc_samples: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub kl_scale_mode: KlScaleMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            patience: 2,
            batch_size: 32,
            mc_samples: 1,
            val_fraction: 0.2,
            seed: 0,
            kl_scale_mode: KlScaleMode::BatchFraction,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::Config(
                "batch_size and mc_samples must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    /// Accuracy (classification) or mean squared error (regression).
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    /// Which split the metric was computed on.
    pub monitor: String,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(shapes: &[usize]) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (t, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[t], &mut self.v[t]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

fn mse(net: &Network, x: &Matrix, y: &[f64]) -> Result<f64> {
    let f = net.mean_logits(x)?;
    Ok(f.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Finite parameters whose variances have not underflowed to zero.
fn parameters_usable(net: &Network) -> bool {
    net.hidden
        .iter()
        .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
        && net
            .mean
            .iter()
            .chain(net.bias.iter())
            .all(|v| v.is_finite())
        && net
            .log_var
            .iter()
            .all(|&r| r.is_finite() && r.exp() > 0.0 && r.exp().is_finite())
}

/// Trains all parameters jointly with Adam, keeping the parameters of the
/// best epoch by the monitored metric.
pub fn train(
    net: &Network,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(Network, TrainHistory)> {
    config.validate()?;
    net.config.validate()?;
    if data.p() != net.config.input_dim {
        return Err(Error::dims(
            format!("{} features", net.config.input_dim),
            data.p(),
        ));
    }
    let (train_set, val_set) = if config.val_fraction > 0.0 {
        let (a, b) = data.split(config.val_fraction, derive_seed(config.seed, &[1]))?;
        if b.n() == 0 || a.n() == 0 {
            return Err(Error::InsufficientData(format!(
                "{} rows cannot be split with val_fraction {}",
                data.n(),
                config.val_fraction
            )));
        }
        (a, Some(b))
    } else {
        (data.clone(), None)
    };
    let n_total = train_set.n();
    if n_total == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    let classification = net.config.output_link.is_classification();
    let (monitor_x, monitor_y, monitor) = match &val_set {
        Some(v) => (&v.x, &v.y, "validation"),
        None => (&train_set.x, &train_set.y, "train"),
    };
    let evaluate = |n: &Network| -> Result<f64> {
        if classification {
            accuracy(n, monitor_x, monitor_y)
        } else {
            mse(n, monitor_x, monitor_y)
        }
    };
    let improved = |new: f64, best: f64| {
        if classification {
            new > best
        } else {
            new < best
        }
    };

    let mut current = net.clone();
    let shapes: Vec<usize> = current.param_slices_mut().iter().map(|s| s.len()).collect();
    let mut adam = Adam::new(&shapes);
    let mut best = current.clone();
    let mut best_metric = if classification {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let mut best_epoch = 0;
    let mut wait = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;

    let batch_size = config.batch_size.min(n_total);
    let mut order: Vec<usize> = (0..n_total).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_at(config.seed, &[2, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let batch = train_set.subset(chunk);
            let kl_weight = match config.kl_scale_mode {
                KlScaleMode::BatchFraction => batch_kl_weight(chunk.len(), n_total)?,
                KlScaleMode::Off => 0.0,
            };
            let seed = derive_seed(config.seed, &[3, epoch as u64, b as u64]);
            let (loss, grads) = elbo_impl(
                &current,
                &batch.x,
                &batch.y,
                kl_weight,
                config.mc_samples,
                seed,
                true,
            )?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let grads = grads.expect("gradient requested");
            adam.update(
                current.param_slices_mut(),
                grads.slices(),
                config.learning_rate,
            );
            if !parameters_usable(&current) {
                return Err(Error::TrainingDiverged { epoch });
            }
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let metric = evaluate(&current)?;
        if !train_loss.is_finite() || !metric.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        log::debug!("epoch {epoch}: loss {train_loss:.6} {monitor} metric {metric:.6}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            metric,
        });
        if improved(metric, best_metric) {
            best_metric = metric;
            best = current.clone();
            best_epoch = epoch;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                stopped_early = epoch + 1 < config.epochs;
                break;
            }
        }
    }
    Ok((
        best,
        TrainHistory {
            epochs: history,
            best_epoch,
            stopped_early,
            monitor: monitor.to_string(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bnn::{build_network, NetworkConfig};

    fn tiny_data() -> Dataset {
        let x = Matrix::from_fn(40, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let y = (0..40).map(|i| (x[(i, 0)] > 0.0) as u8 as f64).collect();
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn zero_epochs_rejected() {
        let net = build_network(&NetworkConfig::binary(2, vec![4]), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(
            train(&net, &tiny_data(), &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bad_val_fraction_rejected() {
        let net = build_network(&NetworkConfig::binary(2, vec![4]), 0).unwrap();
        let cfg = TrainConfig {
            val_fraction: 1.0,
            ..Default::default()
        };
        assert!(train(&net, &tiny_data(), &cfg).is_err());
    }

    #[test]
    fn history_is_finite_and_reproducible() {
        let net = build_network(&NetworkConfig::binary(2, vec![4]), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            patience: 10,
            ..Default::default()
        };
        let (a, ha) = train(&net, &tiny_data(), &cfg).unwrap();
        let (b, hb) = train(&net, &tiny_data(), &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.epochs.len(), 5);
        assert!(ha.epochs.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn diverging_training_is_reported() {
        let mut net = build_network(&NetworkConfig::binary(2, vec![4]), 0).unwrap();
        net.log_var.fill(800.0);
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        assert!(matches!(
            train(&net, &tiny_data(), &cfg),
            Err(Error::TrainingDiverged { epoch: 0 })
        ));
    }
}
