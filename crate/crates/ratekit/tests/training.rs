use rand::Rng;
use rand_distr::StandardNormal;
use ratekit::bnn::{
    accuracy, build_network, elbo_loss, elbo_loss_and_grad, train, Network, NetworkConfig,
    OutputLink, TrainConfig,
};
use ratekit::data::Dataset;
use ratekit::linalg::Matrix;
use ratekit::util::rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn instance(link: OutputLink, n_classes: usize, seed: u64) -> (Network, Matrix, Vec<f64>) {
    let cfg = NetworkConfig {
        output_link: link,
        n_classes,
        ..NetworkConfig::binary(3, vec![4])
    };
    let mut net = build_network(&cfg, seed).unwrap();
    let mut g = rng(seed + 1);
    // move away from the initial point so every gradient block is nonzero
    for s in net.param_slices_mut() {
        for v in s.iter_mut() {
            *v += 0.3 * g.sample::<f64, _>(StandardNormal);
        }
    }
    let x = Matrix::from_fn(8, 3, |_, _| g.sample(StandardNormal));
    let y = (0..8)
        .map(|i| match link {
            OutputLink::Identity => x[(i, 0)] - x[(i, 2)],
            OutputLink::Sigmoid => (i % 2) as f64,
            OutputLink::Softmax => (i % n_classes) as f64,
        })
        .collect();
    (net, x, y)
}

fn check_gradients(link: OutputLink, n_classes: usize) {
    let (net, x, y) = instance(link, n_classes, 7);
    assert!(net.n_params() <= 100);
    let (n_total, mc, seed) = (20, 3, 11);
    let (_, grads) = elbo_loss_and_grad(&net, &x, &y, n_total, mc, seed).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst = 0.0f64;
    for (block, an) in analytic.iter().enumerate() {
        for (i, &a) in an.iter().enumerate() {
            let mut plus = net.clone();
            plus.param_slices_mut()[block][i] += STEP;
            let mut minus = net.clone();
            minus.param_slices_mut()[block][i] -= STEP;
            let fd = (elbo_loss(&plus, &x, &y, n_total, mc, seed).unwrap()
                - elbo_loss(&minus, &x, &y, n_total, mc, seed).unwrap())
                / (2.0 * STEP);
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel < REL_TOL,
                "{link:?} block {block} index {i}: analytic {a} vs fd {fd}"
            );
        }
    }
    eprintln!("{link:?}: worst relative error {worst:e}");
}

#[test]
fn sigmoid_gradients_match_finite_differences() {
    check_gradients(OutputLink::Sigmoid, 1);
}

#[test]
fn softmax_gradients_match_finite_differences() {
    check_gradients(OutputLink::Softmax, 3);
}

#[test]
fn identity_gradients_match_finite_differences() {
    check_gradients(OutputLink::Identity, 1);
}

pub fn blobs(n: usize, p: usize, seed: u64) -> Dataset {
    let mut g = rng(seed);
    let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let x = Matrix::from_fn(n, p, |i, _| {
        let centre = if y[i] == 1.0 { 2.0 } else { -2.0 };
        centre + g.sample::<f64, _>(StandardNormal)
    });
    Dataset::new(x, y).unwrap()
}

#[test]
fn separable_blobs_are_learned_with_default_settings() {
    let data = blobs(500, 5, 3);
    let net = build_network(&NetworkConfig::binary(5, vec![512, 512]), 4).unwrap();
    let cfg = TrainConfig::default();
    assert_eq!(cfg.learning_rate, 1e-3);
    assert_eq!(cfg.epochs, 20);
    let (trained, history) = train(&net, &data, &cfg).unwrap();
    let acc = accuracy(&trained, &data.x, &data.y).unwrap();
    assert!(acc > 0.95, "train accuracy {acc}");
    assert!(history.epochs.len() <= 20);
    assert!(history.epochs.iter().all(|e| e.train_loss.is_finite()));
}

#[test]
fn multiclass_blobs_are_learned() {
    let mut g = rng(9);
    let centres = [[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]];
    let y: Vec<f64> = (0..600).map(|i| (i % 3) as f64).collect();
    let x = Matrix::from_fn(600, 2, |i, j| {
        centres[y[i] as usize][j] + 0.5 * g.sample::<f64, _>(StandardNormal)
    });
    let data = Dataset::new(x, y).unwrap();
    let cfg = NetworkConfig {
        output_link: OutputLink::Softmax,
        n_classes: 3,
        ..NetworkConfig::binary(2, vec![64])
    };
    let net = build_network(&cfg, 1).unwrap();
    let (trained, _) = train(&net, &data, &TrainConfig::default()).unwrap();
    assert!(accuracy(&trained, &data.x, &data.y).unwrap() > 0.95);
}

#[test]
fn regression_reduces_error() {
    let mut g = rng(5);
    let x = Matrix::from_fn(400, 2, |_, _| g.sample(StandardNormal));
    let y: Vec<f64> = (0..400).map(|i| 2.0 * x[(i, 0)] - x[(i, 1)]).collect();
    let data = Dataset::new(x, y).unwrap();
    let cfg = NetworkConfig {
        output_link: OutputLink::Identity,
        ..NetworkConfig::binary(2, vec![32])
    };
    let net = build_network(&cfg, 2).unwrap();
    let mse = |n: &Network| {
        let f = n.mean_logits(&data.x).unwrap();
        (0..400)
            .map(|i| (f[(i, 0)] - data.y[i]).powi(2))
            .sum::<f64>()
            / 400.0
    };
    let before = mse(&net);
    let tc = TrainConfig {
        val_fraction: 0.0,
        ..TrainConfig::default()
    };
    let (trained, history) = train(&net, &data, &tc).unwrap();
    assert_eq!(history.monitor, "train");
    assert!(
        mse(&trained) < 0.5 * before,
        "{} vs {before}",
        mse(&trained)
    );
}
