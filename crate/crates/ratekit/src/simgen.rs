//! Synthetic data with known ground truth.
//!
//! [`synth_classification`] follows the hypercube-cluster construction: the
//! causal features are Gaussian clusters with random covariance placed on
//! vertices of a hypercube of side `2 * class_sep`, clusters are dealt to
//! classes round-robin, redundant features are random linear combinations of
//! the causal ones and the rest is standard normal noise. Columns are permuted
//! at the end and the causal mask follows the permutation.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{default_feature_names, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::util::rng_at;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    pub frac_causal: f64,
    pub frac_redundant: f64,
    pub n_classes: usize,
    pub n_clusters_per_class: usize,
    /// Half the hypercube side.
    pub class_sep: f64,
    pub flip_y: f64,
    pub seed: u64,
}

/// The defaults (3 clusters per class, `class_sep = 3`) give a problem a
/// 2 × 512 network learns from 1000 rows while the marginal correlations
/// still miss part of the causal set.
impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 1000,
            p: 100,
            frac_causal: 0.1,
            frac_redundant: 0.0,
            n_classes: 2,
            n_clusters_per_class: 3,
            class_sep: 3.0,
            flip_y: 0.01,
            seed: 0,
        }
    }
}

/// Block sizes `(causal, redundant, noise)` implied by a spec.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSizes {
    pub causal: usize,
    pub redundant: usize,
    pub noise: usize,
}

impl SynthSpec {
    pub fn blocks(&self) -> Result<BlockSizes> {
        if self.n < 10 {
            return Err(Error::Config(format!(
                "n must be at least 10, got {}",
                self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.frac_causal) || !(0.0..=1.0).contains(&self.frac_redundant) {
            return Err(Error::Config("feature fractions must lie in [0, 1]".into()));
        }
        if self.frac_causal + self.frac_redundant > 1.0 + 1e-12 {
            return Err(Error::Config(
                "frac_causal + frac_redundant exceeds 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_y) {
            return Err(Error::Config(format!(
                "flip_y must lie in [0, 1], got {}",
                self.flip_y
            )));
        }
        if self.n_classes < 2 || self.n_clusters_per_class < 1 {
            return Err(Error::Config(
                "need at least 2 classes and 1 cluster per class".into(),
            ));
        }
        if !(self.class_sep.is_finite() && self.class_sep >= 0.0) {
            return Err(Error::Config(
                "class_sep must be finite and nonnegative".into(),
            ));
        }
        let causal = (self.frac_causal * self.p as f64).round() as usize;
        let redundant = (self.frac_redundant * self.p as f64).round() as usize;
        if causal == 0 {
            return Err(Error::Config(format!(
                "frac_causal {} of p = {} yields no causal feature",
                self.frac_causal, self.p
            )));
        }
        if causal + redundant > self.p {
            return Err(Error::Config("causal + redundant exceeds p".into()));
        }
        let clusters = self.n_classes * self.n_clusters_per_class;
        if causal < 64 && clusters as u64 > (1u64 << causal) {
            return Err(Error::Config(format!(
                "{clusters} clusters do not fit on the vertices of a {causal}-dimensional hypercube"
            )));
        }
        Ok(BlockSizes {
            causal,
            redundant,
            noise: self.p - causal - redundant,
        })
    }
}

/// A simulated classification dataset and its column permutation.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub dataset: Dataset,
    /// `column_origin[j]` is the block-ordered column (causal | redundant |
    /// noise) that ended up at position `j`.
    pub column_origin: Vec<usize>,
    pub blocks: BlockSizes,
}

fn distinct_vertices<R: Rng>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vec<f64> = (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

pub fn synth_classification(spec: &SynthSpec) -> Result<SynthOutput> {
    let blocks = spec.blocks()?;
    let (n, p) = (spec.n, spec.p);
    let k = blocks.causal;
    let n_clusters = spec.n_classes * spec.n_clusters_per_class;

    let mut geo = rng_at(spec.seed, &[0]);
    let centroids: Vec<Vec<f64>> = distinct_vertices(&mut geo, n_clusters, k)
        .into_iter()
        .map(|v| v.into_iter().map(|c| c * spec.class_sep).collect())
        .collect();

    let mut x = Matrix::zeros(n, p);
    let mut y = vec![0.0; n];
    let mut draw = rng_at(spec.seed, &[1]);

    // causal block: cluster by cluster
    let base = n / n_clusters;
    let extra = n % n_clusters;
    let mut row = 0;
    for (c, centroid) in centroids.iter().enumerate() {
        let size = base + usize::from(c < extra);
        let mixing = Matrix::from_fn(k, k, |_, _| geo.random_range(-1.0..1.0));
        let z = Matrix::from_fn(size, k, |_, _| draw.sample::<f64, _>(StandardNormal));
        let block = z * &mixing;
        for i in 0..size {
            for j in 0..k {
                x[(row + i, j)] = block[(i, j)] + centroid[j];
            }
            y[row + i] = (c % spec.n_classes) as f64;
        }
        row += size;
    }

    if blocks.redundant > 0 {
        let combo = Matrix::from_fn(k, blocks.redundant, |_, _| geo.random_range(-1.0..1.0));
        let causal = x.columns(0, k).into_owned();
        let red = causal * combo;
        x.columns_mut(k, blocks.redundant).copy_from(&red);
    }
    for j in (k + blocks.redundant)..p {
        for i in 0..n {
            x[(i, j)] = draw.sample(StandardNormal);
        }
    }

    let mut noise = rng_at(spec.seed, &[2]);
    for label in y.iter_mut() {
        if noise.random::<f64>() < spec.flip_y {
            *label = noise.random_range(0..spec.n_classes) as f64;
        }
    }

    let mut perm = rng_at(spec.seed, &[3]);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut perm);
    let mut column_origin: Vec<usize> = (0..p).collect();
    column_origin.shuffle(&mut perm);

    let shuffled = Matrix::from_fn(n, p, |i, j| x[(rows[i], column_origin[j])]);
    let labels = rows.iter().map(|&i| y[i]).collect();
    let mask = column_origin.iter().map(|&c| c < k).collect();

    let mut dataset = Dataset::with_names(shuffled, labels, default_feature_names(p))?;
    dataset.causal_mask = Some(mask);
    Ok(SynthOutput {
        dataset,
        column_origin,
        blocks,
    })
}

/// Two-feature regression `y = 2 x1 - 2 x2 + eps` with `corr(x1, x2) = rho`.
pub fn collinear_regression(n: usize, rho: f64, seed: u64) -> Result<Dataset> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Config(format!("|rho| must be below 1, got {rho}")));
    }
    if n < 3 {
        return Err(Error::Config(format!(
            "need at least 3 observations, got {n}"
        )));
    }
    let mut g = rng_at(seed, &[0]);
    let tail = (1.0 - rho * rho).sqrt();
    let mut x = Matrix::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let x1: f64 = g.sample(StandardNormal);
        let e2: f64 = g.sample(StandardNormal);
        let e: f64 = g.sample(StandardNormal);
        let x2 = rho * x1 + tail * e2;
        x[(i, 0)] = x1;
        x[(i, 1)] = x2;
        y.push(2.0 * x1 - 2.0 * x2 + e);
    }
    let mut ds = Dataset::new(x, y)?;
    ds.causal_mask = Some(vec![true, true]);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn causal_count_is_exact() {
        let spec = SynthSpec {
            n: 100,
            p: 20,
            n_clusters_per_class: 2,
            seed: 1,
            ..Default::default()
        };
        let out = synth_classification(&spec).unwrap();
        let mask = out.dataset.causal_mask.unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 2);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SynthSpec {
            n: 50,
            p: 30,
            seed: 9,
            ..Default::default()
        };
        let a = synth_classification(&spec).unwrap();
        let b = synth_classification(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = synth_classification(&SynthSpec { seed: 10, ..spec }).unwrap();
        assert_ne!(a.dataset.x, c.dataset.x);
    }

    #[test]
    fn unpermuting_restores_block_order() {
        let spec = SynthSpec {
            n: 60,
            p: 20,
            frac_causal: 0.2,
            frac_redundant: 0.3,
            seed: 4,
            ..Default::default()
        };
        let out = synth_classification(&spec).unwrap();
        let mask = out.dataset.causal_mask.as_ref().unwrap();
        let mut restored = vec![false; spec.p];
        for (j, &origin) in out.column_origin.iter().enumerate() {
            restored[origin] = mask[j];
        }
        let b = out.blocks;
        assert_eq!((b.causal, b.redundant, b.noise), (4, 6, 10));
        assert!(restored[..4].iter().all(|&m| m));
        assert!(restored[4..].iter().all(|&m| !m));

        // redundant columns are exact linear combinations of causal ones
        let x = &out.dataset.x;
        let pos = |origin: usize| out.column_origin.iter().position(|&o| o == origin).unwrap();
        let causal = Matrix::from_fn(spec.n, 4, |i, j| x[(i, pos(j))]);
        let red = x.column(pos(4)).into_owned();
        let svd = causal.clone().svd(true, true);
        let coef = svd.solve(&red, 1e-12).unwrap();
        assert!((causal * coef - red).amax() < 1e-9);
    }

    #[test]
    fn labels_balanced() {
        let spec = SynthSpec {
            n: 1000,
            p: 30,
            seed: 3,
            ..Default::default()
        };
        let ds = synth_classification(&spec).unwrap().dataset;
        let ones = ds.y.iter().filter(|&&v| v == 1.0).count() as f64 / 1000.0;
        assert!((ones - 0.5).abs() < 0.1);
        assert!(ds.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn infeasible_specs() {
        let bad = SynthSpec {
            p: 5,
            frac_causal: 0.1,
            ..Default::default()
        };
        assert!(matches!(synth_classification(&bad), Err(Error::Config(_))));
        let too_many = SynthSpec {
            p: 10,
            frac_causal: 0.1,
            n_clusters_per_class: 3,
            ..Default::default()
        };
        // 4 clusters on a 1-cube
        assert!(synth_classification(&too_many).is_err());
        let over = SynthSpec {
            frac_causal: 0.7,
            frac_redundant: 0.5,
            ..Default::default()
        };
        assert!(synth_classification(&over).is_err());
    }

    #[test]
    fn collinear_uncorrelated() {
        let ds = collinear_regression(5000, 0.0, 1).unwrap();
        let c = corr(ds.x.column(0).as_slice(), ds.x.column(1).as_slice());
        assert!(c.abs() < 0.05, "corr {c}");
    }

    #[test]
    fn collinear_high_rho() {
        let ds = collinear_regression(5000, 0.999, 2).unwrap();
        let c = corr(ds.x.column(0).as_slice(), ds.x.column(1).as_slice());
        assert!((0.998..=1.0).contains(&c), "corr {c}");
        // var(y) = 8 (1 - rho) + 1
        let n = ds.y.len() as f64;
        let m = ds.y.iter().sum::<f64>() / n;
        let var = ds.y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.008).abs() < 0.05, "var {var}");
    }

    #[test]
    fn collinear_rejects_unit_rho() {
        assert!(collinear_regression(10, 1.0, 0).is_err());
    }
}
