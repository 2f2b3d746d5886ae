//! Relative centrality (RATE) of variables and groups of variables.
//!
//! For `beta ~ N(mu, Omega)` with `Lambda = Omega⁻¹`, the centrality of
//! variable `j` is the KL divergence between the marginal of `beta_{-j}` and
//! its conditional given `beta_j = 0`:
//!
//! ```text
//! KLD_j = ½ [ tr(Ω₋ⱼ Λ₋ⱼ) − ln|Ω₋ⱼ Λ₋ⱼ| − (p − 1) + δⱼ μⱼ² ],
//! δⱼ = λ₋ⱼᵀ Λ₋ⱼ⁻¹ λ₋ⱼ.
//! ```
//!
//! [`kld_variable_naive`] evaluates this literally from submatrices, costing
//! `O(p³)` per variable. The block-inverse identities
//! `tr(Ω₋ⱼ Λ₋ⱼ) = p − 2 + ωⱼλⱼ`, `|Ω₋ⱼ Λ₋ⱼ| = ωⱼλⱼ` and `δⱼ = λⱼ − 1/ωⱼ`
//! collapse it to
//!
//! ```text
//! KLD_j = ½ [ ωⱼλⱼ − 1 − ln(ωⱼλⱼ) + (λⱼ − 1/ωⱼ) μⱼ² ],
//! ```
//!
//! which [`kld_variable_fast`] evaluates in `O(1)` once `Λ` is known. Groups
//! `J` follow the same pattern with `Δ_J = Λ_{J,−J} Λ₋J⁻¹ Λ_{−J,J}`, which
//! equals `Λ_J − Ω_J⁻¹`.
//!
//! RATE normalizes the divergences to sum to one; `1 / #items` is the
//! significance threshold.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esa::EffectSizePosterior;
use crate::linalg::{chol_spd, complement, gram, submatrix, subvector, Matrix, SpdFactor, Vector};

/// Residual bound on `Omega · Lambda − I` (matrix ∞-norm).
pub const INVERSE_RESIDUAL_TOL: f64 = 1e-6;

/// Tolerance below 1 for `omega_j lambda_j` before the model is declared
/// inconsistent.
const PRODUCT_SLACK: f64 = 1e-9;

/// Extra ×10 jitter escalations applied when the inverse misses
/// [`INVERSE_RESIDUAL_TOL`].
const RESIDUAL_ESCALATIONS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KldPath {
    Naive,
    Fast,
}

impl std::str::FromStr for KldPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(KldPath::Naive),
            "fast" => Ok(KldPath::Fast),
            other => Err(Error::Config(format!("unknown KLD path `{other}`"))),
        }
    }
}

/// Regularized covariance and precision of the effect sizes.
#[derive(Clone, Debug)]
pub struct PrecisionModel {
    pub mu: Vector,
    /// `G Gᵀ + tau I`.
    pub omega: Matrix,
    /// `omega⁻¹`.
    pub lambda: Matrix,
    pub jitter: f64,
    pub log_det_omega: f64,
    pub feature_names: Vec<String>,
    pub class: usize,
}

fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl PrecisionModel {
    /// Builds the model from a mean and a symmetric covariance.
    pub fn from_moments(mu: Vector, omega: Matrix, base_jitter: f64) -> Result<Self> {
        let p = mu.len();
        if p < 2 {
            return Err(Error::InvalidInput(format!(
                "centrality needs at least 2 variables, got {p}"
            )));
        }
        if omega.shape() != (p, p) {
            return Err(Error::dims(
                format!("{p}x{p} covariance"),
                format!("{}x{}", omega.nrows(), omega.ncols()),
            ));
        }
        if !mu.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "mean contains non-finite entries".into(),
            ));
        }
        let identity = Matrix::identity(p, p);
        let mut base = base_jitter;
        let mut last_residual = f64::NAN;
        for _ in 0..=RESIDUAL_ESCALATIONS {
            let factor = chol_spd(&omega, base)?;
            let tau = factor.jitter_used;
            let mut reg = crate::linalg::symmetrize(&omega);
            for i in 0..p {
                reg[(i, i)] += tau;
            }
            let lambda = factor.inverse();
            last_residual = inf_norm(&(&reg * &lambda - &identity));
            if last_residual <= INVERSE_RESIDUAL_TOL {
                return Ok(PrecisionModel {
                    mu,
                    omega: reg,
                    lambda,
                    jitter: tau,
                    log_det_omega: factor.log_det,
                    feature_names: crate::data::default_feature_names(p),
                    class: 0,
                });
            }
            let scale = (omega.trace() / p as f64).max(f64::MIN_POSITIVE);
            base = (tau / scale).max(1e-12) * 10.0;
            log::debug!(
                "inverse residual {last_residual:.3e}; raising relative jitter to {base:e}"
            );
        }
        Err(Error::Inconsistency(format!(
            "covariance inverse residual {last_residual:.3e} exceeds {INVERSE_RESIDUAL_TOL:e}"
        )))
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::dims(format!("{} names", self.p()), names.len()));
        }
        self.feature_names = names;
        Ok(self)
    }

    /// `(mu, Omega)` replaced by `(a mu, a² Omega)`, reusing the jitter policy.
    pub fn rescaled(&self, a: f64) -> Result<Self> {
        let mut out = self.clone();
        out.mu *= a;
        out.omega *= a * a;
        out.lambda /= a * a;
        out.jitter *= a * a;
        out.log_det_omega += self.p() as f64 * (a * a).ln();
        Ok(out)
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j >= self.p() {
            return Err(Error::InvalidInput(format!(
                "variable index {j} out of range for p = {}",
                self.p()
            )));
        }
        Ok(())
    }

    /// `omega_j * lambda_j`, which is `1 / (1 - R²_j)` for the regression of
    /// variable `j` on the rest.
    fn diag_product(&self, j: usize) -> Result<f64> {
        let prod = self.omega[(j, j)] * self.lambda[(j, j)];
        if !(prod >= 1.0 - PRODUCT_SLACK) || !prod.is_finite() {
            return Err(Error::Inconsistency(format!(
                "omega_j * lambda_j = {prod} < 1 for variable {j}"
            )));
        }
        Ok(prod)
    }
}

/// Covariance `G Gᵀ + tau I` and its inverse for one effect-size posterior.
pub fn build_precision(esa: &EffectSizePosterior, base_jitter: f64) -> Result<PrecisionModel> {
    let omega = gram(&esa.factor)?;
    let mut pm = PrecisionModel::from_moments(esa.mu.clone(), omega, base_jitter)?
        .with_feature_names(esa.feature_names.clone())?;
    pm.class = esa.class;
    Ok(pm)
}

fn factor_exact(m: &Matrix) -> Result<SpdFactor> {
    chol_spd(m, 0.0)
}

/// Trace of `A B` for symmetric `A`, `B`.
fn trace_of_product(a: &Matrix, b: &Matrix) -> f64 {
    a.component_mul(b).sum()
}

pub fn kld_variable_naive(pm: &PrecisionModel, j: usize) -> Result<f64> {
    pm.check_index(j)?;
    let p = pm.p();
    let rest = complement(p, &[j]);
    let omega_rest = submatrix(&pm.omega, &rest, &rest);
    let lambda_rest = submatrix(&pm.lambda, &rest, &rest);
    let lambda_cross = Vector::from_iterator(rest.len(), rest.iter().map(|&r| pm.lambda[(r, j)]));

    let trace = trace_of_product(&omega_rest, &lambda_rest);
    let lambda_factor = factor_exact(&lambda_rest)?;
    let log_det = factor_exact(&omega_rest)?.log_det + lambda_factor.log_det;
    let delta = lambda_cross.dot(&lambda_factor.solve_vec(&lambda_cross));
    let mu_j = pm.mu[j];
    let kld = 0.5 * (trace - log_det - (p - 1) as f64 + delta * mu_j * mu_j);
    Ok(kld.max(0.0))
}

pub fn kld_variable_fast(pm: &PrecisionModel, j: usize) -> Result<f64> {
    pm.check_index(j)?;
    let t = (pm.diag_product(j)? - 1.0).max(0.0);
    // delta_j = lambda_j - 1/omega_j = t / omega_j
    let delta = t / pm.omega[(j, j)];
    let mu_j = pm.mu[j];
    Ok(0.5 * (t - t.ln_1p() + delta * mu_j * mu_j))
}

/// Mutual information between `beta_j` and `beta_{-j}`: `½ ln(omega_j lambda_j)`.
pub fn mutual_info(pm: &PrecisionModel, j: usize) -> Result<f64> {
    pm.check_index(j)?;
    let t = (pm.diag_product(j)? - 1.0).max(0.0);
    Ok(0.5 * t.ln_1p())
}

fn check_group(p: usize, name: &str, members: &[usize]) -> Result<()> {
    let bad = |reason: String| Error::InvalidGroup {
        group: name.to_string(),
        reason,
    };
    if members.is_empty() {
        return Err(bad("group is empty".into()));
    }
    let mut seen = vec![false; p];
    for &j in members {
        if j >= p {
            return Err(bad(format!("index {j} out of range for p = {p}")));
        }
        if seen[j] {
            return Err(bad(format!("index {j} listed twice")));
        }
        seen[j] = true;
    }
    if members.len() >= p {
        return Err(bad(
            "group covers every variable; its complement is empty".into()
        ));
    }
    Ok(())
}

/// Group divergence evaluated literally from the `−J` blocks.
pub fn kld_group(pm: &PrecisionModel, members: &[usize]) -> Result<f64> {
    let p = pm.p();
    check_group(p, "<anonymous>", members)?;
    let m = members.len();
    let rest = complement(p, members);
    let omega_rest = submatrix(&pm.omega, &rest, &rest);
    let lambda_rest = submatrix(&pm.lambda, &rest, &rest);
    let lambda_cross = submatrix(&pm.lambda, &rest, members);

    let trace = trace_of_product(&omega_rest, &lambda_rest);
    let lambda_factor = factor_exact(&lambda_rest)?;
    let log_det = factor_exact(&omega_rest)?.log_det + lambda_factor.log_det;
    let delta = lambda_cross.transpose() * lambda_factor.solve(&lambda_cross);
    let mu_j = subvector(&pm.mu, members);
    let quad = mu_j.dot(&(delta * &mu_j));
    Ok((0.5 * (trace - log_det - (p - m) as f64 + quad)).max(0.0))
}

/// Group divergence from the `J` blocks only: `O(m³)` per group.
pub fn kld_group_fast(pm: &PrecisionModel, members: &[usize]) -> Result<f64> {
    check_group(pm.p(), "<anonymous>", members)?;
    let m = members.len();
    let omega_j = submatrix(&pm.omega, members, members);
    let lambda_j = submatrix(&pm.lambda, members, members);
    let trace = trace_of_product(&omega_j, &lambda_j);
    let omega_factor = factor_exact(&omega_j)?;
    let log_det = omega_factor.log_det + factor_exact(&lambda_j)?.log_det;
    let delta = lambda_j - omega_factor.inverse();
    let mu_j = subvector(&pm.mu, members);
    let quad = mu_j.dot(&(delta * &mu_j));
    Ok((0.5 * (trace - m as f64 - log_det + quad)).max(0.0))
}

/// Named groups of variable indices.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMap {
    pub groups: Vec<Group>,
    pub overlapping: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub name: String,
    pub members: Vec<usize>,
}

impl GroupMap {
    pub fn new(groups: Vec<Group>, p: usize) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "group scoring needs at least 2 groups, got {}",
                groups.len()
            )));
        }
        let mut owner = vec![false; p];
        let mut overlapping = false;
        for g in &groups {
            check_group(p, &g.name, &g.members)?;
            for &j in &g.members {
                overlapping |= owner[j];
                owner[j] = true;
            }
        }
        if overlapping {
            log::warn!("groups overlap; group rates are still normalized over the given groups");
        }
        Ok(GroupMap {
            groups,
            overlapping,
        })
    }

    /// One singleton group per variable.
    pub fn singletons(names: &[String]) -> Result<Self> {
        let groups = names
            .iter()
            .enumerate()
            .map(|(j, n)| Group {
                name: n.clone(),
                members: vec![j],
            })
            .collect();
        GroupMap::new(groups, names.len())
    }

    /// Reads `group_name,feature_name` rows. Unknown feature names are errors.
    /// A leading `group,feature` or `group_name,feature_name` header is skipped.
    pub fn read_csv<R: Read>(r: R, feature_names: &[String]) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut groups: Vec<Group> = Vec::new();
        for (line, rec) in rd.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::InvalidInput(format!(
                    "group file line {}: expected `group_name,feature_name`",
                    line + 1
                )));
            }
            let (group, feature) = (&rec[0], &rec[1]);
            if line == 0
                && matches!(
                    (group, feature),
                    ("group", "feature") | ("group_name", "feature_name")
                )
            {
                continue;
            }
            let j = feature_names
                .iter()
                .position(|f| f == feature)
                .ok_or_else(|| Error::InvalidGroup {
                    group: group.to_string(),
                    reason: format!("unknown feature `{feature}` on line {}", line + 1),
                })?;
            match groups.iter_mut().find(|g| g.name == group) {
                Some(g) => g.members.push(j),
                None => groups.push(Group {
                    name: group.to_string(),
                    members: vec![j],
                }),
            }
        }
        GroupMap::new(groups, feature_names.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceItem {
    pub name: String,
    pub kld: f64,
    pub rate: f64,
    /// Sign of the posterior mean effect (variables only).
    pub sign: Option<i8>,
    /// Mutual information with the remaining variables (variables only).
    pub mi: Option<f64>,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub class: usize,
    /// Every divergence was zero and the rates were set to uniform.
    pub degenerate: bool,
    pub items: Vec<ImportanceItem>,
}

impl ImportanceReport {
    fn from_klds(class: usize, mut items: Vec<ImportanceItem>) -> Self {
        let total: f64 = items.iter().map(|it| it.kld).sum();
        let count = items.len() as f64;
        let degenerate = !(total > 0.0);
        for it in items.iter_mut() {
            it.rate = if degenerate {
                1.0 / count
            } else {
                it.kld / total
            };
            it.significant = it.rate > 1.0 / count;
        }
        ImportanceReport {
            class,
            degenerate,
            items,
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.items.iter().map(|it| it.rate).collect()
    }

    pub fn klds(&self) -> Vec<f64> {
        self.items.iter().map(|it| it.kld).collect()
    }

    /// Item indices from most to least central; ties keep input order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        idx.sort_by(|&a, &b| self.items[b].rate.total_cmp(&self.items[a].rate));
        idx
    }

    /// JSON array of items.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.items)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "name",
            "kld",
            "rate",
            "sign",
            "mi",
            "significant",
            "members",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for it in &self.items {
            wr.write_record([
                it.name.clone(),
                it.kld.to_string(),
                it.rate.to_string(),
                opt(it.sign.map(|s| s.to_string())),
                opt(it.mi.map(|m| m.to_string())),
                it.significant.to_string(),
                opt(it.members.as_ref().map(|m| m.join(";"))),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn kld_variable(pm: &PrecisionModel, j: usize, path: KldPath) -> Result<f64> {
    match path {
        KldPath::Naive => kld_variable_naive(pm, j),
        KldPath::Fast => kld_variable_fast(pm, j),
    }
}

/// RATE for every variable. Variables are scored in parallel.
pub fn rate_scores(pm: &PrecisionModel, path: KldPath) -> Result<ImportanceReport> {
    let items = (0..pm.p())
        .into_par_iter()
        .map(|j| {
            let mu = pm.mu[j];
            Ok(ImportanceItem {
                name: pm.feature_names[j].clone(),
                kld: kld_variable(pm, j, path)?,
                rate: 0.0,
                sign: Some(if mu > 0.0 {
                    1
                } else if mu < 0.0 {
                    -1
                } else {
                    0
                }),
                mi: Some(mutual_info(pm, j)?),
                significant: false,
                members: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceReport::from_klds(pm.class, items))
}

/// groupRATE, normalized over the given groups.
pub fn group_rate(
    pm: &PrecisionModel,
    groups: &GroupMap,
    path: KldPath,
) -> Result<ImportanceReport> {
    for g in &groups.groups {
        check_group(pm.p(), &g.name, &g.members)?;
    }
    let items = groups
        .groups
        .par_iter()
        .map(|g| {
            let kld = match path {
                KldPath::Naive => kld_group(pm, &g.members),
                KldPath::Fast => kld_group_fast(pm, &g.members),
            }?;
            Ok(ImportanceItem {
                name: g.name.clone(),
                kld,
                rate: 0.0,
                sign: None,
                mi: None,
                significant: false,
                members: Some(
                    g.members
                        .iter()
                        .map(|&j| pm.feature_names[j].clone())
                        .collect(),
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImportanceReport::from_klds(pm.class, items))
}
