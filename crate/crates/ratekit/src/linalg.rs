//! Dense linear-algebra kernel: centering, jittered Cholesky, SPD inversion
//! and Gram products.
//!
//! Covariances of effect sizes have rank at most `k` (the width of the last
//! hidden layer), so they are singular whenever `p > k`. Every factorization
//! here therefore goes through [`chol_spd`], which adds a relative diagonal
//! jitter `tau = base * trace / p` and escalates it by a factor of ten until the
//! factorization succeeds.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative jitter.
pub const DEFAULT_JITTER: f64 = 1e-8;

/// Number of ×10 escalations attempted after the first factorization fails.
pub const MAX_ESCALATIONS: usize = 6;

/// Relative Frobenius asymmetry above which an input is rejected.
const ASYMMETRY_TOL: f64 = 1e-6;

/// Jitter floor used when escalation starts from zero.
const ZERO_BASE_FLOOR: f64 = 1e-12;

/// Cholesky factor of a (possibly jittered) symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    /// `ln |S + tau I|`.
    pub log_det: f64,
    /// The `tau` that was added to the diagonal.
    pub jitter_used: f64,
}

impl SpdFactor {
    /// Lower-triangular factor `L` with `L Lᵀ = S + tau I`.
    pub fn l(&self) -> Matrix {
        self.chol.l()
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve_vec(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    pub fn solve(&self, b: &Matrix) -> Matrix {
        self.chol.solve(b)
    }

    /// `(S + tau I)⁻¹`, symmetrized.
    pub fn inverse(&self) -> Matrix {
        symmetrize(&self.chol.inverse())
    }
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} contains non-finite entries"
        )))
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Column-centers `m`, i.e. returns `C m` with `C = I - 11ᵀ/n`.
pub fn center_columns(m: &Matrix) -> Result<Matrix> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::InvalidInput("cannot center an empty matrix".into()));
    }
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    Ok(out)
}

fn check_square_symmetric(s: &Matrix) -> Result<Matrix> {
    if s.nrows() != s.ncols() {
        return Err(Error::dims(
            "square matrix",
            format!("{}x{}", s.nrows(), s.ncols()),
        ));
    }
    if s.nrows() == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    ensure_finite(s, "symmetric input")?;
    let norm = s.norm();
    let asym = (s - s.transpose()).norm();
    if norm > 0.0 && asym > ASYMMETRY_TOL * norm {
        return Err(Error::InvalidInput(format!(
            "matrix is not symmetric (relative asymmetry {:.3e})",
            asym / norm
        )));
    }
    Ok(symmetrize(s))
}

/// Factors `S + tau I`, escalating `tau` from `base_jitter * trace(S) / p`.
pub fn chol_spd(s: &Matrix, base_jitter: f64) -> Result<SpdFactor> {
    if !(base_jitter >= 0.0 && base_jitter.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "jitter must be finite and nonnegative, got {base_jitter}"
        )));
    }
    let sym = check_square_symmetric(s)?;
    let p = sym.nrows();
    let trace = sym.trace();
    let scale = if trace > 0.0 { trace / p as f64 } else { 1.0 };

    let mut tau = base_jitter * scale;
    for attempt in 0..=MAX_ESCALATIONS {
        if attempt > 0 {
            tau = if tau > 0.0 {
                tau * 10.0
            } else {
                ZERO_BASE_FLOOR * scale
            };
        }
        let mut shifted = sym.clone();
        if tau > 0.0 {
            for i in 0..p {
                shifted[(i, i)] += tau;
            }
        }
        if let Some(chol) = Cholesky::new(shifted) {
            let l = chol.l_dirty();
            let log_det = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
            if log_det.is_finite() {
                return Ok(SpdFactor {
                    chol,
                    log_det,
                    jitter_used: tau,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite { jitter: tau })
}

/// `(S + tau I)⁻¹` through [`chol_spd`].
pub fn spd_inverse(s: &Matrix, base_jitter: f64) -> Result<Matrix> {
    Ok(chol_spd(s, base_jitter)?.inverse())
}

/// `G Gᵀ`, exactly symmetric.
pub fn gram(g: &Matrix) -> Result<Matrix> {
    if g.nrows() == 0 || g.ncols() == 0 {
        return Err(Error::InvalidInput("gram of an empty matrix".into()));
    }
    ensure_finite(g, "gram input")?;
    let full = g * g.transpose();
    let mut out = full.clone();
    let n = full.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            out[(j, i)] = full[(i, j)];
        }
    }
    Ok(out)
}

/// Principal submatrix on `keep` (rows and columns).
pub fn submatrix(m: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(v: &Vector, idx: &[usize]) -> Vector {
    Vector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Indices in `0..p` not contained in `exclude`, in increasing order.
pub fn complement(p: usize, exclude: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; p];
    for &j in exclude {
        mask[j] = true;
    }
    (0..p).filter(|&i| !mask[i]).collect()
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn spd_strategy() -> impl Strategy<Value = Matrix> {
        (2usize..8)
            .prop_flat_map(|p| (Just(p), prop::collection::vec(-2.0f64..2.0, p * p)))
            .prop_map(|(p, v)| {
                let b = Matrix::from_vec(p, p, v);
                &b * b.transpose() + Matrix::identity(p, p) * 0.5
            })
    }

    proptest! {
        #[test]
        fn cholesky_reconstructs(s in spd_strategy()) {
            let p = s.nrows();
            let f = chol_spd(&s, DEFAULT_JITTER).unwrap();
            let l = f.l();
            let target = &s + Matrix::identity(p, p) * f.jitter_used;
            prop_assert!((&l * l.transpose() - target).norm() / s.norm() < 1e-8);
        }

        #[test]
        fn inverse_round_trips(s in spd_strategy()) {
            let back = spd_inverse(&spd_inverse(&s, 0.0).unwrap(), 0.0).unwrap();
            prop_assert!((back - &s).norm() / s.norm() < 1e-6);
        }

        #[test]
        fn gram_has_no_negative_eigenvalues(v in prop::collection::vec(-3.0f64..3.0, 12)) {
            let g = Matrix::from_vec(4, 3, v);
            let s = gram(&g).unwrap();
            let floor = -1e-10 * s.trace().max(f64::MIN_POSITIVE);
            prop_assert!(s.symmetric_eigen().eigenvalues.iter().all(|&e| e >= floor));
        }
    }
}
