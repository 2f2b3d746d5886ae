//! Variable importance for Bayesian neural networks.
//!
//! A small variational network (deterministic hidden layers, Gaussian
//! mean-field output layer) is trained with [`bnn::train`]. Its logit
//! posterior is projected onto the inputs by [`esa::covariance_esa`], and
//! features or feature groups are ranked by relative centrality with
//! [`rate::rate_scores`] and [`rate::group_rate`].
//!
//! ```
//! use ratekit::linalg::{Matrix, Vector};
//! use ratekit::rate::{rate_scores, KldPath, PrecisionModel};
//!
//! let omega = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
//! let pm = PrecisionModel::from_moments(Vector::from_vec(vec![1.0, 0.0]), omega, 0.0).unwrap();
//! let report = rate_scores(&pm, KldPath::Fast).unwrap();
//! assert!((report.rates().iter().sum::<f64>() - 1.0).abs() < 1e-12);
//! ```

pub mod bnn;
pub mod cli;
pub mod data;
pub mod error;
pub mod esa;
pub mod eval;
pub mod linalg;
pub mod pipeline;
pub mod plot;
pub mod rate;
pub mod simgen;
pub mod util;

pub use error::{Error, Result};
pub use nalgebra;
