//! Compiles and runs the code listings of the guide as doctests.
//!
//! One module per chapter so a failure points at the right file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/effect-sizes.md")]
pub mod effect_sizes {}
#[doc = include_str!("../../../book/src/rate.md")]
pub mod rate {}
#[doc = include_str!("../../../book/src/groups.md")]
pub mod groups {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
