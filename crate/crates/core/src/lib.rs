//! Sparse multivariate regression that groups similar responses.
//!
//! [`mcen::fit`] and [`binomial::fit_binomial`] estimate one tuning triple,
//! [`cv`] chooses the triple, and [`sim`] runs the block-design comparison.

pub mod binomial;
pub mod cv;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod kmeans;
pub mod mcen;
pub mod report;
pub mod sen;
pub mod sim;
pub mod table;

#[cfg(test)]
mod testutil;

pub use data::*;
pub use error::{McenError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/gaussian.md")]
    mod gaussian {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    mod clustering {}
    #[doc = include_str!("../../../book/src/binomial.md")]
    mod binomial {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
