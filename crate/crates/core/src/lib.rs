//! Joint latent space models for networks with binary node covariates:
//! fitting, group-lasso covariate selection, simulation and evaluation.

pub mod error;
pub mod estimator;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod rng;
pub mod selection;
pub mod simgen;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/selection.md")]
    mod selection {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/pilot.md")]
    mod pilot {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
}
