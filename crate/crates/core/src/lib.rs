//! Reference priors and posteriors for Poisson counting experiments with
//! uncertain effective luminosity and background.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod counting;
pub mod error;
pub mod grid;
pub mod mcmc;
pub mod method1;
pub mod method2;
pub mod paradox;
pub mod quad;
pub mod reference;
pub mod specfun;

pub use analysis::{PosteriorSummary, ReplicationConfig};
pub use counting::{Bin, CountingChannel, GammaPriorSpec, ParameterPoint};
pub use error::{Error, Result};
pub use grid::DensityGrid;
pub use method1::{posterior_density, tail_probability, SingleCountPosterior};
pub use method2::{method2_posterior, method2_prior_mc, method2_prior_series, Method2PriorMode};
pub use specfun::RandomStream;
