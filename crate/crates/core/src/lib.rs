//! Recovery of a joint probability mass function from its low-order
//! marginals.
//!
//! The joint PMF of `N` categorical variables is modeled as a nonnegative
//! rank-`F` CP decomposition whose weights are the prior of a latent variable
//! and whose factor columns are conditional PMFs (a naive Bayes model). The
//! model is fitted to estimated marginals of pairs, triples or quadruples by
//! alternating optimization with ADMM block updates, then queried for
//! conditional distributions, expectations and MAP estimates.
//!
//! ```
//! use pmfcpd::{fit, init_model, marginals_from_model, SolverConfig};
//!
//! let truth = init_model(&[3, 3, 3, 3], 2, 7).unwrap();
//! let triples = marginals_from_model(&truth, 3).unwrap();
//! let mut config = SolverConfig::new(2);
//! config.max_cycles = 200;
//! let state = fit(&triples, &config).unwrap();
//! assert!(state.objective().unwrap() < state.objective_trace[0]);
//! ```

pub mod dataset;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod marginals;
pub mod model;
pub mod rng;
pub mod simplex;
pub mod solver;
pub mod tensor;

pub use dataset::{Cell, RatingsDataset};
pub use error::{Error, Result};
pub use marginals::{
    estimate_marginals, marginal_residual, marginals_from_joint, marginals_from_model, Marginal,
    MarginalSet,
};
pub use inference::{
    conditional_expectation, conditional_pmf, map_estimate, posterior_mixture, predict_queries, Evidence,
    ValueMap,
};
pub use model::CpdModel;
pub use simplex::{simplex_project, simplex_project_columns};
pub use solver::{
    fit, fit_with_observer, init_model, InitScheme, RhoPolicy, SolverConfig, SolverState,
    Termination,
};
pub use tensor::{fold, hadamard, khatri_rao, khatri_rao_chain, mode_unfold, DenseTensor, Matrix};
