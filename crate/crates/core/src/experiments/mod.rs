//! Evaluation harness: synthetic recovery tables, error metrics, rating
//! splits and baselines.

pub mod metrics;
pub mod ratings;
pub mod synthetic;

pub use metrics::{align_columns, mae, min_cost_assignment, mre_factors, mre_tensor, mre_tensor_models, rmse};
pub use ratings::{
    bmf_fit, cpd_fit_predictor, evaluate, rank_sweep, sample_ratings, split_dataset, Averages, BmfConfig,
    BmfModel, CpdPredictor, CpdPredictorConfig, Method, MethodScore, Split, SplitSpec,
};
pub use synthetic::{
    gen_synthetic, perturb_and_project, run_table, run_trial, SyntheticSpec, TableResult, TrialResult,
};
