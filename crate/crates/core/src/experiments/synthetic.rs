//! Recovery of known models from exact or perturbed marginals.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::marginals::{marginals_from_joint, marginals_from_model, MarginalSet};
use crate::model::CpdModel;
use crate::rng::{streams, substream};
use crate::simplex::simplex_project_in_place;
use crate::solver::{fit, random_model, InitScheme, SolverConfig, Termination};
use crate::tensor::DenseTensor;

use super::metrics::{mean, median, mre_factors, mre_tensor};

/// Largest joint that [`perturb_and_project`] will materialize by default.
pub const DEFAULT_JOINT_CAP: usize = 100_000_000;

/// Relative slack allowed when checking that an objective trace never rises.
pub const MONOTONE_RTOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticSpec {
    pub cardinalities: Vec<usize>,
    pub rank: usize,
    /// Standard deviation of the Gaussian noise added to the full joint.
    pub noise_sigma: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `n_vars` variables with `card` states each, noiseless.
    pub fn uniform(n_vars: usize, card: usize, rank: usize, trials: usize, seed: u64) -> Self {
        Self { cardinalities: vec![card; n_vars], rank, noise_sigma: 0.0, trials, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("at least one trial is required".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.rank == 0 || self.cardinalities.is_empty() || self.cardinalities.contains(&0) {
            return Err(Error::InvalidInput("synthetic models need rank >= 1 and nonzero cardinalities".into()));
        }
        Ok(())
    }
}

/// Ground-truth model of one trial: uniform(0,1) entries, columns and weights
/// normalized. Deterministic in `(spec.seed, trial)`.
pub fn gen_synthetic(spec: &SyntheticSpec, trial: usize) -> Result<CpdModel> {
    let mut rng = substream(spec.seed, streams::TRIAL, trial as u64);
    random_model(&spec.cardinalities, spec.rank, &mut rng)
}

/// Starting point for fitting rank `rank` in trial `trial`. Shared by every
/// marginal order so that comparisons across orders use matched seeds.
pub fn trial_init(spec: &SyntheticSpec, rank: usize, trial: usize) -> Result<CpdModel> {
    let mut rng = substream(spec.seed, streams::INIT, trial as u64);
    random_model(&spec.cardinalities, rank, &mut rng)
}

/// Adds i.i.d. `N(0, σ²)` noise to the full joint of `model`, projects the
/// result onto the simplex and marginalizes it to `order`.
pub fn perturb_and_project<R: Rng>(
    model: &CpdModel,
    sigma: f64,
    order: usize,
    rng: &mut R,
    cap: usize,
) -> Result<(DenseTensor, MarginalSet)> {
    let entries = model.cardinalities().iter().try_fold(1usize, |acc, &c| acc.checked_mul(c));
    match entries {
        Some(e) if e <= cap => {}
        _ => {
            return Err(Error::TooLarge {
                entries: entries.unwrap_or(usize::MAX),
                cap,
            })
        }
    }
    let mut joint = model.reconstruct(None)?;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for x in joint.data_mut() {
            *x += normal.sample(rng);
        }
        simplex_project_in_place(joint.data_mut())?;
    }
    let marginals = marginals_from_joint(&joint, order)?;
    Ok((joint, marginals))
}

/// Inputs of one trial at the given order: exact marginals when `noise_sigma` is zero,
/// perturbed ones otherwise.
pub fn trial_marginals(spec: &SyntheticSpec, truth: &CpdModel, order: usize, trial: usize) -> Result<MarginalSet> {
    if spec.noise_sigma == 0.0 {
        marginals_from_model(truth, order)
    } else {
        let mut rng = substream(spec.seed, streams::NOISE, trial as u64);
        perturb_and_project(truth, spec.noise_sigma, order, &mut rng, DEFAULT_JOINT_CAP).map(|(_, m)| m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    /// `None` when the fitted rank differs from the true rank.
    pub mre_fact: Option<f64>,
    pub mre_ten: f64,
    pub objective: f64,
    pub cycles: usize,
    pub termination: String,
    /// Largest `(f_k − f_{k−1}) / f_{k−1}` along the objective trace.
    pub max_relative_increase: f64,
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
    #[serde(skip)]
    pub model: CpdModel,
}

impl TrialResult {
    pub fn monotone(&self) -> bool {
        self.max_relative_increase <= MONOTONE_RTOL
    }
}

/// Largest relative rise between consecutive trace entries (`0` if none).
pub fn max_relative_increase(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| if w[1] > w[0] { (w[1] - w[0]) / w[0] } else { 0.0 })
        .fold(0.0, f64::max)
}

/// Summary of one `(order, rank)` cell of a recovery table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableResult {
    pub order: usize,
    pub rank_true: usize,
    pub rank_fit: usize,
    pub noise_sigma: f64,
    pub trials: Vec<TrialResult>,
}

impl TableResult {
    fn facts(&self) -> Vec<f64> {
        self.trials.iter().filter_map(|t| t.mre_fact).collect()
    }

    fn tens(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.mre_ten).collect()
    }

    pub fn mean_mre_fact(&self) -> Option<f64> {
        let v = self.facts();
        (!v.is_empty()).then(|| mean(&v))
    }

    pub fn median_mre_fact(&self) -> Option<f64> {
        let v = self.facts();
        (!v.is_empty()).then(|| median(&v))
    }

    pub fn mean_mre_ten(&self) -> f64 {
        mean(&self.tens())
    }

    pub fn median_mre_ten(&self) -> f64 {
        median(&self.tens())
    }

    pub fn all_monotone(&self) -> bool {
        self.trials.iter().all(TrialResult::monotone)
    }
}

/// Generates, fits and scores one trial. `solver` supplies the thresholds;
/// its rank, seed and initialization are overridden per trial.
pub fn run_trial(
    spec: &SyntheticSpec,
    order: usize,
    rank_fit: usize,
    trial: usize,
    solver: &SolverConfig,
) -> Result<TrialResult> {
    let truth = gen_synthetic(spec, trial)?;
    let marginals = trial_marginals(spec, &truth, order, trial)?;
    let config = SolverConfig {
        rank: rank_fit,
        seed: spec.seed,
        init: InitScheme::Given(trial_init(spec, rank_fit, trial)?),
        ..solver.clone()
    };
    let state = fit(&marginals, &config)?;
    let mre_fact = if rank_fit == spec.rank { Some(mre_factors(&truth, &state.model)?) } else { None };
    let mre_ten = mre_tensor(&truth.reconstruct(None)?, &state.model.reconstruct(None)?)?;
    let termination = match state.termination {
        Some(Termination::Converged) => "converged",
        Some(Termination::ExactFit) => "exact",
        _ => "max-cycles",
    };
    Ok(TrialResult {
        trial,
        mre_fact,
        mre_ten,
        objective: state.objective().unwrap_or(f64::NAN),
        cycles: state.cycles,
        termination: termination.to_string(),
        max_relative_increase: max_relative_increase(&state.objective_trace),
        objective_trace: state.objective_trace,
        model: state.model,
    })
}

/// Runs every trial of `spec` at one marginal order and fitted rank, trials
/// in parallel. Results are ordered by trial index.
pub fn run_table(spec: &SyntheticSpec, order: usize, rank_fit: usize, solver: &SolverConfig) -> Result<TableResult> {
    spec.validate()?;
    if order < 1 || order > spec.cardinalities.len() {
        return Err(Error::InvalidInput(format!(
            "order {order} is not in 1..={}",
            spec.cardinalities.len()
        )));
    }
    let trials = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, order, rank_fit, t, solver))
        .collect::<Result<Vec<_>>>()?;
    Ok(TableResult { order, rank_true: spec.rank, rank_fit, noise_sigma: spec.noise_sigma, trials })
}

/// Writes per-trial rows of several table cells as delimited text.
pub fn write_results<W: std::io::Write>(results: &[TableResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "order", "rank_true", "rank_fit", "sigma", "trial", "mre_fact", "mre_ten", "objective",
        "cycles", "termination", "max_rel_increase",
    ])
    .map_err(csv_error)?;
    for r in results {
        for t in &r.trials {
            out.write_record([
                r.order.to_string(),
                r.rank_true.to_string(),
                r.rank_fit.to_string(),
                format!("{:e}", r.noise_sigma),
                t.trial.to_string(),
                t.mre_fact.map_or_else(|| "NA".to_string(), |v| format!("{v:.6e}")),
                format!("{:.6e}", t.mre_ten),
                format!("{:.6e}", t.objective),
                t.cycles.to_string(),
                t.termination.clone(),
                format!("{:.3e}", t.max_relative_increase),
            ])
            .map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("{other:?}")),
    }
}
