//! Alternating optimization of the coupled marginal-fitting problem.
//!
//! Each cycle updates `A_1, …, A_N` and then `λ`, every block by ADMM on its
//! simplex-constrained least-squares subproblem. The objective is
//! `Σ_S ½‖X_S − [[λ, A_S]]‖²_F` over the stored tuples `S`, each unordered
//! tuple counted once.

pub mod admm;
pub mod terms;

use rand::Rng;

use crate::error::{Error, Result};
use crate::marginals::{marginal_residual, MarginalSet};
use crate::model::CpdModel;
use crate::rng::{streams, substream};
use crate::tensor::{Matrix, PMF_TOL};

pub use admm::{AdmmReport, Constraint};
pub use terms::{compute_gi, compute_vi, lambda_gram, lambda_rhs, term_count};

/// How the ADMM penalty is chosen for each block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoPolicy {
    /// `trace(G)/F`, floored at [`admm::RHO_FLOOR`], recomputed per block.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitScheme {
    /// Uniform(0,1) entries, normalized onto the simplex; drawn from the
    /// `init` substream of the seed.
    Random,
    Given(CpdModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rank: usize,
    pub max_cycles: usize,
    pub admm_max_iters: usize,
    pub admm_tol: f64,
    pub rho: RhoPolicy,
    /// Stop once the relative objective change falls below this.
    pub outer_tol: f64,
    pub seed: u64,
    pub init: InitScheme,
}

impl SolverConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            max_cycles: 1500,
            admm_max_iters: 50,
            admm_tol: 1e-12,
            rho: RhoPolicy::Auto,
            outer_tol: 1e-10,
            seed: 0,
            init: InitScheme::Random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidInput("rank must be at least 1".into()));
        }
        if !(self.admm_tol > 0.0) || !(self.outer_tol > 0.0) {
            return Err(Error::InvalidInput("solver thresholds must be positive".into()));
        }
        if self.admm_max_iters == 0 {
            return Err(Error::InvalidInput("ADMM needs at least one inner iteration".into()));
        }
        if let RhoPolicy::Fixed(r) = self.rho {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!("fixed rho must be positive, got {r}")));
            }
        }
        if let InitScheme::Given(m) = &self.init {
            if m.rank() != self.rank {
                return Err(Error::InvalidInput(format!(
                    "initial model has rank {}, config asks for {}",
                    m.rank(),
                    self.rank
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxCycles,
    /// Relative objective change fell below `outer_tol`.
    Converged,
    /// The objective fell to the roundoff floor, [`EXACT_FIT_RTOL`] times
    /// `½ Σ_S ‖X_S‖²`.
    ExactFit,
}

/// Objectives below this fraction of `½ Σ_S ‖X_S‖²` (a relative residual
/// near `1e-15`) are indistinguishable from zero.
pub const EXACT_FIT_RTOL: f64 = 1e-30;

/// Solver progress. `objective_trace[0]` is the objective at the
/// initialization, entry `k` the value after cycle `k`.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub model: CpdModel,
    pub objective_trace: Vec<f64>,
    /// Scaled duals per factor, `I_n × F`.
    pub factor_duals: Vec<Matrix>,
    /// Scaled dual of the weight block, `1 × F`.
    pub lambda_dual: Matrix,
    pub cycles: usize,
    pub termination: Option<Termination>,
    pub inner_iterations: usize,
    pub rejected_steps: usize,
}

impl SolverState {
    pub fn new(model: CpdModel) -> Self {
        let f = model.rank();
        let factor_duals = model.factors().iter().map(|a| Matrix::zeros(a.nrows(), f)).collect();
        Self {
            model,
            objective_trace: Vec::new(),
            factor_duals,
            lambda_dual: Matrix::zeros(1, f),
            cycles: 0,
            termination: None,
            inner_iterations: 0,
            rejected_steps: 0,
        }
    }

    pub fn objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

/// Passed to the per-cycle observer of [`fit_with_observer`].
pub struct CycleReport<'a> {
    pub cycle: usize,
    pub objective: f64,
    pub model: &'a CpdModel,
}

/// Random stochastic model: i.i.d. uniform entries, columns and `λ`
/// normalized to sum to one.
pub fn init_model(cardinalities: &[usize], rank: usize, seed: u64) -> Result<CpdModel> {
    let mut rng = substream(seed, streams::INIT, 0);
    random_model(cardinalities, rank, &mut rng)
}

pub(crate) fn random_model<R: Rng>(cardinalities: &[usize], rank: usize, rng: &mut R) -> Result<CpdModel> {
    if rank == 0 {
        return Err(Error::InvalidInput("rank must be at least 1".into()));
    }
    if cardinalities.is_empty() || cardinalities.contains(&0) {
        return Err(Error::InvalidInput(format!("bad cardinalities {cardinalities:?}")));
    }
    let weights = normalized((0..rank).map(|_| rng.random::<f64>()).collect());
    let factors = cardinalities
        .iter()
        .map(|&card| {
            let mut a = Matrix::from_fn(card, rank, |_, _| rng.random::<f64>());
            for mut col in a.column_iter_mut() {
                let s = col.sum();
                col /= s;
            }
            a
        })
        .collect();
    CpdModel::new(weights, factors)
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Updates factor `n` in place: builds `G_n` and `V_n` and runs ADMM.
pub fn admm_factor_update(
    marginals: &MarginalSet,
    state: &mut SolverState,
    n: usize,
    config: &SolverConfig,
) -> Result<AdmmReport> {
    let g = compute_gi(marginals, &state.model, n);
    let v = terms::vi_unchecked(marginals, &state.model, n);
    factor_update_with(&g, &v, state, n, config)
}

/// ADMM factor step given precomputed `G_n` (`F × F`) and `V_n` (`F × I_n`).
pub fn factor_update_with(
    g: &Matrix,
    v: &Matrix,
    state: &mut SolverState,
    n: usize,
    config: &SolverConfig,
) -> Result<AdmmReport> {
    let vt = v.transpose();
    let report = admm::solve_block(
        g,
        &vt,
        state.model.factor_mut(n),
        &mut state.factor_duals[n],
        Constraint::Columns,
        config,
    )?;
    state.inner_iterations += report.iterations;
    state.rejected_steps += usize::from(!report.accepted);
    Ok(report)
}

/// Updates `λ` in place.
pub fn admm_lambda_update(
    marginals: &MarginalSet,
    state: &mut SolverState,
    config: &SolverConfig,
) -> Result<AdmmReport> {
    let g = lambda_gram(marginals, &state.model);
    let v = lambda_rhs(marginals, &state.model);
    lambda_update_with(&g, &v, state, config)
}

pub fn lambda_update_with(
    g: &Matrix,
    v: &Matrix,
    state: &mut SolverState,
    config: &SolverConfig,
) -> Result<AdmmReport> {
    let mut x = Matrix::from_row_slice(1, state.model.rank(), state.model.weights());
    let vt = v.transpose();
    let report = admm::solve_block(g, &vt, &mut x, &mut state.lambda_dual, Constraint::Whole, config)?;
    state.model.weights_mut().copy_from_slice(x.as_slice());
    state.inner_iterations += report.iterations;
    state.rejected_steps += usize::from(!report.accepted);
    Ok(report)
}

pub fn fit(marginals: &MarginalSet, config: &SolverConfig) -> Result<SolverState> {
    fit_with_observer(marginals, config, |_| {})
}

/// [`fit`] with a callback after every cycle.
pub fn fit_with_observer(
    marginals: &MarginalSet,
    config: &SolverConfig,
    mut observer: impl FnMut(&CycleReport<'_>),
) -> Result<SolverState> {
    config.validate()?;
    if let Some(tuple) = marginals.first_missing() {
        return Err(Error::MissingTuple { tuple });
    }
    let model = match &config.init {
        InitScheme::Random => init_model(marginals.cardinalities(), config.rank, config.seed)?,
        InitScheme::Given(m) => {
            if m.cardinalities() != marginals.cardinalities() {
                return Err(Error::Dimension("initial model does not match marginals".into()));
            }
            m.validate(PMF_TOL)?;
            m.clone()
        }
    };
    let mut state = SolverState::new(model);
    let initial = marginal_residual(&state.model, marginals)?;
    check_objective(initial, 0)?;
    state.objective_trace.push(initial);

    let floor = EXACT_FIT_RTOL
        * 0.5
        * marginals.iter().map(|(_, m)| m.tensor.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>();
    let n_vars = marginals.n_vars();
    for cycle in 1..=config.max_cycles {
        let mut grams = terms::factor_grams(&state.model);
        for n in 0..n_vars {
            let g = terms::gi_from_grams(marginals, state.model.weights(), &grams, n);
            let v = terms::vi_unchecked(marginals, &state.model, n);
            factor_update_with(&g, &v, &mut state, n, config)?;
            let a = state.model.factor(n);
            grams[n] = a.tr_mul(a);
        }
        let g = terms::lambda_gram_from_grams(marginals, config.rank, &grams);
        let v = lambda_rhs(marginals, &state.model);
        lambda_update_with(&g, &v, &mut state, config)?;
        state.model.validate(PMF_TOL).map_err(|e| {
            Error::Numerical(format!("model left the feasible set in cycle {cycle}: {e}"))
        })?;

        let objective = marginal_residual(&state.model, marginals)?;
        check_objective(objective, cycle)?;
        let previous = *state.objective_trace.last().expect("trace starts non-empty");
        state.objective_trace.push(objective);
        state.cycles = cycle;
        observer(&CycleReport { cycle, objective, model: &state.model });

        if objective <= floor {
            state.termination = Some(Termination::ExactFit);
            return Ok(state);
        }
        if (previous - objective).abs() <= config.outer_tol * previous {
            state.termination = Some(Termination::Converged);
            return Ok(state);
        }
    }
    state.termination = Some(Termination::MaxCycles);
    Ok(state)
}

fn check_objective(value: f64, cycle: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("objective became {value} in cycle {cycle}")))
    }
}
