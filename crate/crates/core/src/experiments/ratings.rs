//! Rating prediction: held-out splits, baselines, biased matrix
//! factorization and the marginal-fitting predictor.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::RatingsDataset;
use crate::error::{Error, Result};
use crate::inference::{conditional_pmf, Evidence, ValueMap};
use crate::marginals::estimate_marginals;
use crate::model::CpdModel;
use crate::rng::{streams, substream};
use crate::solver::{fit_with_observer, SolverConfig};

use super::metrics::{mae, rmse};

/// A held-out cell: `(row, variable, code)`.
pub type CellRef = (usize, usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self { test_fraction: 0.2, validation_fraction: 0.1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| (0.0..1.0).contains(&f);
        if !ok(self.test_fraction)
            || !ok(self.validation_fraction)
            || self.test_fraction + self.validation_fraction >= 1.0
        {
            return Err(Error::InvalidInput(format!(
                "split fractions {} / {} must lie in [0,1) and sum below 1",
                self.test_fraction, self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: RatingsDataset,
    pub validation: Vec<CellRef>,
    pub test: Vec<CellRef>,
}

/// Hides `⌊test·n⌋` and `⌊validation·n⌋` of the `n` observed cells, chosen
/// uniformly at random. Held-out lists are sorted row-major.
pub fn split_dataset(data: &RatingsDataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut cells: Vec<CellRef> = data.observed_cells().collect();
    let n = cells.len();
    let n_test = (spec.test_fraction * n as f64).floor() as usize;
    let n_val = (spec.validation_fraction * n as f64).floor() as usize;
    if n == 0 || n_test + n_val >= n {
        return Err(Error::InvalidInput(format!(
            "{n} observed cells are too few for the requested split"
        )));
    }
    let mut rng = substream(spec.seed, streams::SPLIT, 0);
    cells.shuffle(&mut rng);
    let mut test = cells[..n_test].to_vec();
    let mut validation = cells[n_test..n_test + n_val].to_vec();
    let mut train: Vec<(usize, usize)> = cells[n_test + n_val..].iter().map(|&(r, v, _)| (r, v)).collect();
    test.sort_unstable();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(Split { train: data.restrict_to(&train), validation, test })
}

/// Draws `rows` samples from the model and hides each cell independently
/// with probability `missing`.
pub fn sample_ratings<R: Rng>(model: &CpdModel, rows: usize, missing: f64, rng: &mut R) -> Result<RatingsDataset> {
    if !(0.0..1.0).contains(&missing) {
        return Err(Error::InvalidInput(format!("missing fraction {missing} not in [0,1)")));
    }
    let latent = WeightedIndex::new(model.weights()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let columns = model
        .factors()
        .iter()
        .map(|a| {
            (0..model.rank())
                .map(|f| WeightedIndex::new(a.column(f).iter().copied()).map_err(|e| Error::InvalidInput(e.to_string())))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let data = (0..rows)
        .map(|_| {
            let h = latent.sample(rng);
            columns
                .iter()
                .map(|per_state| {
                    let code = per_state[h].sample(rng);
                    (rng.random::<f64>() >= missing).then_some(code)
                })
                .collect()
        })
        .collect();
    RatingsDataset::new(model.cardinalities(), data)
}

fn check_values(data: &RatingsDataset, values: &[ValueMap]) -> Result<()> {
    if values.len() != data.n_vars()
        || values.iter().zip(data.cardinalities()).any(|(v, &c)| v.len() != c)
    {
        return Err(Error::InvalidInput("value maps must cover every code of every variable".into()));
    }
    Ok(())
}

/// Smallest and largest rating any code can map to.
pub fn rating_range(values: &[ValueMap]) -> (f64, f64) {
    values
        .iter()
        .flat_map(|v| v.values().iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Global, per-row (user) and per-variable (item) means of the training
/// ratings. Rows or variables without training ratings fall back to the
/// global mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Averages {
    pub global: f64,
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

impl Averages {
    pub fn fit(train: &RatingsDataset, values: &[ValueMap]) -> Result<Self> {
        check_values(train, values)?;
        let mut total = (0.0, 0usize);
        let mut user = vec![(0.0, 0usize); train.n_rows()];
        let mut item = vec![(0.0, 0usize); train.n_vars()];
        for (r, n, c) in train.observed_cells() {
            let x = values[n].value(c);
            for acc in [&mut total, &mut user[r], &mut item[n]] {
                acc.0 += x;
                acc.1 += 1;
            }
        }
        if total.1 == 0 {
            return Err(Error::InvalidInput("no training ratings".into()));
        }
        let global = total.0 / total.1 as f64;
        let avg = |(s, k): (f64, usize)| if k == 0 { global } else { s / k as f64 };
        Ok(Self {
            global,
            user: user.into_iter().map(avg).collect(),
            item: item.into_iter().map(avg).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BmfConfig {
    /// Latent dimension; `0` leaves only the biases.
    pub rank: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    /// Learning rate multiplier applied after every epoch.
    pub decay: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for BmfConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            learning_rate: 0.01,
            regularization: 0.05,
            decay: 0.98,
            max_epochs: 200,
            patience: 10,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// `r̂(u, i) = μ + b_u + b_i + p_uᵀ q_i`, clipped to the rating range.
#[derive(Debug, Clone, PartialEq)]
pub struct BmfModel {
    pub mu: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub user_factors: Vec<Vec<f64>>,
    pub item_factors: Vec<Vec<f64>>,
    pub range: (f64, f64),
    pub epochs: usize,
    /// Training RMSE after each epoch.
    pub train_trace: Vec<f64>,
}

impl BmfModel {
    pub fn predict(&self, row: usize, var: usize) -> f64 {
        self.raw(row, var).clamp(self.range.0, self.range.1)
    }

    fn raw(&self, row: usize, var: usize) -> f64 {
        let dot: f64 = self.user_factors[row].iter().zip(&self.item_factors[var]).map(|(p, q)| p * q).sum();
        self.mu + self.user_bias[row] + self.item_bias[var] + dot
    }
}

/// Fits [`BmfModel`] by stochastic gradient descent over the training
/// ratings (shuffled every epoch), keeping the epoch with the best
/// validation RMSE when validation cells are given.
pub fn bmf_fit(
    train: &RatingsDataset,
    validation: &[CellRef],
    values: &[ValueMap],
    config: &BmfConfig,
) -> Result<BmfModel> {
    check_values(train, values)?;
    let mut cells: Vec<(usize, usize, f64)> =
        train.observed_cells().map(|(r, n, c)| (r, n, values[n].value(c))).collect();
    if cells.is_empty() {
        return Err(Error::InvalidInput("BMF needs at least one training rating".into()));
    }
    let mut rng = substream(config.seed, streams::BMF, 0);
    let init = Normal::new(0.0, config.init_scale).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let k = config.rank;
    let mut model = BmfModel {
        mu: cells.iter().map(|c| c.2).sum::<f64>() / cells.len() as f64,
        user_bias: vec![0.0; train.n_rows()],
        item_bias: vec![0.0; train.n_vars()],
        user_factors: (0..train.n_rows()).map(|_| (0..k).map(|_| init.sample(&mut rng)).collect()).collect(),
        item_factors: (0..train.n_vars()).map(|_| (0..k).map(|_| init.sample(&mut rng)).collect()).collect(),
        range: rating_range(values),
        epochs: 0,
        train_trace: Vec::new(),
    };
    let truth: Vec<f64> = validation.iter().map(|&(_, n, c)| values[n].value(c)).collect();
    let score = |m: &BmfModel| -> Result<f64> {
        let pred: Vec<f64> = validation.iter().map(|&(r, n, _)| m.predict(r, n)).collect();
        rmse(&pred, &truth)
    };
    let mut best = if validation.is_empty() { None } else { Some((score(&model)?, model.clone())) };
    let mut stale = 0;
    let (reg, mut lr) = (config.regularization, config.learning_rate);
    for epoch in 1..=config.max_epochs {
        cells.shuffle(&mut rng);
        for &(u, i, x) in &cells {
            let err = x - model.raw(u, i);
            model.user_bias[u] += lr * (err - reg * model.user_bias[u]);
            model.item_bias[i] += lr * (err - reg * model.item_bias[i]);
            for f in 0..k {
                let p = model.user_factors[u][f];
                let q = model.item_factors[i][f];
                model.user_factors[u][f] += lr * (err * q - reg * p);
                model.item_factors[i][f] += lr * (err * p - reg * q);
            }
        }
        lr *= config.decay;
        model.epochs = epoch;
        let sse: f64 = cells.iter().map(|&(u, i, x)| (x - model.raw(u, i)).powi(2)).sum();
        model.train_trace.push((sse / cells.len() as f64).sqrt());
        if !model.train_trace.last().unwrap().is_finite() {
            return Err(Error::Numerical(format!("BMF diverged in epoch {epoch}")));
        }
        if let Some((best_score, best_model)) = &mut best {
            let s = score(&model)?;
            if s < *best_score {
                *best_score = s;
                *best_model = model.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    Ok(match best {
        Some((_, mut m)) => {
            m.train_trace = model.train_trace;
            m
        }
        None => model,
    })
}

/// Conditional expectation of `(row, var)` given the row's other training
/// ratings. The flag reports a fallback to the prior.
pub fn cpd_predict(model: &CpdModel, train: &RatingsDataset, values: &[ValueMap], row: usize, var: usize) -> Result<(f64, bool)> {
    let evidence = Evidence::from_row(model, &train.rows()[row], Some(var))?;
    let cond = conditional_pmf(model, &evidence, var)?;
    let e = cond.pmf.iter().zip(values[var].values()).map(|(p, v)| p * v).sum();
    Ok((e, cond.zero_evidence))
}

fn cpd_predict_cells(model: &CpdModel, train: &RatingsDataset, values: &[ValueMap], cells: &[CellRef]) -> Result<Vec<f64>> {
    cells
        .par_iter()
        .map(|&(r, n, _)| cpd_predict(model, train, values, r, n).map(|p| p.0))
        .collect()
}

fn cell_truth(values: &[ValueMap], cells: &[CellRef]) -> Vec<f64> {
    cells.iter().map(|&(_, n, c)| values[n].value(c)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpdPredictorConfig {
    pub order: usize,
    /// Additive smoothing for the estimated marginals.
    pub alpha: f64,
    pub solver: SolverConfig,
    /// Validation RMSE is computed every this many cycles (and after the
    /// last one).
    pub eval_every: usize,
}

impl CpdPredictorConfig {
    pub fn new(order: usize, rank: usize) -> Self {
        Self { order, alpha: 0.1, solver: SolverConfig { max_cycles: 300, ..SolverConfig::new(rank) }, eval_every: 10 }
    }
}

#[derive(Debug, Clone)]
pub struct CpdPredictor {
    pub model: CpdModel,
    /// `(cycle, validation RMSE)` at every evaluation.
    pub validation_trace: Vec<(usize, f64)>,
    pub best_cycle: usize,
    pub objective_trace: Vec<f64>,
}

/// Estimates marginals from `train`, fits the model and returns the iterate
/// with the best validation RMSE (the final one if `validation` is empty).
pub fn cpd_fit_predictor(
    train: &RatingsDataset,
    validation: &[CellRef],
    values: &[ValueMap],
    config: &CpdPredictorConfig,
) -> Result<CpdPredictor> {
    check_values(train, values)?;
    let eval_every = config.eval_every.max(1);
    let marginals = estimate_marginals(train, config.order, config.alpha)?;
    let truth = cell_truth(values, validation);
    let last = config.solver.max_cycles;
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, CpdModel)> = None;
    let mut failure = None;
    let state = fit_with_observer(&marginals, &config.solver, |report| {
        if validation.is_empty() || failure.is_some() || (report.cycle % eval_every != 0 && report.cycle != last) {
            return;
        }
        let score = cpd_predict_cells(report.model, train, values, validation).and_then(|p| rmse(&p, &truth));
        match score {
            Ok(s) => {
                trace.push((report.cycle, s));
                if best.as_ref().map_or(true, |b| s < b.0) {
                    best = Some((s, report.cycle, report.model.clone()));
                }
            }
            Err(e) => failure = Some(e),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    // the run may stop early between evaluations; score its final iterate too
    if !validation.is_empty() && trace.last().map(|t| t.0) != Some(state.cycles) {
        let s = rmse(&cpd_predict_cells(&state.model, train, values, validation)?, &truth)?;
        trace.push((state.cycles, s));
        if best.as_ref().map_or(true, |b| s < b.0) {
            best = Some((s, state.cycles, state.model.clone()));
        }
    }
    let (model, best_cycle) = match best {
        Some((_, c, m)) => (m, c),
        None => (state.model, state.cycles),
    };
    Ok(CpdPredictor { model, validation_trace: trace, best_cycle, objective_trace: state.objective_trace })
}

/// A method compared by [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    GlobalAverage,
    UserAverage,
    ItemAverage,
    Bmf(BmfConfig),
    Cpd(CpdPredictorConfig),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::GlobalAverage => "global-average".into(),
            Method::UserAverage => "user-average".into(),
            Method::ItemAverage => "item-average".into(),
            Method::Bmf(c) => format!("bmf-r{}", c.rank),
            Method::Cpd(c) => format!("cpd-{}-r{}", order_name(c.order), c.solver.rank),
        }
    }
}

fn order_name(order: usize) -> String {
    match order {
        2 => "pairs".into(),
        3 => "triples".into(),
        4 => "quadruples".into(),
        m => format!("order{m}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScore {
    pub method: String,
    pub rmse: f64,
    pub mae: f64,
    pub validation_rmse: Option<f64>,
}

/// Predictions of one method for the given cells.
pub fn method_predictions(method: &Method, split: &Split, values: &[ValueMap], cells: &[CellRef]) -> Result<Vec<f64>> {
    let train = &split.train;
    Ok(match method {
        Method::GlobalAverage => {
            let a = Averages::fit(train, values)?;
            vec![a.global; cells.len()]
        }
        Method::UserAverage => {
            let a = Averages::fit(train, values)?;
            cells.iter().map(|&(r, _, _)| a.user[r]).collect()
        }
        Method::ItemAverage => {
            let a = Averages::fit(train, values)?;
            cells.iter().map(|&(_, n, _)| a.item[n]).collect()
        }
        Method::Bmf(c) => {
            let m = bmf_fit(train, &split.validation, values, c)?;
            cells.iter().map(|&(r, n, _)| m.predict(r, n)).collect()
        }
        Method::Cpd(c) => {
            let p = cpd_fit_predictor(train, &split.validation, values, c)?;
            cpd_predict_cells(&p.model, train, values, cells)?
        }
    })
}

/// Test RMSE and MAE of every method on one split.
pub fn evaluate(split: &Split, values: &[ValueMap], methods: &[Method]) -> Result<Vec<MethodScore>> {
    let truth = cell_truth(values, &split.test);
    let val_truth = cell_truth(values, &split.validation);
    methods
        .iter()
        .map(|m| {
            let mut cells = split.test.clone();
            cells.extend_from_slice(&split.validation);
            let pred = method_predictions(m, split, values, &cells)?;
            let (test_pred, val_pred) = pred.split_at(split.test.len());
            Ok(MethodScore {
                method: m.name(),
                rmse: rmse(test_pred, &truth)?,
                mae: mae(test_pred, &truth)?,
                validation_rmse: (!val_pred.is_empty()).then(|| rmse(val_pred, &val_truth)).transpose()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub rank: usize,
    pub validation_rmse: f64,
    pub test_rmse: f64,
}

/// Validation and test RMSE of the marginal-fitting predictor for each rank.
pub fn rank_sweep(split: &Split, values: &[ValueMap], base: &CpdPredictorConfig, ranks: &[usize]) -> Result<Vec<SweepPoint>> {
    if split.validation.is_empty() {
        return Err(Error::InvalidInput("a rank sweep needs validation cells".into()));
    }
    ranks
        .iter()
        .map(|&rank| {
            let mut config = base.clone();
            config.solver.rank = rank;
            let scores = evaluate(split, values, &[Method::Cpd(config)])?;
            Ok(SweepPoint {
                rank,
                validation_rmse: scores[0].validation_rmse.unwrap_or(f64::NAN),
                test_rmse: scores[0].rmse,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::init_model;

    fn identity_values(data: &RatingsDataset) -> Vec<ValueMap> {
        data.cardinalities().iter().map(|&c| ValueMap::identity(c)).collect()
    }

    fn table() -> RatingsDataset {
        let rows = (0..20)
            .map(|r| (0..4).map(|n| ((r + n) % 3 != 0).then_some((r * 7 + n) % 5)).collect())
            .collect();
        RatingsDataset::new(vec![5; 4], rows).unwrap()
    }

    #[test]
    fn split_partitions_observed_cells() {
        let data = table();
        let s = split_dataset(&data, &SplitSpec::new(4)).unwrap();
        let n = data.n_observed();
        assert_eq!(s.test.len(), (0.2 * n as f64).floor() as usize);
        assert_eq!(s.validation.len(), (0.1 * n as f64).floor() as usize);
        let mut all: Vec<CellRef> = s.train.observed_cells().chain(s.test.clone()).chain(s.validation.clone()).collect();
        all.sort_unstable();
        let mut expected: Vec<CellRef> = data.observed_cells().collect();
        expected.sort_unstable();
        assert_eq!(all, expected);
        let again = split_dataset(&data, &SplitSpec::new(4)).unwrap();
        assert_eq!(again.test, s.test);
        assert_eq!(again.train, s.train);
    }

    #[test]
    fn empty_split_keeps_everything() {
        let data = table();
        let spec = SplitSpec { test_fraction: 0.0, validation_fraction: 0.0, seed: 1 };
        let s = split_dataset(&data, &spec).unwrap();
        assert_eq!(s.train, data);
        assert!(s.test.is_empty() && s.validation.is_empty());
    }

    #[test]
    fn bad_fractions_rejected() {
        let spec = SplitSpec { test_fraction: 0.6, validation_fraction: 0.4, seed: 1 };
        assert!(split_dataset(&table(), &spec).is_err());
    }

    #[test]
    fn averages_by_hand() {
        // codes 0-based; identity values map code c to c + 1
        let data = RatingsDataset::new(vec![5, 5], vec![vec![Some(0), Some(2)], vec![Some(4), None]]).unwrap();
        let a = Averages::fit(&data, &identity_values(&data)).unwrap();
        assert!((a.global - 3.0).abs() < 1e-15);
        assert_eq!(a.user, vec![2.0, 5.0]);
        assert_eq!(a.item, vec![3.0, 3.0]);
    }

    #[test]
    fn cold_rows_fall_back_to_global() {
        let data = RatingsDataset::new(vec![5, 5], vec![vec![Some(3), None], vec![None, None]]).unwrap();
        let a = Averages::fit(&data, &identity_values(&data)).unwrap();
        assert_eq!((a.global, a.user[1], a.item[1]), (4.0, 4.0, 4.0));
    }

    #[test]
    fn rank_zero_bmf_on_constant_table() {
        let data = RatingsDataset::new(vec![5; 3], vec![vec![Some(2); 3]; 6]).unwrap();
        let config = BmfConfig { rank: 0, max_epochs: 30, ..BmfConfig::default() };
        let m = bmf_fit(&data, &[], &identity_values(&data), &config).unwrap();
        assert!((m.predict(4, 1) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bmf_training_error_decreases() {
        let data = table();
        let config = BmfConfig { rank: 2, learning_rate: 0.005, decay: 1.0, max_epochs: 40, ..BmfConfig::default() };
        let m = bmf_fit(&data, &[], &identity_values(&data), &config).unwrap();
        assert!(m.train_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{:?}", m.train_trace);
    }

    #[test]
    fn bmf_beats_global_average_on_rank_one_table() {
        let u: Vec<f64> = (0..60).map(|r| 0.6 + 0.02 * r as f64).collect();
        let v = [1.0, 1.5, 2.0, 2.5, 3.0, 2.2];
        let rows = u
            .iter()
            .map(|&a| v.iter().map(|&b| Some(((a * b).round() as usize).clamp(1, 10) - 1)).collect())
            .collect();
        let data = RatingsDataset::new(vec![10; 6], rows).unwrap();
        let values = identity_values(&data);
        let split = split_dataset(&data, &SplitSpec::new(2)).unwrap();
        let scores = evaluate(
            &split,
            &values,
            &[Method::GlobalAverage, Method::Bmf(BmfConfig { rank: 1, ..BmfConfig::default() })],
        )
        .unwrap();
        assert!(scores[1].rmse < scores[0].rmse, "{scores:?}");
    }

    #[test]
    fn sampled_table_shape() {
        let model = init_model(&[3, 4, 2], 2, 1).unwrap();
        let mut rng = substream(1, streams::SAMPLE, 0);
        let data = sample_ratings(&model, 400, 0.5, &mut rng).unwrap();
        assert_eq!((data.n_rows(), data.n_vars()), (400, 3));
        let frac = data.n_observed() as f64 / 1200.0;
        assert!((frac - 0.5).abs() < 0.06, "{frac}");
    }

    #[test]
    fn cpd_predictor_tracks_best_validation() {
        let truth = init_model(&[4; 5], 2, 3).unwrap();
        let mut rng = substream(3, streams::SAMPLE, 0);
        let data = sample_ratings(&truth, 600, 0.2, &mut rng).unwrap();
        let split = split_dataset(&data, &SplitSpec::new(3)).unwrap();
        let values = identity_values(&data);
        let mut config = CpdPredictorConfig::new(3, 2);
        config.solver.max_cycles = 35;
        let p = cpd_fit_predictor(&split.train, &split.validation, &values, &config).unwrap();
        let cycles: Vec<usize> = p.validation_trace.iter().map(|t| t.0).collect();
        assert_eq!(cycles, vec![10, 20, 30, 35]);
        let best = p.validation_trace.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        assert_eq!(p.validation_trace.iter().find(|t| t.0 == p.best_cycle).unwrap().1, best);
    }
}
