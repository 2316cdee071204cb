//! Fully resolved commands. A job holds every parameter that affects its
//! outputs, so a manifest that stores one can replay the run.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pmfcpd::dataset::parse_table;
use pmfcpd::experiments::synthetic::write_results;
use pmfcpd::experiments::{
    evaluate, rank_sweep, run_table, split_dataset, BmfConfig, CpdPredictorConfig, Method, SplitSpec,
    SyntheticSpec,
};
use pmfcpd::solver::fit_with_observer;
use pmfcpd::{
    estimate_marginals, predict_queries, CpdModel, InitScheme, MarginalSet, RatingsDataset, RhoPolicy,
    SolverConfig, ValueMap,
};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub rank: usize,
    pub max_cycles: usize,
    pub admm_iters: usize,
    pub admm_tol: f64,
    /// `auto` or a positive number.
    pub rho: String,
    pub outer_tol: f64,
    pub seed: u64,
}

impl SolverSettings {
    pub fn to_config(&self) -> Result<SolverConfig, Failure> {
        let rho = parse_rho(&self.rho)?;
        let mut config = SolverConfig::new(self.rank);
        config.max_cycles = self.max_cycles;
        config.admm_max_iters = self.admm_iters;
        config.admm_tol = self.admm_tol;
        config.rho = rho;
        config.outer_tol = self.outer_tol;
        config.seed = self.seed;
        config.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(config)
    }
}

pub fn parse_rho(s: &str) -> Result<RhoPolicy, Failure> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(RhoPolicy::Auto);
    }
    match s.parse::<f64>() {
        Ok(r) if r > 0.0 && r.is_finite() => Ok(RhoPolicy::Fixed(r)),
        _ => Err(Failure::usage(format!("--rho must be 'auto' or a positive number, got {s:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Estimate(EstimateJob),
    Fit(FitJob),
    Predict(PredictJob),
    Synth(SynthJob),
    Evaluate(EvaluateJob),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateJob {
    pub data: PathBuf,
    pub delimiter: char,
    pub cardinalities: Option<Vec<usize>>,
    pub order: usize,
    pub alpha: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitJob {
    pub marginals: PathBuf,
    pub solver: SolverSettings,
    pub init: Option<PathBuf>,
    pub log_every: usize,
    pub out: PathBuf,
    pub trace: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictJob {
    pub model: PathBuf,
    pub queries: PathBuf,
    pub delimiter: char,
    pub scale: f64,
    pub offset: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthJob {
    pub table: u8,
    pub n_vars: usize,
    pub cardinality: usize,
    pub rank_true: usize,
    pub orders: Vec<usize>,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub solver: SolverSettings,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateJob {
    pub data: PathBuf,
    pub delimiter: char,
    pub split_seed: u64,
    pub splits: usize,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub methods: Vec<String>,
    pub alpha: f64,
    pub bmf_rank: usize,
    pub scale: f64,
    pub offset: f64,
    pub sweep_ranks: Vec<usize>,
    pub solver: SolverSettings,
    pub out: PathBuf,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Estimate(_) => "estimate",
            Job::Fit(_) => "fit",
            Job::Predict(_) => "predict",
            Job::Synth(_) => "synth",
            Job::Evaluate(_) => "evaluate",
        }
    }

    /// Files the job writes, primary output first.
    pub fn outputs(&self) -> Vec<PathBuf> {
        match self {
            Job::Estimate(j) => vec![j.out.clone()],
            Job::Fit(j) => vec![j.out.clone(), j.trace.clone()],
            Job::Predict(j) => vec![j.out.clone()],
            Job::Synth(j) => vec![j.out.clone()],
            Job::Evaluate(j) if !j.sweep_ranks.is_empty() => vec![j.out.clone(), sweep_path(&j.out)],
            Job::Evaluate(j) => vec![j.out.clone()],
        }
    }

    /// Rewrites every path as absolute so the manifest can be replayed from
    /// any working directory.
    pub fn absolutize(&mut self) -> Result<(), Failure> {
        let abs = |p: &mut PathBuf| -> Result<(), Failure> {
            *p = std::path::absolute(&*p)?;
            Ok(())
        };
        match self {
            Job::Estimate(j) => {
                abs(&mut j.data)?;
                abs(&mut j.out)
            }
            Job::Fit(j) => {
                abs(&mut j.marginals)?;
                if let Some(init) = &mut j.init {
                    abs(init)?;
                }
                abs(&mut j.out)?;
                abs(&mut j.trace)
            }
            Job::Predict(j) => {
                abs(&mut j.model)?;
                abs(&mut j.queries)?;
                abs(&mut j.out)
            }
            Job::Synth(j) => abs(&mut j.out),
            Job::Evaluate(j) => {
                abs(&mut j.data)?;
                abs(&mut j.out)
            }
        }
    }

    /// Moves every output into `dir`, keeping file names.
    pub fn redirect_outputs(&mut self, dir: &Path) {
        let moved = |p: &mut PathBuf| {
            if let Some(name) = p.file_name() {
                *p = dir.join(name);
            }
        };
        match self {
            Job::Estimate(j) => moved(&mut j.out),
            Job::Fit(j) => {
                moved(&mut j.out);
                moved(&mut j.trace);
            }
            Job::Predict(j) => moved(&mut j.out),
            Job::Synth(j) => moved(&mut j.out),
            Job::Evaluate(j) => moved(&mut j.out),
        }
    }

    pub fn run(&self) -> Result<(), Failure> {
        match self {
            Job::Estimate(j) => run_estimate(j),
            Job::Fit(j) => run_fit(j),
            Job::Predict(j) => run_predict(j),
            Job::Synth(j) => run_synth(j),
            Job::Evaluate(j) => run_evaluate(j),
        }
    }
}

fn delimiter_byte(c: char) -> Result<u8, Failure> {
    u8::try_from(c).map_err(|_| Failure::usage(format!("delimiter {c:?} is not a single-byte character")))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", path.display())))
}

fn read_data(path: &Path, delimiter: char, cards: Option<Vec<usize>>) -> Result<RatingsDataset, Failure> {
    Ok(RatingsDataset::read_csv(path, delimiter_byte(delimiter)?, cards)?)
}

fn run_estimate(job: &EstimateJob) -> Result<(), Failure> {
    let data = read_data(&job.data, job.delimiter, job.cardinalities.clone())?;
    if job.order > data.n_vars() {
        return Err(Failure::usage(format!(
            "order {} exceeds the {} variables in {}",
            job.order,
            data.n_vars(),
            job.data.display()
        )));
    }
    let marginals = estimate_marginals(&data, job.order, job.alpha)?;
    marginals.save(&job.out)?;
    Ok(())
}

fn run_fit(job: &FitJob) -> Result<(), Failure> {
    let marginals = MarginalSet::load(&job.marginals)?;
    let mut config = job.solver.to_config()?;
    if let Some(init) = &job.init {
        config.init = InitScheme::Given(CpdModel::load(init)?);
    }
    let every = job.log_every;
    let state = fit_with_observer(&marginals, &config, |r| {
        if every > 0 && r.cycle % every == 0 {
            eprintln!("cycle {:>6}  objective {:.6e}", r.cycle, r.objective);
        }
    })?;
    state.model.save(&job.out)?;
    let mut w = create(&job.trace)?;
    writeln!(w, "cycle,objective")?;
    for (k, f) in state.objective_trace.iter().enumerate() {
        writeln!(w, "{k},{f:e}")?;
    }
    w.flush()?;
    eprintln!(
        "fit: {} cycles, objective {:.6e}, {:?}",
        state.cycles,
        state.objective().unwrap_or(f64::NAN),
        state.termination.expect("fit sets a termination")
    );
    Ok(())
}

fn run_predict(job: &PredictJob) -> Result<(), Failure> {
    let model = CpdModel::load(&job.model)?;
    let file = File::open(&job.queries)
        .map_err(|e| Failure::data(format!("cannot open {}: {e}", job.queries.display())))?;
    let (names, rows) = parse_table(file, delimiter_byte(job.delimiter)?, &job.queries.display().to_string(), true)?;
    if names.len() != model.ndim() {
        return Err(Failure::data(format!(
            "{} has {} columns, the model has {} variables",
            job.queries.display(),
            names.len(),
            model.ndim()
        )));
    }
    let values: Vec<ValueMap> =
        model.cardinalities().iter().map(|&c| ValueMap::affine(c, job.scale, job.offset)).collect();
    let predictions = predict_queries(&model, &rows, &values)?;
    let mut w = create(&job.out)?;
    writeln!(w, "row,variable,expectation,map_code,zero_evidence")?;
    for p in &predictions {
        writeln!(
            w,
            "{},{},{:.17e},{},{}",
            p.row + 1,
            names[p.var],
            p.expectation,
            p.map_code + 1,
            p.zero_evidence
        )?;
    }
    w.flush()?;
    let fallbacks = predictions.iter().filter(|p| p.zero_evidence).count();
    if fallbacks > 0 {
        eprintln!("warning: {fallbacks} predictions fell back to the prior (zero-probability evidence)");
    }
    Ok(())
}

fn run_synth(job: &SynthJob) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        cardinalities: vec![job.cardinality; job.n_vars],
        rank: job.rank_true,
        noise_sigma: job.sigma,
        trials: job.trials,
        seed: job.seed,
    };
    spec.validate().map_err(|e| Failure::usage(e.to_string()))?;
    let base = job.solver.to_config()?;
    let mut tables = Vec::new();
    for &order in &job.orders {
        if order > job.n_vars {
            return Err(Failure::usage(format!("order {order} exceeds {} variables", job.n_vars)));
        }
        let t = run_table(&spec, order, job.solver.rank, &base)?;
        eprintln!(
            "table {} order {order} F={}: mean MRE_fact {} mean MRE_ten {:.3e} (median {:.3e})",
            job.table,
            job.solver.rank,
            t.mean_mre_fact().map_or("NA".into(), |v| format!("{v:.3e}")),
            t.mean_mre_ten(),
            t.median_mre_ten()
        );
        tables.push(t);
    }
    write_results(&tables, create(&job.out)?)?;
    Ok(())
}

fn sweep_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".sweep.csv");
    out.with_file_name(name)
}

pub fn parse_method(name: &str, job: &EvaluateJob, solver: &SolverConfig) -> Result<Method, Failure> {
    let cpd = |order| {
        let mut c = CpdPredictorConfig::new(order, solver.rank);
        c.alpha = job.alpha;
        c.solver = solver.clone();
        Method::Cpd(c)
    };
    Ok(match name {
        "global" => Method::GlobalAverage,
        "user" => Method::UserAverage,
        "item" => Method::ItemAverage,
        "bmf" => Method::Bmf(BmfConfig { rank: job.bmf_rank, seed: job.split_seed, ..BmfConfig::default() }),
        "pairs" => cpd(2),
        "triples" => cpd(3),
        "quadruples" => cpd(4),
        other => {
            return Err(Failure::usage(format!(
                "unknown method {other:?}; expected global, user, item, bmf, pairs, triples or quadruples"
            )))
        }
    })
}

fn run_evaluate(job: &EvaluateJob) -> Result<(), Failure> {
    let data = read_data(&job.data, job.delimiter, None)?;
    let solver = job.solver.to_config()?;
    let methods = job.methods.iter().map(|m| parse_method(m, job, &solver)).collect::<Result<Vec<_>, _>>()?;
    let values: Vec<ValueMap> =
        data.cardinalities().iter().map(|&c| ValueMap::affine(c, job.scale, job.offset)).collect();
    let mut w = create(&job.out)?;
    writeln!(w, "split,method,rmse,mae,validation_rmse")?;
    let mut sweep_rows = Vec::new();
    for s in 0..job.splits {
        let spec = SplitSpec {
            test_fraction: job.test_fraction,
            validation_fraction: job.validation_fraction,
            seed: job.split_seed.wrapping_add(s as u64),
        };
        let split = split_dataset(&data, &spec)?;
        for score in evaluate(&split, &values, &methods)? {
            let val = score.validation_rmse.map_or("NA".into(), |v| format!("{v:.6}"));
            writeln!(w, "{s},{},{:.6},{:.6},{val}", score.method, score.rmse, score.mae)?;
            eprintln!("split {s}: {:<22} RMSE {:.4}  MAE {:.4}", score.method, score.rmse, score.mae);
        }
        if !job.sweep_ranks.is_empty() {
            let mut base = CpdPredictorConfig::new(3, solver.rank);
            base.alpha = job.alpha;
            base.solver = solver.clone();
            for p in rank_sweep(&split, &values, &base, &job.sweep_ranks)? {
                sweep_rows.push((s, p));
            }
        }
    }
    w.flush()?;
    if !job.sweep_ranks.is_empty() {
        let mut sw = create(&sweep_path(&job.out))?;
        writeln!(sw, "split,rank,validation_rmse,test_rmse")?;
        for (s, p) in sweep_rows {
            writeln!(sw, "{s},{},{:.6},{:.6}", p.rank, p.validation_rmse, p.test_rmse)?;
        }
        sw.flush()?;
    }
    Ok(())
}
