//! Command-line front end: estimate marginals, fit models, answer queries
//! and run the evaluation experiments. Every run writes a JSON manifest next
//! to its primary output; `replay` re-executes one.

mod config;
mod jobs;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::ConfigFile;
use jobs::{EstimateJob, EvaluateJob, FitJob, Job, PredictJob, SolverSettings, SynthJob};
use manifest::Manifest;

/// A failed run and its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub const USAGE: u8 = 2;
    pub const DATA: u8 = 3;
    pub const NUMERICAL: u8 = 4;

    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: Self::USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: Self::DATA, message: message.into() }
    }
}

impl From<pmfcpd::Error> for Failure {
    fn from(e: pmfcpd::Error) -> Self {
        let code = if e.is_data_error() { Self::DATA } else { Self::NUMERICAL };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "pmfcpd", version, about = "Joint PMF estimation from low-order marginals")]
struct Cli {
    /// TOML file with defaults for solver and data settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run on a single thread so that every reduction has a fixed order.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate order-m marginals from a ratings table.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
        order: Option<u8>,
        /// Additive smoothing per cell.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delimiter: Option<char>,
        /// Comma-separated cardinalities (default: largest observed code).
        #[arg(long, value_delimiter = ',')]
        cardinalities: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model to a marginal file.
    Fit {
        #[arg(long)]
        marginals: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Start from this model instead of a random one.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Log the objective every this many cycles (0 disables).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
        #[arg(long)]
        out: PathBuf,
        /// Objective trace (default: <out>.trace.csv).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Answer the `?` cells of a query table.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        delimiter: Option<char>,
        /// Code c maps to offset + scale * c.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recovery experiments on synthetic models (table 1 noiseless, table 2 noisy).
    Synth {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        table: u8,
        /// Marginal order; all of 2, 3 and 4 when omitted.
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=4))]
        order: Option<u8>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 5)]
        vars: usize,
        #[arg(long, default_value_t = 10)]
        card: usize,
        /// Rank of the generating models (default: the fitted rank).
        #[arg(long)]
        rank_true: Option<usize>,
        /// Noise level (default 0 for table 1, 1e-6 for table 2).
        #[arg(long)]
        sigma: Option<f64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare rating predictors on held-out cells.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        delimiter: Option<char>,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Number of splits; split k uses seed split_seed + k.
        #[arg(long, default_value_t = 1)]
        splits: usize,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        validation_fraction: f64,
        #[arg(long, value_delimiter = ',', default_value = "global,user,item,bmf,pairs,triples,quadruples")]
        methods: Vec<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 10)]
        bmf_rank: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
        /// Also write validation/test RMSE of the triples predictor for each rank.
        #[arg(long, value_delimiter = ',')]
        sweep_ranks: Vec<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the job recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Write outputs here instead of their recorded locations.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    max_cycles: Option<usize>,
    #[arg(long)]
    admm_iters: Option<usize>,
    #[arg(long)]
    admm_tol: Option<f64>,
    /// `auto` or a positive penalty.
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    outer_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SolverArgs {
    fn resolve(self, cfg: &ConfigFile, default_rank: Option<usize>) -> Result<SolverSettings, Failure> {
        let s = &cfg.solver;
        let defaults = pmfcpd::SolverConfig::new(1);
        let rank = self
            .rank
            .or(s.rank)
            .or(default_rank)
            .ok_or_else(|| Failure::usage("--rank is required (flag or [solver] rank in the config)"))?;
        let settings = SolverSettings {
            rank,
            max_cycles: self.max_cycles.or(s.max_cycles).unwrap_or(defaults.max_cycles),
            admm_iters: self.admm_iters.or(s.admm_iters).unwrap_or(defaults.admm_max_iters),
            admm_tol: self.admm_tol.or(s.admm_tol).unwrap_or(defaults.admm_tol),
            rho: self.rho.or_else(|| s.rho.as_ref().map(|r| r.to_setting())).unwrap_or_else(|| "auto".into()),
            outer_tol: self.outer_tol.or(s.outer_tol).unwrap_or(defaults.outer_tol),
            seed: self.seed.or(s.seed).unwrap_or(0),
        };
        settings.to_config()?;
        Ok(settings)
    }
}

fn resolve_order(flag: Option<u8>, cfg: &ConfigFile) -> Result<Option<usize>, Failure> {
    match flag.map(usize::from).or(cfg.data.order) {
        Some(m) if !(2..=4).contains(&m) => Err(Failure::usage(format!("order must be 2, 3 or 4, got {m}"))),
        other => Ok(other),
    }
}

fn with_extension(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn build_job(command: Command, cfg: &ConfigFile) -> Result<Job, Failure> {
    let delimiter = |flag: Option<char>| flag.or(cfg.data.delimiter).unwrap_or(',');
    let alpha = |flag: Option<f64>, default: f64| flag.or(cfg.data.alpha).unwrap_or(default);
    Ok(match command {
        Command::Estimate { data, order, alpha: a, delimiter: d, cardinalities, out } => {
            let order = resolve_order(order, cfg)?
                .ok_or_else(|| Failure::usage("--order is required (flag or [data] order in the config)"))?;
            let alpha = alpha(a, 0.0);
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Failure::usage(format!("--alpha must be >= 0, got {alpha}")));
            }
            Job::Estimate(EstimateJob { data, delimiter: delimiter(d), cardinalities, order, alpha, out })
        }
        Command::Fit { marginals, solver, init, log_every, out, trace } => Job::Fit(FitJob {
            marginals,
            solver: solver.resolve(cfg, None)?,
            init,
            log_every,
            trace: trace.unwrap_or_else(|| with_extension(&out, ".trace.csv")),
            out,
        }),
        Command::Predict { model, queries, delimiter: d, scale, offset, out } => {
            Job::Predict(PredictJob { model, queries, delimiter: delimiter(d), scale, offset, out })
        }
        Command::Synth { table, order, trials, vars, card, rank_true, sigma, solver, out } => {
            let solver = solver.resolve(cfg, None)?;
            let orders = match resolve_order(order, cfg)? {
                Some(m) => vec![m],
                None => vec![2, 3, 4],
            };
            let sigma = sigma.unwrap_or(if table == 1 { 0.0 } else { 1e-6 });
            if table == 1 && sigma != 0.0 {
                return Err(Failure::usage("table 1 is noiseless; use --table 2 for --sigma"));
            }
            Job::Synth(SynthJob {
                table,
                n_vars: vars,
                cardinality: card,
                rank_true: rank_true.unwrap_or(solver.rank),
                orders,
                sigma,
                trials,
                seed: solver.seed,
                solver,
                out,
            })
        }
        Command::Evaluate {
            data,
            delimiter: d,
            split_seed,
            splits,
            test_fraction,
            validation_fraction,
            methods,
            alpha: a,
            bmf_rank,
            scale,
            offset,
            sweep_ranks,
            solver,
            out,
        } => {
            if splits == 0 {
                return Err(Failure::usage("--splits must be at least 1"));
            }
            let mut solver = solver;
            if solver.max_cycles.is_none() && cfg.solver.max_cycles.is_none() {
                solver.max_cycles = Some(300);
            }
            let solver_settings = solver.resolve(cfg, Some(5))?;
            let job = EvaluateJob {
                data,
                delimiter: delimiter(d),
                split_seed,
                splits,
                test_fraction,
                validation_fraction,
                methods,
                alpha: alpha(a, 0.1),
                bmf_rank,
                scale,
                offset,
                sweep_ranks,
                solver: solver_settings,
                out,
            };
            let config = job.solver.to_config()?;
            for m in &job.methods {
                jobs::parse_method(m, &job, &config)?;
            }
            Job::Evaluate(job)
        }
        Command::Replay { .. } => unreachable!("replay is handled before job construction"),
    })
}

fn execute(job: Job, threads: usize, deterministic: bool) -> Result<(), Failure> {
    let manifest_path = Manifest::path_for(&job);
    let mut manifest = Manifest::new(job, threads, deterministic);
    let start = Instant::now();
    manifest.job.run()?;
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    manifest.save(&manifest_path)?;
    eprintln!("{}: wrote {} (manifest {})", manifest.job.name(), manifest.outputs[0].display(), manifest_path.display());
    Ok(())
}

fn init_threads(threads: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::usage(format!("cannot start {threads} threads: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Command::Replay { manifest, output_dir } = cli.command {
        let recorded = Manifest::load(&manifest)?;
        init_threads(recorded.threads)?;
        let mut job = recorded.job;
        if let Some(dir) = output_dir {
            std::fs::create_dir_all(&dir)?;
            job.redirect_outputs(&std::path::absolute(&dir)?);
        }
        return execute(job, recorded.threads, recorded.deterministic);
    }
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    let deterministic = cli.deterministic || cfg.deterministic.unwrap_or(false);
    let threads = if deterministic {
        1
    } else {
        cli.threads.or(cfg.threads).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    if threads == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    let mut job = build_job(cli.command, &cfg)?;
    job.absolutize()?;
    init_threads(threads)?;
    execute(job, threads, deterministic)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Failure::USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
