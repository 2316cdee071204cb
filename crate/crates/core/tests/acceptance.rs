//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so
//! that every line is printed and the trace checks of criterion 8 can see
//! every fitting run.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use pmfcpd::experiments::metrics::median;
use pmfcpd::experiments::ratings::{cpd_fit_predictor, method_predictions};
use pmfcpd::experiments::synthetic::{max_relative_increase, MONOTONE_RTOL};
use pmfcpd::experiments::*;
use pmfcpd::rng::{streams, substream};
use pmfcpd::solver::{compute_gi, compute_vi, lambda_gram, lambda_rhs};
use pmfcpd::{
    conditional_expectation, conditional_pmf, map_estimate, marginals_from_joint, simplex_project, CpdModel,
    Evidence, RatingsDataset, SolverConfig, ValueMap,
};
use rand::seq::SliceRandom;
use rand::Rng;

const SEED: u64 = 20240;
const TRIALS: usize = 5;
const RANKS: [usize; 3] = [5, 10, 15];

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("criterion {id:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

/// Traces and final models of every fit, for criterion 8.
#[derive(Default)]
struct Sanity {
    runs: usize,
    worst_increase: f64,
    worst_violation: Option<String>,
}

impl Sanity {
    fn record(&mut self, trace: &[f64], model: &CpdModel) {
        self.runs += 1;
        self.worst_increase = self.worst_increase.max(max_relative_increase(trace));
        if let Err(e) = model.validate(1e-9) {
            self.worst_violation.get_or_insert(e.to_string());
        }
    }
}

fn recovery_spec(rank: usize, sigma: f64) -> SyntheticSpec {
    SyntheticSpec { noise_sigma: sigma, ..SyntheticSpec::uniform(5, 10, rank, TRIALS, SEED) }
}

fn timed<T>(label: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    eprintln!("  [{label}: {:.1?}]", start.elapsed());
    out
}

fn synthetic_grid(report: &mut Report, sanity: &mut Sanity) {
    // tables[r][o] for rank RANKS[r] and order o + 2
    let mut tables = Vec::new();
    for &rank in &RANKS {
        let spec = recovery_spec(rank, 0.0);
        let row: Vec<TableResult> = (2..=4)
            .map(|order| {
                timed(&format!("F={rank} order {order}"), || {
                    run_table(&spec, order, rank, &SolverConfig::new(rank)).expect("recovery run")
                })
            })
            .collect();
        for t in row.iter().flat_map(|r| &r.trials) {
            sanity.record(&t.objective_trace, &t.model);
        }
        tables.push(row);
    }

    let triples = &tables[0][1];
    let (ten, fact) = (triples.median_mre_ten(), triples.median_mre_fact().unwrap());
    report.line(
        "1",
        ten <= 1e-3 && fact <= 1e-2,
        format!("triples F=5: median MRE_ten {ten:.3e} (<= 1e-3), median MRE_fact {fact:.3e} (<= 1e-2)"),
    );

    let pairs_fact = tables[0][0].median_mre_fact().unwrap();
    report.line("2", pairs_fact >= 0.05, format!("pairs F=5: median MRE_fact {pairs_fact:.3e} (>= 0.05)"));

    let mut ok = true;
    let mut parts = Vec::new();
    for (rank, row) in RANKS.iter().zip(&tables) {
        let ten: Vec<f64> = row.iter().map(TableResult::median_mre_ten).collect();
        let fact: Vec<f64> = row.iter().map(|t| t.median_mre_fact().unwrap()).collect();
        let ordered = |v: &[f64]| v[2] <= v[1] && v[1] <= v[0];
        ok &= ordered(&ten) && ordered(&fact);
        parts.push(format!(
            "F={rank} ten [{:.2e} {:.2e} {:.2e}] fact [{:.2e} {:.2e} {:.2e}]",
            ten[0], ten[1], ten[2], fact[0], fact[1], fact[2]
        ));
    }
    report.line("3", ok, format!("medians (pairs, triples, quadruples): {}", parts.join("; ")));

    let noisy = timed("noisy F=5 triples", || {
        run_table(&recovery_spec(5, 1e-6), 3, 5, &SolverConfig::new(5)).expect("noisy run")
    });
    for t in &noisy.trials {
        sanity.record(&t.objective_trace, &t.model);
    }
    let ten = noisy.median_mre_ten();
    report.line("4", ten <= 2e-2, format!("sigma=1e-6 triples F=5: median MRE_ten {ten:.3e} (<= 2e-2)"));
}

fn oracle_terms(report: &mut Report) {
    let mut rng = common::rng(5);
    let (mut worst_g, mut worst_v, mut worst_l) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = rng.random_range(2..=5);
        let cards: Vec<usize> = (0..n).map(|_| rng.random_range(1..=6)).collect();
        let rank = rng.random_range(1..=4);
        let order = rng.random_range(2..=n.min(4));
        let model = common::random_model(&mut rng, &cards, rank);
        let marginals = marginals_from_joint(&common::random_joint(&mut rng, &cards), order).unwrap();
        for i in 0..n {
            let (g, v) = common::naive_gi_vi(&marginals, &model, i);
            worst_g = worst_g.max(common::rel_err(&compute_gi(&marginals, &model, i), &g));
            worst_v = worst_v.max(common::rel_err(&compute_vi(&marginals, &model, i).unwrap(), &v));
        }
        let (g, v) = common::naive_lambda_terms(&marginals, &model);
        worst_l = worst_l
            .max(common::rel_err(&lambda_gram(&marginals, &model), &g))
            .max(common::rel_err(&lambda_rhs(&marginals, &model), &v));
    }
    report.line(
        "5",
        worst_g <= 1e-12 && worst_v <= 1e-12 && worst_l <= 1e-12,
        format!("100 instances: max rel err G_i {worst_g:.2e}, V_i {worst_v:.2e}, lambda terms {worst_l:.2e} (<= 1e-12)"),
    );
}

fn oracle_simplex(report: &mut Report) {
    let mut rng = common::rng(6);
    let (mut dev, mut idem) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..=5);
        let scale = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let v: Vec<f64> = (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 0.5)).collect();
        let x = simplex_project(&v).unwrap();
        let oracle = common::simplex_oracle(&v);
        dev = x.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(dev, f64::max);
        let again = simplex_project(&x).unwrap();
        idem = x.iter().zip(&again).map(|(a, b)| (a - b).abs()).fold(idem, f64::max);
    }
    report.line(
        "6",
        dev <= 1e-9 && idem <= 1e-12,
        format!("1000 vectors: max deviation {dev:.2e} (<= 1e-9), idempotence {idem:.2e} (<= 1e-12)"),
    );
}

fn oracle_inference(report: &mut Report) {
    let mut rng = common::rng(7);
    let (mut pmf_dev, mut exp_dev) = (0.0f64, 0.0f64);
    let (mut map_checked, mut map_bad) = (0, 0);
    for _ in 0..200 {
        let n = rng.random_range(2..=4);
        let cards: Vec<usize> = (0..n).map(|_| rng.random_range(1..=5)).collect();
        let rank = rng.random_range(1..=3);
        let model = common::random_model(&mut rng, &cards, rank);
        let mut vars: Vec<usize> = (0..n).collect();
        vars.shuffle(&mut rng);
        let target = vars[0];
        let k = rng.random_range(0..n);
        let pairs: Vec<(usize, usize)> = vars[1..=k].iter().map(|&v| (v, rng.random_range(0..cards[v]))).collect();
        let evidence = Evidence::from_pairs(&model, pairs.iter().copied()).unwrap();

        let oracle = common::brute_conditional(&model, &pairs, target);
        let got = conditional_pmf(&model, &evidence, target).unwrap().pmf;
        pmf_dev = got.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(pmf_dev, f64::max);

        let values = ValueMap::new((0..cards[target]).map(|_| 5.0 * rng.random::<f64>()).collect());
        let (e, _) = conditional_expectation(&model, &evidence, target, &values).unwrap();
        let e_oracle: f64 = oracle.iter().zip(values.values()).map(|(p, v)| p * v).sum();
        exp_dev = exp_dev.max((e - e_oracle).abs());

        let mut sorted = oracle.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted.len() == 1 || sorted[0] - sorted[1] > 1e-9 {
            map_checked += 1;
            let best = (0..oracle.len()).fold(0, |b, c| if oracle[c] > oracle[b] { c } else { b });
            map_bad += usize::from(map_estimate(&model, &evidence, target).unwrap().0 != best);
        }
    }
    report.line(
        "7",
        pmf_dev <= 1e-12 && exp_dev <= 1e-12 && map_bad == 0,
        format!(
            "200 cases: max pmf dev {pmf_dev:.2e}, expectation dev {exp_dev:.2e} (<= 1e-12), MAP mismatches {map_bad}/{map_checked}"
        ),
    );
}

/// Test RMSE of each method on one split; CPD traces go to `sanity`.
fn split_scores(split: &Split, values: &[ValueMap], methods: &[Method], sanity: &mut Sanity) -> Vec<f64> {
    let truth: Vec<f64> = split.test.iter().map(|&(_, n, c)| values[n].value(c)).collect();
    methods
        .iter()
        .map(|m| {
            let pred = match m {
                Method::Cpd(c) => {
                    let p = cpd_fit_predictor(&split.train, &split.validation, values, c).expect("cpd fit");
                    sanity.record(&p.objective_trace, &p.model);
                    split
                        .test
                        .iter()
                        .map(|&(r, n, _)| ratings::cpd_predict(&p.model, &split.train, values, r, n).unwrap().0)
                        .collect()
                }
                _ => method_predictions(m, split, values, &split.test).expect("baseline"),
            };
            rmse(&pred, &truth).unwrap()
        })
        .collect()
}

fn synthetic_ratings(report: &mut Report, sanity: &mut Sanity) {
    let methods = [Method::GlobalAverage, Method::ItemAverage, Method::Cpd(CpdPredictorConfig::new(3, 3))];
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let spec = SyntheticSpec::uniform(10, 5, 3, 1, seed);
        let truth = gen_synthetic(&spec, 0).unwrap();
        let data = sample_ratings(&truth, 5000, 0.5, &mut substream(seed, streams::SAMPLE, 0)).unwrap();
        let split = split_dataset(&data, &SplitSpec::new(seed)).unwrap();
        let values: Vec<ValueMap> = (0..10).map(|_| ValueMap::identity(5)).collect();
        let s = timed(&format!("ratings seed {seed}"), || split_scores(&split, &values, &methods, sanity));
        wins += usize::from(s[2] < s[0] && s[2] < s[1]);
        parts.push(format!("[{:.4} {:.4} {:.4}]", s[0], s[1], s[2]));
    }
    report.line(
        "9",
        wins == 5,
        format!("test RMSE (global, item, cpd-triples) per seed: {} -> {wins}/5 below both baselines", parts.join(" ")),
    );
}

/// A user table from `PMFCPD_RATINGS_TABLE` (comma-delimited, 1-based codes,
/// header row) or, without one, a dense synthetic stand-in.
fn ratings_table() -> (RatingsDataset, String) {
    if let Some(path) = std::env::var_os("PMFCPD_RATINGS_TABLE") {
        let path = PathBuf::from(path);
        let data = RatingsDataset::read_csv(&path, b',', None).expect("readable ratings table");
        return (data, format!("table {}", path.display()));
    }
    let spec = SyntheticSpec::uniform(10, 5, 5, 1, 10);
    let truth = gen_synthetic(&spec, 0).unwrap();
    let data = sample_ratings(&truth, 5000, 0.0, &mut substream(10, streams::SAMPLE, 0)).unwrap();
    (data, "dense synthetic stand-in (10 items, 5 levels, rank 5, 5000 rows)".into())
}

fn ordering_on_table(report: &mut Report, sanity: &mut Sanity) {
    let (data, label) = ratings_table();
    let values: Vec<ValueMap> = data.cardinalities().iter().map(|&c| ValueMap::identity(c)).collect();
    let rank = 5;
    let methods = [
        Method::ItemAverage,
        Method::Cpd(CpdPredictorConfig::new(2, rank)),
        Method::Cpd(CpdPredictorConfig::new(3, rank)),
        Method::Cpd(CpdPredictorConfig::new(4, rank)),
    ];
    let mut per_method = vec![Vec::new(); methods.len()];
    for seed in 0..5u64 {
        let split = split_dataset(&data, &SplitSpec::new(seed)).unwrap();
        let s = timed(&format!("table split {seed}"), || split_scores(&split, &values, &methods, sanity));
        for (acc, x) in per_method.iter_mut().zip(s) {
            acc.push(x);
        }
    }
    let m: Vec<f64> = per_method.iter().map(|v| median(v)).collect();
    let pass = m[2] <= m[0] && m[3] <= m[2] && m[2] <= m[1];
    report.line(
        "10",
        pass,
        format!(
            "{label}: median test RMSE item {:.4}, pairs {:.4}, triples {:.4}, quadruples {:.4} over 5 splits",
            m[0], m[1], m[2], m[3]
        ),
    );
}

fn main() {
    // the harness flags cargo passes (e.g. --nocapture) are not needed here
    let start = Instant::now();
    let mut report = Report { failures: 0 };
    let mut sanity = Sanity::default();

    synthetic_grid(&mut report, &mut sanity);
    oracle_terms(&mut report);
    oracle_simplex(&mut report);
    oracle_inference(&mut report);
    synthetic_ratings(&mut report, &mut sanity);
    ordering_on_table(&mut report, &mut sanity);

    let pass = sanity.worst_increase <= MONOTONE_RTOL && sanity.worst_violation.is_none();
    report.line(
        "8",
        pass,
        format!(
            "{} fits: worst relative objective increase {:.2e} (<= {MONOTONE_RTOL:e}), invariant violations: {}",
            sanity.runs,
            sanity.worst_increase,
            sanity.worst_violation.as_deref().unwrap_or("none")
        ),
    );
    println!("acceptance: {} failing criteria, {:.1?}", report.failures, start.elapsed());
    if report.failures > 0 {
        std::process::exit(1);
    }
}
