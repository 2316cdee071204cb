use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pmfcpd::{init_model, marginals_from_model, MarginalSet};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pmfcpd"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const TINY: &str = "a,b,c\n1,2,1\n2,2,NA\n1,1,2\n2,1,2\n";

#[test]
fn estimate_matches_hand_counts_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "d.csv", TINY);
    let out = run(d, &["estimate", "--data", "d.csv", "--order", "2", "--out", "m.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = MarginalSet::load(&d.join("m.json")).unwrap();
    // (a, c) is co-observed in rows 1, 3 and 4: (1,1), (1,2), (2,2)
    let ac = m.get(&[0, 2]).unwrap();
    assert_eq!(ac.support, 3);
    let third = 1.0 / 3.0;
    assert_eq!(ac.tensor.data(), &[third, 0.0, third, third]);
    assert_eq!(m.get(&[0, 1]).unwrap().tensor.data(), &[0.25; 4]);
    assert!(d.join("m.json.manifest.json").exists());

    let first = fs::read(d.join("m.json")).unwrap();
    assert!(run(d, &["estimate", "--data", "d.csv", "--order", "2", "--out", "m.json"]).status.success());
    assert_eq!(first, fs::read(d.join("m.json")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "d.csv", TINY);
    let too_high = run(d, &["estimate", "--data", "d.csv", "--order", "4", "--out", "m.json"]);
    assert_eq!(too_high.status.code(), Some(2), "{}", stderr(&too_high));
    let out_of_range = run(d, &["estimate", "--data", "d.csv", "--order", "5", "--out", "m.json"]);
    assert_eq!(out_of_range.status.code(), Some(2));
    let missing_rank = run(d, &["fit", "--marginals", "m.json", "--out", "x.json"]);
    assert_eq!(missing_rank.status.code(), Some(2));
    let bad_rho = run(d, &["fit", "--marginals", "m.json", "--rank", "2", "--rho", "-1", "--out", "x.json"]);
    assert_eq!(bad_rho.status.code(), Some(2));
    write(d, "bad.toml", "[solver]\nmax_cycle = 3\n");
    let unknown_key = run(d, &["--config", "bad.toml", "fit", "--marginals", "m.json", "--rank", "2", "--out", "x.json"]);
    assert_eq!(unknown_key.status.code(), Some(2));
    assert!(stderr(&unknown_key).contains("max_cycle"));
}

#[test]
fn malformed_data_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "d.csv", "a,b\n1,2\n1,x\n");
    let out = run(d, &["estimate", "--data", "d.csv", "--order", "2", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 3, column 2"), "{}", stderr(&out));
}

#[test]
fn fit_recovers_marginals_of_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let truth = init_model(&[3, 3, 3, 3], 2, 42).unwrap();
    marginals_from_model(&truth, 3).unwrap().save(&d.join("m.json")).unwrap();
    let out = run(d, &["fit", "--marginals", "m.json", "--rank", "2", "--seed", "3", "--out", "model.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let trace = fs::read_to_string(d.join("model.json.trace.csv")).unwrap();
    let last: f64 = trace.lines().last().unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(last <= 1e-10, "final objective {last}");
}

#[test]
fn constant_value_map_predicts_the_constant() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    init_model(&[2, 3, 2], 2, 1).unwrap().save(&d.join("model.json")).unwrap();
    write(d, "q.csv", "a,b,c\n1,?,NA\n?,3,?\n");
    let out = run(d, &["predict", "--model", "model.json", "--queries", "q.csv", "--scale", "0", "--offset", "7", "--out", "p.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(d.join("p.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let e: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((e - 7.0).abs() < 1e-12, "{row}");
    }
}

#[test]
fn config_precedence_and_manifest_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let truth = init_model(&[3, 2, 3], 2, 5).unwrap();
    marginals_from_model(&truth, 2).unwrap().save(&d.join("m.json")).unwrap();
    write(d, "c.toml", "deterministic = true\n[solver]\nrank = 2\nmax_cycles = 7\nseed = 11\n");

    let out = run(d, &["--config", "c.toml", "fit", "--marginals", "m.json", "--outer-tol", "1e-300", "--out", "a.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = fs::read_to_string(d.join("a.json.manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(v["job"]["solver"]["max_cycles"], 7);
    assert_eq!(v["job"]["solver"]["seed"], 11);
    assert_eq!(v["deterministic"], true);
    assert_eq!(fs::read_to_string(d.join("a.json.trace.csv")).unwrap().lines().count(), 9);

    let out = run(d, &["--config", "c.toml", "fit", "--marginals", "m.json", "--max-cycles", "9", "--out", "b.json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("b.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(v["job"]["solver"]["max_cycles"], 9);

    fs::create_dir(d.join("elsewhere")).unwrap();
    let out = run(&d.join("elsewhere"), &["replay", "../a.json.manifest.json", "--output-dir", "again"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let again = d.join("elsewhere/again");
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(again.join("a.json")).unwrap());
    assert_eq!(fs::read(d.join("a.json.trace.csv")).unwrap(), fs::read(again.join("a.json.trace.csv")).unwrap());
}

#[test]
fn synth_table_one_triples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["synth", "--table", "1", "--order", "3", "--rank", "5", "--trials", "5", "--out", "t1.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(d.join("t1.csv")).unwrap();
    let mut ten: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(6).unwrap().parse().unwrap()).collect();
    assert_eq!(ten.len(), 5);
    ten.sort_by(f64::total_cmp);
    assert!(ten[2] <= 1e-3, "median MRE_ten {}", ten[2]);
}

#[test]
fn evaluate_writes_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut table = String::from("i1,i2,i3,i4,i5\n");
    for r in 0..300usize {
        let h = r % 2;
        let row: Vec<String> = (0..5).map(|n| if (r + n) % 4 == 0 { "NA".into() } else { (1 + h * 2 + (r * 7 + n) % 2).to_string() }).collect();
        table.push_str(&row.join(","));
        table.push('\n');
    }
    write(d, "r.csv", &table);
    let out = run(
        d,
        &["evaluate", "--data", "r.csv", "--methods", "global,item,triples", "--rank", "2", "--max-cycles", "40", "--sweep-ranks", "1,2", "--out", "e.csv"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(d.join("e.csv")).unwrap();
    let methods: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(methods, ["global-average", "item-average", "cpd-triples-r2"]);
    assert_eq!(fs::read_to_string(d.join("e.sweep.csv")).unwrap().lines().count(), 3);
    let bad = run(d, &["evaluate", "--data", "r.csv", "--methods", "knn", "--out", "e.csv"]);
    assert_eq!(bad.status.code(), Some(2));
}
