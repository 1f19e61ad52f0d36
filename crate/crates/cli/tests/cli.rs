use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phidiv")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn rows<'a>(text: &'a str, quantity: &str) -> Vec<(&'a str, f64)> {
    text.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|c| c.len() == 4 && c[1] == quantity)
        .map(|c| (c[2], c[3].parse().unwrap()))
        .collect()
}

#[test]
fn unc_fit_reports_table_values() {
    let data = fixture("unc.csv");
    let out = run(&["fit", "--data", data.to_str().unwrap(), "--lambda", "2/3", "--format", "csv"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let coef = rows(&text, "coefficient");
    assert_eq!(coef.len(), 12);
    assert_eq!(coef[0].0, "y1:x1");
    assert!((coef[0].1 + 0.4933).abs() < 5e-4);
    assert!((coef[11].1 - 0.2488).abs() < 5e-4);
    let ineligible: Vec<&str> = rows_raw(&text, "ineligible");
    assert_eq!(ineligible, vec!["Freshman", "Senior"]);
    assert_eq!(rows(&text, "rho2_binder").len(), 2);
}

fn rows_raw<'a>(text: &'a str, quantity: &str) -> Vec<&'a str> {
    text.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|c| c.len() >= 3 && c[1] == quantity)
        .map(|c| c[2])
        .collect()
}

#[test]
fn human_output_names_strata_and_reference() {
    let data = fixture("unc.csv");
    let out = run(&["fit", "--data", data.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("strata: 1=Freshman, 2=Sophomore, 3=Junior, 4=Senior"));
    assert!(text.contains("(reference y5)"));
    assert!(text.contains("Freshman       ineligible"));
}

#[test]
fn separated_data_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sep.csv");
    std::fs::write(&path, "stratum,cluster,weight,m,y1,y2,y3,x1\n1,a,1,4,2,2,0,1\n1,b,1,4,1,3,0,1\n").unwrap();
    let out = run(&["fit", "--data", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("y3"));
}

#[test]
fn malformed_row_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "stratum,cluster,weight,m,y1,y2,x1\n1,a,1,4,2,2,1\n1,b,one,4,1,3,1\n").unwrap();
    let out = run(&["fit", "--data", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn individual_and_cluster_layouts_agree() {
    let clusters = [
        ("1", "a", 2.0, [3u64, 1, 2], [1.0, 0.5]),
        ("1", "b", 2.0, [1, 4, 1], [1.0, -0.3]),
        ("1", "c", 2.0, [2, 2, 2], [1.0, 1.2]),
        ("2", "a", 0.5, [0, 3, 3], [1.0, 0.1]),
        ("2", "b", 0.5, [4, 1, 1], [1.0, -1.0]),
    ];
    let mut wide = String::from("stratum,cluster,weight,m,y1,y2,y3,x1,x2\n");
    let mut long = String::from("stratum,cluster,weight,category,x1,x2\n");
    for (h, c, w, y, x) in &clusters {
        let m: u64 = y.iter().sum();
        writeln!(wide, "{h},{c},{w},{m},{},{},{},{},{}", y[0], y[1], y[2], x[0], x[1]).unwrap();
        for (label, count) in ["low", "mid", "high"].iter().zip(y) {
            for _ in 0..*count {
                writeln!(long, "{h},{c},{w},{label},{},{}", x[0], x[1]).unwrap();
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let (pw, pl) = (dir.path().join("wide.csv"), dir.path().join("long.csv"));
    std::fs::write(&pw, wide).unwrap();
    std::fs::write(&pl, long).unwrap();
    let a = run(&["fit", "--data", pw.to_str().unwrap(), "--lambda", "0,1", "--format", "csv"]);
    let b = run(&[
        "fit",
        "--data",
        pl.to_str().unwrap(),
        "--categories",
        "low,mid,high",
        "--lambda",
        "0,1",
        "--format",
        "csv",
    ]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    let (ta, tb) = (stdout(&a), stdout(&b));
    let (ca, cb) = (rows(&ta, "coefficient"), rows(&tb, "coefficient"));
    assert_eq!(ca.len(), 8);
    for (x, y) in ca.iter().zip(&cb) {
        assert_eq!(x.0.split_once(':').unwrap().1, y.0.split_once(':').unwrap().1);
        assert!((x.1 - y.1).abs() < 1e-12);
    }
}

#[test]
fn deff_from_saved_coefficients_matches_refit() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture("unc.csv");
    let data = data.to_str().unwrap();
    let saved = dir.path().join("fit.csv");
    let out = run(&["fit", "--data", data, "--lambda", "1.5", "--format", "csv", "--out", saved.to_str().unwrap()]);
    assert!(out.status.success());
    let refit = stdout(&run(&["deff", "--data", data, "--lambda", "1.5", "--format", "csv"]));
    let reuse = stdout(&run(&[
        "deff",
        "--data",
        data,
        "--lambda",
        "1.5",
        "--format",
        "csv",
        "--beta-from",
        saved.to_str().unwrap(),
    ]));
    assert_eq!(refit, reuse);
    let missing = run(&["deff", "--data", data, "--lambda", "2", "--beta-from", saved.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn uncentred_binder_changes_only_binder_rows() {
    let data = fixture("unc.csv");
    let data = data.to_str().unwrap();
    let a = stdout(&run(&["deff", "--data", data, "--lambda", "1", "--format", "csv"]));
    let b = stdout(&run(&["deff", "--data", data, "--lambda", "1", "--format", "csv", "--binder-centering", "none"]));
    assert_eq!(rows(&a, "rho2_moments"), rows(&b, "rho2_moments"));
    let (ra, rb) = (rows(&a, "rho2_binder"), rows(&b, "rho2_binder"));
    assert!((ra[0].1 - 0.0051).abs() < 5e-5);
    assert!((rb[0].1 - 0.0127).abs() < 5e-5);
}

#[test]
fn simulate_validates_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("scenario3.cfg");
    let out = dir.path().join("r.csv");
    let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--replicates", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("replicates"));
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "family = RC\nn = 10\nm = 5\nrho2 = 0.1\nrhoo = 2\n").unwrap();
    let r = run(&["simulate", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("rhoo"));
}

#[test]
fn seed_override_keeps_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "family = DM\nn = 30\nm = 10\nrho2 = 0.2\nreplicates = 5\nseed = 1\n").unwrap();
    let mut tables = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("r{seed}.csv"));
        let r = run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(r.status.success());
        assert!(stdout(&r).contains(&format!("seed {seed} replicates 5")));
        tables.push(std::fs::read_to_string(out).unwrap());
    }
    let first: Vec<&str> = tables[0].lines().collect();
    assert_eq!(first[0], phidiv::sim::RESULTS_HEADER);
    assert_eq!(first.len(), 7);
    assert_eq!(tables[1].lines().next(), Some(first[0]));
    assert_ne!(tables[0], tables[1]);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(run(&["fit"]).status.code(), Some(1));
    assert_eq!(run(&["fit", "--data", "x.csv", "--lambda", "abc"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let data = fixture("unc.csv");
    assert_eq!(run(&["fit", "--data", data.to_str().unwrap(), "--lambda", "-2"]).status.code(), Some(1));
}
