use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use reldep::dataset::Sample;
use reldep::synthbench::{sample_synthetic, SynthConfig};

fn reldep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reldep"))
        .args(args)
        .env_remove("RELDEP_SEED")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the three synthetic variables as `x.csv`, `y.csv`, `z.csv`.
fn synthetic_files(dir: &Path, c: &SynthConfig) -> [PathBuf; 3] {
    let j = sample_synthetic(c).unwrap();
    let paths = ["x.csv", "y.csv", "z.csv"].map(|n| dir.join(n));
    for (s, p) in j.variables().iter().zip(&paths) {
        s.save_csv(p).unwrap();
    }
    paths
}

fn write_rows(path: &Path, rows: &[Vec<f64>]) {
    Sample::from_rows(rows, "t")
        .unwrap()
        .save_csv(path)
        .unwrap();
}

#[test]
fn identical_targets_give_half() {
    let dir = TempDir::new().unwrap();
    let [x, y, _] = synthetic_files(dir.path(), &SynthConfig::default().with_m(200));
    let out = reldep(&["test", path_str(&x), path_str(&y), path_str(&y)]);
    let v = stdout_json(&out);
    assert_eq!(v["p_value"], 0.5);
    assert_eq!(v["method"], "dependent");
    assert_eq!(v["reject_null"], false);
}

#[test]
fn strongly_separated_targets_reject() {
    let dir = TempDir::new().unwrap();
    let c = SynthConfig::default().with_gamma3(1.7).with_seed(3);
    let [x, y, z] = synthetic_files(dir.path(), &c);
    let v = stdout_json(&reldep(&["test", path_str(&x), path_str(&y), path_str(&z)]));
    assert!(v["p_value"].as_f64().unwrap() < 1e-3, "{v}");
    assert_eq!(v["m"], 500);
    assert_eq!(v["kernel"]["x"]["family"], "gaussian");

    let v = stdout_json(&reldep(&[
        "test",
        path_str(&x),
        path_str(&y),
        path_str(&z),
        "--method",
        "independent",
    ]));
    assert_eq!(v["method"], "independent");
    assert!(v["kernel"].get("x'").is_some(), "{v}");
}

#[test]
fn generalized_weights_match_dependent_test() {
    let dir = TempDir::new().unwrap();
    let [x, y, z] = synthetic_files(dir.path(), &SynthConfig::default().with_m(150));
    let files = [path_str(&x), path_str(&y), path_str(&z)];
    let dep = stdout_json(&reldep(&["test", files[0], files[1], files[2]]));
    let gen = stdout_json(&reldep(&[
        "test",
        files[0],
        files[1],
        files[2],
        "--pairs",
        "0-1,0-2",
        "--weights",
        "1,-1",
    ]));
    assert_eq!(gen["method"], "generalized");
    let (a, b) = (
        dep["p_value"].as_f64().unwrap(),
        gen["p_value"].as_f64().unwrap(),
    );
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn usage_and_io_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let [x, y, _] = synthetic_files(dir.path(), &SynthConfig::default().with_m(20));
    let missing = dir.path().join("missing.csv");
    let cases: Vec<Vec<&str>> = vec![
        vec!["test", path_str(&x), path_str(&y), path_str(&missing)],
        vec!["test", path_str(&x), path_str(&y)],
        vec![
            "test",
            path_str(&x),
            path_str(&y),
            path_str(&y),
            "--alpha",
            "1.5",
        ],
        vec![
            "test",
            path_str(&x),
            path_str(&y),
            path_str(&y),
            "--pairs",
            "0-5",
            "--weights",
            "1",
        ],
        vec![
            "test",
            path_str(&x),
            path_str(&y),
            path_str(&y),
            "--kernel-x",
            "linear",
            "--bandwidth-x",
            "1",
        ],
        vec!["hsic", path_str(&x), path_str(&y), "--delimiter", "ab"],
        vec!["power", "--gamma3", ""],
        vec!["power", "--gamma3", "1.0:0.1:0.5"],
        vec!["converge", "--sizes", "100"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = reldep(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out.stdout.is_empty(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn malformed_csv_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    let good = dir.path().join("good.csv");
    fs::write(&bad, "1,2\n3,oops\n5,6\n7,8\n").unwrap();
    fs::write(&good, "1\n2\n3\n4\n").unwrap();
    let out = reldep(&["hsic", path_str(&bad), path_str(&good)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("column 2"), "{err}");
}

#[test]
fn statistical_preconditions_exit_3() {
    let dir = TempDir::new().unwrap();
    let tiny = dir.path().join("tiny.csv");
    write_rows(&tiny, &[vec![1.0], vec![2.0], vec![4.0]]);
    let out = reldep(&["hsic", path_str(&tiny), path_str(&tiny)]);
    assert_eq!(out.status.code(), Some(3));

    let constant = dir.path().join("constant.csv");
    write_rows(&constant, &vec![vec![1.0]; 10]);
    let out = reldep(&["hsic", path_str(&constant), path_str(&constant)]);
    assert_eq!(out.status.code(), Some(3), "zero median distance");
}

#[test]
fn hsic_of_constant_target_is_zero() {
    let dir = TempDir::new().unwrap();
    let [x, _, _] = synthetic_files(dir.path(), &SynthConfig::default().with_m(100));
    let constant = dir.path().join("constant.csv");
    write_rows(&constant, &vec![vec![2.5]; 100]);
    let v = stdout_json(&reldep(&[
        "hsic",
        path_str(&x),
        path_str(&constant),
        "--bandwidth-y",
        "1",
    ]));
    assert!(v["hsic"].as_f64().unwrap().abs() < 1e-12, "{v}");
    assert_eq!(v["m"], 100);
    assert_eq!(v["bandwidths"]["y"], 1.0);
}

#[test]
fn hsic_keys_keep_their_order() {
    let dir = TempDir::new().unwrap();
    let [x, y, _] = synthetic_files(dir.path(), &SynthConfig::default().with_m(30));
    let out = reldep(&["hsic", path_str(&x), path_str(&y)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let pos = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
    assert!(
        pos("hsic") < pos("variance") && pos("variance") < pos("m") && pos("m") < pos("bandwidths")
    );
}

#[test]
fn hsic_of_variable_with_itself_is_positive() {
    let dir = TempDir::new().unwrap();
    let [x, _, _] = synthetic_files(dir.path(), &SynthConfig::default().with_m(60));
    let v = stdout_json(&reldep(&["hsic", path_str(&x), path_str(&x)]));
    assert!(v["hsic"].as_f64().unwrap() > 0.0);
    assert!(v["variance"].as_f64().unwrap() > 0.0);
}

#[test]
fn csv_options_select_columns() {
    let dir = TempDir::new().unwrap();
    let [x, y, _] = synthetic_files(dir.path(), &SynthConfig::default().with_m(60));
    let text = fs::read_to_string(&y).unwrap();
    let with_header = dir.path().join("y_tab.tsv");
    let mut tsv = String::from("id\ta\tb\n");
    for (i, line) in text.lines().enumerate() {
        tsv.push_str(&format!("{i}\t{}\n", line.replace(',', "\t")));
    }
    fs::write(&with_header, tsv).unwrap();
    let plain = stdout_json(&reldep(&["hsic", path_str(&y), path_str(&x)]));
    // Both files go through the same options, so compare a file with itself.
    let a = stdout_json(&reldep(&[
        "hsic",
        path_str(&with_header),
        path_str(&with_header),
        "--delimiter",
        "tab",
        "--header",
        "--columns",
        "1:3",
    ]));
    let b = stdout_json(&reldep(&["hsic", path_str(&y), path_str(&y)]));
    assert_eq!(a["hsic"], b["hsic"]);
    assert_eq!(plain["m"], 60);
}

#[test]
fn power_grid_has_fourteen_rows() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let out = reldep(&[
        "power",
        "--gamma3",
        "0.4:0.1:1.7",
        "--m",
        "40",
        "--trials",
        "3",
        "--seed",
        "7",
        "--out",
        path_str(&out_dir),
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["experiment"], "power");
    assert_eq!(summary["rows"].as_array().unwrap().len(), 14);
    let table = fs::read_to_string(out_dir.join("power_40_7.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 15);
    assert!(lines[0].starts_with("gamma3,power_dependent,power_independent"));
    assert!(lines[1].starts_with("0.4,") && lines[14].starts_with("1.7,"));
    assert!(out_dir.join("power_40_7.json").exists());
}

#[test]
fn calibrate_prints_one_line() {
    let dir = TempDir::new().unwrap();
    let out = reldep(&[
        "calibrate",
        "--m",
        "40",
        "--trials",
        "5",
        "--out",
        path_str(dir.path()),
    ]);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v = stdout_json(&out);
    let rate = v["rejection_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert_eq!(v["config"]["gamma3"], v["config"]["gamma2"]);
}

#[test]
fn scatter_and_converge_write_outputs() {
    let dir = TempDir::new().unwrap();
    let d = path_str(dir.path());
    let v = stdout_json(&reldep(&[
        "scatter", "--m", "40", "--trials", "4", "--out", d,
    ]));
    assert_eq!(v["trials"], 4);
    let rows = fs::read_to_string(dir.path().join("scatter_40_0.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5);

    let v = stdout_json(&reldep(&[
        "converge", "--sizes", "20,40,80", "--trials", "4", "--out", d,
    ]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("converge_80_0.csv").exists());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let [x, y, z] = synthetic_files(dir.path(), &SynthConfig::default().with_m(120));
    let run_test = || {
        reldep(&[
            "test",
            path_str(&x),
            path_str(&y),
            path_str(&z),
            "--method",
            "independent",
            "--shuffle",
            "--seed",
            "11",
        ])
        .stdout
    };
    assert_eq!(run_test(), run_test());

    let run_power = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let stdout = reldep(&[
            "power",
            "--gamma3",
            "0.5,1.5",
            "--m",
            "40",
            "--trials",
            "4",
            "--seed",
            "5",
            "--out",
            path_str(&out_dir),
        ])
        .stdout;
        (stdout, fs::read(out_dir.join("power_40_5.csv")).unwrap())
    };
    assert_eq!(run_power("a"), run_power("b"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_reldep"))
        .args([
            "calibrate",
            "--m",
            "40",
            "--trials",
            "2",
            "--out",
            path_str(dir.path()),
        ])
        .env("RELDEP_SEED", "42")
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["config"]["seed"], 42);
    assert!(dir.path().join("calibrate_40_42.csv").exists());
}
