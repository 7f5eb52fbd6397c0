use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use minrev::asymptotics::asymptotic_spread;
use minrev::mortality::{apply_identification, fitted_rates, CaeParams};
use minrev::simulate::simulate_panel;
use minrev::{KappaPanel, ModelParams, State};

const COUNTRIES: [&str; 6] = ["SWE", "NLD", "DNK", "FRATNP", "ITA", "CHE"];

fn minrev(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minrev"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = minrev(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    minrev(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn reverting_panel(lambda: f64, seed: u64) -> KappaPanel {
    let c = COUNTRIES.len();
    let p = ModelParams::shared(-0.02, -0.3, lambda, vec![0.03; c], vec![0.5; c]);
    let start: Vec<f64> = (0..c).map(|i| -4.0 + 0.5 * i as f64 / (c - 1) as f64).collect();
    let sim = simulate_panel(&p, &State::at_rest(start), 60, seed).unwrap();
    KappaPanel::new(
        sim.values().to_vec(),
        (1951..=2011).collect(),
        COUNTRIES.iter().map(|c| c.to_string()).collect(),
    )
    .unwrap()
}

/// Identified common-age-effect parameters over ages 50..=90.
fn cae_truth(kappa: &KappaPanel) -> CaeParams {
    let ages: Vec<u32> = (50..=90).collect();
    apply_identification(&CaeParams {
        ages: ages.clone(),
        years: kappa.years().to_vec(),
        populations: kappa.populations().to_vec(),
        alpha: ages.iter().map(|&a| -0.4 + 0.02 * (a as f64 - 70.0)).collect(),
        beta: ages.iter().map(|&a| 1.3 - 0.015 * (a as f64 - 50.0)).collect(),
        kappa: kappa.values().to_vec(),
        reference_age: 70,
    })
    .unwrap()
}

/// HMD 1x1 files for ages 0..=110+ and years 1951..=2011 whose deaths are
/// the expected counts under a common-age-effect model with the given period
/// effects. Ages outside 50..=90 get a flat filler rate.
fn write_hmd_fixture(dir: &Path, kappa: &KappaPanel) {
    let truth = cae_truth(kappa);
    let ages = truth.ages.clone();
    let rates = fitted_rates(&truth);
    let (nt, nc) = (kappa.n_times(), kappa.n_populations());
    let exposure = 1e6;
    for (c, country) in COUNTRIES.iter().enumerate() {
        let mut d = format!("{country}, Deaths (period 1x1)\tLast modified: 01 Jan 2020\n\n");
        d.push_str("  Year          Age             Female            Male           Total\n");
        let mut e = d.replace("Deaths", "Exposure to risk");
        for (t, year) in kappa.years().iter().enumerate() {
            for a in 0..=110u32 {
                let rate = match ages.iter().position(|&x| x == a) {
                    Some(x) => rates[(x * nt + t) * nc + c],
                    None => 0.01,
                };
                let age = if a == 110 { "110+".to_string() } else { a.to_string() };
                d.push_str(&format!("  {year}  {age:>6}  {:>14.2}  {:>14}  {:>14}\n", rate * exposure, ".", "."));
                e.push_str(&format!("  {year}  {age:>6}  {exposure:>14.2}  {:>14}  {:>14}\n", ".", "."));
            }
        }
        std::fs::write(dir.join(format!("{country}.Deaths_1x1.txt")), d).unwrap();
        std::fs::write(dir.join(format!("{country}.Exposures_1x1.txt")), e).unwrap();
    }
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(dir.join("manifest.json"))).unwrap()
}

#[test]
fn pipeline_from_hmd_files_prefers_reversion() {
    let tmp = tempfile::tempdir().unwrap();
    let hmd = tmp.path().join("hmd");
    std::fs::create_dir(&hmd).unwrap();
    let kappa = reverting_panel(0.05, 8);
    write_hmd_fixture(&hmd, &kappa);
    let countries = COUNTRIES.join(",");

    let ingested = tmp.path().join("ingest");
    let msg = ok(&[
        "ingest", "--hmd-dir", s(&hmd), "--countries", &countries, "--sex", "female",
        "--ages", "50-90", "--years", "1951-2011", "--out", s(&ingested),
    ]);
    assert!(msg.contains("41 ages x 61 years x 6 populations"), "{msg}");
    let m = manifest(&ingested);
    assert_eq!(m["inputs"].as_object().unwrap().len(), 12);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);

    let cae = tmp.path().join("cae");
    ok(&[
        "fit-cae", "--data-csv", s(&ingested.join("dataset.csv")), "--xr", "70", "--out", s(&cae),
    ]);
    let direct = tmp.path().join("cae_direct");
    ok(&[
        "fit-cae", "--hmd-dir", s(&hmd), "--countries", &countries, "--sex", "female",
        "--ages", "50-90", "--years", "1951-2011", "--out", s(&direct),
    ]);
    assert_eq!(read(cae.join("period_effects.csv")), read(direct.join("period_effects.csv")));
    let ages = read(cae.join("age_effects.csv"));
    assert!(ages.starts_with("age,alpha,beta\n"));
    assert!(ages.contains("\n70,0.0,1.0\n"));
    let params: CaeParams = serde_json::from_str(&read(cae.join("cae_params.json"))).unwrap();
    let recovered: f64 = params
        .kappa
        .iter()
        .zip(&cae_truth(&kappa).kappa)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(recovered < 1e-4, "kappa error {recovered}");

    let cmp = tmp.path().join("cmp");
    let msg = ok(&["compare-bic", "--kappa", s(&cae.join("period_effects.csv")), "--out", s(&cmp)]);
    assert!(msg.contains("lower BIC: lambda free"), "{msg}");
    let csv = read(cmp.join("comparison.csv"));
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    let bic = |r: &Vec<&str>| r[3].parse::<f64>().unwrap();
    assert!(bic(&rows[1]) < bic(&rows[0]));
    let m = manifest(&cmp);
    assert!(m["outputs"]["comparison.csv"].is_string());
    assert_eq!(m["seed"], 0);
}

fn simulate_config(dir: &Path, lambda: f64) -> PathBuf {
    let params = ModelParams::shared(-0.02, 0.0, lambda, vec![0.05; 3], vec![0.5; 3]);
    let cfg = serde_json::json!({
        "params": params,
        "initial": [-4.0, -3.8, -3.5],
        "horizon": 50,
        "n_paths": 200,
        "seed": 7,
    });
    let path = dir.join(format!("sim_{lambda}.json"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = simulate_config(tmp.path(), 0.1);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--config", s(&cfg), "--threads", "1", "--out", s(&a)]);
    ok(&["simulate", "--config", s(&cfg), "--threads", "3", "--out", s(&b)]);
    for f in ["ensemble.csv", "summary.json", "manifest.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    assert_eq!(manifest(&a)["seed"], 7);
    let c = tmp.path().join("c");
    ok(&["simulate", "--config", s(&cfg), "--seed", "8", "--out", s(&c)]);
    assert_ne!(read(a.join("ensemble.csv")), read(c.join("ensemble.csv")));
    assert_ne!(manifest(&a)["config_sha256"], manifest(&c)["config_sha256"]);
}

#[test]
fn simulate_horizon_zero_and_reversion_contrast() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = simulate_config(tmp.path(), 0.1);
    let zero = tmp.path().join("zero");
    ok(&["simulate", "--config", s(&cfg), "--horizon", "0", "--n-paths", "4", "--out", s(&zero)]);
    let csv = read(zero.join("ensemble.csv"));
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("0")));

    let spread = |lambda: f64| {
        let dir = tmp.path().join(format!("run_{lambda}"));
        ok(&["simulate", "--config", s(&simulate_config(tmp.path(), lambda)), "--out", s(&dir)]);
        let v: serde_json::Value = serde_json::from_str(&read(dir.join("summary.json"))).unwrap();
        v["terminal_mean_spread"].as_f64().unwrap()
    };
    assert!(spread(0.2) < spread(0.0));

    // fitted parameters typically carry a negative zeta
    let mut cfg: serde_json::Value = serde_json::from_str(&read(simulate_config(tmp.path(), 0.02))).unwrap();
    cfg["params"]["zeta"] = serde_json::json!([-0.3, -0.3, -0.3]);
    let path = tmp.path().join("fitted.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    ok(&["simulate", "--config", s(&path), "--out", s(&tmp.path().join("fitted"))]);
}

#[test]
fn tables_exact_column_and_standard_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |n: &str| {
        let dir = tmp.path().join(format!("t{n}"));
        ok(&[
            "tables", "--lambda-grid", "0.1,0.4", "--populations", "2,3", "--n-paths", n, "--seed", "3",
            "--out", s(&dir),
        ]);
        read(dir.join("table2_spread.csv"))
    };
    let small = run("100");
    let large = run("1600");
    let header = small.lines().next().unwrap();
    assert_eq!(header, "lambda,exact_C2,sim_C2,se_C2,sim_C3,se_C3");
    let cells = |text: &str, row: usize| -> Vec<f64> {
        text.lines().nth(row + 1).unwrap().split(',').map(|v| v.parse().unwrap()).collect()
    };
    for (row, lambda) in [0.1, 0.4].into_iter().enumerate() {
        let exact = asymptotic_spread(lambda, 2f64.sqrt()).unwrap();
        assert!((cells(&large, row)[1] - exact).abs() < 1e-4);
        let ratio = cells(&small, row)[3] / cells(&large, row)[3];
        assert!(ratio > 2.5 && ratio < 6.0, "SE ratio {ratio}");
    }
    assert_eq!(code(&["tables", "--n-paths", "10", "--out", s(tmp.path())]), 2);
}

#[test]
fn asymptotics_point_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(&["asymptotics", "--lambda-grid", "0.0125,0.4", "--out", s(tmp.path())]);
    assert_eq!(text, read(tmp.path().join("asymptotics.csv")));
    let row: Vec<f64> = text.lines().nth(2).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[0], 0.4);
    assert!((row[1] + 0.2821).abs() < 5e-5);
    assert!((row[2] - 1.4105).abs() < 5e-5);
}

fn kappa_file(dir: &Path) -> PathBuf {
    let path = dir.join("kappa.csv");
    let mut buf = Vec::new();
    reverting_panel(0.02, 5).write_csv(&mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

#[test]
fn nested_comparison_and_time_series_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let kappa = kappa_file(tmp.path());
    let nested = tmp.path().join("nested");
    ok(&["compare-bic", "--kappa", s(&kappa), "--lambda-fixed-zero", "--out", s(&nested)]);
    let csv = read(nested.join("comparison.csv"));
    assert_eq!(csv.lines().count(), 2);
    // shared mu and zeta plus sigma and rho per population
    assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(2), Some("14"));

    let run = |name: &str| {
        let dir = tmp.path().join(name);
        ok(&["fit-ts", "--kappa", s(&kappa), "--bootstrap", "3", "--seed", "2", "--out", s(&dir)]);
        dir
    };
    let (a, b) = (run("ts_a"), run("ts_b"));
    for f in ["fit.json", "bootstrap.json", "manifest.json"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let fit: minrev::estimate::FitResult = serde_json::from_str(&read(a.join("fit.json"))).unwrap();
    assert_eq!(fit.k, 15);
    assert_eq!(manifest(&a)["seed"], 2);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = s(&out);
    // usage
    assert_eq!(code(&["simulate", "--no-such-flag"]), 2);
    assert_eq!(code(&["simulate", "--out", o]), 2);
    // malformed and invalid configs
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&["simulate", "--config", s(&bad), "--out", o]), 2);
    let mut cfg: serde_json::Value = serde_json::from_str(&read(simulate_config(tmp.path(), 0.1))).unwrap();
    cfg["params"]["sigma"] = serde_json::json!([0.05, -1.0, 0.05]);
    std::fs::write(&bad, cfg.to_string()).unwrap();
    assert_eq!(code(&["simulate", "--config", s(&bad), "--out", o]), 2);
    cfg["params"]["sigma"] = serde_json::json!([0.05, 0.05, 0.05]);
    cfg.as_object_mut().unwrap().remove("seed");
    std::fs::write(&bad, cfg.to_string()).unwrap();
    assert_eq!(code(&["simulate", "--config", s(&bad), "--out", o]), 2);
    assert_eq!(code(&["simulate", "--config", s(&bad), "--seed", "1", "--out", o]), 0);
    assert_eq!(code(&["fit-ts", "--kappa", s(&tmp.path().join("missing.csv")), "--out", o]), 2);
    assert_eq!(code(&["fit-cae", "--out", o]), 2);

    // runtime: gap in the period effects, and a CAE fit out of iterations
    let gap = tmp.path().join("gap.csv");
    std::fs::write(&gap, "year,population,kappa\n2000,A,-4.0\n2000,B,-3.9\n2001,A,-4.1\n").unwrap();
    assert_eq!(code(&["compare-bic", "--kappa", s(&gap), "--out", o]), 3);
    let hmd = tmp.path().join("hmd");
    std::fs::create_dir(&hmd).unwrap();
    write_hmd_fixture(&hmd, &reverting_panel(0.05, 1));
    let cae_cfg = tmp.path().join("cae.json");
    std::fs::write(
        &cae_cfg,
        serde_json::json!({
            "hmd_dir": "hmd",
            "dataset": {"countries": ["SWE", "NLD"], "sex": "female", "ages": [50, 90]},
            "options": {"max_iter": 1},
        })
        .to_string(),
    )
    .unwrap();
    assert_eq!(code(&["fit-cae", "--config", s(&cae_cfg), "--out", o]), 3);
    // requested years the files do not cover
    assert_eq!(code(&["fit-cae", "--config", s(&cae_cfg), "--years", "1921-2011", "--out", o]), 3);
    // male columns are all missing
    assert_eq!(code(&["fit-cae", "--config", s(&cae_cfg), "--sex", "male", "--out", o]), 3);
    assert_eq!(code(&["fit-cae", "--config", s(&cae_cfg), "--xr", "30", "--out", o]), 2);
}
