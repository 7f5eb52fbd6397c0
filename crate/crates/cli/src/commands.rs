use std::path::{Path, PathBuf};

use anyhow::anyhow;
use minrev::asymptotics::{reproduce_tables, TableKind, TwoPopAsymptotics};
use minrev::estimate::{compare_models, fit_mle, parametric_bootstrap};
use minrev::ingest::{load_kappa_csv, read_hmd_directory, DatasetSpec, HmdKind};
use minrev::mortality::{extract_period_effects, fit_cae, MortalityDataset};
use minrev::simulate::{simulate_paths, SimConfig};
use minrev::params::ZetaDomain;
use minrev::{Error, KappaPanel, State};
use serde_json::json;

use crate::config::{self, CompareConfig, FitCaeConfig, FitTsConfig, IngestConfig, SimulateConfig, TablesConfig};
use crate::output::OutputDir;
use crate::{Cli, Command, DataArgs};

/// Error split by exit code: bad input from the user, or a failure while running.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Spec(_) | Error::Domain { .. } | Error::Shape(_) | Error::Unsupported(_) => {
                Failure::Config(e.into())
            }
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn config_error(msg: impl std::fmt::Display) -> Failure {
    Failure::Config(anyhow!("{msg}"))
}

fn require_seed(seed: Option<u64>) -> Outcome<u64> {
    seed.ok_or_else(|| config_error("a seed is required (config `seed` or --seed)"))
}

fn absolute(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

fn open(path: &Path) -> Outcome<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| config_error(format!("cannot open {}: {e}", path.display())))
}

pub fn run(cli: Cli) -> Outcome {
    let cfg_path = cli.config.as_deref();
    match cli.command {
        Command::Ingest(ref args) => ingest(&cli, args),
        Command::Simulate { n_paths, horizon } => {
            let (mut cfg, _) = config::load::<SimulateConfig>(cfg_path, || None).map_err(Failure::Config)?;
            if let Some(n) = n_paths {
                cfg.n_paths = n;
            }
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            cfg.seed = cli.seed.or(cfg.seed);
            simulate(&cli, cfg)
        }
        Command::Tables {
            ref lambda_grid,
            ref populations,
            n_paths,
        } => {
            let (mut cfg, _) =
                config::load::<TablesConfig>(cfg_path, || Some(TablesConfig::default())).map_err(Failure::Config)?;
            if let Some(l) = lambda_grid {
                cfg.lambdas = l.clone();
            }
            if let Some(p) = populations {
                cfg.populations = p.clone();
            }
            if let Some(n) = n_paths {
                cfg.n_paths = n;
            }
            cfg.seed = cli.seed.or(cfg.seed);
            tables(&cli, cfg)
        }
        Command::Asymptotics { ref lambda_grid } => {
            let (mut cfg, _) =
                config::load(cfg_path, || Some(config::AsymptoticsConfig::default())).map_err(Failure::Config)?;
            if let Some(l) = lambda_grid {
                cfg.lambdas = l.clone();
            }
            asymptotics(&cli, cfg)
        }
        Command::FitCae {
            ref data,
            ref data_csv,
            xr,
        } => {
            let (mut cfg, base) =
                config::load::<FitCaeConfig>(cfg_path, || Some(FitCaeConfig::default())).map_err(Failure::Config)?;
            apply_data_args(&mut cfg.hmd_dir, &mut cfg.dataset, data)?;
            if let Some(p) = data_csv {
                cfg.data = Some(absolute(p.clone()));
            }
            if let Some(x) = xr {
                cfg.options.reference_age = x;
            }
            fit_cae_cmd(&cli, cfg, &base)
        }
        Command::FitTs { ref kappa, bootstrap } => {
            let (mut cfg, base) =
                config::load::<FitTsConfig>(cfg_path, || Some(FitTsConfig::default())).map_err(Failure::Config)?;
            if let Some(k) = kappa {
                cfg.kappa = Some(absolute(k.clone()));
            }
            if let Some(b) = bootstrap {
                cfg.bootstrap = b;
            }
            if let Some(s) = cli.seed {
                cfg.fit.seed = s;
            }
            fit_ts(&cli, cfg, &base)
        }
        Command::CompareBic {
            ref kappa,
            lambda_fixed_zero,
        } => {
            let (mut cfg, base) =
                config::load::<CompareConfig>(cfg_path, || Some(CompareConfig::default())).map_err(Failure::Config)?;
            if let Some(k) = kappa {
                cfg.kappa = Some(absolute(k.clone()));
            }
            if lambda_fixed_zero {
                cfg.fit.sharing.lambda_fixed_zero = true;
            }
            if let Some(s) = cli.seed {
                cfg.fit.seed = s;
            }
            compare(&cli, cfg, &base)
        }
    }
}

fn apply_data_args(hmd_dir: &mut Option<PathBuf>, dataset: &mut Option<DatasetSpec>, args: &DataArgs) -> Outcome {
    if let Some(d) = &args.hmd_dir {
        *hmd_dir = Some(absolute(d.clone()));
    }
    if let Some(countries) = &args.countries {
        match dataset {
            Some(spec) => spec.countries = countries.clone(),
            None => {
                let sex = args.sex.ok_or_else(|| config_error("--countries needs --sex"))?;
                *dataset = Some(DatasetSpec::new(countries.clone(), sex));
            }
        }
    }
    let touched = args.sex.is_some() || args.years.is_some() || args.ages.is_some();
    match dataset {
        Some(spec) => {
            if let Some(s) = args.sex {
                spec.sex = s;
            }
            if let Some(y) = args.years {
                spec.years = y;
            }
            if let Some(a) = args.ages {
                spec.ages = a;
            }
            spec.validate()?;
        }
        None if touched => return Err(config_error("--sex, --years and --ages need a dataset (config or --countries)")),
        None => {}
    }
    Ok(())
}

fn load_dataset(
    base: &Path,
    data: Option<&Path>,
    hmd_dir: Option<&Path>,
    spec: Option<&DatasetSpec>,
    out: &mut OutputDir,
) -> Outcome<MortalityDataset> {
    match (data, hmd_dir, spec) {
        (Some(path), _, _) => {
            let path = config::resolve(base, path);
            let data = MortalityDataset::read_csv(open(&path)?)?;
            out.record_input(&path)?;
            Ok(data)
        }
        (None, Some(dir), Some(spec)) => {
            let dir = config::resolve(base, dir);
            let data = read_hmd_directory(&dir, spec)?;
            for c in &spec.countries {
                for kind in [HmdKind::Deaths, HmdKind::Exposures] {
                    out.record_input(&dir.join(format!("{c}.{}.txt", kind.file_stem())))?;
                }
            }
            Ok(data)
        }
        _ => Err(config_error("need `data` (dataset CSV) or `hmd_dir` with a `dataset` spec")),
    }
}

fn load_panel(base: &Path, kappa: Option<&Path>, out: &mut OutputDir) -> Outcome<KappaPanel> {
    let path = kappa.ok_or_else(|| config_error("need a period-effect CSV (config `kappa` or --kappa)"))?;
    let path = config::resolve(base, path);
    let panel = load_kappa_csv(open(&path)?)?;
    out.record_input(&path)?;
    Ok(panel)
}

fn ingest(cli: &Cli, args: &DataArgs) -> Outcome {
    let (mut cfg, base) =
        config::load::<IngestConfig>(cli.config.as_deref(), || Some(IngestConfig::default())).map_err(Failure::Config)?;
    apply_data_args(&mut cfg.hmd_dir, &mut cfg.dataset, args)?;
    if cfg.hmd_dir.is_none() || cfg.dataset.is_none() {
        return Err(config_error("ingest needs `hmd_dir` and a `dataset` spec"));
    }
    let mut out = OutputDir::create(&cli.out)?;
    let data = load_dataset(&base, None, cfg.hmd_dir.as_deref(), cfg.dataset.as_ref(), &mut out)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    out.write("dataset.csv", &buf)?;
    let (x, t, c) = data.shape();
    println!("{x} ages x {t} years x {c} populations");
    out.finish("ingest", None, &cfg)?;
    Ok(())
}

fn simulate(cli: &Cli, cfg: SimulateConfig) -> Outcome {
    let seed = require_seed(cfg.seed)?;
    cfg.params.validate_with(ZetaDomain::Symmetric)?;
    let initial = State {
        kappa: cfg.initial.clone(),
        kappa_prev: cfg.initial_prev.clone().unwrap_or_else(|| cfg.initial.clone()),
        t: 0,
    };
    initial.validate(cfg.params.populations())?;
    let sim = SimConfig {
        horizon: cfg.horizon,
        n_paths: cfg.n_paths,
        seed,
        initial,
    };
    let ens = simulate_paths(&sim, &cfg.params)?;
    let mut out = OutputDir::create(&cli.out)?;
    let mut buf = Vec::new();
    ens.write_csv(&mut buf)?;
    out.write("ensemble.csv", &buf)?;
    let summary = ens.summary();
    out.write_json("summary.json", &summary)?;
    println!("terminal mean spread {:.6}", summary.terminal_mean_spread);
    out.finish("simulate", Some(seed), &cfg)?;
    Ok(())
}

fn tables(cli: &Cli, cfg: TablesConfig) -> Outcome {
    let seed = require_seed(cfg.seed)?;
    let result = reproduce_tables(&cfg.lambdas, &cfg.populations, cfg.n_paths, cfg.window, seed)?;
    let mut out = OutputDir::create(&cli.out)?;
    for (name, kind) in [("table1_drift.csv", TableKind::Drift), ("table2_spread.csv", TableKind::Spread)] {
        let mut buf = Vec::new();
        result.write_csv(kind, &mut buf)?;
        out.write(name, &buf)?;
    }
    out.write_json("tables.json", &result)?;
    out.finish("tables", Some(seed), &cfg)?;
    Ok(())
}

fn asymptotics(cli: &Cli, cfg: config::AsymptoticsConfig) -> Outcome {
    let mut text = String::from("lambda,drift,spread,s,sigma_tilde\n");
    for &l in &cfg.lambdas {
        let a = TwoPopAsymptotics::new(cfg.mu, l, cfg.sigma1, cfg.sigma2, cfg.rho)?;
        text.push_str(&format!("{l},{},{},{},{}\n", a.drift, a.spread, a.s, a.sigma_tilde));
    }
    let mut out = OutputDir::create(&cli.out)?;
    out.write("asymptotics.csv", text.as_bytes())?;
    print!("{text}");
    out.finish("asymptotics", None, &cfg)?;
    Ok(())
}

fn fit_cae_cmd(cli: &Cli, cfg: FitCaeConfig, base: &Path) -> Outcome {
    let mut out = OutputDir::create(&cli.out)?;
    let data = load_dataset(base, cfg.data.as_deref(), cfg.hmd_dir.as_deref(), cfg.dataset.as_ref(), &mut out)?;
    let fit = fit_cae(&data, &cfg.options)?;
    out.write_json("cae_params.json", &fit.params)?;
    let mut buf = Vec::new();
    fit.params.write_age_effects_csv(&mut buf)?;
    out.write("age_effects.csv", &buf)?;
    let mut buf = Vec::new();
    extract_period_effects(&fit.params)?.write_csv(&mut buf)?;
    out.write("period_effects.csv", &buf)?;
    out.write_json(
        "fit_summary.json",
        &json!({
            "log_likelihood": fit.log_likelihood,
            "deviance": fit.deviance,
            "iterations": fit.iterations,
            "deviance_trace": fit.deviance_trace,
        }),
    )?;
    println!("deviance {:.6} after {} sweeps", fit.deviance, fit.iterations);
    out.finish("fit-cae", None, &cfg)?;
    Ok(())
}

fn fit_ts(cli: &Cli, cfg: FitTsConfig, base: &Path) -> Outcome {
    let mut out = OutputDir::create(&cli.out)?;
    let panel = load_panel(base, cfg.kappa.as_deref(), &mut out)?;
    let fit = fit_mle(&panel, &cfg.fit)?;
    out.write_json("fit.json", &fit)?;
    if cfg.bootstrap > 0 {
        let boot = parametric_bootstrap(&panel, &fit, &cfg.fit, cfg.bootstrap, cfg.fit.seed)?;
        let (mu, zeta, lambda) = boot.shared_standard_errors();
        out.write_json(
            "bootstrap.json",
            &json!({
                "replications": cfg.bootstrap,
                "se_mu": mu,
                "se_zeta": zeta,
                "se_lambda": lambda,
                "estimates": boot.estimates,
            }),
        )?;
    }
    println!("logL {:.4} K {} BIC {:.4}", fit.log_likelihood, fit.k, fit.bic);
    out.finish("fit-ts", Some(cfg.fit.seed), &cfg)?;
    Ok(())
}

fn compare(cli: &Cli, cfg: CompareConfig, base: &Path) -> Outcome {
    let mut out = OutputDir::create(&cli.out)?;
    let panel = load_panel(base, cfg.kappa.as_deref(), &mut out)?;
    let cmp = compare_models(&panel, &cfg.fit)?;
    let mut buf = Vec::new();
    cmp.write_csv(&mut buf)?;
    out.write("comparison.csv", &buf)?;
    out.write_json("comparison.json", &cmp)?;
    print!("{}", String::from_utf8_lossy(&buf));
    if cmp.with_reversion.is_some() {
        let pick = if cmp.prefers_reversion() { "lambda free" } else { "lambda=0" };
        println!("lower BIC: {pick}");
    }
    out.finish("compare-bic", Some(cfg.fit.seed), &cfg)?;
    Ok(())
}
