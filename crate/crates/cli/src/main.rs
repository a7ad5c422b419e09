use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use dsse::bench::plot::SvgBackend;
use dsse::bench::{compare_table, run_all, write_reports, CaseStudySpec, Estimator, Models};
use dsse::grid::{load_network, GridNetwork};
use dsse::h2mgnn::{save_model, Model, ModelConfig};
use dsse::pf_equations::{Measurement, StateVector};
use dsse::scenario::{generate_dataset, load_dataset, save_dataset, NoiseLevel, NoiseSpec, ScenarioConfig, Split};
use dsse::train::{compute_metrics, train_with_progress, Estimate, LossConfig, TrainConfig, TrainMode};
use dsse::wls::{estimate_wls, WlsConfig};

/// State estimation for distribution grids: data generation, the WLS
/// baseline, H2MGNN training and case-study benchmarks.
#[derive(Parser)]
#[command(name = "dsse-kit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a grid and its scenario file.
    Generate {
        #[arg(long)]
        grid: PathBuf,
        /// Profiles and meters; defaults to `<grid stem>.scenario.json` next to the grid.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 8640)]
        samples: usize,
        #[arg(long, default_value = "default")]
        noise: NoiseLevel,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the WLS estimator on every sample of a split.
    Wls {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        #[arg(long, default_value_t = WlsConfig::default().damping)]
        damping: f64,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Per-sample CSV report.
        #[arg(long)]
        report: PathBuf,
    },
    /// Train an H2MGNN estimator.
    Train {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Case14)]
        profile: Profile,
        /// JSON hyperparameters for `--profile custom`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "weak")]
        mode: TrainMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overrides the profile's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Learning-curve CSV; defaults to the checkpoint path with a `.history.csv` suffix.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run case studies on the test split and write tables and plots.
    Bench {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory holding `dss2.ckpt` and/or `dss2_supervised.ckpt`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "default")]
        cases: Vec<String>,
        /// Defaults to both WLS variants plus every model found in `--models`.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<Estimator>>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Profile {
    Case14,
    Custom,
}

/// Contents of a `--profile custom` config file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomProfile {
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    #[serde(default)]
    l2: f64,
    #[serde(default)]
    virtual_sigma_floor: f64,
    model: ModelConfig,
    #[serde(default)]
    loss: LossConfig,
}

fn scenario_for(grid: &Path, explicit: Option<PathBuf>) -> Result<ScenarioConfig> {
    let path = explicit.unwrap_or_else(|| ScenarioConfig::sibling_path(grid));
    ScenarioConfig::load(&path).with_context(|| format!("loading scenario {}", path.display()))
}

fn grid_name(grid: &Path) -> String {
    grid.file_stem().and_then(|s| s.to_str()).unwrap_or("grid").to_string()
}

fn load_grid(path: &Path) -> Result<GridNetwork> {
    load_network(path).with_context(|| format!("loading grid {}", path.display()))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn generate(grid: PathBuf, scenario: Option<PathBuf>, samples: usize, noise: NoiseLevel, seed: u64, out: PathBuf) -> Result<()> {
    let net = load_grid(&grid)?;
    let cfg = scenario_for(&grid, scenario)?;
    let ds = generate_dataset(&net, &cfg, &grid_name(&grid), samples, NoiseSpec::level(noise, seed), seed)?;
    save_dataset(&ds, &out)?;
    let count = |s| ds.indices(s).len();
    println!(
        "{} samples ({} train, {} val, {} test) written to {}",
        samples,
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        out.display()
    );
    Ok(())
}

fn wls(grid: PathBuf, dataset: PathBuf, config: WlsConfig, split: SplitArg, report: PathBuf) -> Result<()> {
    let net = load_grid(&grid)?;
    let ds = load_dataset(&dataset)?;
    let indices: Vec<usize> = match split {
        SplitArg::Train => ds.indices(Split::Train),
        SplitArg::Val => ds.indices(Split::Val),
        SplitArg::Test => ds.indices(Split::Test),
        SplitArg::All => (0..ds.samples.len()).collect(),
    };
    let mut csv = String::from("sample,split,converged,iterations,objective,voltage_rmse\n");
    let mut estimates = Vec::with_capacity(indices.len());
    for &k in &indices {
        let s = &ds.samples[k];
        let start = Instant::now();
        let result = estimate_wls(&net, &s.z, &config);
        let time = start.elapsed();
        match result {
            Ok(r) => {
                let rmse = dsse::train::voltage_rmse(&[&s.truth], std::slice::from_ref(&r.state));
                let _ = writeln!(csv, "{k},{},{},{},{:e},{:e}", ds.split[k].as_str(), r.converged, r.iterations, r.objective, rmse);
                estimates.push(Estimate { state: Some(r.state), converged: r.converged, time });
            }
            Err(e) => {
                let _ = writeln!(csv, "{k},{},false,0,,", ds.split[k].as_str());
                eprintln!("sample {k}: {e}");
                estimates.push(Estimate { state: None, converged: false, time });
            }
        }
    }
    write_file(&report, &csv)?;
    let truth: Vec<&StateVector> = indices.iter().map(|&k| &ds.samples[k].truth).collect();
    let m = compute_metrics(&net, &truth, &estimates);
    println!(
        "{} samples: voltage RMSE {:.3e} pu, line loading RMSE {:.3} %, convergence {:.1} %, {:.3} ms per sample",
        m.n_samples, m.voltage_rmse, m.loading_rmse_lines, m.convergence_rate, m.time_mean_ms
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    grid: PathBuf,
    dataset: PathBuf,
    profile: Profile,
    config: Option<PathBuf>,
    mode: TrainMode,
    seed: u64,
    epochs: Option<usize>,
    out: PathBuf,
    history: Option<PathBuf>,
) -> Result<()> {
    let (mut tc, model_config, lc) = match (profile, config) {
        (Profile::Case14, None) => (TrainConfig::case14(mode, seed), ModelConfig::default(), LossConfig::default()),
        (Profile::Case14, Some(_)) => bail!("--config is only read with --profile custom"),
        (Profile::Custom, None) => bail!("--profile custom needs --config <file>"),
        (Profile::Custom, Some(path)) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let c: CustomProfile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let tc = TrainConfig {
                epochs: c.epochs,
                batch_size: c.batch_size,
                learning_rate: c.learning_rate,
                l2: c.l2,
                seed,
                mode,
                virtual_sigma_floor: c.virtual_sigma_floor,
            };
            (tc, c.model, c.loss)
        }
    };
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    let net = load_grid(&grid)?;
    let ds = load_dataset(&dataset)?;
    let train_sets: Vec<&[Measurement]> = ds.subset(Split::Train).iter().map(|s| s.z.as_slice()).collect();
    let model = Model::new(&net, model_config, train_sets.iter().copied(), seed)?;
    eprintln!("{} parameters, {} epochs", model.params.count(), tc.epochs);
    let outcome = train_with_progress(&net, &ds, model, &tc, &lc, &mut |r| {
        eprintln!(
            "epoch {:4}  train {:.4e}  val {:.4e}  V RMSE {:.3e}  loading RMSE {:.2}  ({:.1} s)",
            r.epoch, r.train_loss, r.val_loss, r.val_v_rmse, r.val_loading_rmse, r.seconds
        );
    })?;
    write_file(&out, "")?;
    save_model(&outcome.model, &out)?;
    let history = history.unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    write_file(&history, &outcome.history_csv())?;
    println!("best epoch {}; model written to {}", outcome.best_epoch, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    grid: PathBuf,
    scenario: Option<PathBuf>,
    dataset: PathBuf,
    models: PathBuf,
    cases: Vec<String>,
    estimators: Option<Vec<Estimator>>,
    out: PathBuf,
) -> Result<bool> {
    let net = load_grid(&grid)?;
    let cfg = scenario_for(&grid, scenario)?;
    let ds = load_dataset(&dataset)?;
    let models = Models::load_dir(&models)?;
    let estimators = estimators.unwrap_or_else(|| {
        Estimator::ALL.into_iter().filter(|e| e.checkpoint_file().is_none() || models.get(*e).is_some()).collect()
    });
    let specs = cases
        .iter()
        .map(|c| Ok(CaseStudySpec { estimators: estimators.clone(), ..CaseStudySpec::builtin(c, &cfg.meters)? }))
        .collect::<Result<Vec<_>>>()?;
    let reports = run_all(&specs, &net, &cfg, &ds, &models)?;
    write_reports(&reports, &out, &SvgBackend)?;
    print!("{}", compare_table(&reports).to_text());
    let mut ok = true;
    for r in &reports {
        for (e, m) in &r.metrics {
            if !m.is_finite() {
                eprintln!("{} / {}: non-finite metrics", r.name, e.name());
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { grid, scenario, samples, noise, seed, out } => generate(grid, scenario, samples, noise, seed, out)?,
        Command::Wls { grid, dataset, tol, max_iter, damping, split, report } => {
            wls(grid, dataset, WlsConfig { tol, max_iter, damping }, split, report)?
        }
        Command::Train { grid, dataset, profile, config, mode, seed, epochs, out, history } => {
            train_cmd(grid, dataset, profile, config, mode, seed, epochs, out, history)?
        }
        Command::Bench { grid, scenario, dataset, models, cases, estimators, out } => {
            return bench(grid, scenario, dataset, models, cases, estimators, out)
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
