//! Case studies on the test split: perturb the measurements, run each
//! estimator, tabulate and plot the metrics.

pub mod plot;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridNetwork;
use crate::h2mgnn::{load_model, Model};
use crate::pf_equations::{MeasurementKind, StateVector};
use crate::scenario::{
    apply_load_shift, build_sample, measure, metered_kinds, Dataset, MeterConfig, NoiseLevel, NoiseSpec, Sample,
    ScenarioConfig, Split,
};
use crate::train::{compute_metrics, estimate_each, Estimate, Metrics};
use crate::wls::{estimate_wls, WlsConfig};

use plot::{BarChart, LineChart, PlotBackend, Series};

/// Bias of an erroneous meter, in multiples of its declared σ.
pub const DEFAULT_BIAS_SIGMAS: f64 = 5.0;
/// Length of the voltage trace window.
pub const TRACE_WINDOW: usize = 120;

/// Names accepted by [`CaseStudySpec::builtin`].
pub const BUILTIN_CASES: [&str; 9] = [
    "default",
    "noise-low",
    "noise-high",
    "missing-v",
    "erroneous",
    "missing-erroneous",
    "load-shift-a",
    "load-shift-b",
    "load-shift-c",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Damped Gauss-Newton WLS.
    Wls,
    /// Undamped WLS with a loose tolerance.
    WlsDetuned,
    Dss2,
    Dss2Supervised,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Wls, Estimator::WlsDetuned, Estimator::Dss2, Estimator::Dss2Supervised];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Wls => "wls",
            Estimator::WlsDetuned => "wls_detuned",
            Estimator::Dss2 => "dss2",
            Estimator::Dss2Supervised => "dss2_supervised",
        }
    }

    /// Column header in tables and plot legends.
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Wls => "WLS",
            Estimator::WlsDetuned => "WLS (detuned)",
            Estimator::Dss2 => "DSS2",
            Estimator::Dss2Supervised => "sup. DSS2",
        }
    }

    /// Checkpoint file name inside a models directory, for learned estimators.
    pub fn checkpoint_file(&self) -> Option<&'static str> {
        match self {
            Estimator::Dss2 => Some("dss2.ckpt"),
            Estimator::Dss2Supervised => Some("dss2_supervised.ckpt"),
            _ => None,
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErroneousMeter {
    pub kind: MeasurementKind,
    /// Added to the reading, in multiples of its σ.
    pub bias_sigmas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudySpec {
    pub name: String,
    pub noise_level: NoiseLevel,
    /// Meters whose reading is replaced by the training-split mean.
    pub missing_meters: Vec<MeasurementKind>,
    pub erroneous_meters: Vec<ErroneousMeter>,
    /// `(gen_factor, load_factor)`, see [`apply_load_shift`].
    pub load_shift: (f64, f64),
    pub estimators: Vec<Estimator>,
}

impl CaseStudySpec {
    /// Unperturbed test split, every estimator.
    pub fn default_case() -> Self {
        CaseStudySpec {
            name: "default".into(),
            noise_level: NoiseLevel::Default,
            missing_meters: Vec::new(),
            erroneous_meters: Vec::new(),
            load_shift: (0.0, 0.0),
            estimators: Estimator::ALL.to_vec(),
        }
    }

    /// A named case study. Missing and erroneous meters are picked from
    /// `meters`: the middle voltage meter, the first voltage meter and the
    /// active power of the first flow meter.
    pub fn builtin(name: &str, meters: &MeterConfig) -> Result<Self> {
        let base = CaseStudySpec { name: name.into(), ..Self::default_case() };
        let kinds = metered_kinds(meters);
        let voltage: Vec<MeasurementKind> = kinds.iter().copied().filter(|k| matches!(k, MeasurementKind::VBus(_))).collect();
        let p_flow = kinds
            .iter()
            .copied()
            .find(|k| matches!(k, MeasurementKind::PFlowFwd(_) | MeasurementKind::PFlowRev(_)));
        let mid = voltage.get(voltage.len() / 2).copied();
        let first = voltage.first().copied();
        let biased = |k: MeasurementKind| ErroneousMeter { kind: k, bias_sigmas: DEFAULT_BIAS_SIGMAS };
        let need = |k: Option<MeasurementKind>, what: &str| {
            k.ok_or_else(|| Error::Config(format!("case {name:?} needs a {what} meter")))
        };
        let spec = match name {
            "default" => base,
            "noise-low" => CaseStudySpec { noise_level: NoiseLevel::Low, ..base },
            "noise-high" => CaseStudySpec { noise_level: NoiseLevel::High, ..base },
            "missing-v" => CaseStudySpec { missing_meters: vec![need(mid, "voltage")?], ..base },
            "erroneous" => CaseStudySpec {
                erroneous_meters: vec![biased(need(mid, "voltage")?), biased(need(p_flow, "flow")?)],
                ..base
            },
            "missing-erroneous" => {
                let (m, e) = (need(first, "voltage")?, need(mid, "voltage")?);
                if m == e {
                    return Err(Error::Config(format!("case {name:?} needs two voltage meters")));
                }
                CaseStudySpec { missing_meters: vec![m], erroneous_meters: vec![biased(e)], ..base }
            }
            "load-shift-a" => CaseStudySpec { load_shift: (-0.30, 0.30), ..base },
            "load-shift-b" => CaseStudySpec { load_shift: (0.25, 1.00), ..base },
            "load-shift-c" => CaseStudySpec { load_shift: (-0.75, 0.60), ..base },
            _ => return Err(Error::Config(format!("unknown case study {name:?}"))),
        };
        Ok(spec)
    }

    pub fn validate(&self, meters: &MeterConfig) -> Result<()> {
        let kinds = metered_kinds(meters);
        let referenced = self.missing_meters.iter().chain(self.erroneous_meters.iter().map(|e| &e.kind));
        for k in referenced {
            if !kinds.contains(k) {
                return Err(Error::Config(format!("case {:?} references {k:?}, which is not metered", self.name)));
            }
        }
        if self.estimators.is_empty() {
            return Err(Error::Config(format!("case {:?} runs no estimator", self.name)));
        }
        if self.erroneous_meters.iter().any(|e| !e.bias_sigmas.is_finite()) {
            return Err(Error::Config("erroneous meter bias must be finite".into()));
        }
        Ok(())
    }
}

/// Trained checkpoints, by estimator.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub dss2: Option<Model>,
    pub dss2_supervised: Option<Model>,
}

impl Models {
    /// Loads whichever of `dss2.ckpt` and `dss2_supervised.ckpt` exist in `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Models> {
        let dir = dir.as_ref();
        let load = |e: Estimator| {
            let path = dir.join(e.checkpoint_file().expect("learned estimator"));
            path.exists().then(|| load_model(&path)).transpose()
        };
        Ok(Models { dss2: load(Estimator::Dss2)?, dss2_supervised: load(Estimator::Dss2Supervised)? })
    }

    pub fn get(&self, e: Estimator) -> Option<&Model> {
        match e {
            Estimator::Dss2 => self.dss2.as_ref(),
            Estimator::Dss2Supervised => self.dss2_supervised.as_ref(),
            _ => None,
        }
    }
}

/// Voltage magnitude at one bus over consecutive test samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub bus: usize,
    /// Dataset index of each point.
    pub samples: Vec<usize>,
    pub truth: Vec<f64>,
    /// The reading fed to the estimators, if the bus is metered.
    pub measured: Option<Vec<f64>>,
    pub estimates: Vec<(Estimator, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: String,
    pub metrics: Vec<(Estimator, Metrics)>,
    pub trace: Trace,
}

impl CaseReport {
    pub fn get(&self, e: Estimator) -> Option<&Metrics> {
        self.metrics.iter().find(|(x, _)| *x == e).map(|(_, m)| m)
    }

    pub fn all_finite(&self) -> bool {
        self.metrics.iter().all(|(_, m)| m.is_finite())
    }

    /// One row per estimator. Wall times are left out so reruns give
    /// identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "case,estimator,voltage_rmse,voltage_rmse_std,loading_rmse_lines,loading_rmse_lines_std,\
             loading_rmse_all,loading_rmse_all_std,convergence_rate,n_samples\n",
        );
        for (e, m) in &self.metrics {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                self.name,
                e.name(),
                m.voltage_rmse,
                m.voltage_rmse_std,
                m.loading_rmse_lines,
                m.loading_rmse_lines_std,
                m.loading_rmse_all,
                m.loading_rmse_all_std,
                m.convergence_rate,
                m.n_samples
            );
        }
        out
    }
}

fn historical_mean(dataset: &Dataset, kind: MeasurementKind) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in dataset.subset(Split::Train) {
        for m in s.z.iter().filter(|m| m.kind == kind) {
            sum += m.value;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Config(format!("no training readings of {kind:?}")));
    }
    Ok(sum / n as f64)
}

/// Test samples with the perturbations of `spec` applied. The truth of a
/// load-shift case is the re-solved power flow.
pub fn perturbed_test_split(
    spec: &CaseStudySpec,
    network: &GridNetwork,
    scenario: &ScenarioConfig,
    dataset: &Dataset,
) -> Result<Vec<(usize, Sample)>> {
    spec.validate(&scenario.meters)?;
    let profiles = scenario.profiles(network)?;
    let base = dataset.meta.noise;
    let noise = NoiseSpec { seed: base.seed, sigma_pseudo: base.sigma_pseudo, ..NoiseSpec::level(spec.noise_level, base.seed) };
    let shifted = spec.load_shift != (0.0, 0.0);
    let means = spec
        .missing_meters
        .iter()
        .map(|&k| historical_mean(dataset, k).map(|m| (k, m)))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for k in dataset.indices(Split::Test) {
        let original = &dataset.samples[k];
        let mut s = if shifted {
            let inj = apply_load_shift(&original.injections, &profiles, spec.load_shift.0, spec.load_shift.1);
            build_sample(network, &scenario.meters, &profiles, inj, k, &noise)?
        } else if noise != base {
            let z = measure(network, &scenario.meters, &profiles, &original.truth, k, &noise)?;
            Sample { z, ..original.clone() }
        } else {
            original.clone()
        };
        for m in &mut s.z {
            if let Some((_, mean)) = means.iter().find(|(kind, _)| *kind == m.kind) {
                m.value = *mean;
            }
            if let Some(e) = spec.erroneous_meters.iter().find(|e| e.kind == m.kind) {
                m.value += e.bias_sigmas * m.sigma;
            }
        }
        out.push((k, s));
    }
    Ok(out)
}

fn wls_estimates(network: &GridNetwork, samples: &[&Sample], config: &WlsConfig) -> Vec<Estimate> {
    samples
        .iter()
        .map(|s| {
            let start = Instant::now();
            match estimate_wls(network, &s.z, config) {
                Ok(r) => Estimate { state: Some(r.state), converged: r.converged, time: start.elapsed() },
                Err(_) => Estimate { state: None, converged: false, time: start.elapsed() },
            }
        })
        .collect()
}

fn trace_bus(spec: &CaseStudySpec, network: &GridNetwork) -> usize {
    let perturbed = spec.missing_meters.iter().chain(spec.erroneous_meters.iter().map(|e| &e.kind));
    perturbed
        .filter_map(|k| match k {
            MeasurementKind::VBus(b) => Some(*b),
            _ => None,
        })
        .next()
        .unwrap_or(if network.slack_index() == network.n() - 1 { 0 } else { network.n() - 1 })
}

/// Runs every estimator of `spec` on the perturbed test split. Models are
/// used as trained; nothing is refit.
pub fn run_case_study(
    spec: &CaseStudySpec,
    network: &GridNetwork,
    scenario: &ScenarioConfig,
    dataset: &Dataset,
    models: &Models,
) -> Result<CaseReport> {
    for e in &spec.estimators {
        if e.checkpoint_file().is_some() && models.get(*e).is_none() {
            return Err(Error::Checkpoint(format!("no {} checkpoint for case {:?}", e.name(), spec.name)));
        }
    }
    let test = perturbed_test_split(spec, network, scenario, dataset)?;
    let samples: Vec<&Sample> = test.iter().map(|(_, s)| s).collect();
    let truth: Vec<&StateVector> = samples.iter().map(|s| &s.truth).collect();

    let bus = trace_bus(spec, network);
    let window = &samples[..samples.len().min(TRACE_WINDOW)];
    let measured: Vec<f64> = window
        .iter()
        .filter_map(|s| s.z.iter().find(|m| m.kind == MeasurementKind::VBus(bus)).map(|m| m.value))
        .collect();
    let mut trace = Trace {
        bus,
        samples: test.iter().take(window.len()).map(|(k, _)| *k).collect(),
        truth: window.iter().map(|s| s.truth.v()[bus]).collect(),
        measured: (measured.len() == window.len()).then_some(measured),
        estimates: Vec::new(),
    };

    let mut metrics = Vec::new();
    for &e in &spec.estimators {
        let estimates = match e {
            Estimator::Wls => wls_estimates(network, &samples, &WlsConfig::default()),
            Estimator::WlsDetuned => wls_estimates(network, &samples, &WlsConfig::detuned()),
            Estimator::Dss2 | Estimator::Dss2Supervised => {
                estimate_each(models.get(e).expect("checked above"), network, &samples)?
            }
        };
        let v = estimates[..window.len()]
            .iter()
            .map(|est| est.state.as_ref().map_or(f64::NAN, |s| s.v()[bus]))
            .collect();
        trace.estimates.push((e, v));
        metrics.push((e, compute_metrics(network, &truth, &estimates)));
    }
    Ok(CaseReport { name: spec.name.clone(), metrics, trace })
}

/// One row of [`compare_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: &'static str,
    /// Mean and optional standard deviation per column; `None` if the
    /// estimator was not run.
    pub cells: Vec<Option<(f64, Option<f64>)>>,
    /// Wall-clock rows differ between runs and are kept out of the CSV.
    pub is_timing: bool,
}

/// Metrics by estimator: rows are metrics, columns are `case / estimator`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for c in &self.columns {
            out += &format!(",{c},{c} std");
        }
        out.push('\n');
        for r in self.rows.iter().filter(|r| !r.is_timing) {
            out += r.label;
            for cell in &r.cells {
                match cell {
                    Some((m, s)) => out += &format!(",{m:e},{}", s.map(|s| format!("{s:e}")).unwrap_or_default()),
                    None => out += ",,",
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text with standard deviations in parentheses and "—" for
    /// estimators that were not run.
    pub fn to_text(&self) -> String {
        let fmt = |cell: &Option<(f64, Option<f64>)>| match cell {
            Some((m, Some(s))) => format!("{} ({})", sig(*m), sig(*s)),
            Some((m, None)) => sig(*m),
            None => "—".to_string(),
        };
        let body: Vec<Vec<String>> = self.rows.iter().map(|r| r.cells.iter().map(fmt).collect()).collect();
        let w0 = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| body.iter().map(|r| r[c].chars().count()).chain([self.columns[c].chars().count()]).max().unwrap_or(0))
            .collect();
        let mut out = format!("{:w0$}", "");
        for (c, w) in self.columns.iter().zip(&widths) {
            out += &format!(" | {c:>w$}");
        }
        out.push('\n');
        for (r, cells) in self.rows.iter().zip(&body) {
            out += &format!("{:w0$}", r.label);
            for (c, w) in cells.iter().zip(&widths) {
                out += &format!(" | {:>w$}", c, w = w);
            }
            out.push('\n');
        }
        out
    }
}

fn sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = (2 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.digits$}")
}

/// Lays out reports like the paper's results table. Columns are the
/// estimators run in any report, repeated per case when there are several.
pub fn compare_table(reports: &[CaseReport]) -> Table {
    let used: Vec<Estimator> =
        Estimator::ALL.into_iter().filter(|e| reports.iter().any(|r| r.get(*e).is_some())).collect();
    let mut columns = Vec::new();
    let mut cols: Vec<Option<&Metrics>> = Vec::new();
    for r in reports {
        for &e in &used {
            columns.push(if reports.len() == 1 { e.label().to_string() } else { format!("{} / {}", r.name, e.label()) });
            cols.push(r.get(e));
        }
    }
    type Pick = fn(&Metrics) -> (f64, Option<f64>);
    let rows: [(&'static str, Pick, bool); 5] = [
        ("Voltage RMSE [1e-3 pu]", |m| (m.voltage_rmse * 1e3, Some(m.voltage_rmse_std * 1e3)), false),
        ("Line loading RMSE [%]", |m| (m.loading_rmse_lines, Some(m.loading_rmse_lines_std)), false),
        ("Line & trafo loading RMSE [%]", |m| (m.loading_rmse_all, Some(m.loading_rmse_all_std)), false),
        ("Convergence [%]", |m| (m.convergence_rate, None), false),
        ("Computational time [ms]", |m| (m.time_mean_ms, Some(m.time_std_ms)), true),
    ];
    Table {
        columns,
        rows: rows
            .iter()
            .map(|&(label, pick, is_timing)| TableRow { label, cells: cols.iter().map(|m| m.map(pick)).collect(), is_timing })
            .collect(),
    }
}

/// Writes `<case>.csv` and `<case>_trace` per report, plus `table.csv`,
/// `table.txt` and grouped RMSE bar charts.
pub fn write_reports(reports: &[CaseReport], dir: impl AsRef<Path>, backend: &dyn PlotBackend) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: String, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    let ext = backend.extension();
    for r in reports {
        write(format!("{}.csv", r.name), r.to_csv())?;
        let t = &r.trace;
        let mut series = vec![Series { name: "truth".into(), values: t.truth.clone() }];
        if let Some(m) = &t.measured {
            series.push(Series { name: "measured".into(), values: m.clone() });
        }
        series.extend(t.estimates.iter().map(|(e, v)| Series { name: e.label().into(), values: v.clone() }));
        let chart = LineChart {
            title: format!("{}: voltage at bus {}", r.name, t.bus),
            x_label: "test sample".into(),
            y_label: "V [pu]".into(),
            series,
        };
        write(format!("{}_trace.{ext}", r.name), backend.line_chart(&chart))?;
    }
    let table = compare_table(reports);
    write("table.csv".into(), table.to_csv())?;
    write("table.txt".into(), table.to_text())?;

    let groups: Vec<String> = reports.iter().map(|r| r.name.clone()).collect();
    let bars = |pick: fn(&Metrics) -> f64| -> Vec<Series> {
        Estimator::ALL
            .iter()
            .filter(|e| reports.iter().any(|r| r.get(**e).is_some()))
            .map(|e| Series {
                name: e.label().into(),
                values: reports.iter().map(|r| r.get(*e).map_or(f64::NAN, pick)).collect(),
            })
            .collect()
    };
    let voltage = BarChart {
        title: "Voltage RMSE".into(),
        y_label: "RMSE [pu]".into(),
        groups: groups.clone(),
        series: bars(|m| m.voltage_rmse),
    };
    let loading =
        BarChart { title: "Line loading RMSE".into(), y_label: "RMSE [%]".into(), groups, series: bars(|m| m.loading_rmse_lines) };
    write(format!("voltage_rmse.{ext}"), backend.bar_chart(&voltage))?;
    write(format!("loading_rmse.{ext}"), backend.bar_chart(&loading))?;
    Ok(())
}

/// Runs `specs` one after the other.
pub fn run_all(
    specs: &[CaseStudySpec],
    network: &GridNetwork,
    scenario: &ScenarioConfig,
    dataset: &Dataset,
    models: &Models,
) -> Result<Vec<CaseReport>> {
    specs.iter().map(|s| run_case_study(s, network, scenario, dataset, models)).collect()
}
