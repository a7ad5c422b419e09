//! Synthetic datasets: Monte-Carlo load scenarios, power-flow truths, noisy
//! meter readings, virtual measurements, pseudomeasurements and the
//! train/validation/test split.
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, purpose,
//! sample index)`, so generating sample `k` never depends on how many
//! samples were generated before it.

mod io;
mod profiles;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::acpf::{solve_power_flow, InjectionSpec};
use crate::error::{Error, Result};
use crate::grid::GridNetwork;
use crate::pf_equations::{Measurement, MeasurementKind, MeasurementSet, StateVector};

pub use io::{load_dataset, save_dataset, DATASET_SCHEMA};
pub use profiles::{
    BusProfile, FlowMeter, MeterConfig, ProfileClass, Profiles, ScenarioConfig, Side, HOURS, SCENARIO_SCHEMA,
};

/// Lower bound on stored measurement sigma.
pub const SIGMA_FLOOR: f64 = 1e-4;
/// Sigma of virtual (equality-like) measurements.
pub const SIGMA_VIRTUAL: f64 = 1e-5;
pub const DEFAULT_UNCERTAINTY: f64 = 0.15;
pub const DEFAULT_SIGMA_PSEUDO: f64 = 0.30;

const STREAM_LOADS: u64 = 0x6c6f_6164;
const STREAM_NOISE: u64 = 0x6e6f_6973;
const STREAM_SPLIT: u64 = 0x7370_6c74;

/// Deterministic RNG for one `(seed, purpose, index)` triple.
pub fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.rotate_left(17));
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLevel {
    Low,
    Default,
    High,
}

impl std::str::FromStr for NoiseLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(NoiseLevel::Low),
            "default" => Ok(NoiseLevel::Default),
            "high" => Ok(NoiseLevel::High),
            _ => Err(Error::Config(format!("unknown noise level {s:?}"))),
        }
    }
}

/// Relative standard deviations of meter noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_v: f64,
    pub sigma_i: f64,
    pub sigma_pq: f64,
    pub sigma_pseudo: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn level(level: NoiseLevel, seed: u64) -> Self {
        let (vi, pq) = match level {
            NoiseLevel::Low => (0.005, 0.01),
            NoiseLevel::Default => (0.01, 0.02),
            NoiseLevel::High => (0.03, 0.05),
        };
        NoiseSpec { sigma_v: vi, sigma_i: vi, sigma_pq: pq, sigma_pseudo: DEFAULT_SIGMA_PSEUDO, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_v, self.sigma_i, self.sigma_pq, self.sigma_pseudo];
        if all.iter().all(|s| *s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("noise sigmas must be positive".into()))
        }
    }

    fn relative_sigma(&self, kind: &MeasurementKind) -> f64 {
        use MeasurementKind::*;
        match kind {
            VBus(_) | ThetaBus(_) => self.sigma_v,
            IFlowFwd(_) | IFlowRev(_) => self.sigma_i,
            _ => self.sigma_pq,
        }
    }
}

/// Draws `n_samples` load scenarios. Sample `k` is hour `k % 24` of the
/// profiles with every profiled bus scaled by an independent `1 + u`,
/// `u ~ Normal(0, uncertainty^2)`.
pub fn sample_load_scenarios(
    profiles: &Profiles,
    n_samples: usize,
    uncertainty: f64,
    seed: u64,
) -> Result<Vec<InjectionSpec>> {
    if !(0.0..1.0).contains(&uncertainty) {
        return Err(Error::Config(format!("uncertainty {uncertainty} outside [0, 1)")));
    }
    let normal = Normal::new(0.0, uncertainty).expect("finite std");
    Ok((0..n_samples)
        .map(|k| {
            let mut rng = stream_rng(seed, STREAM_LOADS, k as u64);
            let mut spec = profiles.base_injections(k % HOURS);
            for p in profiles.iter() {
                let u = if uncertainty > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                spec.p[p.bus] *= 1.0 + u;
                spec.q[p.bus] *= 1.0 + u;
            }
            spec
        })
        .collect())
}

fn measured_value(kind: MeasurementKind, truth: &StateVector, network: &GridNetwork) -> Result<f64> {
    let set = [Measurement::new(kind, 0.0, 1.0)];
    Ok(crate::pf_equations::measurement_function(truth, &set, network)?[0])
}

/// The metered quantities, in a fixed order: voltage meters, then for each
/// flow meter `P`, `Q`, `I` at its side, then angle meters when enabled.
pub fn metered_kinds(meters: &MeterConfig) -> Vec<MeasurementKind> {
    use MeasurementKind::*;
    let mut kinds: Vec<MeasurementKind> = meters.voltage.iter().map(|&b| VBus(b)).collect();
    for f in &meters.flow {
        match f.side {
            Side::From => kinds.extend([PFlowFwd(f.branch), QFlowFwd(f.branch), IFlowFwd(f.branch)]),
            Side::To => kinds.extend([PFlowRev(f.branch), QFlowRev(f.branch), IFlowRev(f.branch)]),
        }
    }
    if meters.angle {
        kinds.extend(meters.voltage.iter().map(|&b| ThetaBus(b)));
    }
    kinds
}

/// Virtual measurements: slack reference, zero injections, open-line flows.
pub fn virtual_measurements(network: &GridNetwork) -> MeasurementSet {
    use MeasurementKind::*;
    let s = network.slack_index();
    let mut set = vec![
        Measurement::new(VBus(s), 1.0, SIGMA_VIRTUAL).virtual_(),
        Measurement::new(ThetaBus(s), 0.0, SIGMA_VIRTUAL).virtual_(),
    ];
    for bus in network.buses().iter().filter(|b| b.is_zero_injection) {
        set.push(Measurement::new(PInj(bus.id), 0.0, SIGMA_VIRTUAL).virtual_());
        set.push(Measurement::new(QInj(bus.id), 0.0, SIGMA_VIRTUAL).virtual_());
    }
    for br in network.branches().iter().filter(|b| !b.is_closed) {
        for kind in [PFlowFwd(br.id), QFlowFwd(br.id), PFlowRev(br.id), QFlowRev(br.id)] {
            set.push(Measurement::new(kind, 0.0, SIGMA_VIRTUAL).virtual_());
        }
    }
    set
}

/// Noisy readings of every metered quantity followed by the virtual
/// measurements. A reading is `q (1 + eps)`, `eps ~ Normal(0, sigma_rel^2)`;
/// its stored sigma is `sigma_rel |q|`, floored at [`SIGMA_FLOOR`].
pub fn synthesize_measurements<R: Rng>(
    truth: &StateVector,
    network: &GridNetwork,
    meters: &MeterConfig,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<MeasurementSet> {
    meters.validate(network)?;
    noise.validate()?;
    let mut set = MeasurementSet::new();
    for kind in metered_kinds(meters) {
        let q = measured_value(kind, truth, network)?;
        let rel = noise.relative_sigma(&kind);
        let eps: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * rel;
        set.push(Measurement::new(kind, q * (1.0 + eps), (rel * q.abs()).max(SIGMA_FLOOR)));
    }
    set.extend(virtual_measurements(network));
    Ok(set)
}

/// Appends profile-valued `P_inj` / `Q_inj` pseudomeasurements at every
/// profiled bus that has no injection measurement yet.
pub fn add_pseudomeasurements(
    mut set: MeasurementSet,
    network: &GridNetwork,
    profiles: &Profiles,
    hour: usize,
    noise: &NoiseSpec,
) -> MeasurementSet {
    let mut covered = vec![false; network.n()];
    for m in &set {
        if let MeasurementKind::PInj(i) | MeasurementKind::QInj(i) = m.kind {
            covered[i] = true;
        }
    }
    for p in profiles.iter() {
        if covered[p.bus] {
            continue;
        }
        let (pp, qq) = p.injection(hour);
        for (kind, value) in [(MeasurementKind::PInj(p.bus), pp), (MeasurementKind::QInj(p.bus), qq)] {
            let sigma = (noise.sigma_pseudo * value.abs()).max(SIGMA_FLOOR);
            set.push(Measurement::new(kind, value, sigma).pseudo());
        }
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Tags `n` samples with a seeded 80/10/10-style split. Train and
/// validation sizes are rounded; test takes the remainder.
pub fn split_dataset(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<Vec<Split>> {
    if n == 0 {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| *r < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config("split ratios must be non-negative and sum to 1".into()));
    }
    let n_train = ((n as f64) * a).round() as usize;
    let n_val = (((n as f64) * b).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, STREAM_SPLIT, 0));
    let mut tags = vec![Split::Test; n];
    for (rank, &k) in order.iter().enumerate() {
        if rank < n_train {
            tags[k] = Split::Train;
        } else if rank < n_train + n_val {
            tags[k] = Split::Val;
        }
    }
    Ok(tags)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z: MeasurementSet,
    pub truth: StateVector,
    pub injections: InjectionSpec,
    pub hour: usize,
    /// 24-sample scenario block the sample belongs to.
    pub block: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub grid: String,
    pub n_samples: usize,
    pub seed: u64,
    pub uncertainty: f64,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&k| self.split[k] == split).collect()
    }

    pub fn subset(&self, split: Split) -> Vec<&Sample> {
        self.indices(split).into_iter().map(|k| &self.samples[k]).collect()
    }

    /// Copy with every truth vector replaced by zeros. Only meaningful for
    /// checking that a code path never reads labels.
    pub fn with_truth_zeroed(&self) -> Dataset {
        let mut ds = self.clone();
        for s in &mut ds.samples {
            let n = s.truth.n();
            s.truth = StateVector::new_unchecked(vec![0.0; n], vec![0.0; n], s.truth.slack());
        }
        ds
    }
}

/// Scales every generator's injection by `1 + gen_factor` and every load's
/// by `1 + load_factor`.
pub fn apply_load_shift(spec: &InjectionSpec, profiles: &Profiles, gen_factor: f64, load_factor: f64) -> InjectionSpec {
    let mut out = spec.clone();
    for p in profiles.iter() {
        let f = if p.class.is_generation() { 1.0 + gen_factor } else { 1.0 + load_factor };
        out.p[p.bus] *= f;
        out.q[p.bus] *= f;
    }
    out
}

/// Solves the power flow for one scenario and synthesizes its measurements.
pub fn build_sample(
    network: &GridNetwork,
    meters: &MeterConfig,
    profiles: &Profiles,
    injections: InjectionSpec,
    index: usize,
    noise: &NoiseSpec,
) -> Result<Sample> {
    let truth = solve_power_flow(network, &injections, 1e-10, 30)?.state;
    let z = measure(network, meters, profiles, &truth, index, noise)?;
    Ok(Sample { z, truth, injections, hour: index % HOURS, block: index / HOURS })
}

/// Meter readings, virtual measurements and pseudomeasurements of sample
/// `index`, drawn from that sample's noise stream.
pub fn measure(
    network: &GridNetwork,
    meters: &MeterConfig,
    profiles: &Profiles,
    truth: &StateVector,
    index: usize,
    noise: &NoiseSpec,
) -> Result<MeasurementSet> {
    let mut rng = stream_rng(noise.seed, STREAM_NOISE, index as u64);
    let z = synthesize_measurements(truth, network, meters, noise, &mut rng)?;
    Ok(add_pseudomeasurements(z, network, profiles, index % HOURS, noise))
}

pub fn generate_dataset(
    network: &GridNetwork,
    config: &ScenarioConfig,
    grid_name: &str,
    n_samples: usize,
    noise: NoiseSpec,
    seed: u64,
) -> Result<Dataset> {
    let profiles = config.profiles(network)?;
    config.meters.validate(network)?;
    let scenarios = sample_load_scenarios(&profiles, n_samples, DEFAULT_UNCERTAINTY, seed)?;
    let samples = scenarios
        .into_iter()
        .enumerate()
        .map(|(k, inj)| build_sample(network, &config.meters, &profiles, inj, k, &noise))
        .collect::<Result<Vec<_>>>()?;
    let split = split_dataset(n_samples, (0.8, 0.1, 0.1), seed)?;
    Ok(Dataset {
        meta: DatasetMeta {
            grid: grid_name.to_string(),
            n_samples,
            seed,
            uncertainty: DEFAULT_UNCERTAINTY,
            noise,
        },
        samples,
        split,
    })
}

/// Exact power-flow quantities of a state, handy for noiseless checks.
pub fn exact_measurements(truth: &StateVector, network: &GridNetwork, kinds: &[MeasurementKind]) -> Result<MeasurementSet> {
    let set: MeasurementSet = kinds.iter().map(|&k| Measurement::new(k, 0.0, 1.0)).collect();
    let values = crate::pf_equations::measurement_function(truth, &set, network)?;
    Ok(set
        .into_iter()
        .zip(values)
        .map(|(mut m, v)| {
            m.value = v;
            m.sigma = (0.01 * v.abs()).max(SIGMA_FLOOR);
            m
        })
        .collect())
}

/// Every measurable quantity of a network: all bus voltages, injections and
/// both-end flows of closed branches.
pub fn full_meter_kinds(network: &GridNetwork) -> Vec<MeasurementKind> {
    use MeasurementKind::*;
    let mut kinds = Vec::new();
    for i in 0..network.n() {
        kinds.extend([VBus(i), PInj(i), QInj(i)]);
    }
    for br in network.branches().iter().filter(|b| b.is_closed) {
        kinds.extend([PFlowFwd(br.id), QFlowFwd(br.id), PFlowRev(br.id), QFlowRev(br.id)]);
    }
    kinds
}
