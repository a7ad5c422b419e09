use serde::{Deserialize, Serialize};

use crate::acpf::InjectionSpec;
use crate::error::{Error, Result};
use crate::grid::GridNetwork;

pub const HOURS: usize = 24;

#[rustfmt::skip]
const RESIDENTIAL: [f64; HOURS] = [
    0.35, 0.30, 0.28, 0.27, 0.28, 0.35, 0.55, 0.70, 0.65, 0.55, 0.50, 0.52,
    0.55, 0.50, 0.48, 0.52, 0.62, 0.80, 0.95, 1.00, 0.92, 0.78, 0.60, 0.45,
];
#[rustfmt::skip]
const COMMERCIAL: [f64; HOURS] = [
    0.30, 0.28, 0.27, 0.27, 0.28, 0.32, 0.45, 0.70, 0.90, 0.97, 1.00, 0.98,
    0.92, 0.95, 0.97, 0.93, 0.85, 0.70, 0.55, 0.45, 0.40, 0.36, 0.33, 0.31,
];
#[rustfmt::skip]
const GENERATION: [f64; HOURS] = [
    0.00, 0.00, 0.00, 0.00, 0.00, 0.02, 0.08, 0.20, 0.38, 0.56, 0.72, 0.85,
    0.95, 1.00, 0.95, 0.85, 0.70, 0.52, 0.32, 0.14, 0.04, 0.00, 0.00, 0.00,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileClass {
    Residential,
    Commercial,
    Generation,
}

impl ProfileClass {
    /// Normalized 24-hour shape, peak 1.
    pub fn shape(&self) -> &'static [f64; HOURS] {
        match self {
            ProfileClass::Residential => &RESIDENTIAL,
            ProfileClass::Commercial => &COMMERCIAL,
            ProfileClass::Generation => &GENERATION,
        }
    }

    pub fn is_generation(&self) -> bool {
        matches!(self, ProfileClass::Generation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusProfile {
    pub bus: usize,
    pub class: ProfileClass,
    pub p_peak_pu: f64,
    pub power_factor: f64,
}

impl BusProfile {
    /// Scheduled `(P, Q)` at `hour` in generator convention.
    pub fn injection(&self, hour: usize) -> (f64, f64) {
        let p = self.p_peak_pu * self.class.shape()[hour % HOURS];
        let q = p * self.power_factor.acos().tan();
        if self.class.is_generation() {
            (p, q)
        } else {
            (-p, -q)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    From,
    To,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMeter {
    pub branch: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterConfig {
    pub voltage: Vec<usize>,
    pub flow: Vec<FlowMeter>,
    #[serde(default)]
    pub angle: bool,
}

impl MeterConfig {
    pub fn validate(&self, network: &GridNetwork) -> Result<()> {
        if self.voltage.is_empty() {
            return Err(Error::Config("at least one voltage meter is required".into()));
        }
        if let Some(b) = self.voltage.iter().find(|&&b| b >= network.n()) {
            return Err(Error::Config(format!("voltage meter at unknown bus {b}")));
        }
        if let Some(f) = self.flow.iter().find(|f| f.branch >= network.n_branches()) {
            return Err(Error::Config(format!("flow meter on unknown branch {}", f.branch)));
        }
        Ok(())
    }
}

/// Per-bus load and generation profiles of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    by_bus: Vec<Option<BusProfile>>,
}

impl Profiles {
    pub fn new(network: &GridNetwork, profiles: Vec<BusProfile>) -> Result<Self> {
        let mut by_bus = vec![None; network.n()];
        for p in profiles {
            if p.bus >= network.n() {
                return Err(Error::Config(format!("profile for unknown bus {}", p.bus)));
            }
            let bus = network.bus(p.bus);
            if bus.is_slack || bus.is_zero_injection {
                return Err(Error::Config(format!("bus {} cannot carry a load profile", p.bus)));
            }
            if !(p.power_factor > 0.0 && p.power_factor <= 1.0) {
                return Err(Error::Config(format!("bus {} power factor out of (0, 1]", p.bus)));
            }
            if by_bus[p.bus].is_some() {
                return Err(Error::Config(format!("duplicate profile for bus {}", p.bus)));
            }
            let bus = p.bus;
            by_bus[bus] = Some(p);
        }
        for bus in network.buses() {
            if !bus.is_slack && !bus.is_zero_injection && by_bus[bus.id].is_none() {
                return Err(Error::Config(format!("load bus {} has no profile", bus.id)));
            }
        }
        Ok(Profiles { by_bus })
    }

    pub fn get(&self, bus: usize) -> Option<&BusProfile> {
        self.by_bus.get(bus).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = &BusProfile> {
        self.by_bus.iter().flatten()
    }

    pub fn n(&self) -> usize {
        self.by_bus.len()
    }

    /// Profile injections of every bus at `hour`; zero at the slack and at
    /// zero-injection buses.
    pub fn base_injections(&self, hour: usize) -> InjectionSpec {
        let mut spec = InjectionSpec::zeros(self.n());
        for p in self.iter() {
            let (pp, qq) = p.injection(hour);
            spec.p[p.bus] = pp;
            spec.q[p.bus] = qq;
        }
        spec
    }
}

pub const SCENARIO_SCHEMA: &str = "dsse-scenario/1";

/// Profiles and meter placement for one grid, stored next to the grid file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema: String,
    pub profiles: Vec<BusProfile>,
    pub meters: MeterConfig,
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if cfg.schema != SCENARIO_SCHEMA {
            return Err(Error::Parse(format!("unsupported scenario schema {:?}", cfg.schema)));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// `case14.grid` -> `case14.scenario.json`.
    pub fn sibling_path(grid_path: &std::path::Path) -> std::path::PathBuf {
        let stem = grid_path.file_stem().and_then(|s| s.to_str()).unwrap_or("grid");
        grid_path.with_file_name(format!("{stem}.scenario.json"))
    }

    pub fn profiles(&self, network: &GridNetwork) -> Result<Profiles> {
        Profiles::new(network, self.profiles.clone())
    }
}
