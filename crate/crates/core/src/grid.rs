//! Grid data model.
//!
//! A [`GridNetwork`] holds buses and two-port branches (lines and
//! transformers share one class). All electrical quantities are per-unit on
//! a single system base. [`GridNetwork::to_h2mg`] turns the network into the
//! hypergraph view used by the neural estimator: every bus is both a vertex
//! and a one-port hyperedge, every branch is a two-port hyperedge.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GRID_SCHEMA: &str = "dsse-grid/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub is_slack: bool,
    pub is_zero_injection: bool,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: usize,
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series admittance `1 / (r + jx)`.
    pub y_series: Complex<f64>,
    /// Total shunt admittance; half is attached at each end.
    pub y_shunt: Complex<f64>,
    pub phase_shift: f64,
    pub is_closed: bool,
    pub rating_amps_pu: f64,
    pub is_transformer: bool,
    // Kept so that saving reproduces the file that was loaded.
    r_pu: f64,
    x_pu: f64,
}

impl Branch {
    /// Builds a branch from its series impedance and total shunt admittance.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: usize,
        from_bus: usize,
        to_bus: usize,
        r_pu: f64,
        x_pu: f64,
        y_shunt: Complex<f64>,
        phase_shift: f64,
        is_closed: bool,
        rating_amps_pu: f64,
        is_transformer: bool,
    ) -> Self {
        Branch {
            id,
            from_bus,
            to_bus,
            y_series: Complex::new(1.0, 0.0) / Complex::new(r_pu, x_pu),
            y_shunt,
            phase_shift,
            is_closed,
            rating_amps_pu,
            is_transformer,
            r_pu,
            x_pu,
        }
    }

    pub fn impedance(&self) -> (f64, f64) {
        (self.r_pu, self.x_pu)
    }

    pub fn ends(&self) -> [usize; 2] {
        [self.from_bus, self.to_bus]
    }
}

/// A validated distribution grid. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNetwork {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    slack_index: usize,
    base_mva: f64,
    /// Closed-or-open branches incident to each bus, in branch order.
    incident: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridFile {
    schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    base_mva: f64,
    buses: Vec<BusRecord>,
    branches: Vec<BranchRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BusRecord {
    id: usize,
    slack: bool,
    zero_injection: bool,
    base_kv: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchRecord {
    id: usize,
    from: usize,
    to: usize,
    r_pu: f64,
    x_pu: f64,
    g_shunt_pu: f64,
    b_shunt_pu: f64,
    shift_rad: f64,
    closed: bool,
    rating_pu: f64,
    transformer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base_mva: Option<f64>,
}

impl GridNetwork {
    /// Validates buses and branches and builds the network.
    pub fn new(buses: Vec<Bus>, branches: Vec<Branch>, base_mva: f64) -> Result<Self> {
        let invalid = |msg: String| Err(Error::Validation(msg));
        if buses.is_empty() {
            return invalid("network has no buses".into());
        }
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return invalid("base_mva must be positive".into());
        }
        for (k, bus) in buses.iter().enumerate() {
            if bus.id != k {
                return invalid(format!("bus ids are not dense: position {k} has id {}", bus.id));
            }
        }
        let slacks: Vec<usize> = buses.iter().filter(|b| b.is_slack).map(|b| b.id).collect();
        let slack_index = match slacks.as_slice() {
            [] => return invalid("no slack bus".into()),
            [s] => *s,
            _ => return invalid("multiple slack buses".into()),
        };
        if buses[slack_index].is_zero_injection {
            return invalid("slack bus must not be zero-injection".into());
        }
        let n = buses.len();
        for (k, br) in branches.iter().enumerate() {
            if br.id != k {
                return invalid(format!("branch ids are not dense: position {k} has id {}", br.id));
            }
            if br.from_bus >= n || br.to_bus >= n {
                return invalid(format!("branch {k} references an unknown bus"));
            }
            if br.from_bus == br.to_bus {
                return invalid(format!("branch {k} connects bus {} to itself", br.from_bus));
            }
            if !(br.rating_amps_pu > 0.0) {
                return invalid(format!("branch {k} rating must be positive"));
            }
            if !br.is_transformer && br.phase_shift != 0.0 {
                return invalid(format!("branch {k} has a phase shift but is not a transformer"));
            }
            if !(br.y_series.re.is_finite() && br.y_series.im.is_finite()) {
                return invalid(format!("branch {k} has zero series impedance"));
            }
        }

        let mut incident = vec![Vec::new(); n];
        for br in &branches {
            incident[br.from_bus].push(br.id);
            incident[br.to_bus].push(br.id);
        }

        // Closed-branch subgraph must reach every bus from the slack.
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([slack_index]);
        seen[slack_index] = true;
        while let Some(i) = queue.pop_front() {
            for &b in &incident[i] {
                let br = &branches[b];
                if !br.is_closed {
                    continue;
                }
                let j = if br.from_bus == i { br.to_bus } else { br.from_bus };
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return invalid(format!(
                "closed-branch subgraph is disconnected (bus {orphan} unreachable from slack)"
            ));
        }

        Ok(GridNetwork {
            buses,
            branches,
            slack_index,
            base_mva,
            incident,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GridFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.schema != GRID_SCHEMA {
            return Err(Error::Parse(format!(
                "unsupported schema {:?}, expected {GRID_SCHEMA:?}",
                file.schema
            )));
        }
        let buses = file
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                is_slack: b.slack,
                is_zero_injection: b.zero_injection,
                base_kv: b.base_kv,
            })
            .collect();
        let mut branches = Vec::with_capacity(file.branches.len());
        for b in &file.branches {
            if let Some(base) = b.base_mva {
                if base != file.base_mva {
                    return Err(Error::Validation(format!(
                        "mixed per-unit base: branch {} uses {base} MVA, network uses {} MVA",
                        b.id, file.base_mva
                    )));
                }
            }
            branches.push(Branch::new(
                b.id,
                b.from,
                b.to,
                b.r_pu,
                b.x_pu,
                Complex::new(b.g_shunt_pu, b.b_shunt_pu),
                b.shift_rad,
                b.closed,
                b.rating_pu,
                b.transformer,
            ));
        }
        GridNetwork::new(buses, branches, file.base_mva)
    }

    pub fn to_json_string(&self) -> String {
        let file = GridFile {
            schema: GRID_SCHEMA.to_string(),
            name: None,
            base_mva: self.base_mva,
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    slack: b.is_slack,
                    zero_injection: b.is_zero_injection,
                    base_kv: b.base_kv,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|b| BranchRecord {
                    id: b.id,
                    from: b.from_bus,
                    to: b.to_bus,
                    r_pu: b.r_pu,
                    x_pu: b.x_pu,
                    g_shunt_pu: b.y_shunt.re,
                    b_shunt_pu: b.y_shunt.im,
                    shift_rad: b.phase_shift,
                    closed: b.is_closed,
                    rating_pu: b.rating_amps_pu,
                    transformer: b.is_transformer,
                    base_mva: None,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("grid serialization is infallible")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn bus(&self, i: usize) -> &Bus {
        &self.buses[i]
    }

    pub fn branch(&self, b: usize) -> &Branch {
        &self.branches[b]
    }

    pub fn slack_index(&self) -> usize {
        self.slack_index
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    /// Branch indices incident to bus `i`.
    pub fn incident_branches(&self, i: usize) -> &[usize] {
        &self.incident[i]
    }

    /// Number of free state variables, `2n - 1`.
    pub fn n_state(&self) -> usize {
        2 * self.n() - 1
    }

    /// Relabels buses so that old bus `i` becomes bus `perm[i]`.
    pub fn permute_buses(&self, perm: &[usize]) -> Result<GridNetwork> {
        check_permutation(perm, self.n())?;
        let mut buses = vec![None; self.n()];
        for bus in &self.buses {
            let new_id = perm[bus.id];
            buses[new_id] = Some(Bus {
                id: new_id,
                ..bus.clone()
            });
        }
        let buses = buses.into_iter().map(|b| b.expect("perm is a bijection")).collect();
        let branches = self
            .branches
            .iter()
            .map(|br| Branch {
                from_bus: perm[br.from_bus],
                to_bus: perm[br.to_bus],
                ..br.clone()
            })
            .collect();
        GridNetwork::new(buses, branches, self.base_mva)
    }

    pub fn to_h2mg(&self) -> H2mgTopology {
        H2mgTopology::from_network(self)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Dimension(format!("permutation of length {} for {n} buses", perm.len())));
    }
    let mut hit = vec![false; n];
    for &p in perm {
        if p >= n || hit[p] {
            return Err(Error::Dimension("not a permutation".into()));
        }
        hit[p] = true;
    }
    Ok(())
}

pub fn load_network(path: impl AsRef<Path>) -> Result<GridNetwork> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GridNetwork::from_json_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HyperedgeClass {
    Bus,
    Branch,
}

/// Port index of a bus hyperedge's single port.
pub const PORT_BUS: usize = 0;
/// Port index of the from-end of a branch hyperedge.
pub const PORT_FROM: usize = 0;
/// Port index of the to-end of a branch hyperedge.
pub const PORT_TO: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Incidence {
    pub class: HyperedgeClass,
    pub edge: usize,
    pub port: usize,
}

/// Hypergraph view of a network: hyperedges per class with their ordered
/// ports, plus the incidence list of each vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct H2mgTopology {
    pub bus_ports: Vec<usize>,
    pub branch_ports: Vec<[usize; 2]>,
    pub incidence: Vec<Vec<Incidence>>,
}

impl H2mgTopology {
    fn from_network(network: &GridNetwork) -> Self {
        let n = network.n();
        let bus_ports: Vec<usize> = (0..n).collect();
        let branch_ports: Vec<[usize; 2]> = network.branches().iter().map(Branch::ends).collect();
        let mut incidence: Vec<Vec<Incidence>> = (0..n)
            .map(|i| {
                vec![Incidence {
                    class: HyperedgeClass::Bus,
                    edge: i,
                    port: PORT_BUS,
                }]
            })
            .collect();
        for (e, ends) in branch_ports.iter().enumerate() {
            for (port, &v) in ends.iter().enumerate() {
                incidence[v].push(Incidence {
                    class: HyperedgeClass::Branch,
                    edge: e,
                    port,
                });
            }
        }
        H2mgTopology {
            bus_ports,
            branch_ports,
            incidence,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.incidence.len()
    }

    pub fn total_incidence(&self) -> usize {
        self.incidence.iter().map(Vec::len).sum()
    }

    /// Vertex attached to `port` of hyperedge `edge` of `class`.
    pub fn port_vertex(&self, class: HyperedgeClass, edge: usize, port: usize) -> usize {
        match class {
            HyperedgeClass::Bus => {
                debug_assert_eq!(port, PORT_BUS);
                self.bus_ports[edge]
            }
            HyperedgeClass::Branch => self.branch_ports[edge][port],
        }
    }
}
