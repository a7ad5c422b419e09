//! Hyper heterogeneous multigraph neural network (H2MGNN).
//!
//! Vertices are bus interfaces. Hyperedges come in two classes: every bus is
//! a one-port hyperedge and every branch a two-port hyperedge. Each
//! iteration `t = 0..T-1` first adds to every vertex latent the sum of the
//! messages from its incident hyperedge ports, then updates every hyperedge
//! latent and every bus output from the fresh vertex latents. All increments
//! are scaled by `1 / T`.
//!
//! Every MLP input is the concatenation `(t/T, h_v, h_e, x_e, z_e)`, where
//! `h_v` is the latent of the port's vertex. Branches carry no output, so
//! `x_e` is dropped for them, and their latent update sees both port
//! vertices: `(t/T, h_from, h_to, h_e, z_e)`.
//!
//! All MLPs end in a linear layer. The bus decoder's increments are scaled
//! by [`OUTPUT_SCALE`], so a unit decoder output held for `T` steps moves an
//! output that far from its start `(V, theta) = (1, 0)`. The `V` channel then goes through
//! [`Var::pos_tail`] to stay positive. Both outputs are pinned at the slack
//! bus.

mod checkpoint;
mod features;

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::grid::GridNetwork;
use crate::pf_equations::{Measurement, StateVector};
use crate::scenario::stream_rng;

pub use checkpoint::{load_model, model_from_bytes, model_to_bytes, save_model, MODEL_SCHEMA};
pub use features::{encode_features, FeatureNormalizer, Features, BRANCH_FEATURES, BUS_FEATURES, FEATURE_LAYOUT_VERSION};

/// Below this value the `V` output leaves the identity and decays
/// exponentially towards 0.
pub const V_TAIL: f64 = 0.5;

/// Per-channel gain on the decoder increments, (V, angle).
pub const OUTPUT_SCALE: [f64; 2] = [0.1, 0.1];

const STREAM_INIT: u64 = 0x696e_6974;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Latent dimension.
    pub d: usize,
    /// Number of message-passing iterations.
    pub t_iters: usize,
    /// Weight layers per MLP.
    pub mlp_layers: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d: 40, t_iters: 7, mlp_layers: 3, mlp_hidden: 40, dropout: 0.4 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.t_iters == 0 || self.mlp_layers == 0 || self.mlp_hidden == 0 {
            return Err(Error::Config("d, T, mlp_layers and mlp_hidden must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// `(input, output)` width of every MLP, in [`ModelParams::mlps`] order.
    pub fn mlp_shapes(&self) -> [(usize, usize); 6] {
        let d = self.d;
        let bus_in = 1 + d + d + 2 + BUS_FEATURES;
        let port_in = 1 + d + d + BRANCH_FEATURES;
        let branch_in = 1 + 2 * d + d + BRANCH_FEATURES;
        [(bus_in, d), (port_in, d), (port_in, d), (bus_in, d), (bus_in, 2), (branch_in, d)]
    }

    fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat(self.mlp_hidden).take(self.mlp_layers - 1));
        sizes.push(output);
        sizes
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.mlp_shapes()
            .iter()
            .map(|&(i, o)| self.layer_sizes(i, o).windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`.
    pub w: Tensor,
    /// `1 x fan_out`.
    pub b: Tensor,
}

/// Fully connected net with `tanh` on hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub tanh_output: bool,
}

impl Mlp {
    fn glorot(sizes: &[usize], tanh_output: bool, rng: &mut ChaCha8Rng) -> Mlp {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let std = (2.0 / (w[0] + w[1]) as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
                Dense { w: Tensor::new(w[0], w[1], data), b: Tensor::zeros(1, w[1]) }
            })
            .collect();
        Mlp { layers, tanh_output }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").w.cols()
    }
}

/// All trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Message of a bus hyperedge to its vertex.
    pub bus_message: Mlp,
    /// Messages of a branch to its from and to vertices.
    pub branch_message: [Mlp; 2],
    pub bus_latent: Mlp,
    /// Increment of the bus output `(V, theta)`.
    pub bus_decoder: Mlp,
    pub branch_latent: Mlp,
}

impl ModelParams {
    pub fn mlps(&self) -> [&Mlp; 6] {
        let [f, t] = &self.branch_message;
        [&self.bus_message, f, t, &self.bus_latent, &self.bus_decoder, &self.branch_latent]
    }

    pub fn mlps_mut(&mut self) -> [&mut Mlp; 6] {
        let [f, t] = &mut self.branch_message;
        [&mut self.bus_message, f, t, &mut self.bus_latent, &mut self.bus_decoder, &mut self.branch_latent]
    }

    /// Every weight and bias tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.mlps().into_iter().flat_map(|m| m.layers.iter().flat_map(|l| [&l.w, &l.b])).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlps_mut()
            .into_iter()
            .flat_map(|m| m.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.data()).map(|x| x * x).sum()
    }
}

/// Glorot-normal weights, zero biases.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = stream_rng(seed, STREAM_INIT, 0);
    let shapes = config.mlp_shapes();
    let mut mlp = |k: usize, tanh_output: bool| {
        let (i, o) = shapes[k];
        Mlp::glorot(&config.layer_sizes(i, o), tanh_output, &mut rng)
    };
    Ok(ModelParams {
        bus_message: mlp(0, false),
        branch_message: [mlp(1, false), mlp(2, false)],
        bus_latent: mlp(3, false),
        bus_decoder: mlp(4, false),
        branch_latent: mlp(5, false),
    })
}

/// A trained (or freshly initialized) estimator: architecture, weights and
/// the frozen input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub normalizer: FeatureNormalizer,
    pub params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    Eval,
}

/// Several samples of one network stacked into a disjoint union: sample `s`
/// owns bus rows `s n .. (s+1) n` and branch rows `s nb .. (s+1) nb`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n_samples: usize,
    pub n_buses: usize,
    pub n_branches: usize,
    pub bus: Tensor,
    pub branch: Tensor,
    from: Rc<Vec<usize>>,
    to: Rc<Vec<usize>>,
    slack: usize,
}

impl Batch {
    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn new<'a>(network: &GridNetwork, features: impl IntoIterator<Item = &'a Features>) -> Batch {
        let (n, nb) = (network.n(), network.n_branches());
        let (mut bus, mut branch, mut from, mut to) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut b = 0;
        for (s, f) in features.into_iter().enumerate() {
            b += 1;
            assert_eq!(f.bus.shape(), (n, BUS_FEATURES), "bus features do not match the network");
            assert_eq!(f.branch.shape(), (nb, BRANCH_FEATURES), "branch features do not match the network");
            bus.extend_from_slice(f.bus.data());
            branch.extend_from_slice(f.branch.data());
            for br in network.branches() {
                from.push(s * n + br.from_bus);
                to.push(s * n + br.to_bus);
            }
        }
        Batch {
            n_samples: b,
            n_buses: n,
            n_branches: nb,
            bus: Tensor::new(b * n, BUS_FEATURES, bus),
            branch: Tensor::new(b * nb, BRANCH_FEATURES, branch),
            from: Rc::new(from),
            to: Rc::new(to),
            slack: network.slack_index(),
        }
    }

    /// Flattened from-bus index (into the `B n` bus rows) of every branch row.
    pub fn from_index(&self) -> Rc<Vec<usize>> {
        self.from.clone()
    }

    pub fn to_index(&self) -> Rc<Vec<usize>> {
        self.to.clone()
    }
}

/// Bus outputs of a batch: `B n x 1` columns.
#[derive(Clone, Copy)]
pub struct Output<'t> {
    pub v: Var<'t>,
    pub theta: Var<'t>,
}

impl Output<'_> {
    /// Splits the stacked outputs into per-sample states.
    pub fn states(&self, batch: &Batch) -> Vec<StateVector> {
        let (v, th) = (self.v.value(), self.theta.value());
        let n = batch.n_buses;
        (0..batch.n_samples)
            .map(|s| {
                StateVector::new_unchecked(
                    v.data()[s * n..(s + 1) * n].to_vec(),
                    th.data()[s * n..(s + 1) * n].to_vec(),
                    batch.slack,
                )
            })
            .collect()
    }
}

/// Weights of a model placed on a tape, in [`ModelParams::tensors`] order.
pub struct ParamVars<'t> {
    pub vars: Vec<Var<'t>>,
}

impl<'t> ParamVars<'t> {
    /// Differentiable copies of every weight.
    pub fn trainable(tape: &'t Tape, params: &ModelParams) -> Self {
        ParamVars { vars: params.tensors().into_iter().map(|t| tape.var(t.clone())).collect() }
    }

    /// Constant copies, for inference.
    pub fn frozen(tape: &'t Tape, params: &ModelParams) -> Self {
        ParamVars { vars: params.tensors().into_iter().map(|t| tape.constant(t.clone())).collect() }
    }
}

struct MlpVars<'a, 't> {
    layers: &'a [Var<'t>],
    tanh_output: bool,
}

impl<'t> MlpVars<'_, 't> {
    fn apply(&self, x: Var<'t>, dropout: &mut Option<(f64, &mut ChaCha8Rng)>) -> Var<'t> {
        let n_layers = self.layers.len() / 2;
        let mut h = x;
        for l in 0..n_layers {
            let last = l + 1 == n_layers;
            let mask = match dropout {
                Some((rate, rng)) if !last => {
                    let keep = 1.0 / (1.0 - *rate);
                    let (r, c) = (h.rows(), self.layers[2 * l].cols());
                    let m = (0..r * c).map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep }).collect();
                    Some(Rc::new(Tensor::new(r, c, m)))
                }
                _ => None,
            };
            h = h.dense(self.layers[2 * l], self.layers[2 * l + 1], !last || self.tanh_output, mask);
        }
        h
    }
}

/// Runs `T` iterations on a batch. In [`Mode::Train`] dropout draws from
/// `rng`, which is required when the dropout rate is positive.
pub fn forward<'t>(
    tape: &'t Tape,
    config: &ModelConfig,
    params: &ParamVars<'t>,
    batch: &Batch,
    mode: Mode,
    rng: Option<&mut ChaCha8Rng>,
) -> Output<'t> {
    let d = config.d;
    let big_t = config.t_iters as f64;
    let inv_t = 1.0 / big_t;
    let (nv, ne) = (batch.n_samples * batch.n_buses, batch.n_samples * batch.n_branches);

    let mut dropout = match (mode, rng) {
        (Mode::Train, Some(rng)) if config.dropout > 0.0 => Some((config.dropout, rng)),
        (Mode::Train, None) if config.dropout > 0.0 => panic!("train mode with dropout needs an rng"),
        _ => None,
    };

    let mut offset = 0;
    let mut take = |mlp_layers: usize, tanh_output: bool| {
        let layers = &params.vars[offset..offset + 2 * mlp_layers];
        offset += 2 * mlp_layers;
        MlpVars { layers, tanh_output }
    };
    let l = config.mlp_layers;
    let bus_message = take(l, false);
    let from_message = take(l, false);
    let to_message = take(l, false);
    let bus_latent = take(l, false);
    let bus_decoder = take(l, false);
    let branch_latent = take(l, false);

    let z_bus = tape.constant(batch.bus.clone());
    let z_branch = tape.constant(batch.branch.clone());

    let mut h_v = tape.constant(Tensor::zeros(nv, d));
    let mut h_bus = tape.constant(Tensor::zeros(nv, d));
    let mut h_branch = tape.constant(Tensor::zeros(ne, d));
    let mut x_bus = {
        let mut x = Tensor::zeros(nv, 2);
        for r in 0..nv {
            x.data_mut()[2 * r] = 1.0;
        }
        tape.constant(x)
    };

    let out_scale = tape.constant(Tensor::new(2, 2, vec![OUTPUT_SCALE[0], 0.0, 0.0, OUTPUT_SCALE[1]]));

    for t in 0..config.t_iters {
        let tt = t as f64 / big_t;
        let t_bus = tape.constant(Tensor::filled(nv, 1, tt));
        let t_branch = tape.constant(Tensor::filled(ne, 1, tt));

        // Vertex messages from iteration-start values.
        let m_bus = bus_message.apply(tape.concat_cols(&[t_bus, h_v, h_bus, x_bus, z_bus]), &mut dropout);
        let h_from = h_v.gather_rows(batch.from.clone());
        let h_to = h_v.gather_rows(batch.to.clone());
        let m_from = from_message.apply(tape.concat_cols(&[t_branch, h_from, h_branch, z_branch]), &mut dropout);
        let m_to = to_message.apply(tape.concat_cols(&[t_branch, h_to, h_branch, z_branch]), &mut dropout);
        let delta_v = m_bus + m_from.scatter_add_rows(batch.from.clone(), nv) + m_to.scatter_add_rows(batch.to.clone(), nv);
        h_v = h_v + delta_v.scale(inv_t);

        // Hyperedge updates see the updated vertex latents.
        let bus_in = tape.concat_cols(&[t_bus, h_v, h_bus, x_bus, z_bus]);
        let d_h_bus = bus_latent.apply(bus_in, &mut dropout);
        let d_x_bus = bus_decoder.apply(bus_in, &mut dropout);
        let h_from = h_v.gather_rows(batch.from.clone());
        let h_to = h_v.gather_rows(batch.to.clone());
        let d_h_branch =
            branch_latent.apply(tape.concat_cols(&[t_branch, h_from, h_to, h_branch, z_branch]), &mut dropout);
        h_bus = h_bus + d_h_bus.scale(inv_t);
        x_bus = x_bus + d_x_bus.matmul(out_scale).scale(inv_t);
        h_branch = h_branch + d_h_branch.scale(inv_t);
    }

    let free: Vec<f64> = (0..nv).map(|r| if r % batch.n_buses == batch.slack { 0.0 } else { 1.0 }).collect();
    let pinned = tape.constant(Tensor::column(free.iter().map(|f| 1.0 - f).collect()));
    let free = tape.constant(Tensor::column(free));
    let v = x_bus.col(0).pos_tail(V_TAIL) * free + pinned;
    let theta = x_bus.col(1) * free;
    Output { v, theta }
}

impl Model {
    /// Fits the input normalization on `training` and initializes weights.
    pub fn new<'a>(
        network: &GridNetwork,
        config: ModelConfig,
        training: impl IntoIterator<Item = &'a [Measurement]> + Clone,
        seed: u64,
    ) -> Result<Model> {
        let normalizer = FeatureNormalizer::fit(network, training)?;
        let params = init_model(&config, seed)?;
        Ok(Model { config, normalizer, params })
    }

    pub fn batch(&self, network: &GridNetwork, sets: &[&[Measurement]]) -> Result<Batch> {
        let features = sets.iter().map(|z| self.normalizer.encode(network, z)).collect::<Result<Vec<_>>>()?;
        Ok(Batch::new(network, &features))
    }

    /// Eval-mode estimates for several measurement sets at once.
    pub fn predict_batch(&self, network: &GridNetwork, sets: &[&[Measurement]]) -> Result<Vec<StateVector>> {
        let batch = self.batch(network, sets)?;
        let tape = Tape::new();
        let params = ParamVars::frozen(&tape, &self.params);
        let out = forward(&tape, &self.config, &params, &batch, Mode::Eval, None);
        Ok(out.states(&batch))
    }

    pub fn predict(&self, network: &GridNetwork, z: &[Measurement]) -> Result<StateVector> {
        Ok(self.predict_batch(network, &[z])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_network;
    use crate::scenario::{generate_dataset, NoiseLevel, NoiseSpec, ScenarioConfig};

    fn fixture(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }

    #[test]
    fn param_count_matches_closed_form() {
        let cfg = ModelConfig::default();
        let p = init_model(&cfg, 1).unwrap();
        assert_eq!(p.count(), cfg.param_count());
        // bus: 97 -> 40 -> 40 -> 40 or 2; port: 105; branch latent: 145.
        let mlp = |i: usize, o: usize| i * 40 + 40 + 40 * 40 + 40 + 40 * o + o;
        let expected = mlp(97, 40) * 2 + mlp(97, 2) + mlp(105, 40) * 2 + mlp(145, 40);
        assert_eq!(cfg.param_count(), expected);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::default();
        assert_eq!(init_model(&cfg, 5).unwrap(), init_model(&cfg, 5).unwrap());
        assert_ne!(init_model(&cfg, 5).unwrap(), init_model(&cfg, 6).unwrap());
        assert!(init_model(&cfg, 5).unwrap().tensors().iter().skip(1).step_by(2).all(|b| b.max_abs() == 0.0));
    }

    #[test]
    fn zero_parameters_return_the_initial_state() {
        let net = load_network(fixture("case14.grid")).unwrap();
        let cfg = ModelConfig { t_iters: 1, ..Default::default() };
        let mut params = init_model(&cfg, 0).unwrap();
        for t in params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let model = Model { config: cfg, normalizer: FeatureNormalizer::identity(), params };
        let z = crate::scenario::virtual_measurements(&net);
        let x = model.predict(&net, &z).unwrap();
        assert!(x.v().iter().all(|&v| v == 1.0));
        assert!(x.theta().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_pins_slack() {
        let net = load_network(fixture("case14.grid")).unwrap();
        let cfg = ScenarioConfig::load(fixture("case14.scenario.json")).unwrap();
        let ds = generate_dataset(&net, &cfg, "case14", 4, NoiseSpec::level(NoiseLevel::Default, 1), 1).unwrap();
        let sets: Vec<&[Measurement]> = ds.samples.iter().map(|s| s.z.as_slice()).collect();
        let model = Model::new(&net, ModelConfig::default(), sets.clone(), 3).unwrap();
        let a = model.predict_batch(&net, &sets).unwrap();
        let b = model.predict_batch(&net, &sets).unwrap();
        assert_eq!(a, b);
        for x in &a {
            assert_eq!(x.theta()[net.slack_index()], 0.0);
            assert_eq!(x.v()[net.slack_index()], 1.0);
            assert!(x.v().iter().all(|v| (v - 1.0).abs() <= OUTPUT_SCALE[0] + 1e-12));
            assert!(x.theta().iter().all(|t| t.abs() <= OUTPUT_SCALE[1] + 1e-12));
        }
        // Batched and single-sample inference agree exactly.
        assert_eq!(model.predict(&net, sets[2]).unwrap(), a[2]);
    }
}
