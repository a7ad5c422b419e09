//! Finite-difference checks of gradients through the full model and losses.

use std::path::PathBuf;
use std::rc::Rc;

use dsse::autodiff::{gradient_check, Tape, Var};
use dsse::grid::{load_network, GridNetwork};
use dsse::h2mgnn::{forward, init_model, Batch, FeatureNormalizer, Mode, ModelConfig, ModelParams, ParamVars};
use dsse::pf_equations::Measurement;
use dsse::scenario::{generate_dataset, Dataset, NoiseLevel, NoiseSpec, ScenarioConfig};
use dsse::train::{supervised_loss, weak_loss, LossConfig, Physics};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn setup(grid: &str, n: usize) -> (GridNetwork, Dataset) {
    let net = load_network(fixture(&format!("{grid}.grid"))).unwrap();
    let cfg = ScenarioConfig::load(fixture(&format!("{grid}.scenario.json"))).unwrap();
    let ds = generate_dataset(&net, &cfg, grid, n, NoiseSpec::level(NoiseLevel::Default, 5), 5).unwrap();
    (net, ds)
}

fn small_config() -> ModelConfig {
    ModelConfig { d: 3, t_iters: 2, mlp_layers: 2, mlp_hidden: 4, dropout: 0.0 }
}

fn flatten(params: &ModelParams) -> Vec<f64> {
    params.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
}

/// Rebuilds the parameter variables from one flat column.
fn unflatten<'t>(x: Var<'t>, params: &ModelParams) -> ParamVars<'t> {
    let mut offset = 0;
    let vars = params
        .tensors()
        .iter()
        .map(|t| {
            let (r, c) = t.shape();
            let idx = Rc::new((offset..offset + r * c).collect());
            offset += r * c;
            x.gather_rows(idx).reshape(r, c)
        })
        .collect();
    ParamVars { vars }
}

fn check(grid: &str, weak: bool) -> f64 {
    let (net, ds) = setup(grid, 3);
    let config = small_config();
    let mut params = init_model(&config, 9).unwrap();
    // Shrink so outputs stay clear of the penalty hinges.
    for t in params.tensors_mut() {
        t.data_mut().iter_mut().for_each(|w| *w *= 0.3);
    }
    let sets: Vec<&[Measurement]> = ds.samples.iter().map(|s| s.z.as_slice()).collect();
    let nz = FeatureNormalizer::fit(&net, sets.iter().copied()).unwrap();
    let feats: Vec<_> = sets.iter().map(|z| nz.encode(&net, z).unwrap()).collect();
    let batch = Batch::new(&net, &feats);
    let ph = Physics::new(&net, &batch, &sets).unwrap();
    let truth: Vec<_> = ds.samples.iter().map(|s| &s.truth).collect();
    let lc = LossConfig::default();
    let x0 = flatten(&params);
    let gc = gradient_check(
        |tape: &Tape, x| {
            let pv = unflatten(x, &params);
            let out = forward(tape, &config, &pv, &batch, Mode::Eval, None);
            if weak {
                weak_loss(tape, &out, &ph, &lc).total
            } else {
                supervised_loss(tape, &out, &batch, &truth)
            }
        },
        &x0,
        1e-6,
    );
    gc.max_rel_error
}

#[test]
fn supervised_gradient_matches_finite_differences() {
    let err = check("case14", false);
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn weak_gradient_matches_finite_differences_case2() {
    let err = check("case2", true);
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn weak_gradient_matches_finite_differences_case14() {
    let err = check("case14", true);
    assert!(err < 1e-5, "max relative error {err}");
}
