use std::path::PathBuf;

use rand::{Rng, SeedableRng};

use dsse::autodiff::{Tape, Tensor};
use dsse::grid::{load_network, GridNetwork};
use dsse::h2mgnn::{load_model, save_model, Model, ModelConfig, Output};
use dsse::pf_equations::{Measurement, StateVector};
use dsse::scenario::{generate_dataset, Dataset, NoiseLevel, NoiseSpec, ScenarioConfig, Split};
use dsse::train::{evaluate, train, weak_loss, LossConfig, Physics, TrainConfig, TrainMode};
use dsse::wls::wls_objective;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn setup(n: usize) -> (GridNetwork, Dataset) {
    let net = load_network(fixture("case14.grid")).unwrap();
    let cfg = ScenarioConfig::load(fixture("case14.scenario.json")).unwrap();
    let ds = generate_dataset(&net, &cfg, "case14", n, NoiseSpec::level(NoiseLevel::Default, 9), 9).unwrap();
    (net, ds)
}

fn small_model(net: &GridNetwork, ds: &Dataset) -> Model {
    let config = ModelConfig { d: 4, t_iters: 2, mlp_layers: 2, mlp_hidden: 8, dropout: 0.2 };
    let train_sets: Vec<&[Measurement]> = ds.subset(Split::Train).iter().map(|s| s.z.as_slice()).collect();
    Model::new(net, config, train_sets.iter().copied(), 1).unwrap()
}

#[test]
fn weak_residual_term_equals_the_wls_objective() {
    let (net, ds) = setup(16);
    let model = small_model(&net, &ds);
    let sets: Vec<&[Measurement]> = ds.samples.iter().map(|s| s.z.as_slice()).collect();
    let batch = model.batch(&net, &sets).unwrap();
    let ph = Physics::new(&net, &batch, &sets).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let states: Vec<StateVector> = ds
        .samples
        .iter()
        .map(|s| {
            let v = s.truth.v().iter().map(|v| v + rng.gen_range(-1e-4..1e-4)).collect();
            let slack = s.truth.slack();
            let theta = s.truth.theta().iter().enumerate();
            let theta = theta.map(|(i, t)| if i == slack { 0.0 } else { t + rng.gen_range(-1e-4..1e-4) }).collect();
            StateVector::new(v, theta, slack).unwrap()
        })
        .collect();
    let tape = Tape::new();
    let col = |f: &dyn Fn(&StateVector) -> &[f64]| {
        tape.constant(Tensor::column(states.iter().flat_map(|s| f(s).iter().copied()).collect()))
    };
    let out = Output { v: col(&|s| s.v()), theta: col(&|s| s.theta()) };
    let wl = weak_loss(&tape, &out, &ph, &LossConfig::default());

    let expected: f64 = sets.iter().zip(&states).map(|(z, s)| wls_objective(z, s, &net).unwrap()).sum();
    let got = wl.wls.item();
    assert!((got - expected).abs() <= 1e-12 * expected, "{got} vs {expected}");
    // Every state is within the bounds, so the penalties vanish.
    assert_eq!((wl.voltage.item(), wl.angle.item(), wl.loading.item()), (0.0, 0.0, 0.0));
    assert_eq!(wl.total.item(), got);
}

#[test]
fn weak_training_never_reads_the_truth() {
    let (net, ds) = setup(40);
    let model = small_model(&net, &ds);
    let tc = TrainConfig { batch_size: 8, ..TrainConfig::case14_fast(TrainMode::Weak, 5, 3) };
    let lc = LossConfig::default();
    let a = train(&net, &ds, model.clone(), &tc, &lc).unwrap();
    let b = train(&net, &ds.with_truth_zeroed(), model, &tc, &lc).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.best_epoch, b.best_epoch);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert_eq!((x.train_loss, x.val_loss), (y.train_loss, y.val_loss));
    }
}

#[test]
fn training_is_reproducible_and_lowers_the_loss() {
    let (net, ds) = setup(64);
    let model = small_model(&net, &ds);
    let lc = LossConfig::default();
    for mode in [TrainMode::Weak, TrainMode::Supervised] {
        let tc = TrainConfig { batch_size: 8, ..TrainConfig::case14_fast(mode, 2, 6) };
        let a = train(&net, &ds, model.clone(), &tc, &lc).unwrap();
        let b = train(&net, &ds, model.clone(), &tc, &lc).unwrap();
        assert_eq!(a.model, b.model);
        let h = &a.history;
        assert_eq!(h.len(), 6);
        assert!(h[5].train_loss < h[0].train_loss, "{mode:?}: {} -> {}", h[0].train_loss, h[5].train_loss);
        assert!(h.iter().all(|r| r.val_v_rmse.is_finite()));
    }
}

#[test]
fn trained_checkpoint_predicts_identically_after_reload() {
    let (net, ds) = setup(40);
    let tc = TrainConfig { batch_size: 8, ..TrainConfig::case14_fast(TrainMode::Weak, 3, 2) };
    let out = train(&net, &ds, small_model(&net, &ds), &tc, &LossConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_model(&out.model, &path).unwrap();
    let back = load_model(&path).unwrap();
    for s in ds.subset(Split::Test) {
        assert_eq!(back.predict(&net, &s.z).unwrap(), out.model.predict(&net, &s.z).unwrap());
    }
    let m = evaluate(&back, &net, &ds.subset(Split::Test)).unwrap();
    assert!(m.is_finite() && m.convergence_rate == 100.0);
}
