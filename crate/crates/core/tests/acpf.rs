use std::path::PathBuf;

use dsse::acpf::{solve_power_flow, InjectionSpec};
use dsse::grid::load_network;
use dsse::pf_equations::bus_injections;
use dsse::scenario::ScenarioConfig;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[test]
fn two_bus_load_is_met_through_the_measurement_equations() {
    let net = load_network(fixture("case2.grid")).unwrap();
    let spec = InjectionSpec { p: vec![0.0, -0.5], q: vec![0.0, -0.2], v_slack: 1.0 };
    let sol = solve_power_flow(&net, &spec, 1e-10, 20).unwrap();
    let inj = bus_injections(&sol.state, &net).unwrap();
    assert!((inj[1].0 + 0.5).abs() <= 1e-8 && (inj[1].1 + 0.2).abs() <= 1e-8);
    assert!(sol.state.v()[1] < 1.0);
}

#[test]
fn case14_profile_loads_converge_quickly() {
    let net = load_network(fixture("case14.grid")).unwrap();
    let profiles = ScenarioConfig::load(fixture("case14.scenario.json")).unwrap().profiles(&net).unwrap();
    for hour in 0..24 {
        let spec = profiles.base_injections(hour);
        let sol = solve_power_flow(&net, &spec, 1e-8, 50).unwrap();
        // Observed: 3 iterations; the bound leaves a factor of two.
        assert!(sol.iterations <= 6, "hour {hour}: {} iterations", sol.iterations);
        assert!(sol.mismatch <= 1e-8);
        let inj = bus_injections(&sol.state, &net).unwrap();
        for i in (0..net.n()).filter(|&i| i != net.slack_index()) {
            assert!((inj[i].0 - spec.p[i]).abs() <= 1e-8 && (inj[i].1 - spec.q[i]).abs() <= 1e-8);
        }
        let again = solve_power_flow(&net, &spec, 1e-8, 50).unwrap();
        assert_eq!(again, sol);
    }
}
