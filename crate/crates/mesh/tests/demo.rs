use mmw_mesh::demo::{run_demo, Scenario, DEMO_SEED};

fn run(scenario: Scenario) {
    let dir = tempfile::tempdir().unwrap();
    let report = run_demo(scenario, dir.path(), DEMO_SEED).unwrap();
    print!("{}", report.render());
    assert!(report.passed(), "{:?}", report.first_failure());
    assert!(report.checks.len() >= 5);
}

#[test]
fn data_mesh_scenario_passes() {
    run(Scenario::DataMesh);
}

#[test]
fn data_product_scenario_passes() {
    run(Scenario::DataProduct);
}

#[test]
fn scenarios_rerun_in_the_same_workspace() {
    let dir = tempfile::tempdir().unwrap();
    for scenario in Scenario::ALL {
        let ws = dir.path().join(scenario.name());
        for _ in 0..2 {
            assert!(run_demo(scenario, &ws, DEMO_SEED).unwrap().passed());
        }
    }
}

#[test]
fn scenario_names_parse() {
    for s in Scenario::ALL {
        assert_eq!(s.name().parse::<Scenario>().unwrap(), s);
    }
    assert!("nope".parse::<Scenario>().is_err());
}
