use std::fs;
use std::path::PathBuf;

use perron_core::functions::ScalarFunction;
use perron_core::mesh::DomainDescriptor;
use perron_core::operator::{OperatorSpec, WeightSpec};
use perron_core::perron::PerturbationSupport;
use perron_lab::config::{Candidate, CapacitySet, OracleConfig, OutputPaths, PerturbationConfig, Tolerances};
use perron_lab::{ExperimentConfig, ExperimentId, LabError};

fn configs() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn full() -> ExperimentConfig {
    ExperimentConfig {
        experiment: Some(ExperimentId::SobolevData),
        domain: DomainDescriptor::Polygon { vertices: vec![[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]] },
        operator: OperatorSpec::new(2.5, WeightSpec::Product { c: 0.3, gamma: 1.0 / 3.0 })
            .unwrap()
            .with_anisotropy([[2.0, 0.1], [0.1, 1.0]])
            .unwrap(),
        data: ScalarFunction::HolderCusp { center: [0.1, 0.0], alpha: 0.7, level: Some(3) },
        perturbation: PerturbationConfig {
            support: PerturbationSupport::Segment { from: [0.0, 0.0], to: [0.3, 0.0] },
            value: -0.1,
            sweep: vec![1.0 / 3.0, 1e-17],
        },
        mesh_levels: vec![0.1, 1.0 / 30.0, 0.0123456789],
        depth: 7,
        tolerances: Tolerances { solver: 3e-11, far_radius: 0.2, ..Tolerances::default() },
        seed: u64::MAX,
        outputs: OutputPaths { dir: Some("runs".into()), csv: Some("t.csv".into()), summary: None },
        obstacle: Some(ScalarFunction::Bump { center: [0.1, 0.2], height: 0.1, slope: 2.0 }),
        candidate: Some(Candidate::Function { function: ScalarFunction::PoissonKernel { pole: [1.0, 0.0] }, cap: 1e6 }),
        capacity_sets: vec![CapacitySet {
            id: "p".into(),
            support: PerturbationSupport::Node { at: [0.1, 0.1] },
            box_side: 4.0,
            center: [0.1, 0.1],
        }],
        oracle: Some(OracleConfig { points: vec![[0.2, 0.1]], samples: 1000, sigmas: 3.0 }),
    }
}

#[test]
fn every_field_round_trips() {
    let c = full();
    let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_json(), c.to_json());
}

#[test]
fn shipped_configs_round_trip() {
    let files = configs();
    assert!(files.len() >= 10);
    for p in files {
        let c = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c, "{}", p.display());
    }
}

#[test]
fn every_experiment_has_a_shipped_config() {
    let ids: Vec<ExperimentId> =
        configs().iter().filter_map(|p| ExperimentConfig::load(p).unwrap().experiment).collect();
    for id in [
        ExperimentId::Resolutivity,
        ExperimentId::Invariance,
        ExperimentId::Uniqueness,
        ExperimentId::MonotoneConvergence,
        ExperimentId::MonotoneData,
        ExperimentId::CapacityScaling,
        ExperimentId::PoissonCounterexample,
        ExperimentId::SobolevData,
    ] {
        assert!(ids.contains(&id), "{}", id.name());
    }
}

#[test]
fn invalid_configs_are_config_errors() {
    let base = full().to_json();
    let cases = [
        base.replace("\"sobolev-data\"", "\"no-such-experiment\""),
        base.replace("\"depth\": 7", "\"depth\": 0"),
        base.replace("\"seed\"", "\"sede\""),
        base.replace("\"p\": 2.5", "\"p\": 0.5"),
        base.replace("\"mesh_levels\": [", "\"mesh_levels\": [-1.0, "),
        "{".to_string(),
    ];
    for text in cases {
        assert!(matches!(ExperimentConfig::from_json(&text), Err(LabError::Config(_))), "{text}");
    }
}
