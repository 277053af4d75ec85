use perron_core::mesh::{build_mesh, DomainDescriptor, NodalField};
use perron_core::operator::{check_ap_weight, check_structure_conditions, energy, residual, OperatorSpec, WeightSpec};
use perron_core::{Field, Mesh, Operator};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn configs() -> Vec<Operator> {
    vec![
        OperatorSpec::p_laplacian(1.5).unwrap(),
        OperatorSpec::p_laplacian(2.0).unwrap(),
        OperatorSpec::p_laplacian(3.0).unwrap(),
        OperatorSpec::new(2.0, WeightSpec::Power { gamma: 1.0 }).unwrap(),
        OperatorSpec::new(3.0, WeightSpec::Power { gamma: 0.5 }).unwrap(),
        OperatorSpec::p_laplacian(2.5).unwrap().with_anisotropy([[2.0, 0.5], [0.5, 1.0]]).unwrap(),
    ]
}

#[test]
fn structure_conditions_hold_for_all_configurations() {
    for (k, spec) in configs().iter().enumerate() {
        let rep = check_structure_conditions(spec, 10_000, 7 + k as u64).unwrap();
        assert!(rep.passed(), "{spec:?}: {:?}", rep.violation);
    }
}

#[test]
fn structure_report_is_reproducible() {
    let spec = &configs()[4];
    assert_eq!(check_structure_conditions(spec, 500, 3).unwrap(), check_structure_conditions(spec, 500, 3).unwrap());
}

#[test]
fn ap_estimates_separate_admissible_exponents() {
    let ok = check_ap_weight(&WeightSpec::Power { gamma: 1.0 }, 2.0, 200, 1).unwrap();
    assert!(ok.estimate.is_finite() && !ok.diverging);
    let ok3 = check_ap_weight(&WeightSpec::Power { gamma: 0.5 }, 3.0, 200, 1).unwrap();
    assert!(!ok3.diverging);
    let bad = check_ap_weight(&WeightSpec::Power { gamma: 4.0 }, 2.0, 200, 1).unwrap();
    assert!(bad.diverging);
    assert!(!WeightSpec::Power { gamma: 4.0 }.in_ap_range(2.0));
}

fn random_field(m: &Mesh, rng: &mut ChaCha8Rng) -> Field {
    NodalField::new((0..m.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Central-difference derivative of the energy against `p (residual · v)`.
fn directional_mismatch(m: &Mesh, spec: &Operator, u: &Field, v: &Field) -> f64 {
    let t = 1e-6;
    let plus = energy(m, spec, &u.zip_map(v, |a, b| a + t * b)).unwrap();
    let minus = energy(m, spec, &u.zip_map(v, |a, b| a - t * b)).unwrap();
    let fd = (plus - minus) / (2.0 * t);
    let r = residual(m, spec, u).unwrap();
    let pairing: f64 = spec.p * r.values.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>();
    (fd - pairing).abs() / pairing.abs().max(1e-300)
}

#[test]
fn gradient_consistency_over_random_directions() {
    let m: Mesh = build_mesh(&DomainDescriptor::UnitSquare, 0.126).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for spec in configs() {
        let u = random_field(&m, &mut rng);
        for _ in 0..20 {
            let mut v = random_field(&m, &mut rng);
            for &i in m.boundary_nodes() {
                v.as_mut_slice()[i] = 0.0;
            }
            let e = directional_mismatch(&m, &spec, &u, &v);
            assert!(e <= 1e-4, "{spec:?}: relative mismatch {e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_is_convex_along_lines(seed in 0u64..1000, k in 0usize..6, s in 0.0f64..1.0) {
        let m: Mesh = build_mesh(&DomainDescriptor::UnitSquare, 0.26).unwrap();
        let spec = configs()[k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_field(&m, &mut rng);
        let b = random_field(&m, &mut rng);
        let mix = a.zip_map(&b, |x, y| (1.0 - s) * x + s * y);
        let lhs = energy(&m, &spec, &mix).unwrap();
        let rhs = (1.0 - s) * energy(&m, &spec, &a).unwrap() + s * energy(&m, &spec, &b).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn energy_is_p_homogeneous(seed in 0u64..1000, k in 0usize..6, lambda in -3.0f64..3.0) {
        let m: Mesh = build_mesh(&DomainDescriptor::UnitSquare, 0.26).unwrap();
        let spec = configs()[k];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_field(&m, &mut rng);
        let scaled = energy(&m, &spec, &a.map(|x| lambda * x)).unwrap();
        let expect = lambda.abs().powf(spec.p) * energy(&m, &spec, &a).unwrap();
        prop_assert!((scaled - expect).abs() <= 1e-10 * expect.max(1e-300));
    }
}
