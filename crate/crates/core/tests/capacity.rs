use perron_core::capacity::{build_psi_sequence, capacity_box, estimate_capacity, sobolev_norm, CapacityError};
use perron_core::mesh::{build_mesh, DomainDescriptor};
use perron_core::operator::{OperatorSpec, WeightSpec};
use perron_core::oracle::dense_capacity;
use perron_core::perron::{box_for_set, map_nodes, PerturbationSupport};
use perron_core::{Mesh, Operator};
use proptest::prelude::*;

fn laplace() -> Operator {
    OperatorSpec::p_laplacian(2.0).unwrap()
}

fn singular_weight() -> Operator {
    OperatorSpec::new(2.0, WeightSpec::Power { gamma: 4.0 }).unwrap()
}

fn center(b: &Mesh) -> usize {
    b.find_node([0.0, 0.0], 1e-9).unwrap()
}

#[test]
fn empty_set_has_zero_capacity() {
    let b: Mesh = capacity_box([0.0, 0.0], 4.0, 0.25);
    let c = estimate_capacity(&b, &laplace(), &[], 1e-10).unwrap();
    assert_eq!(c.value, 0.0);
    assert!(c.minimizer.iter().all(|&v| v == 0.0));
    let seq = build_psi_sequence(&b, &laplace(), &[], 3, 1e-10).unwrap();
    assert!(seq.psi.iter().all(|s| s.iter().all(|&v| v == 0.0)));
    assert!(seq.invariants.all());
}

#[test]
fn estimate_invariants() {
    let b: Mesh = capacity_box([0.0, 0.0], 4.0, 0.125);
    for spec in [laplace(), OperatorSpec::p_laplacian(3.0).unwrap(), singular_weight()] {
        let e = b.graph_ball(&[center(&b)], 1);
        let c = estimate_capacity(&b, &spec, &e, 1e-11).unwrap();
        for &i in &c.pinned {
            assert_eq!(c.minimizer[i], 1.0);
        }
        assert!(c.minimizer.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!((c.value - c.norm_p.powf(spec.p)).abs() <= 1e-12 * c.value);
        let direct = sobolev_norm(&b, &spec, &c.minimizer);
        assert!((direct - c.norm_p).abs() <= 1e-12 * c.norm_p);
    }
}

#[test]
fn set_touching_box_boundary_is_rejected() {
    let b: Mesh = capacity_box([0.0, 0.0], 4.0, 0.5);
    let near = b.find_node([1.5, 0.0], 1e-9).unwrap();
    let err = estimate_capacity(&b, &laplace(), &[near], 1e-10).unwrap_err();
    assert!(matches!(err, CapacityError::InvalidSet(_)));
}

#[test]
fn doubling_the_weight_doubles_the_value() {
    let b: Mesh = capacity_box([0.0, 0.0], 4.0, 0.125);
    let e = b.graph_ball(&[center(&b)], 2);
    for p in [2.0, 3.0] {
        let one = OperatorSpec::new(p, WeightSpec::Constant { c: 1.0 }).unwrap();
        let two = OperatorSpec::new(p, WeightSpec::Constant { c: 2.0 }).unwrap();
        let a = estimate_capacity(&b, &one, &e, 1e-12).unwrap().value;
        let d = estimate_capacity(&b, &two, &e, 1e-12).unwrap().value;
        assert!((d - 2.0 * a).abs() <= 1e-10 * a, "p={p}: {d} vs 2·{a}");
    }
}

#[test]
fn outer_regularity_over_graph_balls() {
    let b: Mesh = capacity_box([0.0, 0.0], 4.0, 0.125);
    let e = [center(&b)];
    let base = estimate_capacity(&b, &laplace(), &e, 1e-12).unwrap().value;
    let values: Vec<f64> =
        (0..5).map(|r| estimate_capacity(&b, &laplace(), &b.graph_ball(&e, r), 1e-12).unwrap().value).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1] + 1e-10));
    let inf = values.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((inf - base).abs() <= 1e-10);
}

#[test]
fn sparse_and_dense_capacities_agree() {
    for h in [0.25, 0.125] {
        let b: Mesh = capacity_box([0.0, 0.0], 4.0, h);
        for spec in [laplace(), singular_weight()] {
            let e = [center(&b)];
            let sparse = estimate_capacity(&b, &spec, &e, 1e-12).unwrap().value;
            let dense = dense_capacity(&b, &spec, &e).unwrap();
            assert!((sparse - dense).abs() <= 1e-8 * dense, "h={h}: {sparse} vs {dense}");
        }
    }
}

#[test]
fn point_capacity_decreases_under_refinement() {
    let values: Vec<f64> = [0.25, 0.125, 0.0625]
        .iter()
        .map(|&h| {
            let b: Mesh = capacity_box([0.0, 0.0], 4.0, h);
            estimate_capacity(&b, &laplace(), &[center(&b)], 1e-12).unwrap().value
        })
        .collect();
    for w in values.windows(2) {
        let ratio = w[1] / w[0];
        assert!(ratio > 0.5 && ratio < 1.0, "{values:?}");
    }
}

#[test]
fn psi_sequence_for_a_corner_node() {
    let m: Mesh = build_mesh(&DomainDescriptor::UnitSquare, 1.0 / 32.0 * 1.0001).unwrap();
    let e = PerturbationSupport::Node { at: [0.0, 0.0] }.resolve(&m).unwrap();
    let b = box_for_set(&m, &e, 1.0 / 32.0).unwrap();
    let set = map_nodes(&m, &b, &e);
    let seq = build_psi_sequence(&b, &singular_weight(), &set, 4, 1e-12).unwrap();
    assert!(seq.invariants.all(), "{:?}", seq.invariants);
    assert_eq!(seq.radii, vec![4, 3, 2, 1, 0]);
    for j in 1..=4 {
        assert!(seq.psi_norms[j - 1] < 0.5f64.powi(j as i32));
        for m in 1..=(5 - j) {
            assert!(seq.neighborhood(j + m).iter().all(|&i| seq.psi(j)[i] >= m as f64 - 1e-12));
        }
    }
    assert!(seq.neighborhoods.windows(2).all(|w| w[1].iter().all(|i| w[0].contains(i))));
}

#[test]
fn psi_sequence_fails_for_a_boundary_edge() {
    for n in [8.0, 16.0] {
        let m: Mesh = build_mesh(&DomainDescriptor::UnitSquare, 1.0 / n * 1.0001).unwrap();
        let e = PerturbationSupport::Segment { from: [0.0, 0.0], to: [1.0, 0.0] }.resolve(&m).unwrap();
        let b = box_for_set(&m, &e, 1.0 / n).unwrap();
        let set = map_nodes(&m, &b, &e);
        match build_psi_sequence(&b, &singular_weight(), &set, 4, 1e-12) {
            Err(CapacityError::Unreachable { achieved, best_norm, .. }) => {
                assert!(achieved < 2, "n={n}: reached {achieved}");
                assert!(best_norm > 0.25);
            }
            other => panic!("n={n}: expected failure, got {other:?}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn monotone_and_subadditive(
        a in proptest::collection::vec((-4i32..=4, -4i32..=4), 1..4),
        b in proptest::collection::vec((-4i32..=4, -4i32..=4), 1..4),
        p in prop_oneof![Just(2.0), Just(3.0)],
    ) {
        let bx: Mesh = capacity_box([0.0, 0.0], 4.0, 0.25);
        let spec = OperatorSpec::p_laplacian(p).unwrap();
        let node = |(i, j): (i32, i32)| bx.find_node([0.25 * i as f64, 0.25 * j as f64], 1e-9).unwrap();
        let mut e1: Vec<usize> = a.into_iter().map(node).collect();
        e1.sort_unstable();
        e1.dedup();
        let mut e2: Vec<usize> = b.into_iter().map(node).collect();
        e2.sort_unstable();
        e2.dedup();
        let mut union = e1.clone();
        union.extend(&e2);
        union.sort_unstable();
        union.dedup();
        let cap = |s: &[usize]| estimate_capacity(&bx, &spec, s, 1e-12).unwrap().value;
        let (c1, c2, cu) = (cap(&e1), cap(&e2), cap(&union));
        prop_assert!(c1 <= cu + 1e-10);
        prop_assert!(c2 <= cu + 1e-10);
        prop_assert!(cu <= c1 + c2 + 1e-10);
    }
}
