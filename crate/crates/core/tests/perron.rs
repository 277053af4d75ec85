use perron_core::capacity::CapacityError;
use perron_core::dirichlet::solve_dirichlet;
use perron_core::functions::ScalarFunction;
use perron_core::mesh::{build_mesh, DomainDescriptor};
use perron_core::operator::{residual, OperatorSpec, WeightSpec};
use perron_core::perron::{
    direct_perturbation_gap, lower_envelope_approx, perron_sandwich, psi_for_perturbation, shortest_edge,
    uniqueness_check, upper_envelope_approx, PerronError, PerturbationSpec, PerturbationSupport, SandwichOptions,
    UniquenessOptions,
};
use perron_core::{Field, Mesh, Operator};

const TOL: f64 = 1e-10;

fn square(n: usize) -> Mesh {
    build_mesh(&DomainDescriptor::UnitSquare, 1.0001 / n as f64).unwrap()
}

fn singular_weight() -> Operator {
    OperatorSpec::new(2.0, WeightSpec::Power { gamma: 4.0 }).unwrap()
}

fn corner(m: &Mesh, value: f64) -> PerturbationSpec {
    PerturbationSpec::constant(PerturbationSupport::Node { at: [0.0, 0.0] }.resolve(m).unwrap(), value)
}

fn opts() -> SandwichOptions {
    SandwichOptions { tol: TOL, far_radius: 0.125 }
}

#[test]
fn empty_perturbation_reproduces_hf() {
    let m = square(16);
    let spec = OperatorSpec::p_laplacian(3.0).unwrap();
    let f = ScalarFunction::Mixed.interpolate(&m);
    let pert = PerturbationSpec::none();
    let psi = psi_for_perturbation(&m, &spec, &pert, 3, shortest_edge(&m), TOL).unwrap();
    let rep = perron_sandwich(&m, &spec, &f, &pert, &psi, &opts()).unwrap();
    for l in &rep.levels {
        assert!(l.gap <= 2.0 * TOL, "{l:?}");
        assert!(l.dist <= TOL, "{l:?}");
    }
    assert!(rep.sandwich && rep.upper_monotone && rep.dist_nonincreasing);
}

#[test]
fn zero_data_with_a_point_perturbation() {
    let m = square(24);
    let spec = singular_weight();
    let f = Field::zeros(m.node_count());
    let pert = corner(&m, 1.0);
    let psi = psi_for_perturbation(&m, &spec, &pert, 4, shortest_edge(&m), 1e-12).unwrap();
    let hf = solve_dirichlet(&m, &spec, &f, TOL).unwrap().solution;
    for j in 1..=4 {
        let u = upper_envelope_approx(&m, &spec, &hf, &pert, &psi.psi[j - 1], TOL).unwrap();
        assert!(u.iter().all(|&v| v >= -TOL));
        for i in 0..m.node_count() {
            if psi.psi[j - 1][i] >= 1.0 {
                assert!(u[i] >= 1.0 - TOL);
            }
        }
        // the perturbed data is dominated at every boundary node
        let h: Field = pert.field(m.node_count());
        for &i in m.boundary_nodes() {
            assert!(u[i] >= f[i] + h[i] - TOL);
        }
    }
}

#[test]
fn lower_approximant_is_the_reflected_upper_one() {
    let m = square(16);
    let spec = singular_weight();
    let f = ScalarFunction::Affine { a: 1.0, b: 0.5, c: 0.0 }.interpolate(&m);
    let pert = corner(&m, 3.0);
    let psi = psi_for_perturbation(&m, &spec, &pert, 3, shortest_edge(&m), 1e-12).unwrap();
    let hf = solve_dirichlet(&m, &spec, &f, TOL).unwrap().solution;
    let neg_hf = hf.map(|v| -v);
    for s in &psi.psi {
        let l = lower_envelope_approx(&m, &spec, &hf, &pert, s, TOL).unwrap();
        let u = upper_envelope_approx(&m, &spec, &neg_hf, &pert.negated(), s, TOL).unwrap();
        assert_eq!(l, u.map(|v| -v));
    }
}

#[test]
fn sandwich_and_monotone_convergence_for_a_corner_node() {
    let m = square(32);
    let spec = singular_weight();
    let f = ScalarFunction::Affine { a: 1.0, b: 0.0, c: 0.0 }.interpolate(&m);
    let pert = corner(&m, 1.0);
    let psi = psi_for_perturbation(&m, &spec, &pert, 4, shortest_edge(&m), 1e-12).unwrap();
    assert!(psi.sequence.invariants.all());
    let rep = perron_sandwich(&m, &spec, &f, &pert, &psi, &opts()).unwrap();
    assert!(rep.sandwich && rep.upper_monotone && rep.dist_nonincreasing, "{rep:?}");
    let far: Vec<f64> = rep.levels.iter().map(|l| l.far_dist).collect();
    assert!(far.windows(2).all(|w| w[1] < w[0]), "{far:?}");
    assert!(rep.final_level().far_dist < 0.05);
    // u_K still carries ψ_K ≥ 1 on the one-ring of the corner
    assert!(rep.final_level().dist >= 1.0 - TOL);
}

#[test]
fn unweighted_point_has_too_much_capacity_at_desk_resolution() {
    let m = square(32);
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let pert = corner(&m, 1.0);
    match psi_for_perturbation(&m, &spec, &pert, 4, shortest_edge(&m), 1e-12) {
        Err(PerronError::Capacity(CapacityError::Unreachable { level, best_norm, .. })) => {
            assert_eq!(level, 1);
            assert!(best_norm > 0.5);
        }
        other => panic!("expected failure, got {other:?}"),
    }
}

#[test]
fn edge_perturbation_persists_under_refinement() {
    let spec = singular_weight();
    let mut gaps = Vec::new();
    for n in [8, 16, 32] {
        let m = square(n);
        let f = ScalarFunction::Affine { a: 1.0, b: 0.0, c: 0.0 }.interpolate(&m);
        let e = PerturbationSupport::Segment { from: [0.0, 0.0], to: [1.0, 0.0] }.resolve(&m).unwrap();
        gaps.push(direct_perturbation_gap(&m, &spec, &f, &PerturbationSpec::constant(e, 1.0), &opts()).unwrap());
    }
    for g in &gaps[1..] {
        assert!(g.far >= 0.8 * gaps[0].far, "{gaps:?}");
        assert!(g.interior >= 0.8 * gaps[0].interior, "{gaps:?}");
    }
}

#[test]
fn uniqueness_verdicts() {
    let m = square(16);
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let f = ScalarFunction::Affine { a: 1.0, b: 2.0, c: 0.0 }.interpolate(&m);
    let o = UniquenessOptions { tol: 1e-12, bound: 10.0, residual_tol: 1e-9, distance_tol: 1e-8, box_h: None };
    let hf = solve_dirichlet(&m, &spec, &f, 1e-12).unwrap().solution;
    let v = uniqueness_check(&m, &spec, &f, &hf, &[], &o).unwrap();
    assert!(v.pass && v.distance <= 1e-8);

    let e = PerturbationSupport::Segment { from: [0.0, 1.0], to: [1.0, 1.0] }.resolve(&m).unwrap();
    let g = f.zip_map(&PerturbationSpec::constant(e.clone(), 1.0).field(m.node_count()), |a, b| a + b);
    let hg = solve_dirichlet(&m, &spec, &g, 1e-12).unwrap().solution;
    let o = UniquenessOptions { box_h: Some(1.0 / 16.0), ..o };
    let v = uniqueness_check(&m, &spec, &f, &hg, &e, &o).unwrap();
    assert!(!v.pass && v.distance >= 0.5, "{v:?}");
    assert!(v.capacity_of_set.unwrap() > 1.0);

    // a candidate that disagrees with f off E violates a precondition
    let err = uniqueness_check(&m, &spec, &f, &hg, &[], &o).unwrap_err();
    assert!(matches!(err, PerronError::Rejected { ref clause, .. } if clause == "boundary data"));
}

#[test]
fn poisson_kernel_candidate_is_rejected_as_unbounded() {
    let m: Mesh = build_mesh(&DomainDescriptor::Disc { center: [0.0, 0.0], radius: 1.0 }, 0.1).unwrap();
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let f = Field::zeros(m.node_count());
    let pole = PerturbationSupport::Node { at: [1.0, 0.0] }.resolve(&m).unwrap();
    let kernel = ScalarFunction::PoissonKernel { pole: [1.0, 0.0] };
    let o = UniquenessOptions { tol: 1e-12, bound: 5.0, residual_tol: 1e-6, distance_tol: 1e-8, box_h: None };
    for cap in [10.0, 100.0] {
        let u = kernel.interpolate_capped(&m, cap);
        match uniqueness_check(&m, &spec, &f, &u, &pole, &o) {
            Err(PerronError::Rejected { clause, .. }) => assert_eq!(clause, "bounded"),
            other => panic!("cap {cap}: expected rejection, got {other:?}"),
        }
    }
}

#[test]
fn poisson_kernel_residual_decays_away_from_the_pole() {
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let kernel = ScalarFunction::PoissonKernel { pole: [1.0, 0.0] };
    let far: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| {
            let m: Mesh = build_mesh(&DomainDescriptor::Disc { center: [0.0, 0.0], radius: 1.0 }, h).unwrap();
            let u = kernel.interpolate_capped(&m, 1e6);
            let r = residual(&m, &spec, &u).unwrap();
            m.interior_nodes()
                .iter()
                .filter(|&&i| {
                    let p = m.node_f64(i);
                    (p[0] - 1.0).hypot(p[1]) >= 0.5
                })
                .map(|&i| r.values[i].abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(far.windows(2).all(|w| w[1] < w[0]), "{far:?}");
}
