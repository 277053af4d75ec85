use perron_core::dirichlet::solve_dirichlet;
use perron_core::functions::ScalarFunction;
use perron_core::mesh::{build_mesh, DomainDescriptor, NodalField};
use perron_core::obstacle::{solve_obstacle, ObstacleSpec};
use perron_core::operator::{energy, residual, OperatorSpec, WeightSpec};
use perron_core::oracle::brute_force_obstacle;
use perron_core::Mesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn square(h: f64) -> Mesh {
    build_mesh(&DomainDescriptor::UnitSquare, h).unwrap()
}

fn bump(m: &Mesh) -> NodalField<f64> {
    ScalarFunction::Bump { center: [0.5, 0.5], height: 0.25, slope: 4.0 }.interpolate(m)
}

fn check_complementarity(m: &Mesh, spec: &OperatorSpec<f64>, ob: &ObstacleSpec<f64>, u: &NodalField<f64>, tol: f64) {
    let r = residual(m, spec, u).unwrap();
    for &i in m.interior_nodes() {
        assert!(r.values[i] >= -tol, "supersolution violated at {i}: {}", r.values[i]);
        if ob.constrained[i] {
            assert!(u[i] >= ob.obstacle[i] - tol);
            if u[i] > ob.obstacle[i] + tol {
                assert!(r.values[i] <= tol, "complementarity violated at {i}");
            }
        } else {
            assert!(r.values[i].abs() <= tol);
        }
    }
    for &i in m.boundary_nodes() {
        assert_eq!(u[i], ob.data[i]);
    }
}

#[test]
fn unconstrained_obstacle_is_dirichlet() {
    let m = square(1.0 / 10.0);
    for p in [1.5, 2.0, 3.0] {
        let spec = OperatorSpec::p_laplacian(p).unwrap();
        let f = ScalarFunction::Mixed.interpolate(&m);
        let ob = ObstacleSpec::unconstrained(f.clone());
        let u = solve_obstacle(&m, &spec, &ob, TOL).unwrap().solution;
        let hf = solve_dirichlet(&m, &spec, &f, TOL).unwrap().solution;
        assert!(u.max_abs_diff(&hf) < 1e-8);
    }
}

#[test]
fn infeasible_obstacle_rejected() {
    let m = square(0.25);
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let f = NodalField::constant(m.node_count(), 0.0);
    let ob = ObstacleSpec::new(NodalField::constant(m.node_count(), 0.5), f);
    assert!(solve_obstacle(&m, &spec, &ob, TOL).is_err());
    let mut psi = NodalField::constant(m.node_count(), 0.0);
    psi[5] = f64::INFINITY;
    let ob = ObstacleSpec::new(psi, NodalField::constant(m.node_count(), 1.0));
    assert!(solve_obstacle(&m, &spec, &ob, TOL).is_err());
}

#[test]
fn bump_matches_brute_force_on_nine_by_nine_grid() {
    let m = square(1.0 / 8.0);
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let ob = ObstacleSpec::new(bump(&m), NodalField::zeros(m.node_count()));
    let u = solve_obstacle(&m, &spec, &ob, TOL).unwrap().solution;
    let reference = brute_force_obstacle(&m, &spec, &ob).unwrap();
    assert!(u.max_abs_diff(&reference) <= 1e-6, "{}", u.max_abs_diff(&reference));
    check_complementarity(&m, &spec, &ob, &u, 1e-8);
}

#[test]
fn random_small_instances_match_brute_force() {
    let m = square(0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let weights = [WeightSpec::unit(), WeightSpec::Power { gamma: 1.0 }];
    for case in 0..10 {
        let spec = OperatorSpec::new(2.0, weights[case % 2]).unwrap();
        let f = m.interpolate(|x, y| 0.3 * x - 0.2 * y);
        let psi = NodalField::new(
            (0..m.node_count()).map(|i| if m.is_boundary(i) { f[i] - 1.0 } else { rng.gen_range(-0.4..0.6) }).collect(),
        );
        let ob = ObstacleSpec::new(psi, f);
        let u = solve_obstacle(&m, &spec, &ob, TOL).unwrap().solution;
        let reference = brute_force_obstacle(&m, &spec, &ob).unwrap();
        assert!(u.max_abs_diff(&reference) <= 1e-6, "case {case}");
    }
}

#[test]
fn obstacle_above_range_is_fully_active() {
    let m = square(0.25);
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let f = NodalField::zeros(m.node_count());
    let psi = m.interpolate(|x, y| if x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0 { 2.0 } else { 0.0 });
    let ob = ObstacleSpec::new(psi.clone(), f);
    let reference = brute_force_obstacle(&m, &spec, &ob).unwrap();
    let u = solve_obstacle(&m, &spec, &ob, TOL).unwrap().solution;
    for &i in m.interior_nodes() {
        assert_eq!(reference[i], 2.0);
        assert_eq!(u[i], 2.0);
    }
}

#[test]
fn nonlinear_obstacle_properties() {
    let m = square(1.0 / 12.0);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for (p, w) in [(1.5, WeightSpec::unit()), (3.0, WeightSpec::unit()), (3.0, WeightSpec::Power { gamma: 0.5 })] {
        let spec = OperatorSpec::new(p, w).unwrap();
        let f = m.interpolate(|x, _| x);
        let psi1 = m.interpolate(|x, y| 0.8 - 6.0 * ((x - 0.4).powi(2) + (y - 0.5).powi(2)));
        let psi2 = psi1.map(|v| v + 0.1);
        let ob1 = ObstacleSpec::new(psi1.zip_map(&f, |a, b| a.min(b)), f.clone());
        let mut ob2 = ObstacleSpec::new(psi2.zip_map(&f, |a, b| a.min(b)), f.clone());
        for &i in m.interior_nodes() {
            ob2.obstacle[i] = psi2[i];
        }
        let u1 = solve_obstacle(&m, &spec, &ob1, TOL).unwrap().solution;
        let u2 = solve_obstacle(&m, &spec, &ob2, TOL).unwrap().solution;
        check_complementarity(&m, &spec, &ob1, &u1, 1e-8);
        check_complementarity(&m, &spec, &ob2, &u2, 1e-8);
        assert!(u1.iter().zip(u2.iter()).all(|(a, b)| *a <= b + 1e-8));
        let e = energy(&m, &spec, &u1).unwrap();
        for _ in 0..20 {
            let mut v = u1.clone();
            for &i in m.interior_nodes() {
                v[i] = (v[i] + rng.gen_range(-0.05..0.05)).max(ob1.obstacle[i]);
            }
            assert!(e <= energy(&m, &spec, &v).unwrap() + 1e-10);
        }
    }
}

#[test]
fn obstacle_below_solution_returns_dirichlet() {
    let m = square(1.0 / 10.0);
    let spec = OperatorSpec::p_laplacian(3.0).unwrap();
    let f = m.interpolate(|x, y| x + y);
    let hf = solve_dirichlet(&m, &spec, &f, TOL).unwrap().solution;
    let ob = ObstacleSpec::new(hf.map(|v| v - 0.01), f);
    let u = solve_obstacle(&m, &spec, &ob, TOL).unwrap().solution;
    assert!(u.max_abs_diff(&hf) < 1e-8);
}

#[test]
fn partial_mask_is_respected() {
    let m = square(1.0 / 8.0);
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let psi = bump(&m);
    let mask: Vec<bool> = (0..m.node_count()).map(|i| m.node_f64(i)[0] <= 0.5).collect();
    let ob = ObstacleSpec::with_mask(psi, mask, NodalField::zeros(m.node_count()));
    let u = solve_obstacle(&m, &spec, &ob, TOL).unwrap().solution;
    let reference = brute_force_obstacle(&m, &spec, &ob).unwrap();
    assert!(u.max_abs_diff(&reference) <= 1e-6);
    check_complementarity(&m, &spec, &ob, &u, 1e-8);
}
