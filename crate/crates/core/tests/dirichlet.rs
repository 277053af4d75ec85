use perron_core::dirichlet::{default_tolerance, monotone_data_study, solve_dirichlet};
use perron_core::mesh::{build_mesh, DomainDescriptor, NodalField};
use perron_core::operator::{energy, residual, OperatorSpec, WeightSpec};
use perron_core::Mesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square(h: f64) -> Mesh {
    build_mesh(&DomainDescriptor::UnitSquare, h).unwrap()
}

fn configs() -> Vec<OperatorSpec<f64>> {
    vec![
        OperatorSpec::p_laplacian(1.5).unwrap(),
        OperatorSpec::p_laplacian(2.0).unwrap(),
        OperatorSpec::p_laplacian(3.0).unwrap(),
        OperatorSpec::new(2.0, WeightSpec::Power { gamma: 1.0 }).unwrap(),
        OperatorSpec::new(3.0, WeightSpec::Power { gamma: 0.5 }).unwrap(),
    ]
}

/// Random piecewise-linear boundary data: linear interpolation of values at
/// a few breakpoints along the perimeter parameter.
fn random_boundary(mesh: &Mesh, rng: &mut ChaCha8Rng, offset: f64) -> NodalField<f64> {
    let knots: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    mesh.interpolate(|x, y| {
        let s = perimeter_parameter(x, y) * 8.0;
        let k = (s.floor() as usize).min(7);
        let t = s - k as f64;
        (1.0 - t) * knots[k] + t * knots[k + 1] + offset
    })
}

fn perimeter_parameter(x: f64, y: f64) -> f64 {
    if y <= 1e-12 {
        x / 4.0
    } else if x >= 1.0 - 1e-12 {
        0.25 + y / 4.0
    } else if y >= 1.0 - 1e-12 {
        0.5 + (1.0 - x) / 4.0
    } else {
        0.75 + (1.0 - y) / 4.0
    }
}

#[test]
fn constant_data_gives_constant_solution() {
    let m = square(1.0 / 8.0);
    for spec in configs() {
        let f = NodalField::constant(m.node_count(), 0.7);
        let u = solve_dirichlet(&m, &spec, &f, 1e-10).unwrap().solution;
        let d = u.iter().fold(0.0f64, |m, v| m.max((v - 0.7).abs()));
        assert!(d < 1e-12, "{d} {spec:?}");
    }
}

#[test]
fn affine_data_reproduced() {
    let m = square(1.0 / 16.0);
    for p in [1.5, 2.0, 3.0, 4.0] {
        let spec = OperatorSpec::p_laplacian(p).unwrap();
        let f = m.interpolate(|x, y| 3.0 * x - 2.0 * y);
        let rep = solve_dirichlet(&m, &spec, &f, default_tolerance(&m, &f)).unwrap();
        assert!(rep.solution.max_abs_diff(&f) <= 1e-8, "p={p}");
        let r = residual(&m, &spec, &rep.solution).unwrap();
        assert!(r.max_interior() <= default_tolerance(&m, &f));
    }
}

#[test]
fn harmonic_polynomial_second_order() {
    let spec = OperatorSpec::p_laplacian(2.0).unwrap();
    let err = |h: f64| {
        let m = square(h);
        let f = m.interpolate(|x, y| x * x - y * y);
        let u = solve_dirichlet(&m, &spec, &f, 1e-10).unwrap().solution;
        // nodal values are exact on this triangulation; the error lives between nodes
        assert!(u.max_abs_diff(&f) < 1e-12);
        m.sup_error(&u, |x, y| x * x - y * y)
    };
    let e16 = err(1.0 / 16.0);
    let e32 = err(1.0 / 32.0);
    assert!(e32 <= 1e-2, "{e16} {e32}");
    let ratio = e16 / e32;
    assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn maximum_and_comparison_principles() {
    let m = square(1.0 / 12.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for spec in configs() {
        for _ in 0..20 {
            let f = random_boundary(&m, &mut rng, 0.0);
            let bump: f64 = rng.gen_range(0.0..0.5);
            let g = random_boundary(&m, &mut rng, 0.0).zip_map(&f, |a, b| b + bump * (a + 1.0));
            let tol = default_tolerance(&m, &g);
            let hf = solve_dirichlet(&m, &spec, &f, tol).unwrap().solution;
            let hg = solve_dirichlet(&m, &spec, &g, tol).unwrap().solution;
            let (lo, hi) = m
                .boundary_nodes()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &i| (l.min(f[i]), h.max(f[i])));
            assert!(hf.iter().all(|&v| v >= lo - tol && v <= hi + tol));
            assert!(hf.iter().zip(hg.iter()).all(|(a, b)| *a <= b + tol));
        }
    }
}

#[test]
fn translation_and_scaling() {
    let m = square(1.0 / 10.0);
    let spec = OperatorSpec::new(3.0, WeightSpec::Power { gamma: 0.5 }).unwrap();
    let f = m.interpolate(|x, y| (3.0 * x).sin() * y);
    let hf = solve_dirichlet(&m, &spec, &f, 1e-11).unwrap().solution;
    let g = f.map(|v| 2.5 * v - 0.75);
    let hg = solve_dirichlet(&m, &spec, &g, 1e-11).unwrap().solution;
    let expect = hf.map(|v| 2.5 * v - 0.75);
    assert!(hg.max_abs_diff(&expect) < 1e-8);
}

#[test]
fn energy_optimality() {
    let m = square(1.0 / 8.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for spec in configs() {
        let f = m.interpolate(|x, y| x * y + (2.0 * y).cos());
        let rep = solve_dirichlet(&m, &spec, &f, 1e-10).unwrap();
        let e = energy(&m, &spec, &rep.solution).unwrap();
        assert!((e - rep.energy_value).abs() <= 1e-12 * (1.0 + e));
        for _ in 0..20 {
            let mut v = rep.solution.clone();
            for &i in m.interior_nodes() {
                v[i] += rng.gen_range(-0.1..0.1);
            }
            assert!(e <= energy(&m, &spec, &v).unwrap() + 1e-10);
        }
    }
}

#[test]
fn disc_and_anisotropic_solves_converge() {
    let m: Mesh = build_mesh(&DomainDescriptor::Disc { center: [0.0, 0.0], radius: 1.0 }, 0.1).unwrap();
    let spec = OperatorSpec::p_laplacian(4.0).unwrap().with_anisotropy([[2.0, 0.5], [0.5, 1.0]]).unwrap();
    let f = m.interpolate(|x, y| x * x * y);
    let tol = default_tolerance(&m, &f);
    let rep = solve_dirichlet(&m, &spec, &f, tol).unwrap();
    assert!(rep.final_residual_norm <= tol);
    assert!(rep.iterations <= 500);
}

#[test]
fn single_precision_solve() {
    let m: perron_core::mesh::DomainMesh<f32> = build_mesh(&DomainDescriptor::UnitSquare, 0.125).unwrap();
    let spec = OperatorSpec::<f32>::p_laplacian(3.0).unwrap();
    let f = m.interpolate(|x, y| x - 0.5 * y);
    let u = solve_dirichlet(&m, &spec, &f, 1e-4).unwrap().solution;
    assert!(u.max_abs_diff(&f) < 1e-4);
}

#[test]
fn monotone_data_examples() {
    let m = square(1.0 / 8.0);
    let spec = OperatorSpec::p_laplacian(3.0).unwrap();
    let f = m.interpolate(|x, _| x);
    let zero = NodalField::zeros(m.node_count());
    let s = monotone_data_study(&m, &spec, &f, &zero, 3, 1e-11).unwrap();
    assert!(s.levels.iter().all(|l| l.gap < 1e-9));
    let one = NodalField::constant(m.node_count(), 1.0);
    let s = monotone_data_study(&m, &spec, &f, &one, 4, 1e-11).unwrap();
    for (k, l) in s.levels.iter().enumerate() {
        assert!((l.gap - 0.5f64.powi(k as i32 + 1)).abs() < 1e-9);
    }
    assert!(s.monotone);
}

#[test]
fn monotone_data_gap_halves() {
    let m = square(1.0 / 16.0);
    let spec = OperatorSpec::p_laplacian(3.0).unwrap();
    let f = m.interpolate(|x, _| x);
    let psi = m.interpolate(|x, _| (std::f64::consts::PI * x).sin().max(0.0));
    let s = monotone_data_study(&m, &spec, &f, &psi, 5, 1e-11).unwrap();
    assert!(s.monotone);
    for w in s.levels.windows(2) {
        let r = w[1].gap / w[0].gap;
        assert!((0.375..=0.625).contains(&r), "ratio {r}");
    }
}
