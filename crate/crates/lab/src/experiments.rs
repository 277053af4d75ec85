//! The named experiments.

use perron_core::dirichlet::{monotone_data_study, solve_dirichlet};
use perron_core::functions::ScalarFunction;
use perron_core::mesh::NodalField;
use perron_core::operator::residual;
use perron_core::perron::{
    direct_perturbation_gap, perron_sandwich, shortest_edge, uniqueness_check, PerronError, PerturbationSupport,
    UniquenessOptions,
};
use perron_core::Field;

use crate::commands::{
    boundary_oscillation, capacity_table, finest, mesh_at, perturbation, psi_on, refinement_check, sandwich_options,
    sandwich_study, spec, CAPACITY_HEADER, PERRON_HEADER,
};
use crate::config::{Candidate, CapacitySet, ExperimentConfig, ExperimentId};
use crate::report::{num, nums, Run};
use crate::LabError;

const SANDWICH_HEADER: &[&str] = &["mesh_level", "j", "gap", "dist", "far_dist", "psi_norm", "capacity_of_E"];

pub fn header(id: ExperimentId) -> &'static [&'static str] {
    match id {
        ExperimentId::Invariance => PERRON_HEADER,
        ExperimentId::MonotoneConvergence | ExperimentId::SobolevData => SANDWICH_HEADER,
        ExperimentId::Resolutivity => &["k", "approx_error", "hf_distance", "far_gap", "bracket"],
        ExperimentId::Uniqueness => &["mesh_level", "h", "distance", "tolerance", "pass", "capacity_of_E"],
        ExperimentId::MonotoneData => &["j", "gap", "increase", "iterations"],
        ExperimentId::CapacityScaling => CAPACITY_HEADER,
        ExperimentId::PoissonCounterexample => &["mesh_level", "h", "far_residual", "max_abs_u", "rejected_clause"],
    }
}

pub fn run_experiment(cfg: &ExperimentConfig, id: ExperimentId, run: &mut Run) -> Result<(), LabError> {
    match id {
        ExperimentId::Resolutivity => resolutivity(cfg, run),
        ExperimentId::Invariance => invariance(cfg, run),
        ExperimentId::Uniqueness => uniqueness(cfg, run),
        ExperimentId::MonotoneConvergence => monotone_convergence(cfg, run),
        ExperimentId::MonotoneData => monotone_data(cfg, run),
        ExperimentId::CapacityScaling => capacity_scaling(cfg, run),
        ExperimentId::PoissonCounterexample => poisson_counterexample(cfg, run),
        ExperimentId::SobolevData => sobolev_data(cfg, run),
    }
}

/// Sandwich for every amplitude; supports without a `ψ` sequence are
/// compared directly and must keep their effect under refinement.
fn invariance(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let mut amplitudes = vec![cfg.perturbation.value];
    amplitudes.extend(cfg.perturbation.sweep.iter().copied());
    for &a in &amplitudes {
        let levels = sandwich_study(cfg, a, run, false)?;
        if levels.iter().any(|l| l.unreachable.is_some()) {
            direct_persistence(cfg, a, run)?;
        } else {
            refinement_check(cfg, &levels, run, a);
        }
    }
    Ok(())
}

fn direct_persistence(cfg: &ExperimentConfig, value: f64, run: &mut Run) -> Result<(), LabError> {
    let spec = spec(cfg);
    let mut interior = Vec::new();
    let mut far = Vec::new();
    for &h in &cfg.mesh_levels {
        let m = mesh_at(cfg, h)?;
        let f = cfg.data.interpolate(&m);
        let pert = perturbation(cfg, &m, value)?;
        let g = direct_perturbation_gap(&m, &spec, &f, &pert, &sandwich_options(cfg)).map_err(LabError::solver)?;
        interior.push(g.interior);
        far.push(g.far);
    }
    let keep = cfg.tolerances.retention;
    let kept = |v: &[f64]| v[1..].iter().all(|&x| x >= keep * v[0]);
    run.metric(&format!("direct_gap_interior_amplitude_{}", num(value)), &interior);
    run.metric(&format!("direct_gap_far_amplitude_{}", num(value)), &far);
    run.check(
        format!("amplitude {}: positive-capacity support changes the solution", num(value)),
        "perron: without a psi sequence H(f+h) - Hf does not vanish under refinement",
        kept(&interior) && kept(&far),
        format!("interior {}, far {} (retention {})", nums(&interior), nums(&far), num(keep)),
    );
    Ok(())
}

fn monotone_convergence(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let m = finest(cfg)?;
    let spec = spec(cfg);
    let f = cfg.data.interpolate(&m);
    let pert = perturbation(cfg, &m, cfg.perturbation.value)?;
    let level = cfg.mesh_levels.len() - 1;
    let psi = match psi_on(cfg, &m, &pert)? {
        Ok(p) => p,
        Err((achieved, best)) => {
            run.check(
                "psi sequence",
                "capacity: psi sequence exists for sets of zero capacity",
                false,
                format!("reached depth {achieved}, best norm {}", num(best)),
            );
            return Ok(());
        }
    };
    let rep = perron_sandwich(&m, &spec, &f, &pert, &psi, &sandwich_options(cfg)).map_err(LabError::solver)?;
    for l in &rep.levels {
        run.row(vec![
            level.to_string(),
            l.j.to_string(),
            num(l.gap),
            num(l.dist),
            num(l.far_dist),
            num(l.psi_norm),
            num(rep.capacity_of_set),
        ]);
    }
    let tol = cfg.tolerances.solver;
    let far: Vec<f64> = rep.levels.iter().map(|l| l.far_dist).collect();
    run.check("sandwich", "perron: l_j <= Hf <= u_j", rep.sandwich, "");
    run.check("upper approximants decrease", "perron: u_(j+1) <= u_j", rep.upper_monotone, "");
    run.check(
        "distance nonincreasing",
        "perron: max(u_j - Hf) is nonincreasing in j",
        rep.dist_nonincreasing && far.windows(2).all(|w| w[1] <= w[0] + tol),
        format!("far-field {}", nums(&far)),
    );
    let osc = boundary_oscillation(&m, &f).max(f64::MIN_POSITIVE);
    let limit = cfg.tolerances.final_fraction * osc;
    run.check(
        "final far-field distance",
        "perron: u_K approaches Hf away from E",
        rep.final_level().far_dist <= limit,
        format!("{} (limit {})", num(rep.final_level().far_dist), num(limit)),
    );
    run.metric("far_dist", &far);
    run.metric("h", m.h());
    Ok(())
}

/// Lipschitz approximants `f_k` with `|f − f_k| ≤ 2^{-k}`: `Hf_k` stays
/// within `2^{-k}` of `Hf`, and the Perron bracket for `f + h` closes to
/// the far-field sandwich gap plus `2^{1-k}`.
fn resolutivity(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let m = finest(cfg)?;
    let spec = spec(cfg);
    let tol = cfg.tolerances.solver;
    let f = cfg.data.interpolate(&m);
    let hf = solve_dirichlet(&m, &spec, &f, tol).map_err(LabError::solver)?.solution;
    let pert = perturbation(cfg, &m, cfg.perturbation.value)?;
    let psi = match psi_on(cfg, &m, &pert)? {
        Ok(p) => p,
        Err((achieved, best)) => {
            run.check(
                "psi sequence",
                "capacity: psi sequence exists for sets of zero capacity",
                false,
                format!("reached depth {achieved}, best norm {}", num(best)),
            );
            return Ok(());
        }
    };
    let d = m.distance_to_set(&pert.support);
    let far_radius = cfg.tolerances.far_radius;
    let mut brackets = Vec::new();
    for k in 1..=cfg.depth {
        let fk_fn = match cfg.data {
            ScalarFunction::HolderCusp { center, alpha, level: None } => {
                ScalarFunction::HolderCusp { center, alpha, level: Some(k as u32) }
            }
            ref other => other.clone(),
        };
        let fk = fk_fn.interpolate(&m);
        let eps = 0.5f64.powi(k as i32);
        let approx = fk.max_abs_diff(&f);
        run.check(
            format!("k={k}: uniform approximation"),
            "perron: |f - f_k| <= 2^-k",
            approx <= eps + 1e-12,
            format!("max |f - f_k| {}", num(approx)),
        );
        let rep = perron_sandwich(&m, &spec, &fk, &pert, &psi, &sandwich_options(cfg)).map_err(LabError::solver)?;
        let hfk = &rep.hf;
        let hd = hfk.max_abs_diff(&hf);
        run.check(
            format!("k={k}: comparison"),
            "dirichlet: |Hf_k - Hf| <= sup|f_k - f|",
            hd <= approx + 2.0 * tol,
            format!("max |Hf_k - Hf| {}", num(hd)),
        );
        run.check(format!("k={k}: sandwich"), "perron: l_j <= Hf_k <= u_j", rep.sandwich, "");
        let (u, l) = (rep.upper.last().expect("depth >= 1"), rep.lower.last().expect("depth >= 1"));
        let far_gap =
            m.interior_nodes().iter().filter(|&&i| d[i] >= far_radius).map(|&i| u[i] - l[i]).fold(0.0, f64::max);
        let bracket = far_gap + 2.0 * eps;
        run.row(vec![k.to_string(), num(approx), num(hd), num(far_gap), num(bracket)]);
        brackets.push(bracket);
    }
    run.check(
        "bracket closes",
        "perron: upper and lower Perron bounds for f + h meet as k grows",
        brackets.windows(2).all(|w| w[1] < w[0]),
        format!("far-field brackets {}", nums(&brackets)),
    );
    run.metric("brackets", &brackets);
    Ok(())
}

fn uniqueness(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let spec = spec(cfg);
    let t = &cfg.tolerances;
    let candidate = cfg.candidate.clone().unwrap_or(Candidate::Hg);
    let mut distances = Vec::new();
    for (level, &h) in cfg.mesh_levels.iter().enumerate() {
        let m = mesh_at(cfg, h)?;
        let f = cfg.data.interpolate(&m);
        let pert = perturbation(cfg, &m, cfg.perturbation.value)?;
        let u = match &candidate {
            Candidate::Hf => solve_dirichlet(&m, &spec, &f, t.solver).map_err(LabError::solver)?.solution,
            Candidate::Hg => {
                let g = f.zip_map(&pert.field(m.node_count()), |a, b| a + b);
                solve_dirichlet(&m, &spec, &g, t.solver).map_err(LabError::solver)?.solution
            }
            Candidate::Function { function, cap } => function.interpolate_capped(&m, *cap),
        };
        let opts = UniquenessOptions {
            tol: t.solver,
            bound: t.bound,
            residual_tol: t.residual,
            distance_tol: t.distance,
            box_h: if pert.is_empty() { None } else { Some(shortest_edge(&m)) },
        };
        let tag = format!("level {level} (h={})", num(h));
        match uniqueness_check(&m, &spec, &f, &u, &pert.support, &opts) {
            Ok(v) => {
                let cap = v.capacity_of_set.map(num).unwrap_or_default();
                run.row(vec![
                    level.to_string(),
                    num(m.h()),
                    num(v.distance),
                    num(v.tolerance),
                    v.pass.to_string(),
                    cap,
                ]);
                run.check(
                    format!("{tag}: candidate equals Hf"),
                    "perron: a bounded solution agreeing with f off a capacity-zero E is Hf",
                    v.pass,
                    format!("max |u - Hf| {} (tol {})", num(v.distance), num(v.tolerance)),
                );
                distances.push(v.distance);
            }
            Err(PerronError::Rejected { clause, detail }) => {
                run.row(vec![
                    level.to_string(),
                    num(m.h()),
                    String::new(),
                    num(t.distance),
                    "false".into(),
                    String::new(),
                ]);
                run.check(
                    format!("{tag}: candidate admissible"),
                    "perron: uniqueness needs a bounded discrete solution agreeing with f off E",
                    false,
                    format!("rejected ({clause}): {detail}"),
                );
            }
            Err(e) => return Err(LabError::solver(e)),
        }
    }
    run.metric("distances", &distances);
    Ok(())
}

fn monotone_data(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let m = finest(cfg)?;
    let spec = spec(cfg);
    let tol = cfg.tolerances.solver;
    let f = cfg.data.interpolate(&m);
    let pert = perturbation(cfg, &m, cfg.perturbation.value.abs())?;
    let n = m.node_count();
    let psi: Field = if pert.is_empty() { NodalField::constant(n, 1.0) } else { pert.field(n) };
    let top = m.boundary_nodes().iter().map(|&i| psi[i]).fold(0.0, f64::max);
    let study = monotone_data_study(&m, &spec, &f, &psi, cfg.depth, tol).map_err(LabError::solver)?;
    for l in &study.levels {
        run.row(vec![l.j.to_string(), num(l.gap), num(l.increase), l.iterations.to_string()]);
    }
    run.check("decreasing solutions", "dirichlet: f_(j+1) <= f_j implies Hf_(j+1) <= Hf_j", study.monotone, "");
    let bounded = study.levels.iter().all(|l| l.gap <= 0.5f64.powi(l.j as i32) * top + 2.0 * tol);
    let gaps: Vec<f64> = study.levels.iter().map(|l| l.gap).collect();
    run.check("convergence to Hf", "dirichlet: |Hf_j - Hf| <= 2^-j max psi", bounded, format!("gaps {}", nums(&gaps)));
    run.metric("gaps", &gaps);
    Ok(())
}

fn capacity_scaling(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let sets = if cfg.capacity_sets.is_empty() {
        vec![
            CapacitySet {
                id: "point".into(),
                support: PerturbationSupport::Node { at: [0.0, 0.0] },
                box_side: 4.0,
                center: [0.0, 0.0],
            },
            CapacitySet {
                id: "edge".into(),
                support: PerturbationSupport::Segment { from: [-0.5, 0.0], to: [0.5, 0.0] },
                box_side: 8.0,
                center: [0.0, 0.0],
            },
        ]
    } else {
        cfg.capacity_sets.clone()
    };
    let values = capacity_table(cfg, &sets, run)?;
    let p = spec(cfg).p;
    for (s, v) in sets.iter().zip(&values) {
        let ratios: Vec<f64> = v.windows(2).map(|w| w[1] / w[0]).collect();
        match s.support {
            PerturbationSupport::Node { .. } if p <= 2.0 => run.check(
                format!("{}: vanishes under refinement", s.id),
                "capacity: a point has zero capacity for p <= 2",
                ratios.iter().all(|&r| r > 0.0 && r < 1.0),
                format!("values {}, ratios {}", nums(v), nums(&ratios)),
            ),
            PerturbationSupport::Segment { .. } => {
                let (lo, hi) = v.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
                let keep = cfg.tolerances.retention;
                run.check(
                    format!("{}: stays bounded below", s.id),
                    "capacity: a segment has positive capacity",
                    lo >= keep * hi,
                    format!("values {}, min/max {:.3} (limit {})", nums(v), lo / hi, num(keep)),
                )
            }
            _ => {}
        }
    }
    // a larger box admits more test functions
    let h = cfg.mesh_levels[0];
    let base = &sets[0];
    let grown = CapacitySet { id: format!("{}-grown", base.id), box_side: 2.0 * base.box_side, ..base.clone() };
    let cfg_coarse = ExperimentConfig { mesh_levels: vec![h], ..cfg.clone() };
    let g = capacity_table(&cfg_coarse, std::slice::from_ref(&grown), run)?;
    run.check(
        format!("{}: box growth", base.id),
        "capacity: the estimate does not increase when the box grows",
        g[0][0] <= values[0][0] * (1.0 + 1e-10),
        format!("side {}: {}, side {}: {}", num(base.box_side), num(values[0][0]), num(grown.box_side), num(g[0][0])),
    );
    Ok(())
}

/// The Poisson kernel solves the equation away from its pole, is zero on the
/// rest of the boundary, and is unbounded, so it is not the solution for
/// zero data.
fn poisson_counterexample(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let spec = spec(cfg);
    let t = &cfg.tolerances;
    let pole = match cfg.perturbation.support {
        PerturbationSupport::Node { at } => at,
        _ => [1.0, 0.0],
    };
    let kernel = ScalarFunction::PoissonKernel { pole };
    let far_radius = 0.5;
    let (mut far_res, mut max_u) = (Vec::new(), Vec::new());
    for (level, &h) in cfg.mesh_levels.iter().enumerate() {
        let m = mesh_at(cfg, h)?;
        let f = cfg.data.interpolate(&m);
        let e = PerturbationSupport::Node { at: pole }.resolve(&m).map_err(LabError::Config)?;
        let u = kernel.interpolate_capped(&m, 1e6);
        let r = residual(&m, &spec, &u).map_err(LabError::solver)?;
        let far_dist = |i: usize| {
            let p = m.node_f64(i);
            (p[0] - pole[0]).hypot(p[1] - pole[1])
        };
        let fr = m
            .interior_nodes()
            .iter()
            .filter(|&&i| far_dist(i) >= far_radius)
            .map(|&i| r.values[i].abs())
            .fold(0.0, f64::max);
        let mu = m.interior_nodes().iter().map(|&i| u[i].abs()).fold(0.0, f64::max);
        let opts = UniquenessOptions {
            tol: t.solver,
            bound: t.bound,
            residual_tol: t.residual,
            distance_tol: t.distance,
            box_h: None,
        };
        let clause = match uniqueness_check(&m, &spec, &f, &u, &e, &opts) {
            Err(PerronError::Rejected { clause, .. }) => clause,
            Ok(v) if !v.pass => "distance".to_string(),
            Ok(_) => String::new(),
            Err(e) => return Err(LabError::solver(e)),
        };
        run.row(vec![level.to_string(), num(m.h()), num(fr), num(mu), clause.clone()]);
        run.check(
            format!("level {level} (h={}): kernel is not the solution", num(h)),
            "perron: uniqueness fails without boundedness",
            !clause.is_empty(),
            format!("rejected by clause {clause:?}"),
        );
        far_res.push(fr);
        max_u.push(mu);
    }
    run.metric("far_residual", &far_res);
    run.metric("max_abs_u", &max_u);
    run.check(
        "residual decays away from the pole",
        "operator: the kernel solves the equation in the disc",
        far_res.windows(2).all(|w| w[1] < w[0]),
        format!("max residual at distance >= {far_radius}: {}", nums(&far_res)),
    );
    run.check(
        "growth toward the pole",
        "perron: the kernel is unbounded near its pole",
        max_u.windows(2).all(|w| w[1] > w[0]),
        format!("max interior |u| {}", nums(&max_u)),
    );
    Ok(())
}

/// Sandwich with boundary data that need not be Lipschitz: the nodal values
/// of a Sobolev function.
fn sobolev_data(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let mut slopes = Vec::new();
    for &h in &cfg.mesh_levels {
        let m = mesh_at(cfg, h)?;
        let f = cfg.data.interpolate(&m);
        let mut s = 0.0f64;
        for i in 0..m.node_count() {
            for &j in m.neighbors(i) {
                let (a, b) = (m.node_f64(i), m.node_f64(j));
                s = s.max((f[i] - f[j]).abs() / (a[0] - b[0]).hypot(a[1] - b[1]));
            }
        }
        slopes.push(s);
    }
    run.metric("data_edge_slopes", &slopes);
    let levels = sandwich_study(cfg, cfg.perturbation.value, run, true)?;
    for (k, l) in levels.iter().enumerate() {
        if let Some((achieved, best)) = l.unreachable {
            run.check(
                format!("level {k} (h={}): psi sequence", num(l.h)),
                "capacity: psi sequence exists for sets of zero capacity",
                false,
                format!("reached depth {achieved}, best norm {}", num(best)),
            );
        }
    }
    refinement_check(cfg, &levels, run, cfg.perturbation.value);
    Ok(())
}
