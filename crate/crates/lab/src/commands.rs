//! The single-purpose subcommands.

use perron_core::capacity::{capacity_box, estimate_capacity, CapacityError};
use perron_core::dirichlet::solve_dirichlet;
use perron_core::mesh::{build_mesh, NodalField};
use perron_core::obstacle::{solve_obstacle, ObstacleSpec};
use perron_core::operator::{residual, WeightSpec};
use perron_core::oracle::{brute_force_obstacle, dense_capacity, walk_on_spheres, ClosedForm, OracleError};
use perron_core::perron::{
    perron_sandwich, psi_for_perturbation, shortest_edge, PerronError, PerturbationSpec, PerturbationSupport,
    PsiOnMesh, SandwichOptions,
};
use perron_core::{Field, Mesh, Operator};

use crate::config::{CapacitySet, ExperimentConfig};
use crate::report::{num, nums, Run};
use crate::{LabError, OracleKind};

pub const NODE_HEADER: &[&str] = &["node_id", "x", "y", "u"];
pub const CAPACITY_HEADER: &[&str] = &["set_id", "h", "box_side", "value"];
pub const PERRON_HEADER: &[&str] = &["mesh_level", "j", "gap", "dist", "psi_norm", "capacity_of_E"];

/// Largest box for which the dense capacity cross-check runs.
const DENSE_CHECK_NODES: usize = 1200;

pub(crate) fn mesh_at(cfg: &ExperimentConfig, h: f64) -> Result<Mesh, LabError> {
    build_mesh(&cfg.domain, h).map_err(LabError::config)
}

pub(crate) fn finest(cfg: &ExperimentConfig) -> Result<Mesh, LabError> {
    mesh_at(cfg, *cfg.mesh_levels.last().expect("validated"))
}

pub(crate) fn spec(cfg: &ExperimentConfig) -> Operator {
    cfg.operator
}

pub(crate) fn perturbation(cfg: &ExperimentConfig, m: &Mesh, value: f64) -> Result<PerturbationSpec, LabError> {
    let support = cfg.perturbation.support.resolve(m).map_err(LabError::Config)?;
    Ok(PerturbationSpec::constant(support, value))
}

pub(crate) fn sandwich_options(cfg: &ExperimentConfig) -> SandwichOptions {
    SandwichOptions { tol: cfg.tolerances.solver, far_radius: cfg.tolerances.far_radius }
}

fn boundary_range(m: &Mesh, f: &Field) -> (f64, f64) {
    m.boundary_nodes().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(f[i]), hi.max(f[i])))
}

pub(crate) fn boundary_oscillation(m: &Mesh, f: &Field) -> f64 {
    let (lo, hi) = boundary_range(m, f);
    hi - lo
}

fn node_rows(run: &mut Run, m: &Mesh, u: &Field) {
    for i in 0..m.node_count() {
        let [x, y] = m.node_f64(i);
        run.row(vec![i.to_string(), num(x), num(y), num(u[i])]);
    }
}

fn partial_rows(run: &mut Run, m: &Mesh, e: &perron_core::solver::SolveError<f64>) {
    if let perron_core::solver::SolveError::NonConvergence { best, .. } = e {
        node_rows(run, m, best);
    }
}

pub fn solve(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let m = finest(cfg)?;
    let spec = spec(cfg);
    let tol = cfg.tolerances.solver;
    let f = cfg.data.interpolate(&m);
    let rep = match solve_dirichlet(&m, &spec, &f, tol) {
        Ok(r) => r,
        Err(e) => {
            partial_rows(run, &m, &e);
            return Err(LabError::solver(e));
        }
    };
    let u = &rep.solution;
    node_rows(run, &m, u);
    run.metric("h", m.h());
    run.metric("nodes", m.node_count());
    run.metric("iterations", rep.iterations);
    run.metric("energy", rep.energy_value);
    let boundary_ok = m.boundary_nodes().iter().all(|&i| u[i] == f[i]);
    run.check("boundary data attained", "dirichlet: u = f on boundary nodes", boundary_ok, "");
    let r = residual(&m, &spec, u).map_err(LabError::solver)?.max_interior();
    run.check(
        "discrete equation solved",
        "dirichlet: interior residual within the solver tolerance",
        r <= tol,
        format!("max interior residual {} (tol {})", num(r), num(tol)),
    );
    let (lo, hi) = boundary_range(&m, &f);
    let (ulo, uhi) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let slack = 1e-8 * (1.0 + hi.abs().max(lo.abs()));
    run.check(
        "maximum principle",
        "dirichlet: min f <= u <= max f",
        ulo >= lo - slack && uhi <= hi + slack,
        format!("u in [{}, {}], f in [{}, {}]", num(ulo), num(uhi), num(lo), num(hi)),
    );
    if let Ok(form) = ClosedForm::new(cfg.data.clone(), spec.p) {
        if spec.anisotropy.is_none() && matches!(spec.weight, WeightSpec::Constant { .. }) {
            run.metric("sup_error_vs_closed_form", m.sup_error(u, |x, y| form.function.eval([x, y])));
        }
    }
    Ok(())
}

pub fn obstacle(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let psi_fn =
        cfg.obstacle.as_ref().ok_or_else(|| LabError::Config("the obstacle command needs `obstacle`".into()))?;
    let m = finest(cfg)?;
    let spec = spec(cfg);
    let tol = cfg.tolerances.solver;
    let ob = ObstacleSpec::new(psi_fn.interpolate(&m), cfg.data.interpolate(&m));
    ob.validate(&m).map_err(LabError::config)?;
    let rep = match solve_obstacle(&m, &spec, &ob, tol) {
        Ok(r) => r,
        Err(e) => {
            partial_rows(run, &m, &e);
            return Err(LabError::solver(e));
        }
    };
    let u = &rep.solution;
    node_rows(run, &m, u);
    let r = residual(&m, &spec, u).map_err(LabError::solver)?;
    let interior = m.interior_nodes();
    let contact = interior.iter().filter(|&&i| u[i] <= ob.obstacle[i] + tol).count();
    run.metric("h", m.h());
    run.metric("nodes", m.node_count());
    run.metric("contact_nodes", contact);
    run.metric("iterations", rep.iterations);
    let below = interior.iter().map(|&i| ob.obstacle[i] - u[i]).fold(f64::NEG_INFINITY, f64::max);
    run.check(
        "solution above the obstacle",
        "obstacle: u >= psi at every node",
        below <= tol,
        format!("max(psi - u) {}", num(below)),
    );
    let worst = interior.iter().map(|&i| r.values[i]).fold(f64::INFINITY, f64::min);
    run.check(
        "supersolution",
        "obstacle: every interior residual >= -tol",
        worst >= -tol,
        format!("min residual {}", num(worst)),
    );
    let slack =
        interior.iter().filter(|&&i| u[i] > ob.obstacle[i] + tol).map(|&i| r.values[i].abs()).fold(0.0, f64::max);
    run.check(
        "complementarity",
        "obstacle: residual vanishes off the contact set",
        slack <= tol,
        format!("max residual off contact {}", num(slack)),
    );
    let boundary_ok = m.boundary_nodes().iter().all(|&i| u[i] == ob.data[i]);
    run.check("boundary data attained", "obstacle: u = f on boundary nodes", boundary_ok, "");
    Ok(())
}

/// Nodes of `b` selected by `support`: the nearest node to a point, or
/// every node within `1e-9` of a segment.
pub(crate) fn box_support(b: &Mesh, support: &PerturbationSupport) -> Vec<usize> {
    let d = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
    match *support {
        PerturbationSupport::Empty => Vec::new(),
        PerturbationSupport::Node { at } => (0..b.node_count())
            .min_by(|&i, &j| d(b.node_f64(i), at).total_cmp(&d(b.node_f64(j), at)))
            .into_iter()
            .collect(),
        PerturbationSupport::Segment { from, to } => (0..b.node_count())
            .filter(|&i| {
                let p = b.node_f64(i);
                let v = [to[0] - from[0], to[1] - from[1]];
                let l2 = v[0] * v[0] + v[1] * v[1];
                let t = if l2 > 0.0 {
                    (((p[0] - from[0]) * v[0] + (p[1] - from[1]) * v[1]) / l2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                d(p, [from[0] + t * v[0], from[1] + t * v[1]]) <= 1e-9
            })
            .collect(),
    }
}

/// Capacity of every set at every mesh level. Returns the values per set.
pub(crate) fn capacity_table(
    cfg: &ExperimentConfig,
    sets: &[CapacitySet],
    run: &mut Run,
) -> Result<Vec<Vec<f64>>, LabError> {
    let spec = spec(cfg);
    let mut all = Vec::new();
    for s in sets {
        let mut values = Vec::new();
        let mut dense_rel: Vec<f64> = Vec::new();
        for &h in &cfg.mesh_levels {
            let b: Mesh = capacity_box(s.center, s.box_side, h);
            let set = box_support(&b, &s.support);
            let est = match estimate_capacity(&b, &spec, &set, cfg.tolerances.capacity) {
                Ok(e) => e,
                Err(CapacityError::InvalidSet(msg)) => return Err(LabError::Config(format!("set {}: {msg}", s.id))),
                Err(e) => return Err(LabError::solver(e)),
            };
            run.row(vec![s.id.clone(), num(h), num(est.box_side), num(est.value)]);
            let pinned_ok = est.pinned.iter().all(|&i| est.minimizer[i] == 1.0)
                && est.minimizer.iter().all(|&v| (0.0..=1.0).contains(&v));
            run.check(
                format!("{} at h={}: admissible minimiser", s.id, num(h)),
                "capacity: the minimiser is 1 on E and its one-ring and lies in [0, 1]",
                pinned_ok && est.value >= 0.0,
                format!("value {}", num(est.value)),
            );
            if b.node_count() <= DENSE_CHECK_NODES && !set.is_empty() {
                match dense_capacity(&b, &spec, &set) {
                    Ok(d) => dense_rel.push((est.value - d).abs() / d.max(f64::MIN_POSITIVE)),
                    Err(OracleError::Rejected(_)) | Err(OracleError::TooLarge(_)) => {}
                }
            }
            values.push(est.value);
        }
        if !dense_rel.is_empty() {
            run.check(
                format!("{}: dense cross-check", s.id),
                "capacity: sparse and dense minimisations agree",
                dense_rel.iter().all(|&r| r <= 1e-8),
                format!("relative differences {}", nums(&dense_rel)),
            );
        }
        run.metric(&format!("capacity_{}", s.id), &values);
        all.push(values);
    }
    Ok(all)
}

pub fn capacity(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    if cfg.capacity_sets.is_empty() {
        return Err(LabError::Config("the capacity command needs `capacity_sets`".into()));
    }
    capacity_table(cfg, &cfg.capacity_sets, run)?;
    Ok(())
}

/// Result of the Perron sandwich on one mesh level.
#[derive(Debug, Clone)]
pub(crate) struct LevelOutcome {
    pub h: f64,
    /// Far-field `max|u_j − Hf|` per `j`; empty when no `ψ` sequence exists.
    pub far: Vec<f64>,
    /// Depth reached by the `ψ` construction when it fails.
    pub unreachable: Option<(usize, f64)>,
}

/// Builds `ψ` on one mesh, or reports the depth reached when the support
/// has too much capacity.
pub(crate) fn psi_on(
    cfg: &ExperimentConfig,
    m: &Mesh,
    pert: &PerturbationSpec,
) -> Result<Result<PsiOnMesh<f64>, (usize, f64)>, LabError> {
    match psi_for_perturbation(m, &spec(cfg), pert, cfg.depth, shortest_edge(m), cfg.tolerances.capacity) {
        Ok(p) => Ok(Ok(p)),
        Err(PerronError::Capacity(CapacityError::Unreachable { achieved, best_norm, .. })) => {
            Ok(Err((achieved, best_norm)))
        }
        Err(PerronError::Invalid(m)) | Err(PerronError::Capacity(CapacityError::InvalidSet(m))) => {
            Err(LabError::Config(m))
        }
        Err(e) => Err(LabError::solver(e)),
    }
}

/// Runs the sandwich at every mesh level for the perturbation amplitude
/// `value`, adding rows and per-level assertions to `run`.
pub(crate) fn sandwich_study(
    cfg: &ExperimentConfig,
    value: f64,
    run: &mut Run,
    with_far_column: bool,
) -> Result<Vec<LevelOutcome>, LabError> {
    let spec = spec(cfg);
    let opts = sandwich_options(cfg);
    let tol = cfg.tolerances.solver;
    let mut out = Vec::new();
    for (level, &h) in cfg.mesh_levels.iter().enumerate() {
        let m = mesh_at(cfg, h)?;
        let f = cfg.data.interpolate(&m);
        let pert = perturbation(cfg, &m, value)?;
        let tag = format!("level {level} (h={}), amplitude {}", num(h), num(value));
        let psi = match psi_on(cfg, &m, &pert)? {
            Ok(p) => p,
            Err((achieved, best)) => {
                run.metric(&format!("psi_unreachable_level_{level}_amplitude_{}", num(value)), (achieved, best));
                out.push(LevelOutcome { h, far: Vec::new(), unreachable: Some((achieved, best)) });
                continue;
            }
        };
        run.check(
            format!("{tag}: psi sequence"),
            "capacity: psi_j >= 0, decreasing, ||psi_j|| < 2^-j and psi_j >= m on U_(j+m)",
            psi.sequence.invariants.all(),
            format!("norms {}", nums(&psi.sequence.psi_norms)),
        );
        let rep = perron_sandwich(&m, &spec, &f, &pert, &psi, &opts).map_err(LabError::solver)?;
        for l in &rep.levels {
            let mut row = vec![level.to_string(), l.j.to_string(), num(l.gap), num(l.dist)];
            if with_far_column {
                row.push(num(l.far_dist));
            }
            row.push(num(l.psi_norm));
            row.push(num(rep.capacity_of_set));
            run.row(row);
        }
        let gaps: Vec<f64> = rep.levels.iter().map(|l| l.gap).collect();
        let far: Vec<f64> = rep.levels.iter().map(|l| l.far_dist).collect();
        run.check(
            format!("{tag}: sandwich"),
            "perron: l_j <= Hf <= u_j",
            rep.sandwich,
            format!("min margin {}", num(rep.levels.iter().map(|l| l.sandwich_margin).fold(f64::INFINITY, f64::min))),
        );
        run.check(
            format!("{tag}: monotone upper approximants"),
            "perron: u_(j+1) <= u_j",
            rep.upper_monotone && rep.dist_nonincreasing,
            format!("dist {}", nums(&rep.levels.iter().map(|l| l.dist).collect::<Vec<_>>())),
        );
        if pert.is_empty() {
            run.check(
                format!("{tag}: empty perturbation"),
                "perron: with h = 0 every gap is at most 2 tol",
                gaps.iter().all(|&g| g <= 2.0 * tol),
                format!("gaps {}", nums(&gaps)),
            );
        }
        run.metric(&format!("far_dist_level_{level}_amplitude_{}", num(value)), &far);
        out.push(LevelOutcome { h, far, unreachable: None });
    }
    Ok(out)
}

pub fn perron(cfg: &ExperimentConfig, run: &mut Run) -> Result<(), LabError> {
    let levels = sandwich_study(cfg, cfg.perturbation.value, run, false)?;
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

/// Far-field `dist_K` must shrink by `tolerances.refinement_factor` per
/// mesh level.
pub(crate) fn refinement_check(cfg: &ExperimentConfig, levels: &[LevelOutcome], run: &mut Run, value: f64) {
    let finals: Vec<f64> = levels.iter().filter_map(|l| l.far.last().copied()).collect();
    if finals.len() < 2 || finals.len() != levels.len() || cfg.perturbation.support == PerturbationSupport::Empty {
        return;
    }
    let factors: Vec<f64> = finals.windows(2).map(|w| w[1] / w[0]).collect();
    let limit = cfg.tolerances.refinement_factor;
    run.check(
        format!("amplitude {}: far-field dist_K under refinement", num(value)),
        "perron: dist_K -> 0 as the mesh is refined",
        factors.iter().all(|&r| r <= limit),
        format!("dist_K {}, factors {} (limit {})", nums(&finals), nums(&factors), num(limit)),
    );
}

pub fn oracle_table(kind: OracleKind) -> (&'static str, &'static [&'static str]) {
    match kind {
        OracleKind::Wos => ("oracle-wos", &["point_id", "x", "y", "solver", "estimate", "stderr"]),
        OracleKind::ClosedForm => ("oracle-closed-form", &["mesh_level", "h", "sup_error"]),
        OracleKind::BfObstacle => ("oracle-bf-obstacle", &["node_id", "x", "y", "u", "oracle"]),
    }
}

pub fn oracle(cfg: &ExperimentConfig, kind: OracleKind, run: &mut Run) -> Result<(), LabError> {
    let spec = spec(cfg);
    let tol = cfg.tolerances.solver;
    match kind {
        OracleKind::Wos => {
            let oc = cfg.oracle.as_ref().ok_or_else(|| LabError::Config("the wos oracle needs `oracle`".into()))?;
            if oc.points.is_empty() {
                return Err(LabError::Config("oracle.points must not be empty".into()));
            }
            let m = finest(cfg)?;
            let f = cfg.data.interpolate(&m);
            let u = solve_dirichlet(&m, &spec, &f, tol).map_err(LabError::solver)?.solution;
            let loc = m.locator();
            let mut ratios = Vec::new();
            for (k, &p) in oc.points.iter().enumerate() {
                let est =
                    walk_on_spheres(&cfg.domain, &spec, &cfg.data, p, oc.samples, cfg.seed.wrapping_add(k as u64))
                        .map_err(LabError::config)?;
                let s =
                    loc.evaluate(&u, p).ok_or_else(|| LabError::Config(format!("point {p:?} is outside the mesh")))?;
                run.row(vec![k.to_string(), num(p[0]), num(p[1]), num(s), num(est.estimate), num(est.stderr)]);
                ratios.push((s - est.estimate).abs() / est.stderr.max(f64::MIN_POSITIVE));
            }
            run.metric("deviation_in_stderr", &ratios);
            run.check(
                "solver within the Monte-Carlo error",
                "oracle: walk-on-spheres agrees with the Dirichlet solver",
                ratios.iter().all(|&r| r <= oc.sigmas),
                format!("|solver - estimate| / stderr {} (limit {})", nums(&ratios), num(oc.sigmas)),
            );
        }
        OracleKind::ClosedForm => {
            let form = ClosedForm::new(cfg.data.clone(), spec.p).map_err(LabError::config)?;
            if spec.anisotropy.is_some() || !matches!(spec.weight, WeightSpec::Constant { .. }) {
                return Err(LabError::Config("closed forms need an unweighted isotropic operator".into()));
            }
            let mut errors = Vec::new();
            for (level, &h) in cfg.mesh_levels.iter().enumerate() {
                let m = mesh_at(cfg, h)?;
                let f = NodalField::new(
                    (0..m.node_count())
                        .map(|i| form.eval(m.node_f64(i)))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(LabError::config)?,
                );
                let u = solve_dirichlet(&m, &spec, &f, tol).map_err(LabError::solver)?.solution;
                let e = m.sup_error(&u, |x, y| form.function.eval([x, y]));
                run.row(vec![level.to_string(), num(m.h()), num(e)]);
                errors.push(e);
            }
            run.metric("sup_errors", &errors);
            run.check(
                "error decreases under refinement",
                "oracle: discrete solutions converge to the closed form",
                errors.windows(2).all(|w| w[1] < w[0]),
                format!("sup errors {}", nums(&errors)),
            );
        }
        OracleKind::BfObstacle => {
            let psi_fn = cfg
                .obstacle
                .as_ref()
                .ok_or_else(|| LabError::Config("the bf-obstacle oracle needs `obstacle`".into()))?;
            let m = mesh_at(cfg, cfg.mesh_levels[0])?;
            let ob = ObstacleSpec::new(psi_fn.interpolate(&m), cfg.data.interpolate(&m));
            let exact = brute_force_obstacle(&m, &spec, &ob).map_err(LabError::config)?;
            let u = solve_obstacle(&m, &spec, &ob, tol).map_err(LabError::solver)?.solution;
            for i in 0..m.node_count() {
                let [x, y] = m.node_f64(i);
                run.row(vec![i.to_string(), num(x), num(y), num(u[i]), num(exact[i])]);
            }
            let d = u.max_abs_diff(&exact);
            run.metric("max_difference", d);
            run.check(
                "solver matches exhaustive search",
                "oracle: brute-force obstacle minimiser equals the solver output",
                d <= 1e-8,
                format!("max difference {}", num(d)),
            );
        }
    }
    Ok(())
}
