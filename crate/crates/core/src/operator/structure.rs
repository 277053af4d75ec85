//! Randomised verification of coercivity, growth, monotonicity and
//! homogeneity of a flux.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Flux, OperatorError};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Coercivity,
    Growth,
    Monotonicity,
    Homogeneity,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Condition::Coercivity => "coercivity A(x,q).q >= alpha w(x)|q|^p",
            Condition::Growth => "growth |A(x,q)| <= beta w(x)|q|^(p-1)",
            Condition::Monotonicity => "strict monotonicity (A(x,q1)-A(x,q2)).(q1-q2) > 0",
            Condition::Homogeneity => "homogeneity A(x,lq) = l|l|^(p-2) A(x,q)",
        };
        f.write_str(s)
    }
}

/// First sample at which a condition failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub condition: Condition,
    pub x: [f64; 2],
    pub q1: [f64; 2],
    pub q2: [f64; 2],
    pub lambda: f64,
    pub margin: f64,
}

/// Worst observed margins, normalised so that a nonnegative value means the
/// condition held (`homogeneity` is the worst relative defect).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub samples: usize,
    pub coercivity_margin: f64,
    pub growth_margin: f64,
    pub monotonicity_margin: f64,
    pub homogeneity_defect: f64,
    pub violation: Option<Violation>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

const HOMOGENEITY_TOL: f64 = 1e-10;

/// Draws `sample_count` random `(x, q1, q2, λ)` with `x ∈ [-1,1]²`,
/// gradient magnitudes spread log-uniformly over `[1e-3, 1e3]` and
/// `λ ∈ [-4, 4]`, and checks the four structure conditions of `flux`.
pub fn check_structure_conditions<T: Real, F: Flux<T> + ?Sized>(
    flux: &F,
    sample_count: usize,
    seed: u64,
) -> Result<StructureReport, OperatorError> {
    if sample_count == 0 {
        return Err(OperatorError::Invalid("sample_count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = flux.exponent().as_f64();
    let alpha = flux.alpha().as_f64();
    let beta = flux.beta().as_f64();
    let rel = 64.0 * T::epsilon().as_f64();
    let homog_tol = HOMOGENEITY_TOL.max(rel * 16.0);

    let mut report = StructureReport {
        samples: sample_count,
        coercivity_margin: f64::INFINITY,
        growth_margin: f64::INFINITY,
        monotonicity_margin: f64::INFINITY,
        homogeneity_defect: 0.0,
        violation: None,
    };

    let vector = |rng: &mut ChaCha8Rng| {
        let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
        let th = rng.gen_range(0.0..std::f64::consts::TAU);
        [mag * th.cos(), mag * th.sin()]
    };

    for _ in 0..sample_count {
        let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let q1 = vector(&mut rng);
        let q2 = vector(&mut rng);
        let lambda: f64 = rng.gen_range(-4.0..4.0);
        let witness = |condition, margin| Violation { condition, x, q1, q2, lambda, margin };

        let xt = [T::lit(x[0]), T::lit(x[1])];
        let q1t = [T::lit(q1[0]), T::lit(q1[1])];
        let q2t = [T::lit(q2[0]), T::lit(q2[1])];
        let w = flux.weight_at(xt).as_f64();
        let a1 = to_f64(flux.flux(xt, q1t));
        let a2 = to_f64(flux.flux(xt, q2t));
        let n1 = q1[0].hypot(q1[1]);

        let coerc = dot(a1, q1) / (w * n1.powf(p)) - alpha;
        let growth = beta - a1[0].hypot(a1[1]) / (w * n1.powf(p - 1.0));
        let dq = [q1[0] - q2[0], q1[1] - q2[1]];
        let da = [a1[0] - a2[0], a1[1] - a2[1]];
        let scale = w * dq[0].hypot(dq[1]) * (n1 + q2[0].hypot(q2[1])).powf(p - 1.0);
        let mono = dot(da, dq) / scale;

        let lt = T::lit(lambda);
        let al = to_f64(flux.flux(xt, [lt * q1t[0], lt * q1t[1]]));
        let factor = lambda * lambda.abs().powf(p - 2.0);
        let expect = [factor * a1[0], factor * a1[1]];
        let defect = (al[0] - expect[0]).hypot(al[1] - expect[1]) / expect[0].hypot(expect[1]).max(f64::MIN_POSITIVE);

        report.coercivity_margin = report.coercivity_margin.min(coerc);
        report.growth_margin = report.growth_margin.min(growth);
        report.monotonicity_margin = report.monotonicity_margin.min(mono);
        report.homogeneity_defect = report.homogeneity_defect.max(defect);

        if report.violation.is_none() {
            let tol_c = rel * alpha.max(1.0);
            let tol_g = rel * beta.max(1.0);
            report.violation = if !(coerc >= -tol_c) {
                Some(witness(Condition::Coercivity, coerc))
            } else if !(growth >= -tol_g) {
                Some(witness(Condition::Growth, growth))
            } else if !(mono > 0.0) {
                Some(witness(Condition::Monotonicity, mono))
            } else if !(defect <= homog_tol) {
                Some(witness(Condition::Homogeneity, -defect))
            } else {
                None
            };
        }
    }
    Ok(report)
}

fn to_f64<T: Real>(a: [T; 2]) -> [f64; 2] {
    [a[0].as_f64(), a[1].as_f64()]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{OperatorSpec, WeightSpec};

    struct Flipped(OperatorSpec<f64>);

    impl Flux<f64> for Flipped {
        fn exponent(&self) -> f64 {
            self.0.p
        }
        fn weight_at(&self, x: [f64; 2]) -> f64 {
            self.0.weight_at(x)
        }
        fn flux(&self, x: [f64; 2], q: [f64; 2]) -> [f64; 2] {
            let a = Flux::flux(&self.0, x, q);
            [-a[0], -a[1]]
        }
        fn alpha(&self) -> f64 {
            -1.0
        }
        fn beta(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn identity_flux_has_zero_margins() {
        let s = OperatorSpec::p_laplacian(2.0).unwrap();
        let r = check_structure_conditions(&s, 500, 3).unwrap();
        assert!(r.passed());
        assert!(r.coercivity_margin.abs() < 1e-12);
        assert!(r.growth_margin.abs() < 1e-12);
    }

    #[test]
    fn sign_flip_fails_monotonicity() {
        let s = OperatorSpec::p_laplacian(2.0).unwrap();
        let r = check_structure_conditions(&Flipped(s), 100, 1).unwrap();
        let v = r.violation.expect("violation");
        assert_eq!(v.condition, Condition::Monotonicity);
        assert!(v.margin < 0.0);
    }

    #[test]
    fn anisotropic_power_weight_passes() {
        let s = OperatorSpec::new(1.5, WeightSpec::Power { gamma: 0.5 })
            .unwrap()
            .with_anisotropy([[3.0, -0.7], [-0.7, 0.6]])
            .unwrap();
        let r = check_structure_conditions(&s, 5000, 9).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn zero_samples_rejected() {
        let s = OperatorSpec::p_laplacian(2.0).unwrap();
        assert!(check_structure_conditions(&s, 0, 1).is_err());
    }
}
