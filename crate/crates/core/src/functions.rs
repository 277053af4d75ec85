//! Named scalar functions of the plane, used as boundary data, obstacles and
//! closed-form reference solutions. Every variant serialises as
//! `{"id": "<kebab-name>", ...parameters}`.

use serde::{Deserialize, Serialize};

use crate::mesh::{DomainMesh, NodalField};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "kebab-case")]
pub enum ScalarFunction {
    Constant {
        c: f64,
    },
    /// `a x + b y + c`.
    Affine {
        a: f64,
        b: f64,
        c: f64,
    },
    /// `Re z^k`.
    HarmonicPoly {
        k: u32,
    },
    /// `(1 − |z|²) / |ζ − z|²` with the pole `ζ` on the unit circle.
    PoissonKernel {
        pole: [f64; 2],
    },
    /// `c1 |x|^{(p−2)/(p−1)} + c2`, p-harmonic away from the origin.
    RadialP {
        c1: f64,
        c2: f64,
        p: f64,
    },
    /// `c1 ln|x| + c2`, harmonic away from the origin.
    LogRadial {
        c1: f64,
        c2: f64,
    },
    /// `max(0, sin(k π x))`.
    SinePositive {
        k: f64,
    },
    /// `height − slope |x − center|²`.
    Bump {
        center: [f64; 2],
        height: f64,
        slope: f64,
    },
    /// `|x − center|^alpha`, continuous but not Lipschitz for `alpha < 1`.
    /// With `level = Some(k)` the Lipschitz approximant within `2^{-k}` is
    /// used instead: the power is replaced by its chord on `[0, s]`,
    /// `s = 2^{-k/alpha}`.
    HolderCusp {
        center: [f64; 2],
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        level: Option<u32>,
    },
    /// `x y + cos(2 y)`, a smooth function without symmetry.
    Mixed,
}

impl ScalarFunction {
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        match *self {
            ScalarFunction::Constant { c } => c,
            ScalarFunction::Affine { a, b, c } => a * x + b * y + c,
            ScalarFunction::HarmonicPoly { k } => {
                let (r, th) = (x.hypot(y), y.atan2(x));
                if k == 0 {
                    1.0
                } else {
                    r.powi(k as i32) * (k as f64 * th).cos()
                }
            }
            ScalarFunction::PoissonKernel { pole } => {
                let d2 = (pole[0] - x).powi(2) + (pole[1] - y).powi(2);
                (1.0 - x * x - y * y) / d2
            }
            ScalarFunction::RadialP { c1, c2, p } => c1 * x.hypot(y).powf((p - 2.0) / (p - 1.0)) + c2,
            ScalarFunction::LogRadial { c1, c2 } => c1 * x.hypot(y).ln() + c2,
            ScalarFunction::SinePositive { k } => (k * std::f64::consts::PI * x).sin().max(0.0),
            ScalarFunction::Bump { center, height, slope } => {
                height - slope * ((x - center[0]).powi(2) + (y - center[1]).powi(2))
            }
            ScalarFunction::HolderCusp { center, alpha, level } => {
                let t = (x - center[0]).hypot(y - center[1]);
                match level {
                    None => t.powf(alpha),
                    Some(k) => {
                        let s = 2f64.powf(-(k as f64) / alpha);
                        if t < s {
                            s.powf(alpha - 1.0) * t
                        } else {
                            t.powf(alpha)
                        }
                    }
                }
            }
            ScalarFunction::Mixed => x * y + (2.0 * y).cos(),
        }
    }

    /// Points where the formula is singular.
    pub fn singularity(&self) -> Option<[f64; 2]> {
        match *self {
            ScalarFunction::PoissonKernel { pole } => Some(pole),
            ScalarFunction::LogRadial { .. } => Some([0.0, 0.0]),
            ScalarFunction::RadialP { p, .. } if p < 2.0 => Some([0.0, 0.0]),
            _ => None,
        }
    }

    /// Whether the function solves the unweighted isotropic p-Laplace
    /// equation away from [`Self::singularity`].
    pub fn is_p_harmonic(&self, p: f64) -> bool {
        match *self {
            ScalarFunction::Constant { .. } | ScalarFunction::Affine { .. } => true,
            ScalarFunction::HarmonicPoly { k } => p == 2.0 || k <= 1,
            ScalarFunction::PoissonKernel { .. } | ScalarFunction::LogRadial { .. } => p == 2.0,
            ScalarFunction::RadialP { p: q, c1, .. } => (q - p).abs() < 1e-15 && (p != 2.0 || c1 == 0.0),
            _ => false,
        }
    }

    pub fn interpolate<T: Real>(&self, mesh: &DomainMesh<T>) -> NodalField<T> {
        NodalField::new((0..mesh.node_count()).map(|i| T::lit(self.eval(mesh.node_f64(i)))).collect())
    }

    /// Nodal values, with the singular node (if any) set to `cap`.
    pub fn interpolate_capped<T: Real>(&self, mesh: &DomainMesh<T>, cap: f64) -> NodalField<T> {
        NodalField::new(
            (0..mesh.node_count())
                .map(|i| {
                    let v = self.eval(mesh.node_f64(i));
                    T::lit(if v.is_finite() { v.clamp(-cap, cap) } else { cap })
                })
                .collect(),
        )
    }
}
