//! Numerical estimate of the Muckenhoupt `A_p` constant of a power weight.
//!
//! For `w(x) = c|x|^γ` the integral over a disc reduces to the radial form
//! `∫ ρ^{γ+1} L(ρ) dρ`, where `L(ρ)` is the angular length of the circle of
//! radius `ρ` about the origin inside the disc. The full-circle part is
//! integrated in closed form, the rest by Gauss–Legendre after a cosine
//! substitution that removes the square-root endpoint behaviour of `L`.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{OperatorError, WeightSpec};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApReport {
    /// Largest ratio `(⨍ w)(⨍ w^{1/(1-p)})^{p-1}` over all sampled discs.
    pub estimate: f64,
    /// Largest ratio over the random discs alone.
    pub random_max: f64,
    /// Ratios on discs of radius 1/2 whose distance to the origin shrinks by
    /// a factor 4 per step.
    pub approach: Vec<f64>,
    /// The approach sequence keeps growing geometrically.
    pub diverging: bool,
    pub balls: usize,
}

const APPROACH_STEPS: usize = 10;
const GL_POINTS: usize = 24;
const GL_PANELS: usize = 4;

/// Samples `ball_sample_count` discs with centers in `[-1,1]²` and radii in
/// `[0.01, 1]`, plus a sequence of discs approaching the origin.
pub fn check_ap_weight<T: Real>(
    weight: &WeightSpec<T>,
    p: T,
    ball_sample_count: usize,
    seed: u64,
) -> Result<ApReport, OperatorError> {
    let p = p.as_f64();
    if !(p.is_finite() && p > 1.0) {
        return Err(OperatorError::Invalid(format!("A_p check needs p > 1, got {p}")));
    }
    weight.validate()?;
    let gamma = weight.exponent().as_f64();
    let rule = gauss_legendre(GL_POINTS);

    let ratio = |c: [f64; 2], r: f64| {
        let area = PI * r * r;
        let a = power_ball_integral_with(c, r, gamma, &rule) / area;
        let b = power_ball_integral_with(c, r, gamma / (1.0 - p), &rule) / area;
        a * b.powf(p - 1.0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut random_max: f64 = 0.0;
    for _ in 0..ball_sample_count {
        let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let r = rng.gen_range(0.01..1.0);
        random_max = random_max.max(ratio(c, r));
    }

    let approach: Vec<f64> = (0..APPROACH_STEPS)
        .map(|k| {
            let gap = 0.5 * 0.25f64.powi(k as i32);
            ratio([0.5 + gap, 0.0], 0.5)
        })
        .collect();
    let tail = &approach[APPROACH_STEPS - 4..];
    let diverging = tail.iter().any(|v| !v.is_finite()) || tail.windows(2).all(|w| w[1] > 1.25 * w[0]);
    let estimate = approach.iter().copied().fold(random_max, f64::max);
    Ok(ApReport { estimate, random_max, approach, diverging, balls: ball_sample_count + APPROACH_STEPS })
}

/// `∫_{B(c,r)} |x|^γ dx`, `+∞` when the integral diverges.
pub fn power_ball_integral(center: [f64; 2], radius: f64, gamma: f64) -> f64 {
    power_ball_integral_with(center, radius, gamma, &gauss_legendre(GL_POINTS))
}

fn power_ball_integral_with(center: [f64; 2], r: f64, gamma: f64, rule: &[(f64, f64)]) -> f64 {
    let d = center[0].hypot(center[1]);
    if gamma == 0.0 {
        return PI * r * r;
    }
    if d <= r && gamma <= -2.0 {
        return f64::INFINITY;
    }
    let e = gamma + 2.0;
    let (full, a) = if d < r {
        let a = r - d;
        (TAU * a.powf(e) / e, a)
    } else {
        (0.0, d - r)
    };
    let b = d + r;
    if d == 0.0 {
        return full;
    }
    // ρ = a + (b - a)(1 - cos θ)/2, θ ∈ [0, π]
    let half = 0.5 * (b - a);
    let mut partial = 0.0;
    let panel = PI / GL_PANELS as f64;
    for k in 0..GL_PANELS {
        let lo = k as f64 * panel;
        for &(xi, wi) in rule {
            let th = lo + 0.5 * panel * (xi + 1.0);
            let rho = a + half * (1.0 - th.cos());
            if rho <= 0.0 {
                continue;
            }
            let cosang = ((rho * rho + d * d - r * r) / (2.0 * rho * d)).clamp(-1.0, 1.0);
            let arc = 2.0 * cosang.acos();
            partial += 0.5 * panel * wi * rho.powf(gamma + 1.0) * arc * half * th.sin();
        }
    }
    full + partial
}

/// Nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}
