//! The JSON configuration shared by every subcommand.

use std::path::Path;

use perron_core::functions::ScalarFunction;
use perron_core::mesh::DomainDescriptor;
use perron_core::operator::OperatorSpec;
use perron_core::perron::PerturbationSupport;
use serde::{Deserialize, Serialize};

use crate::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Resolutivity,
    Invariance,
    Uniqueness,
    MonotoneConvergence,
    MonotoneData,
    CapacityScaling,
    PoissonCounterexample,
    SobolevData,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Resolutivity => "resolutivity",
            ExperimentId::Invariance => "invariance",
            ExperimentId::Uniqueness => "uniqueness",
            ExperimentId::MonotoneConvergence => "monotone-convergence",
            ExperimentId::MonotoneData => "monotone-data",
            ExperimentId::CapacityScaling => "capacity-scaling",
            ExperimentId::PoissonCounterexample => "poisson-counterexample",
            ExperimentId::SobolevData => "sobolev-data",
        }
    }
}

/// Boundary perturbation `h = value` on the resolved support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub support: PerturbationSupport,
    #[serde(default = "one")]
    pub value: f64,
    /// Extra amplitudes swept by the invariance experiment.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<f64>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig { support: PerturbationSupport::Empty, value: 1.0, sweep: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Newton residual tolerance of every solve.
    pub solver: f64,
    /// Tolerance of the capacity minimisations.
    pub capacity: f64,
    /// Nodes this far from the perturbation support form the far field.
    pub far_radius: f64,
    /// Largest far-field `dist_K` ratio between consecutive mesh levels.
    pub refinement_factor: f64,
    /// Largest final far-field distance, relative to the oscillation of `f`.
    pub final_fraction: f64,
    /// Fraction of the coarse value an edge quantity must retain.
    pub retention: f64,
    /// Uniqueness: pass iff `max|u − Hf|` is at most this.
    pub distance: f64,
    /// Uniqueness: largest admissible candidate residual.
    pub residual: f64,
    /// Uniqueness: largest admissible `max|u|`.
    pub bound: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            solver: 1e-10,
            capacity: 1e-12,
            far_radius: 0.125,
            refinement_factor: 0.7,
            final_fraction: 0.05,
            retention: 0.8,
            distance: 1e-8,
            residual: 1e-6,
            bound: 1e3,
        }
    }
}

/// File names inside the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

/// Candidate solution for the uniqueness experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Candidate {
    /// `Hf` itself.
    Hf,
    /// `Hg` with `g = f + h`.
    Hg,
    /// A closed-form function, clamped to `[-cap, cap]`.
    Function { function: ScalarFunction, cap: f64 },
}

/// A set whose capacity is estimated by the `capacity` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitySet {
    pub id: String,
    /// Resolved against the box nodes: a point or every node on a segment.
    pub support: PerturbationSupport,
    pub box_side: f64,
    #[serde(default)]
    pub center: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<[f64; 2]>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Stop a walk-on-spheres comparison at this many standard errors.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentId>,
    pub domain: DomainDescriptor,
    pub operator: OperatorSpec<f64>,
    /// Boundary data `f`.
    pub data: ScalarFunction,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    /// Target mesh sizes, coarse to fine.
    pub mesh_levels: Vec<f64>,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: OutputPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ScalarFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<Candidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub capacity_sets: Vec<CapacitySet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
}

fn one() -> f64 {
    1.0
}

fn default_depth() -> usize {
    4
}

fn default_samples() -> usize {
    20_000
}

fn default_sigmas() -> f64 {
    4.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: String| Err(LabError::Config(m));
        self.domain.validate().map_err(|e| LabError::Config(e.to_string()))?;
        self.operator.validate().map_err(|e| LabError::Config(e.to_string()))?;
        if self.mesh_levels.is_empty() {
            return bad("mesh_levels must not be empty".into());
        }
        if let Some(h) = self.mesh_levels.iter().find(|h| !(h.is_finite() && **h > 0.0)) {
            return bad(format!("mesh level {h} must be positive"));
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("solver", t.solver),
            ("capacity", t.capacity),
            ("distance", t.distance),
            ("residual", t.residual),
            ("bound", t.bound),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("tolerance {name} must be positive, got {v}"));
            }
        }
        if !self.perturbation.value.is_finite() || self.perturbation.sweep.iter().any(|v| !v.is_finite()) {
            return bad("perturbation values must be finite".into());
        }
        for s in &self.capacity_sets {
            if !(s.box_side.is_finite() && s.box_side > 0.0) {
                return bad(format!("capacity set {}: box side must be positive", s.id));
            }
        }
        Ok(())
    }
}
