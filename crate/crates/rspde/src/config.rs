//! Run configuration documents.
//!
//! A config is a JSON object with a `problem` and optional run settings;
//! unknown keys are rejected everywhere. `configs/schema.json` describes
//! the same shape.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rspde_core::coefficients::{CoefficientSet, ProblemConfig};
use rspde_core::domain::{ConvexDomain, HalfSpace};
use rspde_core::grid::GridSpec;

use crate::registry::{Registry, Slot};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown {slot} family `{name}` (known: {known})")]
    UnknownFamily { slot: &'static str, name: String, known: String },
    #[error("parameters of {slot} family `{family}`: {source}")]
    Params {
        slot: &'static str,
        family: String,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] rspde_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Baseline,
    PenaltySweep,
    Residuals,
    Duality,
    CalibrateStar,
    ValidateOnly,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Baseline => "baseline",
            Experiment::PenaltySweep => "penalty-sweep",
            Experiment::Residuals => "residuals",
            Experiment::Duality => "duality",
            Experiment::CalibrateStar => "calibrate-star",
            Experiment::ValidateOnly => "validate-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default = "default_ns")]
    pub ns: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Monte Carlo paths per estimate.
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality: Option<DualityDoc>,
    #[serde(default = "default_validation_samples")]
    pub validation_samples: usize,
}

fn default_ns() -> Vec<f64> {
    vec![4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0]
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_paths() -> usize {
    200
}

fn default_validation_samples() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualityDoc {
    pub b_paths: usize,
    pub x_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDoc {
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub horizon: f64,
    pub grid: GridDoc,
    pub domain: DomainDoc,
    pub terminal: FamilyDoc,
    pub coefficients: CoefficientsDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDoc {
    pub half_width: f64,
    pub nodes: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainDoc {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Polytope { faces: Vec<FaceDoc> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceDoc {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// A named family and its parameters, resolved through the registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDoc {
    pub family: String,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

impl FamilyDoc {
    pub fn zero() -> Self {
        Self {
            family: "zero".into(),
            params: serde_json::Value::Null,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsDoc {
    pub f: FamilyDoc,
    pub g: FamilyDoc,
    pub h: FamilyDoc,
    pub lipschitz_c: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.check()?;
        Ok(config)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.ns.windows(2).any(|w| w[0] >= w[1]) || self.ns.iter().any(|n| !(*n >= 0.0 && n.is_finite())) {
            return Err(ConfigError::Invalid("ns must be finite, nonnegative and strictly increasing".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        if self.paths == 0 {
            return Err(ConfigError::Invalid("paths must be positive".into()));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(ConfigError::Invalid("kappa must be positive".into()));
            }
        }
        Ok(())
    }

    /// Canonical compact JSON, embedded in every artifact header.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

impl ProblemDoc {
    pub fn build(&self, registry: &Registry) -> Result<ProblemConfig, ConfigError> {
        let (d, k, l) = (self.d, self.k, self.l);
        if d == 0 || k == 0 || l == 0 {
            return Err(ConfigError::Invalid("d, k and l must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ConfigError::Invalid("horizon must be positive".into()));
        }
        let grid = GridSpec::new(d, self.grid.half_width, self.grid.nodes, self.grid.steps)?;
        let domain = match &self.domain {
            DomainDoc::Ball { center, radius } => ConvexDomain::ball(center.clone(), *radius)?,
            DomainDoc::Box { lo, hi } => ConvexDomain::axis_box(lo.clone(), hi.clone())?,
            DomainDoc::HalfSpace { normal, offset } => ConvexDomain::half_space(normal.clone(), *offset)?,
            DomainDoc::Polytope { faces } => ConvexDomain::polytope(
                faces
                    .iter()
                    .map(|f| HalfSpace::new(f.normal.clone(), f.offset))
                    .collect::<Result<_, _>>()?,
            )?,
        };
        let c = &self.coefficients;
        let coefficients = CoefficientSet {
            f: registry.coefficient(Slot::F, &c.f, d, k, l)?,
            g: registry.coefficient(Slot::G, &c.g, d, k, l)?,
            h: registry.coefficient(Slot::H, &c.h, d, k, l)?,
            lipschitz_c: c.lipschitz_c,
            alpha: c.alpha,
            beta: c.beta,
        };
        Ok(ProblemConfig {
            d,
            k,
            l,
            horizon: self.horizon,
            terminal: registry.terminal(&self.terminal, d, k)?,
            domain,
            coefficients,
            grid,
        })
    }

    /// The same problem with `f = g = h = 0`.
    pub fn heat_version(&self) -> Self {
        let mut doc = self.clone();
        doc.coefficients.f = FamilyDoc::zero();
        doc.coefficients.g = FamilyDoc::zero();
        doc.coefficients.h = FamilyDoc::zero();
        doc
    }

    pub fn is_heat(&self) -> bool {
        let c = &self.coefficients;
        [&c.f, &c.g, &c.h].iter().all(|f| f.family == "zero")
    }

    pub fn with_grid(&self, nodes: usize, steps: usize) -> Self {
        let mut doc = self.clone();
        doc.grid.nodes = nodes;
        doc.grid.steps = steps;
        doc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "problem": {
            "d": 1, "k": 2, "l": 1, "horizon": 1.0,
            "grid": {"half_width": 4.0, "nodes": 16, "steps": 8},
            "domain": {"kind": "ball", "center": [0.0, 0.0], "radius": 1.0},
            "terminal": {"family": "constant", "params": {"value": [0.1, 0.2]}},
            "coefficients": {
                "f": {"family": "zero"}, "g": {"family": "zero"}, "h": {"family": "zero"},
                "lipschitz_c": 1.0, "alpha": 0.1, "beta": 0.1
            }
        }
    }"#;

    #[test]
    fn minimal_config_builds() {
        let run = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(run.seeds, vec![1]);
        let problem = run.problem.build(&Registry::builtin()).unwrap();
        assert_eq!(problem.grid.node_count(), 16);
        assert!(run.problem.is_heat());
        let again = RunConfig::parse(&run.canonical()).unwrap();
        assert_eq!(again, run);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let extra = MINIMAL.replacen("\"horizon\": 1.0", "\"horizon\": 1.0, \"speed\": 3", 1);
        assert!(matches!(RunConfig::parse(&extra), Err(ConfigError::Parse(_))));
        let in_domain = MINIMAL.replacen("\"radius\": 1.0", "\"radius\": 1.0, \"r\": 2", 1);
        assert!(matches!(RunConfig::parse(&in_domain), Err(ConfigError::Parse(_))));
        let in_params = MINIMAL.replacen("\"value\": [0.1, 0.2]", "\"value\": [0.1, 0.2], \"v\": 1", 1);
        let run = RunConfig::parse(&in_params).unwrap();
        assert!(matches!(
            run.problem.build(&Registry::builtin()),
            Err(ConfigError::Params { .. })
        ));
    }

    #[test]
    fn decreasing_levels_are_rejected() {
        let bad = MINIMAL.replacen("\"problem\"", "\"ns\": [8, 4], \"problem\"", 1);
        assert!(matches!(RunConfig::parse(&bad), Err(ConfigError::Invalid(_))));
    }
}
