//! Named coefficient and terminal families.
//!
//! Each family parses its own typed parameter block, so unknown or missing
//! parameters are reported against the family that owns them.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use rspde_core::coefficients::{
    Affine, BumpTerminal, CoefficientFn, Constant, ConstantTerminal, GaussianTerminal, OutwardDrift, Profile,
    TerminalFn, Zero,
};

use crate::config::{ConfigError, FamilyDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    F,
    G,
    H,
}

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::F => "f",
            Slot::G => "g",
            Slot::H => "h",
        }
    }
}

/// Shape context handed to coefficient constructors.
#[derive(Debug, Clone, Copy)]
pub struct Shape {
    pub slot: Slot,
    pub d: usize,
    pub k: usize,
    pub rows: usize,
    pub cols: usize,
}

type CoefficientCtor = fn(&serde_json::Value, Shape) -> Result<Arc<dyn CoefficientFn>, ConfigError>;
type TerminalCtor = fn(&serde_json::Value, usize, usize) -> Result<Arc<dyn TerminalFn>, ConfigError>;

pub struct Registry {
    coefficients: BTreeMap<&'static str, CoefficientCtor>,
    terminals: BTreeMap<&'static str, TerminalCtor>,
}

impl Registry {
    pub fn builtin() -> Self {
        let mut coefficients: BTreeMap<&'static str, CoefficientCtor> = BTreeMap::new();
        coefficients.insert("zero", zero);
        coefficients.insert("constant", constant);
        coefficients.insert("outward_drift", outward_drift);
        coefficients.insert("affine", affine);
        coefficients.insert("z_scaled", z_scaled);
        let mut terminals: BTreeMap<&'static str, TerminalCtor> = BTreeMap::new();
        terminals.insert("constant", constant_terminal);
        terminals.insert("gaussian", gaussian_terminal);
        terminals.insert("bump", bump_terminal);
        Self {
            coefficients,
            terminals,
        }
    }

    pub fn coefficient_names(&self) -> Vec<&'static str> {
        self.coefficients.keys().copied().collect()
    }

    pub fn terminal_names(&self) -> Vec<&'static str> {
        self.terminals.keys().copied().collect()
    }

    pub fn coefficient(
        &self,
        slot: Slot,
        doc: &FamilyDoc,
        d: usize,
        k: usize,
        l: usize,
    ) -> Result<Arc<dyn CoefficientFn>, ConfigError> {
        let ctor = self
            .coefficients
            .get(doc.family.as_str())
            .ok_or_else(|| ConfigError::UnknownFamily {
                slot: slot.name(),
                name: doc.family.clone(),
                known: self.coefficient_names().join(", "),
            })?;
        let cols = match slot {
            Slot::F => 1,
            Slot::G => d,
            Slot::H => l,
        };
        ctor(
            &doc.params,
            Shape {
                slot,
                d,
                k,
                rows: k,
                cols,
            },
        )
        .map_err(|e| match e {
            ConfigError::Params { source, .. } => ConfigError::Params {
                slot: slot.name(),
                family: doc.family.clone(),
                source,
            },
            other => other,
        })
    }

    pub fn terminal(&self, doc: &FamilyDoc, d: usize, k: usize) -> Result<Arc<dyn TerminalFn>, ConfigError> {
        let ctor = self
            .terminals
            .get(doc.family.as_str())
            .ok_or_else(|| ConfigError::UnknownFamily {
                slot: "terminal",
                name: doc.family.clone(),
                known: self.terminal_names().join(", "),
            })?;
        ctor(&doc.params, d, k).map_err(|e| match e {
            ConfigError::Params { source, .. } => ConfigError::Params {
                slot: "terminal",
                family: doc.family.clone(),
                source,
            },
            other => other,
        })
    }
}

fn params<T: DeserializeOwned>(value: &serde_json::Value) -> Result<T, ConfigError> {
    let value = if value.is_null() {
        serde_json::Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_json::from_value(value).map_err(|source| ConfigError::Params {
        slot: "",
        family: String::new(),
        source,
    })
}

fn dims(what: &str, expected: usize, got: usize) -> Result<(), ConfigError> {
    if expected == got {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{what} needs {expected} entries, got {got}")))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ProfileDoc {
    #[default]
    Uniform,
    Bump { center: Vec<f64>, radius: f64 },
}

impl ProfileDoc {
    fn build(self, d: usize) -> Result<Profile, ConfigError> {
        Ok(match self {
            ProfileDoc::Uniform => Profile::Uniform,
            ProfileDoc::Bump { center, radius } => {
                dims("profile center", d, center.len())?;
                Profile::Bump { center, radius }
            }
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

fn zero(value: &serde_json::Value, shape: Shape) -> Result<Arc<dyn CoefficientFn>, ConfigError> {
    let NoParams {} = params(value)?;
    Ok(Arc::new(Zero {
        rows: shape.rows,
        cols: shape.cols,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantParams {
    /// Row-major `rows × cols`.
    value: Vec<f64>,
    #[serde(default)]
    profile: ProfileDoc,
}

fn constant(value: &serde_json::Value, shape: Shape) -> Result<Arc<dyn CoefficientFn>, ConfigError> {
    let p: ConstantParams = params(value)?;
    dims(&format!("{} value", shape.slot.name()), shape.rows * shape.cols, p.value.len())?;
    Ok(Arc::new(Constant::new(shape.rows, shape.cols, p.value, p.profile.build(shape.d)?)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutwardParams {
    direction: Vec<f64>,
    strength: f64,
    #[serde(default)]
    profile: ProfileDoc,
}

fn outward_drift(value: &serde_json::Value, shape: Shape) -> Result<Arc<dyn CoefficientFn>, ConfigError> {
    if shape.slot != Slot::F {
        return Err(ConfigError::Invalid(format!(
            "outward_drift is a drift family and cannot be used for {}",
            shape.slot.name()
        )));
    }
    let p: OutwardParams = params(value)?;
    dims("outward_drift direction", shape.k, p.direction.len())?;
    Ok(Arc::new(OutwardDrift::new(p.direction, p.strength, p.profile.build(shape.d)?)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AffineParams {
    offset: Vec<f64>,
    /// `(rows·cols) × k`, row-major.
    y_map: Vec<f64>,
    /// `(rows·cols) × (k·d)`, row-major.
    z_map: Vec<f64>,
    saturation: f64,
    #[serde(default)]
    profile: ProfileDoc,
}

fn affine(value: &serde_json::Value, shape: Shape) -> Result<Arc<dyn CoefficientFn>, ConfigError> {
    let p: AffineParams = params(value)?;
    let out = shape.rows * shape.cols;
    dims("affine offset", out, p.offset.len())?;
    dims("affine y_map", out * shape.k, p.y_map.len())?;
    dims("affine z_map", out * shape.k * shape.d, p.z_map.len())?;
    Ok(Arc::new(Affine::new(
        shape.rows,
        shape.cols,
        shape.k,
        shape.d,
        p.offset,
        p.y_map,
        p.z_map,
        p.saturation,
        p.profile.build(shape.d)?,
    )?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ZScaledParams {
    scale: f64,
    saturation: f64,
    #[serde(default)]
    profile: ProfileDoc,
}

fn z_scaled(value: &serde_json::Value, shape: Shape) -> Result<Arc<dyn CoefficientFn>, ConfigError> {
    if shape.slot != Slot::G {
        return Err(ConfigError::Invalid(format!(
            "z_scaled has the shape of g and cannot be used for {}",
            shape.slot.name()
        )));
    }
    let p: ZScaledParams = params(value)?;
    Ok(Arc::new(Affine::z_scaled(shape.k, shape.d, p.scale, p.saturation, p.profile.build(shape.d)?)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantTerminalParams {
    value: Vec<f64>,
}

fn constant_terminal(value: &serde_json::Value, d: usize, k: usize) -> Result<Arc<dyn TerminalFn>, ConfigError> {
    let p: ConstantTerminalParams = params(value)?;
    dims("terminal value", k, p.value.len())?;
    Ok(Arc::new(ConstantTerminal::new(d, p.value)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianParams {
    center: Vec<f64>,
    sigma: f64,
    amplitude: Vec<f64>,
    offset: Vec<f64>,
}

impl GaussianParams {
    fn check(&self, d: usize, k: usize) -> Result<(), ConfigError> {
        dims("terminal center", d, self.center.len())?;
        dims("terminal amplitude", k, self.amplitude.len())?;
        dims("terminal offset", k, self.offset.len())
    }
}

fn gaussian_terminal(value: &serde_json::Value, d: usize, k: usize) -> Result<Arc<dyn TerminalFn>, ConfigError> {
    let p: GaussianParams = params(value)?;
    p.check(d, k)?;
    Ok(Arc::new(GaussianTerminal::new(p.center, p.sigma, p.amplitude, p.offset)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BumpTerminalParams {
    center: Vec<f64>,
    radius: f64,
    amplitude: Vec<f64>,
    offset: Vec<f64>,
}

fn bump_terminal(value: &serde_json::Value, d: usize, k: usize) -> Result<Arc<dyn TerminalFn>, ConfigError> {
    let p: BumpTerminalParams = params(value)?;
    dims("terminal center", d, p.center.len())?;
    dims("terminal amplitude", k, p.amplitude.len())?;
    dims("terminal offset", k, p.offset.len())?;
    Ok(Arc::new(BumpTerminal::new(p.center, p.radius, p.amplitude, p.offset)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn doc(family: &str, params: serde_json::Value) -> FamilyDoc {
        FamilyDoc {
            family: family.into(),
            params,
        }
    }

    #[test]
    fn builtin_families_resolve_with_their_shapes() {
        let r = Registry::builtin();
        let f = r
            .coefficient(Slot::F, &doc("outward_drift", json!({"direction": [1.0, 0.0], "strength": 2.0})), 1, 2, 1)
            .unwrap();
        assert_eq!((f.rows(), f.cols()), (2, 1));
        let g = r
            .coefficient(Slot::G, &doc("z_scaled", json!({"scale": 0.1, "saturation": 10.0})), 2, 2, 1)
            .unwrap();
        assert_eq!((g.rows(), g.cols()), (2, 2));
        let h = r
            .coefficient(Slot::H, &doc("constant", json!({"value": [0.1, 0.2, 0.3, 0.4]})), 1, 2, 2)
            .unwrap();
        assert_eq!((h.rows(), h.cols()), (2, 2));
        let t = r.terminal(&doc("gaussian", json!({"center": [0.0], "sigma": 0.5, "amplitude": [0.1, 0.0], "offset": [0.0, 0.0]})), 1, 2).unwrap();
        assert_eq!((t.dim(), t.components()), (1, 2));
    }

    #[test]
    fn unknown_family_lists_the_known_ones() {
        let err = Registry::builtin()
            .coefficient(Slot::F, &doc("quadratic", serde_json::Value::Null), 1, 2, 1)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("quadratic") && msg.contains("outward_drift"), "{msg}");
    }

    #[test]
    fn wrong_lengths_and_slots_are_rejected() {
        let r = Registry::builtin();
        assert!(r.coefficient(Slot::H, &doc("constant", json!({"value": [0.1]})), 1, 2, 1).is_err());
        assert!(r
            .coefficient(Slot::H, &doc("outward_drift", json!({"direction": [1.0, 0.0], "strength": 1.0})), 1, 2, 1)
            .is_err());
        let err = r.coefficient(Slot::F, &doc("zero", json!({"scale": 1})), 1, 2, 1).unwrap_err();
        assert!(matches!(err, ConfigError::Params { slot: "f", .. }), "{err}");
    }
}
