//! Problem data `(Φ, f, g, h)`, assumption checks, and the reduction of a
//! divergence-form operator `Σ ∂_i a_ij ∂_j` to `½Δ` by a time change.
//!
//! Matrix-valued quantities are row-major with one row per component of
//! `u`: `z ∈ ℝ^{k×d}` has `z[i * d + a] = ∂_a u_i`, `g ∈ ℝ^{k×d}` and
//! `h ∈ ℝ^{k×l}`. Matrix norms are Frobenius norms.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::domain::ConvexDomain;
use crate::grid::GridSpec;
use crate::linalg::norm;
use crate::paths::{derive_seed, stream};
use crate::smooth::Bump;
use crate::{Error, Result};

/// A coefficient `(t, x, y, z) ↦ ℝ^{rows×cols}` together with its dominating
/// function `(t, x) ↦ bound`. Implementations must be pure: the solver calls
/// them concurrently.
pub trait CoefficientFn: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]);
    /// Dominating function: `‖eval(t, x, ·, ·)‖ ≤ bound(t, x)`.
    fn bound(&self, t: f64, x: &[f64]) -> f64;
    fn name(&self) -> &str {
        "custom"
    }
}

impl fmt::Debug for dyn CoefficientFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}x{}]", self.name(), self.rows(), self.cols())
    }
}

/// Spatial envelope shared by the built-in families.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Uniform,
    /// `(1 − |x − c|²/R²)_+³`.
    Bump { center: Vec<f64>, radius: f64 },
}

impl Profile {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Profile::Uniform => 1.0,
            Profile::Bump { center, radius } => Bump::new(center.clone(), *radius, 3).value(x),
        }
    }

    fn check(&self, d: Option<usize>) -> Result<()> {
        if let Profile::Bump { center, radius } = self {
            if !(*radius > 0.0) {
                return Err(Error::arg("profile", "bump radius must be positive"));
            }
            if let Some(d) = d {
                if center.len() != d {
                    return Err(Error::arg("profile", format!("bump center needs {d} coordinates")));
                }
            }
        }
        Ok(())
    }
}

/// Identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Zero {
    pub rows: usize,
    pub cols: usize,
}

impl CoefficientFn for Zero {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn eval(&self, _t: f64, _x: &[f64], _y: &[f64], _z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn bound(&self, _t: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn name(&self) -> &str {
        "zero"
    }
}

/// `ρ(x) · value`, independent of `(t, y, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constant {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    profile: Profile,
}

impl Constant {
    pub fn new(rows: usize, cols: usize, value: Vec<f64>, profile: Profile) -> Result<Self> {
        if value.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "constant coefficient",
                expected: rows * cols,
                got: value.len(),
            });
        }
        profile.check(None)?;
        Ok(Self {
            rows,
            cols,
            value,
            profile,
        })
    }
}

impl CoefficientFn for Constant {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn eval(&self, _t: f64, x: &[f64], _y: &[f64], _z: &[f64], out: &mut [f64]) {
        let rho = self.profile.value(x);
        for (o, v) in out.iter_mut().zip(&self.value) {
            *o = rho * v;
        }
    }
    fn bound(&self, _t: f64, x: &[f64]) -> f64 {
        self.profile.value(x) * norm(&self.value)
    }
    fn name(&self) -> &str {
        "constant"
    }
}

/// Forcing of strength `F` along a fixed unit direction `e` in value space,
/// `f(t, x, y, z) = F ρ(x) e`. Pointed outward it drives `u` across `∂D`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutwardDrift {
    direction: Vec<f64>,
    strength: f64,
    profile: Profile,
}

impl OutwardDrift {
    pub fn new(direction: Vec<f64>, strength: f64, profile: Profile) -> Result<Self> {
        let len = norm(&direction);
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::arg("direction", "must be a nonzero vector"));
        }
        if !strength.is_finite() {
            return Err(Error::arg("strength", "must be finite"));
        }
        profile.check(None)?;
        Ok(Self {
            direction: direction.iter().map(|v| v / len).collect(),
            strength,
            profile,
        })
    }
}

impl CoefficientFn for OutwardDrift {
    fn rows(&self) -> usize {
        self.direction.len()
    }
    fn cols(&self) -> usize {
        1
    }
    fn eval(&self, _t: f64, x: &[f64], _y: &[f64], _z: &[f64], out: &mut [f64]) {
        let s = self.strength * self.profile.value(x);
        for (o, e) in out.iter_mut().zip(&self.direction) {
            *o = s * e;
        }
    }
    fn bound(&self, _t: f64, x: &[f64]) -> f64 {
        self.strength.abs() * self.profile.value(x)
    }
    fn name(&self) -> &str {
        "outward"
    }
}

/// `ρ(x) · (offset + A·sat(y) + C·sat(z))`, where `sat` shrinks its
/// argument radially onto the ball of radius `saturation` (so the family
/// stays bounded and keeps the Lipschitz moduli `‖A‖`, `‖C‖`).
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    rows: usize,
    cols: usize,
    k: usize,
    d: usize,
    offset: Vec<f64>,
    /// `(rows·cols) × k`.
    y_map: Vec<f64>,
    /// `(rows·cols) × (k·d)`.
    z_map: Vec<f64>,
    saturation: f64,
    profile: Profile,
}

impl Affine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rows: usize,
        cols: usize,
        k: usize,
        d: usize,
        offset: Vec<f64>,
        y_map: Vec<f64>,
        z_map: Vec<f64>,
        saturation: f64,
        profile: Profile,
    ) -> Result<Self> {
        let out = rows * cols;
        for (what, len, expected) in [
            ("affine offset", offset.len(), out),
            ("affine y map", y_map.len(), out * k),
            ("affine z map", z_map.len(), out * k * d),
        ] {
            if len != expected {
                return Err(Error::DimensionMismatch { what, expected, got: len });
            }
        }
        if !(saturation > 0.0) {
            return Err(Error::arg("saturation", "must be positive"));
        }
        profile.check(Some(d))?;
        Ok(Self {
            rows,
            cols,
            k,
            d,
            offset,
            y_map,
            z_map,
            saturation,
            profile,
        })
    }

    /// `g(t, x, y, z) = scale · ρ(x) · sat(z)` for a `k × d` output.
    pub fn z_scaled(k: usize, d: usize, scale: f64, saturation: f64, profile: Profile) -> Result<Self> {
        let n = k * d;
        let mut z_map = vec![0.0; n * n];
        for i in 0..n {
            z_map[i * n + i] = scale;
        }
        Self::new(k, d, k, d, vec![0.0; n], vec![0.0; n * k], z_map, saturation, profile)
    }

    /// Lipschitz moduli `(‖A‖, ‖C‖)` in `y` and `z`.
    pub fn moduli(&self) -> (f64, f64) {
        (norm(&self.y_map), norm(&self.z_map))
    }
}

fn saturate(v: &[f64], radius: f64, out: &mut [f64]) {
    let len = norm(v);
    let s = if len > radius { radius / len } else { 1.0 };
    for (o, x) in out.iter_mut().zip(v) {
        *o = s * x;
    }
}

impl CoefficientFn for Affine {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn eval(&self, _t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        let rho = self.profile.value(x);
        let mut ys = vec![0.0; self.k];
        let mut zs = vec![0.0; self.k * self.d];
        saturate(y, self.saturation, &mut ys);
        saturate(z, self.saturation, &mut zs);
        let (ky, kz) = (self.k, self.k * self.d);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.offset[i];
            for j in 0..ky {
                acc += self.y_map[i * ky + j] * ys[j];
            }
            for j in 0..kz {
                acc += self.z_map[i * kz + j] * zs[j];
            }
            *o = rho * acc;
        }
    }
    fn bound(&self, _t: f64, x: &[f64]) -> f64 {
        let (a, c) = self.moduli();
        self.profile.value(x) * (norm(&self.offset) + (a + c) * self.saturation)
    }
    fn name(&self) -> &str {
        "affine"
    }
}

/// Terminal condition `Φ : ℝ^d → ℝ^k`.
pub trait TerminalFn: Send + Sync {
    fn dim(&self) -> usize;
    fn components(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// The solution of `∂_τ v = ½Δv`, `v(0) = Φ`, on the torus `[−L, L)^d`
    /// after time `tau`, when it is known in closed form.
    fn heat_evolved(&self, _x: &[f64], _tau: f64, _half_width: f64, _out: &mut [f64]) -> bool {
        false
    }
    fn name(&self) -> &str {
        "custom"
    }
}

impl fmt::Debug for dyn TerminalFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}→{}]", self.name(), self.dim(), self.components())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantTerminal {
    dim: usize,
    value: Vec<f64>,
}

impl ConstantTerminal {
    pub fn new(dim: usize, value: Vec<f64>) -> Self {
        Self { dim, value }
    }
}

impl TerminalFn for ConstantTerminal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn components(&self) -> usize {
        self.value.len()
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
    fn heat_evolved(&self, _x: &[f64], _tau: f64, _half_width: f64, out: &mut [f64]) -> bool {
        out.copy_from_slice(&self.value);
        true
    }
    fn name(&self) -> &str {
        "constant"
    }
}

/// `offset + amplitude · exp(−|x − c|²/(2σ²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTerminal {
    center: Vec<f64>,
    sigma: f64,
    amplitude: Vec<f64>,
    offset: Vec<f64>,
}

impl GaussianTerminal {
    pub fn new(center: Vec<f64>, sigma: f64, amplitude: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::arg("sigma", "must be positive"));
        }
        if amplitude.len() != offset.len() || center.is_empty() {
            return Err(Error::arg("amplitude", "amplitude and offset need the same length"));
        }
        Ok(Self {
            center,
            sigma,
            amplitude,
            offset,
        })
    }
}

/// Image shifts summed when periodizing a Gaussian on the torus.
const IMAGES: i32 = 2;

impl TerminalFn for GaussianTerminal {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn components(&self) -> usize {
        self.offset.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        let e = (-r2 / (2.0 * self.sigma * self.sigma)).exp();
        for ((o, a), b) in out.iter_mut().zip(&self.amplitude).zip(&self.offset) {
            *o = b + a * e;
        }
    }
    fn heat_evolved(&self, x: &[f64], tau: f64, half_width: f64, out: &mut [f64]) -> bool {
        let d = self.center.len();
        let var = self.sigma * self.sigma + tau;
        let scale = (self.sigma * self.sigma / var).powf(d as f64 / 2.0);
        let period = 2.0 * half_width;
        let side = (2 * IMAGES + 1) as usize;
        let mut total = 0.0;
        for image in 0..side.pow(d as u32) {
            let mut rest = image;
            let mut r2 = 0.0;
            for a in 0..d {
                let shift = (rest % side) as f64 - IMAGES as f64;
                rest /= side;
                let dx = x[a] - self.center[a] + shift * period;
                r2 += dx * dx;
            }
            total += (-r2 / (2.0 * var)).exp();
        }
        for ((o, a), b) in out.iter_mut().zip(&self.amplitude).zip(&self.offset) {
            *o = b + a * scale * total;
        }
        true
    }
    fn name(&self) -> &str {
        "gaussian"
    }
}

/// `offset + amplitude · (1 − |x − c|²/R²)_+³`.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpTerminal {
    bump: Bump,
    amplitude: Vec<f64>,
    offset: Vec<f64>,
}

impl BumpTerminal {
    pub fn new(center: Vec<f64>, radius: f64, amplitude: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::arg("radius", "must be positive"));
        }
        if amplitude.len() != offset.len() || center.is_empty() {
            return Err(Error::arg("amplitude", "amplitude and offset need the same length"));
        }
        Ok(Self {
            bump: Bump::new(center, radius, 3),
            amplitude,
            offset,
        })
    }
}

impl TerminalFn for BumpTerminal {
    fn dim(&self) -> usize {
        self.bump.center.len()
    }
    fn components(&self) -> usize {
        self.offset.len()
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let b = self.bump.value(x);
        for ((o, a), c) in out.iter_mut().zip(&self.amplitude).zip(&self.offset) {
            *o = c + a * b;
        }
    }
    fn name(&self) -> &str {
        "bump"
    }
}

/// `f`, `g`, `h` with the declared moduli `c`, `α`, `β`.
#[derive(Clone)]
pub struct CoefficientSet {
    pub f: Arc<dyn CoefficientFn>,
    pub g: Arc<dyn CoefficientFn>,
    pub h: Arc<dyn CoefficientFn>,
    pub lipschitz_c: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("f", &self.f)
            .field("g", &self.g)
            .field("h", &self.h)
            .field("lipschitz_c", &self.lipschitz_c)
            .field("alpha", &self.alpha)
            .field("beta", &self.beta)
            .finish()
    }
}

impl CoefficientSet {
    /// `f = g = h = 0` with small nominal moduli.
    pub fn zero(d: usize, k: usize, l: usize) -> Self {
        Self {
            f: Arc::new(Zero { rows: k, cols: 1 }),
            g: Arc::new(Zero { rows: k, cols: d }),
            h: Arc::new(Zero { rows: k, cols: l }),
            lipschitz_c: 1.0,
            alpha: 0.1,
            beta: 0.1,
        }
    }

    pub fn contract_value(&self) -> f64 {
        self.alpha + 0.5 * self.beta * self.beta
    }
}

#[derive(Clone)]
pub struct ProblemConfig {
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub horizon: f64,
    pub terminal: Arc<dyn TerminalFn>,
    pub domain: ConvexDomain,
    pub coefficients: CoefficientSet,
    pub grid: GridSpec,
}

impl fmt::Debug for ProblemConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemConfig")
            .field("d", &self.d)
            .field("k", &self.k)
            .field("l", &self.l)
            .field("horizon", &self.horizon)
            .field("terminal", &self.terminal)
            .field("domain", &self.domain)
            .field("coefficients", &self.coefficients)
            .field("grid", &self.grid)
            .finish()
    }
}

impl ProblemConfig {
    pub fn dt(&self) -> f64 {
        self.grid.dt(self.horizon)
    }

    /// Explicit pieces of the scheme: `Δt·c ≤ ½` and, for the explicit
    /// divergence of `g` (which carries `α∇u`), `Δt·α·d/Δx² ≤ 1`.
    pub fn check_stability(&self) -> Result<()> {
        let dt = self.dt();
        let c = self.coefficients.lipschitz_c;
        if dt * c > 0.5 {
            return Err(Error::Stability(format!("dt * c = {:.4} exceeds 1/2", dt * c)));
        }
        let dx = self.grid.dx();
        let g_term = dt * self.coefficients.alpha * self.d as f64 / (dx * dx);
        if g_term > 1.0 {
            return Err(Error::Stability(format!(
                "dt * alpha * d / dx^2 = {g_term:.4} exceeds 1; refine time steps"
            )));
        }
        Ok(())
    }

    /// Terminal data on the grid, node-major with `k` values per node.
    pub fn terminal_on_grid(&self) -> Vec<f64> {
        let n = self.grid.node_count();
        let mut out = vec![0.0; n * self.k];
        let mut x = vec![0.0; self.d];
        for node in 0..n {
            self.grid.position(node, &mut x);
            self.terminal.eval(&x, &mut out[node * self.k..(node + 1) * self.k]);
        }
        out
    }
}

/// Which standing assumption a violation concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    Dimensions,
    ConstantRange,
    ContractProperty,
    Bound,
    Lipschitz,
    TerminalInDomain,
    TerminalIntegrability,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub assumption: Assumption,
    pub message: String,
    /// Size of the worst observed excess (0 for structural violations).
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub samples: usize,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, assumption: Assumption) -> bool {
        self.violations.iter().any(|v| v.assumption == assumption)
    }

    pub fn into_result(self) -> Result<()> {
        if self.passed() {
            return Ok(());
        }
        let joined: Vec<&str> = self.violations.iter().map(|v| v.message.as_str()).collect();
        Err(Error::Assumptions(joined.join("; ")))
    }

    fn push(&mut self, assumption: Assumption, worst: f64, message: String) {
        self.violations.push(Violation {
            assumption,
            message,
            worst,
        });
    }
}

/// Relative slack granted to sampled inequalities.
const SAMPLE_SLACK: f64 = 1e-9;
/// Half-width of the cube from which `z` entries are sampled.
const Z_SAMPLE_RANGE: f64 = 3.0;

/// Checks the standing assumptions: dimensions, the ranges of `c, α, β`,
/// the contract property `α + β²/2 < ½` (analytically), bounds and
/// Lipschitz moduli of `f, g, h` on `samples` random input pairs, and
/// `Φ ∈ D̄` plus finiteness of `∫|Φ|⁴` on the grid.
pub fn validate(config: &ProblemConfig, samples: usize, seed: u64) -> ValidationReport {
    let mut report = ValidationReport {
        violations: Vec::new(),
        samples,
    };
    let cs = &config.coefficients;
    let (d, k, l) = (config.d, config.k, config.l);

    let shapes: [(&str, &dyn CoefficientFn, usize); 3] = [("f", &*cs.f, 1), ("g", &*cs.g, d), ("h", &*cs.h, l)];
    let mut dims_ok = config.grid.dim() == d
        && config.domain.dim() == k
        && config.terminal.dim() == d
        && config.terminal.components() == k;
    for (name, c, cols) in shapes {
        if c.rows() != k || c.cols() != cols {
            report.push(
                Assumption::Dimensions,
                0.0,
                format!("{name} has shape {}x{}, expected {k}x{cols}", c.rows(), c.cols()),
            );
            dims_ok = false;
        }
    }
    if !dims_ok {
        if report.violations.is_empty() {
            report.push(
                Assumption::Dimensions,
                0.0,
                format!("grid, domain or terminal dimensions disagree with d = {d}, k = {k}"),
            );
        }
        return report;
    }
    if !(config.horizon > 0.0 && config.horizon.is_finite()) {
        report.push(Assumption::ConstantRange, 0.0, "horizon must be positive".into());
    }
    if !(cs.lipschitz_c > 0.0 && cs.lipschitz_c.is_finite()) {
        report.push(Assumption::ConstantRange, 0.0, format!("lipschitz constant c = {} must be positive", cs.lipschitz_c));
    }
    for (name, v) in [("alpha", cs.alpha), ("beta", cs.beta)] {
        if !(v > 0.0 && v < 1.0) {
            report.push(Assumption::ConstantRange, 0.0, format!("{name} = {v} must lie in (0, 1)"));
        }
    }
    let contract = cs.contract_value();
    if !(contract < 0.5) {
        report.push(
            Assumption::ContractProperty,
            contract - 0.5,
            format!("contract property violated: alpha + beta^2/2 = {contract} >= 0.5"),
        );
    }

    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, stream::VALIDATION, 0));
    let half = config.grid.half_width();
    let y_range = 2.0 * config.domain.extent();
    let mut x = vec![0.0; d];
    let (mut y1, mut y2) = (vec![0.0; k], vec![0.0; k]);
    let (mut z1, mut z2) = (vec![0.0; k * d], vec![0.0; k * d]);
    let mut worst_bound = [0.0f64; 3];
    let mut worst_lip = [0.0f64; 3];
    let mut bad_bound_value = [false; 3];
    let names = ["f", "g", "h"];
    let fns: [&dyn CoefficientFn; 3] = [&*cs.f, &*cs.g, &*cs.h];
    // Moduli (y, z) for f, g, h.
    let moduli = [(cs.lipschitz_c, cs.lipschitz_c), (cs.lipschitz_c, cs.alpha), (cs.lipschitz_c, cs.beta)];
    let mut out1: Vec<Vec<f64>> = fns.iter().map(|c| vec![0.0; c.rows() * c.cols()]).collect();
    let mut out2 = out1.clone();
    for _ in 0..samples {
        let t = config.horizon * rng.random::<f64>();
        x.iter_mut().for_each(|v| *v = half * (2.0 * rng.random::<f64>() - 1.0));
        for v in y1.iter_mut().chain(y2.iter_mut()) {
            *v = y_range * (2.0 * rng.random::<f64>() - 1.0);
        }
        for v in z1.iter_mut().chain(z2.iter_mut()) {
            *v = Z_SAMPLE_RANGE * (2.0 * rng.random::<f64>() - 1.0);
        }
        let dy = crate::linalg::dist(&y1, &y2);
        let dz = crate::linalg::dist(&z1, &z2);
        for i in 0..3 {
            fns[i].eval(t, &x, &y1, &z1, &mut out1[i]);
            fns[i].eval(t, &x, &y2, &z2, &mut out2[i]);
            let b = fns[i].bound(t, &x);
            if !b.is_finite() {
                bad_bound_value[i] = true;
            }
            for o in [&out1[i], &out2[i]] {
                let excess = norm(o) - b * (1.0 + SAMPLE_SLACK) - 1e-12;
                worst_bound[i] = worst_bound[i].max(excess);
            }
            let diff = crate::linalg::dist(&out1[i], &out2[i]);
            let (my, mz) = moduli[i];
            let allowed = if i == 0 { my * (dy + dz) } else { my * dy + mz * dz };
            worst_lip[i] = worst_lip[i].max(diff - allowed * (1.0 + SAMPLE_SLACK) - 1e-12);
        }
    }
    for i in 0..3 {
        if bad_bound_value[i] {
            report.push(Assumption::Bound, f64::INFINITY, format!("dominating function of {} is not finite", names[i]));
        } else if worst_bound[i] > 0.0 {
            report.push(
                Assumption::Bound,
                worst_bound[i],
                format!("{} exceeds its dominating function by {:.3e}", names[i], worst_bound[i]),
            );
        }
        if worst_lip[i] > 0.0 {
            report.push(
                Assumption::Lipschitz,
                worst_lip[i],
                format!("{} violates its declared Lipschitz moduli by {:.3e}", names[i], worst_lip[i]),
            );
        }
    }

    let phi = config.terminal_on_grid();
    let mut worst_outside = 0.0f64;
    let mut fourth = 0.0;
    let mut finite = true;
    for value in phi.chunks(k) {
        finite &= value.iter().all(|v| v.is_finite());
        if !finite {
            break;
        }
        let dist = config.domain.distance(value).unwrap_or(f64::INFINITY);
        worst_outside = worst_outside.max(dist);
        let n2: f64 = value.iter().map(|v| v * v).sum();
        fourth += n2 * n2;
    }
    fourth *= config.grid.cell_volume();
    if !finite || !fourth.is_finite() {
        report.push(
            Assumption::TerminalIntegrability,
            f64::INFINITY,
            "terminal condition is not finite in L^4 on the grid".into(),
        );
    } else if worst_outside > 0.0 {
        report.push(
            Assumption::TerminalInDomain,
            worst_outside,
            format!("terminal condition leaves domain (distance up to {worst_outside:.3e})"),
        );
    }
    report
}

/// Symmetric matrix field `x ↦ a(x) ∈ ℝ^{d×d}`.
pub trait MatrixField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMatrix {
    dim: usize,
    value: Vec<f64>,
}

impl ConstantMatrix {
    pub fn new(dim: usize, value: Vec<f64>) -> Result<Self> {
        if value.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                what: "matrix field",
                expected: dim * dim,
                got: value.len(),
            });
        }
        Ok(Self { dim, value })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut value = vec![0.0; d * d];
        for (i, v) in diag.iter().enumerate() {
            value[i * d + i] = *v;
        }
        Self { dim: d, value }
    }
}

impl MatrixField for ConstantMatrix {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.value);
    }
}

struct TimeScaled {
    inner: Arc<dyn CoefficientFn>,
    time_scale: f64,
    value_scale: f64,
}

impl CoefficientFn for TimeScaled {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn eval(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        self.inner.eval(t * self.time_scale, x, y, z, out);
        out.iter_mut().for_each(|o| *o *= self.value_scale);
    }
    fn bound(&self, t: f64, x: &[f64]) -> f64 {
        self.inner.bound(t * self.time_scale, x) * self.value_scale
    }
    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// `ĝ = (g(t/2Λ, ·) + z(ΛI − a))/(2Λ)`; `ΛI − a` acts on each row of `z`.
struct TransformedG {
    inner: Arc<dyn CoefficientFn>,
    a: Arc<dyn MatrixField>,
    big_lambda: f64,
}

impl CoefficientFn for TransformedG {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn eval(&self, t: f64, x: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        let two_lambda = 2.0 * self.big_lambda;
        self.inner.eval(t / two_lambda, x, y, z, out);
        let d = self.a.dim();
        let mut a = vec![0.0; d * d];
        self.a.eval(x, &mut a);
        for (row, o) in out.chunks_mut(d).enumerate() {
            let zr = &z[row * d..(row + 1) * d];
            for i in 0..d {
                let mut acc = self.big_lambda * zr[i];
                for j in 0..d {
                    acc -= a[i * d + j] * zr[j];
                }
                o[i] = (o[i] + acc) / two_lambda;
            }
        }
    }
    /// Dominates the `g` part only: the `z(ΛI − a)` part grows linearly in
    /// `z` and has no `(t, x)`-dominating function unless `a = ΛI`.
    fn bound(&self, t: f64, x: &[f64]) -> f64 {
        self.inner.bound(t / (2.0 * self.big_lambda), x) / (2.0 * self.big_lambda)
    }
    fn name(&self) -> &str {
        "transformed-g"
    }
}

/// Result of [`transform_to_laplacian`].
#[derive(Clone, Debug)]
pub struct Transformed {
    pub config: ProblemConfig,
    /// Largest sampled `‖ΛI − a(x)‖` (Frobenius).
    pub gamma_norm: f64,
    /// Smallest sampled Rayleigh quotient `ξᵀaξ/|ξ|²`.
    pub lambda_min: f64,
}

/// Rewrites `du + [Σ∂_i(a_ij ∂_j u) + div g + f]dt + h d←W = 0` on `[0, T]`
/// as the `½Δ` problem on `[0, 2ΛT]` with `f̂ = f(t/2Λ)/(2Λ)`,
/// `ĥ = h(t/2Λ)/√(2Λ)`, `ĝ = (g(t/2Λ) + z(ΛI − a))/(2Λ)`.
///
/// The moduli are recomputed, not assumed: `ĉ = c·max(1/(2Λ), 1/√(2Λ))`,
/// `α̂ = (α + sup‖ΛI − a‖)/(2Λ)`, `β̂ = β/√(2Λ)`. Symmetry and
/// `0 < ξᵀaξ ≤ Λ|ξ|²` are checked on `samples` points of the torus.
pub fn transform_to_laplacian(
    a: Arc<dyn MatrixField>,
    big_lambda: f64,
    config: &ProblemConfig,
    samples: usize,
    seed: u64,
) -> Result<Transformed> {
    let d = config.d;
    if a.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "diffusion matrix",
            expected: d,
            got: a.dim(),
        });
    }
    if !(big_lambda > 0.0 && big_lambda.is_finite()) {
        return Err(Error::arg("big_lambda", "must be positive"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, stream::VALIDATION, 1));
    let half = config.grid.half_width();
    let mut x = vec![0.0; d];
    let mut m = vec![0.0; d * d];
    let mut xi = vec![0.0; d];
    let mut gamma_norm = 0.0f64;
    let mut lambda_min = f64::INFINITY;
    for _ in 0..samples.max(1) {
        x.iter_mut().for_each(|v| *v = half * (2.0 * rng.random::<f64>() - 1.0));
        a.eval(&x, &mut m);
        let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (m[i * d + j] - m[j * d + i]).abs() > 1e-12 * scale {
                    return Err(Error::Assumptions("diffusion matrix is not symmetric".into()));
                }
            }
        }
        xi.iter_mut().for_each(|v| *v = 2.0 * rng.random::<f64>() - 1.0);
        let len2: f64 = xi.iter().map(|v| v * v).sum();
        if len2 > 0.0 {
            let q: f64 = (0..d)
                .map(|i| (0..d).map(|j| xi[i] * m[i * d + j] * xi[j]).sum::<f64>())
                .sum();
            let rayleigh = q / len2;
            if rayleigh <= 0.0 || rayleigh > big_lambda * (1.0 + 1e-12) {
                return Err(Error::Assumptions(format!(
                    "ellipticity violated: xi^T a xi / |xi|^2 = {rayleigh} outside (0, {big_lambda}]"
                )));
            }
            lambda_min = lambda_min.min(rayleigh);
        }
        let mut g2 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let gij = if i == j { big_lambda } else { 0.0 } - m[i * d + j];
                g2 += gij * gij;
            }
        }
        gamma_norm = gamma_norm.max(g2.sqrt());
    }
    let two_lambda = 2.0 * big_lambda;
    let cs = &config.coefficients;
    let coefficients = CoefficientSet {
        f: Arc::new(TimeScaled {
            inner: cs.f.clone(),
            time_scale: 1.0 / two_lambda,
            value_scale: 1.0 / two_lambda,
        }),
        h: Arc::new(TimeScaled {
            inner: cs.h.clone(),
            time_scale: 1.0 / two_lambda,
            value_scale: 1.0 / two_lambda.sqrt(),
        }),
        g: Arc::new(TransformedG {
            inner: cs.g.clone(),
            a,
            big_lambda,
        }),
        lipschitz_c: cs.lipschitz_c * (1.0 / two_lambda).max(1.0 / two_lambda.sqrt()),
        alpha: (cs.alpha + gamma_norm) / two_lambda,
        beta: cs.beta / two_lambda.sqrt(),
    };
    Ok(Transformed {
        config: ProblemConfig {
            horizon: two_lambda * config.horizon,
            coefficients,
            ..config.clone()
        },
        gamma_norm,
        lambda_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn base_config(coefficients: CoefficientSet) -> ProblemConfig {
        ProblemConfig {
            d: 1,
            k: 2,
            l: 1,
            horizon: 1.0,
            terminal: Arc::new(ConstantTerminal::new(1, vec![0.1, 0.2])),
            domain: ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(),
            coefficients,
            grid: GridSpec::new(1, 4.0, 32, 64).unwrap(),
        }
    }

    fn with_constants(alpha: f64, beta: f64) -> ProblemConfig {
        let mut cs = CoefficientSet::zero(1, 2, 1);
        cs.alpha = alpha;
        cs.beta = beta;
        base_config(cs)
    }

    #[test]
    fn contract_property_accepts_and_rejects() {
        let ok = validate(&with_constants(0.2, 0.5), 200, 1);
        assert!(ok.passed(), "{ok:?}");
        let bad = validate(&with_constants(0.4, 0.8), 200, 1);
        assert!(bad.has(Assumption::ContractProperty));
        let msg = bad.into_result().unwrap_err();
        assert!(matches!(&msg, Error::Assumptions(m) if m.contains("contract property violated")));
    }

    #[test]
    fn terminal_outside_domain_is_rejected() {
        let mut cfg = with_constants(0.2, 0.5);
        cfg.terminal = Arc::new(ConstantTerminal::new(1, vec![1.5, 0.0]));
        let report = validate(&cfg, 50, 1);
        assert!(report.has(Assumption::TerminalInDomain));
        assert!(report.violations[0].message.contains("terminal condition leaves domain"));
    }

    #[test]
    fn undeclared_lipschitz_modulus_is_caught() {
        let mut cs = CoefficientSet::zero(1, 2, 1);
        cs.g = Arc::new(Affine::z_scaled(2, 1, 0.3, 100.0, Profile::Uniform).unwrap());
        cs.alpha = 0.2;
        let report = validate(&base_config(cs.clone()), 500, 2);
        assert!(report.has(Assumption::Lipschitz));
        cs.alpha = 0.3;
        assert!(validate(&base_config(cs), 500, 2).passed());
    }

    #[test]
    fn wrong_shapes_are_reported() {
        let mut cs = CoefficientSet::zero(1, 2, 1);
        cs.h = Arc::new(Zero { rows: 2, cols: 3 });
        assert!(validate(&base_config(cs), 10, 0).has(Assumption::Dimensions));
    }

    #[test]
    fn affine_stays_within_bound() {
        let a = Affine::new(
            2,
            1,
            2,
            1,
            vec![0.5, -0.2],
            vec![0.3, 0.0, 0.1, 0.2],
            vec![0.2, 0.0, 0.0, 0.1],
            2.0,
            Profile::Bump {
                center: vec![0.0],
                radius: 1.5,
            },
        )
        .unwrap();
        let mut out = [0.0; 2];
        a.eval(0.0, &[0.2], &[100.0, -50.0], &[7.0, 7.0], &mut out);
        assert!(norm(&out) <= a.bound(0.0, &[0.2]));
        a.eval(0.0, &[3.0], &[1.0, 1.0], &[1.0, 1.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn gaussian_heat_evolution_at_zero_time_is_terminal() {
        let g = GaussianTerminal::new(vec![0.3], 0.4, vec![0.5, -0.2], vec![0.0, 0.1]).unwrap();
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        g.eval(&[0.1], &mut a);
        assert!(g.heat_evolved(&[0.1], 0.0, 5.0, &mut b));
        assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-14);
        assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-14);
    }

    #[test]
    fn identity_transform() {
        let mut cs = CoefficientSet::zero(1, 2, 1);
        cs.f = Arc::new(OutwardDrift::new(vec![1.0, 0.0], 2.0, Profile::Uniform).unwrap());
        let cfg = base_config(cs);
        let t = transform_to_laplacian(Arc::new(ConstantMatrix::diagonal(&[0.5])), 0.5, &cfg, 20, 1).unwrap();
        assert_eq!(t.config.horizon, 1.0);
        assert_eq!(t.gamma_norm, 0.0);
        let mut out = [0.0; 2];
        t.config.coefficients.f.eval(0.3, &[0.0], &[0.0, 0.0], &[0.0, 0.0], &mut out);
        assert_eq!(out, [2.0, 0.0]);
        assert_eq!(t.config.coefficients.alpha, cfg.coefficients.alpha);
    }

    #[test]
    fn non_symmetric_and_non_elliptic_are_rejected() {
        let mut cfg = with_constants(0.2, 0.5);
        cfg.d = 2;
        cfg.grid = GridSpec::new(2, 4.0, 8, 8).unwrap();
        let skew = ConstantMatrix::new(2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(transform_to_laplacian(Arc::new(skew), 2.0, &cfg, 10, 0).is_err());
        let big = ConstantMatrix::diagonal(&[3.0, 1.0]);
        assert!(transform_to_laplacian(Arc::new(big), 2.0, &cfg, 50, 0).is_err());
    }
}
