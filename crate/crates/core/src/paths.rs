//! Brownian paths on a uniform time grid, the translation flow
//! `B_{t,s}(x) = x + (B_s − B_t)`, and the stochastic quadratures used by
//! the reconstruction: backward Itô against `W` (right endpoints), forward
//! Itô against `B` (left endpoints) and the forward–backward `∗dB` integral.

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::smooth::Bump;
use crate::stats::{fit_loglog, Estimate};
use crate::{Error, Result};

/// Identifies the generator behind [`BrownianPath::sample`]. Changing the
/// sampling algorithm must change this string.
pub const GENERATOR_ID: &str = "chacha20/standard-normal/v1";

/// Convention factor of the backward leg of `∗dB` selected by
/// [`calibrate_star_convention`] and shipped as the default.
pub const DEFAULT_KAPPA: f64 = 2.0;

/// Seed streams, so that independent consumers never share random numbers.
pub mod stream {
    pub const W: u64 = 1;
    pub const B: u64 = 2;
    pub const X: u64 = 3;
    pub const TEST_PROCESS: u64 = 4;
    pub const STAR: u64 = 5;
    pub const VALIDATION: u64 = 6;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of item `index` in `stream` derived from a user seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix(base ^ splitmix(stream.wrapping_mul(0x1000_0000_01B3) ^ splitmix(index)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dim: usize,
    horizon: f64,
    steps: usize,
    /// `(steps + 1) × dim`, node-major.
    values: Vec<f64>,
    seed: u64,
    generator: &'static str,
}

impl BrownianPath {
    /// Gaussian increments with variance `horizon / steps` per coordinate.
    pub fn sample(horizon: f64, steps: usize, dim: usize, seed: u64) -> Result<Self> {
        check_shape(horizon, steps, dim)?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sd = (horizon / steps as f64).sqrt();
        let mut values = vec![0.0; (steps + 1) * dim];
        for j in 0..steps {
            for c in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                values[(j + 1) * dim + c] = values[j * dim + c] + sd * z;
            }
        }
        Ok(Self {
            dim,
            horizon,
            steps,
            values,
            seed,
            generator: GENERATOR_ID,
        })
    }

    pub fn zero(horizon: f64, steps: usize, dim: usize) -> Result<Self> {
        Self::from_values(horizon, steps, dim, vec![0.0; (steps + 1) * dim])
    }

    /// A path with prescribed node values (the first node must be zero).
    pub fn from_values(horizon: f64, steps: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        check_shape(horizon, steps, dim)?;
        if values.len() != (steps + 1) * dim {
            return Err(Error::DimensionMismatch {
                what: "path values",
                expected: (steps + 1) * dim,
                got: values.len(),
            });
        }
        if values[..dim].iter().any(|v| *v != 0.0) {
            return Err(Error::arg("values", "a path starts at zero"));
        }
        Ok(Self {
            dim,
            horizon,
            steps,
            values,
            seed: 0,
            generator: "explicit",
        })
    }

    /// Keeps every `factor`-th node.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) || self.steps / factor == 0 {
            return Err(Error::arg("factor", format!("must divide the step count {}", self.steps)));
        }
        let steps = self.steps / factor;
        let mut values = Vec::with_capacity((steps + 1) * self.dim);
        for j in 0..=steps {
            values.extend_from_slice(self.value(j * factor));
        }
        Ok(Self {
            dim: self.dim,
            horizon: self.horizon,
            steps,
            values,
            seed: self.seed,
            generator: self.generator,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generator(&self) -> &'static str {
        self.generator
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.dt()
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    /// `B_{t_{j+1}} − B_{t_j}` for coordinate `c`.
    #[inline]
    pub fn increment(&self, j: usize, c: usize) -> f64 {
        self.values[(j + 1) * self.dim + c] - self.values[j * self.dim + c]
    }

    /// Index of the node at time `t`; times off the grid are rejected.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let s = t / self.dt();
        let j = s.round();
        if !(0.0..=self.steps as f64).contains(&j) || (s - j).abs() > 1e-9 {
            return Err(Error::OffGrid { time: t });
        }
        Ok(j as usize)
    }

    fn window(&self, t: f64, s: f64) -> Result<(usize, usize)> {
        let (a, b) = (self.node_index(t)?, self.node_index(s)?);
        if a > b {
            return Err(Error::arg("window", "needs t ≤ s"));
        }
        Ok((a, b))
    }

    /// `x + (B_s − B_t)`.
    pub fn flow(&self, x: &[f64], t: f64, s: f64) -> Result<Vec<f64>> {
        let (a, b) = self.window(t, s)?;
        self.check_point(x)?;
        let mut out = vec![0.0; self.dim];
        self.flow_nodes(x, a, b, &mut out);
        Ok(out)
    }

    /// `y − (B_s − B_t)`.
    pub fn inverse_flow(&self, y: &[f64], t: f64, s: f64) -> Result<Vec<f64>> {
        let (a, b) = self.window(t, s)?;
        self.check_point(y)?;
        let mut out = vec![0.0; self.dim];
        self.inverse_flow_nodes(y, a, b, &mut out);
        Ok(out)
    }

    /// Flow between nodes `from ≤ to`.
    pub fn flow_nodes(&self, x: &[f64], from: usize, to: usize, out: &mut [f64]) {
        let (b0, b1) = (self.value(from), self.value(to));
        for c in 0..self.dim {
            out[c] = x[c] + (b1[c] - b0[c]);
        }
    }

    pub fn inverse_flow_nodes(&self, y: &[f64], from: usize, to: usize, out: &mut [f64]) {
        let (b0, b1) = (self.value(from), self.value(to));
        for c in 0..self.dim {
            out[c] = y[c] - (b1[c] - b0[c]);
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "flow point",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn check_integrand(&self, integrand: &[f64], rows: usize, from: usize, to: usize) -> Result<()> {
        let expected = (self.steps + 1) * rows * self.dim;
        if integrand.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "integrand node values",
                expected,
                got: integrand.len(),
            });
        }
        if from > to || to > self.steps {
            return Err(Error::arg("window", format!("[{from}, {to}] is not inside [0, {}]", self.steps)));
        }
        Ok(())
    }

    /// Backward Itô sum `Σ_{j=from}^{to−1} η_{j+1} (W_{j+1} − W_j)` for an
    /// integrand holding a `rows × dim` matrix at every node.
    pub fn backward_ito(&self, integrand: &[f64], rows: usize, from: usize, to: usize) -> Result<Vec<f64>> {
        self.check_integrand(integrand, rows, from, to)?;
        Ok(self.ito_sum(integrand, rows, from, to, 1))
    }

    /// Forward Itô sum `Σ_{j=from}^{to−1} η_j (B_{j+1} − B_j)`.
    pub fn forward_ito(&self, integrand: &[f64], rows: usize, from: usize, to: usize) -> Result<Vec<f64>> {
        self.check_integrand(integrand, rows, from, to)?;
        Ok(self.ito_sum(integrand, rows, from, to, 0))
    }

    fn ito_sum(&self, integrand: &[f64], rows: usize, from: usize, to: usize, offset: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; rows];
        for j in from..to {
            let eta = &integrand[(j + offset) * rows * d..(j + offset + 1) * rows * d];
            for (r, o) in out.iter_mut().enumerate() {
                for c in 0..d {
                    *o += eta[r * d + c] * self.increment(j, c);
                }
            }
        }
        out
    }

    /// Forward–backward integral `∫ L ∗dB` of a `rows × dim` integrand
    /// (each row is an `ℝ^d` field along the path).
    ///
    /// Forward leg `Σ ⟨L_j, ΔB_j⟩`; backward leg `Σ ⟨L_j + κ(L_{j+1} − L_j), ΔB_j⟩`
    /// taken with the reversed orientation. Their sum is `−κ Σ ⟨ΔL_j, ΔB_j⟩`,
    /// which vanishes for constant `L` and tends to `−κ ∫ div L dr` for
    /// smooth `L`.
    pub fn star_integral(&self, integrand: &[f64], rows: usize, from: usize, to: usize, kappa: f64) -> Result<Vec<f64>> {
        self.check_integrand(integrand, rows, from, to)?;
        let d = self.dim;
        let mut out = vec![0.0; rows];
        for j in from..to {
            let now = &integrand[j * rows * d..(j + 1) * rows * d];
            let next = &integrand[(j + 1) * rows * d..(j + 2) * rows * d];
            for (r, o) in out.iter_mut().enumerate() {
                for c in 0..d {
                    let db = self.increment(j, c);
                    let l = now[r * d + c];
                    let forward = l * db;
                    let backward = (l + kappa * (next[r * d + c] - l)) * db;
                    *o += forward - backward;
                }
            }
        }
        Ok(out)
    }
}

fn check_shape(horizon: f64, steps: usize, dim: usize) -> Result<()> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::arg("horizon", "must be positive and finite"));
    }
    if steps == 0 {
        return Err(Error::arg("steps", "must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::arg("dim", "must be at least 1"));
    }
    Ok(())
}

/// A smooth vector field `ℝ^d → ℝ^d` with known divergence, used to
/// calibrate the `∗dB` quadrature.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64], out: &mut [f64]);
    fn divergence(&self, x: &[f64]) -> f64;
}

/// `L(x) = a · (1 − |x − c|²/R²)_+³`.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpField {
    amplitude: Vec<f64>,
    bump: Bump,
}

impl BumpField {
    pub fn new(amplitude: Vec<f64>, center: Vec<f64>, radius: f64) -> Result<Self> {
        if amplitude.len() != center.len() || amplitude.is_empty() {
            return Err(Error::arg("amplitude", "must match the center dimension"));
        }
        if !(radius > 0.0) {
            return Err(Error::arg("radius", "must be positive"));
        }
        Ok(Self {
            amplitude,
            bump: Bump::new(center, radius, 3),
        })
    }
}

impl VectorField for BumpField {
    fn dim(&self) -> usize {
        self.amplitude.len()
    }

    fn value(&self, x: &[f64], out: &mut [f64]) {
        let b = self.bump.value(x);
        for (o, a) in out.iter_mut().zip(&self.amplitude) {
            *o = a * b;
        }
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; x.len()];
        self.bump.gradient(x, &mut g);
        g.iter().zip(&self.amplitude).map(|(a, b)| a * b).sum()
    }
}

/// `L(x) = A x + b` (row-major `A`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    matrix: Vec<f64>,
    shift: Vec<f64>,
}

impl LinearField {
    pub fn new(matrix: Vec<f64>, shift: Vec<f64>) -> Result<Self> {
        let d = shift.len();
        if d == 0 || matrix.len() != d * d {
            return Err(Error::arg("matrix", "must be square and match the shift"));
        }
        Ok(Self { matrix, shift })
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn value(&self, x: &[f64], out: &mut [f64]) {
        let d = self.shift.len();
        for r in 0..d {
            out[r] = self.shift[r] + (0..d).map(|c| self.matrix[r * d + c] * x[c]).sum::<f64>();
        }
    }

    fn divergence(&self, _x: &[f64]) -> f64 {
        let d = self.shift.len();
        (0..d).map(|i| self.matrix[i * d + i]).sum()
    }
}

/// Mean absolute deviation of the `∗dB` quadrature from `−2∫div L dr` at
/// one refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct StarLevel {
    pub steps: usize,
    pub dt: f64,
    pub kappa: f64,
    pub residual: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarCalibration {
    pub kappa: f64,
    pub levels: Vec<StarLevel>,
    /// `(κ, slope of log residual against log Δt)` for each candidate.
    pub slopes: Vec<(f64, f64)>,
    /// Mean of `|2∫div L dr|` along the paths, the scale of the identity.
    pub target_scale: f64,
}

impl StarCalibration {
    pub fn levels_for(&self, kappa: f64) -> impl Iterator<Item = &StarLevel> {
        self.levels.iter().filter(move |l| l.kappa == kappa)
    }

    pub fn slope_for(&self, kappa: f64) -> Option<f64> {
        self.slopes.iter().find(|s| s.0 == kappa).map(|s| s.1)
    }
}

/// Candidate convention factors.
pub const KAPPA_CANDIDATES: [f64; 2] = [1.0, 2.0];
/// A candidate counts as converging if its residual decays at least at this
/// log-log rate in `Δt`.
pub const STAR_MIN_SLOPE: f64 = 0.4;

/// Per-path deviations `|∫L∗dB − (−2∫div L dr)|` at each level in `steps`
/// (increasing; each must divide the largest). The reference integral is the
/// trapezoidal rule on the finest level. Paths start at `start`.
pub fn star_deviations(
    field: &dyn VectorField,
    start: &[f64],
    horizon: f64,
    steps: &[usize],
    paths: usize,
    seed: u64,
    kappa: f64,
) -> Result<Vec<Vec<f64>>> {
    let finest = *steps.iter().max().ok_or_else(|| Error::arg("steps", "no levels"))?;
    let d = field.dim();
    if start.len() != d {
        return Err(Error::DimensionMismatch {
            what: "start point",
            expected: d,
            got: start.len(),
        });
    }
    let mut out = vec![Vec::with_capacity(paths); steps.len()];
    let mut x = vec![0.0; d];
    for p in 0..paths {
        let fine = BrownianPath::sample(horizon, finest, d, derive_seed(seed, stream::STAR, p as u64))?;
        let mut target = 0.0;
        for j in 0..=finest {
            fine.flow_nodes(start, 0, j, &mut x);
            let w = if j == 0 || j == finest { 0.5 } else { 1.0 };
            target += w * field.divergence(&x);
        }
        target *= -2.0 * fine.dt();
        for (level, &n) in steps.iter().enumerate() {
            if finest % n != 0 {
                return Err(Error::arg("steps", format!("{n} does not divide {finest}")));
            }
            let path = fine.coarsen(finest / n)?;
            let mut values = vec![0.0; (n + 1) * d];
            for j in 0..=n {
                path.flow_nodes(start, 0, j, &mut x);
                field.value(&x, &mut values[j * d..(j + 1) * d]);
            }
            let star = path.star_integral(&values, 1, 0, n, kappa)?[0];
            out[level].push((star - target).abs());
        }
    }
    Ok(out)
}

/// Runs the `∗dB` quadrature under each candidate `κ` over nested
/// refinements and selects the one whose deviation from `−2∫div L dr`
/// vanishes. Fails unless exactly one candidate converges.
pub fn calibrate_star_convention(
    field: &dyn VectorField,
    start: &[f64],
    horizon: f64,
    steps: &[usize],
    paths: usize,
    seed: u64,
) -> Result<StarCalibration> {
    if steps.len() < 2 || paths == 0 {
        return Err(Error::arg("steps", "calibration needs at least two levels and one path"));
    }
    let mut levels = Vec::new();
    let mut slopes = Vec::new();
    let mut converging = Vec::new();
    let mut target_scale = 0.0;
    {
        let finest = *steps.iter().max().unwrap_or(&1);
        let d = field.dim();
        let mut x = vec![0.0; d];
        for p in 0..paths {
            let fine = BrownianPath::sample(horizon, finest, d, derive_seed(seed, stream::STAR, p as u64))?;
            let mut acc = 0.0;
            for j in 0..=finest {
                fine.flow_nodes(start, 0, j, &mut x);
                let w = if j == 0 || j == finest { 0.5 } else { 1.0 };
                acc += w * field.divergence(&x);
            }
            target_scale += (2.0 * acc * fine.dt()).abs() / paths as f64;
        }
    }
    for kappa in KAPPA_CANDIDATES {
        let deviations = star_deviations(field, start, horizon, steps, paths, seed, kappa)?;
        let mut dts = Vec::new();
        let mut means = Vec::new();
        for (n, dev) in steps.iter().zip(&deviations) {
            let residual = Estimate::from_samples(dev);
            dts.push(horizon / *n as f64);
            means.push(residual.mean);
            levels.push(StarLevel {
                steps: *n,
                dt: horizon / *n as f64,
                kappa,
                residual,
            });
        }
        let slope = match fit_loglog(&dts, &means) {
            Ok(fit) => fit.slope,
            Err(_) => {
                return Err(Error::Calibration(
                    "test field gives a vanishing identity on every level; use a field with nonzero divergence".into(),
                ))
            }
        };
        slopes.push((kappa, slope));
        if slope >= STAR_MIN_SLOPE {
            converging.push(kappa);
        }
    }
    match converging.as_slice() {
        [kappa] => Ok(StarCalibration {
            kappa: *kappa,
            levels,
            slopes,
            target_scale,
        }),
        [] => Err(Error::Calibration("no convention converges to the identity".into())),
        _ => Err(Error::Calibration("more than one convention converges; test field is degenerate".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sampling_is_deterministic() {
        let a = BrownianPath::sample(1.0, 64, 2, 42).unwrap();
        let b = BrownianPath::sample(1.0, 64, 2, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), BrownianPath::sample(1.0, 64, 2, 43).unwrap().values());
        assert_eq!(a.value(0), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(BrownianPath::sample(1.0, 0, 1, 0).is_err());
        assert!(BrownianPath::sample(0.0, 4, 1, 0).is_err());
        assert!(BrownianPath::sample(-1.0, 4, 1, 0).is_err());
    }

    #[test]
    fn coarsening_keeps_nodes() {
        let a = BrownianPath::sample(2.0, 12, 1, 1).unwrap();
        let c = a.coarsen(3).unwrap();
        assert_eq!(c.steps(), 4);
        assert_eq!(c.value(2), a.value(6));
        assert!(a.coarsen(5).is_err());
    }

    #[test]
    fn zero_path_flow_is_identity() {
        let z = BrownianPath::zero(1.0, 10, 2).unwrap();
        assert_eq!(z.flow(&[0.3, -0.1], 0.2, 0.7).unwrap(), vec![0.3, -0.1]);
    }

    #[test]
    fn flow_rejects_off_grid_times() {
        let p = BrownianPath::sample(1.0, 10, 1, 3).unwrap();
        assert_eq!(p.flow(&[0.0], 0.15, 0.5), Err(Error::OffGrid { time: 0.15 }));
        assert!(p.flow(&[0.0], 0.5, 0.2).is_err());
    }

    #[test]
    fn inverse_flow_undoes_flow() {
        let p = BrownianPath::sample(1.0, 16, 2, 9).unwrap();
        let x = [0.123456789, -7.5];
        let y = p.flow(&x, 0.25, 0.75).unwrap();
        let back = p.inverse_flow(&y, 0.25, 0.75).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn backward_ito_of_constant_telescopes() {
        let p = BrownianPath::sample(1.0, 20, 1, 5).unwrap();
        let eta = vec![2.5; 21];
        let v = p.backward_ito(&eta, 1, 4, 20).unwrap()[0];
        assert_abs_diff_eq!(v, 2.5 * (p.value(20)[0] - p.value(4)[0]), epsilon = 1e-13);
        assert_eq!(p.backward_ito(&[0.0; 21], 1, 0, 20).unwrap(), vec![0.0]);
        assert!(p.backward_ito(&[0.0; 20], 1, 0, 20).is_err());
    }

    #[test]
    fn backward_ito_uses_right_endpoints() {
        let p = BrownianPath::from_values(1.0, 2, 1, vec![0.0, 1.0, 3.0]).unwrap();
        let eta = [10.0, 20.0, 30.0];
        assert_eq!(p.backward_ito(&eta, 1, 0, 2).unwrap(), vec![20.0 * 1.0 + 30.0 * 2.0]);
        assert_eq!(p.forward_ito(&eta, 1, 0, 2).unwrap(), vec![10.0 * 1.0 + 20.0 * 2.0]);
    }

    #[test]
    fn star_vanishes_for_constant_and_zero_integrands() {
        let p = BrownianPath::sample(1.0, 32, 2, 8).unwrap();
        let constant: Vec<f64> = (0..33).flat_map(|_| [0.7, -1.2]).collect();
        for kappa in KAPPA_CANDIDATES {
            assert_eq!(p.star_integral(&constant, 1, 0, 32, kappa).unwrap(), vec![0.0]);
            assert_eq!(p.star_integral(&[0.0; 66], 1, 0, 32, kappa).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn derived_seeds_differ_across_streams() {
        assert_ne!(derive_seed(1, stream::W, 0), derive_seed(1, stream::B, 0));
        assert_ne!(derive_seed(1, stream::W, 0), derive_seed(1, stream::W, 1));
        assert_eq!(derive_seed(7, 3, 2), derive_seed(7, 3, 2));
    }

    #[test]
    fn zero_field_calibration_defers() {
        let zero = LinearField::new(vec![0.0], vec![0.0]).unwrap();
        let err = calibrate_star_convention(&zero, &[0.0], 1.0, &[16, 64], 4, 1).unwrap_err();
        assert!(matches!(err, Error::Calibration(_)));
    }
}
