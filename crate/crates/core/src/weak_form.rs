//! Variational checks: the weak identity against smooth test functions, the
//! test functions transported by the Brownian flow, and their Itô
//! decomposition.
//!
//! With `φ_j = φ(t_j, ·)` the discrete identity is
//!
//! ```text
//! Σ_{j>j0} ⟨u_j, φ_j − φ_{j−1}⟩ + ⟨u_{j0}, φ_{j0}⟩ − ⟨Φ, φ_N⟩ + ½ Σ Δt ⟨∇u_j, ∇φ_j⟩
//!   = Σ Δt ⟨f_{j+1}, φ_j⟩ − Σ Δt ⟨g_{j+1}, ∇φ_j⟩ + Σ ⟨h_{j+1} ΔW_j, φ_j⟩ + Σ Δt ⟨ν_j, φ_j⟩
//! ```
//!
//! which is the scheme summed by parts. At finite `n` the reflection term
//! pairs with all of `ν_n`, not only its part on `{u ∈ ∂D}`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use rand::Rng;

use crate::coefficients::ProblemConfig;
use crate::grid::GridSpec;
use crate::paths::BrownianPath;
use crate::smooth::Bump;
use crate::solver::{ReflectionMeasure, SolutionField};
use crate::{Error, Result};

/// `φ(t, x) = θ(t) (a₀ + a·(x − c)) (1 − |x − c|²/R²)_+^p e`: a tilted
/// polynomial window with analytic derivatives, a polynomial time profile
/// `θ` and a fixed direction `e ∈ ℝ^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    window: Bump,
    level: f64,
    tilt: Vec<f64>,
    /// Coefficients of `θ` in increasing degree.
    temporal: Vec<f64>,
    direction: Vec<f64>,
}

impl TestFunction {
    pub fn new(
        center: Vec<f64>,
        radius: f64,
        power: i32,
        level: f64,
        tilt: Vec<f64>,
        temporal: Vec<f64>,
        direction: Vec<f64>,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::arg("radius", "must be positive"));
        }
        if power < 3 {
            return Err(Error::arg("power", "must be at least 3 for a C² window"));
        }
        if tilt.len() != center.len() {
            return Err(Error::DimensionMismatch {
                what: "tilt",
                expected: center.len(),
                got: tilt.len(),
            });
        }
        if temporal.is_empty() || direction.is_empty() {
            return Err(Error::arg("temporal", "profile and direction must be nonempty"));
        }
        Ok(Self {
            window: Bump::new(center, radius, power),
            level,
            tilt,
            temporal,
            direction,
        })
    }

    /// `φ ≡ 0` in the given dimensions.
    pub fn zero(d: usize, k: usize) -> Self {
        Self {
            window: Bump::new(vec![0.0; d], 1.0, 3),
            level: 0.0,
            tilt: vec![0.0; d],
            temporal: vec![0.0],
            direction: vec![0.0; k],
        }
    }

    /// A random member centred within `spread` of the origin with radius in
    /// `[r_lo, r_hi]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize, spread: f64, radius: (f64, f64)) -> Self {
        let center = (0..d).map(|_| rng.random_range(-spread..=spread)).collect();
        let r = rng.random_range(radius.0..=radius.1);
        let tilt = (0..d).map(|_| rng.random_range(-0.5..=0.5) / r).collect();
        let temporal = vec![rng.random_range(0.5..=1.5), rng.random_range(-0.5..=0.5)];
        let direction = (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Self {
            window: Bump::new(center, r, 3),
            level: 1.0,
            tilt,
            temporal,
            direction,
        }
    }

    pub fn dim(&self) -> usize {
        self.tilt.len()
    }

    pub fn components(&self) -> usize {
        self.direction.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.window.center
    }

    pub fn radius(&self) -> f64 {
        self.window.radius
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// Errors unless the support sits strictly inside the torus.
    pub fn check_support(&self, grid: &GridSpec) -> Result<()> {
        let l = grid.half_width();
        if self.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                what: "test function",
                expected: grid.dim(),
                got: self.dim(),
            });
        }
        if self.window.center.iter().any(|c| c.abs() + self.window.radius >= l) {
            return Err(Error::SupportTouchesEdge);
        }
        Ok(())
    }

    pub fn temporal(&self, t: f64) -> f64 {
        self.temporal.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    fn affine(&self, x: &[f64]) -> f64 {
        self.level
            + self
                .tilt
                .iter()
                .zip(x)
                .zip(&self.window.center)
                .map(|((a, xi), c)| a * (xi - c))
                .sum::<f64>()
    }

    /// Scalar spatial profile `s(x)`.
    pub fn spatial(&self, x: &[f64]) -> f64 {
        let b = self.window.value(x);
        if b == 0.0 {
            0.0
        } else {
            self.affine(x) * b
        }
    }

    /// `∇s(x)`.
    pub fn spatial_gradient(&self, x: &[f64], out: &mut [f64]) {
        let b = self.window.value(x);
        if b == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let a = self.affine(x);
        self.window.gradient(x, out);
        for (o, t) in out.iter_mut().zip(&self.tilt) {
            *o = a * *o + t * b;
        }
    }

    /// `Δs(x)`.
    pub fn spatial_laplacian(&self, x: &[f64]) -> f64 {
        if self.window.value(x) == 0.0 {
            return 0.0;
        }
        let mut g = vec![0.0; x.len()];
        self.window.gradient(x, &mut g);
        let cross: f64 = g.iter().zip(&self.tilt).map(|(g, t)| g * t).sum();
        2.0 * cross + self.affine(x) * self.window.laplacian(x)
    }

    /// `s` at the periodic image of `x` closest to the centre.
    fn periodic_point(&self, grid: &GridSpec, x: &[f64], out: &mut [f64]) {
        for ((o, xi), c) in out.iter_mut().zip(x).zip(&self.window.center) {
            *o = c + grid.minimal_image(xi - c);
        }
    }
}

/// The terms of the discrete identity; `residual` is left minus right.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeakTerms {
    pub time: f64,
    pub boundary: f64,
    pub gradient: f64,
    pub forcing: f64,
    pub divergence: f64,
    pub noise: f64,
    pub reflection: f64,
    pub residual: f64,
}

impl WeakTerms {
    /// Sum of the absolute terms, the natural scale for the residual.
    pub fn scale(&self) -> f64 {
        self.time.abs()
            + self.boundary.abs()
            + self.gradient.abs()
            + self.forcing.abs()
            + self.divergence.abs()
            + self.noise.abs()
            + self.reflection.abs()
    }
}

/// How the time increments of a transported test function are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualPairing {
    /// Differences of the transported function itself.
    Pathwise,
    /// `θ' s dr + θ (½Δs dr − ∇s·dB)` with left endpoints.
    Decomposition,
}

/// Spatial profile, gradient and Laplacian of the (possibly transported)
/// test function at every node of one time slice.
struct Slice {
    s: Vec<f64>,
    grad: Vec<f64>,
    lap: Vec<f64>,
}

fn slice(phi: &TestFunction, grid: &GridSpec, shift: Option<&[f64]>) -> Slice {
    let (d, nodes) = (grid.dim(), grid.node_count());
    let mut out = Slice {
        s: vec![0.0; nodes],
        grad: vec![0.0; nodes * d],
        lap: vec![0.0; nodes],
    };
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    for node in 0..nodes {
        grid.position(node, &mut x);
        if let Some(b) = shift {
            for c in 0..d {
                x[c] -= b[c];
            }
        }
        phi.periodic_point(grid, &x, &mut y);
        out.s[node] = phi.spatial(&y);
        if out.s[node] != 0.0 || phi.window.value(&y) != 0.0 {
            phi.spatial_gradient(&y, &mut out.grad[node * d..(node + 1) * d]);
            out.lap[node] = phi.spatial_laplacian(&y);
        }
    }
    out
}

fn check_inputs(field: &SolutionField, measure: &ReflectionMeasure, config: &ProblemConfig, phi: &TestFunction, w: &BrownianPath, start: usize) -> Result<()> {
    field.grid().check_same(measure.grid())?;
    field.grid().check_same(&config.grid)?;
    phi.check_support(field.grid())?;
    if phi.components() != field.k() {
        return Err(Error::DimensionMismatch {
            what: "test function direction",
            expected: field.k(),
            got: phi.components(),
        });
    }
    if w.steps() != field.steps() || w.dim() != config.l || w.horizon() != field.horizon() {
        return Err(Error::GridMismatch("noise path does not match the field".into()));
    }
    if start > field.steps() {
        return Err(Error::arg("start", "beyond the last time node"));
    }
    Ok(())
}

/// Defect of the discrete weak identity on `[t_start, T]` against a fixed
/// test function.
pub fn weak_residual(
    field: &SolutionField,
    measure: &ReflectionMeasure,
    config: &ProblemConfig,
    phi: &TestFunction,
    w: &BrownianPath,
    start: usize,
) -> Result<WeakTerms> {
    check_inputs(field, measure, config, phi, w, start)?;
    let fixed = slice(phi, field.grid(), None);
    assemble(field, measure, config, phi, w, start, |_| &fixed, None)
}

/// Defect of the same identity against `φ(x − (B_r − B_t))` on `[t, T]`.
/// On a zero `B` path the pathwise variant reproduces `weak_residual`.
#[allow(clippy::too_many_arguments)]
pub fn dual_residual(
    field: &SolutionField,
    measure: &ReflectionMeasure,
    config: &ProblemConfig,
    phi: &TestFunction,
    b: &BrownianPath,
    w: &BrownianPath,
    start: usize,
    pairing: DualPairing,
) -> Result<WeakTerms> {
    check_inputs(field, measure, config, phi, w, start)?;
    if b.steps() != field.steps() || b.dim() != field.dim() || b.horizon() != field.horizon() {
        return Err(Error::GridMismatch("B path does not match the field".into()));
    }
    let d = field.dim();
    let mut shift = vec![0.0; d];
    let slices: Vec<Slice> = (0..=field.steps())
        .map(|j| {
            if j < start {
                return Slice {
                    s: Vec::new(),
                    grad: Vec::new(),
                    lap: Vec::new(),
                };
            }
            for c in 0..d {
                shift[c] = b.value(j)[c] - b.value(start)[c];
            }
            slice(phi, field.grid(), Some(&shift))
        })
        .collect();
    let decomposition = (pairing == DualPairing::Decomposition).then_some(b);
    assemble(field, measure, config, phi, w, start, |j| &slices[j], decomposition)
}

#[allow(clippy::too_many_arguments)]
fn assemble<'a>(
    field: &SolutionField,
    measure: &ReflectionMeasure,
    config: &ProblemConfig,
    phi: &TestFunction,
    w: &BrownianPath,
    start: usize,
    at: impl Fn(usize) -> &'a Slice,
    decomposition: Option<&BrownianPath>,
) -> Result<WeakTerms> {
    let grid = *field.grid();
    let (d, k, l) = (grid.dim(), field.k(), config.l);
    let nodes = grid.node_count();
    let steps = field.steps();
    let dt = field.dt();
    let vol = grid.cell_volume();
    let e = phi.direction();
    let theta: Vec<f64> = (0..=steps).map(|j| phi.temporal(grid.time(config.horizon, j))).collect();
    let cs = &config.coefficients;
    let mut terms = WeakTerms::default();

    for j in start + 1..=steps {
        let (now, before) = (at(j), at(j - 1));
        let u = field.at(j);
        let mut acc = 0.0;
        for node in 0..nodes {
            let increment = match decomposition {
                None => theta[j] * now.s[node] - theta[j - 1] * before.s[node],
                Some(b) => {
                    let mut ito = 0.5 * dt * before.lap[node];
                    for c in 0..d {
                        ito -= before.grad[node * d + c] * b.increment(j - 1, c);
                    }
                    (theta[j] - theta[j - 1]) * before.s[node] + theta[j] * ito
                }
            };
            if increment != 0.0 {
                let ue: f64 = (0..k).map(|c| u[node * k + c] * e[c]).sum();
                acc += ue * increment;
            }
        }
        terms.time += acc * vol;
    }
    {
        let (first, last) = (at(start), at(steps));
        let (u0, phi_grid) = (field.at(start), field.at(steps));
        let mut acc = 0.0;
        for node in 0..nodes {
            for c in 0..k {
                acc += u0[node * k + c] * theta[start] * first.s[node] * e[c]
                    - phi_grid[node * k + c] * theta[steps] * last.s[node] * e[c];
            }
        }
        terms.boundary = acc * vol;
    }

    let mut x = vec![0.0; d];
    let (mut f, mut g, mut h) = (vec![0.0; k], vec![0.0; k * d], vec![0.0; k * l]);
    for j in start..steps {
        let sl = at(j);
        let th = theta[j];
        let t_next = grid.time(config.horizon, j + 1);
        let (grad_u, u_next, grad_next) = (field.gradient_at(j), field.at(j + 1), field.gradient_at(j + 1));
        let nu = measure.density_at(j);
        let (mut grad_acc, mut f_acc, mut g_acc, mut h_acc, mut nu_acc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for node in 0..nodes {
            if sl.s[node] == 0.0 && sl.grad[node * d..(node + 1) * d].iter().all(|v| *v == 0.0) {
                continue;
            }
            let s = th * sl.s[node];
            let gs = &sl.grad[node * d..(node + 1) * d];
            grid.position(node, &mut x);
            let y = &u_next[node * k..(node + 1) * k];
            let z = &grad_next[node * k * d..(node + 1) * k * d];
            cs.f.eval(t_next, &x, y, z, &mut f);
            cs.g.eval(t_next, &x, y, z, &mut g);
            cs.h.eval(t_next, &x, y, z, &mut h);
            for c in 0..k {
                let ec = e[c];
                if ec == 0.0 {
                    continue;
                }
                for a in 0..d {
                    grad_acc += grad_u[(node * k + c) * d + a] * th * gs[a] * ec;
                    g_acc += g[c * d + a] * th * gs[a] * ec;
                }
                f_acc += f[c] * s * ec;
                nu_acc += nu[node * k + c] * s * ec;
                let mut hw = 0.0;
                for m in 0..l {
                    hw += h[c * l + m] * w.increment(j, m);
                }
                h_acc += hw * s * ec;
            }
        }
        terms.gradient += 0.5 * dt * grad_acc * vol;
        terms.forcing += dt * f_acc * vol;
        terms.divergence -= dt * g_acc * vol;
        terms.noise += h_acc * vol;
        terms.reflection += dt * nu_acc * vol;
    }
    terms.residual = terms.time + terms.boundary + terms.gradient
        - (terms.forcing + terms.divergence + terms.noise + terms.reflection);
    Ok(terms)
}

/// `θ(t_j) s(x − (B_{t_j} − B_{t_start})) e` at every node for `j ≥ start`;
/// `(N + 1 − start) × nodes × k` values.
pub fn random_test_function(phi: &TestFunction, grid: &GridSpec, horizon: f64, b: &BrownianPath, start: usize) -> Result<Vec<f64>> {
    if b.dim() != grid.dim() || start > b.steps() {
        return Err(Error::GridMismatch("B path does not match the grid".into()));
    }
    let (d, k, nodes) = (grid.dim(), phi.components(), grid.node_count());
    let mut out = Vec::with_capacity((b.steps() + 1 - start) * nodes * k);
    let mut shift = vec![0.0; d];
    for j in start..=b.steps() {
        for c in 0..d {
            shift[c] = b.value(j)[c] - b.value(start)[c];
        }
        let th = phi.temporal(grid.time(horizon, j));
        let sl = slice(phi, grid, Some(&shift));
        for s in sl.s {
            out.extend(phi.direction.iter().map(|e| th * s * e));
        }
    }
    Ok(out)
}

/// `max_{s, x} |s(x − ΔB_s) − [s(x) + ½ Σ Δs(x − ΔB_r) Δr − Σ ∇s(x − ΔB_r)·ΔB_r]|`
/// over the grid nodes, with left-endpoint sums from node `start`.
pub fn decomposition_residual(phi: &TestFunction, grid: &GridSpec, b: &BrownianPath, start: usize) -> Result<f64> {
    if b.dim() != grid.dim() || start > b.steps() {
        return Err(Error::GridMismatch("B path does not match the grid".into()));
    }
    let (d, nodes) = (grid.dim(), grid.node_count());
    let dt = b.dt();
    let origin = slice(phi, grid, None);
    let mut running = origin.s.clone();
    let mut previous = origin;
    let mut shift = vec![0.0; d];
    let mut worst = 0.0f64;
    for j in start + 1..=b.steps() {
        for node in 0..nodes {
            let mut inc = 0.5 * previous.lap[node] * dt;
            for c in 0..d {
                inc -= previous.grad[node * d + c] * b.increment(j - 1, c);
            }
            running[node] += inc;
        }
        for c in 0..d {
            shift[c] = b.value(j)[c] - b.value(start)[c];
        }
        let current = slice(phi, grid, Some(&shift));
        for node in 0..nodes {
            worst = worst.max((current.s[node] - running[node]).abs());
        }
        previous = current;
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientSet, ConstantTerminal, GaussianTerminal};
    use crate::domain::ConvexDomain;
    use crate::solver::solve;
    use alloc::sync::Arc;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn bump() -> TestFunction {
        TestFunction::new(vec![0.2], 1.5, 4, 1.0, vec![0.3], vec![1.0, -0.4], vec![0.7, -0.5]).unwrap()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let phi = TestFunction::new(vec![0.1, -0.3], 1.2, 3, 0.8, vec![0.4, -0.2], vec![1.0], vec![1.0]).unwrap();
        let x = [0.35, 0.1];
        let h = 1e-5;
        let mut g = [0.0; 2];
        phi.spatial_gradient(&x, &mut g);
        let mut lap = 0.0;
        for a in 0..2 {
            let (mut p, mut m) = (x, x);
            p[a] += h;
            m[a] -= h;
            assert_abs_diff_eq!(g[a], (phi.spatial(&p) - phi.spatial(&m)) / (2.0 * h), epsilon = 1e-8);
            lap += (phi.spatial(&p) - 2.0 * phi.spatial(&x) + phi.spatial(&m)) / (h * h);
        }
        assert_abs_diff_eq!(phi.spatial_laplacian(&x), lap, epsilon = 1e-4);
    }

    #[test]
    fn support_at_the_edge_is_rejected() {
        let grid = GridSpec::new(1, 2.0, 16, 4).unwrap();
        let phi = TestFunction::new(vec![1.0], 1.0, 3, 1.0, vec![0.0], vec![1.0], vec![1.0]).unwrap();
        assert!(matches!(phi.check_support(&grid), Err(Error::SupportTouchesEdge)));
        assert!(bump().check_support(&GridSpec::new(1, 4.0, 16, 4).unwrap()).is_ok());
    }

    fn config(terminal: Arc<dyn crate::coefficients::TerminalFn>) -> ProblemConfig {
        ProblemConfig {
            d: 1,
            k: 2,
            l: 1,
            horizon: 1.0,
            terminal,
            domain: ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(),
            coefficients: CoefficientSet::zero(1, 2, 1),
            grid: GridSpec::new(1, 4.0, 32, 16).unwrap(),
        }
    }

    #[test]
    fn constant_field_cancels_to_rounding() {
        let cfg = config(Arc::new(ConstantTerminal::new(1, vec![0.4, 0.1])));
        let w = BrownianPath::sample(1.0, 16, 1, 3).unwrap();
        let sol = solve(&cfg, &w, 10.0).unwrap();
        let terms = weak_residual(&sol.field, &sol.measure, &cfg, &bump(), &w, 2).unwrap();
        assert!(terms.time.abs() > 1e-3);
        assert!(terms.residual.abs() <= 1e-10);
        let zero = weak_residual(&sol.field, &sol.measure, &cfg, &TestFunction::zero(1, 2), &w, 0).unwrap();
        assert_eq!(zero.residual, 0.0);
    }

    #[test]
    fn pathwise_dual_on_zero_path_is_the_weak_residual() {
        let cfg = config(Arc::new(GaussianTerminal::new(vec![0.0], 0.6, vec![0.5, 0.0], vec![0.0, 0.1]).unwrap()));
        let w = BrownianPath::sample(1.0, 16, 1, 3).unwrap();
        let sol = solve(&cfg, &w, 10.0).unwrap();
        let b = BrownianPath::zero(1.0, 16, 1).unwrap();
        let weak = weak_residual(&sol.field, &sol.measure, &cfg, &bump(), &w, 0).unwrap();
        let dual = dual_residual(&sol.field, &sol.measure, &cfg, &bump(), &b, &w, 0, DualPairing::Pathwise).unwrap();
        assert!((weak.residual - dual.residual).abs() <= 1e-10);
    }

    #[test]
    fn transported_function_keeps_its_integral() {
        let grid = GridSpec::new(1, 4.0, 64, 8).unwrap();
        let b = BrownianPath::sample(1.0, 8, 1, 11).unwrap();
        let phi = bump();
        let field = random_test_function(&phi, &grid, 1.0, &b, 2).unwrap();
        let per = grid.node_count() * 2;
        let zero = BrownianPath::zero(1.0, 8, 1).unwrap();
        let fixed = random_test_function(&phi, &grid, 1.0, &zero, 2).unwrap();
        for j in 0..7 {
            let th = phi.temporal(grid.time(1.0, j + 2));
            let mass: f64 = field[j * per..(j + 1) * per].iter().step_by(2).sum::<f64>() * grid.cell_volume();
            let reference: f64 = fixed[j * per..(j + 1) * per].iter().step_by(2).sum::<f64>() * grid.cell_volume();
            assert_abs_diff_eq!(mass, reference, epsilon = 1e-3 * th.abs());
        }
        // Without motion only the Itô drift ½∫Δs dr is left over.
        let drift = (0..grid.node_count())
            .map(|node| {
                let mut x = [0.0];
                grid.position(node, &mut x);
                0.5 * phi.spatial_laplacian(&x).abs()
            })
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(decomposition_residual(&phi, &grid, &zero, 0).unwrap(), drift, epsilon = 1e-12);
    }

    #[test]
    fn random_members_fit_inside_the_torus() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let grid = GridSpec::new(2, 4.0, 16, 4).unwrap();
        for _ in 0..20 {
            let phi = TestFunction::random(&mut rng, 2, 2, 1.0, (0.8, 2.0));
            assert!(phi.check_support(&grid).is_ok());
        }
    }
}
