//! Backward penalized scheme on the periodic grid.
//!
//! One step from `t_{j+1}` to `t_j`:
//!
//! ```text
//! w   = S_Δt[u_{j+1}] + Δt f_{j+1} + Δt div_h g_{j+1} + h_{j+1} ΔW_j
//! u_j = prox(w, nΔt)      where v + nΔt (v − π(v)) = w
//! ```
//!
//! `S_Δt` is an implicit Euler step of `½Δ_h`, the coefficients are
//! evaluated at `(t_{j+1}, x, u_{j+1}, ∇u_{j+1})`, and the penalty is
//! resolved implicitly in closed form, so the scheme is stable uniformly in
//! the penalty level `n`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;

use crate::coefficients::ProblemConfig;
use crate::domain::ConvexDomain;
use crate::grid::GridSpec;
use crate::heat::HeatStep;
use crate::linalg::{dist, norm};
use crate::paths::BrownianPath;
use crate::{Error, Result};

/// Every this many nodes the resolve is checked by back-substitution.
pub const RESOLVE_CHECK_STRIDE: usize = 100;
/// Relative tolerance of the back-substitution check.
pub const RESOLVE_TOLERANCE: f64 = 1e-12;

/// The unique `v` with `v + λ(v − π(v)) = w`: `w` itself inside `D̄`,
/// otherwise `π(w) + (w − π(w))/(1 + λ)`, which keeps `π(v) = π(w)`.
pub fn implicit_penalty_resolve(w: &[f64], lambda: f64, domain: &ConvexDomain) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::arg("lambda", "must be nonnegative"));
    }
    let mut out = vec![0.0; w.len()];
    let mut p = vec![0.0; w.len()];
    resolve_into(w, lambda, domain, &mut p, &mut out)?;
    Ok(out)
}

fn resolve_into(w: &[f64], lambda: f64, domain: &ConvexDomain, p: &mut [f64], out: &mut [f64]) -> Result<()> {
    domain.project_into(w, p)?;
    if p == w {
        out.copy_from_slice(w);
    } else {
        let s = 1.0 / (1.0 + lambda);
        for ((o, wi), pi) in out.iter_mut().zip(w).zip(p.iter()) {
            *o = pi + (wi - pi) * s;
        }
    }
    Ok(())
}

/// `|v + λ(v − π(v)) − w|`.
pub fn resolve_defect(v: &[f64], w: &[f64], lambda: f64, domain: &ConvexDomain) -> Result<f64> {
    let p = domain.project(v)?;
    let r: Vec<f64> = v
        .iter()
        .zip(&p)
        .zip(w)
        .map(|((vi, pi), wi)| vi + lambda * (vi - pi) - wi)
        .collect();
    Ok(norm(&r))
}

/// `u^n` on the space-time grid with its central-difference gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    grid: GridSpec,
    horizon: f64,
    k: usize,
    penalty: f64,
    w_seed: u64,
    /// `(N+1) × nodes × k`.
    values: Vec<f64>,
    /// `(N+1) × nodes × k × d`.
    gradient: Vec<f64>,
}

impl SolutionField {
    /// A field given by its node values; the gradient is recomputed with
    /// the solver's stencil.
    pub fn from_values(grid: GridSpec, horizon: f64, k: usize, penalty: f64, values: Vec<f64>) -> Result<Self> {
        let nodes = grid.node_count();
        let expected = (grid.steps() + 1) * nodes * k;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "field values",
                expected,
                got: values.len(),
            });
        }
        let d = grid.dim();
        let mut gradient = vec![0.0; values.len() * d];
        for j in 0..=grid.steps() {
            grid.gradient(
                &values[j * nodes * k..(j + 1) * nodes * k],
                k,
                &mut gradient[j * nodes * k * d..(j + 1) * nodes * k * d],
            );
        }
        Ok(Self {
            grid,
            horizon,
            k,
            penalty,
            w_seed: 0,
            values,
            gradient,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    /// Seed of the `W` path the field was solved with.
    pub fn w_seed(&self) -> u64 {
        self.w_seed
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt(self.horizon)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// All nodes at time index `j`, `k` values each.
    pub fn at(&self, j: usize) -> &[f64] {
        let len = self.grid.node_count() * self.k;
        &self.values[j * len..(j + 1) * len]
    }

    pub fn gradient_at(&self, j: usize) -> &[f64] {
        let len = self.grid.node_count() * self.k * self.grid.dim();
        &self.gradient[j * len..(j + 1) * len]
    }

    pub fn value(&self, j: usize, node: usize) -> &[f64] {
        &self.at(j)[node * self.k..(node + 1) * self.k]
    }

    /// Multilinear interpolation of `u(t_j, ·)` at `x`; returns whether `x`
    /// was wrapped into the torus.
    pub fn interpolate(&self, j: usize, x: &[f64], out: &mut [f64]) -> bool {
        self.grid.interpolate(self.at(j), self.k, x, out)
    }

    /// Interpolated stored gradient (not re-differenced).
    pub fn interpolate_gradient(&self, j: usize, x: &[f64], out: &mut [f64]) -> bool {
        self.grid.interpolate(self.gradient_at(j), self.k * self.grid.dim(), x, out)
    }
}

/// `ν_n(dt, dx) = −n(u^n − π(u^n)) dt dx` on the grid. The density at node
/// `(j, x)` is the penalty applied by the step that produced `u_j`; the
/// terminal slice carries no penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionMeasure {
    grid: GridSpec,
    horizon: f64,
    k: usize,
    /// `(N+1) × nodes × k`.
    density: Vec<f64>,
}

impl ReflectionMeasure {
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn density_at(&self, j: usize) -> &[f64] {
        let len = self.grid.node_count() * self.k;
        &self.density[j * len..(j + 1) * len]
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Space-time cell weight `Δt Δx^d`.
    pub fn cell_weight(&self) -> f64 {
        self.grid.dt(self.horizon) * self.grid.cell_volume()
    }

    /// Total variation of each component, `Σ_{j<N} Σ_x |ν_i| Δt Δx^d`.
    pub fn total_variation(&self) -> Vec<f64> {
        let mut tv = vec![0.0; self.k];
        let len = self.grid.node_count() * self.k;
        for chunk in self.density[..self.grid.steps() * len].chunks(self.k) {
            for (t, v) in tv.iter_mut().zip(chunk) {
                *t += v.abs();
            }
        }
        let w = self.cell_weight();
        tv.iter_mut().for_each(|t| *t *= w);
        tv
    }

    /// `Σ_{j<N} Σ_x |ν| Δt Δx^d` with the Euclidean norm of the vector density.
    pub fn mass(&self) -> f64 {
        let len = self.grid.node_count() * self.k;
        self.density[..self.grid.steps() * len]
            .chunks(self.k)
            .map(norm)
            .sum::<f64>()
            * self.cell_weight()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub field: SolutionField,
    pub measure: ReflectionMeasure,
    /// Largest relative back-substitution defect over the checked nodes.
    pub max_resolve_defect: f64,
}

struct Workspace {
    heat: HeatStep,
    w: Vec<f64>,
    g: Vec<f64>,
    div: Vec<f64>,
    f: Vec<f64>,
    h: Vec<f64>,
    x: Vec<f64>,
    p: Vec<f64>,
}

/// Solves the penalized system backward from `u(T) = Φ` with the noise
/// path `w_path` (dimension `l`, same step count as the grid) and penalty
/// level `n ≥ 0`.
pub fn solve(config: &ProblemConfig, w_path: &BrownianPath, n: f64) -> Result<Solution> {
    let grid = config.grid;
    if w_path.dim() != config.l || w_path.steps() != grid.steps() || w_path.horizon() != config.horizon {
        return Err(Error::GridMismatch(format!(
            "noise path has dim {}, {} steps, horizon {}; problem needs {}, {}, {}",
            w_path.dim(),
            w_path.steps(),
            w_path.horizon(),
            config.l,
            grid.steps(),
            config.horizon
        )));
    }
    if !(n >= 0.0 && n.is_finite()) {
        return Err(Error::arg("n", "penalty level must be finite and nonnegative"));
    }
    config.check_stability()?;
    let (d, k, l) = (config.d, config.k, config.l);
    let nodes = grid.node_count();
    let steps = grid.steps();
    let dt = config.dt();
    let slice = nodes * k;

    let mut values = vec![0.0; (steps + 1) * slice];
    let mut gradient = vec![0.0; (steps + 1) * slice * d];
    let mut density = vec![0.0; (steps + 1) * slice];
    values[steps * slice..].copy_from_slice(&config.terminal_on_grid());
    grid.gradient(&values[steps * slice..], k, &mut gradient[steps * slice * d..]);

    let mut ws = Workspace {
        heat: HeatStep::new(grid, dt),
        w: vec![0.0; slice],
        g: vec![0.0; slice * d],
        div: vec![0.0; slice],
        f: vec![0.0; k],
        h: vec![0.0; k * l],
        x: vec![0.0; d],
        p: vec![0.0; k],
    };
    let lambda = n * dt;
    let mut max_defect = 0.0f64;
    let cs = &config.coefficients;
    for j in (0..steps).rev() {
        let t = grid.time(config.horizon, j + 1);
        let (head, tail) = values.split_at_mut((j + 1) * slice);
        let next = &tail[..slice];
        let current = &mut head[j * slice..];
        let grad_next = &gradient[(j + 1) * slice * d..(j + 2) * slice * d];

        ws.heat.apply(next, k, &mut ws.w);
        for node in 0..nodes {
            grid.position(node, &mut ws.x);
            let y = &next[node * k..(node + 1) * k];
            let z = &grad_next[node * k * d..(node + 1) * k * d];
            cs.f.eval(t, &ws.x, y, z, &mut ws.f);
            cs.g.eval(t, &ws.x, y, z, &mut ws.g[node * k * d..(node + 1) * k * d]);
            cs.h.eval(t, &ws.x, y, z, &mut ws.h);
            let w = &mut ws.w[node * k..(node + 1) * k];
            for i in 0..k {
                let mut noise = 0.0;
                for c in 0..l {
                    noise += ws.h[i * l + c] * w_path.increment(j, c);
                }
                w[i] += dt * ws.f[i] + noise;
            }
        }
        grid.divergence(&ws.g, k, &mut ws.div);
        for (w, dv) in ws.w.iter_mut().zip(&ws.div) {
            *w += dt * dv;
        }

        let dens = &mut density[j * slice..(j + 1) * slice];
        for node in 0..nodes {
            let w = &ws.w[node * k..(node + 1) * k];
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: j, node });
            }
            let v = &mut current[node * k..(node + 1) * k];
            resolve_into(w, lambda, &config.domain, &mut ws.p, v)?;
            // π(v) = π(w), so the density needs no second projection.
            for i in 0..k {
                dens[node * k + i] = -n * (v[i] - ws.p[i]);
            }
            if node % RESOLVE_CHECK_STRIDE == 0 {
                let defect = resolve_defect(v, w, lambda, &config.domain)? / (1.0 + norm(w));
                if defect > RESOLVE_TOLERANCE {
                    return Err(Error::ResolveDefect { step: j, node, defect });
                }
                max_defect = max_defect.max(defect);
            }
        }
        grid.gradient(&values[j * slice..(j + 1) * slice], k, &mut gradient[j * slice * d..(j + 1) * slice * d]);
    }
    Ok(Solution {
        field: SolutionField {
            grid,
            horizon: config.horizon,
            k,
            penalty: n,
            w_seed: w_path.seed(),
            values,
            gradient,
        },
        measure: ReflectionMeasure {
            grid,
            horizon: config.horizon,
            k,
            density,
        },
        max_resolve_defect: max_defect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    /// Share of the measure mass on cells farther than `δ` from `∂D`.
    pub fraction: f64,
    /// True when the measure carries no mass (the fraction is then 0).
    pub zero_mass: bool,
}

/// Share of `|ν_n|` carried by cells where `u^n` is farther than `delta`
/// from `∂D` (inside: distance to the boundary; outside: `d(u, D)`).
pub fn boundary_localization(
    field: &SolutionField,
    measure: &ReflectionMeasure,
    domain: &ConvexDomain,
    delta: f64,
) -> Result<Localization> {
    if !(delta > 0.0) {
        return Err(Error::arg("delta", "must be positive"));
    }
    let k = field.k();
    let mut total = 0.0;
    let mut far = 0.0;
    for j in 0..field.steps() {
        let (u, nu) = (field.at(j), measure.density_at(j));
        for (value, dens) in u.chunks(k).zip(nu.chunks(k)) {
            let m = norm(dens);
            if m == 0.0 {
                continue;
            }
            total += m;
            if domain.boundary_distance(value)? > delta {
                far += m;
            }
        }
    }
    Ok(if total == 0.0 {
        Localization {
            fraction: 0.0,
            zero_mass: true,
        }
    } else {
        Localization {
            fraction: far / total,
            zero_mass: false,
        }
    })
}

/// Largest `d(u^n(t, x), D)` over the grid.
pub fn max_distance(field: &SolutionField, domain: &ConvexDomain) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut p = vec![0.0; field.k()];
    for value in field.values().chunks(field.k()) {
        domain.project_into(value, &mut p)?;
        worst = worst.max(dist(value, &p));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientSet, ConstantTerminal, OutwardDrift, Profile};
    use alloc::sync::Arc;
    use approx::assert_abs_diff_eq;

    #[test]
    fn resolve_examples() {
        let ball = ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(implicit_penalty_resolve(&[3.0, 0.0], 1.0, &ball).unwrap(), vec![2.0, 0.0]);
        assert_eq!(implicit_penalty_resolve(&[0.3, 0.4], 5.0, &ball).unwrap(), vec![0.3, 0.4]);
        let v = implicit_penalty_resolve(&[3.0, 0.0], 1e8, &ball).unwrap();
        assert_abs_diff_eq!(v[0], 1.0 + 2.0 / (1.0 + 1e8), epsilon = 1e-15);
        assert!(implicit_penalty_resolve(&[3.0, 0.0], -1.0, &ball).is_err());
    }

    fn config(drift: f64, terminal: Vec<f64>) -> ProblemConfig {
        let mut cs = CoefficientSet::zero(1, 1, 1);
        if drift != 0.0 {
            cs.f = Arc::new(OutwardDrift::new(vec![1.0], drift, Profile::Uniform).unwrap());
        }
        ProblemConfig {
            d: 1,
            k: 1,
            l: 1,
            horizon: 1.0,
            terminal: Arc::new(ConstantTerminal::new(1, terminal)),
            domain: ConvexDomain::half_space(vec![1.0], 0.5).unwrap(),
            coefficients: cs,
            grid: GridSpec::new(1, 2.0, 8, 4).unwrap(),
        }
    }

    #[test]
    fn constant_terminal_is_a_fixed_point() {
        let cfg = config(0.0, vec![0.2]);
        let w = BrownianPath::sample(1.0, 4, 1, 3).unwrap();
        let sol = solve(&cfg, &w, 50.0).unwrap();
        assert!(sol.field.values().iter().all(|v| *v == 0.2));
        assert!(sol.measure.density().iter().all(|v| *v == 0.0));
        assert_eq!(sol.measure.total_variation(), vec![0.0]);
    }

    /// Single node by hand: `w = 0.4 + Δt·F`, then the half-line resolve.
    #[test]
    fn one_step_with_upward_forcing() {
        let cfg = config(2.0, vec![0.4]);
        let w = BrownianPath::zero(1.0, 4, 1).unwrap();
        let n = 10.0;
        let sol = solve(&cfg, &w, n).unwrap();
        let dt = 0.25;
        let w3 = 0.4 + dt * 2.0;
        let expected = 0.5 + (w3 - 0.5) / (1.0 + n * dt);
        assert_abs_diff_eq!(sol.field.value(3, 0)[0], expected, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.measure.density_at(3)[0], -n * (expected - 0.5), epsilon = 1e-14);
        assert!(sol.measure.total_variation()[0] > 0.0);
    }

    #[test]
    fn mismatched_noise_is_rejected() {
        let cfg = config(0.0, vec![0.2]);
        let w = BrownianPath::sample(1.0, 8, 1, 3).unwrap();
        assert!(matches!(solve(&cfg, &w, 1.0), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn localization_degenerate_cases() {
        let cfg = config(0.0, vec![0.2]);
        let w = BrownianPath::zero(1.0, 4, 1).unwrap();
        let sol = solve(&cfg, &w, 1.0).unwrap();
        let loc = boundary_localization(&sol.field, &sol.measure, &cfg.domain, 0.1).unwrap();
        assert!(loc.zero_mass);
        assert_eq!(loc.fraction, 0.0);
        let forced = config(4.0, vec![0.4]);
        let sol = solve(&forced, &w, 4.0).unwrap();
        let loc = boundary_localization(&sol.field, &sol.measure, &forced.domain, 100.0).unwrap();
        assert!(!loc.zero_mass);
        assert_eq!(loc.fraction, 0.0);
    }
}
