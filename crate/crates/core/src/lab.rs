//! Penalty sweeps and the diagnostics computed on them.
//!
//! Every `(n, seed)` cell solves with the same `W` path for that seed, so
//! differences between levels are pathwise. Path functionals are Monte
//! Carlo estimates over `B` paths with starting points stratified over the
//! torus and scaled by its volume, which estimates `E E^m`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::bdsde::{reconstruct, PathTriple};
use crate::coefficients::ProblemConfig;
use crate::domain::ConvexDomain;
use crate::grid::GridSpec;
use crate::linalg::norm;
use crate::paths::{derive_seed, stream, BrownianPath};
use crate::solver::{boundary_localization, max_distance, solve, ReflectionMeasure, Solution, SolutionField};
use crate::stats::{fit_rate, Estimate, RateFit};
use crate::weak_form::TestFunction;
use crate::{Error, Result};

/// The `W` path shared by every penalty level of a seed.
pub fn w_path(config: &ProblemConfig, seed: u64) -> Result<BrownianPath> {
    BrownianPath::sample(config.horizon, config.grid.steps(), config.l, derive_seed(seed, stream::W, 0))
}

/// Seed of the `p`-th `B` path of an ensemble.
pub fn b_seed(seed: u64, ensemble: u64, p: usize) -> u64 {
    derive_seed(derive_seed(seed, stream::B, ensemble), stream::B, p as u64)
}

/// `count` starting points, stratified along the first axis and uniform in
/// the others.
pub fn sample_starts(grid: &GridSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, stream::X, 0));
    let l = grid.half_width();
    let width = 2.0 * l / count.max(1) as f64;
    (0..count)
        .map(|p| {
            (0..grid.dim())
                .map(|axis| {
                    let u: f64 = rng.random();
                    if axis == 0 {
                        -l + width * (p as f64 + u)
                    } else {
                        -l + 2.0 * l * u
                    }
                })
                .collect()
        })
        .collect()
}

/// `E E^m` estimates of the path functionals of one field.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMoments {
    /// `∫_0^T d²(Y_s, D) ds`.
    pub dist2: Estimate,
    /// `sup_s d⁴(Y_s, D)`.
    pub dist4: Estimate,
    /// `‖K‖_{VT}`.
    pub k_variation: Estimate,
    /// `(n ∫_0^T d(Y_s, D) ds)²`.
    pub squared_tv: Estimate,
    /// Share of paths that wrapped around the torus.
    pub wrapped: f64,
}

fn trapezoid(values: impl Iterator<Item = f64>, dt: f64) -> f64 {
    let mut total = 0.0;
    let mut previous: Option<f64> = None;
    for v in values {
        if let Some(p) = previous {
            total += 0.5 * dt * (p + v);
        }
        previous = Some(v);
    }
    total
}

/// Triples from `t = 0` for the ensemble `(seed, ensemble)`.
pub fn ensemble_triples(
    field: &SolutionField,
    domain: &ConvexDomain,
    paths: usize,
    seed: u64,
    ensemble: u64,
) -> Result<Vec<PathTriple>> {
    let starts = sample_starts(field.grid(), paths, derive_seed(seed, stream::X, ensemble));
    starts
        .iter()
        .enumerate()
        .map(|(p, x)| {
            let b = BrownianPath::sample(field.horizon(), field.steps(), field.dim(), b_seed(seed, ensemble, p))?;
            reconstruct(field, domain, &b, 0, x)
        })
        .collect()
}

pub fn path_moments(field: &SolutionField, domain: &ConvexDomain, paths: usize, seed: u64) -> Result<PathMoments> {
    if paths == 0 {
        return Err(Error::arg("paths", "must be positive"));
    }
    let volume = field.grid().volume();
    let n = field.penalty();
    let (mut d2, mut d4, mut kv, mut sq) = (vec![], vec![], vec![], vec![]);
    let mut wrapped = 0;
    for triple in ensemble_triples(field, domain, paths, seed, 0)? {
        d2.push(trapezoid(triple.distance.iter().map(|d| d * d), triple.dt));
        d4.push(triple.distance.iter().fold(0.0f64, |m, d| m.max(d.powi(4))));
        kv.push(triple.k_variation());
        let tv = n * trapezoid(triple.distance.iter().copied(), triple.dt);
        sq.push(tv * tv);
        wrapped += triple.wrapped as usize;
    }
    Ok(PathMoments {
        dist2: Estimate::from_samples(&d2).scaled(volume),
        dist4: Estimate::from_samples(&d4).scaled(volume),
        k_variation: Estimate::from_samples(&kv).scaled(volume),
        squared_tv: Estimate::from_samples(&sq).scaled(volume),
        wrapped: wrapped as f64 / paths as f64,
    })
}

/// `E E^m ∫ d² ds` for `p = 2`, `E E^m sup d⁴` for `p = 4`.
pub fn distance_moment(field: &SolutionField, domain: &ConvexDomain, paths: usize, seed: u64, p: u32) -> Result<Estimate> {
    let m = path_moments(field, domain, paths, seed)?;
    match p {
        2 => Ok(m.dist2),
        4 => Ok(m.dist4),
        _ => Err(Error::arg("p", "exponent must be 2 or 4")),
    }
}

/// `sup_t ‖u_t − v_t‖² + ∫_0^T ‖∇u_t − ∇v_t‖² dt` by grid quadrature.
pub fn cauchy_metric(a: &SolutionField, b: &SolutionField) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    if a.k() != b.k() || a.horizon() != b.horizon() {
        return Err(Error::GridMismatch("fields differ in components or horizon".into()));
    }
    if a.w_seed() != b.w_seed() {
        return Err(Error::GridMismatch("fields were solved with different noise paths".into()));
    }
    let vol = a.grid().cell_volume();
    let steps = a.steps();
    let mut sup = 0.0f64;
    let mut grads = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let v: f64 = a.at(j).iter().zip(b.at(j)).map(|(x, y)| (x - y) * (x - y)).sum();
        sup = sup.max(v * vol);
        let g: f64 = a
            .gradient_at(j)
            .iter()
            .zip(b.gradient_at(j))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        grads.push(g * vol);
    }
    Ok(sup + trapezoid(grads.into_iter(), a.dt()))
}

/// Positive profiles for the duality check and the ensemble sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct DualitySettings {
    pub phi: TestFunction,
    pub psi: TestFunction,
    pub b_paths: usize,
    pub x_samples: usize,
}

impl DualitySettings {
    /// Unit-level windows of radius 2 around `0` and `0.5·e₁`.
    pub fn standard(d: usize, b_paths: usize, x_samples: usize) -> Self {
        let mut shifted = vec![0.0; d];
        shifted[0] = 0.5;
        Self {
            phi: TestFunction::new(vec![0.0; d], 2.0, 3, 1.0, vec![0.0; d], vec![1.0], vec![1.0]).expect("valid profile"),
            psi: TestFunction::new(shifted, 2.0, 3, 1.0, vec![0.0; d], vec![1.0], vec![1.0]).expect("valid profile"),
            b_paths,
            x_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualityResult {
    /// Per `B` path, the relative gap of each component.
    pub gaps: Vec<Vec<f64>>,
    /// Per-component mean gap over the paths.
    pub component_gap: Vec<Estimate>,
    /// Largest component mean gap.
    pub gap: Estimate,
    /// The measure carries no mass; both sides vanish.
    pub degenerate: bool,
}

const DUALITY_EPS: f64 = 1e-12;

/// Grid side `∫∫ φ(x − ΔB_s) ψ(x) ν^i(ds, dx)` against path side
/// `∫ dx ∫ φ(x) ψ(x + ΔB_s) dK^i_s`, the latter by Monte Carlo over `x`.
/// Both use trapezoidal time weights from `t = 0`.
pub fn duality_check(
    field: &SolutionField,
    measure: &ReflectionMeasure,
    domain: &ConvexDomain,
    settings: &DualitySettings,
    seed: u64,
    ensemble: u64,
) -> Result<DualityResult> {
    let grid = *field.grid();
    settings.phi.check_support(&grid)?;
    settings.psi.check_support(&grid)?;
    let (d, k, nodes, steps) = (grid.dim(), field.k(), grid.node_count(), field.steps());
    let dt = field.dt();
    let weight = |j: usize| if j == 0 || j == steps { 0.5 * dt } else { dt };
    if measure.mass() == 0.0 {
        return Ok(DualityResult {
            gaps: vec![vec![0.0; k]; settings.b_paths],
            component_gap: vec![Estimate::from_samples(&[0.0]); k],
            gap: Estimate::from_samples(&[0.0]),
            degenerate: true,
        });
    }
    let mut psi_grid = vec![0.0; nodes];
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    for (node, v) in psi_grid.iter_mut().enumerate() {
        grid.position(node, &mut x);
        *v = settings.psi.spatial(&x);
    }
    let periodic = |f: &TestFunction, x: &[f64], y: &mut [f64]| {
        for ((o, xi), c) in y.iter_mut().zip(x).zip(f.center()) {
            *o = c + grid.minimal_image(xi - c);
        }
    };
    let starts = sample_starts(&grid, settings.x_samples, derive_seed(seed, stream::X, 1 << 32 | ensemble));
    let mut gaps = Vec::with_capacity(settings.b_paths);
    for p in 0..settings.b_paths {
        let b = BrownianPath::sample(field.horizon(), steps, d, derive_seed(b_seed(seed, ensemble, p), stream::B, 1 << 32))?;
        let mut lhs = vec![0.0; k];
        for j in 0..=steps {
            let nu = measure.density_at(j);
            let shift = b.value(j);
            let origin = b.value(0);
            for node in 0..nodes {
                if psi_grid[node] == 0.0 || nu[node * k..(node + 1) * k].iter().all(|v| *v == 0.0) {
                    continue;
                }
                grid.position(node, &mut x);
                for c in 0..d {
                    x[c] -= shift[c] - origin[c];
                }
                periodic(&settings.phi, &x, &mut y);
                let w = weight(j) * settings.phi.spatial(&y) * psi_grid[node] * grid.cell_volume();
                for i in 0..k {
                    lhs[i] += w * nu[node * k + i];
                }
            }
        }
        let mut rhs = vec![0.0; k];
        for start in &starts {
            let phi_x = settings.phi.spatial(start);
            if phi_x == 0.0 {
                continue;
            }
            let triple = reconstruct(field, domain, &b, 0, start)?;
            for j in 0..=steps {
                let dens = triple.density_at(j);
                if dens.iter().all(|v| *v == 0.0) {
                    continue;
                }
                periodic(&settings.psi, triple.position(j), &mut y);
                let w = weight(j) * phi_x * settings.psi.spatial(&y);
                for i in 0..k {
                    rhs[i] += w * dens[i];
                }
            }
        }
        let scale = grid.volume() / settings.x_samples as f64;
        gaps.push(
            lhs.iter()
                .zip(&rhs)
                .map(|(l, r)| {
                    let r = r * scale;
                    (l - r).abs() / (l.abs() + r.abs() + DUALITY_EPS)
                })
                .collect::<Vec<f64>>(),
        );
    }
    let component_gap: Vec<Estimate> = (0..k)
        .map(|i| Estimate::from_samples(&gaps.iter().map(|g| g[i]).collect::<Vec<_>>()))
        .collect();
    let gap = component_gap
        .iter()
        .copied()
        .fold(None, |best: Option<Estimate>, e| match best {
            Some(b) if b.mean >= e.mean => Some(b),
            _ => Some(e),
        })
        .unwrap_or_else(|| Estimate::from_samples(&[0.0]));
    Ok(DualityResult {
        gaps,
        component_gap,
        gap,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    /// Penalty levels, strictly increasing.
    pub ns: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `B` paths per Monte Carlo estimate.
    pub paths: usize,
    pub kappa: f64,
    /// Localization threshold as a fraction of the inradius.
    pub delta_fraction: f64,
    /// Duality check per cell, if any.
    pub duality: Option<DualitySettings>,
}

impl SweepSettings {
    pub fn check(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns.windows(2).any(|w| w[0] >= w[1]) || self.ns[0] < 0.0 {
            return Err(Error::arg("ns", "penalty levels must be nonnegative and strictly increasing"));
        }
        if self.seeds.is_empty() || self.paths == 0 {
            return Err(Error::arg("seeds", "need at least one seed and one path"));
        }
        if !(self.delta_fraction > 0.0) {
            return Err(Error::arg("delta_fraction", "must be positive"));
        }
        Ok(())
    }
}

/// One `(n, seed)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: f64,
    pub seed: u64,
    pub grid: GridSpec,
    pub kappa: f64,
    pub dist2_integral: Estimate,
    pub dist4_sup: Estimate,
    /// `cauchy_metric(u^n, u^{2n})`.
    pub cauchy_gap: Option<f64>,
    pub tv_nu: f64,
    pub k_tv: Estimate,
    pub squared_tv: Estimate,
    pub duality_gap: Option<Estimate>,
    pub boundary_mass_fraction: f64,
    pub zero_mass: bool,
    pub max_distance: f64,
    pub wrapped_fraction: f64,
}

/// Fitted `log metric ~ log n` slopes; `None` when fewer than four levels
/// carry a positive value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepSlopes {
    pub dist2_integral: Option<RateFit>,
    pub dist4_sup: Option<RateFit>,
    pub cauchy_gap: Option<RateFit>,
    pub tv_nu: Option<RateFit>,
    pub squared_tv: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub slopes: SweepSlopes,
}

impl SweepReport {
    /// Rows of one seed, in increasing `n`.
    pub fn seed_rows(&self, seed: u64) -> Vec<&SweepRow> {
        let mut rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.seed == seed).collect();
        rows.sort_by(|a, b| a.n.total_cmp(&b.n));
        rows
    }

    /// Mean over seeds of a row quantity, per `n`.
    pub fn level_means(&self, metric: impl Fn(&SweepRow) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
        let mut ns: Vec<f64> = self.rows.iter().map(|r| r.n).collect();
        ns.sort_by(f64::total_cmp);
        ns.dedup();
        let mut out_n = Vec::new();
        let mut out_v = Vec::new();
        for n in ns {
            let values: Vec<f64> = self.rows.iter().filter(|r| r.n == n).filter_map(&metric).collect();
            if !values.is_empty() {
                out_n.push(n);
                out_v.push(values.iter().sum::<f64>() / values.len() as f64);
            }
        }
        (out_n, out_v)
    }
}

/// The metrics of one solved cell. `double` is the field at `2n` with the
/// same `W` path, when available.
pub fn sweep_row(
    config: &ProblemConfig,
    solution: &Solution,
    double: Option<&SolutionField>,
    seed: u64,
    settings: &SweepSettings,
) -> Result<SweepRow> {
    let field = &solution.field;
    let moments = path_moments(field, &config.domain, settings.paths, seed)?;
    let delta = settings.delta_fraction * config.domain.inradius()?;
    let localization = boundary_localization(field, &solution.measure, &config.domain, delta)?;
    let duality_gap = match &settings.duality {
        Some(ds) => Some(duality_check(field, &solution.measure, &config.domain, ds, seed, 0)?.gap),
        None => None,
    };
    Ok(SweepRow {
        n: field.penalty(),
        seed,
        grid: config.grid,
        kappa: settings.kappa,
        dist2_integral: moments.dist2,
        dist4_sup: moments.dist4,
        cauchy_gap: double.map(|d| cauchy_metric(field, d)).transpose()?,
        tv_nu: solution.measure.mass(),
        k_tv: moments.k_variation,
        squared_tv: moments.squared_tv,
        duality_gap,
        boundary_mass_fraction: localization.fraction,
        zero_mass: localization.zero_mass,
        max_distance: max_distance(field, &config.domain)?,
        wrapped_fraction: moments.wrapped,
    })
}

/// Fits the sweep slopes from per-level means over seeds.
pub fn fit_slopes(rows: &[SweepRow]) -> SweepSlopes {
    let report = SweepReport {
        rows: rows.to_vec(),
        slopes: SweepSlopes::default(),
    };
    let fit = |metric: &dyn Fn(&SweepRow) -> Option<f64>| {
        let (ns, values) = report.level_means(metric);
        fit_rate(&ns, &values).ok()
    };
    SweepSlopes {
        dist2_integral: fit(&|r| Some(r.dist2_integral.mean)),
        dist4_sup: fit(&|r| Some(r.dist4_sup.mean)),
        cauchy_gap: fit(&|r| r.cauchy_gap),
        tv_nu: fit(&|r| Some(r.tv_nu)),
        squared_tv: fit(&|r| Some(r.squared_tv.mean)),
    }
}

/// The penalty levels a seed must be solved at: the sweep plus every `2n`
/// needed for a Cauchy gap.
pub fn solve_levels(ns: &[f64]) -> Vec<f64> {
    let mut levels: Vec<f64> = ns.iter().flat_map(|n| [*n, 2.0 * n]).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
}

/// Sequential sweep; callers with a thread pool can run `solve` and
/// `sweep_row` per cell themselves.
pub fn penalty_sweep(config: &ProblemConfig, settings: &SweepSettings) -> Result<SweepReport> {
    settings.check()?;
    let mut rows = Vec::new();
    for &seed in &settings.seeds {
        let w = w_path(config, seed)?;
        let levels = solve_levels(&settings.ns);
        let solutions: Vec<Solution> = levels.iter().map(|n| solve(config, &w, *n)).collect::<Result<_>>()?;
        for &n in &settings.ns {
            let at = |m: f64| levels.iter().position(|l| *l == m).map(|i| &solutions[i]);
            let sol = at(n).expect("level solved");
            let double = at(2.0 * n).map(|s| &s.field);
            rows.push(sweep_row(config, sol, double, seed, settings)?);
        }
    }
    let slopes = fit_slopes(&rows);
    Ok(SweepReport { rows, slopes })
}

/// Largest ratio `max/min` of a positive sequence (`∞` if some entry is 0
/// while another is not, `1` if all vanish).
pub fn spread_ratio(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        1.0
    } else if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Norm of the vector density at each node of one time slice; a helper for
/// field exports.
pub fn density_norms(measure: &ReflectionMeasure, j: usize) -> Vec<f64> {
    measure.density_at(j).chunks(measure.k()).map(norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientSet, GaussianTerminal, OutwardDrift, Profile};
    use alloc::sync::Arc;

    fn config(drift: f64) -> ProblemConfig {
        let mut cs = CoefficientSet::zero(1, 2, 1);
        if drift != 0.0 {
            let e = core::f64::consts::FRAC_1_SQRT_2;
            cs.f = Arc::new(OutwardDrift::new(vec![e, e], drift, Profile::Uniform).unwrap());
        }
        ProblemConfig {
            d: 1,
            k: 2,
            l: 1,
            horizon: 1.0,
            terminal: Arc::new(GaussianTerminal::new(vec![0.0], 0.6, vec![0.5, 0.0], vec![0.0, 0.1]).unwrap()),
            domain: ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(),
            coefficients: cs,
            grid: GridSpec::new(1, 4.0, 32, 32).unwrap(),
        }
    }

    fn settings(ns: Vec<f64>) -> SweepSettings {
        SweepSettings {
            ns,
            seeds: vec![3],
            paths: 20,
            kappa: 2.0,
            delta_fraction: 0.05,
            duality: None,
        }
    }

    #[test]
    fn heat_sweep_is_trivial() {
        let report = penalty_sweep(&config(0.0), &settings(vec![4.0, 16.0])).unwrap();
        for row in &report.rows {
            assert_eq!(row.dist2_integral.mean, 0.0);
            assert_eq!(row.tv_nu, 0.0);
            assert_eq!(row.cauchy_gap, Some(0.0));
            assert!(row.zero_mass);
        }
        assert!(report.slopes.dist2_integral.is_none());
    }

    #[test]
    fn forcing_sweep_shrinks_the_distance() {
        let report = penalty_sweep(&config(3.0), &settings(vec![4.0, 16.0, 64.0])).unwrap();
        let d2: Vec<f64> = report.rows.iter().map(|r| r.dist2_integral.mean).collect();
        assert!(d2[0] > d2[1] && d2[1] > d2[2] && d2[2] > 0.0);
        assert!(report.rows.iter().all(|r| r.tv_nu > 0.0 && r.cauchy_gap.unwrap() > 0.0));
    }

    #[test]
    fn cauchy_metric_rejects_other_noise() {
        let cfg = config(1.0);
        let a = solve(&cfg, &w_path(&cfg, 1).unwrap(), 4.0).unwrap();
        let b = solve(&cfg, &w_path(&cfg, 2).unwrap(), 4.0).unwrap();
        assert_eq!(cauchy_metric(&a.field, &a.field).unwrap(), 0.0);
        assert!(cauchy_metric(&a.field, &b.field).is_err());
    }

    #[test]
    fn starts_are_stratified() {
        let grid = GridSpec::new(1, 2.0, 8, 2).unwrap();
        let xs = sample_starts(&grid, 10, 5);
        for (p, x) in xs.iter().enumerate() {
            assert!(x[0] >= -2.0 + 0.4 * p as f64 && x[0] < -2.0 + 0.4 * (p + 1) as f64);
        }
    }

    #[test]
    fn spread_ratio_cases() {
        assert_eq!(spread_ratio(&[0.0, 0.0]), 1.0);
        assert_eq!(spread_ratio(&[1.0, 3.0, 2.0]), 3.0);
        assert!(spread_ratio(&[0.0, 1.0]).is_infinite());
    }

    #[test]
    fn solve_levels_adds_doubles() {
        assert_eq!(solve_levels(&[4.0, 8.0, 16.0]), vec![4.0, 8.0, 16.0, 32.0]);
    }
}
