//! The triple `(Y, Z, K)` along Brownian flow paths, read off a solved
//! field, and the checks built on it.
//!
//! Along `X_s = x + B_s − B_t`: `Y_s = u^n(s, X_s)`, `Z_s = ∇u^n(s, X_s)`
//! and `K_s = −n ∫_t^s (Y_r − π(Y_r)) dr`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::coefficients::{CoefficientSet, ProblemConfig};
use crate::domain::ConvexDomain;
use crate::linalg::{dist, dot, norm};
use crate::paths::{derive_seed, stream, BrownianPath};
use crate::solver::SolutionField;
use crate::stats::Estimate;
use crate::{Error, Result};

/// Tolerance for a test process to count as `D̄`-valued.
pub const ADMISSIBLE_TOLERANCE: f64 = 1e-9;

/// `(Y, Z, K)` on the nodes `start..=N` of the shared time grid. Arrays are
/// indexed from the start node.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTriple {
    pub start: usize,
    pub x: Vec<f64>,
    pub b_seed: u64,
    pub k: usize,
    pub d: usize,
    pub dt: f64,
    /// Flow positions `X_s`, `d` values per node.
    pub positions: Vec<f64>,
    pub y: Vec<f64>,
    /// `k × d` per node.
    pub z: Vec<f64>,
    /// `d(Y_s, D)` per node.
    pub distance: Vec<f64>,
    /// Density `−n(Y − π(Y))` per node.
    pub k_density: Vec<f64>,
    pub k_path: Vec<f64>,
    /// Whether any flow position had to be wrapped into the torus.
    pub wrapped: bool,
}

impl PathTriple {
    pub fn len(&self) -> usize {
        self.y.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y[i * self.k..(i + 1) * self.k]
    }

    pub fn z_at(&self, i: usize) -> &[f64] {
        &self.z[i * self.k * self.d..(i + 1) * self.k * self.d]
    }

    pub fn k_at(&self, i: usize) -> &[f64] {
        &self.k_path[i * self.k..(i + 1) * self.k]
    }

    pub fn density_at(&self, i: usize) -> &[f64] {
        &self.k_density[i * self.k..(i + 1) * self.k]
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    /// `Σ |K_{i+1} − K_i|` (Euclidean norm of the vector increments).
    pub fn k_variation(&self) -> f64 {
        let k = self.k;
        (0..self.len().saturating_sub(1))
            .map(|i| {
                let inc: Vec<f64> = (0..k).map(|c| self.k_path[(i + 1) * k + c] - self.k_path[i * k + c]).collect();
                norm(&inc)
            })
            .sum()
    }
}

fn check_path(field: &SolutionField, path: &BrownianPath, dim: usize, what: &str) -> Result<()> {
    if path.steps() != field.steps() || path.horizon() != field.horizon() || path.dim() != dim {
        return Err(Error::GridMismatch(alloc::format!(
            "{what} path has {} steps, horizon {}, dim {}; field needs {}, {}, {}",
            path.steps(),
            path.horizon(),
            path.dim(),
            field.steps(),
            field.horizon(),
            dim
        )));
    }
    Ok(())
}

/// Reads `(Y, Z, K)` off `field` along the flow of `b` started at node
/// `start` from `x`. `K` is the trapezoidal integral of its density.
pub fn reconstruct(
    field: &SolutionField,
    domain: &ConvexDomain,
    b: &BrownianPath,
    start: usize,
    x: &[f64],
) -> Result<PathTriple> {
    let (k, d) = (field.k(), field.dim());
    check_path(field, b, d, "B")?;
    if start > field.steps() {
        return Err(Error::arg("start", "beyond the last time node"));
    }
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            what: "start point",
            expected: d,
            got: x.len(),
        });
    }
    let len = field.steps() + 1 - start;
    let n = field.penalty();
    let dt = field.dt();
    let mut triple = PathTriple {
        start,
        x: x.to_vec(),
        b_seed: b.seed(),
        k,
        d,
        dt,
        positions: vec![0.0; len * d],
        y: vec![0.0; len * k],
        z: vec![0.0; len * k * d],
        distance: vec![0.0; len],
        k_density: vec![0.0; len * k],
        k_path: vec![0.0; len * k],
        wrapped: false,
    };
    let mut p = vec![0.0; k];
    for i in 0..len {
        let j = start + i;
        let pos = &mut triple.positions[i * d..(i + 1) * d];
        b.flow_nodes(x, start, j, pos);
        let y = &mut triple.y[i * k..(i + 1) * k];
        triple.wrapped |= field.interpolate(j, pos, y);
        field.interpolate_gradient(j, pos, &mut triple.z[i * k * d..(i + 1) * k * d]);
        domain.project_into(y, &mut p)?;
        triple.distance[i] = dist(y, &p);
        for c in 0..k {
            triple.k_density[i * k + c] = if p[c] == y[c] { 0.0 } else { -n * (y[c] - p[c]) };
        }
        if i > 0 {
            for c in 0..k {
                triple.k_path[i * k + c] = triple.k_path[(i - 1) * k + c]
                    + 0.5 * dt * (triple.k_density[(i - 1) * k + c] + triple.k_density[i * k + c]);
            }
        }
    }
    Ok(triple)
}

/// `R(s_j) = Y_j − [Φ(X_N) + Σ f Δr + Σ h ΔW + (K_N − K_j) − ½ ∫g∗dB − Σ Z ΔB]`
/// for every node `j` of the triple. `f` and `h` sit at right endpoints,
/// `Z` at left endpoints; `Φ` is evaluated exactly, not interpolated.
///
/// The `∗dB` term enters with a minus sign: with the calibrated convention
/// it tends to `−2∫ div g dr`, so `−½∫g∗dB` restores the `+∫ div g dr`
/// that Itô's formula produces for the scheme's `+div g` forcing.
pub fn bdsde_residual(
    triple: &PathTriple,
    config: &ProblemConfig,
    w: &BrownianPath,
    b: &BrownianPath,
    kappa: f64,
) -> Result<Vec<f64>> {
    let (k, d, l) = (triple.k, triple.d, config.l);
    if b.seed() != triple.b_seed || b.dim() != d || w.dim() != l || w.steps() != b.steps() {
        return Err(Error::GridMismatch("noise paths do not match the triple".into()));
    }
    let steps = b.steps();
    let start = triple.start;
    let len = triple.len();
    if start + len != steps + 1 || triple.dt != b.dt() {
        return Err(Error::GridMismatch("triple is not on the paths' time grid".into()));
    }
    let cs = &config.coefficients;
    let dt = b.dt();
    let mut f_vals = vec![0.0; len * k];
    let mut g_full = vec![0.0; (steps + 1) * k * d];
    let mut h_full = vec![0.0; (steps + 1) * k * l];
    let mut z_full = vec![0.0; (steps + 1) * k * d];
    for i in 0..len {
        let j = start + i;
        let t = b.time(j);
        let (x, y, z) = (triple.position(i), triple.y_at(i), triple.z_at(i));
        cs.f.eval(t, x, y, z, &mut f_vals[i * k..(i + 1) * k]);
        cs.g.eval(t, x, y, z, &mut g_full[j * k * d..(j + 1) * k * d]);
        cs.h.eval(t, x, y, z, &mut h_full[j * k * l..(j + 1) * k * l]);
        z_full[j * k * d..(j + 1) * k * d].copy_from_slice(z);
    }
    let mut terminal = vec![0.0; k];
    config.terminal.eval(triple.position(len - 1), &mut terminal);

    // Tail sums accumulated from the end so every R(s_j) costs O(1).
    let mut residual = vec![0.0; len * k];
    let mut tail = terminal;
    let y_last = triple.y_at(len - 1);
    for c in 0..k {
        residual[(len - 1) * k + c] = y_last[c] - tail[c];
    }
    let k_end = triple.k_at(len - 1).to_vec();
    for i in (0..len - 1).rev() {
        let j = start + i;
        let star = b.star_integral(&g_full, k, j, j + 1, kappa)?;
        let noise = w.backward_ito(&h_full, k, j, j + 1)?;
        let zdb = b.forward_ito(&z_full, k, j, j + 1)?;
        for c in 0..k {
            tail[c] += f_vals[(i + 1) * k + c] * dt + noise[c] - 0.5 * star[c] - zdb[c];
            let reflection = k_end[c] - triple.k_at(i)[c];
            residual[i * k + c] = triple.y_at(i)[c] - (tail[c] + reflection);
        }
    }
    Ok(residual.chunks(k).map(norm).collect())
}

/// `max_s |R(s)|`.
pub fn max_residual(profile: &[f64]) -> f64 {
    profile.iter().fold(0.0, |m, r| m.max(*r))
}

/// `D̄`-valued processes to pair against `K`.
#[derive(Debug, Clone, PartialEq)]
pub enum TestProcess {
    Constant(Vec<f64>),
    /// `v_s = π(Y_s)`.
    ProjectionOfY,
    /// A Gaussian walk started at `start`, smoothed by a moving average over
    /// `window` nodes and projected into `D̄`.
    SmoothedWalk {
        start: Vec<f64>,
        scale: f64,
        window: usize,
        seed: u64,
    },
}

impl TestProcess {
    /// Values along the triple, `k` per node.
    pub fn sample(&self, triple: &PathTriple, domain: &ConvexDomain) -> Result<Vec<f64>> {
        let (k, len) = (triple.k, triple.len());
        match self {
            TestProcess::Constant(v) => {
                if v.len() != k {
                    return Err(Error::DimensionMismatch {
                        what: "test process value",
                        expected: k,
                        got: v.len(),
                    });
                }
                Ok(v.iter().copied().cycle().take(len * k).collect())
            }
            TestProcess::ProjectionOfY => {
                let mut out = vec![0.0; len * k];
                for i in 0..len {
                    domain.project_into(triple.y_at(i), &mut out[i * k..(i + 1) * k])?;
                }
                Ok(out)
            }
            TestProcess::SmoothedWalk {
                start,
                scale,
                window,
                seed,
            } => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                let mut walk = vec![0.0; len * k];
                walk[..k].copy_from_slice(start);
                let sd = scale * triple.dt.sqrt();
                for i in 1..len {
                    for c in 0..k {
                        let e: f64 = rng.sample(StandardNormal);
                        walk[i * k + c] = walk[(i - 1) * k + c] + sd * e;
                    }
                }
                let w = (*window).max(1);
                let mut out = vec![0.0; len * k];
                let mut avg = vec![0.0; k];
                for i in 0..len {
                    let lo = i.saturating_sub(w / 2);
                    let hi = (i + w / 2 + 1).min(len);
                    avg.iter_mut().for_each(|a| *a = 0.0);
                    for m in lo..hi {
                        for c in 0..k {
                            avg[c] += walk[m * k + c] / (hi - lo) as f64;
                        }
                    }
                    domain.project_into(&avg, &mut out[i * k..(i + 1) * k])?;
                }
                Ok(out)
            }
        }
    }
}

/// The three test-process families, `count` members in total, drawn
/// deterministically from `seed`.
pub fn test_processes(domain: &ConvexDomain, count: usize, seed: u64) -> Vec<TestProcess> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, stream::TEST_PROCESS, 0));
    (0..count)
        .map(|i| match i % 3 {
            0 => TestProcess::Constant(domain.sample_closure(&mut rng)),
            1 => TestProcess::ProjectionOfY,
            _ => TestProcess::SmoothedWalk {
                start: domain.sample_closure(&mut rng),
                scale: 1.0,
                window: 5,
                seed: derive_seed(seed, stream::TEST_PROCESS, i as u64 + 1),
            },
        })
        .collect()
}

/// Trapezoidal `∫ (Y_s − v_s)ᵀ dK_s`. Every summand is `≤ 0` in exact
/// arithmetic for `D̄`-valued `v`.
pub fn skorokhod_pairing(triple: &PathTriple, v: &[f64], domain: &ConvexDomain) -> Result<f64> {
    let k = triple.k;
    if v.len() != triple.y.len() {
        return Err(Error::DimensionMismatch {
            what: "test process values",
            expected: triple.y.len(),
            got: v.len(),
        });
    }
    for (i, value) in v.chunks(k).enumerate() {
        if !domain.contains(value, ADMISSIBLE_TOLERANCE) {
            return Err(Error::InadmissibleTestProcess(triple.start + i));
        }
    }
    let integrand: Vec<f64> = (0..triple.len())
        .map(|i| {
            let gap: Vec<f64> = triple.y_at(i).iter().zip(&v[i * k..(i + 1) * k]).map(|(y, v)| y - v).collect();
            dot(&gap, triple.density_at(i))
        })
        .collect();
    Ok(integrand.windows(2).map(|p| 0.5 * triple.dt * (p[0] + p[1])).sum())
}

/// Monte Carlo moments of the a priori bounds over a path ensemble. Means
/// are per path; multiply by the torus volume for `E^m` when starts were
/// drawn uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct AprioriStats {
    pub sup_y2: Estimate,
    pub z2_integral: Estimate,
    pub k_variation: Estimate,
    pub sup_y4: Estimate,
    pub z2_integral_squared: Estimate,
    /// `‖Φ‖² + ∫(‖f⁰‖² + ‖g⁰‖² + ‖h⁰‖²)` by grid quadrature.
    pub data: f64,
}

impl AprioriStats {
    /// Each statistic divided by the data functional (`None` if it is 0).
    pub fn ratios(&self) -> Option<[f64; 5]> {
        (self.data > 0.0).then(|| {
            [
                self.sup_y2.mean / self.data,
                self.z2_integral.mean / self.data,
                self.k_variation.mean / self.data,
                self.sup_y4.mean / (self.data * self.data),
                self.z2_integral_squared.mean / (self.data * self.data),
            ]
        })
    }
}

pub fn apriori_stats(triples: &[PathTriple], config: &ProblemConfig) -> Result<AprioriStats> {
    if triples.is_empty() {
        return Err(Error::arg("triples", "empty collection"));
    }
    let mut sup2 = Vec::with_capacity(triples.len());
    let mut z2 = Vec::with_capacity(triples.len());
    let mut kv = Vec::with_capacity(triples.len());
    for t in triples {
        let s = (0..t.len()).map(|i| dot(t.y_at(i), t.y_at(i))).fold(0.0, f64::max);
        let zs: Vec<f64> = (0..t.len()).map(|i| dot(t.z_at(i), t.z_at(i))).collect();
        let integral: f64 = zs.windows(2).map(|p| 0.5 * t.dt * (p[0] + p[1])).sum();
        sup2.push(s);
        z2.push(integral);
        kv.push(t.k_variation());
    }
    let sup4: Vec<f64> = sup2.iter().map(|s| s * s).collect();
    let z4: Vec<f64> = z2.iter().map(|s| s * s).collect();
    Ok(AprioriStats {
        sup_y2: Estimate::from_samples(&sup2),
        z2_integral: Estimate::from_samples(&z2),
        k_variation: Estimate::from_samples(&kv),
        sup_y4: Estimate::from_samples(&sup4),
        z2_integral_squared: Estimate::from_samples(&z4),
        data: data_functional(config),
    })
}

/// `‖Φ‖²_{L²} + ∫_0^T (‖f(·,0,0)‖² + ‖g(·,0,0)‖² + ‖h(·,0,0)‖²) dt` on the grid.
pub fn data_functional(config: &ProblemConfig) -> f64 {
    let grid = config.grid;
    let (d, k, l) = (config.d, config.k, config.l);
    let phi = config.terminal_on_grid();
    let mut total = grid.inner(&phi, &phi);
    let cs: &CoefficientSet = &config.coefficients;
    let (y0, z0) = (vec![0.0; k], vec![0.0; k * d]);
    let (mut f, mut g, mut h) = (vec![0.0; k], vec![0.0; k * d], vec![0.0; k * l]);
    let mut x = vec![0.0; d];
    let dt = config.dt();
    for j in 0..=grid.steps() {
        let t = grid.time(config.horizon, j);
        let weight = if j == 0 || j == grid.steps() { 0.5 * dt } else { dt };
        let mut slice = 0.0;
        for node in 0..grid.node_count() {
            grid.position(node, &mut x);
            cs.f.eval(t, &x, &y0, &z0, &mut f);
            cs.g.eval(t, &x, &y0, &z0, &mut g);
            cs.h.eval(t, &x, &y0, &z0, &mut h);
            slice += dot(&f, &f) + dot(&g, &g) + dot(&h, &h);
        }
        total += weight * slice * grid.cell_volume();
    }
    total
}
