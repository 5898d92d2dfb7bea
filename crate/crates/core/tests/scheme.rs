use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use rspde_core::bdsde::{bdsde_residual, max_residual, reconstruct, skorokhod_pairing, test_processes};
use rspde_core::coefficients::{
    Affine, CoefficientSet, Constant, GaussianTerminal, OutwardDrift, ProblemConfig, Profile,
};
use rspde_core::domain::ConvexDomain;
use rspde_core::grid::GridSpec;
use rspde_core::lab::{b_seed, sample_starts, w_path};
use rspde_core::paths::{derive_seed, stream, BrownianPath};
use rspde_core::solver::solve;

const SIGMA: f64 = 0.6;

fn problem(nodes: usize, steps: usize, forcing: bool) -> ProblemConfig {
    let mut cs = CoefficientSet::zero(1, 2, 1);
    if forcing {
        let e = FRAC_1_SQRT_2;
        cs.f = Arc::new(OutwardDrift::new(vec![e, e], 2.0, Profile::Uniform).unwrap());
        cs.h = Arc::new(Constant::new(2, 1, vec![0.25 * e, 0.25 * e], Profile::Uniform).unwrap());
        cs.g = Arc::new(Affine::z_scaled(2, 1, 0.1, 10.0, Profile::Uniform).unwrap());
    }
    ProblemConfig {
        d: 1,
        k: 2,
        l: 1,
        horizon: 1.0,
        terminal: Arc::new(GaussianTerminal::new(vec![0.0], SIGMA, vec![0.5, 0.0], vec![0.0, 0.1]).unwrap()),
        domain: ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap(),
        coefficients: cs,
        grid: GridSpec::new(1, 4.0, nodes, steps).unwrap(),
    }
}

/// Periodic heat evolution of the Gaussian terminal by its Fourier series
/// on the torus of length 8, truncated where the modes are below 1e-18.
fn fourier_heat(x: f64, tau: f64) -> [f64; 2] {
    let period = 8.0;
    let mut sum = 0.0;
    for m in -60i32..=60 {
        let xi = 2.0 * PI * m as f64 / period;
        let coeff = (SIGMA * (2.0 * PI).sqrt() / period) * (-0.5 * xi * xi * (SIGMA * SIGMA + tau)).exp();
        sum += coeff * (xi * x).cos();
    }
    [0.5 * sum, 0.1]
}

fn heat_error(nodes: usize, steps: usize) -> f64 {
    let cfg = problem(nodes, steps, false);
    let w = w_path(&cfg, 1).unwrap();
    let sol = solve(&cfg, &w, 64.0).unwrap();
    assert_eq!(sol.measure.mass(), 0.0);
    let mut worst = 0.0f64;
    let mut x = [0.0];
    for j in 0..=steps {
        let tau = 1.0 - cfg.grid.time(1.0, j);
        let mut sum = 0.0;
        for node in 0..nodes {
            cfg.grid.position(node, &mut x);
            let exact = fourier_heat(x[0], tau);
            let u = sol.field.value(j, node);
            sum += (u[0] - exact[0]).powi(2) + (u[1] - exact[1]).powi(2);
        }
        worst = worst.max(sum * cfg.grid.cell_volume());
    }
    worst.sqrt()
}

#[test]
fn heat_scheme_converges_to_the_periodic_heat_kernel() {
    let errors: Vec<f64> = [(32, 16), (64, 64), (128, 256)].iter().map(|(m, n)| heat_error(*m, *n)).collect();
    for pair in errors.windows(2) {
        assert!(pair[0] / pair[1] >= 2.0, "{errors:?}");
    }
}

#[test]
fn closed_form_heat_evolution_agrees_with_the_fourier_series() {
    let t = GaussianTerminal::new(vec![0.0], SIGMA, vec![0.5, 0.0], vec![0.0, 0.1]).unwrap();
    use rspde_core::coefficients::TerminalFn;
    let mut out = [0.0; 2];
    for (x, tau) in [(0.0, 0.0), (1.3, 0.4), (-3.9, 1.0), (2.2, 2.5)] {
        assert!(t.heat_evolved(&[x], tau, 4.0, &mut out));
        let f = fourier_heat(x, tau);
        assert!((out[0] - f[0]).abs() < 1e-12 && (out[1] - f[1]).abs() < 1e-15, "{x} {tau}");
    }
}

#[test]
fn heat_bdsde_residual_shrinks_under_refinement() {
    let finest = 256;
    let paths = 40;
    let w_fine = BrownianPath::sample(1.0, finest, 1, derive_seed(1, stream::W, 0)).unwrap();
    let b_fine: Vec<BrownianPath> = (0..paths).map(|p| BrownianPath::sample(1.0, finest, 1, b_seed(1, 0, p)).unwrap()).collect();
    let starts = sample_starts(&GridSpec::new(1, 4.0, 32, 16).unwrap(), paths, 1);
    let mut means = Vec::new();
    for (m, n) in [(32, 16), (64, 64), (128, 256)] {
        let cfg = problem(m, n, false);
        let w = w_fine.coarsen(finest / n).unwrap();
        let sol = solve(&cfg, &w, 64.0).unwrap();
        let mut total = 0.0;
        for (b, x) in b_fine.iter().zip(&starts) {
            let b = b.coarsen(finest / n).unwrap();
            let triple = reconstruct(&sol.field, &cfg.domain, &b, 0, x).unwrap();
            total += max_residual(&bdsde_residual(&triple, &cfg, &w, &b, 2.0).unwrap());
        }
        means.push(total / paths as f64);
    }
    assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    assert!(means[0] / means[2] > 16f64.powf(0.3), "{means:?}");
}

#[test]
fn penalized_solution_satisfies_the_skorokhod_sign() {
    let cfg = problem(32, 128, true);
    let w = w_path(&cfg, 2).unwrap();
    let sol = solve(&cfg, &w, 32.0).unwrap();
    assert!(sol.measure.mass() > 0.0);
    let processes = test_processes(&cfg.domain, 12, 2);
    for (p, x) in sample_starts(&cfg.grid, 8, 2).iter().enumerate() {
        let b = BrownianPath::sample(1.0, 128, 1, b_seed(2, 0, p)).unwrap();
        let triple = reconstruct(&sol.field, &cfg.domain, &b, 0, x).unwrap();
        for v in &processes {
            let values = v.sample(&triple, &cfg.domain).unwrap();
            assert!(skorokhod_pairing(&triple, &values, &cfg.domain).unwrap() <= 1e-14);
        }
    }
}

#[test]
fn density_points_back_into_the_domain() {
    // ν = −n(u − π(u)): wherever it is nonzero, u sits outside D and the
    // density is antiparallel to the outward displacement.
    let cfg = problem(32, 128, true);
    let w = w_path(&cfg, 3).unwrap();
    let n = 16.0;
    let sol = solve(&cfg, &w, n).unwrap();
    for j in 0..=128 {
        for node in 0..32 {
            let u = sol.field.value(j, node);
            let nu = &sol.measure.density_at(j)[node * 2..node * 2 + 2];
            let p = cfg.domain.project(u).unwrap();
            for c in 0..2 {
                let expected = -n * (u[c] - p[c]);
                assert!((nu[c] - expected).abs() <= 1e-12 * (1.0 + expected.abs()), "j {j} node {node}");
            }
        }
    }
}
