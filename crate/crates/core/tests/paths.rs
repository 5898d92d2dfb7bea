use proptest::prelude::*;
use rspde_core::paths::{derive_seed, stream, BrownianPath, BumpField, LinearField, VectorField};
use rspde_core::paths::star_deviations;

#[test]
fn increments_have_brownian_moments() {
    // 400 paths x 64 steps of a 2-d path: 51200 increments per component.
    let (steps, dt) = (64, 1.0 / 64.0);
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    let mut cross = 0.0;
    let mut count = 0.0;
    for p in 0..400 {
        let path = BrownianPath::sample(1.0, steps, 2, derive_seed(7, stream::B, p)).unwrap();
        assert_eq!(path.value(0), [0.0, 0.0]);
        for j in 0..steps {
            let (a, b) = (path.increment(j, 0), path.increment(j, 1));
            sum[0] += a;
            sum[1] += b;
            sq[0] += a * a;
            sq[1] += b * b;
            cross += a * b;
            count += 1.0;
        }
    }
    // Standard errors: mean sqrt(dt/count), variance dt*sqrt(2/count).
    for c in 0..2 {
        let mean = sum[c] / count;
        let var = sq[c] / count;
        assert!(mean.abs() < 4.0 * (dt / count).sqrt(), "mean {mean}");
        assert!((var - dt).abs() < 4.0 * dt * (2.0 / count).sqrt(), "var {var}");
    }
    assert!((cross / count).abs() < 4.0 * dt / count.sqrt());
}

#[test]
fn backward_sum_of_the_path_itself_has_the_ito_correction() {
    // Σ W_{j+1} ΔW_j = ½ W_T² + ½ Σ ΔW_j², pathwise, for W_0 = 0.
    for p in 0..20 {
        let w = BrownianPath::sample(2.0, 50, 1, derive_seed(3, stream::W, p)).unwrap();
        let sum = w.backward_ito(w.values(), 1, 0, 50).unwrap()[0];
        let qv: f64 = (0..50).map(|j| w.increment(j, 0).powi(2)).sum();
        let end = w.value(50)[0];
        assert!((sum - (0.5 * end * end + 0.5 * qv)).abs() < 1e-12);
        let forward = w.forward_ito(w.values(), 1, 0, 50).unwrap()[0];
        assert!((forward - (0.5 * end * end - 0.5 * qv)).abs() < 1e-12);
    }
}

#[test]
fn backward_integral_of_future_measurable_integrand_has_mean_zero() {
    // η_{j+1} = W_T − W_{j+1} depends only on increments after step j.
    let (steps, paths) = (32, 4000);
    let mut values = Vec::with_capacity(paths);
    for p in 0..paths {
        let w = BrownianPath::sample(1.0, steps, 1, derive_seed(11, stream::W, p as u64)).unwrap();
        let end = w.value(steps)[0];
        let eta: Vec<f64> = (0..=steps).map(|j| end - w.value(j)[0]).collect();
        values.push(w.backward_ito(&eta, 1, 0, steps).unwrap()[0]);
    }
    let mean = values.iter().sum::<f64>() / paths as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (paths - 1) as f64;
    assert!(mean.abs() < 4.0 * (var / paths as f64).sqrt(), "mean {mean}, var {var}");
}

#[test]
fn star_integral_of_a_linear_field_tends_to_minus_twice_the_divergence() {
    // L(x) = A x: the identity reads −2 tr(A)·T and the quadrature error
    // is a sum of centred terms of size Δt.
    let field = LinearField::new(vec![0.5, 0.2, -0.1, 1.0], vec![0.1, 0.0]).unwrap();
    let target = -2.0 * field.divergence(&[0.0, 0.0]);
    let dev = star_deviations(&field, &[0.0, 0.0], 1.0, &[16, 256], 60, 5, 2.0).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&dev[1]) < 0.5 * mean(&dev[0]), "{} vs {}", mean(&dev[1]), mean(&dev[0]));
    assert!(mean(&dev[1]) < 0.1 * target.abs());
    let wrong = star_deviations(&field, &[0.0, 0.0], 1.0, &[16, 256], 60, 5, 1.0).unwrap();
    assert!(mean(&wrong[1]) > 0.3 * target.abs());
}

#[test]
fn bump_field_divergence_matches_differences() {
    let field = BumpField::new(vec![1.0, -0.5], vec![0.2, 0.1], 1.5).unwrap();
    let h = 1e-5;
    let x = [0.4, -0.3];
    let mut fd = 0.0;
    for a in 0..2 {
        let (mut p, mut m) = (x, x);
        p[a] += h;
        m[a] -= h;
        let (mut vp, mut vm) = ([0.0; 2], [0.0; 2]);
        field.value(&p, &mut vp);
        field.value(&m, &mut vm);
        fd += (vp[a] - vm[a]) / (2.0 * h);
    }
    assert!((field.divergence(&x) - fd).abs() < 1e-8);
}

proptest! {
    #[test]
    fn flow_and_inverse_flow_are_inverse(seed in any::<u64>(), s in 0usize..=16, x in prop::array::uniform2(-3.0f64..3.0)) {
        let b = BrownianPath::sample(1.0, 16, 2, seed).unwrap();
        let t = b.time(s / 2);
        let u = b.time(s);
        let y = b.flow(&x, t, u).unwrap();
        let back = b.inverse_flow(&y, t, u).unwrap();
        prop_assert!((back[0] - x[0]).abs() < 1e-12 && (back[1] - x[1]).abs() < 1e-12);
    }

    #[test]
    fn coarsening_keeps_every_kept_node(seed in any::<u64>(), factor in prop::sample::select(vec![1usize, 2, 4, 8])) {
        let fine = BrownianPath::sample(1.0, 32, 1, seed).unwrap();
        let coarse = fine.coarsen(factor).unwrap();
        prop_assert_eq!(coarse.steps(), 32 / factor);
        for j in 0..=coarse.steps() {
            prop_assert_eq!(coarse.value(j), fine.value(j * factor));
        }
    }
}
