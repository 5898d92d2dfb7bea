use proptest::prelude::*;
use rspde_core::domain::{ConvexDomain, HalfSpace};

fn hexagon_ish() -> ConvexDomain {
    let faces = [
        ([1.0, 0.0], 1.0),
        ([-1.0, 0.2], 0.8),
        ([0.3, 1.0], 0.9),
        ([0.0, -1.0], 1.1),
        ([-0.7, -0.7], 1.0),
    ];
    ConvexDomain::polytope(faces.iter().map(|(n, c)| HalfSpace::new(n.to_vec(), *c).unwrap()).collect()).unwrap()
}

/// Distance to the polygon by scanning a fine lattice of feasible points.
fn lattice_distance(domain: &ConvexDomain, x: &[f64], h: f64) -> f64 {
    let mut best = f64::INFINITY;
    let steps = (3.0 / h) as i64;
    for i in -steps..=steps {
        for j in -steps..=steps {
            let p = [i as f64 * h, j as f64 * h];
            if domain.contains(&p, 0.0) {
                best = best.min(((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt());
            }
        }
    }
    best
}

#[test]
fn polytope_projection_matches_lattice_search() {
    let domain = hexagon_ish();
    let h = 2e-3;
    for x in [[2.5, 0.3], [-2.0, -2.0], [0.4, 2.2], [1.5, -1.6], [-1.9, 0.7], [0.1, 0.1]] {
        let p = domain.project(&x).unwrap();
        assert!(domain.contains(&p, 1e-12), "{p:?} outside");
        let d = ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt();
        let oracle = lattice_distance(&domain, &x, h);
        // The lattice can only overshoot, by at most one cell diagonal.
        assert!(d <= oracle + 1e-12, "{x:?}: {d} > {oracle}");
        assert!(oracle - d <= h * 2f64.sqrt(), "{x:?}: {d} vs {oracle}");
    }
}

fn domains() -> Vec<ConvexDomain> {
    vec![
        ConvexDomain::ball(vec![0.1, -0.2], 1.3).unwrap(),
        ConvexDomain::axis_box(vec![-1.0, -0.5], vec![0.7, 1.2]).unwrap(),
        ConvexDomain::half_space(vec![0.6, 0.8], 0.4).unwrap(),
        hexagon_ish(),
    ]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn projection_is_a_nonexpansive_retraction(
        which in 0usize..4,
        x in prop::array::uniform2(-4.0f64..4.0),
        y in prop::array::uniform2(-4.0f64..4.0),
    ) {
        let domain = &domains()[which];
        let (px, py) = (domain.project(&x).unwrap(), domain.project(&y).unwrap());
        prop_assert!(domain.contains(&px, 1e-10));
        let again = domain.project(&px).unwrap();
        prop_assert!((again[0] - px[0]).abs() + (again[1] - px[1]).abs() <= 1e-10);
        let dxy = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let dp = ((px[0] - py[0]).powi(2) + (px[1] - py[1]).powi(2)).sqrt();
        prop_assert!(dp <= dxy + 1e-10);
        // Obtuse angle against any feasible point, here π(y).
        let r = [x[0] - px[0], x[1] - px[1]];
        let v = [py[0] - px[0], py[1] - px[1]];
        prop_assert!(dot(&v, &r) <= 1e-10);
        let d = domain.distance(&x).unwrap();
        prop_assert!((d - dot(&r, &r).sqrt()).abs() <= 1e-10);
    }

    #[test]
    fn coercivity_with_the_inradius(which in 0usize..4, x in prop::array::uniform2(-4.0f64..4.0)) {
        // The origin is interior, so x·(x − π(x)) ≥ γ|x − π(x)|.
        let domain = &domains()[which];
        let gamma = domain.inradius().unwrap();
        let p = domain.project(&x).unwrap();
        let r = [x[0] - p[0], x[1] - p[1]];
        prop_assert!(dot(&x, &r) >= gamma * dot(&r, &r).sqrt() - 1e-10);
    }
}
