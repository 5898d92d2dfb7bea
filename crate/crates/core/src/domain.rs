//! Convex constraint sets `D ⊂ ℝ^k` with `0 ∈ int D`.
//!
//! Balls, boxes and half-spaces are projected in closed form. Polytopes
//! (finite intersections of half-spaces) use Dykstra's alternating
//! projections, polished by an exact solve on the detected active faces
//! whenever the KKT conditions certify it.

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::linalg::{dist, dot, norm, solve_in_place};
use crate::{Error, Result};

/// Stopping tolerance of the Dykstra iteration (change between sweeps).
pub const DYKSTRA_TOLERANCE: f64 = 1e-10;
/// Iteration cap of the Dykstra iteration.
pub const DYKSTRA_MAX_ITERATIONS: usize = 1000;
/// Absolute tolerance on the projection inequalities.
pub const PROPERTY_TOLERANCE: f64 = 1e-10;

/// `{x : normal · x ≤ offset}` with a unit normal.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    normal: Vec<f64>,
    offset: f64,
}

impl HalfSpace {
    /// Normalizes `normal` (and scales `offset` accordingly). The origin has
    /// to be strictly inside, i.e. the scaled offset must be positive.
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let len = norm(&normal);
        if normal.is_empty() || !len.is_finite() || len == 0.0 {
            return Err(Error::InvalidDomain("half-space normal must be nonzero".into()));
        }
        if !offset.is_finite() || offset <= 0.0 {
            return Err(Error::OriginNotInterior);
        }
        Ok(Self {
            normal: normal.iter().map(|v| v / len).collect(),
            offset: offset / len,
        })
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    #[inline]
    fn excess(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }

    fn project_into(&self, x: &[f64], out: &mut [f64]) {
        let s = self.excess(x);
        if s <= 0.0 {
            out.copy_from_slice(x);
        } else {
            for ((o, xi), ni) in out.iter_mut().zip(x).zip(&self.normal) {
                *o = xi - s * ni;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    HalfSpace(HalfSpace),
    Polytope(Vec<HalfSpace>),
}

/// The value-space constraint set. Construction enforces `0 ∈ int D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexDomain {
    dim: usize,
    shape: Shape,
}

impl ConvexDomain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidDomain("ball center must be nonempty".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidDomain(format!("ball radius must be positive, got {radius}")));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidDomain("ball center must be finite".into()));
        }
        if norm(&center) >= radius {
            return Err(Error::OriginNotInterior);
        }
        Ok(Self {
            dim: center.len(),
            shape: Shape::Ball { center, radius },
        })
    }

    pub fn axis_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidDomain("box bounds must be nonempty and of equal length".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidDomain(format!("box needs lo < hi, got [{l}, {h}]")));
            }
            if !(*l < 0.0 && 0.0 < *h) {
                return Err(Error::OriginNotInterior);
            }
        }
        Ok(Self {
            dim: lo.len(),
            shape: Shape::Box { lo, hi },
        })
    }

    pub fn half_space(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let hs = HalfSpace::new(normal, offset)?;
        Ok(Self {
            dim: hs.normal.len(),
            shape: Shape::HalfSpace(hs),
        })
    }

    pub fn polytope(faces: Vec<HalfSpace>) -> Result<Self> {
        let dim = faces
            .first()
            .map(|f| f.normal.len())
            .ok_or_else(|| Error::InvalidDomain("polytope needs at least one face".into()))?;
        if faces.iter().any(|f| f.normal.len() != dim) {
            return Err(Error::InvalidDomain("polytope faces differ in dimension".into()));
        }
        Ok(Self {
            dim,
            shape: Shape::Polytope(faces),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "domain point",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Membership in the closure, up to an absolute slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match &self.shape {
            Shape::Ball { center, radius } => dist(x, center) <= radius + tol,
            Shape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
            Shape::HalfSpace(hs) => hs.excess(x) <= tol,
            Shape::Polytope(faces) => faces.iter().all(|f| f.excess(x) <= tol),
        }
    }

    /// Orthogonal projection onto the closure of `D`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.project_into(x, &mut out)?;
        Ok(out)
    }

    /// Same as [`project`](Self::project), writing into `out`. Points of the
    /// closure are returned bit-for-bit.
    pub fn project_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        match &self.shape {
            Shape::Ball { center, radius } => {
                let r = dist(x, center);
                if r <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let scale = radius / r;
                    for ((o, xi), ci) in out.iter_mut().zip(x).zip(center) {
                        *o = ci + (xi - ci) * scale;
                    }
                }
            }
            Shape::Box { lo, hi } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = x[i].max(lo[i]).min(hi[i]);
                }
            }
            Shape::HalfSpace(hs) => hs.project_into(x, out),
            Shape::Polytope(faces) => {
                if faces.iter().all(|f| f.excess(x) <= 0.0) {
                    out.copy_from_slice(x);
                } else {
                    dykstra(faces, x, out)?;
                }
            }
        }
        Ok(())
    }

    /// `d(x, D) = |x − π(x)|`.
    pub fn distance(&self, x: &[f64]) -> Result<f64> {
        let p = self.project(x)?;
        Ok(dist(x, &p))
    }

    /// Distance from `x` to `∂D`: the distance to the boundary from inside,
    /// `d(x, D)` from outside.
    pub fn boundary_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if !self.contains(x, 0.0) {
            return self.distance(x);
        }
        Ok(match &self.shape {
            Shape::Ball { center, radius } => radius - dist(x, center),
            Shape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (v - l).min(h - v))
                .fold(f64::INFINITY, f64::min),
            Shape::HalfSpace(hs) => -hs.excess(x),
            Shape::Polytope(faces) => faces.iter().map(|f| -f.excess(x)).fold(f64::INFINITY, f64::min),
        })
    }

    /// Radius of the largest ball about the origin contained in `D`. It is a
    /// valid coercivity constant `γ` in `xᵀ(x − π(x)) ≥ γ|x − π(x)|`.
    pub fn inradius(&self) -> Result<f64> {
        let r = match &self.shape {
            Shape::Ball { center, radius } => radius - norm(center),
            Shape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| (-l).min(*h))
                .fold(f64::INFINITY, f64::min),
            Shape::HalfSpace(hs) => hs.offset,
            Shape::Polytope(faces) => faces.iter().map(|f| f.offset).fold(f64::INFINITY, f64::min),
        };
        if r > 0.0 {
            Ok(r)
        } else {
            Err(Error::OriginNotInterior)
        }
    }

    /// A length scale of the domain around the origin, used to size random
    /// samples. Unbounded shapes report their largest face offset.
    pub fn extent(&self) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => norm(center) + radius,
            Shape::Box { lo, hi } => lo.iter().chain(hi).fold(0.0, |m, v| m.max(v.abs())),
            Shape::HalfSpace(hs) => hs.offset,
            Shape::Polytope(faces) => faces.iter().fold(0.0, |m, f| m.max(f.offset)),
        }
    }

    /// Draws a point of the closure. Balls and boxes are sampled uniformly;
    /// unbounded shapes are sampled uniformly within a cube of half-width
    /// `2·extent` around the origin.
    pub fn sample_closure<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let mut dir: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
                let len = norm(&dir).max(f64::MIN_POSITIVE);
                let r = radius * rng.random::<f64>().powf(1.0 / self.dim as f64);
                for (d, c) in dir.iter_mut().zip(center) {
                    *d = c + *d / len * r;
                }
                dir
            }
            Shape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l + (h - l) * rng.random::<f64>())
                .collect(),
            Shape::HalfSpace(_) | Shape::Polytope(_) => {
                let half = 2.0 * self.extent();
                for _ in 0..1000 {
                    let x: Vec<f64> = (0..self.dim)
                        .map(|_| half * (2.0 * rng.random::<f64>() - 1.0))
                        .collect();
                    if self.contains(&x, 0.0) {
                        return x;
                    }
                }
                vec![0.0; self.dim]
            }
        }
    }
}

fn dykstra(faces: &[HalfSpace], x: &[f64], out: &mut [f64]) -> Result<()> {
    let k = x.len();
    let mut y = x.to_vec();
    let mut corrections = vec![0.0; faces.len() * k];
    let mut z = vec![0.0; k];
    let mut next = vec![0.0; k];
    let mut change = f64::INFINITY;
    for iteration in 1..=DYKSTRA_MAX_ITERATIONS {
        let previous = y.clone();
        for (face, p) in faces.iter().zip(corrections.chunks_mut(k)) {
            for i in 0..k {
                z[i] = y[i] + p[i];
            }
            face.project_into(&z, &mut next);
            for i in 0..k {
                p[i] = z[i] - next[i];
            }
            y.copy_from_slice(&next);
        }
        change = dist(&y, &previous);
        if iteration % 5 == 0 || change < DYKSTRA_TOLERANCE {
            if let Some(p) = polish_active_set(faces, x, &y) {
                out.copy_from_slice(&p);
                return Ok(());
            }
        }
        if change < DYKSTRA_TOLERANCE {
            out.copy_from_slice(&y);
            return Ok(());
        }
    }
    Err(Error::ProjectionNotConverged {
        iterations: DYKSTRA_MAX_ITERATIONS,
        change,
    })
}

/// Exact projection onto the faces active at the Dykstra iterate `y`,
/// accepted only if it is feasible and all multipliers are nonnegative.
fn polish_active_set(faces: &[HalfSpace], x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
    let active: Vec<&HalfSpace> = faces.iter().filter(|f| f.excess(y) >= -1e-7).collect();
    let m = active.len();
    if m == 0 || m > x.len() {
        return None;
    }
    let mut gram = vec![0.0; m * m];
    let mut rhs = vec![0.0; m];
    for (i, fi) in active.iter().enumerate() {
        rhs[i] = fi.excess(x);
        for (j, fj) in active.iter().enumerate() {
            gram[i * m + j] = dot(&fi.normal, &fj.normal);
        }
    }
    solve_in_place(&mut gram, &mut rhs, m)?;
    if rhs.iter().any(|&l| l < -1e-12) {
        return None;
    }
    let mut p = x.to_vec();
    for (lambda, f) in rhs.iter().zip(&active) {
        for (pi, ni) in p.iter_mut().zip(&f.normal) {
            *pi -= lambda * ni;
        }
    }
    let feasible = faces
        .iter()
        .all(|f| f.excess(&p) <= 1e-13 * (1.0 + f.offset.abs()));
    feasible.then_some(p)
}

/// Largest observed violation of each projection property.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub samples: usize,
    pub gamma: f64,
    /// `(x' − x)ᵀ(x − π(x)) ≤ 0` for `x' ∈ D̄`.
    pub obtuse_angle: f64,
    /// `(x' − x)ᵀ(x − π(x)) ≤ (x' − π(x'))ᵀ(x − π(x))`.
    pub monotonicity: f64,
    /// `xᵀ(x − π(x)) ≥ γ|x − π(x)|`.
    pub coercivity: f64,
    /// `|π(x) − π(y)| ≤ |x − y|`.
    pub nonexpansive: f64,
    /// `|π(π(x)) − π(x)|`.
    pub idempotence: f64,
    /// `|d(x) − |x − π(x)||` plus any `d = 0` / `π(x) ≠ x` disagreement.
    pub distance_consistency: f64,
}

impl ProjectionReport {
    pub fn max_violation(&self) -> f64 {
        [
            self.obtuse_angle,
            self.monotonicity,
            self.coercivity,
            self.nonexpansive,
            self.idempotence,
            self.distance_consistency,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_violation() <= PROPERTY_TOLERANCE
    }
}

/// Checks the structural projection inequalities on `samples` random
/// configurations, with `γ = inradius(D)`. Half of the in-domain points
/// are drawn on the boundary (as projections of random points).
pub fn verify_projection_properties(domain: &ConvexDomain, samples: usize, seed: u64) -> Result<ProjectionReport> {
    if samples == 0 {
        return Err(Error::arg("samples", "must be at least 1"));
    }
    let gamma = domain.inradius()?;
    let k = domain.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scale = 3.0 * domain.extent();
    let random_point = |rng: &mut ChaCha20Rng| -> Vec<f64> {
        (0..k).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
    };
    let mut report = ProjectionReport {
        samples,
        gamma,
        obtuse_angle: 0.0,
        monotonicity: 0.0,
        coercivity: 0.0,
        nonexpansive: 0.0,
        idempotence: 0.0,
        distance_consistency: 0.0,
    };
    for i in 0..samples {
        let x = random_point(&mut rng);
        let inside = if i % 2 == 0 {
            domain.sample_closure(&mut rng)
        } else {
            domain.project(&random_point(&mut rng))?
        };
        let other = random_point(&mut rng);

        let px = domain.project(&x)?;
        let r: Vec<f64> = x.iter().zip(&px).map(|(a, b)| a - b).collect();
        let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u - v).collect() };

        let obtuse = dot(&diff(&inside, &x), &r);
        report.obtuse_angle = report.obtuse_angle.max(obtuse);

        let p_other = domain.project(&other)?;
        let lhs = dot(&diff(&other, &x), &r);
        let rhs = dot(&diff(&other, &p_other), &r);
        report.monotonicity = report.monotonicity.max(lhs - rhs);

        let coercive = gamma * norm(&r) - dot(&x, &r);
        report.coercivity = report.coercivity.max(coercive);

        report.nonexpansive = report.nonexpansive.max(dist(&px, &p_other) - dist(&x, &other));

        let ppx = domain.project(&px)?;
        report.idempotence = report.idempotence.max(dist(&ppx, &px));

        let d = domain.distance(&x)?;
        let mut mismatch = (d - norm(&r)).abs();
        if (d == 0.0) != (px == x) {
            mismatch = f64::INFINITY;
        }
        let d_inside = domain.distance(&inside)?;
        if d_inside != 0.0 && domain.project(&inside)? == inside {
            mismatch = f64::INFINITY;
        }
        report.distance_consistency = report.distance_consistency.max(mismatch);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_ball() -> ConvexDomain {
        ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn ball_projection_is_radial() {
        assert_eq!(unit_ball().project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(unit_ball().distance(&[3.0, 0.0]).unwrap(), 2.0);
        assert_eq!(unit_ball().distance(&[0.3, -0.2]).unwrap(), 0.0);
    }

    #[test]
    fn box_projection_clamps() {
        let d = ConvexDomain::axis_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(d.project(&[-2.0, 0.5]).unwrap(), vec![-1.0, 0.5]);
        assert_abs_diff_eq!(d.distance(&[2.0, 2.0]).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn inradius_examples() {
        assert_eq!(unit_ball().inradius().unwrap(), 1.0);
        let b = ConvexDomain::axis_box(vec![-1.0, -3.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(b.inradius().unwrap(), 1.0);
        let h = ConvexDomain::half_space(vec![0.0, 1.0], 0.7).unwrap();
        assert_eq!(h.inradius().unwrap(), 0.7);
    }

    #[test]
    fn invalid_domains_are_rejected() {
        assert!(ConvexDomain::ball(vec![0.0], 0.0).is_err());
        assert_eq!(ConvexDomain::ball(vec![2.0], 1.0), Err(Error::OriginNotInterior));
        assert_eq!(
            ConvexDomain::axis_box(vec![0.5], vec![1.0]),
            Err(Error::OriginNotInterior)
        );
        assert!(ConvexDomain::axis_box(vec![1.0], vec![-1.0]).is_err());
        assert_eq!(ConvexDomain::half_space(vec![1.0], -0.1), Err(Error::OriginNotInterior));
        assert!(ConvexDomain::polytope(vec![]).is_err());
    }

    #[test]
    fn half_space_normal_is_normalized() {
        let h = ConvexDomain::half_space(vec![0.0, 2.0], 1.0).unwrap();
        assert_eq!(h.inradius().unwrap(), 0.5);
        assert_eq!(h.project(&[3.0, 2.0]).unwrap(), vec![3.0, 0.5]);
    }

    #[test]
    fn polytope_corner_projection() {
        let faces = vec![
            HalfSpace::new(vec![1.0, 0.0], 1.0).unwrap(),
            HalfSpace::new(vec![0.0, 1.0], 1.0).unwrap(),
        ];
        let d = ConvexDomain::polytope(faces).unwrap();
        let p = d.project(&[3.0, 3.0]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-12);
        let inside = [0.2, -5.0];
        assert_eq!(d.project(&inside).unwrap(), inside.to_vec());
    }

    #[test]
    fn boundary_distance_inside_and_outside() {
        let d = unit_ball();
        assert_abs_diff_eq!(d.boundary_distance(&[0.25, 0.0]).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(d.boundary_distance(&[0.0, 1.5]).unwrap(), 0.5, epsilon = 1e-15);
        let b = ConvexDomain::axis_box(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(b.boundary_distance(&[0.5, 0.0]).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn point_equal_pair_gives_zero_sides() {
        let d = unit_ball();
        let x = [0.1, 0.2];
        let px = d.project(&x).unwrap();
        assert_eq!(px, x.to_vec());
        let r: Vec<f64> = x.iter().zip(&px).map(|(a, b)| a - b).collect();
        assert_eq!(dot(&r, &r), 0.0);
    }

    #[test]
    fn face_point_against_interior_point() {
        let d = ConvexDomain::axis_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let on_face = [1.0, 0.3];
        let interior = [0.2, -0.4];
        let r: Vec<f64> = on_face
            .iter()
            .zip(d.project(&on_face).unwrap())
            .map(|(a, b)| a - b)
            .collect();
        let lhs: f64 = interior.iter().zip(&on_face).zip(&r).map(|((a, b), c)| (a - b) * c).sum();
        assert!(lhs <= 0.0);
    }

    #[test]
    fn ball_properties_hold_on_many_samples() {
        let report = verify_projection_properties(&unit_ball(), 20_000, 11).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn polytope_properties_hold() {
        let faces = vec![
            HalfSpace::new(vec![1.0, 0.2], 1.0).unwrap(),
            HalfSpace::new(vec![-0.3, 1.0], 0.8).unwrap(),
            HalfSpace::new(vec![-1.0, -1.0], 1.5).unwrap(),
        ];
        let d = ConvexDomain::polytope(faces).unwrap();
        let report = verify_projection_properties(&d, 5_000, 3).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(verify_projection_properties(&unit_ball(), 0, 1).is_err());
    }
}
