//! Polynomial bump `b(x) = (1 − |x − c|²/R²)_+^p` with exact derivatives.

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Bump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub power: i32,
}

impl Bump {
    pub fn new(center: Vec<f64>, radius: f64, power: i32) -> Self {
        Self { center, radius, power }
    }

    fn q(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        1.0 - r2 / (self.radius * self.radius)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let q = self.q(x);
        if q <= 0.0 {
            0.0
        } else {
            q.powi(self.power)
        }
    }

    /// Writes `∇b(x)` into `out`.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let q = self.q(x);
        if q <= 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let s = -2.0 * self.power as f64 * q.powi(self.power - 1) / (self.radius * self.radius);
        for ((o, a), c) in out.iter_mut().zip(x).zip(&self.center) {
            *o = s * (a - c);
        }
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        let q = self.q(x);
        if q <= 0.0 {
            return 0.0;
        }
        let p = self.power as f64;
        let r2 = self.radius * self.radius;
        let xi2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        let d = x.len() as f64;
        p * (p - 1.0) * q.powi(self.power - 2) * 4.0 * xi2 / (r2 * r2) - 2.0 * d * p * q.powi(self.power - 1) / r2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use alloc::vec;

    #[test]
    fn derivatives_match_finite_differences() {
        let b = Bump::new(vec![0.1, -0.2], 1.3, 4);
        let x = [0.4, 0.3];
        let h = 1e-5;
        let mut g = [0.0; 2];
        b.gradient(&x, &mut g);
        let mut lap = 0.0;
        for axis in 0..2 {
            let mut p = x;
            let mut m = x;
            p[axis] += h;
            m[axis] -= h;
            let fd = (b.value(&p) - b.value(&m)) / (2.0 * h);
            assert_abs_diff_eq!(g[axis], fd, epsilon = 1e-8);
            lap += (b.value(&p) - 2.0 * b.value(&x) + b.value(&m)) / (h * h);
        }
        assert_abs_diff_eq!(b.laplacian(&x), lap, epsilon = 1e-4);
    }

    #[test]
    fn vanishes_outside_support() {
        let b = Bump::new(vec![0.0], 1.0, 3);
        assert_eq!(b.value(&[1.5]), 0.0);
        assert_eq!(b.laplacian(&[1.0]), 0.0);
        assert_eq!(b.value(&[0.0]), 1.0);
    }
}
