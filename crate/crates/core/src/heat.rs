//! Implicit Euler step for `∂_t u = ½Δ_h u` on the periodic grid, where
//! `Δ_h` is the standard `2d+1`-point Laplacian. The step is diagonalized by
//! a dense orthonormal real Fourier basis per axis.

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::grid::GridSpec;

#[derive(Debug, Clone)]
pub(crate) struct HeatStep {
    grid: GridSpec,
    /// `basis[i * M + m]`: mode `m` evaluated at node `i`.
    basis: Vec<f64>,
    /// Spectral multiplier `1 / (1 + ½Δt Σ eigen)` per flat mode index.
    multiplier: Vec<f64>,
}

impl HeatStep {
    pub(crate) fn new(grid: GridSpec, dt: f64) -> Self {
        let m = grid.nodes();
        let dx = grid.dx();
        let mut basis = vec![0.0; m * m];
        let mut eigen = vec![0.0; m];
        let half = m / 2;
        let tau = 2.0 * core::f64::consts::PI / m as f64;
        let c0 = 1.0 / (m as f64).sqrt();
        let c1 = (2.0 / m as f64).sqrt();
        // Column layout: 0 | cos 1..half-1 | half | sin 1..half-1.
        for i in 0..m {
            basis[i * m] = c0;
            basis[i * m + half] = if i % 2 == 0 { c0 } else { -c0 };
            for f in 1..half {
                let angle = tau * (f * i % m) as f64;
                basis[i * m + f] = c1 * angle.cos();
                basis[i * m + half + f] = c1 * angle.sin();
            }
        }
        let freq = |col: usize| if col <= half { col } else { col - half };
        for (col, e) in eigen.iter_mut().enumerate() {
            let s = (core::f64::consts::PI * freq(col) as f64 / m as f64).sin();
            *e = 4.0 / (dx * dx) * s * s;
        }
        let count = grid.node_count();
        let multiplier = (0..count)
            .map(|flat| {
                let mut rest = flat;
                let mut sum = 0.0;
                for _ in 0..grid.dim() {
                    sum += eigen[rest % m];
                    rest /= m;
                }
                1.0 / (1.0 + 0.5 * dt * sum)
            })
            .collect();
        Self {
            grid,
            basis,
            multiplier,
        }
    }

    /// Applies `(I − ½Δt Δ_h)^{-1}` to a field with `width` values per node.
    pub(crate) fn apply(&self, field: &[f64], width: usize, out: &mut [f64]) {
        // Constants are fixed by the step; shifting by the first node's value
        // keeps them fixed bit-for-bit instead of up to transform rounding.
        let shift: Vec<f64> = field[..width].to_vec();
        for (o, v) in out.chunks_mut(width).zip(field.chunks(width)) {
            for c in 0..width {
                o[c] = v[c] - shift[c];
            }
        }
        let mut scratch = vec![0.0; field.len()];
        for axis in 0..self.grid.dim() {
            self.transform_axis(out, &mut scratch, width, axis, true);
            out.copy_from_slice(&scratch);
        }
        for (node, chunk) in out.chunks_mut(width).enumerate() {
            let s = self.multiplier[node];
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        for axis in 0..self.grid.dim() {
            self.transform_axis(out, &mut scratch, width, axis, false);
            out.copy_from_slice(&scratch);
        }
        for chunk in out.chunks_mut(width) {
            for c in 0..width {
                chunk[c] += shift[c];
            }
        }
    }

    /// Multiplies every line along `axis` by `Qᵀ` (forward) or `Q`.
    fn transform_axis(&self, input: &[f64], output: &mut [f64], width: usize, axis: usize, forward: bool) {
        let m = self.grid.nodes();
        let stride = m.pow(axis as u32);
        let count = self.grid.node_count();
        let mut line = vec![0.0; m * width];
        for start in 0..count {
            if !(start / stride).is_multiple_of(m) {
                continue;
            }
            for i in 0..m {
                let node = start + i * stride;
                line[i * width..(i + 1) * width].copy_from_slice(&input[node * width..(node + 1) * width]);
            }
            for row in 0..m {
                let node = start + row * stride;
                let target = &mut output[node * width..(node + 1) * width];
                target.iter_mut().for_each(|v| *v = 0.0);
                for col in 0..m {
                    let q = if forward {
                        self.basis[col * m + row]
                    } else {
                        self.basis[row * m + col]
                    };
                    for c in 0..width {
                        target[c] += q * line[col * width + c];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn basis_is_orthonormal() {
        let g = GridSpec::new(1, 1.0, 10, 2).unwrap();
        let h = HeatStep::new(g, 0.1);
        let m = 10;
        for a in 0..m {
            for b in 0..m {
                let s: f64 = (0..m).map(|i| h.basis[i * m + a] * h.basis[i * m + b]).sum();
                assert_abs_diff_eq!(s, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-13);
            }
        }
    }

    /// The step must agree with a direct solve of the implicit Euler system.
    #[test]
    fn matches_dense_implicit_solve_in_2d() {
        let g = GridSpec::new(2, 1.0, 8, 2).unwrap();
        let dt = 0.03;
        let h = HeatStep::new(g, dt);
        let n = g.node_count();
        let field: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64).sin()).collect();
        let mut out = vec![0.0; n];
        h.apply(&field, 1, &mut out);
        let r = 0.5 * dt / (g.dx() * g.dx());
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0 + 4.0 * r;
            for axis in 0..2 {
                for s in [-1, 1] {
                    a[i * n + g.neighbor(i, axis, s)] -= r;
                }
            }
        }
        let mut b = field.clone();
        crate::linalg::solve_in_place(&mut a, &mut b, n).unwrap();
        for (x, y) in out.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn constants_are_fixed_and_mass_is_conserved() {
        let g = GridSpec::new(1, 2.0, 16, 2).unwrap();
        let h = HeatStep::new(g, 0.5);
        assert_eq!(h.multiplier[0], 1.0);
        let field = vec![0.7; 32];
        let mut out = vec![0.0; 32];
        h.apply(&field, 2, &mut out);
        for v in &out {
            assert_eq!(*v, 0.7);
        }
        let bump: Vec<f64> = (0..16).map(|i| if i == 3 { 1.0 } else { 0.0 }).collect();
        let mut out = vec![0.0; 16];
        h.apply(&bump, 1, &mut out);
        assert_abs_diff_eq!(out.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        assert!(out.iter().all(|v| *v > -1e-15));
    }
}
