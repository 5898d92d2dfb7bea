//! Uniform periodic grid on the torus `[−L, L)^d`.
//!
//! Fields are stored node-major: node `i` holds `width` consecutive values.
//! Flat node indices put axis 0 fastest.

#[allow(unused_imports)] // inherent once std is linked
use num_traits::Float;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Largest spatial dimension accepted unless explicitly overridden.
pub const DEFAULT_MAX_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    half_width: f64,
    nodes: usize,
    steps: usize,
}

impl GridSpec {
    /// `nodes` per axis (even, at least 8), `steps` time steps (at least 2).
    /// Dimensions above [`DEFAULT_MAX_DIM`] are rejected; see
    /// [`with_any_dim`](Self::with_any_dim).
    pub fn new(dim: usize, half_width: f64, nodes: usize, steps: usize) -> Result<Self> {
        if dim > DEFAULT_MAX_DIM {
            return Err(Error::arg(
                "dim",
                format!("spatial dimension {dim} exceeds the default limit {DEFAULT_MAX_DIM}"),
            ));
        }
        Self::with_any_dim(dim, half_width, nodes, steps)
    }

    pub fn with_any_dim(dim: usize, half_width: f64, nodes: usize, steps: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("dim", "must be positive"));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::arg("half_width", "must be positive and finite"));
        }
        if nodes < 8 || !nodes.is_multiple_of(2) {
            return Err(Error::arg("nodes", format!("need an even count of at least 8, got {nodes}")));
        }
        if steps < 2 {
            return Err(Error::arg("steps", format!("need at least 2, got {steps}")));
        }
        Ok(Self {
            dim,
            half_width,
            nodes,
            steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Nodes per axis.
    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.nodes as f64
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / self.steps as f64
    }

    pub fn time(&self, horizon: f64, j: usize) -> f64 {
        if j == self.steps {
            horizon
        } else {
            j as f64 * self.dt(horizon)
        }
    }

    /// Total number of spatial nodes, `M^d`.
    pub fn node_count(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    /// Coordinates of node `flat`.
    pub fn position(&self, flat: usize, out: &mut [f64]) {
        let dx = self.dx();
        let mut rest = flat;
        for o in out.iter_mut().take(self.dim) {
            *o = -self.half_width + (rest % self.nodes) as f64 * dx;
            rest /= self.nodes;
        }
    }

    pub fn positions(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.node_count() * self.dim];
        for (i, chunk) in out.chunks_mut(self.dim).enumerate() {
            self.position(i, chunk);
        }
        out
    }

    /// Flat index of the neighbour of `flat` shifted by `shift` along `axis`.
    #[inline]
    pub fn neighbor(&self, flat: usize, axis: usize, shift: isize) -> usize {
        let stride = self.nodes.pow(axis as u32);
        let coord = (flat / stride) % self.nodes;
        let m = self.nodes as isize;
        let moved = ((coord as isize + shift) % m + m) % m;
        flat + (moved as usize) * stride - coord * stride
    }

    /// Wraps a coordinate into `[−L, L)`; reports whether wrapping happened.
    pub fn wrap(&self, x: f64) -> (f64, bool) {
        let period = 2.0 * self.half_width;
        if (-self.half_width..self.half_width).contains(&x) {
            return (x, false);
        }
        let shifted = (x + self.half_width) - period * ((x + self.half_width) / period).floor();
        let mut y = shifted - self.half_width;
        if y >= self.half_width {
            y -= period;
        }
        (y, true)
    }

    /// Shortest periodic representative of `x` (the minimal image).
    pub fn minimal_image(&self, x: f64) -> f64 {
        self.wrap(x).0
    }

    /// Multilinear periodic interpolation of a field with `width` values per
    /// node at the point `x`. Exact at nodes. Returns whether `x` had to be
    /// wrapped into the torus.
    pub fn interpolate(&self, field: &[f64], width: usize, x: &[f64], out: &mut [f64]) -> bool {
        debug_assert_eq!(field.len(), self.node_count() * width);
        let dx = self.dx();
        let mut wrapped = false;
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(self.dim <= 8, "interpolation supports at most 8 dimensions");
        for axis in 0..self.dim {
            let (y, w) = self.wrap(x[axis]);
            wrapped |= w;
            let s = (y + self.half_width) / dx;
            let snapped = s.round();
            let (mut i, mut t) = if (s - snapped).abs() < 1e-9 {
                (snapped, 0.0)
            } else {
                (s.floor(), s - s.floor())
            };
            if i as usize >= self.nodes {
                i = 0.0;
                t = 0.0;
            }
            base[axis] = i as usize;
            frac[axis] = t;
        }
        // Nested lerps, so constant fields and node positions are reproduced
        // exactly.
        let corners = 1usize << self.dim;
        let mut buf = vec![0.0; corners * width];
        for corner in 0..corners {
            let mut flat = 0;
            let mut stride = 1;
            for axis in 0..self.dim {
                let upper = corner >> axis & 1 == 1;
                let idx = if upper { (base[axis] + 1) % self.nodes } else { base[axis] };
                flat += idx * stride;
                stride *= self.nodes;
            }
            buf[corner * width..(corner + 1) * width].copy_from_slice(&field[flat * width..(flat + 1) * width]);
        }
        let mut live = corners;
        for axis in 0..self.dim {
            let t = frac[axis];
            live /= 2;
            for pair in 0..live {
                for c in 0..width {
                    let lo = buf[2 * pair * width + c];
                    let hi = buf[(2 * pair + 1) * width + c];
                    buf[pair * width + c] = if t == 0.0 { lo } else { lo + t * (hi - lo) };
                }
            }
        }
        out[..width].copy_from_slice(&buf[..width]);
        wrapped
    }

    /// Central-difference gradient of a `width`-valued field. The result has
    /// `width × d` values per node, component-major (`[c * d + axis]`).
    pub fn gradient(&self, field: &[f64], width: usize, out: &mut [f64]) {
        let d = self.dim;
        let inv = 1.0 / (2.0 * self.dx());
        for node in 0..self.node_count() {
            for axis in 0..d {
                let plus = self.neighbor(node, axis, 1);
                let minus = self.neighbor(node, axis, -1);
                for c in 0..width {
                    out[(node * width + c) * d + axis] =
                        (field[plus * width + c] - field[minus * width + c]) * inv;
                }
            }
        }
    }

    /// Central-difference divergence of a `rows × d` matrix field, row by row.
    pub fn divergence(&self, field: &[f64], rows: usize, out: &mut [f64]) {
        let d = self.dim;
        let inv = 1.0 / (2.0 * self.dx());
        for node in 0..self.node_count() {
            for r in 0..rows {
                let mut acc = 0.0;
                for axis in 0..d {
                    let plus = self.neighbor(node, axis, 1);
                    let minus = self.neighbor(node, axis, -1);
                    acc += field[(plus * rows + r) * d + axis] - field[(minus * rows + r) * d + axis];
                }
                out[node * rows + r] = acc * inv;
            }
        }
    }

    /// Quadrature `Σ_x a(x)·b(x)·Δx^d` over all nodes and components.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * self.cell_volume()
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}
