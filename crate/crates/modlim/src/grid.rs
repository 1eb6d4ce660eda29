//! Periodic box discretization.
//!
//! A `GridSpec` describes one particle's box `[-L/2, L/2)^dim` sampled with
//! `n` points per axis (`n` a power of two). Multi-particle grids reuse the
//! same spec per particle; flat indexing is axis-0-fastest throughout.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ModlimError, Result};

pub type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Number of axes. Physical one-particle grids use 1..=3; larger values
    /// (up to 6) host pair densities and other multi-particle fields.
    pub dim: usize,
    /// Points per axis; power of two.
    pub n: usize,
    /// Box edge length.
    pub length: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=6).contains(&dim) {
            return Err(ModlimError::config(format!("dim must be 1..=6, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(ModlimError::config(format!(
                "points per axis must be a power of two >= 4, got {n}"
            )));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(ModlimError::config(format!("box length must be positive, got {length}")));
        }
        Ok(GridSpec { dim, n, length })
    }

    /// Mesh spacing.
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Points in one particle's grid.
    pub fn points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Quadrature weight h^dim for one particle.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Signed index in [-n/2, n/2) for axis position or frequency `i`.
    pub fn signed_index(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Coordinate of axis index `i`; the box is centered at the origin.
    pub fn coord(&self, i: usize) -> f64 {
        self.signed_index(i) as f64 * self.h()
    }

    /// Angular wavenumber of frequency index `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI / self.length * self.signed_index(i) as f64
    }

    /// Decompose a flat index into per-axis indices (axis 0 fastest).
    pub fn unravel(&self, mut flat: usize, idx: &mut [usize]) {
        for slot in idx.iter_mut() {
            *slot = flat % self.n;
            flat /= self.n;
        }
    }

    /// Position vector of a flat one-particle index.
    pub fn position(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.dim];
        self.unravel(flat, &mut idx);
        idx.iter().map(|&i| self.coord(i)).collect()
    }

    /// Squared minimum-image distance between the grid point `flat` and the origin.
    pub fn min_image_r2(&self, flat: usize) -> f64 {
        let mut idx = vec![0usize; self.dim];
        self.unravel(flat, &mut idx);
        idx.iter().map(|&i| self.coord(i).powi(2)).sum()
    }
}

/// Real scalar field sampled on a one-particle grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub data: Vec<f64>,
}

/// Complex field; used both for wavefunctions and spectral scratch.
#[derive(Clone, Debug)]
pub struct ComplexField {
    pub grid: GridSpec,
    pub data: Vec<C64>,
}

/// Real vector field with `grid.dim` components.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub grid: GridSpec,
    pub comps: Vec<Vec<f64>>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField { grid, data: vec![0.0; grid.points()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut idx = vec![0usize; grid.dim];
        let data = (0..grid.points())
            .map(|flat| {
                grid.unravel(flat, &mut idx);
                let x: Vec<f64> = idx.iter().map(|&i| grid.coord(i)).collect();
                f(&x)
            })
            .collect();
        ScalarField { grid, data }
    }

    /// Midpoint-rule integral h^d * sum f.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * kahan_sum(self.data.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        kahan_sum(self.data.iter().copied()) / self.data.len() as f64
    }

    /// L^p norm via midpoint quadrature, p >= 1.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let s = kahan_sum(self.data.iter().map(|v| v.abs().powf(p)));
        (self.grid.cell_volume() * s).powf(1.0 / p)
    }

    pub fn l2_norm(&self) -> f64 {
        let s = kahan_sum(self.data.iter().map(|v| v * v));
        (self.grid.cell_volume() * s).sqrt()
    }

    pub fn inner(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.grid.cell_volume()
            * kahan_sum(self.data.iter().zip(&other.data).map(|(a, b)| a * b))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField {
            grid: self.grid,
            data: self.data.iter().map(|&v| C64::new(v, 0.0)).collect(),
        }
    }
}

impl ComplexField {
    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField { grid, data: vec![C64::new(0.0, 0.0); grid.points()] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> C64) -> Self {
        let mut idx = vec![0usize; grid.dim];
        let data = (0..grid.points())
            .map(|flat| {
                grid.unravel(flat, &mut idx);
                let x: Vec<f64> = idx.iter().map(|&i| grid.coord(i)).collect();
                f(&x)
            })
            .collect();
        ComplexField { grid, data }
    }

    /// Real part as a scalar field.
    pub fn re(&self) -> ScalarField {
        ScalarField { grid: self.grid, data: self.data.iter().map(|z| z.re).collect() }
    }

    /// Pointwise |psi|^2.
    pub fn abs2(&self) -> ScalarField {
        ScalarField { grid: self.grid, data: self.data.iter().map(|z| z.norm_sqr()).collect() }
    }

    pub fn l2_norm(&self) -> f64 {
        let s = kahan_sum(self.data.iter().map(|z| z.norm_sqr()));
        (self.grid.cell_volume() * s).sqrt()
    }

    /// Hermitian inner product <self, other> = h^d sum conj(self) * other.
    pub fn inner(&self, other: &ComplexField) -> C64 {
        debug_assert_eq!(self.grid, other.grid);
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in self.data.iter().zip(&other.data) {
            acc += a.conj() * b;
        }
        acc * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, z| m.max(z.norm()))
    }

    pub fn scale(&mut self, c: f64) {
        for z in &mut self.data {
            *z *= c;
        }
    }

    /// Rescale so the L^2 norm is exactly 1.
    pub fn normalize(&mut self) {
        let n = self.l2_norm();
        assert!(n > 0.0, "cannot normalize the zero field");
        self.scale(1.0 / n);
    }
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        VectorField { grid, comps: vec![vec![0.0; grid.points()]; grid.dim] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut comps = vec![Vec::with_capacity(grid.points()); grid.dim];
        let mut idx = vec![0usize; grid.dim];
        for flat in 0..grid.points() {
            grid.unravel(flat, &mut idx);
            let x: Vec<f64> = idx.iter().map(|&i| grid.coord(i)).collect();
            let v = f(&x);
            debug_assert_eq!(v.len(), grid.dim);
            for (c, vi) in comps.iter_mut().zip(v) {
                c.push(vi);
            }
        }
        VectorField { grid, comps }
    }

    pub fn component(&self, a: usize) -> ScalarField {
        ScalarField { grid: self.grid, data: self.comps[a].clone() }
    }

    /// Pointwise Euclidean sup norm over the grid.
    pub fn max_norm(&self) -> f64 {
        let mut m = 0.0f64;
        for flat in 0..self.grid.points() {
            let s: f64 = self.comps.iter().map(|c| c[flat] * c[flat]).sum();
            m = m.max(s);
        }
        m.sqrt()
    }
}

/// Compensated summation; grids get large enough that naive sums lose digits.
pub fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_input() {
        assert!(GridSpec::new(0, 64, 1.0).is_err());
        assert!(GridSpec::new(7, 64, 1.0).is_err());
        assert!(GridSpec::new(1, 48, 1.0).is_err());
        assert!(GridSpec::new(1, 64, -1.0).is_err());
        assert!(GridSpec::new(3, 64, 2.0).is_ok());
        // Pair-density grids use up to two particles' worth of axes.
        assert!(GridSpec::new(6, 8, 2.0).is_ok());
    }

    #[test]
    fn coords_cover_centered_box() {
        let g = GridSpec::new(1, 8, 4.0).unwrap();
        let xs: Vec<f64> = (0..8).map(|i| g.coord(i)).collect();
        assert_eq!(xs[0], 0.0);
        assert_eq!(xs[3], 1.5);
        assert_eq!(xs[4], -2.0);
        assert_eq!(xs[7], -0.5);
    }

    #[test]
    fn constant_field_integral_is_volume() {
        let g = GridSpec::new(2, 16, 3.0).unwrap();
        let f = ScalarField::from_fn(g, |_| 1.0);
        assert!((f.integral() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn lp_norm_of_indicator_scales_with_cell() {
        // Single-cell spike: ||f||_p^p = h^d |f|^p.
        let g = GridSpec::new(1, 32, 2.0).unwrap();
        let mut f = ScalarField::zeros(g);
        f.data[3] = 5.0;
        let h = g.h();
        for p in [1.0, 2.0, 3.5] {
            let expect = (h * 5.0f64.powf(p)).powf(1.0 / p);
            assert!((f.lp_norm(p) - expect).abs() < 1e-13);
        }
    }
}
