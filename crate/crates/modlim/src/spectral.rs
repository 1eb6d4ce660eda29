//! Multi-axis FFT engine and spectral calculus on periodic grids.
//!
//! All axes share one length `n` (power of two); a grid with `axes` axes holds
//! `n^axes` complex samples, axis 0 fastest. Each transform pass runs the FFT
//! along the contiguous axis and then rotates the axis order, so after `axes`
//! passes the layout is restored. Forward transforms are unnormalized DFTs
//! (physical Fourier coefficient = DFT value / total points); `inverse`
//! includes the 1/total factor.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::grid::{kahan_sum, GridSpec, ScalarField, VectorField};
use crate::grid::{ComplexField, C64};

pub struct SpectralEngine {
    pub n: usize,
    pub axes: usize,
    pub length: f64,
    total: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    rot: Vec<C64>,
    scratch: Vec<C64>,
    /// Signed frequency index per axis position.
    pub m_signed: Vec<i64>,
    /// Angular wavenumber per axis position.
    pub k_axis: Vec<f64>,
}

impl SpectralEngine {
    pub fn new(n: usize, axes: usize, length: f64) -> Self {
        assert!(n.is_power_of_two() && n >= 4, "axis length must be a power of two >= 4");
        assert!(axes >= 1 && axes <= 6, "1..=6 axes supported");
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let total = n.pow(axes as u32);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let m_signed: Vec<i64> =
            (0..n).map(|i| if i < n / 2 { i as i64 } else { i as i64 - n as i64 }).collect();
        let k_axis: Vec<f64> =
            m_signed.iter().map(|&m| 2.0 * std::f64::consts::PI / length * m as f64).collect();
        SpectralEngine {
            n,
            axes,
            length,
            total,
            fwd,
            inv,
            rot: vec![C64::new(0.0, 0.0); total],
            scratch: vec![C64::new(0.0, 0.0); scratch_len],
            m_signed,
            k_axis,
        }
    }

    pub fn for_grid(grid: &GridSpec) -> Self {
        SpectralEngine::new(grid.n, grid.dim, grid.length)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Move axis 1 to axis 0: out[rest + i0 * n^(axes-1)] = in[i0 + rest * n].
    fn rotate(&mut self, data: &mut [C64]) {
        if self.axes == 1 {
            return;
        }
        let n = self.n;
        let big = self.total / n;
        for i0 in 0..n {
            let base = i0 * big;
            for r in 0..big {
                self.rot[base + r] = data[i0 + r * n];
            }
        }
        data.copy_from_slice(&self.rot);
    }

    /// In-place unnormalized forward DFT over every axis.
    pub fn forward(&mut self, data: &mut [C64]) {
        assert_eq!(data.len(), self.total);
        for _ in 0..self.axes {
            let fwd = self.fwd.clone();
            fwd.process_with_scratch(data, &mut self.scratch);
            self.rotate(data);
        }
    }

    /// In-place inverse DFT over every axis, including the 1/total factor.
    pub fn inverse(&mut self, data: &mut [C64]) {
        assert_eq!(data.len(), self.total);
        for _ in 0..self.axes {
            let inv = self.inv.clone();
            inv.process_with_scratch(data, &mut self.scratch);
            self.rotate(data);
        }
        let scale = 1.0 / self.total as f64;
        for z in data.iter_mut() {
            *z *= scale;
        }
    }

    /// Apply a separable frequency multiplier, one factor per axis, in a
    /// single forward/multiply/inverse sweep per axis. `tables[a][m]` is the
    /// factor for frequency index m of (original) axis a. Exact for unitary
    /// per-axis phases; used for split-step kinetic factors.
    pub fn apply_separable(&mut self, data: &mut [C64], tables: &[&[C64]]) {
        assert_eq!(tables.len(), self.axes);
        assert_eq!(data.len(), self.total);
        let n = self.n;
        let scale = 1.0 / n as f64;
        for axis in 0..self.axes {
            let fwd = self.fwd.clone();
            fwd.process_with_scratch(data, &mut self.scratch);
            let tab = tables[axis];
            debug_assert_eq!(tab.len(), n);
            for line in data.chunks_exact_mut(n) {
                for (z, t) in line.iter_mut().zip(tab) {
                    *z *= t * scale;
                }
            }
            let inv = self.inv.clone();
            inv.process_with_scratch(data, &mut self.scratch);
            self.rotate(data);
        }
    }

    /// Visit every mode: f(flat, m) with m the signed index per axis.
    pub fn for_each_mode(&self, mut f: impl FnMut(usize, &[i64])) {
        let mut digits = vec![0usize; self.axes];
        let mut m = vec![0i64; self.axes];
        for flat in 0..self.total {
            for (d, slot) in digits.iter().zip(m.iter_mut()) {
                *slot = self.m_signed[*d];
            }
            f(flat, &m);
            for d in digits.iter_mut() {
                *d += 1;
                if *d < self.n {
                    break;
                }
                *d = 0;
            }
        }
    }

    /// Multiply spectral data by a radial function of |k|^2 (all axes).
    pub fn multiply_radial(&self, spec: &mut [C64], f: impl Fn(f64) -> f64) {
        let two_pi_over_l = 2.0 * std::f64::consts::PI / self.length;
        self.for_each_mode(|flat, m| {
            let k2: f64 = m
                .iter()
                .map(|&mi| {
                    let ki = two_pi_over_l * mi as f64;
                    ki * ki
                })
                .sum();
            spec[flat] *= f(k2);
        });
    }

    /// Differentiate along `axis` in spectral space (*= i k). The Nyquist
    /// mode has no well-defined sign and is zeroed, keeping real fields real.
    pub fn derivative(&self, spec: &mut [C64], axis: usize) {
        let n = self.n;
        let period = n.pow(axis as u32);
        let mut flat = 0usize;
        while flat < self.total {
            for mi in 0..n {
                let factor = if mi == n / 2 {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(0.0, self.k_axis[mi])
                };
                let base = flat + mi * period;
                for p in 0..period {
                    spec[base + p] *= factor;
                }
            }
            flat += period * n;
        }
    }

    /// 2/3-rule dealiasing: zero every mode with any |m| > n/3.
    pub fn dealias(&self, spec: &mut [C64]) {
        let cut = (self.n / 3) as i64;
        self.for_each_mode(|flat, m| {
            if m.iter().any(|&mi| mi.abs() > cut) {
                spec[flat] = C64::new(0.0, 0.0);
            }
        });
    }

    /// Parseval L^2 norm of an unnormalized spectrum.
    pub fn spectral_l2(&self, spec: &[C64]) -> f64 {
        let vol = self.length.powi(self.axes as i32);
        let s = kahan_sum(spec.iter().map(|z| z.norm_sqr()));
        (vol * s).sqrt() / self.total as f64
    }
}

/// One-particle field calculus: transforms plus the standard spectral
/// operators on real fields.
pub struct FieldOps {
    pub grid: GridSpec,
    pub engine: SpectralEngine,
}

impl FieldOps {
    pub fn new(grid: GridSpec) -> Self {
        FieldOps { grid, engine: SpectralEngine::for_grid(&grid) }
    }

    pub fn forward_real(&mut self, f: &ScalarField) -> Vec<C64> {
        let mut buf: Vec<C64> = f.data.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.engine.forward(&mut buf);
        buf
    }

    pub fn forward_complex(&mut self, f: &ComplexField) -> Vec<C64> {
        let mut buf = f.data.clone();
        self.engine.forward(&mut buf);
        buf
    }

    /// Inverse transform of data known to represent a real field.
    pub fn inverse_to_real(&mut self, mut spec: Vec<C64>) -> ScalarField {
        self.engine.inverse(&mut spec);
        ScalarField { grid: self.grid, data: spec.iter().map(|z| z.re).collect() }
    }

    pub fn inverse_to_complex(&mut self, mut spec: Vec<C64>) -> ComplexField {
        self.engine.inverse(&mut spec);
        ComplexField { grid: self.grid, data: spec }
    }

    /// Spectral gradient of a real field.
    pub fn gradient(&mut self, f: &ScalarField) -> VectorField {
        let spec = self.forward_real(f);
        let mut comps = Vec::with_capacity(self.grid.dim);
        for axis in 0..self.grid.dim {
            let mut d = spec.clone();
            self.engine.derivative(&mut d, axis);
            comps.push(self.inverse_to_real(d).data);
        }
        VectorField { grid: self.grid, comps }
    }

    /// Spectral divergence of a vector field.
    pub fn divergence(&mut self, v: &VectorField) -> ScalarField {
        let mut acc = vec![C64::new(0.0, 0.0); self.grid.points()];
        for axis in 0..self.grid.dim {
            let mut spec = self.forward_real(&v.component(axis));
            self.engine.derivative(&mut spec, axis);
            for (a, s) in acc.iter_mut().zip(&spec) {
                *a += s;
            }
        }
        self.inverse_to_real(acc)
    }

    pub fn laplacian(&mut self, f: &ScalarField) -> ScalarField {
        let mut spec = self.forward_real(f);
        self.engine.multiply_radial(&mut spec, |k2| -k2);
        self.inverse_to_real(spec)
    }

    /// Bessel-potential multiplier (1 + |k|^2)^(s/2); s = 0 is the identity.
    pub fn sobolev_apply(&mut self, f: &ScalarField, s: f64) -> ScalarField {
        let mut spec = self.forward_real(f);
        self.engine.multiply_radial(&mut spec, |k2| (1.0 + k2).powf(s / 2.0));
        self.inverse_to_real(spec)
    }

    pub fn sobolev_apply_complex(&mut self, f: &ComplexField, s: f64) -> ComplexField {
        let mut spec = self.forward_complex(f);
        self.engine.multiply_radial(&mut spec, |k2| (1.0 + k2).powf(s / 2.0));
        self.inverse_to_complex(spec)
    }

    /// Gradient components of a complex field.
    pub fn gradient_complex(&mut self, psi: &ComplexField) -> Vec<ComplexField> {
        let spec = self.forward_complex(psi);
        (0..self.grid.dim)
            .map(|axis| {
                let mut d = spec.clone();
                self.engine.derivative(&mut d, axis);
                self.inverse_to_complex(d)
            })
            .collect()
    }

    /// Remove every mode with any |m| > n/3 from a real field.
    pub fn dealias_real(&mut self, f: &ScalarField) -> ScalarField {
        let mut spec = self.forward_real(f);
        self.engine.dealias(&mut spec);
        self.inverse_to_real(spec)
    }
}
