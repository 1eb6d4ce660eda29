//! Short-range interaction profile and its integrals.
//!
//! The default profile is the C-infinity bump
//! `V(r) = A exp(1 - 1/(1 - (r/R)^2))` on `r < R`, zero outside: smooth,
//! compactly supported, spherically symmetric, nonnegative. The rescaled
//! family is `V_N(x) = N^(d beta) V(N^beta |x|)` so that its integral stays
//! `b0 = int V` in dimension d.

use serde::{Deserialize, Serialize};

use crate::error::{ModlimError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum VProfile {
    Bump { amplitude: f64, radius: f64 },
    Zero,
}

impl VProfile {
    pub fn bump(amplitude: f64, radius: f64) -> Self {
        VProfile::Bump { amplitude, radius }
    }

    pub fn validate(&self) -> Result<()> {
        if let VProfile::Bump { amplitude, radius } = self {
            if !(*amplitude >= 0.0) || !amplitude.is_finite() {
                return Err(ModlimError::config(format!(
                    "profile amplitude must be >= 0, got {amplitude}"
                )));
            }
            if !(*radius > 0.0) || !radius.is_finite() {
                return Err(ModlimError::config(format!(
                    "profile radius must be > 0, got {radius}"
                )));
            }
        }
        Ok(())
    }

    /// Support radius; 0 for the zero profile.
    pub fn radius(&self) -> f64 {
        match self {
            VProfile::Bump { radius, .. } => *radius,
            VProfile::Zero => 0.0,
        }
    }

    /// Sup norm of the profile.
    pub fn sup(&self) -> f64 {
        match self {
            VProfile::Bump { amplitude, .. } => *amplitude,
            VProfile::Zero => 0.0,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match self {
            VProfile::Zero => 0.0,
            VProfile::Bump { amplitude, radius } => {
                let s = (r / radius) * (r / radius);
                if s >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - s)).exp()
                }
            }
        }
    }

    /// dV/dr.
    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            VProfile::Zero => 0.0,
            VProfile::Bump { radius, .. } => {
                let s = (r / radius) * (r / radius);
                if s >= 1.0 {
                    0.0
                } else {
                    // d/dr [1 - 1/(1-s)] = -2r / (R^2 (1-s)^2)
                    self.value(r) * (-2.0 * r / (radius * radius * (1.0 - s) * (1.0 - s)))
                }
            }
        }
    }

    /// b0 = int_{R^d} V(|x|) dx by radial quadrature.
    pub fn b0(&self, dim: usize) -> f64 {
        let surface = match dim {
            1 => 2.0,
            2 => 2.0 * std::f64::consts::PI,
            3 => 4.0 * std::f64::consts::PI,
            _ => panic!("dim must be 1..=3"),
        };
        surface * self.radial_moment(dim as f64 - 1.0)
    }

    /// int_0^R V(r) r^p dr.
    pub fn radial_moment(&self, p: f64) -> f64 {
        let r0 = self.radius();
        if r0 == 0.0 {
            return 0.0;
        }
        composite_gl(|r| self.value(r) * r.powf(p), 0.0, r0, 16, 32)
    }

    /// ||V||_{L^q(R^3)}.
    pub fn lq_norm_3d(&self, q: f64) -> f64 {
        let r0 = self.radius();
        if r0 == 0.0 {
            return 0.0;
        }
        let i = composite_gl(
            |r| self.value(r).powf(q) * 4.0 * std::f64::consts::PI * r * r,
            0.0,
            r0,
            16,
            32,
        );
        i.powf(1.0 / q)
    }

    /// ||<y> V||_{L^q(R^3)} with <y> = sqrt(1 + |y|^2).
    pub fn weighted_lq_norm_3d(&self, q: f64) -> f64 {
        let r0 = self.radius();
        if r0 == 0.0 {
            return 0.0;
        }
        let i = composite_gl(
            |r| {
                let w = (1.0 + r * r).sqrt();
                (w * self.value(r)).powf(q) * 4.0 * std::f64::consts::PI * r * r
            },
            0.0,
            r0,
            16,
            32,
        );
        i.powf(1.0 / q)
    }

    /// ||<x> V||_{L^1(R^3)}.
    pub fn weighted_l1_3d(&self) -> f64 {
        let r0 = self.radius();
        if r0 == 0.0 {
            return 0.0;
        }
        composite_gl(
            |r| (1.0 + r * r).sqrt() * self.value(r) * 4.0 * std::f64::consts::PI * r * r,
            0.0,
            r0,
            16,
            32,
        )
    }

    /// Continuum Fourier transform in 3D, Vhat(k) = 4 pi / k int V(r) r sin(kr) dr.
    /// Vhat(0) = b0(3). Oscillation is resolved by scaling the panel count.
    pub fn radial_ft_3d(&self, k: f64) -> f64 {
        let r0 = self.radius();
        if r0 == 0.0 {
            return 0.0;
        }
        if k.abs() < 1e-9 {
            return self.b0(3);
        }
        let panels = 16.max((k * r0 / 3.0).ceil() as usize);
        let integral = composite_gl(|r| self.value(r) * r * (k * r).sin(), 0.0, r0, panels, 16);
        4.0 * std::f64::consts::PI / k * integral
    }

    /// Continuum Fourier transform in 1D (cosine transform of the even profile).
    pub fn radial_ft_1d(&self, k: f64) -> f64 {
        let r0 = self.radius();
        if r0 == 0.0 {
            return 0.0;
        }
        let panels = 8.max((k.abs() * r0 / 3.0).ceil() as usize);
        2.0 * composite_gl(|r| self.value(r) * (k * r).cos(), 0.0, r0, panels, 16)
    }
}

/// Dense table of the 3D radial Fourier transform with cubic interpolation;
/// the appendix sweeps evaluate Vhat at ~1e7 arguments and direct quadrature
/// per call would dominate the runtime.
pub struct RadialFtTable {
    step: f64,
    values: Vec<f64>,
}

impl RadialFtTable {
    pub fn build(profile: &VProfile, k_max: f64) -> Self {
        let step = 0.01 / profile.radius().max(0.1);
        let len = (k_max / step).ceil() as usize + 4;
        let values = (0..len).map(|i| profile.radial_ft_3d(i as f64 * step)).collect();
        RadialFtTable { step, values }
    }

    /// 4-point Lagrange interpolation; error O(step^4).
    pub fn eval(&self, k: f64) -> f64 {
        let k = k.abs();
        let pos = k / self.step;
        let i = (pos.floor() as usize).clamp(1, self.values.len() - 3);
        let t = pos - i as f64;
        let (a, b, c, d) =
            (self.values[i - 1], self.values[i], self.values[i + 1], self.values[i + 2]);
        // Lagrange basis on nodes -1, 0, 1, 2.
        let l0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let l1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let l2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let l3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        a * l0 + b * l1 + c * l2 + d * l3
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x).
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss-Legendre quadrature of `f` over [a, b].
pub fn composite_gl(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let mut total = 0.0;
    let w = (b - a) / panels as f64;
    for p in 0..panels {
        let lo = a + p as f64 * w;
        let mid = lo + 0.5 * w;
        let half = 0.5 * w;
        let mut acc = 0.0;
        for (x, wt) in nodes.iter().zip(&weights) {
            acc += wt * f(mid + half * x);
        }
        total += acc * half;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // 8-point GL is exact through degree 15.
        let (nodes, weights) = gauss_legendre(8);
        let integral: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| w * (3.0 * x.powi(14) + x.powi(7) - 2.0 * x * x))
            .sum();
        let exact = 2.0 * (3.0 / 15.0 - 2.0 / 3.0);
        assert!((integral - exact).abs() < 1e-14);
    }

    #[test]
    fn composite_gl_matches_known_integral() {
        let i = composite_gl(|x| x.sin(), 0.0, std::f64::consts::PI, 8, 16);
        assert!((i - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bump_is_compact_and_bounded() {
        let v = VProfile::bump(2.0, 1.5);
        assert_eq!(v.value(1.5), 0.0);
        assert_eq!(v.value(2.0), 0.0);
        assert!((v.value(0.0) - 2.0).abs() < 1e-15);
        assert!(v.value(1.0) > 0.0);
        assert!(v.derivative(0.7) < 0.0);
        assert_eq!(v.derivative(1.6), 0.0);
    }

    #[test]
    fn b0_quadrature_is_stable_under_refinement() {
        let v = VProfile::bump(1.0, 1.0);
        let coarse = 4.0
            * std::f64::consts::PI
            * composite_gl(|r| v.value(r) * r * r, 0.0, 1.0, 8, 16);
        let fine = 4.0
            * std::f64::consts::PI
            * composite_gl(|r| v.value(r) * r * r, 0.0, 1.0, 64, 32);
        assert!((coarse - fine).abs() < 1e-12 * fine);
        assert!((v.b0(3) - fine).abs() < 1e-12 * fine);
    }

    #[test]
    fn radial_ft_at_zero_is_b0_and_decays() {
        let v = VProfile::bump(1.3, 0.8);
        assert!((v.radial_ft_3d(0.0) - v.b0(3)).abs() < 1e-13);
        // Smooth compactly supported profile: transform decays fast.
        assert!(v.radial_ft_3d(80.0).abs() < 1e-4 * v.b0(3));
        // Small-k expansion: Vhat(k) = b0 - k^2/6 int V r^2 * 4 pi r^2 dr + ...
        let second = composite_gl(
            |r| v.value(r) * r.powi(4) * 4.0 * std::f64::consts::PI,
            0.0,
            0.8,
            16,
            32,
        );
        let k = 0.05;
        let expect = v.b0(3) - k * k / 6.0 * second;
        assert!((v.radial_ft_3d(k) - expect).abs() < 1e-8);
    }

    #[test]
    fn ft_table_interpolates_to_high_accuracy() {
        let v = VProfile::bump(1.0, 1.0);
        let table = RadialFtTable::build(&v, 20.0);
        for &k in &[0.013, 0.77, 3.21, 11.9, 19.5] {
            let direct = v.radial_ft_3d(k);
            assert!(
                (table.eval(k) - direct).abs() < 1e-9 * v.b0(3),
                "k = {k}"
            );
        }
    }

    #[test]
    fn zero_profile_contributes_nothing() {
        let v = VProfile::Zero;
        assert_eq!(v.b0(3), 0.0);
        assert_eq!(v.value(0.1), 0.0);
        assert_eq!(v.radial_ft_3d(1.0), 0.0);
    }
}
