//! Physical parameter bundle shared by all solvers.

use serde::{Deserialize, Serialize};

use crate::error::{ModlimError, Result};
use crate::potential::VProfile;

/// Relative tolerance for the stored-vs-recomputed b0 consistency check.
pub const B0_CONSISTENCY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Working spatial dimension; 3 is the physical case, 1 and 2 are toys.
    pub dim: usize,
    /// Particle number N >= 2.
    pub n_particles: usize,
    /// Semiclassical parameter.
    pub hbar: f64,
    /// Interaction scaling exponent, 0 < beta < 1.
    pub beta: f64,
    /// Coulomb coupling, kappa >= 0.
    pub kappa: f64,
    /// Mollifier exponent, 0 < eta < 1/3.
    pub eta: f64,
    /// Coupling of the delta limit: b0 = int V in dimension `dim`.
    pub b0: f64,
    pub v_profile: VProfile,
}

impl PhysicalParams {
    pub fn new(
        dim: usize,
        n_particles: usize,
        hbar: f64,
        beta: f64,
        kappa: f64,
        eta: f64,
        v_profile: VProfile,
    ) -> Result<Self> {
        let b0 = if (1..=3).contains(&dim) { v_profile.b0(dim) } else { 0.0 };
        let p = PhysicalParams { dim, n_particles, hbar, beta, kappa, eta, b0, v_profile };
        p.validate()?;
        Ok(p)
    }

    /// Check every range constraint and report all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut faults = Vec::new();
        if !(1..=3).contains(&self.dim) {
            faults.push(format!("dim must be in 1..=3, got {}", self.dim));
        }
        if self.n_particles < 2 {
            faults.push(format!("n_particles must be >= 2, got {}", self.n_particles));
        }
        if !(self.hbar > 0.0) || !self.hbar.is_finite() {
            faults.push(format!("hbar must be > 0, got {}", self.hbar));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            faults.push(format!("beta must lie in the open interval (0, 1), got {}", self.beta));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            faults.push(format!("kappa must be >= 0, got {}", self.kappa));
        }
        if !(self.eta > 0.0 && self.eta < 1.0 / 3.0) {
            faults.push(format!(
                "eta must lie in the open interval (0, 1/3), got {}",
                self.eta
            ));
        }
        if let Err(e) = self.v_profile.validate() {
            faults.push(e.to_string());
        }
        if faults.is_empty() {
            let expect = self.v_profile.b0(self.dim.clamp(1, 3));
            let scale = expect.abs().max(1e-300);
            if (self.b0 - expect).abs() > B0_CONSISTENCY_TOL * scale && expect != self.b0 {
                faults.push(format!(
                    "stored b0 = {} disagrees with quadrature of the profile = {}",
                    self.b0, expect
                ));
            }
        }
        if faults.is_empty() {
            Ok(())
        } else {
            Err(ModlimError::Config(faults.join("; ")))
        }
    }

    /// Particle number as a float, for the many fractional-power scalings.
    pub fn n(&self) -> f64 {
        self.n_particles as f64
    }

    /// Interaction length scale N^(-beta).
    pub fn interaction_scale(&self) -> f64 {
        (self.n_particles as f64).powf(-self.beta)
    }

    /// V_N(r) = N^(d beta) V(N^beta r).
    pub fn v_n(&self, r: f64) -> f64 {
        let n = self.n_particles as f64;
        n.powf(self.dim as f64 * self.beta) * self.v_profile.value(n.powf(self.beta) * r)
    }

    /// d/dr V_N(r).
    pub fn v_n_prime(&self, r: f64) -> f64 {
        let n = self.n_particles as f64;
        n.powf((self.dim as f64 + 1.0) * self.beta)
            * self.v_profile.derivative(n.powf(self.beta) * r)
    }

    /// Support radius of V_N.
    pub fn v_n_radius(&self) -> f64 {
        self.v_profile.radius() * self.interaction_scale()
    }

    /// Error budget r(N, hbar) = N^(beta-1) h^-6 + N^(-beta/3) h^-4 + N^(-1/10) h^-4,
    /// with unit prefactor.
    pub fn r_compensator(&self) -> f64 {
        let n = self.n_particles as f64;
        let h = self.hbar;
        n.powf(self.beta - 1.0) * h.powi(-6)
            + n.powf(-self.beta / 3.0) * h.powi(-4)
            + n.powf(-0.1) * h.powi(-4)
    }

    /// Smallness parameter of the two-body energy regime.
    pub fn two_body_regime_parameter(&self) -> f64 {
        (self.n_particles as f64).powf(self.beta - 1.0) / (self.hbar * self.hbar)
    }

    pub fn in_two_body_regime(&self) -> bool {
        self.two_body_regime_parameter() < 0.1
    }
}
