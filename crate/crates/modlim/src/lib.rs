//! Spectral laboratory for the mean-field and semiclassical limit of quantum
//! N-body dynamics toward compressible fluid equations with pressure and a
//! Coulomb force.
//!
//! The crate is organized around a shared periodic-box field layer and a set
//! of solvers and verification suites built on it:
//!
//! - [`grid`], [`spectral`], [`kernels`], [`potential`], [`params`]: grids,
//!   FFT calculus, Coulomb kernels, the interaction profile.
//! - [`scattering`]: zero-energy two-body scattering profile and bounds.
//! - [`euler`]: compressible Euler equations with pressure and Coulomb force.
//! - [`nls`]: semiclassical nonlinear Schrodinger dynamics.
//! - [`nbody`]: exact few-body quantum dynamics on small grids.
//! - [`modenergy`]: modulated-energy functionals coupling the two levels.
//! - [`lemmas`]: randomized verification of the supporting inequalities.
//! - [`config`], [`runner`]: experiment configuration and the CLI harness.

pub mod config;
pub mod error;
pub mod euler;
pub mod grid;
pub mod kernels;
pub mod lemmas;
pub mod modenergy;
pub mod nbody;
pub mod nls;
pub mod params;
pub mod potential;
pub mod runner;
pub mod scattering;
pub mod spectral;

pub use config::{parse_config, parse_config_with_overrides, Experiment, RunConfig};
pub use runner::{run, CheckLine, PointFailure, RunOutcome};
pub use error::{ModlimError, Result};
pub use euler::{solve_euler_poisson, FluidState, FluidTrajectory};
pub use grid::{ComplexField, GridSpec, ScalarField, VectorField, C64};
pub use kernels::CoulombKernel;
pub use lemmas::{
    pair_form_gaussian, verify_cancellation_structure, verify_mollifier_rate,
    verify_operator_inequalities, verify_poincare, verify_reduced_inequality,
    verify_two_body_lower, InequalityReport, MollifierProfile,
};
pub use modenergy::{
    gronwall_check, modulated_energy_nbody, modulated_energy_onebody, rate_sweep,
    GaussianMollifier, ModulatedEnergyReport,
};
pub use nbody::{propagate, NBodyWaveFunction};
pub use nls::{solve_nls, wkb_initialize, WaveFunction};
pub use params::PhysicalParams;
pub use potential::VProfile;
pub use scattering::{solve_scattering, ScatteringProfile};
pub use spectral::{FieldOps, SpectralEngine};
