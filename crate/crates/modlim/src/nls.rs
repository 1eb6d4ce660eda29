//! Semiclassical one-body Schrodinger dynamics on the periodic box.
//!
//! Evolves `i hbar d_t psi = -(hbar^2/2) Lap psi + g[|psi|^2] psi
//! + kappa (K * |psi|^2) psi`, where the self-interaction `g` is either the
//! contact coupling `b0 |psi|^2` (the mean-field limit form) or the mollified
//! convolution `V_N * |psi|^2` (the finite-N form, enabled by a variant
//! switch so the two can be compared).
//!
//! The integrator is Strang splitting: a half potential step, a full kinetic
//! step, a half potential step. Both substeps are exact flows of their own
//! Hamiltonians -- the kinetic factor is a diagonal phase in frequency space
//! and the potential factor is a pointwise phase that leaves `|psi|` (hence
//! the potential itself) frozen -- so the only error is the O(dt^2)
//! non-commutativity and mass is conserved to roundoff.

use crate::error::{ModlimError, Result};
use crate::grid::{kahan_sum, ComplexField, GridSpec, ScalarField, VectorField, C64};
use crate::kernels::CoulombKernel;
use crate::params::PhysicalParams;
use crate::spectral::FieldOps;

/// Largest mass drift accepted before the run is declared numerically bad;
/// the splitting conserves mass to roundoff, so anything past this is a bug
/// or an overflow, not discretization error.
const MASS_GUARD: f64 = 1e-10;

/// One-body wave function with its semiclassical parameter.
#[derive(Clone, Debug)]
pub struct WaveFunction {
    pub psi: ComplexField,
    pub hbar: f64,
}

impl WaveFunction {
    /// Wrap a field, checking normalization `||psi||_2 = 1` to 1e-10.
    pub fn new(psi: ComplexField, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0) || !hbar.is_finite() {
            return Err(ModlimError::config(format!("hbar must be positive, got {hbar}")));
        }
        let norm = psi.l2_norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(ModlimError::config(format!(
                "wave function must be L2-normalized: ||psi|| = {norm:.12}"
            )));
        }
        Ok(WaveFunction { psi, hbar })
    }

    pub fn grid(&self) -> GridSpec {
        self.psi.grid
    }

    /// Mass and current densities of this state.
    pub fn observables(&self) -> QuantumObservables {
        observables(self)
    }
}

/// Quantum mass density `|psi|^2` and current `hbar Im(conj(psi) grad psi)`.
#[derive(Clone, Debug)]
pub struct QuantumObservables {
    pub rho_q: ScalarField,
    pub j_q: VectorField,
}

/// Compute the densities with spectral derivatives.
pub fn observables(wf: &WaveFunction) -> QuantumObservables {
    let grid = wf.grid();
    let mut ops = FieldOps::new(grid);
    let rho_q = wf.psi.abs2();
    let grads = ops.gradient_complex(&wf.psi);
    let comps = grads
        .iter()
        .map(|g| {
            wf.psi
                .data
                .iter()
                .zip(&g.data)
                .map(|(p, dp)| wf.hbar * (p.conj() * dp).im)
                .collect()
        })
        .collect();
    QuantumObservables { rho_q, j_q: VectorField { grid, comps } }
}

/// Build WKB data `psi = sqrt(rho) exp(i S / hbar)`.
///
/// `|psi|^2` equals `rho_in` exactly at the nodes and the current equals
/// `rho_in * grad S` to spectral accuracy; the induced velocity is the
/// gradient `u = grad S`, so the data is irrotational by construction.
pub fn wkb_initialize(
    rho_in: &ScalarField,
    s_phase: &ScalarField,
    hbar: f64,
) -> Result<WaveFunction> {
    if rho_in.grid != s_phase.grid {
        return Err(ModlimError::config("density and phase live on different grids"));
    }
    let min = rho_in.min();
    if min < -1e-12 {
        return Err(ModlimError::config(format!(
            "initial density must be nonnegative; min = {min:.3e}"
        )));
    }
    let mass = rho_in.integral();
    if (mass - 1.0).abs() > 1e-10 {
        return Err(ModlimError::config(format!(
            "initial density must have unit mass; integral = {mass:.12}"
        )));
    }
    let data = rho_in
        .data
        .iter()
        .zip(&s_phase.data)
        .map(|(&r, &s)| C64::from_polar(r.max(0.0).sqrt(), s / hbar))
        .collect();
    WaveFunction::new(ComplexField { grid: rho_in.grid, data }, hbar)
}

/// Which self-interaction the potential step applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlsVariant {
    /// Contact coupling `b0 |psi|^2` (the limiting interaction).
    LocalDelta,
    /// Mollified coupling `(V_N * |psi|^2)` at the finite N in the
    /// parameters, applied through the exact continuum transform of `V_N`
    /// sampled on the grid wavenumbers.
    MollifiedHartree,
}

#[derive(Clone, Debug)]
pub struct NlsOptions {
    pub variant: NlsVariant,
    /// Keep every k-th state (the initial and final states are always kept).
    pub store_every: usize,
}

impl Default for NlsOptions {
    fn default() -> Self {
        NlsOptions { variant: NlsVariant::LocalDelta, store_every: 1 }
    }
}

/// Stored states with per-snapshot diagnostics.
#[derive(Clone, Debug)]
pub struct NlsTrajectory {
    pub states: Vec<WaveFunction>,
    pub times: Vec<f64>,
    /// Total energy at each stored state.
    pub energies: Vec<f64>,
    pub dt: f64,
    /// Largest deviation of the mass from its initial value over all steps.
    pub mass_drift: f64,
}

impl NlsTrajectory {
    pub fn last(&self) -> &WaveFunction {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    /// Largest excursion of the stored energies from the initial energy.
    pub fn energy_drift(&self) -> f64 {
        let e0 = self.energies[0];
        self.energies.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max)
    }
}

/// Evolve with the default options (contact interaction, store every step).
pub fn solve_nls(
    psi0: &WaveFunction,
    params: &PhysicalParams,
    t_end: f64,
    dt: f64,
) -> Result<NlsTrajectory> {
    solve_nls_with(psi0, params, t_end, dt, &NlsOptions::default())
}

pub fn solve_nls_with(
    psi0: &WaveFunction,
    params: &PhysicalParams,
    t_end: f64,
    dt: f64,
    options: &NlsOptions,
) -> Result<NlsTrajectory> {
    params.validate()?;
    let grid = psi0.grid();
    if grid.dim != params.dim {
        return Err(ModlimError::config(format!(
            "state is {}-dimensional but the parameters say dim = {}",
            grid.dim, params.dim
        )));
    }
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(ModlimError::config("t_end and dt must be positive"));
    }
    let steps = (t_end / dt).round() as usize;
    if steps == 0 || ((steps as f64) * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(ModlimError::config(format!(
            "t_end = {t_end} is not an integer number of steps of dt = {dt}"
        )));
    }
    if options.store_every == 0 {
        return Err(ModlimError::config("store_every must be at least 1"));
    }

    let mut stepper = Stepper::new(grid, params, psi0.hbar, options.variant, dt)?;
    let mut psi = psi0.psi.data.clone();
    let cell = grid.cell_volume();
    let mass0 = cell * kahan_sum(psi.iter().map(|z| z.norm_sqr()));

    let mut traj = NlsTrajectory {
        states: vec![psi0.clone()],
        times: vec![0.0],
        energies: vec![stepper.energy(&psi)],
        dt,
        mass_drift: 0.0,
    };

    for step in 1..=steps {
        stepper.half_potential(&mut psi);
        stepper.full_kinetic(&mut psi);
        stepper.half_potential(&mut psi);

        let mass = cell * kahan_sum(psi.iter().map(|z| z.norm_sqr()));
        if !mass.is_finite() {
            return Err(ModlimError::numerical(format!(
                "non-finite state at t = {:.6}",
                step as f64 * dt
            )));
        }
        let drift = (mass - mass0).abs();
        traj.mass_drift = traj.mass_drift.max(drift);
        if drift > MASS_GUARD {
            return Err(ModlimError::numerical(format!(
                "mass drifted by {drift:.3e} at t = {:.6}; the splitting conserves it to \
                 roundoff, so the state is numerically bad",
                step as f64 * dt
            )));
        }

        if step % options.store_every == 0 || step == steps {
            let field = ComplexField { grid, data: psi.clone() };
            traj.states.push(WaveFunction { psi: field, hbar: psi0.hbar });
            traj.times.push(step as f64 * dt);
            traj.energies.push(stepper.energy(&psi));
        }
    }
    Ok(traj)
}

/// Total energy `(hbar^2/2)||grad psi||^2 + interaction + Coulomb` of a state.
pub fn nls_energy(wf: &WaveFunction, params: &PhysicalParams) -> Result<f64> {
    params.validate()?;
    let mut stepper =
        Stepper::new(wf.grid(), params, wf.hbar, NlsVariant::LocalDelta, 1.0)?;
    Ok(stepper.energy(&wf.psi.data))
}

/// L2 residual of `d_t rho + div j` at stored index `i`, with the time
/// derivative taken by centered differences over the neighbors. For the exact
/// flow the identity holds identically, so the residual measures the combined
/// splitting and differencing error and shrinks at second order in dt.
pub fn continuity_residual(traj: &NlsTrajectory, i: usize) -> Result<f64> {
    if i == 0 || i + 1 >= traj.states.len() {
        return Err(ModlimError::config(
            "continuity residual needs a stored state on each side",
        ));
    }
    let span = traj.times[i + 1] - traj.times[i - 1];
    let before = traj.states[i - 1].psi.abs2();
    let after = traj.states[i + 1].psi.abs2();
    let obs = traj.states[i].observables();
    let grid = traj.states[i].grid();
    let mut ops = FieldOps::new(grid);
    let div = ops.divergence(&obs.j_q);
    let data: Vec<f64> = (0..grid.points())
        .map(|j| (after.data[j] - before.data[j]) / span + div.data[j])
        .collect();
    Ok(ScalarField { grid, data }.l2_norm())
}

/// Split-step worker: owns the transform plans, the kinetic phase tables and
/// the interaction multipliers for one (grid, params, dt) combination.
struct Stepper {
    ops: FieldOps,
    grid: GridSpec,
    hbar: f64,
    kappa: f64,
    b0: f64,
    /// Phase tables exp(-i dt hbar k_a^2 / 2), one per axis.
    kinetic: Vec<Vec<C64>>,
    /// Continuum transform of V_N on the grid modes (Hartree variant only).
    hartree: Option<Vec<f64>>,
    coulomb: Option<CoulombKernel>,
    /// Half-step prefactor dt / (2 hbar) for the potential phase.
    half_angle: f64,
}

impl Stepper {
    fn new(
        grid: GridSpec,
        params: &PhysicalParams,
        hbar: f64,
        variant: NlsVariant,
        dt: f64,
    ) -> Result<Self> {
        let hartree = match variant {
            NlsVariant::LocalDelta => None,
            NlsVariant::MollifiedHartree => {
                if grid.dim == 2 {
                    return Err(ModlimError::config(
                        "the mollified interaction is wired up for dim 1 and 3 only",
                    ));
                }
                let scale = params.interaction_scale();
                let mut table = vec![0.0; grid.points()];
                let mut idx = vec![0usize; grid.dim];
                for flat in 0..grid.points() {
                    grid.unravel(flat, &mut idx);
                    let k2: f64 =
                        idx.iter().map(|&i| grid.wavenumber(i).powi(2)).sum();
                    let k = k2.sqrt();
                    table[flat] = match grid.dim {
                        1 => params.v_profile.radial_ft_1d(k * scale),
                        3 => params.v_profile.radial_ft_3d(k * scale),
                        _ => unreachable!(),
                    };
                }
                Some(table)
            }
        };
        let coulomb =
            (params.kappa != 0.0).then(|| CoulombKernel::new(grid, None));
        let kinetic = (0..grid.dim)
            .map(|_| {
                (0..grid.n)
                    .map(|i| {
                        let k = grid.wavenumber(i);
                        C64::from_polar(1.0, -dt * hbar * k * k / 2.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Stepper {
            ops: FieldOps::new(grid),
            grid,
            hbar,
            kappa: params.kappa,
            b0: params.v_profile.b0(params.dim),
            kinetic,
            hartree,
            coulomb,
            half_angle: dt / (2.0 * hbar),
        })
    }

    /// The effective potential b0 rho (or V_N * rho) + kappa K * rho.
    fn effective_potential(&mut self, psi: &[C64]) -> Vec<f64> {
        let rho = ScalarField {
            grid: self.grid,
            data: psi.iter().map(|z| z.norm_sqr()).collect(),
        };
        let mut pot: Vec<f64> = match &self.hartree {
            None => rho.data.iter().map(|&r| self.b0 * r).collect(),
            Some(table) => {
                let mut spec = self.ops.forward_real(&rho);
                for (z, m) in spec.iter_mut().zip(table) {
                    *z *= *m;
                }
                self.ops.inverse_to_real(spec).data
            }
        };
        if let Some(kernel) = &self.coulomb {
            let phi = kernel.convolve(&mut self.ops, &rho);
            for (p, f) in pot.iter_mut().zip(&phi.data) {
                *p += self.kappa * f;
            }
        }
        pot
    }

    fn half_potential(&mut self, psi: &mut [C64]) {
        let pot = self.effective_potential(psi);
        for (z, p) in psi.iter_mut().zip(&pot) {
            *z *= C64::from_polar(1.0, -self.half_angle * p);
        }
    }

    fn full_kinetic(&mut self, psi: &mut [C64]) {
        // apply_separable transforms, multiplies and transforms back
        // axis by axis; the state stays in real space.
        let tables: Vec<&[C64]> = self.kinetic.iter().map(|t| t.as_slice()).collect();
        self.ops.engine.apply_separable(psi, &tables);
    }

    fn energy(&mut self, psi: &[C64]) -> f64 {
        let cell = self.grid.cell_volume();
        let field = ComplexField { grid: self.grid, data: psi.to_vec() };
        let grads = self.ops.gradient_complex(&field);
        let kinetic: f64 = grads
            .iter()
            .map(|g| {
                0.5 * self.hbar * self.hbar
                    * cell
                    * kahan_sum(g.data.iter().map(|z| z.norm_sqr()))
            })
            .sum();
        // The interaction and Coulomb energies are both (1/2) int pot * rho.
        let pot = self.effective_potential(psi);
        let interaction = 0.5
            * cell
            * kahan_sum(
                pot.iter().zip(psi.iter()).map(|(p, z)| p * z.norm_sqr()),
            );
        kinetic + interaction
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::params::PhysicalParams;
    use crate::potential::VProfile;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid1(n: usize, length: f64) -> GridSpec {
        GridSpec::new(1, n, length).unwrap()
    }

    /// Smooth positive density (1 + a cos x)^2 normalized on [0, 2 pi);
    /// its square root is a trigonometric polynomial, so spectral
    /// derivatives of sqrt(rho) are exact.
    fn cosine_density(grid: GridSpec, a: f64) -> ScalarField {
        let raw = ScalarField::from_fn(grid, |x| {
            let amp = 1.0 + a * x[0].cos();
            amp * amp
        });
        let mass = raw.integral();
        ScalarField { grid, data: raw.data.iter().map(|v| v / mass).collect() }
    }

    fn params_1d(amplitude: f64, kappa: f64, hbar: f64) -> PhysicalParams {
        PhysicalParams::new(1, 64, hbar, 0.5, kappa, 0.2, VProfile::bump(amplitude, 1.0))
            .unwrap()
    }

    #[test]
    fn wkb_zero_phase_is_real_with_zero_current() {
        let grid = grid1(64, 2.0 * PI);
        let rho = cosine_density(grid, 0.3);
        let phase = ScalarField::zeros(grid);
        let wf = wkb_initialize(&rho, &phase, 0.5).unwrap();
        let obs = wf.observables();
        for (got, want) in obs.rho_q.data.iter().zip(&rho.data) {
            assert!((got - want).abs() <= 1e-15, "density must match at nodes");
        }
        assert!(obs.j_q.max_norm() <= 1e-12, "real data carries no current");
    }

    #[test]
    fn wkb_uniform_boost_carries_current_rho_v() {
        let grid = grid1(64, 2.0 * PI);
        let hbar = 0.5;
        let rho = cosine_density(grid, 0.3);
        // v0 = hbar * (integer mode) keeps exp(iS/hbar) periodic.
        let v0 = hbar * 3.0;
        let phase = ScalarField::from_fn(grid, |x| v0 * x[0]);
        let wf = wkb_initialize(&rho, &phase, hbar).unwrap();
        let obs = wf.observables();
        let scale = rho.max_abs() * v0;
        for (j, r) in obs.j_q.comps[0].iter().zip(&rho.data) {
            assert!((j - r * v0).abs() <= 1e-10 * scale, "current must be rho v0");
        }
    }

    #[test]
    fn wkb_relative_kinetic_energy_is_hbar_squared_gradient() {
        // For psi = sqrt(rho) exp(iS/hbar) and u = grad S the shifted kinetic
        // energy int |(-i hbar grad - u) psi|^2 collapses to
        // hbar^2 int |grad sqrt(rho)|^2: the phase factors cancel the flow.
        let grid = grid1(64, 2.0 * PI);
        let rho = cosine_density(grid, 0.3);
        let phase = ScalarField::from_fn(grid, |x| 0.2 * x[0].sin());
        let mut ops = FieldOps::new(grid);
        let u = ops.gradient(&phase);
        let sqrt_rho =
            ScalarField { grid, data: rho.data.iter().map(|r| r.sqrt()).collect() };
        let dsqrt = ops.gradient(&sqrt_rho);
        let cell = grid.cell_volume();

        for &hbar in &[0.5, 0.1] {
            let wf = wkb_initialize(&rho, &phase, hbar).unwrap();
            let grads = ops.gradient_complex(&wf.psi);
            let mut lhs = 0.0;
            for a in 0..grid.dim {
                lhs += cell
                    * kahan_sum((0..grid.points()).map(|i| {
                        let shifted = -C64::i() * hbar * grads[a].data[i]
                            - u.comps[a][i] * wf.psi.data[i];
                        shifted.norm_sqr()
                    }));
            }
            let rhs = hbar
                * hbar
                * cell
                * kahan_sum(dsqrt.comps[0].iter().map(|g| g * g));
            assert!(
                (lhs - rhs).abs() <= 1e-12 * rhs.max(1e-30),
                "hbar = {hbar}: lhs {lhs:.3e} vs rhs {rhs:.3e}"
            );
        }
    }

    #[test]
    fn free_gaussian_matches_exact_propagator() {
        // b0 = 0, kappa = 0: splitting reduces to the exact kinetic flow, and
        // the periodized Gaussian agrees with the free-space closed form
        //   psi(x,t) = (2 pi s^2)^(-1/4) (1+i tau)^(-1/2)
        //              exp(-x^2 / (4 s^2 (1 + i tau))),  tau = hbar t / (2 s^2)
        // to far below 1e-8 because the tails never reach the boundary.
        let n = 256;
        let length = 40.0;
        let grid = grid1(n, length);
        let hbar = 0.5;
        let sigma = 1.0;
        let norm = (2.0 * PI * sigma * sigma).powf(-0.25);
        // Grid coordinates are signed, so the packet sits at the origin with
        // its tails dying out long before the box boundary.
        let psi0 = ComplexField::from_fn(grid, |x| {
            let d = x[0];
            C64::new(norm * (-d * d / (4.0 * sigma * sigma)).exp(), 0.0)
        });
        let wf0 = WaveFunction::new(psi0, hbar).unwrap();
        let params =
            PhysicalParams::new(1, 64, hbar, 0.5, 0.0, 0.2, VProfile::Zero).unwrap();
        let t_end = 2.0;
        let traj = solve_nls(&wf0, &params, t_end, 0.25).unwrap();
        let got = traj.last();

        let tau = hbar * t_end / (2.0 * sigma * sigma);
        let denom = C64::new(1.0, tau);
        let prefactor = norm / denom.sqrt();
        let mut max_err: f64 = 0.0;
        for (flat, z) in got.psi.data.iter().enumerate() {
            let d = grid.coord(flat);
            let exact = prefactor * (-C64::new(d * d, 0.0) / (4.0 * sigma * sigma * denom)).exp();
            max_err = max_err.max((z - exact).norm());
        }
        assert!(max_err <= 1e-8, "pointwise error {max_err:.3e}");

        // Width growth: Var(|psi|^2) = s^2 (1 + tau^2).
        let rho = got.psi.abs2();
        let var = grid.cell_volume()
            * kahan_sum(
                (0..grid.points()).map(|i| grid.coord(i).powi(2) * rho.data[i]),
            );
        let expect = sigma * sigma * (1.0 + tau * tau);
        assert!((var - expect).abs() <= 1e-8, "variance {var} vs {expect}");
    }

    #[test]
    fn plane_wave_rotates_at_nonlinear_rate() {
        // Constant-density data keeps both substeps exact, so the numerical
        // state equals psi0 exp(-i theta t) with
        // theta = (hbar^2 k^2 / 2 + b0 / L) / hbar; the Coulomb term drops
        // out because the kernel kills the mean mode.
        let length = 2.0 * PI;
        let grid = grid1(32, length);
        let hbar = 0.5;
        let m = 2.0; // lattice mode
        let psi0 = ComplexField::from_fn(grid, |x| {
            C64::from_polar(1.0 / length.sqrt(), m * x[0])
        });
        let wf0 = WaveFunction::new(psi0.clone(), hbar).unwrap();
        let params = params_1d(1.0, 1.0, hbar);
        let b0 = params.v_profile.b0(1);
        let t_end = 1.0;
        let traj = solve_nls(&wf0, &params, t_end, 0.01).unwrap();
        let got = traj.last();

        let theta = (hbar * hbar * m * m / 2.0 + b0 / length) * t_end / hbar;
        let rotation = C64::from_polar(1.0, -theta);
        let mut max_err: f64 = 0.0;
        let mut max_dev: f64 = 0.0;
        for (z, z0) in got.psi.data.iter().zip(&psi0.data) {
            max_err = max_err.max((z - z0 * rotation).norm());
            max_dev = max_dev.max((z.norm_sqr() - 1.0 / length).abs());
        }
        assert!(max_err <= 1e-10, "phase error {max_err:.3e}");
        assert!(max_dev <= 1e-13, "density must stay constant, dev {max_dev:.3e}");
    }

    #[test]
    fn energy_drift_is_second_order_in_dt() {
        let grid = grid1(64, 2.0 * PI);
        let hbar = 0.5;
        let rho = cosine_density(grid, 0.3);
        let phase = ScalarField::from_fn(grid, |x| 0.1 * x[0].sin());
        let wf0 = wkb_initialize(&rho, &phase, hbar).unwrap();
        let params = params_1d(2.0, 0.0, hbar);

        let drift = |dt: f64| {
            let traj = solve_nls(&wf0, &params, 0.5, dt).unwrap();
            assert!(traj.mass_drift <= 1e-12, "mass drift {:.3e}", traj.mass_drift);
            traj.energy_drift()
        };
        let coarse = drift(0.01);
        let fine = drift(0.005);
        assert!(
            coarse / fine >= 3.5,
            "energy drift must shrink at order 2: {coarse:.3e} / {fine:.3e}"
        );
    }

    #[test]
    fn continuity_residual_is_second_order_in_dt() {
        let grid = grid1(64, 2.0 * PI);
        let hbar = 0.5;
        let rho = cosine_density(grid, 0.3);
        let phase = ScalarField::from_fn(grid, |x| 0.1 * x[0].sin());
        let wf0 = wkb_initialize(&rho, &phase, hbar).unwrap();
        let params = params_1d(2.0, 1.0, hbar);

        let residual = |dt: f64| {
            let traj = solve_nls(&wf0, &params, 0.4, dt).unwrap();
            let mid = traj.states.len() / 2;
            continuity_residual(&traj, mid).unwrap()
        };
        let coarse = residual(0.02);
        let fine = residual(0.01);
        assert!(
            coarse / fine >= 3.3,
            "continuity residual order: {coarse:.3e} / {fine:.3e}"
        );
    }

    #[test]
    fn observables_are_gauge_invariant() {
        let grid = grid1(64, 2.0 * PI);
        let mut psi = ComplexField::from_fn(grid, |x| {
            C64::new(1.0 + 0.3 * x[0].cos(), 0.2 * (2.0 * x[0]).sin())
        });
        psi.normalize();
        let wf = WaveFunction::new(psi.clone(), 0.5).unwrap();
        let obs = wf.observables();
        assert!((obs.rho_q.integral() - 1.0).abs() <= 1e-10);

        let rotated = ComplexField {
            grid,
            data: psi.data.iter().map(|z| z * C64::from_polar(1.0, 0.73)).collect(),
        };
        let obs2 = WaveFunction::new(rotated, 0.5).unwrap().observables();
        for (a, b) in obs.rho_q.data.iter().zip(&obs2.rho_q.data) {
            assert!((a - b).abs() <= 1e-14);
        }
        for axis in 0..grid.dim {
            for (a, b) in obs.j_q.comps[axis].iter().zip(&obs2.j_q.comps[axis]) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn mollified_interaction_converges_to_contact_limit() {
        // Vhat(k N^-beta) = b0 - O(k^2 N^(-2 beta)), so the gap between the
        // Hartree and contact runs shrinks like N^(-2 beta); quadrupling N at
        // beta = 1/2 should shrink it by about 16. Require at least 8.
        let grid = grid1(64, 2.0 * PI);
        let hbar = 0.5;
        let rho = cosine_density(grid, 0.3);
        let phase = ScalarField::from_fn(grid, |x| 0.1 * x[0].sin());
        let wf0 = wkb_initialize(&rho, &phase, hbar).unwrap();

        let gap = |n_particles: usize| {
            let params = PhysicalParams::new(
                1,
                n_particles,
                hbar,
                0.5,
                0.0,
                0.2,
                VProfile::bump(2.0, 1.0),
            )
            .unwrap();
            let local = solve_nls(&wf0, &params, 0.25, 0.005).unwrap();
            let hartree = solve_nls_with(
                &wf0,
                &params,
                0.25,
                0.005,
                &NlsOptions { variant: NlsVariant::MollifiedHartree, store_every: 1 },
            )
            .unwrap();
            let a = &local.last().psi;
            let b = &hartree.last().psi;
            let diff = ComplexField {
                grid,
                data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
            };
            diff.l2_norm()
        };
        let coarse = gap(64);
        let fine = gap(1024);
        assert!(coarse > 1e-12, "gap must be visible at small N, got {coarse:.3e}");
        assert!(
            coarse / fine >= 8.0,
            "mollified-to-contact gap must shrink ~N^(-2 beta): {coarse:.3e} vs {fine:.3e}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn random_smooth_data_conserves_mass_and_normalization(
            a1 in -0.3f64..0.3,
            a2 in -0.2f64..0.2,
            s1 in -0.3f64..0.3,
            hbar in 0.2f64..1.0,
        ) {
            let grid = grid1(32, 2.0 * PI);
            let raw = ScalarField::from_fn(grid, |x| {
                let amp = 1.0 + a1 * x[0].cos() + a2 * (2.0 * x[0]).sin();
                amp * amp
            });
            let mass = raw.integral();
            let rho = ScalarField {
                grid,
                data: raw.data.iter().map(|v| v / mass).collect(),
            };
            let phase = ScalarField::from_fn(grid, |x| s1 * x[0].sin());
            let wf0 = wkb_initialize(&rho, &phase, hbar).unwrap();
            let params = params_1d(1.0, 1.0, hbar);
            let traj = solve_nls(&wf0, &params, 0.1, 0.01).unwrap();
            prop_assert!(traj.mass_drift <= 1e-12);
            let obs = traj.last().observables();
            prop_assert!((obs.rho_q.integral() - 1.0).abs() <= 1e-10);
        }
    }
}
