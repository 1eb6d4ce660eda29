//! Compressible Euler--Poisson dynamics with pressure P = (b0/2) rho^2.
//!
//! The system is evolved in velocity form,
//!   d_t rho + div(rho u) = 0,
//!   d_t u + (u.grad) u + b0 grad rho + kappa grad(V_c * rho) = 0,
//! by pseudo-spectral RK4 with 2/3 dealiasing. Advection is assembled in
//! curl form, (u.grad)u = grad(|u|^2/2) - u x (curl u), so irrotational data
//! stay exactly irrotational: every other force is a pure gradient in
//! frequency space. The momentum form d_t J + div(J (x) J / rho) + ... = 0
//! is never evolved -- it is the independent residual check, evaluated with
//! spectral space derivatives and centered time differences.

use crate::error::{ModlimError, Result};
use crate::grid::{GridSpec, ScalarField, VectorField, C64};
use crate::kernels::CoulombKernel;
use crate::params::PhysicalParams;
use crate::spectral::{FieldOps, SpectralEngine};

/// Relative tolerance for the unit-mass precondition and conservation claim.
pub const MASS_TOL: f64 = 1e-8;
/// Default blow-up guard: halt when max |grad u| exceeds this multiple of
/// its initial value (floored at 1), standing in for the first blow-up time.
pub const DEFAULT_BLOWUP_FACTOR: f64 = 1e3;

/// Instantaneous fluid state on the periodic box.
#[derive(Debug, Clone)]
pub struct FluidState {
    pub rho: ScalarField,
    pub u: VectorField,
    pub time: f64,
}

impl FluidState {
    /// Validate the mass and nonnegativity requirements on the data.
    pub fn new(rho: ScalarField, u: VectorField, time: f64) -> Result<Self> {
        if rho.grid != u.grid {
            return Err(ModlimError::config("density and velocity grids differ"));
        }
        let mass = rho.integral();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(ModlimError::config(format!(
                "initial mass must be 1, got {mass:.12}"
            )));
        }
        if rho.min() < -1e-10 {
            return Err(ModlimError::config(format!(
                "density has negative values down to {:.3e}",
                rho.min()
            )));
        }
        Ok(FluidState { rho, u, time })
    }

    /// The homogeneous steady state rho = 1/L^d, u = 0.
    pub fn homogeneous(grid: GridSpec) -> Self {
        let rho_bar = 1.0 / grid.length.powi(grid.dim as i32);
        FluidState {
            rho: ScalarField { grid, data: vec![rho_bar; grid.points()] },
            u: VectorField { grid, comps: vec![vec![0.0; grid.points()]; grid.dim] },
            time: 0.0,
        }
    }

    /// Momentum density J = rho u.
    pub fn momentum(&self) -> VectorField {
        let comps = (0..self.rho.grid.dim)
            .map(|a| {
                self.rho
                    .data
                    .iter()
                    .zip(&self.u.comps[a])
                    .map(|(r, v)| r * v)
                    .collect()
            })
            .collect();
        VectorField { grid: self.rho.grid, comps }
    }
}

/// Time-ordered solution record with the per-step guard diagnostics.
#[derive(Debug)]
pub struct FluidTrajectory {
    /// States every `store_every` steps, starting with the initial state.
    pub states: Vec<FluidState>,
    pub dt: f64,
    pub store_every: usize,
    /// max |grad u| after every step.
    pub max_grad_u: Vec<f64>,
    /// min rho after every step.
    pub min_rho: Vec<f64>,
    /// Spectral coefficient of `probe_mode` after every step (frequency fits).
    pub probe_series: Vec<C64>,
    /// Set to the offending time if the blow-up guard ended the run early.
    pub guard_time: Option<f64>,
}

/// Solver knobs beyond the required arguments; `Default` matches the
/// documented defaults.
#[derive(Debug, Clone)]
pub struct EulerOptions {
    pub store_every: usize,
    /// Signed mode (one entry per axis) whose density coefficient is recorded
    /// every step.
    pub probe_mode: Option<Vec<i64>>,
    pub blow_up_factor: f64,
}

impl Default for EulerOptions {
    fn default() -> Self {
        EulerOptions { store_every: 1, probe_mode: None, blow_up_factor: DEFAULT_BLOWUP_FACTOR }
    }
}

/// External acceleration added to the velocity equation, for manufactured
/// solutions: called with the stage time.
pub type ForcingFn<'a> = &'a dyn Fn(f64) -> VectorField;

pub fn solve_euler_poisson(
    init: &FluidState,
    params: &PhysicalParams,
    t_end: f64,
    dt: f64,
) -> Result<FluidTrajectory> {
    solve_euler_poisson_with(init, params, t_end, dt, &EulerOptions::default(), None)
}

pub fn solve_euler_poisson_with(
    init: &FluidState,
    params: &PhysicalParams,
    t_end: f64,
    dt: f64,
    opts: &EulerOptions,
    forcing: Option<ForcingFn>,
) -> Result<FluidTrajectory> {
    params.validate()?;
    let grid = init.rho.grid;
    if grid.dim != params.dim {
        return Err(ModlimError::config("grid and parameter dimensions differ"));
    }
    if dt <= 0.0 || t_end <= 0.0 {
        return Err(ModlimError::config("t_end and dt must be positive"));
    }
    // Re-validate the initial data through the same gate as user construction.
    let init = FluidState::new(init.rho.clone(), init.u.clone(), init.time)?;
    let mut solver = Solver::new(grid, params);

    // Advective CFL precondition on the initial data.
    let cfl = dt * solver.max_signal_speed(&init) / grid.h();
    if cfl > 0.5 {
        return Err(ModlimError::config(format!(
            "CFL violation at t = {}: dt * max(|u| + sqrt(b0 rho)) = {:.3} h > 0.5 h",
            init.time, cfl
        )));
    }

    let steps = (t_end / dt).round() as usize;
    let mut rho_hat = solver.fwd_real(&init.rho.data);
    let mut u_hat: Vec<Vec<C64>> =
        init.u.comps.iter().map(|c| solver.fwd_real(c)).collect();
    solver.engine.dealias(&mut rho_hat);
    for c in u_hat.iter_mut() {
        solver.engine.dealias(c);
    }

    let mut traj = FluidTrajectory {
        states: vec![init.clone()],
        dt,
        store_every: opts.store_every.max(1),
        max_grad_u: Vec::with_capacity(steps),
        min_rho: Vec::with_capacity(steps),
        probe_series: Vec::with_capacity(if opts.probe_mode.is_some() { steps } else { 0 }),
        guard_time: None,
    };
    let guard_level = {
        let g0 = solver.max_grad(&u_hat);
        opts.blow_up_factor * g0.max(1.0)
    };

    for step in 1..=steps {
        let t = init.time + (step - 1) as f64 * dt;
        solver.rk4_step(&mut rho_hat, &mut u_hat, t, dt, forcing)?;
        let t_now = init.time + step as f64 * dt;

        // Materialize the new state for the guards and diagnostics.
        let rho = solver.real(&rho_hat);
        let u: Vec<Vec<f64>> = u_hat.iter().map(|c| solver.real(c)).collect();
        if rho.iter().any(|v| !v.is_finite()) || u.iter().any(|c| c.iter().any(|v| !v.is_finite()))
        {
            return Err(ModlimError::BlowUp {
                time: t_now,
                what: "NaN detected in the evolved fields".into(),
            });
        }
        let grad = solver.max_grad(&u_hat);
        let rho_min = rho.iter().cloned().fold(f64::INFINITY, f64::min);
        traj.max_grad_u.push(grad);
        traj.min_rho.push(rho_min);
        if let Some(mode) = &opts.probe_mode {
            traj.probe_series.push(solver.mode_coefficient(&rho_hat, mode));
        }

        let state = FluidState {
            rho: ScalarField { grid, data: rho },
            u: VectorField { grid, comps: u },
            time: t_now,
        };
        // Runtime CFL re-check on the evolved fields.
        let cfl = dt * solver.max_signal_speed(&state) / grid.h();
        if cfl > 0.5 {
            return Err(ModlimError::BlowUp {
                time: t_now,
                what: format!("CFL violation: dt * signal speed reached {cfl:.3} h"),
            });
        }
        if grad > guard_level {
            traj.guard_time = Some(t_now);
            traj.states.push(state);
            return Ok(traj);
        }
        if step % traj.store_every == 0 {
            traj.states.push(state);
        }
        // Mass is exactly conserved in frequency space; verify anyway.
        let mass = rho_hat[0].re * grid.cell_volume();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(ModlimError::numerical(format!(
                "mass drifted to {mass:.12} at t = {t_now}"
            )));
        }
    }
    Ok(traj)
}

/// Internal spectral workspace shared by the stepper and the residual check.
struct Solver {
    grid: GridSpec,
    engine: SpectralEngine,
    kernel: CoulombKernel,
    b0: f64,
    kappa: f64,
}

impl Solver {
    fn new(grid: GridSpec, params: &PhysicalParams) -> Self {
        Solver {
            grid,
            engine: SpectralEngine::for_grid(&grid),
            kernel: CoulombKernel::new(grid, None),
            b0: params.b0,
            kappa: params.kappa,
        }
    }

    fn fwd_real(&mut self, vals: &[f64]) -> Vec<C64> {
        let mut spec: Vec<C64> = vals.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.engine.forward(&mut spec);
        spec
    }

    fn real(&mut self, spec: &[C64]) -> Vec<f64> {
        let mut copy = spec.to_vec();
        self.engine.inverse(&mut copy);
        copy.into_iter().map(|z| z.re).collect()
    }

    fn deriv_of(&self, spec: &[C64], axis: usize) -> Vec<C64> {
        let mut copy = spec.to_vec();
        self.engine.derivative(&mut copy, axis);
        copy
    }

    fn max_grad(&mut self, u_hat: &[Vec<C64>]) -> f64 {
        let mut sup = 0.0f64;
        for comp in u_hat {
            for axis in 0..self.grid.dim {
                let d = self.deriv_of(comp, axis);
                let vals = self.real(&d);
                sup = vals.iter().fold(sup, |m, v| m.max(v.abs()));
            }
        }
        sup
    }

    fn max_signal_speed(&self, state: &FluidState) -> f64 {
        let n = state.rho.data.len();
        (0..n)
            .map(|i| {
                let speed2: f64 =
                    state.u.comps.iter().map(|c| c[i] * c[i]).sum();
                speed2.sqrt() + (self.b0 * state.rho.data[i].max(0.0)).sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn mode_coefficient(&self, spec: &[C64], mode: &[i64]) -> C64 {
        let n = self.grid.n as i64;
        let mut flat = 0usize;
        for &m in mode.iter().rev() {
            let idx = m.rem_euclid(n) as usize;
            flat = flat * self.grid.n + idx;
        }
        spec[flat] / self.grid.points() as f64
    }

    /// One classical RK4 step on the spectral state.
    fn rk4_step(
        &mut self,
        rho_hat: &mut Vec<C64>,
        u_hat: &mut Vec<Vec<C64>>,
        t: f64,
        dt: f64,
        forcing: Option<ForcingFn>,
    ) -> Result<()> {
        let (k1r, k1u) = self.rhs(rho_hat, u_hat, t, forcing);
        let (r2, u2) = stage(rho_hat, u_hat, &k1r, &k1u, 0.5 * dt);
        let (k2r, k2u) = self.rhs(&r2, &u2, t + 0.5 * dt, forcing);
        let (r3, u3) = stage(rho_hat, u_hat, &k2r, &k2u, 0.5 * dt);
        let (k3r, k3u) = self.rhs(&r3, &u3, t + 0.5 * dt, forcing);
        let (r4, u4) = stage(rho_hat, u_hat, &k3r, &k3u, dt);
        let (k4r, k4u) = self.rhs(&r4, &u4, t + dt, forcing);
        for i in 0..rho_hat.len() {
            rho_hat[i] += dt / 6.0 * (k1r[i] + 2.0 * k2r[i] + 2.0 * k3r[i] + k4r[i]);
        }
        for a in 0..u_hat.len() {
            for i in 0..u_hat[a].len() {
                u_hat[a][i] +=
                    dt / 6.0 * (k1u[a][i] + 2.0 * k2u[a][i] + 2.0 * k3u[a][i] + k4u[a][i]);
            }
        }
        Ok(())
    }

    /// Spectral right side of the velocity form, dealiased.
    fn rhs(
        &mut self,
        rho_hat: &[C64],
        u_hat: &[Vec<C64>],
        t: f64,
        forcing: Option<ForcingFn>,
    ) -> (Vec<C64>, Vec<Vec<C64>>) {
        let d = self.grid.dim;
        let total = self.grid.points();
        let rho = self.real(rho_hat);
        let u: Vec<Vec<f64>> = u_hat.iter().map(|c| self.real(c)).collect();

        // Continuity: d_t rho = -div(rho u).
        let mut drho = vec![C64::new(0.0, 0.0); total];
        for a in 0..d {
            let flux: Vec<f64> = (0..total).map(|i| rho[i] * u[a][i]).collect();
            let mut flux_hat = self.fwd_real(&flux);
            self.engine.derivative(&mut flux_hat, a);
            for i in 0..total {
                drho[i] -= flux_hat[i];
            }
        }

        // Kinetic-energy gradient part of curl-form advection.
        let s: Vec<f64> = (0..total)
            .map(|i| 0.5 * u.iter().map(|c| c[i] * c[i]).sum::<f64>())
            .collect();
        let s_hat = self.fwd_real(&s);

        // Rotational part u x omega (vanishes identically in 1D).
        let cross: Vec<Vec<f64>> = match d {
            1 => vec![vec![0.0; total]],
            2 => {
                // omega = d_x u_y - d_y u_x; u x (omega z) = (u_y w, -u_x w).
                let mut w_hat = self.deriv_of(&u_hat[1], 0);
                let dyux = self.deriv_of(&u_hat[0], 1);
                for i in 0..total {
                    w_hat[i] -= dyux[i];
                }
                let w = self.real(&w_hat);
                vec![
                    (0..total).map(|i| u[1][i] * w[i]).collect(),
                    (0..total).map(|i| -u[0][i] * w[i]).collect(),
                ]
            }
            3 => {
                let mut omega = Vec::with_capacity(3);
                for a in 0..3 {
                    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                    let mut wa = self.deriv_of(&u_hat[c], b);
                    let other = self.deriv_of(&u_hat[b], c);
                    for i in 0..total {
                        wa[i] -= other[i];
                    }
                    omega.push(self.real(&wa));
                }
                (0..3)
                    .map(|a| {
                        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                        (0..total).map(|i| u[b][i] * omega[c][i] - u[c][i] * omega[b][i]).collect()
                    })
                    .collect()
            }
            _ => unreachable!("grid dimension validated to 1..=3"),
        };

        let force = forcing.map(|f| f(t));
        // Gradient forces share one spectral prototype:
        //   -(ik_a)[ s_hat + b0 rho_hat + kappa mult(k) rho_hat ].
        let grad_src: Vec<C64> = {
            let mult = self.kernel.multiplier();
            (0..total)
                .map(|i| s_hat[i] + (self.b0 + self.kappa * mult[i]) * rho_hat[i])
                .collect()
        };
        let mut du = Vec::with_capacity(d);
        for a in 0..d {
            let mut grad_a = grad_src.clone();
            self.engine.derivative(&mut grad_a, a);
            let mut dua: Vec<C64> = grad_a.into_iter().map(|z| -z).collect();
            let cross_hat = self.fwd_real(&cross[a]);
            for i in 0..total {
                dua[i] += cross_hat[i];
            }
            if let Some(f) = &force {
                let f_hat = self.fwd_real(&f.comps[a]);
                for i in 0..total {
                    dua[i] += f_hat[i];
                }
            }
            self.engine.dealias(&mut dua);
            du.push(dua);
        }
        self.engine.dealias(&mut drho);
        (drho, du)
    }
}

fn stage(
    rho: &[C64],
    u: &[Vec<C64>],
    kr: &[C64],
    ku: &[Vec<C64>],
    h: f64,
) -> (Vec<C64>, Vec<Vec<C64>>) {
    let r2 = rho.iter().zip(kr).map(|(a, b)| a + h * b).collect();
    let u2 = u
        .iter()
        .zip(ku)
        .map(|(ua, ka)| ua.iter().zip(ka).map(|(a, b)| a + h * b).collect())
        .collect();
    (r2, u2)
}

/// Sup over interior times of the L2 residual of the momentum form,
///   d_t J + div(J (x) J / rho) + (b0/2) grad rho^2 + kappa rho grad(V_c*rho),
/// with centered time differences and spectral space derivatives. The same
/// trajectory that was evolved in velocity form must satisfy this to O(dt^2).
pub fn momentum_form_residual(traj: &FluidTrajectory, params: &PhysicalParams) -> Result<f64> {
    if traj.states.len() < 3 {
        return Err(ModlimError::config("need at least 3 stored states"));
    }
    let grid = traj.states[0].rho.grid;
    let mut ops = FieldOps::new(grid);
    let kernel = CoulombKernel::new(grid, None);
    let dt_store = traj.dt * traj.store_every as f64;
    let floor = 1e-12;
    let mut sup = 0.0f64;
    for i in 1..traj.states.len() - 1 {
        let (prev, here, next) = (&traj.states[i - 1], &traj.states[i], &traj.states[i + 1]);
        if here.rho.min() < floor {
            return Err(ModlimError::numerical(format!(
                "vacuum at t = {}: min rho = {:.3e}; momentum residual undefined",
                here.time,
                here.rho.min()
            )));
        }
        let j_prev = prev.momentum();
        let j_next = next.momentum();
        let j = here.momentum();

        // div of the flux tensor J (x) J / rho, one row per component.
        let pressure = {
            let sq = ScalarField {
                grid,
                data: here.rho.data.iter().map(|r| 0.5 * params.b0 * r * r).collect(),
            };
            ops.gradient(&sq)
        };
        let coulomb = {
            let pot = kernel.convolve(&mut ops, &here.rho);
            ops.gradient(&pot)
        };
        let mut norm2 = 0.0;
        for a in 0..grid.dim {
            let row = VectorField {
                grid,
                comps: (0..grid.dim)
                    .map(|b| {
                        (0..grid.points())
                            .map(|p| j.comps[a][p] * j.comps[b][p] / here.rho.data[p])
                            .collect()
                    })
                    .collect(),
            };
            let div_row = ops.divergence(&row);
            for p in 0..grid.points() {
                let dj_dt = (j_next.comps[a][p] - j_prev.comps[a][p]) / (2.0 * dt_store);
                let res = dj_dt
                    + div_row.data[p]
                    + pressure.comps[a][p]
                    + params.kappa * here.rho.data[p] * coulomb.comps[a][p];
                norm2 += res * res;
            }
        }
        sup = sup.max((norm2 * grid.cell_volume()).sqrt());
    }
    Ok(sup)
}

/// Least-squares single-frequency fit for a sampled standing oscillation:
/// a(t) = A cos(w t + phase) sampled at spacing dt satisfies
/// a_{i-1} + a_{i+1} = 2 cos(w dt) a_i, so cos(w dt) comes out of one
/// regression; exact for a pure tone regardless of phase.
pub fn fit_single_mode_frequency(samples: &[f64], dt: f64) -> Result<f64> {
    if samples.len() < 8 {
        return Err(ModlimError::config("need at least 8 samples for a frequency fit"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 1..samples.len() - 1 {
        num += samples[i] * (samples[i - 1] + samples[i + 1]);
        den += 2.0 * samples[i] * samples[i];
    }
    if den <= 0.0 {
        return Err(ModlimError::numerical("frequency fit on an all-zero signal"));
    }
    let c = (num / den).clamp(-1.0, 1.0);
    Ok(c.acos() / dt)
}
