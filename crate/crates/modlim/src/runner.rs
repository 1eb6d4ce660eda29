//! Experiment orchestration: drive the solvers from a [`RunConfig`], write
//! every artifact through a single emitter, and summarize pass/fail.
//!
//! Output contract:
//! - time series and sweep tables go to CSV, reports and fits to JSON,
//!   plotting extracts to two-column whitespace `.dat` files (gnuplot-ready);
//! - every produced file is listed in `manifest.json` with its size and
//!   SHA-256 content hash — the manifest itself is the only unlisted file;
//! - a rerun with the same config and seed produces byte-identical bodies
//!   (floats are printed shortest-roundtrip, iteration orders are fixed,
//!   and worker count only changes scheduling, never values);
//! - sweep points that fail to solve are recorded with their error and the
//!   run carries on; the outcome then reports the suite as failed.
//!
//! Exit-code mapping for the CLI lives on [`ModlimError::exit_code`]: a run
//! that completes but fails a check exits 1, configuration problems exit 2,
//! numerical faults exit 3.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{Experiment, RunConfig};
use crate::error::{ModlimError, Result};
use crate::euler::{
    fit_single_mode_frequency, momentum_form_residual, solve_euler_poisson_with, EulerOptions,
    FluidState,
};
use crate::grid::{ComplexField, GridSpec, ScalarField, VectorField, C64};
use crate::lemmas::{
    verify_cancellation_structure, verify_mollifier_rate, verify_operator_inequalities,
    verify_poincare, verify_reduced_inequality, verify_two_body_lower, InequalityReport,
    MollifierProfile,
};
use crate::modenergy::{
    coupled_run_onebody, functional_inequality_check, gronwall_check, identity_residual,
    rate_sweep, uniform_within,
};
use crate::nbody::{
    conservation_identities, marginals, propagate_with, two_body_energy_diagnostic,
    NBodyOptions, NBodyWaveFunction,
};
use crate::nls::{continuity_residual, solve_nls_with, wkb_initialize, NlsOptions};
use crate::params::PhysicalParams;
use crate::potential::VProfile;
use crate::scattering::{correlation_field, solve_scattering, verify_scattering_bounds};
use crate::spectral::FieldOps;

/// One named pass/fail verdict with a human-readable detail string.
#[derive(Clone, Debug, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: impl Into<String>, pass: bool, detail: String) -> Self {
        CheckLine { name: name.into(), pass, detail }
    }

    /// `PASS name | detail` — the one-line form printed by the CLI.
    pub fn summary_line(&self) -> String {
        format!("{} {} | {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// A sweep point that could not be solved, kept so partial failures stay
/// visible in the manifest instead of aborting the whole sweep.
#[derive(Clone, Debug, Serialize)]
pub struct PointFailure {
    pub point: String,
    pub error: String,
}

/// What a finished run hands back to the CLI.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// True iff every check passed and no sweep point failed.
    pub pass: bool,
    pub checks: Vec<CheckLine>,
    pub failures: Vec<PointFailure>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
struct FileRecord {
    name: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    seed: u64,
    workers: usize,
    pass: bool,
    checks: &'a [CheckLine],
    failures: &'a [PointFailure],
    files: &'a [FileRecord],
}

/// Single writer for all run artifacts. Every byte that reaches the output
/// directory goes through here, which is what makes the manifest complete.
struct Emitter {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl Emitter {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Emitter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if self.files.iter().any(|f| f.name == name) {
            return Err(ModlimError::config(format!("duplicate output file `{name}`")));
        }
        std::fs::write(self.dir.join(name), bytes)?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        self.files.push(FileRecord { name: name.to_string(), bytes: bytes.len(), sha256 });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| ModlimError::config(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(header)
            .and_then(|()| rows.iter().try_for_each(|row| wtr.write_record(row)))
            .map_err(|e| ModlimError::config(format!("writing {name}: {e}")))?;
        let bytes = wtr
            .into_inner()
            .map_err(|e| ModlimError::config(format!("flushing {name}: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    /// Two-column whitespace table with a `#` comment header.
    fn write_plot(&mut self, name: &str, comment: &str, xy: &[(f64, f64)]) -> Result<()> {
        let mut text = format!("# {comment}\n");
        for (x, y) in xy {
            text.push_str(&format!("{} {}\n", fmt(*x), fmt(*y)));
        }
        self.write_bytes(name, text.as_bytes())
    }
}

/// Shortest-roundtrip decimal for CSV/plot cells: deterministic for equal
/// bits and parseable by any plotting tool.
fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// Resolve the worker count (`MODLIM_WORKERS` beats the config key) and, if
/// nonzero, size the global pool. Parallelism only affects scheduling: every
/// parallel sweep collects into index order before anything is written.
fn init_workers(config_workers: usize) -> Result<usize> {
    let workers = match std::env::var("MODLIM_WORKERS") {
        Ok(s) => s.trim().parse::<usize>().map_err(|_| {
            ModlimError::config(format!("MODLIM_WORKERS must be a nonnegative integer, got `{s}`"))
        })?,
        Err(_) => config_workers,
    };
    if workers > 0 {
        // The global pool can only be sized once per process; later runs in
        // the same process keep the first size (outputs do not depend on it).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    Ok(workers)
}

/// Execute the configured experiment and write its artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    let workers = init_workers(cfg.workers)?;
    let mut em = Emitter::new(&cfg.output_dir)?;
    let mut failures = Vec::new();
    let checks = match cfg.experiment {
        Experiment::Scattering => run_scattering(cfg, &mut em, &mut failures)?,
        Experiment::Euler => run_euler(cfg, &mut em, &mut failures)?,
        Experiment::Nls => run_nls(cfg, &mut em)?,
        Experiment::Nbody => run_nbody(cfg, &mut em)?,
        Experiment::Modenergy => run_modenergy(cfg, &mut em)?,
        Experiment::RateSweep => run_rate_sweep(cfg, &mut em)?,
        Experiment::VerifyLemmas => run_verify_lemmas(cfg, &mut em)?,
    };
    let pass = checks.iter().all(|c| c.pass) && failures.is_empty();
    let manifest = Manifest {
        experiment: cfg.experiment.name(),
        seed: cfg.seed,
        workers,
        pass,
        checks: &checks,
        failures: &failures,
        files: &em.files,
    };
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| ModlimError::config(format!("serializing manifest: {e}")))?;
    text.push('\n');
    std::fs::write(em.dir.join("manifest.json"), text)?;
    Ok(RunOutcome { pass, checks, failures, out_dir: em.dir })
}

// ---------------------------------------------------------------------------
// Shared initial data
// ---------------------------------------------------------------------------

/// Smooth positive density with exactly unit mass: a low-mode modulation of
/// the uniform state, normalized on the grid.
fn smooth_density(grid: GridSpec) -> ScalarField {
    let k0 = 2.0 * PI / grid.length;
    let mut rho = ScalarField::from_fn(grid, |x| {
        let mut v = 1.0 + 0.2 * (k0 * x[0]).cos();
        if grid.dim > 1 {
            v += 0.1 * (k0 * x[1]).sin();
        }
        v
    });
    let mass = rho.integral();
    for v in &mut rho.data {
        *v /= mass;
    }
    rho
}

/// Smooth phase whose gradient is an order-0.1 velocity field.
fn smooth_phase(grid: GridSpec) -> ScalarField {
    let k0 = 2.0 * PI / grid.length;
    ScalarField::from_fn(grid, |x| {
        let mut s = 0.1 / k0 * (k0 * x[0]).sin();
        if grid.dim > 1 {
            s += 0.05 / k0 * (k0 * x[1]).cos();
        }
        s
    })
}

/// WKB pair (wave function, matched fluid state) from the shared density
/// and phase, for the coupled modulated-energy runs.
fn wkb_pair(grid: GridSpec, hbar: f64) -> Result<(crate::nls::WaveFunction, FluidState)> {
    let rho0 = smooth_density(grid);
    let s0 = smooth_phase(grid);
    let wf0 = wkb_initialize(&rho0, &s0, hbar)?;
    let u0 = FieldOps::new(grid).gradient(&s0);
    let fluid0 = FluidState::new(rho0, u0, 0.0)?;
    Ok((wf0, fluid0))
}

/// Flat index of the point `(i, mid, mid, ...)` for an axis-0 line cut.
fn lineout_index(grid: GridSpec, i: usize) -> usize {
    let mut flat = 0;
    for axis in (1..grid.dim).rev() {
        let _ = axis;
        flat = flat * grid.n + grid.n / 2;
    }
    flat * grid.n + i
}

// ---------------------------------------------------------------------------
// scattering
// ---------------------------------------------------------------------------

fn run_scattering(
    cfg: &RunConfig,
    em: &mut Emitter,
    failures: &mut Vec<PointFailure>,
) -> Result<Vec<CheckLine>> {
    let p = &cfg.params;
    let tol = cfg.tolerance("solver");
    let mut points = Vec::new();
    for &beta in &cfg.sweep.beta_axis(p.beta) {
        for &n in &cfg.sweep.n_axis(p.n_particles) {
            for &hbar in &cfg.sweep.hbar_axis(p.hbar) {
                points.push((beta, n, hbar));
            }
        }
    }

    let solved: Vec<_> = points
        .par_iter()
        .map(|&(beta, n, hbar)| {
            PhysicalParams::new(p.dim, n, hbar, beta, p.kappa, p.eta, p.v_profile)
                .and_then(|pp| solve_scattering(&pp, tol).map(|prof| (pp, prof)))
        })
        .collect();

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut sup_w = Vec::new();
    let mut sup_grad = Vec::new();
    let mut worst_disagreement = 0.0f64;
    let mut exported_profile = None;
    for ((beta, n, hbar), res) in points.iter().zip(solved) {
        match res {
            Ok((pp, prof)) => {
                let bounds = verify_scattering_bounds(&prof);
                let in_regime = pp.in_two_body_regime();
                rows.push(vec![
                    fmt(*beta),
                    n.to_string(),
                    fmt(*hbar),
                    fmt(pp.two_body_regime_parameter()),
                    in_regime.to_string(),
                    fmt(bounds.sup_w_product),
                    fmt(bounds.sup_grad_product),
                    fmt(prof.tail_coefficient),
                    fmt(prof.residual),
                    fmt(prof.path_disagreement),
                    prof.iterations.to_string(),
                ]);
                worst_disagreement = worst_disagreement.max(prof.path_disagreement);
                if in_regime {
                    sup_w.push(bounds.sup_w_product);
                    sup_grad.push(bounds.sup_grad_product);
                    if exported_profile.is_none() {
                        exported_profile = Some(prof);
                    }
                }
            }
            // Divergence of the fixed-point iteration is the expected
            // behavior past the contraction domain (strong coupling), so it
            // bounds the sweep instead of failing it; anything else is a
            // genuine fault at that point.
            Err(ModlimError::Convergence(why)) => skipped.push(vec![
                fmt(*beta),
                n.to_string(),
                fmt(*hbar),
                why,
            ]),
            Err(e) => failures.push(PointFailure {
                point: format!("beta={beta}, n_particles={n}, hbar={hbar}"),
                error: e.to_string(),
            }),
        }
    }
    if rows.is_empty() {
        let first = failures
            .first()
            .map(|f| f.error.clone())
            .or_else(|| skipped.first().map(|s| s[3].clone()))
            .unwrap_or_default();
        return Err(ModlimError::numerical(format!(
            "every scattering sweep point failed; first error: {first}"
        )));
    }
    if !skipped.is_empty() {
        em.write_csv("skipped.csv", &["beta", "n_particles", "hbar", "reason"], &skipped)?;
    }

    em.write_csv(
        "scattering_sweep.csv",
        &[
            "beta",
            "n_particles",
            "hbar",
            "lambda",
            "in_regime",
            "sup_w_product",
            "sup_grad_product",
            "tail_coefficient",
            "residual",
            "path_disagreement",
            "iterations",
        ],
        &rows,
    )?;
    if let Some(prof) = &exported_profile {
        let prows: Vec<Vec<String>> = prof
            .radii
            .iter()
            .zip(&prof.w_values)
            .zip(&prof.f_values)
            .zip(&prof.w_prime_values)
            .map(|(((r, w), f), wp)| vec![fmt(*r), fmt(*w), fmt(*f), fmt(*wp)])
            .collect();
        em.write_csv("profile.csv", &["r", "w", "f", "w_prime"], &prows)?;
        let xy: Vec<(f64, f64)> =
            prof.radii.iter().zip(&prof.w_values).map(|(r, w)| (*r, *w)).collect();
        em.write_plot("profile_w.dat", "r  w(r)", &xy)?;
    }

    let factor = cfg.tolerance("uniformity");
    let spread = |vals: &[f64]| {
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        format!("{} points in regime, range [{}, {}]", vals.len(), fmt(lo), fmt(hi))
    };
    let mut checks = Vec::new();
    checks.push(CheckLine::new(
        "bounds_uniform_w",
        !sup_w.is_empty() && uniform_within(&sup_w, factor, 1e-12),
        if sup_w.is_empty() {
            "no sweep point inside the smallness regime".into()
        } else {
            format!("N hbar^2 (r + N^-beta) w: {}", spread(&sup_w))
        },
    ));
    checks.push(CheckLine::new(
        "bounds_uniform_grad",
        !sup_grad.is_empty() && uniform_within(&sup_grad, factor, 1e-12),
        if sup_grad.is_empty() {
            "no sweep point inside the smallness regime".into()
        } else {
            format!("N hbar^2 (r^2 + N^-2beta) w': {}", spread(&sup_grad))
        },
    ));
    checks.push(CheckLine::new(
        "two_path_agreement",
        worst_disagreement <= 10.0 * tol,
        format!("worst ODE-vs-fixed-point gap {} (budget {})", fmt(worst_disagreement), fmt(10.0 * tol)),
    ));
    checks.push(CheckLine::new(
        "sweep_completed",
        failures.is_empty(),
        format!(
            "{} of {} points solved, {} beyond the contraction domain, {} faulted",
            rows.len(),
            points.len(),
            skipped.len(),
            failures.len()
        ),
    ));
    Ok(checks)
}

// ---------------------------------------------------------------------------
// euler
// ---------------------------------------------------------------------------

fn run_euler(
    cfg: &RunConfig,
    em: &mut Emitter,
    failures: &mut Vec<PointFailure>,
) -> Result<Vec<CheckLine>> {
    let grid = cfg.grid;
    if grid.n < 8 {
        return Err(ModlimError::config(
            "euler acoustics probes mode 2 and needs at least 8 points per axis",
        ));
    }
    let p = &cfg.params;
    let eps = cfg.tolerance("perturbation");
    let mode = 2.0;
    let k0 = 2.0 * PI / grid.length;
    let rho_bar = 1.0 / grid.length.powi(grid.dim as i32);

    let mut checks = Vec::new();
    let mut summaries = Vec::new();
    for &kappa in &cfg.sweep.kappa_axis(p.kappa) {
        let pp =
            PhysicalParams::new(p.dim, p.n_particles, p.hbar, p.beta, kappa, p.eta, p.v_profile)?;
        let init = FluidState::new(
            ScalarField::from_fn(grid, |x| rho_bar * (1.0 + eps * (mode * k0 * x[0]).cos())),
            VectorField { grid, comps: vec![vec![0.0; grid.points()]; grid.dim] },
            0.0,
        )?;
        let mut probe = vec![0i64; grid.dim];
        probe[0] = mode as i64;
        let opts = EulerOptions {
            store_every: cfg.store_every,
            probe_mode: Some(probe),
            ..Default::default()
        };
        let tag = format!("kappa{kappa}");
        let traj = match solve_euler_poisson_with(&init, &pp, cfg.t_end, cfg.dt, &opts, None) {
            Ok(t) => t,
            Err(e) => {
                failures
                    .push(PointFailure { point: format!("kappa={kappa}"), error: e.to_string() });
                continue;
            }
        };

        // The probe mode carries the standing wave; its predicted frequency
        // is the long-wave dispersion with pressure and Coulomb terms.
        let omega_pred =
            (pp.b0 * rho_bar * (mode * k0).powi(2) + 4.0 * PI * kappa * rho_bar).sqrt();
        let series: Vec<f64> = traj.probe_series.iter().map(|z| z.re).collect();
        let fitted = fit_single_mode_frequency(&series, cfg.dt)?;
        let rel_err = (fitted - omega_pred).abs() / omega_pred;
        let mass_drift = traj
            .states
            .iter()
            .map(|s| (s.rho.integral() - 1.0).abs())
            .fold(0.0, f64::max);
        let momentum_residual = momentum_form_residual(&traj, &pp)?;

        let rows: Vec<Vec<String>> = traj
            .states
            .iter()
            .map(|s| {
                vec![fmt(s.time), fmt(s.rho.integral()), fmt(s.rho.min()), fmt(s.u.max_norm())]
            })
            .collect();
        em.write_csv(
            &format!("series_{tag}.csv"),
            &["t", "mass", "min_rho", "max_u"],
            &rows,
        )?;
        let probe_rows: Vec<Vec<String>> = series
            .iter()
            .enumerate()
            .map(|(i, v)| vec![fmt((i + 1) as f64 * cfg.dt), fmt(*v)])
            .collect();
        em.write_csv(&format!("probe_{tag}.csv"), &["t", "re_coefficient"], &probe_rows)?;
        let xy: Vec<(f64, f64)> = series
            .iter()
            .enumerate()
            .map(|(i, v)| ((i + 1) as f64 * cfg.dt, *v))
            .collect();
        em.write_plot(&format!("probe_{tag}.dat"), "t  Re rho_hat(probe mode)", &xy)?;

        checks.push(CheckLine::new(
            format!("dispersion_{tag}"),
            rel_err <= cfg.tolerance("frequency"),
            format!("fitted {} vs predicted {} (rel err {})", fmt(fitted), fmt(omega_pred), fmt(rel_err)),
        ));
        checks.push(CheckLine::new(
            format!("mass_{tag}"),
            mass_drift <= cfg.tolerance("mass_drift"),
            format!("|mass - 1| peaks at {}", fmt(mass_drift)),
        ));
        summaries.push(json!({
            "kappa": kappa,
            "omega_predicted": omega_pred,
            "omega_fitted": fitted,
            "rel_err": rel_err,
            "mass_drift": mass_drift,
            "momentum_form_residual": momentum_residual,
        }));
    }
    if summaries.is_empty() {
        let first = failures.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(ModlimError::numerical(format!(
            "every euler run failed; first error: {first}"
        )));
    }
    em.write_json("acoustics.json", &summaries)?;
    Ok(checks)
}

// ---------------------------------------------------------------------------
// nls
// ---------------------------------------------------------------------------

fn run_nls(cfg: &RunConfig, em: &mut Emitter) -> Result<Vec<CheckLine>> {
    let grid = cfg.grid;
    let p = &cfg.params;
    let rho0 = smooth_density(grid);
    let s0 = smooth_phase(grid);
    let wf0 = wkb_initialize(&rho0, &s0, p.hbar)?;
    let opts = NlsOptions { variant: cfg.nls_variant, store_every: cfg.store_every };
    let traj = solve_nls_with(&wf0, p, cfg.t_end, cfg.dt, &opts)?;

    let e0 = traj.energies[0];
    let energy_rel_drift = traj.energy_drift() / e0.abs().max(1.0);
    let mut continuity = 0.0f64;
    for i in 1..traj.states.len().saturating_sub(1) {
        continuity = continuity.max(continuity_residual(&traj, i)?);
    }

    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .zip(&traj.energies)
        .map(|((t, s), e)| vec![fmt(*t), fmt(s.psi.abs2().integral()), fmt(*e)])
        .collect();
    em.write_csv("nls_series.csv", &["t", "mass", "energy"], &rows)?;

    let obs = traj.last().observables();
    let mut lineout = Vec::new();
    let mut xy = Vec::new();
    for i in 0..grid.n {
        let flat = lineout_index(grid, i);
        let x = i as f64 * grid.h();
        let mut row = vec![fmt(x), fmt(obs.rho_q.data[flat])];
        for comp in &obs.j_q.comps {
            row.push(fmt(comp[flat]));
        }
        xy.push((x, obs.rho_q.data[flat]));
        lineout.push(row);
    }
    let mut header = vec!["x".to_string(), "rho_q".to_string()];
    for d in 0..grid.dim {
        header.push(format!("j_q_{d}"));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    em.write_csv("final_lineout.csv", &header_refs, &lineout)?;
    em.write_plot("final_rho.dat", "x  rho_q on the axis-0 midline", &xy)?;
    em.write_json(
        "nls.json",
        &json!({
            "mass_drift": traj.mass_drift,
            "energy_initial": e0,
            "energy_rel_drift": energy_rel_drift,
            "continuity_residual_sup": continuity,
        }),
    )?;

    Ok(vec![
        CheckLine::new(
            "mass_conservation",
            traj.mass_drift <= cfg.tolerance("mass_drift"),
            format!("|mass - 1| peaks at {}", fmt(traj.mass_drift)),
        ),
        CheckLine::new(
            "energy_conservation",
            energy_rel_drift <= cfg.tolerance("energy_drift"),
            format!("relative drift {} over {} stored states", fmt(energy_rel_drift), traj.states.len()),
        ),
    ])
}

// ---------------------------------------------------------------------------
// nbody
// ---------------------------------------------------------------------------

fn run_nbody(cfg: &RunConfig, em: &mut Emitter) -> Result<Vec<CheckLine>> {
    let grid = cfg.grid;
    let p = &cfg.params;
    let profile = solve_scattering(p, cfg.tolerance("solver"))?;
    let corr = correlation_field(&profile, grid)?;
    let k0 = 2.0 * PI / grid.length;
    let phi = ComplexField::from_fn(grid, |x| {
        let mut mag = 1.0 + 0.3 * (k0 * x[0]).cos();
        let mut phase = 0.2 * (k0 * x[0]).sin();
        if grid.dim > 1 {
            mag += 0.1 * (k0 * x[1]).sin();
            phase += 0.1 * (k0 * x[1]).cos();
        }
        C64::from_polar(mag, phase)
    });
    let state0 = NBodyWaveFunction::correlated_product(&phi, &corr, p)?;
    let diag = two_body_energy_diagnostic(&state0, &profile)?;
    let traj = propagate_with(&state0, cfg.t_end, cfg.dt, &NBodyOptions {
        store_every: cfg.store_every,
    })?;
    let cons = conservation_identities(&traj)?;

    let rows: Vec<Vec<String>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .zip(&traj.energies)
        .map(|((t, s), e)| vec![fmt(*t), fmt(s.norm()), fmt(*e)])
        .collect();
    em.write_csv("nbody_series.csv", &["t", "norm", "energy"], &rows)?;

    let marg = marginals(traj.last())?;
    let mut xy = Vec::new();
    let mut rows = Vec::new();
    for i in 0..grid.n {
        let flat = lineout_index(grid, i);
        let x = i as f64 * grid.h();
        rows.push(vec![fmt(x), fmt(marg.rho1.data[flat])]);
        xy.push((x, marg.rho1.data[flat]));
    }
    em.write_csv("rho1_lineout.csv", &["x", "rho1"], &rows)?;
    em.write_plot("rho1.dat", "x  one-body density on the axis-0 midline", &xy)?;
    em.write_json(
        "conservation.json",
        &json!({
            "mass_residual": cons.mass_residual,
            "momentum_residual": cons.momentum_residual,
            "total_momentum_drift": cons.total_momentum_drift,
            "energy_drift": cons.energy_drift,
            "two_body_energy": {
                "lhs": diag.lhs,
                "rhs": diag.rhs,
                "ratio": diag.ratio,
                "regime_parameter": diag.regime_parameter,
                "in_regime": diag.in_regime,
            },
        }),
    )?;

    let two_body = if diag.in_regime {
        CheckLine::new(
            "two_body_energy",
            diag.ratio <= 1.0,
            format!("rhs/lhs = {} at lambda = {}", fmt(diag.ratio), fmt(diag.regime_parameter)),
        )
    } else {
        CheckLine::new(
            "two_body_energy",
            true,
            format!(
                "not tested: lambda = {} sits outside the smallness regime",
                fmt(diag.regime_parameter)
            ),
        )
    };
    Ok(vec![
        CheckLine::new(
            "total_momentum",
            cons.total_momentum_drift <= cfg.tolerance("momentum_drift"),
            format!("drift {}", fmt(cons.total_momentum_drift)),
        ),
        CheckLine::new(
            "norm_conservation",
            traj.mass_drift <= cfg.tolerance("mass_drift"),
            format!("|norm^2 - 1| peaks at {}", fmt(traj.mass_drift)),
        ),
        two_body,
    ])
}

// ---------------------------------------------------------------------------
// modenergy
// ---------------------------------------------------------------------------

fn run_modenergy(cfg: &RunConfig, em: &mut Emitter) -> Result<Vec<CheckLine>> {
    let p = &cfg.params;
    let (wf0, fluid0) = wkb_pair(cfg.grid, p.hbar)?;
    let reports = coupled_run_onebody(&wf0, &fluid0, p, cfg.t_end, cfg.dt, cfg.store_every)?;
    let identity = identity_residual(&reports)?;
    let gron = gronwall_check(&reports, p.hbar)?;
    let fineq = functional_inequality_check(&reports, p)?;

    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                fmt(r.t),
                fmt(r.m_k),
                fmt(r.f_delta),
                fmt(r.f_c),
                fmt(r.m_total),
                fmt(r.r_compensation),
                fmt(r.m_plus),
                fmt(r.quadratic_dot),
                fmt(r.semiclassical_dot),
                fmt(r.f_delta_dot),
                fmt(r.f_c_dot),
                fmt(r.rhs_total()),
            ]
        })
        .collect();
    em.write_csv(
        "modenergy_series.csv",
        &[
            "t",
            "m_k",
            "f_delta",
            "f_c",
            "m_total",
            "r_compensation",
            "m_plus",
            "quadratic_dot",
            "semiclassical_dot",
            "f_delta_dot",
            "f_c_dot",
            "rhs_total",
        ],
        &rows,
    )?;
    let xy: Vec<(f64, f64)> = reports.iter().map(|r| (r.t, r.m_total)).collect();
    em.write_plot("m_total.dat", "t  modulated energy", &xy)?;
    em.write_json(
        "modenergy.json",
        &json!({
            "identity_residual": identity,
            "gronwall": { "c": gron.c, "m_plus_min": gron.m_plus_min },
            "functional_inequality": {
                "c1": fineq.c1,
                "c2": fineq.c2,
                "in_regime": fineq.in_regime,
                "samples": fineq.samples,
            },
        }),
    )?;

    Ok(vec![
        CheckLine::new(
            "balance_identity",
            identity <= cfg.tolerance("identity_residual"),
            format!("centered dM/dt vs assembled RHS differs by {}", fmt(identity)),
        ),
        CheckLine::new(
            "gronwall_envelope",
            gron.m_plus_min >= -cfg.tolerance("m_plus_floor") && gron.c.is_finite(),
            format!("C = {}, min m_plus = {}", fmt(gron.c), fmt(gron.m_plus_min)),
        ),
        CheckLine::new(
            "functional_inequality",
            fineq.c1.is_finite() && fineq.c2.is_finite() && fineq.samples > 0,
            format!(
                "c1 = {}, c2 = {} over {} samples (in regime: {})",
                fmt(fineq.c1),
                fmt(fineq.c2),
                fineq.samples,
                fineq.in_regime
            ),
        ),
    ])
}

// ---------------------------------------------------------------------------
// rate-sweep
// ---------------------------------------------------------------------------

fn run_rate_sweep(cfg: &RunConfig, em: &mut Emitter) -> Result<Vec<CheckLine>> {
    let p = &cfg.params;
    let hbars = cfg.sweep.hbar_axis(p.hbar);
    if hbars.len() < 2 {
        return Err(ModlimError::config(
            "rate-sweep needs at least two hbar values (set sweep.hbar)",
        ));
    }
    // The quantum step shrinks with hbar unless the config pairs steps
    // explicitly; the fluid reference runs once at the base step.
    let dts: Vec<f64> = match &cfg.sweep.dt {
        Some(list) => list.clone(),
        None => hbars.iter().map(|h| cfg.dt * h / hbars[0]).collect(),
    };
    let rho0 = smooth_density(cfg.grid);
    let s0 = smooth_phase(cfg.grid);
    let out = rate_sweep(&rho0, &s0, p, &hbars, &dts, cfg.t_end, cfg.dt)?;

    let rows: Vec<Vec<String>> = out
        .records
        .iter()
        .map(|r| {
            vec![
                fmt(r.hbar),
                r.n_particles.to_string(),
                fmt(r.err_mass_l2_sq),
                fmt(r.err_momentum_l1),
                fmt(r.m0),
            ]
        })
        .collect();
    em.write_csv(
        "convergence_records.csv",
        &["hbar", "n_particles", "err_mass_l2_sq", "err_momentum_l1", "m0"],
        &rows,
    )?;
    let xy: Vec<(f64, f64)> =
        out.records.iter().map(|r| (r.hbar, r.err_mass_l2_sq)).collect();
    em.write_plot("mass_error.dat", "hbar  ||rho_psi - rho||_L2^2", &xy)?;
    em.write_json(
        "slope_fits.json",
        &json!({
            "mass_fit": {
                "slope": out.mass_fit.slope,
                "intercept": out.mass_fit.intercept,
                "r2": out.mass_fit.r2,
            },
            "momentum_fit": {
                "slope": out.momentum_fit.slope,
                "intercept": out.momentum_fit.intercept,
                "r2": out.momentum_fit.r2,
            },
            "excluded_hbars": out.excluded_hbars,
        }),
    )?;

    Ok(vec![
        CheckLine::new(
            "mass_rate",
            out.mass_fit.slope >= cfg.tolerance("mass_slope"),
            format!(
                "||rho_psi - rho||^2 ~ hbar^{} (r2 {}), threshold {}",
                fmt(out.mass_fit.slope),
                fmt(out.mass_fit.r2),
                fmt(cfg.tolerance("mass_slope"))
            ),
        ),
        CheckLine::new(
            "momentum_rate",
            out.momentum_fit.slope >= cfg.tolerance("momentum_slope"),
            format!(
                "||j_psi - rho u||_L1 ~ hbar^{} (r2 {}), threshold {}",
                fmt(out.momentum_fit.slope),
                fmt(out.momentum_fit.r2),
                fmt(cfg.tolerance("momentum_slope"))
            ),
        ),
    ])
}

// ---------------------------------------------------------------------------
// verify-lemmas
// ---------------------------------------------------------------------------

fn run_verify_lemmas(cfg: &RunConfig, em: &mut Emitter) -> Result<Vec<CheckLine>> {
    let p = &cfg.params;
    let lm = &cfg.lemmas;
    let mut reports: Vec<(String, InequalityReport)> = Vec::new();

    for &s in &lm.s_orders {
        let rep = verify_mollifier_rate(&p.v_profile, p.beta, s, lm.p, lm.trials, cfg.seed)?;
        reports.push((format!("mollifier_rate_s{s}"), rep));
    }
    reports.push((
        "operator_bounds".into(),
        verify_operator_inequalities(p, lm.band as i64, lm.trials, cfg.seed)?,
    ));
    let moll = match p.v_profile {
        VProfile::Bump { amplitude, radius } => MollifierProfile::Bump { amplitude, radius },
        VProfile::Zero => {
            return Err(ModlimError::config(
                "the pairing-decay suite needs a nonzero potential profile",
            ))
        }
    };
    for &theta in &lm.thetas {
        let rep = verify_poincare(&moll, theta, lm.trials, cfg.seed)?;
        reports.push((format!("poincare_pairing_theta{theta}"), rep));
    }

    // The cancellation sweep runs on a fixed coarse velocity lattice: the
    // defect is a lattice-local correlation term, so resolution beyond a few
    // modes only adds cost.
    let ugrid = GridSpec::new(3, 16, cfg.grid.length)?;
    let k0 = 2.0 * PI / ugrid.length;
    let u = VectorField::from_fn(ugrid, |x| {
        (0..3)
            .map(|d| (k0 * x[d]).sin() + 0.3 * (k0 * x[(d + 1) % 3]).cos())
            .collect()
    });
    reports.push((
        "transport_cancellation".into(),
        verify_cancellation_structure(&u, p, &lm.transport_sizes, lm.trials, cfg.seed)?,
    ));

    let rho = smooth_density(cfg.grid);
    let weight = ScalarField::from_fn(cfg.grid, |x| {
        let k0 = 2.0 * PI / cfg.grid.length;
        (k0 * x[0]).cos() + 0.5 * (k0 * x[if cfg.grid.dim > 1 { 1 } else { 0 }]).sin()
    });
    reports.push((
        "reduced_localization".into(),
        verify_reduced_inequality(&rho, &weight, p, &lm.bracket_sizes, lm.trials, cfg.seed)?,
    ));
    let law = {
        let k0 = 2.0 * PI / cfg.grid.length;
        let mut f = ScalarField::from_fn(cfg.grid, |x| 1.0 + 0.3 * (k0 * x[0]).sin());
        let mass = f.integral();
        for v in &mut f.data {
            *v /= mass;
        }
        f
    };
    reports.push((
        "pair_lower_bound".into(),
        verify_two_body_lower(&rho, &law, p, &lm.bracket_sizes, lm.trials, cfg.seed)?,
    ));

    let mut checks = Vec::new();
    let mut index = Vec::new();
    for (key, rep) in &reports {
        let file = format!("lemma_{key}.json");
        em.write_json(&file, rep)?;
        index.push(json!({ "file": file, "name": key, "pass": rep.pass }));
        let mut detail = format!("worst ratio {}", fmt(rep.worst_ratio));
        if let Some(rate) = rep.fitted_rate {
            detail.push_str(&format!(", fitted rate {}", fmt(rate)));
        }
        detail.push_str(&format!(" ({} trials, {} excluded)", rep.trials, rep.excluded));
        checks.push(CheckLine::new(key.clone(), rep.pass, detail));
    }
    em.write_json(
        "summary.json",
        &json!({
            "pass": checks.iter().all(|c| c.pass),
            "suites": index,
        }),
    )?;
    Ok(checks)
}
