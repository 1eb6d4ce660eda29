//! Run configuration: TOML schema, defaults, flag overrides, validation.
//!
//! A run is described by a TOML document merged over per-experiment defaults,
//! then optionally patched by `--set key=value` flags. Validation is
//! all-at-once: every unknown key, type mismatch, and range violation in the
//! document is reported in a single error rather than one per invocation.
//!
//! # Schema
//!
//! ```toml
//! seed = 0                      # RNG seed; `--seed` overrides
//!
//! [grid]
//! dim = 3                       # 1..=3
//! n = 32                        # points per axis, power of two
//! length = 6.283185307179586    # box edge (default 2 pi)
//!
//! [params]
//! n_particles = 64
//! hbar = 0.25
//! beta = 0.5                    # interaction scaling exponent, in (0, 1)
//! kappa = 0.0                   # Coulomb coupling, >= 0
//! eta = 0.25                    # mollifier exponent, in (0, 1/3)
//!
//! [params.potential]
//! kind = "bump"                 # "bump" | "zero"
//! amplitude = 1.0
//! radius = 1.0
//!
//! [times]
//! t_end = 0.25                  # must be a whole number of steps
//! dt = 0.005
//!
//! [sweep]                       # optional; absent axis = single point from [params]
//! hbar = [0.25, 0.125]          # present lists must be nonempty
//! n_particles = [64, 256]
//! beta = [0.2, 0.5, 0.8]
//! kappa = [0.0, 1.0]
//! dt = [0.005, 0.0025]          # pairs with sweep.hbar (rate studies only)
//!
//! [output]
//! dir = ""                      # "" = out/<experiment>; `--out` overrides
//! store_every = 1               # snapshot stride in steps
//! workers = 0                   # sweep parallelism; 0 = all cores,
//!                               # MODLIM_WORKERS overrides
//!
//! [nls]
//! variant = "local-delta"       # "local-delta" | "mollified-hartree"
//!
//! [lemmas]                      # verify-lemmas experiment only
//! s = [0.5, 1.0]                # smoothing orders, each in [0, 1]
//! p = 2.0                       # Lebesgue exponent, in (1, inf)
//! theta = [0.2, 0.4]            # pairing-decay exponents, each in (0, 0.5)
//! band = 1                      # frequency band for the operator suite
//! trials = 120                  # randomized trials per suite
//! transport_sizes = [...]       # particle numbers for the cancellation suite
//! bracket_sizes = [...]         # particle numbers for the bracket suites
//! ```
//!
//! # Tolerances
//!
//! `[tolerances]` is a map of named thresholds. Every name an experiment
//! reads has a documented default, so a minimal config runs as-is:
//!
//! | name                | default | used by                                   |
//! |---------------------|---------|-------------------------------------------|
//! | `solver`            | 1e-10   | scattering fixed-point residual            |
//! | `mass_drift`        | 1e-8    | euler / nls mass conservation              |
//! | `momentum_drift`    | 1e-8    | nbody total momentum conservation          |
//! | `frequency`         | 0.01    | euler dispersion relative error            |
//! | `perturbation`      | 1e-4    | euler acoustic probe amplitude             |
//! | `energy_drift`      | 1e-5    | nls relative energy drift                  |
//! | `mass_slope`        | 1.8     | rate-sweep density convergence order       |
//! | `momentum_slope`    | 0.9     | rate-sweep current convergence order       |
//! | `uniformity`        | 2.0     | scattering sup-bound spread factor         |
//! | `m_plus_floor`      | 1e-9    | modenergy positive-part tolerance          |
//! | `identity_residual` | 1e-3    | modenergy balance-law sanity bound         |

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use toml::{Table, Value};

use crate::error::{ModlimError, Result};
use crate::grid::GridSpec;
use crate::nls::NlsVariant;
use crate::params::PhysicalParams;
use crate::potential::VProfile;

/// The seven runnable experiments, named as on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Scattering,
    Euler,
    Nls,
    Nbody,
    Modenergy,
    RateSweep,
    VerifyLemmas,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Scattering,
        Experiment::Euler,
        Experiment::Nls,
        Experiment::Nbody,
        Experiment::Modenergy,
        Experiment::RateSweep,
        Experiment::VerifyLemmas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Scattering => "scattering",
            Experiment::Euler => "euler",
            Experiment::Nls => "nls",
            Experiment::Nbody => "nbody",
            Experiment::Modenergy => "modenergy",
            Experiment::RateSweep => "rate-sweep",
            Experiment::VerifyLemmas => "verify-lemmas",
        }
    }

    pub fn from_name(name: &str) -> Result<Experiment> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                ModlimError::config(format!(
                    "unknown experiment `{name}`; expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

/// Optional sweep axes. An absent axis means the single value from
/// `[params]`; a present axis must be a nonempty list.
#[derive(Clone, Debug, Default)]
pub struct SweepRanges {
    pub hbar: Option<Vec<f64>>,
    pub n_particles: Option<Vec<usize>>,
    pub beta: Option<Vec<f64>>,
    pub kappa: Option<Vec<f64>>,
    /// Quantum step per `hbar` entry (rate studies). Absent = scale the
    /// base `times.dt` proportionally to `hbar`.
    pub dt: Option<Vec<f64>>,
}

impl SweepRanges {
    pub fn hbar_axis(&self, fallback: f64) -> Vec<f64> {
        self.hbar.clone().unwrap_or_else(|| vec![fallback])
    }

    pub fn n_axis(&self, fallback: usize) -> Vec<usize> {
        self.n_particles.clone().unwrap_or_else(|| vec![fallback])
    }

    pub fn beta_axis(&self, fallback: f64) -> Vec<f64> {
        self.beta.clone().unwrap_or_else(|| vec![fallback])
    }

    pub fn kappa_axis(&self, fallback: f64) -> Vec<f64> {
        self.kappa.clone().unwrap_or_else(|| vec![fallback])
    }

    /// Number of points in the cartesian product of the present axes.
    pub fn plan_points(&self) -> usize {
        let len = |v: &Option<Vec<_>>| v.as_ref().map_or(1, Vec::len);
        let lens = [
            self.hbar.as_ref().map_or(1, Vec::len),
            len(&self.n_particles),
            self.beta.as_ref().map_or(1, Vec::len),
            self.kappa.as_ref().map_or(1, Vec::len),
        ];
        lens.iter().product()
    }
}

/// Inputs for the `verify-lemmas` suites.
#[derive(Clone, Debug)]
pub struct LemmaSettings {
    pub s_orders: Vec<f64>,
    pub p: f64,
    pub thetas: Vec<f64>,
    pub band: usize,
    pub trials: usize,
    pub transport_sizes: Vec<usize>,
    pub bracket_sizes: Vec<usize>,
}

/// A fully validated run description.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub grid: GridSpec,
    pub params: PhysicalParams,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub store_every: usize,
    /// Sweep parallelism; 0 means "all available cores".
    pub workers: usize,
    pub sweep: SweepRanges,
    pub lemmas: LemmaSettings,
    pub nls_variant: NlsVariant,
    pub tolerances: BTreeMap<String, f64>,
}

impl RunConfig {
    /// Look up a named tolerance. Defaults guarantee every documented name
    /// is present, so a miss is a programming error, not a user error.
    pub fn tolerance(&self, name: &str) -> f64 {
        *self
            .tolerances
            .get(name)
            .unwrap_or_else(|| panic!("tolerance `{name}` missing from defaults"))
    }
}

/// Documented tolerance names with their defaults (see module docs).
pub const TOLERANCE_DEFAULTS: &[(&str, f64)] = &[
    ("solver", 1e-10),
    ("mass_drift", 1e-8),
    ("momentum_drift", 1e-8),
    ("frequency", 0.01),
    ("perturbation", 1e-4),
    ("energy_drift", 1e-5),
    ("mass_slope", 1.8),
    ("momentum_slope", 0.9),
    ("uniformity", 2.0),
    ("m_plus_floor", 1e-9),
    ("identity_residual", 1e-3),
];

/// Every key a config document may define (dotted paths).
const ALLOWED_KEYS: &[&str] = &[
    "seed",
    "grid.dim",
    "grid.n",
    "grid.length",
    "params.n_particles",
    "params.hbar",
    "params.beta",
    "params.kappa",
    "params.eta",
    "params.potential.kind",
    "params.potential.amplitude",
    "params.potential.radius",
    "times.t_end",
    "times.dt",
    "sweep.hbar",
    "sweep.n_particles",
    "sweep.beta",
    "sweep.kappa",
    "sweep.dt",
    "output.dir",
    "output.store_every",
    "output.workers",
    "nls.variant",
    "lemmas.s",
    "lemmas.p",
    "lemmas.theta",
    "lemmas.band",
    "lemmas.trials",
    "lemmas.transport_sizes",
    "lemmas.bracket_sizes",
    "tolerances.solver",
    "tolerances.mass_drift",
    "tolerances.momentum_drift",
    "tolerances.frequency",
    "tolerances.perturbation",
    "tolerances.energy_drift",
    "tolerances.mass_slope",
    "tolerances.momentum_slope",
    "tolerances.uniformity",
    "tolerances.m_plus_floor",
    "tolerances.identity_residual",
];

/// Baseline defaults shared by every experiment.
const DEFAULTS_COMMON: &str = r#"
seed = 0

[grid]
dim = 3
n = 32
length = 6.283185307179586

[params]
n_particles = 64
hbar = 0.25
beta = 0.5
kappa = 0.0
eta = 0.25

[params.potential]
kind = "bump"
amplitude = 1.0
radius = 1.0

[times]
t_end = 0.25
dt = 0.005

[output]
dir = ""
store_every = 1
workers = 0

[nls]
variant = "local-delta"

[lemmas]
s = [0.5, 1.0]
p = 2.0
theta = [0.2, 0.4]
band = 1
trials = 120
transport_sizes = [16777216, 33554432, 67108864, 134217728, 268435456, 536870912]
bracket_sizes = [64, 128, 256, 512]
"#;

/// Per-experiment overrides merged over [`DEFAULTS_COMMON`].
fn experiment_overlay(experiment: Experiment) -> &'static str {
    match experiment {
        // Three-axis sweep across the smallness regime; each point is one
        // radial fixed-point solve.
        Experiment::Scattering => {
            r#"
[sweep]
beta = [0.2, 0.5, 0.8]
n_particles = [64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384]
hbar = [0.25, 0.125, 0.0625, 0.03125]
"#
        }
        // Standing acoustic wave: 80 steps cover two periods of the slowest
        // probe mode for both kappa values.
        Experiment::Euler => {
            r#"
[times]
t_end = 48.0
dt = 0.6

[sweep]
kappa = [0.0, 1.0]

[output]
store_every = 8
"#
        }
        Experiment::Nls => {
            r#"
[times]
t_end = 0.25
dt = 0.0025

[output]
store_every = 10
"#
        }
        // Two particles on a line with the correlation structure resolved;
        // hbar large enough that the smallness parameter stays below 0.1.
        Experiment::Nbody => {
            r#"
[grid]
dim = 1
n = 64

[params]
n_particles = 2
hbar = 3.0
eta = 0.2

[times]
t_end = 0.2
dt = 0.004

[output]
store_every = 5
"#
        }
        // One-body coupled run; N only enters through the compensator and
        // the mollified functionals, so a large count costs nothing.
        Experiment::Modenergy => {
            r#"
[grid]
dim = 1
n = 64

[params]
n_particles = 4096
hbar = 0.5
eta = 0.2

[times]
t_end = 0.24
dt = 0.004

[output]
store_every = 6
"#
        }
        Experiment::RateSweep => {
            r#"
[grid]
dim = 1
n = 128

[params]
n_particles = 4096
hbar = 0.125
eta = 0.2

[times]
t_end = 0.2
dt = 0.002

[sweep]
hbar = [0.125, 0.0625, 0.03125]
"#
        }
        Experiment::VerifyLemmas => {
            r#"
[params]
n_particles = 1024
hbar = 0.5
"#
        }
    }
}

/// Parse and validate a config document for `experiment`.
///
/// Returns the fully resolved [`RunConfig`] (defaults filled in) or a single
/// `Config` error listing every problem found.
pub fn parse_config(experiment: Experiment, text: &str) -> Result<RunConfig> {
    parse_config_with_overrides(experiment, text, &[])
}

/// [`parse_config`] plus `--set key=value` patches applied before
/// validation, so a bad override is reported exactly like a bad file entry.
pub fn parse_config_with_overrides(
    experiment: Experiment,
    text: &str,
    sets: &[String],
) -> Result<RunConfig> {
    let mut user: Table = text
        .parse()
        .map_err(|e| ModlimError::config(format!("TOML syntax: {e}")))?;

    let mut errors: Vec<String> = Vec::new();
    for raw in sets {
        if let Err(msg) = apply_set(&mut user, raw) {
            errors.push(msg);
        }
    }

    collect_unknown_keys(&user, "", &mut errors);

    let mut tree = defaults_tree(experiment);
    merge_value(&mut tree, &user);

    let config = extract(experiment, &tree, &mut errors);
    match config {
        Some(cfg) if errors.is_empty() => Ok(cfg),
        _ => {
            errors.sort();
            errors.dedup();
            Err(ModlimError::config(format!(
                "{} problem(s) in the run configuration:\n  - {}",
                errors.len(),
                errors.join("\n  - ")
            )))
        }
    }
}

/// Fully merged defaults for one experiment.
fn defaults_tree(experiment: Experiment) -> Table {
    let mut base: Table = DEFAULTS_COMMON.parse().expect("baseline defaults parse");
    let mut tolerances = Table::new();
    for (name, value) in TOLERANCE_DEFAULTS {
        tolerances.insert((*name).to_string(), Value::Float(*value));
    }
    base.insert("tolerances".to_string(), Value::Table(tolerances));
    let overlay: Table =
        experiment_overlay(experiment).parse().expect("experiment defaults parse");
    merge_value(&mut base, &overlay);
    base
}

/// Deep-merge `over` into `base`: tables recurse, everything else (arrays
/// included) replaces wholesale.
fn merge_value(base: &mut Table, over: &Table) {
    for (key, value) in over {
        match (base.get_mut(key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge_value(b, o),
            (Some(slot), v) => *slot = v.clone(),
            (None, v) => {
                base.insert(key.clone(), v.clone());
            }
        }
    }
}

/// Apply one `key=value` override. The value is parsed as TOML when it is
/// well-formed (`3`, `1.5e-3`, `[1, 2]`, `"x"`); anything else is taken as
/// a bare string, so `--set output.dir=results` needs no quoting.
fn apply_set(tree: &mut Table, raw: &str) -> std::result::Result<(), String> {
    let Some((path, text)) = raw.split_once('=') else {
        return Err(format!("override `{raw}` is not of the form key=value"));
    };
    let path = path.trim();
    if path.is_empty() || path.split('.').any(|seg| seg.is_empty()) {
        return Err(format!("override `{raw}` has an empty key segment"));
    }
    let value = match format!("v = {}", text.trim()).parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed override holds key v"),
        Err(_) => Value::String(text.trim().to_string()),
    };

    let mut node = tree;
    let segments: Vec<&str> = path.split('.').collect();
    for seg in &segments[..segments.len() - 1] {
        let slot = node
            .entry(seg.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        if !slot.is_table() {
            *slot = Value::Table(Table::new());
        }
        node = slot.as_table_mut().expect("just ensured a table");
    }
    node.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Flag every key that is not part of the documented schema. Tables recurse;
/// a leaf sitting where the schema expects a table (or vice versa) surfaces
/// as a type error during extraction instead.
fn collect_unknown_keys(table: &Table, prefix: &str, errors: &mut Vec<String>) {
    for (key, value) in table {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        let exact = ALLOWED_KEYS.contains(&path.as_str());
        let is_prefix = ALLOWED_KEYS.iter().any(|k| {
            k.len() > path.len() + 1 && k.starts_with(&path) && k.as_bytes()[path.len()] == b'.'
        });
        match value {
            Value::Table(inner) if is_prefix => collect_unknown_keys(inner, &path, errors),
            _ if exact => {}
            _ => {
                let head = path.split('.').next().unwrap_or(&path);
                let known: Vec<&str> = ALLOWED_KEYS
                    .iter()
                    .filter(|k| k.starts_with(head) && **k != path)
                    .map(|k| k.rsplit('.').next().unwrap_or(k))
                    .collect();
                if is_prefix || known.is_empty() {
                    errors.push(format!("unknown key `{path}`"));
                } else {
                    errors.push(format!(
                        "unknown key `{path}` (keys under `{head}`: {})",
                        known.join(", ")
                    ));
                }
            }
        }
    }
}

/// Typed extraction from the merged tree, accumulating errors instead of
/// stopping at the first.
struct Extract<'a> {
    root: &'a Table,
    errors: Vec<String>,
}

impl<'a> Extract<'a> {
    fn value(&self, path: &str) -> Option<&'a Value> {
        let mut node = self.root;
        let mut segments = path.split('.').peekable();
        while let Some(seg) = segments.next() {
            let v = node.get(seg)?;
            if segments.peek().is_none() {
                return Some(v);
            }
            node = v.as_table()?;
        }
        None
    }

    fn type_error(&mut self, path: &str, want: &str, got: &Value) {
        let kind = match got {
            Value::String(_) => "a string",
            Value::Integer(_) => "an integer",
            Value::Float(_) => "a float",
            Value::Boolean(_) => "a boolean",
            Value::Datetime(_) => "a datetime",
            Value::Array(_) => "an array",
            Value::Table(_) => "a table",
        };
        self.errors.push(format!("`{path}` expects {want}, found {kind}"));
    }

    fn f64_at(&mut self, path: &str) -> Option<f64> {
        match self.value(path) {
            Some(Value::Float(f)) => Some(*f),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(other) => {
                let other = other.clone();
                self.type_error(path, "a number", &other);
                None
            }
            None => {
                self.errors.push(format!("missing required key `{path}`"));
                None
            }
        }
    }

    fn usize_at(&mut self, path: &str) -> Option<usize> {
        match self.value(path) {
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as usize),
            Some(Value::Integer(i)) => {
                self.errors.push(format!("`{path}` must be nonnegative, got {i}"));
                None
            }
            Some(other) => {
                let other = other.clone();
                self.type_error(path, "a nonnegative integer", &other);
                None
            }
            None => {
                self.errors.push(format!("missing required key `{path}`"));
                None
            }
        }
    }

    fn str_at(&mut self, path: &str) -> Option<String> {
        match self.value(path) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                let other = other.clone();
                self.type_error(path, "a string", &other);
                None
            }
            None => {
                self.errors.push(format!("missing required key `{path}`"));
                None
            }
        }
    }

    /// A present-and-nonempty list of numbers, `None` when the key is absent.
    fn f64_list_at(&mut self, path: &str) -> Option<Vec<f64>> {
        let items = match self.value(path) {
            Some(Value::Array(a)) => a.clone(),
            Some(other) => {
                let other = other.clone();
                self.type_error(path, "an array of numbers", &other);
                return None;
            }
            None => return None,
        };
        if items.is_empty() {
            self.errors.push(format!("`{path}` must be a nonempty list"));
            return None;
        }
        let mut out = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            match item {
                Value::Float(f) => out.push(*f),
                Value::Integer(n) => out.push(*n as f64),
                other => {
                    self.type_error(&format!("{path}[{i}]"), "a number", other);
                    return None;
                }
            }
        }
        Some(out)
    }

    fn usize_list_at(&mut self, path: &str) -> Option<Vec<usize>> {
        let items = self.f64_list_at(path)?;
        let mut out = Vec::with_capacity(items.len());
        for (i, v) in items.iter().enumerate() {
            if *v >= 1.0 && v.fract() == 0.0 {
                out.push(*v as usize);
            } else {
                self.errors.push(format!("`{path}[{i}]` must be a positive integer, got {v}"));
                return None;
            }
        }
        Some(out)
    }
}

/// Build the typed config, pushing every violation onto `errors`. Returns
/// `None` when any field failed extraction.
fn extract(experiment: Experiment, tree: &Table, errors: &mut Vec<String>) -> Option<RunConfig> {
    let mut ex = Extract { root: tree, errors: std::mem::take(errors) };

    let seed = match ex.value("seed") {
        Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
        Some(Value::Integer(i)) => {
            ex.errors.push(format!("`seed` must be nonnegative, got {i}"));
            None
        }
        Some(other) => {
            let other = other.clone();
            ex.type_error("seed", "a nonnegative integer", &other);
            None
        }
        None => Some(0),
    };

    let dim = ex.usize_at("grid.dim");
    let n = ex.usize_at("grid.n");
    let length = ex.f64_at("grid.length");
    let grid = match (dim, n, length) {
        (Some(d), Some(n), Some(l)) => match GridSpec::new(d, n, l) {
            Ok(g) => Some(g),
            Err(e) => {
                ex.errors.push(format!("grid: {e}"));
                None
            }
        },
        _ => None,
    };

    let n_particles = ex.usize_at("params.n_particles");
    let hbar = ex.f64_at("params.hbar");
    let beta = ex.f64_at("params.beta");
    let kappa = ex.f64_at("params.kappa");
    let eta = ex.f64_at("params.eta");
    let v_profile = extract_potential(&mut ex);
    let params = match (n_particles, hbar, beta, kappa, eta, v_profile, dim) {
        (Some(np), Some(h), Some(b), Some(k), Some(et), Some(v), Some(d)) => {
            match PhysicalParams::new(d, np, h, b, k, et, v) {
                Ok(p) => Some(p),
                Err(e) => {
                    ex.errors.push(format!("params: {e}"));
                    None
                }
            }
        }
        _ => None,
    };

    let t_end = ex.f64_at("times.t_end");
    let dt = ex.f64_at("times.dt");
    if let (Some(t_end), Some(dt)) = (t_end, dt) {
        if dt <= 0.0 {
            ex.errors.push(format!("`times.dt` must be positive, got {dt}"));
        } else if t_end <= 0.0 {
            ex.errors.push(format!("`times.t_end` must be positive, got {t_end}"));
        } else {
            let steps = (t_end / dt).round();
            if steps < 1.0 || (steps * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
                ex.errors.push(format!(
                    "`times.dt` = {dt} does not divide `times.t_end` = {t_end} \
                     into a whole number of steps"
                ));
            }
        }
    }

    let sweep = extract_sweep(&mut ex);
    let lemmas = extract_lemmas(&mut ex);

    let out_dir = ex.str_at("output.dir");
    let store_every = ex.usize_at("output.store_every");
    if let Some(s) = store_every {
        if s == 0 {
            ex.errors.push("`output.store_every` must be at least 1".into());
        } else if experiment == Experiment::Modenergy {
            if let (Some(t_end), Some(dt)) = (t_end, dt) {
                let steps = (t_end / dt).round() as usize;
                if steps > 0 && steps % s != 0 {
                    ex.errors.push(format!(
                        "`output.store_every` = {s} must divide the {steps} steps \
                         of a modenergy run"
                    ));
                }
            }
        }
    }
    let workers = ex.usize_at("output.workers");
    if let Some(w) = workers {
        if w > 4096 {
            ex.errors.push(format!("`output.workers` = {w} is not a plausible core count"));
        }
    }

    let variant = match ex.str_at("nls.variant").as_deref() {
        Some("local-delta") => Some(NlsVariant::LocalDelta),
        Some("mollified-hartree") => Some(NlsVariant::MollifiedHartree),
        Some(other) => {
            ex.errors.push(format!(
                "`nls.variant` must be \"local-delta\" or \"mollified-hartree\", got \"{other}\""
            ));
            None
        }
        None => None,
    };

    let mut tolerances = BTreeMap::new();
    for (name, _default) in TOLERANCE_DEFAULTS {
        let path = format!("tolerances.{name}");
        if let Some(v) = ex.f64_at(&path) {
            if v > 0.0 {
                tolerances.insert((*name).to_string(), v);
            } else {
                ex.errors.push(format!("`{path}` must be positive, got {v}"));
            }
        }
    }

    *errors = ex.errors;
    let experiment_dir = PathBuf::from(format!("out/{}", experiment.name()));
    let output_dir = match out_dir {
        Some(s) if s.is_empty() => experiment_dir,
        Some(s) => PathBuf::from(s),
        None => experiment_dir,
    };

    if !errors.is_empty() {
        return None;
    }
    Some(RunConfig {
        experiment,
        grid: grid?,
        params: params?,
        t_end: t_end?,
        dt: dt?,
        seed: seed?,
        output_dir,
        store_every: store_every?,
        workers: workers?,
        sweep,
        lemmas: lemmas?,
        nls_variant: variant?,
        tolerances,
    })
}

fn extract_potential(ex: &mut Extract) -> Option<VProfile> {
    let kind = ex.str_at("params.potential.kind")?;
    let amplitude = ex.f64_at("params.potential.amplitude")?;
    let radius = ex.f64_at("params.potential.radius")?;
    match kind.as_str() {
        "bump" => {
            let mut ok = true;
            if amplitude <= 0.0 {
                ex.errors.push(format!(
                    "`params.potential.amplitude` must be positive for a bump, got {amplitude}"
                ));
                ok = false;
            }
            if radius <= 0.0 {
                ex.errors.push(format!(
                    "`params.potential.radius` must be positive for a bump, got {radius}"
                ));
                ok = false;
            }
            ok.then(|| VProfile::bump(amplitude, radius))
        }
        "zero" => Some(VProfile::Zero),
        other => {
            ex.errors.push(format!(
                "`params.potential.kind` must be \"bump\" or \"zero\", got \"{other}\""
            ));
            None
        }
    }
}

fn extract_sweep(ex: &mut Extract) -> SweepRanges {
    let hbar = ex.f64_list_at("sweep.hbar");
    if let Some(list) = &hbar {
        for v in list {
            if *v <= 0.0 {
                ex.errors.push(format!("`sweep.hbar` entries must be positive, got {v}"));
            }
        }
    }
    let beta = ex.f64_list_at("sweep.beta");
    if let Some(list) = &beta {
        for v in list {
            if !(*v > 0.0 && *v < 1.0) {
                ex.errors
                    .push(format!("`sweep.beta` entries must lie in (0, 1), got {v}"));
            }
        }
    }
    let kappa = ex.f64_list_at("sweep.kappa");
    if let Some(list) = &kappa {
        for v in list {
            if *v < 0.0 {
                ex.errors.push(format!("`sweep.kappa` entries must be nonnegative, got {v}"));
            }
        }
    }
    let dt = ex.f64_list_at("sweep.dt");
    if let Some(list) = &dt {
        for v in list {
            if *v <= 0.0 {
                ex.errors.push(format!("`sweep.dt` entries must be positive, got {v}"));
            }
        }
        match &hbar {
            Some(h) if h.len() == list.len() => {}
            Some(h) => ex.errors.push(format!(
                "`sweep.dt` has {} entries but `sweep.hbar` has {}; they pair one-to-one",
                list.len(),
                h.len()
            )),
            None => ex
                .errors
                .push("`sweep.dt` is only meaningful alongside `sweep.hbar`".into()),
        }
    }
    SweepRanges {
        hbar,
        n_particles: ex.usize_list_at("sweep.n_particles"),
        beta,
        kappa,
        dt,
    }
}

fn extract_lemmas(ex: &mut Extract) -> Option<LemmaSettings> {
    let s_orders = ex.f64_list_at("lemmas.s");
    if let Some(list) = &s_orders {
        for v in list {
            if !(0.0..=1.0).contains(v) {
                ex.errors.push(format!("`lemmas.s` entries must lie in [0, 1], got {v}"));
            }
        }
    }
    let p = ex.f64_at("lemmas.p");
    if let Some(p) = p {
        if p <= 1.0 {
            ex.errors.push(format!("`lemmas.p` must exceed 1, got {p}"));
        }
    }
    let thetas = ex.f64_list_at("lemmas.theta");
    if let Some(list) = &thetas {
        for v in list {
            if !(*v > 0.0 && *v < 0.5) {
                ex.errors.push(format!("`lemmas.theta` entries must lie in (0, 0.5), got {v}"));
            }
        }
    }
    let band = ex.usize_at("lemmas.band");
    if let Some(b) = band {
        if b == 0 {
            ex.errors.push("`lemmas.band` must be at least 1".into());
        }
    }
    let trials = ex.usize_at("lemmas.trials");
    if let Some(t) = trials {
        if t == 0 {
            ex.errors.push("`lemmas.trials` must be at least 1".into());
        }
    }
    let transport_sizes = ex.usize_list_at("lemmas.transport_sizes");
    let bracket_sizes = ex.usize_list_at("lemmas.bracket_sizes");
    Some(LemmaSettings {
        s_orders: s_orders?,
        p: p?,
        thetas: thetas?,
        band: band?,
        trials: trials?,
        transport_sizes: transport_sizes?,
        bracket_sizes: bracket_sizes?,
    })
}
