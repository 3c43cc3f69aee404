//! TOML run configuration and its translation into core objects.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chemostab_core::coefficients::TimeDependence;
use chemostab_core::stability::{Constant, KnownConstants};
use chemostab_core::{
    CoefficientSet, CoefficientSpec, Field, Grid, ModelParams, ModelState, SpatialProfile, StepperConfig,
    TimeProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Base seed for `random-positive` profiles without their own seed.
    #[serde(default)]
    pub random_seed: u64,
    pub grid: GridConfig,
    pub params: ParamsConfig,
    pub coefficients: CoefficientsConfig,
    pub initial: InitialState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<InitialState>,
    #[serde(default)]
    pub stepper: StepperSection,
    pub time: TimeConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub extents: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub chi: f64,
    pub tau: f64,
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub a0: CoefficientConfig,
    pub a1: CoefficientConfig,
    pub a2: CoefficientConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientKindName {
    Constant,
    Sinusoid,
    ExpDecay,
    Table,
}

/// `a(t, x) = g(t) h(x)` with `g` named by `kind` and `h` by
/// `spatial-profile` (default 1), or a table of nodal samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CoefficientConfig {
    pub kind: CoefficientKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_profile: Option<SpatialConfig>,
    /// CSV: first column `t`, then nodal values in row-major order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<bool>,
}

impl CoefficientConfig {
    pub fn constant(value: f64) -> Self {
        CoefficientConfig {
            kind: CoefficientKindName::Constant,
            value: Some(value),
            offset: None,
            amplitude: None,
            frequency: None,
            phase: None,
            limit: None,
            initial: None,
            rate: None,
            spatial_profile: None,
            table_file: None,
            times: None,
            values: None,
            clamp: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpatialConfig {
    Constant { value: f64 },
    LinearRamp { from: f64, to: f64 },
    Sine { offset: f64, amplitude: f64, wavenumber: f64 },
    Cosine { offset: f64, amplitude: f64, mode: f64 },
    GaussianBump { base: f64, height: f64, center: Vec<f64>, width: f64 },
}

impl SpatialConfig {
    fn profile(&self) -> SpatialProfile {
        match self.clone() {
            SpatialConfig::Constant { value } => SpatialProfile::Constant(value),
            SpatialConfig::LinearRamp { from, to } => SpatialProfile::LinearRamp { from, to },
            SpatialConfig::Sine {
                offset,
                amplitude,
                wavenumber,
            } => SpatialProfile::Sine {
                offset,
                amplitude,
                wavenumber,
            },
            SpatialConfig::Cosine {
                offset,
                amplitude,
                mode,
            } => SpatialProfile::Cosine {
                offset,
                amplitude,
                mode,
            },
            SpatialConfig::GaussianBump {
                base,
                height,
                center,
                width,
            } => SpatialProfile::GaussianBump {
                base,
                height,
                center,
                width,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub u: InitialProfile,
    pub v: InitialProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialProfile {
    Constant {
        value: f64,
    },
    Cosine {
        offset: f64,
        amplitude: f64,
        mode: f64,
    },
    Bump {
        base: f64,
        height: f64,
        center: Vec<f64>,
        width: f64,
    },
    RandomPositive {
        low: f64,
        high: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// Nodal values in row-major order, separated by commas or newlines.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StepperSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positivity_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_scheme: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_budget: Option<f64>,
}

impl StepperSection {
    pub fn build(&self) -> StepperConfig {
        let d = StepperConfig::default();
        StepperConfig {
            dt_init: self.dt_init.unwrap_or(d.dt_init),
            dt_min: self.dt_min.unwrap_or(d.dt_min),
            dt_max: self.dt_max.unwrap_or(d.dt_max),
            safety: self.safety.unwrap_or(d.safety),
            positivity_floor: self.positivity_floor.unwrap_or(d.positivity_floor),
            theta_scheme: self.theta_scheme.unwrap_or(d.theta_scheme),
            error_tol: self.error_tol.unwrap_or(d.error_tol),
            clamp_budget: self.clamp_budget.unwrap_or(d.clamp_budget),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub t0: f64,
    pub t_end: f64,
    pub sample_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3_tilde: Option<f64>,
    /// `(q, C_{q+1})` pairs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cq1: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum M2Source {
    /// config, then the convex-domain formula when (H2) holds, then measured
    #[default]
    Auto,
    /// measured (when measurement runs), then config
    Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    /// Measure missing constants from simulations of the seeds.
    #[serde(default)]
    pub measure: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default)]
    pub m2_source: M2Source,
}

fn default_n_samples() -> usize {
    1001
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            window: None,
            n_samples: default_n_samples(),
            measure: false,
            eps: None,
            m2_source: M2Source::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Window of the `log E` fit, relative to the run start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default = "default_fit_tolerance")]
    pub fit_tolerance: f64,
    #[serde(default = "default_min_r2")]
    pub min_r2: f64,
    /// Threshold for the final pairwise `L∞` gap.
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
    /// Burn-in override; measured from the runs when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(default = "default_settle_tol")]
    pub settle_tol: f64,
    #[serde(default = "default_t_back")]
    pub t_back: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entire_span: Option<[f64; 2]>,
    #[serde(default = "default_seed_tol")]
    pub seed_tol: f64,
    /// Start phases per period for periodic coefficients.
    #[serde(default = "default_phases")]
    pub phases: usize,
}

fn default_fit_tolerance() -> f64 {
    0.05
}
fn default_min_r2() -> f64 {
    0.95
}
fn default_gap_tol() -> f64 {
    1e-3
}
fn default_settle_tol() -> f64 {
    0.01
}
fn default_t_back() -> f64 {
    30.0
}
fn default_seed_tol() -> f64 {
    1e-6
}
fn default_phases() -> usize {
    8
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fit_window: None,
            fit_tolerance: default_fit_tolerance(),
            min_r2: default_min_r2(),
            gap_tol: default_gap_tol(),
            burn_in: None,
            settle_tol: default_settle_tol(),
            t_back: default_t_back(),
            entire_span: None,
            seed_tol: default_seed_tol(),
            phases: default_phases(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<SweepAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted key, e.g. `params.chi`.
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    /// `[start, end, count]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linspace: Option<(f64, f64, usize)>,
}

impl SweepAxis {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        match (&self.values, self.linspace) {
            (Some(v), None) if !v.is_empty() => Ok(v.clone()),
            (None, Some((a, b, n))) if n >= 1 => Ok(if n == 1 {
                vec![a]
            } else {
                (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
            }),
            _ => Err(CliError::validation(
                format!("sweep.axes.{}", self.path),
                "exactly one of `values` (nonempty) or `linspace` (count >= 1) is required",
            )),
        }
    }
}

/// Everything a command needs, validated.
pub struct Prepared {
    pub config: RunConfig,
    pub hash: String,
    pub grid: Arc<Grid>,
    pub params: ModelParams,
    pub coeffs: CoefficientSet,
    pub stepper: StepperConfig,
    pub seeds: Vec<ModelState>,
    pub window: (f64, f64),
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::validation("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation("config", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::parse(&text)?, base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn seed_states(&self) -> Vec<&InitialState> {
        if self.seeds.is_empty() {
            vec![&self.initial]
        } else {
            self.seeds.iter().collect()
        }
    }

    /// Validates every block and builds the core objects. Relative file paths
    /// resolve against `base`.
    pub fn prepare(&self, base: &Path, need_growth: bool) -> Result<Prepared, CliError> {
        let g = &self.grid;
        if let Some(dim) = g.dim {
            if dim != g.extents.len() {
                return Err(CliError::validation(
                    "grid.dim",
                    format!("dim = {dim} but {} extents given", g.extents.len()),
                ));
            }
        }
        let grid = Grid::new(&g.extents, &g.counts).map_err(|e| CliError::from_core_validation(e, "grid"))?;
        let p = self.params;
        let params = ModelParams::new(p.chi, p.tau, p.lambda, p.mu).map_err(|e| CliError::from_core_validation(e, "params"))?;
        let coeffs = CoefficientSet::new(
            build_coefficient(&self.coefficients.a0, "coefficients.a0", &grid, base)?,
            build_coefficient(&self.coefficients.a1, "coefficients.a1", &grid, base)?,
            build_coefficient(&self.coefficients.a2, "coefficients.a2", &grid, base)?,
        )
        .map_err(|e| CliError::from_core_validation(e, "coefficients"))?;
        let stepper = self.stepper.build();
        stepper.validate().map_err(|e| CliError::from_core_validation(e, "stepper"))?;

        let t = self.time;
        if !(t.t0.is_finite() && t.t_end.is_finite() && t.t_end >= t.t0) {
            return Err(CliError::validation("time.t_end", "must be finite and >= time.t0"));
        }
        if !(t.sample_interval > 0.0 && t.sample_interval.is_finite()) {
            return Err(CliError::validation("time.sample_interval", "must be positive"));
        }
        if self.stability.n_samples < 2 {
            return Err(CliError::validation("stability.n_samples", "must be at least 2"));
        }
        let window = match self.stability.window {
            Some([a, b]) => {
                if !(b > a) {
                    return Err(CliError::validation("stability.window", "end must exceed start"));
                }
                (a, b)
            }
            None => match coeffs.time_dependence() {
                TimeDependence::Periodic(period) => (t.t0, t.t0 + period),
                _ if t.t_end > t.t0 => (t.t0, t.t_end),
                _ => (t.t0, t.t0 + 1.0),
            },
        };
        coeffs
            .validate(window, self.stability.n_samples, need_growth)
            .map_err(|e| CliError::from_core_validation(e, "coefficients"))?;
        self.known_constants()
            .validate()
            .map_err(|e| CliError::from_core_validation(e, "constants"))?;
        if let Some(eps) = self.stability.eps {
            if !(eps > 0.0) {
                return Err(CliError::validation("stability.eps", "must be positive"));
            }
        }
        let e = &self.experiment;
        if !(e.t_back > 0.0) {
            return Err(CliError::validation("experiment.t_back", "must be positive"));
        }
        if !(e.seed_tol > 0.0 && e.gap_tol > 0.0 && e.settle_tol > 0.0 && e.fit_tolerance >= 0.0) {
            return Err(CliError::validation("experiment", "tolerances must be positive"));
        }
        if e.phases == 0 {
            return Err(CliError::validation("experiment.phases", "must be at least 1"));
        }

        let seeds = self
            .seed_states()
            .into_iter()
            .enumerate()
            .map(|(k, s)| {
                let key = if self.seeds.is_empty() {
                    "initial".to_string()
                } else {
                    format!("seeds[{k}]")
                };
                let u = build_initial(&s.u, &format!("{key}.u"), &grid, base, self.random_seed + 2 * k as u64)?;
                let v = build_initial(&s.v, &format!("{key}.v"), &grid, base, self.random_seed + 2 * k as u64 + 1)?;
                ModelState::new(t.t0, u, v).map_err(|e| CliError::from_core_validation(e, &key))
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Prepared {
            config: self.clone(),
            hash: self.content_hash(),
            grid,
            params,
            coeffs,
            stepper,
            seeds,
            window,
        })
    }

    pub fn known_constants(&self) -> KnownConstants {
        let c = &self.constants;
        KnownConstants {
            m1: c.m1.map(Constant::config),
            m2: c.m2.map(Constant::config),
            eta: c.eta.map(Constant::config),
            c3_tilde: c.c3_tilde.map(Constant::config),
            cq1: c.cq1.iter().map(|p| (p[0], p[1])).collect(),
        }
    }
}

fn need(v: Option<f64>, key: &str, field: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::validation(format!("{key}.{field}"), "required for this kind"))
}

fn build_coefficient(c: &CoefficientConfig, key: &str, grid: &Arc<Grid>, base: &Path) -> Result<CoefficientSpec, CliError> {
    let wrap = |e| CliError::from_core_validation(e, key);
    let spatial = match &c.spatial_profile {
        Some(s) => {
            let prof = s.profile();
            prof.validate(&format!("{key}.spatial-profile"), grid.dim()).map_err(wrap)?;
            Some(prof.sample(grid))
        }
        None => None,
    };
    let separable = |temporal: TimeProfile| -> Result<CoefficientSpec, CliError> {
        let h = spatial.clone().unwrap_or_else(|| Field::constant(grid.clone(), 1.0));
        CoefficientSpec::separable(temporal, h).map_err(wrap)
    };
    let stray = |fields: &[(&str, bool)]| -> Result<(), CliError> {
        for (name, present) in fields {
            if *present {
                return Err(CliError::validation(
                    format!("{key}.{name}"),
                    format!("not used by kind {:?}", c.kind),
                ));
            }
        }
        Ok(())
    };
    let table_keys = [
        ("table-file", c.table_file.is_some()),
        ("times", c.times.is_some()),
        ("values", c.values.is_some()),
        ("clamp", c.clamp.is_some()),
    ];
    match c.kind {
        CoefficientKindName::Constant => {
            stray(&table_keys)?;
            let value = need(c.value, key, "value")?;
            if spatial.is_none() {
                CoefficientSpec::constant(grid.clone(), value).map_err(wrap)
            } else {
                separable(TimeProfile::Constant(value))
            }
        }
        CoefficientKindName::Sinusoid => {
            stray(&table_keys)?;
            separable(TimeProfile::Sinusoid {
                offset: need(c.offset, key, "offset")?,
                amplitude: need(c.amplitude, key, "amplitude")?,
                frequency: need(c.frequency, key, "frequency")?,
                phase: c.phase.unwrap_or(0.0),
            })
        }
        CoefficientKindName::ExpDecay => {
            stray(&table_keys)?;
            separable(TimeProfile::ExpDecay {
                limit: need(c.limit, key, "limit")?,
                initial: need(c.initial, key, "initial")?,
                rate: need(c.rate, key, "rate")?,
            })
        }
        CoefficientKindName::Table => {
            if spatial.is_some() {
                return Err(CliError::validation(format!("{key}.spatial-profile"), "not used by a table"));
            }
            let (times, rows) = match (&c.table_file, &c.times, &c.values) {
                (Some(path), None, None) => read_table(&base.join(path), key)?,
                (None, Some(t), Some(v)) => (t.clone(), v.clone()),
                _ => {
                    return Err(CliError::validation(
                        key,
                        "a table needs either `table-file` or both `times` and `values`",
                    ))
                }
            };
            let samples = rows
                .into_iter()
                .map(|r| Field::new(grid.clone(), r))
                .collect::<chemostab_core::Result<Vec<_>>>()
                .map_err(wrap)?;
            CoefficientSpec::tabulated(grid.clone(), times, samples, c.clamp.unwrap_or(false)).map_err(wrap)
        }
    }
}

fn parse_numbers(text: &str, key: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|x| {
                    x.trim().parse::<f64>().map_err(|e| {
                        CliError::validation(key, format!("line {}: cannot parse {x:?}: {e}", i + 1))
                    })
                })
                .collect()
        })
        .collect()
}

fn read_table(path: &Path, key: &str) -> Result<(Vec<f64>, Vec<Vec<f64>>), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("{key}.table-file"), format!("{}: {e}", path.display())))?;
    let rows = parse_numbers(&text, &format!("{key}.table-file"))?;
    Ok(rows
        .into_iter()
        .map(|mut r| {
            let t = r.remove(0);
            (t, r)
        })
        .unzip())
}

fn build_initial(p: &InitialProfile, key: &str, grid: &Arc<Grid>, base: &Path, default_seed: u64) -> Result<Field, CliError> {
    let wrap = |e| CliError::from_core_validation(e, key);
    let field = match p {
        InitialProfile::Constant { value } => Field::constant(grid.clone(), *value),
        InitialProfile::Cosine {
            offset,
            amplitude,
            mode,
        } => SpatialProfile::Cosine {
            offset: *offset,
            amplitude: *amplitude,
            mode: *mode,
        }
        .sample(grid),
        InitialProfile::Bump {
            base: b,
            height,
            center,
            width,
        } => {
            let prof = SpatialProfile::GaussianBump {
                base: *b,
                height: *height,
                center: center.clone(),
                width: *width,
            };
            prof.validate(key, grid.dim()).map_err(wrap)?;
            prof.sample(grid)
        }
        InitialProfile::RandomPositive { low, high, seed } => {
            if !(*low >= 0.0 && high > low && high.is_finite()) {
                return Err(CliError::validation(key, "random-positive needs 0 <= low < high"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(default_seed));
            let vals = (0..grid.len()).map(|_| rng.gen_range(*low..*high)).collect();
            Field::new(grid.clone(), vals).map_err(wrap)?
        }
        InitialProfile::File { path } => {
            let full = base.join(path);
            let text = fs::read_to_string(&full)
                .map_err(|e| CliError::validation(format!("{key}.path"), format!("{}: {e}", full.display())))?;
            let vals = parse_numbers(&text, key)?.into_iter().flatten().collect();
            Field::new(grid.clone(), vals).map_err(wrap)?
        }
    };
    if !field.is_finite() || field.min() < 0.0 {
        return Err(CliError::validation(key, "initial data must be finite and nonnegative"));
    }
    Ok(field)
}

/// Replaces the value at a dotted path of a TOML document.
pub fn set_path(doc: &mut toml::Value, path: &str, value: f64) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::validation(format!("sweep.axes.{path}"), "path does not name a table entry"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), toml::Value::Float(value));
            return Ok(());
        }
        cur = table
            .get_mut(*part)
            .ok_or_else(|| CliError::validation(format!("sweep.axes.{path}"), format!("no key `{part}`")))?;
    }
    unreachable!("split yields at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const BASIC: &str = r#"
name = "basic"

[grid]
extents = [1.0]
counts = [11]

[params]
chi = 0.05
tau = 1.0
lambda = 1.0
mu = 1.0

[coefficients.a0]
kind = "sinusoid"
offset = 1.0
amplitude = 0.2
frequency = 1.0
spatial-profile = { name = "cosine", offset = 1.0, amplitude = 0.1, mode = 1.0 }

[coefficients.a1]
kind = "constant"
value = 1.0

[coefficients.a2]
kind = "table"
times = [0.0, 1.0]
values = [[0,0,0,0,0,0,0,0,0,0,0], [0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1,0.1]]
clamp = true

[initial]
u = { profile = "random-positive", low = 0.5, high = 1.5 }
v = { profile = "constant", value = 0.0 }

[time]
t_end = 1.0
sample_interval = 0.5
"#;

    #[test]
    fn round_trip() {
        let c = RunConfig::parse(BASIC).unwrap();
        let again = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.content_hash(), again.content_hash());
        c.prepare(Path::new("."), false).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = BASIC.replace("chi = 0.05", "chi = 0.05\nchii = 1.0");
        let err = RunConfig::parse(&bad).unwrap_err();
        assert!(err.to_string().contains("chii"), "{err}");
        let bad = BASIC.replace("mode = 1.0 }", "mode = 1.0, extra = 2 }");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn validation_names_keys() {
        let bad = RunConfig::parse(&BASIC.replace("tau = 1.0", "tau = 0.0")).unwrap();
        let err = bad.prepare(Path::new("."), false).err().unwrap();
        assert_eq!(err.key(), Some("params.tau"));
        let bad = RunConfig::parse(&BASIC.replace("kind = \"constant\"\nvalue = 1.0", "kind = \"constant\"")).unwrap();
        assert_eq!(bad.prepare(Path::new("."), false).err().unwrap().key(), Some("coefficients.a1.value"));
    }

    #[test]
    fn random_initial_data_is_seeded() {
        let c = RunConfig::parse(BASIC).unwrap();
        let a = c.prepare(Path::new("."), false).unwrap();
        let b = c.prepare(Path::new("."), false).unwrap();
        assert_eq!(a.seeds[0].u, b.seeds[0].u);
        let mut d = c.clone();
        d.random_seed = 7;
        assert_ne!(d.prepare(Path::new("."), false).unwrap().seeds[0].u, a.seeds[0].u);
    }

    #[test]
    fn set_path_edits_nested_keys() {
        let c = RunConfig::parse(BASIC).unwrap();
        let mut doc = toml::Value::try_from(&c).unwrap();
        set_path(&mut doc, "params.chi", 0.4).unwrap();
        let edited: RunConfig = doc.clone().try_into().unwrap();
        assert_eq!(edited.params.chi, 0.4);
        assert!(set_path(&mut doc, "params.nothing.deep", 1.0).is_err());
    }
}
