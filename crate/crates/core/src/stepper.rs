//! IMEX time stepping.
//!
//! Diffusion (and the linear decay `−λv/τ`) is advanced with a θ-scheme and
//! solved exactly on the grid; chemotaxis, the logistic source and the
//! production term `μu/τ` are explicit, combined in a two-stage
//! predictor–corrector (explicit trapezoidal rule). With `θ = 1/2` the step is
//! second order, with `θ = 1` first order.
//!
//! Step sizes are chosen by step doubling with an error-per-unit-step test,
//! so the realised global error scales linearly with `error_tol`. Steps that
//! push a node below `−(1e−12·scale + positivity_floor)` are rejected; smaller
//! undershoots are clamped to zero and their mass is accounted for.

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{laplacian_neumann, Field};
use crate::linalg::NeumannSolver;
use crate::model::{explicit_u, explicit_v, ModelParams, ModelState};

/// Relative undershoot tolerated (and clamped) before a step is rejected.
pub const CLAMP_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Safety factor of the step-size controller, in `(0, 1)`.
    pub safety: f64,
    /// Absolute undershoot tolerated on top of the relative clamp tolerance.
    pub positivity_floor: f64,
    /// `0.5` is Crank–Nicolson, `1` backward Euler for the implicit part.
    pub theta_scheme: f64,
    /// Local error per unit time accepted by step doubling.
    pub error_tol: f64,
    /// Largest clamped mass allowed per run, relative to `max_t ∫u`.
    pub clamp_budget: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt_init: 1e-3,
            dt_min: 1e-10,
            dt_max: 0.5,
            safety: 0.9,
            positivity_floor: 0.0,
            theta_scheme: 0.5,
            error_tol: 1e-6,
            clamp_budget: 1e-8,
        }
    }
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("stepper.{name}"), format!("must be positive, got {v}")))
            }
        };
        positive("dt_init", self.dt_init)?;
        positive("dt_min", self.dt_min)?;
        positive("dt_max", self.dt_max)?;
        positive("error_tol", self.error_tol)?;
        positive("clamp_budget", self.clamp_budget)?;
        if !(self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(Error::invalid(
                "stepper.dt_init",
                "must satisfy dt_min <= dt_init <= dt_max",
            ));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(Error::invalid("stepper.safety", "must lie in (0, 1)"));
        }
        if !(self.positivity_floor >= 0.0 && self.positivity_floor.is_finite()) {
            return Err(Error::invalid("stepper.positivity_floor", "must be >= 0"));
        }
        if !(0.5..=1.0).contains(&self.theta_scheme) {
            return Err(Error::invalid("stepper.theta_scheme", "must lie in [0.5, 1]"));
        }
        Ok(())
    }

    /// Design order of the time discretisation.
    pub fn order(&self) -> u32 {
        if self.theta_scheme == 0.5 {
            2
        } else {
            1
        }
    }
}

/// Result of a single attempted step.
#[derive(Debug, Clone)]
pub enum StepOutcome {
    Accepted {
        state: ModelState,
        clamped_nodes: usize,
        clamped_mass: f64,
    },
    /// A node fell below the clamp tolerance, or the step produced non-finite
    /// values.
    Rejected { min_value: f64 },
}

/// Advances `state` by one IMEX step of size `dt`.
pub fn step(
    state: &ModelState,
    dt: f64,
    coeffs: &CoefficientSet,
    params: &ModelParams,
    cfg: &StepperConfig,
) -> Result<StepOutcome> {
    Stepper::new(coeffs, params, cfg)?.step(state, dt)
}

/// Reusable stepping context; caches the implicit solver for the grid.
pub struct Stepper<'a> {
    coeffs: &'a CoefficientSet,
    params: &'a ModelParams,
    cfg: &'a StepperConfig,
    solver: NeumannSolver,
}

impl<'a> Stepper<'a> {
    pub fn new(coeffs: &'a CoefficientSet, params: &'a ModelParams, cfg: &'a StepperConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        Ok(Stepper {
            coeffs,
            params,
            cfg,
            solver: NeumannSolver::new(coeffs.grid().clone()),
        })
    }

    pub fn step(&self, state: &ModelState, dt: f64) -> Result<StepOutcome> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        let theta = self.cfg.theta_scheme;
        let (tau, lambda) = (self.params.tau, self.params.lambda);
        let grid = state.u.grid().clone();

        let lap_u = laplacian_neumann(&state.u);
        let lap_v = laplacian_neumann(&state.v);
        // y0 + dt (1−θ) A y0, shared by both stages
        let base_u: Vec<f64> = state
            .u
            .values()
            .iter()
            .zip(lap_u.values())
            .map(|(&u, &l)| u + dt * (1.0 - theta) * l)
            .collect();
        let base_v: Vec<f64> = state
            .v
            .values()
            .iter()
            .zip(lap_v.values())
            .map(|(&v, &l)| v + dt * (1.0 - theta) * (l - lambda * v) / tau)
            .collect();

        let implicit = |nu: &[f64], nv: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
            let ru: Vec<f64> = base_u.iter().zip(nu).map(|(b, n)| b + dt * n).collect();
            let rv: Vec<f64> = base_v.iter().zip(nv).map(|(b, n)| b + dt * n).collect();
            let u = self.solver.solve(theta * dt, 0.0, &ru)?;
            let v = self.solver.solve(theta * dt / tau, lambda, &rv)?;
            Ok((u, v))
        };

        let n0u = explicit_u(state, self.coeffs, self.params)?;
        let n0v = explicit_v(state, self.params);
        let (pu, pv) = implicit(n0u.values(), n0v.values())?;
        if pu.iter().chain(&pv).any(|x| !x.is_finite()) {
            return Ok(StepOutcome::Rejected { min_value: f64::NAN });
        }
        let predicted = ModelState {
            t: state.t + dt,
            u: Field::from_raw(grid.clone(), pu),
            v: Field::from_raw(grid.clone(), pv),
        };
        let n1u = explicit_u(&predicted, self.coeffs, self.params)?;
        let n1v = explicit_v(&predicted, self.params);
        let avg = |a: &Field, b: &Field| -> Vec<f64> {
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| 0.5 * (x + y))
                .collect()
        };
        let (mut u, mut v) = implicit(&avg(&n0u, &n1u), &avg(&n0v, &n1v))?;

        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Ok(StepOutcome::Rejected { min_value: f64::NAN });
        }
        let threshold = CLAMP_REL_TOL * state.scale() + self.cfg.positivity_floor;
        let min_value = u.iter().chain(&v).copied().fold(f64::INFINITY, f64::min);
        if min_value < -threshold {
            return Ok(StepOutcome::Rejected { min_value });
        }
        let mut clamped_nodes = 0;
        let mut clamped_mass = 0.0;
        for values in [&mut u, &mut v] {
            for (x, w) in values.iter_mut().zip(grid.weights()) {
                if *x < 0.0 {
                    clamped_nodes += 1;
                    clamped_mass += w * (-*x);
                    *x = 0.0;
                }
            }
        }
        Ok(StepOutcome::Accepted {
            state: ModelState {
                t: state.t + dt,
                u: Field::from_raw(grid.clone(), u),
                v: Field::from_raw(grid, v),
            },
            clamped_nodes,
            clamped_mass,
        })
    }

    /// Largest step allowed by the explicit chemotactic transport,
    /// `safety · h / max|χ∇v|`.
    pub fn transport_limit(&self, state: &ModelState) -> f64 {
        let chi = self.params.chi.abs();
        if chi == 0.0 {
            return f64::INFINITY;
        }
        let grid = state.v.grid();
        let v = state.v.values();
        let mut limit = f64::INFINITY;
        for axis in 0..grid.dim() {
            let n = grid.counts()[axis];
            let h = grid.spacing()[axis];
            let mut max_grad: f64 = 0.0;
            for (start, stride) in grid.lines(axis) {
                for k in 0..n - 1 {
                    let (l, r) = (start + k * stride, start + (k + 1) * stride);
                    max_grad = max_grad.max((v[r] - v[l]).abs() / h);
                }
            }
            if max_grad > 0.0 {
                limit = limit.min(h / (chi * max_grad));
            }
        }
        self.cfg.safety * limit
    }
}

/// Receives a copy of the state at every sample time.
pub trait Observer {
    fn observe(&mut self, state: ModelState) -> std::result::Result<(), String>;
}

impl<F> Observer for F
where
    F: FnMut(ModelState) -> std::result::Result<(), String>,
{
    fn observe(&mut self, state: ModelState) -> std::result::Result<(), String> {
        self(state)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunStats {
    pub accepted: usize,
    pub rejected: usize,
    pub positivity_rejections: usize,
    pub clamped_nodes: usize,
    pub clamped_mass: f64,
    pub max_mass_u: f64,
    pub smallest_dt: f64,
    pub largest_dt: f64,
}

/// One row of the per-sample diagnostics series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDiagnostics {
    pub t: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub min_u: f64,
    pub max_u: f64,
}

impl SampleDiagnostics {
    fn of(state: &ModelState) -> Self {
        SampleDiagnostics {
            t: state.t,
            mass_u: crate::grid::integrate(&state.u),
            mass_v: crate::grid::integrate(&state.v),
            min_u: state.u.min(),
            max_u: state.u.max(),
        }
    }
}

/// States recorded at the sample times of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<ModelState>,
    pub diagnostics: Vec<SampleDiagnostics>,
    pub stats: RunStats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &ModelState {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn first(&self) -> &ModelState {
        &self.samples[0]
    }

    /// Samples with `t ≥ from` (up to round-off).
    pub fn since(&self, from: f64) -> impl Iterator<Item = &ModelState> {
        self.samples.iter().filter(move |s| s.t >= from - 1e-9)
    }

    /// Sub-trajectory restricted to `[start, end]`.
    pub fn segment(&self, start: f64, end: f64) -> Trajectory {
        let keep = |t: f64| t >= start - 1e-9 && t <= end + 1e-9;
        Trajectory {
            samples: self.samples.iter().filter(|s| keep(s.t)).cloned().collect(),
            diagnostics: self.diagnostics.iter().filter(|d| keep(d.t)).copied().collect(),
            stats: self.stats,
        }
    }
}

/// Sample times `t0, t0 + Δ, …` capped by `t_end`, which is always included.
pub fn sample_schedule(t0: f64, t_end: f64, interval: f64) -> Vec<f64> {
    let mut times = vec![t0];
    if t_end <= t0 {
        return times;
    }
    let n = ((t_end - t0) / interval).floor() as usize;
    for k in 1..=n {
        let t = t0 + k as f64 * interval;
        if t < t_end - 1e-9 * interval {
            times.push(t);
        }
    }
    times.push(t_end);
    times
}

/// Adaptive integration from `state0` to `t_end`, sampling every
/// `sample_interval`.
pub fn run(
    state0: &ModelState,
    t_end: f64,
    coeffs: &CoefficientSet,
    params: &ModelParams,
    cfg: &StepperConfig,
    sample_interval: f64,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    if !(t_end >= state0.t) {
        return Err(Error::Range(format!(
            "t_end = {t_end} precedes the initial time {}",
            state0.t
        )));
    }
    if !(sample_interval > 0.0 && sample_interval.is_finite()) {
        return Err(Error::invalid("sample_interval", "must be positive"));
    }
    if !state0.is_nonnegative() {
        return Err(Error::invalid("initial", "initial data must be nonnegative"));
    }
    let stepper = Stepper::new(coeffs, params, cfg)?;
    let order = cfg.order() as f64;
    let schedule = sample_schedule(state0.t, t_end, sample_interval);

    let mut stats = RunStats {
        max_mass_u: crate::grid::integrate(&state0.u),
        smallest_dt: f64::INFINITY,
        ..RunStats::default()
    };
    let mut traj = Trajectory {
        samples: Vec::with_capacity(schedule.len()),
        diagnostics: Vec::with_capacity(schedule.len()),
        stats,
    };
    let mut record = |state: &ModelState, traj: &mut Trajectory| -> Result<()> {
        for obs in observers.iter_mut() {
            obs.observe(state.clone()).map_err(|message| Error::Observer {
                t: state.t,
                message,
            })?;
        }
        traj.diagnostics.push(SampleDiagnostics::of(state));
        traj.samples.push(state.clone());
        Ok(())
    };
    record(state0, &mut traj)?;

    let mut state = state0.clone();
    let mut dt = cfg.dt_init;
    for &target in &schedule[1..] {
        while state.t < target {
            let remaining = target - state.t;
            let mut trial = dt.min(cfg.dt_max).min(stepper.transport_limit(&state));
            let hits_target = trial >= remaining * (1.0 - 1e-12);
            if hits_target {
                trial = remaining;
            } else if trial > 0.5 * remaining {
                // avoid a sliver step before the sample time
                trial = 0.5 * remaining;
            }

            let full = stepper.step(&state, trial)?;
            let half = match stepper.step(&state, 0.5 * trial)? {
                StepOutcome::Accepted {
                    state: s,
                    clamped_nodes,
                    clamped_mass,
                } => Some((s, clamped_nodes, clamped_mass)),
                StepOutcome::Rejected { .. } => None,
            };
            let doubled = match (&full, half) {
                (StepOutcome::Accepted { state: f, .. }, Some((h1, n1, m1))) => {
                    match stepper.step(&h1, 0.5 * trial)? {
                        StepOutcome::Accepted {
                            state: h2,
                            clamped_nodes: n2,
                            clamped_mass: m2,
                        } => Some((f.clone(), h2, n1 + n2, m1 + m2)),
                        StepOutcome::Rejected { .. } => None,
                    }
                }
                _ => None,
            };

            let Some((coarse, mut fine, nodes, mass)) = doubled else {
                stats.rejected += 1;
                stats.positivity_rejections += 1;
                dt = 0.5 * trial;
                if dt < cfg.dt_min {
                    return Err(Error::StepSizeUnderflow {
                        t: state.t,
                        dt,
                        reason: "positivity rejections".into(),
                        state: Box::new(state),
                    });
                }
                continue;
            };

            let err = coarse
                .u
                .values()
                .iter()
                .zip(fine.u.values())
                .chain(coarse.v.values().iter().zip(fine.v.values()))
                .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                .fold(0.0, f64::max);
            let allowed = cfg.error_tol * trial;
            let factor = if err == 0.0 {
                5.0
            } else {
                (cfg.safety * (allowed / err).powf(1.0 / order)).clamp(0.2, 5.0)
            };
            if err > allowed {
                stats.rejected += 1;
                dt = trial * factor.min(0.9);
                if dt < cfg.dt_min {
                    return Err(Error::StepSizeUnderflow {
                        t: state.t,
                        dt,
                        reason: format!("local error {err:e} above tolerance"),
                        state: Box::new(state),
                    });
                }
                continue;
            }

            if hits_target {
                // land exactly on the sample time
                fine.t = target;
            }
            stats.accepted += 1;
            stats.clamped_nodes += nodes;
            stats.clamped_mass += mass;
            stats.smallest_dt = stats.smallest_dt.min(trial);
            stats.largest_dt = stats.largest_dt.max(trial);
            stats.max_mass_u = stats.max_mass_u.max(crate::grid::integrate(&fine.u));
            let budget = cfg.clamp_budget * stats.max_mass_u;
            if stats.clamped_mass > budget {
                return Err(Error::ClampBudgetExceeded {
                    clamped: stats.clamped_mass,
                    budget,
                });
            }
            state = fine;
            // keep the controller's proposal even when the step was shortened
            // to hit a sample time
            dt = if hits_target { dt.max(trial * factor) } else { trial * factor };
            dt = dt.clamp(cfg.dt_min, cfg.dt_max);
        }
        record(&state, &mut traj)?;
    }
    if stats.accepted == 0 {
        stats.smallest_dt = 0.0;
    }
    traj.stats = stats;
    Ok(traj)
}

/// Fixed-step integration without error control, for convergence studies.
/// Positivity rejections are errors here.
pub fn run_fixed(
    state0: &ModelState,
    t_end: f64,
    steps: usize,
    coeffs: &CoefficientSet,
    params: &ModelParams,
    cfg: &StepperConfig,
) -> Result<ModelState> {
    if steps == 0 || !(t_end > state0.t) {
        return Err(Error::Range("fixed-step run needs t_end > t0 and steps > 0".into()));
    }
    let stepper = Stepper::new(coeffs, params, cfg)?;
    let dt = (t_end - state0.t) / steps as f64;
    let mut state = state0.clone();
    for k in 0..steps {
        match stepper.step(&state, dt)? {
            StepOutcome::Accepted { state: mut s, .. } => {
                s.t = state0.t + (k + 1) as f64 * dt;
                state = s;
            }
            StepOutcome::Rejected { min_value } => {
                return Err(Error::StepSizeUnderflow {
                    t: state.t,
                    dt,
                    reason: format!("fixed step rejected (min value {min_value:e})"),
                    state: Box::new(state),
                })
            }
        }
    }
    Ok(state)
}
