//! Numerical experiments around the stability theorem: trajectory gaps and
//! their decay, persistence and boundedness estimates, a pullback
//! approximation of the entire solution, and a sampled check of the energy
//! differential inequality.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::coefficients::{CoefficientSet, TimeDependence};
use crate::error::{Error, Result};
use crate::grid::{integrate, norms, Field};
use crate::model::{ModelParams, ModelState};
use crate::stability::Criterion;
use crate::stepper::{run, StepperConfig, Trajectory};

/// Gap norms between two runs at one sample time, `w = u₁ − u₂`, `φ = v₁ − v₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSample {
    pub t: f64,
    /// `∫(w² + φ²)`
    pub e: f64,
    pub w_l2: f64,
    pub phi_l2: f64,
    pub w_linf: f64,
    pub phi_linf: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapSeries {
    pub samples: Vec<GapSample>,
}

impl GapSeries {
    /// A series carrying only `E`, for feeding synthetic data to the checkers.
    pub fn from_energy(points: &[(f64, f64)]) -> Self {
        GapSeries {
            samples: points
                .iter()
                .map(|&(t, e)| GapSample {
                    t,
                    e,
                    w_l2: e.max(0.0).sqrt(),
                    phi_l2: 0.0,
                    w_linf: f64::NAN,
                    phi_linf: f64::NAN,
                })
                .collect(),
        }
    }

    pub fn energy(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| (s.t, s.e)).collect()
    }

    pub fn last(&self) -> Option<&GapSample> {
        self.samples.last()
    }

    /// Largest `max(w_Linf, φ_Linf)` over samples with `t ≥ from`.
    pub fn max_linf_since(&self, from: f64) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.t >= from - 1e-9)
            .map(|s| s.w_linf.max(s.phi_linf))
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, out: &mut impl Write, metadata: &[String]) -> io::Result<()> {
        for m in metadata {
            writeln!(out, "# {m}")?;
        }
        writeln!(out, "t,E,w_L2,phi_L2,w_Linf,phi_Linf")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.t, s.e, s.w_l2, s.phi_l2, s.w_linf, s.phi_linf
            )?;
        }
        Ok(())
    }
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn state_gap(a: &ModelState, b: &ModelState) -> Result<GapSample> {
    let w = a.u.zip_map(&b.u, |x, y| x - y)?;
    let phi = a.v.zip_map(&b.v, |x, y| x - y)?;
    let (w_l2, w_linf) = norms(&w);
    let (phi_l2, phi_linf) = norms(&phi);
    Ok(GapSample {
        t: a.t,
        e: w_l2 * w_l2 + phi_l2 * phi_l2,
        w_l2,
        phi_l2,
        w_linf,
        phi_linf,
    })
}

/// Gap norms at every common sample time. Both runs must share the grid and
/// the sample schedule.
pub fn trajectory_gap(run_a: &Trajectory, run_b: &Trajectory) -> Result<GapSeries> {
    if run_a.samples.len() != run_b.samples.len() {
        return Err(Error::Structural(format!(
            "runs have {} and {} samples",
            run_a.samples.len(),
            run_b.samples.len()
        )));
    }
    let samples = run_a
        .samples
        .iter()
        .zip(&run_b.samples)
        .map(|(a, b)| {
            if !same_time(a.t, b.t) {
                return Err(Error::Structural(format!(
                    "sample times differ: {} vs {}",
                    a.t, b.t
                )));
            }
            state_gap(a, b)
        })
        .collect::<Result<_>>()?;
    Ok(GapSeries { samples })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Least-squares slope of `log E`; `−∞` when `E` reaches zero in the window.
    pub rate: f64,
    pub r2: f64,
    /// `E ≤ 0` somewhere in the window.
    pub floored: bool,
    pub n_points: usize,
}

/// Fits `log E(t) ≈ c + rate·t` over `window`.
pub fn fit_decay_rate(series: &GapSeries, window: (f64, f64)) -> Result<DecayFit> {
    fit_log_slope(&series.energy(), window)
}

/// Least-squares slope of `log y` over the points with `t` in `window`.
pub fn fit_log_slope(points: &[(f64, f64)], window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(t, _)| t >= window.0 - 1e-9 && t <= window.1 + 1e-9)
        .collect();
    if pts.len() < 3 {
        return Err(Error::Range(format!(
            "decay fit over [{}, {}] has {} samples, needs 3",
            window.0,
            window.1,
            pts.len()
        )));
    }
    if pts.iter().any(|&(_, e)| !(e > 0.0)) {
        return Ok(DecayFit {
            rate: f64::NEG_INFINITY,
            r2: f64::NAN,
            floored: true,
            n_points: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, e) in &pts {
        let (dt, dy) = (t - mt, e.ln() - my);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let rate = sty / stt;
    let r2 = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Ok(DecayFit {
        rate,
        r2,
        floored: false,
        n_points: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum PersistenceEstimate {
    Success {
        /// `min_x u` over samples at least `burn_in` after the start.
        eta_hat: f64,
        /// Earliest offset after which `min_x u` stays at or above `eta_hat`.
        xi_hat: f64,
        burn_in: f64,
    },
    Failure {
        t: f64,
        min_u: f64,
        reason: String,
    },
}

impl PersistenceEstimate {
    pub fn eta(&self) -> Option<f64> {
        match self {
            PersistenceEstimate::Success { eta_hat, .. } => Some(*eta_hat),
            PersistenceEstimate::Failure { .. } => None,
        }
    }

    pub fn write_summary(&self, out: &mut impl Write, metadata: &[String]) -> io::Result<()> {
        for m in metadata {
            writeln!(out, "# {m}")?;
        }
        writeln!(out, "status,eta_hat,xi_hat,burn_in,t_fail,min_u")?;
        match self {
            PersistenceEstimate::Success {
                eta_hat,
                xi_hat,
                burn_in,
            } => writeln!(out, "success,{eta_hat},{xi_hat},{burn_in},,"),
            PersistenceEstimate::Failure { t, min_u, reason } => {
                writeln!(out, "# reason: {reason}")?;
                writeln!(out, "failure,,,,{t},{min_u}")
            }
        }
    }
}

/// Pointwise persistence floor of `traj` after `burn_in` time units.
pub fn estimate_persistence(traj: &Trajectory, burn_in: f64) -> Result<PersistenceEstimate> {
    let t0 = traj.first().t;
    let end = traj.last().t;
    if !(burn_in >= 0.0) || t0 + burn_in > end + 1e-9 {
        return Err(Error::Range(format!(
            "burn-in {burn_in} does not fit a trajectory on [{t0}, {end}]"
        )));
    }
    let mins: Vec<(f64, f64)> = traj.samples.iter().map(|s| (s.t, s.u.min())).collect();
    let (t_min, eta_hat) = mins
        .iter()
        .filter(|(t, _)| *t >= t0 + burn_in - 1e-9)
        .fold((f64::NAN, f64::INFINITY), |acc, &(t, m)| if m < acc.1 { (t, m) } else { acc });
    if !(eta_hat > 0.0) {
        return Ok(PersistenceEstimate::Failure {
            t: t_min,
            min_u: eta_hat,
            reason: "u reaches zero after the burn-in".into(),
        });
    }
    let mut xi = mins.last().map_or(t0, |m| m.0);
    for &(t, m) in mins.iter().rev() {
        if m < eta_hat {
            break;
        }
        xi = t;
    }
    Ok(PersistenceEstimate::Success {
        eta_hat,
        xi_hat: xi - t0,
        burn_in,
    })
}

/// Discrete `W^{2,∞}` norm: nodal maximum of `|f|`, central first
/// differences and second differences, with reflected ghosts at the boundary.
pub fn w2inf_norm(f: &Field) -> f64 {
    let grid = f.grid();
    let vals = f.values();
    let counts = grid.counts();
    let h = grid.spacing();
    let reflect = |k: isize, n: usize| -> usize {
        if k < 0 {
            1
        } else if k as usize >= n {
            n - 2
        } else {
            k as usize
        }
    };
    let (nx, ny) = (counts[0], if grid.dim() == 2 { counts[1] } else { 1 });
    let at = |i: isize, j: isize| -> f64 {
        let ii = reflect(i, nx);
        let jj = if ny == 1 { 0 } else { reflect(j, ny) };
        vals[ii * ny + jj]
    };
    let mut norm = f.max_abs();
    for i in 0..nx as isize {
        for j in 0..ny as isize {
            let c = at(i, j);
            let dx = (at(i + 1, j) - at(i - 1, j)) / (2.0 * h[0]);
            let dxx = (at(i + 1, j) - 2.0 * c + at(i - 1, j)) / (h[0] * h[0]);
            norm = norm.max(dx.abs()).max(dxx.abs());
            if ny > 1 {
                let dy = (at(i, j + 1) - at(i, j - 1)) / (2.0 * h[1]);
                let dyy = (at(i, j + 1) - 2.0 * c + at(i, j - 1)) / (h[1] * h[1]);
                let dxy = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1))
                    / (4.0 * h[0] * h[1]);
                norm = norm.max(dy.abs()).max(dyy.abs()).max(dxy.abs());
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsSample {
    pub t: f64,
    pub mass_u: f64,
    pub sup_u: f64,
    pub w2inf_v: f64,
}

pub fn bounds_series(traj: &Trajectory) -> Vec<BoundsSample> {
    traj.samples
        .iter()
        .map(|s| BoundsSample {
            t: s.t,
            mass_u: integrate(&s.u),
            sup_u: s.u.max(),
            w2inf_v: w2inf_norm(&s.v),
        })
        .collect()
}

pub fn write_bounds_csv(series: &[BoundsSample], out: &mut impl Write, metadata: &[String]) -> io::Result<()> {
    for m in metadata {
        writeln!(out, "# {m}")?;
    }
    writeln!(out, "t,mass_u,sup_u,W2inf_v")?;
    for s in series {
        writeln!(out, "{},{},{},{}", s.t, s.mass_u, s.sup_u, s.w2inf_v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsEstimate {
    pub m1_hat: f64,
    pub m2_hat: f64,
    pub c3_hat: f64,
}

/// Suprema of `∫u`, `‖u‖∞` and `‖v‖_{W^{2,∞}}` after the respective burn-ins
/// `(t1, t2, t_star)`, measured from the trajectory start.
pub fn estimate_bounds(traj: &Trajectory, burn_ins: (f64, f64, f64)) -> BoundsEstimate {
    let t0 = traj.first().t;
    let series = bounds_series(traj);
    let sup_after = |burn: f64, f: fn(&BoundsSample) -> f64| {
        series
            .iter()
            .filter(|s| s.t >= t0 + burn - 1e-9)
            .map(f)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let est = BoundsEstimate {
        m1_hat: sup_after(burn_ins.0, |s| s.mass_u),
        m2_hat: sup_after(burn_ins.1, |s| s.sup_u),
        c3_hat: sup_after(burn_ins.2, |s| s.w2inf_v),
    };
    let vol = traj.first().u.grid().volume();
    debug_assert!(
        burn_ins.0 != burn_ins.1 || est.m1_hat <= est.m2_hat * vol * (1.0 + 1e-12),
        "integral exceeds sup bound"
    );
    est
}

/// Measured burn-in: the earliest offset from the start after which
/// `[min_x u, max_x u]` stays inside the range seen over the final quarter of
/// the run, widened by `rel_tol`.
pub fn settle_time(traj: &Trajectory, rel_tol: f64) -> f64 {
    let d = &traj.diagnostics;
    let t0 = traj.first().t;
    let t_end = traj.last().t;
    let tail_start = t_end - 0.25 * (t_end - t0);
    let tail = d.iter().filter(|s| s.t >= tail_start - 1e-9);
    let (lo, hi) = tail.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.min_u), hi.max(s.max_u))
    });
    let (lo, hi) = (lo - rel_tol * lo.abs(), hi + rel_tol * hi.abs());
    let mut settle = t_end;
    for s in d.iter().rev() {
        if s.min_u < lo || s.max_u > hi {
            break;
        }
        settle = s.t;
    }
    settle - t0
}

/// Start times for experiments that sample the supremum over initial times:
/// `n_phases` phases across one period for periodic coefficients, otherwise
/// just `t0`.
pub fn start_times(coeffs: &CoefficientSet, t0: f64, n_phases: usize) -> Vec<f64> {
    match coeffs.time_dependence() {
        TimeDependence::Periodic(p) if n_phases > 1 => {
            (0..n_phases).map(|k| t0 + p * k as f64 / n_phases as f64).collect()
        }
        _ => vec![t0],
    }
}

/// Runs independent simulations in parallel; results keep the input order.
pub fn run_many(
    initial: &[ModelState],
    t_end: f64,
    coeffs: &CoefficientSet,
    params: &ModelParams,
    cfg: &StepperConfig,
    sample_interval: f64,
) -> Result<Vec<Trajectory>> {
    initial
        .par_iter()
        .map(|s| run(s, t_end, coeffs, params, cfg, sample_interval, &mut []))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntireSolution {
    /// The first seed's run restricted to the kept span.
    pub segment: Trajectory,
    /// Largest `max(w_Linf, φ_Linf)` between any two seeds over the kept span.
    pub seed_gap: f64,
    pub t_back: f64,
}

/// Pullback approximation of the entire solution on `t_span`: every seed is
/// started at `t_span.0 − t_back` and only the part inside `t_span` is kept.
/// Fails with [`Error::TBackInsufficient`] when the seeds still disagree by
/// more than `tol`.
#[allow(clippy::too_many_arguments)]
pub fn approximate_entire_solution(
    coeffs: &CoefficientSet,
    params: &ModelParams,
    cfg: &StepperConfig,
    t_back: f64,
    t_span: (f64, f64),
    seeds: &[(Field, Field)],
    sample_interval: f64,
    tol: f64,
) -> Result<EntireSolution> {
    if seeds.len() < 2 {
        return Err(Error::invalid("seeds", "at least two seeds are needed"));
    }
    if !(t_back > 0.0) || !(t_span.1 >= t_span.0) {
        return Err(Error::Range(format!(
            "need t_back > 0 and a nonempty span, got t_back = {t_back}, span = [{}, {}]",
            t_span.0, t_span.1
        )));
    }
    let start = t_span.0 - t_back;
    for (u, _) in seeds {
        if u.max() <= 0.0 {
            return Err(Error::invalid("seeds", "u0 must not vanish identically"));
        }
    }
    let initial = seeds
        .iter()
        .map(|(u, v)| ModelState::new(start, u.clone(), v.clone()))
        .collect::<Result<Vec<_>>>()?;
    // sample times must include t_span.0 exactly
    let n_back = (t_back / sample_interval).ceil().max(1.0);
    let back_interval = t_back / n_back;
    let pre = run_many(&initial, t_span.0, coeffs, params, cfg, back_interval)?;
    let at_start: Vec<ModelState> = pre.iter().map(|t| t.last().clone()).collect();
    let kept = run_many(&at_start, t_span.1, coeffs, params, cfg, sample_interval)?;

    let mut seed_gap: f64 = 0.0;
    for i in 0..kept.len() {
        for j in i + 1..kept.len() {
            seed_gap = seed_gap.max(trajectory_gap(&kept[i], &kept[j])?.max_linf_since(t_span.0));
        }
    }
    if !(seed_gap <= tol) {
        return Err(Error::TBackInsufficient { gap: seed_gap, tol });
    }
    Ok(EntireSolution {
        segment: kept.into_iter().next().expect("two or more seeds"),
        seed_gap,
        t_back,
    })
}

/// Earliest sample time after which both runs stay inside `[lo, hi]` at every
/// node.
pub fn band_entry_time(a: &Trajectory, b: &Trajectory, lo: f64, hi: f64) -> Option<f64> {
    let inside = |s: &ModelState| s.u.min() >= lo && s.u.max() <= hi;
    let mut entry = None;
    for (sa, sb) in a.samples.iter().zip(&b.samples).rev() {
        if !(inside(sa) && inside(sb)) {
            break;
        }
        entry = Some(sa.t);
    }
    entry
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalCheck {
    pub t0: f64,
    pub t1: f64,
    /// Finite-difference slope of `E/2`.
    pub slope: f64,
    /// Trapezoid mean of `(h + K)·E` over the interval.
    pub bound: f64,
    pub slack: f64,
}

impl IntervalCheck {
    pub fn margin(&self) -> f64 {
        self.bound - self.slope
    }

    pub fn satisfied(&self) -> bool {
        self.margin() >= -self.slack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GronwallResult {
    Checked {
        t_eps: f64,
        eps: f64,
        intervals: Vec<IntervalCheck>,
        /// Intervals skipped because `E` is at round-off level.
        unresolved: usize,
    },
    Inconclusive {
        reason: String,
    },
}

impl GronwallResult {
    pub fn fraction_satisfied(&self) -> Option<f64> {
        match self {
            GronwallResult::Checked { intervals, .. } if !intervals.is_empty() => {
                let ok = intervals.iter().filter(|c| c.satisfied()).count();
                Some(ok as f64 / intervals.len() as f64)
            }
            _ => None,
        }
    }

    /// The interval with the smallest `margin + slack`.
    pub fn worst(&self) -> Option<&IntervalCheck> {
        match self {
            GronwallResult::Checked { intervals, .. } => intervals
                .iter()
                .min_by(|a, b| (a.margin() + a.slack).total_cmp(&(b.margin() + b.slack))),
            GronwallResult::Inconclusive { .. } => None,
        }
    }

    pub fn write_block(&self, out: &mut impl Write, metadata: &[String]) -> io::Result<()> {
        for m in metadata {
            writeln!(out, "# {m}")?;
        }
        match self {
            GronwallResult::Inconclusive { reason } => {
                writeln!(out, "# status: inconclusive")?;
                writeln!(out, "# reason: {reason}")?;
                writeln!(out, "t0,t1,slope,bound,slack,margin,ok")
            }
            GronwallResult::Checked {
                t_eps,
                eps,
                intervals,
                unresolved,
            } => {
                writeln!(out, "# status: checked")?;
                writeln!(out, "# t_eps: {t_eps}")?;
                writeln!(out, "# eps: {eps}")?;
                writeln!(out, "# unresolved_intervals: {unresolved}")?;
                if let Some(f) = self.fraction_satisfied() {
                    writeln!(out, "# fraction_satisfied: {f}")?;
                }
                if let Some(w) = self.worst() {
                    writeln!(out, "# worst_margin: {} (slack {}) at t = {}", w.margin(), w.slack, w.t0)?;
                }
                writeln!(out, "t0,t1,slope,bound,slack,margin,ok")?;
                for c in intervals {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        c.t0,
                        c.t1,
                        c.slope,
                        c.bound,
                        c.slack,
                        c.margin(),
                        c.satisfied()
                    )?;
                }
                Ok(())
            }
        }
    }
}

/// Checks `½ dE/dt ≤ (h(t) + K(t, ε)) E` along a pair of runs once both are
/// inside the band `[η − ε, M₂ + ε]`.
pub fn gronwall_check(
    pair: (&Trajectory, &Trajectory),
    criterion: &Criterion<'_>,
    eps: f64,
) -> Result<GronwallResult> {
    let (Some(eta), Some(m2)) = (criterion.constants.eta, criterion.constants.m2) else {
        return Ok(GronwallResult::Inconclusive {
            reason: "eta and M2 are required for the band".into(),
        });
    };
    let series = trajectory_gap(pair.0, pair.1)?;
    let (lo, hi) = (eta.value - eps, m2.value + eps);
    let Some(t_eps) = band_entry_time(pair.0, pair.1, lo, hi) else {
        let (a, b) = (pair.0.last(), pair.1.last());
        return Ok(GronwallResult::Inconclusive {
            reason: format!(
                "band [{lo}, {hi}] never entered for good; final ranges [{}, {}] and [{}, {}]",
                a.u.min(),
                a.u.max(),
                b.u.min(),
                b.u.max()
            ),
        });
    };
    let scale = pair
        .0
        .samples
        .iter()
        .chain(&pair.1.samples)
        .map(ModelState::scale)
        .fold(1.0, f64::max);
    let volume = pair.0.first().u.grid().volume();
    let floor = volume * (64.0 * f64::EPSILON * scale).powi(2);
    gronwall_check_series(&series, criterion, eps, t_eps, floor)
}

/// The interval test behind [`gronwall_check`] on a given `E` series. Intervals
/// where `E` drops below `floor` are counted as unresolved. The slack is
/// `2·Δt·ℓ`, with `ℓ` the local Lipschitz estimate of `Ė/2` from the
/// neighbouring finite-difference slopes.
pub fn gronwall_check_series(
    series: &GapSeries,
    criterion: &Criterion<'_>,
    eps: f64,
    t_eps: f64,
    floor: f64,
) -> Result<GronwallResult> {
    let pts: Vec<(f64, f64)> = series
        .energy()
        .into_iter()
        .filter(|&(t, _)| t >= t_eps - 1e-9)
        .collect();
    if pts.len() < 2 {
        return Ok(GronwallResult::Inconclusive {
            reason: format!("fewer than two samples after t_eps = {t_eps}"),
        });
    }
    let slopes: Vec<f64> = pts
        .windows(2)
        .map(|w| 0.5 * (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let rate = |t: f64| -> Result<f64> { Ok(criterion.h(t)? + criterion.k(t, eps)?) };

    let mut intervals = Vec::new();
    let mut unresolved = 0;
    for (k, w) in pts.windows(2).enumerate() {
        let ((t0, e0), (t1, e1)) = (w[0], w[1]);
        if e0 < floor || e1 < floor {
            unresolved += 1;
            continue;
        }
        let dt = t1 - t0;
        let mut lip: f64 = 0.0;
        if k > 0 {
            let prev_dt = 0.5 * (t1 - pts[k - 1].0);
            lip = lip.max((slopes[k] - slopes[k - 1]).abs() / prev_dt);
        }
        if k + 1 < slopes.len() {
            let next_dt = 0.5 * (pts[k + 2].0 - t0);
            lip = lip.max((slopes[k + 1] - slopes[k]).abs() / next_dt);
        }
        intervals.push(IntervalCheck {
            t0,
            t1,
            slope: slopes[k],
            bound: 0.5 * (rate(t0)? * e0 + rate(t1)? * e1),
            slack: 2.0 * dt * lip,
        });
    }
    Ok(GronwallResult::Checked {
        t_eps,
        eps,
        intervals,
        unresolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientSpec, TimeProfile};
    use crate::grid::Grid;
    use crate::stability::{Constant, KnownConstants};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn flat(g: &Arc<Grid>, t: f64, u: f64, v: f64) -> ModelState {
        ModelState::new(t, Field::constant(g.clone(), u), Field::constant(g.clone(), v)).unwrap()
    }

    fn tight() -> StepperConfig {
        StepperConfig {
            error_tol: 1e-9,
            dt_max: 0.1,
            ..StepperConfig::default()
        }
    }

    fn logistic(u0: f64, t: f64) -> f64 {
        u0 / (u0 + (1.0 - u0) * (-t).exp())
    }

    fn logistic_pair() -> (Trajectory, Trajectory) {
        let g = Grid::interval(1.0, 5).unwrap();
        let c = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0).unwrap();
        let p = ModelParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let runs = run_many(&[flat(&g, 0.0, 0.5, 0.5), flat(&g, 0.0, 2.0, 2.0)], 8.0, &c, &p, &tight(), 0.25).unwrap();
        let mut it = runs.into_iter();
        (it.next().unwrap(), it.next().unwrap())
    }

    #[test]
    fn gap_of_run_with_itself_is_zero() {
        let (a, _) = logistic_pair();
        let s = trajectory_gap(&a, &a).unwrap();
        assert!(s.samples.iter().all(|g| g.e == 0.0 && g.w_linf == 0.0));
    }

    #[test]
    fn gap_matches_closed_form_logistic() {
        let (a, b) = logistic_pair();
        let s = trajectory_gap(&a, &b).unwrap();
        for g in &s.samples {
            let exact = (logistic(0.5, g.t) - logistic(2.0, g.t)).abs();
            assert!((g.w_linf - exact).abs() < 1e-6, "t={} {} vs {exact}", g.t, g.w_linf);
        }
        let r = trajectory_gap(&b, &a).unwrap();
        assert_eq!(s, r);
    }

    #[test]
    fn gap_energy_is_consistent_with_fields() {
        let (a, b) = logistic_pair();
        let s = trajectory_gap(&a, &b).unwrap();
        for ((g, sa), sb) in s.samples.iter().zip(&a.samples).zip(&b.samples) {
            assert_abs_diff_eq!(g.e, g.w_l2 * g.w_l2 + g.phi_l2 * g.phi_l2, epsilon = 1e-14);
            let direct: f64 = sa
                .u
                .grid()
                .weights()
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    w * ((sa.u.values()[i] - sb.u.values()[i]).powi(2) + (sa.v.values()[i] - sb.v.values()[i]).powi(2))
                })
                .sum();
            assert_abs_diff_eq!(g.e, direct, epsilon = 1e-13 * direct.max(1.0));
        }
    }

    #[test]
    fn gap_rejects_mismatched_times() {
        let (a, b) = logistic_pair();
        let short = a.segment(0.0, 4.0);
        assert!(matches!(trajectory_gap(&short, &b), Err(Error::Structural(_))));
        let mut shifted = b.clone();
        shifted.samples[3].t += 0.01;
        assert!(matches!(trajectory_gap(&a, &shifted), Err(Error::Structural(_))));
    }

    fn synthetic(f: impl Fn(f64) -> f64, t_end: f64, n: usize) -> GapSeries {
        let pts: Vec<(f64, f64)> = (0..=n).map(|k| {
            let t = t_end * k as f64 / n as f64;
            (t, f(t))
        }).collect();
        GapSeries::from_energy(&pts)
    }

    #[test]
    fn fit_exact_exponential() {
        let s = synthetic(|t| (-0.4 * t).exp(), 20.0, 200);
        let fit = fit_decay_rate(&s, (0.0, 20.0)).unwrap();
        assert_abs_diff_eq!(fit.rate, -0.4, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.r2, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn fit_perturbed_exponential() {
        let s = synthetic(|t| (1.0 + 0.01 * t.sin()) * (-0.4 * t).exp(), 20.0, 400);
        let fit = fit_decay_rate(&s, (0.0, 20.0)).unwrap();
        assert!((-0.41..=-0.39).contains(&fit.rate), "{}", fit.rate);
    }

    #[test]
    fn fit_floor_and_range() {
        let s = synthetic(|t| if t > 5.0 { 0.0 } else { (-t).exp() }, 10.0, 100);
        let fit = fit_decay_rate(&s, (0.0, 10.0)).unwrap();
        assert!(fit.floored && fit.rate == f64::NEG_INFINITY);
        assert!(matches!(fit_decay_rate(&s, (0.0, 0.15)), Err(Error::Range(_))));
    }

    #[test]
    fn persistence_of_flat_logistic() {
        let (a, _) = logistic_pair();
        let p = estimate_persistence(&a, 2.0).unwrap();
        let PersistenceEstimate::Success { eta_hat, xi_hat, burn_in } = p else {
            panic!("{p:?}")
        };
        assert_abs_diff_eq!(eta_hat, logistic(0.5, 2.0), epsilon = 1e-6);
        assert!(xi_hat <= burn_in);

        let g = Grid::interval(1.0, 5).unwrap();
        let c = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0).unwrap();
        let p = ModelParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let long = run(&flat(&g, 0.0, 0.5, 0.5), 15.0, &c, &p, &tight(), 0.5, &mut []).unwrap();
        let eta = estimate_persistence(&long, 14.0).unwrap().eta().unwrap();
        assert!((eta - 1.0).abs() < 1e-4);

        let dead = run(&flat(&g, 0.0, 0.0, 0.0), 2.0, &c, &p, &tight(), 0.5, &mut []).unwrap();
        assert!(matches!(estimate_persistence(&dead, 1.0).unwrap(), PersistenceEstimate::Failure { .. }));
        assert!(estimate_persistence(&dead, 3.0).is_err());
    }

    #[test]
    fn bounds_of_flat_equilibrium() {
        let g = Grid::interval(2.0, 9).unwrap();
        let c = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0).unwrap();
        let p = ModelParams::new(0.3, 1.0, 1.0, 1.0).unwrap();
        let traj = run(&flat(&g, 0.0, 1.0, 1.0), 1.0, &c, &p, &tight(), 0.5, &mut []).unwrap();
        let b = estimate_bounds(&traj, (0.0, 0.0, 0.0));
        assert_abs_diff_eq!(b.m1_hat, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.m2_hat, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.c3_hat, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn c3_scales_with_mu() {
        let g = Grid::interval(1.0, 9).unwrap();
        let c = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0).unwrap();
        for mu in [1.0, 2.5] {
            let p = ModelParams::new(0.0, 1.0, 1.0, mu).unwrap();
            let traj = run(&flat(&g, 0.0, 0.5, 0.0), 30.0, &c, &p, &tight(), 1.0, &mut []).unwrap();
            let b = estimate_bounds(&traj, (20.0, 20.0, 20.0));
            assert!((b.c3_hat - mu).abs() < 1e-6 * mu);
            assert!((b.m2_hat - 1.0).abs() < 1e-6);
            assert!(b.m1_hat <= b.m2_hat * g.volume() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn w2inf_of_quadratic() {
        // f = x², h = 0.25 on [0, 1]: f'' = 2 everywhere in the interior,
        // reflected second difference at x = 1 is 2(f(0.75) − 1)/h² = −14
        let g = Grid::interval(1.0, 5).unwrap();
        let f = Field::from_fn(g, |[x, _]| x * x);
        assert_abs_diff_eq!(w2inf_norm(&f), 14.0, epsilon = 1e-12);
        let g2 = Grid::rectangle(1.0, 1.0, 5, 5).unwrap();
        let f2 = Field::from_fn(g2, |[x, y]| 0.1 * (x - 0.5) * (y - 0.5));
        // reflected second difference at a corner: 2·0.1·0.25·0.5/h²
        assert_abs_diff_eq!(w2inf_norm(&f2), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn start_phases() {
        let g = Grid::interval(1.0, 3).unwrap();
        let c = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0).unwrap();
        assert_eq!(start_times(&c, 0.0, 8), vec![0.0]);
        let a0 = CoefficientSpec::separable(
            TimeProfile::Sinusoid {
                offset: 1.0,
                amplitude: 0.2,
                frequency: 1.0,
                phase: 0.0,
            },
            Field::constant(g.clone(), 1.0),
        )
        .unwrap();
        let c = CoefficientSet::new(a0, c.a1.clone(), c.a2.clone()).unwrap();
        let ts = start_times(&c, 0.0, 8);
        assert_eq!(ts.len(), 8);
        assert_abs_diff_eq!(ts[4], std::f64::consts::PI, epsilon = 1e-12);
    }

    #[test]
    fn entire_solution_constant_case() {
        let g = Grid::interval(1.0, 11).unwrap();
        let c = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0).unwrap();
        let p = ModelParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let seeds = vec![
            (Field::constant(g.clone(), 0.1), Field::zeros(g.clone())),
            (Field::constant(g.clone(), 5.0), Field::zeros(g.clone())),
        ];
        let es = approximate_entire_solution(&c, &p, &tight(), 30.0, (0.0, 5.0), &seeds, 0.5, 1e-6).unwrap();
        for s in &es.segment.samples {
            assert!(s.t >= 0.0);
            assert!((s.u.max_abs() - 1.0).abs() < 1e-4 && (s.v.min() - 1.0).abs() < 1e-4);
        }
        assert!(es.seed_gap < 1e-6);
        let err = approximate_entire_solution(&c, &p, &tight(), 1.0, (0.0, 1.0), &seeds, 0.5, 1e-6).unwrap_err();
        assert!(matches!(err, Error::TBackInsufficient { .. }));
        assert!(approximate_entire_solution(&c, &p, &tight(), 1.0, (0.0, 1.0), &seeds[..1], 0.5, 1e-6).is_err());
    }

    fn flat_criterion_parts(g: &Arc<Grid>) -> (CoefficientSet, ModelParams, KnownConstants) {
        let c = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0).unwrap();
        let p = ModelParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let k = KnownConstants {
            m2: Some(Constant::config(1.05)),
            eta: Some(Constant::config(0.95)),
            c3_tilde: Some(Constant::config(1.1)),
            ..Default::default()
        };
        (c, p, k)
    }

    #[test]
    fn gronwall_identical_runs() {
        let g = Grid::interval(1.0, 5).unwrap();
        let (c, p, k) = flat_criterion_parts(&g);
        let crit = Criterion { coeffs: &c, params: &p, constants: &k };
        let traj = run(&flat(&g, 0.0, 1.0, 1.0), 2.0, &c, &p, &tight(), 0.1, &mut []).unwrap();
        let r = gronwall_check((&traj, &traj), &crit, 0.01).unwrap();
        // E ≡ 0 sits below the round-off floor everywhere
        let GronwallResult::Checked { unresolved, intervals, .. } = &r else { panic!() };
        assert!(intervals.is_empty() && *unresolved == 20);
        let r = gronwall_check_series(&trajectory_gap(&traj, &traj).unwrap(), &crit, 0.01, 0.0, 0.0).unwrap();
        assert_eq!(r.fraction_satisfied(), Some(1.0));
    }

    #[test]
    fn gronwall_flat_pair_and_injected_violation() {
        let g = Grid::interval(1.0, 5).unwrap();
        let (c, p, k) = flat_criterion_parts(&g);
        let crit = Criterion { coeffs: &c, params: &p, constants: &k };
        let runs = run_many(&[flat(&g, 0.0, 0.9, 0.9), flat(&g, 0.0, 1.04, 1.0)], 10.0, &c, &p, &tight(), 0.1).unwrap();
        let r = gronwall_check((&runs[0], &runs[1]), &crit, 0.02).unwrap();
        assert_eq!(r.fraction_satisfied(), Some(1.0), "{:?}", r.worst());

        let bad = synthetic(f64::exp, 10.0, 100);
        let r = gronwall_check_series(&bad, &crit, 0.02, 0.0, 0.0).unwrap();
        assert_eq!(r.fraction_satisfied(), Some(0.0));

        let short = run_many(&[flat(&g, 0.0, 0.9, 0.9), flat(&g, 0.0, 1.04, 1.0)], 0.5, &c, &p, &tight(), 0.1).unwrap();
        let r = gronwall_check((&short[0], &short[1]), &crit, 0.0001).unwrap();
        assert!(matches!(r, GronwallResult::Inconclusive { .. }));
    }

    #[test]
    fn settle_time_of_logistic() {
        let (a, _) = logistic_pair();
        let t = settle_time(&a, 0.01);
        // u = 0.5 → tail ≥ 0.9997, entry when logistic(0.5, t) ≥ 0.99·0.9997
        assert!(t > 4.0 && t < 5.5, "{t}");
    }
}
