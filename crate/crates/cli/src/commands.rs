//! Subcommand implementations. Each returns the lines it prints on success.

use std::path::{Path, PathBuf};

use chemostab_core::experiments::{
    self, bounds_series, estimate_bounds, estimate_persistence, fit_decay_rate, gronwall_check, settle_time,
    start_times, trajectory_gap, write_bounds_csv, BoundsEstimate, DecayFit, GapSeries, GronwallResult,
    PersistenceEstimate,
};
use chemostab_core::grid::{integrate, laplacian_neumann};
use chemostab_core::stability::{
    check_h2, compute_m2_convex, estimate_theta, Constant, Criterion, KnownConstants, Provenance, StabilityReport,
    Verdict,
};
use chemostab_core::stepper::{run, run_fixed};
use chemostab_core::{CoefficientSet, Error, Field, Grid, ModelParams, ModelState, StepperConfig, Trajectory};
use rayon::prelude::*;

use crate::config::{M2Source, Prepared, RunConfig};
use crate::output::{short, Output};
use crate::{Cli, CliError, Command};

/// Options shared by all commands, from the global flags.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

pub fn dispatch(cli: &Cli) -> Result<Vec<String>, CliError> {
    let opts = Options {
        out: cli.out.clone(),
        threads: cli.threads,
        seed: cli.seed,
    };
    if cli.command == Command::Converge && cli.config.is_none() {
        return converge(None, &opts);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::validation("--config", "a config file is required"))?;
    let (config, base) = RunConfig::load(path)?;
    match cli.command {
        Command::Simulate => simulate(&config, &base, &opts),
        Command::Stability => stability(&config, &base, &opts).map(|r| r.lines),
        Command::StabilityExperiment => stability_experiment(&config, &base, &opts).map(|r| r.lines),
        Command::Sweep => sweep(&config, &base, &opts).map(|r| r.lines),
        Command::Converge => converge(Some((&config, &base)), &opts),
    }
}

fn with_seed(config: &RunConfig, opts: &Options) -> RunConfig {
    let mut c = config.clone();
    if let Some(s) = opts.seed {
        c.random_seed = s;
    }
    c
}

fn output_for(prep: &Prepared, base: &Path, opts: &Options, command: &str) -> Result<Output, CliError> {
    let dir = match (&opts.out, &prep.config.output_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => base.join("out"),
    };
    Output::new(&dir, &prep.config.name, &prep.hash, command)
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))
}

fn runtime(e: Error) -> CliError {
    match e {
        Error::StepSizeUnderflow { t, dt, reason, .. } => {
            CliError::Runtime(format!("step size underflow at t = {t} (dt = {dt:e}): {reason}"))
        }
        other => CliError::Runtime(other.to_string()),
    }
}

pub fn simulate(config: &RunConfig, base: &Path, opts: &Options) -> Result<Vec<String>, CliError> {
    let config = with_seed(config, opts);
    let prep = config.prepare(base, false)?;
    let out = output_for(&prep, base, opts, "simulate")?;
    let t = config.time;
    let traj = run(
        &prep.seeds[0],
        t.t_end,
        &prep.coeffs,
        &prep.params,
        &prep.stepper,
        t.sample_interval,
        &mut [],
    )
    .map_err(runtime)?;

    let rows: Vec<String> = traj
        .diagnostics
        .iter()
        .map(|d| format!("{},{},{},{},{}", d.t, d.mass_u, d.mass_v, d.min_u, d.max_u))
        .collect();
    let p_traj = out.write_rows("trajectory", "t,mass_u,mass_v,min_u,max_u", &rows)?;
    let last = traj.last();
    let rows: Vec<String> = (0..prep.grid.len())
        .map(|i| {
            let [x, y] = prep.grid.coords(i);
            format!("{},{},{},{},{},{}", last.t, i, x, y, last.u.values()[i], last.v.values()[i])
        })
        .collect();
    let p_final = out.write_rows("final", "t,node,x,y,u,v", &rows)?;
    let p_bounds = out.write("bounds", |w, meta| write_bounds_csv(&bounds_series(&traj), w, meta))?;
    let s = traj.stats;
    Ok(vec![
        format!(
            "simulate t_end={} min_u={} max_u={} mass_u={} accepted={} rejected={} clamped_mass={:e}",
            short(last.t),
            short(last.u.min()),
            short(last.u.max()),
            short(integrate(&last.u)),
            s.accepted,
            s.rejected,
            s.clamped_mass
        ),
        format!("wrote {}", p_traj.display()),
        format!("wrote {}", p_final.display()),
        format!("wrote {}", p_bounds.display()),
    ])
}

/// Constants measured from simulations of the seeds.
#[derive(Debug, Clone)]
pub struct Measured {
    pub burn_in: f64,
    pub persistence: Vec<PersistenceEstimate>,
    pub bounds: Vec<BoundsEstimate>,
    pub eta: Option<f64>,
    pub m1: f64,
    pub m2: f64,
    pub c3: f64,
}

pub fn measure(runs: &[Trajectory], burn_override: Option<f64>, settle_tol: f64) -> Result<Measured, CliError> {
    let burn_in = match burn_override {
        Some(b) => b,
        None => runs.iter().map(|r| settle_time(r, settle_tol)).fold(0.0, f64::max),
    };
    let persistence = runs
        .iter()
        .map(|r| estimate_persistence(r, burn_in))
        .collect::<chemostab_core::Result<Vec<_>>>()
        .map_err(runtime)?;
    let bounds: Vec<BoundsEstimate> = runs
        .iter()
        .map(|r| estimate_bounds(r, (burn_in, burn_in, burn_in)))
        .collect();
    let eta = persistence
        .iter()
        .map(PersistenceEstimate::eta)
        .try_fold(f64::INFINITY, |m, e| e.map(|e| m.min(e)));
    Ok(Measured {
        burn_in,
        persistence,
        eta,
        m1: bounds.iter().map(|b| b.m1_hat).fold(0.0, f64::max),
        m2: bounds.iter().map(|b| b.m2_hat).fold(0.0, f64::max),
        c3: bounds.iter().map(|b| b.c3_hat).fold(0.0, f64::max),
        bounds,
    })
}

/// Fills in constants: config values first; `M₂` from the convex-domain
/// formula when (H2) holds; measured values for whatever is still missing.
pub fn resolve_constants(prep: &Prepared, measured: Option<&Measured>) -> (KnownConstants, Vec<String>) {
    let mut k = prep.config.known_constants();
    let mut notes = Vec::new();
    let n = prep.config.stability.n_samples;
    let convex = || -> Option<f64> {
        let h2 = check_h2(&prep.coeffs, &prep.params, prep.grid.dim(), true, prep.window, n).ok()?;
        if !h2.holds() {
            return None;
        }
        compute_m2_convex(&prep.coeffs, &prep.params, prep.grid.dim(), prep.window, n)
            .ok()
            .map(|c| c.m2)
    };
    let measured_m2 = measured.map(|m| Constant::measured(m.m2));
    if prep.config.stability.m2_source == M2Source::Measured && measured_m2.is_some() {
        if k.m2.is_some() {
            notes.push("configured M2 replaced by the measured estimate".into());
        }
        k.m2 = measured_m2;
    } else if k.m2.is_none() {
        k.m2 = convex()
            .map(|v| Constant {
                value: v,
                provenance: Provenance::ConvexFormula,
            })
            .or(measured_m2);
    }
    if let Some(m) = measured {
        k.m1 = k.m1.or(Some(Constant::measured(m.m1)));
        k.c3_tilde = k.c3_tilde.or(Some(Constant::measured(m.c3)));
        if k.eta.is_none() {
            match m.eta {
                Some(e) => k.eta = Some(Constant::measured(e)),
                None => notes.push("persistence failed on some seed; eta not measured".into()),
            }
        }
    }
    (k, notes)
}

fn verdict_line(v: &Verdict) -> String {
    let clauses: Vec<String> = v
        .clauses
        .iter()
        .map(|c| format!("[{}: margin={} {}]", c.name, short(c.margin()), if c.holds() { "ok" } else { "FAIL" }))
        .collect();
    let mut line = format!("{}: {} {}", v.name, v.status, clauses.join(" "));
    for n in &v.notes {
        line.push_str(&format!(" ({n})"));
    }
    line
}

fn constant_lines(k: &KnownConstants) -> Vec<String> {
    [("M1", k.m1), ("M2", k.m2), ("eta", k.eta), ("C3_tilde", k.c3_tilde)]
        .into_iter()
        .map(|(name, c)| match c {
            Some(c) => format!("{name}={} ({})", short(c.value), c.provenance),
            None => format!("{name}=missing"),
        })
        .collect()
}

fn run_phase_seeds(
    prep: &Prepared,
    starts: &[f64],
    duration: f64,
    threads: Option<usize>,
) -> Result<Vec<Vec<Trajectory>>, CliError> {
    let jobs: Vec<(usize, ModelState)> = starts
        .iter()
        .enumerate()
        .flat_map(|(p, &s)| {
            prep.seeds.iter().map(move |seed| {
                let mut st = seed.clone();
                st.t = s;
                (p, st)
            })
        })
        .collect();
    let interval = prep.config.time.sample_interval;
    let results: Vec<chemostab_core::Result<Trajectory>> = pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|(_, s)| run(s, s.t + duration, &prep.coeffs, &prep.params, &prep.stepper, interval, &mut []))
            .collect()
    });
    let mut by_phase = vec![Vec::new(); starts.len()];
    for ((p, _), r) in jobs.iter().zip(results) {
        by_phase[*p].push(r.map_err(runtime)?);
    }
    Ok(by_phase)
}

pub struct StabilityOutcome {
    pub report: StabilityReport,
    pub measured: Option<Measured>,
    pub lines: Vec<String>,
}

/// Evaluates hypotheses and θ for a prepared config, measuring constants when
/// enabled.
pub fn stability_report(prep: &Prepared, threads: Option<usize>) -> Result<(StabilityReport, Option<Measured>), CliError> {
    let cfg = &prep.config;
    let measured = if cfg.stability.measure {
        let duration = cfg.time.t_end - cfg.time.t0;
        if !(duration > 0.0) {
            return Err(CliError::validation("time.t_end", "measurement needs t_end > t0"));
        }
        let runs = run_phase_seeds(prep, &[cfg.time.t0], duration, threads)?.remove(0);
        Some(measure(&runs, cfg.experiment.burn_in, cfg.experiment.settle_tol)?)
    } else {
        None
    };
    let (constants, notes) = resolve_constants(prep, measured.as_ref());
    let mut report = estimate_theta(&prep.coeffs, &prep.params, &constants, prep.window, cfg.stability.n_samples)
        .map_err(runtime)?;
    report.notes.extend(notes);
    Ok((report, measured))
}

pub fn stability(config: &RunConfig, base: &Path, opts: &Options) -> Result<StabilityOutcome, CliError> {
    let config = with_seed(config, opts);
    let prep = config.prepare(base, config.stability.measure)?;
    let out = output_for(&prep, base, opts, "stability")?;
    let (report, measured) = stability_report(&prep, opts.threads)?;
    let path = out.write("report", |w, meta| report.write_csv(w, meta))?;

    let mut lines = vec![format!(
        "{} theta={} quadrature_error={}",
        report.conclusion,
        short(report.theta),
        short(report.quadrature_error)
    )];
    lines.extend([&report.h1, &report.h2, &report.h3].map(verdict_line));
    lines.extend(constant_lines(&report.constants));
    lines.push(format!("theorem_applies={}", report.theorem_applies()));
    for n in &report.notes {
        lines.push(format!("note: {n}"));
    }
    lines.push(format!("wrote {}", path.display()));
    Ok(StabilityOutcome {
        report,
        measured,
        lines,
    })
}

#[derive(Debug, Clone)]
pub struct PairResult {
    pub phase_start: f64,
    pub seeds: (usize, usize),
    pub final_gap: f64,
    pub fit: Option<DecayFit>,
    pub gronwall: Option<GronwallResult>,
}

pub struct ExperimentOutcome {
    pub report: StabilityReport,
    pub measured: Measured,
    pub eps: Option<f64>,
    pub pairs: Vec<PairResult>,
    pub pairwise_gap_final: f64,
    /// `None` when θ ≥ 0 and the comparison does not apply.
    pub rate_ok: Option<bool>,
    pub gronwall_ok: Option<bool>,
    pub entire: Result<experiments::EntireSolution, String>,
    pub entire_within_bounds: Option<bool>,
    pub runs: Vec<Vec<Trajectory>>,
    pub lines: Vec<String>,
}

pub fn stability_experiment(config: &RunConfig, base: &Path, opts: &Options) -> Result<ExperimentOutcome, CliError> {
    let config = with_seed(config, opts);
    let prep = config.prepare(base, true)?;
    if prep.seeds.len() < 2 {
        return Err(CliError::validation("seeds", "stability-experiment needs at least two seeds"));
    }
    if prep.seeds.iter().any(|s| s.u.max() <= 0.0) {
        return Err(CliError::validation("seeds", "u0 must not vanish identically"));
    }
    let t = config.time;
    let duration = t.t_end - t.t0;
    if !(duration > 0.0) {
        return Err(CliError::validation("time.t_end", "must exceed time.t0"));
    }
    let ex = config.experiment;
    let fit_window = ex.fit_window.map(|[a, b]| (a, b)).unwrap_or((duration / 6.0, 2.0 * duration / 3.0));
    if !(fit_window.1 > fit_window.0 && fit_window.0 >= 0.0 && fit_window.1 <= duration) {
        return Err(CliError::validation("experiment.fit_window", "must lie inside [0, t_end - t0]"));
    }
    let out = output_for(&prep, base, opts, "stability-experiment")?;

    let starts = start_times(&prep.coeffs, t.t0, ex.phases);
    let runs = run_phase_seeds(&prep, &starts, duration, opts.threads)?;
    let measured = measure(&runs[0], ex.burn_in, ex.settle_tol)?;
    let (constants, notes) = resolve_constants(&prep, Some(&measured));
    let mut report =
        estimate_theta(&prep.coeffs, &prep.params, &constants, prep.window, config.stability.n_samples).map_err(runtime)?;
    report.notes.extend(notes);
    let eps = config.stability.eps.or_else(|| report.default_eps());
    let criterion = Criterion {
        coeffs: &prep.coeffs,
        params: &prep.params,
        constants: &report.constants,
    };

    let mut pairs = Vec::new();
    let mut gap_files = Vec::new();
    for (p, phase_runs) in runs.iter().enumerate() {
        for i in 0..phase_runs.len() {
            for j in i + 1..phase_runs.len() {
                let series: GapSeries = trajectory_gap(&phase_runs[i], &phase_runs[j]).map_err(runtime)?;
                let start = starts[p];
                let fit = fit_decay_rate(&series, (start + fit_window.0, start + fit_window.1)).ok();
                let gronwall = match (p, eps) {
                    (0, Some(e)) => Some(gronwall_check((&phase_runs[i], &phase_runs[j]), &criterion, e).map_err(runtime)?),
                    _ => None,
                };
                let last = series.last().expect("runs have samples");
                if p == 0 {
                    gap_files.push(out.write(&format!("gap-s{i}-s{j}"), |w, meta| series.write_csv(w, meta))?);
                    if let Some(g) = &gronwall {
                        gap_files.push(out.write(&format!("gronwall-s{i}-s{j}"), |w, meta| g.write_block(w, meta))?);
                    }
                }
                pairs.push(PairResult {
                    phase_start: start,
                    seeds: (i, j),
                    final_gap: last.w_linf.max(last.phi_linf),
                    fit,
                    gronwall,
                });
            }
        }
    }
    let pairwise_gap_final = pairs.iter().map(|p| p.final_gap).fold(0.0, f64::max);
    let rate_ok = match eps {
        Some(e) if report.theta < 0.0 => Some(pairs.iter().all(|p| {
            p.fit
                .is_some_and(|f| f.floored || (f.rate <= report.theta + e + ex.fit_tolerance && f.r2 >= ex.min_r2))
        })),
        _ => None,
    };
    let gronwall_ok = {
        let fr: Vec<Option<f64>> = pairs
            .iter()
            .filter_map(|p| p.gronwall.as_ref().map(GronwallResult::fraction_satisfied))
            .collect();
        if fr.is_empty() || fr.iter().any(Option::is_none) {
            None
        } else {
            Some(fr.iter().all(|f| *f == Some(1.0)))
        }
    };

    let span = ex.entire_span.map(|[a, b]| (a, b)).unwrap_or((t.t0, t.t_end));
    let seed_fields: Vec<(Field, Field)> = prep.seeds.iter().map(|s| (s.u.clone(), s.v.clone())).collect();
    let entire = pool(opts.threads)?.install(|| {
        experiments::approximate_entire_solution(
            &prep.coeffs,
            &prep.params,
            &prep.stepper,
            ex.t_back,
            span,
            &seed_fields,
            t.sample_interval,
            ex.seed_tol,
        )
    });
    let entire = match entire {
        Ok(es) => Ok(es),
        Err(e @ Error::TBackInsufficient { .. }) => Err(e.to_string()),
        Err(e) => return Err(runtime(e)),
    };
    let entire_within_bounds = match (&entire, measured.eta) {
        (Ok(es), Some(eta)) => Some(
            es.segment
                .samples
                .iter()
                .all(|s| s.u.min() >= eta && s.u.max() <= measured.m2),
        ),
        _ => None,
    };

    let p_report = out.write("report", |w, meta| report.write_csv(w, meta))?;
    let mut bounds_files = Vec::new();
    for (k, r) in runs[0].iter().enumerate() {
        bounds_files.push(out.write(&format!("bounds-s{k}"), |w, meta| write_bounds_csv(&bounds_series(r), w, meta))?);
    }
    let persistence_rows: Vec<String> = measured
        .persistence
        .iter()
        .enumerate()
        .map(|(k, p)| match p {
            PersistenceEstimate::Success {
                eta_hat,
                xi_hat,
                burn_in,
            } => format!("{k},success,{eta_hat},{xi_hat},{burn_in}"),
            PersistenceEstimate::Failure { t, min_u, .. } => format!("{k},failure,{min_u},{t},{}", measured.burn_in),
        })
        .collect();
    let p_pers = out.write_rows("persistence", "seed,status,eta_hat,xi_hat,burn_in", &persistence_rows)?;
    let p_entire = match &entire {
        Ok(es) => {
            let rows: Vec<String> = es
                .segment
                .diagnostics
                .iter()
                .map(|d| format!("{},{},{},{}", d.t, d.mass_u, d.min_u, d.max_u))
                .collect();
            Some(out.write_rows("entire", "t,mass_u,min_u,max_u", &rows)?)
        }
        Err(_) => None,
    };

    let fmt_opt = |b: Option<bool>| b.map_or("not-applicable".to_string(), |b| b.to_string());
    let worst_rate = pairs
        .iter()
        .filter_map(|p| p.fit.map(|f| f.rate))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_r2 = pairs
        .iter()
        .filter_map(|p| p.fit.filter(|f| !f.floored).map(|f| f.r2))
        .fold(f64::INFINITY, f64::min);
    let gap_ok = pairwise_gap_final < ex.gap_tol;
    let summary_rows = vec![
        format!("theta,{}", report.theta),
        format!("quadrature_error,{}", report.quadrature_error),
        format!("eps,{}", eps.unwrap_or(f64::NAN)),
        format!("conclusion,{}", report.conclusion),
        format!("burn_in,{}", measured.burn_in),
        format!("eta_hat,{}", measured.eta.unwrap_or(f64::NAN)),
        format!("M1_hat,{}", measured.m1),
        format!("M2_hat,{}", measured.m2),
        format!("C3_hat,{}", measured.c3),
        format!("pairwise_gap_final,{pairwise_gap_final}"),
        format!("max_fitted_rate,{worst_rate}"),
        format!("min_fit_r2,{min_r2}"),
        format!("rate_ok,{}", fmt_opt(rate_ok)),
        format!("gronwall_ok,{}", fmt_opt(gronwall_ok)),
        format!(
            "entire_seed_gap,{}",
            entire.as_ref().map(|e| e.seed_gap).unwrap_or(f64::NAN)
        ),
        format!("entire_within_bounds,{}", fmt_opt(entire_within_bounds)),
    ];
    let p_summary = out.write_rows("summary", "key,value", &summary_rows)?;

    let mut lines = vec![
        format!(
            "{} theta={} eps={}",
            report.conclusion,
            short(report.theta),
            eps.map_or("none".into(), short)
        ),
        verdict_line(&report.h1),
        verdict_line(&report.h2),
        verdict_line(&report.h3),
    ];
    lines.extend(constant_lines(&report.constants));
    lines.push(format!(
        "burn_in={} eta_hat={} M1_hat={} M2_hat={} C3_hat={}",
        short(measured.burn_in),
        measured.eta.map_or("failed".into(), short),
        short(measured.m1),
        short(measured.m2),
        short(measured.c3)
    ));
    lines.push(format!(
        "pairwise_gap_final={} phases={} max_fitted_rate={} min_r2={}",
        short(pairwise_gap_final),
        starts.len(),
        short(worst_rate),
        short(min_r2)
    ));
    for p in pairs.iter().filter(|p| p.gronwall.is_some()) {
        let g = p.gronwall.as_ref().expect("filtered");
        lines.push(match (g.fraction_satisfied(), g.worst()) {
            (Some(f), Some(w)) => format!(
                "gronwall s{}-s{}: fraction={} worst_margin={} slack={}",
                p.seeds.0,
                p.seeds.1,
                short(f),
                short(w.margin()),
                short(w.slack)
            ),
            _ => match g {
                GronwallResult::Inconclusive { reason } => format!("gronwall s{}-s{}: inconclusive ({reason})", p.seeds.0, p.seeds.1),
                GronwallResult::Checked { .. } => format!("gronwall s{}-s{}: no resolved intervals", p.seeds.0, p.seeds.1),
            },
        });
    }
    lines.push(match &entire {
        Ok(es) => format!(
            "entire_solution t_back={} seed_gap={} within_bounds={}",
            short(es.t_back),
            short(es.seed_gap),
            fmt_opt(entire_within_bounds)
        ),
        Err(e) => format!("entire_solution {e}"),
    });
    for n in &report.notes {
        lines.push(format!("note: {n}"));
    }
    lines.push(format!(
        "summary pairwise_gap_final < {}: {gap_ok} rate<=theta+eps: {}",
        ex.gap_tol,
        fmt_opt(rate_ok)
    ));
    for p in [Some(p_report), Some(p_pers), p_entire, Some(p_summary)]
        .into_iter()
        .flatten()
        .chain(gap_files)
        .chain(bounds_files)
    {
        lines.push(format!("wrote {}", p.display()));
    }

    Ok(ExperimentOutcome {
        report,
        measured,
        eps,
        pairs,
        pairwise_gap_final,
        rate_ok,
        gronwall_ok,
        entire,
        entire_within_bounds,
        runs,
        lines,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub values: Vec<f64>,
    pub h1: String,
    pub h2: String,
    pub h3: String,
    pub h3_ok: bool,
    pub theta: f64,
    pub quadrature_error: f64,
    pub conclusion: String,
    pub m2: f64,
    pub m2_provenance: String,
    pub error: String,
}

impl SweepRow {
    fn csv(&self, index: usize) -> String {
        let vals: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        format!(
            "{index},{},{},{},{},{},{},{},{},{},{},{}",
            vals.join(","),
            self.h1,
            self.h2,
            self.h3,
            self.h3_ok,
            self.theta,
            self.quadrature_error,
            self.conclusion,
            self.m2,
            self.m2_provenance,
            self.error.replace(',', ";")
        )
    }

    pub fn from_report(values: Vec<f64>, r: &StabilityReport) -> Self {
        SweepRow {
            values,
            h1: r.h1.status.to_string(),
            h2: r.h2.status.to_string(),
            h3: r.h3.status.to_string(),
            h3_ok: r.h3.holds(),
            theta: r.theta,
            quadrature_error: r.quadrature_error,
            conclusion: r.conclusion.to_string(),
            m2: r.constants.m2.map_or(f64::NAN, |c| c.value),
            m2_provenance: r.constants.m2.map_or("missing".into(), |c| c.provenance.to_string()),
            error: String::new(),
        }
    }
}

pub struct SweepOutcome {
    pub paths: Vec<String>,
    pub rows: Vec<SweepRow>,
    pub file: PathBuf,
    pub lines: Vec<String>,
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect()
    })
}

fn sweep_point(doc: &toml::Value, paths: &[String], values: &[f64], base: &Path) -> Result<StabilityReport, CliError> {
    let mut doc = doc.clone();
    for (p, v) in paths.iter().zip(values) {
        crate::config::set_path(&mut doc, p, *v)?;
    }
    let cfg: RunConfig = doc
        .try_into()
        .map_err(|e: toml::de::Error| CliError::validation("sweep", e.to_string()))?;
    let prep = cfg.prepare(base, cfg.stability.measure)?;
    // measurements inside a point stay sequential; points run in parallel
    Ok(stability_report(&prep, Some(1))?.0)
}

pub fn sweep(config: &RunConfig, base: &Path, opts: &Options) -> Result<SweepOutcome, CliError> {
    let config = with_seed(config, opts);
    let prep = config.prepare(base, config.stability.measure)?;
    let axes = config
        .sweep
        .as_ref()
        .filter(|s| !s.axes.is_empty())
        .ok_or_else(|| CliError::validation("sweep.axes", "at least one sweep axis is required"))?
        .axes
        .clone();
    let paths: Vec<String> = axes.iter().map(|a| a.path.clone()).collect();
    let points = cartesian(&axes.iter().map(|a| a.points()).collect::<Result<Vec<_>, _>>()?);
    let doc = toml::Value::try_from(&config).map_err(|e| CliError::Runtime(e.to_string()))?;
    // a bad path is a config error, not a per-point failure
    for p in &paths {
        crate::config::set_path(&mut doc.clone(), p, 0.0)?;
        let head = p.split('.').next().unwrap_or_default();
        if head == "sweep" || head == "name" {
            return Err(CliError::validation(format!("sweep.axes.{p}"), "cannot sweep this key"));
        }
    }
    let out = output_for(&prep, base, opts, "sweep")?;
    let rows: Vec<SweepRow> = pool(opts.threads)?.install(|| {
        points
            .par_iter()
            .map(|vals| match sweep_point(&doc, &paths, vals, base) {
                Ok(r) => SweepRow::from_report(vals.clone(), &r),
                Err(e) => SweepRow {
                    values: vals.clone(),
                    h1: "error".into(),
                    h2: "error".into(),
                    h3: "error".into(),
                    h3_ok: false,
                    theta: f64::NAN,
                    quadrature_error: f64::NAN,
                    conclusion: "error".into(),
                    m2: f64::NAN,
                    m2_provenance: "missing".into(),
                    error: e.to_string(),
                },
            })
            .collect()
    });
    let header = format!(
        "index,{},h1,h2,h3,h3_ok,theta,quadrature_error,conclusion,m2,m2_provenance,error",
        paths.join(",")
    );
    let csv_rows: Vec<String> = rows.iter().enumerate().map(|(i, r)| r.csv(i)).collect();
    let file = out.write_rows("sweep", &header, &csv_rows)?;
    let mut lines = vec![header];
    lines.extend(csv_rows);
    lines.push(format!("wrote {}", file.display()));
    Ok(SweepOutcome {
        paths,
        rows,
        file,
        lines,
    })
}

/// One refinement level of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub error: f64,
    /// `log₂(e_prev / e)`; NaN on the coarsest level.
    pub order: f64,
}

fn with_orders(levels: Vec<(usize, f64)>) -> Vec<ConvergenceRow> {
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for (n, error) in levels {
        let order = rows.last().map_or(f64::NAN, |p| (p.error / error).log2());
        rows.push(ConvergenceRow { n, error, order });
    }
    rows
}

/// `‖Δ_h cos(πx) + π² cos(πx)‖∞` on `(0, 1)` for node counts `counts`.
pub fn laplacian_study(counts: &[usize]) -> Result<Vec<ConvergenceRow>, CliError> {
    let pi2 = std::f64::consts::PI.powi(2);
    let levels = counts
        .iter()
        .map(|&n| {
            let g = Grid::interval(1.0, n)?;
            let f = Field::from_fn(g, |[x, _]| (std::f64::consts::PI * x).cos());
            let lap = laplacian_neumann(&f);
            let err = lap
                .values()
                .iter()
                .zip(f.values())
                .map(|(l, c)| (l + pi2 * c).abs())
                .fold(0.0, f64::max);
            Ok((n, err))
        })
        .collect::<chemostab_core::Result<Vec<_>>>()?;
    Ok(with_orders(levels))
}

/// Heat equation `u_t = Δu` from `1 + cos(πx)` to `t = 0.1` against
/// `1 + e^{−π²t} cos(πx)`, with time steps fine enough that the spatial error
/// dominates.
pub fn heat_study(counts: &[usize]) -> Result<Vec<ConvergenceRow>, CliError> {
    let pi = std::f64::consts::PI;
    let t_end = 0.1;
    let params = ModelParams::new(0.0, 1.0, 1.0, 1.0)?;
    let cfg = StepperConfig::default();
    let levels = counts
        .iter()
        .map(|&n| {
            let g = Grid::interval(1.0, n)?;
            let coeffs = CoefficientSet::constant(g.clone(), 0.0, 0.0, 0.0)?;
            let u0 = Field::from_fn(g.clone(), |[x, _]| 1.0 + (pi * x).cos());
            let s0 = ModelState::new(0.0, u0, Field::zeros(g.clone()))?;
            let end = run_fixed(&s0, t_end, 4000, &coeffs, &params, &cfg)?;
            let decay = (-pi * pi * t_end).exp();
            let err = (0..g.len())
                .map(|i| {
                    let x = g.coords(i)[0];
                    (end.u.values()[i] - 1.0 - decay * (pi * x).cos()).abs()
                })
                .fold(0.0, f64::max);
            Ok((n, err))
        })
        .collect::<chemostab_core::Result<Vec<_>>>()?;
    Ok(with_orders(levels))
}

/// Richardson study on the flat logistic reduction (3 nodes, `a₀ = a₁ = 1`,
/// `a₂ = 0`): `order = log₂(|y_N − y_{2N}| / |y_{2N} − y_{4N}|)`.
pub fn temporal_study(params: &ModelParams, cfg: &StepperConfig, steps: &[usize]) -> Result<Vec<ConvergenceRow>, CliError> {
    let g = Grid::interval(1.0, 3)?;
    let coeffs = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0)?;
    let s0 = ModelState::new(0.0, Field::constant(g.clone(), 0.2), Field::constant(g.clone(), 0.1))?;
    let finals = steps
        .iter()
        .map(|&n| {
            let s = run_fixed(&s0, 1.0, n, &coeffs, params, cfg)?;
            Ok((s.u.values()[0], s.v.values()[0]))
        })
        .collect::<chemostab_core::Result<Vec<_>>>()?;
    let levels: Vec<(usize, f64)> = finals
        .windows(2)
        .zip(&steps[1..])
        .map(|(w, &n)| (n, (w[0].0 - w[1].0).abs().max((w[0].1 - w[1].1).abs())))
        .collect();
    Ok(with_orders(levels))
}

pub fn converge(config: Option<(&RunConfig, &Path)>, opts: &Options) -> Result<Vec<String>, CliError> {
    let (params, cfg, out) = match config {
        Some((c, base)) => {
            let prep = with_seed(c, opts).prepare(base, false)?;
            let out = output_for(&prep, base, opts, "converge")?;
            (prep.params, prep.stepper, out)
        }
        None => {
            let dir = opts.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            let hash = hex_of("converge-defaults");
            (
                ModelParams::new(0.0, 1.0, 1.0, 1.0)?,
                StepperConfig::default(),
                Output::new(&dir, "converge", &hash, "converge")?,
            )
        }
    };
    let lap = laplacian_study(&[11, 21, 41, 81, 161])?;
    let heat = heat_study(&[11, 21, 41, 81])?;
    let temporal = temporal_study(&params, &cfg, &[20, 40, 80, 160, 320])?;

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (name, study) in [("laplacian", &lap), ("heat", &heat), ("temporal", &temporal)] {
        for r in study.iter() {
            rows.push(format!("{name},{},{},{}", r.n, r.error, r.order));
        }
        let last = study.last().expect("non-empty study");
        lines.push(format!("{name} observed_order={} error={}", short(last.order), short(last.error)));
    }
    lines.push(format!(
        "temporal design_order={} theta_scheme={}",
        cfg.order(),
        cfg.theta_scheme
    ));
    let file = out.write_rows("converge", "study,n,error,order", &rows)?;
    lines.push(format!("wrote {}", file.display()));
    Ok(lines)
}

fn hex_of(s: &str) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(s.as_bytes()))
}
