//! Heterogeneous coefficients `a₀, a₁, a₂` and their envelopes.
//!
//! Spatial infima and suprema are taken over grid nodes, the only values the
//! discrete dynamics ever see. Global (all-time) envelopes are taken over a
//! finite window; for the built-in kinds the window extrema are located
//! exactly (critical times of the temporal factor, table knots), so one
//! period of a periodic coefficient gives the all-time envelope.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Temporal factor `g(t)` of a separable coefficient `g(t) h(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeProfile {
    Constant(f64),
    /// `offset + amplitude · sin(frequency · t + phase)`
    Sinusoid {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// `limit + (initial − limit) · exp(−rate · t)`
    ExpDecay { limit: f64, initial: f64, rate: f64 },
}

impl TimeProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeProfile::Constant(c) => c,
            TimeProfile::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => offset + amplitude * (frequency * t + phase).sin(),
            TimeProfile::ExpDecay {
                limit,
                initial,
                rate,
            } => limit + (initial - limit) * (-rate * t).exp(),
        }
    }

    pub fn period(&self) -> Option<f64> {
        match *self {
            TimeProfile::Sinusoid {
                amplitude,
                frequency,
                ..
            } if amplitude != 0.0 && frequency != 0.0 => Some(2.0 * PI / frequency.abs()),
            _ => None,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match *self {
            TimeProfile::Constant(_) => true,
            TimeProfile::Sinusoid {
                amplitude,
                frequency,
                ..
            } => amplitude == 0.0 || frequency == 0.0,
            TimeProfile::ExpDecay {
                limit,
                initial,
                rate,
            } => limit == initial || rate == 0.0,
        }
    }

    /// Interior times in `(start, end)` where `g` may attain an extremum.
    fn critical_times(&self, start: f64, end: f64) -> Vec<f64> {
        match *self {
            TimeProfile::Sinusoid {
                frequency, phase, ..
            } if frequency != 0.0 => {
                // ω t + φ = π/2 + kπ
                let w = frequency;
                let to_t = |k: f64| (PI / 2.0 + k * PI - phase) / w;
                let (ka, kb) = {
                    let a = (w * start + phase - PI / 2.0) / PI;
                    let b = (w * end + phase - PI / 2.0) / PI;
                    (a.min(b).floor() as i64, a.max(b).ceil() as i64)
                };
                (ka..=kb)
                    .map(|k| to_t(k as f64))
                    .filter(|&t| t > start && t < end)
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            TimeProfile::Constant(c) => c.is_finite(),
            TimeProfile::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => [offset, amplitude, frequency, phase].iter().all(|v| v.is_finite()),
            TimeProfile::ExpDecay {
                limit,
                initial,
                rate,
            } => [limit, initial].iter().all(|v| v.is_finite()) && rate.is_finite() && rate >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(name, "temporal profile parameters must be finite (rate ≥ 0)"))
        }
    }
}

/// Named spatial shapes. Coordinates are physical; 1D profiles vary along the
/// first axis.
#[derive(Debug, Clone, PartialEq)]
pub enum SpatialProfile {
    Constant(f64),
    /// Linear from `from` at `x = 0` to `to` at `x = L₀`.
    LinearRamp { from: f64, to: f64 },
    /// `offset + amplitude · sin(2π k x / L₀)`
    Sine {
        offset: f64,
        amplitude: f64,
        wavenumber: f64,
    },
    /// `offset + amplitude · cos(k π x / L₀)`, a Neumann eigenmode for integer `k`.
    Cosine {
        offset: f64,
        amplitude: f64,
        mode: f64,
    },
    /// `base + height · exp(−|x − center|² / (2 width²))`
    GaussianBump {
        base: f64,
        height: f64,
        center: Vec<f64>,
        width: f64,
    },
}

impl SpatialProfile {
    pub fn sample(&self, grid: &Arc<Grid>) -> Field {
        let lx = grid.extents()[0];
        match self {
            SpatialProfile::Constant(c) => Field::constant(grid.clone(), *c),
            SpatialProfile::LinearRamp { from, to } => {
                Field::from_fn(grid.clone(), |[x, _]| from + (to - from) * x / lx)
            }
            SpatialProfile::Sine {
                offset,
                amplitude,
                wavenumber,
            } => Field::from_fn(grid.clone(), |[x, _]| {
                offset + amplitude * (2.0 * PI * wavenumber * x / lx).sin()
            }),
            SpatialProfile::Cosine {
                offset,
                amplitude,
                mode,
            } => Field::from_fn(grid.clone(), |[x, _]| {
                offset + amplitude * (mode * PI * x / lx).cos()
            }),
            SpatialProfile::GaussianBump {
                base,
                height,
                center,
                width,
            } => Field::from_fn(grid.clone(), |p| {
                let r2: f64 = center
                    .iter()
                    .zip(p)
                    .map(|(c, x)| (x - c) * (x - c))
                    .sum();
                base + height * (-r2 / (2.0 * width * width)).exp()
            }),
        }
    }

    pub fn validate(&self, name: &str, dim: usize) -> Result<()> {
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        let ok = match self {
            SpatialProfile::Constant(c) => c.is_finite(),
            SpatialProfile::LinearRamp { from, to } => finite(&[*from, *to]),
            SpatialProfile::Sine {
                offset,
                amplitude,
                wavenumber,
            } => finite(&[*offset, *amplitude, *wavenumber]),
            SpatialProfile::Cosine {
                offset,
                amplitude,
                mode,
            } => finite(&[*offset, *amplitude, *mode]),
            SpatialProfile::GaussianBump {
                base,
                height,
                center,
                width,
            } => {
                if center.len() != dim {
                    return Err(Error::invalid(
                        format!("{name}.center"),
                        format!("needs {dim} coordinates, got {}", center.len()),
                    ));
                }
                finite(&[*base, *height, *width]) && finite(center) && *width > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(name, "profile parameters must be finite (width > 0)"))
        }
    }
}

/// User-supplied coefficient, for library callers needing shapes outside the
/// declarative family.
pub trait CoefficientFn: Send + Sync {
    /// Nodal samples at time `t`; must have `grid.len()` finite entries.
    fn eval(&self, t: f64, grid: &Grid) -> Vec<f64>;

    /// Period in time, if any. Enables exact one-period global envelopes.
    fn period(&self) -> Option<f64> {
        None
    }
}

#[derive(Clone)]
pub enum CoefficientKind {
    Constant(f64),
    Separable { temporal: TimeProfile, spatial: Field },
    /// Nodal snapshots at strictly increasing `times`, linear in between.
    Tabulated {
        times: Vec<f64>,
        samples: Vec<Field>,
        clamp: bool,
    },
    Custom(Arc<dyn CoefficientFn>),
}

impl fmt::Debug for CoefficientKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoefficientKind::Constant(c) => write!(f, "Constant({c})"),
            CoefficientKind::Separable { temporal, .. } => {
                write!(f, "Separable {{ temporal: {temporal:?}, .. }}")
            }
            CoefficientKind::Tabulated { times, clamp, .. } => {
                write!(f, "Tabulated {{ knots: {}, clamp: {clamp} }}", times.len())
            }
            CoefficientKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// One coefficient `aᵢ(t, x)` bound to a grid.
#[derive(Debug, Clone)]
pub struct CoefficientSpec {
    grid: Arc<Grid>,
    kind: CoefficientKind,
}

impl CoefficientSpec {
    pub fn constant(grid: Arc<Grid>, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::invalid("coefficient.value", "must be finite"));
        }
        Ok(CoefficientSpec {
            grid,
            kind: CoefficientKind::Constant(value),
        })
    }

    pub fn separable(temporal: TimeProfile, spatial: Field) -> Result<Self> {
        temporal.validate("coefficient.temporal")?;
        Ok(CoefficientSpec {
            grid: spatial.grid().clone(),
            kind: CoefficientKind::Separable { temporal, spatial },
        })
    }

    pub fn tabulated(grid: Arc<Grid>, times: Vec<f64>, samples: Vec<Field>, clamp: bool) -> Result<Self> {
        if times.is_empty() || times.len() != samples.len() {
            return Err(Error::invalid(
                "coefficient.table",
                format!("{} knots but {} snapshots", times.len(), samples.len()),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "coefficient.table",
                "time knots must be finite and strictly increasing",
            ));
        }
        for s in &samples {
            if s.grid().as_ref() != grid.as_ref() {
                return Err(Error::Structural("table snapshot on a different grid".into()));
            }
        }
        Ok(CoefficientSpec {
            grid,
            kind: CoefficientKind::Tabulated {
                times,
                samples,
                clamp,
            },
        })
    }

    pub fn custom(grid: Arc<Grid>, f: Arc<dyn CoefficientFn>) -> Self {
        CoefficientSpec {
            grid,
            kind: CoefficientKind::Custom(f),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn kind(&self) -> &CoefficientKind {
        &self.kind
    }

    pub fn period(&self) -> Option<f64> {
        match &self.kind {
            CoefficientKind::Separable { temporal, .. } => temporal.period(),
            CoefficientKind::Custom(f) => f.period(),
            _ => None,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match &self.kind {
            CoefficientKind::Constant(_) => true,
            CoefficientKind::Separable { temporal, .. } => temporal.is_time_independent(),
            CoefficientKind::Tabulated { times, .. } => times.len() == 1,
            CoefficientKind::Custom(_) => false,
        }
    }

    /// Only Lipschitz in time (piecewise-linear interpolation).
    pub fn is_tabulated(&self) -> bool {
        matches!(self.kind, CoefficientKind::Tabulated { .. })
    }

    /// True when `t` lies outside the table and evaluation would clamp.
    pub fn outside_table(&self, t: f64) -> bool {
        match &self.kind {
            CoefficientKind::Tabulated { times, .. } => t < times[0] || t > times[times.len() - 1],
            _ => false,
        }
    }

    /// Nodal samples of `aᵢ(t, ·)`.
    pub fn eval(&self, t: f64) -> Result<Field> {
        match &self.kind {
            CoefficientKind::Constant(c) => Ok(Field::constant(self.grid.clone(), *c)),
            CoefficientKind::Separable { temporal, spatial } => {
                let g = temporal.eval(t);
                Ok(spatial.map(|h| g * h))
            }
            CoefficientKind::Tabulated {
                times,
                samples,
                clamp,
            } => {
                let last = times.len() - 1;
                if self.outside_table(t) && !clamp {
                    return Err(Error::Range(format!(
                        "t = {t} outside table range [{}, {}]",
                        times[0], times[last]
                    )));
                }
                if t <= times[0] {
                    return Ok(samples[0].clone());
                }
                if t >= times[last] {
                    return Ok(samples[last].clone());
                }
                let k = times.partition_point(|&knot| knot <= t) - 1;
                let s = (t - times[k]) / (times[k + 1] - times[k]);
                samples[k].zip_map(&samples[k + 1], |a, b| a + s * (b - a))
            }
            CoefficientKind::Custom(f) => Field::new(self.grid.clone(), f.eval(t, &self.grid)),
        }
    }

    /// `(a_{i,inf}(t), a_{i,sup}(t))` over grid nodes.
    pub fn envelope(&self, t: f64) -> Result<(f64, f64)> {
        match &self.kind {
            CoefficientKind::Constant(c) => Ok((*c, *c)),
            CoefficientKind::Separable { temporal, spatial } => {
                let g = temporal.eval(t);
                let (lo, hi) = (g * spatial.min(), g * spatial.max());
                Ok((lo.min(hi), lo.max(hi)))
            }
            _ => {
                let f = self.eval(t)?;
                Ok((f.min(), f.max()))
            }
        }
    }

    /// Interior times of `window` where the spatial envelope may attain a
    /// temporal extremum: critical points of the temporal factor, table knots.
    pub fn extremum_candidates(&self, window: (f64, f64)) -> Vec<f64> {
        let (start, end) = window;
        match &self.kind {
            CoefficientKind::Separable { temporal, .. } => temporal.critical_times(start, end),
            CoefficientKind::Tabulated { times, .. } => times
                .iter()
                .copied()
                .filter(|&k| k > start && k < end)
                .collect(),
            _ => Vec::new(),
        }
    }

    /// `(inf, sup)` of `aᵢ` over `window × Ω̄`, from `n_samples` uniform
    /// times plus every exact extremum candidate inside the window.
    pub fn global_envelope(&self, window: (f64, f64), n_samples: usize) -> Result<(f64, f64)> {
        let (start, end) = window;
        if !(start.is_finite() && end.is_finite()) || end < start {
            return Err(Error::Range(format!("empty window [{start}, {end}]")));
        }
        if n_samples < 2 {
            return Err(Error::Range("global envelope needs at least 2 samples".into()));
        }
        if let CoefficientKind::Constant(c) = self.kind {
            return Ok((c, c));
        }
        let mut times = sample_times(window, n_samples);
        times.extend(self.extremum_candidates(window));
        let mut inf = f64::INFINITY;
        let mut sup = f64::NEG_INFINITY;
        for t in times {
            let (lo, hi) = self.envelope(t)?;
            inf = inf.min(lo);
            sup = sup.max(hi);
        }
        Ok((inf, sup))
    }
}

/// `n` uniformly spaced times covering `[start, end]` inclusive.
pub fn sample_times(window: (f64, f64), n: usize) -> Vec<f64> {
    let (start, end) = window;
    if n < 2 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n)
        .map(|k| if k + 1 == n { end } else { start + k as f64 * step })
        .collect()
}

/// How the coefficient triple depends on time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDependence {
    Autonomous,
    Periodic(f64),
    General,
}

/// The triple `(a₀, a₁, a₂)` on one grid.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub a0: CoefficientSpec,
    pub a1: CoefficientSpec,
    pub a2: CoefficientSpec,
}

impl CoefficientSet {
    pub fn new(a0: CoefficientSpec, a1: CoefficientSpec, a2: CoefficientSpec) -> Result<Self> {
        if a0.grid() != a1.grid() || a0.grid() != a2.grid() {
            return Err(Error::Structural(
                "coefficients a0, a1, a2 must share one grid".into(),
            ));
        }
        Ok(CoefficientSet { a0, a1, a2 })
    }

    /// Spatially and temporally constant coefficients.
    pub fn constant(grid: Arc<Grid>, a0: f64, a1: f64, a2: f64) -> Result<Self> {
        CoefficientSet::new(
            CoefficientSpec::constant(grid.clone(), a0)?,
            CoefficientSpec::constant(grid.clone(), a1)?,
            CoefficientSpec::constant(grid, a2)?,
        )
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.a0.grid()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CoefficientSpec> {
        [&self.a0, &self.a1, &self.a2].into_iter()
    }

    pub fn is_constant(&self) -> bool {
        self.iter()
            .all(|c| matches!(c.kind(), CoefficientKind::Constant(_)))
    }

    pub fn has_table(&self) -> bool {
        self.iter().any(|c| c.is_tabulated())
    }

    pub fn time_dependence(&self) -> TimeDependence {
        let mut period: Option<f64> = None;
        for c in self.iter() {
            if c.is_time_independent() {
                continue;
            }
            match (c.period(), period) {
                (Some(p), None) => period = Some(p),
                (Some(p), Some(q)) if ((p - q) / q).abs() < 1e-12 => {}
                _ => return TimeDependence::General,
            }
        }
        period.map_or(TimeDependence::Autonomous, TimeDependence::Periodic)
    }

    /// Uniform samples of `window` merged with every coefficient's extremum
    /// candidates, sorted.
    pub fn window_times(&self, window: (f64, f64), n_samples: usize) -> Vec<f64> {
        let mut times = sample_times(window, n_samples);
        for c in self.iter() {
            times.extend(c.extremum_candidates(window));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// Checks `a_{1,inf} > 0` (and `a_{0,inf} > 0` when `need_growth`) over
    /// `window`.
    pub fn validate(&self, window: (f64, f64), n_samples: usize, need_growth: bool) -> Result<()> {
        let (a1_inf, _) = self.a1.global_envelope(window, n_samples)?;
        if !(a1_inf > 0.0) {
            return Err(Error::invalid(
                "coefficients.a1",
                format!("a1_inf must be positive, got {a1_inf}"),
            ));
        }
        if need_growth {
            let (a0_inf, _) = self.a0.global_envelope(window, n_samples)?;
            if !(a0_inf > 0.0) {
                return Err(Error::invalid(
                    "coefficients.a0",
                    format!("a0_inf must be positive for persistence, got {a0_inf}"),
                ));
            }
        }
        Ok(())
    }
}
