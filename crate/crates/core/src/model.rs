//! Semi-discrete right-hand sides of the chemotaxis system
//!
//! ```text
//! u_t   = Δu − χ∇·(u∇v) + u (a₀ − a₁u − a₂ ∫_Ω u)
//! τ v_t = Δv − λv + μu
//! ```
//!
//! with homogeneous Neumann data on both unknowns.

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{chemotaxis_divergence, integrate, laplacian_neumann, Field};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Chemotactic sensitivity (signed).
    pub chi: f64,
    /// Chemical time constant, `0 < τ ≤ 1`.
    pub tau: f64,
    /// Degradation rate of the chemical.
    pub lambda: f64,
    /// Production rate of the chemical.
    pub mu: f64,
}

impl ModelParams {
    pub fn new(chi: f64, tau: f64, lambda: f64, mu: f64) -> Result<Self> {
        let p = ModelParams {
            chi,
            tau,
            lambda,
            mu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.chi.is_finite() {
            return Err(Error::invalid("params.chi", "must be finite"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(
                "params.tau",
                format!("must satisfy 0 < tau <= 1, got {}", self.tau),
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(
                "params.lambda",
                format!("must be positive, got {}", self.lambda),
            ));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(
                "params.mu",
                format!("must be positive, got {}", self.mu),
            ));
        }
        Ok(())
    }
}

/// `(t, u, v)` on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub t: f64,
    pub u: Field,
    pub v: Field,
}

impl ModelState {
    pub fn new(t: f64, u: Field, v: Field) -> Result<Self> {
        u.check_same_grid(&v)?;
        if !t.is_finite() {
            return Err(Error::invalid("t", "must be finite"));
        }
        Ok(ModelState { t, u, v })
    }

    pub fn is_nonnegative(&self) -> bool {
        self.u.min() >= 0.0 && self.v.min() >= 0.0
    }

    /// `max(‖u‖∞, ‖v‖∞)`
    pub fn scale(&self) -> f64 {
        self.u.max_abs().max(self.v.max_abs())
    }
}

fn check_coeff_grid(state: &ModelState, coeffs: &CoefficientSet) -> Result<()> {
    if state.u.grid().as_ref() != coeffs.grid().as_ref() {
        return Err(Error::Structural(
            "state and coefficients live on different grids".into(),
        ));
    }
    Ok(())
}

/// Logistic source with nonlocal competition, `u (a₀ − a₁u − a₂ ∫u)`.
pub fn reaction_u(state: &ModelState, coeffs: &CoefficientSet) -> Result<Field> {
    check_coeff_grid(state, coeffs)?;
    let t = state.t;
    let a0 = coeffs.a0.eval(t)?;
    let a1 = coeffs.a1.eval(t)?;
    let a2 = coeffs.a2.eval(t)?;
    let mass = integrate(&state.u);
    let values = state
        .u
        .values()
        .iter()
        .zip(a0.values())
        .zip(a1.values())
        .zip(a2.values())
        .map(|(((&u, &a0), &a1), &a2)| u * (a0 - a1 * u - a2 * mass))
        .collect();
    Field::new(state.u.grid().clone(), values)
}

/// The non-stiff part of `u_t`: chemotaxis plus reaction.
pub fn explicit_u(state: &ModelState, coeffs: &CoefficientSet, params: &ModelParams) -> Result<Field> {
    let chemo = chemotaxis_divergence(&state.u, &state.v, params.chi)?;
    let react = reaction_u(state, coeffs)?;
    chemo.zip_map(&react, |a, b| a + b)
}

/// The non-stiff part of `v_t`: production `μu/τ`.
pub fn explicit_v(state: &ModelState, params: &ModelParams) -> Field {
    let s = params.mu / params.tau;
    state.u.map(|u| s * u)
}

/// `Δu − χ∇·(u∇v) + u(a₀ − a₁u − a₂∫u)` at `state.t`.
pub fn rhs_u(state: &ModelState, coeffs: &CoefficientSet, params: &ModelParams) -> Result<Field> {
    let lap = laplacian_neumann(&state.u);
    lap.zip_map(&explicit_u(state, coeffs, params)?, |a, b| a + b)
}

/// `(Δv − λv + μu)/τ`.
pub fn rhs_v(state: &ModelState, params: &ModelParams) -> Result<Field> {
    state.u.check_same_grid(&state.v)?;
    let lap = laplacian_neumann(&state.v);
    let inv_tau = 1.0 / params.tau;
    let values = lap
        .values()
        .iter()
        .zip(state.v.values())
        .zip(state.u.values())
        .map(|((&l, &v), &u)| (l - params.lambda * v + params.mu * u) * inv_tau)
        .collect();
    Field::new(state.u.grid().clone(), values)
}

/// Reaction-only mass rates `(d/dt ∫u, τ d/dt ∫v)`.
///
/// Transport and diffusion integrate to zero under the Neumann closure, so
/// these equal `∫ rhs_u` and `τ ∫ rhs_v` up to round-off.
pub fn mass_rate(state: &ModelState, coeffs: &CoefficientSet, params: &ModelParams) -> Result<(f64, f64)> {
    let du = integrate(&reaction_u(state, coeffs)?);
    let dv = -params.lambda * integrate(&state.v) + params.mu * integrate(&state.u);
    Ok((du, dv))
}
