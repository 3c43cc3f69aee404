use chemostab_core::experiments::{fit_decay_rate, trajectory_gap};
use chemostab_core::stability::{estimate_theta, Conclusion, Constant, KnownConstants};
use chemostab_core::stepper::run;
use chemostab_core::{CoefficientSet, Field, Grid, ModelParams, ModelState, StepperConfig};

fn setup() -> (std::sync::Arc<Grid>, CoefficientSet, ModelParams, StepperConfig) {
    let g = Grid::interval(1.0, 21).unwrap();
    let coeffs = CoefficientSet::constant(g.clone(), 1.0, 1.0, 0.0).unwrap();
    let params = ModelParams::new(0.05, 1.0, 1.0, 1.0).unwrap();
    let cfg = StepperConfig {
        error_tol: 1e-8,
        dt_max: 0.1,
        ..StepperConfig::default()
    };
    (g, coeffs, params, cfg)
}

#[test]
fn logistic_runs_converge_together() {
    let (g, coeffs, params, cfg) = setup();
    let a = ModelState::new(0.0, Field::constant(g.clone(), 0.2), Field::zeros(g.clone())).unwrap();
    let b = ModelState::new(0.0, Field::constant(g.clone(), 3.0), Field::constant(g.clone(), 1.0)).unwrap();
    let ta = run(&a, 20.0, &coeffs, &params, &cfg, 0.1, &mut []).unwrap();
    let tb = run(&b, 20.0, &coeffs, &params, &cfg, 0.1, &mut []).unwrap();
    let gap = trajectory_gap(&ta, &tb).unwrap();
    let fit = fit_decay_rate(&gap, (4.0, 14.0)).unwrap();
    assert!(gap.last().unwrap().w_linf < 1e-6);
    assert!(fit.rate < -1.0, "rate {}", fit.rate);
    assert!(fit.r2 > 0.99);
}

#[test]
fn theta_for_constant_coefficients_matches_closed_form() {
    let (_, coeffs, params, _) = setup();
    let k = KnownConstants {
        m2: Some(Constant::config(1.2)),
        eta: Some(Constant::config(0.9)),
        c3_tilde: Some(Constant::config(1.0)),
        ..Default::default()
    };
    let r = estimate_theta(&coeffs, &params, &k, (0.0, 1.0), 101).unwrap();
    // 1 + 1/2 + 0.05/2 − 2·0.9
    let expected: f64 = 1.0 + 0.5 + 0.025 - 1.8;
    assert!((r.theta - expected).abs() < 1e-12, "theta {}", r.theta);
    assert_eq!(r.conclusion, Conclusion::CriterionHolds);
}
