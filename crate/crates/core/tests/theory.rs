use std::f64::consts::PI;

use delaytherm::analytic::{
    asymptotic_long_delay, nonmarkov_bound, sigma_v2_closed, steady_state_moments, thermo_rates,
    MomentSource,
};
use delaytherm::model::ReducedParams;
use delaytherm::spectral::{delay_stability, response, variance_quadrature};
use proptest::prelude::*;

fn stable(g: f64, q0: f64, tau: f64) -> Option<ReducedParams> {
    let r = ReducedParams::new(g, q0, tau).ok()?;
    delay_stability(&r).ok()?.then_some(r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn second_law_identity(g in 0.0f64..0.9, q0 in 2.0f64..200.0, tau in 0.0f64..(100.0 * PI)) {
        let Some(r) = stable(g, q0, tau) else { return Ok(()) };
        let sv = sigma_v2_closed(&r).unwrap();
        let m = delaytherm::analytic::SteadyStateMoments::new(1.0, sv, 0.0).unwrap();
        let t = thermo_rates(&r, &m).unwrap();
        // Independent evaluation from the variance.
        let s_i = (1.0 - sv).powi(2) / (q0 * sv);
        prop_assert!(t.s_i >= 0.0);
        prop_assert!((t.s_i - s_i).abs() <= 1e-14 * s_i.max(1e-300));
        let scale = t.s_pump.abs().max(t.w_ext.abs());
        prop_assert!((t.s_pump - t.w_ext - t.s_i).abs() <= 1e-12 * scale);
        prop_assert!(t.w_ext <= t.s_pump);
    }

    #[test]
    fn nonmarkov_bound_dominates_pumping(g in 0.05f64..0.9, q0 in 2.0f64..100.0, tau in 0.0f64..(20.0 * PI)) {
        let Some(r) = stable(g, q0, tau) else { return Ok(()) };
        let m = steady_state_moments(&r, MomentSource::Closed).unwrap();
        let b = nonmarkov_bound(&r, &m).unwrap();
        prop_assert!(b.holds, "{b:?}");
        prop_assert!((b.s_pump_y + b.i_flow - b.bound_nm).abs() <= 1e-10 * b.bound_nm.abs().max(1e-12));
    }

    #[test]
    fn response_is_conjugate_symmetric(g in 0.0f64..2.0, q0 in 0.6f64..100.0, tau in 0.0f64..50.0, w in 0.0f64..10.0) {
        let r = ReducedParams::new(g, q0, tau).unwrap();
        let a = response(&r, w);
        let b = response(&r, -w);
        prop_assert!((a - b.conj()).norm() <= 1e-12 * a.norm());
    }
}

#[test]
fn closed_form_matches_quadrature_on_grid() {
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for &g in &[0.1, 0.36, 0.7] {
        for &q0 in &[3.0, 20.0, 55.0] {
            for i in 0..8 {
                let tau = 0.3 + 9.0 * PI * i as f64 / 7.0;
                let Some(r) = stable(g, q0, tau) else {
                    continue;
                };
                let a = sigma_v2_closed(&r).unwrap();
                let b = variance_quadrature(&r).unwrap().sigma_v2;
                worst = worst.max((a / b - 1.0).abs());
                n += 1;
            }
        }
    }
    assert!(n > 60);
    assert!(worst < 1e-6, "worst relative deviation {worst}");
}

#[test]
fn zero_delay_is_a_stiffer_spring() {
    // τ = 0: the feedback only softens the spring, ω² = 1 − g/q0.
    for &(g, q0) in &[(0.3, 10.0), (2.0, 5.0), (0.9, 55.0)] {
        let r = ReducedParams::new(g, q0, 0.0).unwrap();
        let m = steady_state_moments(&r, MomentSource::Quadrature).unwrap();
        assert!((m.sigma_v2 - 1.0).abs() < 1e-8);
        assert!((m.sigma_q2 - 1.0 / (1.0 - g / q0)).abs() < 1e-8);
    }
}

#[test]
fn long_delay_limit_is_reached() {
    let r = ReducedParams::new(0.36, 55.0, 1e4).unwrap();
    let a = asymptotic_long_delay(&r).unwrap();
    let q = variance_quadrature(&r).unwrap();
    assert!((q.sigma_v2 / a.sigma_v2_inf - 1.0).abs() < 1e-3);
    assert!((q.sigma_q2 / a.sigma_q2_inf - 1.0).abs() < 1e-3);
}

#[test]
fn cooling_at_quarter_period_delay() {
    // τ = π/2 turns the delayed position into a velocity-like damping force.
    let r = ReducedParams::new(0.36, 55.0, PI / 2.0).unwrap();
    let m = steady_state_moments(&r, MomentSource::Closed).unwrap();
    assert!(m.sigma_v2 < 1.0);
    let t = thermo_rates(&r, &m).unwrap();
    assert!(t.w_ext > 0.0);
    let eta = t.eta_pump.unwrap();
    assert!(eta > 0.0 && eta <= 1.0);
    // Close to the high-Q expectation 1/(1 + g).
    assert!((m.sigma_v2 - 1.0 / 1.36).abs() < 0.01);
}
