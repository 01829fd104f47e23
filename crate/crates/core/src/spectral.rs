//! Frequency-domain oracle for the delayed oscillator.
//!
//! With `q(t) = ∫ dω/2π q̃(ω) e^{iωt}` the susceptibility is
//! `χ(ω) = 1 / (1 − ω² + iω/q0 − (g/q0) e^{−iωτ})` and the stationary variances are
//! `σ_q² = ∫ dω/2π (2/q0)|χ|²` and `σ_v² = ∫ dω/2π (2/q0) ω²|χ|²`.
//!
//! The integrands are even, so both are evaluated on `ω ≥ 0` and doubled. Beyond
//! `ω_max` the integrand is split into its phase average over the delay factor,
//! `(2/q0) ω^{2k} / (|A|² − b²)` with `A = 1 − ω² + iω/q0`, `b = g/q0` (integrated
//! numerically after `ω = ω_max/t`), and an oscillating remainder that is bounded
//! analytically and kept below the tail budget by the choice of `ω_max`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::ReducedParams;
use crate::quad::{self, QuadTolerance};

pub fn response(r: &ReducedParams, omega: f64) -> Complex64 {
    let b = r.feedback_coupling();
    let denom =
        Complex64::new(1.0 - omega * omega, omega / r.q0) - b * Complex64::cis(-omega * r.tau);
    denom.inv()
}

/// `D(s) = s² + s/q0 + 1 − (g/q0) e^{−sτ}`; `χ(ω) = 1/D(iω)`.
pub fn characteristic(r: &ReducedParams, s: Complex64) -> Complex64 {
    s * s + s / r.q0 + 1.0 - r.feedback_coupling() * (-s * r.tau).exp()
}

/// `(2/q0)|χ(ω)|² ω^{2k}`: two-sided spectral density of position (`k = 0`)
/// or velocity (`k = 1`), normalized so that `σ² = ∫ S dω/2π`.
pub fn spectral_density(r: &ReducedParams, omega: f64, k: u32) -> f64 {
    2.0 / r.q0 * response(r, omega).norm_sqr() * omega.powi(2 * k as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumConvention {
    /// `σ² = ∫_{−∞}^{∞} S(ω) dω/2π`
    TwoSided,
    /// `σ² = ∫_0^{∞} S(ω) dω/2π`
    OneSided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    pub convention: SpectrumConvention,
    pub description: String,
}

impl SpectrumGrid {
    pub fn new(
        frequencies: Vec<f64>,
        values: Vec<f64>,
        convention: SpectrumConvention,
        description: impl Into<String>,
    ) -> Result<Self> {
        if frequencies.len() != values.len() {
            return Err(Error::InsufficientData(format!(
                "{} frequencies but {} values",
                frequencies.len(),
                values.len()
            )));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse(
                "spectrum frequencies must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Parse("spectral density must be non-negative".into()));
        }
        Ok(Self {
            frequencies,
            values,
            convention,
            description: description.into(),
        })
    }

    /// `∫ S dω/2π` by the trapezoid rule over the grid.
    pub fn integrated_variance(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.frequencies.len() {
            let h = self.frequencies[i] - self.frequencies[i - 1];
            acc += 0.5 * h * (self.values[i] + self.values[i - 1]);
        }
        acc / (2.0 * PI)
    }

    /// Frequency of the largest sample.
    pub fn peak_frequency(&self) -> Option<f64> {
        self.values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| self.frequencies[i])
    }
}

/// Samples the analytic two-sided density on a frequency grid.
pub fn spectrum(r: &ReducedParams, frequencies: &[f64], k: u32) -> Result<SpectrumGrid> {
    let values = frequencies
        .iter()
        .map(|&w| spectral_density(r, w, k))
        .collect();
    SpectrumGrid::new(
        frequencies.to_vec(),
        values,
        SpectrumConvention::TwoSided,
        format!(
            "analytic (2/q0)|chi|^2 w^{} at g={}, q0={}, tau={}",
            2 * k,
            r.g,
            r.q0,
            r.tau
        ),
    )
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    /// Relative tolerance of the adaptive integration on `[0, ω_max]`.
    pub rel_tol: f64,
    /// Absolute budget for the neglected oscillating tail remainder.
    pub tail_budget: f64,
    /// Overrides the starting `ω_max` (default `20 + 10/q0`).
    pub omega_max: Option<f64>,
    /// Skip the velocity component; `ω_max` then only has to control the
    /// much faster decaying position tail.
    pub position_only: bool,
    /// Reported error above this relative level is an accuracy failure.
    pub accept_rel: f64,
    pub max_panels: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            tail_budget: 1e-11,
            omega_max: None,
            position_only: false,
            accept_rel: 1e-8,
            max_panels: 8_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceQuadrature {
    pub sigma_q2: f64,
    /// NaN when computed with `position_only`.
    pub sigma_v2: f64,
    /// Self-reported absolute error bounds (integration + tail).
    pub error_q2: f64,
    pub error_v2: f64,
    pub omega_max: f64,
    pub evaluations: usize,
}

impl VarianceQuadrature {
    pub fn rel_error_q2(&self) -> f64 {
        self.error_q2 / self.sigma_q2.abs()
    }
    pub fn rel_error_v2(&self) -> f64 {
        self.error_v2 / self.sigma_v2.abs()
    }
}

pub fn variance_quadrature(r: &ReducedParams) -> Result<VarianceQuadrature> {
    variance_quadrature_with(r, &QuadratureOptions::default())
}

/// Position variance only; cheaper because the position tail decays as `ω⁻⁴`.
pub fn position_variance(r: &ReducedParams) -> Result<f64> {
    let opts = QuadratureOptions {
        position_only: true,
        ..QuadratureOptions::default()
    };
    variance_quadrature_with(r, &opts).map(|v| v.sigma_q2)
}

pub fn variance_quadrature_with(
    r: &ReducedParams,
    opts: &QuadratureOptions,
) -> Result<VarianceQuadrature> {
    r.validate()?;
    if !delay_stability(r)? {
        return Err(unstable(r));
    }
    let b = r.feedback_coupling();
    let pref = 2.0 / (PI * r.q0);
    let k_max = if opts.position_only { 0 } else { 1 };
    let (omega_max, remainder) = tail_cutoff(r, opts, k_max);

    let breaks = breakpoints(r, omega_max);
    let tol = QuadTolerance {
        rel: opts.rel_tol,
        abs: 1e-15,
        max_panels: opts.max_panels,
    };
    let body = quad::integrate(
        |w: f64| {
            let f = pref * response(r, w).norm_sqr();
            [f, f * w * w]
        },
        &breaks,
        tol,
    );

    // Phase-averaged tail on [ω_max, ∞) after ω = ω_max / t.
    let tail = quad::integrate(
        |t: f64| {
            if t <= 0.0 {
                return [0.0, 0.0];
            }
            let w = omega_max / t;
            let a2 = (1.0 - w * w).powi(2) + (w / r.q0).powi(2);
            let jac = omega_max / (t * t);
            let f = pref / (a2 - b * b) * jac;
            [f, f * w * w]
        },
        &[0.0, 0.25, 0.5, 1.0],
        tol,
    );

    let sigma_q2 = body.value[0] + tail.value[0];
    let error_q2 = body.error[0] + tail.error[0] + remainder[0];
    let (sigma_v2, error_v2) = if opts.position_only {
        (f64::NAN, f64::NAN)
    } else {
        (
            body.value[1] + tail.value[1],
            body.error[1] + tail.error[1] + remainder[1],
        )
    };
    let evaluations = body.evaluations + tail.evaluations;
    let out = VarianceQuadrature {
        sigma_q2,
        sigma_v2,
        error_q2,
        error_v2,
        omega_max,
        evaluations,
    };
    let bad_q = !(out.rel_error_q2() <= opts.accept_rel);
    let bad_v = !opts.position_only && !(out.rel_error_v2() <= opts.accept_rel);
    if bad_q || bad_v {
        let (estimate, error) = if bad_q {
            (sigma_q2, error_q2)
        } else {
            (sigma_v2, error_v2)
        };
        return Err(Error::Accuracy {
            estimate,
            error,
            evaluations,
        });
    }
    Ok(out)
}

/// Variance contained in the two-sided band `lo ≤ |ω| ≤ hi`.
pub fn band_variance(r: &ReducedParams, lo: f64, hi: f64, k: u32) -> Result<f64> {
    if !(hi > lo && lo >= 0.0) {
        return Err(Error::DegenerateBand { lo, hi });
    }
    if !delay_stability(r)? {
        return Err(unstable(r));
    }
    let pref = 2.0 / (PI * r.q0);
    let breaks: Vec<f64> = breakpoints(r, hi).into_iter().filter(|&w| w > lo).collect();
    let mut breaks_full = vec![lo];
    breaks_full.extend(breaks);
    if *breaks_full.last().unwrap() < hi {
        breaks_full.push(hi);
    }
    let res = quad::integrate(
        |w: f64| [pref * response(r, w).norm_sqr() * w.powi(2 * k as i32)],
        &breaks_full,
        QuadTolerance::default(),
    );
    Ok(res.value[0])
}

/// Chooses `ω_max` so that the bound on the neglected oscillating remainder
/// stays below the tail budget; returns the cutoff and the bound per component.
fn tail_cutoff(r: &ReducedParams, opts: &QuadratureOptions, k_max: u32) -> (f64, [f64; 2]) {
    let b = r.feedback_coupling();
    let mut w = opts.omega_max.unwrap_or(20.0 + 10.0 / r.q0);
    let bound = |w: f64, k: u32| -> f64 {
        if b == 0.0 {
            return 0.0;
        }
        let c = 1.0 - (1.0 + b) / (w * w);
        let p = 5.0 - 2.0 * k as f64;
        4.0 * b / (PI * r.q0 * c.powi(3)) * w.powf(-p) / p
    };
    for _ in 0..60 {
        if bound(w, k_max) <= opts.tail_budget {
            break;
        }
        w *= 1.25;
    }
    (w, [bound(w, 0), bound(w, 1)])
}

/// Initial panel boundaries on `[0, ω_max]`: graded around the resonance,
/// never wider than one period of the delay factor `e^{−iωτ}`.
fn breakpoints(r: &ReducedParams, omega_max: f64) -> Vec<f64> {
    let res_width = 1.0 / (4.0 * r.q0);
    let osc = if r.tau > 0.0 {
        2.0 * PI / r.tau
    } else {
        f64::INFINITY
    };
    let mut out = vec![0.0];
    let mut w = 0.0;
    while w < omega_max {
        let h = (0.25 * (w - 1.0).abs())
            .clamp(res_width.min(0.5), 0.5)
            .min(osc);
        w = (w + h).min(omega_max);
        out.push(w);
    }
    out
}

fn unstable(r: &ReducedParams) -> Error {
    Error::Unstable {
        g: r.g,
        q0: r.q0,
        tau: r.tau,
    }
}

const CONTOUR_SHIFT: f64 = 1e-7;

/// True iff `D(s)` has no zeros with `Re(s) ≥ 0`.
///
/// Counts right-half-plane zeros by the argument principle on the half disk
/// bounded by the imaginary axis and an arc of radius `ρ`, where `ρ` exceeds every
/// root of `|s² + s/q0 + 1| = g/q0`, so no zero lies outside. Conjugate symmetry
/// reduces the contour to its upper half. If the contour grazes a zero the count
/// is repeated on `Re(s) = −δ`, which classifies imaginary-axis zeros as unstable.
pub fn delay_stability(r: &ReducedParams) -> Result<bool> {
    r.validate()?;
    if r.g == 0.0 {
        return Ok(true);
    }
    if let Some(n) = zeros_right_of(r, 0.0) {
        return Ok(n == 0);
    }
    if let Some(n) = zeros_right_of(r, -CONTOUR_SHIFT) {
        return Ok(n == 0);
    }
    Err(Error::Indeterminate {
        g: r.g,
        q0: r.q0,
        tau: r.tau,
    })
}

/// Number of zeros with `Re(s) > shift` (shift ≤ 0), or `None` when ambiguous.
fn zeros_right_of(r: &ReducedParams, shift: f64) -> Option<i64> {
    let d = |s: Complex64| characteristic(r, s);
    let d0 = d(Complex64::new(shift, 0.0)).re;
    if d0.abs() < 1e-12 {
        return None;
    }
    if d0 < 0.0 {
        // D is real on the real axis and grows like s², so a real zero lies beyond `shift`.
        return Some(1);
    }
    let b = r.feedback_coupling() * (-shift * r.tau).exp();
    let inv_q = 1.0 / r.q0;
    let r0 = 0.5 * (inv_q + (inv_q * inv_q + 4.0 * (1.0 + b)).sqrt());
    let rho = shift.abs() + r0 + 1.0;
    let tau = r.tau.max(1e-3);

    let arc_end = track_arg(
        |phi| d(Complex64::new(shift, 0.0) + Complex64::from_polar(rho, phi)),
        0.0,
        PI / 2.0,
        (0.02f64).min(PI / (4.0 * rho * tau)),
    )?;
    let axis_end = track_arg(
        |w| d(Complex64::new(shift, w)),
        0.0,
        rho,
        (0.02f64).min(PI / (4.0 * tau)).min(0.25 / r.q0),
    )?;
    let n = (arc_end - axis_end) / PI;
    let rounded = n.round();
    if (n - rounded).abs() > 0.05 {
        return None;
    }
    Some(rounded as i64)
}

/// Continuous argument of `f(t)` from `t0` (where `f` is real positive) to `t1`.
fn track_arg<F: Fn(f64) -> Complex64>(f: F, t0: f64, t1: f64, max_step: f64) -> Option<f64> {
    let min_step = 1e-13 * (t1 - t0).abs().max(1.0);
    let mut t = t0;
    let mut z = f(t);
    let mut arg = z.arg();
    let mut h = max_step;
    while t < t1 {
        let t_new = (t + h).min(t1);
        let z_new = f(t_new);
        if z_new.norm() < 1e-10 * (1.0 + t_new * t_new) {
            return None;
        }
        let d_arg = (z_new / z).arg();
        if d_arg.abs() > 0.35 {
            h *= 0.5;
            if h < min_step {
                return None;
            }
            continue;
        }
        arg += d_arg;
        t = t_new;
        z = z_new;
        if d_arg.abs() < 0.1 {
            h = (h * 1.5).min(max_step);
        }
    }
    Some(arg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rp(g: f64, q0: f64, tau: f64) -> ReducedParams {
        ReducedParams::new(g, q0, tau).unwrap()
    }

    #[test]
    fn response_degenerate_cases() {
        assert_relative_eq!(response(&rp(0.0, 55.0, 3.0), 0.0).re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            response(&rp(0.0, 55.0, 3.0), 1.0).norm(),
            55.0,
            max_relative = 1e-13
        );
        let r = rp(0.7, 10.0, 0.0);
        for &w in &[0.0, 0.3, 0.99, 2.5] {
            let shifted = Complex64::new(1.0 - 0.07 - w * w, w / 10.0).inv();
            assert_relative_eq!((response(&r, w) - shifted).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn response_is_conjugate_symmetric() {
        let r = rp(0.36, 55.0, 7.3);
        for &w in &[0.1, 0.9, 1.0, 1.7, 13.0] {
            let a = response(&r, -w);
            let b = response(&r, w).conj();
            assert!((a - b).norm() <= 1e-12 * a.norm());
        }
    }

    #[test]
    fn equipartition_without_feedback() {
        for &(q0, tau) in &[(2.0, 0.0), (55.0, 1.3), (300.0, 40.0)] {
            let v = variance_quadrature(&rp(0.0, q0, tau)).unwrap();
            assert_relative_eq!(v.sigma_q2, 1.0, max_relative = 1e-8);
            assert_relative_eq!(v.sigma_v2, 1.0, max_relative = 1e-8);
            assert!(v.rel_error_v2() <= 1e-8);
        }
    }

    #[test]
    fn zero_delay_velocity_variance_is_thermal() {
        // Instantaneous position feedback only shifts the stiffness.
        let v = variance_quadrature(&rp(0.5, 5.0, 0.0)).unwrap();
        assert_relative_eq!(v.sigma_v2, 1.0, max_relative = 1e-8);
        assert_relative_eq!(v.sigma_q2, 1.0 / 0.9, max_relative = 1e-8);
    }

    #[test]
    fn position_only_matches_full() {
        let r = rp(0.36, 55.0, 2.04 * PI);
        let full = variance_quadrature(&r).unwrap();
        let q = position_variance(&r).unwrap();
        assert_relative_eq!(full.sigma_q2, q, max_relative = 1e-9);
    }

    #[test]
    fn unstable_parameters_are_rejected() {
        let r = rp(20.0, 10.0, 1.5 * PI);
        assert!(matches!(
            variance_quadrature(&r),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn stability_verdicts() {
        assert!(delay_stability(&rp(0.0, 55.0, 9.0)).unwrap());
        assert!(delay_stability(&rp(0.36, 55.0, 2.04 * PI)).unwrap());
        assert!(!delay_stability(&rp(20.0, 10.0, 1.5 * PI)).unwrap());
        // Zero delay: static stiffness 1 - g/q0 flips sign at g = q0.
        assert!(delay_stability(&rp(9.0, 10.0, 0.0)).unwrap());
        assert!(!delay_stability(&rp(11.0, 10.0, 0.0)).unwrap());
        // Heating phase: effective damping 1 + g sin(tau) turns negative past g ~ 1.
        assert!(delay_stability(&rp(0.6, 10.0, 1.5 * PI)).unwrap());
        assert!(!delay_stability(&rp(1.6, 10.0, 1.5 * PI)).unwrap());
    }

    #[test]
    fn marginal_zero_is_unstable() {
        // g = q0, tau = 0 puts a root exactly at s = 0.
        assert!(!delay_stability(&rp(10.0, 10.0, 0.0)).unwrap());
    }

    #[test]
    fn band_variance_covers_total() {
        let r = rp(0.36, 20.0, 3.0);
        let total = variance_quadrature(&r).unwrap().sigma_q2;
        let inner = band_variance(&r, 0.0, 5.0, 0).unwrap();
        let outer = band_variance(&r, 5.0, 400.0, 0).unwrap();
        assert_relative_eq!(inner + outer, total, max_relative = 1e-7);
    }

    #[test]
    fn spectrum_grid_validation() {
        assert!(
            SpectrumGrid::new(vec![0.0, 1.0], vec![1.0], SpectrumConvention::TwoSided, "").is_err()
        );
        assert!(SpectrumGrid::new(
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            SpectrumConvention::TwoSided,
            ""
        )
        .is_err());
        assert!(SpectrumGrid::new(
            vec![0.0, 1.0],
            vec![1.0, -1.0],
            SpectrumConvention::TwoSided,
            ""
        )
        .is_err());
    }
}
