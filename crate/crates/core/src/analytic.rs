//! Closed-form steady-state moments and thermodynamic rates.
//!
//! All rates are dimensionless: entropy rates in units of `k_B Ω₀`, work rates
//! in units of `k_B T₀ Ω₀`. Everything thermodynamic follows from the velocity
//! variance `σ_v²`:
//!
//! * entropy pumping `Ṡ_pump = (1 − σ_v²)/(q0 σ_v²)`
//! * extracted work `Ẇ_ext = (1 − σ_v²)/q0`
//! * entropy production `Ṡ_i = (1 − σ_v²)²/(q0 σ_v²)`
//!
//! so `Ṡ_pump − Ẇ_ext = Ṡ_i ≥ 0` holds identically.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{validity_domain, ReducedParams};
use crate::spectral::{self, delay_stability};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateMoments {
    /// Position variance, units of `x_th²`.
    pub sigma_q2: f64,
    /// Velocity variance, units of `v_th²`.
    pub sigma_v2: f64,
    /// Correlation coefficient between `q(t − τ)` and `v(t)`.
    pub corr_delayed: f64,
}

impl SteadyStateMoments {
    pub fn new(sigma_q2: f64, sigma_v2: f64, corr_delayed: f64) -> Result<Self> {
        if !(sigma_q2 > 0.0) {
            return Err(Error::InvalidMoments("sigma_q2 must be positive"));
        }
        if !(sigma_v2 > 0.0) {
            return Err(Error::InvalidMoments("sigma_v2 must be positive"));
        }
        if !(corr_delayed.abs() <= 1.0) {
            return Err(Error::InvalidMoments("|corr_delayed| must not exceed 1"));
        }
        Ok(Self {
            sigma_q2,
            sigma_v2,
            corr_delayed,
        })
    }
}

/// Which variance defines the effective temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemperatureKind {
    /// `T_q = T₀ σ_q²`
    Configurational,
    /// `T_v = T₀ σ_v²`
    Kinetic,
}

impl TemperatureKind {
    pub fn label(self) -> &'static str {
        match self {
            TemperatureKind::Configurational => "T_q",
            TemperatureKind::Kinetic => "T_v",
        }
    }

    /// `T_eff / T₀`.
    pub fn ratio(self, m: &SteadyStateMoments) -> f64 {
        match self {
            TemperatureKind::Configurational => m.sigma_q2,
            TemperatureKind::Kinetic => m.sigma_v2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoRates {
    pub s_pump: f64,
    pub w_ext: f64,
    pub s_i: f64,
    /// Velocity-feedback (Markovian) bound `g/q0`.
    pub s_vfb: f64,
    /// High-Q approximation `(g/q0) sin τ`.
    pub s_highq: f64,
    /// `Ṡ_pump^y + İ_flow`; `None` where the bound is singular (e.g. `g = 0`).
    pub bound_nm: Option<f64>,
    /// Efficiencies exist only in the cooling region with a positive denominator.
    pub eta_pump: Option<f64>,
    pub eta_vfb: Option<f64>,
    pub eta_highq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighQEffective {
    /// `Γ'/Γ₀ = 1 + g sin τ`
    pub gamma_ratio: f64,
    /// `Ω'²/Ω₀² = 1 − (g/q0) cos τ`
    pub omega2_ratio: f64,
    pub s_highq: f64,
    pub s_vfb: f64,
}

/// Long-delay limits. `sigma_q2_inf`/`sigma_v2_inf` are exact; the other three
/// are the leading-order expansions for `g ≪ q0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongDelayAsymptotics {
    pub im_omega1: f64,
    pub sigma_q2_inf: f64,
    pub sigma_v2_inf: f64,
    /// `1 + (1 + 1/q0²) g²/2`
    pub t_eff_ratio_inf: f64,
    /// `−g²/(2 q0)`
    pub w_ext_inf: f64,
    /// `g/2 + g³/8`
    pub corr_inf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonMarkovBound {
    pub s_pump_y: f64,
    pub i_flow: f64,
    pub bound_nm: f64,
    pub s_pump: f64,
    /// `s_pump ≤ bound_nm`
    pub holds: bool,
}

/// Closed-form velocity variance with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormVelocity {
    pub sigma_v2: f64,
    /// `|Im| / |Re|` of the complex evaluation.
    pub residue: f64,
    /// The same expression without the `2/q0` normalization, i.e. the variance
    /// in the units of the unnormalized equation of motion.
    pub unnormalized: f64,
}

const RESIDUE_LIMIT: f64 = 1e-10;

pub fn sigma_v2_closed(r: &ReducedParams) -> Result<f64> {
    sigma_v2_closed_detail(r).map(|c| c.sigma_v2)
}

pub fn sigma_v2_closed_detail(r: &ReducedParams) -> Result<ClosedFormVelocity> {
    r.validate()?;
    if r.g == 0.0 {
        return Ok(ClosedFormVelocity {
            sigma_v2: 1.0,
            residue: 0.0,
            unnormalized: r.q0 / 2.0,
        });
    }
    if !delay_stability(r)? {
        return Err(Error::Unstable {
            g: r.g,
            q0: r.q0,
            tau: r.tau,
        });
    }
    let raw = match velocity_expression(r.g, r.q0, r.tau) {
        Some(v) => v,
        // Coalescing frequencies: average the two sides of the removable singularity.
        None => {
            let eps = 1e-5 * r.g;
            let lo = velocity_expression(r.g - eps, r.q0, r.tau);
            let hi = velocity_expression(r.g + eps, r.q0, r.tau);
            match (lo, hi) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                _ => {
                    return Err(Error::NumericalInconsistency {
                        value: f64::NAN,
                        residue: f64::NAN,
                    })
                }
            }
        }
    };
    let value = raw * (2.0 / r.q0);
    let residue = if value.re != 0.0 {
        value.im.abs() / value.re.abs()
    } else {
        f64::INFINITY
    };
    if !(residue < RESIDUE_LIMIT) || !(value.re > 0.0) {
        return Err(Error::NumericalInconsistency {
            value: value.re,
            residue,
        });
    }
    Ok(ClosedFormVelocity {
        sigma_v2: value.re,
        residue,
        unnormalized: raw.re,
    })
}

/// `½ (y₁ω₁/x₁ − y₂ω₂/x₂)/(ω₂² − ω₁²)` with
/// `ω₁,₂ = (1 − 1/(2q0²) ± (1/q0)√(g² − 1 + 1/(4q0²)))^{1/2}`,
/// `h(ω) = −ω/(q0 (1 − ω² − g/q0))`, `x = cos(ωτ/2) + h sin(ωτ/2)`,
/// `y = h cos(ωτ/2) − sin(ωτ/2)`.
///
/// `y/x` is evaluated as `(h − t)/(1 + h t)` with `t = tan(ωτ/2)` so long delays
/// with complex `ω` do not overflow. Returns `None` when `ω₁ ≈ ω₂`.
fn velocity_expression(g: f64, q0: f64, tau: f64) -> Option<Complex64> {
    let disc = Complex64::new(g * g - 1.0 + 1.0 / (4.0 * q0 * q0), 0.0).sqrt();
    let base = Complex64::new(1.0 - 1.0 / (2.0 * q0 * q0), 0.0);
    let w1 = (base + disc / q0).sqrt();
    let w2 = (base - disc / q0).sqrt();
    let split = w2 * w2 - w1 * w1;
    if split.norm() < 1e-9 {
        return None;
    }
    let ratio = |w: Complex64| -> Complex64 {
        let h = -(w / q0) / (1.0 - w * w - g / q0);
        let t = stable_tan(w * (tau / 2.0));
        (h - t) / (1.0 + h * t) * w
    };
    Some(0.5 * (ratio(w1) - ratio(w2)) / split)
}

/// `tan(x + iy) = (sin 2x + i sinh 2y)/(cos 2x + cosh 2y)`, rescaled by `cosh 2y`.
fn stable_tan(z: Complex64) -> Complex64 {
    let (x2, y2) = (2.0 * z.re, 2.0 * z.im);
    if y2.abs() < 20.0 {
        return z.tan();
    }
    // 1/cosh(2y) without overflow.
    let sech = 2.0 * (-y2.abs()).exp() / (1.0 + (-2.0 * y2.abs()).exp());
    let num = Complex64::new(x2.sin() * sech, y2.tanh());
    num / (x2.cos() * sech + 1.0)
}

pub fn thermo_rates(r: &ReducedParams, m: &SteadyStateMoments) -> Result<ThermoRates> {
    if !(m.sigma_v2 > 0.0) {
        return Err(Error::InvalidMoments("sigma_v2 must be positive"));
    }
    let sv = m.sigma_v2;
    let d = 1.0 - sv;
    let s_pump = d / (r.q0 * sv);
    let w_ext = d / r.q0;
    let s_i = d * d / (r.q0 * sv);
    let hq = highq_effective(r);
    let bound_nm = nonmarkov_bound(r, m).ok().map(|b| b.bound_nm);
    let cooling = sv < 1.0;
    let eta = |den: f64| (cooling && den > 0.0).then(|| w_ext / den);
    Ok(ThermoRates {
        s_pump,
        w_ext,
        s_i,
        s_vfb: hq.s_vfb,
        s_highq: hq.s_highq,
        bound_nm,
        eta_pump: eta(s_pump),
        eta_vfb: eta(hq.s_vfb),
        eta_highq: eta(hq.s_highq),
    })
}

pub fn highq_effective(r: &ReducedParams) -> HighQEffective {
    let (s, c) = r.tau.sin_cos();
    let s_vfb = r.g / r.q0;
    HighQEffective {
        gamma_ratio: 1.0 + r.g * s,
        omega2_ratio: 1.0 - s_vfb * c,
        s_highq: s_vfb * s,
        s_vfb,
    }
}

pub fn asymptotic_long_delay(r: &ReducedParams) -> Result<LongDelayAsymptotics> {
    if !validity_domain(r).underdamped_asymptotics {
        return Err(Error::Domain { g: r.g, q0: r.q0 });
    }
    let (g, q0) = (r.g, r.q0);
    let root = (1.0 - g * g / (q0 * q0)).sqrt();
    let im_omega1 = std::f64::consts::FRAC_1_SQRT_2 * (1.0 / (2.0 * q0 * q0) - 1.0 + root).sqrt();
    let sigma_v2_inf = 1.0 / (2.0 * q0 * im_omega1);
    Ok(LongDelayAsymptotics {
        im_omega1,
        sigma_q2_inf: sigma_v2_inf / root,
        sigma_v2_inf,
        t_eff_ratio_inf: 1.0 + 0.5 * (1.0 + 1.0 / (q0 * q0)) * g * g,
        w_ext_inf: -g * g / (2.0 * q0),
        corr_inf: g / 2.0 + g.powi(3) / 8.0,
    })
}

/// `c(τ) = (σ_v² − 1)/(g σ_q σ_v)`, from the stationary velocity balance
/// `⟨q(t−τ) v(t)⟩ = (σ_v² − 1)/g`.
pub fn correlation_closed(r: &ReducedParams, m: &SteadyStateMoments) -> Result<f64> {
    if r.g == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "g = 0 gives 0/0; use the free-oscillator correlation",
        ));
    }
    if !(m.sigma_q2 > 0.0 && m.sigma_v2 > 0.0) {
        return Err(Error::InvalidMoments("variances must be positive"));
    }
    let c = (m.sigma_v2 - 1.0) / (r.g * (m.sigma_q2 * m.sigma_v2).sqrt());
    if c.abs() > 1.0 + 1e-9 {
        return Err(Error::NumericalInconsistency {
            value: c,
            residue: c.abs() - 1.0,
        });
    }
    Ok(c.clamp(-1.0, 1.0))
}

/// `⟨q(t−τ) v(t)⟩` of the undriven oscillator (`g = 0`, unit variances):
/// `−e^{−τ/(2q0)} sin(ω₁τ)/ω₁` with `ω₁ = √(1 − 1/(4q0²))`.
pub fn free_delayed_correlation(q0: f64, tau: f64) -> f64 {
    let w1 = (1.0 - 1.0 / (4.0 * q0 * q0)).sqrt();
    -(-tau / (2.0 * q0)).exp() * (w1 * tau).sin() / w1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    /// Closed-form `σ_v²`, quadrature `σ_q²` (no general closed form exists).
    Closed,
    /// Both variances from quadrature.
    Quadrature,
}

pub fn steady_state_moments(r: &ReducedParams, source: MomentSource) -> Result<SteadyStateMoments> {
    let (sigma_q2, sigma_v2) = match source {
        MomentSource::Closed => (spectral::position_variance(r)?, sigma_v2_closed(r)?),
        MomentSource::Quadrature => {
            let v = spectral::variance_quadrature(r)?;
            (v.sigma_q2, v.sigma_v2)
        }
    };
    let corr = if r.g == 0.0 {
        free_delayed_correlation(r.q0, r.tau)
    } else {
        let provisional = SteadyStateMoments {
            sigma_q2,
            sigma_v2,
            corr_delayed: 0.0,
        };
        correlation_closed(r, &provisional)?
    };
    SteadyStateMoments::new(sigma_q2, sigma_v2, corr)
}

/// Bivariate Gaussian density of `(q(t−τ), v(t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointDensity {
    pub sigma_q: f64,
    pub sigma_v: f64,
    pub corr: f64,
}

impl JointDensity {
    pub fn pdf(&self, q_delayed: f64, v: f64) -> f64 {
        let (x, y, c) = (q_delayed / self.sigma_q, v / self.sigma_v, self.corr);
        let one_m = 1.0 - c * c;
        let quad = (x * x - 2.0 * c * x * y + y * y) / one_m;
        (-0.5 * quad).exp() / (2.0 * PI * self.sigma_q * self.sigma_v * one_m.sqrt())
    }

    pub fn marginal_q(&self, q: f64) -> f64 {
        gaussian(q, self.sigma_q)
    }

    pub fn marginal_v(&self, v: f64) -> f64 {
        gaussian(v, self.sigma_v)
    }

    pub fn peak(&self) -> (f64, f64) {
        (0.0, 0.0)
    }
}

fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / ((2.0 * PI).sqrt() * sigma)
}

pub fn joint_density(m: &SteadyStateMoments) -> Result<JointDensity> {
    if !(m.corr_delayed.abs() < 1.0) {
        return Err(Error::DegenerateCovariance(m.corr_delayed.abs()));
    }
    if !(m.sigma_q2 > 0.0 && m.sigma_v2 > 0.0) {
        return Err(Error::InvalidMoments("variances must be positive"));
    }
    Ok(JointDensity {
        sigma_q: m.sigma_q2.sqrt(),
        sigma_v: m.sigma_v2.sqrt(),
        corr: m.corr_delayed,
    })
}

pub fn nonmarkov_bound(r: &ReducedParams, m: &SteadyStateMoments) -> Result<NonMarkovBound> {
    let (sx, sv, g2, q0) = (m.sigma_q2, m.sigma_v2, r.g * r.g, r.q0);
    let d = 1.0 - sv;
    let den = g2 * sx * sv - d * d;
    let scale = g2 * sx * sv + d * d;
    if !(den.abs() > 1e-14 * scale) {
        return Err(Error::SingularBound(den));
    }
    let s_pump_y = q0 * (sv - 1.0) * (sv - sx) / den;
    let i_flow = d * (q0 * q0 * (sv - sx) + g2 * sx + d) / (q0 * den);
    let bound_nm = d * (g2 * sx + d) / (q0 * den);
    let s_pump = d / (q0 * sv);
    Ok(NonMarkovBound {
        s_pump_y,
        i_flow,
        bound_nm,
        s_pump,
        holds: s_pump <= bound_nm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoolingBoundary {
    /// Largest delay whose preceding phase window still contains a cooling point.
    Boundary { tau_star: f64, last_crossing: f64 },
    /// No delay cools (`σ_q² ≥ 1` everywhere).
    NoBoundary,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundaryOptions {
    pub scan_step: f64,
    pub tolerance: f64,
    /// Consecutive cooling-free windows that end the scan.
    pub quiet_windows: usize,
    pub tau_max: f64,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        Self {
            scan_step: 2.0 * PI / 100.0,
            tolerance: 1e-6,
            quiet_windows: 2,
            tau_max: 1e5,
        }
    }
}

/// Largest `τ` such that `min_{τ' ∈ [τ − 2π, τ]} σ_q²(τ') < 1`.
pub fn cooling_boundary(g: f64, q0: f64, opts: &BoundaryOptions) -> Result<CoolingBoundary> {
    let r = ReducedParams::new(g, q0, 0.0)?;
    if !validity_domain(&r).underdamped_asymptotics {
        return Err(Error::Domain { g, q0 });
    }
    if g == 0.0 {
        return Ok(CoolingBoundary::NoBoundary);
    }
    let sq = |tau: f64| spectral::position_variance(&r.with_tau(tau));
    let window = 2.0 * PI;
    let mut last_cool: Option<(f64, f64)> = None; // (τ below 1, next scan τ)
    let mut prev_cool = false;
    let mut tau = 0.0;
    let mut prev_tau = 0.0;
    loop {
        let cool = sq(tau)? < 1.0;
        if !cool && prev_cool {
            last_cool = Some((prev_tau, tau));
        }
        prev_cool = cool;
        let quiet_since = last_cool.map_or(0.0, |(_, t)| t);
        if !cool && tau - quiet_since >= opts.quiet_windows as f64 * window {
            break;
        }
        if tau >= opts.tau_max {
            break;
        }
        prev_tau = tau;
        tau += opts.scan_step;
    }
    let Some((mut lo, mut hi)) = last_cool else {
        return Ok(CoolingBoundary::NoBoundary);
    };
    while hi - lo > opts.tolerance {
        let mid = 0.5 * (lo + hi);
        if sq(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let crossing = 0.5 * (lo + hi);
    Ok(CoolingBoundary::Boundary {
        tau_star: crossing + window,
        last_crossing: crossing,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateQuantity {
    SPump,
    WExt,
    EntropyProduction,
    SigmaV2,
    SigmaQ2,
    Correlation,
}

impl RateQuantity {
    pub fn name(self) -> &'static str {
        match self {
            RateQuantity::SPump => "s_pump",
            RateQuantity::WExt => "w_ext",
            RateQuantity::EntropyProduction => "s_i",
            RateQuantity::SigmaV2 => "sigma_v2",
            RateQuantity::SigmaQ2 => "sigma_q2",
            RateQuantity::Correlation => "corr",
        }
    }
}

pub fn evaluate(r: &ReducedParams, quantity: RateQuantity) -> Result<f64> {
    let from_sv = |sv: f64| -> f64 {
        let d = 1.0 - sv;
        match quantity {
            RateQuantity::SPump => d / (r.q0 * sv),
            RateQuantity::WExt => d / r.q0,
            RateQuantity::EntropyProduction => d * d / (r.q0 * sv),
            _ => sv,
        }
    };
    match quantity {
        RateQuantity::SigmaQ2 => spectral::position_variance(r),
        RateQuantity::Correlation => {
            Ok(steady_state_moments(r, MomentSource::Closed)?.corr_delayed)
        }
        _ => Ok(from_sv(sigma_v2_closed(r)?)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub quantity: RateQuantity,
    pub tau: Vec<f64>,
    pub central: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Pointwise envelope over the corners `g(1 ± 2 rel_g) × τ(1 ± 2 rel_tau)`,
/// widened to include the central curve.
pub fn drift_envelope(
    r: &ReducedParams,
    rel_g: f64,
    rel_tau: f64,
    quantity: RateQuantity,
    taus: &[f64],
) -> Result<Envelope> {
    if !(rel_g >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "rel_g",
            value: rel_g,
            reason: "must be non-negative",
        });
    }
    if !(rel_tau >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "rel_tau",
            value: rel_tau,
            reason: "must be non-negative",
        });
    }
    let rows: Vec<Result<(f64, f64, f64)>> = taus
        .par_iter()
        .map(|&tau| {
            let centre = evaluate(&r.with_tau(tau), quantity)?;
            let (mut lo, mut hi) = (centre, centre);
            for sg in [-1.0, 1.0] {
                for st in [-1.0, 1.0] {
                    let corner = ReducedParams::new(
                        r.g * (1.0 + 2.0 * sg * rel_g),
                        r.q0,
                        tau * (1.0 + 2.0 * st * rel_tau),
                    )?;
                    let v = evaluate(&corner, quantity)?;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            Ok((centre, lo, hi))
        })
        .collect();
    let mut env = Envelope {
        quantity,
        tau: taus.to_vec(),
        central: Vec::with_capacity(taus.len()),
        lower: Vec::with_capacity(taus.len()),
        upper: Vec::with_capacity(taus.len()),
    };
    for row in rows {
        let (c, lo, hi) = row?;
        env.central.push(c);
        env.lower.push(lo);
        env.upper.push(hi);
    }
    Ok(env)
}
