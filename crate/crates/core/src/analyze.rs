//! Estimators applied to sampled traces: moments, velocity reconstruction,
//! band filtering, spectral estimation, damping-rate and gain fits, and the
//! delayed position–velocity correlation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::analytic::sigma_v2_closed;
use crate::error::{Error, Result};
use crate::model::ReducedParams;
use crate::spectral::{position_variance, SpectrumConvention, SpectrumGrid};
use crate::stats::{PairSums, PowerSums};

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub value: f64,
    pub stderr: f64,
    /// Root of the (weighted) residual sum of squares.
    pub residual_norm: f64,
    pub n_points: usize,
    /// Model and window used.
    pub method: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub kurtosis: f64,
}

/// Population (divisor `N`) variance and kurtosis `m4 / m2²`.
pub fn moments(series: &[f64]) -> Result<Moments> {
    if series.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least 4",
            series.len()
        )));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for x in series {
        let d = (x - mean) * (x - mean);
        m2 += d;
        m4 += d * d;
    }
    m2 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(Moments {
        mean,
        variance: m2,
        kurtosis: m4 / (m2 * m2),
    })
}

/// Central differences; the two endpoints are dropped.
pub fn finite_diff_velocity(q: &[f64], dt: f64) -> Result<Vec<f64>> {
    if q.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least 3",
            q.len()
        )));
    }
    let h = 0.5 / dt;
    Ok(q.windows(3).map(|w| (w[2] - w[0]) * h).collect())
}

/// Angular frequency of FFT bin `k` for `n` samples spaced `dt`.
fn bin_frequency(k: usize, n: usize, dt: f64) -> f64 {
    let k = if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    };
    2.0 * PI * k / (n as f64 * dt)
}

/// Zero-phase brick-wall filter keeping `|ω| ∈ [center − bw/2, center + bw/2]`
/// (angular frequencies, in units of the sample time `dt`).
pub fn bandpass(series: &[f64], dt: f64, center: f64, bandwidth: f64) -> Result<Vec<f64>> {
    let nyquist = PI / dt;
    if !(center > 0.0 && center < nyquist) {
        return Err(Error::InvalidParameter {
            name: "center",
            value: center,
            reason: "must lie in (0, pi/dt)",
        });
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidParameter {
            name: "bandwidth",
            value: bandwidth,
            reason: "must be positive",
        });
    }
    let n = series.len();
    let (lo, hi) = (center - 0.5 * bandwidth, center + 0.5 * bandwidth);
    let keep: Vec<bool> = (0..n)
        .map(|k| {
            let w = bin_frequency(k, n, dt).abs();
            w >= lo && w <= hi
        })
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::DegenerateBand { lo, hi });
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = series.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (b, k) in buf.iter_mut().zip(&keep) {
        if !k {
            *b = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(buf.iter().map(|c| c.re * scale).collect())
}

/// Hann-windowed averaged periodogram on the two-sided angular-frequency grid,
/// normalized so that `∫ S dω/2π` equals the variance. Each segment has its
/// mean removed.
pub fn welch_psd(
    series: &[f64],
    dt: f64,
    segment_length: usize,
    overlap: f64,
) -> Result<SpectrumGrid> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidParameter {
            name: "overlap",
            value: overlap,
            reason: "must lie in [0, 1)",
        });
    }
    let l = segment_length;
    if l < 2 || l > series.len() {
        return Err(Error::InsufficientData(format!(
            "segment length {l} for {} samples",
            series.len()
        )));
    }
    let hop = ((l as f64 * (1.0 - overlap)).round() as usize).max(1);
    let n_seg = 1 + (series.len() - l) / hop;
    if n_seg < 2 {
        return Err(Error::InsufficientData(format!(
            "{n_seg} segment(s), need at least 2"
        )));
    }
    let window: Vec<f64> = (0..l)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / l as f64).cos())
        .collect();
    let u = window.iter().map(|w| w * w).sum::<f64>() / l as f64;
    let fft = FftPlanner::new().plan_fft_forward(l);
    let mut acc = vec![0.0; l];
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    for s in 0..n_seg {
        let seg = &series[s * hop..s * hop + l];
        let mean = seg.iter().sum::<f64>() / l as f64;
        for i in 0..l {
            buf[i] = Complex64::new((seg[i] - mean) * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }
    let norm = dt / (u * l as f64 * n_seg as f64);
    let mut pairs: Vec<(f64, f64)> = (0..l)
        .map(|k| (bin_frequency(k, l, dt), acc[k] * norm))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (frequencies, values) = pairs.into_iter().unzip();
    SpectrumGrid::new(
        frequencies,
        values,
        SpectrumConvention::TwoSided,
        format!("welch hann L={l} hop={hop} segments={n_seg} dt={dt}"),
    )
}

/// Normalized autocorrelation `c[k] = r[k]/r[0]` of the mean-subtracted
/// series for lags `0..=max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Vec<f64> {
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = series
        .iter()
        .map(|&x| Complex64::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(m)
        .collect();
    planner.plan_fft_forward(m).process(&mut buf);
    for b in buf.iter_mut() {
        *b = Complex64::new(b.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let r0 = buf[0].re;
    (0..=max_lag.min(n - 1)).map(|k| buf[k].re / r0).collect()
}

struct DecayFit {
    gamma: f64,
    rss: f64,
    curvature: f64,
    window: usize,
}

fn fit_energy_decay(q: &[f64], v: &[f64], dt: f64) -> Result<DecayFit> {
    let energy: Vec<f64> = q.iter().zip(v).map(|(a, b)| a * a + b * b).collect();
    let max_lag = q.len() / 20;
    let c = autocorrelation(&energy, max_lag);
    let threshold = (-1.0f64).exp();
    let crossing = c
        .iter()
        .position(|&x| x < threshold)
        .filter(|&k| k >= 5)
        .ok_or(Error::FitWindow { max_lag })?;
    let gamma_init = 1.0 / (crossing as f64 * dt);
    let window = ((3.0 / gamma_init / dt).ceil() as usize).min(max_lag);
    let t: Vec<f64> = (0..=window).map(|k| k as f64 * dt).collect();
    let y = &c[..=window];

    let mut gamma = gamma_init;
    for _ in 0..100 {
        let (mut jr, mut jj) = (0.0, 0.0);
        for (ti, yi) in t.iter().zip(y) {
            let e = (-gamma * ti).exp();
            let j = -ti * e;
            jr += j * (yi - e);
            jj += j * j;
        }
        let step = jr / jj;
        gamma += step;
        if step.abs() <= 1e-13 * gamma {
            break;
        }
    }
    let (mut rss, mut curvature) = (0.0, 0.0);
    for (ti, yi) in t.iter().zip(y) {
        let e = (-gamma * ti).exp();
        rss += (yi - e).powi(2);
        curvature += (ti * e).powi(2);
    }
    Ok(DecayFit {
        gamma,
        rss,
        curvature,
        window,
    })
}

const ERROR_BLOCKS: usize = 8;

/// Fits `exp(−Γ t)` to the autocorrelation of `E = q² + v²`.
///
/// The initial rate comes from the first `1/e` crossing, which must fall
/// between 5 lags and a twentieth of the trace; the fit then runs over lags
/// `[0, 3/Γ_initial]` by Gauss–Newton in linear space. Neighbouring lags are
/// strongly correlated, so the standard error comes from the spread of fits
/// on 8 disjoint blocks when each block is long enough, and from the
/// residuals otherwise.
pub fn energy_autocorr_gamma(q: &[f64], v: &[f64], dt: f64) -> Result<FitResult> {
    if q.len() != v.len() {
        return Err(Error::InsufficientData("q and v lengths differ".into()));
    }
    if q.len() < 100 {
        return Err(Error::InsufficientData(format!("{} samples", q.len())));
    }
    let fit = fit_energy_decay(q, v, dt)?;
    let n = fit.window + 1;
    let block = q.len() / ERROR_BLOCKS;
    let blocks: Option<Vec<f64>> = (0..ERROR_BLOCKS)
        .map(|b| {
            let r = b * block..(b + 1) * block;
            fit_energy_decay(&q[r.clone()], &v[r], dt)
                .ok()
                .map(|f| f.gamma)
        })
        .collect();
    let (stderr, how) = match blocks {
        Some(g) => {
            let (_, se) = crate::stats::mean_and_se(&g);
            (se, format!("block spread over {ERROR_BLOCKS} blocks"))
        }
        None => (
            (fit.rss / (n - 1) as f64 / fit.curvature).sqrt(),
            "residuals".to_string(),
        ),
    };
    Ok(FitResult {
        value: fit.gamma,
        stderr,
        residual_norm: fit.rss.sqrt(),
        n_points: n,
        method: format!(
            "exp(-gamma t) on energy autocorrelation, lags 0..={}, dt={dt}, stderr from {how}",
            fit.window
        ),
    })
}

/// Pearson correlation of the pairs `(q[n − n_delay], v[n])`.
pub fn delayed_correlation(q: &[f64], v: &[f64], n_delay: usize) -> Result<f64> {
    let n = q.len().min(v.len());
    if n <= n_delay + 2 {
        return Err(Error::InsufficientData(format!(
            "{n} samples for delay {n_delay}"
        )));
    }
    let mut s = PairSums::default();
    for i in n_delay..n {
        s.push(q[i - n_delay], v[i]);
    }
    s.pearson()
        .ok_or(Error::UndefinedCorrelation("zero variance in a column"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainModel {
    /// Kinetic temperature `σ_v²(τ)`.
    Velocity,
    /// Configurational temperature `σ_q²(τ)`.
    Position,
}

impl GainModel {
    pub fn name(self) -> &'static str {
        match self {
            Self::Velocity => "sigma_v2",
            Self::Position => "sigma_q2",
        }
    }

    pub fn eval(self, r: &ReducedParams) -> Result<f64> {
        match self {
            Self::Velocity => sigma_v2_closed(r),
            Self::Position => position_variance(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainFitOptions {
    pub model: GainModel,
    pub g_max: f64,
    /// Per-point standard errors; when present the fit is weighted and the
    /// reported error is not rescaled by the residual.
    pub sigma: Option<Vec<f64>>,
    pub tolerance: f64,
    pub scan_points: usize,
}

impl Default for GainFitOptions {
    fn default() -> Self {
        Self {
            model: GainModel::Velocity,
            g_max: 0.95,
            sigma: None,
            tolerance: 1e-9,
            scan_points: 48,
        }
    }
}

/// Least-squares gain from a `(τ, T_eff/T0)` curve at fixed `q0`.
pub fn fit_gain(curve: &[(f64, f64)], q0: f64, opts: &GainFitOptions) -> Result<FitResult> {
    if curve.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "{} curve points, need at least 5",
            curve.len()
        )));
    }
    if let Some(s) = &opts.sigma {
        if s.len() != curve.len() || s.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                value: f64::NAN,
                reason: "needs one positive standard error per point",
            });
        }
    }
    if !(opts.g_max > 0.0) {
        return Err(Error::InvalidParameter {
            name: "g_max",
            value: opts.g_max,
            reason: "must be positive",
        });
    }
    ReducedParams::new(0.0, q0, 0.0)?;
    let weight = |i: usize| opts.sigma.as_ref().map_or(1.0, |s| 1.0 / s[i]);
    let objective = |g: f64| -> f64 {
        let mut acc = 0.0;
        for (i, &(tau, y)) in curve.iter().enumerate() {
            match opts.model.eval(&ReducedParams { g, q0, tau }) {
                Ok(m) => acc += ((m - y) * weight(i)).powi(2),
                Err(_) => return f64::INFINITY,
            }
        }
        acc
    };

    let (lo, hi) = (0.0, opts.g_max);
    let n = opts.scan_points.max(4);
    let grid: Vec<f64> = (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&g| objective(g)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    if !values[best].is_finite() {
        return Err(Error::NonIdentifiable {
            value: f64::NAN,
            lo,
            hi,
        });
    }
    if best == 0 || best == n {
        return Err(Error::NonIdentifiable {
            value: grid[best],
            lo,
            hi,
        });
    }
    let g = golden_section(&objective, grid[best - 1], grid[best + 1], opts.tolerance);
    if g - lo < 1e-6 || hi - g < 1e-6 {
        return Err(Error::NonIdentifiable { value: g, lo, hi });
    }

    // Linearized error from the model sensitivity.
    let h = 1e-5 * g.max(1e-3);
    let mut jj = 0.0;
    for (i, &(tau, _)) in curve.iter().enumerate() {
        let up = opts.model.eval(&ReducedParams { g: g + h, q0, tau })?;
        let dn = opts.model.eval(&ReducedParams { g: g - h, q0, tau })?;
        jj += ((up - dn) / (2.0 * h) * weight(i)).powi(2);
    }
    let rss = objective(g);
    let k = curve.len();
    let var = if opts.sigma.is_some() {
        1.0 / jj
    } else {
        rss / (k - 1) as f64 / jj
    };
    Ok(FitResult {
        value: g,
        stderr: var.sqrt(),
        residual_norm: rss.sqrt(),
        n_points: k,
        method: format!(
            "{} model, {} least squares, g in ({lo}, {hi})",
            opts.model.name(),
            if opts.sigma.is_some() {
                "weighted"
            } else {
                "unweighted"
            }
        ),
    })
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Streaming moments of a long series without storing it.
pub fn streaming_moments<I: IntoIterator<Item = f64>>(series: I) -> Result<Moments> {
    let mut p = PowerSums::default();
    for x in series {
        p.push(x);
    }
    if p.n < 4 {
        return Err(Error::InsufficientData(format!(
            "{} samples, need at least 4",
            p.n
        )));
    }
    let variance = p.variance();
    if variance == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(Moments {
        mean: p.mean(),
        variance,
        kurtosis: p.kurtosis(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn two_point_series() {
        let m = moments(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        assert_eq!(m.variance, 1.0);
        assert_eq!(m.kurtosis, 1.0);
    }

    #[test]
    fn gaussian_kurtosis() {
        let n = 400_000;
        let m = moments(&gaussian(n, 1)).unwrap();
        // Var(kurtosis) ≈ 24/n for a normal sample.
        assert!(
            (m.kurtosis - 3.0).abs() < 3.0 * (24.0 / n as f64).sqrt(),
            "{}",
            m.kurtosis
        );
        let s = streaming_moments(gaussian(n, 1)).unwrap();
        assert!((s.kurtosis - m.kurtosis).abs() < 1e-9);
    }

    #[test]
    fn moments_errors() {
        assert!(matches!(
            moments(&[1.0, 2.0, 3.0]),
            Err(Error::InsufficientData(_))
        ));
        assert_eq!(moments(&[2.0; 10]), Err(Error::ZeroVariance));
    }

    #[test]
    fn ramp_gives_constant_velocity() {
        let dt = 0.01;
        let q: Vec<f64> = (0..50).map(|n| 2.5 * n as f64 * dt).collect();
        let v = finite_diff_velocity(&q, dt).unwrap();
        assert_eq!(v.len(), 48);
        assert!(v.iter().all(|x| (x - 2.5).abs() < 1e-12));
        let parabola: Vec<f64> = (0..10).map(|n| (n as f64 * dt).powi(2)).collect();
        let vp = finite_diff_velocity(&parabola, dt).unwrap();
        assert!((vp[3] - 2.0 * 4.0 * dt).abs() < 1e-12);
    }

    #[test]
    fn sinusoid_attenuation_matches_stencil_response() {
        let dt = 2.0 * PI / 200.0;
        let w = 1.0;
        let q: Vec<f64> = (0..2000).map(|n| (w * n as f64 * dt).sin()).collect();
        let v = finite_diff_velocity(&q, dt).unwrap();
        let gain = (w * dt).sin() / (w * dt);
        assert!((1.0 - gain) < 1e-3);
        for (i, x) in v.iter().enumerate() {
            let t = (i + 1) as f64 * dt;
            assert!((x - gain * (w * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn bandpass_identity_and_idempotence() {
        let dt = 0.05;
        let n = 4000;
        // Tone on an exact bin: 2π·k/(N dt) with k = 32.
        let w0 = 2.0 * PI * 32.0 / (n as f64 * dt);
        let tone: Vec<f64> = (0..n).map(|i| (w0 * i as f64 * dt).cos()).collect();
        let f = bandpass(&tone, dt, w0, 0.1).unwrap();
        assert!(f.iter().zip(&tone).all(|(a, b)| (a - b).abs() < 1e-10));

        let noise = gaussian(n, 4);
        let once = bandpass(&noise, dt, 1.0, 0.3).unwrap();
        let twice = bandpass(&once, dt, 1.0, 0.3).unwrap();
        assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-12));

        // Linearity.
        let sum: Vec<f64> = noise.iter().zip(&tone).map(|(a, b)| a + 2.0 * b).collect();
        let fs = bandpass(&sum, dt, 1.0, 0.3).unwrap();
        let ft = bandpass(&tone, dt, 1.0, 0.3).unwrap();
        assert!(fs
            .iter()
            .zip(once.iter().zip(&ft))
            .all(|(s, (a, b))| (s - a - 2.0 * b).abs() < 1e-11));
    }

    #[test]
    fn bandpass_rejects_empty_band() {
        let x = gaussian(100, 0);
        // Bin spacing 2π/(100·0.1) ≈ 0.63 is wider than the band.
        assert!(matches!(
            bandpass(&x, 0.1, 1.0, 0.01),
            Err(Error::DegenerateBand { .. })
        ));
        assert!(bandpass(&x, 0.1, 100.0, 0.1).is_err());
    }

    #[test]
    fn welch_white_noise_is_flat_and_parseval_holds() {
        let x = gaussian(1 << 16, 9);
        let dt = 0.1;
        let s = welch_psd(&x, dt, 256, 0.5).unwrap();
        assert_eq!(s.frequencies.len(), 256);
        assert!(s.frequencies.windows(2).all(|w| w[1] > w[0]));
        // White noise of unit variance has S = dt.
        let segments = 511.0;
        let mean = s.values.iter().sum::<f64>() / s.values.len() as f64;
        assert!((mean / dt - 1.0).abs() < 0.02);
        let spread = s.values.iter().map(|v| (v / dt - 1.0).powi(2)).sum::<f64>() / 256.0;
        assert!(spread.sqrt() < 4.0 / (segments as f64).sqrt());
        let var = moments(&x).unwrap().variance;
        let total: f64 = s.values.iter().sum::<f64>() * (2.0 * PI / (256.0 * dt)) / (2.0 * PI);
        assert!((total / var - 1.0).abs() < 0.01);
    }

    #[test]
    fn welch_needs_two_segments() {
        let x = gaussian(100, 0);
        assert!(matches!(
            welch_psd(&x, 1.0, 100, 0.0),
            Err(Error::InsufficientData(_))
        ));
        assert!(welch_psd(&x, 1.0, 50, 1.0).is_err());
    }

    #[test]
    fn autocorrelation_of_ar1() {
        let a: f64 = 0.9;
        let noise = gaussian(200_000, 3);
        let mut x = vec![0.0; noise.len()];
        for i in 1..x.len() {
            x[i] = a * x[i - 1] + noise[i];
        }
        let c = autocorrelation(&x, 5);
        assert_eq!(c[0], 1.0);
        for (k, ck) in c.iter().enumerate() {
            assert!((ck - a.powi(k as i32)).abs() < 0.02, "{k}: {ck}");
        }
    }

    #[test]
    fn energy_fit_recovers_known_exponential() {
        // E = q² + v² with q, v independent AR(1) processes: c_E(k) = a^{2k}.
        let dt = 0.1;
        let gamma: f64 = 0.05;
        let a = (-gamma * dt / 2.0).exp();
        let s = (1.0 - a * a).sqrt();
        let (nq, nv) = (gaussian(400_000, 5), gaussian(400_000, 6));
        let (mut q, mut v) = (vec![0.0; nq.len()], vec![0.0; nv.len()]);
        for i in 1..q.len() {
            q[i] = a * q[i - 1] + s * nq[i];
            v[i] = a * v[i - 1] + s * nv[i];
        }
        let fit = energy_autocorr_gamma(&q, &v, dt).unwrap();
        assert!(fit.method.contains("block"));
        assert!(fit.stderr > 0.0 && fit.stderr < 0.1 * gamma, "{fit:?}");
        assert!((fit.value - gamma).abs() < 4.0 * fit.stderr, "{fit:?}");
    }

    #[test]
    fn energy_fit_rejects_white_noise() {
        let q = gaussian(10_000, 1);
        let v = gaussian(10_000, 2);
        assert!(matches!(
            energy_autocorr_gamma(&q, &v, 0.1),
            Err(Error::FitWindow { .. })
        ));
    }

    #[test]
    fn delayed_correlation_basics() {
        let x = gaussian(1000, 7);
        assert!((delayed_correlation(&x, &x, 0).unwrap() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = std::iter::repeat(0.0)
            .take(3)
            .chain(x.iter().copied())
            .collect();
        assert!((delayed_correlation(&shifted, &shifted[..], 0).unwrap() - 1.0).abs() < 1e-12);
        let lagged: Vec<f64> = (0..1000)
            .map(|i| if i >= 3 { x[i - 3] } else { 0.0 })
            .collect();
        assert!((delayed_correlation(&x, &lagged, 3).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            delayed_correlation(&[1.0; 10], &x[..10], 2),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(delayed_correlation(&x[..5], &x[..5], 3).is_err());
    }

    #[test]
    fn gain_fit_self_consistency() {
        let q0 = 55.0;
        let curve: Vec<(f64, f64)> = (0..25)
            .map(|i| {
                let tau = 0.5 * PI + 59.5 * PI * i as f64 / 24.0;
                (
                    tau,
                    sigma_v2_closed(&ReducedParams::new(0.36, q0, tau).unwrap()).unwrap(),
                )
            })
            .collect();
        let fit = fit_gain(&curve, q0, &GainFitOptions::default()).unwrap();
        assert!((fit.value - 0.36).abs() < 1e-6, "{fit:?}");
        assert!(fit.method.contains("sigma_v2"));
    }

    #[test]
    fn gain_fit_boundary_is_non_identifiable() {
        let curve: Vec<(f64, f64)> = (0..6).map(|i| (1.0 + i as f64, 1.0)).collect();
        assert!(matches!(
            fit_gain(&curve, 55.0, &GainFitOptions::default()),
            Err(Error::NonIdentifiable { .. })
        ));
        assert!(fit_gain(&curve[..4], 55.0, &GainFitOptions::default()).is_err());
    }
}
