//! Semi-implicit Euler–Maruyama integration of the normalized delayed Langevin
//! equation. Velocities live on half steps and the friction is centred on the
//! position step (`a = dt/(2 q0)`):
//!
//! ```text
//! v[n+1] = ((1 - a) v[n] + dt (-q[n] + (g/q0) q[n - nd]) + sqrt(2 dt/q0) N(0,1)) / (1 + a)
//! q[n+1] = q[n] + dt v[n+1]
//! ```
//!
//! Taking the friction at `v[n]` alone would shift the oscillation frequency by
//! `dt/(4 q0)`, a phase error that grows with the delay and biases the delayed
//! correlation wherever it varies steeply with `tau`. The centred form leaves
//! only the `dt²/24` leapfrog frequency error and keeps the free-particle
//! velocity variance exactly 1.
//!
//! The delay is held in a ring buffer of `nd + 1` slots with `nd = round(tau/dt)`.
//! A run starts from an equilibrium draw, evolves without feedback for
//! `warmup_off` (filling the history), then with feedback for `warmup_on`,
//! and only then records.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ReducedParams;
use crate::stats::{mean_and_se, PairSums, PowerSums};

pub const GENERATOR_ID: &str =
    "ChaCha8Rng(rand_chacha 0.9, seed_from_u64, set_stream) + StandardNormal(rand_distr 0.5)";
pub const DEFAULT_DT: f64 = 2.0 * PI / 200.0;
pub const DEFAULT_OVERFLOW_GUARD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub params: ReducedParams,
    pub dt: f64,
    /// Recorded steps (before striding).
    pub n_steps: u64,
    pub warmup_off: f64,
    pub warmup_on: f64,
    pub seed: u64,
    /// Noise stream; ensembles assign one per trajectory.
    pub stream: u64,
    pub record_stride: u64,
    pub overflow_guard: f64,
}

impl SimConfig {
    /// Default protocol: `dt = 2π/200`, `2000 q0` of recorded time,
    /// `max(tau, 10 q0)` feedback-off and `20 q0` feedback-on warm-up.
    pub fn new(params: ReducedParams, seed: u64) -> Self {
        let dt = DEFAULT_DT;
        Self {
            params,
            dt,
            n_steps: (2000.0 * params.q0 / dt).round() as u64,
            warmup_off: params.tau.max(10.0 * params.q0),
            warmup_on: 20.0 * params.q0,
            seed,
            stream: 0,
            record_stride: 1,
            overflow_guard: DEFAULT_OVERFLOW_GUARD,
        }
    }

    /// Changes the step, keeping the recorded duration.
    pub fn with_dt(self, dt: f64) -> Self {
        let duration = self.duration();
        Self {
            dt,
            n_steps: (duration / dt).round() as u64,
            ..self
        }
    }

    pub fn with_duration(self, duration: f64) -> Self {
        Self {
            n_steps: (duration / self.dt).round() as u64,
            ..self
        }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    pub fn duration(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn n_delay(&self) -> usize {
        (self.params.tau / self.dt).round() as usize
    }

    pub fn tau_realized(&self) -> f64 {
        self.n_delay() as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", self.dt, "must be positive and finite"));
        }
        if self.n_steps == 0 {
            return Err(invalid("n_steps", 0.0, "must be at least 1"));
        }
        if self.record_stride == 0 {
            return Err(invalid("record_stride", 0.0, "must be at least 1"));
        }
        if !(self.warmup_on >= 0.0 && self.warmup_on.is_finite()) {
            return Err(invalid("warmup_on", self.warmup_on, "must be non-negative"));
        }
        if !(self.warmup_off >= self.tau_realized() - 0.5 * self.dt) || !self.warmup_off.is_finite()
        {
            return Err(invalid(
                "warmup_off",
                self.warmup_off,
                "must cover the delay",
            ));
        }
        if !(self.overflow_guard > 0.0) {
            return Err(invalid(
                "overflow_guard",
                self.overflow_guard,
                "must be positive",
            ));
        }
        Ok(())
    }

    fn warmup_off_steps(&self) -> u64 {
        ((self.warmup_off / self.dt).ceil() as u64).max(self.n_delay() as u64)
    }

    fn warmup_on_steps(&self) -> u64 {
        (self.warmup_on / self.dt).ceil() as u64
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn invalid(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason,
    }
}

/// Fixed-length history; the oldest slot is exactly `nd` pushes old.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: Vec<f64>,
    head: usize,
}

impl DelayLine {
    pub fn new(n_delay: usize, fill: f64) -> Self {
        Self {
            buf: vec![fill; n_delay + 1],
            head: 0,
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.buf[self.head] = x;
        self.head += 1;
        if self.head == self.buf.len() {
            self.head = 0;
        }
    }

    /// Value pushed `n_delay` pushes before the latest one.
    #[inline]
    pub fn delayed(&self) -> f64 {
        self.buf[self.head]
    }
}

#[derive(Debug, Clone)]
struct Oscillator {
    q: f64,
    v: f64,
    line: DelayLine,
    dt: f64,
    damping: f64,
    coupling: f64,
    kick: f64,
    /// `q[n - nd]` used by the last step.
    prev_delayed: f64,
}

impl Oscillator {
    fn new(r: &ReducedParams, dt: f64, n_delay: usize, q: f64, v: f64) -> Self {
        let mut line = DelayLine::new(n_delay, q);
        line.push(q);
        Self {
            q,
            v,
            line,
            dt,
            damping: 1.0 / r.q0,
            coupling: r.feedback_coupling(),
            kick: (2.0 * dt / r.q0).sqrt(),
            prev_delayed: q,
        }
    }

    #[inline]
    fn step(&mut self, xi: f64, feedback: bool) {
        self.prev_delayed = self.line.delayed();
        let fb = if feedback {
            self.coupling * self.prev_delayed
        } else {
            0.0
        };
        let a = 0.5 * self.dt * self.damping;
        self.v = ((1.0 - a) * self.v + self.dt * (fb - self.q) + self.kick * xi) / (1.0 + a);
        self.q += self.dt * self.v;
        self.line.push(self.q);
    }

    /// `v[n+1] = (q[n+1] - q[n])/dt` belongs to the half step `n + 1/2`, so the
    /// delayed position is taken at the same half step.
    #[inline]
    fn delayed_at_velocity_time(&self) -> f64 {
        0.5 * (self.prev_delayed + self.line.delayed())
    }
}

/// Runs the protocol, calling `observe(q_delayed, q, v)` for every recorded
/// sample. `q_delayed` is the position one realized delay before the
/// velocity's half-step time.
pub fn run<F>(c: &SimConfig, mut observe: F) -> Result<()>
where
    F: FnMut(f64, f64, f64),
{
    c.validate()?;
    let mut rng = c.rng();
    let q0: f64 = rng.sample(StandardNormal);
    let v0: f64 = rng.sample(StandardNormal);
    let mut osc = Oscillator::new(&c.params, c.dt, c.n_delay(), q0, v0);
    let n_off = c.warmup_off_steps();
    let n_on = c.warmup_on_steps();
    let guard = c.overflow_guard;
    let mut step = 0u64;
    let mut advance = |osc: &mut Oscillator, feedback: bool, rng: &mut ChaCha8Rng| -> Result<()> {
        osc.step(rng.sample(StandardNormal), feedback);
        step += 1;
        if !(osc.q.abs() <= guard) {
            return Err(Error::Divergence { step, value: osc.q });
        }
        Ok(())
    };
    for _ in 0..n_off {
        advance(&mut osc, false, &mut rng)?;
    }
    for _ in 0..n_on {
        advance(&mut osc, true, &mut rng)?;
    }
    for i in 0..c.n_steps {
        advance(&mut osc, true, &mut rng)?;
        if (i + 1) % c.record_stride == 0 {
            observe(osc.delayed_at_velocity_time(), osc.q, osc.v);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    pub config: SimConfig,
    pub n_delay: usize,
    pub tau_realized: f64,
    pub generator: String,
}

impl TrajectoryMeta {
    pub fn of(config: &SimConfig) -> Self {
        Self {
            config: *config,
            n_delay: config.n_delay(),
            tau_realized: config.tau_realized(),
            generator: GENERATOR_ID.to_string(),
        }
    }

    /// `(key, value)` pairs in export order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let c = &self.config;
        vec![
            ("g", c.params.g.to_string()),
            ("q0", c.params.q0.to_string()),
            ("tau", c.params.tau.to_string()),
            ("dt", c.dt.to_string()),
            ("n_steps", c.n_steps.to_string()),
            ("warmup_off", c.warmup_off.to_string()),
            ("warmup_on", c.warmup_on.to_string()),
            ("seed", c.seed.to_string()),
            ("stream", c.stream.to_string()),
            ("record_stride", c.record_stride.to_string()),
            ("overflow_guard", c.overflow_guard.to_string()),
            ("n_delay", self.n_delay.to_string()),
            ("tau_realized", self.tau_realized.to_string()),
            ("generator", self.generator.clone()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sample spacing.
    pub fn spacing(&self) -> f64 {
        self.meta.config.dt * self.meta.config.record_stride as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in self.meta.entries() {
            writeln!(w, "# {k} = {v}")?;
        }
        writeln!(w, "t,q,v")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{}", self.t[i], self.q[i], self.v[i])?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut kv = std::collections::HashMap::new();
        let mut t = Vec::new();
        let mut q = Vec::new();
        let mut v = Vec::new();
        let mut header = false;
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, val)) = rest.split_once('=') {
                    kv.insert(k.trim().to_string(), val.trim().to_string());
                }
                continue;
            }
            if !header {
                if line.replace(' ', "") != "t,q,v" {
                    return Err(Error::Parse(format!(
                        "line {}: expected header t,q,v",
                        ln + 1
                    )));
                }
                header = true;
                continue;
            }
            let mut it = line.split(',');
            let mut next = |name: &str| -> Result<f64> {
                it.next()
                    .ok_or_else(|| Error::Parse(format!("line {}: missing {name}", ln + 1)))?
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {}: {name}: {e}", ln + 1)))
            };
            t.push(next("t")?);
            q.push(next("q")?);
            v.push(next("v")?);
        }
        if !header {
            return Err(Error::Parse("missing header t,q,v".into()));
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Parse(format!("missing metadata {k}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("metadata {k}: {e}")))
        };
        let int = |k: &str| -> Result<u64> {
            kv.get(k)
                .ok_or_else(|| Error::Parse(format!("missing metadata {k}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("metadata {k}: {e}")))
        };
        let config = SimConfig {
            params: ReducedParams::new(num("g")?, num("q0")?, num("tau")?)?,
            dt: num("dt")?,
            n_steps: int("n_steps")?,
            warmup_off: num("warmup_off")?,
            warmup_on: num("warmup_on")?,
            seed: int("seed")?,
            stream: int("stream").unwrap_or(0),
            record_stride: int("record_stride")?,
            overflow_guard: num("overflow_guard").unwrap_or(DEFAULT_OVERFLOW_GUARD),
        };
        let mut meta = TrajectoryMeta::of(&config);
        if let Some(g) = kv.get("generator") {
            meta.generator = g.clone();
        }
        Ok(Self { t, q, v, meta })
    }
}

/// Full trajectory; time is measured from the first recorded sample.
pub fn integrate(c: &SimConfig) -> Result<Trajectory> {
    let cap = (c.n_steps / c.record_stride.max(1)) as usize;
    let mut q = Vec::with_capacity(cap);
    let mut v = Vec::with_capacity(cap);
    run(c, |_, qi, vi| {
        q.push(qi);
        v.push(vi);
    })?;
    let h = c.dt * c.record_stride as f64;
    let t = (0..q.len()).map(|i| i as f64 * h).collect();
    Ok(Trajectory {
        t,
        q,
        v,
        meta: TrajectoryMeta::of(c),
    })
}

/// Single-trajectory summary accumulated without storing samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStats {
    pub n: u64,
    pub mean_q: f64,
    pub mean_v: f64,
    pub sigma_q2: f64,
    pub sigma_v2: f64,
    /// Pearson correlation of `(q(t - tau_realized), v(t))`.
    pub corr: f64,
    pub kurt_q: f64,
    pub kurt_v: f64,
}

pub fn trajectory_stats(c: &SimConfig) -> Result<TrajectoryStats> {
    let mut pq = PowerSums::default();
    let mut pv = PowerSums::default();
    let mut pair = PairSums::default();
    run(c, |qd, q, v| {
        pq.push(q);
        pv.push(v);
        pair.push(qd, v);
    })?;
    if pq.n < 4 {
        return Err(Error::InsufficientData(format!(
            "{} recorded samples",
            pq.n
        )));
    }
    Ok(TrajectoryStats {
        n: pq.n,
        mean_q: pq.mean(),
        mean_v: pv.mean(),
        sigma_q2: pq.variance(),
        sigma_v2: pv.variance(),
        corr: pair.pearson().unwrap_or(f64::NAN),
        kurt_q: pq.kurtosis(),
        kurt_v: pv.kurtosis(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub tau_realized: f64,
    pub mean_sigma_q2: f64,
    pub se_sigma_q2: f64,
    pub mean_sigma_v2: f64,
    pub se_sigma_v2: f64,
    pub mean_corr: f64,
    pub se_corr: f64,
    pub mean_kurt_q: f64,
    pub se_kurt_q: f64,
    pub mean_kurt_v: f64,
    pub se_kurt_v: f64,
    pub per_trajectory: Vec<TrajectoryStats>,
}

impl EnsembleStats {
    pub fn from_trajectories(
        tau_realized: f64,
        per_trajectory: Vec<TrajectoryStats>,
    ) -> Result<Self> {
        if per_trajectory.len() < 2 {
            return Err(Error::InsufficientData(
                "an ensemble needs at least 2 trajectories".into(),
            ));
        }
        let col = |f: fn(&TrajectoryStats) -> f64| {
            let xs: Vec<f64> = per_trajectory.iter().map(f).collect();
            mean_and_se(&xs)
        };
        let (mean_sigma_q2, se_sigma_q2) = col(|s| s.sigma_q2);
        let (mean_sigma_v2, se_sigma_v2) = col(|s| s.sigma_v2);
        let (mean_corr, se_corr) = col(|s| s.corr);
        let (mean_kurt_q, se_kurt_q) = col(|s| s.kurt_q);
        let (mean_kurt_v, se_kurt_v) = col(|s| s.kurt_v);
        Ok(Self {
            n_traj: per_trajectory.len(),
            tau_realized,
            mean_sigma_q2,
            se_sigma_q2,
            mean_sigma_v2,
            se_sigma_v2,
            mean_corr,
            se_corr,
            mean_kurt_q,
            se_kurt_q,
            mean_kurt_v,
            se_kurt_v,
            per_trajectory,
        })
    }
}

/// `n_traj` trajectories on streams `0..n_traj` of `c.seed`.
pub fn ensemble(c: &SimConfig, n_traj: usize) -> Result<EnsembleStats> {
    let streams: Vec<u64> = (0..n_traj as u64).collect();
    ensemble_streams(c, &streams)
}

/// Ensemble over explicit noise streams; results are in stream order and
/// independent of scheduling.
pub fn ensemble_streams(c: &SimConfig, streams: &[u64]) -> Result<EnsembleStats> {
    if streams.len() < 2 {
        return Err(Error::InsufficientData(
            "an ensemble needs at least 2 trajectories".into(),
        ));
    }
    c.validate()?;
    let results: Vec<Result<TrajectoryStats>> = streams
        .par_iter()
        .map(|&s| trajectory_stats(&c.with_stream(s)))
        .collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => ok.push(s),
            Err(_) => failed.push(i),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Ensemble { failed });
    }
    EnsembleStats::from_trajectories(c.tau_realized(), ok)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeLevel {
    pub dt: f64,
    pub mean_sigma_v2: f64,
    pub se_sigma_v2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub levels: [ProbeLevel; 3],
    /// Delay shared by all levels (the coarse grid's realization).
    pub tau_realized: f64,
    pub converged: bool,
}

/// Estimates σ_v² at `dt`, `dt/2` and `dt/4` with coupled noise: the finest
/// level draws the normals and coarser levels use their normalized sums, so
/// differences between levels reflect discretization rather than sampling.
/// All levels use the coarse grid's realized delay. Declares convergence when
/// both successive differences are below the finest level's standard error.
pub fn convergence_probe(c: &SimConfig, n_traj: usize) -> Result<ConvergenceReport> {
    if n_traj < 2 {
        return Err(Error::InsufficientData(
            "the probe needs at least 2 trajectories".into(),
        ));
    }
    c.validate()?;
    let per: Vec<Result<[f64; 3]>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|s| probe_trajectory(&c.with_stream(s)))
        .collect();
    let mut est: [Vec<f64>; 3] = Default::default();
    let mut failed = Vec::new();
    for (i, r) in per.into_iter().enumerate() {
        match r {
            Ok(x) => (0..3).for_each(|l| est[l].push(x[l])),
            Err(_) => failed.push(i),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Ensemble { failed });
    }
    let levels: [ProbeLevel; 3] = std::array::from_fn(|l| {
        let (m, se) = mean_and_se(&est[l]);
        ProbeLevel {
            dt: c.dt / (1u64 << l) as f64,
            mean_sigma_v2: m,
            se_sigma_v2: se,
        }
    });
    let se = levels[2].se_sigma_v2;
    let converged = (levels[0].mean_sigma_v2 - levels[1].mean_sigma_v2).abs() < se
        && (levels[1].mean_sigma_v2 - levels[2].mean_sigma_v2).abs() < se;
    Ok(ConvergenceReport {
        levels,
        tau_realized: c.tau_realized(),
        converged,
    })
}

fn probe_trajectory(c: &SimConfig) -> Result<[f64; 3]> {
    let mut rng = c.rng();
    let q0: f64 = rng.sample(StandardNormal);
    let v0: f64 = rng.sample(StandardNormal);
    let nd = c.n_delay();
    let mut osc: [Oscillator; 3] = std::array::from_fn(|l| {
        Oscillator::new(&c.params, c.dt / (1u64 << l) as f64, nd << l, q0, v0)
    });
    let n_off = (c.warmup_off / c.dt).ceil() as u64;
    let n_off = n_off.max(nd as u64 + 1);
    let n_on = c.warmup_on_steps();
    let mut sums = [PowerSums::default(); 3];
    let total = n_off + n_on + c.n_steps;
    for k in 0..total {
        let feedback = k >= n_off;
        let xi: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        for (j, x) in xi.iter().enumerate() {
            osc[2].step(*x, feedback);
            if j % 2 == 1 {
                osc[1].step((xi[j - 1] + xi[j]) / 2f64.sqrt(), feedback);
            }
        }
        osc[0].step(xi.iter().sum::<f64>() / 2.0, feedback);
        if let Some(o) = osc.iter().find(|o| !(o.q.abs() <= c.overflow_guard)) {
            return Err(Error::Divergence {
                step: k + 1,
                value: o.q,
            });
        }
        if k >= n_off + n_on {
            for l in 0..3 {
                sums[l].push(osc[l].v);
            }
        }
    }
    Ok(std::array::from_fn(|l| sums[l].variance()))
}
