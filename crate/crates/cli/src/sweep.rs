//! Parameter sweeps producing one [`SweepRow`] per (point, source).

use std::fmt;
use std::str::FromStr;

use delaytherm::analytic::{
    highq_effective, steady_state_moments, thermo_rates, MomentSource, SteadyStateMoments,
};
use delaytherm::simulate::{ensemble_streams, EnsembleStats, SimConfig};
use delaytherm::spectral::delay_stability;
use delaytherm::{Error, ReducedParams};
use rayon::prelude::*;

use crate::error::{CliError, CliResult};
use crate::table::{fmt_f64, fmt_opt, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Closed,
    Quadrature,
    Simulation,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Closed => "closed",
            Source::Quadrature => "quadrature",
            Source::Simulation => "simulation",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "closed" => Ok(Source::Closed),
            "quadrature" => Ok(Source::Quadrature),
            "simulation" => Ok(Source::Simulation),
            other => Err(format!(
                "unknown source `{other}` (closed, quadrature, simulation)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The delay system is unstable at this point; only the feedback-only
    /// quantities (`s_vfb`, `s_highq`) are filled.
    Unstable,
    Diverged,
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Unstable => "unstable",
            Status::Diverged => "diverged",
            Status::Failed => "failed",
        }
    }
}

impl FromStr for Status {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "ok" => Ok(Status::Ok),
            "unstable" => Ok(Status::Unstable),
            "diverged" => Ok(Status::Diverged),
            "failed" => Ok(Status::Failed),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub g: f64,
    pub q0: f64,
    pub tau_requested: f64,
    pub tau_realized: f64,
    pub status: Status,
    pub source: Source,
    pub sigma_q2: Option<f64>,
    pub sigma_v2: Option<f64>,
    pub corr: Option<f64>,
    pub s_pump: Option<f64>,
    pub w_ext: Option<f64>,
    pub s_i: Option<f64>,
    pub s_vfb: f64,
    pub s_highq: f64,
    pub bound_nm: Option<f64>,
    pub eta_pump: Option<f64>,
    pub se_sigma_q2: Option<f64>,
    pub se_sigma_v2: Option<f64>,
    pub se_corr: Option<f64>,
    pub n_traj: Option<usize>,
    pub note: String,
}

pub const COLUMNS: [&str; 21] = [
    "g",
    "q0",
    "tau_requested",
    "tau_realized",
    "status",
    "source",
    "sigma_q2",
    "sigma_v2",
    "corr",
    "s_pump",
    "w_ext",
    "s_i",
    "s_vfb",
    "s_highq",
    "bound_nm",
    "eta_pump",
    "se_sigma_q2",
    "se_sigma_v2",
    "se_corr",
    "n_traj",
    "note",
];

impl SweepRow {
    fn empty(r: &ReducedParams, tau_requested: f64, source: Source) -> Self {
        let hq = highq_effective(r);
        Self {
            g: r.g,
            q0: r.q0,
            tau_requested,
            tau_realized: r.tau,
            status: Status::Ok,
            source,
            sigma_q2: None,
            sigma_v2: None,
            corr: None,
            s_pump: None,
            w_ext: None,
            s_i: None,
            s_vfb: hq.s_vfb,
            s_highq: hq.s_highq,
            bound_nm: None,
            eta_pump: None,
            se_sigma_q2: None,
            se_sigma_v2: None,
            se_corr: None,
            n_traj: None,
            note: String::new(),
        }
    }

    fn fill(&mut self, r: &ReducedParams, m: &SteadyStateMoments) -> delaytherm::Result<()> {
        let t = thermo_rates(r, m)?;
        self.sigma_q2 = Some(m.sigma_q2);
        self.sigma_v2 = Some(m.sigma_v2);
        self.corr = Some(m.corr_delayed);
        self.s_pump = Some(t.s_pump);
        self.w_ext = Some(t.w_ext);
        self.s_i = Some(t.s_i);
        self.bound_nm = t.bound_nm;
        self.eta_pump = t.eta_pump;
        Ok(())
    }

    fn flag(&mut self, e: &Error) {
        self.status = match e {
            Error::Unstable { .. } => Status::Unstable,
            Error::Divergence { .. } | Error::Ensemble { .. } => Status::Diverged,
            _ => Status::Failed,
        };
        self.note = e.to_string();
    }

    pub fn params(&self) -> CliResult<ReducedParams> {
        Ok(ReducedParams::new(self.g, self.q0, self.tau_realized)?)
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.g),
            fmt_f64(self.q0),
            fmt_f64(self.tau_requested),
            fmt_f64(self.tau_realized),
            self.status.name().to_string(),
            self.source.name().to_string(),
            fmt_opt(self.sigma_q2),
            fmt_opt(self.sigma_v2),
            fmt_opt(self.corr),
            fmt_opt(self.s_pump),
            fmt_opt(self.w_ext),
            fmt_opt(self.s_i),
            fmt_f64(self.s_vfb),
            fmt_f64(self.s_highq),
            fmt_opt(self.bound_nm),
            fmt_opt(self.eta_pump),
            fmt_opt(self.se_sigma_q2),
            fmt_opt(self.se_sigma_v2),
            fmt_opt(self.se_corr),
            self.n_traj.map(|n| n.to_string()).unwrap_or_default(),
            self.note.clone(),
        ]
    }
}

pub fn rows_to_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&COLUMNS);
    for r in rows {
        t.push(r.record());
    }
    t
}

/// Parses every row of a sweep table, naming the offending row on failure.
pub fn rows_from_table(t: &Table) -> CliResult<Vec<SweepRow>> {
    let idx: Vec<usize> = COLUMNS
        .iter()
        .map(|c| t.column_index(c))
        .collect::<CliResult<_>>()?;
    t.rows
        .iter()
        .enumerate()
        .map(|(n, row)| {
            let cell = |k: usize| row[idx[k]].trim();
            let err = |k: usize, what: &str| {
                CliError::usage(format!("sweep row {}: `{}` {what}", n + 1, COLUMNS[k]))
            };
            let num = |k: usize| -> CliResult<f64> {
                cell(k)
                    .parse::<f64>()
                    .map_err(|_| err(k, "is not a number"))
            };
            let opt = |k: usize| -> CliResult<Option<f64>> {
                if cell(k).is_empty() {
                    Ok(None)
                } else {
                    num(k).map(Some)
                }
            };
            Ok(SweepRow {
                g: num(0)?,
                q0: num(1)?,
                tau_requested: num(2)?,
                tau_realized: num(3)?,
                status: cell(4).parse().map_err(|e: String| err(4, &e))?,
                source: cell(5).parse().map_err(|e: String| err(5, &e))?,
                sigma_q2: opt(6)?,
                sigma_v2: opt(7)?,
                corr: opt(8)?,
                s_pump: opt(9)?,
                w_ext: opt(10)?,
                s_i: opt(11)?,
                s_vfb: num(12)?,
                s_highq: num(13)?,
                bound_nm: opt(14)?,
                eta_pump: opt(15)?,
                se_sigma_q2: opt(16)?,
                se_sigma_v2: opt(17)?,
                se_corr: opt(18)?,
                n_traj: if cell(19).is_empty() {
                    None
                } else {
                    Some(cell(19).parse().map_err(|_| err(19, "is not an integer"))?)
                },
                note: cell(20).to_string(),
            })
        })
        .collect()
}

/// Theory row at `r` (whose `tau` is the delay actually evaluated).
pub fn theory_row(r: &ReducedParams, tau_requested: f64, source: Source) -> SweepRow {
    let mut row = SweepRow::empty(r, tau_requested, source);
    let ms = match source {
        Source::Quadrature => MomentSource::Quadrature,
        _ => MomentSource::Closed,
    };
    let res = steady_state_moments(r, ms).and_then(|m| row.fill(r, &m));
    if let Err(e) = res {
        row.flag(&e);
    }
    row
}

/// Simulation settings shared by every point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub dt: f64,
    /// Recorded duration; `None` uses the default `2000 q0`.
    pub duration: Option<f64>,
    pub n_traj: usize,
    pub seed: u64,
}

impl SimSettings {
    pub fn config(&self, r: ReducedParams, seed: u64) -> SimConfig {
        let c = SimConfig::new(r, seed).with_dt(self.dt);
        match self.duration {
            Some(d) => c.with_duration(d),
            None => c,
        }
    }
}

pub fn simulation_row(c: &SimConfig, n_traj: usize) -> SweepRow {
    let realized = c.params.with_tau(c.tau_realized());
    let mut row = SweepRow::empty(&realized, c.params.tau, Source::Simulation);
    row.n_traj = Some(n_traj);
    match delay_stability(&realized) {
        Ok(true) => {}
        Ok(false) => {
            row.status = Status::Unstable;
            row.note = "skipped: unstable at the realized delay".into();
            return row;
        }
        Err(e) => {
            row.flag(&e);
            return row;
        }
    }
    let streams: Vec<u64> = (0..n_traj as u64).collect();
    let res = ensemble_streams(c, &streams).and_then(|e: EnsembleStats| {
        row.se_sigma_q2 = Some(e.se_sigma_q2);
        row.se_sigma_v2 = Some(e.se_sigma_v2);
        row.se_corr = Some(e.se_corr);
        let m = SteadyStateMoments::new(e.mean_sigma_q2, e.mean_sigma_v2, e.mean_corr)?;
        row.fill(&realized, &m)
    });
    if let Err(e) = res {
        row.flag(&e);
    }
    row
}

/// SplitMix64 finalizer; decorrelates per-point seeds derived from one master seed.
pub fn point_seed(seed: u64, index: u64) -> u64 {
    let mut z =
        (seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    /// Requested points, in output order.
    pub points: Vec<ReducedParams>,
    pub sources: Vec<Source>,
    /// Required when `sources` contains simulation.
    pub sim: Option<SimSettings>,
}

impl SweepPlan {
    pub fn validate(&self) -> CliResult<()> {
        if self.points.is_empty() {
            return Err(CliError::usage("sweep grid is empty"));
        }
        if self.sources.is_empty() {
            return Err(CliError::usage("no sources selected"));
        }
        if self.sources.contains(&Source::Simulation) {
            let s = self
                .sim
                .ok_or_else(|| CliError::usage("simulation source needs simulation settings"))?;
            if s.n_traj < 2 {
                return Err(CliError::usage(
                    "n_traj must be at least 2 for a simulation sweep",
                ));
            }
            if !(s.dt > 0.0) {
                return Err(CliError::usage("dt must be positive"));
            }
        }
        Ok(())
    }
}

/// Runs every point on the worker pool; rows come back in grid order with the
/// sources of each point in the order given. When simulation is among the
/// sources, theory is evaluated at the simulator's realized delay so rows join.
pub fn run_sweep(plan: &SweepPlan) -> CliResult<Vec<SweepRow>> {
    plan.validate()?;
    let with_sim = plan.sources.contains(&Source::Simulation);
    let per_point: Vec<Vec<SweepRow>> = plan
        .points
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let cfg = plan
                .sim
                .filter(|_| with_sim)
                .map(|s| s.config(*r, point_seed(s.seed, i as u64)));
            let evaluated = match &cfg {
                Some(c) => r.with_tau(c.tau_realized()),
                None => *r,
            };
            plan.sources
                .iter()
                .map(|&src| match (src, &cfg) {
                    (Source::Simulation, Some(c)) => {
                        simulation_row(c, plan.sim.map_or(0, |s| s.n_traj))
                    }
                    _ => theory_row(&evaluated, r.tau, src),
                })
                .collect()
        })
        .collect();
    Ok(per_point.into_iter().flatten().collect())
}

/// `n` points from `lo` to `hi` inclusive, linear or logarithmic.
pub fn grid(lo: f64, hi: f64, n: usize, log: bool) -> CliResult<Vec<f64>> {
    if n == 0 {
        return Err(CliError::usage("grid needs at least one point"));
    }
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(CliError::usage(format!(
            "grid bounds [{lo}, {hi}] are not an ordered finite range"
        )));
    }
    if log && !(lo > 0.0) {
        return Err(CliError::usage(
            "logarithmic grid needs a positive lower bound",
        ));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| {
            let f = i as f64 / (n - 1) as f64;
            if i == 0 {
                lo
            } else if i == n - 1 {
                hi
            } else if log {
                (lo.ln() + f * (hi.ln() - lo.ln())).exp()
            } else {
                lo + f * (hi - lo)
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rp(g: f64, q0: f64, tau: f64) -> ReducedParams {
        ReducedParams::new(g, q0, tau).unwrap()
    }

    #[test]
    fn theory_rows_agree_between_sources() {
        let r = rp(0.36, 55.0, PI / 2.0);
        let a = theory_row(&r, r.tau, Source::Closed);
        let b = theory_row(&r, r.tau, Source::Quadrature);
        assert!(a.is_ok() && b.is_ok());
        assert!((a.sigma_v2.unwrap() / b.sigma_v2.unwrap() - 1.0).abs() < 1e-6);
        assert!((a.s_vfb - 0.36 / 55.0).abs() < 1e-15);
        assert!(a.eta_pump.is_some());
    }

    #[test]
    fn unstable_point_is_flagged_and_keeps_feedback_columns() {
        let r = rp(3.0, 2.0, 5.0);
        let row = theory_row(&r, r.tau, Source::Closed);
        assert_eq!(row.status, Status::Unstable);
        assert!(row.sigma_v2.is_none() && row.s_pump.is_none());
        assert!((row.s_vfb - 1.5).abs() < 1e-15);
        assert!((row.s_highq - 1.5 * 5f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let r = rp(0.36, 55.0, 2.0);
        let rows = vec![
            theory_row(&r, 2.0, Source::Closed),
            theory_row(&rp(3.0, 2.0, 5.0), 5.0, Source::Quadrature),
        ];
        let t = rows_to_table(&rows);
        let back =
            rows_from_table(&Table::parse(t.to_csv_string().unwrap().as_bytes()).unwrap()).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn malformed_row_is_named() {
        let mut t = rows_to_table(&[theory_row(&rp(0.3, 5.0, 1.0), 1.0, Source::Closed)]);
        t.rows[0][7] = "abc".into();
        let e = rows_from_table(&t).unwrap_err().to_string();
        assert!(e.contains("row 1") && e.contains("sigma_v2"), "{e}");
    }

    #[test]
    fn sweep_order_and_realized_delay() {
        let plan = SweepPlan {
            points: [0.7, 1.3, 2.9].iter().map(|&t| rp(0.3, 5.0, t)).collect(),
            sources: vec![Source::Closed, Source::Simulation],
            sim: Some(SimSettings {
                dt: 0.05,
                duration: Some(50.0),
                n_traj: 2,
                seed: 3,
            }),
        };
        let rows = run_sweep(&plan).unwrap();
        assert_eq!(rows.len(), 6);
        for (i, pair) in rows.chunks(2).enumerate() {
            assert_eq!(pair[0].source, Source::Closed);
            assert_eq!(pair[1].source, Source::Simulation);
            assert_eq!(pair[0].tau_requested, plan.points[i].tau);
            assert_eq!(pair[0].tau_realized, pair[1].tau_realized);
            assert!((pair[0].tau_realized - pair[0].tau_requested).abs() <= 0.025 + 1e-12);
        }
        assert_eq!(run_sweep(&plan).unwrap(), rows);
    }

    #[test]
    fn plan_validation() {
        let mut plan = SweepPlan {
            points: vec![],
            sources: vec![Source::Closed],
            sim: None,
        };
        assert!(run_sweep(&plan).is_err());
        plan.points.push(rp(0.1, 5.0, 1.0));
        plan.sources.push(Source::Simulation);
        assert!(run_sweep(&plan).is_err());
    }

    #[test]
    fn seeds_and_grids() {
        assert_ne!(point_seed(1, 0), point_seed(1, 1));
        assert_ne!(point_seed(1, 0), point_seed(0, 1));
        assert_eq!(point_seed(5, 9), point_seed(5, 9));
        let g = grid(10.0, 200.0, 5, true).unwrap();
        assert_eq!(g[0], 10.0);
        assert_eq!(g[4], 200.0);
        assert!((g[1] / g[0] - g[2] / g[1]).abs() < 1e-12);
        assert_eq!(grid(0.0, 1.0, 3, false).unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(grid(1.0, 0.0, 3, false).is_err());
        assert!(grid(0.0, 1.0, 3, true).is_err());
    }
}
