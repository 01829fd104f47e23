//! Command-line definition and dispatch.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use delaytherm::analytic::{
    asymptotic_long_delay, highq_effective, nonmarkov_bound, sigma_v2_closed_detail,
    steady_state_moments, thermo_rates, MomentSource,
};
use delaytherm::analyze::{
    bandpass, delayed_correlation, energy_autocorr_gamma, finite_diff_velocity, fit_gain, moments,
    GainFitOptions, GainModel,
};
use delaytherm::model::validity_domain;
use delaytherm::simulate::{
    convergence_probe, ensemble, integrate, Trajectory, DEFAULT_DT, GENERATOR_ID,
};
use delaytherm::spectral::{delay_stability, variance_quadrature};
use delaytherm::{ReducedParams, SimConfig};

use crate::compare::{compare, Thresholds};
use crate::config::{parse_number, KvConfig, Resolver};
use crate::error::{CliError, CliResult};
use crate::figures::{build, parse_figure, FigureFlags};
use crate::svg;
use crate::sweep::{
    grid, rows_from_table, rows_to_table, run_sweep, SimSettings, Source, SweepPlan, SweepRow,
};
use crate::table::{fmt_f64, fmt_opt, Table};

pub const DEFAULT_SEED: u64 = 2024;

fn number(s: &str) -> Result<f64, String> {
    parse_number(s)
}

fn source_list(s: &str) -> Result<Vec<Source>, String> {
    s.split(',').map(str::parse).collect()
}

/// Top-level invocation: one subcommand plus the flags shared by all of them.
/// Numbers accept a `pi` factor (`0.5pi`). Flags override `--config` entries.
#[derive(Debug, Clone, Parser)]
#[command(
    name = "delaytherm",
    version,
    about = "Thermodynamics of delayed feedback on a Brownian oscillator"
)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    /// Key-value configuration file (`key = value`, `#` comments, repeated keys form lists).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every stochastic run (default 2024).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also render an SVG next to every CSV table.
    #[arg(long, global = true)]
    pub svg: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Every closed-form and quadrature quantity at one parameter point.
    Analytic(PointArgs),
    /// Integrate the delayed Langevin equation.
    Simulate(SimulateArgs),
    /// Sweep the delay at fixed gain and quality factor.
    SweepDelay(SweepDelayArgs),
    /// Sweep the quality factor at fixed delay.
    SweepQ(SweepQArgs),
    /// Fit the feedback gain to a temperature-vs-delay curve from a sweep table.
    FitGain(FitGainArgs),
    /// Estimate moments, correlation and damping from a trace file.
    Analyze(AnalyzeArgs),
    /// Produce the tables (and optionally SVGs) of one figure.
    Figure(FigureArgs),
    /// Join sweep tables from different sources and check their agreement.
    Compare(CompareArgs),
    /// Re-render SVGs from previously written tables.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct PointArgs {
    #[arg(long, value_parser = number)]
    pub g: Option<f64>,
    #[arg(long, value_parser = number)]
    pub q0: Option<f64>,
    #[arg(long, value_parser = number)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimArgs {
    #[arg(long, value_parser = number)]
    pub dt: Option<f64>,
    /// Recorded duration per trajectory (default 2000 q0).
    #[arg(long, value_parser = number)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub n_traj: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Keep every n-th sample of a written trajectory.
    #[arg(long)]
    pub stride: Option<u64>,
    /// Also run the three-level step-size convergence probe.
    #[arg(long)]
    pub probe: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepDelayArgs {
    #[arg(long, value_parser = number)]
    pub g: Option<f64>,
    #[arg(long, value_parser = number)]
    pub q0: Option<f64>,
    /// Explicit delays (comma-separated); otherwise a linear grid.
    #[arg(long, value_parser = number, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    #[arg(long, value_parser = number)]
    pub tau_min: Option<f64>,
    #[arg(long, value_parser = number)]
    pub tau_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Comma-separated subset of closed, quadrature, simulation.
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<Source>>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepQArgs {
    /// Explicit quality factors (comma-separated); otherwise a logarithmic grid.
    #[arg(long, value_parser = number, value_delimiter = ',')]
    pub q0: Option<Vec<f64>>,
    #[arg(long, value_parser = number)]
    pub q0_min: Option<f64>,
    #[arg(long, value_parser = number)]
    pub q0_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Fixed gain; mutually exclusive with `--g-per-q0`.
    #[arg(long, value_parser = number)]
    pub g: Option<f64>,
    /// Gain proportional to the quality factor, `g = k q0`.
    #[arg(long, value_parser = number)]
    pub g_per_q0: Option<f64>,
    #[arg(long, value_parser = number)]
    pub tau: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub sources: Option<Vec<Source>>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FitGainArgs {
    /// Sweep table (as written by `sweep-delay`).
    pub input: PathBuf,
    /// `velocity` (sigma_v2 curve) or `position` (sigma_q2 curve).
    #[arg(long)]
    pub model: Option<String>,
    /// Which rows to fit (default: simulation if present, else closed).
    #[arg(long)]
    pub source: Option<Source>,
    #[arg(long, value_parser = number)]
    pub g_max: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Trace file with `t,q,v` columns and simulation metadata.
    pub input: PathBuf,
    /// Band-pass the position around resonance (width 3/q0) before differencing.
    #[arg(long)]
    pub filter: bool,
    #[arg(long, value_parser = number)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct FigureArgs {
    /// fig3, fig4, fig5, suppQ or suppBound.
    pub name: String,
    #[arg(long, value_parser = number)]
    pub g: Option<f64>,
    #[arg(long, value_parser = number)]
    pub q0: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    /// Number of simulated delays overlaid on fig3 (0 = none).
    #[arg(long)]
    pub sim_points: Option<usize>,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// One or more sweep tables; rows of all files are pooled.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Simulation step; rows join on tau_realized within dt/2 (default: from the inputs' metadata).
    #[arg(long, value_parser = number)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable summary printed to stdout.
    pub summary: String,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analytic(_) => "analytic",
            Command::Simulate(_) => "simulate",
            Command::SweepDelay(_) => "sweep-delay",
            Command::SweepQ(_) => "sweep-q",
            Command::FitGain(_) => "fit-gain",
            Command::Analyze(_) => "analyze",
            Command::Figure(_) => "figure",
            Command::Compare(_) => "compare",
            Command::Plot(_) => "plot",
        }
    }
}

struct Ctx<'a> {
    res: Resolver<'a>,
    out: PathBuf,
    svg: bool,
    seed: u64,
    command: String,
    written: Vec<PathBuf>,
}

impl Ctx<'_> {
    /// Metadata shared by every file: the command and the full effective configuration.
    fn header(&self) -> Vec<(String, String)> {
        let mut h = vec![
            ("command".to_string(), self.command.clone()),
            (
                "delaytherm_version".to_string(),
                env!("CARGO_PKG_VERSION").to_string(),
            ),
        ];
        // Where the files go and whether SVGs are drawn do not change their content.
        h.extend(
            self.res
                .effective()
                .into_iter()
                .filter(|(k, _)| k != "out" && k != "svg"),
        );
        h
    }

    fn emit(&mut self, name: &str, table: Table) -> CliResult<()> {
        let mut t = Table {
            meta: self.header(),
            ..Table::default()
        };
        for (k, v) in table.meta {
            t.set_meta(&k, v);
        }
        t.columns = table.columns;
        t.rows = table.rows;
        let path = self.out.join(format!("{name}.csv"));
        t.write(&path)?;
        self.written.push(path);
        if self.svg && t.meta("plot").is_some() {
            let p = self.out.join(format!("{name}.svg"));
            fs::write(&p, svg::render(&t)?)
                .map_err(|e| CliError::usage(format!("cannot write {}: {e}", p.display())))?;
            self.written.push(p);
        }
        Ok(())
    }
}

/// Executes one invocation. Every output carries a metadata header with the
/// effective configuration, and identical configuration plus seed yields
/// byte-identical files.
pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    let kv = match &cfg.config {
        Some(p) => KvConfig::load(p)?,
        None => KvConfig::default(),
    };
    let res = Resolver::new(&kv);
    let seed = res.u64("seed", cfg.seed, DEFAULT_SEED)?;
    let out = PathBuf::from(res.string(
        "out",
        cfg.out.as_ref().map(|p| p.display().to_string()),
        ".",
    )?);
    let svg = res.flag("svg", cfg.svg)?;
    let command = match &cfg.command {
        Command::Figure(f) => format!("figure {}", f.name),
        c => c.name().to_string(),
    };
    fs::create_dir_all(&out).map_err(|e| {
        CliError::usage(format!(
            "cannot create output directory {}: {e}",
            out.display()
        ))
    })?;
    let mut ctx = Ctx {
        res,
        out,
        svg,
        seed,
        command,
        written: Vec::new(),
    };
    let summary = match &cfg.command {
        Command::Analytic(a) => analytic_cmd(&mut ctx, a)?,
        Command::Simulate(a) => simulate_cmd(&mut ctx, a)?,
        Command::SweepDelay(a) => sweep_delay_cmd(&mut ctx, a)?,
        Command::SweepQ(a) => sweep_q_cmd(&mut ctx, a)?,
        Command::FitGain(a) => fit_gain_cmd(&mut ctx, a)?,
        Command::Analyze(a) => analyze_cmd(&mut ctx, a)?,
        Command::Figure(a) => figure_cmd(&mut ctx, a)?,
        Command::Compare(a) => compare_cmd(&mut ctx, a)?,
        Command::Plot(a) => plot_cmd(&mut ctx, a)?,
    };
    Ok(Outcome {
        files: ctx.written,
        summary,
    })
}

/// Resolves settings and rejects unknown config keys before any heavy work.
fn resolve_point(ctx: &Ctx, p: &PointArgs, g: f64, q0: f64, tau: f64) -> CliResult<ReducedParams> {
    let r = ReducedParams::new(
        ctx.res.f64("g", p.g, g)?,
        ctx.res.f64("q0", p.q0, q0)?,
        ctx.res.f64("tau", p.tau, tau)?,
    )?;
    Ok(r)
}

fn analytic_cmd(ctx: &mut Ctx, a: &PointArgs) -> CliResult<String> {
    let r = resolve_point(ctx, a, 0.36, 55.0, 2.04 * std::f64::consts::PI)?;
    ctx.res.finish()?;
    let mut t = Table::new(&["quantity", "value"]);
    let mut put = |k: &str, v: String| t.push(vec![k.to_string(), v]);
    let hq = highq_effective(&r);
    put("stable", delay_stability(&r)?.to_string());
    put(
        "underdamped_asymptotics",
        validity_domain(&r).underdamped_asymptotics.to_string(),
    );
    put("gamma_ratio_highq", fmt_f64(hq.gamma_ratio));
    put("omega2_ratio_highq", fmt_f64(hq.omega2_ratio));
    put("s_vfb", fmt_f64(hq.s_vfb));
    put("s_highq", fmt_f64(hq.s_highq));
    if let Ok(a) = asymptotic_long_delay(&r) {
        put("sigma_q2_inf", fmt_f64(a.sigma_q2_inf));
        put("sigma_v2_inf", fmt_f64(a.sigma_v2_inf));
        put("t_eff_ratio_inf", fmt_f64(a.t_eff_ratio_inf));
        put("w_ext_inf", fmt_f64(a.w_ext_inf));
        put("corr_inf", fmt_f64(a.corr_inf));
    }
    if delay_stability(&r)? {
        let d = sigma_v2_closed_detail(&r)?;
        put("sigma_v2_closed", fmt_f64(d.sigma_v2));
        put("closed_form_residue", fmt_f64(d.residue));
        let q = variance_quadrature(&r)?;
        put("sigma_v2_quadrature", fmt_f64(q.sigma_v2));
        put("sigma_q2_quadrature", fmt_f64(q.sigma_q2));
        let m = steady_state_moments(&r, MomentSource::Closed)?;
        put("corr", fmt_f64(m.corr_delayed));
        let th = thermo_rates(&r, &m)?;
        put("s_pump", fmt_f64(th.s_pump));
        put("w_ext", fmt_f64(th.w_ext));
        put("s_i", fmt_f64(th.s_i));
        put("bound_nm", fmt_opt(th.bound_nm));
        if let Ok(b) = nonmarkov_bound(&r, &m) {
            put("s_pump_y", fmt_f64(b.s_pump_y));
            put("i_flow", fmt_f64(b.i_flow));
        }
        put("eta_pump", fmt_opt(th.eta_pump));
        put("eta_vfb", fmt_opt(th.eta_vfb));
        put("eta_highq", fmt_opt(th.eta_highq));
    }
    let summary = t
        .rows
        .iter()
        .map(|r| format!("{:<26} {}\n", r[0], r[1]))
        .collect();
    ctx.emit("analytic", t)?;
    Ok(summary)
}

fn sim_config(ctx: &Ctx, r: ReducedParams, s: &SimArgs) -> CliResult<SimConfig> {
    let dt = ctx.res.f64("dt", s.dt, DEFAULT_DT)?;
    let mut c = SimConfig::new(r, ctx.seed).with_dt(dt);
    if let Some(d) = ctx.res.opt_f64("duration", s.duration)? {
        c = c.with_duration(d);
    }
    c.validate()?;
    Ok(c)
}

fn simulate_cmd(ctx: &mut Ctx, a: &SimulateArgs) -> CliResult<String> {
    let r = resolve_point(ctx, &a.point, 0.36, 55.0, 2.04 * std::f64::consts::PI)?;
    let mut c = sim_config(ctx, r, &a.sim)?;
    let n_traj = ctx.res.usize("n_traj", a.sim.n_traj, 1)?;
    c.record_stride = ctx.res.u64("stride", a.stride, 1)?;
    let probe = ctx.res.flag("probe", a.probe)?;
    ctx.res.finish()?;
    c.validate()?;
    let mut summary = format!(
        "tau requested {} realized {} ({} steps)\n",
        fmt_f64(r.tau),
        fmt_f64(c.tau_realized()),
        c.n_delay()
    );
    if n_traj <= 1 {
        let tr = integrate(&c)?;
        let path = ctx.out.join("trajectory.csv");
        let mut buf = Vec::new();
        for (k, v) in ctx.header() {
            buf.extend_from_slice(format!("# {k} = {v}\n").as_bytes());
        }
        tr.write_csv(&mut buf)?;
        fs::write(&path, buf)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
        ctx.written.push(path);
        let mq = moments(&tr.q)?;
        let mv = moments(&tr.v)?;
        summary += &format!(
            "{} samples, sigma_q2 {:.5}, sigma_v2 {:.5}\n",
            tr.len(),
            mq.variance,
            mv.variance
        );
    } else {
        let e = ensemble(&c, n_traj)?;
        let mut t = Table::new(&[
            "stream", "n", "sigma_q2", "sigma_v2", "corr", "kurt_q", "kurt_v",
        ]);
        for (i, s) in e.per_trajectory.iter().enumerate() {
            t.push(vec![
                i.to_string(),
                s.n.to_string(),
                fmt_f64(s.sigma_q2),
                fmt_f64(s.sigma_v2),
                fmt_f64(s.corr),
                fmt_f64(s.kurt_q),
                fmt_f64(s.kurt_v),
            ]);
        }
        for (k, v) in [
            ("tau_realized", e.tau_realized),
            ("mean_sigma_q2", e.mean_sigma_q2),
            ("se_sigma_q2", e.se_sigma_q2),
            ("mean_sigma_v2", e.mean_sigma_v2),
            ("se_sigma_v2", e.se_sigma_v2),
            ("mean_corr", e.mean_corr),
            ("se_corr", e.se_corr),
            ("mean_kurt_q", e.mean_kurt_q),
            ("se_kurt_q", e.se_kurt_q),
            ("mean_kurt_v", e.mean_kurt_v),
            ("se_kurt_v", e.se_kurt_v),
        ] {
            t.set_meta(k, fmt_f64(v));
        }
        t.set_meta("generator", GENERATOR_ID);
        summary += &format!(
            "{n_traj} trajectories: sigma_q2 {:.5} ± {:.5}, sigma_v2 {:.5} ± {:.5}, corr {:.5} ± {:.5}\n",
            e.mean_sigma_q2, e.se_sigma_q2, e.mean_sigma_v2, e.se_sigma_v2, e.mean_corr, e.se_corr
        );
        ctx.emit("ensemble", t)?;
    }
    if probe {
        let p = convergence_probe(&c, n_traj.max(2))?;
        let mut t = Table::new(&["dt", "mean_sigma_v2", "se_sigma_v2"]);
        for l in &p.levels {
            t.push_f64(&[l.dt, l.mean_sigma_v2, l.se_sigma_v2]);
        }
        t.set_meta("converged", p.converged.to_string());
        summary += &format!(
            "step-size probe: {}\n",
            if p.converged {
                "converged"
            } else {
                "NOT converged"
            }
        );
        ctx.emit("probe", t)?;
    }
    Ok(summary)
}

fn sim_settings(ctx: &Ctx, s: &SimArgs, sources: &[Source]) -> CliResult<Option<SimSettings>> {
    if !sources.contains(&Source::Simulation) {
        return Ok(None);
    }
    Ok(Some(SimSettings {
        dt: ctx.res.f64("dt", s.dt, DEFAULT_DT)?,
        duration: ctx.res.opt_f64("duration", s.duration)?,
        n_traj: ctx.res.usize("n_traj", s.n_traj, 16)?,
        seed: ctx.seed,
    }))
}

fn sources(ctx: &Ctx, flag: &Option<Vec<Source>>) -> CliResult<Vec<Source>> {
    let s = ctx.res.string(
        "sources",
        flag.as_ref()
            .map(|v| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")),
        "closed",
    )?;
    source_list(&s).map_err(CliError::Usage)
}

fn sweep_summary(rows: &[SweepRow]) -> String {
    let flagged = rows.iter().filter(|r| !r.is_ok()).count();
    format!("{} rows, {} flagged\n", rows.len(), flagged)
}

fn sweep_delay_cmd(ctx: &mut Ctx, a: &SweepDelayArgs) -> CliResult<String> {
    let g = ctx.res.f64("g", a.g, 0.36)?;
    let q0 = ctx.res.f64("q0", a.q0, 55.0)?;
    let taus = match ctx.res.f64_list("tau", a.tau.clone())? {
        Some(t) => t,
        None => grid(
            ctx.res
                .f64("tau_min", a.tau_min, 0.5 * std::f64::consts::PI)?,
            ctx.res
                .f64("tau_max", a.tau_max, 60.0 * std::f64::consts::PI)?,
            ctx.res.usize("points", a.points, 25)?,
            false,
        )?,
    };
    check_sorted("tau", &taus)?;
    let srcs = sources(ctx, &a.sources)?;
    let sim = sim_settings(ctx, &a.sim, &srcs)?;
    ctx.res.finish()?;
    let points = taus
        .iter()
        .map(|&t| ReducedParams::new(g, q0, t))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = run_sweep(&SweepPlan {
        points,
        sources: srcs,
        sim,
    })?;
    let mut t = rows_to_table(&rows);
    if let Some(s) = sim {
        t.set_meta("generator", GENERATOR_ID);
        t.set_meta("dt", fmt_f64(s.dt));
    }
    ctx.emit("sweep_delay", t)?;
    Ok(sweep_summary(&rows))
}

fn sweep_q_cmd(ctx: &mut Ctx, a: &SweepQArgs) -> CliResult<String> {
    let qs = match ctx.res.f64_list("q0", a.q0.clone())? {
        Some(q) => q,
        None => grid(
            ctx.res.f64("q0_min", a.q0_min, 2.0)?,
            ctx.res.f64("q0_max", a.q0_max, 100.0)?,
            ctx.res.usize("points", a.points, 20)?,
            true,
        )?,
    };
    check_sorted("q0", &qs)?;
    let fixed = ctx.res.opt_f64("g", a.g)?;
    let per = ctx.res.opt_f64("g_per_q0", a.g_per_q0)?;
    let gain = |q: f64| -> CliResult<f64> {
        match (fixed, per) {
            (Some(_), Some(_)) => Err(CliError::usage("give either `g` or `g_per_q0`, not both")),
            (Some(g), None) => Ok(g),
            (None, Some(k)) => Ok(k * q),
            (None, None) => Ok(0.0094 * q),
        }
    };
    let tau = ctx.res.f64("tau", a.tau, 1.25 * std::f64::consts::PI)?;
    let srcs = sources(ctx, &a.sources)?;
    let sim = sim_settings(ctx, &a.sim, &srcs)?;
    ctx.res.finish()?;
    let points = qs
        .iter()
        .map(|&q| Ok(ReducedParams::new(gain(q)?, q, tau)?))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = run_sweep(&SweepPlan {
        points,
        sources: srcs,
        sim,
    })?;
    let mut t = rows_to_table(&rows);
    if let Some(s) = sim {
        t.set_meta("generator", GENERATOR_ID);
        t.set_meta("dt", fmt_f64(s.dt));
    }
    ctx.emit("sweep_q", t)?;
    Ok(sweep_summary(&rows))
}

fn check_sorted(name: &str, v: &[f64]) -> CliResult<()> {
    if v.is_empty() {
        return Err(CliError::usage(format!("`{name}` grid is empty")));
    }
    if v.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(CliError::usage(format!(
            "`{name}` grid must be strictly increasing"
        )));
    }
    Ok(())
}

fn fit_gain_cmd(ctx: &mut Ctx, a: &FitGainArgs) -> CliResult<String> {
    let model = match ctx
        .res
        .string("model", a.model.clone(), "velocity")?
        .as_str()
    {
        "velocity" => GainModel::Velocity,
        "position" => GainModel::Position,
        other => {
            return Err(CliError::usage(format!(
                "model `{other}` is not velocity or position"
            )))
        }
    };
    let g_max = ctx
        .res
        .f64("g_max", a.g_max, GainFitOptions::default().g_max)?;
    let source_flag = ctx
        .res
        .string("source", a.source.map(|s| s.name().to_string()), "")?;
    ctx.res.finish()?;
    let rows = rows_from_table(&Table::read(&a.input)?)?;
    let source = if source_flag.is_empty() {
        if rows.iter().any(|r| r.source == Source::Simulation) {
            Source::Simulation
        } else {
            Source::Closed
        }
    } else {
        source_flag.parse().map_err(CliError::Usage)?
    };
    let picked: Vec<&SweepRow> = rows
        .iter()
        .filter(|r| r.source == source && r.is_ok())
        .collect();
    let q0 = picked.first().map(|r| r.q0).ok_or_else(|| {
        CliError::usage(format!("no usable {source} rows in {}", a.input.display()))
    })?;
    if picked.iter().any(|r| r.q0 != q0) {
        return Err(CliError::usage("fit-gain needs rows at a single q0"));
    }
    let (value, se): (fn(&SweepRow) -> Option<f64>, fn(&SweepRow) -> Option<f64>) = match model {
        GainModel::Velocity => (|r| r.sigma_v2, |r| r.se_sigma_v2),
        GainModel::Position => (|r| r.sigma_q2, |r| r.se_sigma_q2),
    };
    let curve: Vec<(f64, f64)> = picked
        .iter()
        .filter_map(|r| value(r).map(|v| (r.tau_realized, v)))
        .collect();
    let sigma: Option<Vec<f64>> = picked.iter().map(|r| se(r)).collect();
    let opts = GainFitOptions {
        model,
        g_max,
        sigma: sigma.filter(|s| s.len() == curve.len()),
        ..GainFitOptions::default()
    };
    let fit = fit_gain(&curve, q0, &opts)?;
    let mut t = Table::new(&[
        "source",
        "model",
        "q0",
        "g",
        "stderr",
        "residual_norm",
        "n_points",
        "method",
    ]);
    t.set_meta("input", a.input.display().to_string());
    t.push(vec![
        source.name().into(),
        model.name().into(),
        fmt_f64(q0),
        fmt_f64(fit.value),
        fmt_f64(fit.stderr),
        fmt_f64(fit.residual_norm),
        fit.n_points.to_string(),
        fit.method.clone(),
    ]);
    ctx.emit("fit_gain", t)?;
    Ok(format!(
        "g = {:.5} ± {:.5} ({} points, {})\n",
        fit.value, fit.stderr, fit.n_points, fit.method
    ))
}

fn analyze_cmd(ctx: &mut Ctx, a: &AnalyzeArgs) -> CliResult<String> {
    let filter = ctx.res.flag("filter", a.filter)?;
    let bandwidth = ctx.res.opt_f64("bandwidth", a.bandwidth)?;
    ctx.res.finish()?;
    let f = fs::File::open(&a.input)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", a.input.display())))?;
    let tr = Trajectory::read_csv(std::io::BufReader::new(f))?;
    let c = tr.meta.config;
    let dt = tr.spacing();
    let q0 = c.params.q0;
    let n_delay = (tr.meta.tau_realized / dt).round() as usize;
    let q: Vec<f64> = if filter {
        bandpass(&tr.q, dt, 1.0, bandwidth.unwrap_or(3.0 / q0))?
    } else {
        tr.q.clone()
    };
    let v = finite_diff_velocity(&q, dt)?;
    let qc = &q[1..q.len() - 1];
    let mq = moments(qc)?;
    let mv = moments(&v)?;
    let corr = delayed_correlation(qc, &v, n_delay).ok();
    let (gamma, note) = match energy_autocorr_gamma(qc, &v, dt) {
        Ok(f) => (Some(f), String::new()),
        Err(e) => (None, e.to_string()),
    };
    let mut t = Table::new(&[
        "g",
        "q0",
        "tau_realized",
        "seed",
        "stream",
        "n",
        "filtered",
        "sigma_q2",
        "sigma_v2",
        "kurt_q",
        "kurt_v",
        "corr",
        "gamma",
        "se_gamma",
        "q0_fit",
        "note",
    ]);
    t.set_meta("input", a.input.display().to_string());
    t.push(vec![
        fmt_f64(c.params.g),
        fmt_f64(q0),
        fmt_f64(tr.meta.tau_realized),
        c.seed.to_string(),
        c.stream.to_string(),
        v.len().to_string(),
        filter.to_string(),
        fmt_f64(mq.variance),
        fmt_f64(mv.variance),
        fmt_f64(mq.kurtosis),
        fmt_f64(mv.kurtosis),
        fmt_opt(corr),
        fmt_opt(gamma.as_ref().map(|f| f.value)),
        fmt_opt(gamma.as_ref().map(|f| f.stderr)),
        fmt_opt(gamma.as_ref().map(|f| 1.0 / f.value)),
        note,
    ]);
    let summary = format!(
        "sigma_q2 {:.5}, sigma_v2 {:.5}, kurtosis {:.3}/{:.3}, gamma {}\n",
        mq.variance,
        mv.variance,
        mq.kurtosis,
        mv.kurtosis,
        gamma
            .map(|f| format!("{:.5} ± {:.5}", f.value, f.stderr))
            .unwrap_or_else(|| "n/a".into())
    );
    ctx.emit("analyze", t)?;
    Ok(summary)
}

fn figure_cmd(ctx: &mut Ctx, a: &FigureArgs) -> CliResult<String> {
    let fig = parse_figure(&a.name)?;
    let flags = FigureFlags {
        g: a.g,
        q0: a.q0,
        points: a.points,
        sim_points: a.sim_points,
        n_traj: a.sim.n_traj,
        dt: a.sim.dt,
        duration: a.sim.duration,
    };
    let tables = build(fig, &flags, &ctx.res, ctx.seed)?;
    ctx.res.finish()?;
    let mut summary = String::new();
    for (name, t) in tables {
        summary += &format!("{name}: {} rows\n", t.rows.len());
        ctx.emit(&name, t)?;
    }
    Ok(summary)
}

fn compare_cmd(ctx: &mut Ctx, a: &CompareArgs) -> CliResult<String> {
    let mut rows = Vec::new();
    let mut meta_dt = None;
    for p in &a.inputs {
        let t = Table::read(p)?;
        if let Some(d) = t.meta("dt").and_then(|s| s.parse::<f64>().ok()) {
            meta_dt = Some(meta_dt.map_or(d, |m: f64| m.max(d)));
        }
        rows.extend(rows_from_table(&t)?);
    }
    let dt = ctx.res.f64("dt", a.dt.or(meta_dt), DEFAULT_DT)?;
    let th = Thresholds {
        oracle_rel: ctx
            .res
            .f64("oracle_rel", None, Thresholds::default().oracle_rel)?,
        z_cover: ctx
            .res
            .f64("z_cover", None, Thresholds::default().z_cover)?,
        coverage: ctx
            .res
            .f64("coverage", None, Thresholds::default().coverage)?,
        z_gross: ctx
            .res
            .f64("z_gross", None, Thresholds::default().z_gross)?,
    };
    ctx.res.finish()?;
    let report = compare(&rows, 0.5 * dt, &th)?;
    let mut rt = report.rows_table();
    rt.set_meta(
        "inputs",
        a.inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(";"),
    );
    ctx.emit("compare_rows", rt)?;
    ctx.emit("compare_summary", report.summary_table())?;
    let human = report.human();
    let path = ctx.out.join("compare_report.txt");
    fs::write(&path, &human)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    ctx.written.push(path);
    if report.pass() {
        Ok(human)
    } else {
        let names: Vec<String> = report
            .failures()
            .iter()
            .map(|c| {
                format!(
                    "{} ({})",
                    c.name,
                    c.offenders
                        .iter()
                        .take(5)
                        .cloned()
                        .collect::<Vec<_>>()
                        .join(" ")
                )
            })
            .collect();
        Err(CliError::Comparison(format!(
            "{human}failed checks: {}",
            names.join("; ")
        )))
    }
}

fn plot_cmd(ctx: &mut Ctx, a: &PlotArgs) -> CliResult<String> {
    ctx.res.finish()?;
    let mut summary = String::new();
    for p in &a.inputs {
        let t = Table::read(p)?;
        let svg = svg::render(&t)?;
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "plot".into());
        let dest = ctx.out.join(format!("{name}.svg"));
        fs::write(&dest, svg)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", dest.display())))?;
        summary += &format!("{}\n", dest.display());
        ctx.written.push(dest);
    }
    Ok(summary)
}

/// Parses arguments, runs, prints, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cfg) {
        Ok(o) => {
            print!("{}", o.summary);
            for f in &o.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
