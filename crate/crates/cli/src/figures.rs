//! Figure tables. Each figure yields one or more named tables whose metadata
//! fully describes the plot, so the SVG can be regenerated from the CSV alone.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use delaytherm::analytic::{
    asymptotic_long_delay, cooling_boundary, drift_envelope, joint_density, nonmarkov_bound,
    steady_state_moments, thermo_rates, BoundaryOptions, CoolingBoundary, MomentSource,
    RateQuantity,
};
use delaytherm::simulate::DEFAULT_DT;
use delaytherm::spectral::position_variance;
use delaytherm::ReducedParams;
use rayon::prelude::*;

use crate::config::Resolver;
use crate::error::{CliError, CliResult};
use crate::sweep::{grid, run_sweep, SimSettings, Source, SweepPlan};
use crate::table::{fmt_f64, fmt_opt, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig3,
    Fig4,
    Fig5,
    SuppQ,
    SuppBound,
}

impl Figure {
    pub const ALL: [Figure; 5] = [
        Figure::Fig3,
        Figure::Fig4,
        Figure::Fig5,
        Figure::SuppQ,
        Figure::SuppBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::SuppQ => "suppQ",
            Figure::SuppBound => "suppBound",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown figure `{s}` (fig3, fig4, fig5, suppQ, suppBound)"))
    }
}

/// Values given on the command line; `None` falls back to the config file,
/// then to the figure's default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FigureFlags {
    pub g: Option<f64>,
    pub q0: Option<f64>,
    pub points: Option<usize>,
    pub sim_points: Option<usize>,
    pub n_traj: Option<usize>,
    pub dt: Option<f64>,
    pub duration: Option<f64>,
}

pub fn build(
    fig: Figure,
    flags: &FigureFlags,
    r: &Resolver,
    seed: u64,
) -> CliResult<Vec<(String, Table)>> {
    match fig {
        Figure::Fig3 => fig3(flags, r, seed),
        Figure::Fig4 => fig4(flags, r),
        Figure::Fig5 => fig5(flags, r),
        Figure::SuppQ => supp_q(flags, r),
        Figure::SuppBound => supp_bound(flags, r),
    }
}

fn plot(t: &mut Table, kind: &str, entries: &[(&str, &str)]) {
    t.set_meta("plot", kind);
    for (k, v) in entries {
        t.set_meta(k, *v);
    }
}

fn params(g: f64, q0: f64) -> CliResult<ReducedParams> {
    Ok(ReducedParams::new(g, q0, 0.0)?)
}

fn fig3(f: &FigureFlags, r: &Resolver, seed: u64) -> CliResult<Vec<(String, Table)>> {
    let g = r.f64("g", f.g, 0.36)?;
    let q0 = r.f64("q0", f.q0, 55.0)?;
    let lo = r.f64("tau_min", None, 0.5 * PI)?;
    let hi = r.f64("tau_max", None, 60.0 * PI)?;
    let n = r.usize("points", f.points, 400)?;
    let rel_g = r.f64("rel_g", None, 0.06)?;
    let rel_tau = r.f64("rel_tau", None, 0.025)?;
    let sim_points = r.usize("sim_points", f.sim_points, 0)?;
    let n_traj = r.usize("n_traj", f.n_traj, 16)?;
    let dt = r.f64("dt", f.dt, DEFAULT_DT)?;
    let duration = r.opt_f64("duration", f.duration)?;
    let base = params(g, q0)?;
    let taus = grid(lo, hi, n, false)?;

    let sp = drift_envelope(&base, rel_g, rel_tau, RateQuantity::SPump, &taus)?;
    let we = drift_envelope(&base, rel_g, rel_tau, RateQuantity::WExt, &taus)?;
    let mut t = Table::new(&[
        "tau",
        "s_pump",
        "w_ext",
        "s_vfb",
        "s_highq",
        "s_pump_lower",
        "s_pump_upper",
        "w_ext_lower",
        "w_ext_upper",
    ]);
    for (i, &tau) in taus.iter().enumerate() {
        t.push_f64(&[
            tau,
            sp.central[i],
            we.central[i],
            g / q0,
            g / q0 * tau.sin(),
            sp.lower[i],
            sp.upper[i],
            we.lower[i],
            we.upper[i],
        ]);
    }
    plot(
        &mut t,
        "line",
        &[
            ("title", "entropy pumping and extracted work vs delay"),
            ("x", "tau"),
            ("y", "s_pump;w_ext;s_vfb;s_highq"),
            (
                "y_dashed",
                "s_pump_lower;s_pump_upper;w_ext_lower;w_ext_upper",
            ),
            ("y_label", "rate"),
        ],
    );
    let mut out = vec![("fig3".to_string(), t)];

    if sim_points > 0 {
        let points = grid(lo, hi, sim_points, false)?
            .into_iter()
            .map(|tau| base.with_tau(tau))
            .collect();
        let plan = SweepPlan {
            points,
            sources: vec![Source::Closed, Source::Simulation],
            sim: Some(SimSettings {
                dt,
                duration,
                n_traj,
                seed,
            }),
        };
        let rows = run_sweep(&plan)?;
        let mut s = Table::new(&[
            "tau_realized",
            "s_pump_theory",
            "w_ext_theory",
            "s_pump_sim",
            "se_s_pump_sim",
            "w_ext_sim",
            "se_w_ext_sim",
            "status",
        ]);
        for pair in rows.chunks(2) {
            let (th, sim) = (&pair[0], &pair[1]);
            // Delta method: ds_pump/dσ_v² = −1/(q0 σ_v⁴), dw_ext/dσ_v² = −1/q0.
            let se_sp = sim
                .sigma_v2
                .zip(sim.se_sigma_v2)
                .map(|(v, se)| se / (q0 * v * v));
            let se_we = sim.se_sigma_v2.map(|se| se / q0);
            s.push(vec![
                fmt_f64(sim.tau_realized),
                fmt_opt(th.s_pump),
                fmt_opt(th.w_ext),
                fmt_opt(sim.s_pump),
                fmt_opt(se_sp),
                fmt_opt(sim.w_ext),
                fmt_opt(se_we),
                sim.status.name().to_string(),
            ]);
        }
        plot(
            &mut s,
            "line",
            &[
                ("title", "simulated rates vs theory"),
                ("x", "tau_realized"),
                ("y", "s_pump_sim;w_ext_sim"),
                ("y_dashed", "s_pump_theory;w_ext_theory"),
                ("y_label", "rate"),
            ],
        );
        out.push(("fig3_sim".to_string(), s));
    }
    Ok(out)
}

fn fig4(f: &FigureFlags, r: &Resolver) -> CliResult<Vec<(String, Table)>> {
    let g = r.f64("g", f.g, 0.36)?;
    let q0 = r.f64("q0", f.q0, 55.0)?;
    let lo = r.f64("tau_min", None, 0.5 * PI)?;
    let hi = r.f64("tau_max", None, 60.0 * PI)?;
    let n = r.usize("points", f.points, 400)?;
    let tau_density = r.f64("tau_density", None, 2.04 * PI)?;
    let density_points = r.usize("density_points", None, 61)?;
    let extent = r.f64("density_extent", None, 4.0)?;
    let base = params(g, q0)?;
    let corr_inf = asymptotic_long_delay(&base)?.corr_inf;
    let taus = grid(lo, hi, n, false)?;
    let corr: Vec<Option<f64>> = taus
        .par_iter()
        .map(|&tau| {
            steady_state_moments(&base.with_tau(tau), MomentSource::Closed)
                .ok()
                .map(|m| m.corr_delayed)
        })
        .collect();
    let mut c = Table::new(&["tau", "corr", "corr_inf"]);
    for (tau, v) in taus.iter().zip(&corr) {
        c.push(vec![fmt_f64(*tau), fmt_opt(*v), fmt_f64(corr_inf)]);
    }
    plot(
        &mut c,
        "line",
        &[
            ("title", "delayed position-velocity correlation"),
            ("x", "tau"),
            ("y", "corr"),
            ("y_dashed", "corr_inf"),
        ],
    );

    let m = steady_state_moments(&base.with_tau(tau_density), MomentSource::Closed)?;
    let jd = joint_density(&m)?;
    let axis = grid(-extent, extent, density_points, false)?;
    let mut d = Table::new(&["q_delayed", "v", "pdf"]);
    d.set_meta("tau", fmt_f64(tau_density));
    d.set_meta("corr", fmt_f64(m.corr_delayed));
    for &q in &axis {
        for &v in &axis {
            d.push_f64(&[q, v, jd.pdf(q, v)]);
        }
    }
    plot(
        &mut d,
        "heatmap",
        &[
            ("title", "joint density of delayed position and velocity"),
            ("x", "q_delayed"),
            ("y", "v"),
            ("z", "pdf"),
        ],
    );
    Ok(vec![("fig4_corr".into(), c), ("fig4_density".into(), d)])
}

fn fig5(f: &FigureFlags, r: &Resolver) -> CliResult<Vec<(String, Table)>> {
    let g = r.f64("g", f.g, 0.36)?;
    let tau_lo = r.f64("tau_min", None, 0.5 * PI)?;
    let tau_hi = r.f64("tau_max", None, 240.0 * PI)?;
    let n_tau = r.usize("points", f.points, 160)?;
    let q_lo = r.f64("q0_min", None, 10.0)?;
    let q_hi = r.f64("q0_max", None, 200.0)?;
    let n_q = r.usize("q0_points", None, 24)?;
    let n_boundary = r.usize("boundary_points", None, 5)?;
    let q_cut = r.f64("q0", f.q0, 55.0)?;
    let cut_hi = r.f64("cut_tau_max", None, 400.0 * PI)?;
    let n_cut = r.usize("cut_points", None, 600)?;

    let taus = grid(tau_lo, tau_hi, n_tau, false)?;
    let qs = grid(q_lo, q_hi, n_q, true)?;
    let cells: Vec<(f64, f64)> = qs
        .iter()
        .flat_map(|&q| taus.iter().map(move |&t| (t, q)))
        .collect();
    let vals: Vec<Option<f64>> = cells
        .par_iter()
        .map(|&(tau, q)| {
            ReducedParams::new(g, q, tau)
                .ok()
                .and_then(|p| position_variance(&p).ok())
        })
        .collect();
    let mut map = Table::new(&["tau", "q0", "t_eff_ratio"]);
    for ((tau, q), v) in cells.iter().zip(&vals) {
        map.push(vec![fmt_f64(*tau), fmt_f64(*q), fmt_opt(*v)]);
    }
    plot(
        &mut map,
        "heatmap",
        &[
            ("title", "configurational temperature ratio"),
            ("x", "tau"),
            ("y", "q0"),
            ("z", "t_eff_ratio"),
            ("z_center", "1"),
        ],
    );

    let bq = grid(q_lo, q_hi, n_boundary, true)?;
    let opts = BoundaryOptions::default();
    let bounds: Vec<CliResult<CoolingBoundary>> = bq
        .par_iter()
        .map(|&q| Ok(cooling_boundary(g, q, &opts)?))
        .collect();
    let mut b = Table::new(&["q0", "tau_star", "last_crossing"]);
    for (q, res) in bq.iter().zip(bounds) {
        match res? {
            CoolingBoundary::Boundary {
                tau_star,
                last_crossing,
            } => b.push_f64(&[*q, tau_star, last_crossing]),
            CoolingBoundary::NoBoundary => b.push(vec![fmt_f64(*q), String::new(), String::new()]),
        }
    }
    plot(
        &mut b,
        "line",
        &[
            ("title", "largest cooling delay"),
            ("x", "q0"),
            ("y", "tau_star"),
            ("x_scale", "log"),
        ],
    );

    let cut_base = params(g, q_cut)?;
    let asy = asymptotic_long_delay(&cut_base)?;
    let cut_taus = grid(tau_lo, cut_hi, n_cut, false)?;
    let cut: Vec<Option<f64>> = cut_taus
        .par_iter()
        .map(|&t| position_variance(&cut_base.with_tau(t)).ok())
        .collect();
    let mut c = Table::new(&["tau", "t_eff_ratio", "plateau_taylor", "plateau_exact"]);
    c.set_meta("q0", fmt_f64(q_cut));
    for (t, v) in cut_taus.iter().zip(&cut) {
        c.push(vec![
            fmt_f64(*t),
            fmt_opt(*v),
            fmt_f64(asy.t_eff_ratio_inf),
            fmt_f64(asy.sigma_q2_inf),
        ]);
    }
    plot(
        &mut c,
        "line",
        &[
            ("title", "temperature ratio at fixed quality factor"),
            ("x", "tau"),
            ("y", "t_eff_ratio"),
            ("y_dashed", "plateau_taylor;plateau_exact"),
        ],
    );
    Ok(vec![
        ("fig5_map".into(), map),
        ("fig5_boundary".into(), b),
        ("fig5_cut".into(), c),
    ])
}

fn supp_q(f: &FigureFlags, r: &Resolver) -> CliResult<Vec<(String, Table)>> {
    let k = r.f64("g_per_q0", None, 0.0094)?;
    let q_lo = r.f64("q0_min", None, 2.0)?;
    let q_hi = r.f64("q0_max", None, 100.0)?;
    let n = r.usize("points", f.points, 60)?;
    let tau_short = r.f64("tau_short", None, 1.25 * PI)?;
    let tau_long = r.f64("tau_long", None, 1.25 * PI + 18.0 * PI)?;
    let qs = grid(q_lo, q_hi, n, true)?;
    let mut out = Vec::new();
    for (name, tau) in [("suppQ_short", tau_short), ("suppQ_long", tau_long)] {
        let rows: Vec<crate::sweep::SweepRow> = qs
            .par_iter()
            .map(|&q| -> CliResult<_> {
                let p = ReducedParams::new(k * q, q, tau)?;
                Ok(crate::sweep::theory_row(&p, tau, Source::Closed))
            })
            .collect::<CliResult<_>>()?;
        let mut t = Table::new(&[
            "q0", "g", "status", "sigma_v2", "s_pump", "w_ext", "s_i", "s_highq", "s_vfb",
        ]);
        t.set_meta("tau", fmt_f64(tau));
        for row in &rows {
            t.push(vec![
                fmt_f64(row.q0),
                fmt_f64(row.g),
                row.status.name().into(),
                fmt_opt(row.sigma_v2),
                fmt_opt(row.s_pump),
                fmt_opt(row.w_ext),
                fmt_opt(row.s_i),
                fmt_f64(row.s_highq),
                fmt_f64(row.s_vfb),
            ]);
        }
        plot(
            &mut t,
            "line",
            &[
                (
                    "title",
                    if name == "suppQ_short" {
                        "rates vs quality factor, short delay"
                    } else {
                        "rates vs quality factor, long delay"
                    },
                ),
                ("x", "q0"),
                ("x_scale", "log"),
                ("y", "s_pump;w_ext"),
                ("y_dashed", "s_highq"),
                ("y_label", "rate"),
            ],
        );
        out.push((name.to_string(), t));
    }
    Ok(out)
}

fn supp_bound(f: &FigureFlags, r: &Resolver) -> CliResult<Vec<(String, Table)>> {
    let g = r.f64("g", f.g, 0.36)?;
    let q0 = r.f64("q0", f.q0, 55.0)?;
    let lo = r.f64("tau_min", None, 0.5 * PI)?;
    let hi = r.f64("tau_max", None, 60.0 * PI)?;
    let n = r.usize("points", f.points, 400)?;
    let base = params(g, q0)?;
    let taus = grid(lo, hi, n, false)?;
    let rows: Vec<Vec<String>> = taus
        .par_iter()
        .map(|&tau| {
            let p = base.with_tau(tau);
            let res = steady_state_moments(&p, MomentSource::Closed)
                .and_then(|m| Ok((thermo_rates(&p, &m)?, nonmarkov_bound(&p, &m).ok())));
            match res {
                Ok((t, b)) => vec![
                    fmt_f64(tau),
                    fmt_f64(t.s_pump),
                    fmt_f64(t.w_ext),
                    fmt_opt(t.bound_nm),
                    fmt_f64(t.s_vfb),
                    fmt_opt(b.map(|b| b.s_pump_y)),
                    fmt_opt(b.map(|b| b.i_flow)),
                ],
                Err(_) => vec![
                    fmt_f64(tau),
                    String::new(),
                    String::new(),
                    String::new(),
                    fmt_f64(g / q0),
                    String::new(),
                    String::new(),
                ],
            }
        })
        .collect();
    let mut t = Table::new(&[
        "tau", "s_pump", "w_ext", "bound_nm", "s_vfb", "s_pump_y", "i_flow",
    ]);
    for row in rows {
        t.push(row);
    }
    plot(
        &mut t,
        "line",
        &[
            ("title", "entropy pumping and the non-Markovian bound"),
            ("x", "tau"),
            ("y", "s_pump;bound_nm;w_ext"),
            ("y_dashed", "s_vfb"),
            ("y_label", "rate"),
        ],
    );
    Ok(vec![("suppBound".into(), t)])
}

/// Rejects figure names early with a usage error.
pub fn parse_figure(s: &str) -> CliResult<Figure> {
    s.parse().map_err(CliError::Usage)
}
