//! Minimal SVG renderings of tables.
//!
//! The plot is described entirely by the table's metadata, so any emitted CSV can
//! be re-rendered on its own:
//!
//! * `plot = line`: `x` column, `y` and optional `y_dashed` column lists (`;`-separated)
//! * `plot = heatmap`: `x`, `y`, `z` columns on a rectangular grid
//!
//! Optional keys: `title`, `x_scale = log`, `y_scale = log` (line plots).

use std::fmt::Write;

use crate::error::{CliError, CliResult};
use crate::table::Table;

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub fn render(t: &Table) -> CliResult<String> {
    match t.meta("plot") {
        Some("line") => line_plot(t),
        Some("heatmap") => heatmap(t),
        Some(other) => Err(CliError::usage(format!("unknown plot kind `{other}`"))),
        None => Err(CliError::usage("table carries no `plot` metadata")),
    }
}

fn list(t: &Table, key: &str) -> Vec<String> {
    t.meta(key)
        .map(|s| {
            s.split(';')
                .map(|c| c.trim().to_string())
                .filter(|c| !c.is_empty())
                .collect()
        })
        .unwrap_or_default()
}

fn required<'a>(t: &'a Table, key: &str) -> CliResult<&'a str> {
    t.meta(key)
        .ok_or_else(|| CliError::usage(format!("plot metadata lacks `{key}`")))
}

#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * (lo.abs() + hi.abs()).max(1e-300) {
            let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
            (lo, hi) = (lo - pad, hi + pad);
        } else if !log {
            let pad = 0.03 * (hi - lo);
            (lo, hi) = (lo - pad, hi + pad);
        }
        Axis { lo, hi, log }
    }

    fn frac(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            if b >= a {
                return (a..=b)
                    .map(|e| ((e as f64 - self.lo) / (self.hi - self.lo), format!("1e{e}")))
                    .collect();
            }
            return [self.lo, self.hi]
                .iter()
                .map(|&e| {
                    (
                        (e - self.lo) / (self.hi - self.lo),
                        format!("{:.3}", 10f64.powf(e)),
                    )
                })
                .collect();
        }
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 2.5, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let mut out = Vec::new();
        let mut k = (self.lo / step).ceil();
        while k * step <= self.hi + 1e-9 * step {
            let v = k * step;
            out.push(((v - self.lo) / span, tick_label(v, step)));
            k += 1.0;
        }
        out
    }
}

fn tick_label(v: f64, step: f64) -> String {
    if v.abs() < 1e-9 * step {
        return "0".into();
    }
    if step >= 1e-3 && v.abs() < 1e5 {
        let digits = (-step.log10().floor()).max(0.0) as usize + 1;
        let s = format!("{v:.digits$}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, xa: &Axis, ya: &Axis) {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (f, label) in xa.ticks() {
        let x = LEFT + f * pw;
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            TOP + ph,
            TOP + ph + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            TOP + ph + 18.0
        );
    }
    for (f, label) in ya.ticks() {
        let y = TOP + (1.0 - f) * ph;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 15.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(ylabel)
    );
}

fn line_plot(t: &Table) -> CliResult<String> {
    let xname = required(t, "x")?;
    let solid = list(t, "y");
    let dashed = list(t, "y_dashed");
    if solid.is_empty() && dashed.is_empty() {
        return Err(CliError::usage("line plot needs at least one `y` column"));
    }
    let x: Vec<f64> = t
        .column(xname)?
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let mut series = Vec::new();
    for (i, name) in solid.iter().chain(dashed.iter()).enumerate() {
        let y: Vec<f64> = t
            .column(name)?
            .into_iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect();
        series.push((name.clone(), y, i >= solid.len()));
    }
    let xa = Axis::fit(x.iter().copied(), t.meta("x_scale") == Some("log"));
    let ya = Axis::fit(
        series.iter().flat_map(|s| s.1.iter().copied()),
        t.meta("y_scale") == Some("log"),
    );
    let ylabel = t
        .meta("y_label")
        .map(str::to_string)
        .unwrap_or_else(|| solid.join(", "));
    let mut out = String::new();
    frame(
        &mut out,
        t.meta("title").unwrap_or(""),
        xname,
        &ylabel,
        &xa,
        &ya,
    );
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    for (k, (name, y, dash)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (xi, yi) in x.iter().zip(y) {
            match (xa.frac(*xi), ya.frac(*yi)) {
                (Some(fx), Some(fy)) => {
                    let _ = write!(
                        d,
                        "{}{:.2},{:.2} ",
                        if pen_down { "L" } else { "M" },
                        LEFT + fx * pw,
                        TOP + (1.0 - fy) * ph
                    );
                    pen_down = true;
                }
                _ => pen_down = false,
            }
        }
        let style = if *dash {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.5"{style}/>"#,
            d.trim_end()
        );
        let ly = TOP + 15.0 + 18.0 * k as f64;
        let lx = W - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="1.5"{style}/>"#,
            lx + 25.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn colour(f: f64) -> String {
    // Blue, white, red, matching the usual diverging temperature maps.
    let stops = [
        (0.0, [49.0, 54.0, 149.0]),
        (0.5, [247.0, 247.0, 247.0]),
        (1.0, [165.0, 0.0, 38.0]),
    ];
    let f = f.clamp(0.0, 1.0);
    let (a, b) = if f <= 0.5 {
        (stops[0], stops[1])
    } else {
        (stops[1], stops[2])
    };
    let u = (f - a.0) / (b.0 - a.0);
    let c: Vec<u8> = (0..3)
        .map(|i| (a.1[i] + u * (b.1[i] - a.1[i])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn distinct(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    u.sort_by(f64::total_cmp);
    u.dedup();
    u
}

fn heatmap(t: &Table) -> CliResult<String> {
    let (xn, yn, zn) = (required(t, "x")?, required(t, "y")?, required(t, "z")?);
    let x: Vec<f64> = t
        .column(xn)?
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let y: Vec<f64> = t
        .column(yn)?
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let z: Vec<f64> = t
        .column(zn)?
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect();
    let (xs, ys) = (distinct(&x), distinct(&y));
    if xs.is_empty() || ys.is_empty() {
        return Err(CliError::usage("heatmap has no finite grid coordinates"));
    }
    let finite_z: Vec<f64> = z.iter().copied().filter(|v| v.is_finite()).collect();
    let (zlo, zhi) = finite_z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    // Centre the diverging scale on `z_center` when given (1 for temperature ratios).
    let centre = t.meta("z_center").and_then(|s| s.parse::<f64>().ok());
    let zf = |v: f64| -> f64 {
        match centre {
            Some(c) => {
                let half = (zhi - c).abs().max((c - zlo).abs()).max(1e-300);
                0.5 + 0.5 * (v - c) / half
            }
            None if zhi > zlo => (v - zlo) / (zhi - zlo),
            None => 0.5,
        }
    };
    // Cells are laid out by grid index, so logarithmic grids render evenly.
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (cw, ch) = (pw / xs.len() as f64, ph / ys.len() as f64);
    for ((xi, yi), zi) in x.iter().zip(&y).zip(&z) {
        let (Ok(i), Ok(j)) = (
            xs.binary_search_by(|p| p.total_cmp(xi)),
            ys.binary_search_by(|p| p.total_cmp(yi)),
        ) else {
            continue;
        };
        let fill = if zi.is_finite() {
            colour(zf(*zi))
        } else {
            "#bbbbbb".to_string()
        };
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            LEFT + i as f64 * cw,
            TOP + ph - (j + 1) as f64 * ch,
            cw + 0.05,
            ch + 0.05
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(t.meta("title").unwrap_or(""))
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let label_at = |vals: &[f64], k: usize| tick_label(vals[k], (vals[k].abs() * 1e-2).max(1e-3));
    for k in (0..xs.len()).step_by((xs.len() / 6).max(1)) {
        let px = LEFT + (k as f64 + 0.5) * cw;
        let _ = writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            label_at(&xs, k)
        );
    }
    for k in (0..ys.len()).step_by((ys.len() / 6).max(1)) {
        let py = TOP + ph - (k as f64 + 0.5) * ch;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            py + 4.0,
            label_at(&ys, k)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 15.0,
        escape(xn)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(yn)
    );
    // Colour bar.
    let bx = W - RIGHT + 30.0;
    for k in 0..50 {
        let f = k as f64 / 49.0;
        let v = zlo + f * (zhi - zlo);
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.2}" y="{:.2}" width="20" height="{:.2}" fill="{}"/>"#,
            TOP + ph - (k + 1) as f64 * ph / 50.0,
            ph / 50.0 + 0.05,
            colour(zf(v))
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
        bx + 25.0,
        TOP + ph,
        format_args!("{zlo:.4}")
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
        bx + 25.0,
        TOP + 10.0,
        format_args!("{zhi:.4}")
    );
    let _ = writeln!(
        out,
        r#"<text x="{bx:.2}" y="{:.2}">{}</text>"#,
        TOP - 8.0,
        escape(zn)
    );
    out.push_str("</svg>\n");
    Ok(out)
}
