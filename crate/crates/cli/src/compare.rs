//! Joins sweep rows from several sources and checks them against each other.
//!
//! Theory sources are compared with each other through the relative deviation of
//! `sigma_v2`; simulation rows are scored by z-scores against their ensemble
//! standard errors, using the closed form (or, failing that, quadrature) as the
//! reference.

use std::fmt::Write;

use crate::error::{CliError, CliResult};
use crate::sweep::{Source, Status, SweepRow};
use crate::table::{fmt_f64, fmt_opt, Table};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Maximum relative `sigma_v2` deviation between closed form and quadrature.
    pub oracle_rel: f64,
    /// A simulation row is covered when `|z| ≤ z_cover`.
    pub z_cover: f64,
    /// Minimum covered fraction per quantity.
    pub coverage: f64,
    /// Any `|z|` beyond this is a gross outlier and fails on its own.
    pub z_gross: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            oracle_rel: 1e-6,
            z_cover: 3.0,
            coverage: 0.95,
            z_gross: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub label: String,
    pub source: Source,
    pub reference: Source,
    pub quantity: &'static str,
    pub value: Option<f64>,
    pub reference_value: Option<f64>,
    pub rel_delta: Option<f64>,
    pub se: Option<f64>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub n: usize,
    pub pass: bool,
    pub offenders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub deltas: Vec<Delta>,
    pub checks: Vec<Check>,
}

impl CompareReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    pub fn rows_table(&self) -> Table {
        let mut t = Table::new(&[
            "row",
            "source",
            "reference",
            "quantity",
            "value",
            "reference_value",
            "rel_delta",
            "se",
            "z",
        ]);
        for d in &self.deltas {
            t.push(vec![
                d.label.clone(),
                d.source.name().into(),
                d.reference.name().into(),
                d.quantity.into(),
                fmt_opt(d.value),
                fmt_opt(d.reference_value),
                fmt_opt(d.rel_delta),
                fmt_opt(d.se),
                fmt_opt(d.z),
            ]);
        }
        t
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&[
            "check",
            "statistic",
            "threshold",
            "n",
            "verdict",
            "offenders",
        ]);
        for c in &self.checks {
            t.push(vec![
                c.name.clone(),
                fmt_f64(c.statistic),
                fmt_f64(c.threshold),
                c.n.to_string(),
                if c.pass { "pass" } else { "fail" }.into(),
                c.offenders.join(" "),
            ]);
        }
        t
    }

    pub fn human(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<34} {:>13} {:>11} {:>5}  verdict",
            "check", "statistic", "threshold", "n"
        );
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{:<34} {:>13.6e} {:>11.3e} {:>5}  {}",
                c.name,
                c.statistic,
                c.threshold,
                c.n,
                if c.pass { "PASS" } else { "FAIL" }
            );
            for o in c.offenders.iter().take(10) {
                let _ = writeln!(s, "    offending row: {o}");
            }
            if c.offenders.len() > 10 {
                let _ = writeln!(s, "    ... {} more", c.offenders.len() - 10);
            }
        }
        let _ = writeln!(s, "overall: {}", if self.pass() { "PASS" } else { "FAIL" });
        s
    }
}

pub fn row_label(r: &SweepRow) -> String {
    format!(
        "{}[g={},q0={},tau={}]",
        r.source,
        fmt_f64(r.g),
        fmt_f64(r.q0),
        fmt_f64(r.tau_realized)
    )
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Pairs every row of `source` with the row of `reference` at the same `(g, q0)`
/// and nearest `tau_realized` within `tol`. Rows left unmatched on either side
/// are orphans.
fn join<'a>(
    rows: &'a [SweepRow],
    source: Source,
    reference: Source,
    tol: f64,
    orphans: &mut Vec<String>,
) -> Vec<(&'a SweepRow, &'a SweepRow)> {
    let refs: Vec<&SweepRow> = rows.iter().filter(|r| r.source == reference).collect();
    let mut used = vec![false; refs.len()];
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.source == source) {
        let best = refs
            .iter()
            .enumerate()
            .filter(|(i, c)| !used[*i] && same(c.g, r.g) && same(c.q0, r.q0))
            .map(|(i, c)| (i, (c.tau_realized - r.tau_realized).abs()))
            .filter(|&(_, d)| d <= tol)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, _)) => {
                used[i] = true;
                out.push((r, refs[i]));
            }
            None => orphans.push(row_label(r)),
        }
    }
    for (i, c) in refs.iter().enumerate() {
        if !used[i] {
            orphans.push(row_label(c));
        }
    }
    out
}

/// Compares all sources present in `rows`. `tol` is the join tolerance on
/// `tau_realized` (half the simulation step). Orphan rows are a join error.
pub fn compare(rows: &[SweepRow], tol: f64, th: &Thresholds) -> CliResult<CompareReport> {
    let has = |s: Source| rows.iter().any(|r| r.source == s);
    let present: Vec<Source> = [Source::Closed, Source::Quadrature, Source::Simulation]
        .into_iter()
        .filter(|&s| has(s))
        .collect();
    if present.len() < 2 {
        return Err(CliError::usage(format!(
            "compare needs rows from at least two sources, found: {}",
            present
                .iter()
                .map(|s| s.name())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let mut orphans = Vec::new();
    let mut deltas = Vec::new();
    let mut checks = Vec::new();

    if has(Source::Closed) && has(Source::Quadrature) {
        let pairs = join(rows, Source::Quadrature, Source::Closed, tol, &mut orphans);
        let mut worst: f64 = 0.0;
        let mut offenders = Vec::new();
        let mut n = 0;
        for (q, c) in pairs {
            let rel = match (q.status, c.status, q.sigma_v2, c.sigma_v2) {
                (Status::Ok, Status::Ok, Some(a), Some(b)) => Some((a - b).abs() / b.abs()),
                (Status::Unstable, Status::Unstable, _, _) => continue,
                // Disagreeing verdicts or missing values count as unbounded deviations.
                _ => Some(f64::INFINITY),
            };
            n += 1;
            let rel = rel.unwrap();
            worst = worst.max(rel);
            if !(rel <= th.oracle_rel) {
                offenders.push(format!("{} vs {}", row_label(q), row_label(c)));
            }
            deltas.push(Delta {
                label: row_label(q),
                source: Source::Quadrature,
                reference: Source::Closed,
                quantity: "sigma_v2",
                value: q.sigma_v2,
                reference_value: c.sigma_v2,
                rel_delta: Some(rel),
                se: None,
                z: None,
            });
        }
        checks.push(Check {
            name: "closed_vs_quadrature_sigma_v2".into(),
            statistic: worst,
            threshold: th.oracle_rel,
            n,
            pass: offenders.is_empty(),
            offenders,
        });
    }

    if has(Source::Simulation) {
        let reference = if has(Source::Closed) {
            Source::Closed
        } else {
            Source::Quadrature
        };
        let pairs = join(rows, Source::Simulation, reference, tol, &mut orphans);
        type Pick = fn(&SweepRow) -> (Option<f64>, Option<f64>);
        let quantities: [(&'static str, Pick); 3] = [
            ("sigma_v2", |r| (r.sigma_v2, r.se_sigma_v2)),
            ("sigma_q2", |r| (r.sigma_q2, r.se_sigma_q2)),
            ("corr", |r| (r.corr, r.se_corr)),
        ];
        let mut gross = Vec::new();
        let mut worst_z: f64 = 0.0;
        for (name, pick) in quantities {
            let mut n = 0;
            let mut covered = 0;
            let mut offenders = Vec::new();
            for (s, t) in &pairs {
                if s.status == Status::Unstable && t.status == Status::Unstable {
                    continue;
                }
                let (v, se) = pick(s);
                let (tv, _) = pick(t);
                let z = match (s.status, t.status, v, se, tv) {
                    (Status::Ok, Status::Ok, Some(v), Some(se), Some(tv)) if se > 0.0 => {
                        (v - tv) / se
                    }
                    _ => f64::INFINITY,
                };
                n += 1;
                let label = row_label(s);
                if z.abs() <= th.z_cover {
                    covered += 1;
                } else {
                    offenders.push(label.clone());
                }
                if !(z.abs() <= th.z_gross) && !gross.contains(&label) {
                    gross.push(label.clone());
                }
                worst_z = worst_z.max(z.abs());
                deltas.push(Delta {
                    label,
                    source: Source::Simulation,
                    reference,
                    quantity: name,
                    value: v,
                    reference_value: tv,
                    rel_delta: v.zip(tv).map(|(a, b)| (a - b).abs() / b.abs()),
                    se,
                    z: z.is_finite().then_some(z),
                });
            }
            let frac = if n == 0 {
                0.0
            } else {
                covered as f64 / n as f64
            };
            checks.push(Check {
                name: format!("simulation_coverage_{name}"),
                statistic: frac,
                threshold: th.coverage,
                n,
                pass: n > 0 && frac >= th.coverage,
                offenders,
            });
        }
        checks.push(Check {
            name: "simulation_gross_outliers".into(),
            statistic: worst_z,
            threshold: th.z_gross,
            n: pairs.len(),
            pass: gross.is_empty(),
            offenders: gross,
        });
    }

    if !orphans.is_empty() {
        return Err(CliError::usage(format!(
            "join error: orphan rows: {}",
            orphans.join(", ")
        )));
    }
    Ok(CompareReport { deltas, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::theory_row;
    use delaytherm::ReducedParams;

    fn theory(source: Source) -> Vec<SweepRow> {
        (0..6)
            .map(|i| {
                let r = ReducedParams::new(0.36, 20.0, 0.5 + 2.0 * i as f64).unwrap();
                theory_row(&r, r.tau, source)
            })
            .collect()
    }

    fn fake_sim(reference: &[SweepRow], z: &[f64]) -> Vec<SweepRow> {
        reference
            .iter()
            .zip(z)
            .map(|(r, &z)| {
                let mut s = r.clone();
                s.source = Source::Simulation;
                let se = 0.01;
                s.sigma_v2 = Some(r.sigma_v2.unwrap() + z * se);
                s.sigma_q2 = Some(r.sigma_q2.unwrap() + z * se);
                s.corr = Some(r.corr.unwrap() + z * se);
                s.se_sigma_v2 = Some(se);
                s.se_sigma_q2 = Some(se);
                s.se_corr = Some(se);
                s
            })
            .collect()
    }

    #[test]
    fn closed_and_quadrature_agree() {
        let mut rows = theory(Source::Closed);
        rows.extend(theory(Source::Quadrature));
        let rep = compare(&rows, 1e-3, &Thresholds::default()).unwrap();
        assert!(rep.pass(), "{}", rep.human());
        assert_eq!(rep.checks[0].n, 6);
    }

    #[test]
    fn corrupted_row_fails_and_is_named() {
        let mut rows = theory(Source::Closed);
        let mut q = theory(Source::Quadrature);
        q[3].sigma_v2 = Some(q[3].sigma_v2.unwrap() * 1.001);
        let label = format!("{} vs {}", row_label(&q[3]), row_label(&rows[3]));
        rows.extend(q);
        let rep = compare(&rows, 1e-3, &Thresholds::default()).unwrap();
        assert!(!rep.pass());
        assert_eq!(rep.failures()[0].offenders, vec![label.clone()]);
        assert!(rep.human().contains(&label));
        assert!(rep.summary_table().rows[0][5].contains(&label));
    }

    #[test]
    fn simulation_coverage_and_gross_outlier() {
        let closed = theory(Source::Closed);
        let mut rows = closed.clone();
        rows.extend(fake_sim(&closed, &[0.5, -1.0, 2.0, -2.9, 0.0, 1.0]));
        let rep = compare(&rows, 1e-3, &Thresholds::default()).unwrap();
        assert!(rep.pass(), "{}", rep.human());

        let mut rows = closed.clone();
        rows.extend(fake_sim(&closed, &[0.5, -1.0, 2.0, -2.9, 0.0, 40.0]));
        let rep = compare(&rows, 1e-3, &Thresholds::default()).unwrap();
        assert!(!rep.pass());
        let gross = rep
            .checks
            .iter()
            .find(|c| c.name == "simulation_gross_outliers")
            .unwrap();
        assert_eq!(gross.offenders.len(), 1);
        assert!(
            gross.offenders[0].contains("tau=10.5"),
            "{:?}",
            gross.offenders
        );
    }

    #[test]
    fn orphans_are_a_join_error() {
        let mut rows = theory(Source::Closed);
        let mut q = theory(Source::Quadrature);
        q[2].tau_realized += 0.1;
        rows.extend(q);
        let e = compare(&rows, 1e-3, &Thresholds::default()).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("orphan"), "{e}");
        assert!(compare(&theory(Source::Closed), 1e-3, &Thresholds::default()).is_err());
    }
}
