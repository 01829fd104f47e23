//! CSV tables with a `#`-prefixed metadata header.
//!
//! ```text
//! # command = figure fig3
//! # seed = 2024
//! tau,s_pump,w_ext
//! 1.5707963267948966,0.005,0.0048
//! ```
//!
//! Floats are written in their shortest round-trip form, so reading a table back
//! reproduces every value bit for bit.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_meta(mut self, meta: &[(String, String)]) -> Self {
        self.meta.extend_from_slice(meta);
        self
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.meta.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| fmt_f64(x)).collect());
    }

    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::usage(format!("table has no column `{name}`")))
    }

    /// Column as numbers; empty cells become `None`.
    pub fn column(&self, name: &str) -> CliResult<Vec<Option<f64>>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                let cell = row[i].trim();
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| {
                        CliError::usage(format!(
                            "row {}: column `{name}`: `{cell}` is not a number",
                            r + 1
                        ))
                    })
                }
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> CliResult<String> {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k} = {}\n", v.replace('\n', " ")));
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::usage(format!("csv: {e}")))?;
        out.push_str(&String::from_utf8(bytes).map_err(|e| CliError::usage(e.to_string()))?);
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_csv_string()?)
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
    }

    pub fn parse<R: Read>(reader: R) -> CliResult<Self> {
        let mut text = String::new();
        BufReader::new(reader).read_to_string(&mut text)?;
        let mut meta = Vec::new();
        for line in text.lines() {
            let Some(rest) = line.strip_prefix('#') else {
                break;
            };
            if let Some((k, v)) = rest.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self {
            meta,
            columns,
            rows,
        })
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| CliError::usage(format!("cannot open {}: {e}", path.display())))?;
        Self::parse(f)
    }
}

/// Reads only the metadata lines of a table file.
pub fn read_meta<R: BufRead>(r: R) -> Vec<(String, String)> {
    r.lines()
        .map_while(|l| l.ok())
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| {
            let (k, v) = l[1..].split_once('=')?;
            Some((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for &x in &[
            0.0,
            1.0,
            -2.5,
            1e-300,
            6.02e23,
            std::f64::consts::PI,
            1.0 / 3.0,
            1e-5,
            9.99e-6,
            -1.178e-3,
        ] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(1e-7), "1e-7");
        assert_eq!(fmt_f64(0.25), "0.25");
    }

    #[test]
    fn table_round_trip_with_metadata() {
        let mut t = Table::new(&["a", "b", "label"]);
        t.set_meta("seed", "7");
        t.set_meta("note", "x, \"y\"");
        t.push(vec![fmt_f64(0.1), String::new(), "has,comma".into()]);
        t.push(vec![fmt_f64(2e-9), fmt_f64(3.0), "plain".into()]);
        let s = t.to_csv_string().unwrap();
        assert!(s.starts_with("# seed = 7\n"));
        let back = Table::parse(s.as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("b").unwrap(), vec![None, Some(3.0)]);
        assert!(back.column("label").is_err());
        assert!(back.column("missing").is_err());
        assert_eq!(read_meta(s.as_bytes()), t.meta);
    }
}
