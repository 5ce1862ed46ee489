//! Output rendering: aligned human tables, comma-separated machine tables
//! with a leading record-type column, `key=value` records, and the sidecar
//! metadata written next to `--out` files.
//!
//! Machine output is byte-stable: identical configuration and seed produce
//! identical bytes (benchmark timings excepted, by nature).

use crate::error::CliResult;
use std::fmt::Write as _;
use std::path::Path;

/// Machine output flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Record,
}

/// A rendered command result in all three shapes.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub human: String,
    pub csv: String,
    pub record: String,
}

/// Sidecar metadata for machine outputs.
#[derive(Debug, Clone)]
pub struct Meta {
    pub config_hash: String,
    pub seed: Option<u64>,
}

/// Stable 12-digit scientific formatting for report values.
pub fn num(v: f64) -> String {
    format!("{v:.12e}")
}

/// Full-precision formatting where exact round trips matter.
pub fn num_exact(v: f64) -> String {
    format!("{v:.16e}")
}

/// Tabular builder shared by the commands.
#[derive(Debug, Clone)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
    warnings: Vec<(String, String)>, // (code, message)
}

impl Table {
    pub fn new<S: Into<String>>(headers: Vec<S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn push_row<S: Into<String>>(&mut self, row: Vec<S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn push_warning(&mut self, code: impl Into<String>, message: impl Into<String>) {
        self.warnings.push((code.into(), message.into()));
    }

    pub fn warnings(&self) -> &[(String, String)] {
        &self.warnings
    }

    /// Aligned plain-text rendering with warnings appended.
    pub fn render_human(&self) -> String {
        let mut widths: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |cells: &[String], widths: &[usize], out: &mut String| {
            for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
                if i > 0 {
                    out.push_str("  ");
                }
                let _ = write!(out, "{cell:<w$}");
            }
            while out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        };
        line(&self.headers, &widths, &mut out);
        let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for row in &self.rows {
            line(row, &widths, &mut out);
        }
        for (code, msg) in &self.warnings {
            let _ = writeln!(out, "WARNING [{code}]: {msg}");
        }
        out
    }

    /// CSV rendering: a `record_type` column distinguishes data rows from
    /// warning rows.
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("record_type,");
        out.push_str(&self.headers.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str("data,");
            out.push_str(&row.join(","));
            out.push('\n');
        }
        for (code, msg) in &self.warnings {
            let _ = writeln!(out, "warning,{code},\"{}\"", msg.replace('"', "'"));
        }
        out
    }
}

/// `key=value` record rendering; warnings become `warning.N.code` entries.
pub fn render_record(pairs: &[(String, String)], warnings: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k}={v}");
    }
    for (i, (code, msg)) in warnings.iter().enumerate() {
        let _ = writeln!(out, "warning.{i}.code={code}");
        let _ = writeln!(out, "warning.{i}.message={msg}");
    }
    out
}

/// Prints to stdout in the selected shape and, with `--out`, writes the
/// machine output plus a `<path>.meta` sidecar carrying the configuration
/// hash, the seed and the tool version.
pub fn deliver(
    rendered: &Rendered,
    meta: &Meta,
    out: Option<&Path>,
    format: Option<Format>,
    default_format: Format,
) -> CliResult<()> {
    match format {
        None => print!("{}", rendered.human),
        Some(Format::Csv) => print!("{}", rendered.csv),
        Some(Format::Record) => print!("{}", rendered.record),
    }
    if let Some(path) = out {
        let chosen = format.unwrap_or(default_format);
        let body = match chosen {
            Format::Csv => &rendered.csv,
            Format::Record => &rendered.record,
        };
        std::fs::write(path, body)?;
        let mut meta_text = String::new();
        let _ = writeln!(meta_text, "key,value");
        let _ = writeln!(meta_text, "config_hash,{}", meta.config_hash);
        if let Some(seed) = meta.seed {
            let _ = writeln!(meta_text, "seed,{seed}");
        }
        let _ = writeln!(meta_text, "version,{}", env!("CARGO_PKG_VERSION"));
        let meta_path = path.with_extension(match path.extension() {
            Some(ext) => format!("{}.meta", ext.to_string_lossy()),
            None => "meta".to_string(),
        });
        std::fs::write(meta_path, meta_text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_renders_all_shapes() {
        let mut t = Table::new(vec!["a", "b"]);
        t.push_row(vec!["1", "2"]);
        t.push_warning("gamma_clamped", "gamma clamped at 3 grid times");
        let human = t.render_human();
        assert!(human.contains("WARNING [gamma_clamped]"));
        let csv = t.render_csv();
        assert!(csv.starts_with("record_type,a,b\ndata,1,2\n"));
        assert!(csv.contains("warning,gamma_clamped"));
    }

    #[test]
    fn record_rendering_is_line_per_key() {
        let out = render_record(&[("cf1".into(), "0.9".into())], &[("x".into(), "y".into())]);
        assert_eq!(out, "cf1=0.9\nwarning.0.code=x\nwarning.0.message=y\n");
    }
}
