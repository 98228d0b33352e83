//! Rectangular result tables, rendered as aligned text for the terminal and
//! as a key/value file for machine consumption.

use std::path::Path;

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct ResultTable {
    pub caption: String,
    columns: Vec<(String, Vec<f64>)>,
}

impl ResultTable {
    pub fn new(caption: impl Into<String>) -> Self {
        Self { caption: caption.into(), columns: Vec::new() }
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), CliError> {
        let name = name.into();
        if self.columns.iter().any(|(n, _)| *n == name) {
            return Err(CliError::config(format!("duplicate result column '{name}'")));
        }
        if let Some((_, first)) = self.columns.first() {
            if first.len() != values.len() {
                return Err(CliError::config(format!(
                    "column '{name}' has {} rows, table has {}",
                    values.len(),
                    first.len()
                )));
            }
        }
        self.columns.push((name, values));
        Ok(())
    }

    /// Single-row convenience.
    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) -> Result<(), CliError> {
        self.push_column(name, vec![value])
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |(_, v)| v.len())
    }

    pub fn render_text(&self) -> String {
        let mut out = format!("# {}\n", self.caption);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .map(|(n, v)| v.iter().map(|x| format!("{x}").len()).chain([n.len()]).max().unwrap_or(0))
            .collect();
        for ((name, _), w) in self.columns.iter().zip(&widths) {
            out.push_str(&format!("{name:>w$} "));
        }
        out.push('\n');
        for row in 0..self.rows() {
            for ((_, vals), w) in self.columns.iter().zip(&widths) {
                out.push_str(&format!("{:>w$} ", format!("{}", vals[row])));
            }
            out.push('\n');
        }
        out
    }

    /// Key/value form: `name = value` for single-row tables,
    /// `name[i] = value` otherwise.
    pub fn render_keyvalue(&self) -> String {
        let mut out = format!("# {}\n", self.caption);
        let single = self.rows() == 1;
        for (name, vals) in &self.columns {
            for (i, v) in vals.iter().enumerate() {
                if single {
                    out.push_str(&format!("{name} = {v}\n"));
                } else {
                    out.push_str(&format!("{name}[{i}] = {v}\n"));
                }
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.render_keyvalue())
            .map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }
}
