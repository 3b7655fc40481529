//! Header-plus-rows tables written as CSV and as gnuplot `.dat`.

use std::fs;
use std::path::{Path, PathBuf};

use tracefem::io::fmt_float;

use crate::error::CliError;

#[derive(Clone, Debug)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Int(v) => v.to_string(),
            Self::Float(v) => fmt_float(*v),
            Self::Text(s) => s.clone(),
            Self::Bool(b) => (if *b { "pass" } else { "fail" }).to_string(),
            Self::Empty => String::new(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Self::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Self::Empty, Self::Float)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// `# key: value` lines of the `.dat` mirror.
    pub metadata: Vec<(String, String)>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    pub fn csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.iter().map(Cell::render).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }

    /// Whitespace-separated mirror; empty cells become `nan` and text is quoted.
    pub fn dat(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            s.push_str(&format!("# {k}: {v}\n"));
        }
        s.push_str(&format!("# {}\n", self.header.join(" ")));
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Empty => "nan".to_string(),
                    Cell::Text(t) => format!("\"{t}\""),
                    other => other.render(),
                })
                .collect();
            s.push_str(&cells.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, dir: &Path, stem: &str) -> Result<PathBuf, CliError> {
        let path = dir.join(format!("{stem}.csv"));
        fs::write(&path, self.csv())?;
        Ok(path)
    }

    pub fn write_dat(&self, dir: &Path, stem: &str) -> Result<PathBuf, CliError> {
        let path = dir.join(format!("{stem}.dat"));
        fs::write(&path, self.dat())?;
        Ok(path)
    }
}
