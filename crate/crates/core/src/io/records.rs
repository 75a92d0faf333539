//! Per-step energy records and their CSV log.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "step,time,load,bulk,surface,total,xi_min,xi_max,xi_mean,cells,dofs,stagger_iters";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub step: usize,
    pub time: f64,
    /// Magnitude of the prescribed boundary value, `c t`.
    pub load: f64,
    pub bulk: f64,
    /// Crack surface energy created since the initial state.
    pub surface: f64,
    pub total: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    pub xi_mean: f64,
    pub cells: usize,
    pub dofs: usize,
    pub stagger_iters: usize,
}

impl EnergyRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{},{},{}",
            self.step,
            self.time,
            self.load,
            self.bulk,
            self.surface,
            self.total,
            self.xi_min,
            self.xi_max,
            self.xi_mean,
            self.cells,
            self.dofs,
            self.stagger_iters
        )
    }

    pub fn parse_csv_line(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 12 {
            return None;
        }
        let x = |i: usize| f[i].parse::<f64>().ok();
        let n = |i: usize| f[i].parse::<usize>().ok();
        Some(EnergyRecord {
            step: n(0)?,
            time: x(1)?,
            load: x(2)?,
            bulk: x(3)?,
            surface: x(4)?,
            total: x(5)?,
            xi_min: x(6)?,
            xi_max: x(7)?,
            xi_mean: x(8)?,
            cells: n(9)?,
            dofs: n(10)?,
            stagger_iters: n(11)?,
        })
    }
}

/// Appends records to a CSV file, flushing after each one.
pub struct CsvLog {
    out: BufWriter<File>,
}

impl CsvLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        out.flush()?;
        Ok(CsvLog { out })
    }

    pub fn append(&mut self, r: &EnergyRecord) -> std::io::Result<()> {
        writeln!(self.out, "{}", r.csv_line())?;
        self.out.flush()
    }
}

/// Reads a CSV log written by [`CsvLog`].
pub fn read_csv(path: &Path) -> std::io::Result<Vec<EnergyRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "unexpected CSV header"));
    }
    lines
        .map(|l| {
            EnergyRecord::parse_csv_line(l)
                .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad line: {l}")))
        })
        .collect()
}
