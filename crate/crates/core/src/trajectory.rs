//! Recorded order-parameter trajectories and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::activations::McEstimate;
use crate::error::Result;

/// When to record along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RecordSchedule {
    /// Every `every` units of time.
    Every { every: f64 },
    /// `per_decade` log-spaced times per decade.
    LogSpaced { per_decade: usize },
}

impl Default for RecordSchedule {
    fn default() -> Self {
        RecordSchedule::LogSpaced { per_decade: 20 }
    }
}

impl RecordSchedule {
    /// Recording times on `[0, t_max]`, each an integer multiple of `dt`, ascending
    /// and distinct. Always contains `0` and the final time.
    pub fn times(&self, t_max: f64, dt: f64) -> Vec<f64> {
        let last = (t_max / dt).round() as u64;
        let mut ticks = vec![0u64];
        match *self {
            RecordSchedule::Every { every } => {
                let stride = ((every / dt).round() as u64).max(1);
                let mut k = stride;
                while k < last {
                    ticks.push(k);
                    k += stride;
                }
            }
            RecordSchedule::LogSpaced { per_decade } => {
                let pd = per_decade.max(1) as f64;
                let mut j = (pd * dt.log10()).floor() as i64;
                loop {
                    let t = 10f64.powf(j as f64 / pd);
                    let k = (t / dt).round() as u64;
                    if k >= last {
                        break;
                    }
                    if k >= 1 && k > *ticks.last().unwrap() {
                        ticks.push(k);
                    }
                    j += 1;
                }
            }
        }
        if last > 0 {
            ticks.push(last);
        }
        ticks.into_iter().map(|k| k as f64 * dt).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub pmse: f64,
    /// `K x K`, row-major.
    pub q: Vec<f64>,
    /// `K x M`, row-major.
    pub r: Vec<f64>,
    pub v: Vec<f64>,
    pub pmse_mc: Option<McEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub k: usize,
    pub m: usize,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn new(k: usize, m: usize) -> Self {
        Trajectory { k, m, records: Vec::new() }
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["t".to_string(), "pmse".to_string()];
        for a in 0..self.k {
            for b in a..self.k {
                cols.push(format!("Q{}{}", a + 1, b + 1));
            }
        }
        for a in 0..self.k {
            for b in 0..self.m {
                cols.push(format!("R{}{}", a + 1, b + 1));
            }
        }
        for a in 0..self.k {
            cols.push(format!("v{}", a + 1));
        }
        if self.has_mc() {
            cols.push("pmse_mc".into());
            cols.push("pmse_mc_stderr".into());
        }
        cols.join(",")
    }

    fn has_mc(&self) -> bool {
        self.records.iter().any(|r| r.pmse_mc.is_some())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        let mc = self.has_mc();
        for rec in &self.records {
            let mut row = format!("{},{}", rec.t, rec.pmse);
            for a in 0..self.k {
                for b in a..self.k {
                    let _ = write!(row, ",{}", rec.q[a * self.k + b]);
                }
            }
            for v in &rec.r {
                let _ = write!(row, ",{v}");
            }
            for v in &rec.v {
                let _ = write!(row, ",{v}");
            }
            if mc {
                match rec.pmse_mc {
                    Some(e) => {
                        let _ = write!(row, ",{},{}", e.mean, e.stderr);
                    }
                    None => row.push_str(",,"),
                }
            }
            out.push_str(&row);
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn pmse_at(&self, t: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| (r.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .map(|r| r.pmse)
    }
}
