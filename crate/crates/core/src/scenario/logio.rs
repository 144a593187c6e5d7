//! Run logs on disk: CSV with a unit-annotated header, or JSON lines.
//!
//! Floats are written in shortest round-trip form, so reading a log back and
//! writing it again reproduces the original bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraints::{CONSTRAINT_COUNT, LABELS};
use crate::error::{Error, Result};

use super::sim::{RunLog, TickRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LogFormat {
    #[default]
    Csv,
    #[value(name = "jsonl")]
    #[serde(rename = "jsonl")]
    JsonLines,
}

impl LogFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LogFormat::Csv => "csv",
            LogFormat::JsonLines => "jsonl",
        }
    }
}

const GENERALIZED: [(&str, &str); 4] = [("phi", "rad"), ("theta", "rad"), ("psi", "rad"), ("alpha", "rad")];
const PLANNER: [(&str, &str); 9] = [
    ("phi", "rad"),
    ("theta", "rad"),
    ("psi", "rad"),
    ("alpha", "rad"),
    ("alpha_dot", "rad_s"),
    ("eta1", "rad"),
    ("eta2", "rad"),
    ("eta3", "rad"),
    ("eta4", "rad"),
];
const INPUT: [(&str, &str); 8] = [
    ("thrust", "N"),
    ("tau_x", "Nm"),
    ("tau_y", "Nm"),
    ("tau_z", "Nm"),
    ("eta1_dot", "rad_s"),
    ("eta2_dot", "rad_s"),
    ("eta3_dot", "rad_s"),
    ("eta4_dot", "rad_s"),
];
const XYZ: [&str; 3] = ["x", "y", "z"];

/// Column names of the CSV format, each suffixed with its unit.
pub fn csv_header() -> Vec<String> {
    let mut h = vec!["time_s".to_string()];
    h.extend(GENERALIZED.iter().map(|(n, u)| format!("plant_{n}_{u}")));
    h.extend(GENERALIZED.iter().map(|(n, _)| format!("plant_{n}_dot_rad_s")));
    h.extend((1..=4).map(|i| format!("plant_eta{i}_rad")));
    h.extend(PLANNER.iter().map(|(n, u)| format!("planner_{n}_{u}")));
    h.extend(PLANNER.iter().map(|(n, u)| format!("predicted_{n}_{u}")));
    h.extend(XYZ.iter().map(|a| format!("setpoint_p{a}_m")));
    h.extend(XYZ.iter().map(|a| format!("setpoint_v{a}_m_s")));
    h.push("setpoint_psi_rad".into());
    h.extend((1..=4).map(|i| format!("setpoint_eta{i}_dot_rad_s")));
    h.extend(INPUT.iter().map(|(n, u)| format!("input_{n}_{u}")));
    h.extend(LABELS.iter().map(|l| format!("c_{l}_m")));
    h.extend(
        [
            "iterations",
            "outer_iterations",
            "latency_ms",
            "violation_m",
            "cost",
            "converged",
            "degraded",
            "residual_m",
        ]
        .map(String::from),
    );
    h
}

fn push_all(out: &mut Vec<String>, values: &[f64]) {
    out.extend(values.iter().map(f64::to_string));
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn to_row(r: &TickRecord) -> Vec<String> {
    let mut row = vec![r.time.to_string()];
    push_all(&mut row, &r.plant);
    push_all(&mut row, &r.planner);
    push_all(&mut row, &r.predicted);
    push_all(&mut row, &r.setpoint_position);
    push_all(&mut row, &r.setpoint_velocity);
    row.push(r.setpoint_yaw.to_string());
    push_all(&mut row, &r.setpoint_joint_rates);
    push_all(&mut row, &r.input);
    push_all(&mut row, &r.constraints);
    row.push(r.iterations.to_string());
    row.push(r.outer_iterations.to_string());
    row.push(r.latency_ms.map(|v| v.to_string()).unwrap_or_default());
    row.push(r.violation.to_string());
    row.push(r.cost.to_string());
    row.push(flag(r.converged));
    row.push(flag(r.degraded));
    row.push(r.residual.to_string());
    row
}

struct Fields<'a> {
    iter: csv::StringRecordIter<'a>,
    column: usize,
    line: u64,
}

impl Fields<'_> {
    fn next_str(&mut self) -> Result<&str> {
        self.column += 1;
        self.iter
            .next()
            .ok_or_else(|| Error::LogFormat(format!("line {}: missing column {}", self.line, self.column)))
    }

    fn parse<T: FromStr>(&mut self) -> Result<T> {
        let (line, column) = (self.line, self.column + 1);
        let s = self.next_str()?;
        s.parse()
            .map_err(|_| Error::LogFormat(format!("line {line}, column {column}: cannot parse {s:?}")))
    }

    fn array<const N: usize>(&mut self) -> Result<[f64; N]> {
        let mut a = [0.0; N];
        for v in &mut a {
            *v = self.parse()?;
        }
        Ok(a)
    }

    fn flag(&mut self) -> Result<bool> {
        match self.parse::<u8>()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::LogFormat(format!("line {}: flag must be 0 or 1, got {v}", self.line))),
        }
    }
}

fn from_row(rec: &csv::StringRecord, line: u64) -> Result<TickRecord> {
    let expected = csv_header().len();
    if rec.len() != expected {
        return Err(Error::LogFormat(format!("line {line}: expected {expected} columns, found {}", rec.len())));
    }
    let mut f = Fields { iter: rec.iter(), column: 0, line };
    Ok(TickRecord {
        time: f.parse()?,
        plant: f.array()?,
        planner: f.array()?,
        predicted: f.array()?,
        setpoint_position: f.array()?,
        setpoint_velocity: f.array()?,
        setpoint_yaw: f.parse()?,
        setpoint_joint_rates: f.array()?,
        input: f.array()?,
        constraints: f.array::<CONSTRAINT_COUNT>()?,
        iterations: f.parse()?,
        outer_iterations: f.parse()?,
        latency_ms: match f.next_str()? {
            "" => None,
            s => Some(s.parse().map_err(|_| Error::LogFormat(format!("line {line}: bad latency {s:?}")))?),
        },
        violation: f.parse()?,
        cost: f.parse()?,
        converged: f.flag()?,
        degraded: f.flag()?,
        residual: f.parse()?,
    })
}

pub fn write_log_to<W: Write>(log: &RunLog, out: W, format: LogFormat) -> Result<()> {
    match format {
        LogFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(csv_header())?;
            for r in &log.records {
                w.write_record(to_row(r))?;
            }
            w.flush()?;
        }
        LogFormat::JsonLines => {
            let mut w = BufWriter::new(out);
            for r in &log.records {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_log_from<R: std::io::Read>(input: R, format: LogFormat) -> Result<RunLog> {
    let mut records = Vec::new();
    match format {
        LogFormat::Csv => {
            let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(input);
            if rd.headers()?.iter().ne(csv_header().iter().map(String::as_str)) {
                return Err(Error::LogFormat("CSV header does not match the run-log schema".into()));
            }
            for (i, rec) in rd.records().enumerate() {
                records.push(from_row(&rec?, i as u64 + 2)?);
            }
        }
        LogFormat::JsonLines => {
            for (i, line) in BufReader::new(input).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let r = serde_json::from_str(&line)
                    .map_err(|e| Error::LogFormat(format!("line {}: {e}", i + 1)))?;
                records.push(r);
            }
        }
    }
    Ok(RunLog { records })
}

pub fn write_log(log: &RunLog, path: impl AsRef<Path>, format: LogFormat) -> Result<()> {
    write_log_to(log, File::create(path)?, format)
}

pub fn read_log(path: impl AsRef<Path>, format: LogFormat) -> Result<RunLog> {
    read_log_from(File::open(path)?, format)
}
