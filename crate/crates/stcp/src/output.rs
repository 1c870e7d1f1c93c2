//! File emission. Every CSV uses `\n` terminators, `.` decimals and a
//! header row; non-finite numbers are written as `inf`, `-inf` or `nan`.
//! JSON writes non-finite numbers as `null` next to a boolean flag.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use stcp_core::align::LambdaRow;
use stcp_core::simlab::{Aggregate, ExperimentConfig, ExperimentReport, Method, RecordFlags, RepeatRecord, SelectionRecord};

use crate::config::config_digest;
use crate::error::CliError;

/// Shortest round-trip decimal form; independent of locale.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let source = match e.into_kind() {
        csv::ErrorKind::Io(io) => io,
        other => std::io::Error::other(format!("{other:?}")),
    };
    CliError::io(path, source)
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub const RECORD_HEADER: [&str; 8] = [
    "repeat",
    "method",
    "lambda",
    "q_hat",
    "marginal_coverage",
    "mean_size",
    "miscoverage",
    "flags",
];

pub fn write_records(path: &Path, records: &[RepeatRecord]) -> Result<(), CliError> {
    write_rows(
        path,
        &RECORD_HEADER,
        records.iter().map(|r| {
            [
                r.repeat_index.to_string(),
                r.method.name().to_string(),
                fmt_opt(r.lambda_used),
                fmt_f64(r.q_hat),
                fmt_f64(r.marginal_coverage),
                fmt_f64(r.mean_size),
                fmt_f64(r.miscoverage),
                r.flags.label(),
            ]
        }),
    )
}

/// Parses a `records.csv` back into records.
pub fn read_records(path: &Path) -> Result<Vec<RepeatRecord>, CliError> {
    let bad = |line: usize, what: &str| CliError::Config {
        pointer: String::new(),
        message: format!("{}: line {line}: bad {what}", path.display()),
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let field = |k: usize| row.get(k).ok_or_else(|| bad(line, RECORD_HEADER[k]));
        let num = |k: usize| -> Result<f64, CliError> { field(k)?.parse().map_err(|_| bad(line, RECORD_HEADER[k])) };
        let lambda = match field(2)? {
            "" => None,
            _ => Some(num(2)?),
        };
        let flags = field(7)?;
        out.push(RepeatRecord {
            repeat_index: field(0)?.parse().map_err(|_| bad(line, "repeat"))?,
            method: Method::parse(field(1)?).ok_or_else(|| bad(line, "method"))?,
            lambda_used: lambda,
            q_hat: num(3)?,
            marginal_coverage: num(4)?,
            mean_size: num(5)?,
            miscoverage: num(6)?,
            flags: RecordFlags {
                not_converged: flags.split('|').any(|f| f == "not_converged"),
                infeasible_fallback: flags.split('|').any(|f| f == "infeasible_fallback"),
            },
        });
    }
    Ok(out)
}

/// One aggregate as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub lambda: Option<f64>,
    pub repeats: usize,
    pub std: Option<f64>,
    pub std_infinite: bool,
    pub marginal: f64,
    pub size: Option<f64>,
    pub size_infinite: bool,
    pub miscoverage: f64,
    pub improvement_rel: Option<f64>,
    pub improvement_oracle: Option<f64>,
    pub flagged: usize,
}

impl From<&Aggregate> for SummaryRow {
    fn from(a: &Aggregate) -> Self {
        SummaryRow {
            method: a.method.name().into(),
            lambda: a.lambda,
            repeats: a.repeats,
            std: a.std_of_mean_size.and_then(finite),
            std_infinite: a.std_infinite,
            marginal: a.mean_marginal,
            size: finite(a.mean_size),
            size_infinite: a.mean_size == f64::INFINITY,
            miscoverage: a.mean_miscoverage,
            improvement_rel: a.improvement_rel,
            improvement_oracle: a.improvement_oracle,
            flagged: a.flagged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub alpha: f64,
    pub n: usize,
    pub repeats: usize,
    pub aggregates: Vec<SummaryRow>,
}

impl Summary {
    pub fn new(config: &ExperimentConfig, aggregates: &[Aggregate]) -> Self {
        Summary {
            alpha: config.alpha,
            n: config.n,
            repeats: config.repeats,
            aggregates: aggregates.iter().map(SummaryRow::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub tool_version: String,
    pub base_seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub output_paths: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig, started: DateTime<Utc>, outputs: &[PathBuf]) -> Self {
        let stamp = |t: DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::Millis, true);
        RunManifest {
            command: command.into(),
            config_digest: config_digest(config),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            base_seed: config.base_seed,
            started_at: stamp(started),
            finished_at: stamp(Utc::now()),
            output_paths: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }
}

/// Output directory with a list of written files, for the manifest.
pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Reserves `name` under the root, creating parent directories.
    pub fn file(&mut self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn report(&mut self, config: &ExperimentConfig, report: &ExperimentReport) -> Result<(), CliError> {
        let path = self.file("records.csv")?;
        write_records(&path, &report.records)?;
        let path = self.file("summary.json")?;
        write_json(&path, &Summary::new(config, &report.aggregates))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.file(name)?;
        write_json(&path, value)
    }

    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let path = self.file(name)?;
        write_rows(&path, header, rows)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.file(name)?;
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))
    }

    /// Writes `manifest.json` listing everything written so far.
    pub fn finish(mut self, command: &str, config: &ExperimentConfig, started: DateTime<Utc>) -> Result<(), CliError> {
        let path = self.root.join("manifest.json");
        self.written.push(path.clone());
        let rel: Vec<PathBuf> = self
            .written
            .iter()
            .map(|p| p.strip_prefix(&self.root).unwrap_or(p).to_path_buf())
            .collect();
        write_json(&path, &RunManifest::new(command, config, started, &rel))
    }
}

pub const SELECTION_HEADER: [&str; 5] = ["repeat", "lambda", "q_st", "feasible", "chosen"];
pub const LAMBDA_TABLE_HEADER: [&str; 5] = ["lambda", "q_st", "feasible", "grid_residual", "iters"];
pub const CHOSEN_HEADER: [&str; 6] = ["repeat", "lambda_hat", "q_sel", "q_lower", "q_upper", "infeasible_fallback"];

/// Rows of `selection.csv`. No row is chosen when every lambda missed the band.
pub fn selection_rows(selections: &[SelectionRecord]) -> Vec<[String; 5]> {
    selections
        .iter()
        .flat_map(|s| {
            s.table.iter().map(move |row| {
                let chosen = !s.infeasible_fallback && row.lambda == s.lambda_hat;
                [
                    s.repeat_index.to_string(),
                    fmt_f64(row.lambda),
                    fmt_f64(row.q_st),
                    row.feasible.to_string(),
                    chosen.to_string(),
                ]
            })
        })
        .collect()
}

pub fn lambda_table_rows(table: &[LambdaRow]) -> Vec<[String; 5]> {
    table
        .iter()
        .map(|r| {
            [
                fmt_f64(r.lambda),
                fmt_f64(r.q_st),
                r.feasible.to_string(),
                fmt_f64(r.grid_residual),
                r.iters.to_string(),
            ]
        })
        .collect()
}

pub fn chosen_rows(selections: &[SelectionRecord]) -> Vec<[String; 6]> {
    selections
        .iter()
        .map(|s| {
            [
                s.repeat_index.to_string(),
                fmt_f64(s.lambda_hat),
                fmt_f64(s.q_sel),
                fmt_f64(s.q_lower),
                fmt_f64(s.q_upper),
                s.infeasible_fallback.to_string(),
            ]
        })
        .collect()
}
