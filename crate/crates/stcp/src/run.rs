//! Parallel repeat pool and the sweep driver.

use rayon::prelude::*;
use stcp_core::simlab::{run_repeat, Aggregate, ExperimentConfig, ExperimentReport, Method};

use crate::error::CliError;
use crate::output::fmt_f64;

/// Runs every repeat on a pool of `threads` workers (rayon's default when
/// `None`). Results are folded in repeat order, so the report does not
/// depend on the thread count.
pub fn run_report(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport, CliError> {
    config.validate().map_err(|e| CliError::Config {
        pointer: String::new(),
        message: e.to_string(),
    })?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Pool(e.to_string()))?;
    let outputs = pool.install(|| {
        (0..config.repeats)
            .into_par_iter()
            .map(|r| run_repeat(config, r))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(ExperimentReport::from_outputs(config, outputs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Lambda,
    N,
    M,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Lambda => "lambda",
            Axis::N => "n",
            Axis::M => "m",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lambda" => Some(Axis::Lambda),
            "n" => Some(Axis::N),
            "m" => Some(Axis::M),
            _ => None,
        }
    }
}

/// Checks sweep values: strictly ascending, and nonnegative (lambda) or
/// positive integers (n, m).
pub fn check_values(axis: Axis, values: &[f64]) -> Result<(), CliError> {
    let usage = |m: String| CliError::Usage(m);
    if values.is_empty() {
        return Err(usage("--values must not be empty".into()));
    }
    if let Some(w) = values.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(usage(format!("--values must be strictly ascending ({} then {})", w[0], w[1])));
    }
    for &v in values {
        let ok = match axis {
            Axis::Lambda => v.is_finite() && v >= 0.0,
            Axis::N | Axis::M => v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64,
        };
        if !ok {
            return Err(usage(format!("invalid {} value {v}", axis.name())));
        }
    }
    Ok(())
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub method: String,
    pub std: f64,
    pub marginal: f64,
    pub size: f64,
    pub miscoverage: f64,
}

impl SweepRow {
    fn new(axis_value: f64, method: String, a: &Aggregate) -> Self {
        SweepRow {
            axis_value,
            method,
            std: a.std_of_mean_size.unwrap_or(f64::NAN),
            marginal: a.mean_marginal,
            size: a.mean_size,
            miscoverage: a.mean_miscoverage,
        }
    }

    pub fn fields(&self) -> [String; 6] {
        [
            fmt_f64(self.axis_value),
            self.method.clone(),
            fmt_f64(self.std),
            fmt_f64(self.marginal),
            fmt_f64(self.size),
            fmt_f64(self.miscoverage),
        ]
    }
}

pub const SWEEP_HEADER: [&str; 6] = ["axis_value", "method", "std", "marginal", "size", "miscoverage"];

/// Runs the sweep and returns its rows in (value, configured method) order.
///
/// A lambda sweep is one experiment whose grid is `{0} ∪ values`; methods
/// that do not depend on lambda repeat their row at every value. An n or m
/// sweep runs one experiment per value, and lists `stcp` once per grid
/// lambda as `stcp[lambda=..]`.
pub fn sweep(
    config: &ExperimentConfig,
    axis: Axis,
    values: &[f64],
    threads: Option<usize>,
) -> Result<Vec<SweepRow>, CliError> {
    check_values(axis, values)?;
    let mut rows = Vec::new();
    match axis {
        Axis::Lambda => {
            let mut c = config.clone();
            c.lambda_grid = values.to_vec();
            if values[0] != 0.0 {
                c.lambda_grid.insert(0, 0.0);
            }
            let report = run_report(&c, threads)?;
            for &v in values {
                for &m in &c.methods {
                    let lambda = (m == Method::Stcp).then_some(v);
                    let a = report.find(m, lambda).expect("every configured method is aggregated");
                    rows.push(SweepRow::new(v, m.name().into(), a));
                }
            }
        }
        Axis::N | Axis::M => {
            for &v in values {
                let mut c = config.clone();
                match axis {
                    Axis::N => c.n = v as usize,
                    _ => c.m = v as usize,
                }
                let report = run_report(&c, threads)?;
                for &m in &c.methods {
                    for a in report.aggregates.iter().filter(|a| a.method == m) {
                        let label = match a.lambda {
                            Some(l) if m == Method::Stcp => format!("stcp[lambda={}]", fmt_f64(l)),
                            _ => m.name().into(),
                        };
                        rows.push(SweepRow::new(v, label, a));
                    }
                }
            }
        }
    }
    Ok(rows)
}

/// Gnuplot data: one block per method, separated by two blank lines so
/// that `index i` selects method `i`.
pub fn gnuplot_data(axis: Axis, rows: &[SweepRow]) -> (String, Vec<String>) {
    let mut methods: Vec<String> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut out = String::new();
    for (i, m) in methods.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("# method {m}\n# {} std marginal size miscoverage\n", axis.name()));
        for r in rows.iter().filter(|r| &r.method == m) {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                fmt_f64(r.axis_value),
                fmt_f64(r.std),
                fmt_f64(r.marginal),
                fmt_f64(r.size),
                fmt_f64(r.miscoverage)
            ));
        }
    }
    (out, methods)
}

pub fn gnuplot_script(axis: Axis, methods: &[String]) -> String {
    let mut s = String::new();
    s.push_str("# gnuplot -p sweep.gp\n");
    s.push_str("set datafile missing 'nan'\n");
    s.push_str(&format!("set xlabel '{}'\n", axis.name()));
    if axis == Axis::Lambda {
        s.push_str("set logscale x\n");
    }
    s.push_str("set key outside\nset multiplot layout 1,2\n");
    for (col, title) in [(2, "Std of set size"), (3, "marginal coverage")] {
        s.push_str(&format!("set title '{title}'\nplot "));
        let series: Vec<String> = methods
            .iter()
            .enumerate()
            .map(|(i, m)| format!("'sweep.dat' index {i} using 1:{col} with linespoints title '{m}'"))
            .collect();
        s.push_str(&series.join(", \\\n     "));
        s.push('\n');
    }
    s.push_str("unset multiplot\n");
    s
}
