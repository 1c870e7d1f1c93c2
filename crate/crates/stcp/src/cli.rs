use std::path::PathBuf;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use stcp_core::simlab::{ExperimentConfig, Method};

use crate::config::load_config;
use crate::error::CliError;
use crate::output::{chosen_rows, lambda_table_rows, selection_rows, OutDir, CHOSEN_HEADER, LAMBDA_TABLE_HEADER, SELECTION_HEADER};
use crate::run::{check_values, gnuplot_data, gnuplot_script, run_report, sweep, Axis, SWEEP_HEADER};

#[derive(Debug, Parser)]
#[command(name = "stcp", version, about = "Stable conformal prediction experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run all repeats and write records.csv, summary.json and manifest.json.
    Simulate(Common),
    /// Repeat the experiment along one axis and write plot-ready sweep data.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// lambda, n or m
        #[arg(long)]
        axis: String,
        /// Strictly ascending, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Run the data-driven lambda selection and write every per-lambda table.
    SelectLambda(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides base_seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "STCP_THREADS")]
    pub threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            config.base_seed = seed;
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        Ok(config)
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let started = Utc::now();
    match cli.command {
        Command::Simulate(common) => {
            let config = common.load()?;
            let report = run_report(&config, common.threads)?;
            let mut out = OutDir::create(&common.out)?;
            out.report(&config, &report)?;
            out.finish("simulate", &config, started)
        }
        Command::Sweep { common, axis, values } => {
            let axis = Axis::parse(&axis).ok_or_else(|| CliError::Usage(format!("unknown axis {axis:?}; expected lambda, n or m")))?;
            check_values(axis, &values)?;
            let config = common.load()?;
            let rows = sweep(&config, axis, &values, common.threads)?;
            let mut out = OutDir::create(&common.out)?;
            out.csv("sweep.csv", &SWEEP_HEADER, rows.iter().map(|r| r.fields()))?;
            let (data, methods) = gnuplot_data(axis, &rows);
            out.text("sweep.dat", &data)?;
            out.text("sweep.gp", &gnuplot_script(axis, &methods))?;
            out.finish(&format!("sweep --axis {}", axis.name()), &config, started)
        }
        Command::SelectLambda(common) => {
            let mut config = common.load()?;
            config.methods = vec![Method::StcpSel];
            config.full_lambda_table = true;
            let report = run_report(&config, common.threads)?;
            let mut out = OutDir::create(&common.out)?;
            out.report(&config, &report)?;
            out.csv("selection.csv", &SELECTION_HEADER, selection_rows(&report.selections))?;
            out.csv("chosen.csv", &CHOSEN_HEADER, chosen_rows(&report.selections))?;
            let width = config.repeats.saturating_sub(1).to_string().len();
            for s in &report.selections {
                let name = format!("lambda_tables/repeat_{:0width$}.csv", s.repeat_index);
                out.csv(&name, &LAMBDA_TABLE_HEADER, lambda_table_rows(&s.table))?;
            }
            out.finish("select-lambda", &config, started)
        }
    }
}
