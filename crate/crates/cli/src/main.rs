use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pwa_hier_core::pipeline::{self, RunOptions, SweepParam, Verdict};
use pwa_hier_core::{Error, Execution};

/// Hierarchical control of piecewise-affine systems: relation solving,
/// certificate synthesis and closed-loop simulation.
#[derive(Debug, Parser)]
#[command(name = "pwa-hier", version)]
struct Cli {
    /// Run every stage on a single thread, overriding the model setting.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve relations and verify certificates without simulating.
    Check { model: PathBuf },
    /// Simulate the scenario and write trajectory, bounds and report files.
    Run {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write two-column series for gnuplot.
        #[arg(long)]
        plot_data: bool,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Draw the initial tracking error from the scenario disc.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rerun the scenario for several values of one parameter.
    Sweep {
        model: PathBuf,
        /// disturbance-amplitude, kappa or step
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PWA_HIER_LOG", "error"))
        .format_timestamp(None)
        .init();
}

fn verdict_code(v: Verdict) -> ExitCode {
    match v {
        Verdict::Pass => ExitCode::SUCCESS,
        Verdict::Fail => ExitCode::from(1),
    }
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    let exec = cli.sequential.then_some(Execution::Sequential);
    match cli.command {
        Command::Check { model } => {
            let report = pipeline::cmd_check(&model, exec)?;
            print!("{}", report.render());
            Ok(verdict_code(report.verdict))
        }
        Command::Run {
            model,
            out,
            plot_data,
            t_end,
            step,
            seed,
        } => {
            let opts = RunOptions {
                t_end,
                step,
                seed,
                ..RunOptions::default()
            };
            let (report, _) = pipeline::cmd_run(&model, &out, &opts, plot_data, exec)?;
            print!("{}", report.render());
            Ok(verdict_code(report.verdict))
        }
        Command::Sweep {
            model,
            param,
            values,
        } => {
            let param: SweepParam = param.parse()?;
            let rows = pipeline::cmd_sweep(&model, param, &values, exec)?;
            print!("{}", pipeline::render_sweep(param, &rows));
            let all_pass = rows.iter().all(|r| r.verdict == Verdict::Pass);
            Ok(verdict_code(if all_pass { Verdict::Pass } else { Verdict::Fail }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
