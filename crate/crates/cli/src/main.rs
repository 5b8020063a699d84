use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use danc_cli::{
    cmd_lemmas, cmd_plotdata, cmd_simulate, cmd_sweep, cmd_verify, RunOptions, EXIT_CONFIG,
};

#[derive(Parser)]
#[command(name = "danc", version, about = "Desired-approximation adaptive neural control simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Directory for traces and reports
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also log the robust gain and smooth-term value per step
    #[arg(long)]
    verbose_trace: bool,
    /// Overrides the scenario seed (verification probes only)
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out_dir.clone(),
            verbose_trace: self.verbose_trace,
            seed: self.seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write the trace
    Simulate(RunArgs),
    /// Run, then check the stability bounds and lemma oracles
    Verify(RunArgs),
    /// Repeat a run over values of one scalar parameter
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// kappa, eps_rho, eta, gamma, sigma, tau, per_axis, h, delta or ridge
        #[arg(long)]
        axis: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Worker threads (default: all cores)
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Split trace columns into (t, value) files
    Plotdata {
        /// Trace CSV written by simulate
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated column names
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run the randomised lemma oracles on their own
    Lemmas {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(&a.config, &a.options()),
        Command::Verify(a) => cmd_verify(&a.config, &a.options()),
        Command::Sweep {
            run,
            axis,
            values,
            jobs,
        } => cmd_sweep(&run.config, axis, values, *jobs, &run.options()),
        Command::Plotdata {
            trace,
            columns,
            out_dir,
        } => cmd_plotdata(trace, columns, out_dir),
        Command::Lemmas { seed } => cmd_lemmas(*seed),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("danc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
