//! `cnot`: solve, evolve, price and verify scenario files.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "cnot",
    version,
    about = "Equilibria of anonymous games via optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the equilibrium by minimizing the variational objective.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Also run the damped best-response iteration for comparison.
        #[arg(long)]
        best_response: bool,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Projected-gradient stopping tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, value_enum)]
        support: Option<Support>,
    },
    /// Run the minimizing movement scheme.
    Jko {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = Init::Uniform)]
        init: Init,
        /// Density CSV for `--init file`.
        #[arg(long)]
        init_file: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Social optimum, corrective taxes and the cost of anarchy.
    Welfare {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Certify a density (default: the computed equilibrium).
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        /// Density CSV to certify instead of solving.
        #[arg(long)]
        density: Option<PathBuf>,
        /// Comma separated subset of eq, purity, ma, dc, deriv.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "eq,purity,ma,dc,deriv")]
        checks: Vec<Check>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve a family of scenarios that differ in one parameter.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Dotted path into the scenario file, e.g. `kernel.kappa`.
        #[arg(long)]
        param: String,
        /// Comma separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Init {
    Uniform,
    #[value(name = "two_bumps", alias = "two-bumps")]
    TwoBumps,
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Support {
    Free,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Check {
    Eq,
    Purity,
    Ma,
    Dc,
    Deriv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are input errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Solve {
            scenario,
            out,
            best_response,
            max_iters,
            tol,
            support,
        } => commands::solve(
            &scenario,
            &out,
            &commands::SolveOverrides {
                best_response,
                max_iters,
                tol,
                support,
            },
        ),
        Command::Jko {
            scenario,
            tau,
            steps,
            init,
            init_file,
            out,
        } => commands::jko(&scenario, tau, steps, init, init_file.as_deref(), &out),
        Command::Welfare { scenario, out } => commands::welfare(&scenario, &out),
        Command::Verify {
            scenario,
            density,
            checks,
            out,
        } => commands::verify(&scenario, density.as_deref(), &checks, &out),
        Command::Sweep {
            scenario,
            param,
            values,
            out,
        } => commands::sweep(&scenario, &param, &values, &out),
    };
    match outcome {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::NumericalFailure(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            let code = commands::exit_code(&e);
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
