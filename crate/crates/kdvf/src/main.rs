use clap::{Parser, Subcommand, ValueEnum};
use kdvf::commands::{equilibrium_command, kernel_command, EquilibriumArgs};
use kdvf::scenario::{Gain, Model};
use kdvf::suites::{run_suites, SUITES};
use kdvf::{run_scenario, Status};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kdvf", version, about = "Observer design and integral regulation for the KdV equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Linear,
    Nonlinear,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write <name>.csv and <name>.report.txt.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a named verification suite, or `all`.
    Verify {
        suite: String,
        /// Directory for the per-suite report files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve the P and Q kernels and export them as CSV.
    Kernel {
        #[arg(long)]
        lambda: f64,
        #[arg(long = "L")]
        l: f64,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the closed-loop equilibrium for constant disturbances.
    Equilibrium {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long = "L", default_value_t = 1.5)]
        l: f64,
        #[arg(long, default_value_t = 150)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Integrator gain, or `auto` for half the admissible bound.
        #[arg(long, default_value = "auto")]
        k: String,
        #[arg(long, default_value_t = 0.0)]
        r: f64,
        /// Distributed disturbance descriptor, e.g. "sine 0.05 1".
        #[arg(long, default_value = "zero")]
        d: String,
        #[arg(long, default_value_t = 0.0)]
        d2: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit(status: Status) -> ExitCode {
    ExitCode::from(status.code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit(Status::Config) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { scenario, out } => {
            let o = run_scenario(&scenario, &out);
            print!("{}", o.text);
            exit(o.status)
        }
        Command::Verify { suite, out } => {
            let names: Vec<&str> = if suite == "all" {
                SUITES.to_vec()
            } else if let Some(n) = SUITES.iter().find(|s| **s == suite) {
                vec![*n]
            } else {
                eprintln!("unknown suite \"{suite}\"; expected one of: all, {}", SUITES.join(", "));
                return exit(Status::Config);
            };
            let reports = run_suites(&names, Some(&out));
            let mut all = true;
            for r in &reports {
                print!("{}", r.render());
                all &= r.passed();
            }
            exit(if all { Status::Pass } else { Status::ChecksFailed })
        }
        Command::Kernel { lambda, l, n, out } => {
            let r = kernel_command(lambda, l, n, &out);
            print!("{}", r.text);
            exit(r.status)
        }
        Command::Equilibrium { model, l, n, lambda, k, r, d, d2, out } => {
            let k = if k == "auto" {
                Gain::Auto
            } else {
                match k.parse::<f64>() {
                    Ok(v) => Gain::Value(v),
                    Err(_) => {
                        eprintln!("--k: expected a number or \"auto\", got \"{k}\"");
                        return exit(Status::Config);
                    }
                }
            };
            let model = match model {
                ModelArg::Linear => Model::Linear,
                ModelArg::Nonlinear => Model::Nonlinear,
            };
            let args = EquilibriumArgs { model, l, n, lambda, k, r, d: &d, d2, out: out.as_deref() };
            let res = equilibrium_command(&args);
            print!("{}", res.text);
            exit(res.status)
        }
    }
}
