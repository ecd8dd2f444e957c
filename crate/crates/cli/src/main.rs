use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cutdarcy::experiments::{registry, registry_names, run_experiment, ExperimentError};
use cutdarcy::{BcMode, Stabilization};

#[derive(Parser)]
#[command(name = "cutdarcy", about = "Unfitted Raviart-Thomas experiments for Darcy flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a registered experiment.
    Run(RunArgs),
    /// List registered experiments.
    List,
}

#[derive(clap::Args)]
struct RunArgs {
    experiment: String,
    #[arg(long = "degree")]
    degrees: Vec<usize>,
    #[arg(long = "nx")]
    refinements: Vec<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    stab: Option<StabArg>,
    #[arg(long, value_enum)]
    bc: Option<BcArg>,
    #[arg(long)]
    nonsymmetric: bool,
    /// Multiplies the Nitsche weight `1/h`.
    #[arg(long)]
    gamma_scale: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    dump_matrix: bool,
    #[arg(long)]
    dump_classification: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StabArg {
    None,
    Jump,
    Projection,
}

#[derive(Clone, Copy, ValueEnum)]
enum BcArg {
    Mixed,
    Neumann,
    Dirichlet,
}

const EXIT_SPEC: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn run(args: RunArgs) -> ExitCode {
    let mut spec = match registry(&args.experiment) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}; known experiments: {}", registry_names().join(", "));
            return ExitCode::from(EXIT_SPEC);
        }
    };
    if !args.degrees.is_empty() {
        spec.degrees = args.degrees;
    }
    if !args.refinements.is_empty() {
        spec.refinements = args.refinements;
    }
    if let Some(e) = args.eps {
        spec.set_epsilon(e);
    }
    if let Some(s) = args.stab {
        spec.stabilization = match s {
            StabArg::None => Stabilization::None,
            StabArg::Jump => Stabilization::JumpGhostPenalty,
            StabArg::Projection => Stabilization::ProjectionGhostPenalty,
        };
    }
    if let Some(b) = args.bc {
        spec.bc = match b {
            BcArg::Mixed => BcMode::MixedNeumannDirichlet,
            BcArg::Neumann => BcMode::PureNeumann,
            BcArg::Dirichlet => BcMode::PureDirichlet,
        };
    }
    if args.nonsymmetric {
        spec.symmetric = false;
    }
    if let Some(g) = args.gamma_scale {
        spec.nitsche_scale = g;
    }
    spec.output = Some(args.out.clone());
    spec.dump_matrix = args.dump_matrix;
    spec.dump_classification = args.dump_classification;

    match run_experiment(&spec) {
        Ok(out) => {
            for r in &out.reports {
                println!("{}", args.out.join(format!("{}.csv", r.name)).display());
            }
            if out.numerical_failure {
                eprintln!("error: a stabilized run failed or exceeded the residual tolerance");
                ExitCode::from(EXIT_NUMERICAL)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(ExperimentError::Spec(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_SPEC)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for n in registry_names() {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => run(args),
    }
}
