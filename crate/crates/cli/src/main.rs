use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gffperc_cli::{rerun, run, Experiment, RunConfig};

#[derive(Parser)]
#[command(name = "gffperc", version, about = "Level-set percolation experiments for the lattice Gaussian free field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; unset keys take the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory of run directories.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    /// Allow K >= 4 in coarse-graining (outputs are labelled relaxed).
    #[arg(long)]
    relaxed_k: bool,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Subcommand)]
enum Command {
    /// Line capacities cap(T_N) over a list of sizes.
    CapacitySweep(Common),
    /// Draw and store field samples.
    FieldSample(Common),
    /// One-arm probabilities over (h, N) and the -log p vs N/log N fit.
    OneArmScan(Common),
    /// Importance-sampling estimates under the capacity tilt.
    TiltEstimate(Common),
    /// Coarse-grain random crossing paths and verify the collections.
    CoarseGrainDemo(Common),
    /// Crossing curves and a finite-size bracket for the critical level.
    HstarEstimate(Common),
    /// Check that E or F holds on samples where the one-arm event holds.
    EfInclusion(Common),
    /// Re-run a manifest into a new directory and compare output digests.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the default config of an experiment.
    Defaults { experiment: String },
}

const EXIT_INCOMPLETE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (exp, common) = match cli.command {
        Command::CapacitySweep(c) => (Experiment::CapacitySweep, c),
        Command::FieldSample(c) => (Experiment::FieldSample, c),
        Command::OneArmScan(c) => (Experiment::OneArmScan, c),
        Command::TiltEstimate(c) => (Experiment::TiltEstimate, c),
        Command::CoarseGrainDemo(c) => (Experiment::CoarseGrainDemo, c),
        Command::HstarEstimate(c) => (Experiment::HstarEstimate, c),
        Command::EfInclusion(c) => (Experiment::EfInclusion, c),
        Command::Rerun { manifest, out, workers } => {
            return match rerun(&manifest, out, workers) {
                Ok((o, differ)) => {
                    println!("rerun written to {}", o.dir.display());
                    if differ.is_empty() {
                        println!("all output digests identical");
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("digests differ: {}", differ.join(", "));
                        ExitCode::from(EXIT_INCOMPLETE)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
        Command::Defaults { experiment } => {
            return match experiment.parse::<Experiment>() {
                Ok(e) => {
                    print!("{}", RunConfig::defaults(e).resolve(e).expect("defaults").to_toml());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_USAGE)
                }
            };
        }
    };
    let base = match &common.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        },
        None => RunConfig::default(),
    };
    let mut cfg = match base.resolve(exp) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = common.out {
        cfg.out = Some(o);
    }
    if common.relaxed_k {
        cfg.relaxed_k = Some(true);
    }
    if let Err(e) = cfg.validate() {
        eprint!("{e}");
        return ExitCode::from(EXIT_USAGE);
    }
    match run(&cfg, common.workers) {
        Ok(o) => {
            print!("{}", o.summary);
            println!("run directory: {}", o.dir.display());
            if o.manifest.complete {
                ExitCode::SUCCESS
            } else {
                eprintln!("run incomplete: failed tasks or checks, see manifest.json");
                ExitCode::from(EXIT_INCOMPLETE)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INCOMPLETE)
        }
    }
}
