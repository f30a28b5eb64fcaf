use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ac_spectra::harness::report::Stage;
use ac_spectra::harness::{run_pipeline, verify_suite, ExperimentConfig, Level, RunOptions};

#[derive(Parser)]
#[command(name = "ac-spectra", version, about = "Allen-Cahn critical points, Morse spectra and limit interfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (falls back to AC_SPECTRA_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's `output`, then `out/<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `quick` caps grids at 128 per axis in 2-D and 32 in 3-D.
    #[arg(long, default_value = "full")]
    level: Level,
    /// Reuse the field dumps of an earlier run instead of solving.
    #[arg(long)]
    from: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Critical points along the schedule, with field dumps.
    Solve(RunArgs),
    /// Solve, then low spectra on every region.
    Spectrum(RunArgs),
    /// Solve, spectra and diffuse-varifold diagnostics.
    Varifold(RunArgs),
    /// All stages including the limit interface and verdicts.
    Limit(RunArgs),
    /// Full pipeline with plot data.
    Run(RunArgs),
    /// The acceptance suite.
    Verify {
        #[arg(long, default_value = "quick")]
        level: Level,
        #[arg(long, default_value = "verify-out")]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn threads(cli: Option<usize>) -> Option<usize> {
    cli.or_else(|| std::env::var("AC_SPECTRA_THREADS").ok()?.parse().ok()).filter(|&n| n > 0)
}

fn run(args: RunArgs, until: Stage, plots: bool) -> Result<(), String> {
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| e.to_string())?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if args.level == Level::Quick {
        let (c2, c3) = Level::Quick.caps();
        config = config.capped(if config.grid.dim == 2 { c2 } else { c3 });
    }
    let out = args.out.or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out").join(&config.name));
    let opts = RunOptions { until, resume_from: args.from, plots, fault: None };
    let report = run_pipeline(&config, &out, &opts).map_err(|e| format!("{e} (partial report in {})", out.display()))?;
    for r in &report.rows {
        println!("eps {:<8} index {} energy {:.6} residual {:.2e}", r.epsilon, r.index, r.energy, r.residual);
    }
    if until == Stage::Limit {
        let v = &report.verdicts;
        for (region, per_p) in &v.spectral_lower_bound {
            let marks: Vec<String> = per_p.iter().map(|p| format!("{:?}", p.mark).to_uppercase()).collect();
            println!("spectral lower bound [{region}]: {}", marks.join(" "));
        }
        println!("index bound: {:?} (negatives {:?}, k = {})", v.index_bound.mark, v.index_bound.negatives, v.index_bound.k);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = threads(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Solve(a) => run(a, Stage::Solve, false),
        Command::Spectrum(a) => run(a, Stage::Spectrum, false),
        Command::Varifold(a) => run(a, Stage::Varifold, false),
        Command::Limit(a) => run(a, Stage::Limit, false),
        Command::Run(a) => run(a, Stage::Limit, true),
        Command::Verify { level, out, seed } => match verify_suite(level, seed, &out) {
            Ok(rep) => {
                for o in &rep.outcomes {
                    println!("{o}");
                }
                match rep.first_failure() {
                    Some(f) => Err(format!("verification failed at {} ({})", f.id, f.title)),
                    None => Ok(()),
                }
            }
            Err(e) => Err(e.to_string()),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
