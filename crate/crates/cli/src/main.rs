use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualls_cli::{checkpoint, experiment, plots, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dualls", version, about = "Run and report dual-buffer continual-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (trainer, budget, seed) combination in a config.
    Run {
        config: PathBuf,
        /// Overrides the config's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render SVG figures from an experiment directory.
    Plot {
        records_dir: PathBuf,
        /// Figure kinds (curves, matrix, composition, loss); all by default.
        #[arg(long = "kind")]
        kinds: Vec<String>,
    },
    /// Summarise the replay buffers stored in a checkpoint.
    InspectBuffer { checkpoint: PathBuf },
    /// Parse and validate a config, then print its hash.
    ValidateConfig { config: PathBuf },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, workers } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let records = experiment::run_experiment(&cfg)?;
            let out = cfg.resolved_output_dir();
            for s in experiment::summarize(&records) {
                let bwt = s
                    .fde_bwt
                    .map(|(m, sd)| format!("{m:.3} ± {sd:.3}"))
                    .unwrap_or_else(|| "n/a".into());
                println!(
                    "{:8} budget {:5} runs {:2}  FDE-AVE {:.3} ± {:.3}  FDE-BWT {}  MR-AVE {:.3}",
                    s.trainer.to_string(),
                    s.budget,
                    s.runs,
                    s.fde_ave.0,
                    s.fde_ave.1,
                    bwt,
                    s.mr_ave.0
                );
            }
            println!("outputs in {}", out.display());
            let failed: Vec<_> = records.iter().filter(|r| r.error.is_some()).collect();
            for r in &failed {
                eprintln!("run {} failed: {}", r.run_id, r.error.as_deref().unwrap_or_default());
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!("{} of {} runs failed", failed.len(), records.len())))
            }
        }
        Command::Plot { records_dir, kinds } => {
            let report = plots::emit_plots(&records_dir, &kinds)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            println!("{} files written", report.written.len());
            Ok(())
        }
        Command::InspectBuffer { checkpoint: path } => {
            let ck = checkpoint::load(&path)?;
            print!("{}", checkpoint::describe(&ck));
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            println!("ok {}", cfg.hash());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
