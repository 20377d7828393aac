use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use egodoa_cli::commands;
use egodoa_cli::{exit_code, Overrides, Preset, RunConfig};

#[derive(Parser)]
#[command(name = "egodoa", version, about = "Egocentric speaker localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML or JSON run config (`.json` extension selects JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives the deterministic single-threaded mode.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate scenes, audio, frames and the manifest.
    Simulate,
    /// Compute GCC-PHAT and patch features into the cache.
    Featurize,
    /// Train every configured model variant.
    Train,
    /// Score checkpoints and baselines on the test split.
    Evaluate,
    /// Emit plot-ready CSVs from evaluation and training outputs.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let ov = Overrides {
        preset: cli.preset,
        seed: cli.seed,
        workers: cli.workers,
        out_dir: None,
    };
    let res = RunConfig::load(cli.config.as_deref(), &ov).and_then(|c| {
        let cfg = c.with_env();
        cfg.validate()?;
        match cli.command {
            Command::Simulate => commands::simulate(&cfg).map(|s| {
                println!(
                    "scenes {} chunks {} (train {}, val {}, test {}) in-FOV fraction {:.4}",
                    s.scenes, s.chunks, s.train_chunks, s.val_chunks, s.test_chunks, s.in_fov_fraction
                )
            }),
            Command::Featurize => commands::featurize(&cfg).map(|s| {
                println!(
                    "computed {} reused {} stale {} gcc {:?} patches {:?}",
                    s.computed, s.reused, s.stale, s.gcc_shape, s.patch_shape
                )
            }),
            Command::Train => commands::train(&cfg).map(|runs| {
                for r in runs {
                    println!(
                        "{}: {} epochs, best epoch {:?}, best val AE {:?}{}",
                        r.dir.display(),
                        r.state.epochs_done,
                        r.state.best_epoch,
                        r.state.best_val_ae,
                        if r.state.stopped_early { " (early stop)" } else { "" }
                    )
                }
            }),
            Command::Evaluate => commands::evaluate(&cfg).map(|s| {
                println!("method,subset,count,accuracy,mean_ae");
                for m in &s.methods {
                    for r in m.csv_rows() {
                        println!("{}", r.join(","));
                    }
                }
            }),
            Command::Report => commands::report(&cfg).map(|r| {
                for f in r.files {
                    println!("{}", f.display());
                }
            }),
        }
    });
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
