use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sharpmin::checkpoint::load_checkpoint;
use sharpmin::commands::{
    diagnose_params, hessian_report, parse_variant, prune_csv, prune_eval, rho_sweep, rmt_demo, sweep_csv, train,
    RunStatus, DEFAULT_RHOS,
};
use sharpmin::{apply_thread_limit, RunConfig, EXIT_NAN};
use sharpmin_core::optim::SamVariant;
use sharpmin_core::{Error, ParamVector, Result};

#[derive(Parser)]
#[command(name = "sharpmin", version, about = "SAM-family training and curvature diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics.jsonl, summary.json and checkpoint.bin.
    Train(Common),
    /// Sharpness decomposition on a checkpoint, or during a fresh run.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Top Hessian eigenvalue and Hessian/Gauss-Newton traces.
    HessianStats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One run per (variant, rho); CSV table.
    RhoSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        rhos: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "sam,functional_sam")]
        variants: Vec<String>,
    },
    /// Eval loss after global magnitude pruning; CSV table.
    PruneEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        sparsities: Vec<f64>,
    },
    /// Random-matrix check of the preconditioning argument.
    RmtDemo {
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.run.output_dir = out.clone();
    }
    let dir = cfg.run.output_dir.clone();
    Ok((cfg, dir))
}

fn checkpoint(cfg: &RunConfig, path: &Path) -> Result<(u64, ParamVector<f32>)> {
    let (header, params) = load_checkpoint(path, &cfg.model, &cfg.model_hash())?;
    Ok((header.step, params))
}

/// Prints `text` and, with `out` set, also stores it under `out/name`.
fn emit(text: &str, out: Option<&Path>, name: &str) -> Result<()> {
    print!("{text}");
    if let Some(dir) = out {
        let io = |source| Error::Io {
            path: dir.join(name),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join(name), text).map_err(io)?;
    }
    Ok(())
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn run(command: Command) -> Result<RunStatus> {
    match command {
        Command::Train(common) => {
            let (cfg, dir) = resolve(&common)?;
            let outcome = train(&cfg, Some(&dir))?;
            eprintln!(
                "{} steps, final eval loss {:.6}, artifacts in {}",
                outcome.summary.steps_completed,
                outcome.summary.final_eval_loss,
                dir.display()
            );
            Ok(outcome.summary.status)
        }
        Command::Diagnose { common, checkpoint: ckpt } => {
            let (mut cfg, dir) = resolve(&common)?;
            match ckpt {
                Some(path) => {
                    let (step, params) = checkpoint(&cfg, &path)?;
                    let record = diagnose_params(&cfg, &params, step)?;
                    let line = serde_json::to_string(&record).expect("record serializes") + "\n";
                    emit(&line, common.out.as_deref(), "diagnostics.jsonl")?;
                    Ok(RunStatus::Ok)
                }
                None => {
                    if cfg.run.diag_every == 0 {
                        return Err(Error::Config("diagnose needs run.diag_every >= 1".into()));
                    }
                    cfg.run.output_dir = dir.clone();
                    Ok(train(&cfg, Some(&dir))?.summary.status)
                }
            }
        }
        Command::HessianStats { common, checkpoint: path } => {
            let (cfg, _) = resolve(&common)?;
            let (step, params) = checkpoint(&cfg, &path)?;
            let report = hessian_report(&cfg, &params, step)?;
            if !report.stats.lambda_max.converged {
                eprintln!("warning: power iteration did not converge");
            }
            emit(&json(&report), common.out.as_deref(), "hessian_stats.json")?;
            Ok(RunStatus::Ok)
        }
        Command::RhoSweep { common, rhos, variants } => {
            let (cfg, dir) = resolve(&common)?;
            let rhos = rhos.unwrap_or_else(|| DEFAULT_RHOS.to_vec());
            let variants = variants
                .iter()
                .map(|v| parse_variant(v.trim()))
                .collect::<Result<Vec<SamVariant>>>()?;
            let rows = rho_sweep(&cfg, &rhos, &variants, Some(&dir))?;
            emit(&sweep_csv(&rows), Some(&dir), "sweep.csv")?;
            Ok(RunStatus::Ok)
        }
        Command::PruneEval {
            common,
            checkpoint: path,
            sparsities,
        } => {
            let (cfg, _) = resolve(&common)?;
            let (_, params) = checkpoint(&cfg, &path)?;
            let rows = prune_eval(&cfg, &params, &sparsities)?;
            emit(&prune_csv(&rows), common.out.as_deref(), "prune.csv")?;
            Ok(RunStatus::Ok)
        }
        Command::RmtDemo { n, trials, seed, out } => {
            let report = rmt_demo(n, trials, seed)?;
            emit(&json(&report), out.as_deref(), "rmt_demo.json")?;
            Ok(RunStatus::Ok)
        }
    }
}

fn main() -> ExitCode {
    apply_thread_limit();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(RunStatus::Ok) => ExitCode::SUCCESS,
        Ok(RunStatus::Nan) => {
            eprintln!("error: non-finite loss; last good checkpoint kept");
            ExitCode::from(EXIT_NAN as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
