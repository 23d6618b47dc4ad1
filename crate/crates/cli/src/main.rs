//! `sabr`: drives the zero-shot pipeline stage by stage or end to end.
//!
//! Exit codes: 0 success, 2 config error (including bad arguments),
//! 3 data error, 4 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use sabr_core::pipeline::{
    run_ablation_unlabeled, AblationRow, Manifest, PipelineConfig, Runner, Stage,
};
use sabr_core::{ErrorKind, Result, SabrError};

#[derive(Parser, Debug)]
#[command(
    name = "sabr",
    version,
    about = "Semantically aligned, bias-reducing zero-shot learning"
)]
struct Cli {
    /// TOML config; without one the desk preset on synthetic data is used.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Run directory for checkpoints and reports.
    #[arg(long, global = true, value_name = "DIR", default_value = "sabr-run")]
    out: PathBuf,
    /// With `run`: resume at this stage using artifacts already in --out.
    #[arg(long, global = true, value_name = "NAME")]
    from_stage: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn the latent space.
    TrainLatent,
    /// Train the seen-class GAN, with early stopping when enabled.
    TrainSeenGan,
    /// Train the unseen-class GAN under the weak transfer constraint.
    TrainUnseenGan,
    /// Cross-validate the seen-GAN epoch on its own.
    SelectEpoch,
    /// Cross-validate the transfer weight on its own.
    SweepOmega,
    /// Generate synthetic unseen-class latent rows.
    Synthesize,
    /// Train the final classifiers and write ZSL and GZSL reports.
    Evaluate,
    /// Run every stage of the configured mode.
    Run,
    /// Repeat the transductive pipeline on subsampled unlabeled data.
    AblateUnlabeled {
        /// Comma-separated fractions in (0, 1].
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.25, 0.5, 1.0])]
        fractions: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Runtime => 4,
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SABR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        SabrError::Config(format!(
            "SABR_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| SabrError::Config(format!("cannot size the worker pool: {e}")))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    match &cli.config {
        Some(path) => PipelineConfig::load(path, cli.seed),
        None => PipelineConfig::from_toml_str("", cli.seed),
    }
}

/// A stage that reads artifacts from `out` must not mix them with a
/// different config.
fn check_resume(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    if !out.join("manifest.json").is_file() {
        return Ok(());
    }
    let manifest = Manifest::load(out)?;
    if manifest.config_sha256 != cfg.hash() {
        return Err(SabrError::Config(format!(
            "{} holds artifacts from a different config (hash {}); use a fresh --out",
            out.display(),
            manifest.config_sha256
        )));
    }
    Ok(())
}

fn single_stage(runner: &mut Runner, stage: Stage) -> Result<()> {
    let result = runner.run_stage(stage);
    runner.write_manifest(result.as_ref().err().map(|e| e.to_string()).as_deref())?;
    if let Some(summary) = result? {
        print_results(
            runner.out_dir(),
            summary.selected_epoch,
            summary.selected_omega,
        )?;
    }
    Ok(())
}

fn print_results(out: &Path, epoch: Option<usize>, omega: Option<f64>) -> Result<()> {
    let path = out.join("results.txt");
    let table = fs::read_to_string(&path).map_err(|e| SabrError::io(&path, e))?;
    print!("{table}");
    if let Some(e) = epoch {
        println!("selected epoch: {e}");
    }
    if let Some(w) = omega {
        println!("omega: {w}");
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    init_threads()?;
    let from = cli.from_stage.as_deref().map(Stage::parse).transpose()?;
    if from.is_some() && !matches!(cli.command, Command::Run) {
        return Err(SabrError::Config(
            "--from-stage only applies to `run`".into(),
        ));
    }
    let cfg = load_config(cli)?;

    if let Command::AblateUnlabeled { fractions, trials } = &cli.command {
        let (rows, _) = run_ablation_unlabeled(&cfg, fractions, *trials, &cli.out)?;
        print!("{}", AblationRow::csv(&rows));
        return Ok(());
    }

    let resumes = match &cli.command {
        Command::Run => from.is_some_and(|s| s != Stage::Latent),
        Command::TrainLatent | Command::SelectEpoch => false,
        _ => true,
    };
    if resumes {
        check_resume(&cfg, &cli.out)?;
    }
    let mut runner = Runner::new(cfg, &cli.out)?;
    match &cli.command {
        Command::TrainLatent => single_stage(&mut runner, Stage::Latent),
        Command::TrainSeenGan => single_stage(&mut runner, Stage::SeenGan),
        Command::TrainUnseenGan => single_stage(&mut runner, Stage::UnseenGan),
        Command::Synthesize => single_stage(&mut runner, Stage::Synthesize),
        Command::Evaluate => single_stage(&mut runner, Stage::Evaluate),
        Command::SelectEpoch => {
            let sweep = runner.select_epoch()?;
            runner.write_manifest(None)?;
            println!("selected epoch: {}", sweep.selected);
            Ok(())
        }
        Command::SweepOmega => {
            let sweep = runner.sweep_omega()?;
            runner.write_manifest(None)?;
            println!("selected omega: {}", sweep.selected);
            Ok(())
        }
        Command::Run => {
            let summary = runner.run(from.unwrap_or(Stage::Latent))?;
            print_results(
                runner.out_dir(),
                summary.selected_epoch,
                summary.selected_omega,
            )
        }
        Command::AblateUnlabeled { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors and 0 on --help
    let cli = Cli::parse();
    info!("output directory {}", cli.out.display());
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
