use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use marlas_core::agent::Controller;
use marlas_core::learn::{train, TrainConfig};
use marlas_core::policy::{ActionMode, PolicyParams};
use marlas_core::runner::{self, baseline, export, BaselineKind, FailureSpec, RunConfig};
use marlas_core::Execution;

#[derive(Parser, Debug)]
#[command(name = "marlas", version, about = "Train and evaluate decentralized multi-robot sampling policies")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Policy checkpoint to evaluate, or to start training from.
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Overrides the configured number of evaluation trials.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Overrides the configured action selection.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    /// Use a hand-written controller instead of a checkpoint.
    #[arg(long, global = true, value_enum)]
    baseline: Option<Baseline>,
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy and write checkpoints plus the training curve.
    Train {
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a controller and export logs, metrics and heatmaps.
    Eval,
    /// Team-size scaling sweep.
    SweepTeam,
    /// Communication-radius sweep.
    SweepComm,
    /// Communication- and robot-failure scenarios.
    Failure,
    /// One episode on a drifting field with periodic prior refreshes.
    Adapt,
    /// Re-export a saved episodes.json.
    Export {
        #[arg(long, value_name = "PATH")]
        logs: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Sample,
    Argmax,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    Random,
    Greedy,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let (mut cfg, base) = match &cli.config {
        Some(path) => (
            RunConfig::load(path)?,
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (RunConfig::default(), PathBuf::from(".")),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.experiment.trials = trials;
    }
    if let Some(mode) = cli.mode {
        cfg.experiment.mode = match mode {
            Mode::Sample => ActionMode::Sample,
            Mode::Argmax => ActionMode::Argmax,
        };
    }
    if cli.sequential {
        cfg.train.execution = Execution::Sequential;
    }
    if let Command::Train { epochs: Some(e) } = cli.command {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn controller(cli: &Cli, train: &TrainConfig) -> Result<Box<dyn Controller>> {
    match (cli.baseline, &cli.checkpoint) {
        (Some(_), Some(_)) => bail!("--baseline and --checkpoint are mutually exclusive"),
        (Some(Baseline::Random), None) => Ok(baseline::controller(BaselineKind::Random)),
        (Some(Baseline::Greedy), None) => Ok(baseline::controller(BaselineKind::Greedy)),
        (None, Some(path)) => Ok(Box::new(PolicyParams::load(path, train.policy_shape())?)),
        (None, None) => bail!("evaluation needs --checkpoint PATH or --baseline random|greedy"),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Export { logs } = &cli.command {
        let cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let logs = export::load_logs(logs)?;
        export::export(&logs, cfg.eval_gamma(), &cli.out)?;
        info!("re-exported {} episodes to {}", logs.len(), cli.out.display());
        return Ok(());
    }

    let (cfg, base_dir) = load_config(&cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    write(&cli.out.join("config.toml"), cfg.to_toml())?;
    let map = cfg.map.build(&base_dir)?;
    let train_cfg = cfg.train_config();
    let seed = cfg.train.seed;
    let exec = cfg.train.execution;

    match &cli.command {
        Command::Train { .. } => {
            let init = cli
                .checkpoint
                .as_deref()
                .map(|p| PolicyParams::load(p, train_cfg.policy_shape()))
                .transpose()?;
            let ckpt_dir = cli.out.join("checkpoints");
            if train_cfg.checkpoint_every > 0 {
                fs::create_dir_all(&ckpt_dir)?;
            }
            let every = train_cfg.checkpoint_every;
            let outcome = train(&train_cfg, &map, init, |point, params| {
                if every > 0 && (point.epoch + 1) % every == 0 {
                    params.save(&ckpt_dir.join(format!("epoch_{:05}.ckpt", point.epoch + 1)))?;
                }
                Ok(())
            })?;
            outcome.params.save(&cli.out.join("policy.ckpt"))?;
            write(&cli.out.join("training_curve.csv"), export::curve_csv(&outcome.curve))?;
            write(&cli.out.join("train_timing.csv"), export::timing_csv(&outcome.curve))?;
            if let Some(reason) = outcome.aborted {
                bail!("training aborted ({reason}); last good parameters saved to policy.ckpt");
            }
            info!("trained {} epochs; policy written to {}", outcome.curve.len(), cli.out.join("policy.ckpt").display());
        }
        Command::Eval => {
            let ctl = controller(&cli, &train_cfg)?;
            let logs = runner::evaluate(
                &cfg,
                &map,
                &cfg.sim,
                &FailureSpec::none(),
                ctl.as_ref(),
                cfg.experiment.trials,
                seed,
                exec,
            )?;
            let reports = export::export(&logs, cfg.eval_gamma(), &cli.out)?;
            let summary = marlas_core::metrics::ReportSummary::from_reports(&reports);
            println!("{}", export::summary_json(&summary).trim_end());
        }
        Command::SweepTeam => {
            let ctl = controller(&cli, &train_cfg)?;
            let rows = runner::sweep_team_size(&cfg, map.values(), ctl.as_ref(), seed, exec)?;
            export::write_sweep(&rows, &cli.out, "sweep_team")?;
            info!("wrote {} rows", rows.len());
        }
        Command::SweepComm => {
            let ctl = controller(&cli, &train_cfg)?;
            let rows = runner::sweep_comm_radius(&cfg, &map, ctl.as_ref(), seed, exec)?;
            export::write_sweep(&rows, &cli.out, "sweep_comm")?;
            info!("wrote {} rows", rows.len());
        }
        Command::Failure => {
            let ctl = controller(&cli, &train_cfg)?;
            let rows = runner::failure_experiment(&cfg, &map, ctl.as_ref(), seed, exec)?;
            export::write_sweep(&rows, &cli.out, "failure")?;
            info!("wrote {} rows", rows.len());
        }
        Command::Adapt => {
            if cfg.map.file.is_some() {
                warn!("adapt evolves the configured Gaussian field; the map file is ignored");
            }
            let ctl = controller(&cli, &train_cfg)?;
            let run = runner::run_online_adaptation(&cfg, &cfg.map.field_spec(), ctl.as_ref(), seed)?;
            export::export(std::slice::from_ref(&run.log), cfg.eval_gamma(), &cli.out)?;
            for (t, snapshot) in &run.snapshots {
                write(&cli.out.join(format!("field_t{t:05}.csv")), export::grid_csv(snapshot))?;
            }
            info!("{} prior refreshes", run.snapshots.len());
        }
        Command::Export { .. } => unreachable!("handled above"),
    }
    Ok(())
}
