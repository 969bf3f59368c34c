//! Experiment orchestration: episodes, baselines, sweeps, and file output.

pub mod baseline;
pub mod config;
pub mod episode;
pub mod export;

use serde::{Deserialize, Serialize};

use crate::agent::{Controller, SimConfig};
use crate::env::{GaussianFieldSpec, RewardMap};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{Cell, Grid};
use crate::learn::random_starts;
use crate::metrics::{EpisodeLog, MetricsReport};
use crate::rng;

pub use baseline::BaselineKind;
pub use config::{ExperimentSpec, MapConfig, RunConfig, ScenarioKind};
pub use episode::{run_episode, simulate, EpisodeRun, EpisodeSetup, FailureSpec, FieldDynamics};

const EVAL_STARTS: u64 = 0x6576_616c;
const EVAL_EPISODE: u64 = 0x6570_6973;

/// One evaluated episode of a sweep or trial set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// What was varied, e.g. `team_size` or `comm_pct`.
    pub setting: String,
    pub value: f64,
    pub trial: usize,
    pub report: MetricsReport,
}

/// Start cells and episode seed of evaluation trial `trial`; identical for
/// every controller evaluated with the same seed.
pub fn trial_setup(seed: u64, trial: usize, height: usize, width: usize, robots: usize) -> Result<(Vec<Cell>, u64)> {
    let starts = random_starts(
        height,
        width,
        robots,
        &mut rng::stream(seed, &[EVAL_STARTS, trial as u64]),
    )?;
    Ok((starts, rng::derive_seed(seed, &[EVAL_EPISODE, trial as u64])))
}

/// `robots` distinct cells in row-major order from the top-left corner.
pub fn corner_starts(width: usize, robots: usize) -> Vec<Cell> {
    (0..robots)
        .map(|k| Cell::new((k / width) as i32, (k % width) as i32))
        .collect()
}

/// Largest distance between two cell centers of the grid.
pub fn max_distance(height: usize, width: usize) -> f64 {
    let dr = height.saturating_sub(1) as f64;
    let dc = width.saturating_sub(1) as f64;
    (dr * dr + dc * dc).sqrt()
}

/// Communication radius in cells for `pct` percent of the grid diagonal.
pub fn radius_for_percentage(pct: f64, height: usize, width: usize) -> f64 {
    (pct / 100.0 * max_distance(height, width)).round()
}

/// Side length of the map for a team of `n` when `base_side` suits `trained`.
pub fn scaled_side(base_side: usize, n: usize, trained: usize) -> usize {
    (base_side as f64 * (n as f64 / trained as f64).sqrt()).ceil() as usize
}

/// Bilinear resampling on cell centers, re-normalized to a peak of 1.
pub fn resample(map: &Grid, height: usize, width: usize) -> Grid {
    if map.height() == height && map.width() == width {
        return map.clone();
    }
    let src = |len_out: usize, len_in: usize, i: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * len_in as f64 / len_out as f64 - 0.5).clamp(0.0, (len_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(len_in - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Grid::from_fn(height, width, |r, c| {
        let (r0, r1, fr) = src(height, map.height(), r);
        let (c0, c1, fc) = src(width, map.width(), c);
        let top = map.at(r0, c0) * (1.0 - fc) + map.at(r0, c1) * fc;
        let bottom = map.at(r1, c0) * (1.0 - fc) + map.at(r1, c1) * fc;
        top * (1.0 - fr) + bottom * fr
    });
    let peak = out.max();
    if peak > 0.0 {
        out.as_mut_slice().iter_mut().for_each(|v| *v /= peak);
    }
    out
}

/// Evaluate `controller` for `trials` episodes with per-trial random starts.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cfg: &RunConfig,
    map: &RewardMap,
    sim: &SimConfig,
    failure: &FailureSpec,
    controller: &dyn Controller,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<EpisodeLog>> {
    let robots = cfg.train.robots;
    exec.map_range(trials, |trial| {
        let (starts, episode_seed) = trial_setup(seed, trial, map.height(), map.width(), robots)?;
        let mut setup = EpisodeSetup::new(map, starts, cfg.train.horizon, sim.clone(), episode_seed);
        setup.failure = failure.clone();
        setup.mode = cfg.experiment.mode;
        run_episode(&setup, controller)
    })
    .into_iter()
    .collect()
}

fn rows(setting: &str, value: f64, logs: &[EpisodeLog], gamma: f64) -> Vec<SweepRow> {
    logs.iter()
        .enumerate()
        .map(|(trial, log)| SweepRow {
            setting: setting.to_string(),
            value,
            trial,
            report: MetricsReport::from_log(log, gamma),
        })
        .collect()
}

/// Team-size scaling: the map side grows with `√n` and robots start in the
/// top-left corner.
pub fn sweep_team_size(
    cfg: &RunConfig,
    base_map: &Grid,
    controller: &dyn Controller,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    let mut out = Vec::new();
    for &n in &cfg.experiment.team_sizes {
        if n < 2 {
            return Err(Error::Validation(format!("team sizes must be >= 2, got {n}")));
        }
        let h = scaled_side(base_map.height(), n, cfg.train.robots);
        let w = scaled_side(base_map.width(), n, cfg.train.robots);
        let map = RewardMap::new(resample(base_map, h, w), cfg.sim.consumed_value)?;
        let starts = corner_starts(w, n);
        let logs: Vec<EpisodeLog> = exec
            .map_range(cfg.experiment.trials, |trial| {
                let episode_seed = rng::derive_seed(seed, &[EVAL_EPISODE, n as u64, trial as u64]);
                let mut setup = EpisodeSetup::new(&map, starts.clone(), cfg.train.horizon, cfg.sim.clone(), episode_seed);
                setup.mode = cfg.experiment.mode;
                run_episode(&setup, controller)
            })
            .into_iter()
            .collect::<Result<_>>()?;
        out.extend(rows("team_size", n as f64, &logs, cfg.eval_gamma()));
    }
    Ok(out)
}

/// Communication-radius sweep as a percentage of the grid diagonal.
pub fn sweep_comm_radius(
    cfg: &RunConfig,
    map: &RewardMap,
    controller: &dyn Controller,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    if cfg.experiment.radius_percentages.is_empty() {
        return Err(Error::Validation("radius list is empty".into()));
    }
    let mut out = Vec::new();
    for &pct in &cfg.experiment.radius_percentages {
        // d_cr is both the sensing and the communication radius
        let sim = cfg.sim.clone().with_radius(radius_for_percentage(pct, map.height(), map.width()));
        let logs = evaluate(cfg, map, &sim, &FailureSpec::none(), controller, cfg.experiment.trials, seed, exec)?;
        out.extend(rows("comm_pct", pct, &logs, cfg.eval_gamma()));
    }
    Ok(out)
}

/// Simulation settings and injected faults for a communication-failure scenario.
pub fn failure_scenario(id: u8, sim: &SimConfig, at: usize, height: usize, width: usize) -> Result<(SimConfig, FailureSpec)> {
    let mut sim = sim.clone();
    let mut failure = FailureSpec {
        at,
        ..FailureSpec::none()
    };
    match id {
        1 => {}
        2 => failure.disable_comm = true,
        3 => {
            failure.disable_comm = true;
            failure.disable_estimation = true;
        }
        4 => sim.comm_radius = max_distance(height, width).ceil(),
        other => {
            return Err(Error::Validation(format!("failure scenario {other} is not one of 1-4")));
        }
    }
    Ok((sim, failure))
}

/// Communication-failure scenarios followed by the robot-failure case
/// (`kill` list) when one is configured.
pub fn failure_experiment(
    cfg: &RunConfig,
    map: &RewardMap,
    controller: &dyn Controller,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    let spec = &cfg.experiment;
    let mut out = Vec::new();
    for &id in &spec.failure_scenarios {
        let (sim, failure) = failure_scenario(id, &cfg.sim, spec.failure_step, map.height(), map.width())?;
        let logs = evaluate(cfg, map, &sim, &failure, controller, spec.trials, seed, exec)?;
        out.extend(rows("comm_scenario", id as f64, &logs, cfg.eval_gamma()));
    }
    if !spec.kill.is_empty() {
        let failure = FailureSpec {
            at: spec.failure_step,
            kill: spec.kill.clone(),
            ..FailureSpec::none()
        };
        let logs = evaluate(cfg, map, &cfg.sim, &failure, controller, spec.trials, seed, exec)?;
        out.extend(rows("robots_killed", spec.kill.len() as f64, &logs, cfg.eval_gamma()));
    }
    Ok(out)
}

/// An episode on a drifting field with periodic coarse prior refreshes.
pub fn run_online_adaptation(
    cfg: &RunConfig,
    field: &GaussianFieldSpec,
    controller: &dyn Controller,
    seed: u64,
) -> Result<EpisodeRun> {
    let (h, w) = (cfg.map.height, cfg.map.width);
    let resolved = GaussianFieldSpec {
        drift: cfg.experiment.drift,
        ..field.resolve_means(h, w, cfg.map.seed)
    };
    let map = crate::env::generate_gaussian_map(&resolved, h, w, cfg.map.seed)?;
    let (starts, episode_seed) = trial_setup(seed, 0, h, w, cfg.train.robots)?;
    let mut setup = EpisodeSetup::new(&map, starts, cfg.train.horizon, cfg.sim.clone(), episode_seed);
    setup.mode = cfg.experiment.mode;
    setup.dynamics = Some(FieldDynamics {
        spec: resolved,
        refresh_period: cfg.experiment.refresh_period,
        seed: rng::derive_seed(seed, &[0x66_6965_6c64]),
    });
    simulate(&setup, controller, false)
}
