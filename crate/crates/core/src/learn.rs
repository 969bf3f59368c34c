//! Policy-gradient training with a shared team reward and decentralized
//! execution.

use std::time::Instant;

use log::{info, warn};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::agent::SimConfig;
use crate::env::RewardMap;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::Cell;
use crate::metrics::{discounted_sum, mean_std};
use crate::policy::{accumulate_batch_log_prob_grad, ActionMode, PolicyParams, PolicyShape, ScoreTerm};
use crate::rng;
use crate::runner::episode::{simulate, EpisodeSetup, PolicySample};

const INIT_STREAM: u64 = 0x696e_6974;
const START_STREAM: u64 = 0x7374_6172;
const ROLLOUT_STREAM: u64 = 0x726f_6c6c;
/// Score terms per matrix-product batch.
const GRADIENT_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub robots: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Trajectories per robot per batch.
    pub trajectories: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub hidden: usize,
    pub execution: Execution,
    #[serde(skip)]
    pub sim: SimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            robots: 5,
            horizon: 200,
            gamma: 0.9,
            trajectories: 40,
            learning_rate: 1e-3,
            epochs: 1500,
            seed: 0,
            checkpoint_every: 100,
            hidden: crate::policy::DEFAULT_HIDDEN,
            execution: Execution::default(),
            sim: SimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.robots == 0 || self.horizon == 0 {
            return Err(Error::Validation("robots and horizon must be >= 1".into()));
        }
        if self.trajectories < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 trajectories per batch for the baseline, got {}",
                self.trajectories
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Validation(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Validation("hidden width must be >= 1".into()));
        }
        self.sim.validate()
    }

    pub fn policy_shape(&self) -> PolicyShape {
        PolicyShape {
            hidden1: self.hidden,
            hidden2: self.hidden,
            ..PolicyShape::default()
        }
    }

    pub fn initial_params(&self) -> PolicyParams {
        PolicyParams::glorot(self.policy_shape(), &mut rng::stream(self.seed, &[INIT_STREAM]))
    }
}

/// `G_t = Σ_{k=t+1..H} γ^{k-t-1} R_k`, where `rewards[k-1]` holds `R_k`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

pub fn compute_baseline(returns: &[f64]) -> f64 {
    returns.iter().sum::<f64>() / returns.len() as f64
}

/// `(1/N) Σ_{t=1..H} γ^t Σᵢ Rᵢ,ₜ`.
pub fn centralized_return(rewards: &[Vec<f64>], gamma: f64) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    rewards.iter().map(|r| discounted_sum(r, gamma)).sum::<f64>() / rewards.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step along `+grad`. A non-finite gradient
/// leaves both the parameters and the moments untouched.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState, alpha: f64) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != grad.len() {
        return Err(Error::Contract(format!(
            "adam shapes differ: params {}, grad {}, moments {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {i} is {}", grad[i])));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..grad.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] += alpha * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// One robot's trajectory within a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `None` where the controller's action was not executed.
    pub samples: Vec<Option<PolicySample>>,
    pub rewards: Vec<f64>,
}

/// `trajectories[i][m]` for robot `i`, rollout `m`.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    trajectories: Vec<Vec<Trajectory>>,
    returns: Vec<Vec<Vec<f64>>>,
    baselines: Vec<Vec<f64>>,
}

impl RolloutBatch {
    pub fn new(trajectories: Vec<Vec<Trajectory>>, gamma: f64) -> Result<Self> {
        let horizon = trajectories
            .first()
            .and_then(|r| r.first())
            .map(|t| t.rewards.len())
            .ok_or_else(|| Error::Contract("empty rollout batch".into()))?;
        let m = trajectories[0].len();
        for per_robot in &trajectories {
            if per_robot.len() != m {
                return Err(Error::Contract("robots have different trajectory counts".into()));
            }
            if per_robot
                .iter()
                .any(|t| t.rewards.len() != horizon || t.samples.len() != horizon)
            {
                return Err(Error::Contract(format!("all sequences must have length {horizon}")));
            }
        }
        let returns: Vec<Vec<Vec<f64>>> = trajectories
            .iter()
            .map(|r| r.iter().map(|t| compute_returns(&t.rewards, gamma)).collect())
            .collect();
        let baselines = returns
            .iter()
            .map(|per_robot| {
                (0..horizon)
                    .map(|t| compute_baseline(&per_robot.iter().map(|g| g[t]).collect::<Vec<_>>()))
                    .collect()
            })
            .collect();
        Ok(RolloutBatch {
            trajectories,
            returns,
            baselines,
        })
    }

    pub fn robots(&self) -> usize {
        self.trajectories.len()
    }

    pub fn trajectories_per_robot(&self) -> usize {
        self.trajectories[0].len()
    }

    pub fn returns(&self, robot: usize, m: usize) -> &[f64] {
        &self.returns[robot][m]
    }

    pub fn baselines(&self, robot: usize) -> &[f64] {
        &self.baselines[robot]
    }

    pub fn advantage(&self, robot: usize, m: usize, t: usize) -> f64 {
        self.returns[robot][m][t] - self.baselines[robot][t]
    }

    /// `(1/(N·M)) Σᵢ Σₘ Σₜ (G − b)·∇log π`, accumulated robot by robot in
    /// a fixed order so the result does not depend on the execution strategy.
    pub fn policy_gradient(&self, params: &PolicyParams, exec: Execution) -> Result<PolicyParams> {
        let scale = 1.0 / (self.robots() * self.trajectories_per_robot()) as f64;
        let partials = exec.map_range(self.robots(), |i| -> Result<PolicyParams> {
            let mut grad = PolicyParams::zeros(params.shape());
            let mut terms = Vec::with_capacity(GRADIENT_CHUNK);
            for (m, traj) in self.trajectories[i].iter().enumerate() {
                for (t, sample) in traj.samples.iter().enumerate() {
                    let Some(s) = sample else { continue };
                    let adv = self.advantage(i, m, t);
                    if adv != 0.0 {
                        terms.push(ScoreTerm {
                            features: &s.features,
                            mask: s.mask,
                            action: s.action,
                            weight: scale * adv,
                        });
                    }
                    if terms.len() == GRADIENT_CHUNK {
                        accumulate_batch_log_prob_grad(params, &terms, &mut grad)?;
                        terms.clear();
                    }
                }
            }
            accumulate_batch_log_prob_grad(params, &terms, &mut grad)?;
            Ok(grad)
        });
        let mut total = PolicyParams::zeros(params.shape());
        for p in partials {
            for (a, b) in total.as_mut_slice().iter_mut().zip(p?.as_slice()) {
                *a += b;
            }
        }
        Ok(total)
    }
}

/// Estimate the gradient from `batch` and take one Adam ascent step.
pub fn reinforce_update(
    params: &mut PolicyParams,
    batch: &RolloutBatch,
    alpha: f64,
    state: &mut AdamState,
    exec: Execution,
) -> Result<()> {
    let grad = batch.policy_gradient(params, exec)?;
    adam_step(params.as_mut_slice(), grad.as_slice(), state, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    /// Mean centralized return over the batch.
    pub mean_return: f64,
    /// Spread across robots of their batch-averaged discounted return.
    pub std_across_robots: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curve: Vec<CurvePoint>,
    /// Why training stopped early, if it did; `params` is then the last good set.
    pub aborted: Option<String>,
}

/// `count` distinct cells drawn uniformly from the grid.
pub fn random_starts(height: usize, width: usize, count: usize, rng: &mut rng::StreamRng) -> Result<Vec<Cell>> {
    if count > height * width {
        return Err(Error::Validation(format!(
            "{count} robots do not fit on a {height}x{width} grid"
        )));
    }
    Ok(index::sample(rng, height * width, count)
        .into_iter()
        .map(|k| Cell::new((k / width) as i32, (k % width) as i32))
        .collect())
}

/// Roll out `M` episodes from shared starts and return the batch plus its
/// curve statistics.
pub fn collect_batch(
    config: &TrainConfig,
    map: &RewardMap,
    params: &PolicyParams,
    epoch: usize,
) -> Result<(RolloutBatch, f64, f64)> {
    let starts = random_starts(
        map.height(),
        map.width(),
        config.robots,
        &mut rng::stream(config.seed, &[START_STREAM, epoch as u64]),
    )?;
    let runs = config.execution.map_range(config.trajectories, |m| {
        let mut setup = EpisodeSetup::new(
            map,
            starts.clone(),
            config.horizon,
            config.sim.clone(),
            rng::derive_seed(config.seed, &[ROLLOUT_STREAM, epoch as u64, m as u64]),
        );
        setup.mode = ActionMode::Sample;
        simulate(&setup, params, true)
    });
    let mut per_robot: Vec<Vec<Trajectory>> = vec![Vec::with_capacity(config.trajectories); config.robots];
    let mut robot_returns = vec![0.0; config.robots];
    for run in runs {
        let run = run?;
        for (i, (trace, samples)) in run.log.robots.into_iter().zip(run.samples).enumerate() {
            robot_returns[i] += discounted_sum(&trace.rewards, config.gamma) / config.trajectories as f64;
            per_robot[i].push(Trajectory {
                samples,
                rewards: trace.rewards,
            });
        }
    }
    let (mean, std) = mean_std(&robot_returns);
    Ok((RolloutBatch::new(per_robot, config.gamma)?, mean, std))
}

/// Train from `init` (or a seeded Glorot draw). `on_epoch` runs after every
/// completed update with the epoch's curve point and the updated parameters.
pub fn train(
    config: &TrainConfig,
    map: &RewardMap,
    init: Option<PolicyParams>,
    mut on_epoch: impl FnMut(&CurvePoint, &PolicyParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = init.unwrap_or_else(|| config.initial_params());
    if params.shape() != config.policy_shape() {
        return Err(Error::Validation(format!(
            "initial parameters have shape {:?}, expected {:?}",
            params.shape(),
            config.policy_shape()
        )));
    }
    let mut adam = AdamState::new(params.as_slice().len());
    let mut curve = Vec::with_capacity(config.epochs);
    let started = Instant::now();
    for epoch in 0..config.epochs {
        let (batch, mean_return, std_across_robots) = collect_batch(config, map, &params, epoch)?;
        let mut next = params.clone();
        let step = reinforce_update(&mut next, &batch, config.learning_rate, &mut adam, config.execution)
            .and_then(|()| {
                if next.is_finite() {
                    Ok(())
                } else {
                    Err(Error::NonFinite("parameters became non-finite".into()))
                }
            });
        if let Err(e) = step {
            warn!("epoch {epoch}: aborting training: {e}");
            return Ok(TrainOutcome {
                params,
                curve,
                aborted: Some(format!("epoch {epoch}: {e}")),
            });
        }
        params = next;
        let point = CurvePoint {
            epoch,
            mean_return,
            std_across_robots,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}: return {mean_return:.4} (std {std_across_robots:.4}) after {:.1}s",
            point.wall_seconds
        );
        on_epoch(&point, &params)?;
        curve.push(point);
    }
    Ok(TrainOutcome {
        params,
        curve,
        aborted: None,
    })
}
