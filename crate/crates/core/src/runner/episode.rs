//! One closed-loop episode: every alive agent observes, decides, and the
//! world applies the joint action.

use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionMask};
use crate::agent::{observe, AgentState, Controller, Message, SimConfig};
use crate::env::{evolve_field, GaussianFieldSpec, RewardMap, WorldState};
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};
use crate::metrics::{CommEvent, EpisodeLog, RobotTrace};
use crate::policy::ActionMode;
use crate::rng;

/// Faults injected at step `at`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureSpec {
    pub at: usize,
    pub disable_comm: bool,
    pub disable_estimation: bool,
    pub kill: Vec<usize>,
}

impl FailureSpec {
    pub fn none() -> Self {
        FailureSpec::default()
    }

    pub fn is_none(&self) -> bool {
        !self.disable_comm && !self.disable_estimation && self.kill.is_empty()
    }
}

/// Time-varying ground truth with periodic low-resolution prior refreshes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDynamics {
    pub spec: GaussianFieldSpec,
    pub refresh_period: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeSetup<'a> {
    pub map: &'a RewardMap,
    pub starts: Vec<Cell>,
    pub horizon: usize,
    pub sim: SimConfig,
    pub failure: FailureSpec,
    pub mode: ActionMode,
    pub seed: u64,
    pub record_messages: bool,
    pub dynamics: Option<FieldDynamics>,
}

impl<'a> EpisodeSetup<'a> {
    pub fn new(map: &'a RewardMap, starts: Vec<Cell>, horizon: usize, sim: SimConfig, seed: u64) -> Self {
        EpisodeSetup {
            map,
            starts,
            horizon,
            sim,
            failure: FailureSpec::none(),
            mode: ActionMode::Argmax,
            seed,
            record_messages: false,
            dynamics: None,
        }
    }
}

/// A step at which the controller's own choice was executed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    pub features: Vec<f64>,
    pub mask: ActionMask,
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub log: EpisodeLog,
    /// Per robot, per step: the policy sample, or `None` for overridden or dead steps.
    pub samples: Vec<Vec<Option<PolicySample>>>,
    /// Ground truth at each prior refresh (dynamic fields only).
    pub snapshots: Vec<(usize, Grid)>,
}

pub fn run_episode(setup: &EpisodeSetup<'_>, controller: &dyn Controller) -> Result<EpisodeLog> {
    simulate(setup, controller, false).map(|r| r.log)
}

fn validate(setup: &EpisodeSetup<'_>) -> Result<()> {
    setup.sim.validate()?;
    let n = setup.starts.len();
    if n == 0 {
        return Err(Error::Validation("at least one robot is required".into()));
    }
    if let Some(&k) = setup.failure.kill.iter().find(|&&k| k >= n) {
        return Err(Error::Validation(format!("cannot kill robot {k}: team has {n}")));
    }
    if let Some(d) = &setup.dynamics {
        if d.refresh_period == 0 {
            return Err(Error::Validation("refresh period must be >= 1".into()));
        }
        d.spec.validate()?;
    }
    Ok(())
}

/// Factor-2 block mean followed by nearest upsampling, clamped at zero.
pub fn coarse_prior(field: &Grid) -> Grid {
    let (h, w) = (field.height(), field.width());
    Grid::from_fn(h, w, |r, c| {
        let (r0, c0) = (r / 2 * 2, c / 2 * 2);
        let mut sum = 0.0;
        let mut count = 0.0;
        for rr in r0..(r0 + 2).min(h) {
            for cc in c0..(c0 + 2).min(w) {
                sum += field.at(rr, cc);
                count += 1.0;
            }
        }
        (sum / count).max(0.0)
    })
}

/// Run the episode; with `keep_samples` the controller inputs are retained
/// for policy-gradient estimation.
pub fn simulate(setup: &EpisodeSetup<'_>, controller: &dyn Controller, keep_samples: bool) -> Result<EpisodeRun> {
    validate(setup)?;
    let n = setup.starts.len();
    let horizon = setup.horizon;
    let mut sim = setup.sim.clone();
    let mut world = WorldState::new(setup.map.clone(), setup.starts.clone(), horizon, sim.collision_penalty)?;
    let prior = setup.map.values().clone();
    let mut agents: Vec<AgentState> = (0..n)
        .map(|i| AgentState::new(i, &setup.starts, &prior, sim.history_len))
        .collect();
    let mut rngs: Vec<_> = (0..n).map(|i| rng::stream(setup.seed, &[i as u64])).collect();
    let mut dynamics = setup.dynamics.clone();

    let mut robots: Vec<RobotTrace> = setup
        .starts
        .iter()
        .map(|&s| RobotTrace {
            positions: vec![s],
            ..RobotTrace::default()
        })
        .collect();
    let mut samples: Vec<Vec<Option<PolicySample>>> = vec![Vec::new(); if keep_samples { n } else { 0 }];
    let mut messages = Vec::new();
    let mut snapshots = Vec::new();
    let mut warnings = Vec::new();
    let mut resets = 0usize;

    for t in 0..horizon {
        if t == setup.failure.at && !setup.failure.is_none() {
            sim.comm_enabled &= !setup.failure.disable_comm;
            sim.estimation_enabled &= !setup.failure.disable_estimation;
            for &k in &setup.failure.kill {
                world.kill(k);
                agents[k].alive = false;
            }
        }
        let outgoing: Vec<Message> = agents.iter().map(AgentState::outgoing).collect();
        let mut actions = vec![Action::NORTH; n];
        for i in 0..n {
            let trace = &mut robots[i];
            if !agents[i].alive {
                trace.actions.push(None);
                trace.overridden.push(false);
                trace.neighbors.push(Vec::new());
                if keep_samples {
                    samples[i].push(None);
                }
                continue;
            }
            let raw = observe(&world, i, &sim, &mut rngs[i]);
            let received: Vec<&Message> = raw.neighbors.iter().map(|&j| &outgoing[j]).collect();
            if setup.record_messages {
                for m in &received {
                    messages.push(CommEvent {
                        t,
                        receiver: i,
                        sender: m.from,
                        trajectory: m.trajectory.clone(),
                    });
                }
            }
            let d = agents[i].step(t, raw, &received, &sim, controller, setup.mode, &mut rngs[i])?;
            resets += d.sensor_resets;
            actions[i] = d.action;
            trace.actions.push(Some(d.action));
            trace.overridden.push(d.overridden);
            trace.neighbors.push(d.neighbors);
            if keep_samples {
                samples[i].push((!d.overridden).then(|| PolicySample {
                    features: d.features.into_vec(),
                    mask: d.mask,
                    action: d.action,
                }));
            }
        }
        let outcome = world.apply(&actions)?;
        for i in 0..n {
            let trace = &mut robots[i];
            trace.positions.push(world.positions()[i]);
            trace.rewards.push(outcome.rewards[i]);
            trace.collected.push(outcome.collected[i]);
            trace.alive.push(agents[i].alive);
            if agents[i].alive {
                agents[i].record_position(t + 1, world.positions()[i]);
            }
        }
        if let Some(dyn_field) = dynamics.as_mut() {
            let (spec, map) = evolve_field(&world.map, &dyn_field.spec, dyn_field.seed, t)?;
            dyn_field.spec = spec;
            world.replace_map(map);
            if (t + 1) % dyn_field.refresh_period == 0 {
                let snapshot = world.map.values().clone();
                let coarse = coarse_prior(&snapshot);
                for a in agents.iter_mut().filter(|a| a.alive) {
                    a.refresh_prior(t + 1, &coarse);
                }
                snapshots.push((t + 1, snapshot));
            }
        }
    }
    if resets > 0 {
        warnings.push(format!("{resets} sensor updates fell back to the prior"));
    }
    Ok(EpisodeRun {
        log: EpisodeLog {
            robots,
            initial_map: setup.map.values().clone(),
            horizon,
            config: setup.sim.clone(),
            messages,
            warnings,
        },
        samples,
        snapshots,
    })
}
