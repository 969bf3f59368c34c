//! The decentralized per-robot controller: sense, filter, communicate,
//! pool features, act, and avoid collisions.

use log::debug;
use rand::Rng;
use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::action::{Action, ActionMask, NUM_ACTIONS};
use crate::belief::{
    action_update, merge_history, sensor_update, BeliefGrid, HistoryBuffer, Observation,
    RewardBelief, RewardTracker, SensorModel,
};
use crate::env::WorldState;
use crate::error::{Error, Result};
use crate::features::{aggregate, FeatureVector};
use crate::grid::{Cell, Grid};
use crate::policy::{forward, ActionDist, ActionMode, PolicyParams};
use crate::rng::StreamRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Sensing radius in cells.
    pub sense_radius: f64,
    /// Communication radius in cells.
    pub comm_radius: f64,
    /// Collision avoidance activates within this distance of the nearest teammate.
    pub avoid_radius: f64,
    pub repulsive_gain: f64,
    pub comm_enabled: bool,
    pub estimation_enabled: bool,
    pub p_fp: f64,
    pub p_fn: f64,
    /// Trajectory history length `l`.
    pub history_len: usize,
    pub collision_penalty: f64,
    pub consumed_value: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sense_radius: 10.0,
            comm_radius: 10.0,
            avoid_radius: 2.0,
            repulsive_gain: 1.0,
            comm_enabled: true,
            estimation_enabled: true,
            p_fp: 0.05,
            p_fn: 0.05,
            history_len: 50,
            collision_penalty: -2.0,
            consumed_value: crate::env::DEFAULT_CONSUMED_VALUE,
        }
    }
}

impl SimConfig {
    /// Sets sensing and communication radius together.
    pub fn with_radius(mut self, radius: f64) -> Self {
        self.sense_radius = radius;
        self.comm_radius = radius;
        self
    }

    pub fn sensor_model(&self) -> SensorModel {
        SensorModel {
            radius: self.sense_radius,
            p_fp: self.p_fp,
            p_fn: self.p_fn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sensor_model()
            .validate()
            .map_err(|e| Error::Validation(e.to_string()))?;
        if !(self.comm_radius >= 0.0) || !(self.avoid_radius >= 0.0) {
            return Err(Error::Validation("radii must be >= 0".into()));
        }
        if self.history_len == 0 {
            return Err(Error::Validation("history length must be >= 1".into()));
        }
        if !(self.collision_penalty <= 0.0) {
            return Err(Error::Validation("collision penalty must be <= 0".into()));
        }
        if !(self.consumed_value < 0.0) {
            return Err(Error::Validation("consumed value must be negative".into()));
        }
        Ok(())
    }
}

/// Sensor readout before the one-detection-per-teammate reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub observer: Cell,
    pub radius: f64,
    /// Candidate detections per robot id (true hit first, then false positives in row-major order).
    pub candidates: Vec<Vec<Cell>>,
    pub neighbors: Vec<usize>,
}

impl RawObservation {
    /// Keep, per teammate, the candidate closest to `reference(j)`
    /// (earliest candidate on ties).
    pub fn resolve(self, mut reference: impl FnMut(usize) -> Cell) -> Observation {
        let detections = self
            .candidates
            .iter()
            .enumerate()
            .map(|(j, cands)| {
                if cands.len() <= 1 {
                    return cands.first().copied();
                }
                let target = reference(j);
                let mut best = cands[0];
                for &c in &cands[1..] {
                    if c.distance(target) < best.distance(target) {
                        best = c;
                    }
                }
                Some(best)
            })
            .collect();
        Observation {
            observer: self.observer,
            radius: self.radius,
            detections,
            neighbors: self.neighbors,
        }
    }
}

/// Cells within Euclidean `radius` of `center`, row-major.
pub fn disc_cells(center: Cell, radius: f64, height: usize, width: usize) -> Vec<Cell> {
    let r = radius.floor().max(0.0) as i32;
    let mut out = Vec::new();
    for row in (center.row - r).max(0)..=(center.row + r).min(height as i32 - 1) {
        for col in (center.col - r).max(0)..=(center.col + r).min(width as i32 - 1) {
            let c = Cell::new(row, col);
            if c.within(center, radius) {
                out.push(c);
            }
        }
    }
    out
}

/// Noisy detections of every teammate plus the list of teammates in
/// communication range.
pub fn observe(world: &WorldState, id: usize, config: &SimConfig, rng: &mut StreamRng) -> RawObservation {
    let (h, w) = (world.map.height(), world.map.width());
    let me = world.positions()[id];
    let disc = disc_cells(me, config.sense_radius, h, w);
    let skip = (config.p_fp > 0.0).then(|| (1.0 - config.p_fp).ln());
    let mut candidates = vec![Vec::new(); world.num_robots()];
    for (j, cands) in candidates.iter_mut().enumerate() {
        if j == id {
            continue;
        }
        let truth = world.positions()[j];
        let visible = truth.within(me, config.sense_radius);
        if visible && !(config.p_fn > 0.0 && rng.random::<f64>() < config.p_fn) {
            cands.push(truth);
        }
        if let Some(log_q) = skip {
            // Geometric gaps between false positives over the disc.
            let mut k = 0usize;
            loop {
                let u: f64 = 1.0 - rng.random::<f64>();
                k += (u.ln() / log_q).floor() as usize;
                if k >= disc.len() {
                    break;
                }
                if disc[k] != truth {
                    cands.push(disc[k]);
                }
                k += 1;
            }
        }
    }
    // a zero radius means no link at all, even between co-located robots
    let neighbors = if config.comm_enabled && config.comm_radius > 0.0 && world.is_alive(id) {
        (0..world.num_robots())
            .filter(|&j| {
                j != id && world.is_alive(j) && world.positions()[j].within(me, config.comm_radius)
            })
            .collect()
    } else {
        Vec::new()
    };
    RawObservation {
        observer: me,
        radius: config.sense_radius,
        candidates,
        neighbors,
    }
}

/// Quantized potential-field repulsion from the nearest estimated teammate.
///
/// Returns `None` when nobody is within `avoid_radius`, a uniformly random
/// action when the nearest estimate coincides with `own`, and otherwise the
/// move best aligned with `gain·(1/d - 1/d_o)/d²` pointing away.
pub fn repulsive_action(
    own: Cell,
    teammates: &[Cell],
    avoid_radius: f64,
    gain: f64,
    rng: &mut StreamRng,
) -> Option<Action> {
    let (nearest, d) = teammates
        .iter()
        .map(|&c| (c, own.distance(c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if d > avoid_radius {
        return None;
    }
    if d == 0.0 {
        let k = Uniform::new(0, NUM_ACTIONS).expect("non-empty range").sample(rng);
        return Action::new(k);
    }
    let magnitude = gain * (1.0 / d - 1.0 / avoid_radius) / (d * d);
    let away = (
        (own.row - nearest.row) as f64 / d,
        (own.col - nearest.col) as f64 / d,
    );
    // At d == d_o the magnitude is zero; the direction still decides.
    let force = if magnitude > 0.0 {
        (magnitude * away.0, magnitude * away.1)
    } else {
        away
    };
    let mut best = Action::NORTH_WEST;
    let mut best_dot = f64::NEG_INFINITY;
    for a in Action::all() {
        let (dr, dc) = a.offset();
        let norm = ((dr * dr + dc * dc) as f64).sqrt();
        let dot = (force.0 * dr as f64 + force.1 * dc as f64) / norm;
        if dot > best_dot + 1e-12 {
            best = a;
            best_dot = dot;
        }
    }
    Some(best)
}

/// What a controller sees when asked for an action.
#[derive(Debug, Clone, Copy)]
pub struct AgentView<'a> {
    pub features: &'a FeatureVector,
    pub mask: ActionMask,
    pub position: Cell,
    pub reward_belief: &'a RewardBelief,
}

/// Anything that maps an agent's local view to an action.
pub trait Controller: Sync {
    fn decide(&self, view: &AgentView<'_>, mode: ActionMode, rng: &mut StreamRng) -> Result<Action>;

    /// Whether steps chosen by this controller are useful as policy-gradient samples.
    fn is_learned(&self) -> bool {
        false
    }
}

impl Controller for PolicyParams {
    fn decide(&self, view: &AgentView<'_>, mode: ActionMode, rng: &mut StreamRng) -> Result<Action> {
        let dist: ActionDist = forward(self, view.features.as_slice(), view.mask)?;
        Ok(match mode {
            ActionMode::Sample => dist.sample(rng),
            ActionMode::Argmax => dist.argmax(),
        })
    }

    fn is_learned(&self) -> bool {
        true
    }
}

/// Trajectory broadcast by one robot: its last `l` `(t, cell)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from: usize,
    pub trajectory: Vec<(usize, Cell)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    /// Collision avoidance replaced the controller's choice.
    pub overridden: bool,
    pub features: FeatureVector,
    pub mask: ActionMask,
    pub neighbors: Vec<usize>,
    /// Sensor updates that fell back to the prior this step.
    pub sensor_resets: usize,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub position: Cell,
    pub alive: bool,
    history: HistoryBuffer,
    rewards: RewardTracker,
    /// Neighbor sets seen at each step.
    pub comm_log: Vec<Vec<usize>>,
}

impl AgentState {
    /// All teammates start as point masses at their known initial cells.
    pub fn new(id: usize, starts: &[Cell], prior: &Grid, history_len: usize) -> Self {
        let (h, w) = (prior.height(), prior.width());
        AgentState {
            id,
            position: starts[id],
            alive: true,
            history: HistoryBuffer::new(history_len, id, starts, h, w),
            rewards: RewardTracker::new(RewardBelief::from_field(prior), history_len),
            comm_log: Vec::new(),
        }
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.history
    }

    pub fn reward_belief(&self) -> &RewardBelief {
        self.rewards.current()
    }

    pub fn belief_of(&self, teammate: usize) -> &BeliefGrid {
        self.history.current(teammate)
    }

    /// Estimated teammate positions (belief argmax).
    pub fn teammate_estimates(&self) -> Vec<Cell> {
        self.history
            .teammate_ids()
            .map(|j| self.history.current(j).argmax())
            .collect()
    }

    /// Record the robot's own cell at step `t >= 1`.
    pub fn record_position(&mut self, t: usize, cell: Cell) {
        self.position = cell;
        if t > 0 {
            self.history.push_own(t, cell);
        }
    }

    pub fn outgoing(&self) -> Message {
        Message {
            from: self.id,
            trajectory: self.history.own_trajectory().copied().collect(),
        }
    }

    /// Replace the reward-belief prior (periodic field refresh).
    pub fn refresh_prior(&mut self, t: usize, field: &Grid) {
        self.rewards
            .refresh_prior(RewardBelief::from_field(field), t, &self.history);
    }

    fn teammate_mass(&self) -> Grid {
        let (h, w) = (self.reward_belief().grid().height(), self.reward_belief().grid().width());
        let mut sum = Grid::zeros(h, w);
        for j in self.history.teammate_ids() {
            self.history.current(j).add_scaled_into(&mut sum, 1.0);
        }
        sum
    }

    /// One decision cycle at world step `t`: filter each teammate, merge
    /// received trajectories, refresh the reward belief, pool features,
    /// query the controller, and apply collision avoidance.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        t: usize,
        raw: RawObservation,
        received: &[&Message],
        config: &SimConfig,
        controller: &dyn Controller,
        mode: ActionMode,
        rng: &mut StreamRng,
    ) -> Result<Decision> {
        if !self.alive {
            return Err(Error::Contract(format!("robot {} is not alive", self.id)));
        }
        let mut sensor_resets = 0;
        if t > 0 {
            let obs = raw.resolve(|j| {
                if j == self.id {
                    self.position
                } else {
                    self.history.current(j).argmax()
                }
            });
            let model = config.sensor_model();
            let ids: Vec<usize> = self.history.teammate_ids().collect();
            for j in ids {
                let current = self.history.current(j);
                let next = if config.estimation_enabled {
                    let predicted = action_update(current)?;
                    let upd = sensor_update(&predicted, &obs, j, &model)?;
                    sensor_resets += upd.reset_to_prior as usize;
                    upd.belief
                } else {
                    current.clone()
                };
                self.rewards.add_entry(&next);
                if let Some(d) = self.history.push_belief(j, t, next) {
                    self.rewards.apply_displaced(&d);
                }
            }
            for msg in received {
                for d in merge_history(&mut self.history, msg.from, &msg.trajectory) {
                    self.rewards.apply_displaced(&d);
                }
            }
            self.rewards.update(t, &self.history);
            self.comm_log.push(obs.neighbors.clone());
        } else {
            self.comm_log.push(raw.neighbors.clone());
        }
        let neighbors = self.comm_log.last().cloned().unwrap_or_default();

        let grid = self.reward_belief().grid();
        let mask = ActionMask::for_grid(self.position, grid);
        let features = aggregate(grid, &self.teammate_mass(), self.position)?;
        let view = AgentView {
            features: &features,
            mask,
            position: self.position,
            reward_belief: self.reward_belief(),
        };
        let chosen = controller.decide(&view, mode, rng)?;
        let estimates = self.teammate_estimates();
        let repel = repulsive_action(
            self.position,
            &estimates,
            config.avoid_radius,
            config.repulsive_gain,
            rng,
        );
        if repel.is_some() {
            debug!("robot {} t={t}: collision avoidance override", self.id);
        }
        Ok(Decision {
            action: repel.unwrap_or(chosen),
            overridden: repel.is_some(),
            features,
            mask,
            neighbors,
            sensor_resets,
        })
    }
}
