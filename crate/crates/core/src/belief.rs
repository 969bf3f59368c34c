//! Per-agent Bayes filtering of teammate positions, trajectory-history
//! merges, and the reward-map belief.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::action::ActionMask;
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, Rect};

/// Allowed deviation of total belief mass from 1.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Discrete distribution over a teammate's cell.
///
/// `support` bounds every nonzero entry, so updates on concentrated beliefs
/// only touch a small window of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGrid {
    mass: Grid,
    support: Rect,
}

impl BeliefGrid {
    pub fn point_mass(height: usize, width: usize, cell: Cell) -> Self {
        let mut mass = Grid::zeros(height, width);
        mass.set(cell, 1.0);
        BeliefGrid {
            mass,
            support: Rect::single(cell.row as usize, cell.col as usize),
        }
    }

    pub fn uniform(height: usize, width: usize) -> Self {
        let mass = Grid::filled(height, width, 1.0 / (height * width) as f64);
        let support = mass.full_rect();
        BeliefGrid { mass, support }
    }

    /// Accepts any non-negative grid whose mass sums to 1.
    pub fn from_grid(mass: Grid) -> Result<Self> {
        if mass.as_slice().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Contract("belief entries must be >= 0".into()));
        }
        let support = mass.full_rect();
        let belief = BeliefGrid { mass, support };
        belief.check_normalized()?;
        Ok(belief.tightened())
    }

    pub fn mass(&self) -> &Grid {
        &self.mass
    }

    pub fn support(&self) -> Rect {
        self.support
    }

    pub fn height(&self) -> usize {
        self.mass.height()
    }

    pub fn width(&self) -> usize {
        self.mass.width()
    }

    pub fn prob(&self, cell: Cell) -> f64 {
        self.mass.get(cell)
    }

    pub fn total(&self) -> f64 {
        let s = self.support;
        (s.r0..=s.r1)
            .map(|r| (s.c0..=s.c1).map(|c| self.mass.at(r, c)).sum::<f64>())
            .sum()
    }

    /// Most likely cell, lowest row-major index on ties.
    pub fn argmax(&self) -> Cell {
        let s = self.support;
        let mut best = (s.r0, s.c0);
        for r in s.r0..=s.r1 {
            for c in s.c0..=s.c1 {
                if self.mass.at(r, c) > self.mass.at(best.0, best.1) {
                    best = (r, c);
                }
            }
        }
        Cell::new(best.0 as i32, best.1 as i32)
    }

    /// The cell holding all the mass, if the belief is a point mass.
    pub fn as_point(&self) -> Option<Cell> {
        let s = self.support;
        (s.r0 == s.r1 && s.c0 == s.c1).then(|| Cell::new(s.r0 as i32, s.c0 as i32))
    }

    pub fn check_normalized(&self) -> Result<()> {
        let total = self.total();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Contract(format!(
                "belief mass sums to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Add `scale` times this belief into `acc`, touching only the support.
    pub fn add_scaled_into(&self, acc: &mut Grid, scale: f64) {
        let s = self.support;
        for r in s.r0..=s.r1 {
            for c in s.c0..=s.c1 {
                *acc.at_mut(r, c) += scale * self.mass.at(r, c);
            }
        }
    }

    fn normalize_support(&mut self, total: f64) {
        let s = self.support;
        for r in s.r0..=s.r1 {
            for c in s.c0..=s.c1 {
                *self.mass.at_mut(r, c) /= total;
            }
        }
    }

    /// Shrink `support` to the bounding box of the nonzero entries.
    fn tightened(mut self) -> Self {
        let s = self.support;
        let mut tight: Option<Rect> = None;
        for r in s.r0..=s.r1 {
            for c in s.c0..=s.c1 {
                if self.mass.at(r, c) != 0.0 {
                    let cell = Rect::single(r, c);
                    tight = Some(tight.map_or(cell, |t| t.union(cell)));
                }
            }
        }
        if let Some(t) = tight {
            self.support = t;
        }
        self
    }
}

/// Prediction step: each cell's mass spreads evenly over its in-bounds
/// 8-connected neighbors. A 1×1 grid has no neighbors and keeps its mass.
pub fn action_update(belief: &BeliefGrid) -> Result<BeliefGrid> {
    belief.check_normalized()?;
    let (h, w) = (belief.height(), belief.width());
    let s = belief.support;
    let out_support = s.grow(1, h, w);
    let mut out = Grid::zeros(h, w);
    for r in s.r0..=s.r1 {
        for c in s.c0..=s.c1 {
            let m = belief.mass.at(r, c);
            if m == 0.0 {
                continue;
            }
            if r > 0 && r + 1 < h && c > 0 && c + 1 < w {
                // Interior: all eight moves, in action order.
                let share = m / 8.0;
                let i = r * w + c;
                let o = out.as_mut_slice();
                for j in [i - w - 1, i - w, i - w + 1, i - 1, i + 1, i + w - 1, i + w, i + w + 1] {
                    o[j] += share;
                }
                continue;
            }
            let here = Cell::new(r as i32, c as i32);
            let mask = ActionMask::feasible_at(here, h, w);
            if mask.is_empty() {
                *out.at_mut(r, c) += m;
                continue;
            }
            let share = m / mask.count() as f64;
            for a in crate::action::Action::all().filter(|a| mask.allows(*a)) {
                let n = a.apply(here);
                *out.at_mut(n.row as usize, n.col as usize) += share;
            }
        }
    }
    let mut next = BeliefGrid {
        mass: out,
        support: out_support,
    };
    let total = next.total();
    next.normalize_support(total);
    Ok(next)
}

/// False-positive / false-negative detection model inside a sensing disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub radius: f64,
    pub p_fp: f64,
    pub p_fn: f64,
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..0.5).contains(&p);
        if !ok(self.p_fp) || !ok(self.p_fn) {
            return Err(Error::Contract(format!(
                "sensor error rates must lie in [0, 0.5), got p_fp={} p_fn={}",
                self.p_fp, self.p_fn
            )));
        }
        if !(self.radius >= 0.0) {
            return Err(Error::Contract("sensing radius must be >= 0".into()));
        }
        Ok(())
    }
}

/// What one robot sees at one step: at most one detection per teammate,
/// plus the teammates it can talk to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub observer: Cell,
    pub radius: f64,
    /// Indexed by robot id; the observer's own slot is always `None`.
    pub detections: Vec<Option<Cell>>,
    pub neighbors: Vec<usize>,
}

impl Observation {
    pub fn in_range(&self, cell: Cell) -> bool {
        self.observer.within(cell, self.radius)
    }

    /// The `{0,1}` occupancy grid for `teammate`.
    pub fn occupancy(&self, teammate: usize, height: usize, width: usize) -> Grid {
        let mut g = Grid::zeros(height, width);
        if let Some(cell) = self.detections[teammate] {
            g.set(cell, 1.0);
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorUpdate {
    pub belief: BeliefGrid,
    /// The observation had zero likelihood under the prior; `belief` is the prior.
    pub reset_to_prior: bool,
}

/// Bayes correction with the observation of one teammate.
///
/// With `K` in-range cells, the full-grid likelihood of the teammate being
/// at `x` shares a factor common to every `x`; after dividing it out:
///
/// | observation  | `x` = detected cell | `x` in range, other | `x` out of range |
/// |--------------|---------------------|---------------------|------------------|
/// | detection    | `(1-fn)(1-fp)`      | `fn·fp`             | `fp(1-fp)`       |
/// | no detection | -                   | `fn`                | `1-fp`           |
pub fn sensor_update(
    belief: &BeliefGrid,
    obs: &Observation,
    teammate: usize,
    model: &SensorModel,
) -> Result<SensorUpdate> {
    belief.check_normalized()?;
    model.validate()?;
    let detection = obs.detections.get(teammate).copied().ok_or_else(|| {
        Error::Contract(format!("observation has no slot for robot {teammate}"))
    })?;
    if let Some(d) = detection {
        if !belief.mass.contains(d) || !obs.in_range(d) {
            return Err(Error::Contract(format!(
                "detection {d:?} lies outside the sensing disc"
            )));
        }
    }
    let (fp, fnr) = (model.p_fp, model.p_fn);
    let likelihood = |cell: Cell| -> f64 {
        let inside = obs.in_range(cell);
        match detection {
            Some(d) if cell == d => (1.0 - fnr) * (1.0 - fp),
            Some(_) if inside => fnr * fp,
            Some(_) => fp * (1.0 - fp),
            None if inside => fnr,
            None => 1.0 - fp,
        }
    };
    let mut post = belief.clone();
    let s = post.support;
    let mut total = 0.0;
    for r in s.r0..=s.r1 {
        for c in s.c0..=s.c1 {
            let v = post.mass.at_mut(r, c);
            if *v != 0.0 {
                *v *= likelihood(Cell::new(r as i32, c as i32));
                total += *v;
            }
        }
    }
    if !(total > 0.0) {
        warn!("sensor update for robot {teammate} had zero normalizer; keeping the prior");
        return Ok(SensorUpdate {
            belief: belief.clone(),
            reset_to_prior: true,
        });
    }
    post.normalize_support(total);
    Ok(SensorUpdate {
        belief: post.tightened(),
        reset_to_prior: false,
    })
}

/// Filter state for one teammate.
#[derive(Debug, Clone, PartialEq)]
pub struct TeammateTrack {
    /// Belief at the initial step, before any window entry exists.
    initial: BeliefGrid,
    /// `(t, belief)` for the most recent `l` steps, oldest first.
    window: VecDeque<(usize, BeliefGrid)>,
}

impl TeammateTrack {
    pub fn current(&self) -> &BeliefGrid {
        self.window.back().map_or(&self.initial, |(_, b)| b)
    }

    pub fn window(&self) -> impl Iterator<Item = &(usize, BeliefGrid)> {
        self.window.iter()
    }
}

/// Own trajectory and teammate beliefs over the last `l` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    own: VecDeque<(usize, Cell)>,
    teammates: Vec<Option<TeammateTrack>>,
}

/// A window entry removed or overwritten in a [`HistoryBuffer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Displaced {
    pub teammate: usize,
    pub old: BeliefGrid,
    pub new: Option<BeliefGrid>,
}

impl HistoryBuffer {
    /// Beliefs start as point masses at the known initial positions.
    pub fn new(capacity: usize, owner: usize, starts: &[Cell], height: usize, width: usize) -> Self {
        assert!(capacity >= 1, "history length must be >= 1");
        let teammates = starts
            .iter()
            .enumerate()
            .map(|(j, &cell)| {
                (j != owner).then(|| TeammateTrack {
                    initial: BeliefGrid::point_mass(height, width, cell),
                    window: VecDeque::with_capacity(capacity + 1),
                })
            })
            .collect();
        HistoryBuffer {
            capacity,
            own: VecDeque::with_capacity(capacity + 1),
            teammates,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn own_trajectory(&self) -> impl ExactSizeIterator<Item = &(usize, Cell)> {
        self.own.iter()
    }

    pub fn track(&self, teammate: usize) -> Option<&TeammateTrack> {
        self.teammates.get(teammate).and_then(Option::as_ref)
    }

    pub fn teammate_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.teammates
            .iter()
            .enumerate()
            .filter_map(|(j, t)| t.as_ref().map(|_| j))
    }

    pub fn current(&self, teammate: usize) -> &BeliefGrid {
        self.track(teammate).expect("no such teammate").current()
    }

    pub fn push_own(&mut self, t: usize, cell: Cell) {
        self.own.push_back((t, cell));
        if self.own.len() > self.capacity {
            self.own.pop_front();
        }
    }

    /// Append the belief for step `t`; returns the entry that fell out of the window.
    pub fn push_belief(&mut self, teammate: usize, t: usize, belief: BeliefGrid) -> Option<Displaced> {
        let cap = self.capacity;
        let track = self.teammates[teammate].as_mut().expect("no such teammate");
        debug_assert!(track.window.back().is_none_or(|(last, _)| *last < t));
        track.window.push_back((t, belief));
        (track.window.len() > cap).then(|| {
            let (_, old) = track.window.pop_front().expect("non-empty");
            Displaced {
                teammate,
                old,
                new: None,
            }
        })
    }
}

/// Replace `neighbor`'s beliefs with point masses at the positions it
/// communicated. Trajectories longer than the buffer keep only their most
/// recent entries; steps not present in the window are ignored.
/// Returns every window entry that actually changed.
pub fn merge_history(
    buffers: &mut HistoryBuffer,
    neighbor: usize,
    trajectory: &[(usize, Cell)],
) -> Vec<Displaced> {
    let cap = buffers.capacity;
    let trajectory = if trajectory.len() > cap {
        warn!(
            "trajectory from robot {neighbor} has {} entries, keeping the last {cap}",
            trajectory.len()
        );
        &trajectory[trajectory.len() - cap..]
    } else {
        trajectory
    };
    let Some(track) = buffers.teammates.get_mut(neighbor).and_then(Option::as_mut) else {
        return Vec::new();
    };
    let mut changed = Vec::new();
    for &(t, cell) in trajectory {
        let Some(slot) = track.window.iter_mut().find(|(k, _)| *k == t) else {
            continue;
        };
        if slot.1.as_point() == Some(cell) {
            continue;
        }
        let fresh = BeliefGrid::point_mass(slot.1.height(), slot.1.width(), cell);
        let old = std::mem::replace(&mut slot.1, fresh.clone());
        changed.push(Displaced {
            teammate: neighbor,
            old,
            new: Some(fresh),
        });
    }
    changed
}

/// Agent's estimate of the remaining reward per cell; entries are `>= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardBelief(Grid);

impl RewardBelief {
    /// Negative entries (consumed cells) become 0.
    pub fn from_field(field: &Grid) -> Self {
        let mut g = field.clone();
        g.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        RewardBelief(g)
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.0.get(cell)
    }
}

/// `F̂ₜ(x) = F̂ₜ₋ₗ(x) · max(0, 1 - Σ_window Σⱼ x̂ⱼ,ₖ(x))`, then zero at the
/// agent's own cells from the same window.
pub fn update_reward_belief<'a>(
    prev: &RewardBelief,
    teammate_window: impl IntoIterator<Item = &'a BeliefGrid>,
    own_positions: impl IntoIterator<Item = Cell>,
) -> Result<RewardBelief> {
    let mut sum = Grid::zeros(prev.0.height(), prev.0.width());
    for b in teammate_window {
        if !b.mass.same_shape(&sum) {
            return Err(Error::Contract("belief and reward map shapes differ".into()));
        }
        b.add_scaled_into(&mut sum, 1.0);
    }
    let mut out = discounted(&prev.0, &sum);
    for cell in own_positions {
        out.set(cell, 0.0);
    }
    Ok(RewardBelief(out))
}

fn discounted(base: &Grid, window_sum: &Grid) -> Grid {
    let data = base
        .as_slice()
        .iter()
        .zip(window_sum.as_slice())
        .map(|(f, s)| f * (1.0 - s).max(0.0))
        .collect();
    Grid::from_vec(base.height(), base.width(), data)
}

/// Incremental form of [`update_reward_belief`] for a running agent.
///
/// Keeps the `l` most recent reward beliefs (the recursion's `F̂ₜ₋ₗ` base)
/// and a running sum of the teammate beliefs currently in the window.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTracker {
    history_len: usize,
    prior: RewardBelief,
    past: VecDeque<(usize, RewardBelief)>,
    window_sum: Grid,
    current: RewardBelief,
    updates_since_rebuild: usize,
}

impl RewardTracker {
    pub fn new(prior: RewardBelief, history_len: usize) -> Self {
        let (h, w) = (prior.0.height(), prior.0.width());
        RewardTracker {
            history_len,
            current: prior.clone(),
            prior,
            past: VecDeque::with_capacity(history_len + 1),
            window_sum: Grid::zeros(h, w),
            updates_since_rebuild: 0,
        }
    }

    pub fn current(&self) -> &RewardBelief {
        &self.current
    }

    pub fn window_sum(&self) -> &Grid {
        &self.window_sum
    }

    /// Account for a window entry that was added, removed, or overwritten.
    pub fn apply_displaced(&mut self, d: &Displaced) {
        d.old.add_scaled_into(&mut self.window_sum, -1.0);
        if let Some(new) = &d.new {
            new.add_scaled_into(&mut self.window_sum, 1.0);
        }
    }

    pub fn add_entry(&mut self, belief: &BeliefGrid) {
        belief.add_scaled_into(&mut self.window_sum, 1.0);
    }

    /// Recompute the window sum from scratch, shedding accumulated rounding.
    pub fn rebuild_window(&mut self, history: &HistoryBuffer) {
        self.window_sum.as_mut_slice().fill(0.0);
        for j in history.teammate_ids().collect::<Vec<_>>() {
            for (_, b) in history.track(j).expect("listed").window() {
                b.add_scaled_into(&mut self.window_sum, 1.0);
            }
        }
        self.updates_since_rebuild = 0;
    }

    /// Produce `F̂ₜ` from the current window sum and own trajectory.
    pub fn update(&mut self, t: usize, history: &HistoryBuffer) {
        self.updates_since_rebuild += 1;
        if self.updates_since_rebuild >= self.history_len {
            self.rebuild_window(history);
        }
        let base = match t.checked_sub(self.history_len) {
            Some(k) if k > 0 => {
                let (bk, b) = self.past.front().expect("base reward belief retained");
                debug_assert_eq!(*bk, k);
                b
            }
            _ => &self.prior,
        };
        let mut next = discounted(&base.0, &self.window_sum);
        for &(_, cell) in history.own_trajectory() {
            next.set(cell, 0.0);
        }
        self.current = RewardBelief(next);
        self.past.push_back((t, self.current.clone()));
        while self.past.len() > self.history_len {
            self.past.pop_front();
        }
    }

    /// Swap in a fresh prior and re-apply the consumption implied by the
    /// current window.
    pub fn refresh_prior(&mut self, prior: RewardBelief, t: usize, history: &HistoryBuffer) {
        for (_, b) in self.past.iter_mut() {
            *b = prior.clone();
        }
        self.prior = prior;
        self.rebuild_window(history);
        let mut next = discounted(&self.prior.0, &self.window_sum);
        for &(_, cell) in history.own_trajectory() {
            next.set(cell, 0.0);
        }
        self.current = RewardBelief(next);
        if let Some(last) = self.past.back_mut().filter(|(k, _)| *k == t) {
            last.1 = self.current.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(observer: Cell, radius: f64, detections: Vec<Option<Cell>>) -> Observation {
        Observation {
            observer,
            radius,
            detections,
            neighbors: vec![],
        }
    }

    /// Dense transition matrix of the 8-neighbor random walk, applied by brute force.
    fn transition_oracle(p: &Grid) -> Grid {
        let (h, w) = (p.height(), p.width());
        let n = h * w;
        let mut t = vec![vec![0.0; n]; n];
        for src in 0..n {
            let (r, c) = ((src / w) as i64, (src % w) as i64);
            let mut nbrs = vec![];
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    let (nr, nc) = (r + dr, c + dc);
                    if (dr, dc) != (0, 0) && nr >= 0 && nc >= 0 && nr < h as i64 && nc < w as i64 {
                        nbrs.push((nr * w as i64 + nc) as usize);
                    }
                }
            }
            for &d in &nbrs {
                t[d][src] = 1.0 / nbrs.len() as f64;
            }
        }
        Grid::from_fn(h, w, |r, c| {
            let dst = r * w + c;
            (0..n).map(|src| t[dst][src] * p.as_slice()[src]).sum()
        })
    }

    #[test]
    fn interior_point_spreads_to_eight() {
        let b = BeliefGrid::point_mass(5, 5, Cell::new(2, 2));
        let next = action_update(&b).unwrap();
        assert_eq!(next.prob(Cell::new(2, 2)), 0.0);
        for a in crate::action::Action::all() {
            assert_eq!(next.prob(a.apply(Cell::new(2, 2))), 1.0 / 8.0);
        }
    }

    #[test]
    fn corner_point_spreads_to_three() {
        let b = BeliefGrid::point_mass(4, 4, Cell::new(0, 0));
        let next = action_update(&b).unwrap();
        for cell in [Cell::new(0, 1), Cell::new(1, 0), Cell::new(1, 1)] {
            assert!((next.prob(cell) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((next.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_matches_transition_matrix() {
        let b = BeliefGrid::uniform(5, 5);
        let next = action_update(&b).unwrap();
        let oracle = transition_oracle(b.mass());
        for (x, y) in next.mass().as_slice().iter().zip(oracle.as_slice()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert!((next.total() - 1.0).abs() <= 1e-12);
        assert!(next.prob(Cell::new(2, 2)) > next.prob(Cell::new(0, 0)));
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let g = Grid::filled(2, 2, 0.3);
        assert!(BeliefGrid::from_grid(g.clone()).is_err());
        let bad = BeliefGrid {
            mass: g,
            support: Rect::single(0, 0).union(Rect::single(1, 1)),
        };
        assert!(matches!(action_update(&bad), Err(Error::Contract(_))));
    }

    #[test]
    fn perfect_sensor_detection_collapses_belief() {
        let prior = BeliefGrid::uniform(6, 6);
        let o = obs(Cell::new(3, 3), 2.0, vec![None, Some(Cell::new(3, 4))]);
        let model = SensorModel {
            radius: 2.0,
            p_fp: 0.0,
            p_fn: 0.0,
        };
        let post = sensor_update(&prior, &o, 1, &model).unwrap();
        assert_eq!(post.belief.as_point(), Some(Cell::new(3, 4)));
        assert_eq!(post.belief.prob(Cell::new(3, 4)), 1.0);
    }

    #[test]
    fn perfect_sensor_miss_eliminates_observed_cells() {
        // Disc of radius 2.5 around (2,2) covers the 3×3 grid except (0,0).
        let prior = BeliefGrid::uniform(3, 3);
        let o = obs(Cell::new(2, 2), 2.5, vec![None, None]);
        assert!(!o.in_range(Cell::new(0, 0)) && o.in_range(Cell::new(0, 1)));
        let model = SensorModel {
            radius: 2.5,
            p_fp: 0.0,
            p_fn: 0.0,
        };
        let post = sensor_update(&prior, &o, 1, &model).unwrap();
        assert_eq!(post.belief.as_point(), Some(Cell::new(0, 0)));
    }

    #[test]
    fn false_negative_rate_with_perfect_specificity() {
        // Prior split over two in-range cells A=(0,0), B=(0,1); detection at A.
        let mut g = Grid::zeros(1, 2);
        g.set(Cell::new(0, 0), 0.5);
        g.set(Cell::new(0, 1), 0.5);
        let prior = BeliefGrid::from_grid(g).unwrap();
        let o = obs(Cell::new(0, 0), 5.0, vec![None, Some(Cell::new(0, 0))]);
        let model = SensorModel {
            radius: 5.0,
            p_fp: 0.0,
            p_fn: 0.2,
        };
        let post = sensor_update(&prior, &o, 1, &model).unwrap();
        // 0.5·0.8 / (0.5·0.8 + 0.5·0.2·0)
        assert_eq!(post.belief.prob(Cell::new(0, 0)), 1.0);
    }

    #[test]
    fn noisy_sensor_matches_hand_bayes() {
        // Three cells in a row, observer sees cells 0 and 1, detection at 1.
        let prior = BeliefGrid::uniform(1, 3);
        let o = obs(Cell::new(0, 0), 1.0, vec![None, Some(Cell::new(0, 1))]);
        let (fp, fnr) = (0.1, 0.2);
        let model = SensorModel {
            radius: 1.0,
            p_fp: fp,
            p_fn: fnr,
        };
        let post = sensor_update(&prior, &o, 1, &model).unwrap();
        // Full joint likelihoods over the two observed cells:
        let at0 = fnr * fp; // true cell 0 missed, cell 1 false positive
        let at1 = (1.0 - fp) * (1.0 - fnr);
        let at2 = (1.0 - fp) * fp; // nothing at 0, false positive at 1
        let z = at0 + at1 + at2;
        for (c, l) in [(0, at0), (1, at1), (2, at2)] {
            assert!((post.belief.prob(Cell::new(0, c)) - l / z).abs() < 1e-15);
        }
    }

    #[test]
    fn impossible_observation_resets_to_prior() {
        let prior = BeliefGrid::point_mass(4, 4, Cell::new(0, 0));
        let o = obs(Cell::new(3, 3), 1.5, vec![None, Some(Cell::new(3, 2))]);
        let model = SensorModel {
            radius: 1.5,
            p_fp: 0.0,
            p_fn: 0.0,
        };
        let post = sensor_update(&prior, &o, 1, &model).unwrap();
        assert!(post.reset_to_prior);
        assert_eq!(post.belief, prior);
    }

    #[test]
    fn merge_overwrites_window_with_point_masses() {
        let starts = [Cell::new(0, 0), Cell::new(4, 4)];
        let mut buf = HistoryBuffer::new(3, 0, &starts, 8, 8);
        let mut b = buf.current(1).clone();
        for t in 1..=3 {
            b = action_update(&b).unwrap();
            buf.push_belief(1, t, b.clone());
        }
        let traj = [(1, Cell::new(4, 5)), (2, Cell::new(4, 6)), (3, Cell::new(5, 6))];
        let changed = merge_history(&mut buf, 1, &traj);
        assert_eq!(changed.len(), 3);
        let track = buf.track(1).unwrap();
        for ((t, belief), (tt, cell)) in track.window().zip(traj) {
            assert_eq!(*t, tt);
            assert_eq!(belief.as_point(), Some(cell));
        }
        let spread = action_update(buf.current(1)).unwrap();
        assert_eq!(spread.prob(Cell::new(5, 6)), 0.0);
        assert_eq!(spread.prob(Cell::new(4, 5)), 1.0 / 8.0);
        // merging the same data again changes nothing
        assert!(merge_history(&mut buf, 1, &traj).is_empty());
    }

    #[test]
    fn merge_truncates_long_trajectories() {
        let starts = [Cell::new(0, 0), Cell::new(2, 2)];
        let mut buf = HistoryBuffer::new(2, 0, &starts, 5, 5);
        for t in 1..=2 {
            buf.push_belief(1, t, BeliefGrid::uniform(5, 5));
        }
        let traj = [(0, Cell::new(1, 1)), (1, Cell::new(1, 2)), (2, Cell::new(1, 3))];
        let changed = merge_history(&mut buf, 1, &traj);
        assert_eq!(changed.len(), 2);
        assert_eq!(buf.current(1).as_point(), Some(Cell::new(1, 3)));
    }

    #[test]
    fn reward_belief_formula_cases() {
        let prior = RewardBelief::from_field(&Grid::filled(4, 4, 1.0));
        // No teammates: only own cells are zeroed.
        let own = update_reward_belief(&prior, [], [Cell::new(1, 1)]).unwrap();
        assert_eq!(own.get(Cell::new(1, 1)), 0.0);
        assert_eq!(own.grid().sum(), 15.0);
        // A teammate point mass wipes its cell.
        let p = BeliefGrid::point_mass(4, 4, Cell::new(2, 2));
        let out = update_reward_belief(&prior, [&p], []).unwrap();
        assert_eq!(out.get(Cell::new(2, 2)), 0.0);
        // Over-subtraction clamps to zero instead of going negative.
        let mut g = Grid::zeros(4, 4);
        g.set(Cell::new(0, 3), 0.7);
        g.set(Cell::new(3, 3), 0.3);
        let b = BeliefGrid::from_grid(g).unwrap();
        let out = update_reward_belief(&prior, [&b, &b], []).unwrap();
        assert_eq!(out.get(Cell::new(0, 3)), 0.0);
        assert!((out.get(Cell::new(3, 3)) - 0.4).abs() < 1e-15);
        assert!(out.grid().as_slice().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn tracker_matches_direct_formula() {
        let (h, w, l) = (6, 7, 3);
        let starts = [Cell::new(0, 0), Cell::new(3, 3), Cell::new(5, 6)];
        let field = Grid::from_fn(h, w, |r, c| ((r * 7 + c) % 5) as f64 / 4.0);
        let prior = RewardBelief::from_field(&field);
        let mut buf = HistoryBuffer::new(l, 0, &starts, h, w);
        let mut tracker = RewardTracker::new(prior.clone(), l);
        let mut chain = vec![prior.clone()];
        let own_path = [(0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 4), (4, 4)];
        for t in 1..=own_path.len() {
            buf.push_own(t, Cell::new(own_path[t - 1].0, own_path[t - 1].1));
            for j in [1, 2] {
                let next = action_update(buf.current(j)).unwrap();
                tracker.add_entry(&next);
                if let Some(d) = buf.push_belief(j, t, next) {
                    tracker.apply_displaced(&d);
                }
            }
            if t % 3 == 0 {
                let traj: Vec<_> = (t.saturating_sub(l - 1)..=t).map(|k| (k, Cell::new(3, k as i32 % 7))).collect();
                for d in merge_history(&mut buf, 1, &traj) {
                    tracker.apply_displaced(&d);
                }
            }
            tracker.update(t, &buf);
            let base = if t > l { chain[t - l].clone() } else { prior.clone() };
            let window: Vec<&BeliefGrid> = [1, 2]
                .iter()
                .flat_map(|&j| buf.track(j).unwrap().window().map(|(_, b)| b))
                .collect();
            let own: Vec<Cell> = buf.own_trajectory().map(|(_, c)| *c).collect();
            let direct = update_reward_belief(&base, window, own).unwrap();
            for (a, b) in tracker.current().grid().as_slice().iter().zip(direct.grid().as_slice()) {
                assert!((a - b).abs() < 1e-12, "t={t}: {a} vs {b}");
            }
            chain.push(tracker.current().clone());
        }
    }

    #[test]
    fn point_mass_trajectories_never_raise_reward_belief() {
        let (h, w, l) = (5, 5, 2);
        let starts = [Cell::new(0, 0), Cell::new(4, 4)];
        let prior = RewardBelief::from_field(&Grid::filled(h, w, 1.0));
        let mut buf = HistoryBuffer::new(l, 0, &starts, h, w);
        let mut tracker = RewardTracker::new(prior, l);
        let mate = [(4, 3), (3, 3), (3, 2), (2, 2), (2, 1), (3, 1)];
        let mut last = tracker.current().clone();
        for (t, &(r, c)) in (1..).zip(mate.iter()) {
            buf.push_own(t, Cell::new(0, t as i32 % 5));
            let p = BeliefGrid::point_mass(h, w, Cell::new(r, c));
            tracker.add_entry(&p);
            if let Some(d) = buf.push_belief(1, t, p) {
                tracker.apply_displaced(&d);
            }
            tracker.update(t, &buf);
            for (now, before) in tracker.current().grid().as_slice().iter().zip(last.grid().as_slice()) {
                assert!(now <= before);
            }
            last = tracker.current().clone();
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn belief(h: usize, w: usize, raw: &[f64]) -> BeliefGrid {
            let total: f64 = raw.iter().sum();
            BeliefGrid::from_grid(Grid::from_vec(h, w, raw.iter().map(|v| v / total).collect())).unwrap()
        }

        proptest! {
            #[test]
            fn diffusion_never_sharpens(r in 5i32..25, c in 5i32..25, steps in 1usize..=5) {
                let mut b = BeliefGrid::point_mass(30, 30, Cell::new(r, c));
                let mut peak = b.mass().max();
                for _ in 0..steps {
                    b = action_update(&b).unwrap();
                    prop_assert!(b.mass().max() <= peak);
                    peak = b.mass().max();
                }
            }

            #[test]
            fn reward_belief_is_never_negative(
                field in proptest::collection::vec(-0.1f64..1.0, 16),
                mates in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 16), 0..6),
                own in proptest::collection::vec((0i32..4, 0i32..4), 0..4),
            ) {
                let prev = RewardBelief::from_field(&Grid::from_vec(4, 4, field));
                let window: Vec<BeliefGrid> = mates.iter().map(|m| belief(4, 4, m)).collect();
                let next = update_reward_belief(&prev, &window, own.iter().map(|&(r, c)| Cell::new(r, c))).unwrap();
                for (n, p) in next.grid().as_slice().iter().zip(prev.grid().as_slice()) {
                    prop_assert!(*n >= 0.0 && n <= p);
                }
            }
        }
    }
}
