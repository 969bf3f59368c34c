//! Hand-written reference controllers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::agent::{AgentView, Controller};
use crate::error::{Error, Result};
use crate::features::{level_radius, LEVELS};
use crate::grid::Cell;
use crate::policy::ActionMode;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Random,
    Greedy,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BaselineKind::Random),
            "greedy" => Ok(BaselineKind::Greedy),
            other => Err(Error::Validation(format!(
                "unknown baseline {other:?} (expected random or greedy)"
            ))),
        }
    }
}

/// Uniform over feasible moves.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomController;

impl Controller for RandomController {
    fn decide(&self, view: &AgentView<'_>, _mode: ActionMode, rng: &mut StreamRng) -> Result<Action> {
        let feasible: Vec<Action> = Action::all().filter(|a| view.mask.allows(*a)).collect();
        if feasible.is_empty() {
            return Err(Error::Contract("no feasible action".into()));
        }
        Ok(feasible[rng.random_range(0..feasible.len())])
    }
}

/// Heads for the best cell of the reward belief within the widest feature
/// window; ties go to the nearest such cell, then row-major order.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyController;

impl GreedyController {
    pub fn target(view: &AgentView<'_>) -> Cell {
        let grid = view.reward_belief.grid();
        let reach = level_radius(LEVELS - 1) as i32;
        let me = view.position;
        let mut best = me;
        let mut best_value = f64::NEG_INFINITY;
        let mut best_d = i64::MAX;
        for r in (me.row - reach).max(0)..=(me.row + reach).min(grid.height() as i32 - 1) {
            for c in (me.col - reach).max(0)..=(me.col + reach).min(grid.width() as i32 - 1) {
                let cell = Cell::new(r, c);
                if cell == me {
                    continue;
                }
                let v = grid.get(cell);
                let d = cell.distance_sq(me);
                if v > best_value || (v == best_value && d < best_d) {
                    best = cell;
                    best_value = v;
                    best_d = d;
                }
            }
        }
        best
    }
}

impl Controller for GreedyController {
    fn decide(&self, view: &AgentView<'_>, _mode: ActionMode, _rng: &mut StreamRng) -> Result<Action> {
        let target = Self::target(view);
        let (h, w) = (view.reward_belief.grid().height(), view.reward_belief.grid().width());
        Action::all()
            .filter(|a| view.mask.allows(*a))
            .min_by_key(|a| {
                let next = a.apply(view.position);
                debug_assert!(next.row >= 0 && (next.row as usize) < h && next.col >= 0 && (next.col as usize) < w);
                next.distance_sq(target)
            })
            .ok_or_else(|| Error::Contract("no feasible action".into()))
    }
}

pub fn controller(kind: BaselineKind) -> Box<dyn Controller> {
    match kind {
        BaselineKind::Random => Box::new(RandomController),
        BaselineKind::Greedy => Box::new(GreedyController),
    }
}
