//! Episode logs and the evaluation metrics computed from them.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::agent::SimConfig;
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};

/// Per-robot record of one episode. Step-indexed vectors have one entry
/// per transition; `positions` additionally holds the start cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotTrace {
    pub positions: Vec<Cell>,
    /// `None` while the robot is dead.
    pub actions: Vec<Option<Action>>,
    pub rewards: Vec<f64>,
    /// Cell value share collected at each step, excluding penalties.
    pub collected: Vec<f64>,
    pub alive: Vec<bool>,
    pub overridden: Vec<bool>,
    pub neighbors: Vec<Vec<usize>>,
}

impl RobotTrace {
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn steps_traveled(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    /// Distinct cells entered by moving (the start cell alone does not count).
    pub fn visited_cells(&self) -> HashSet<Cell> {
        self.positions
            .iter()
            .skip(1)
            .zip(&self.alive)
            .filter(|(_, alive)| **alive)
            .map(|(c, _)| *c)
            .collect()
    }
}

/// A trajectory message delivered during the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommEvent {
    pub t: usize,
    pub receiver: usize,
    pub sender: usize,
    pub trajectory: Vec<(usize, Cell)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub robots: Vec<RobotTrace>,
    pub initial_map: Grid,
    pub horizon: usize,
    pub config: SimConfig,
    #[serde(default)]
    pub messages: Vec<CommEvent>,
    /// Non-fatal anomalies, e.g. actions sent to dead robots.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EpisodeLog {
    pub fn num_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn steps(&self) -> usize {
        self.robots.first().map_or(0, RobotTrace::steps)
    }
}

/// Per-robot `Σ_{t≥1} γ^t R_t`, reported as mean and population standard
/// deviation over robots.
pub fn discounted_accumulated_reward(log: &EpisodeLog, gamma: f64) -> (f64, f64) {
    let per_robot: Vec<f64> = log
        .robots
        .iter()
        .map(|r| discounted_sum(&r.rewards, gamma))
        .collect();
    mean_std(&per_robot)
}

/// `Σ_{k=1..} γ^k x_k` where `xs[0]` is `x_1`.
pub fn discounted_sum(xs: &[f64], gamma: f64) -> f64 {
    let mut weight = gamma;
    let mut total = 0.0;
    for x in xs {
        total += weight * x;
        weight *= gamma;
    }
    total
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Average over robot pairs of the number of distinct cells both visited,
/// and that average as a percentage of the mean number of steps traveled.
pub fn pairwise_overlap(log: &EpisodeLog) -> Result<(f64, f64)> {
    let n = log.num_robots();
    if n < 2 {
        return Err(Error::MetricUndefined(format!(
            "pairwise overlap needs at least 2 robots, log has {n}"
        )));
    }
    let sets: Vec<HashSet<Cell>> = log.robots.iter().map(RobotTrace::visited_cells).collect();
    let mut total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += sets[i].intersection(&sets[j]).count();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let average = total as f64 / pairs;
    let steps = log
        .robots
        .iter()
        .map(|r| r.steps_traveled() as f64)
        .sum::<f64>()
        / n as f64;
    let percentage = if steps > 0.0 { 100.0 * average / steps } else { 0.0 };
    Ok((average, percentage))
}

/// Largest reward a team of `robots` could gather in `horizon` steps:
/// the smaller of the total positive mass and the `robots·horizon` best cells.
pub fn reward_budget(map: &Grid, robots: usize, horizon: usize) -> f64 {
    let mut positive: Vec<f64> = map.as_slice().iter().copied().filter(|v| *v > 0.0).collect();
    let total: f64 = positive.iter().sum();
    positive.sort_by(|a, b| b.total_cmp(a));
    let top: f64 = positive.iter().take(robots * horizon).sum();
    total.min(top)
}

/// Collected positive reward over the reachable budget, clipped to `[0, 1]`.
pub fn coverage(log: &EpisodeLog) -> f64 {
    let collected: f64 = log
        .robots
        .iter()
        .flat_map(|r| r.collected.iter())
        .filter(|v| **v > 0.0)
        .sum();
    let budget = reward_budget(&log.initial_map, log.num_robots(), log.steps());
    if budget <= 0.0 {
        return 1.0;
    }
    (collected / budget).clamp(0.0, 1.0)
}

/// `(1/N) Σᵢ Σₜ |Nᵢ,ₜ|`.
pub fn communication_volume(log: &EpisodeLog) -> f64 {
    let n = log.num_robots();
    if n == 0 {
        return 0.0;
    }
    let total: usize = log
        .robots
        .iter()
        .flat_map(|r| r.neighbors.iter())
        .map(Vec::len)
        .sum();
    total as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub discounted_reward: f64,
    pub discounted_reward_std: f64,
    /// `None` for single-robot episodes.
    pub pairwise_overlap: Option<f64>,
    pub overlap_percentage: Option<f64>,
    pub coverage: f64,
    pub communication_volume: f64,
}

impl MetricsReport {
    pub fn from_log(log: &EpisodeLog, gamma: f64) -> Self {
        let (discounted_reward, discounted_reward_std) = discounted_accumulated_reward(log, gamma);
        let overlap = pairwise_overlap(log).ok();
        MetricsReport {
            discounted_reward,
            discounted_reward_std,
            pairwise_overlap: overlap.map(|o| o.0),
            overlap_percentage: overlap.map(|o| o.1),
            coverage: coverage(log),
            communication_volume: communication_volume(log),
        }
    }

    pub const CSV_FIELDS: [&'static str; 6] = [
        "discounted_reward",
        "discounted_reward_std",
        "pairwise_overlap",
        "overlap_percentage",
        "coverage",
        "communication_volume",
    ];

    pub fn values(&self) -> [Option<f64>; 6] {
        [
            Some(self.discounted_reward),
            Some(self.discounted_reward_std),
            self.pairwise_overlap,
            self.overlap_percentage,
            Some(self.coverage),
            Some(self.communication_volume),
        ]
    }
}

/// Mean and 95% normal-approximation half-width over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub ci95: f64,
    pub trials: usize,
}

impl Interval {
    pub fn from_samples(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        let trials = xs.len();
        let ci95 = if trials > 0 {
            1.96 * std / (trials as f64).sqrt()
        } else {
            0.0
        };
        Interval { mean, ci95, trials }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub discounted_reward: Interval,
    pub discounted_reward_std: Interval,
    pub pairwise_overlap: Option<Interval>,
    pub overlap_percentage: Option<Interval>,
    pub coverage: Interval,
    pub communication_volume: Interval,
}

impl ReportSummary {
    pub fn from_reports(reports: &[MetricsReport]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| {
            Interval::from_samples(&reports.iter().map(f).collect::<Vec<_>>())
        };
        let opt = |f: fn(&MetricsReport) -> Option<f64>| {
            let xs: Option<Vec<f64>> = reports.iter().map(f).collect();
            xs.filter(|v| !v.is_empty()).map(|v| Interval::from_samples(&v))
        };
        ReportSummary {
            discounted_reward: col(|r| r.discounted_reward),
            discounted_reward_std: col(|r| r.discounted_reward_std),
            pairwise_overlap: opt(|r| r.pairwise_overlap),
            overlap_percentage: opt(|r| r.overlap_percentage),
            coverage: col(|r| r.coverage),
            communication_volume: col(|r| r.communication_volume),
        }
    }
}
