//! The run configuration file: one TOML document with `[train]`, `[sim]`,
//! `[map]` and `[experiment]` sections, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::SimConfig;
use crate::env::{generate_gaussian_map, load_map, GaussianFieldSpec, MapFormat, RewardMap};
use crate::error::{Error, Result};
use crate::learn::TrainConfig;
use crate::policy::ActionMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Train,
    #[default]
    Eval,
    TeamSizeSweep,
    CommRadiusSweep,
    CommFailure,
    RobotFailure,
    OnlineAdaptation,
}

/// Where the ground-truth field comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// CSV or PGM file; overrides the synthetic field when set.
    pub file: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    /// Mixture-of-Gaussians field; defaults to two hotspots scaled to the grid.
    pub field: Option<GaussianFieldSpec>,
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            file: None,
            height: 30,
            width: 30,
            field: None,
            seed: 0,
        }
    }
}

impl MapConfig {
    pub fn field_spec(&self) -> GaussianFieldSpec {
        self.field
            .clone()
            .unwrap_or_else(|| GaussianFieldSpec::two_hotspots(self.height.min(self.width)))
    }

    /// Load or generate the map. Relative file paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<RewardMap> {
        match &self.file {
            Some(file) => {
                let path = if file.is_relative() {
                    base_dir.join(file)
                } else {
                    file.clone()
                };
                let format = MapFormat::from_path(&path).ok_or_else(|| {
                    Error::Validation(format!(
                        "cannot tell the map format of {} (use .csv or .pgm)",
                        path.display()
                    ))
                })?;
                load_map(&path, format)
            }
            None => generate_gaussian_map(&self.field_spec(), self.height, self.width, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ScenarioKind,
    pub trials: usize,
    /// Step at which failures are injected.
    pub failure_step: usize,
    /// Communication-failure scenario: 1 all enabled, 2 comms lost,
    /// 3 comms and estimation lost, 4 global communication benchmark.
    pub failure_scenarios: Vec<u8>,
    /// Robots to disable at `failure_step` in the robot-failure experiment.
    pub kill: Vec<usize>,
    pub team_sizes: Vec<usize>,
    /// Communication radii as percentages of the grid diagonal.
    pub radius_percentages: Vec<f64>,
    pub refresh_period: usize,
    /// Per-step drift of the field's hotspots during online adaptation.
    pub drift: f64,
    /// Discount used by the evaluation metrics; defaults to the training discount.
    pub eval_gamma: Option<f64>,
    pub mode: ActionMode,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            kind: ScenarioKind::default(),
            trials: 40,
            failure_step: 20,
            failure_scenarios: vec![1, 2, 3, 4],
            kill: vec![1, 2],
            team_sizes: vec![2, 5, 10, 15, 20],
            radius_percentages: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0],
            refresh_period: 100,
            drift: 0.2,
            eval_gamma: None,
            mode: ActionMode::Argmax,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Validation("trials must be >= 1".into()));
        }
        if horizon > 0 && self.failure_step >= horizon {
            return Err(Error::Validation(format!(
                "failure step {} must be below the horizon {horizon}",
                self.failure_step
            )));
        }
        if let Some(p) = self
            .radius_percentages
            .iter()
            .find(|p| !(0.0..=100.0).contains(*p))
        {
            return Err(Error::Validation(format!("radius percentage {p} outside [0, 100]")));
        }
        if let Some(s) = self.failure_scenarios.iter().find(|s| !(1..=4).contains(*s)) {
            return Err(Error::Validation(format!("failure scenario {s} is not one of 1-4")));
        }
        if self.refresh_period == 0 {
            return Err(Error::Validation("refresh period must be >= 1".into()));
        }
        if let Some(g) = self.eval_gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Validation(format!("eval gamma {g} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub sim: SimConfig,
    pub map: MapConfig,
    pub experiment: ExperimentSpec,
}

impl RunConfig {
    pub fn from_toml(source_name: &str, text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let location = match e.span() {
                Some(span) => {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "unknown location".into(),
            };
            Error::Parse {
                source_name: source_name.to_string(),
                location,
                message: e.message().to_string(),
            }
        })?;
        cfg.train.sim = cfg.sim.clone();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&path.display().to_string(), &text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn eval_gamma(&self) -> f64 {
        self.experiment.eval_gamma.unwrap_or(self.train.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let mut train = self.train.clone();
        train.sim = self.sim.clone();
        train.validate()?;
        self.experiment.validate(self.train.horizon)
    }

    /// The training section with the shared simulation settings applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            sim: self.sim.clone(),
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
