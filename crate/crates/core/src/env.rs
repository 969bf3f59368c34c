//! Ground-truth world: reward field, robot positions, and transitions.

use std::f64::consts::PI;
use std::path::Path;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};
use crate::rng;

/// Value written into a cell once its data has been collected.
pub const DEFAULT_CONSUMED_VALUE: f64 = -0.1;

/// Per-cell reward field `F`, plus the record of which cells were consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardMap {
    values: Grid,
    consumed: Vec<bool>,
    consumed_value: f64,
}

impl RewardMap {
    /// Unconsumed values must be finite and non-negative; `consumed_value`
    /// must be negative.
    pub fn new(values: Grid, consumed_value: f64) -> Result<Self> {
        if values.height() == 0 || values.width() == 0 {
            return Err(Error::Validation("reward map must be at least 1x1".into()));
        }
        if !(consumed_value < 0.0) || !consumed_value.is_finite() {
            return Err(Error::Validation(format!(
                "consumed value must be negative and finite, got {consumed_value}"
            )));
        }
        if let Some(v) = values.as_slice().iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Validation(format!(
                "reward values must be finite and non-negative, found {v}"
            )));
        }
        let consumed = vec![false; values.len()];
        Ok(RewardMap {
            values,
            consumed,
            consumed_value,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        RewardMap::new(Grid::zeros(height, width), DEFAULT_CONSUMED_VALUE)
            .expect("zero map is valid")
    }

    pub fn with_consumed_value(mut self, consumed_value: f64) -> Result<Self> {
        if !(consumed_value < 0.0) || !consumed_value.is_finite() {
            return Err(Error::Validation(format!(
                "consumed value must be negative and finite, got {consumed_value}"
            )));
        }
        for (v, &c) in self.values.as_mut_slice().iter_mut().zip(&self.consumed) {
            if c {
                *v = consumed_value;
            }
        }
        self.consumed_value = consumed_value;
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    pub fn consumed_value(&self) -> f64 {
        self.consumed_value
    }

    pub fn value(&self, cell: Cell) -> f64 {
        self.values.get(cell)
    }

    pub fn is_consumed(&self, cell: Cell) -> bool {
        self.consumed[self.values.idx(cell.row as usize, cell.col as usize)]
    }

    pub fn consume(&mut self, cell: Cell) {
        let i = self.values.idx(cell.row as usize, cell.col as usize);
        self.consumed[i] = true;
        self.values.as_mut_slice()[i] = self.consumed_value;
    }

    /// Sum of all values that can still be collected.
    pub fn remaining_mass(&self) -> f64 {
        self.values.as_slice().iter().filter(|v| **v > 0.0).sum()
    }

    /// Replace the field values while keeping the consumption record.
    fn with_field(&self, field: Grid) -> RewardMap {
        let mut out = RewardMap {
            values: field,
            consumed: self.consumed.clone(),
            consumed_value: self.consumed_value,
        };
        for (v, &c) in out.values.as_mut_slice().iter_mut().zip(&out.consumed) {
            if c {
                *v = out.consumed_value;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    /// `(row, col)` in cell units; cell `(r, c)` has its center at `(r, c)`.
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub weight: f64,
}

impl GaussianComponent {
    pub fn isotropic(mean: [f64; 2], sigma: f64, weight: f64) -> Self {
        let s2 = sigma * sigma;
        GaussianComponent {
            mean,
            cov: [[s2, 0.0], [0.0, s2]],
            weight,
        }
    }

    fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.cov;
        let scale = a.abs().max(d.abs()).max(1.0);
        if !(self.weight > 0.0) || !self.weight.is_finite() {
            return Err(Error::Validation(format!(
                "component weight must be positive, got {}",
                self.weight
            )));
        }
        if !self.mean.iter().all(|m| m.is_finite()) {
            return Err(Error::Validation("component mean must be finite".into()));
        }
        if (b - c).abs() > 1e-12 * scale {
            return Err(Error::Validation(format!(
                "covariance is not symmetric: {:?}",
                self.cov
            )));
        }
        if !(a > 0.0) || !(a * d - b * c > 0.0) {
            return Err(Error::Validation(format!(
                "covariance is not positive definite: {:?}",
                self.cov
            )));
        }
        Ok(())
    }

    fn density(&self, row: f64, col: f64) -> f64 {
        let [[a, b], [_, d]] = self.cov;
        let det = a * d - b * b;
        let (x, y) = (row - self.mean[0], col - self.mean[1]);
        let quad = (d * x * x - 2.0 * b * x * y + a * y * y) / det;
        self.weight * (-0.5 * quad).exp() / (2.0 * PI * det.sqrt())
    }
}

/// Mixture-of-Gaussians field description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFieldSpec {
    pub components: Vec<GaussianComponent>,
    /// Largest per-step displacement of each mean for dynamic fields.
    #[serde(default)]
    pub drift: f64,
    /// Draw every mean uniformly over the grid from the seed, ignoring the
    /// configured means.
    #[serde(default)]
    pub randomize_means: bool,
}

impl GaussianFieldSpec {
    /// Two-hotspot field scaled to a `side`×`side` grid.
    pub fn two_hotspots(side: usize) -> Self {
        let s = side as f64;
        GaussianFieldSpec {
            components: vec![
                GaussianComponent::isotropic([0.3 * s, 0.7 * s], 0.15 * s, 1.0),
                GaussianComponent::isotropic([0.7 * s, 0.3 * s], 0.18 * s, 1.2),
            ],
            drift: 0.0,
            randomize_means: false,
        }
    }

    /// This field description with randomized means drawn from `seed`, or a plain copy.
    pub fn resolve_means(&self, height: usize, width: usize, seed: u64) -> GaussianFieldSpec {
        let mut out = self.clone();
        if self.randomize_means {
            let mut rng = rng::stream(seed, &[0x6d65_616e]);
            for comp in &mut out.components {
                comp.mean = [
                    rng.random_range(0.0..=(height - 1) as f64),
                    rng.random_range(0.0..=(width - 1) as f64),
                ];
            }
            out.randomize_means = false;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.drift >= 0.0) || !self.drift.is_finite() {
            return Err(Error::Validation(format!(
                "drift must be finite and >= 0, got {}",
                self.drift
            )));
        }
        self.components.iter().try_for_each(GaussianComponent::validate)
    }
}

/// Evaluate the mixture at cell centers and scale so the peak cell is 1.0.
pub fn generate_gaussian_map(
    spec: &GaussianFieldSpec,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<RewardMap> {
    if height == 0 || width == 0 {
        return Err(Error::Validation("map dimensions must be >= 1".into()));
    }
    spec.validate()?;
    let components = spec.resolve_means(height, width, seed).components;
    let mut field = Grid::from_fn(height, width, |r, c| {
        components
            .iter()
            .map(|k| k.density(r as f64, c as f64))
            .sum()
    });
    let peak = field.max();
    if peak > 0.0 {
        field.as_mut_slice().iter_mut().for_each(|v| *v /= peak);
    }
    RewardMap::new(field, DEFAULT_CONSUMED_VALUE)
}

/// Random-walk every component mean (uniform in a disc of radius `drift`,
/// clamped to the grid) and regenerate the field. Cells already consumed
/// in `map` stay consumed. Returns the moved spec alongside the new map.
pub fn evolve_field(
    map: &RewardMap,
    spec: &GaussianFieldSpec,
    seed: u64,
    t: usize,
) -> Result<(GaussianFieldSpec, RewardMap)> {
    spec.validate()?;
    let (h, w) = (map.height(), map.width());
    let mut moved = spec.clone();
    moved.randomize_means = false;
    let mut rng = rng::stream(seed, &[0x64_7269_6674, t as u64]);
    for comp in &mut moved.components {
        let radius = spec.drift * rng.random::<f64>().sqrt();
        let angle = 2.0 * PI * rng.random::<f64>();
        comp.mean[0] = (comp.mean[0] + radius * angle.sin()).clamp(0.0, (h - 1) as f64);
        comp.mean[1] = (comp.mean[1] + radius * angle.cos()).clamp(0.0, (w - 1) as f64);
    }
    let fresh = generate_gaussian_map(&moved, h, w, seed)?;
    Ok((moved, map.with_field(fresh.values)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFormat {
    Csv,
    Pgm,
}

impl MapFormat {
    pub fn from_path(path: &Path) -> Option<MapFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(MapFormat::Csv),
            "pgm" => Some(MapFormat::Pgm),
            _ => None,
        }
    }
}

pub fn load_map(path: &Path, format: MapFormat) -> Result<RewardMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let grid = match format {
        MapFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                source_name: name.clone(),
                location: format!("byte {}", e.valid_up_to()),
                message: "file is not valid UTF-8".into(),
            })?;
            parse_csv(&name, text)?
        }
        MapFormat::Pgm => parse_pgm(&name, &bytes)?,
    };
    RewardMap::new(max_normalize(grid), DEFAULT_CONSUMED_VALUE)
}

fn max_normalize(mut grid: Grid) -> Grid {
    let peak = grid.max();
    if peak > 0.0 {
        grid.as_mut_slice().iter_mut().for_each(|v| *v /= peak);
    }
    grid
}

/// Comma-separated rows; file line order is row order. Values are returned
/// as parsed (no normalization).
pub fn parse_csv(source_name: &str, text: &str) -> Result<Grid> {
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        location: format!("line {line}"),
        message,
    };
    let mut width = None;
    let mut data = Vec::new();
    let mut height = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(i + 1, format!("invalid number {tok:?}")))
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(
                    i + 1,
                    format!("ragged row: expected {w} values, found {}", row.len()),
                ))
            }
            _ => {}
        }
        if let Some(v) = row.iter().find(|v| **v < 0.0) {
            return Err(parse_err(i + 1, format!("negative reward value {v}")));
        }
        data.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| parse_err(1, "no data rows".into()))?;
    Ok(Grid::from_vec(height, width, data))
}

/// Binary 8-bit greyscale PGM (`P5`).
pub fn parse_pgm(source_name: &str, bytes: &[u8]) -> Result<Grid> {
    let err = |offset: usize, message: &str| Error::Parse {
        source_name: source_name.to_string(),
        location: format!("byte {offset}"),
        message: message.to_string(),
    };
    let mut pos = 0;
    // Next whitespace-delimited header token, skipping `#` comments.
    let token = |pos: &mut usize| -> Result<(usize, String)> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(err(start, "unexpected end of header"));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
    };
    let (at, magic) = token(&mut pos)?;
    if magic != "P5" {
        return Err(err(at, "unsupported format: only binary P5 PGM is accepted"));
    }
    let number = |pos: &mut usize, what: &str| -> Result<usize> {
        let (at, tok) = token(pos)?;
        tok.parse::<usize>()
            .map_err(|_| err(at, &format!("invalid {what} {tok:?}")))
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(err(pos, "image dimensions must be >= 1"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(err(pos, "unsupported maxval: only 8-bit PGM is accepted"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let raster = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| err(bytes.len(), "raster shorter than width*height"))?;
    let data = raster.iter().map(|&b| b as f64).collect();
    Ok(Grid::from_vec(height, width, data))
}

/// What happened during one [`WorldState::apply`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutcome {
    pub rewards: Vec<f64>,
    /// Share `F/c` of the cell value each robot collected (zero for dead robots).
    pub collected: Vec<f64>,
    pub collided: Vec<bool>,
    /// Robots that were dead but still got an action; the action was ignored.
    pub ignored_dead: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub map: RewardMap,
    positions: Vec<Cell>,
    alive: Vec<bool>,
    t: usize,
    horizon: usize,
    collision_penalty: f64,
}

impl WorldState {
    pub fn new(
        map: RewardMap,
        positions: Vec<Cell>,
        horizon: usize,
        collision_penalty: f64,
    ) -> Result<Self> {
        if let Some(p) = positions.iter().find(|p| !map.values().contains(**p)) {
            return Err(Error::Validation(format!("start cell {p:?} outside the map")));
        }
        let alive = vec![true; positions.len()];
        Ok(WorldState {
            map,
            positions,
            alive,
            t: 0,
            horizon,
            collision_penalty,
        })
    }

    pub fn num_robots(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Cell] {
        &self.positions
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn is_alive(&self, robot: usize) -> bool {
        self.alive[robot]
    }

    pub fn kill(&mut self, robot: usize) {
        self.alive[robot] = false;
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.horizon
    }

    /// Replace the ground-truth field, e.g. for time-varying fields.
    pub fn replace_map(&mut self, map: RewardMap) {
        debug_assert_eq!(map.height(), self.map.height());
        debug_assert_eq!(map.width(), self.map.width());
        self.map = map;
    }

    /// Pure transition: returns the successor state and the outcome.
    pub fn step(&self, actions: &[Action]) -> Result<(WorldState, StepOutcome)> {
        let mut next = self.clone();
        let outcome = next.apply(actions)?;
        Ok((next, outcome))
    }

    /// In-place transition. Every alive robot moves (off-grid moves are
    /// clamped per axis), earns `F(x)/c` plus the collision penalty when it
    /// shares its cell, and the visited cells are consumed afterwards.
    pub fn apply(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        let n = self.positions.len();
        if actions.len() != n {
            return Err(Error::Contract(format!(
                "expected {n} actions, got {}",
                actions.len()
            )));
        }
        if self.t >= self.horizon {
            return Err(Error::Contract(format!(
                "episode already at horizon {}",
                self.horizon
            )));
        }
        let mut outcome = StepOutcome {
            rewards: vec![0.0; n],
            collected: vec![0.0; n],
            collided: vec![false; n],
            ignored_dead: Vec::new(),
        };
        for (i, &a) in actions.iter().enumerate() {
            if self.alive[i] {
                let moved = a.apply(self.positions[i]);
                self.positions[i] = self.map.values().clamp_cell(moved);
            } else {
                outcome.ignored_dead.push(i);
            }
        }
        if !outcome.ignored_dead.is_empty() {
            debug!(
                "t={}: ignored actions for dead robots {:?}",
                self.t, outcome.ignored_dead
            );
        }
        for i in (0..n).filter(|&i| self.alive[i]) {
            let here = self.positions[i];
            let occupants = (0..n)
                .filter(|&j| self.alive[j] && self.positions[j] == here)
                .count();
            let share = self.map.value(here) / occupants as f64;
            outcome.collected[i] = share;
            outcome.collided[i] = occupants > 1;
            outcome.rewards[i] = share
                + if occupants > 1 {
                    self.collision_penalty
                } else {
                    0.0
                };
        }
        for i in 0..n {
            if self.alive[i] {
                self.map.consume(self.positions[i]);
            }
        }
        self.t += 1;
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_map(h: usize, w: usize, v: f64) -> RewardMap {
        RewardMap::new(Grid::filled(h, w, v), DEFAULT_CONSUMED_VALUE).unwrap()
    }

    #[test]
    fn single_component_peaks_at_mean() {
        let spec = GaussianFieldSpec {
            components: vec![GaussianComponent::isotropic([5.0, 5.0], 2.0, 1.0)],
            drift: 0.0,
            randomize_means: false,
        };
        let map = generate_gaussian_map(&spec, 12, 10, 0).unwrap();
        assert_eq!(map.values().argmax(), Cell::new(5, 5));
        assert_eq!(map.value(Cell::new(5, 5)), 1.0);
    }

    #[test]
    fn empty_mixture_is_zero_map() {
        let spec = GaussianFieldSpec {
            components: vec![],
            drift: 0.0,
            randomize_means: false,
        };
        let map = generate_gaussian_map(&spec, 4, 3, 0).unwrap();
        assert!(map.values().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_component_equals_doubled_weight() {
        let k = GaussianComponent::isotropic([3.0, 4.0], 1.5, 1.0);
        let twice = GaussianFieldSpec {
            components: vec![k.clone(), k.clone()],
            drift: 0.0,
            randomize_means: false,
        };
        let heavy = GaussianFieldSpec {
            components: vec![GaussianComponent { weight: 2.0, ..k }],
            drift: 0.0,
            randomize_means: false,
        };
        let a = generate_gaussian_map(&twice, 8, 8, 0).unwrap();
        let b = generate_gaussian_map(&heavy, 8, 8, 0).unwrap();
        for (x, y) in a.values().as_slice().iter().zip(b.values().as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn non_spd_covariance_is_rejected() {
        let spec = GaussianFieldSpec {
            components: vec![GaussianComponent {
                mean: [1.0, 1.0],
                cov: [[1.0, 2.0], [2.0, 1.0]],
                weight: 1.0,
            }],
            drift: 0.0,
            randomize_means: false,
        };
        assert!(matches!(
            generate_gaussian_map(&spec, 4, 4, 0),
            Err(Error::Validation(_))
        ));
        let asym = GaussianFieldSpec {
            components: vec![GaussianComponent {
                mean: [1.0, 1.0],
                cov: [[1.0, 0.2], [0.1, 1.0]],
                weight: 1.0,
            }],
            ..spec
        };
        assert!(generate_gaussian_map(&asym, 4, 4, 0).is_err());
    }

    #[test]
    fn randomized_means_depend_on_seed_only() {
        let spec = GaussianFieldSpec {
            randomize_means: true,
            ..GaussianFieldSpec::two_hotspots(20)
        };
        let a = generate_gaussian_map(&spec, 20, 20, 3).unwrap();
        let b = generate_gaussian_map(&spec, 20, 20, 3).unwrap();
        let c = generate_gaussian_map(&spec, 20, 20, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn csv_is_max_normalized() {
        let g = max_normalize(parse_csv("t", "0,1\n2,3").unwrap());
        assert_eq!(g.height(), 2);
        assert_eq!(g.as_slice(), &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let z = max_normalize(parse_csv("t", "0,0\n0,0\n").unwrap());
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let ragged = parse_csv("m.csv", "1,2\n3\n").unwrap_err().to_string();
        assert!(ragged.contains("line 2"), "{ragged}");
        let junk = parse_csv("m.csv", "1,x\n").unwrap_err().to_string();
        assert!(junk.contains("line 1") && junk.contains("\"x\""), "{junk}");
    }

    #[test]
    fn pgm_single_bright_pixel() {
        let mut bytes = b"P5\n# comment\n3 2\n255\n".to_vec();
        bytes.extend([0, 0, 0, 0, 255, 0]);
        let g = max_normalize(parse_pgm("t", &bytes).unwrap());
        assert_eq!((g.height(), g.width()), (2, 3));
        assert_eq!(g.at(1, 1), 1.0);
        assert_eq!(g.sum(), 1.0);
    }

    #[test]
    fn pgm_rejects_ascii_and_truncation() {
        let e = parse_pgm("t", b"P2\n1 1\n255\n0\n").unwrap_err().to_string();
        assert!(e.contains("byte 0"), "{e}");
        assert!(parse_pgm("t", b"P5\n2 2\n255\n\x01").is_err());
    }

    #[test]
    fn lone_robot_collects_cell() {
        let mut values = Grid::zeros(3, 3);
        values.set(Cell::new(1, 2), 0.8);
        let map = RewardMap::new(values, DEFAULT_CONSUMED_VALUE).unwrap();
        let world = WorldState::new(map, vec![Cell::new(1, 1)], 5, -2.0).unwrap();
        let (next, out) = world.step(&[Action::EAST]).unwrap();
        assert_eq!(out.rewards, vec![0.8]);
        assert_eq!(next.map.value(Cell::new(1, 2)), DEFAULT_CONSUMED_VALUE);
        assert_eq!(next.t(), 1);
    }

    #[test]
    fn shared_cell_splits_and_penalizes() {
        let map = flat_map(3, 3, 1.0);
        let world =
            WorldState::new(map, vec![Cell::new(1, 0), Cell::new(1, 2)], 5, -2.0).unwrap();
        let (_, out) = world.step(&[Action::EAST, Action::WEST]).unwrap();
        assert_eq!(out.rewards, vec![-1.5, -1.5]);
        assert_eq!(out.collided, vec![true, true]);
    }

    #[test]
    fn revisiting_consumed_cell_costs_consumed_value() {
        let map = flat_map(1, 3, 1.0);
        let world = WorldState::new(map, vec![Cell::new(0, 1)], 5, -2.0).unwrap();
        let (w1, r1) = world.step(&[Action::EAST]).unwrap();
        let (_, r2) = w1.step(&[Action::EAST]).unwrap();
        assert_eq!(r1.rewards, vec![1.0]);
        // clamped against the east edge: stays on the consumed cell
        assert!((r2.rewards[0] - DEFAULT_CONSUMED_VALUE).abs() < 1e-15);
    }

    #[test]
    fn wrong_action_count_and_horizon_are_errors() {
        let world = WorldState::new(flat_map(2, 2, 0.5), vec![Cell::new(0, 0)], 1, -2.0).unwrap();
        assert!(matches!(world.step(&[]), Err(Error::Contract(_))));
        let (done, _) = world.step(&[Action::SOUTH]).unwrap();
        assert!(done.is_done());
        assert!(matches!(done.step(&[Action::NORTH]), Err(Error::Contract(_))));
    }

    #[test]
    fn dead_robots_are_inert() {
        let mut world = WorldState::new(
            flat_map(3, 3, 1.0),
            vec![Cell::new(0, 0), Cell::new(2, 2)],
            5,
            -2.0,
        )
        .unwrap();
        world.kill(1);
        let out = world.apply(&[Action::SOUTH, Action::NORTH]).unwrap();
        assert_eq!(world.positions()[1], Cell::new(2, 2));
        assert_eq!(out.rewards[1], 0.0);
        assert_eq!(out.ignored_dead, vec![1]);
        assert!(!world.map.is_consumed(Cell::new(2, 2)));
    }

    #[test]
    fn zero_drift_regenerates_same_field() {
        let spec = GaussianFieldSpec::two_hotspots(15);
        let map = generate_gaussian_map(&spec, 15, 15, 1).unwrap();
        let (moved, evolved) = evolve_field(&map, &spec, 9, 3).unwrap();
        assert_eq!(moved.components, spec.components);
        assert_eq!(evolved, map);
    }

    #[test]
    fn drift_keeps_means_inside_and_is_deterministic() {
        let spec = GaussianFieldSpec {
            components: vec![GaussianComponent::isotropic([0.0, 0.0], 2.0, 1.0)],
            drift: 50.0,
            randomize_means: false,
        };
        let map = generate_gaussian_map(&spec, 10, 8, 0).unwrap();
        for t in 0..20 {
            let (moved, m1) = evolve_field(&map, &spec, 5, t).unwrap();
            let [r, c] = moved.components[0].mean;
            assert!((0.0..=9.0).contains(&r) && (0.0..=7.0).contains(&c));
            let (_, m2) = evolve_field(&map, &spec, 5, t).unwrap();
            assert_eq!(m1, m2);
        }
    }

    #[test]
    fn evolution_preserves_consumption() {
        let spec = GaussianFieldSpec {
            drift: 2.0,
            ..GaussianFieldSpec::two_hotspots(10)
        };
        let mut map = generate_gaussian_map(&spec, 10, 10, 0).unwrap();
        map.consume(Cell::new(4, 4));
        let (_, next) = evolve_field(&map, &spec, 1, 1).unwrap();
        assert!(next.is_consumed(Cell::new(4, 4)));
        assert_eq!(next.value(Cell::new(4, 4)), DEFAULT_CONSUMED_VALUE);
    }

    fn arb_world() -> impl Strategy<Value = (WorldState, Vec<Vec<Action>>)> {
        (2usize..7, 2usize..7, 1usize..5, 1usize..12).prop_flat_map(|(h, w, n, steps)| {
            (
                proptest::collection::vec(0.0f64..1.0, h * w),
                proptest::collection::vec((0..h as i32, 0..w as i32), n),
                proptest::collection::vec(proptest::collection::vec(0usize..8, n), steps),
            )
                .prop_map(move |(vals, starts, acts)| {
                    let map = RewardMap::new(Grid::from_vec(h, w, vals), -0.1).unwrap();
                    let starts = starts.into_iter().map(|(r, c)| Cell::new(r, c)).collect();
                    let world = WorldState::new(map, starts, 100, -2.0).unwrap();
                    let acts = acts
                        .into_iter()
                        .map(|a| a.into_iter().map(|i| Action::new(i).unwrap()).collect())
                        .collect();
                    (world, acts)
                })
        })
    }

    proptest! {
        #[test]
        fn collected_reward_bounded_by_initial_mass((world, plan) in arb_world()) {
            let initial = world.map.remaining_mass();
            let mut w = world.clone();
            let mut collected = 0.0;
            for acts in &plan {
                let out = w.apply(acts).unwrap();
                collected += out.collected.iter().filter(|v| **v > 0.0).sum::<f64>();
                prop_assert!(w.positions().iter().all(|p| w.map.values().contains(*p)));
                let distinct: std::collections::HashSet<_> = w.positions().iter().collect();
                if distinct.len() == w.num_robots() {
                    let total: f64 = out.rewards.iter().sum();
                    let collected_now: f64 = out.collected.iter().sum();
                    prop_assert!((total - collected_now).abs() < 1e-12);
                }
            }
            prop_assert!(collected <= initial + 1e-9);
        }

        #[test]
        fn step_is_deterministic((world, plan) in arb_world()) {
            let a = world.step(&plan[0]).unwrap();
            let b = world.step(&plan[0]).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
