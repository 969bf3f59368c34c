//! Artifact writers: trajectories, per-episode metrics, summaries,
//! sweep tables, training curves, and heatmaps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};
use crate::learn::CurvePoint;
use crate::metrics::{EpisodeLog, MetricsReport, ReportSummary};
use crate::runner::SweepRow;

pub const TRAJECTORY_HEADER: &str = "episode,robot,t,x1,x2,action,reward,override,neighbors";

/// Eight well-separated colors, cycled by robot id.
const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
];

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per robot per time step. `x1` is the column, `x2` counts rows
/// upward from the bottom edge. Step `t` carries the action taken there and
/// the reward it earned; the final position has empty action fields.
pub fn trajectories_csv(logs: &[EpisodeLog]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for (e, log) in logs.iter().enumerate() {
        let h = log.initial_map.height() as i32;
        for (i, robot) in log.robots.iter().enumerate() {
            for (t, cell) in robot.positions.iter().enumerate() {
                let (x1, x2) = (cell.col, h - 1 - cell.row);
                if t < robot.steps() {
                    let action = robot.actions[t].map(|a| a.index().to_string()).unwrap_or_default();
                    let _ = writeln!(
                        out,
                        "{e},{i},{t},{x1},{x2},{action},{},{},{}",
                        robot.rewards[t],
                        robot.overridden[t] as u8,
                        robot.neighbors[t].len()
                    );
                } else {
                    let _ = writeln!(out, "{e},{i},{t},{x1},{x2},,,,");
                }
            }
        }
    }
    out
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = format!("episode,{}\n", MetricsReport::CSV_FIELDS.join(","));
    for (e, r) in reports.iter().enumerate() {
        let fields: Vec<String> = r.values().iter().map(|v| opt(*v)).collect();
        let _ = writeln!(out, "{e},{}", fields.join(","));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("setting,value,trial,{}\n", MetricsReport::CSV_FIELDS.join(","));
    for row in rows {
        let fields: Vec<String> = row.report.values().iter().map(|v| opt(*v)).collect();
        let _ = writeln!(out, "{},{},{},{}", row.setting, row.value, row.trial, fields.join(","));
    }
    out
}

/// Per-setting summaries keyed as `setting=value`, in first-seen order.
pub fn sweep_summary(rows: &[SweepRow]) -> Vec<(String, ReportSummary)> {
    let mut keys: Vec<String> = Vec::new();
    for r in rows {
        let k = format!("{}={}", r.setting, r.value);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|k| {
            let reports: Vec<MetricsReport> = rows
                .iter()
                .filter(|r| format!("{}={}", r.setting, r.value) == k)
                .map(|r| r.report.clone())
                .collect();
            (k, ReportSummary::from_reports(&reports))
        })
        .collect()
}

pub fn summary_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
    s.push('\n');
    s
}

/// Binary PPM: map values in grey (`round(255·v)`, clamped to `[0, 1]`),
/// overlaid with each trajectory's visited cells in its robot's color.
pub fn heatmap_ppm(map: &Grid, trajectories: &[&[Cell]]) -> Vec<u8> {
    let (h, w) = (map.height(), map.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let mut pixels: Vec<[u8; 3]> = map
        .as_slice()
        .iter()
        .map(|v| {
            let g = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
            [g, g, g]
        })
        .collect();
    for (i, path) in trajectories.iter().enumerate() {
        for c in path.iter().filter(|c| map.contains(**c)) {
            pixels[map.idx(c.row as usize, c.col as usize)] = PALETTE[i % PALETTE.len()];
        }
    }
    out.extend(pixels.iter().flatten());
    out
}

/// Training curve without timing, so reruns compare byte for byte.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,mean_return,std_across_robots\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{}", p.epoch, p.mean_return, p.std_across_robots);
    }
    out
}

pub fn timing_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("epoch,wall_seconds\n");
    for p in curve {
        let _ = writeln!(out, "{},{:.3}", p.epoch, p.wall_seconds);
    }
    out
}

pub fn grid_csv(grid: &Grid) -> String {
    let mut out = String::new();
    for row in grid.as_slice().chunks(grid.width().max(1)) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Write trajectories.csv, metrics.csv, summary.json, episodes.json and one
/// heatmap per episode into `dir`.
pub fn export(logs: &[EpisodeLog], gamma: f64, dir: &Path) -> Result<Vec<MetricsReport>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let reports: Vec<MetricsReport> = logs.iter().map(|l| MetricsReport::from_log(l, gamma)).collect();
    write(&dir.join("trajectories.csv"), trajectories_csv(logs).as_bytes())?;
    write(&dir.join("metrics.csv"), metrics_csv(&reports).as_bytes())?;
    let summary = (!reports.is_empty()).then(|| ReportSummary::from_reports(&reports));
    write(&dir.join("summary.json"), summary_json(&summary).as_bytes())?;
    write(&dir.join("episodes.json"), summary_json(&logs).as_bytes())?;
    for (e, log) in logs.iter().enumerate() {
        let paths: Vec<&[Cell]> = log.robots.iter().map(|r| r.positions.get(1..).unwrap_or(&[])).collect();
        write(&dir.join(format!("heatmap_{e:03}.ppm")), &heatmap_ppm(&log.initial_map, &paths))?;
    }
    Ok(reports)
}

/// Read back `episodes.json` written by [`export`].
pub fn load_logs(path: &Path) -> Result<Vec<EpisodeLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })
}

pub fn write_sweep(rows: &[SweepRow], dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(format!("{name}.csv")), sweep_csv(rows).as_bytes())?;
    let summary: serde_json::Map<String, serde_json::Value> = sweep_summary(rows)
        .into_iter()
        .map(|(k, s)| (k, serde_json::to_value(s).expect("summary serializes")))
        .collect();
    write(&dir.join("summary.json"), summary_json(&summary).as_bytes())
}
