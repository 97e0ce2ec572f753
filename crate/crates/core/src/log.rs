//! Deterministic run records: full JSON structure, flat CSV rows, and the
//! metrics computed from them.
//!
//! CSV column schema (one row per step per ship):
//! `step,time_s,ship_id,x_n,y_n,chi_n,u_y,u_s,epsilon,residual,priority_rank,event`
//! An absent safety index (no neighbors) is an empty cell in CSV and `null`
//! in JSON. Events within one cell are joined with `;`.

use crate::frames::{active_segment, to_path_frame, InertialState};
use crate::scenario::{Scenario, ScenarioConfig};
use crate::vessel::step;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot infer log format from path '{0}' (expected .csv or .json)")]
    UnknownFormat(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    Json,
}

impl LogFormat {
    pub fn from_path(path: &Path) -> Result<Self, LogError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(LogFormat::Csv),
            Some("json") => Ok(LogFormat::Json),
            _ => Err(LogError::UnknownFormat(path.display().to_string())),
        }
    }
}

/// Risk this ship currently projects from one neighbor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRisk {
    pub other: u32,
    pub risk: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShipRecord {
    pub ship_id: u32,
    pub x_n: f64,
    pub y_n: f64,
    pub chi_n: f64,
    pub u_y: f64,
    pub u_s: f64,
    /// Safety index; `None` when the ship has no neighbors.
    pub epsilon: Option<f64>,
    pub pair_risks: Vec<PairRisk>,
    /// Broadcast-vs-local trajectory gap after the ship's last update this
    /// period, m. Zero for ships that never updated.
    pub residual: f64,
    /// Number of ships this ship gives way to; 0 is highest priority.
    pub priority_rank: usize,
    pub event: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time_s: f64,
    /// Priority value table snapshot: `rho[i][j]` is subject j's value on
    /// observer i's table.
    pub rho: Vec<Vec<f64>>,
    pub gives_way: Vec<Vec<bool>>,
    pub ships: Vec<ShipRecord>,
}

/// The full deterministic record of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimLog {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub config_digest: String,
    pub steps: Vec<StepRecord>,
}

impl SimLog {
    pub fn ship_count(&self) -> usize {
        self.scenario.ships.len()
    }

    pub fn to_json_string(&self) -> Result<String, LogError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, LogError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("step,time_s,ship_id,x_n,y_n,chi_n,u_y,u_s,epsilon,residual,priority_rank,event\n");
        for step in &self.steps {
            for ship in &step.ships {
                let eps = ship.epsilon.map(|e| e.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    step.step,
                    step.time_s,
                    ship.ship_id,
                    ship.x_n,
                    ship.y_n,
                    ship.chi_n,
                    ship.u_y,
                    ship.u_s,
                    eps,
                    ship.residual,
                    ship.priority_rank,
                    ship.event
                );
            }
        }
        out
    }

    /// Writes the log in the given format, or infers the format from the
    /// path extension.
    pub fn write(&self, path: &Path, format: Option<LogFormat>) -> Result<(), LogError> {
        let format = match format {
            Some(f) => f,
            None => LogFormat::from_path(path)?,
        };
        let text = match format {
            LogFormat::Csv => self.to_csv_string(),
            LogFormat::Json => self.to_json_string()?,
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    fn ship_index(&self, ship_id: u32) -> usize {
        self.scenario
            .ships
            .iter()
            .position(|s| s.id == ship_id)
            .expect("unknown ship id")
    }

    /// Smallest safety index over the run; infinite when never defined.
    pub fn min_epsilon(&self, ship_id: u32) -> f64 {
        let idx = self.ship_index(ship_id);
        self.steps
            .iter()
            .filter_map(|s| s.ships[idx].epsilon)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn min_u_s(&self, ship_id: u32) -> f64 {
        let idx = self.ship_index(ship_id);
        self.steps
            .iter()
            .map(|s| s.ships[idx].u_s)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_residual(&self, ship_id: u32) -> f64 {
        let idx = self.ship_index(ship_id);
        self.steps
            .iter()
            .map(|s| s.ships[idx].residual)
            .fold(0.0, f64::max)
    }

    pub fn events_matching(&self, needle: &str) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.ships)
            .filter(|r| r.event.split(';').any(|e| e == needle))
            .count()
    }

    fn states_of(&self, idx: usize) -> impl Iterator<Item = InertialState> + '_ {
        self.steps.iter().map(move |s| {
            let r = &s.ships[idx];
            InertialState {
                x: r.x_n,
                y: r.y_n,
                chi: r.chi_n,
            }
        })
    }
}

/// Metrics that need the scenario geometry next to the log.
pub mod metrics {
    use super::*;

    /// Minimum along-track separation of the pair over the whole run, in the
    /// first ship's path frame.
    pub fn min_x_distance(log: &SimLog, scenario: &Scenario, id_a: u32, id_b: u32) -> f64 {
        pair_x_distances(log, scenario, id_a, id_b)
            .map(|(dx, _)| dx)
            .fold(f64::INFINITY, f64::min)
    }

    /// Along-track gap still available when lateral clearance has not yet
    /// been achieved: the minimum |dx| over steps with |dy| inside the
    /// safety half-width. Infinite when the pair is always laterally clear.
    pub fn clearing_x_distance(log: &SimLog, scenario: &Scenario, id_a: u32, id_b: u32) -> f64 {
        let d_y = scenario.ships[ship_idx(scenario, id_a)].vessel.d_y;
        pair_x_distances(log, scenario, id_a, id_b)
            .filter(|(_, dy)| *dy < d_y)
            .map(|(dx, _)| dx)
            .fold(f64::INFINITY, f64::min)
    }

    fn pair_x_distances<'a>(
        log: &'a SimLog,
        scenario: &'a Scenario,
        id_a: u32,
        id_b: u32,
    ) -> impl Iterator<Item = (f64, f64)> + 'a {
        let a = ship_idx(scenario, id_a);
        let b = ship_idx(scenario, id_b);
        let route = &scenario.ships[a].route;
        log.states_of(a).zip(log.states_of(b)).map(move |(ea, eb)| {
            let seg = active_segment(route, &ea);
            let pa = to_path_frame(&ea, &seg);
            let pb = to_path_frame(&eb, &seg);
            ((pa.x - pb.x).abs(), (pa.y - pb.y).abs())
        })
    }

    /// Largest course deviation from the ship's own guiding line, rad.
    pub fn max_course_deviation(log: &SimLog, scenario: &Scenario, ship_id: u32) -> f64 {
        let idx = ship_idx(scenario, ship_id);
        let route = &scenario.ships[idx].route;
        log.states_of(idx)
            .map(|eta| {
                let seg = active_segment(route, &eta);
                to_path_frame(&eta, &seg).chi.abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest starboard-direction cross-track command move relative to the
    /// initially applied command (positive when the command decreased).
    pub fn max_starboard_command_move(log: &SimLog, scenario: &Scenario, ship_id: u32) -> f64 {
        let idx = ship_idx(scenario, ship_id);
        let first = log.steps.first().map(|s| s.ships[idx].u_y).unwrap_or(0.0);
        log.steps
            .iter()
            .map(|s| first - s.ships[idx].u_y)
            .fold(0.0, f64::max)
    }

    /// First time the ship's along-track position passes the intersection.
    pub fn passage_time(log: &SimLog, scenario: &Scenario, ship_id: u32) -> Option<f64> {
        let point = scenario.intersection()?;
        let idx = ship_idx(scenario, ship_id);
        let route = &scenario.ships[idx].route;
        let s_point = route.along_track_of_point(point)?;
        log.steps
            .iter()
            .zip(log.states_of(idx))
            .find(|(_, eta)| route.along_track_position(eta) >= s_point)
            .map(|(stp, _)| stp.time_s)
    }

    /// Replays the logged inputs through the plant model and returns the
    /// largest state deviation from the logged successor states.
    pub fn replay_max_error(log: &SimLog, scenario: &Scenario) -> f64 {
        let mut worst = 0.0f64;
        for (idx, ship) in scenario.ships.iter().enumerate() {
            let states: Vec<InertialState> = log.states_of(idx).collect();
            for t in 0..states.len().saturating_sub(1) {
                let rec = &log.steps[t].ships[idx];
                let seg = active_segment(&ship.route, &states[t]);
                let p = to_path_frame(&states[t], &seg);
                let p_next = step(
                    &p,
                    &crate::vessel::ControlAction::new(rec.u_y, rec.u_s),
                    &ship.vessel,
                );
                let eta_next = crate::frames::to_inertial(&p_next, &seg);
                worst = worst
                    .max((eta_next.x - states[t + 1].x).abs())
                    .max((eta_next.y - states[t + 1].y).abs())
                    .max(
                        crate::frames::normalize_angle(eta_next.chi - states[t + 1].chi).abs(),
                    );
            }
        }
        worst
    }

    fn ship_idx(scenario: &Scenario, ship_id: u32) -> usize {
        scenario
            .ships
            .iter()
            .position(|s| s.id == ship_id)
            .expect("unknown ship id")
    }
}

/// Per-run digest printed by the command line front end.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub ships: Vec<ShipSummary>,
    pub pair_min_x: Vec<PairMinX>,
    pub deadlocks_detected: usize,
    pub deadlocks_resolved: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShipSummary {
    pub ship_id: u32,
    pub min_epsilon: Option<f64>,
    pub max_course_deviation: f64,
    pub min_u_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairMinX {
    pub pair: (u32, u32),
    pub min_x_distance: f64,
}

impl Summary {
    pub fn compute(log: &SimLog, scenario: &Scenario) -> Self {
        let ids: Vec<u32> = scenario.ships.iter().map(|s| s.id).collect();
        let ships = ids
            .iter()
            .map(|&id| {
                let eps = log.min_epsilon(id);
                ShipSummary {
                    ship_id: id,
                    min_epsilon: eps.is_finite().then_some(eps),
                    max_course_deviation: metrics::max_course_deviation(log, scenario, id),
                    min_u_s: log.min_u_s(id),
                }
            })
            .collect();
        let mut pair_min_x = Vec::new();
        for i in 0..ids.len() {
            for j in (i + 1)..ids.len() {
                pair_min_x.push(PairMinX {
                    pair: (ids[i], ids[j]),
                    min_x_distance: metrics::min_x_distance(log, scenario, ids[i], ids[j]),
                });
            }
        }
        Summary {
            scenario: scenario.config.name.clone(),
            ships,
            pair_min_x,
            deadlocks_detected: log.events_matching("deadlock_detected"),
            deadlocks_resolved: log.events_matching("deadlock_resolved"),
        }
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "scenario: {}", self.scenario)?;
        writeln!(f, "ship  min_eps      max_dchi   min_u_s")?;
        for s in &self.ships {
            let eps = s
                .min_epsilon
                .map(|e| format!("{e:.2}"))
                .unwrap_or_else(|| "inf".into());
            writeln!(
                f,
                "{:>4}  {:>9}  {:>9.4}  {:>8.3}",
                s.ship_id, eps, s.max_course_deviation, s.min_u_s
            )?;
        }
        if !self.pair_min_x.is_empty() {
            writeln!(f, "pair   min_x_distance")?;
            for p in &self.pair_min_x {
                writeln!(f, "{}-{}    {:.2}", p.pair.0, p.pair.1, p.min_x_distance)?;
            }
        }
        write!(
            f,
            "deadlocks: {} detected, {} resolved",
            self.deadlocks_detected, self.deadlocks_resolved
        )
    }
}
