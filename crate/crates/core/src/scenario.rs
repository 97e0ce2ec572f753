//! Scenario configuration: JSON schema, validation, defaults, and the
//! built-in corpus.
//!
//! A scenario file is a single JSON document; every physics parameter is
//! optional and filled in by the loader, so the files only pin what a
//! scenario is about. Route lane bounds are derived from the waterway the
//! ship sails on.

use crate::cost::{CostWeights, RiskParams};
use crate::frames::{InertialState, Route};
use crate::nadmm::NadmmConfig;
use crate::solver::SolverConfig;
use crate::tapd::{ProtocolParams, Waterway};
use crate::vessel::{ControlBox, VesselParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("json parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_dt() -> f64 {
    1.0
}

fn default_horizon() -> usize {
    40
}

fn default_true() -> bool {
    true
}

fn default_acceptance_radius() -> f64 {
    50.0
}

fn default_u_s_min() -> f64 {
    0.1
}

fn default_u_s_max() -> f64 {
    1.0
}

/// Crossing-situation cost preset: steering is expensive, so give-way ships
/// prefer reducing speed.
pub fn crossing_weights() -> CostWeights {
    CostWeights {
        k_y: 5.0,
        ..CostWeights::default()
    }
}

/// Declarative description of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub name: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub total_steps: usize,
    #[serde(default = "default_true")]
    pub deadlock_resolution: bool,
    #[serde(default)]
    pub intersection: Option<[f64; 2]>,
    #[serde(default)]
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub nadmm: NadmmConfig,
    pub waterways: Vec<WaterwayConfig>,
    pub ships: Vec<ShipConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterwayConfig {
    pub id: String,
    pub centerline: Vec<[f64; 2]>,
    pub half_width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShipConfig {
    pub id: u32,
    /// Waterway the ship sails on; fixes the starboard-side rule frame and
    /// the lateral lane bounds.
    pub waterway: String,
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default = "default_acceptance_radius")]
    pub acceptance_radius: f64,
    pub initial: InitialPose,
    #[serde(default)]
    pub vessel: VesselParams,
    /// Risk parameters other ships use when predicting this ship.
    #[serde(default)]
    pub risk: RiskParams,
    #[serde(default)]
    pub costs_headon: CostWeights,
    #[serde(default)]
    pub costs_crossing: Option<CostWeights>,
    #[serde(default = "default_u_s_min")]
    pub u_s_min: f64,
    #[serde(default = "default_u_s_max")]
    pub u_s_max: f64,
    /// Lateral keep-out from the waterway banks; defaults to the safety
    /// half-width.
    #[serde(default)]
    pub lane_margin: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialPose {
    pub x: f64,
    pub y: f64,
    /// Course; defaults to the first route segment's course.
    #[serde(default)]
    pub chi: Option<f64>,
}

/// A validated scenario with all derived geometry in place.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub digest: String,
    pub waterways: Vec<Waterway>,
    pub ships: Vec<ShipRuntime>,
}

#[derive(Debug, Clone)]
pub struct ShipRuntime {
    pub id: u32,
    pub waterway_idx: usize,
    pub route: Route,
    pub initial: InertialState,
    pub vessel: VesselParams,
    pub risk: RiskParams,
    pub costs_headon: CostWeights,
    pub costs_crossing: CostWeights,
    pub u_s_min: f64,
    pub u_s_max: f64,
    pub lane_margin: f64,
}

impl ShipRuntime {
    /// Input box over the lane of a segment, shrunk by the bank margin.
    pub fn bounds_for(&self, seg: &crate::frames::WaypointSegment) -> ControlBox {
        ControlBox {
            u_y_min: seg.lane_min + self.lane_margin,
            u_y_max: seg.lane_max - self.lane_margin,
            u_s_min: self.u_s_min,
            u_s_max: self.u_s_max,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(self) -> Result<Scenario, ScenarioError> {
        let invalid = |msg: String| ScenarioError::Invalid(msg);
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.ships.is_empty() {
            return Err(invalid("at least one ship is required".into()));
        }
        if !(self.dt > 0.0) || self.total_steps == 0 || self.horizon == 0 {
            return Err(invalid("dt, horizon, and total_steps must be positive".into()));
        }
        if !(self.nadmm.lambda > 0.0 && self.nadmm.lambda < 2.0) {
            return Err(invalid(format!(
                "nadmm.lambda must lie in (0, 2), got {}",
                self.nadmm.lambda
            )));
        }
        if !(self.nadmm.beta > 0.0) || self.nadmm.iter_max == 0 {
            return Err(invalid("nadmm.beta and nadmm.iter_max must be positive".into()));
        }
        if !(self.protocol.varpi > 0.0 && self.protocol.varpi < 1.0) {
            return Err(invalid(format!(
                "protocol.varpi must lie in (0, 1), got {}",
                self.protocol.varpi
            )));
        }
        let mut ids: Vec<u32> = self.ships.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.ships.len() {
            return Err(invalid("ship ids must be unique".into()));
        }

        let waterways: Vec<Waterway> = self
            .waterways
            .iter()
            .map(|w| Waterway {
                centerline: w.centerline.iter().map(|p| (p[0], p[1])).collect(),
                half_width: w.half_width,
            })
            .collect();
        for (w, cfg) in waterways.iter().zip(&self.waterways) {
            if w.centerline.len() < 2 || !(w.half_width > 0.0) {
                return Err(invalid(format!("waterway '{}' is degenerate", cfg.id)));
            }
        }

        let mut ships = Vec::with_capacity(self.ships.len());
        for s in &self.ships {
            let waterway_idx = self
                .waterways
                .iter()
                .position(|w| w.id == s.waterway)
                .ok_or_else(|| invalid(format!("ship {}: unknown waterway '{}'", s.id, s.waterway)))?;
            if s.waypoints.len() < 2 {
                return Err(invalid(format!("ship {}: route needs two waypoints", s.id)));
            }
            for w in s.waypoints.windows(2) {
                if (w[0][0] - w[1][0]).abs() < 1e-9 && (w[0][1] - w[1][1]).abs() < 1e-9 {
                    return Err(invalid(format!(
                        "ship {}: consecutive waypoints coincide",
                        s.id
                    )));
                }
            }
            let v = &s.vessel;
            if !(v.u_d > 0.0 && v.t1 > 0.0 && v.k_e > 0.0 && v.weight > 0.0)
                || !(v.chi_max > 0.0 && v.chi_max < std::f64::consts::FRAC_PI_2)
                || !(v.d_x > 0.0 && v.d_y > 0.0)
            {
                return Err(invalid(format!("ship {}: vessel parameters out of range", s.id)));
            }
            if !(s.risk.k_ca > 0.0 && s.risk.k_d >= 0.0 && s.risk.alpha_x > 0.0 && s.risk.alpha_y > 0.0)
            {
                return Err(invalid(format!("ship {}: risk parameters out of range", s.id)));
            }
            if !(s.u_s_min > 0.0 && s.u_s_min < s.u_s_max && s.u_s_max <= 1.0) {
                return Err(invalid(format!("ship {}: speed factor bounds invalid", s.id)));
            }

            // Derive lane bounds in the route frame from the waterway width
            // and the route's lateral offset within it.
            let points: Vec<(f64, f64)> = s.waypoints.iter().map(|p| (p[0], p[1])).collect();
            let provisional = Route::from_positions(&points, s.acceptance_radius, -1.0, 1.0);
            let first = provisional.waypoints[0];
            let offset = waterways[waterway_idx].cross_track_along_travel(&first);
            let half = waterways[waterway_idx].half_width;
            let route = Route::from_positions(
                &points,
                s.acceptance_radius,
                -half - offset,
                half - offset,
            );

            let lane_margin = s.lane_margin.unwrap_or(v.d_y);
            if route.lane_max - route.lane_min <= 2.0 * lane_margin {
                return Err(invalid(format!(
                    "ship {}: waterway too narrow for the lane margin",
                    s.id
                )));
            }

            let chi = s.initial.chi.unwrap_or(route.waypoints[0].chi);
            ships.push(ShipRuntime {
                id: s.id,
                waterway_idx,
                route,
                initial: InertialState::new(s.initial.x, s.initial.y, chi),
                vessel: *v,
                risk: s.risk,
                costs_headon: s.costs_headon,
                costs_crossing: s.costs_crossing.unwrap_or_else(crossing_weights),
                u_s_min: s.u_s_min,
                u_s_max: s.u_s_max,
                lane_margin,
            });
        }

        let digest = config_digest(&self);
        Ok(Scenario {
            config: self,
            digest,
            waterways,
            ships,
        })
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        ScenarioConfig::from_json(text)?.build()
    }

    pub fn len(&self) -> usize {
        self.ships.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ships.is_empty()
    }

    pub fn intersection(&self) -> Option<(f64, f64)> {
        self.config.intersection.map(|p| (p[0], p[1]))
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig::default()
    }
}

fn config_digest(config: &ScenarioConfig) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let hash = Sha256::digest(&bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// The scenario corpus shipped with the crate, as raw JSON documents.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("ho-2", include_str!("../scenarios/ho-2.json")),
    ("ic-2a", include_str!("../scenarios/ic-2a.json")),
    ("ic-2b", include_str!("../scenarios/ic-2b.json")),
    ("ic-3", include_str!("../scenarios/ic-3.json")),
    ("ic-4-complex", include_str!("../scenarios/ic-4-complex.json")),
    ("ic-4-deadlock", include_str!("../scenarios/ic-4-deadlock.json")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN_SCENARIOS.iter().map(|(n, _)| *n).collect()
}

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTIN_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}
