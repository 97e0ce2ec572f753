//! Per-ship consensus state and the relaxed ADMM update.
//!
//! Each ship keeps a locally optimized trajectory, a global (shared) copy,
//! and a dual multiplier. One iteration runs the half dual step, the local
//! subproblem solve, the full dual step, and the global update, then derives
//! the inertial-frame intention that gets broadcast. Neighbors whose
//! intention has not been received yet are predicted with a constant
//! velocity model.

use crate::cost::{CostWeights, RiskParams};
use crate::frames::{to_inertial, to_path_frame, transform_trajectory, InertialState, WaypointSegment};
use crate::solver::{solve_local, LocalProblem, SolverConfig, SolverError};
use crate::vessel::{rollout, ControlAction, ControlBox, ControlSequence, Trajectory, VesselParams};
use serde::{Deserialize, Serialize};

/// Penalty, relaxation, and iteration budget of the consensus scheme.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NadmmConfig {
    pub beta: f64,
    /// Relaxation parameter, must lie in (0, 2).
    pub lambda: f64,
    pub iter_max: usize,
}

impl Default for NadmmConfig {
    fn default() -> Self {
        Self {
            beta: 3e-4,
            lambda: 1.0,
            iter_max: 3,
        }
    }
}

/// Consensus variables of one ship within one control period.
#[derive(Debug, Clone)]
pub struct ConsensusState {
    /// Locally optimized trajectory, own path frame.
    pub local_traj: Trajectory,
    /// Global (consensus) copy of the trajectory, own path frame.
    pub global_traj: Trajectory,
    /// Dual multiplier, length 3(N+1).
    pub z: Vec<f64>,
    /// Broadcast intention: the global trajectory in the inertial frame.
    pub xi: Vec<InertialState>,
    /// Current input plan; warm start for the next solve.
    pub useq: ControlSequence,
    pub iter: usize,
    pub done: bool,
}

impl ConsensusState {
    /// Fresh state at the start of a control period: both trajectory copies
    /// start from the rolled-out warm start, the multiplier from zero, and
    /// the intention from the constant-velocity prediction.
    pub fn init(
        eta: &InertialState,
        seg: &WaypointSegment,
        warm: ControlSequence,
        speed: f64,
        params: &VesselParams,
    ) -> Self {
        let n = warm.len();
        let prediction = predict_constant_velocity(eta, speed, n, params.dt);
        let global_traj = Trajectory {
            states: transform_trajectory(&prediction, seg),
        };
        let local_traj = rollout(&to_path_frame(eta, seg), &warm, params);
        Self {
            local_traj,
            global_traj,
            z: vec![0.0; 3 * (n + 1)],
            xi: prediction,
            useq: warm,
            iter: 0,
            done: false,
        }
    }

    /// Broadcast-vs-local gap: max planar distance between the global and
    /// local trajectory states.
    pub fn consensus_gap(&self) -> f64 {
        self.local_traj
            .states
            .iter()
            .zip(&self.global_traj.states)
            .map(|(l, g)| ((l.x - g.x).powi(2) + (l.y - g.y).powi(2)).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Half dual step: `z -= beta (1 - lambda) (local - global)`.
pub fn dual_half_step(cs: &mut ConsensusState, beta: f64, lambda: f64) {
    let local = cs.local_traj.to_flat();
    let global = cs.global_traj.to_flat();
    for i in 0..cs.z.len() {
        cs.z[i] -= beta * (1.0 - lambda) * (local[i] - global[i]);
    }
}

/// Full dual step: `z += beta (local - global)`.
pub fn dual_step(cs: &mut ConsensusState, beta: f64) {
    let local = cs.local_traj.to_flat();
    let global = cs.global_traj.to_flat();
    for i in 0..cs.z.len() {
        cs.z[i] += beta * (local[i] - global[i]);
    }
}

/// Global update: `global = local + z / beta`.
pub fn global_update(cs: &mut ConsensusState, beta: f64) {
    let mut flat = cs.local_traj.to_flat();
    for (v, zi) in flat.iter_mut().zip(&cs.z) {
        *v += zi / beta;
    }
    cs.global_traj = Trajectory::from_flat(&flat);
}

/// Everything a ship needs to run one consensus iteration.
pub struct IterationContext<'a> {
    pub p_init: crate::frames::PathState,
    pub u_prev: ControlAction,
    pub segment: WaypointSegment,
    /// Received neighbor intentions; ships without one fall back to the
    /// constant-velocity prediction from `fallback`.
    pub intentions: &'a [(Option<&'a [InertialState]>, InertialState, f64, RiskParams)],
    pub bounds: ControlBox,
    pub weights: &'a CostWeights,
    pub vessel: &'a VesselParams,
    pub solver: &'a SolverConfig,
}

/// One full update of a ship's consensus state. On solver error the state is
/// left untouched.
pub fn ship_iteration(
    cs: &mut ConsensusState,
    ctx: &IterationContext,
    cfg: &NadmmConfig,
) -> Result<(), SolverError> {
    let n = cs.useq.len();
    let mut neighbors: Vec<(Trajectory, RiskParams)> = Vec::with_capacity(ctx.intentions.len());
    for (intent, eta, speed, rp) in ctx.intentions {
        let inertial: Vec<InertialState> = match intent {
            Some(xs) => xs.to_vec(),
            None => predict_constant_velocity(eta, *speed, n, ctx.vessel.dt),
        };
        neighbors.push((
            Trajectory {
                states: transform_trajectory(&inertial, &ctx.segment),
            },
            *rp,
        ));
    }

    let mut next = cs.clone();
    dual_half_step(&mut next, cfg.beta, cfg.lambda);

    let report = {
        let prob = LocalProblem {
            p_init: ctx.p_init,
            u_prev: ctx.u_prev,
            neighbors: &neighbors,
            consensus_target: &next.global_traj,
            z: &next.z,
            beta: cfg.beta,
            bounds: ctx.bounds,
            weights: ctx.weights,
            vessel: ctx.vessel,
        };
        solve_local(&prob, &next.useq, ctx.solver)?
    };
    next.useq = report.useq;
    next.local_traj = report.traj;

    dual_step(&mut next, cfg.beta);
    global_update(&mut next, cfg.beta);
    next.xi = next
        .global_traj
        .states
        .iter()
        .map(|p| to_inertial(p, &ctx.segment))
        .collect();
    next.iter += 1;
    next.done = next.iter >= cfg.iter_max;
    *cs = next;
    Ok(())
}

/// Straight-line extrapolation along the current course; N+1 states.
pub fn predict_constant_velocity(
    eta: &InertialState,
    speed: f64,
    n: usize,
    dt: f64,
) -> Vec<InertialState> {
    let (vx, vy) = eta.velocity(speed);
    (0..=n)
        .map(|k| InertialState {
            x: eta.x + vx * dt * k as f64,
            y: eta.y + vy * dt * k as f64,
            chi: eta.chi,
        })
        .collect()
}
