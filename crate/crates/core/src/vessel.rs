//! Setpoint-filter vessel kinematics and horizon rollout.
//!
//! The discrete model steers toward the commanded cross-track line `u_y`
//! through a first-order course filter with a tanh-saturated steering law,
//! and scales the nominal surge speed by the factor `u_s`. The same model
//! serves as the MPC prediction model and as the simulation plant.

use crate::frames::PathState;
use serde::{Deserialize, Serialize};

/// Vessel model and footprint parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VesselParams {
    /// Nominal surge speed, m/s.
    pub u_d: f64,
    /// Maximum steering angle achievable in one sample, rad.
    pub chi_max: f64,
    /// Course filter time constant, s.
    pub t1: f64,
    /// Cross-track steering gain, 1/m.
    pub k_e: f64,
    /// Sample period, s.
    pub dt: f64,
    /// Displacement, kg. Tie-break criterion for deadlock resolution.
    pub weight: f64,
    /// Half-length of the safety area, m.
    pub d_x: f64,
    /// Half-width of the safety area, m.
    pub d_y: f64,
}

impl Default for VesselParams {
    fn default() -> Self {
        Self {
            u_d: 4.0,
            chi_max: 0.3,
            t1: 10.0,
            k_e: 0.15,
            dt: 1.0,
            weight: 2.0e5,
            d_x: 51.5,
            d_y: 8.6,
        }
    }
}

/// One control decision: cross-track offset command and speed factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub u_y: f64,
    pub u_s: f64,
}

impl ControlAction {
    pub fn new(u_y: f64, u_s: f64) -> Self {
        Self { u_y, u_s }
    }
}

/// Componentwise bounds on control actions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ControlBox {
    pub u_y_min: f64,
    pub u_y_max: f64,
    pub u_s_min: f64,
    pub u_s_max: f64,
}

impl ControlBox {
    pub fn clamp(&self, u: ControlAction) -> ControlAction {
        ControlAction {
            u_y: u.u_y.clamp(self.u_y_min, self.u_y_max),
            u_s: u.u_s.clamp(self.u_s_min, self.u_s_max),
        }
    }

    pub fn contains(&self, u: &ControlAction) -> bool {
        u.u_y >= self.u_y_min
            && u.u_y <= self.u_y_max
            && u.u_s >= self.u_s_min
            && u.u_s <= self.u_s_max
    }
}

/// Decisions over the control horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub actions: Vec<ControlAction>,
}

impl ControlSequence {
    pub fn constant(u: ControlAction, n: usize) -> Self {
        Self {
            actions: vec![u; n],
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Receding-horizon warm start: drop the first action, repeat the last.
    pub fn shifted(&self) -> Self {
        let mut actions: Vec<ControlAction> = self.actions[1..].to_vec();
        if let Some(&last) = self.actions.last() {
            actions.push(last);
        }
        Self { actions }
    }

    /// Flat decision vector `[u_y(0), u_s(0), u_y(1), ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.actions.len());
        for a in &self.actions {
            v.push(a.u_y);
            v.push(a.u_s);
        }
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        assert!(v.len() % 2 == 0);
        Self {
            actions: v
                .chunks_exact(2)
                .map(|c| ControlAction::new(c[0], c[1]))
                .collect(),
        }
    }
}

/// Predicted states over the horizon, including the initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<PathState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Flat state vector `[x(0), y(0), chi(0), x(1), ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.states.len());
        for s in &self.states {
            v.push(s.x);
            v.push(s.y);
            v.push(s.chi);
        }
        v
    }

    pub fn from_flat(v: &[f64]) -> Self {
        assert!(v.len() % 3 == 0);
        Self {
            states: v
                .chunks_exact(3)
                .map(|c| PathState {
                    x: c[0],
                    y: c[1],
                    chi: c[2],
                })
                .collect(),
        }
    }
}

/// One step of the kinematic model. The course is updated first and the new
/// course drives the position update within the same step.
pub fn step(p: &PathState, u: &ControlAction, params: &VesselParams) -> PathState {
    let steer = params.chi_max * (params.k_e * (u.u_y - p.y)).tanh();
    let chi = p.chi + params.dt / params.t1 * (steer - p.chi);
    PathState {
        x: p.x + params.dt * u.u_s * params.u_d * chi.cos(),
        y: p.y + params.dt * u.u_s * params.u_d * chi.sin(),
        chi,
    }
}

/// Rolls the model forward over the horizon; returns N+1 states with
/// `states[0] = *p0`.
pub fn rollout(p0: &PathState, seq: &ControlSequence, params: &VesselParams) -> Trajectory {
    let mut states = Vec::with_capacity(seq.len() + 1);
    states.push(*p0);
    let mut p = *p0;
    for u in &seq.actions {
        p = step(&p, u, params);
        states.push(p);
    }
    Trajectory { states }
}

/// Sensitivities of every rollout state with respect to every input.
///
/// `blocks[k][j]` is the 3x2 matrix d state(k) / d (u_y(j), u_s(j)); only
/// j < k entries exist (state k depends on inputs strictly before it).
pub struct RolloutJacobian {
    pub blocks: Vec<Vec<[[f64; 2]; 3]>>,
}

impl RolloutJacobian {
    pub fn horizon(&self) -> usize {
        self.blocks.len() - 1
    }

    /// d state(k)[comp] / d flat-input(2j + col).
    pub fn entry(&self, k: usize, comp: usize, j: usize, col: usize) -> f64 {
        if j < k {
            self.blocks[k][j][comp][col]
        } else {
            0.0
        }
    }

    /// Accumulates `grad += state_bar^T * d state(k) / d u` into a flat
    /// gradient over the inputs.
    pub fn accumulate_state_grad(&self, k: usize, state_bar: [f64; 3], grad: &mut [f64]) {
        for (j, block) in self.blocks[k].iter().enumerate() {
            for col in 0..2 {
                let mut g = 0.0;
                for (comp, bar) in state_bar.iter().enumerate() {
                    g += bar * block[comp][col];
                }
                grad[2 * j + col] += g;
            }
        }
    }
}

/// Chain-rule Jacobian of [`rollout`] with respect to the input sequence.
pub fn rollout_jacobian(
    p0: &PathState,
    seq: &ControlSequence,
    params: &VesselParams,
) -> RolloutJacobian {
    let n = seq.len();
    let mut blocks: Vec<Vec<[[f64; 2]; 3]>> = Vec::with_capacity(n + 1);
    blocks.push(Vec::new());
    let mut p = *p0;
    for (k, u) in seq.actions.iter().enumerate() {
        let theta = params.k_e * (u.u_y - p.y);
        let t = theta.tanh();
        let steer_gain = params.chi_max * (1.0 - t * t) * params.k_e;
        let a = 1.0 - params.dt / params.t1;
        let next = step(&p, u, params);
        let (sin_c, cos_c) = next.chi.sin_cos();
        let v = params.dt * u.u_s * params.u_d;

        // d chi+ / d (x, y, chi) and d chi+ / d (u_y, u_s)
        let dchi_dy = -params.dt / params.t1 * steer_gain;
        let dchi_dchi = a;
        let dchi_duy = params.dt / params.t1 * steer_gain;

        // State transition A (3x3) and input map B (3x2), rows (x, y, chi).
        let a_mat = [
            [1.0, -v * sin_c * dchi_dy, -v * sin_c * dchi_dchi],
            [0.0, 1.0 + v * cos_c * dchi_dy, v * cos_c * dchi_dchi],
            [0.0, dchi_dy, dchi_dchi],
        ];
        let b_mat = [
            [-v * sin_c * dchi_duy, params.dt * params.u_d * cos_c],
            [v * cos_c * dchi_duy, params.dt * params.u_d * sin_c],
            [dchi_duy, 0.0],
        ];

        // Propagate: d s(k+1)/d u(j) = A * d s(k)/d u(j) for j < k, plus B
        // for j = k.
        let mut row: Vec<[[f64; 2]; 3]> = Vec::with_capacity(k + 1);
        for prev in &blocks[k] {
            let mut m = [[0.0; 2]; 3];
            for r in 0..3 {
                for c in 0..2 {
                    m[r][c] = a_mat[r][0] * prev[0][c]
                        + a_mat[r][1] * prev[1][c]
                        + a_mat[r][2] * prev[2][c];
                }
            }
            row.push(m);
        }
        row.push(b_mat);
        blocks.push(row);
        p = next;
    }
    RolloutJacobian { blocks }
}
