//! Collision risk and the MPC cost terms with analytic gradients.
//!
//! The objective is the sum of a time-discounted Gaussian collision risk over
//! the horizon, a quadratic effort term on input changes, and two behavior
//! shaping terms: `b1` leaves large decisions unpenalized so avoidance
//! maneuvers stay observable, and `b2` penalizes port-side steering, which
//! under the frame convention here (positive cross-track to port, see
//! [`crate::frames`]) means increasing the cross-track command.

use crate::frames::PathState;
use crate::vessel::{
    rollout, rollout_jacobian, ControlAction, ControlSequence, Trajectory, VesselParams,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("trajectory length mismatch: own {own}, neighbor {neighbor}")]
    LengthMismatch { own: usize, neighbor: usize },
}

/// Parameters of the collision risk a ship projects onto others.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskParams {
    /// Risk magnitude at zero separation.
    pub k_ca: f64,
    /// Time discount rate on predicted risk.
    pub k_d: f64,
    /// Along-track decay area, m^2.
    pub alpha_x: f64,
    /// Cross-track decay area, m^2.
    pub alpha_y: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self {
            k_ca: 20.0,
            k_d: 5.0,
            alpha_x: 40.0 * 40.0,
            alpha_y: 74.0,
        }
    }
}

/// Weights of the effort and behavior cost terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub k_y: f64,
    pub k_s: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Scale of the port-steering penalty.
    pub b2_r1: f64,
    /// Shift of the port-steering penalty.
    pub b2_r2: f64,
    pub gamma_s: f64,
    pub gamma_y: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            k_y: 1e-2,
            k_s: 2e-2,
            mu1: 0.1,
            mu2: 0.25,
            b2_r1: 0.02,
            b2_r2: 2.0 - std::f64::consts::PI,
            gamma_s: 0.04,
            gamma_y: 25.0,
        }
    }
}

/// Predicted collision risk at separation (dx, dy) and prediction step k.
pub fn collision_risk(dx: f64, dy: f64, k: usize, rp: &RiskParams) -> f64 {
    rp.k_ca / (1.0 + rp.k_d * k as f64).sqrt()
        * (-dx * dx / rp.alpha_x - dy * dy / rp.alpha_y).exp()
}

/// Saturating magnitude penalty: zero at x = 0, flat near 1 for |x| >> sqrt(r).
pub fn b1(x: f64, r: f64) -> f64 {
    1.0 - (-x * x / r).exp()
}

fn b1_prime(x: f64, r: f64) -> f64 {
    2.0 * x / r * (-x * x / r).exp()
}

/// Slowly growing one-sided penalty: near zero for x < 0, ~2*r1*x for x >> 0.
pub fn b2(x: f64, r1: f64, r2: f64) -> f64 {
    r1 * x * ((x + r2).tanh() + 1.0)
}

fn b2_prime(x: f64, r1: f64, r2: f64) -> f64 {
    let t = (x + r2).tanh();
    r1 * (t + 1.0) + r1 * x * (1.0 - t * t)
}

/// Sum of discounted collision risks against all neighbor trajectories.
///
/// Trajectories must share the horizon and be expressed in the own path
/// frame; the discount index counts prediction steps starting at 1.
pub fn cost_ca(
    traj: &Trajectory,
    neighbors: &[(Trajectory, RiskParams)],
) -> Result<f64, CostError> {
    let mut total = 0.0;
    for (other, rp) in neighbors {
        if other.len() != traj.len() {
            return Err(CostError::LengthMismatch {
                own: traj.len(),
                neighbor: other.len(),
            });
        }
        for (k, (s, o)) in traj.states.iter().zip(&other.states).enumerate() {
            total += collision_risk(s.x - o.x, s.y - o.y, k + 1, rp);
        }
    }
    Ok(total)
}

/// Quadratic cost of input changes and speed reduction. The first cross-track
/// difference is taken against the previously applied command.
pub fn cost_effort(seq: &ControlSequence, u_prev: &ControlAction, w: &CostWeights) -> f64 {
    let mut total = 0.0;
    let mut prev_y = u_prev.u_y;
    for a in &seq.actions {
        let dy = a.u_y - prev_y;
        total += w.k_y * dy * dy + w.k_s * (1.0 - a.u_s) * (1.0 - a.u_s);
        prev_y = a.u_y;
    }
    total
}

/// Behavior shaping cost: penalizes small (unobservable) decisions and
/// decreasing cross-track commands.
pub fn cost_behavior(seq: &ControlSequence, u_prev: &ControlAction, w: &CostWeights) -> f64 {
    let mut total = 0.0;
    let mut prev_y = u_prev.u_y;
    for a in &seq.actions {
        let dy = a.u_y - prev_y;
        total += w.mu1 * b1(1.0 - a.u_s, w.gamma_s)
            + w.mu2 * b1(dy, w.gamma_y)
            + b2(dy, w.b2_r1, w.b2_r2);
        prev_y = a.u_y;
    }
    total
}

/// Full objective: collision risk plus effort plus behavior shaping.
pub fn total_cost(
    traj: &Trajectory,
    seq: &ControlSequence,
    u_prev: &ControlAction,
    neighbors: &[(Trajectory, RiskParams)],
    w: &CostWeights,
) -> Result<f64, CostError> {
    Ok(cost_ca(traj, neighbors)? + cost_effort(seq, u_prev, w) + cost_behavior(seq, u_prev, w))
}

/// Gradient of [`total_cost`] over the flat input vector, with the trajectory
/// produced by rolling the model forward from `p0`.
pub fn total_cost_gradient(
    seq: &ControlSequence,
    p0: &PathState,
    u_prev: &ControlAction,
    neighbors: &[(Trajectory, RiskParams)],
    w: &CostWeights,
    params: &VesselParams,
) -> Result<Vec<f64>, CostError> {
    let traj = rollout(p0, seq, params);
    let jac = rollout_jacobian(p0, seq, params);
    let mut grad = vec![0.0; 2 * seq.len()];
    accumulate_risk_gradient(&traj, neighbors, &jac, &mut grad)?;
    accumulate_input_gradient(seq, u_prev, w, &mut grad);
    Ok(grad)
}

/// Risk contribution: chain rule of the per-state risk through the rollout
/// sensitivities.
pub(crate) fn accumulate_risk_gradient(
    traj: &Trajectory,
    neighbors: &[(Trajectory, RiskParams)],
    jac: &crate::vessel::RolloutJacobian,
    grad: &mut [f64],
) -> Result<(), CostError> {
    for (other, _) in neighbors {
        if other.len() != traj.len() {
            return Err(CostError::LengthMismatch {
                own: traj.len(),
                neighbor: other.len(),
            });
        }
    }
    for (k, s) in traj.states.iter().enumerate() {
        let mut bar = [0.0; 3];
        for (other, rp) in neighbors {
            let o = other.states[k];
            let r = collision_risk(s.x - o.x, s.y - o.y, k + 1, rp);
            bar[0] += r * (-2.0 * (s.x - o.x) / rp.alpha_x);
            bar[1] += r * (-2.0 * (s.y - o.y) / rp.alpha_y);
        }
        if bar[0] != 0.0 || bar[1] != 0.0 {
            jac.accumulate_state_grad(k, bar, grad);
        }
    }
    Ok(())
}

/// Effort and behavior contributions, which depend on the inputs directly.
pub(crate) fn accumulate_input_gradient(
    seq: &ControlSequence,
    u_prev: &ControlAction,
    w: &CostWeights,
    grad: &mut [f64],
) {
    let n = seq.len();
    for k in 0..n {
        let prev_y = if k == 0 {
            u_prev.u_y
        } else {
            seq.actions[k - 1].u_y
        };
        let dy = seq.actions[k].u_y - prev_y;
        // d/d u_y(k) of the k-th difference term.
        let d_dy = 2.0 * w.k_y * dy
            + w.mu2 * b1_prime(dy, w.gamma_y)
            + b2_prime(dy, w.b2_r1, w.b2_r2);
        grad[2 * k] += d_dy;
        if k > 0 {
            grad[2 * (k - 1)] -= d_dy;
        }
        let us = seq.actions[k].u_s;
        grad[2 * k + 1] +=
            -2.0 * w.k_s * (1.0 - us) - w.mu1 * b1_prime(1.0 - us, w.gamma_s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::PathState;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stationary(n: usize, x: f64, y: f64) -> Trajectory {
        Trajectory {
            states: vec![PathState::new(x, y, 0.0); n + 1],
        }
    }

    #[test]
    fn risk_at_origin_is_kca() {
        let rp = RiskParams::default();
        assert_eq!(collision_risk(0.0, 0.0, 0, &rp), rp.k_ca);
    }

    #[test]
    fn risk_discount_substitution() {
        let rp = RiskParams {
            k_d: 5.0,
            ..RiskParams::default()
        };
        assert_abs_diff_eq!(
            collision_risk(0.0, 0.0, 1, &rp),
            rp.k_ca / 6.0f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn risk_monotone_in_separation_and_time() {
        let rp = RiskParams::default();
        let mut prev = f64::INFINITY;
        for i in 0..40 {
            let r = collision_risk(10.0 * i as f64, 5.0, 2, &rp);
            assert!(r > 0.0 && r < prev);
            prev = r;
        }
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let r = collision_risk(30.0, 5.0, k, &rp);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn risk_is_asymmetric_between_ships() {
        let a = RiskParams {
            alpha_y: 400.0,
            ..RiskParams::default()
        };
        let b = RiskParams {
            alpha_y: 900.0,
            ..RiskParams::default()
        };
        assert!(collision_risk(50.0, 20.0, 3, &a) != collision_risk(50.0, 20.0, 3, &b));
    }

    #[test]
    fn b1_shape() {
        assert_eq!(b1(0.0, 1.0), 0.0);
        assert_eq!(b1(2.5, 1.0), b1(-2.5, 1.0));
        assert_abs_diff_eq!(b1(3.0, 1.0), 1.0 - (-9.0f64).exp(), epsilon = 1e-15);
        assert!(b1(0.5, 1.0) >= 0.0 && b1(0.5, 1.0) < 1.0);
    }

    #[test]
    fn b2_shape() {
        let (r1, r2) = (0.1, 2.0 - std::f64::consts::PI);
        assert_eq!(b2(0.0, r1, r2), 0.0);
        // Asymptotically linear with slope 2*r1 for large positive arguments.
        assert_abs_diff_eq!(b2(40.0, r1, r2), 2.0 * r1 * 40.0, epsilon = 1e-6);
        // Near zero on the negative side.
        assert!(b2(-10.0, r1, r2).abs() < 1e-6);
        assert!(b2(5.0, r1, r2) > 0.0);
    }

    #[test]
    fn cost_ca_cases() {
        let rp = RiskParams {
            k_d: 0.0,
            ..RiskParams::default()
        };
        let own = stationary(10, 0.0, 0.0);
        assert_eq!(cost_ca(&own, &[]).unwrap(), 0.0);
        let far = (stationary(10, 1e9, 1e9), rp);
        assert!(cost_ca(&own, &[far]).unwrap() < 1e-300);
        let coincident = (stationary(10, 0.0, 0.0), rp);
        assert_abs_diff_eq!(
            cost_ca(&own, &[coincident]).unwrap(),
            11.0 * rp.k_ca,
            epsilon = 1e-9
        );
        let short = (stationary(5, 0.0, 0.0), rp);
        assert!(cost_ca(&own, &[short]).is_err());
    }

    #[test]
    fn effort_cases() {
        let w = CostWeights {
            k_s: 2e-2,
            ..CostWeights::default()
        };
        let u_prev = ControlAction::new(3.0, 1.0);
        let hold = ControlSequence::constant(u_prev, 8);
        assert_eq!(cost_effort(&hold, &u_prev, &w), 0.0);

        let slow = ControlSequence::constant(ControlAction::new(3.0, 0.5), 8);
        assert_abs_diff_eq!(
            cost_effort(&slow, &u_prev, &w),
            8.0 * 2e-2 * 0.25,
            epsilon = 1e-12
        );

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = ControlSequence {
            actions: (0..8)
                .map(|_| ControlAction::new(rng.random_range(-5.0..5.0), 1.0))
                .collect(),
        };
        let double = CostWeights {
            k_y: 2.0 * w.k_y,
            ..w
        };
        assert_abs_diff_eq!(
            cost_effort(&seq, &u_prev, &double),
            2.0 * cost_effort(&seq, &u_prev, &w),
            epsilon = 1e-12
        );
    }

    #[test]
    fn behavior_cases() {
        let w = CostWeights::default();
        let u_prev = ControlAction::new(0.0, 1.0);
        let hold = ControlSequence::constant(u_prev, 8);
        assert_eq!(cost_behavior(&hold, &u_prev, &w), 0.0);

        // A single large starboard jump (decreasing command) saturates b1
        // and leaves b2 negligible.
        let mut starboard = vec![ControlAction::new(0.0, 1.0); 8];
        for a in starboard.iter_mut() {
            a.u_y = -25.0;
        }
        let c_stbd = cost_behavior(&ControlSequence { actions: starboard }, &u_prev, &w);
        assert_abs_diff_eq!(c_stbd, w.mu2, epsilon = 1e-3);

        // The mirrored port jump adds the positive, slowly growing b2.
        let mut port = vec![ControlAction::new(0.0, 1.0); 8];
        for a in port.iter_mut() {
            a.u_y = 25.0;
        }
        let c_port = cost_behavior(&ControlSequence { actions: port }, &u_prev, &w);
        assert!(c_port > c_stbd + 0.9);
        assert_abs_diff_eq!(
            c_port - c_stbd,
            b2(25.0, w.b2_r1, w.b2_r2),
            epsilon = 1e-3
        );
    }

    #[test]
    fn total_cost_zero_only_at_equilibrium() {
        let w = CostWeights::default();
        let params = VesselParams::default();
        let u_prev = ControlAction::new(0.0, 1.0);
        let seq = ControlSequence::constant(u_prev, 10);
        let traj = rollout(&PathState::new(0.0, 0.0, 0.0), &seq, &params);
        let c = total_cost(&traj, &seq, &u_prev, &[], &w).unwrap();
        assert_eq!(c, 0.0);

        let off = ControlSequence::constant(ControlAction::new(0.0, 0.9), 10);
        assert!(total_cost(&traj, &off, &u_prev, &[], &w).unwrap() > 0.0);
    }

    #[test]
    fn total_cost_finite_under_fuzz() {
        // Smoothness proxy: no NaN/Inf anywhere on the open box.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let w = CostWeights::default();
        let params = VesselParams::default();
        let rp = RiskParams::default();
        let n = 4;
        for _ in 0..1_000_000 {
            let u_prev = ControlAction::new(rng.random_range(-40.0..40.0), 1.0);
            let seq = ControlSequence {
                actions: (0..n)
                    .map(|_| {
                        ControlAction::new(
                            rng.random_range(-40.0..40.0),
                            rng.random_range(0.1..1.0),
                        )
                    })
                    .collect(),
            };
            let p0 = PathState::new(0.0, rng.random_range(-40.0..40.0), rng.random_range(-0.3..0.3));
            let traj = rollout(&p0, &seq, &params);
            let other = Trajectory {
                states: (0..=n)
                    .map(|k| {
                        PathState::new(
                            rng.random_range(-400.0..400.0) + 4.0 * k as f64,
                            rng.random_range(-40.0..40.0),
                            0.0,
                        )
                    })
                    .collect(),
            };
            let c = total_cost(&traj, &seq, &u_prev, &[(other, rp)], &w).unwrap();
            assert!(c.is_finite());
        }
    }

    #[test]
    fn gradient_at_risk_free_equilibrium() {
        // Adjacent difference terms cancel exactly at a constant command, so
        // all interior u_y components are zero. The final component carries
        // the slope of b2 at the origin, which the published formula leaves
        // nonzero: b2'(0) = r1 (tanh(r2) + 1).
        let w = CostWeights::default();
        let params = VesselParams::default();
        let u_prev = ControlAction::new(0.0, 1.0);
        let seq = ControlSequence::constant(u_prev, 10);
        let grad = total_cost_gradient(
            &seq,
            &PathState::new(0.0, 0.0, 0.0),
            &u_prev,
            &[],
            &w,
            &params,
        )
        .unwrap();
        for k in 0..9 {
            assert_abs_diff_eq!(grad[2 * k], 0.0, epsilon = 1e-12);
        }
        let b2_slope_at_zero = w.b2_r1 * (w.b2_r2.tanh() + 1.0);
        assert_abs_diff_eq!(grad[18], b2_slope_at_zero, epsilon = 1e-12);
    }

    #[test]
    fn speed_gradient_term() {
        // With mu1 = 0 the u_s gradient reduces to -2 K_s (1 - u_s).
        let w = CostWeights {
            mu1: 0.0,
            ..CostWeights::default()
        };
        let params = VesselParams::default();
        let u_prev = ControlAction::new(0.0, 1.0);
        let seq = ControlSequence::constant(ControlAction::new(0.0, 0.7), 4);
        let grad = total_cost_gradient(
            &seq,
            &PathState::new(0.0, 0.0, 0.0),
            &u_prev,
            &[],
            &w,
            &params,
        )
        .unwrap();
        assert_abs_diff_eq!(grad[1], -2.0 * w.k_s * 0.3, epsilon = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w = CostWeights::default();
        let params = VesselParams::default();
        let rp = RiskParams::default();
        let n = 10;
        let p0 = PathState::new(0.0, -5.0, 0.05);
        let u_prev = ControlAction::new(-5.0, 0.9);
        let neighbor = Trajectory {
            states: (0..=n)
                .map(|k| PathState::new(300.0 - 8.0 * k as f64, 5.0, 0.0))
                .collect(),
        };
        let neighbors = vec![(neighbor, rp)];
        for _ in 0..20 {
            let seq = ControlSequence {
                actions: (0..n)
                    .map(|_| {
                        ControlAction::new(
                            rng.random_range(-20.0..20.0),
                            rng.random_range(0.15..0.95),
                        )
                    })
                    .collect(),
            };
            let grad =
                total_cost_gradient(&seq, &p0, &u_prev, &neighbors, &w, &params).unwrap();
            let flat = seq.to_flat();
            for i in 0..flat.len() {
                let h = 1e-5 * flat[i].abs().max(1.0);
                let mut up = flat.clone();
                let mut dn = flat.clone();
                up[i] += h;
                dn[i] -= h;
                let f = |v: &[f64]| {
                    let s = ControlSequence::from_flat(v);
                    let t = rollout(&p0, &s, &params);
                    total_cost(&t, &s, &u_prev, &neighbors, &w).unwrap()
                };
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                let scale = fd.abs().max(grad[i].abs()).max(1e-6);
                assert!(
                    (fd - grad[i]).abs() / scale < 1e-5,
                    "component {i}: fd {fd} vs analytic {}",
                    grad[i]
                );
            }
        }
    }
}
