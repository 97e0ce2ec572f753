//! Times representative local solves and prints iteration counts; used for
//! performance calibration.

use fairway_core::cost::{total_cost_gradient, CostWeights, RiskParams};
use fairway_core::frames::{to_path_frame, InertialState, WaypointSegment};
use fairway_core::nadmm::predict_constant_velocity;
use fairway_core::solver::{solve_local, LocalProblem, SolverConfig};
use fairway_core::vessel::{rollout, ControlAction, ControlBox, ControlSequence, Trajectory, VesselParams};
use std::time::Instant;

fn main() {
    let params = VesselParams::default();
    let w = CostWeights {
        k_y: 5.0,
        ..CostWeights::default()
    };
    let n = 40;
    // Ship 1 eastbound 160 m west of the crossing; ship 2 northbound 152 m
    // south of it, both at 4 m/s (crossing in ~40 s).
    let own_seg = WaypointSegment {
        origin: InertialState::new(-1500.0, 8.0, 0.0),
        length: 3000.0,
        lane_min: -38.0,
        lane_max: 22.0,
    };
    let own_eta = InertialState::new(-160.0, 8.0, 0.0);
    let p0 = to_path_frame(&own_eta, &own_seg);
    let other_eta = InertialState::new(10.0, -152.0, std::f64::consts::FRAC_PI_2);
    let other_pred = predict_constant_velocity(&other_eta, 4.0, n, 1.0);
    let neighbor = Trajectory {
        states: other_pred.iter().map(|e| to_path_frame(e, &own_seg)).collect(),
    };
    println!(
        "neighbor rel: k=30 dx={:.1} dy={:.1}   k=40 dx={:.1} dy={:.1}",
        neighbor.states[30].x - (p0.x + 4.0 * 30.0),
        neighbor.states[30].y - p0.y,
        neighbor.states[40].x - (p0.x + 4.0 * 40.0),
        neighbor.states[40].y - p0.y
    );

    let u_prev = ControlAction::new(0.0, 1.0);
    let warm = ControlSequence::constant(u_prev, n);
    let target = rollout(&p0, &warm, &params);
    let z = vec![0.0; 3 * (n + 1)];
    let rp = RiskParams::default();
    let neighbors = vec![(neighbor, rp)];

    let grad = total_cost_gradient(&warm, &p0, &u_prev, &neighbors, &w, &params).unwrap();
    let max_us_grad = (0..n).map(|k| grad[2 * k + 1]).fold(0.0f64, |a, b| a.max(b.abs()));
    println!("u_s gradient max at warm start: {max_us_grad:.3}");

    let prob = LocalProblem {
        p_init: p0,
        u_prev,
        neighbors: &neighbors,
        consensus_target: &target,
        z: &z,
        beta: 3e-4,
        bounds: ControlBox {
            u_y_min: -29.4,
            u_y_max: 13.4,
            u_s_min: 0.1,
            u_s_max: 1.0,
        },
        weights: &w,
        vessel: &params,
    };
    let cfg = SolverConfig::default();
    let t0 = Instant::now();
    let report = solve_local(&prob, &warm, &cfg).unwrap();
    println!(
        "solve: {:?} iters={} converged={} obj={:.4} min_u_s={:.3} u_y range [{:.2},{:.2}]",
        t0.elapsed(),
        report.iterations,
        report.converged,
        report.objective,
        report.useq.actions.iter().map(|a| a.u_s).fold(f64::INFINITY, f64::min),
        report.useq.actions.iter().map(|a| a.u_y).fold(f64::INFINITY, f64::min),
        report.useq.actions.iter().map(|a| a.u_y).fold(f64::NEG_INFINITY, f64::max),
    );
}
