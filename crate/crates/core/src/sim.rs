//! Receding-horizon scenario runner.
//!
//! Each control period: snapshot the fleet, run the priority protocol on the
//! shared picture, negotiate intentions over the slotted bus gated by the
//! priority order (with deadlock detection and the lightest-ship tie break),
//! apply the first action of every ship's plan to the plant, and log the
//! step. Runs are deterministic; with the `parallel` feature, simultaneously
//! eligible ships solve their subproblems on worker threads without changing
//! any result.

use crate::bus::{Bus, Payload};
use crate::cost::collision_risk;
use crate::frames::{to_inertial, to_path_frame, InertialState, PathState, WaypointSegment};
use crate::log::{PairRisk, ShipRecord, SimLog, StepRecord};
use crate::nadmm::{ship_iteration, ConsensusState, IterationContext, NadmmConfig};
use crate::scenario::Scenario;
use crate::solver::SolverError;
use crate::tapd::{
    assign_priorities, detect_deadlock, eligible_ships, resolve_deadlock, PriorityTable,
    ProtocolState, ShipView, Situation,
};
use crate::vessel::{step, ControlAction, ControlSequence};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("solver failed for ship {ship} at step {step}: {message}")]
    Solver {
        ship: u32,
        step: usize,
        message: String,
        /// Log flushed up to the failure step.
        partial: Box<SimLog>,
    },
}

/// Execution mode for independent per-ship solves and batch runs. Results
/// are identical in both modes; `Parallel` falls back to sequential when the
/// `parallel` feature is disabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Sequential,
    Parallel,
}

impl Default for RunMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            RunMode::Parallel
        } else {
            RunMode::Sequential
        }
    }
}

/// Signed clearance of the nearest neighbor from ship `i`'s rectangular
/// safety box, measured in its own path frame; `None` without neighbors.
pub fn safety_index(
    i: usize,
    etas: &[InertialState],
    seg: &WaypointSegment,
    d_x: f64,
    d_y: f64,
) -> Option<f64> {
    let own = to_path_frame(&etas[i], seg);
    etas.iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, eta)| {
            let p = to_path_frame(eta, seg);
            ((p.x - own.x).abs() - d_x).max((p.y - own.y).abs() - d_y)
        })
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
}

/// Full output of a run: the log plus the optional message trace.
#[derive(Debug)]
pub struct RunOutput {
    pub log: SimLog,
    pub trace: Option<Vec<crate::bus::TraceRecord>>,
}

pub fn run(scenario: &Scenario) -> Result<SimLog, SimError> {
    run_with_mode(scenario, RunMode::default())
}

pub fn run_with_mode(scenario: &Scenario, mode: RunMode) -> Result<SimLog, SimError> {
    run_full(scenario, mode, false).map(|out| out.log)
}

/// Runs a batch of independent scenarios; in `Parallel` mode the runs are
/// distributed over worker threads (each run itself stays sequential).
pub fn run_batch(scenarios: &[Scenario], mode: RunMode) -> Vec<Result<SimLog, SimError>> {
    #[cfg(feature = "parallel")]
    if mode == RunMode::Parallel {
        use rayon::prelude::*;
        return scenarios
            .par_iter()
            .map(|s| run_with_mode(s, RunMode::Sequential))
            .collect();
    }
    let _ = mode;
    scenarios
        .iter()
        .map(|s| run_with_mode(s, RunMode::Sequential))
        .collect()
}

struct ShipSim {
    eta: InertialState,
    u_prev: ControlAction,
    plan: ControlSequence,
    seg_idx: usize,
}

/// Runs a scenario, optionally recording the bus message trace.
pub fn run_full(scenario: &Scenario, mode: RunMode, traced: bool) -> Result<RunOutput, SimError> {
    let m = scenario.len();
    let cfg = &scenario.config;
    let nadmm_cfg = cfg.nadmm;
    let solver_cfg = scenario.solver_config();
    let horizon = cfg.horizon;
    let mut bus = Bus::new(m, traced);

    let mut ships: Vec<ShipSim> = scenario
        .ships
        .iter()
        .map(|s| {
            let seg_idx = s.route.active_segment_index(&s.initial);
            let seg = s.route.segment(seg_idx);
            let u_y0 = to_path_frame(&s.initial, &seg).y;
            ShipSim {
                eta: s.initial,
                u_prev: ControlAction::new(u_y0, 1.0),
                plan: ControlSequence::constant(ControlAction::new(u_y0, 1.0), horizon),
                seg_idx,
            }
        })
        .collect();

    let mut steps = Vec::with_capacity(cfg.total_steps);
    let slot_cap = m * (nadmm_cfg.iter_max + 1)
        + (cfg.protocol.t_dl_slots as usize + 2) * (m + 1)
        + 8;

    for step_idx in 0..cfg.total_steps {
        let mut events: Vec<Vec<String>> = vec![Vec::new(); m];

        // Shared traffic picture for this period.
        let etas: Vec<InertialState> = ships.iter().map(|s| s.eta).collect();
        let speeds: Vec<f64> = ships
            .iter()
            .enumerate()
            .map(|(i, s)| s.u_prev.u_s * scenario.ships[i].vessel.u_d)
            .collect();
        let segments: Vec<WaypointSegment> = ships
            .iter()
            .enumerate()
            .map(|(i, s)| scenario.ships[i].route.segment(s.seg_idx))
            .collect();
        for i in 0..m {
            bus.broadcast(
                i,
                Payload::PositionReport {
                    state: etas[i],
                    speed: speeds[i],
                },
            );
        }
        bus.advance_slot();
        for i in 0..m {
            bus.take_mail(i);
        }

        // Layer 1: priorities from the shared snapshot.
        let views: Vec<ShipView> = (0..m)
            .map(|i| ShipView {
                eta: etas[i],
                speed: speeds[i],
                route: &scenario.ships[i].route,
                waterway: &scenario.waterways[scenario.ships[i].waterway_idx],
                segment: segments[i],
            })
            .collect();
        let table = assign_priorities(&views, scenario.intersection(), &cfg.protocol);
        for (i, j) in table.consistency_violations() {
            events[i].push(format!("consistency_violation:{}", scenario.ships[j].id));
        }

        // Layer 2: negotiation over the slotted bus.
        let weights: Vec<&crate::cost::CostWeights> = (0..m)
            .map(|i| match table.ship_situation(i) {
                Situation::Crossing => &scenario.ships[i].costs_crossing,
                _ => &scenario.ships[i].costs_headon,
            })
            .collect();
        let mut consensus: Vec<ConsensusState> = (0..m)
            .map(|i| {
                ConsensusState::init(
                    &etas[i],
                    &segments[i],
                    ships[i].plan.clone(),
                    speeds[i],
                    &scenario.ships[i].vessel,
                )
            })
            .collect();
        let mut intents: Vec<BTreeMap<usize, Vec<InertialState>>> =
            vec![BTreeMap::new(); m];
        let mut state = ProtocolState::new(m);

        let u_prevs: Vec<ControlAction> = ships.iter().map(|s| s.u_prev).collect();
        let negotiation = negotiate(
            scenario,
            mode,
            &mut bus,
            &table,
            &mut state,
            &mut consensus,
            &mut intents,
            &etas,
            &speeds,
            &segments,
            &u_prevs,
            &weights,
            &nadmm_cfg,
            &solver_cfg,
            slot_cap,
            &mut events,
        );
        if let Err((ship_idx, err)) = negotiation {
            let partial = finish_log(scenario, steps);
            return Err(SimError::Solver {
                ship: scenario.ships[ship_idx].id,
                step: step_idx,
                message: err.to_string(),
                partial: Box::new(partial),
            });
        }

        // Log the step at time t, then advance the plant.
        let mut records = Vec::with_capacity(m);
        for i in 0..m {
            let applied = consensus[i].useq.actions[0];
            let epsilon = safety_index(
                i,
                &etas,
                &segments[i],
                scenario.ships[i].vessel.d_x,
                scenario.ships[i].vessel.d_y,
            );
            let own = to_path_frame(&etas[i], &segments[i]);
            let pair_risks = (0..m)
                .filter(|j| *j != i)
                .map(|j| {
                    let p = to_path_frame(&etas[j], &segments[i]);
                    PairRisk {
                        other: scenario.ships[j].id,
                        risk: collision_risk(
                            own.x - p.x,
                            own.y - p.y,
                            0,
                            &scenario.ships[j].risk,
                        ),
                    }
                })
                .collect();
            records.push(ShipRecord {
                ship_id: scenario.ships[i].id,
                x_n: etas[i].x,
                y_n: etas[i].y,
                chi_n: etas[i].chi,
                u_y: applied.u_y,
                u_s: applied.u_s,
                epsilon,
                pair_risks,
                residual: if consensus[i].iter > 0 {
                    consensus[i].consensus_gap()
                } else {
                    0.0
                },
                priority_rank: table.rank(i),
                event: events[i].join(";"),
            });
        }
        steps.push(StepRecord {
            step: step_idx,
            time_s: step_idx as f64 * cfg.dt,
            rho: table.rho.clone(),
            gives_way: table.gives_way.clone(),
            ships: records,
        });

        for i in 0..m {
            let applied = consensus[i].useq.actions[0];
            let seg = segments[i];
            let p = to_path_frame(&ships[i].eta, &seg);
            let p_next = step(&p, &applied, &scenario.ships[i].vessel);
            let eta_next = to_inertial(&p_next, &seg);

            let route = &scenario.ships[i].route;
            let next_idx = route.active_segment_index(&eta_next);
            let mut u_prev = applied;
            let mut plan = consensus[i].useq.shifted();
            if next_idx != ships[i].seg_idx {
                // Re-express cross-track commands in the new segment frame.
                let new_seg = route.segment(next_idx);
                let reproject = |u_y: f64| {
                    let pt = to_inertial(&PathState::new(p_next.x, u_y, 0.0), &seg);
                    to_path_frame(&pt, &new_seg).y
                };
                u_prev.u_y = reproject(u_prev.u_y);
                for a in plan.actions.iter_mut() {
                    a.u_y = reproject(a.u_y);
                }
            }
            ships[i] = ShipSim {
                eta: eta_next,
                u_prev,
                plan,
                seg_idx: next_idx,
            };
        }
    }

    Ok(RunOutput {
        log: finish_log(scenario, steps),
        trace: bus.into_trace(),
    })
}

fn finish_log(scenario: &Scenario, steps: Vec<StepRecord>) -> SimLog {
    SimLog {
        schema_version: crate::scenario::SCHEMA_VERSION,
        scenario: scenario.config.clone(),
        config_digest: scenario.digest.clone(),
        steps,
    }
}

/// Runs the slotted negotiation of one control period. Returns `Err` with
/// the failing ship index on solver errors.
#[allow(clippy::too_many_arguments)]
fn negotiate(
    scenario: &Scenario,
    mode: RunMode,
    bus: &mut Bus,
    table: &PriorityTable,
    state: &mut ProtocolState,
    consensus: &mut [ConsensusState],
    intents: &mut [BTreeMap<usize, Vec<InertialState>>],
    etas: &[InertialState],
    speeds: &[f64],
    segments: &[WaypointSegment],
    u_prevs: &[ControlAction],
    weights: &[&crate::cost::CostWeights],
    nadmm_cfg: &NadmmConfig,
    solver_cfg: &crate::solver::SolverConfig,
    slot_cap: usize,
    events: &mut [Vec<String>],
) -> Result<(), (usize, SolverError)> {
    let m = scenario.len();
    let mut deadlock_logged = false;

    for _ in 0..slot_cap {
        if state.all_done() {
            return Ok(());
        }
        let elig = eligible_ships(table, state);
        if elig.is_empty() {
            state.stall_slots += 1;
            if detect_deadlock(table, state, scenario.config.protocol.t_dl_slots) {
                if !deadlock_logged {
                    for i in (0..m).filter(|i| !state.done[*i]) {
                        events[i].push("deadlock_detected".into());
                    }
                    deadlock_logged = true;
                }
                if !scenario.config.deadlock_resolution {
                    return Ok(());
                }
                let ship_weights: Vec<f64> =
                    scenario.ships.iter().map(|s| s.vessel.weight).collect();
                for i in (0..m).filter(|i| !state.done[*i]) {
                    bus.broadcast(i, Payload::WeightExchange(ship_weights[i]));
                }
                if let Some(granted) = resolve_deadlock(state, &ship_weights) {
                    state.overrides[granted] = true;
                    state.stall_slots = 0;
                    events[granted].push("deadlock_resolved".into());
                }
            }
            bus.advance_slot();
            for i in 0..m {
                bus.take_mail(i);
            }
            continue;
        }

        // Simultaneously eligible ships update independently from the same
        // slot picture; results are applied in index order.
        let updates = map_indices(mode, &elig, |i| {
            let intentions: Vec<(Option<&[InertialState]>, InertialState, f64, crate::cost::RiskParams)> =
                (0..m)
                    .filter(|j| *j != i)
                    .map(|j| {
                        (
                            intents[i].get(&j).map(|v| v.as_slice()),
                            etas[j],
                            speeds[j],
                            scenario.ships[j].risk,
                        )
                    })
                    .collect();
            let ctx = IterationContext {
                p_init: to_path_frame(&etas[i], &segments[i]),
                u_prev: u_prevs[i],
                segment: segments[i],
                intentions: &intentions,
                bounds: scenario.ships[i].bounds_for(&segments[i]),
                weights: weights[i],
                vessel: &scenario.ships[i].vessel,
                solver: solver_cfg,
            };
            let mut cs = consensus[i].clone();
            ship_iteration(&mut cs, &ctx, nadmm_cfg).map(|_| cs)
        });

        for (&i, update) in elig.iter().zip(updates) {
            let cs = update.map_err(|e| (i, e))?;
            bus.broadcast(i, Payload::Intent(cs.xi.clone()));
            if cs.done {
                bus.broadcast(i, Payload::DecisionDone);
                state.done[i] = true;
            }
            consensus[i] = cs;
        }
        state.stall_slots = 0;
        bus.advance_slot();
        for ship in 0..m {
            for msg in bus.take_mail(ship) {
                if let Payload::Intent(xs) = msg.payload {
                    intents[ship].insert(msg.sender, xs);
                }
            }
        }
    }

    for i in (0..m).filter(|i| !state.done[*i]) {
        events[i].push("protocol_stalled".into());
    }
    Ok(())
}


#[cfg(feature = "parallel")]
fn map_indices<T: Send>(
    mode: RunMode,
    indices: &[usize],
    f: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    if mode == RunMode::Parallel && indices.len() > 1 {
        use rayon::prelude::*;
        indices.par_iter().map(|&i| f(i)).collect()
    } else {
        indices.iter().map(|&i| f(i)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn map_indices<T: Send>(
    _mode: RunMode,
    indices: &[usize],
    f: impl Fn(usize) -> T + Sync,
) -> Vec<T> {
    indices.iter().map(|&i| f(i)).collect()
}
