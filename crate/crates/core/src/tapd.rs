//! Traffic assessment and priority determination.
//!
//! Maps the inland give-way rules onto pairwise priority values computed by
//! every ship from the shared traffic snapshot: ships following the starboard
//! side of their waterway get the high base value, crossing pairs are refined
//! by approach bearing, and head-on pairs are left to the base values. The
//! resulting give-way relation gates the decision order of the consensus
//! scheme; cyclic relations are detected as deadlocks and broken by the
//! lightest-ship rule.

use crate::frames::{normalize_angle, InertialState, Route, WaypointSegment};
use serde::{Deserialize, Serialize};

/// Dead-band around the waterway centerline that counts as not-starboard, m.
const CENTERLINE_DEAD_BAND: f64 = 1.0;

/// Cosine threshold of the head-on course test (22.5 degrees).
fn headon_cos_threshold() -> f64 {
    (22.5f64).to_radians().cos()
}

/// Pairwise encounter classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Situation {
    Clear,
    HeadOn,
    Crossing,
}

/// Rule parameters of the protocol layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolParams {
    /// Crossing window on the time to the intersection, s.
    pub t_ic: f64,
    /// Head-on window on the time to closest point of approach, s.
    pub t_ho: f64,
    /// Protocol slots without progress before a deadlock is declared.
    pub t_dl_slots: u32,
    /// Crossing priority adjustment; must stay below 1.
    pub varpi: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            t_ic: 180.0,
            t_ho: 300.0,
            t_dl_slots: 3,
            varpi: 0.5,
        }
    }
}

/// A waterway: centerline polyline and half width. The starboard side of a
/// ship on the waterway is the half with negative cross-track in the frame
/// aligned with that ship's direction of travel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Waterway {
    pub centerline: Vec<(f64, f64)>,
    pub half_width: f64,
}

impl Waterway {
    /// Cross-track of `eta` relative to the centerline, in the frame aligned
    /// with the ship's direction of travel along the waterway.
    pub fn cross_track_along_travel(&self, eta: &InertialState) -> f64 {
        let (origin, course) = self.nearest_segment(eta);
        let aligned = if normalize_angle(eta.chi - course).abs() <= std::f64::consts::PI / 2.0 {
            course
        } else {
            normalize_angle(course + std::f64::consts::PI)
        };
        -(aligned.sin()) * (eta.x - origin.0) + aligned.cos() * (eta.y - origin.1)
    }

    fn nearest_segment(&self, eta: &InertialState) -> ((f64, f64), f64) {
        let mut best = (f64::INFINITY, (self.centerline[0], 0.0));
        for w in self.centerline.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let t = (((eta.x - a.0) * dx + (eta.y - a.1) * dy) / len2).clamp(0.0, 1.0);
            let (px, py) = (a.0 + t * dx, a.1 + t * dy);
            let d2 = (eta.x - px).powi(2) + (eta.y - py).powi(2);
            if d2 < best.0 {
                best = (d2, (a, dy.atan2(dx)));
            }
        }
        best.1
    }
}

/// True when the ship sails on the starboard half of its waterway, with a
/// one-meter dead-band around the centerline counting as not-starboard.
pub fn is_starboard_side(eta: &InertialState, waterway: &Waterway) -> bool {
    waterway.cross_track_along_travel(eta) < -CENTERLINE_DEAD_BAND
}

/// Time to closest point of approach under constant velocities; infinite for
/// (near) parallel motion.
pub fn tcpa(eta_i: &InertialState, v_i: (f64, f64), eta_j: &InertialState, v_j: (f64, f64)) -> f64 {
    let dp = (eta_i.x - eta_j.x, eta_i.y - eta_j.y);
    let dv = (v_i.0 - v_j.0, v_i.1 - v_j.1);
    let dv2 = dv.0 * dv.0 + dv.1 * dv.1;
    if dv2.sqrt() < 1e-6 {
        return f64::INFINITY;
    }
    -(dp.0 * dv.0 + dp.1 * dv.1) / dv2
}

/// Along-route time until the ship reaches the intersection point; infinite
/// when the route does not pass it or the ship has already passed.
pub fn time_to_intersection(
    eta: &InertialState,
    speed: f64,
    route: &Route,
    intersection: (f64, f64),
) -> f64 {
    let Some(s_point) = route.along_track_of_point(intersection) else {
        return f64::INFINITY;
    };
    let s_ship = route.along_track_position(eta);
    let dist = s_point - s_ship;
    if dist < 0.0 || speed <= 1e-9 {
        if dist == 0.0 {
            return 0.0;
        }
        return f64::INFINITY;
    }
    dist / speed
}

/// Head-on test: nearly opposite courses, closing within the time window,
/// and the other ship inside the own waterway's lateral bounds.
pub fn classify_headon(
    eta_i: &InertialState,
    speed_i: f64,
    eta_j: &InertialState,
    speed_j: f64,
    t_ho: f64,
    seg_i: &WaypointSegment,
) -> bool {
    if speed_i <= 1e-9 || speed_j <= 1e-9 {
        return false;
    }
    let v_i = eta_i.velocity(speed_i);
    let v_j = eta_j.velocity(speed_j);
    let cos_sim = (v_i.0 * v_j.0 + v_i.1 * v_j.1) / (speed_i * speed_j);
    if cos_sim >= -headon_cos_threshold() {
        return false;
    }
    let t = tcpa(eta_i, v_i, eta_j, v_j);
    if !(0.0..=t_ho).contains(&t) {
        return false;
    }
    let y_ji = crate::frames::to_path_frame(eta_j, seg_i).y;
    (seg_i.lane_min..=seg_i.lane_max).contains(&y_ji)
}

/// Everything the protocol needs to know about one ship.
pub struct ShipView<'a> {
    pub eta: InertialState,
    pub speed: f64,
    pub route: &'a Route,
    pub waterway: &'a Waterway,
    pub segment: WaypointSegment,
}

/// Pairwise priority values and the derived give-way relation.
///
/// `rho[i][j]` is the priority value of subject `j` on observer `i`'s table;
/// `gives_way[i][j]` means ship `i` must give way to ship `j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorityTable {
    pub rho: Vec<Vec<f64>>,
    pub situation: Vec<Vec<Situation>>,
    pub gives_way: Vec<Vec<bool>>,
}

impl PriorityTable {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Number of ships this ship must give way to; 0 means highest priority.
    pub fn rank(&self, i: usize) -> usize {
        self.gives_way[i].iter().filter(|g| **g).count()
    }

    /// Classification used for per-situation parameter switching: crossing
    /// wins over head-on when a ship is involved in both.
    pub fn ship_situation(&self, i: usize) -> Situation {
        if self.situation[i].contains(&Situation::Crossing) {
            Situation::Crossing
        } else if self.situation[i].contains(&Situation::HeadOn) {
            Situation::HeadOn
        } else {
            Situation::Clear
        }
    }

    /// Pairs violating the cross-table consistency condition: if subject j
    /// outranks observer i on i's table, j must outrank i's value of j on
    /// j's own table.
    pub fn consistency_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in 0..self.len() {
                if i != j && self.rho[i][j] > self.rho[i][i] && self.rho[j][j] <= self.rho[j][i] {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Runs the priority assignment for every observer from the shared snapshot.
pub fn assign_priorities(
    ships: &[ShipView],
    intersection: Option<(f64, f64)>,
    params: &ProtocolParams,
) -> PriorityTable {
    let m = ships.len();
    let starboard: Vec<bool> = ships
        .iter()
        .map(|s| is_starboard_side(&s.eta, s.waterway))
        .collect();
    let t_ic: Vec<f64> = ships
        .iter()
        .map(|s| match intersection {
            Some(p) => time_to_intersection(&s.eta, s.speed, s.route, p),
            None => f64::INFINITY,
        })
        .collect();

    let mut rho = vec![vec![0.0; m]; m];
    let mut situation = vec![vec![Situation::Clear; m]; m];
    let mut gives_way = vec![vec![false; m]; m];

    for i in 0..m {
        for j in 0..m {
            rho[i][j] = if starboard[j] { 1.0 } else { 0.0 };
        }
        for j in 0..m {
            if j == i {
                continue;
            }
            let headon = classify_headon(
                &ships[i].eta,
                ships[i].speed,
                &ships[j].eta,
                ships[j].speed,
                params.t_ho,
                &ships[i].segment,
            );
            if headon {
                situation[i][j] = Situation::HeadOn;
            } else if t_ic[i] < params.t_ic && t_ic[j] < params.t_ic {
                situation[i][j] = Situation::Crossing;
                if rho[i][j] < 1.0 {
                    // A subject approaching from the observer's starboard
                    // outranks it; one from port is outranked.
                    let bearing = (ships[j].eta.y - ships[i].eta.y)
                        .atan2(ships[j].eta.x - ships[i].eta.x);
                    let rel = normalize_angle(bearing - ships[i].eta.chi);
                    if rel < 0.0 {
                        rho[i][j] += params.varpi;
                    } else if rel > 0.0 {
                        rho[i][j] -= params.varpi;
                    }
                }
            }
        }
        for j in 0..m {
            if j != i {
                gives_way[i][j] = rho[i][i] < rho[i][j];
            }
        }
    }

    PriorityTable {
        rho,
        situation,
        gives_way,
    }
}

/// Negotiation bookkeeping for one control period.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    pub done: Vec<bool>,
    /// Ships granted lowest priority by deadlock resolution.
    pub overrides: Vec<bool>,
    /// Consecutive slots without any decision progress.
    pub stall_slots: u32,
}

impl ProtocolState {
    pub fn new(m: usize) -> Self {
        Self {
            done: vec![false; m],
            overrides: vec![false; m],
            stall_slots: 0,
        }
    }

    pub fn all_done(&self) -> bool {
        self.done.iter().all(|d| *d)
    }
}

/// Ships allowed to update now: not done, and every ship strictly below them
/// in the pairwise order has finished. Override ships are always eligible.
pub fn eligible_ships(table: &PriorityTable, state: &ProtocolState) -> Vec<usize> {
    let m = table.len();
    (0..m)
        .filter(|&i| {
            if state.done[i] {
                return false;
            }
            if state.overrides[i] {
                return true;
            }
            (0..m).all(|j| {
                let j_below_i = table.gives_way[j][i] && !table.gives_way[i][j];
                !j_below_i || state.done[j]
            })
        })
        .collect()
}

/// Deadlock: nobody can move, ships remain, and the stall has lasted the
/// configured number of slots.
pub fn detect_deadlock(table: &PriorityTable, state: &ProtocolState, t_dl_slots: u32) -> bool {
    !state.all_done() && eligible_ships(table, state).is_empty() && state.stall_slots >= t_dl_slots
}

/// Grants lowest priority to the lightest ship that has not decided yet;
/// ties break on the lowest index.
pub fn resolve_deadlock(state: &ProtocolState, weights: &[f64]) -> Option<usize> {
    (0..weights.len())
        .filter(|&i| !state.done[i])
        .min_by(|&a, &b| weights[a].partial_cmp(&weights[b]).unwrap().then(a.cmp(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn straight_waterway() -> Waterway {
        Waterway {
            centerline: vec![(0.0, 0.0), (2000.0, 0.0)],
            half_width: 30.0,
        }
    }

    fn east_route(y: f64) -> Route {
        Route::from_positions(&[(0.0, y), (2000.0, y)], 50.0, -30.0 - y, 30.0 - y)
    }

    fn west_route(y: f64) -> Route {
        Route::from_positions(&[(2000.0, y), (0.0, y)], 50.0, -30.0 + y, 30.0 + y)
    }

    #[test]
    fn starboard_side_tests() {
        let w = straight_waterway();
        // On the centerline: dead-band counts as not-starboard.
        assert!(!is_starboard_side(&InertialState::new(100.0, 0.0, 0.0), &w));
        // Eastbound south of the centerline is starboard.
        assert!(is_starboard_side(&InertialState::new(100.0, -10.0, 0.0), &w));
        // Mirrored position is port.
        assert!(!is_starboard_side(&InertialState::new(100.0, 10.0, 0.0), &w));
        // For a westbound ship the halves flip.
        assert!(is_starboard_side(&InertialState::new(100.0, 10.0, PI), &w));
        assert!(!is_starboard_side(&InertialState::new(100.0, -10.0, PI), &w));
    }

    #[test]
    fn tcpa_cases() {
        let a = InertialState::new(0.0, 0.0, 0.0);
        let b = InertialState::new(800.0, 0.0, PI);
        let t = tcpa(&a, a.velocity(4.0), &b, b.velocity(4.0));
        assert_abs_diff_eq!(t, 100.0, epsilon = 1e-9);

        // Brute-force oracle: minimize the squared distance over a fine grid.
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..40_000 {
            let tt = k as f64 * 0.01;
            let d = (800.0 - 8.0 * tt).abs();
            if d < best.0 {
                best = (d, tt);
            }
        }
        assert_abs_diff_eq!(t, best.1, epsilon = 0.01);

        // Parallel identical velocities never close.
        let c = InertialState::new(0.0, 50.0, 0.0);
        assert!(tcpa(&a, a.velocity(4.0), &c, c.velocity(4.0)).is_infinite());

        // Already at the closest point.
        let d = InertialState::new(0.0, 100.0, PI);
        assert_abs_diff_eq!(
            tcpa(&a, a.velocity(4.0), &d, d.velocity(4.0)),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn time_to_intersection_cases() {
        let route = east_route(0.0);
        let eta = InertialState::new(100.0, 0.0, 0.0);
        assert_abs_diff_eq!(
            time_to_intersection(&eta, 4.0, &route, (500.0, 0.0)),
            100.0,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            time_to_intersection(&eta, 4.0, &route, (100.0, 0.0)),
            0.0,
            epsilon = 1e-9
        );
        // A point far off the route laterally is never reached.
        assert!(time_to_intersection(&eta, 4.0, &route, (500.0, 500.0)).is_infinite());
        // Already passed.
        assert!(time_to_intersection(&eta, 4.0, &route, (50.0, 0.0)).is_infinite());
    }

    #[test]
    fn headon_classification() {
        let seg = east_route(0.0).segment(0);
        let a = InertialState::new(0.0, 0.0, 0.0);
        let b = InertialState::new(800.0, 2.0, PI);
        assert!(classify_headon(&a, 4.0, &b, 4.0, 300.0, &seg));

        // Perpendicular courses are not head-on.
        let c = InertialState::new(400.0, -400.0, PI / 2.0);
        assert!(!classify_headon(&a, 4.0, &c, 4.0, 300.0, &seg));

        // Opposite courses but diverging.
        let d = InertialState::new(-100.0, 2.0, PI);
        assert!(!classify_headon(&a, 4.0, &d, 4.0, 300.0, &seg));

        // Outside the lane bounds of the own waterway.
        let e = InertialState::new(800.0, 80.0, PI);
        assert!(!classify_headon(&a, 4.0, &e, 4.0, 300.0, &seg));
    }

    fn view<'a>(
        eta: InertialState,
        speed: f64,
        route: &'a Route,
        waterway: &'a Waterway,
    ) -> ShipView<'a> {
        let segment = crate::frames::active_segment(route, &eta);
        ShipView {
            eta,
            speed,
            route,
            waterway,
            segment,
        }
    }

    #[test]
    fn headon_priorities() {
        // Ship 0 eastbound on its starboard half; ship 1 westbound on its
        // port half, on a collision course.
        let w = straight_waterway();
        let r0 = east_route(-10.0);
        let r1 = west_route(-12.0);
        let ships = vec![
            view(InertialState::new(0.0, -10.0, 0.0), 4.0, &r0, &w),
            view(InertialState::new(1600.0, -12.0, PI), 4.0, &r1, &w),
        ];
        let table = assign_priorities(&ships, None, &ProtocolParams::default());
        assert_eq!(table.situation[0][1], Situation::HeadOn);
        assert_eq!(table.situation[1][0], Situation::HeadOn);
        assert!(table.gives_way[1][0], "non-starboard ship gives way");
        assert!(!table.gives_way[0][1]);
        assert!(table.consistency_violations().is_empty());
    }

    #[test]
    fn crossing_priorities_starboard_approach() {
        // Neither ship follows its starboard side; ship 1 approaches from
        // ship 0's starboard and stands on.
        let w_ns = Waterway {
            centerline: vec![(0.0, -1500.0), (0.0, 1500.0)],
            half_width: 30.0,
        };
        let w_ew = straight_waterway();
        let r0 = Route::from_positions(&[(-8.0, -1500.0), (-8.0, 1500.0)], 50.0, -22.0, 38.0);
        let r1 = Route::from_positions(&[(1500.0, -8.0), (-1500.0, -8.0)], 50.0, -38.0, 22.0);
        let ships = vec![
            view(InertialState::new(-8.0, -600.0, PI / 2.0), 4.0, &r0, &w_ns),
            view(InertialState::new(600.0, -8.0, PI), 4.0, &r1, &w_ew),
        ];
        let table = assign_priorities(&ships, Some((0.0, 0.0)), &ProtocolParams::default());
        assert_eq!(table.situation[0][1], Situation::Crossing);
        assert!(table.gives_way[0][1], "port-approached ship gives way");
        assert!(!table.gives_way[1][0]);
        assert!(table.consistency_violations().is_empty());
    }

    fn four_ship_cycle() -> (Vec<Route>, Waterway, Waterway, Vec<InertialState>) {
        let w_ew = Waterway {
            centerline: vec![(-1500.0, 0.0), (1500.0, 0.0)],
            half_width: 30.0,
        };
        let w_ns = Waterway {
            centerline: vec![(0.0, -1500.0), (0.0, 1500.0)],
            half_width: 30.0,
        };
        let routes = vec![
            Route::from_positions(&[(-1500.0, 10.0), (1500.0, 10.0)], 50.0, -40.0, 20.0),
            Route::from_positions(&[(-10.0, -1500.0), (-10.0, 1500.0)], 50.0, -20.0, 40.0),
            Route::from_positions(&[(1500.0, -10.0), (-1500.0, -10.0)], 50.0, -20.0, 40.0),
            Route::from_positions(&[(10.0, 1500.0), (10.0, -1500.0)], 50.0, -40.0, 20.0),
        ];
        let etas = vec![
            InertialState::new(-600.0, 10.0, 0.0),
            InertialState::new(-10.0, -600.0, PI / 2.0),
            InertialState::new(600.0, -10.0, PI),
            InertialState::new(10.0, 600.0, -PI / 2.0),
        ];
        (routes, w_ew, w_ns, etas)
    }

    #[test]
    fn deadlock_cycle_has_no_eligible_ship() {
        let (routes, w_ew, w_ns, etas) = four_ship_cycle();
        let waterways = [&w_ew, &w_ns, &w_ew, &w_ns];
        let ships: Vec<ShipView> = etas
            .iter()
            .enumerate()
            .map(|(i, eta)| view(*eta, 4.0, &routes[i], waterways[i]))
            .collect();
        let table = assign_priorities(&ships, Some((0.0, 0.0)), &ProtocolParams::default());
        // Each ship waits for the one approaching from its starboard side.
        assert!(table.gives_way[0][1]);
        assert!(table.gives_way[1][2]);
        assert!(table.gives_way[2][3]);
        assert!(table.gives_way[3][0]);

        let mut state = ProtocolState::new(4);
        assert!(eligible_ships(&table, &state).is_empty());

        // Timer rule: the deadlock is declared only after the stall window.
        state.stall_slots = 2;
        assert!(!detect_deadlock(&table, &state, 3));
        state.stall_slots = 3;
        assert!(detect_deadlock(&table, &state, 3));

        // The lightest remaining ship is granted lowest priority.
        let weights = [4e5, 3e5, 2e5, 1e5];
        assert_eq!(resolve_deadlock(&state, &weights), Some(3));
        state.done[3] = true;
        assert_eq!(resolve_deadlock(&state, &weights), Some(2));
        let equal = [1e5; 4];
        assert_eq!(resolve_deadlock(&state, &equal), Some(0));

        // Once the override ship finishes the cycle unwinds: ship 0 was
        // waiting only on ship 3, then ship 1 on ship 0, and so on.
        let mut state = ProtocolState::new(4);
        state.overrides[3] = true;
        assert_eq!(eligible_ships(&table, &state), vec![3]);
        state.done[3] = true;
        assert_eq!(eligible_ships(&table, &state), vec![0]);
        state.done[0] = true;
        assert_eq!(eligible_ships(&table, &state), vec![1]);
    }

    #[test]
    fn eligibility_order_two_ships() {
        let w = straight_waterway();
        let r0 = east_route(-10.0);
        let r1 = west_route(-12.0);
        let ships = vec![
            view(InertialState::new(0.0, -10.0, 0.0), 4.0, &r0, &w),
            view(InertialState::new(1600.0, -12.0, PI), 4.0, &r1, &w),
        ];
        let table = assign_priorities(&ships, None, &ProtocolParams::default());
        let mut state = ProtocolState::new(2);
        // The give-way ship decides first.
        assert_eq!(eligible_ships(&table, &state), vec![1]);
        state.done[1] = true;
        assert_eq!(eligible_ships(&table, &state), vec![0]);
        assert!(!detect_deadlock(&table, &state, 3));
    }

    #[test]
    fn single_ship_immediately_eligible() {
        let w = straight_waterway();
        let r = east_route(0.0);
        let ships = vec![view(InertialState::new(0.0, 0.0, 0.0), 4.0, &r, &w)];
        let table = assign_priorities(&ships, None, &ProtocolParams::default());
        let state = ProtocolState::new(1);
        assert_eq!(eligible_ships(&table, &state), vec![0]);
    }

    #[test]
    fn ship_situation_precedence() {
        let table = PriorityTable {
            rho: vec![vec![0.0; 3]; 3],
            situation: vec![
                vec![Situation::Clear, Situation::HeadOn, Situation::Crossing],
                vec![Situation::HeadOn, Situation::Clear, Situation::Clear],
                vec![Situation::Clear, Situation::Clear, Situation::Clear],
            ],
            gives_way: vec![vec![false; 3]; 3],
        };
        assert_eq!(table.ship_situation(0), Situation::Crossing);
        assert_eq!(table.ship_situation(1), Situation::HeadOn);
        assert_eq!(table.ship_situation(2), Situation::Clear);
    }
}
