//! Coordinate frames and route geometry.
//!
//! Two frames are used throughout: the inertial frame `{n}` and, per ship,
//! a path frame aligned with the active waypoint segment (x along-track,
//! y cross-track). Course angles are measured counter-clockwise from the
//! frame x-axis, so positive cross-track y is to the port side of the
//! direction of travel and the starboard half of a waterway has y < 0.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Normalizes an angle to (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.sin().atan2(a.cos());
    if r <= -PI {
        PI
    } else {
        r
    }
}

/// Pose in the inertial frame: position and course angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InertialState {
    pub x: f64,
    pub y: f64,
    pub chi: f64,
}

impl InertialState {
    pub fn new(x: f64, y: f64, chi: f64) -> Self {
        Self {
            x,
            y,
            chi: normalize_angle(chi),
        }
    }

    /// Velocity vector for a given speed along the current course.
    pub fn velocity(&self, speed: f64) -> (f64, f64) {
        (speed * self.chi.cos(), speed * self.chi.sin())
    }
}

/// Pose in a path frame: along-track x, cross-track y, relative course.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub x: f64,
    pub y: f64,
    pub chi: f64,
}

impl PathState {
    pub fn new(x: f64, y: f64, chi: f64) -> Self {
        Self {
            x,
            y,
            chi: normalize_angle(chi),
        }
    }
}

/// One leg of a route: the origin pose of the previous active waypoint,
/// the leg length, and the lateral lane bounds expressed in this frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WaypointSegment {
    pub origin: InertialState,
    pub length: f64,
    pub lane_min: f64,
    pub lane_max: f64,
}

/// Transforms an inertial pose into the path frame of `seg`.
pub fn to_path_frame(eta: &InertialState, seg: &WaypointSegment) -> PathState {
    let (c, s) = (seg.origin.chi.cos(), seg.origin.chi.sin());
    let dx = eta.x - seg.origin.x;
    let dy = eta.y - seg.origin.y;
    PathState {
        x: c * dx + s * dy,
        y: -s * dx + c * dy,
        chi: normalize_angle(eta.chi - seg.origin.chi),
    }
}

/// Inverse of [`to_path_frame`] up to angle normalization.
pub fn to_inertial(p: &PathState, seg: &WaypointSegment) -> InertialState {
    let (c, s) = (seg.origin.chi.cos(), seg.origin.chi.sin());
    InertialState {
        x: seg.origin.x + c * p.x - s * p.y,
        y: seg.origin.y + s * p.x + c * p.y,
        chi: normalize_angle(p.chi + seg.origin.chi),
    }
}

/// Elementwise [`to_path_frame`] over a trajectory of inertial poses.
pub fn transform_trajectory(xs: &[InertialState], seg: &WaypointSegment) -> Vec<PathState> {
    xs.iter().map(|eta| to_path_frame(eta, seg)).collect()
}

/// An ordered list of waypoints with a circle-of-acceptance switching rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Route {
    pub waypoints: Vec<InertialState>,
    pub acceptance_radius: f64,
    pub lane_min: f64,
    pub lane_max: f64,
}

impl Route {
    /// Builds a route from waypoint positions. Each waypoint's course is set
    /// toward the next waypoint; the last one keeps the preceding course.
    pub fn from_positions(
        points: &[(f64, f64)],
        acceptance_radius: f64,
        lane_min: f64,
        lane_max: f64,
    ) -> Self {
        assert!(points.len() >= 2, "route needs at least two waypoints");
        let mut waypoints = Vec::with_capacity(points.len());
        for i in 0..points.len() {
            let (from, to) = if i + 1 < points.len() {
                (points[i], points[i + 1])
            } else {
                (points[i - 1], points[i])
            };
            let chi = (to.1 - from.1).atan2(to.0 - from.0);
            waypoints.push(InertialState::new(points[i].0, points[i].1, chi));
        }
        Self {
            waypoints,
            acceptance_radius,
            lane_min,
            lane_max,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.waypoints.len() - 1
    }

    /// The segment starting at waypoint `idx`.
    pub fn segment(&self, idx: usize) -> WaypointSegment {
        let a = self.waypoints[idx];
        let b = self.waypoints[idx + 1];
        WaypointSegment {
            origin: a,
            length: ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt(),
            lane_min: self.lane_min,
            lane_max: self.lane_max,
        }
    }

    /// Cumulative along-track coordinate at which the route passes a point,
    /// or `None` when the point lies outside the route's lateral reach.
    pub fn along_track_of_point(&self, point: (f64, f64)) -> Option<f64> {
        let eta = InertialState::new(point.0, point.1, 0.0);
        let mut travelled = 0.0;
        for idx in 0..self.segment_count() {
            let seg = self.segment(idx);
            let p = to_path_frame(&eta, &seg);
            let lateral_ok = p.y >= self.lane_min - self.acceptance_radius
                && p.y <= self.lane_max + self.acceptance_radius;
            if lateral_ok && p.x >= 0.0 && p.x <= seg.length {
                return Some(travelled + p.x);
            }
            travelled += seg.length;
        }
        None
    }

    /// Cumulative along-track coordinate of a ship on its active segment.
    pub fn along_track_position(&self, eta: &InertialState) -> f64 {
        let idx = self.active_segment_index(eta);
        let travelled: f64 = (0..idx).map(|i| self.segment(i).length).sum();
        travelled + to_path_frame(eta, &self.segment(idx)).x
    }

    /// Index of the segment guiding a ship at `eta`: the first segment whose
    /// end has not yet been reached within the acceptance radius. The last
    /// segment is sticky.
    pub fn active_segment_index(&self, eta: &InertialState) -> usize {
        let last = self.segment_count() - 1;
        for idx in 0..last {
            let seg = self.segment(idx);
            if to_path_frame(eta, &seg).x < seg.length - self.acceptance_radius {
                return idx;
            }
        }
        last
    }
}

/// The waypoint segment currently guiding a ship at `eta`.
pub fn active_segment(route: &Route, eta: &InertialState) -> WaypointSegment {
    route.segment(route.active_segment_index(eta))
}
