//! Deterministic closed-loop execution of the car on an obstructed track:
//! kinematic bicycle dynamics, the polar depth sensor, the task monitor, and
//! the distance-to-failure heuristic.
//!
//! Collisions are defined over the poses swept between consecutive control
//! steps (positions interpolated linearly, heading by shortest arc, at the
//! substep resolution). The same sweep is used by the live monitor, by
//! [`status`] re-evaluation, and by [`distance_to_failure`], so all three
//! agree exactly on any recorded trajectory.

mod controller;
mod protocol;

pub use controller::{Controller, ReferenceController};
pub use protocol::{
    decode_request, decode_response, encode_request, encode_response, serve_stdio,
    ExternalController, BITMAP_BYTES, REQUEST_PAYLOAD_BYTES,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{SampleSpec, Scene};
use crate::geometry::{
    cast_ray, rect_to_disc_distance, Disc, OrientedRect, Pose2, ShoulderPolyline, TrackGeometry,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("controller protocol error: {0}")]
    ControllerProtocol(String),
}

/// Full kinematic state of the car. The origin (x, y) sits between the back
/// wheels; `phi` is the heading, `alpha` the steering angle, `v` the speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub alpha: f64,
    pub v: f64,
}

/// Controller output for one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Control {
    pub accel: f64,
    pub steer_rate: f64,
}

/// One sensor frame: the packed binary depth image plus the current steering
/// angle. Column 0 looks toward the most negative bearing; rows grow with
/// depth, and every cell at or beyond a column's first hit is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub alpha: f64,
    pub cols: usize,
    pub rows: usize,
    /// Row-major bit grid (`rows x cols`), most significant bit first.
    pub bits: Vec<u8>,
}

impl Observation {
    pub fn empty(alpha: f64, cols: usize, rows: usize) -> Self {
        Observation {
            alpha,
            cols,
            rows,
            bits: vec![0u8; (cols * rows).div_ceil(8)],
        }
    }

    #[inline]
    fn bit_index(&self, col: usize, row: usize) -> usize {
        row * self.cols + col
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        let k = self.bit_index(col, row);
        self.bits[k / 8] & (0x80 >> (k % 8)) != 0
    }

    fn set(&mut self, col: usize, row: usize) {
        let k = self.bit_index(col, row);
        self.bits[k / 8] |= 0x80 >> (k % 8);
    }

    /// Occlusion fill: every row at or beyond the hit is set.
    pub fn fill_column(&mut self, col: usize, hit_row: usize) {
        for row in hit_row..self.rows {
            self.set(col, row);
        }
    }

    /// First set row of a column (the depth bin of the hit).
    pub fn hit_row(&self, col: usize) -> usize {
        for row in 0..self.rows {
            if self.get(col, row) {
                return row;
            }
        }
        self.rows
    }
}

/// Why a run terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    None,
    CollisionObstacle,
    CollisionShoulder,
    TimeoutNoReach,
}

impl std::fmt::Display for FailureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FailureKind::None => "none",
            FailureKind::CollisionObstacle => "collision_obstacle",
            FailureKind::CollisionShoulder => "collision_shoulder",
            FailureKind::TimeoutNoReach => "timeout_no_reach",
        };
        f.write_str(s)
    }
}

/// Task verdict over a trajectory. `satisfied` is the binary status; `kind`
/// records the terminating cause. A timeout only counts as a violation when
/// the scenario says so.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusReport {
    pub satisfied: bool,
    pub kind: FailureKind,
    pub terminal_step: usize,
}

impl StatusReport {
    pub fn status(&self) -> u8 {
        u8::from(self.satisfied)
    }

    pub fn is_collision(&self) -> bool {
        matches!(
            self.kind,
            FailureKind::CollisionObstacle | FailureKind::CollisionShoulder
        )
    }
}

/// Car body extents. The body is centered on the wheelbase, so its center
/// sits half a wheelbase ahead of the state origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarShape {
    pub width: f64,
    pub length: f64,
    pub wheelbase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorParams {
    pub range: f64,
    pub half_angle: f64,
    pub cols: usize,
    pub rows: usize,
}

impl SensorParams {
    pub fn bearing_of_col(&self, col: f64) -> f64 {
        -self.half_angle + col * (2.0 * self.half_angle) / (self.cols as f64 - 1.0)
    }

    pub fn bin_size(&self) -> f64 {
        self.range / self.rows as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionLimits {
    pub max_speed: f64,
    pub max_steer_rate: f64,
    pub max_steer: f64,
}

/// Resolved scenario constants shared by the simulator and the search.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub track: TrackGeometry,
    pub obstacle_count: usize,
    pub obstacle_radius: f64,
    pub car: CarShape,
    pub sensor: SensorParams,
    pub limits: MotionLimits,
    pub control_dt: f64,
    pub substeps: u32,
    pub horizon: usize,
    pub timeout_is_violation: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        let x_end = 5.0 * std::f64::consts::PI;
        Scenario {
            track: TrackGeometry::new(0.8, 0.0, x_end, 0.8)
                .with_end_zone(4.5 * std::f64::consts::PI),
            obstacle_count: 3,
            obstacle_radius: 0.1,
            car: CarShape {
                width: 0.2,
                length: 0.4,
                wheelbase: 0.3,
            },
            sensor: SensorParams {
                range: 2.0,
                half_angle: 72f64.to_radians(),
                cols: 100,
                rows: 50,
            },
            limits: MotionLimits {
                max_speed: 0.4,
                max_steer_rate: 10f64.to_radians(),
                max_steer: 60f64.to_radians(),
            },
            control_dt: 1.0,
            substeps: 10,
            horizon: 300,
            timeout_is_violation: false,
        }
    }
}

impl Scenario {
    /// The fixed initial state: at the start of the centerline, heading
    /// along the curve, wheels straight, standing still.
    pub fn initial_state(&self) -> SystemState {
        SystemState {
            x: self.track.x_start,
            y: self.track.centerline_y(self.track.x_start),
            phi: self.track.heading_at(self.track.x_start),
            alpha: 0.0,
            v: 0.0,
        }
    }

    pub fn car_rect_at(&self, x: f64, y: f64, phi: f64) -> OrientedRect {
        let off = self.car.wheelbase / 2.0;
        OrientedRect::new(
            Pose2::new(x + off * phi.cos(), y + off * phi.sin(), phi),
            self.car.length,
            self.car.width,
        )
    }

    pub fn car_shape(&self, s: &SystemState) -> OrientedRect {
        self.car_rect_at(s.x, s.y, s.phi)
    }

    /// Sensor apex: between the front wheels, facing the heading.
    pub fn sensor_pose(&self, s: &SystemState) -> Pose2 {
        Pose2::new(
            s.x + self.car.wheelbase * s.phi.cos(),
            s.y + self.car.wheelbase * s.phi.sin(),
            s.phi,
        )
    }

    pub fn sample_spec(&self) -> SampleSpec {
        SampleSpec {
            track: self.track,
            obstacle_count: self.obstacle_count,
            obstacle_radius: self.obstacle_radius,
        }
    }
}

/// Render one sensor frame from a state: one ray per column across the field
/// of view, depth quantized into row bins with occlusion fill. Bit-exact
/// deterministic in (state, environment).
pub fn observe(state: &SystemState, env: &crate::env::Environment, sc: &Scenario) -> Observation {
    let apex = sc.sensor_pose(state);
    let mut obs = Observation::empty(state.alpha, sc.sensor.cols, sc.sensor.rows);
    let bin = sc.sensor.bin_size();
    for col in 0..sc.sensor.cols {
        let bearing = sc.sensor.bearing_of_col(col as f64);
        let d = cast_ray(&apex, bearing, sc.sensor.range, &env.track, &env.obstacles);
        let hit = ((d / bin).floor() as usize).min(sc.sensor.rows - 1);
        obs.fill_column(col, hit);
    }
    obs
}

/// Advance one control period with the kinematic bicycle model, integrating
/// with Euler substeps. Control limits are clamped; speed and steering angle
/// saturate at their bounds.
pub fn step(state: &SystemState, u: &Control, sc: &Scenario) -> SystemState {
    let sr = u
        .steer_rate
        .clamp(-sc.limits.max_steer_rate, sc.limits.max_steer_rate);
    let dt = sc.control_dt / f64::from(sc.substeps);
    let mut s = *state;
    for _ in 0..sc.substeps {
        s.alpha = (s.alpha + sr * dt).clamp(-sc.limits.max_steer, sc.limits.max_steer);
        s.v = (s.v + u.accel * dt).clamp(0.0, sc.limits.max_speed);
        s.phi += (s.v / sc.car.wheelbase) * s.alpha.tan() * dt;
        s.x += s.v * s.phi.cos() * dt;
        s.y += s.v * s.phi.sin() * dt;
    }
    s
}

/// Poses swept between two consecutive states: positions interpolated
/// linearly, heading by shortest arc, sampled at k/substeps for k = 1..=n.
/// The final pose is the end state's own.
pub fn sweep_poses(a: &SystemState, b: &SystemState, substeps: u32) -> Vec<(f64, f64, f64)> {
    let dphi = crate::geometry::normalize_angle(b.phi - a.phi);
    (1..=substeps)
        .map(|k| {
            let f = f64::from(k) / f64::from(substeps);
            (
                a.x + f * (b.x - a.x),
                a.y + f * (b.y - a.y),
                a.phi + f * dphi,
            )
        })
        .collect()
}

fn collision_at(
    sc: &Scenario,
    shoulders: &ShoulderPolyline,
    obstacles: &[Disc],
    x: f64,
    y: f64,
    phi: f64,
) -> Option<FailureKind> {
    let rect = sc.car_rect_at(x, y, phi);
    for d in obstacles {
        if rect_to_disc_distance(&rect, d) <= 0.0 {
            return Some(FailureKind::CollisionObstacle);
        }
    }
    if shoulders.rect_clearance(&rect) <= 0.0 {
        return Some(FailureKind::CollisionShoulder);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Reached,
    Failed(FailureKind),
}

/// Event fired by the arrival step into `next`: a collision anywhere along
/// the sweep, else end-zone containment at the new state.
fn step_event(
    sc: &Scenario,
    shoulders: &ShoulderPolyline,
    obstacles: &[Disc],
    prev: &SystemState,
    next: &SystemState,
) -> Option<Event> {
    for (x, y, phi) in sweep_poses(prev, next, sc.substeps) {
        if let Some(kind) = collision_at(sc, shoulders, obstacles, x, y, phi) {
            return Some(Event::Failed(kind));
        }
    }
    if sc.track.rect_in_end_zone(&sc.car_shape(next)) {
        return Some(Event::Reached);
    }
    None
}

fn initial_event(
    sc: &Scenario,
    shoulders: &ShoulderPolyline,
    obstacles: &[Disc],
    s0: &SystemState,
) -> Option<Event> {
    if let Some(kind) = collision_at(sc, shoulders, obstacles, s0.x, s0.y, s0.phi) {
        return Some(Event::Failed(kind));
    }
    if sc.track.rect_in_end_zone(&sc.car_shape(s0)) {
        return Some(Event::Reached);
    }
    None
}

fn report_from_event(ev: Option<(Event, usize)>, last: usize, sc: &Scenario) -> StatusReport {
    match ev {
        Some((Event::Reached, i)) => StatusReport {
            satisfied: true,
            kind: FailureKind::None,
            terminal_step: i,
        },
        Some((Event::Failed(kind), i)) => StatusReport {
            satisfied: false,
            kind,
            terminal_step: i,
        },
        None => StatusReport {
            satisfied: !sc.timeout_is_violation,
            kind: FailureKind::TimeoutNoReach,
            terminal_step: last,
        },
    }
}

/// Evaluate the task over a recorded trajectory: violation on the first
/// swept collision, satisfaction on the first end-zone containment, timeout
/// otherwise.
pub fn status(
    traj: &[SystemState],
    env: &crate::env::Environment,
    sc: &Scenario,
    shoulders: &ShoulderPolyline,
) -> StatusReport {
    assert!(!traj.is_empty());
    let mut ev = initial_event(sc, shoulders, &env.obstacles, &traj[0]).map(|e| (e, 0));
    if ev.is_none() {
        for i in 1..traj.len() {
            if let Some(e) = step_event(sc, shoulders, &env.obstacles, &traj[i - 1], &traj[i]) {
                ev = Some((e, i));
                break;
            }
        }
    }
    report_from_event(ev, traj.len() - 1, sc)
}

/// Minimum clearance of the car over the trajectory (including swept poses)
/// from obstacles and shoulders, clamped to the sensor range and normalized
/// to [0, 1]. Zero exactly when the trajectory contains a collision.
pub fn distance_to_failure(
    traj: &[SystemState],
    env: &crate::env::Environment,
    sc: &Scenario,
    shoulders: &ShoulderPolyline,
) -> f64 {
    assert!(!traj.is_empty());
    let clearance = |x: f64, y: f64, phi: f64| -> f64 {
        let rect = sc.car_rect_at(x, y, phi);
        let mut c = shoulders.rect_clearance(&rect);
        for d in &env.obstacles {
            c = c.min(rect_to_disc_distance(&rect, d));
        }
        c
    };
    let mut min_c = clearance(traj[0].x, traj[0].y, traj[0].phi);
    for i in 1..traj.len() {
        for (x, y, phi) in sweep_poses(&traj[i - 1], &traj[i], sc.substeps) {
            min_c = min_c.min(clearance(x, y, phi));
        }
        if min_c <= 0.0 {
            break;
        }
    }
    min_c.clamp(0.0, sc.sensor.range) / sc.sensor.range
}

/// Output of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub traj: Vec<SystemState>,
    pub history: Vec<Observation>,
    pub status: StatusReport,
}

/// Owns the per-run controller-call counter and the cached shoulder
/// polylines. One instance per search thread.
#[derive(Debug)]
pub struct Simulator {
    scenario: Scenario,
    shoulders: ShoulderPolyline,
    controller_calls: u64,
}

impl Simulator {
    pub fn new(scenario: Scenario) -> Self {
        let shoulders = ShoulderPolyline::new(&scenario.track);
        Simulator {
            scenario,
            shoulders,
            controller_calls: 0,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn shoulders(&self) -> &ShoulderPolyline {
        &self.shoulders
    }

    /// Total controller invocations performed through this instance.
    pub fn controller_calls(&self) -> u64 {
        self.controller_calls
    }

    /// Closed-loop run: observe, query the controller, integrate, monitor.
    /// Terminates at the first monitor event or after `max_steps` control
    /// periods. Exactly one controller call per recorded step beyond the
    /// initial state.
    pub fn simulate(
        &mut self,
        scene: &Scene,
        controller: &mut dyn Controller,
        max_steps: usize,
    ) -> Result<SimOutcome, SimError> {
        let sc = &self.scenario;
        let obstacles = &scene.env.obstacles;
        let mut traj = vec![scene.initial_state];
        let mut history = vec![observe(&scene.initial_state, &scene.env, sc)];

        let mut ev = initial_event(sc, &self.shoulders, obstacles, &traj[0]).map(|e| (e, 0));
        while ev.is_none() && traj.len() - 1 < max_steps {
            let u = controller.control(history.last().expect("history nonempty"))?;
            self.controller_calls += 1;
            let prev = *traj.last().expect("trajectory nonempty");
            let next = step(&prev, &u, sc);
            traj.push(next);
            history.push(observe(&next, &scene.env, sc));
            ev = step_event(sc, &self.shoulders, obstacles, &prev, &next)
                .map(|e| (e, traj.len() - 1));
        }

        let status = report_from_event(ev, traj.len() - 1, sc);
        Ok(SimOutcome {
            traj,
            history,
            status,
        })
    }
}

// --- trajectory dump format ----------------------------------------------

#[derive(Serialize, Deserialize)]
pub(crate) struct StateDoc {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub alpha: f64,
    pub v: f64,
}

/// Trajectory dump: per-step `{t, x, y, phi, alpha, v}` records.
pub fn trajectory_doc(traj: &[SystemState], dt: f64) -> Vec<serde_json::Value> {
    traj.iter()
        .enumerate()
        .map(|(i, s)| {
            serde_json::to_value(StateDoc {
                t: i as f64 * dt,
                x: s.x,
                y: s.y,
                phi: s.phi,
                alpha: s.alpha,
                v: s.v,
            })
            .expect("state serializes")
        })
        .collect()
}

pub(crate) fn states_from_docs(docs: Vec<StateDoc>) -> Vec<SystemState> {
    docs.into_iter()
        .map(|d| SystemState {
            x: d.x,
            y: d.y,
            phi: d.phi,
            alpha: d.alpha,
            v: d.v,
        })
        .collect()
}
