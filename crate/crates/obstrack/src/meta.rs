//! Meta-states and their dynamics: a meta-state bundles an environment with
//! the simulated trajectory and observation history it induces. Applying a
//! mutation yields the successor meta-state, either by re-simulating from
//! scratch or incrementally, by keeping the trajectory prefix whose
//! observations the mutation provably does not touch and resuming simulation
//! from the first compromised step.
//!
//! Incremental updates are bit-exact equivalent to full re-simulation. That
//! requires care beyond resuming at the compromise timestamp: an added
//! obstacle may collide with the kept prefix without ever being observed
//! (behind the car), and a mutation elsewhere may leave the whole history
//! valid while the original terminal event still has to be re-examined. Both
//! cases are handled by a pure-geometry re-scan of the kept prefix, which
//! costs no controller calls.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    apply_mutation, env_distance, sample_env, EnvError, Environment, Mutation, Scene,
};
use crate::geometry::{rect_to_disc_distance, SectorFOV};
use crate::sim::{
    observe, sweep_poses, Controller, Observation, Scenario, SimError, Simulator, SystemState,
};

#[derive(Debug, Error)]
pub enum MetaError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Grid step for the trajectory distance integral.
pub const TRAJ_DISTANCE_DX: f64 = 0.05;

/// How meta-dynamics updates the trajectory after a mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimMode {
    Full,
    Incremental,
}

/// How the compromise timestamp is found: by re-rendering observations in
/// the mutated environment, or by the cheaper conservative sensor-footprint
/// test that never calls the sensor model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationMode {
    Generic,
    FastSector,
}

/// A simulated scene: environment, trajectory, observation history, and the
/// cached verdict and distance-to-failure.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaState {
    pub env: Environment,
    pub traj: Vec<SystemState>,
    pub history: Vec<Observation>,
    pub status: crate::sim::StatusReport,
    pub dtf: f64,
}

impl MetaState {
    /// Assemble a meta-state, computing the verdict and distance-to-failure
    /// from the trajectory.
    pub fn from_parts(
        env: Environment,
        traj: Vec<SystemState>,
        history: Vec<Observation>,
        sim: &Simulator,
    ) -> Self {
        debug_assert_eq!(traj.len(), history.len());
        let status = crate::sim::status(&traj, &env, sim.scenario(), sim.shoulders());
        let dtf = crate::sim::distance_to_failure(&traj, &env, sim.scenario(), sim.shoulders());
        MetaState {
            env,
            traj,
            history,
            status,
            dtf,
        }
    }

    pub fn failing(&self) -> bool {
        !self.status.satisfied
    }

    /// Validity invariant: replaying the scene reproduces the recorded
    /// trajectory and history bit-exactly.
    pub fn verify_valid(
        &self,
        sim: &mut Simulator,
        controller: &mut dyn Controller,
    ) -> Result<bool, SimError> {
        let scene = Scene {
            env: self.env.clone(),
            initial_state: self.traj[0],
        };
        let out = sim.simulate(&scene, controller, sim.scenario().horizon)?;
        Ok(out.traj == self.traj && out.history == self.history && out.status == self.status)
    }
}

/// Smallest step whose recorded observation differs, bit for bit, from what
/// the sensor would return in `new_env`; trajectory length if none does.
pub fn compromise_timestamp_generic(s: &MetaState, new_env: &Environment, sc: &Scenario) -> usize {
    for (i, state) in s.traj.iter().enumerate() {
        if observe(state, new_env, sc) != s.history[i] {
            return i;
        }
    }
    s.traj.len()
}

/// Conservative compromise timestamp: the first step whose sensor footprint
/// a touched obstacle may intersect. Never later than the generic timestamp
/// and never invokes the sensor model or the controller.
pub fn compromise_timestamp_fast(s: &MetaState, m: &Mutation, sc: &Scenario) -> usize {
    let touched: Vec<_> = m.touched().collect();
    for (i, state) in s.traj.iter().enumerate() {
        let fov = SectorFOV {
            apex: sc.sensor_pose(state),
            range: sc.sensor.range,
            half_angle: sc.sensor.half_angle,
        };
        if touched
            .iter()
            .any(|d| crate::geometry::sector_intersects_disc(&fov, d, true))
        {
            return i;
        }
    }
    s.traj.len()
}

/// Apply a mutation to a meta-state, returning the successor and the number
/// of controller calls spent. `Full` re-simulates from the initial state;
/// `Incremental` keeps the untouched prefix and resumes from the compromise
/// timestamp. Both produce identical meta-states for a deterministic system.
pub fn meta_dynamics(
    s: &MetaState,
    m: &Mutation,
    sim: &mut Simulator,
    controller: &mut dyn Controller,
    mode: SimMode,
    validation: ValidationMode,
) -> Result<(MetaState, u64), MetaError> {
    let new_env = apply_mutation(&s.env, m)?;
    match mode {
        SimMode::Full => {
            let scene = Scene {
                env: new_env.clone(),
                initial_state: s.traj[0],
            };
            let out = sim.simulate(&scene, controller, sim.scenario().horizon)?;
            let calls = (out.traj.len() - 1) as u64;
            Ok((
                MetaState::from_parts(new_env, out.traj, out.history, sim),
                calls,
            ))
        }
        SimMode::Incremental => {
            let t = match validation {
                ValidationMode::Generic => {
                    compromise_timestamp_generic(s, &new_env, sim.scenario())
                }
                ValidationMode::FastSector => compromise_timestamp_fast(s, m, sim.scenario()),
            };
            incremental_update(s, &new_env, m.added(), t, sim, controller)
        }
    }
}

fn incremental_update(
    s: &MetaState,
    new_env: &Environment,
    added: &[crate::geometry::Disc],
    t: usize,
    sim: &mut Simulator,
    controller: &mut dyn Controller,
) -> Result<(MetaState, u64), MetaError> {
    let len = s.traj.len();
    let r0 = t.min(len - 1);

    if let Some(e) = prefix_event_scan(s, new_env, added, r0, sim) {
        // The mutated environment terminates the run within the kept
        // prefix: truncate, fix up the final observation if it was the
        // compromised one, and spend no controller calls.
        let new_traj = s.traj[..=e].to_vec();
        let mut new_history = s.history[..=e].to_vec();
        if e >= t {
            new_history[e] = observe(&s.traj[e], new_env, sim.scenario());
        }
        return Ok((
            MetaState::from_parts(new_env.clone(), new_traj, new_history, sim),
            0,
        ));
    }

    let remaining = sim.scenario().horizon.saturating_sub(r0);
    let scene = Scene {
        env: new_env.clone(),
        initial_state: s.traj[r0],
    };
    let out = sim.simulate(&scene, controller, remaining)?;
    let calls = (out.traj.len() - 1) as u64;
    let mut new_traj = s.traj[..r0].to_vec();
    new_traj.extend_from_slice(&out.traj);
    let mut new_history = s.history[..r0].to_vec();
    new_history.extend_from_slice(&out.history);
    Ok((
        MetaState::from_parts(new_env.clone(), new_traj, new_history, sim),
        calls,
    ))
}

/// First index in `0..=r0` at which the mutated environment fires a monitor
/// event along the kept prefix, which full re-simulation would see but
/// resumption past it would miss.
///
/// Only added obstacles can introduce events strictly inside the prefix
/// (kept obstacles and shoulders were clean there, and removal cannot create
/// contact). The one exception is the original terminal arrival: its event
/// involved the old environment, so when the resume point reaches it the
/// whole step is re-evaluated against the mutated one.
fn prefix_event_scan(
    s: &MetaState,
    new_env: &Environment,
    added: &[crate::geometry::Disc],
    r0: usize,
    sim: &Simulator,
) -> Option<usize> {
    let sc = sim.scenario();
    let pose_hit = |x: f64, y: f64, phi: f64| -> bool {
        let rect = sc.car_rect_at(x, y, phi);
        added.iter().any(|d| rect_to_disc_distance(&rect, d) <= 0.0)
    };

    for i in 0..=r0 {
        if i == 0 {
            let s0 = &s.traj[0];
            if !added.is_empty() && pose_hit(s0.x, s0.y, s0.phi) {
                return Some(0);
            }
        } else if i == s.traj.len() - 1 {
            let report = crate::sim::status(&s.traj[i - 1..=i], new_env, sc, sim.shoulders());
            if report.kind != crate::sim::FailureKind::TimeoutNoReach && report.terminal_step == 1 {
                return Some(i);
            }
        } else if !added.is_empty() {
            for (x, y, phi) in sweep_poses(&s.traj[i - 1], &s.traj[i], sc.substeps) {
                if pose_hit(x, y, phi) {
                    return Some(i);
                }
            }
        }
    }
    None
}

/// Draw a fresh environment, run a full simulation from the scenario's
/// initial state, and return the resulting meta-state with the controller
/// calls it cost.
pub fn sample_meta_state(
    sim: &mut Simulator,
    controller: &mut dyn Controller,
    rng: &mut impl rand::Rng,
) -> Result<(MetaState, u64), MetaError> {
    let ty = crate::env::EnvironmentType::obstructed_track();
    let env = sample_env(&ty, &sim.scenario().sample_spec(), rng)?;
    let scene = Scene::new(env.clone(), sim.scenario().initial_state())?;
    let out = sim.simulate(&scene, controller, sim.scenario().horizon)?;
    let calls = (out.traj.len() - 1) as u64;
    Ok((
        MetaState::from_parts(env, out.traj, out.history, sim),
        calls,
    ))
}

/// Area between two trajectories viewed as y(x) curves: each trajectory is
/// resampled on a shared uniform grid over the overlap of their x-spans
/// (repeated x resolved by the latest visit) and |y1 - y2| is integrated by
/// the trapezoid rule. Zero when the spans do not overlap.
pub fn traj_distance(a: &[SystemState], b: &[SystemState]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let span = |t: &[SystemState]| {
        t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, s| {
            (acc.0.min(s.x), acc.1.max(s.x))
        })
    };
    let (lo_a, hi_a) = span(a);
    let (lo_b, hi_b) = span(b);
    let lo = lo_a.max(lo_b);
    let hi = hi_a.min(hi_b);
    if lo >= hi {
        return 0.0;
    }
    let n = ((hi - lo) / TRAJ_DISTANCE_DX).ceil() as usize + 1;
    let dx = (hi - lo) / (n - 1) as f64;
    let mut area = 0.0;
    let mut prev: Option<f64> = None;
    for j in 0..n {
        let x = lo + j as f64 * dx;
        let diff = (y_at_last_visit(a, x) - y_at_last_visit(b, x)).abs();
        if let Some(p) = prev {
            area += 0.5 * (p + diff) * dx;
        }
        prev = Some(diff);
    }
    area
}

/// y at the latest crossing of the vertical line `x`, interpolating along
/// the trajectory polyline in time order.
fn y_at_last_visit(t: &[SystemState], x: f64) -> f64 {
    let mut y = None;
    if t.len() == 1 {
        return t[0].y;
    }
    for w in t.windows(2) {
        let (x0, x1) = (w[0].x, w[1].x);
        if (x0 - x).abs() == 0.0 && (x1 - x).abs() == 0.0 {
            y = Some(w[1].y);
        } else if (x >= x0 && x <= x1) || (x >= x1 && x <= x0) {
            let f = if x1 == x0 { 1.0 } else { (x - x0) / (x1 - x0) };
            y = Some(w[0].y + f * (w[1].y - w[0].y));
        }
    }
    // The grid is clipped to the span intersection, so a crossing exists;
    // fall back to the nearest endpoint against rounding at the edges.
    y.unwrap_or_else(|| {
        let first = &t[0];
        let last = &t[t.len() - 1];
        if (first.x - x).abs() <= (last.x - x).abs() {
            first.y
        } else {
            last.y
        }
    })
}

/// Composite meta-state distance: `w` weighs the environment term against
/// the trajectory term. The endpoints are exact: `w = 1` is the environment
/// distance alone (the simplified mode), `w = 0` the trajectory distance.
pub fn meta_state_distance(
    a: &MetaState,
    b: &MetaState,
    w: f64,
    rng: &mut impl RngCore,
) -> Result<f64, EnvError> {
    debug_assert!((0.0..=1.0).contains(&w));
    if w == 1.0 {
        return env_distance(&a.env, &b.env, rng);
    }
    if w == 0.0 {
        return Ok(traj_distance(&a.traj, &b.traj));
    }
    let e = env_distance(&a.env, &b.env, rng)?;
    Ok(w * e + (1.0 - w) * traj_distance(&a.traj, &b.traj))
}

// --- serialization --------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ObservationDoc {
    alpha: f64,
    image: String,
}

/// Meta-state document: environment document plus trajectory dump plus
/// hex-packed observation bitmaps.
#[derive(Serialize, Deserialize)]
pub struct MetaStateDoc {
    pub env: serde_json::Value,
    trajectory: Vec<crate::sim::StateDoc>,
    history: Vec<ObservationDoc>,
}

impl MetaState {
    pub fn to_doc_string(&self, sc: &Scenario) -> String {
        let doc = MetaStateDoc {
            env: serde_json::from_str(&self.env.to_doc_string()).expect("env doc parses"),
            trajectory: self
                .traj
                .iter()
                .enumerate()
                .map(|(i, s)| crate::sim::StateDoc {
                    t: i as f64 * sc.control_dt,
                    x: s.x,
                    y: s.y,
                    phi: s.phi,
                    alpha: s.alpha,
                    v: s.v,
                })
                .collect(),
            history: self
                .history
                .iter()
                .map(|o| ObservationDoc {
                    alpha: o.alpha,
                    image: hex::encode(&o.bits),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("meta-state serializes")
    }

    /// Parse a meta-state document and recompute its verdict fields.
    pub fn from_doc_str(s: &str, sim: &Simulator) -> Result<Self, MetaStateParseError> {
        let doc: MetaStateDoc = serde_json::from_str(s)?;
        let env = Environment::from_doc_str(
            &serde_json::to_string(&doc.env).expect("env doc re-serializes"),
            Some(sim.scenario().track.end_zone_start),
        )?;
        if doc.trajectory.is_empty() || doc.trajectory.len() != doc.history.len() {
            return Err(MetaStateParseError::Shape(
                "trajectory and history must be non-empty and equally long".into(),
            ));
        }
        let traj = crate::sim::states_from_docs(doc.trajectory);
        let sc = sim.scenario();
        let mut history = Vec::with_capacity(doc.history.len());
        for (i, o) in doc.history.iter().enumerate() {
            let bits = hex::decode(&o.image)
                .map_err(|e| MetaStateParseError::Shape(format!("history[{i}].image: {e}")))?;
            let expect = (sc.sensor.cols * sc.sensor.rows).div_ceil(8);
            if bits.len() != expect {
                return Err(MetaStateParseError::Shape(format!(
                    "history[{i}].image holds {} bytes, expected {expect}",
                    bits.len()
                )));
            }
            history.push(Observation {
                alpha: o.alpha,
                cols: sc.sensor.cols,
                rows: sc.sensor.rows,
                bits,
            });
        }
        Ok(MetaState::from_parts(env, traj, history, sim))
    }
}

#[derive(Debug, Error)]
pub enum MetaStateParseError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed document: {0}")]
    Shape(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{perturb_elements, EnvironmentType, PerturbNoise};
    use crate::geometry::Disc;
    use crate::sim::ReferenceController;
    use rand::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Simulator, ReferenceController) {
        (
            Simulator::new(Scenario::default()),
            ReferenceController::default(),
        )
    }

    fn sample(sim: &mut Simulator, ctrl: &mut ReferenceController, seed: u64) -> MetaState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_meta_state(sim, ctrl, &mut rng).unwrap().0
    }

    /// Random mutation mix: mostly replacements (perturbation or fresh
    /// uniform), some bare additions and removals.
    fn random_mutation(env: &Environment, sc: &Scenario, rng: &mut ChaCha8Rng) -> Mutation {
        let n = env.obstacles.len();
        let kind = rng.random_range(0..10);
        if kind == 0 || n == 0 {
            let spec = sc.sample_spec();
            let fresh = crate::env::sample_env(&EnvironmentType::obstructed_track(), &spec, rng)
                .unwrap()
                .obstacles[0];
            return Mutation::add(vec![fresh]);
        }
        if kind == 1 {
            let victim = env.obstacles[rng.random_range(0..n)];
            return Mutation::subtract(vec![victim]);
        }
        let width = rng.random_range(1..=n);
        let mut subset = Vec::new();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        for &i in idx.iter().take(width) {
            subset.push(env.obstacles[i]);
        }
        if kind < 6 {
            perturb_elements(env, &subset, PerturbNoise::positional(2.0, 2.0), rng).unwrap()
        } else {
            let spec = sc.sample_spec();
            let added: Vec<Disc> = (0..width)
                .map(|_| {
                    crate::env::sample_env(&EnvironmentType::obstructed_track(), &spec, rng)
                        .unwrap()
                        .obstacles[0]
                })
                .collect();
            Mutation::replace(subset, added)
        }
    }

    #[test]
    fn incremental_equals_full_on_random_pairs() {
        let (mut sim, mut ctrl) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(7001);
        for case in 0..30 {
            let s = {
                let mut r = ChaCha8Rng::seed_from_u64(9000 + case);
                sample_meta_state(&mut sim, &mut ctrl, &mut r).unwrap().0
            };
            let sc = sim.scenario().clone();
            let m = random_mutation(&s.env, &sc, &mut rng);
            for vmode in [ValidationMode::Generic, ValidationMode::FastSector] {
                let (inc, inc_calls) =
                    meta_dynamics(&s, &m, &mut sim, &mut ctrl, SimMode::Incremental, vmode)
                        .unwrap();
                let (full, full_calls) =
                    meta_dynamics(&s, &m, &mut sim, &mut ctrl, SimMode::Full, vmode).unwrap();
                assert_eq!(inc, full, "case {case} vmode {vmode:?} mutation {m:?}");
                assert!(
                    inc_calls <= full_calls,
                    "case {case}: inc {inc_calls} > full {full_calls}"
                );
            }
        }
    }

    #[test]
    fn untouched_mutation_keeps_trajectory() {
        // Replace an obstacle with itself: nothing any observation sees
        // changes, so the incremental result reuses the whole trajectory.
        let (mut sim, mut ctrl) = setup();
        let s = sample(&mut sim, &mut ctrl, 42);
        let victim = s.env.obstacles[0];
        let m = Mutation::replace(vec![victim], vec![victim]);
        let before = sim.controller_calls();
        let (next, calls) = meta_dynamics(
            &s,
            &m,
            &mut sim,
            &mut ctrl,
            SimMode::Incremental,
            ValidationMode::Generic,
        )
        .unwrap();
        assert_eq!(next.traj, s.traj);
        assert_eq!(next.history, s.history);
        assert_eq!(next.status, s.status);
        assert_eq!(calls, 0);
        assert_eq!(sim.controller_calls(), before);
    }

    #[test]
    fn disc_over_initial_footprint_forces_full_resimulation() {
        let (mut sim, mut ctrl) = setup();
        let s = sample(&mut sim, &mut ctrl, 43);
        // A disc dead ahead of the initial pose compromises observation 0.
        let s0 = &s.traj[0];
        let d = Disc::new(s0.x + 0.8 * s0.phi.cos(), s0.y + 0.8 * s0.phi.sin(), 0.1);
        let env2 = apply_mutation(&s.env, &Mutation::add(vec![d])).unwrap();
        assert_eq!(compromise_timestamp_generic(&s, &env2, sim.scenario()), 0);
        let m = Mutation::add(vec![d]);
        assert_eq!(compromise_timestamp_fast(&s, &m, sim.scenario()), 0);
        let (inc, inc_calls) = meta_dynamics(
            &s,
            &m,
            &mut sim,
            &mut ctrl,
            SimMode::Incremental,
            ValidationMode::FastSector,
        )
        .unwrap();
        let (full, full_calls) = meta_dynamics(
            &s,
            &m,
            &mut sim,
            &mut ctrl,
            SimMode::Full,
            ValidationMode::Generic,
        )
        .unwrap();
        assert_eq!(inc, full);
        assert_eq!(inc_calls, full_calls);
    }

    #[test]
    fn unobserved_added_disc_truncates_without_controller_calls() {
        // A disc overlapping the car's tail sits behind the forward sensor
        // wedge: no observation ever changes, yet the run now collides at
        // step 0. The incremental update must truncate there instead of
        // resuming past it, and it costs nothing.
        let (mut sim, mut ctrl) = setup();
        let s = sample(&mut sim, &mut ctrl, 48);
        let s0 = &s.traj[0];
        let d = Disc::new(s0.x - 0.15 * s0.phi.cos(), s0.y - 0.15 * s0.phi.sin(), 0.1);
        let m = Mutation::add(vec![d]);
        assert_eq!(
            compromise_timestamp_fast(&s, &m, sim.scenario()),
            s.traj.len(),
            "tail disc must stay outside every sensor footprint"
        );
        let before = sim.controller_calls();
        let (inc, calls) = meta_dynamics(
            &s,
            &m,
            &mut sim,
            &mut ctrl,
            SimMode::Incremental,
            ValidationMode::FastSector,
        )
        .unwrap();
        assert_eq!(calls, 0);
        assert_eq!(sim.controller_calls(), before);
        assert_eq!(inc.traj.len(), 1);
        assert!(inc.failing());
        assert_eq!(inc.status.kind, crate::sim::FailureKind::CollisionObstacle);
        let (full, _) = meta_dynamics(
            &s,
            &m,
            &mut sim,
            &mut ctrl,
            SimMode::Full,
            ValidationMode::Generic,
        )
        .unwrap();
        assert_eq!(inc, full);
    }

    #[test]
    fn generic_timestamp_identity_and_postcondition() {
        let (mut sim, mut ctrl) = setup();
        let s = sample(&mut sim, &mut ctrl, 44);
        assert_eq!(
            compromise_timestamp_generic(&s, &s.env, sim.scenario()),
            s.traj.len()
        );

        let mut rng = ChaCha8Rng::seed_from_u64(4711);
        for _ in 0..10 {
            let sc = sim.scenario().clone();
            let m = random_mutation(&s.env, &sc, &mut rng);
            let env2 = apply_mutation(&s.env, &m).unwrap();
            let t = compromise_timestamp_generic(&s, &env2, sim.scenario());
            for i in 0..t.min(s.traj.len()) {
                assert_eq!(observe(&s.traj[i], &env2, sim.scenario()), s.history[i]);
            }
            if t < s.traj.len() {
                assert_ne!(observe(&s.traj[t], &env2, sim.scenario()), s.history[t]);
            }
        }
    }

    #[test]
    fn fast_timestamp_is_sound_and_conservative() {
        let (mut sim, mut ctrl) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(555);
        for case in 0..40 {
            let s = {
                let mut r = ChaCha8Rng::seed_from_u64(20_000 + case);
                sample_meta_state(&mut sim, &mut ctrl, &mut r).unwrap().0
            };
            let sc = sim.scenario().clone();
            let m = random_mutation(&s.env, &sc, &mut rng);
            let env2 = apply_mutation(&s.env, &m).unwrap();
            let fast = compromise_timestamp_fast(&s, &m, sim.scenario());
            let generic = compromise_timestamp_generic(&s, &env2, sim.scenario());
            assert!(fast <= generic, "fast {fast} > generic {generic}");
        }
    }

    #[test]
    fn fast_timestamp_beyond_range_is_full_length() {
        let (mut sim, mut ctrl) = setup();
        let s = sample(&mut sim, &mut ctrl, 45);
        // A disc well outside sensor range of every trajectory state.
        let far = Disc::new(1000.0, 1000.0, 0.1);
        let m = Mutation::add(vec![far]);
        assert_eq!(
            compromise_timestamp_fast(&s, &m, sim.scenario()),
            s.traj.len()
        );
    }

    #[test]
    fn generic_timestamp_detects_constructed_ray_change() {
        let (mut sim, mut ctrl) = setup();
        let s = sample(&mut sim, &mut ctrl, 46);
        let sc = sim.scenario().clone();
        // Find a step k and a disc that intersects one of k's recorded rays
        // while staying clear of the conservative footprint of every earlier
        // state, by inspecting the recorded geometry.
        let mut found = None;
        'search: for k in (3..s.traj.len().saturating_sub(1)).rev() {
            let apex = sc.sensor_pose(&s.traj[k]);
            for col in (0..sc.sensor.cols).step_by(7) {
                let bearing = sc.sensor.bearing_of_col(col as f64);
                let depth = (s.history[k].hit_row(col) as f64) * sc.sensor.bin_size();
                let dir = apex.heading + bearing;
                for tenths in 3..=17 {
                    let dist = 0.1 * f64::from(tenths);
                    if dist > depth - 0.1 {
                        break;
                    }
                    let d = Disc::new(apex.x + dist * dir.cos(), apex.y + dist * dir.sin(), 0.05);
                    let clear_before = (0..k).all(|i| {
                        let fov = SectorFOV {
                            apex: sc.sensor_pose(&s.traj[i]),
                            range: sc.sensor.range,
                            half_angle: sc.sensor.half_angle,
                        };
                        !crate::geometry::sector_intersects_disc(&fov, &d, true)
                    });
                    let changes_k = observe(
                        &s.traj[k],
                        &apply_mutation(&s.env, &Mutation::add(vec![d])).unwrap(),
                        &sc,
                    ) != s.history[k];
                    if clear_before && changes_k {
                        found = Some((k, d));
                        break 'search;
                    }
                }
            }
        }
        let (k, d) = found.expect("constructed disc exists");
        let env2 = apply_mutation(&s.env, &Mutation::add(vec![d])).unwrap();
        assert_eq!(compromise_timestamp_generic(&s, &env2, &sc), k);
    }

    #[test]
    fn sample_meta_state_is_deterministic_and_valid() {
        let (mut sim, mut ctrl) = setup();
        let a = sample(&mut sim, &mut ctrl, 99);
        let b = sample(&mut sim, &mut ctrl, 99);
        assert_eq!(a, b);
        assert!(a.verify_valid(&mut sim, &mut ctrl).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let before = sim.controller_calls();
        let (s, calls) = sample_meta_state(&mut sim, &mut ctrl, &mut rng).unwrap();
        assert_eq!(calls, (s.traj.len() - 1) as u64);
        assert_eq!(sim.controller_calls() - before, calls);
    }

    fn line_traj(points: &[(f64, f64)]) -> Vec<SystemState> {
        points
            .iter()
            .map(|&(x, y)| SystemState {
                x,
                y,
                phi: 0.0,
                alpha: 0.0,
                v: 0.0,
            })
            .collect()
    }

    #[test]
    fn traj_distance_trivial_cases() {
        let a = line_traj(&[(0.0, 0.0), (5.0, 0.0)]);
        assert_eq!(traj_distance(&a, &a), 0.0);

        let b = line_traj(&[(0.0, 0.3), (5.0, 0.3)]);
        let d = traj_distance(&a, &b);
        assert!((d - 1.5).abs() <= TRAJ_DISTANCE_DX * 0.3 + 1e-9, "{d}");

        let c = line_traj(&[(10.0, 0.0), (12.0, 0.0)]);
        assert_eq!(traj_distance(&a, &c), 0.0);
    }

    #[test]
    fn traj_distance_matches_fine_grid_oracle() {
        let (mut sim, mut ctrl) = setup();
        for seed in 0..8 {
            let a = sample(&mut sim, &mut ctrl, 300 + seed);
            let b = sample(&mut sim, &mut ctrl, 400 + seed);
            let got = traj_distance(&a.traj, &b.traj);

            // Riemann sum on a ~10^4-point grid over the same overlap.
            let span = |t: &[SystemState]| {
                t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, s| {
                    (acc.0.min(s.x), acc.1.max(s.x))
                })
            };
            let (lo_a, hi_a) = span(&a.traj);
            let (lo_b, hi_b) = span(&b.traj);
            let lo = lo_a.max(lo_b);
            let hi = hi_a.min(hi_b);
            if lo >= hi {
                assert_eq!(got, 0.0);
                continue;
            }
            let n = 10_000;
            let dx = (hi - lo) / n as f64;
            let mut oracle = 0.0;
            for j in 0..n {
                let x = lo + (j as f64 + 0.5) * dx;
                oracle += (y_at_last_visit(&a.traj, x) - y_at_last_visit(&b.traj, x)).abs() * dx;
            }
            let rel = (got - oracle).abs() / oracle.max(1e-9);
            assert!(rel < 0.01, "seed {seed}: {got} vs {oracle} ({rel})");
        }
    }

    #[test]
    fn meta_state_distance_endpoints_and_symmetry() {
        let (mut sim, mut ctrl) = setup();
        let a = sample(&mut sim, &mut ctrl, 1);
        let b = sample(&mut sim, &mut ctrl, 2);

        let d_self = meta_state_distance(&a, &a, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(d_self, 0.0);

        let env_only = meta_state_distance(&a, &b, 1.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let env_direct = env_distance(&a.env, &b.env, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(env_only, env_direct);

        let traj_only =
            meta_state_distance(&a, &b, 0.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(traj_only, traj_distance(&a.traj, &b.traj));

        let ab = meta_state_distance(&a, &b, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let ba = meta_state_distance(&b, &a, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn meta_state_doc_round_trips() {
        let (mut sim, mut ctrl) = setup();
        let s = sample(&mut sim, &mut ctrl, 77);
        let sc = sim.scenario().clone();
        let doc = s.to_doc_string(&sc);
        let back = MetaState::from_doc_str(&doc, &sim).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn meta_state_doc_rejects_malformed() {
        let (sim, _) = setup();
        assert!(MetaState::from_doc_str("{not json", &sim).is_err());
        assert!(MetaState::from_doc_str(
            r#"{"env":{"track":{"amplitude":0.8,"x_start":0.0,"x_end":15.0,"width":1.6},"obstacles":[]},"trajectory":[],"history":[]}"#,
            &sim
        )
        .is_err());
    }
}
