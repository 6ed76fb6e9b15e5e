//! Replay: re-simulate a saved scene or meta-state deterministically, check
//! recorded trajectories against the replay, and render the run as an SVG
//! picture (track band, shoulders, end zone, obstacles, trajectory, car and
//! sensor wedge at a chosen step).

use crate::env::{Environment, Scene};
use crate::meta::MetaState;
use crate::sim::{ReferenceController, Scenario, Simulator, StatusReport, SystemState};

use super::HarnessError;

/// What replay produced: the verdict, the trajectory, and the picture.
#[derive(Debug)]
pub struct ReplayOutput {
    pub status: StatusReport,
    pub traj: Vec<SystemState>,
    pub svg: String,
}

/// Parse a scene, bare environment, or meta-state document; re-simulate
/// with the built-in controller; verify recorded trajectories replay
/// bit-exactly; render.
pub fn replay(
    text: &str,
    scenario: &Scenario,
    fov_step: Option<usize>,
) -> Result<ReplayOutput, HarnessError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| {
        HarnessError::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    let mut sim = Simulator::new(scenario.clone());
    let mut controller = ReferenceController::default();

    let (env, initial, recorded) = if value.get("trajectory").is_some() {
        let meta =
            MetaState::from_doc_str(text, &sim).map_err(|e| HarnessError::Parse(e.to_string()))?;
        (meta.env.clone(), meta.traj[0], Some(meta))
    } else if let Some(env_value) = value.get("env") {
        let env = Environment::from_doc_str(
            &serde_json::to_string(env_value).expect("value re-serializes"),
            Some(scenario.track.end_zone_start),
        )
        .map_err(|e| HarnessError::Parse(format!("env: {e}")))?;
        let initial = match value.get("initial_state") {
            Some(s) => serde_json::from_value::<StateFields>(s.clone())
                .map_err(|e| HarnessError::Parse(format!("initial_state: {e}")))?
                .into(),
            None => scenario.initial_state(),
        };
        (env, initial, None)
    } else if value.get("track").is_some() {
        let env = Environment::from_doc_str(text, Some(scenario.track.end_zone_start))
            .map_err(|e| HarnessError::Parse(format!("env: {e}")))?;
        (env, scenario.initial_state(), None)
    } else {
        return Err(HarnessError::Parse(
            "expected a scene ({env, initial_state?}), an environment ({track, obstacles}), \
             or a meta-state ({env, trajectory, history}) document"
                .into(),
        ));
    };

    let scene = Scene::new(env, initial).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let out = sim
        .simulate(&scene, &mut controller, scenario.horizon)
        .map_err(crate::meta::MetaError::from)?;

    if let Some(meta) = recorded {
        if out.traj != meta.traj || out.history != meta.history {
            return Err(HarnessError::Validity(
                "recorded trajectory does not replay identically under this scenario".into(),
            ));
        }
    }

    let step = fov_step
        .unwrap_or(out.status.terminal_step)
        .min(out.traj.len() - 1);
    let svg = render_svg(&scene.env, &out.traj, scenario, step, &out.status);
    Ok(ReplayOutput {
        status: out.status,
        traj: out.traj,
        svg,
    })
}

#[derive(serde::Deserialize)]
struct StateFields {
    x: f64,
    y: f64,
    phi: f64,
    #[serde(default)]
    alpha: f64,
    #[serde(default)]
    v: f64,
}

impl From<StateFields> for SystemState {
    fn from(s: StateFields) -> Self {
        SystemState {
            x: s.x,
            y: s.y,
            phi: s.phi,
            alpha: s.alpha,
            v: s.v,
        }
    }
}

const SCALE: f64 = 60.0;

/// Vector picture of a run. The y axis is flipped into screen coordinates.
pub fn render_svg(
    env: &Environment,
    traj: &[SystemState],
    sc: &Scenario,
    fov_step: usize,
    status: &StatusReport,
) -> String {
    let track = &env.track;
    let pad = 0.6;
    let y_amp = track.amplitude.abs() + track.half_width + pad;
    let x0 = track.x_start - pad;
    let x1 = track.x_end + pad;
    let width = (x1 - x0) * SCALE;
    let height = 2.0 * y_amp * SCALE;
    let px = |x: f64| (x - x0) * SCALE;
    let py = |y: f64| (y_amp - y) * SCALE;

    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{h:.0}" viewBox="0 0 {width:.0} {h:.0}">"#,
        h = height + 24.0
    );
    svg.push_str(r##"<rect width="100%" height="100%" fill="#f4efe8"/>"##);

    // Drivable band as a closed polygon between the two boundary curves.
    let n = 400;
    let band_points = |sign: f64, rev: bool| -> String {
        let mut pts: Vec<String> = (0..=n)
            .map(|i| {
                let x = track.x_start + (track.x_end - track.x_start) * f64::from(i) / f64::from(n);
                let y = track.centerline_y(x) + sign * track.half_width;
                format!("{:.2},{:.2}", px(x), py(y))
            })
            .collect();
        if rev {
            pts.reverse();
        }
        pts.join(" ")
    };
    svg.push_str(&format!(
        r##"<polygon points="{} {}" fill="#d8d8d8" stroke="none"/>"##,
        band_points(1.0, false),
        band_points(-1.0, true)
    ));

    // End zone shading.
    let ez = track.end_zone_start;
    let m = 80;
    let mut ez_pts: Vec<String> = (0..=m)
        .map(|i| {
            let x = ez + (track.x_end - ez) * f64::from(i) / f64::from(m);
            format!(
                "{:.2},{:.2}",
                px(x),
                py(track.centerline_y(x) + track.half_width)
            )
        })
        .collect();
    ez_pts.extend((0..=m).rev().map(|i| {
        let x = ez + (track.x_end - ez) * f64::from(i) / f64::from(m);
        format!(
            "{:.2},{:.2}",
            px(x),
            py(track.centerline_y(x) - track.half_width)
        )
    }));
    svg.push_str(&format!(
        r##"<polygon points="{}" fill="#b9dcb1" stroke="none"/>"##,
        ez_pts.join(" ")
    ));

    // Shoulder boundary lines.
    for sign in [1.0, -1.0] {
        svg.push_str(&format!(
            r##"<polyline points="{}" fill="none" stroke="#5a5a5a" stroke-width="2"/>"##,
            band_points(sign, false)
        ));
    }

    // Obstacles.
    for d in &env.obstacles {
        svg.push_str(&format!(
            r##"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="#a0622d" stroke="#6b3d14" stroke-width="1"/>"##,
            px(d.cx),
            py(d.cy),
            d.r * SCALE
        ));
    }

    // Sensor wedge at the chosen step.
    if let Some(state) = traj.get(fov_step) {
        let apex = sc.sensor_pose(state);
        let a0 = apex.heading - sc.sensor.half_angle;
        let a1 = apex.heading + sc.sensor.half_angle;
        let r = sc.sensor.range * SCALE;
        let large = i32::from(sc.sensor.half_angle > std::f64::consts::FRAC_PI_2);
        svg.push_str(&format!(
            r##"<path d="M {ax:.2} {ay:.2} L {x0:.2} {y0:.2} A {r:.2} {r:.2} 0 {large} 0 {x1:.2} {y1:.2} Z" fill="#f2d26b" fill-opacity="0.35" stroke="#c9a227" stroke-width="1"/>"##,
            ax = px(apex.x),
            ay = py(apex.y),
            x0 = px(apex.x + sc.sensor.range * a0.cos()),
            y0 = py(apex.y + sc.sensor.range * a0.sin()),
            x1 = px(apex.x + sc.sensor.range * a1.cos()),
            y1 = py(apex.y + sc.sensor.range * a1.sin()),
        ));
    }

    // Trajectory polyline.
    let traj_pts: Vec<String> = traj
        .iter()
        .map(|s| format!("{:.2},{:.2}", px(s.x), py(s.y)))
        .collect();
    svg.push_str(&format!(
        r##"<polyline points="{}" fill="none" stroke="#2e7d32" stroke-width="2.5"/>"##,
        traj_pts.join(" ")
    ));

    // Car body at the chosen step.
    if let Some(state) = traj.get(fov_step) {
        let rect = sc.car_shape(state);
        let pts: Vec<String> = rect
            .corners()
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        svg.push_str(&format!(
            r##"<polygon points="{}" fill="#1962a8" stroke="#0c3154" stroke-width="1"/>"##,
            pts.join(" ")
        ));
    }

    svg.push_str(&format!(
        r##"<text x="8" y="{:.0}" font-family="monospace" font-size="14" fill="#222">status={} kind={} terminal_step={}</text>"##,
        height + 17.0,
        status.status(),
        status.kind,
        status.terminal_step
    ));
    svg.push_str("</svg>\n");
    svg
}
