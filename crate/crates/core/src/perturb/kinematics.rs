//! Unicycle kinematics: forward Euler rollout and its exact inverse over
//! recorded positions. The control parametrization needs no wheelbase and
//! suffices for budgeted trajectory perturbations.

use super::PerturbError;
use crate::scene::wrap_angle;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub accel: f64,
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub initial: InitialState,
    pub controls: Vec<Control>,
    pub dt: f64,
}

/// One integration state of the forward rollout.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RollState {
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    /// Speed update hit the non-negativity clamp at this step.
    pub clamped: bool,
}

/// Explicit Euler integration: heading += yaw_rate*dt, speed += accel*dt
/// (clamped at zero), position += speed*(cos heading, sin heading)*dt.
/// Returns the position after every step.
pub fn kinematic_rollout(cs: &ControlSequence) -> Vec<[f64; 2]> {
    rollout_states(cs).into_iter().map(|s| s.position).collect()
}

pub(crate) fn rollout_states(cs: &ControlSequence) -> Vec<RollState> {
    let mut heading = cs.initial.heading;
    let mut speed = cs.initial.speed;
    let mut position = [cs.initial.x, cs.initial.y];
    let mut out = Vec::with_capacity(cs.controls.len());
    for c in &cs.controls {
        heading += c.yaw_rate * cs.dt;
        let raw = speed + c.accel * cs.dt;
        let clamped = raw < 0.0;
        speed = raw.max(0.0);
        position = [
            position[0] + speed * heading.cos() * cs.dt,
            position[1] + speed * heading.sin() * cs.dt,
        ];
        out.push(RollState { position, heading, speed, clamped });
    }
    out
}

/// Inverse of [`kinematic_rollout`] over recorded positions: chord lengths
/// give speeds, chord directions give headings. Exact for trajectories the
/// unicycle model can produce; stationary sub-steps keep the previous
/// heading. A trajectory with total path length below 1e-6 m is degenerate.
pub fn recover_controls(
    positions: &[[f64; 2]],
    dt: f64,
    fallback_heading: f64,
) -> Result<ControlSequence, PerturbError> {
    if positions.len() < 3 {
        return Err(PerturbError::Degenerate(format!(
            "need >= 3 positions, got {}",
            positions.len()
        )));
    }
    assert!(dt > 0.0, "dt must be positive");
    let path_length: f64 = positions
        .windows(2)
        .map(|w| f64::hypot(w[1][0] - w[0][0], w[1][1] - w[0][1]))
        .sum();
    if path_length < 1e-6 {
        return Err(PerturbError::Degenerate(
            "stationary agent: total path below 1e-6 m".into(),
        ));
    }
    // per-chord speed and heading; zero chords inherit the last heading
    let n = positions.len();
    let mut speeds = Vec::with_capacity(n - 1);
    let mut headings = Vec::with_capacity(n - 1);
    let mut last_heading = fallback_heading;
    for w in positions.windows(2) {
        let dx = w[1][0] - w[0][0];
        let dy = w[1][1] - w[0][1];
        let len = f64::hypot(dx, dy);
        speeds.push(len / dt);
        if len > 1e-12 {
            last_heading = dy.atan2(dx);
        }
        headings.push(last_heading);
    }
    // first chord sets the initial state so its own controls are zero
    let initial = InitialState {
        x: positions[0][0],
        y: positions[0][1],
        heading: headings[0],
        speed: speeds[0],
    };
    let mut controls = Vec::with_capacity(n - 1);
    let mut prev_speed = initial.speed;
    let mut prev_heading = initial.heading;
    for k in 0..n - 1 {
        controls.push(Control {
            accel: (speeds[k] - prev_speed) / dt,
            yaw_rate: wrap_angle(headings[k] - prev_heading) / dt,
        });
        prev_speed = speeds[k];
        prev_heading = headings[k];
    }
    Ok(ControlSequence { initial, controls, dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn constant_velocity_rollout() {
        let cs = ControlSequence {
            initial: InitialState { x: 0.0, y: 0.0, heading: 0.0, speed: 2.0 },
            controls: vec![Control { accel: 0.0, yaw_rate: 0.0 }; 3],
            dt: 0.5,
        };
        let pts = kinematic_rollout(&cs);
        for (k, p) in pts.iter().enumerate() {
            assert!((p[0] - (k + 1) as f64).abs() < 1e-12);
            assert!(p[1].abs() < 1e-12);
        }
    }

    #[test]
    fn zero_speed_zero_controls_is_stationary() {
        let cs = ControlSequence {
            initial: InitialState { x: 3.0, y: -1.0, heading: 0.7, speed: 0.0 },
            controls: vec![Control { accel: 0.0, yaw_rate: 0.0 }; 5],
            dt: 0.25,
        };
        for p in kinematic_rollout(&cs) {
            assert_eq!(p, [3.0, -1.0]);
        }
    }

    #[test]
    fn constant_yaw_rate_traces_a_circle() {
        // closed form: radius v/omega; Euler discretization error shrinks
        // with dt, measured against the exact circle center
        let (v, omega) = (5.0, 0.4);
        let radius = v / omega;
        for (dt, tol) in [(0.1, 0.35), (0.01, 0.035)] {
            let steps = (2.0 * std::f64::consts::PI / (omega * dt)) as usize;
            let cs = ControlSequence {
                initial: InitialState { x: 0.0, y: 0.0, heading: 0.0, speed: v },
                controls: vec![Control { accel: 0.0, yaw_rate: omega }; steps],
                dt,
            };
            // exact trajectory starts at (0,0) heading +x: center (0, R)
            for p in kinematic_rollout(&cs) {
                let r = f64::hypot(p[0], p[1] - radius);
                assert!((r - radius).abs() < tol, "dt={dt}: radius {r} vs {radius}");
            }
        }
    }

    #[test]
    fn straight_track_recovers_zero_controls() {
        let positions: Vec<[f64; 2]> = (0..10).map(|k| [k as f64 * 0.5, 2.0]).collect();
        let cs = recover_controls(&positions, 0.5, 0.0).unwrap();
        assert!((cs.initial.speed - 1.0).abs() < 1e-12);
        for c in &cs.controls {
            assert!(c.accel.abs() < 1e-9, "accel {}", c.accel);
            assert!(c.yaw_rate.abs() < 1e-9, "yaw {}", c.yaw_rate);
        }
    }

    #[test]
    fn circular_arc_recovers_yaw_rate_v_over_r() {
        let (v, radius, dt) = (6.0, 20.0, 0.1);
        let omega = v / radius;
        let positions: Vec<[f64; 2]> = (0..40)
            .map(|k| {
                let ang = omega * k as f64 * dt;
                [radius * ang.sin(), radius * (1.0 - ang.cos())]
            })
            .collect();
        let cs = recover_controls(&positions, dt, 0.0).unwrap();
        // chord directions rotate by exactly omega*dt per step
        for c in &cs.controls[1..] {
            assert!((c.yaw_rate - omega).abs() < 1e-6, "yaw {} vs {omega}", c.yaw_rate);
        }
    }

    #[test]
    fn rollout_recover_rollout_round_trip() {
        let mut rng = DetRng::new(17);
        for case in 0..30 {
            let dt = 0.25;
            let steps = 12;
            let cs = ControlSequence {
                initial: InitialState {
                    x: rng.uniform_in(-20.0, 20.0),
                    y: rng.uniform_in(-20.0, 20.0),
                    heading: rng.uniform_in(-3.0, 3.0),
                    speed: rng.uniform_in(0.5, 10.0),
                },
                controls: (0..steps)
                    .map(|_| Control {
                        accel: rng.uniform_in(-2.0, 2.0),
                        yaw_rate: rng.uniform_in(-0.5, 0.5),
                    })
                    .collect(),
                dt,
            };
            let mut positions = vec![[cs.initial.x, cs.initial.y]];
            positions.extend(kinematic_rollout(&cs));
            let recovered = recover_controls(&positions, dt, 0.0).unwrap();
            let mut again = vec![[recovered.initial.x, recovered.initial.y]];
            again.extend(kinematic_rollout(&recovered));
            for (a, b) in positions.iter().zip(&again) {
                let d = f64::hypot(a[0] - b[0], a[1] - b[1]);
                assert!(d < 1e-6, "case {case}: deviation {d}");
            }
        }
    }

    #[test]
    fn stationary_track_is_degenerate() {
        let positions = vec![[1.0, 1.0]; 8];
        let err = recover_controls(&positions, 0.25, 0.3).unwrap_err();
        assert!(matches!(err, PerturbError::Degenerate(_)));
    }
}
