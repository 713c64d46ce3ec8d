//! Rigid transforms between the world frame and an agent-centric frame.

/// A reference pose: position plus heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Transforms world-frame positions into the frame where `pose` sits at the
/// origin with its heading along +x.
pub fn to_agent_frame(points: &[[f64; 2]], pose: FramePose) -> Vec<[f64; 2]> {
    let (sin, cos) = pose.heading.sin_cos();
    points
        .iter()
        .map(|p| {
            let dx = p[0] - pose.x;
            let dy = p[1] - pose.y;
            [cos * dx + sin * dy, -sin * dx + cos * dy]
        })
        .collect()
}

/// Inverse of [`to_agent_frame`].
pub fn from_agent_frame(points: &[[f64; 2]], pose: FramePose) -> Vec<[f64; 2]> {
    let (sin, cos) = pose.heading.sin_cos();
    points
        .iter()
        .map(|p| [pose.x + cos * p[0] - sin * p[1], pose.y + sin * p[0] + cos * p[1]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    #[test]
    fn identity_pose() {
        let pts = vec![[1.0, 2.0], [-3.0, 0.5]];
        let out = to_agent_frame(&pts, FramePose { x: 0.0, y: 0.0, heading: 0.0 });
        assert_eq!(out, pts);
    }

    #[test]
    fn quarter_turn() {
        let out = to_agent_frame(
            &[[1.0, 0.0]],
            FramePose { x: 0.0, y: 0.0, heading: std::f64::consts::FRAC_PI_2 },
        );
        assert!((out[0][0] - 0.0).abs() < 1e-12);
        assert!((out[0][1] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn round_trip_and_isometry() {
        let mut rng = DetRng::new(11);
        for _ in 0..50 {
            let pose = FramePose {
                x: rng.uniform_in(-100.0, 100.0),
                y: rng.uniform_in(-100.0, 100.0),
                heading: rng.uniform_in(-4.0, 4.0),
            };
            let pts: Vec<[f64; 2]> = (0..20)
                .map(|_| [rng.uniform_in(-50.0, 50.0), rng.uniform_in(-50.0, 50.0)])
                .collect();
            let local = to_agent_frame(&pts, pose);
            let back = from_agent_frame(&local, pose);
            for (a, b) in pts.iter().zip(&back) {
                assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
            }
            // pairwise distances preserved
            for i in 0..pts.len() {
                for j in (i + 1)..pts.len() {
                    let dw = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2))
                        .sqrt();
                    let dl = ((local[i][0] - local[j][0]).powi(2)
                        + (local[i][1] - local[j][1]).powi(2))
                    .sqrt();
                    assert!((dw - dl).abs() < 1e-9);
                }
            }
        }
    }
}
