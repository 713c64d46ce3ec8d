//! Gap-acceptance classification: does the entering agent cross the
//! conflict point before the circulating agent reaches it?

use super::BehaviorClass;
use crate::scene::{GapConflict, Scene};

pub const GAP_FAMILY: &str = "gap_acceptance";
pub const GAP_ACCEPTED: &str = "accepted";
pub const GAP_REJECTED: &str = "rejected";

/// A position with its timestamp, the minimal trajectory form accepted by
/// behavior classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPosition {
    pub t: f64,
    pub p: [f64; 2],
}

/// Classification outcome. `Undecided` means neither agent reaches the
/// conflict point within the trajectory span; callers treat such samples as
/// unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub enum GapOutcome {
    Classified(BehaviorClass),
    Undecided,
}

impl GapOutcome {
    pub fn class(&self) -> Option<&BehaviorClass> {
        match self {
            GapOutcome::Classified(c) => Some(c),
            GapOutcome::Undecided => None,
        }
    }
}

/// Time at which the signed projection of the trajectory onto `dir` (about
/// `point`) first becomes non-negative, interpolating linearly between
/// steps. `None` if the trajectory never reaches the line.
fn crossing_time(traj: &[TimedPosition], point: [f64; 2], dir: [f64; 2]) -> Option<f64> {
    let proj = |p: [f64; 2]| (p[0] - point[0]) * dir[0] + (p[1] - point[1]) * dir[1];
    let mut prev: Option<(f64, f64)> = None;
    for tp in traj {
        let s = proj(tp.p);
        if s >= 0.0 {
            return Some(match prev {
                Some((pt, ps)) if ps < 0.0 && s > ps => {
                    pt + (0.0 - ps) / (s - ps) * (tp.t - pt)
                }
                _ => tp.t,
            });
        }
        prev = Some((tp.t, s));
    }
    None
}

/// Pure classification from the two trajectories and the conflict geometry:
/// accepted iff the entering agent crosses strictly before the circulating
/// agent reaches the conflict point.
pub fn classify_gap_trajectories(
    conflict: &GapConflict,
    entering: &[TimedPosition],
    circulating: &[TimedPosition],
) -> GapOutcome {
    let t_enter = crossing_time(entering, conflict.point, conflict.entry_dir);
    let t_circ = crossing_time(circulating, conflict.point, conflict.circulating_dir);
    match (t_enter, t_circ) {
        (Some(te), Some(tc)) if te < tc => GapOutcome::Classified(BehaviorClass::gap_accepted()),
        (Some(_), Some(_)) => GapOutcome::Classified(BehaviorClass::gap_rejected()),
        (Some(_), None) => GapOutcome::Classified(BehaviorClass::gap_accepted()),
        (None, Some(_)) => GapOutcome::Classified(BehaviorClass::gap_rejected()),
        (None, None) => GapOutcome::Undecided,
    }
}

/// Classifies an arbitrary entering-agent trajectory against the circulating
/// agent's recorded track. The scene must carry conflict geometry tagged by
/// its adapter.
pub fn classify_behavior_gap(
    scene: &Scene,
    entering_trajectory: &[TimedPosition],
    circulating_id: &str,
) -> Option<GapOutcome> {
    let conflict = scene.gap_conflict.as_ref()?;
    let track = scene.agent(circulating_id)?;
    let circulating: Vec<TimedPosition> =
        track.states.iter().map(|s| TimedPosition { t: s.t, p: [s.x, s.y] }).collect();
    Some(classify_gap_trajectories(conflict, entering_trajectory, &circulating))
}
