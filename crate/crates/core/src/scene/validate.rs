//! Scene invariant checks. Violations are data, not errors: the report
//! lists every broken invariant with a machine-readable code and never
//! mutates its input.

use super::{Scene, SceneSet, TIME_TOL};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationCode {
    TimestampOrder,
    TimestampSpacing,
    NonfiniteCoord,
    NonpositiveSize,
    EmptyTrack,
    DuplicateAgentId,
    UnknownPredictAgent,
    NonpositiveDt,
    ShortPolyline,
    UnresolvedSuccessor,
    NonpositiveResolution,
    DuplicateSceneId,
    UnknownConflictAgent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// The offending entity: agent id, lane id, or scene id.
    pub subject: String,
    pub detail: String,
}

pub type ValidationReport = Vec<Violation>;

fn push(report: &mut ValidationReport, code: ViolationCode, subject: &str, detail: String) {
    report.push(Violation { code, subject: subject.to_string(), detail });
}

/// Checks every typed invariant of a scene and returns the violations found.
pub fn validate_scene(scene: &Scene) -> ValidationReport {
    let mut report = Vec::new();

    if !(scene.native_dt > 0.0) || !scene.native_dt.is_finite() {
        push(
            &mut report,
            ViolationCode::NonpositiveDt,
            &scene.scene_id,
            format!("native_dt = {}", scene.native_dt),
        );
    }

    let mut seen = BTreeSet::new();
    for track in &scene.agents {
        if !seen.insert(track.agent_id.clone()) {
            push(
                &mut report,
                ViolationCode::DuplicateAgentId,
                &track.agent_id,
                "agent id appears more than once".into(),
            );
        }
        if track.states.is_empty() {
            push(
                &mut report,
                ViolationCode::EmptyTrack,
                &track.agent_id,
                "track has no states".into(),
            );
            continue;
        }
        for w in track.states.windows(2) {
            if w[1].t <= w[0].t {
                push(
                    &mut report,
                    ViolationCode::TimestampOrder,
                    &track.agent_id,
                    format!("t {} does not increase past {}", w[1].t, w[0].t),
                );
                break;
            }
        }
        if scene.native_dt > 0.0 {
            for w in track.states.windows(2) {
                let gap = w[1].t - w[0].t;
                if gap > 0.0 && (gap - scene.native_dt).abs() > TIME_TOL {
                    push(
                        &mut report,
                        ViolationCode::TimestampSpacing,
                        &track.agent_id,
                        format!("gap {} differs from native_dt {}", gap, scene.native_dt),
                    );
                    break;
                }
            }
        }
        for s in &track.states {
            let finite = s.t.is_finite()
                && s.x.is_finite()
                && s.y.is_finite()
                && s.heading.map_or(true, f64::is_finite)
                && s.speed.map_or(true, f64::is_finite);
            if !finite {
                push(
                    &mut report,
                    ViolationCode::NonfiniteCoord,
                    &track.agent_id,
                    format!("non-finite state at t = {}", s.t),
                );
                break;
            }
        }
        if let Some(size) = track.size {
            if !(size.length > 0.0) || !(size.width > 0.0) {
                push(
                    &mut report,
                    ViolationCode::NonpositiveSize,
                    &track.agent_id,
                    format!("size = {} x {}", size.length, size.width),
                );
            }
        }
    }

    for id in &scene.predict_agent_ids {
        if scene.agent(id).is_none() {
            push(
                &mut report,
                ViolationCode::UnknownPredictAgent,
                id,
                "predict_agent_ids names a missing agent".into(),
            );
        }
    }

    if let Some(conflict) = &scene.gap_conflict {
        for id in [&conflict.entering_id, &conflict.circulating_id] {
            if scene.agent(id).is_none() {
                push(
                    &mut report,
                    ViolationCode::UnknownConflictAgent,
                    id,
                    "gap_conflict names a missing agent".into(),
                );
            }
        }
    }

    if let Some(map) = &scene.map {
        let lane_ids: BTreeSet<_> = map.lanes.iter().map(|l| l.lane_id.as_str()).collect();
        for lane in &map.lanes {
            if lane.centerline.len() < 2 {
                push(
                    &mut report,
                    ViolationCode::ShortPolyline,
                    &lane.lane_id,
                    format!("centerline has {} points", lane.centerline.len()),
                );
            }
            for succ in &lane.successors {
                if !lane_ids.contains(succ.as_str()) {
                    push(
                        &mut report,
                        ViolationCode::UnresolvedSuccessor,
                        &lane.lane_id,
                        format!("successor {succ} not in graph"),
                    );
                }
            }
        }
        if let Some(raster) = &map.raster {
            if !(raster.resolution > 0.0) {
                push(
                    &mut report,
                    ViolationCode::NonpositiveResolution,
                    &scene.scene_id,
                    format!("resolution = {}", raster.resolution),
                );
            }
        }
    }

    report
}

/// Validates every scene plus set-level invariants (scene id uniqueness).
pub fn validate_scene_set(set: &SceneSet) -> ValidationReport {
    let mut report = Vec::new();
    let mut seen = BTreeSet::new();
    for scene in &set.scenes {
        if !seen.insert(scene.scene_id.clone()) {
            push(
                &mut report,
                ViolationCode::DuplicateSceneId,
                &scene.scene_id,
                "scene id appears more than once".into(),
            );
        }
        report.extend(validate_scene(scene));
    }
    report
}
