//! Track resampling onto an anchored time grid.

use super::{AgentState, AgentTrack, SceneError, TIME_TOL};

/// Resamples a track to timestamps `anchor_t + k * target_dt` for every
/// integer `k` whose timestamp falls inside the recorded span. Positions are
/// linearly interpolated between the enclosing native states, headings on
/// the circle; the track is never extrapolated. Grid points that coincide
/// with a native state (within [`TIME_TOL`]) reproduce that state verbatim.
pub fn resample_track(
    track: &AgentTrack,
    target_dt: f64,
    anchor_t: f64,
) -> Result<AgentTrack, SceneError> {
    assert!(target_dt > 0.0, "target_dt must be positive");
    if track.states.is_empty() {
        return Err(SceneError::EmptyRange);
    }
    let (start, end) = (track.start_t(), track.end_t());
    let k_min = ((start - anchor_t) / target_dt - TIME_TOL / target_dt).ceil() as i64;
    let k_max = ((end - anchor_t) / target_dt + TIME_TOL / target_dt).floor() as i64;
    if k_min > k_max {
        return Err(SceneError::EmptyRange);
    }
    let mut states = Vec::with_capacity((k_max - k_min + 1) as usize);
    for k in k_min..=k_max {
        let t = anchor_t + k as f64 * target_dt;
        let state = track
            .state_at(t)
            .expect("grid point inside span by construction");
        states.push(AgentState { ..state });
    }
    Ok(AgentTrack {
        agent_id: track.agent_id.clone(),
        agent_type: track.agent_type,
        size: track.size,
        states,
    })
}
