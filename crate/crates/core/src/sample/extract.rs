//! Prediction-time selection and single-sample extraction.

use super::{Sample, SampleAgent, SampleError, SampleId};
use crate::ingest::{classify_gap_trajectories, GapOutcome, TimedPosition};
use crate::scene::{resample_track, DataParams, Scene, T0Policy, TIME_TOL};

/// The feasible prediction-time window of a scene: every predicted agent
/// covers the full past before `t0` and the full future after it.
fn feasible_window(scene: &Scene, params: &DataParams) -> Option<(f64, f64)> {
    if scene.predict_agent_ids.is_empty() {
        return None;
    }
    let start = scene.latest_start(&scene.predict_agent_ids)?;
    let end = scene.earliest_end(&scene.predict_agent_ids)?;
    let first = start + params.input_horizon();
    let last = end - params.output_horizon();
    (first <= last + TIME_TOL).then_some((first, last))
}

/// Selects prediction times per the configured policy. Every returned `t0`
/// admits a complete sample; an empty list means no `t0` qualifies.
///
/// The selected times depend only on the observation and prediction
/// horizons, not on the timestep, so parameter settings sharing the same
/// horizons select identical scenarios.
pub fn select_prediction_times(scene: &Scene, params: &DataParams) -> Vec<f64> {
    let Some((first, last)) = feasible_window(scene, params) else {
        return Vec::new();
    };
    match params.t0_policy {
        T0Policy::FirstAvailable => vec![first],
        T0Policy::BehaviorAnchored { lead } => match scene.anchor_t {
            Some(anchor) => {
                let t0 = anchor - lead;
                (t0 >= first - TIME_TOL && t0 <= last + TIME_TOL)
                    .then_some(t0)
                    .into_iter()
                    .collect()
            }
            None => Vec::new(),
        },
        T0Policy::RegularSpacing { gap } => {
            let count = ((last - first + TIME_TOL) / gap).floor() as usize + 1;
            (0..count).map(|m| first + m as f64 * gap).collect()
        }
    }
}

/// Extracts one sample at `t0`: past and future are built by resampling
/// each track on the grid anchored at `t0`. Non-predicted agents may be
/// partially observed (masked); predicted agents must cover every step.
pub fn extract_sample(scene: &Scene, t0: f64, params: &DataParams) -> Result<Sample, SampleError> {
    params.validate().map_err(SampleError::InvalidParams)?;
    let n_in = params.n_input;
    let n_out = params.n_output;
    let mut agents = Vec::with_capacity(scene.agents.len());
    for track in &scene.agents {
        let predicted = scene.predict_agent_ids.contains(&track.agent_id);
        let mut past = vec![[0.0; 2]; n_in];
        let mut future = vec![[0.0; 2]; n_out];
        let mut past_mask = vec![false; n_in];
        let mut future_mask = vec![false; n_out];
        if let Ok(resampled) = resample_track(track, params.dt, t0) {
            for state in &resampled.states {
                let k = ((state.t - t0) / params.dt).round() as i64;
                if ((state.t - t0) - k as f64 * params.dt).abs() > 10.0 * TIME_TOL {
                    continue;
                }
                if k <= 0 {
                    let j = k + (n_in as i64 - 1);
                    if (0..n_in as i64).contains(&j) {
                        past[j as usize] = [state.x, state.y];
                        past_mask[j as usize] = true;
                    }
                } else {
                    let j = k - 1;
                    if (0..n_out as i64).contains(&j) {
                        future[j as usize] = [state.x, state.y];
                        future_mask[j as usize] = true;
                    }
                }
            }
        }
        if predicted && !(past_mask.iter().all(|&m| m) && future_mask.iter().all(|&m| m)) {
            return Err(SampleError::InsufficientCoverage {
                agent_id: track.agent_id.clone(),
                t0,
            });
        }
        agents.push(SampleAgent {
            agent_id: track.agent_id.clone(),
            agent_type: track.agent_type,
            size: track.size,
            predicted,
            past,
            future,
            past_mask,
            future_mask,
        });
    }

    let mut sample = Sample {
        sample_id: SampleId::new(&scene.dataset_id, &scene.scene_id, t0),
        location_id: scene.location_id.clone(),
        t0,
        agents,
        behavior_label: None,
        gap_conflict: scene.gap_conflict.clone(),
        labels: scene.labels.clone(),
    };
    sample.behavior_label = ground_truth_behavior(&sample, params);
    Ok(sample)
}

/// Classifies the sample's ground-truth future window. Both agents of the
/// conflict are taken from the sample at the sample rate, futures only, so
/// the truth label is defined on exactly the window predictions cover.
pub fn ground_truth_behavior(
    sample: &Sample,
    params: &DataParams,
) -> Option<crate::ingest::BehaviorClass> {
    let conflict = sample.gap_conflict.as_ref()?;
    let entering = sample.agent(&conflict.entering_id)?;
    let circulating = sample.agent(&conflict.circulating_id)?;
    let timed = |agent: &SampleAgent| -> Option<Vec<TimedPosition>> {
        agent
            .future_mask
            .iter()
            .all(|&m| m)
            .then(|| {
                agent
                    .future
                    .iter()
                    .enumerate()
                    .map(|(j, p)| TimedPosition {
                        t: sample.t0 + (j as f64 + 1.0) * params.dt,
                        p: *p,
                    })
                    .collect()
            })
    };
    let outcome = classify_gap_trajectories(conflict, &timed(entering)?, &timed(circulating)?);
    match outcome {
        GapOutcome::Classified(c) => Some(c),
        GapOutcome::Undecided => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentState, AgentTrack, AgentType, DataParams, Scene, T0Policy};

    fn linear_scene(duration: f64, native_dt: f64) -> Scene {
        let n = (duration / native_dt).floor() as usize + 1;
        let track = |id: &str, speed: f64, y: f64, skip: usize| AgentTrack {
            agent_id: id.into(),
            agent_type: AgentType::Vehicle,
            size: None,
            states: (skip..n)
                .map(|k| AgentState {
                    t: k as f64 * native_dt,
                    x: speed * (k as f64 * native_dt),
                    y,
                    heading: Some(0.0),
                    speed: Some(speed),
                })
                .collect(),
        };
        Scene {
            scene_id: "s".into(),
            dataset_id: "d".into(),
            location_id: "loc".into(),
            native_dt,
            agents: vec![track("a", 1.0, 0.0, 0), track("b", 2.0, 3.5, 8)],
            map: None,
            predict_agent_ids: vec!["a".into()],
            gap_conflict: None,
            anchor_t: None,
            labels: Default::default(),
        }
    }

    #[test]
    fn regular_spacing_grid_matches_arithmetic() {
        // 10 s scene, T_I = 4.5 s, T_O = 1.5 s, gap 1 s -> {4.5..8.5}
        let scene = linear_scene(10.0, 0.25);
        let params = DataParams::from_horizons(4.5, 1.5, 0.5, T0Policy::RegularSpacing { gap: 1.0 });
        assert_eq!(params.n_input, 10);
        assert_eq!(params.n_output, 3);
        let times = select_prediction_times(&scene, &params);
        let expected = [4.5, 5.5, 6.5, 7.5, 8.5];
        assert_eq!(times.len(), expected.len());
        for (t, e) in times.iter().zip(expected) {
            assert!((t - e).abs() < 1e-9, "{t} vs {e}");
        }
        // cross-check: exhaustive scan over a fine grid of candidate t0
        let fine: Vec<f64> = (0..2000)
            .map(|k| k as f64 * 0.005)
            .filter(|&t0| {
                let m = (t0 - 4.5) / 1.0;
                (m - m.round()).abs() < 1e-9
                    && m.round() >= 0.0
                    && extract_sample(&scene, t0, &params).is_ok()
            })
            .collect();
        assert_eq!(fine.len(), expected.len());
    }

    #[test]
    fn short_scene_yields_nothing() {
        let scene = linear_scene(4.0, 0.25);
        let params = DataParams::from_horizons(4.5, 1.5, 0.5, T0Policy::FirstAvailable);
        assert!(select_prediction_times(&scene, &params).is_empty());
    }

    #[test]
    fn first_available_is_input_horizon_on_full_coverage() {
        let scene = linear_scene(10.0, 0.25);
        let params = DataParams::from_horizons(4.5, 1.5, 0.5, T0Policy::FirstAvailable);
        let times = select_prediction_times(&scene, &params);
        assert_eq!(times.len(), 1);
        assert!((times[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn extract_linear_past_and_future() {
        let scene = linear_scene(10.0, 0.25);
        let params = DataParams::new(4, 3, 0.5, T0Policy::FirstAvailable);
        let sample = extract_sample(&scene, 2.0, &params).unwrap();
        let a = sample.agent("a").unwrap();
        for (j, expected) in [0.5, 1.0, 1.5, 2.0].iter().enumerate() {
            assert!((a.past[j][0] - expected).abs() < 1e-9, "past[{j}]");
            assert!(a.past_mask[j]);
        }
        for (j, expected) in [2.5, 3.0, 3.5].iter().enumerate() {
            assert!((a.future[j][0] - expected).abs() < 1e-9, "future[{j}]");
            assert!(a.future_mask[j]);
        }
    }

    #[test]
    fn bystander_gets_masked_not_failed() {
        let scene = linear_scene(10.0, 0.25);
        // agent b starts at t = 2.0; a t0 of 2.5 with T_I = 2.0 needs past
        // from 0.5 onward, so b misses early steps
        let params = DataParams::new(5, 2, 0.5, T0Policy::FirstAvailable);
        let sample = extract_sample(&scene, 2.5, &params).unwrap();
        let b = sample.agent("b").unwrap();
        assert!(!b.predicted);
        assert_eq!(b.past_mask, vec![false, false, false, true, true]);
        let a = sample.agent("a").unwrap();
        assert!(a.fully_observed());
    }

    #[test]
    fn predicted_agent_without_coverage_errors() {
        let mut scene = linear_scene(10.0, 0.25);
        scene.predict_agent_ids = vec!["a".into(), "b".into()];
        let params = DataParams::new(5, 2, 0.5, T0Policy::FirstAvailable);
        let err = extract_sample(&scene, 2.5, &params).unwrap_err();
        assert!(matches!(err, SampleError::InsufficientCoverage { ref agent_id, .. } if agent_id == "b"));
    }

    #[test]
    fn behavior_anchored_uses_anchor_minus_lead() {
        let mut scene = linear_scene(10.0, 0.25);
        scene.anchor_t = Some(6.0);
        let params = DataParams::from_horizons(1.5, 1.0, 0.5, T0Policy::BehaviorAnchored { lead: 0.5 });
        let times = select_prediction_times(&scene, &params);
        assert_eq!(times.len(), 1);
        assert!((times[0] - 5.5).abs() < 1e-12);
    }
}
