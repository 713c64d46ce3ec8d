//! Displacement metrics over k-sample prediction sets.
//!
//! Marginal metrics take the minimum over joint samples per agent; joint
//! metrics reduce over agents first (mean, so scenes of different agent
//! counts stay comparable) and then take the minimum over joint samples.
//! Only predicted agents enter, never mask-padded bystanders.

use super::MetricsError;
use crate::model::SamplePrediction;
use crate::sample::Sample;

fn check_shapes(entry: &SamplePrediction, sample: &Sample) -> Result<(), MetricsError> {
    if entry.joint_samples.is_empty() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}: prediction has no trajectory samples",
            entry.sample_id
        )));
    }
    for js in &entry.joint_samples {
        if js.trajectories.len() != entry.agent_ids.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "{}: {} trajectories for {} agents",
                entry.sample_id,
                js.trajectories.len(),
                entry.agent_ids.len()
            )));
        }
    }
    for id in &entry.agent_ids {
        let agent = sample.agent(id).ok_or_else(|| {
            MetricsError::ShapeMismatch(format!("{}: agent {id} missing", entry.sample_id))
        })?;
        for js in &entry.joint_samples {
            let a = entry.agent_ids.iter().position(|x| x == id).unwrap();
            if js.trajectories[a].len() != agent.future.len() {
                return Err(MetricsError::ShapeMismatch(format!(
                    "{}: trajectory length {} vs future length {}",
                    entry.sample_id,
                    js.trajectories[a].len(),
                    agent.future.len()
                )));
            }
        }
    }
    Ok(())
}

fn ade(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
    let n = pred.len();
    pred.iter()
        .zip(truth)
        .map(|(p, y)| f64::hypot(p[0] - y[0], p[1] - y[1]))
        .sum::<f64>()
        / n as f64
}

fn fde(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
    let p = pred.last().expect("non-empty trajectory");
    let y = truth.last().expect("non-empty future");
    f64::hypot(p[0] - y[0], p[1] - y[1])
}

fn per_agent_min(
    entry: &SamplePrediction,
    sample: &Sample,
    measure: impl Fn(&[[f64; 2]], &[[f64; 2]]) -> f64,
) -> Result<Vec<(String, f64)>, MetricsError> {
    check_shapes(entry, sample)?;
    entry
        .agent_ids
        .iter()
        .enumerate()
        .map(|(a, id)| {
            let truth = &sample.agent(id).unwrap().future;
            let best = entry
                .joint_samples
                .iter()
                .map(|js| measure(&js.trajectories[a], truth))
                .fold(f64::INFINITY, f64::min);
            Ok((id.clone(), best))
        })
        .collect()
}

fn joint_min(
    entry: &SamplePrediction,
    sample: &Sample,
    measure: impl Fn(&[[f64; 2]], &[[f64; 2]]) -> f64,
) -> Result<f64, MetricsError> {
    check_shapes(entry, sample)?;
    let n_agents = entry.agent_ids.len() as f64;
    Ok(entry
        .joint_samples
        .iter()
        .map(|js| {
            entry
                .agent_ids
                .iter()
                .enumerate()
                .map(|(a, id)| measure(&js.trajectories[a], &sample.agent(id).unwrap().future))
                .sum::<f64>()
                / n_agents
        })
        .fold(f64::INFINITY, f64::min))
}

/// Per-agent minimum average displacement error over the joint samples.
pub fn min_ade_per_agent(
    entry: &SamplePrediction,
    sample: &Sample,
) -> Result<Vec<(String, f64)>, MetricsError> {
    per_agent_min(entry, sample, ade)
}

/// Scene-level minimum of the agent-mean average displacement error.
pub fn min_ade_joint(entry: &SamplePrediction, sample: &Sample) -> Result<f64, MetricsError> {
    joint_min(entry, sample, ade)
}

/// Per-agent minimum final displacement error over the joint samples.
pub fn min_fde_per_agent(
    entry: &SamplePrediction,
    sample: &Sample,
) -> Result<Vec<(String, f64)>, MetricsError> {
    per_agent_min(entry, sample, fde)
}

/// Scene-level minimum of the agent-mean final displacement error.
pub fn min_fde_joint(entry: &SamplePrediction, sample: &Sample) -> Result<f64, MetricsError> {
    joint_min(entry, sample, fde)
}

/// Per-agent best final displacement, the quantity the miss rate thresholds.
pub fn min_final_displacements(
    entry: &SamplePrediction,
    sample: &Sample,
) -> Result<Vec<(String, f64)>, MetricsError> {
    min_fde_per_agent(entry, sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::test_support::random_case;
    use crate::model::{JointSample, SamplePrediction};
    use crate::rng::DetRng;
    use crate::sample::{Sample, SampleAgent, SampleId};
    use crate::scene::AgentType;

    fn single_agent_case(
        truth: Vec<[f64; 2]>,
        trajectories: Vec<Vec<[f64; 2]>>,
    ) -> (Sample, SamplePrediction) {
        let n = truth.len();
        let sample = Sample {
            sample_id: SampleId::new("d", "s", 1.0),
            location_id: "loc".into(),
            t0: 1.0,
            agents: vec![SampleAgent {
                agent_id: "a0".into(),
                agent_type: AgentType::Vehicle,
                size: None,
                predicted: true,
                past: vec![[0.0, 0.0]; 2],
                future: truth,
                past_mask: vec![true; 2],
                future_mask: vec![true; n],
            }],
            behavior_label: None,
            gap_conflict: None,
            labels: Default::default(),
        };
        let prediction = SamplePrediction {
            sample_id: sample.sample_id.clone(),
            agent_ids: vec!["a0".into()],
            joint_samples: trajectories
                .into_iter()
                .map(|t| JointSample { trajectories: vec![t] })
                .collect(),
            log_likelihoods: None,
            behavior_probs: None,
        };
        (sample, prediction)
    }

    #[test]
    fn exact_match_gives_zero() {
        let truth = vec![[1.0, 1.0], [2.0, 2.0]];
        let (sample, pred) = single_agent_case(
            truth.clone(),
            vec![vec![[9.0, 9.0], [9.0, 9.0]], truth.clone()],
        );
        assert_eq!(min_ade_per_agent(&pred, &sample).unwrap()[0].1, 0.0);
        assert_eq!(min_fde_per_agent(&pred, &sample).unwrap()[0].1, 0.0);
    }

    #[test]
    fn constant_offset_gives_offset_norm() {
        let truth = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let shifted: Vec<[f64; 2]> = truth.iter().map(|p| [p[0], p[1] + 3.0]).collect();
        let (sample, pred) = single_agent_case(truth, vec![shifted]);
        assert!((min_ade_per_agent(&pred, &sample).unwrap()[0].1 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fde_picks_min_of_endpoint_distances() {
        // endpoints (3,4) and (6,8) against truth (0,0): min(5, 10) = 5
        let truth = vec![[0.0, 0.0]];
        let (sample, pred) =
            single_agent_case(truth, vec![vec![[3.0, 4.0]], vec![[6.0, 8.0]]]);
        assert!((min_fde_per_agent(&pred, &sample).unwrap()[0].1 - 5.0).abs() < 1e-12);
    }

    // brute-force oracle: exhaustive enumeration over all joint samples
    #[test]
    fn random_fixtures_match_enumeration_oracle() {
        let mut rng = DetRng::new(41);
        for case in 0..60 {
            let n_agents = 1 + rng.below(3) as usize;
            let n_output = 1 + rng.below(5) as usize;
            let k = 1 + rng.below(6) as usize;
            let (sample, pred) = random_case(&mut rng, n_agents, n_output, k, case);

            let dist = |p: [f64; 2], y: [f64; 2]| ((p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2)).sqrt();

            // oracle: per-agent marginal
            for (a, id) in pred.agent_ids.iter().enumerate() {
                let truth = &sample.agent(id).unwrap().future;
                let mut best_ade = f64::INFINITY;
                let mut best_fde = f64::INFINITY;
                for js in &pred.joint_samples {
                    let mut total = 0.0;
                    for t in 0..n_output {
                        total += dist(js.trajectories[a][t], truth[t]);
                    }
                    best_ade = best_ade.min(total / n_output as f64);
                    best_fde = best_fde.min(dist(js.trajectories[a][n_output - 1], truth[n_output - 1]));
                }
                let got_ade = min_ade_per_agent(&pred, &sample).unwrap()[a].1;
                let got_fde = min_fde_per_agent(&pred, &sample).unwrap()[a].1;
                assert!((got_ade - best_ade).abs() < 1e-9);
                assert!((got_fde - best_fde).abs() < 1e-9);
            }

            // oracle: joint (hand enumeration)
            let mut best_joint_ade = f64::INFINITY;
            let mut best_joint_fde = f64::INFINITY;
            for js in &pred.joint_samples {
                let mut sum_ade = 0.0;
                let mut sum_fde = 0.0;
                for (a, id) in pred.agent_ids.iter().enumerate() {
                    let truth = &sample.agent(id).unwrap().future;
                    let mut total = 0.0;
                    for t in 0..n_output {
                        total += dist(js.trajectories[a][t], truth[t]);
                    }
                    sum_ade += total / n_output as f64;
                    sum_fde += dist(js.trajectories[a][n_output - 1], truth[n_output - 1]);
                }
                best_joint_ade = best_joint_ade.min(sum_ade / n_agents as f64);
                best_joint_fde = best_joint_fde.min(sum_fde / n_agents as f64);
            }
            assert!((min_ade_joint(&pred, &sample).unwrap() - best_joint_ade).abs() < 1e-9);
            assert!((min_fde_joint(&pred, &sample).unwrap() - best_joint_fde).abs() < 1e-9);
        }
    }

    // min of means >= mean of mins, always
    #[test]
    fn joint_dominates_mean_marginal() {
        let mut rng = DetRng::new(42);
        for case in 0..200 {
            let n_agents = 1 + rng.below(4) as usize;
            let (sample, pred) = random_case(&mut rng, n_agents, 3, 6, case);
            let joint = min_ade_joint(&pred, &sample).unwrap();
            let marginal = min_ade_per_agent(&pred, &sample).unwrap();
            let mean_marginal =
                marginal.iter().map(|(_, v)| v).sum::<f64>() / marginal.len() as f64;
            assert!(
                joint >= mean_marginal - 1e-12,
                "case {case}: joint {joint} < mean marginal {mean_marginal}"
            );
        }
    }

    #[test]
    fn rigid_transform_invariance() {
        let mut rng = DetRng::new(43);
        for case in 0..20 {
            let (mut sample, mut pred) = random_case(&mut rng, 2, 4, 3, case);
            let before = min_ade_joint(&pred, &sample).unwrap();
            let theta = rng.uniform_in(-3.0, 3.0);
            let (sin, cos) = theta.sin_cos();
            let shift = [rng.uniform_in(-30.0, 30.0), rng.uniform_in(-30.0, 30.0)];
            let map = |p: [f64; 2]| {
                [cos * p[0] - sin * p[1] + shift[0], sin * p[0] + cos * p[1] + shift[1]]
            };
            for agent in &mut sample.agents {
                for p in &mut agent.future {
                    *p = map(*p);
                }
            }
            for js in &mut pred.joint_samples {
                for traj in &mut js.trajectories {
                    for p in traj.iter_mut() {
                        *p = map(*p);
                    }
                }
            }
            let after = min_ade_joint(&pred, &sample).unwrap();
            assert!((before - after).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let truth = vec![[0.0, 0.0], [1.0, 0.0]];
        let (sample, mut pred) = single_agent_case(truth, vec![vec![[0.0, 0.0], [1.0, 0.0]]]);
        pred.joint_samples[0].trajectories[0].pop();
        assert!(matches!(
            min_ade_per_agent(&pred, &sample),
            Err(MetricsError::ShapeMismatch(_))
        ));
    }
}
