//! Safety-criticality measure: a minimum time-to-collision proxy over the
//! observed past.

use crate::sample::Sample;

/// Minimum over timesteps and agent pairs of inter-agent distance divided by
/// closing speed, the closing speed being observed over the preceding step.
/// Infinity when no pair is closing (or fewer than two agents share observed
/// steps); lower means more critical. Only past states with both agents
/// observed enter the scan.
pub fn compute_criticality(sample: &Sample, dt: f64) -> f64 {
    let mut best = f64::INFINITY;
    let agents = &sample.agents;
    for i in 0..agents.len() {
        for j in (i + 1)..agents.len() {
            let (a, b) = (&agents[i], &agents[j]);
            let steps = a.past.len().min(b.past.len());
            for t in 0..steps.saturating_sub(1) {
                let both = a.past_mask[t]
                    && a.past_mask[t + 1]
                    && b.past_mask[t]
                    && b.past_mask[t + 1];
                if !both {
                    continue;
                }
                let dist = |k: usize| {
                    let dx = a.past[k][0] - b.past[k][0];
                    let dy = a.past[k][1] - b.past[k][1];
                    (dx * dx + dy * dy).sqrt()
                };
                let d_prev = dist(t);
                let d_now = dist(t + 1);
                let closing = (d_prev - d_now) / dt;
                if closing > 0.0 {
                    best = best.min(d_now / closing);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{Sample, SampleAgent, SampleId};
    use crate::scene::AgentType;

    fn sample_from_pasts(pasts: Vec<Vec<[f64; 2]>>) -> Sample {
        let agents = pasts
            .into_iter()
            .enumerate()
            .map(|(i, past)| {
                let n = past.len();
                SampleAgent {
                    agent_id: format!("a{i}"),
                    agent_type: AgentType::Vehicle,
                    size: None,
                    predicted: true,
                    past,
                    future: vec![[0.0, 0.0]],
                    past_mask: vec![true; n],
                    future_mask: vec![true],
                }
            })
            .collect();
        Sample {
            sample_id: SampleId::new("d", "s", 1.0),
            location_id: "loc".into(),
            t0: 1.0,
            agents,
            behavior_label: None,
            gap_conflict: None,
            labels: Default::default(),
        }
    }

    #[test]
    fn head_on_ttc() {
        // ending 10 m apart, closing at 5 m/s with dt = 0.5: 10/5 = 2.0 s
        let sample = sample_from_pasts(vec![
            vec![[0.0, 0.0], [1.25, 0.0]],
            vec![[12.5, 0.0], [11.25, 0.0]],
        ]);
        let ttc = compute_criticality(&sample, 0.5);
        assert!((ttc - 2.0).abs() < 1e-12, "{ttc}");
    }

    #[test]
    fn parallel_agents_never_close() {
        let sample = sample_from_pasts(vec![
            vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
            vec![[0.0, 3.5], [1.0, 3.5], [2.0, 3.5]],
        ]);
        assert!(compute_criticality(&sample, 0.5).is_infinite());
    }

    #[test]
    fn single_agent_is_infinite() {
        let sample = sample_from_pasts(vec![vec![[0.0, 0.0], [1.0, 0.0]]]);
        assert!(compute_criticality(&sample, 0.5).is_infinite());
    }

    #[test]
    fn matches_brute_force_on_random_fixture() {
        use crate::rng::DetRng;
        let mut rng = DetRng::new(21);
        for _ in 0..20 {
            let n_agents = 2 + (rng.below(3) as usize);
            let steps = 6;
            let pasts: Vec<Vec<[f64; 2]>> = (0..n_agents)
                .map(|_| {
                    (0..steps)
                        .map(|_| [rng.uniform_in(-20.0, 20.0), rng.uniform_in(-20.0, 20.0)])
                        .collect()
                })
                .collect();
            let dt = 0.25;
            let sample = sample_from_pasts(pasts.clone());
            let got = compute_criticality(&sample, dt);

            // exhaustive pairwise oracle
            let mut expected = f64::INFINITY;
            for i in 0..n_agents {
                for j in (i + 1)..n_agents {
                    for t in 0..steps - 1 {
                        let d = |k: usize, a: usize, b: usize| {
                            let dx = pasts[a][k][0] - pasts[b][k][0];
                            let dy = pasts[a][k][1] - pasts[b][k][1];
                            f64::hypot(dx, dy)
                        };
                        let d0 = d(t, i, j);
                        let d1 = d(t + 1, i, j);
                        if d0 > d1 {
                            expected = expected.min(d1 / ((d0 - d1) / dt));
                        }
                    }
                }
            }
            if expected.is_infinite() {
                assert!(got.is_infinite());
            } else {
                assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
            }
        }
    }
}
