//! Trajectory loss and its gradients with respect to victim past positions.
//!
//! The loss is the attack objective: mean over predicted agents of the
//! minimum average displacement error over `k` model samples drawn under a
//! fixed seed, against the sample's future. With the seed fixed the noise
//! draws do not depend on the input, so the loss is a deterministic,
//! piecewise-smooth function of the past positions.

use super::{ModelError, PredictionSet, Predictor};
use crate::sample::{Sample, SampleAgent};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub k: usize,
    pub seed: u64,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { k: 6, seed: 0 }
    }
}

/// Central-difference step for probing models without analytic gradients.
pub const FD_STEP: f64 = 1e-3;

fn ade(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> f64 {
    let n = pred.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    pred.iter()
        .zip(truth)
        .map(|(p, y)| f64::hypot(p[0] - y[0], p[1] - y[1]))
        .sum::<f64>()
        / n as f64
}

/// Per-agent minimum ADE over the joint samples, then the mean over agents.
fn loss_from_predictions(
    preds: &PredictionSet,
    sample: &Sample,
) -> Result<f64, ModelError> {
    let entry = preds
        .entry(&sample.sample_id)
        .ok_or_else(|| ModelError::Shape("prediction entry missing".into()))?;
    if entry.joint_samples.is_empty() {
        return Err(ModelError::GradientUnavailable(
            "model emits no trajectories".into(),
        ));
    }
    let mut total = 0.0;
    for (a, agent_id) in entry.agent_ids.iter().enumerate() {
        let truth = &sample
            .agent(agent_id)
            .ok_or_else(|| ModelError::Shape(format!("agent {agent_id} missing")))?
            .future;
        let best = entry
            .joint_samples
            .iter()
            .map(|js| ade(&js.trajectories[a], truth))
            .fold(f64::INFINITY, f64::min);
        total += best;
    }
    Ok(total / entry.agent_ids.len() as f64)
}

/// Evaluates the trajectory loss for one sample.
pub fn trajectory_loss(
    model: &dyn Predictor,
    corpus_params: &crate::scene::DataParams,
    sample: &Sample,
    loss: &LossSpec,
) -> Result<f64, ModelError> {
    let corpus = single_sample_corpus(corpus_params, sample);
    let preds = model.predict(&corpus, &[sample.sample_id.clone()], loss.k, loss.seed)?;
    loss_from_predictions(&preds, sample)
}

fn single_sample_corpus(
    params: &crate::scene::DataParams,
    sample: &Sample,
) -> crate::sample::Corpus {
    crate::sample::Corpus {
        params: params.clone(),
        provenance: Vec::new(),
        samples: vec![sample.clone()],
    }
}

/// Gradient of the trajectory loss with respect to the victim's past
/// positions: analytic when the model provides it, otherwise central finite
/// differences over every past coordinate.
pub fn prediction_loss_gradient(
    model: &dyn Predictor,
    corpus_params: &crate::scene::DataParams,
    sample: &Sample,
    victim: &str,
    loss: &LossSpec,
) -> Result<Vec<[f64; 2]>, ModelError> {
    if !model.state().trained {
        return Err(ModelError::Untrained);
    }
    if let Some(result) = model.analytic_past_gradient(sample, victim, loss) {
        return result;
    }
    if !model.supports_probing() {
        return Err(ModelError::GradientUnavailable(
            "model supports neither analytic gradients nor probing".into(),
        ));
    }
    finite_difference_past_gradient(model, corpus_params, sample, victim, loss)
}

/// Central differences with step [`FD_STEP`] on each coordinate of the
/// victim's past.
pub fn finite_difference_past_gradient(
    model: &dyn Predictor,
    corpus_params: &crate::scene::DataParams,
    sample: &Sample,
    victim: &str,
    loss: &LossSpec,
) -> Result<Vec<[f64; 2]>, ModelError> {
    let victim_idx = sample
        .agents
        .iter()
        .position(|a| a.agent_id == victim)
        .ok_or_else(|| ModelError::Shape(format!("victim {victim} not in sample")))?;
    let n_in = sample.agents[victim_idx].past.len();
    let mut grad = vec![[0.0; 2]; n_in];
    let mut probe = sample.clone();
    for j in 0..n_in {
        for c in 0..2 {
            let original = probe.agents[victim_idx].past[j][c];
            probe.agents[victim_idx].past[j][c] = original + FD_STEP;
            let up = trajectory_loss(model, corpus_params, &probe, loss)?;
            probe.agents[victim_idx].past[j][c] = original - FD_STEP;
            let down = trajectory_loss(model, corpus_params, &probe, loss)?;
            probe.agents[victim_idx].past[j][c] = original;
            grad[j][c] = (up - down) / (2.0 * FD_STEP);
        }
    }
    Ok(grad)
}

/// Gradient of the loss with respect to the victim's future positions used
/// as ground truth. The predictions are held fixed, so this is exact given
/// the argmin branch.
pub fn loss_gradient_wrt_truth(
    preds: &PredictionSet,
    sample: &Sample,
    victim: &str,
) -> Result<Vec<[f64; 2]>, ModelError> {
    let entry = preds
        .entry(&sample.sample_id)
        .ok_or_else(|| ModelError::Shape("prediction entry missing".into()))?;
    let n_agents = entry.agent_ids.len() as f64;
    let truth = &sample
        .agent(victim)
        .ok_or_else(|| ModelError::Shape(format!("victim {victim} missing")))?
        .future;
    let mut grad = vec![[0.0; 2]; truth.len()];
    let Some(a) = entry.agent_ids.iter().position(|id| id == victim) else {
        return Ok(grad); // non-predicted victim: truth does not enter the loss
    };
    let (best_idx, _) = entry
        .joint_samples
        .iter()
        .enumerate()
        .map(|(i, js)| (i, ade(&js.trajectories[a], truth)))
        .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
        .ok_or_else(|| ModelError::GradientUnavailable("no trajectories".into()))?;
    let best = &entry.joint_samples[best_idx].trajectories[a];
    let n_o = truth.len() as f64;
    for (t, g) in grad.iter_mut().enumerate() {
        let dx = best[t][0] - truth[t][0];
        let dy = best[t][1] - truth[t][1];
        let norm = f64::hypot(dx, dy);
        if norm > 1e-12 {
            g[0] = -dx / (norm * n_o * n_agents);
            g[1] = -dy / (norm * n_o * n_agents);
        }
    }
    Ok(grad)
}

/// Shared analytic-gradient scaffolding for models whose mean trajectory is
/// affine in the past: computes the loss gradient at the mean of the argmin
/// branch and hands it to a model-specific backward map.
pub(crate) fn affine_past_gradient(
    model: &dyn Predictor,
    sample: &Sample,
    victim: &str,
    loss: &LossSpec,
    backward: &dyn Fn(&SampleAgent, &[[f64; 2]]) -> Vec<[f64; 2]>,
) -> Result<Vec<[f64; 2]>, ModelError> {
    let victim_agent = sample
        .agents
        .iter()
        .find(|a| a.agent_id == victim)
        .ok_or_else(|| ModelError::Shape(format!("victim {victim} not in sample")))?;
    let n_in = victim_agent.past.len();
    // per-agent models: only the victim's own prediction depends on its past
    if !victim_agent.predicted {
        return Ok(vec![[0.0; 2]; n_in]);
    }
    // n_output from the sample itself
    let params = crate::scene::DataParams::new(
        n_in.max(2),
        victim_agent.future.len().max(1),
        1.0,
        crate::scene::T0Policy::FirstAvailable,
    );
    let corpus = single_sample_corpus(&params, sample);
    let preds = model.predict(&corpus, &[sample.sample_id.clone()], loss.k, loss.seed)?;
    let entry = preds.entry(&sample.sample_id).unwrap();
    let a = entry
        .agent_ids
        .iter()
        .position(|id| id == victim)
        .ok_or_else(|| ModelError::Shape("victim not predicted".into()))?;
    let truth = &victim_agent.future;
    let (best_idx, _) = entry
        .joint_samples
        .iter()
        .enumerate()
        .map(|(i, js)| (i, ade(&js.trajectories[a], truth)))
        .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
        .ok_or_else(|| ModelError::GradientUnavailable("no trajectories".into()))?;
    let best = &entry.joint_samples[best_idx].trajectories[a];
    let n_agents = entry.agent_ids.len() as f64;
    let n_o = truth.len() as f64;
    // dL/dyhat at the argmin branch; the additive noise has unit Jacobian,
    // so this is also dL/dmean
    let grad_mean: Vec<[f64; 2]> = best
        .iter()
        .zip(truth)
        .map(|(p, y)| {
            let dx = p[0] - y[0];
            let dy = p[1] - y[1];
            let norm = f64::hypot(dx, dy);
            if norm > 1e-12 {
                [dx / (norm * n_o * n_agents), dy / (norm * n_o * n_agents)]
            } else {
                [0.0, 0.0]
            }
        })
        .collect();
    Ok(backward(victim_agent, &grad_mean))
}
