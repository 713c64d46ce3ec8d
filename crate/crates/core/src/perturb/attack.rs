//! Adversarial attacks: projected gradient ascent on the target model's
//! trajectory loss, under a hard per-waypoint displacement budget.
//!
//! Both attacks track the best iterate by loss and include the unperturbed
//! sample as a candidate, so an attack never returns something worse for
//! the attacker than no perturbation. Every candidate satisfies the budget
//! by construction, so the returned sample does too.

use super::kinematics::{rollout_states, Control, ControlSequence};
use super::{recover_controls, PerturbError};
use crate::model::{
    loss_gradient_wrt_truth, prediction_loss_gradient, trajectory_loss, LossSpec, Predictor,
};
use crate::sample::Sample;
use crate::scene::DataParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub d_max: f64,
    pub iters: usize,
    pub step_size: f64,
    pub a_max: f64,
    pub omega_max: f64,
    /// Model samples per loss evaluation.
    pub k: usize,
    /// Fixed sampling seed making the objective deterministic.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            d_max: 0.5,
            iters: 50,
            step_size: 0.05,
            a_max: 4.0,
            omega_max: 0.5,
            k: 6,
            seed: 0,
        }
    }
}

/// Per-victim attack log record, emitted as structured text by the runner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackLogEntry {
    pub sample_id: String,
    pub victim: String,
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub max_displacement: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub sample: Sample,
    pub log: Vec<AttackLogEntry>,
}

/// Largest waypoint displacement between two versions of one sample, over
/// past and future of every agent.
pub fn max_waypoint_deviation(a: &Sample, b: &Sample) -> f64 {
    let mut max = 0.0f64;
    for (x, y) in a.agents.iter().zip(&b.agents) {
        for (p, q) in x.past.iter().zip(&y.past).chain(x.future.iter().zip(&y.future)) {
            max = max.max(f64::hypot(p[0] - q[0], p[1] - q[1]));
        }
    }
    max
}

fn deviation_of(points: &[[f64; 2]], reference: &[[f64; 2]]) -> f64 {
    points
        .iter()
        .zip(reference)
        .map(|(p, q)| f64::hypot(p[0] - q[0], p[1] - q[1]))
        .fold(0.0, f64::max)
}

/// Clamps each waypoint delta to the budget ball.
fn project_deltas(deltas: &mut [[f64; 2]], d_max: f64) {
    for d in deltas.iter_mut() {
        let norm = f64::hypot(d[0], d[1]);
        if norm > d_max {
            let s = d_max / norm;
            d[0] *= s;
            d[1] *= s;
        }
    }
}

/// Three-point moving average over the perturbation, endpoints kept. A
/// convex combination of budget-feasible deltas stays budget-feasible.
fn smooth_deltas(deltas: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = deltas.len();
    if n < 3 {
        return deltas.to_vec();
    }
    let mut out = deltas.to_vec();
    for j in 1..n - 1 {
        for c in 0..2 {
            out[j][c] = (deltas[j - 1][c] + deltas[j][c] + deltas[j + 1][c]) / 3.0;
        }
    }
    out
}

/// Projected gradient ascent on the victim's past positions. Each
/// iteration steps along the normalized loss gradient, clamps every
/// waypoint into the budget ball around its original, then smooths the
/// perturbation.
pub fn attack_positions(
    model: &dyn Predictor,
    params: &DataParams,
    sample: &Sample,
    victims: &[String],
    cfg: &AttackConfig,
) -> Result<AttackOutcome, PerturbError> {
    let loss_spec = LossSpec { k: cfg.k, seed: cfg.seed };
    let mut current = sample.clone();
    let mut log = Vec::new();
    for victim in victims {
        let initial_loss = trajectory_loss(model, params, &current, &loss_spec)?;
        let victim_idx = current
            .agents
            .iter()
            .position(|a| &a.agent_id == victim)
            .ok_or_else(|| PerturbError::InvalidSpec(format!("victim {victim} not in sample")))?;
        let original = current.agents[victim_idx].past.clone();
        let n_in = original.len();
        let mut deltas = vec![[0.0; 2]; n_in];
        let mut best_deltas = deltas.clone();
        let mut best_loss = initial_loss;
        let mut iterations = 0;
        let mut probe = current.clone();
        for _ in 0..cfg.iters {
            iterations += 1;
            for (j, d) in deltas.iter().enumerate() {
                probe.agents[victim_idx].past[j] =
                    [original[j][0] + d[0], original[j][1] + d[1]];
            }
            let grad = prediction_loss_gradient(model, params, &probe, victim, &loss_spec)?;
            let max_norm = grad.iter().map(|g| f64::hypot(g[0], g[1])).fold(0.0, f64::max);
            if max_norm < 1e-15 {
                break;
            }
            let scale = cfg.step_size / max_norm;
            for (d, g) in deltas.iter_mut().zip(&grad) {
                d[0] += scale * g[0];
                d[1] += scale * g[1];
            }
            project_deltas(&mut deltas, cfg.d_max);
            deltas = smooth_deltas(&deltas);
            for (j, d) in deltas.iter().enumerate() {
                probe.agents[victim_idx].past[j] =
                    [original[j][0] + d[0], original[j][1] + d[1]];
            }
            let loss = trajectory_loss(model, params, &probe, &loss_spec)?;
            if loss > best_loss {
                best_loss = loss;
                best_deltas = deltas.clone();
            }
        }
        for (j, d) in best_deltas.iter().enumerate() {
            current.agents[victim_idx].past[j] =
                [original[j][0] + d[0], original[j][1] + d[1]];
        }
        let max_displacement = deviation_of(&current.agents[victim_idx].past, &original);
        log.push(AttackLogEntry {
            sample_id: current.sample_id.to_string(),
            victim: victim.clone(),
            iterations,
            initial_loss,
            final_loss: best_loss,
            max_displacement,
            flagged: None,
        });
    }
    Ok(AttackOutcome { sample: current, log })
}

/// Backward sweep through the Euler unicycle recurrence: gradient of the
/// loss with respect to each control given gradients at rollout positions.
fn backward_through_rollout(
    cs: &ControlSequence,
    grad_positions: &[[f64; 2]],
) -> Vec<Control> {
    let states = rollout_states(cs);
    let m = cs.controls.len();
    assert_eq!(grad_positions.len(), m);
    let mut grads = vec![Control { accel: 0.0, yaw_rate: 0.0 }; m];
    let mut adj_p = [0.0f64; 2];
    let mut adj_theta = 0.0f64;
    let mut adj_v = 0.0f64;
    for k in (0..m).rev() {
        let s = &states[k];
        adj_p[0] += grad_positions[k][0];
        adj_p[1] += grad_positions[k][1];
        // p_k = p_{k-1} + v_k * u(theta_k) * dt
        let (sin, cos) = s.heading.sin_cos();
        adj_v += cs.dt * (adj_p[0] * cos + adj_p[1] * sin);
        adj_theta += s.speed * cs.dt * (-adj_p[0] * sin + adj_p[1] * cos);
        // theta_k = theta_{k-1} + yaw_k * dt
        grads[k].yaw_rate = adj_theta * cs.dt;
        // v_k = max(v_{k-1} + a_k * dt, 0)
        if s.clamped {
            grads[k].accel = 0.0;
            adj_v = 0.0;
        } else {
            grads[k].accel = adj_v * cs.dt;
        }
        // adj_p, adj_theta, adj_v carry to step k-1
    }
    grads
}

fn clamp_controls(cs: &mut ControlSequence, a_max: f64, omega_max: f64) {
    for c in &mut cs.controls {
        c.accel = c.accel.clamp(-a_max, a_max);
        c.yaw_rate = c.yaw_rate.clamp(-omega_max, omega_max);
    }
}

fn blend_controls(base: &ControlSequence, target: &ControlSequence, alpha: f64) -> ControlSequence {
    let controls = base
        .controls
        .iter()
        .zip(&target.controls)
        .map(|(b, t)| Control {
            accel: b.accel + alpha * (t.accel - b.accel),
            yaw_rate: b.yaw_rate + alpha * (t.yaw_rate - b.yaw_rate),
        })
        .collect();
    ControlSequence { initial: base.initial, controls, dt: base.dt }
}

/// Rollout deviation from the original full trajectory.
fn control_deviation(cs: &ControlSequence, original: &[[f64; 2]]) -> f64 {
    let rolled = super::kinematic_rollout(cs);
    deviation_of(&rolled, &original[1..])
}

/// Pulls `target` toward `base` until the rollout obeys the budget.
fn project_budget(
    base: &ControlSequence,
    target: &ControlSequence,
    original: &[[f64; 2]],
    d_max: f64,
) -> ControlSequence {
    if control_deviation(target, original) <= d_max {
        return target.clone();
    }
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if control_deviation(&blend_controls(base, target, mid), original) <= d_max {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    blend_controls(base, target, lo)
}

/// Projected gradient ascent on the victim's control actions over its full
/// trajectory. The returned sample carries both the perturbed past and the
/// perturbed future, so downstream evaluation compares predictions against
/// a consistent ground truth. Projection clamps the controls into their
/// bounds and bisects toward the original controls whenever the rollout
/// leaves the displacement budget. Stationary victims are returned
/// unperturbed and flagged.
pub fn attack_controls(
    model: &dyn Predictor,
    params: &DataParams,
    sample: &Sample,
    victims: &[String],
    cfg: &AttackConfig,
) -> Result<AttackOutcome, PerturbError> {
    let loss_spec = LossSpec { k: cfg.k, seed: cfg.seed };
    let mut current = sample.clone();
    let mut log = Vec::new();
    for victim in victims {
        let initial_loss = trajectory_loss(model, params, &current, &loss_spec)?;
        let victim_idx = current
            .agents
            .iter()
            .position(|a| &a.agent_id == victim)
            .ok_or_else(|| PerturbError::InvalidSpec(format!("victim {victim} not in sample")))?;
        let n_in = current.agents[victim_idx].past.len();
        let full_original: Vec<[f64; 2]> = current.agents[victim_idx]
            .past
            .iter()
            .chain(current.agents[victim_idx].future.iter())
            .copied()
            .collect();

        let base = match recover_controls(&full_original, params.dt, 0.0) {
            Ok(mut cs) => {
                clamp_controls(&mut cs, cfg.a_max, cfg.omega_max);
                cs
            }
            Err(PerturbError::Degenerate(reason)) => {
                log.push(AttackLogEntry {
                    sample_id: current.sample_id.to_string(),
                    victim: victim.clone(),
                    iterations: 0,
                    initial_loss,
                    final_loss: initial_loss,
                    max_displacement: 0.0,
                    flagged: Some(reason),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        if control_deviation(&base, &full_original) > cfg.d_max {
            log.push(AttackLogEntry {
                sample_id: current.sample_id.to_string(),
                victim: victim.clone(),
                iterations: 0,
                initial_loss,
                final_loss: initial_loss,
                max_displacement: 0.0,
                flagged: Some(
                    "original trajectory violates control bounds beyond the budget".into(),
                ),
            });
            continue;
        }

        let apply = |controls: &ControlSequence, out: &mut Sample| {
            let rolled = super::kinematic_rollout(controls);
            let agent = &mut out.agents[victim_idx];
            for j in 1..n_in {
                agent.past[j] = rolled[j - 1];
            }
            for j in 0..agent.future.len() {
                agent.future[j] = rolled[n_in - 1 + j];
            }
        };

        let mut cur = base.clone();
        let mut best_controls: Option<ControlSequence> = None;
        let mut best_loss = initial_loss;
        let mut iterations = 0;
        let mut probe = current.clone();
        for _ in 0..cfg.iters {
            iterations += 1;
            apply(&cur, &mut probe);
            // loss gradient w.r.t. every rollout position: past through the
            // model, future through the ground-truth side of the loss
            let g_past = prediction_loss_gradient(model, params, &probe, victim, &loss_spec)?;
            let g_future = {
                let corpus = crate::sample::Corpus {
                    params: params.clone(),
                    provenance: Vec::new(),
                    samples: vec![probe.clone()],
                };
                let preds =
                    model.predict(&corpus, &[probe.sample_id.clone()], cfg.k, cfg.seed)?;
                loss_gradient_wrt_truth(&preds, &probe, victim)?
            };
            let mut g_positions = vec![[0.0; 2]; cur.controls.len()];
            for j in 1..n_in {
                g_positions[j - 1] = g_past[j];
            }
            for (j, g) in g_future.iter().enumerate() {
                g_positions[n_in - 1 + j] = *g;
            }
            let g_controls = backward_through_rollout(&cur, &g_positions);
            let max_a = g_controls.iter().map(|g| g.accel.abs()).fold(0.0, f64::max);
            let max_w = g_controls.iter().map(|g| g.yaw_rate.abs()).fold(0.0, f64::max);
            if max_a < 1e-15 && max_w < 1e-15 {
                break;
            }
            // per-channel normalized ascent: step_size is the fraction of
            // each bound moved per iteration
            let a_scale = if max_a > 1e-15 { cfg.step_size * cfg.a_max / max_a } else { 0.0 };
            let w_scale = if max_w > 1e-15 { cfg.step_size * cfg.omega_max / max_w } else { 0.0 };
            let mut candidate = cur.clone();
            for (c, g) in candidate.controls.iter_mut().zip(&g_controls) {
                c.accel += a_scale * g.accel;
                c.yaw_rate += w_scale * g.yaw_rate;
            }
            clamp_controls(&mut candidate, cfg.a_max, cfg.omega_max);
            let projected = project_budget(&base, &candidate, &full_original, cfg.d_max);
            apply(&projected, &mut probe);
            let loss = trajectory_loss(model, params, &probe, &loss_spec)?;
            if loss > best_loss {
                best_loss = loss;
                best_controls = Some(projected.clone());
            }
            cur = projected;
        }
        if let Some(best) = best_controls {
            apply(&best, &mut current);
        }
        let perturbed_full: Vec<[f64; 2]> = current.agents[victim_idx]
            .past
            .iter()
            .chain(current.agents[victim_idx].future.iter())
            .copied()
            .collect();
        log.push(AttackLogEntry {
            sample_id: current.sample_id.to_string(),
            victim: victim.clone(),
            iterations,
            initial_loss,
            final_loss: best_loss,
            max_displacement: deviation_of(&perturbed_full, &full_original),
            flagged: None,
        });
    }
    Ok(AttackOutcome { sample: current, log })
}
