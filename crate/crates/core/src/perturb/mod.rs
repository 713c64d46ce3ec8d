//! Perturbation methods: white observation noise and adversarial attacks
//! on positions or control actions, under a hard displacement budget.

mod attack;
mod kinematics;

pub use attack::{
    attack_controls, attack_positions, max_waypoint_deviation, AttackConfig, AttackLogEntry,
    AttackOutcome,
};
pub use kinematics::{
    kinematic_rollout, recover_controls, Control, ControlSequence, InitialState,
};

use crate::model::ModelError;
use crate::rng::{mix_seed, DetRng};
use crate::sample::{Sample, SamplePerturbation};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, thiserror::Error)]
pub enum PerturbError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn default_iters() -> usize {
    50
}

fn default_step_size() -> f64 {
    0.05
}

fn default_a_max() -> f64 {
    4.0
}

fn default_omega_max() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    WhiteNoise {
        sigma: f64,
    },
    AttackPositions {
        d_max: f64,
        #[serde(default = "default_iters")]
        iters: usize,
        #[serde(default = "default_step_size")]
        step_size: f64,
    },
    AttackControls {
        d_max: f64,
        #[serde(default = "default_iters")]
        iters: usize,
        #[serde(default = "default_step_size")]
        step_size: f64,
        #[serde(default = "default_a_max")]
        a_max: f64,
        #[serde(default = "default_omega_max")]
        omega_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VictimSelector {
    #[default]
    AllPredicted,
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub id: String,
    pub kind: PerturbKind,
    /// Model whose prediction loss the attack maximizes (attacks only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_model: Option<String>,
    #[serde(default)]
    pub victim_agent: VictimSelector,
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn white_noise(id: &str, sigma: f64, seed: u64) -> Self {
        Self {
            id: id.to_string(),
            kind: PerturbKind::WhiteNoise { sigma },
            target_model: None,
            victim_agent: VictimSelector::default(),
            seed,
        }
    }

    pub fn is_attack(&self) -> bool {
        !matches!(self.kind, PerturbKind::WhiteNoise { .. })
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        match self.kind {
            PerturbKind::WhiteNoise { sigma } => {
                if sigma < 0.0 {
                    return Err(PerturbError::InvalidSpec(format!("sigma {sigma} < 0")));
                }
            }
            PerturbKind::AttackPositions { d_max, iters, step_size } => {
                if !(d_max > 0.0) {
                    return Err(PerturbError::InvalidSpec(format!("d_max {d_max} must be > 0")));
                }
                if iters < 1 {
                    return Err(PerturbError::InvalidSpec("iters must be >= 1".into()));
                }
                if !(step_size > 0.0) {
                    return Err(PerturbError::InvalidSpec("step_size must be > 0".into()));
                }
            }
            PerturbKind::AttackControls { d_max, iters, step_size, a_max, omega_max } => {
                if !(d_max > 0.0) {
                    return Err(PerturbError::InvalidSpec(format!("d_max {d_max} must be > 0")));
                }
                if iters < 1 {
                    return Err(PerturbError::InvalidSpec("iters must be >= 1".into()));
                }
                if !(step_size > 0.0) {
                    return Err(PerturbError::InvalidSpec("step_size must be > 0".into()));
                }
                if !(a_max > 0.0 && omega_max > 0.0) {
                    return Err(PerturbError::InvalidSpec("control bounds must be > 0".into()));
                }
            }
        }
        if self.is_attack() && self.target_model.is_none() {
            return Err(PerturbError::InvalidSpec(format!(
                "attack perturbation '{}' needs a target_model",
                self.id
            )));
        }
        Ok(())
    }
}

/// Adds i.i.d. Gaussian offsets to the observed past positions of every
/// agent; the future is untouched. Deterministic per (seed, sample id).
pub fn perturb_white_noise(sample: &Sample, sigma: f64, seed: u64) -> Sample {
    let mut out = sample.clone();
    if sigma == 0.0 {
        return out;
    }
    for (a, agent) in out.agents.iter_mut().enumerate() {
        let mut rng = DetRng::new(crate::rng::mix_seed_u64(
            mix_seed(seed, &sample.sample_id.to_string()),
            a as u64,
        ));
        for (p, &observed) in agent.past.iter_mut().zip(&agent.past_mask) {
            if observed {
                p[0] += sigma * rng.gauss();
                p[1] += sigma * rng.gauss();
            }
        }
    }
    out
}

/// White noise as a corpus-assembly perturbation.
pub struct WhiteNoise {
    pub id: String,
    pub sigma: f64,
    pub seed: u64,
}

impl SamplePerturbation for WhiteNoise {
    fn id(&self) -> &str {
        &self.id
    }

    fn perturb(&self, sample: &Sample) -> Result<Sample, String> {
        if self.sigma < 0.0 {
            return Err(format!("sigma {} < 0", self.sigma));
        }
        Ok(perturb_white_noise(sample, self.sigma, self.seed))
    }
}

/// Victim agents for an attack on one sample.
pub fn resolve_victims(sample: &Sample, selector: VictimSelector) -> Vec<String> {
    match selector {
        VictimSelector::AllPredicted => sample
            .agents
            .iter()
            .filter(|a| a.predicted)
            .map(|a| a.agent_id.clone())
            .collect(),
        VictimSelector::NearestNeighbor => {
            // the non-predicted agent closest to any predicted agent at the
            // prediction time
            let predicted: Vec<[f64; 2]> = sample
                .agents
                .iter()
                .filter(|a| a.predicted)
                .map(|a| a.current())
                .collect();
            sample
                .agents
                .iter()
                .filter(|a| !a.predicted && a.past_mask.iter().all(|&m| m))
                .map(|a| {
                    let p = a.current();
                    let d = predicted
                        .iter()
                        .map(|q| f64::hypot(p[0] - q[0], p[1] - q[1]))
                        .fold(f64::INFINITY, f64::min);
                    (a.agent_id.clone(), d)
                })
                .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
                .map(|(id, _)| vec![id])
                .unwrap_or_default()
        }
    }
}
