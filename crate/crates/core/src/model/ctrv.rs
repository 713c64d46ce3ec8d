//! Constant turn rate and velocity baseline: estimates speed and yaw rate
//! from the last past displacements and integrates them forward, with a
//! fitted isotropic noise scale.
//!
//! Parameters: `sigma` = [noise scale in meters].

use super::constant_velocity::gaussian_log_density;
use super::{
    carve_validation, draw_seed, predicted_agents, JointSample, ModelError, ModelKind, ModelSpec,
    ModelState, PredictionSet, Predictor, SamplePrediction, TrainConfig, TrainReport,
};
use crate::rng::DetRng;
use crate::sample::{Corpus, Sample, SampleAgent, SampleId};
use crate::scene::wrap_angle;

pub struct Ctrv {
    state: ModelState,
}

impl Ctrv {
    pub fn init(spec: &ModelSpec) -> Self {
        let mut state = ModelState::untrained(spec.clone());
        state.set_array("sigma", vec![spec.hyper("sigma", 0.5)]);
        Self { state }
    }

    fn sigma(&self) -> f64 {
        self.state.array("sigma").map(|a| a[0]).unwrap_or(0.5)
    }

    /// Estimates (speed, heading, yaw rate) from the final past steps and
    /// rolls the turn model forward. Falls back to straight-line motion
    /// when the track is too short or stationary.
    pub fn mean_trajectory(agent: &SampleAgent, n_output: usize, dt: f64) -> Vec<[f64; 2]> {
        let n = agent.past.len();
        let last = agent.past[n - 1];
        let d_last = if n >= 2 {
            [last[0] - agent.past[n - 2][0], last[1] - agent.past[n - 2][1]]
        } else {
            [0.0, 0.0]
        };
        let step_len = f64::hypot(d_last[0], d_last[1]);
        let speed = step_len / dt;
        if step_len < 1e-9 {
            return vec![last; n_output];
        }
        let heading = d_last[1].atan2(d_last[0]);
        let yaw_rate = if n >= 3 {
            let d_prev = [
                agent.past[n - 2][0] - agent.past[n - 3][0],
                agent.past[n - 2][1] - agent.past[n - 3][1],
            ];
            if f64::hypot(d_prev[0], d_prev[1]) < 1e-9 {
                0.0
            } else {
                wrap_angle(heading - d_prev[1].atan2(d_prev[0])) / dt
            }
        } else {
            0.0
        };
        let mut out = Vec::with_capacity(n_output);
        let mut pos = last;
        let mut theta = heading;
        for _ in 0..n_output {
            theta += yaw_rate * dt;
            pos = [pos[0] + speed * theta.cos() * dt, pos[1] + speed * theta.sin() * dt];
            out.push(pos);
        }
        out
    }

    fn residual_rms(&self, corpus: &Corpus, ids: &[SampleId]) -> Result<f64, ModelError> {
        let samples = corpus.select(ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let (mut sq, mut count) = (0.0, 0usize);
        for sample in samples {
            for agent in sample.predicted_agents() {
                let mean = Self::mean_trajectory(agent, corpus.params.n_output, corpus.params.dt);
                for (p, y) in mean.iter().zip(&agent.future) {
                    sq += (p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2);
                    count += 2;
                }
            }
        }
        if count == 0 {
            return Err(ModelError::EmptyTrain);
        }
        Ok((sq / count as f64).sqrt())
    }
}

impl Predictor for Ctrv {
    fn state(&self) -> &ModelState {
        &self.state
    }

    fn set_fingerprint(&mut self, fingerprint: Option<String>) {
        self.state.training_fingerprint = fingerprint;
    }

    fn train(
        &mut self,
        corpus: &Corpus,
        train_ids: &[SampleId],
        config: &TrainConfig,
    ) -> Result<TrainReport, ModelError> {
        if train_ids.is_empty() {
            return Err(ModelError::EmptyTrain);
        }
        let (fit_ids, val_ids) =
            carve_validation(train_ids, config.validation_fraction, config.seed);
        let fitted = self.residual_rms(corpus, &fit_ids)?;
        let mut epochs_run = 1;
        let sigma = if self.state.spec.hyperparameters.contains_key("sigma") {
            epochs_run = 0;
            self.state.spec.hyper("sigma", 0.5)
        } else if config.fine_tune {
            let epochs =
                (self.state.spec.hyper("epochs", 20.0) * config.epochs_scale).round() as usize;
            epochs_run = epochs;
            let rate =
                (self.state.spec.hyper("learning_rate", 0.5) * config.lr_scale).clamp(0.0, 1.0);
            let mut s = self.sigma();
            for _ in 0..epochs {
                s += rate * (fitted - s);
            }
            s
        } else {
            fitted
        };
        if !(config.fine_tune && epochs_run == 0) {
            self.state.set_array("sigma", vec![sigma]);
        }
        self.state.trained = true;
        let validation_metric = if val_ids.is_empty() {
            None
        } else {
            Some(self.residual_rms(corpus, &val_ids)?)
        };
        Ok(TrainReport {
            samples_used: fit_ids.len(),
            epochs_run,
            train_metric: fitted,
            validation_metric,
        })
    }

    fn predict(
        &self,
        corpus: &Corpus,
        ids: &[SampleId],
        k: usize,
        seed: u64,
    ) -> Result<PredictionSet, ModelError> {
        if !self.state.trained {
            return Err(ModelError::Untrained);
        }
        let sigma = self.sigma();
        let samples = corpus.select(ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let mut entries = Vec::with_capacity(samples.len());
        for sample in samples {
            let agents = predicted_agents(sample);
            let means: Vec<Vec<[f64; 2]>> = agents
                .iter()
                .map(|(idx, _)| {
                    Self::mean_trajectory(
                        &sample.agents[*idx],
                        corpus.params.n_output,
                        corpus.params.dt,
                    )
                })
                .collect();
            let mut joint_samples = Vec::with_capacity(k);
            let mut log_likelihoods = Vec::with_capacity(k);
            for draw in 0..k {
                let mut trajectories = Vec::with_capacity(agents.len());
                let mut ll = 0.0;
                for (a, mean) in means.iter().enumerate() {
                    let mut rng = DetRng::new(draw_seed(seed, &sample.sample_id, draw, a));
                    let traj: Vec<[f64; 2]> = mean
                        .iter()
                        .map(|p| {
                            if sigma > 0.0 {
                                [p[0] + sigma * rng.gauss(), p[1] + sigma * rng.gauss()]
                            } else {
                                *p
                            }
                        })
                        .collect();
                    if sigma > 0.0 {
                        ll += gaussian_log_density(&traj, mean, sigma);
                    }
                    trajectories.push(traj);
                }
                joint_samples.push(JointSample { trajectories });
                log_likelihoods.push(ll);
            }
            entries.push(SamplePrediction {
                sample_id: sample.sample_id.clone(),
                agent_ids: agents.into_iter().map(|(_, id)| id).collect(),
                joint_samples,
                log_likelihoods: (sigma > 0.0).then_some(log_likelihoods),
                behavior_probs: None,
            });
        }
        Ok(PredictionSet { model_id: self.state.spec.model_id.clone(), k, seed, entries })
    }

    fn log_likelihood(&self, sample: &Sample) -> Result<f64, ModelError> {
        if !self.state.trained {
            return Err(ModelError::Untrained);
        }
        let sigma = self.sigma().max(self.state.spec.hyper("noise_floor", 0.0));
        if !(sigma > 0.0) {
            return Err(ModelError::Degenerate("sigma is zero".into()));
        }
        // dt is unknown from the sample alone; headings come from unit-dt
        // displacements which is equivalent for the Gaussian residual
        let mut ll = 0.0;
        for agent in sample.predicted_agents() {
            let n_output = agent.future.len();
            let mean = Self::mean_trajectory(agent, n_output, 1.0);
            ll += gaussian_log_density(&agent.future, &mean, sigma);
        }
        Ok(ll)
    }

    fn restore(&mut self, state: ModelState) -> Result<(), ModelError> {
        if state.spec.kind != ModelKind::Ctrv {
            return Err(ModelError::KindMismatch {
                expected: ModelKind::Ctrv.as_str().into(),
                found: state.spec.kind.as_str().into(),
            });
        }
        self.state = state;
        Ok(())
    }
}
