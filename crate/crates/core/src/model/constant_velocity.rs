//! Constant-velocity baseline: extrapolates the last observed displacement
//! and adds isotropic Gaussian noise with a fitted scale.
//!
//! Parameters: `sigma` = [noise scale in meters]. Training fits sigma to
//! the RMS of constant-velocity residuals on the train slice unless the
//! `sigma` hyperparameter pins it.

use super::{
    carve_validation, draw_seed, predicted_agents, JointSample, LossSpec, ModelError, ModelKind,
    ModelSpec, ModelState, PredictionSet, Predictor, SamplePrediction, TrainConfig, TrainReport,
};
use crate::rng::DetRng;
use crate::sample::{Corpus, Sample, SampleAgent, SampleId};

pub const DEFAULT_SIGMA: f64 = 0.5;

pub struct ConstantVelocity {
    state: ModelState,
}

impl ConstantVelocity {
    pub fn init(spec: &ModelSpec) -> Self {
        let mut state = ModelState::untrained(spec.clone());
        state.set_array("sigma", vec![spec.hyper("sigma", DEFAULT_SIGMA)]);
        Self { state }
    }

    fn sigma(&self) -> f64 {
        self.state.array("sigma").map(|a| a[0]).unwrap_or(DEFAULT_SIGMA)
    }

    /// The deterministic mean trajectory for one agent.
    pub fn mean_trajectory(agent: &SampleAgent, n_output: usize) -> Vec<[f64; 2]> {
        let n = agent.past.len();
        let last = agent.past[n - 1];
        let prev = if n >= 2 { agent.past[n - 2] } else { last };
        let step = [last[0] - prev[0], last[1] - prev[1]];
        (0..n_output)
            .map(|j| {
                let m = (j + 1) as f64;
                [last[0] + m * step[0], last[1] + m * step[1]]
            })
            .collect()
    }

    fn residual_rms(&self, corpus: &Corpus, ids: &[SampleId]) -> Result<f64, ModelError> {
        let samples = corpus.select(ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let n_output = corpus.params.n_output;
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for sample in samples {
            for agent in sample.predicted_agents() {
                let mean = Self::mean_trajectory(agent, n_output);
                for (p, y) in mean.iter().zip(&agent.future) {
                    sq_sum += (p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2);
                    count += 2;
                }
            }
        }
        if count == 0 {
            return Err(ModelError::EmptyTrain);
        }
        Ok((sq_sum / count as f64).sqrt())
    }
}

impl Predictor for ConstantVelocity {
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
        let epochs_run;
        let sigma = if self.state.spec.hyperparameters.contains_key("sigma") {
            epochs_run = 0;
            self.state.spec.hyper("sigma", DEFAULT_SIGMA)
        } else if config.fine_tune {
            // relax the old scale toward the new fit; zero epochs leaves the
            // parameters untouched
            let epochs = (self.state.spec.hyper("epochs", 20.0) * config.epochs_scale).round()
                as usize;
            epochs_run = epochs;
            if epochs == 0 {
                self.sigma()
            } else {
                let rate = (self.state.spec.hyper("learning_rate", 0.5) * config.lr_scale)
                    .clamp(0.0, 1.0);
                let mut s = self.sigma();
                for _ in 0..epochs {
                    s += rate * (fitted - s);
                }
                s
            }
        } else {
            epochs_run = 1;
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
        let n_output = corpus.params.n_output;
        let samples = corpus.select(ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let mut entries = Vec::with_capacity(samples.len());
        for sample in samples {
            let agents = predicted_agents(sample);
            let means: Vec<Vec<[f64; 2]>> = agents
                .iter()
                .map(|(idx, _)| Self::mean_trajectory(&sample.agents[*idx], n_output))
                .collect();
            let mut joint_samples = Vec::with_capacity(k);
            let mut log_likelihoods = Vec::with_capacity(k);
            for draw in 0..k {
                let mut trajectories = Vec::with_capacity(agents.len());
                let mut ll = 0.0;
                for (a, mean) in means.iter().enumerate() {
                    let mut rng =
                        DetRng::new(draw_seed(seed, &sample.sample_id, draw, a));
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
        let n_output = sample.agents.iter().map(|a| a.future.len()).max().unwrap_or(0);
        let mut ll = 0.0;
        for agent in sample.predicted_agents() {
            let mean = Self::mean_trajectory(agent, n_output);
            ll += gaussian_log_density(&agent.future, &mean, sigma);
        }
        Ok(ll)
    }

    fn restore(&mut self, state: ModelState) -> Result<(), ModelError> {
        if state.spec.kind != ModelKind::ConstantVelocity {
            return Err(ModelError::KindMismatch {
                expected: ModelKind::ConstantVelocity.as_str().into(),
                found: state.spec.kind.as_str().into(),
            });
        }
        self.state = state;
        Ok(())
    }

    fn analytic_past_gradient(
        &self,
        sample: &Sample,
        victim: &str,
        loss: &LossSpec,
    ) -> Option<Result<Vec<[f64; 2]>, ModelError>> {
        Some(super::gradient::affine_past_gradient(self, sample, victim, loss, &|agent, grad_mean| {
            // mean_j = (j+2) p_last - (j+1) p_prev
            let n_in = agent.past.len();
            let mut g = vec![[0.0; 2]; n_in];
            for (j, gm) in grad_mean.iter().enumerate() {
                let m = (j + 1) as f64;
                g[n_in - 1][0] += (m + 1.0) * gm[0];
                g[n_in - 1][1] += (m + 1.0) * gm[1];
                if n_in >= 2 {
                    g[n_in - 2][0] -= m * gm[0];
                    g[n_in - 2][1] -= m * gm[1];
                }
            }
            g
        }))
    }
}

/// Log-density of `y` under an isotropic Gaussian centered at `mean`.
pub(crate) fn gaussian_log_density(y: &[[f64; 2]], mean: &[[f64; 2]], sigma: f64) -> f64 {
    let dims = (y.len() * 2) as f64;
    let mut sq = 0.0;
    for (a, b) in y.iter().zip(mean) {
        sq += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    }
    -0.5 * dims * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - sq / (2.0 * sigma * sigma)
}
