//! Linear autoregressive model: ridge regression from flattened past
//! displacements (agent-centered, so translation drops out) to future
//! displacements, solved in closed form, with a diagonal residual
//! covariance fitted for sampling. The prediction is affine in the past
//! positions, which keeps analytic loss gradients exact.
//!
//! Parameters: `weights` = row-major `[2*n_output] x [2*(n_input-1) + 1]`
//! map (bias last), `noise` = per-output-dimension residual scale,
//! `dims` = [n_input, n_output].

use super::{
    carve_validation, draw_seed, predicted_agents, JointSample, LossSpec, ModelError, ModelKind,
    ModelSpec, ModelState, PredictionSet, Predictor, SamplePrediction, TrainConfig, TrainReport,
};
use crate::rng::DetRng;
use crate::sample::{Corpus, Sample, SampleAgent, SampleId};

pub const DEFAULT_LAMBDA: f64 = 1e-8;
pub const DEFAULT_EPOCHS: f64 = 100.0;

pub struct LinearAr {
    state: ModelState,
    n_input: usize,
    n_output: usize,
}

/// Solves (A + lambda I) X = B for SPD A via Cholesky with two rounds of
/// iterative refinement; A is dim x dim row-major, B has `cols` columns.
fn solve_ridge(
    a: &[f64],
    b: &[f64],
    dim: usize,
    cols: usize,
    lambda: f64,
) -> Result<Vec<f64>, ModelError> {
    let mut m = a.to_vec();
    for i in 0..dim {
        m[i * dim + i] += lambda;
    }
    // Cholesky factorization m = L L^T (in place, lower triangle)
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = m[i * dim + j];
            for k in 0..j {
                sum -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(ModelError::Numerical(format!(
                        "normal matrix not positive definite at {i}"
                    )));
                }
                l[i * dim + i] = sum.sqrt();
            } else {
                l[i * dim + j] = sum / l[j * dim + j];
            }
        }
    }
    let solve_one = |rhs: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; dim];
        for i in 0..dim {
            let mut sum = rhs[i];
            for k in 0..i {
                sum -= l[i * dim + k] * y[k];
            }
            y[i] = sum / l[i * dim + i];
        }
        let mut x = vec![0.0; dim];
        for i in (0..dim).rev() {
            let mut sum = y[i];
            for k in (i + 1)..dim {
                sum -= l[k * dim + i] * x[k];
            }
            x[i] = sum / l[i * dim + i];
        }
        x
    };
    let mut x = vec![0.0; dim * cols];
    for c in 0..cols {
        let rhs: Vec<f64> = (0..dim).map(|i| b[i * cols + c]).collect();
        let mut sol = solve_one(&rhs);
        // iterative refinement against (A + lambda I)
        for _ in 0..2 {
            let mut resid = rhs.clone();
            for i in 0..dim {
                let mut acc = 0.0;
                for j in 0..dim {
                    acc += m[i * dim + j] * sol[j];
                }
                resid[i] -= acc;
            }
            let corr = solve_one(&resid);
            for i in 0..dim {
                sol[i] += corr[i];
            }
        }
        for i in 0..dim {
            x[i * cols + c] = sol[i];
        }
    }
    Ok(x)
}

impl LinearAr {
    pub fn init(spec: &ModelSpec) -> Self {
        Self { state: ModelState::untrained(spec.clone()), n_input: 0, n_output: 0 }
    }

    fn feature_dim(n_input: usize) -> usize {
        2 * (n_input - 1) + 1
    }

    /// Past displacements plus bias, in the agent-centered frame.
    fn features(agent: &SampleAgent) -> Vec<f64> {
        let mut x = Vec::with_capacity(Self::feature_dim(agent.past.len()));
        for w in agent.past.windows(2) {
            x.push(w[1][0] - w[0][0]);
            x.push(w[1][1] - w[0][1]);
        }
        x.push(1.0);
        x
    }

    /// Future displacements relative to the current position.
    fn targets(agent: &SampleAgent) -> Vec<f64> {
        let mut prev = agent.current();
        let mut y = Vec::with_capacity(agent.future.len() * 2);
        for p in &agent.future {
            y.push(p[0] - prev[0]);
            y.push(p[1] - prev[1]);
            prev = *p;
        }
        y
    }

    fn weights(&self) -> &[f64] {
        self.state.array("weights").unwrap_or(&[])
    }

    fn noise(&self) -> &[f64] {
        self.state.array("noise").unwrap_or(&[])
    }

    fn displacement_mean(&self, agent: &SampleAgent) -> Vec<f64> {
        let x = Self::features(agent);
        let d = Self::feature_dim(self.n_input);
        let out = 2 * self.n_output;
        let w = self.weights();
        (0..out)
            .map(|r| (0..d).map(|c| w[r * d + c] * x[c]).sum())
            .collect()
    }

    /// Mean trajectory in world coordinates: cumulative sum of predicted
    /// displacements from the current position.
    pub fn mean_trajectory(&self, agent: &SampleAgent) -> Vec<[f64; 2]> {
        let disp = self.displacement_mean(agent);
        let mut pos = agent.current();
        disp.chunks(2)
            .map(|d| {
                pos = [pos[0] + d[0], pos[1] + d[1]];
                pos
            })
            .collect()
    }

    fn design(
        &self,
        corpus: &Corpus,
        ids: &[SampleId],
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ModelError> {
        let samples = corpus.select(ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for sample in samples {
            for agent in sample.predicted_agents() {
                xs.push(Self::features(agent));
                ys.push(Self::targets(agent));
            }
        }
        if xs.is_empty() {
            return Err(ModelError::EmptyTrain);
        }
        Ok((xs, ys))
    }

    fn fit_metrics(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> (f64, Vec<f64>) {
        let out = 2 * self.n_output;
        let d = Self::feature_dim(self.n_input);
        let w = self.weights();
        let mut per_dim_sq = vec![0.0; out];
        for (x, y) in xs.iter().zip(ys) {
            for r in 0..out {
                let pred: f64 = (0..d).map(|c| w[r * d + c] * x[c]).sum();
                per_dim_sq[r] += (pred - y[r]).powi(2);
            }
        }
        let n = xs.len() as f64;
        let rms = (per_dim_sq.iter().sum::<f64>() / (n * out as f64)).sqrt();
        let noise: Vec<f64> = per_dim_sq.iter().map(|s| (s / n).sqrt()).collect();
        (rms, noise)
    }
}

impl Predictor for LinearAr {
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
        self.n_input = corpus.params.n_input;
        self.n_output = corpus.params.n_output;
        let d = Self::feature_dim(self.n_input);
        let out = 2 * self.n_output;
        let (fit_ids, val_ids) =
            carve_validation(train_ids, config.validation_fraction, config.seed);
        let (xs, ys) = self.design(corpus, &fit_ids)?;
        let n = xs.len();

        let epochs_run;
        if config.fine_tune && self.state.trained {
            if self.weights().len() != out * d {
                return Err(ModelError::Shape(
                    "fine-tune data params differ from the base model".into(),
                ));
            }
            // gradient steps on the ridge objective from the current weights
            let epochs = (self.state.spec.hyper("epochs", DEFAULT_EPOCHS) * config.epochs_scale)
                .round() as usize;
            epochs_run = epochs;
            if epochs > 0 {
                let lambda = self.state.spec.hyper("lambda", DEFAULT_LAMBDA);
                // Lipschitz bound via the trace of X^T X
                let trace: f64 =
                    xs.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
                        / n as f64;
                let lr = self.state.spec.hyper("learning_rate", 1.0) * config.lr_scale
                    / (2.0 * (trace + lambda)).max(1e-12);
                let mut w = self.weights().to_vec();
                for _ in 0..epochs {
                    let mut grad = vec![0.0; out * d];
                    for (x, y) in xs.iter().zip(&ys) {
                        for r in 0..out {
                            let pred: f64 = (0..d).map(|c| w[r * d + c] * x[c]).sum();
                            let err = pred - y[r];
                            for c in 0..d {
                                grad[r * d + c] += 2.0 * err * x[c] / n as f64;
                            }
                        }
                    }
                    for (wi, gi) in w.iter_mut().zip(&grad) {
                        *wi -= lr * gi;
                    }
                    for r in 0..out {
                        for c in 0..d {
                            w[r * d + c] -= lr * 2.0 * lambda * w[r * d + c];
                        }
                    }
                }
                self.state.set_array("weights", w);
                let (_, noise) = self.fit_metrics(&xs, &ys);
                self.state.set_array("noise", noise);
            }
        } else {
            // closed-form ridge solution of the normal equations
            let mut lambda = self.state.spec.hyper("lambda", DEFAULT_LAMBDA);
            let mut a = vec![0.0; d * d];
            let mut b = vec![0.0; d * out];
            for (x, y) in xs.iter().zip(&ys) {
                for i in 0..d {
                    for j in 0..d {
                        a[i * d + j] += x[i] * x[j];
                    }
                    for r in 0..out {
                        b[i * out + r] += x[i] * y[r];
                    }
                }
            }
            let mut solution = None;
            for _ in 0..8 {
                match solve_ridge(&a, &b, d, out, lambda) {
                    Ok(s) => {
                        solution = Some(s);
                        break;
                    }
                    // singular normal equations: retry with a larger ridge
                    Err(_) => lambda *= 10.0,
                }
            }
            let wt = solution.ok_or_else(|| {
                ModelError::Numerical("normal equations singular even after raising lambda".into())
            })?;
            // wt is d x out (feature-major); store row-major out x d
            let mut w = vec![0.0; out * d];
            for i in 0..d {
                for r in 0..out {
                    w[r * d + i] = wt[i * out + r];
                }
            }
            self.state.set_array("weights", w);
            let (_, noise) = self.fit_metrics(&xs, &ys);
            self.state.set_array("noise", noise);
            epochs_run = 1;
        }

        self.state.set_array("dims", vec![self.n_input as f64, self.n_output as f64]);
        self.state.trained = true;

        let (train_metric, _) = self.fit_metrics(&xs, &ys);
        let validation_metric = match val_ids.is_empty() {
            true => None,
            false => {
                let (vx, vy) = self.design(corpus, &val_ids)?;
                Some(self.fit_metrics(&vx, &vy).0)
            }
        };
        Ok(TrainReport { samples_used: n, epochs_run, train_metric, validation_metric })
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
        if corpus.params.n_input != self.n_input || corpus.params.n_output != self.n_output {
            return Err(ModelError::Shape(format!(
                "corpus params ({}, {}) differ from trained dims ({}, {})",
                corpus.params.n_input, corpus.params.n_output, self.n_input, self.n_output
            )));
        }
        let noise = self.noise().to_vec();
        let samples = corpus.select(ids).map_err(|e| ModelError::Io(e.to_string()))?;
        let mut entries = Vec::with_capacity(samples.len());
        for sample in samples {
            let agents = predicted_agents(sample);
            let disp_means: Vec<Vec<f64>> = agents
                .iter()
                .map(|(idx, _)| self.displacement_mean(&sample.agents[*idx]))
                .collect();
            let mut joint_samples = Vec::with_capacity(k);
            let mut log_likelihoods = Vec::with_capacity(k);
            for draw in 0..k {
                let mut trajectories = Vec::with_capacity(agents.len());
                let mut ll = 0.0;
                for (a, (idx, _)) in agents.iter().enumerate() {
                    let mut rng = DetRng::new(draw_seed(seed, &sample.sample_id, draw, a));
                    let mut disp = disp_means[a].clone();
                    for (r, d) in disp.iter_mut().enumerate() {
                        if noise[r] > 0.0 {
                            let z = rng.gauss();
                            *d += noise[r] * z;
                            ll += -0.5 * z * z
                                - (noise[r] * (2.0 * std::f64::consts::PI).sqrt()).ln();
                        }
                    }
                    let mut pos = sample.agents[*idx].current();
                    let traj: Vec<[f64; 2]> = disp
                        .chunks(2)
                        .map(|d| {
                            pos = [pos[0] + d[0], pos[1] + d[1]];
                            pos
                        })
                        .collect();
                    trajectories.push(traj);
                }
                joint_samples.push(JointSample { trajectories });
                log_likelihoods.push(ll);
            }
            let any_noise = noise.iter().any(|&s| s > 0.0);
            entries.push(SamplePrediction {
                sample_id: sample.sample_id.clone(),
                agent_ids: agents.into_iter().map(|(_, id)| id).collect(),
                joint_samples,
                log_likelihoods: any_noise.then_some(log_likelihoods),
                behavior_probs: None,
            });
        }
        Ok(PredictionSet { model_id: self.state.spec.model_id.clone(), k, seed, entries })
    }

    fn log_likelihood(&self, sample: &Sample) -> Result<f64, ModelError> {
        if !self.state.trained {
            return Err(ModelError::Untrained);
        }
        let floor = self.state.spec.hyper("noise_floor", 0.0);
        let noise = self.noise();
        let mut ll = 0.0;
        for agent in sample.predicted_agents() {
            let mean = self.displacement_mean(agent);
            let target = Self::targets(agent);
            for r in 0..mean.len() {
                let s = noise[r].max(floor);
                if !(s > 0.0) {
                    return Err(ModelError::Degenerate(format!("noise[{r}] is zero")));
                }
                let z = (target[r] - mean[r]) / s;
                ll += -0.5 * z * z - (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
            }
        }
        Ok(ll)
    }

    fn restore(&mut self, state: ModelState) -> Result<(), ModelError> {
        if state.spec.kind != ModelKind::LinearAr {
            return Err(ModelError::KindMismatch {
                expected: ModelKind::LinearAr.as_str().into(),
                found: state.spec.kind.as_str().into(),
            });
        }
        if let Some(dims) = state.array("dims") {
            self.n_input = dims[0] as usize;
            self.n_output = dims[1] as usize;
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
        let d = Self::feature_dim(self.n_input);
        let out = 2 * self.n_output;
        let w = self.weights().to_vec();
        Some(super::gradient::affine_past_gradient(
            self,
            sample,
            victim,
            loss,
            &move |agent, grad_mean| {
                // position path: y_t = current + sum_{s<=t} disp_s, so the
                // gradient w.r.t. displacement s is the suffix sum over t>=s
                let n_in = agent.past.len();
                let mut grad_disp = vec![0.0; out];
                let mut suffix = [0.0, 0.0];
                for t in (0..grad_mean.len()).rev() {
                    suffix[0] += grad_mean[t][0];
                    suffix[1] += grad_mean[t][1];
                    grad_disp[2 * t] = suffix[0];
                    grad_disp[2 * t + 1] = suffix[1];
                }
                // through the weight matrix into the feature vector
                let mut grad_x = vec![0.0; d];
                for r in 0..out {
                    for c in 0..d {
                        grad_x[c] += w[r * d + c] * grad_disp[r];
                    }
                }
                // features are past differences; the bias contributes nothing
                let mut g = vec![[0.0; 2]; n_in];
                for j in 0..n_in - 1 {
                    let gx = grad_x[2 * j];
                    let gy = grad_x[2 * j + 1];
                    g[j + 1][0] += gx;
                    g[j + 1][1] += gy;
                    g[j][0] -= gx;
                    g[j][1] -= gy;
                }
                // the anchor (current position) shifts every output step
                let total: [f64; 2] = grad_mean
                    .iter()
                    .fold([0.0, 0.0], |acc, gm| [acc[0] + gm[0], acc[1] + gm[1]]);
                g[n_in - 1][0] += total[0];
                g[n_in - 1][1] += total[1];
                g
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, ScenarioKind, SyntheticConfig};
    use crate::sample::{assemble_corpus, CorpusSource};
    use crate::scene::{DataParams, T0Policy};

    fn corpus(noise: f64, seed: u64) -> Corpus {
        let set = generate_synthetic(&SyntheticConfig {
            scenario_kind: ScenarioKind::StraightRoad,
            scene_count: 16,
            agents_per_scene: 2,
            native_dt: 0.25,
            duration: 10.0,
            noise_sigma: noise,
            seed,
            gap_profile: Default::default(),
            dataset_id: "synthetic".into(),
            location_id: "synthloc".into(),
        })
        .unwrap();
        let params = DataParams::new(5, 4, 0.5, T0Policy::FirstAvailable);
        assemble_corpus(&[CorpusSource::plain(&set)], &params).unwrap()
    }

    #[test]
    fn noiseless_linear_corpus_fits_exactly() {
        let corpus = corpus(0.0, 1);
        let mut model = LinearAr::init(&ModelSpec::new("lin", ModelKind::LinearAr));
        let report =
            model.train(&corpus, &corpus.sample_ids(), &TrainConfig::default()).unwrap();
        assert!(report.train_metric < 1e-6, "rms {}", report.train_metric);
        if let Some(v) = report.validation_metric {
            assert!(v < 1e-6, "validation rms {v}");
        }
    }

    #[test]
    fn predictions_deterministic_and_batch_stable() {
        let corpus = corpus(0.08, 2);
        let mut model = LinearAr::init(&ModelSpec::new("lin", ModelKind::LinearAr));
        model.train(&corpus, &corpus.sample_ids(), &TrainConfig::default()).unwrap();
        let ids = corpus.sample_ids();
        let a = model.predict(&corpus, &ids, 6, 5).unwrap();
        let b = model.predict(&corpus, &ids, 6, 5).unwrap();
        assert_eq!(a, b);
        let solo = model.predict(&corpus, &ids[2..3], 6, 5).unwrap();
        assert_eq!(a.entries[2], solo.entries[0]);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = ModelSpec::new("lin", ModelKind::LinearAr).with_seed(3);
        let a = LinearAr::init(&spec);
        let b = LinearAr::init(&spec);
        assert_eq!(
            serde_json::to_string(a.state()).unwrap(),
            serde_json::to_string(b.state()).unwrap()
        );
    }

    #[test]
    fn fine_tune_zero_epochs_is_identity() {
        let c1 = corpus(0.05, 3);
        let c2 = corpus(0.05, 4);
        let mut model = LinearAr::init(&ModelSpec::new("lin", ModelKind::LinearAr));
        model.train(&c1, &c1.sample_ids(), &TrainConfig::default()).unwrap();
        let before = serde_json::to_string(&model.state().params).unwrap();
        let config = TrainConfig { epochs_scale: 0.0, fine_tune: true, ..Default::default() };
        model.train(&c2, &c2.sample_ids(), &config).unwrap();
        let after = serde_json::to_string(&model.state().params).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn fine_tune_moves_toward_new_data() {
        let c1 = corpus(0.05, 3);
        let c2 = corpus(0.3, 4);
        let mut model = LinearAr::init(&ModelSpec::new("lin", ModelKind::LinearAr));
        model.train(&c1, &c1.sample_ids(), &TrainConfig::default()).unwrap();
        let before = model.weights().to_vec();
        let config = TrainConfig::fine_tune_default(0);
        model.train(&c2, &c2.sample_ids(), &config).unwrap();
        let after = model.weights().to_vec();
        assert_ne!(before, after);
        assert!(model.state().all_finite());
    }

    #[test]
    fn non_predicted_bystanders_do_not_enter_training() {
        // training uses predicted agents only, so scrambling a bystander's
        // positions must not change the fit
        let mut c = corpus(0.02, 5);
        for s in &mut c.samples {
            s.agents[1].predicted = false;
        }
        let mut model = LinearAr::init(&ModelSpec::new("lin", ModelKind::LinearAr));
        model.train(&c, &c.sample_ids(), &TrainConfig::default()).unwrap();
        let before = model.weights().to_vec();
        for s in &mut c.samples {
            for p in &mut s.agents[1].past {
                p[0] += 999.0;
            }
        }
        let mut model2 = LinearAr::init(&ModelSpec::new("lin", ModelKind::LinearAr));
        model2.train(&c, &c.sample_ids(), &TrainConfig::default()).unwrap();
        assert_eq!(before, model2.weights());
    }
}
