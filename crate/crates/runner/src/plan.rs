//! The simulation file: a TOML document declaring datasets, perturbations,
//! data parameter settings, splits, models, and metrics whose cross product
//! the runner evaluates. Unknown keys are rejected; semantic errors carry
//! the offending path in the document tree.

use crate::RunnerError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use step_core::ingest::SyntheticConfig;
use step_core::metrics::{MetricConfig, MetricId};
use step_core::model::{ModelKind, ModelSpec};
use step_core::perturb::{PerturbKind, PerturbationSpec, VictimSelector};
use step_core::scene::{DataParams, T0Policy};
use step_core::split::{SplitMethod, SplitSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDataset {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    /// Directory holding tracks.csv and meta.csv.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_dir: Option<PathBuf>,
    /// Directory holding a previously converted scene set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_set_dir: Option<PathBuf>,
}

/// When a perturbation touches the corpus: everything, or only the
/// evaluation side of the split (models then train on clean data).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbScope {
    All,
    TestOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanPerturbation {
    pub id: String,
    pub kind: PerturbKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_model: Option<String>,
    #[serde(default)]
    pub victim_agent: VictimSelector,
    #[serde(default)]
    pub seed: u64,
    /// Default: attacks perturb only the test side, white noise everything.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<PerturbScope>,
}

impl PlanPerturbation {
    pub fn spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            id: self.id.clone(),
            kind: self.kind.clone(),
            target_model: self.target_model.clone(),
            victim_agent: self.victim_agent,
            seed: self.seed,
        }
    }

    pub fn resolved_scope(&self) -> PerturbScope {
        self.scope.unwrap_or(match self.kind {
            PerturbKind::WhiteNoise { .. } => PerturbScope::All,
            _ => PerturbScope::TestOnly,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPair {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanCorpus {
    pub id: String,
    pub pairs: Vec<CorpusPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDataParams {
    pub n_input: usize,
    pub n_output: usize,
    pub dt: f64,
    #[serde(default = "default_t0_policy")]
    pub t0_policy: T0Policy,
}

fn default_t0_policy() -> T0Policy {
    T0Policy::FirstAvailable
}

impl PlanDataParams {
    pub fn data_params(&self) -> DataParams {
        DataParams::new(self.n_input, self.n_output, self.dt, self.t0_policy.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSplit {
    pub id: String,
    pub method: PlanSplitMethod,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub scene_coherent: bool,
}

fn default_true() -> bool {
    true
}

/// Split methods as written in the plan; cross-validation without an
/// explicit fold expands into one split per fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSplitMethod {
    Random {
        test_fraction: f64,
    },
    ByLocation {
        #[serde(default)]
        test_locations: Vec<String>,
        #[serde(default)]
        test_datasets: Vec<String>,
    },
    CrossValidation {
        n_folds: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fold_index: Option<usize>,
    },
    ByCriticality {
        test_fraction: f64,
    },
    Predefined {
        label_key: String,
    },
}

impl PlanSplit {
    /// (variant id, spec, fold index if any), one per expanded fold.
    pub fn expand(&self) -> Vec<(String, SplitSpec, Option<usize>)> {
        let base = |method: SplitMethod| SplitSpec {
            method,
            seed: self.seed,
            scene_coherent: self.scene_coherent,
        };
        match &self.method {
            PlanSplitMethod::Random { test_fraction } => vec![(
                self.id.clone(),
                base(SplitMethod::Random { test_fraction: *test_fraction }),
                None,
            )],
            PlanSplitMethod::ByLocation { test_locations, test_datasets } => vec![(
                self.id.clone(),
                base(SplitMethod::ByLocation {
                    test_locations: test_locations.clone(),
                    test_datasets: test_datasets.clone(),
                }),
                None,
            )],
            PlanSplitMethod::ByCriticality { test_fraction } => vec![(
                self.id.clone(),
                base(SplitMethod::ByCriticality { test_fraction: *test_fraction }),
                None,
            )],
            PlanSplitMethod::Predefined { label_key } => vec![(
                self.id.clone(),
                base(SplitMethod::Predefined { label_key: label_key.clone() }),
                None,
            )],
            PlanSplitMethod::CrossValidation { n_folds, fold_index } => match fold_index {
                Some(fold) => vec![(
                    format!("{}_f{fold}", self.id),
                    base(SplitMethod::CrossValidation { n_folds: *n_folds, fold_index: *fold }),
                    Some(*fold),
                )],
                None => (0..*n_folds)
                    .map(|fold| {
                        (
                            format!("{}_f{fold}", self.id),
                            base(SplitMethod::CrossValidation {
                                n_folds: *n_folds,
                                fold_index: fold,
                            }),
                            Some(fold),
                        )
                    })
                    .collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanModel {
    pub id: String,
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl PlanModel {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            model_id: self.id.clone(),
            kind: self.kind,
            command: self.command.clone(),
            hyperparameters: self.hyperparameters.clone(),
            seed: self.seed,
        }
    }
}

/// Generalization workflow: train on a base slice (A), fine-tune on the
/// target train slice (AR), train on the target train slice alone (R), and
/// evaluate all three on the target test slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanGeneralization {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_dataset: Option<String>,
    #[serde(default = "default_target_fraction")]
    pub test_fraction: f64,
    /// A twentieth of the epochs by default.
    #[serde(default = "default_epochs_scale")]
    pub epochs_scale: f64,
    /// 0.4 times the learning rate by default.
    #[serde(default = "default_lr_scale")]
    pub lr_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_target_fraction() -> f64 {
    0.5
}

fn default_epochs_scale() -> f64 {
    1.0 / 20.0
}

fn default_lr_scale() -> f64 {
    0.4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    cache_dir: Option<PathBuf>,
    #[serde(default)]
    seeds: Option<Vec<u64>>,
    #[serde(default)]
    prediction_k: Option<usize>,
    #[serde(default)]
    eval_batch_size: Option<usize>,
    #[serde(default)]
    parallelism: Option<usize>,
    #[serde(default)]
    datasets: Vec<PlanDataset>,
    #[serde(default)]
    perturbations: Vec<PlanPerturbation>,
    #[serde(default)]
    corpora: Vec<PlanCorpus>,
    #[serde(default)]
    data_params: Vec<PlanDataParams>,
    #[serde(default)]
    splits: Vec<PlanSplit>,
    #[serde(default)]
    models: Vec<PlanModel>,
    #[serde(default)]
    metrics: Option<Vec<String>>,
    #[serde(default)]
    metric_config: Option<MetricConfig>,
    #[serde(default)]
    generalization: Option<PlanGeneralization>,
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub prediction_k: usize,
    pub eval_batch_size: usize,
    pub parallelism: usize,
    pub datasets: Vec<PlanDataset>,
    pub perturbations: Vec<PlanPerturbation>,
    pub corpora: Vec<PlanCorpus>,
    pub data_params: Vec<PlanDataParams>,
    pub splits: Vec<PlanSplit>,
    pub models: Vec<PlanModel>,
    pub metrics: Vec<MetricId>,
    pub metric_config: MetricConfig,
    pub generalization: Option<PlanGeneralization>,
}

impl ExperimentPlan {
    pub fn dataset(&self, id: &str) -> Option<&PlanDataset> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn perturbation(&self, id: &str) -> Option<&PlanPerturbation> {
        self.perturbations.iter().find(|p| p.id == id)
    }

    pub fn model(&self, id: &str) -> Option<&PlanModel> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn corpus(&self, id: &str) -> Option<&PlanCorpus> {
        self.corpora.iter().find(|c| c.id == id)
    }
}

/// Parses and validates a simulation file.
pub fn parse_simulation_file(path: &Path) -> Result<ExperimentPlan, RunnerError> {
    let raw_text = std::fs::read_to_string(path).map_err(|e| crate::io_err(e, path))?;
    let raw: RawPlan = toml::from_str(&raw_text)
        .map_err(|e| RunnerError::config("root", e.to_string()))?;
    resolve_plan(raw, path)
}

fn resolve_plan(raw: RawPlan, path: &Path) -> Result<ExperimentPlan, RunnerError> {
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let output_dir = {
        let dir = raw.output_dir.unwrap_or_else(|| PathBuf::from("step_out"));
        if dir.is_absolute() {
            dir
        } else {
            base.join(dir)
        }
    };
    let cache_dir = match raw.cache_dir {
        Some(dir) if dir.is_absolute() => dir,
        Some(dir) => base.join(dir),
        None => output_dir.join("cache"),
    };

    if raw.datasets.is_empty() {
        return Err(RunnerError::config("root.datasets", "at least one dataset is required"));
    }
    for (i, d) in raw.datasets.iter().enumerate() {
        let sources =
            [d.synthetic.is_some(), d.csv_dir.is_some(), d.scene_set_dir.is_some()];
        let count = sources.iter().filter(|&&s| s).count();
        if count != 1 {
            return Err(RunnerError::config(
                format!("root.datasets[{i}]"),
                "exactly one of synthetic, csv_dir, scene_set_dir is required",
            ));
        }
        if let Some(cfg) = &d.synthetic {
            cfg.validate().map_err(|e| {
                RunnerError::config(format!("root.datasets[{i}].synthetic"), e.to_string())
            })?;
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for (i, d) in raw.datasets.iter().enumerate() {
        if !seen.insert(&d.id) {
            return Err(RunnerError::config(
                format!("root.datasets[{i}].id"),
                format!("duplicate dataset id '{}'", d.id),
            ));
        }
    }

    let model_ids: Vec<&str> = raw.models.iter().map(|m| m.id.as_str()).collect();
    for (i, p) in raw.perturbations.iter().enumerate() {
        p.spec().validate().map_err(|e| {
            RunnerError::config(format!("root.perturbations[{i}]"), e.to_string())
        })?;
        if let Some(target) = &p.target_model {
            if !model_ids.contains(&target.as_str()) {
                return Err(RunnerError::config(
                    format!("root.perturbations[{i}].target_model"),
                    format!("unknown model id '{target}'"),
                ));
            }
        }
    }

    // default corpus: every dataset, unperturbed
    let corpora = if raw.corpora.is_empty() {
        vec![PlanCorpus {
            id: "all".into(),
            pairs: raw
                .datasets
                .iter()
                .map(|d| CorpusPair { dataset: d.id.clone(), perturbation: None })
                .collect(),
        }]
    } else {
        raw.corpora
    };
    for (i, c) in corpora.iter().enumerate() {
        if c.pairs.is_empty() {
            return Err(RunnerError::config(
                format!("root.corpora[{i}].pairs"),
                "a corpus needs at least one dataset pair",
            ));
        }
        for (j, pair) in c.pairs.iter().enumerate() {
            if !raw.datasets.iter().any(|d| d.id == pair.dataset) {
                return Err(RunnerError::config(
                    format!("root.corpora[{i}].pairs[{j}].dataset"),
                    format!("unknown dataset id '{}'", pair.dataset),
                ));
            }
            if let Some(p) = &pair.perturbation {
                if !raw.perturbations.iter().any(|x| &x.id == p) {
                    return Err(RunnerError::config(
                        format!("root.corpora[{i}].pairs[{j}].perturbation"),
                        format!("unknown perturbation id '{p}'"),
                    ));
                }
            }
        }
    }

    if raw.data_params.is_empty() {
        return Err(RunnerError::config(
            "root.data_params",
            "at least one data parameter setting is required",
        ));
    }
    for (i, a) in raw.data_params.iter().enumerate() {
        a.data_params().validate().map_err(|e| {
            RunnerError::config(format!("root.data_params[{i}]"), e)
        })?;
    }

    let generalization = raw.generalization;
    if raw.splits.is_empty() && generalization.is_none() {
        return Err(RunnerError::config(
            "root.splits",
            "at least one split (or a generalization block) is required",
        ));
    }
    for (i, s) in raw.splits.iter().enumerate() {
        for (_, spec, _) in s.expand() {
            spec.validate().map_err(|e| {
                RunnerError::config(format!("root.splits[{i}]"), e.to_string())
            })?;
        }
    }

    if raw.models.is_empty() {
        return Err(RunnerError::config("root.models", "at least one model is required"));
    }
    for (i, m) in raw.models.iter().enumerate() {
        if m.kind == ModelKind::ExternalPlugin && m.command.is_none() {
            return Err(RunnerError::config(
                format!("root.models[{i}].command"),
                "external_plugin models need a command",
            ));
        }
    }

    let metric_names = raw
        .metrics
        .ok_or_else(|| RunnerError::config("root.metrics", "missing required key"))?;
    if metric_names.is_empty() {
        return Err(RunnerError::config("root.metrics", "at least one metric is required"));
    }
    let mut metrics = Vec::with_capacity(metric_names.len());
    for (i, name) in metric_names.iter().enumerate() {
        metrics.push(MetricId::parse(name).ok_or_else(|| {
            RunnerError::config(
                format!("root.metrics[{i}]"),
                format!("unknown metric id '{name}'"),
            )
        })?);
    }

    if let Some(g) = &generalization {
        if g.base_location.is_none() == g.base_dataset.is_none() {
            return Err(RunnerError::config(
                "root.generalization",
                "exactly one of base_location, base_dataset is required",
            ));
        }
        if g.target_location.is_none() == g.target_dataset.is_none() {
            return Err(RunnerError::config(
                "root.generalization",
                "exactly one of target_location, target_dataset is required",
            ));
        }
        if !(g.test_fraction > 0.0 && g.test_fraction < 1.0) {
            return Err(RunnerError::config(
                "root.generalization.test_fraction",
                format!("must be in (0,1), got {}", g.test_fraction),
            ));
        }
        if let Some(c) = &g.corpus {
            if !corpora.iter().any(|x| &x.id == c) {
                return Err(RunnerError::config(
                    "root.generalization.corpus",
                    format!("unknown corpus id '{c}'"),
                ));
            }
        }
    }

    let seeds = raw.seeds.unwrap_or_else(|| vec![0]);
    if seeds.is_empty() {
        return Err(RunnerError::config("root.seeds", "seed list must be non-empty"));
    }

    // resolve relative dataset paths against the plan file location
    let datasets = raw
        .datasets
        .into_iter()
        .map(|mut d| {
            if let Some(p) = d.csv_dir.take() {
                d.csv_dir = Some(if p.is_absolute() { p } else { base.join(p) });
            }
            if let Some(p) = d.scene_set_dir.take() {
                d.scene_set_dir = Some(if p.is_absolute() { p } else { base.join(p) });
            }
            d
        })
        .collect();

    Ok(ExperimentPlan {
        output_dir,
        cache_dir,
        seeds,
        prediction_k: raw.prediction_k.unwrap_or(6),
        eval_batch_size: raw.eval_batch_size.unwrap_or(64).max(1),
        parallelism: raw.parallelism.unwrap_or(1).max(1),
        datasets,
        perturbations: raw.perturbations,
        corpora,
        data_params: raw.data_params,
        splits: raw.splits,
        models: raw.models,
        metrics,
        metric_config: raw.metric_config.unwrap_or_default(),
        generalization,
    })
}
