//! Case enumeration: the full cross product of configured modules, with
//! statically infeasible combinations marked as skips rather than silently
//! omitted.

use crate::plan::{ExperimentPlan, PerturbScope, PlanDataset, PlanGeneralization, PlanPerturbation};
use crate::RunnerError;
use serde::{Deserialize, Serialize};
use step_core::ingest::ScenarioKind;
use step_core::metrics::{metric_by_id, MetricConfig, MetricId};
use step_core::model::{ModelKind, ModelSpec};
use step_core::scene::DataParams;
use step_core::split::{SplitMethod, SplitSpec};

pub const SKIP_INFEASIBLE_SPLIT: &str = "INFEASIBLE_SPLIT";
pub const SKIP_NO_BEHAVIOR_DATA: &str = "NO_BEHAVIOR_DATA";
pub const SKIP_NO_TRAJECTORY_OUTPUT: &str = "NO_TRAJECTORY_OUTPUT";
pub const SKIP_SINGLE_CLASS: &str = "SINGLE_CLASS";
pub const SKIP_NO_SAMPLES: &str = "NO_SAMPLES";

/// Training provenance of the evaluated model within a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLabel {
    /// Ordinary split training.
    Std,
    /// Trained on the base slice only.
    A,
    /// Base-trained, then fine-tuned on the target train slice.
    Ar,
    /// Trained on the target train slice only.
    R,
}

impl SourceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceLabel::Std => "std",
            SourceLabel::A => "A",
            SourceLabel::Ar => "AR",
            SourceLabel::R => "R",
        }
    }
}

/// One (dataset, perturbation) pair with the dataset identified by content.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedPair {
    pub dataset_id: String,
    /// Content hash of the dataset source (config or file bytes).
    pub dataset_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<ResolvedPerturbation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedPerturbation {
    pub id: String,
    pub spec: step_core::perturb::PerturbationSpec,
    pub scope: PerturbScope,
    /// Target model spec for attacks, resolved from the plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_spec: Option<ModelSpec>,
}

/// Everything that determines a case's result; its canonical JSON is the
/// case hash input, so the hash is stable across runs and platforms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedCase {
    pub corpus_id: String,
    pub pairs: Vec<ResolvedPair>,
    pub params: DataParams,
    pub split_id: String,
    pub split: SplitSpec,
    pub model: ModelSpec,
    pub metric: MetricId,
    pub metric_config: MetricConfig,
    pub prediction_k: usize,
    pub seed: u64,
    pub source: SourceLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generalization: Option<ResolvedGeneralization>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedGeneralization {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_dataset: Option<String>,
    pub test_fraction: f64,
    pub epochs_scale: f64,
    pub lr_scale: f64,
    pub seed: u64,
}

impl ResolvedGeneralization {
    pub fn from_plan(g: &PlanGeneralization) -> Self {
        Self {
            base_location: g.base_location.clone(),
            base_dataset: g.base_dataset.clone(),
            target_location: g.target_location.clone(),
            target_dataset: g.target_dataset.clone(),
            test_fraction: g.test_fraction,
            epochs_scale: g.epochs_scale,
            lr_scale: g.lr_scale,
            seed: g.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseStatus {
    Runnable,
    Skipped(&'static str),
}

#[derive(Debug, Clone)]
pub struct ExperimentCase {
    pub index: usize,
    pub case_hash: String,
    pub resolved: ResolvedCase,
    /// Statically known feasibility; runtime checks may still skip.
    pub static_skip: Option<&'static str>,
}

/// Content key of a dataset source: synthetic configs hash their config,
/// file-backed sources hash their bytes so edits invalidate the cache.
pub fn dataset_content_key(dataset: &PlanDataset) -> Result<String, RunnerError> {
    let mut kb = crate::cache::KeyBuilder::new("dataset").raw(&dataset.id);
    if let Some(cfg) = &dataset.synthetic {
        return Ok(kb.field(cfg).finish());
    }
    if let Some(dir) = &dataset.csv_dir {
        for name in ["tracks.csv", "meta.csv"] {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| crate::io_err(e, &path))?;
            kb = kb.raw(name).raw(&crate::cache::hex_digest(&bytes));
        }
        return Ok(kb.finish());
    }
    if let Some(dir) = &dataset.scene_set_dir {
        let manifest = dir.join("manifest.json");
        let bytes = std::fs::read(&manifest).map_err(|e| crate::io_err(e, &manifest))?;
        kb = kb.raw(&crate::cache::hex_digest(&bytes));
        let scenes = dir.join("scenes");
        let mut files: Vec<_> = std::fs::read_dir(&scenes)
            .map_err(|e| crate::io_err(e, &scenes))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        files.sort();
        for f in files {
            let bytes = std::fs::read(&f).map_err(|e| crate::io_err(e, &f))?;
            kb = kb.raw(&crate::cache::hex_digest(&bytes));
        }
        return Ok(kb.finish());
    }
    Err(RunnerError::config(
        format!("root.datasets[{}]", dataset.id),
        "dataset has no source",
    ))
}

/// Statically known: can this dataset ever carry gap-acceptance labels?
fn behavior_capable(dataset: &PlanDataset) -> bool {
    match &dataset.synthetic {
        Some(cfg) => cfg.scenario_kind == ScenarioKind::RoundaboutGap,
        // file-backed sources are unknown statically; the runtime check
        // skips if nothing is labeled
        None => dataset.scene_set_dir.is_some(),
    }
}

fn resolve_perturbation(
    plan: &ExperimentPlan,
    p: &PlanPerturbation,
) -> ResolvedPerturbation {
    ResolvedPerturbation {
        id: p.id.clone(),
        spec: p.spec(),
        scope: p.resolved_scope(),
        target_spec: p
            .target_model
            .as_ref()
            .and_then(|id| plan.model(id))
            .map(|m| m.spec()),
    }
}

fn static_skip_for(
    plan: &ExperimentPlan,
    pairs: &[(String, Option<ResolvedPerturbation>)],
    split: &SplitSpec,
    model: &ModelSpec,
    metric: MetricId,
) -> Option<&'static str> {
    let def = metric_by_id(metric);
    if def.needs_trajectories && model.kind == ModelKind::LogisticBehavior {
        return Some(SKIP_NO_TRAJECTORY_OUTPUT);
    }
    if def.needs_behavior {
        let any_capable = pairs.iter().any(|(id, _)| {
            plan.dataset(id).map(behavior_capable).unwrap_or(false)
        });
        if !any_capable {
            return Some(SKIP_NO_BEHAVIOR_DATA);
        }
    }
    if let SplitMethod::ByLocation { test_datasets, test_locations } = &split.method {
        if !test_datasets.is_empty() {
            let in_corpus: Vec<&String> = pairs
                .iter()
                .map(|(id, _)| id)
                .filter(|id| test_datasets.contains(id))
                .collect();
            // hold-out must leave both sides non-empty
            if in_corpus.is_empty() || in_corpus.len() == pairs.len() {
                if test_locations.is_empty() {
                    return Some(SKIP_INFEASIBLE_SPLIT);
                }
            }
        }
    }
    None
}

/// Enumerates the full cross product, generalization triples included.
pub fn enumerate_cases(plan: &ExperimentPlan) -> Result<Vec<ExperimentCase>, RunnerError> {
    let mut dataset_keys = std::collections::BTreeMap::new();
    for d in &plan.datasets {
        dataset_keys.insert(d.id.clone(), dataset_content_key(d)?);
    }
    let mut cases = Vec::new();
    let push = |resolved: ResolvedCase, static_skip: Option<&'static str>, cases: &mut Vec<ExperimentCase>| {
        let case_hash = crate::cache::content_key("case", &[&resolved]);
        cases.push(ExperimentCase { index: cases.len(), case_hash, resolved, static_skip });
    };

    for corpus in &plan.corpora {
        let pairs: Vec<ResolvedPair> = corpus
            .pairs
            .iter()
            .map(|pair| ResolvedPair {
                dataset_id: pair.dataset.clone(),
                dataset_key: dataset_keys[&pair.dataset].clone(),
                perturbation: pair
                    .perturbation
                    .as_ref()
                    .and_then(|id| plan.perturbation(id))
                    .map(|p| resolve_perturbation(plan, p)),
            })
            .collect();
        let pair_ids: Vec<(String, Option<ResolvedPerturbation>)> = pairs
            .iter()
            .map(|p| (p.dataset_id.clone(), p.perturbation.clone()))
            .collect();
        for params in &plan.data_params {
            for split in &plan.splits {
                for (_variant_id, split_spec, _fold) in split.expand() {
                    for model in &plan.models {
                        for &metric in &plan.metrics {
                            for &seed in &plan.seeds {
                                let skip = static_skip_for(
                                    plan,
                                    &pair_ids,
                                    &split_spec,
                                    &model.spec(),
                                    metric,
                                );
                                push(
                                    ResolvedCase {
                                        corpus_id: corpus.id.clone(),
                                        pairs: pairs.clone(),
                                        params: params.data_params(),
                                        split_id: split.id.clone(),
                                        split: split_spec.clone(),
                                        model: model.spec(),
                                        metric,
                                        metric_config: plan.metric_config.clone(),
                                        prediction_k: plan.prediction_k,
                                        seed,
                                        source: SourceLabel::Std,
                                        generalization: None,
                                    },
                                    skip,
                                    &mut cases,
                                );
                            }
                        }
                    }
                }
            }
        }

        if let Some(g) = &plan.generalization {
            let applies = match &g.corpus {
                Some(id) => id == &corpus.id,
                None => corpus.id == plan.corpora[0].id,
            };
            if applies {
                let resolved_g = ResolvedGeneralization::from_plan(g);
                for params in &plan.data_params {
                    for model in &plan.models {
                        for &metric in &plan.metrics {
                            for &seed in &plan.seeds {
                                for source in [SourceLabel::A, SourceLabel::Ar, SourceLabel::R] {
                                    let skip = static_skip_for(
                                        plan,
                                        &pair_ids,
                                        // generalization builds its own split
                                        &SplitSpec::new(
                                            SplitMethod::Random { test_fraction: 0.5 },
                                            0,
                                        ),
                                        &model.spec(),
                                        metric,
                                    );
                                    push(
                                        ResolvedCase {
                                            corpus_id: corpus.id.clone(),
                                            pairs: pairs.clone(),
                                            params: params.data_params(),
                                            split_id: "generalization".into(),
                                            split: SplitSpec::new(
                                                SplitMethod::Random {
                                                    test_fraction: g.test_fraction,
                                                },
                                                g.seed,
                                            ),
                                            model: model.spec(),
                                            metric,
                                            metric_config: plan.metric_config.clone(),
                                            prediction_k: plan.prediction_k,
                                            seed,
                                            source,
                                            generalization: Some(resolved_g.clone()),
                                        },
                                        skip,
                                        &mut cases,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::parse_simulation_file;

    fn plan_from(text: &str) -> ExperimentPlan {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.toml");
        std::fs::write(&path, text).unwrap();
        parse_simulation_file(&path).unwrap()
    }

    const BASE: &str = r#"
seeds = [0]
metrics = ["min_ade", "min_fde", "miss_rate"]

[[datasets]]
id = "roads"
[datasets.synthetic]
scenario_kind = "straight_road"
scene_count = 6
agents_per_scene = 2
native_dt = 0.25
duration = 10.0
noise_sigma = 0.0
seed = 1
dataset_id = "roads"
location_id = "roads_loc"

[[data_params]]
n_input = 4
n_output = 3
dt = 0.5

[[data_params]]
n_input = 7
n_output = 6
dt = 0.25

[[splits]]
id = "rand"
method = { random = { test_fraction = 0.25 } }

[[models]]
id = "cv"
kind = "constant_velocity"

[[models]]
id = "lin"
kind = "linear_ar"
"#;

    #[test]
    fn cross_product_arithmetic() {
        // 1 corpus x 2 params x 1 split x 2 models x 3 metrics x 1 seed = 12
        let plan = plan_from(BASE);
        let cases = enumerate_cases(&plan).unwrap();
        assert_eq!(cases.len(), 12);
        // all hashes distinct and stable
        let hashes: std::collections::BTreeSet<_> =
            cases.iter().map(|c| c.case_hash.clone()).collect();
        assert_eq!(hashes.len(), 12);
        let again = enumerate_cases(&plan).unwrap();
        for (a, b) in cases.iter().zip(&again) {
            assert_eq!(a.case_hash, b.case_hash);
        }
    }

    #[test]
    fn by_dataset_split_on_single_dataset_corpus_is_skipped() {
        let text = BASE.replace(
            r#"method = { random = { test_fraction = 0.25 } }"#,
            r#"method = { by_location = { test_datasets = ["roads"] } }"#,
        );
        let plan = plan_from(&text);
        let cases = enumerate_cases(&plan).unwrap();
        assert!(!cases.is_empty());
        for case in &cases {
            assert_eq!(case.static_skip, Some(SKIP_INFEASIBLE_SPLIT), "{}", case.index);
        }
    }

    #[test]
    fn behavior_metric_without_behavior_data_is_skipped() {
        let text = BASE.replace(
            r#"metrics = ["min_ade", "min_fde", "miss_rate"]"#,
            r#"metrics = ["auc"]"#,
        );
        let plan = plan_from(&text);
        let cases = enumerate_cases(&plan).unwrap();
        for case in &cases {
            assert_eq!(case.static_skip, Some(SKIP_NO_BEHAVIOR_DATA));
        }
    }

    #[test]
    fn trajectory_metric_with_behavior_model_is_skipped() {
        let text = BASE.replace(
            r#"[[models]]
id = "lin"
kind = "linear_ar""#,
            r#"[[models]]
id = "log"
kind = "logistic_behavior""#,
        );
        let plan = plan_from(&text);
        let cases = enumerate_cases(&plan).unwrap();
        let log_cases: Vec<_> =
            cases.iter().filter(|c| c.resolved.model.model_id == "log").collect();
        assert!(!log_cases.is_empty());
        for case in log_cases {
            assert_eq!(case.static_skip, Some(SKIP_NO_TRAJECTORY_OUTPUT));
        }
    }

    #[test]
    fn case_hash_changes_with_single_field_mutations() {
        let plan = plan_from(BASE);
        let base_cases = enumerate_cases(&plan).unwrap();

        // different seed list
        let plan2 = plan_from(&BASE.replace("seeds = [0]", "seeds = [1]"));
        let cases2 = enumerate_cases(&plan2).unwrap();
        assert_ne!(base_cases[0].case_hash, cases2[0].case_hash);

        // different synthetic noise
        let plan3 = plan_from(&BASE.replace("noise_sigma = 0.0", "noise_sigma = 0.1"));
        let cases3 = enumerate_cases(&plan3).unwrap();
        assert_ne!(base_cases[0].case_hash, cases3[0].case_hash);

        // different k
        let plan4 = plan_from(&format!("prediction_k = 7\n{BASE}"));
        let cases4 = enumerate_cases(&plan4).unwrap();
        assert_ne!(base_cases[0].case_hash, cases4[0].case_hash);
    }
}
