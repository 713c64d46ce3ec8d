//! Case execution: the ingest -> sample -> perturb -> split -> train ->
//! predict -> evaluate pipeline, with every intermediate keyed by the hash
//! of its exact inputs and loaded from cache on a hit.

use crate::cache::{Cache, KeyBuilder};
use crate::cases::{
    enumerate_cases, ExperimentCase, ResolvedCase, ResolvedGeneralization, ResolvedPerturbation,
    SourceLabel, SKIP_INFEASIBLE_SPLIT, SKIP_NO_BEHAVIOR_DATA, SKIP_NO_SAMPLES, SKIP_SINGLE_CLASS,
};
use crate::plan::{ExperimentPlan, PerturbScope, PlanDataset};
use crate::store::{CaseDescriptor, ResultRecord, ResultStore, Status, Timings};
use crate::RunnerError;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::Instant;
use step_core::ingest;
use step_core::metrics::{
    aggregate, compute_batch, metric_by_id, FinalMetric, MetricsError,
};
use step_core::model::{
    decode_checkpoint, encode_checkpoint, model_init, ModelError, Predictor, TrainConfig,
};
use step_core::perturb::{
    attack_controls, attack_positions, resolve_victims, AttackConfig, AttackLogEntry,
    PerturbKind, WhiteNoise,
};
use step_core::rng::mix_seed;
use step_core::sample::{
    assemble_corpus, corpus_from_bytes, corpus_to_bytes, Corpus, CorpusSource, Sample, SampleId,
};
use step_core::scene::{validate_scene_set, SceneSet};
use step_core::split::{split_corpus, Split, SplitError};

type SharedModel = Arc<Box<dyn Predictor>>;

pub struct RunContext<'p> {
    pub plan: &'p ExperimentPlan,
    pub cache: Cache,
    scene_sets: Mutex<BTreeMap<String, Arc<SceneSet>>>,
    corpora: Mutex<BTreeMap<String, Arc<Corpus>>>,
    splits: Mutex<BTreeMap<String, Arc<Split>>>,
    models: Mutex<BTreeMap<String, SharedModel>>,
    attack_logs: Mutex<Vec<AttackLogEntry>>,
}

impl<'p> RunContext<'p> {
    pub fn new(plan: &'p ExperimentPlan) -> Result<Self, RunnerError> {
        Ok(Self {
            plan,
            cache: Cache::open(&plan.cache_dir)?,
            scene_sets: Mutex::new(BTreeMap::new()),
            corpora: Mutex::new(BTreeMap::new()),
            splits: Mutex::new(BTreeMap::new()),
            models: Mutex::new(BTreeMap::new()),
            attack_logs: Mutex::new(Vec::new()),
        })
    }

}

/// Loads (or builds) the framework-format scene set for a dataset.
fn scene_set(
    ctx: &RunContext<'_>,
    dataset: &PlanDataset,
    dataset_key: &str,
) -> Result<Arc<SceneSet>, RunnerError> {
    if let Some(hit) = ctx.scene_sets.lock().unwrap().get(dataset_key) {
        return Ok(Arc::clone(hit));
    }
    let (bytes, _) = ctx.cache.get_or_put("scene_set", dataset_key, || {
        let set = build_scene_set(ctx.plan, dataset)?;
        let report = validate_scene_set(&set);
        if !report.is_empty() {
            return Err(RunnerError::Io(format!(
                "dataset {}: scene validation failed: {report:?}",
                dataset.id
            )));
        }
        serde_json::to_vec(&set).map_err(|e| RunnerError::Io(e.to_string()))
    })?;
    let set: SceneSet =
        serde_json::from_slice(&bytes).map_err(|e| RunnerError::Io(e.to_string()))?;
    let set = Arc::new(set);
    ctx.scene_sets.lock().unwrap().insert(dataset_key.to_string(), Arc::clone(&set));
    Ok(set)
}

fn build_scene_set(plan: &ExperimentPlan, dataset: &PlanDataset) -> Result<SceneSet, RunnerError> {
    if let Some(cfg) = &dataset.synthetic {
        return Ok(ingest::generate_synthetic(cfg)?);
    }
    if let Some(dir) = &dataset.csv_dir {
        let raw = ingest::load_raw(
            dir.to_str().ok_or_else(|| RunnerError::Io("non-utf8 path".into()))?,
            ingest::ADAPTER_DRONE_CSV,
        )?;
        let (set, report) = ingest::transform_to_internal(&raw)?;
        // converted set in the canonical directory format, provenance log
        // next to it
        let set_dir = plan.output_dir.join("scene_sets").join(&dataset.id);
        step_core::scene::write_scene_set(&set, &set_dir)?;
        report.write_next_to(&set_dir)?;
        return Ok(set);
    }
    if let Some(dir) = &dataset.scene_set_dir {
        return Ok(step_core::scene::read_scene_set(dir)?);
    }
    Err(RunnerError::config(format!("datasets.{}", dataset.id), "no source"))
}

/// Key of the clean corpus: dataset content, params, and any
/// whole-corpus white-noise perturbations applied at assembly.
fn corpus_key(resolved: &ResolvedCase) -> String {
    let mut kb = KeyBuilder::new("corpus").field(&resolved.params);
    for pair in &resolved.pairs {
        kb = kb.raw(&pair.dataset_key);
        match &pair.perturbation {
            Some(p)
                if matches!(p.spec.kind, PerturbKind::WhiteNoise { .. })
                    && p.scope == PerturbScope::All =>
            {
                kb = kb.field(&p.spec);
            }
            _ => kb = kb.raw("clean"),
        }
    }
    kb.finish()
}

/// The clean corpus (whole-corpus white noise included).
fn clean_corpus(
    ctx: &RunContext<'_>,
    resolved: &ResolvedCase,
) -> Result<(Arc<Corpus>, String), RunnerError> {
    let key = corpus_key(resolved);
    if let Some(hit) = ctx.corpora.lock().unwrap().get(&key) {
        return Ok((Arc::clone(hit), key));
    }
    let (bytes, _) = ctx.cache.get_or_put("corpus", &key, || {
        let mut noise_holders: Vec<Option<WhiteNoise>> = Vec::new();
        for pair in &resolved.pairs {
            noise_holders.push(match &pair.perturbation {
                Some(p) if p.scope == PerturbScope::All => match p.spec.kind {
                    PerturbKind::WhiteNoise { sigma } => Some(WhiteNoise {
                        id: p.id.clone(),
                        sigma,
                        seed: p.spec.seed,
                    }),
                    _ => None,
                },
                _ => None,
            });
        }
        let mut sources = Vec::new();
        let mut sets = Vec::new();
        for pair in &resolved.pairs {
            let dataset = ctx
                .plan
                .dataset(&pair.dataset_id)
                .ok_or_else(|| RunnerError::config("corpus", "unknown dataset"))?;
            sets.push(scene_set(ctx, dataset, &pair.dataset_key)?);
        }
        for (set, noise) in sets.iter().zip(&noise_holders) {
            sources.push(CorpusSource {
                scene_set: set,
                perturbation: noise
                    .as_ref()
                    .map(|n| n as &dyn step_core::sample::SamplePerturbation),
            });
        }
        let corpus = assemble_corpus(&sources, &resolved.params)?;
        corpus_to_bytes(&corpus).map_err(RunnerError::from)
    })?;
    let corpus = Arc::new(corpus_from_bytes(&bytes)?);
    ctx.corpora.lock().unwrap().insert(key.clone(), Arc::clone(&corpus));
    Ok((corpus, key))
}

fn memo_split(
    ctx: &RunContext<'_>,
    key: &str,
    build: impl FnOnce() -> Result<Split, RunnerError>,
) -> Result<Arc<Split>, RunnerError> {
    if let Some(hit) = ctx.splits.lock().unwrap().get(key) {
        return Ok(Arc::clone(hit));
    }
    let (bytes, _) = ctx.cache.get_or_put("split", key, || {
        let split = build()?;
        serde_json::to_vec(&split).map_err(|e| RunnerError::Io(e.to_string()))
    })?;
    let split: Arc<Split> =
        Arc::new(serde_json::from_slice(&bytes).map_err(|e| RunnerError::Io(e.to_string()))?);
    ctx.splits.lock().unwrap().insert(key.to_string(), Arc::clone(&split));
    Ok(split)
}

/// Ids key: stable digest of an ordered id list.
fn ids_key(ids: &[SampleId]) -> String {
    let mut kb = KeyBuilder::new("ids");
    for id in ids {
        kb = kb.raw(&id.to_string());
    }
    kb.finish()
}

/// Trains (or loads) a model on the given slice.
#[allow(clippy::too_many_arguments)]
fn trained_model(
    ctx: &RunContext<'_>,
    spec: &step_core::model::ModelSpec,
    corpus: &Arc<Corpus>,
    corpus_cache_key: &str,
    train_ids: &[SampleId],
    seed: u64,
    config: &TrainConfig,
    base: Option<(&SharedModel, &str)>,
) -> Result<(SharedModel, String, bool), RunnerError> {
    let mut kb = KeyBuilder::new("model")
        .field(spec)
        .raw(corpus_cache_key)
        .raw(&ids_key(train_ids))
        .field(&seed)
        .field(config);
    if let Some((_, base_key)) = base {
        kb = kb.raw(base_key);
    }
    let key = kb.finish();
    if let Some(hit) = ctx.models.lock().unwrap().get(&key) {
        return Ok((Arc::clone(hit), key, true));
    }
    if let Some(bytes) = ctx.cache.get("model", &key) {
        let state = decode_checkpoint(spec, &bytes)?;
        let mut model = model_init(spec)?;
        model.restore(state)?;
        let model: SharedModel = Arc::new(model);
        ctx.models.lock().unwrap().insert(key.clone(), Arc::clone(&model));
        return Ok((model, key, true));
    }
    let mut model = model_init(spec)?;
    if let Some((base_model, _)) = base {
        model.restore(base_model.state().clone())?;
    }
    let mut cfg = config.clone();
    cfg.seed = seed;
    model.train(corpus, train_ids, &cfg)?;
    model.set_fingerprint(Some(
        KeyBuilder::new("fingerprint")
            .raw(corpus_cache_key)
            .raw(&ids_key(train_ids))
            .field(&seed)
            .finish(),
    ));
    ctx.cache.put("model", &key, &encode_checkpoint(model.state())?)?;
    let model: SharedModel = Arc::new(model);
    ctx.models.lock().unwrap().insert(key.clone(), Arc::clone(&model));
    Ok((model, key, false))
}

/// Applies the per-pair perturbations: white noise with test-only scope and
/// adversarial attacks. `include_test_only` distinguishes the evaluation
/// corpus (true) from the training corpus (false).
#[allow(clippy::too_many_arguments)]
fn perturbed_corpus(
    ctx: &RunContext<'_>,
    resolved: &ResolvedCase,
    clean: &Arc<Corpus>,
    clean_key: &str,
    split: &Split,
    split_key: &str,
    include_test_only: bool,
    case_seed: u64,
) -> Result<(Arc<Corpus>, String), RunnerError> {
    let applicable: Vec<(usize, &ResolvedPerturbation)> = resolved
        .pairs
        .iter()
        .enumerate()
        .filter_map(|(i, pair)| pair.perturbation.as_ref().map(|p| (i, p)))
        .filter(|(_, p)| match p.scope {
            PerturbScope::All => !matches!(p.spec.kind, PerturbKind::WhiteNoise { .. }),
            PerturbScope::TestOnly => include_test_only,
        })
        .collect();
    if applicable.is_empty() {
        return Ok((Arc::clone(clean), clean_key.to_string()));
    }
    let mut kb = KeyBuilder::new("perturbed_corpus")
        .raw(clean_key)
        .raw(split_key)
        .field(&include_test_only)
        .field(&case_seed);
    for (i, p) in &applicable {
        kb = kb.field(i).field(&p.spec).field(&p.scope).field(&p.target_spec);
    }
    let key = kb.finish();
    if let Some(hit) = ctx.corpora.lock().unwrap().get(&key) {
        return Ok((Arc::clone(hit), key));
    }
    if let Some(bytes) = ctx.cache.get("corpus", &key) {
        let corpus = Arc::new(corpus_from_bytes(&bytes)?);
        ctx.corpora.lock().unwrap().insert(key.clone(), Arc::clone(&corpus));
        return Ok((corpus, key));
    }

    let test_set: BTreeSet<&SampleId> = split.test_ids.iter().collect();
    let mut corpus = (**clean).clone();
    let mut logs = Vec::new();
    for (pair_idx, p) in &applicable {
        let dataset_id = &resolved.pairs[*pair_idx].dataset_id;
        // record the perturbation in the corpus provenance
        if let Some(prov) = corpus
            .provenance
            .iter_mut()
            .find(|pr| &pr.dataset_id == dataset_id && pr.perturbation_id.is_none())
        {
            prov.perturbation_id = Some(p.id.clone());
        }
        let in_scope = |sample: &Sample| {
            &sample.sample_id.dataset_id == dataset_id
                && (p.scope == PerturbScope::All || test_set.contains(&sample.sample_id))
        };
        match &p.spec.kind {
            PerturbKind::WhiteNoise { sigma } => {
                for sample in corpus.samples.iter_mut().filter(|s| in_scope(s)) {
                    *sample =
                        step_core::perturb::perturb_white_noise(sample, *sigma, p.spec.seed);
                }
            }
            kind @ (PerturbKind::AttackPositions { .. } | PerturbKind::AttackControls { .. }) => {
                let target_spec = p.target_spec.as_ref().ok_or_else(|| {
                    RunnerError::config(
                        format!("perturbations.{}", p.id),
                        "attack without target model",
                    )
                })?;
                // the target model trains on the clean train side
                let (target, _, _) = trained_model(
                    ctx,
                    target_spec,
                    clean,
                    clean_key,
                    &split.train_ids,
                    case_seed,
                    &TrainConfig::default(),
                    None,
                )?;
                let cfg = match kind {
                    PerturbKind::AttackPositions { d_max, iters, step_size } => AttackConfig {
                        d_max: *d_max,
                        iters: *iters,
                        step_size: *step_size,
                        k: resolved.prediction_k,
                        seed: p.spec.seed,
                        ..Default::default()
                    },
                    PerturbKind::AttackControls { d_max, iters, step_size, a_max, omega_max } => {
                        AttackConfig {
                            d_max: *d_max,
                            iters: *iters,
                            step_size: *step_size,
                            a_max: *a_max,
                            omega_max: *omega_max,
                            k: resolved.prediction_k,
                            seed: p.spec.seed,
                        }
                    }
                    PerturbKind::WhiteNoise { .. } => unreachable!(),
                };
                for sample in corpus.samples.iter_mut().filter(|s| in_scope(s)) {
                    let victims = resolve_victims(sample, p.spec.victim_agent);
                    if victims.is_empty() {
                        continue;
                    }
                    let outcome = match kind {
                        PerturbKind::AttackPositions { .. } => attack_positions(
                            target.as_ref().as_ref(),
                            &resolved.params,
                            sample,
                            &victims,
                            &cfg,
                        )?,
                        _ => attack_controls(
                            target.as_ref().as_ref(),
                            &resolved.params,
                            sample,
                            &victims,
                            &cfg,
                        )?,
                    };
                    *sample = outcome.sample;
                    logs.extend(outcome.log);
                }
            }
        }
    }
    write_attack_log(ctx, &key, &logs)?;
    ctx.attack_logs.lock().unwrap().extend(logs);
    ctx.cache.put("corpus", &key, &corpus_to_bytes(&corpus)?)?;
    let corpus = Arc::new(corpus);
    ctx.corpora.lock().unwrap().insert(key.clone(), Arc::clone(&corpus));
    Ok((corpus, key))
}

fn write_attack_log(
    ctx: &RunContext<'_>,
    corpus_key: &str,
    logs: &[AttackLogEntry],
) -> Result<(), RunnerError> {
    if logs.is_empty() {
        return Ok(());
    }
    let dir = ctx.plan.output_dir.join("attack_logs");
    std::fs::create_dir_all(&dir).map_err(|e| crate::io_err(e, &dir))?;
    let path = dir.join(format!("{}.ndjson", &corpus_key[..16]));
    let mut out = String::new();
    for entry in logs {
        out.push_str(&serde_json::to_string(entry).map_err(|e| RunnerError::Io(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(&path, out).map_err(|e| crate::io_err(e, &path))?;
    Ok(())
}

/// Deterministic split for the generalization workflow: base samples train
/// the A model; target samples split into fine-tune/train and test sides.
struct GeneralizationSlices {
    base_train: Vec<SampleId>,
    target_train: Vec<SampleId>,
    target_test: Vec<SampleId>,
}

fn generalization_slices(
    corpus: &Corpus,
    g: &ResolvedGeneralization,
) -> Result<GeneralizationSlices, RunnerError> {
    let matches = |sample: &Sample, location: &Option<String>, dataset: &Option<String>| {
        location.as_ref().is_some_and(|l| &sample.location_id == l)
            || dataset.as_ref().is_some_and(|d| &sample.sample_id.dataset_id == d)
    };
    let base_train: Vec<SampleId> = corpus
        .samples
        .iter()
        .filter(|s| matches(s, &g.base_location, &g.base_dataset))
        .map(|s| s.sample_id.clone())
        .collect();
    let target: Vec<&Sample> = corpus
        .samples
        .iter()
        .filter(|s| matches(s, &g.target_location, &g.target_dataset))
        .collect();
    if base_train.is_empty() || target.is_empty() {
        return Err(RunnerError::Split(SplitError::Infeasible(
            "generalization slices are empty".into(),
        )));
    }
    // scene-coherent shuffle of the target side
    let mut scenes: Vec<String> = target
        .iter()
        .map(|s| s.sample_id.scene_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = step_core::rng::DetRng::new(mix_seed(g.seed, "generalization"));
    rng.shuffle(&mut scenes);
    let target_total = target.len();
    let test_target = ((target_total as f64) * g.test_fraction).round().max(1.0) as usize;
    let mut test_scenes = BTreeSet::new();
    let mut count = 0usize;
    for scene in scenes {
        if count >= test_target {
            break;
        }
        count += target.iter().filter(|s| s.sample_id.scene_id == scene).count();
        test_scenes.insert(scene);
    }
    let mut target_train = Vec::new();
    let mut target_test = Vec::new();
    for s in &target {
        if test_scenes.contains(&s.sample_id.scene_id) {
            target_test.push(s.sample_id.clone());
        } else {
            target_train.push(s.sample_id.clone());
        }
    }
    if target_train.is_empty() || target_test.is_empty() {
        return Err(RunnerError::Split(SplitError::Infeasible(
            "generalization target side too small to split".into(),
        )));
    }
    Ok(GeneralizationSlices { base_train, target_train, target_test })
}

/// Evaluates one metric over the test slice in batches and aggregates.
fn evaluate_metric(
    resolved: &ResolvedCase,
    plan: &ExperimentPlan,
    model: &SharedModel,
    eval_corpus: &Corpus,
    test_ids: &[SampleId],
    predict_seed: u64,
    timings: &mut Timings,
) -> Result<FinalMetric, RunnerError> {
    let metric = resolved.metric;
    let def = metric_by_id(metric);
    let predict_started = Instant::now();
    let predictions = model.predict(
        eval_corpus,
        test_ids,
        resolved.prediction_k,
        predict_seed,
    )?;
    predictions.validate(resolved.params.n_output)?;
    timings.predict_ms = predict_started.elapsed().as_millis() as u64;

    let eval_started = Instant::now();
    // exact likelihoods when the model has a closed form
    let exact_loglik = if def.needs_likelihood {
        let samples = eval_corpus.select(test_ids).map_err(RunnerError::from)?;
        match samples.first().map(|s| model.log_likelihood(s)) {
            Some(Ok(_)) => {
                let mut map = BTreeMap::new();
                for s in &samples {
                    map.insert(s.sample_id.clone(), model.log_likelihood(s)?);
                }
                Some(map)
            }
            _ => None,
        }
    } else {
        None
    };
    let mut batches = Vec::new();
    for chunk in test_ids.chunks(plan.eval_batch_size) {
        batches.push(compute_batch(
            metric,
            &predictions,
            eval_corpus,
            chunk,
            &resolved.metric_config,
            exact_loglik.as_ref(),
        )?);
    }
    let final_metric = aggregate(&batches, &resolved.metric_config)?;
    timings.eval_ms = eval_started.elapsed().as_millis() as u64;
    Ok(final_metric)
}

fn descriptor(resolved: &ResolvedCase, fold_index: Option<usize>) -> CaseDescriptor {
    CaseDescriptor {
        corpus_id: resolved.corpus_id.clone(),
        dataset_ids: resolved.pairs.iter().map(|p| p.dataset_id.clone()).collect(),
        perturbation_ids: resolved
            .pairs
            .iter()
            .filter_map(|p| p.perturbation.as_ref().map(|x| x.id.clone()))
            .collect(),
        n_input: resolved.params.n_input,
        n_output: resolved.params.n_output,
        dt: resolved.params.dt,
        t0_policy: format!("{:?}", resolved.params.t0_policy),
        split_id: resolved.split_id.clone(),
        fold_index,
        model_id: resolved.model.model_id.clone(),
        metric: resolved.metric.as_str().to_string(),
        seed: resolved.seed,
        source: resolved.source,
    }
}

fn fold_index_of(split: &step_core::split::SplitSpec) -> Option<usize> {
    match split.method {
        step_core::split::SplitMethod::CrossValidation { fold_index, .. } => Some(fold_index),
        _ => None,
    }
}

/// Executes one case end to end. Cache hits at the result level come back
/// as `Cached`; runtime infeasibilities surface as `Skipped`.
pub fn run_case(
    ctx: &RunContext<'_>,
    store: &ResultStore,
    case: &ExperimentCase,
) -> ResultRecord {
    let resolved = &case.resolved;
    let fold = fold_index_of(&resolved.split);
    let started = Instant::now();
    let mut timings = Timings::default();
    let finish = |status: Status, metric: Option<FinalMetric>, mut timings: Timings| {
        timings.total_ms = started.elapsed().as_millis() as u64;
        ResultRecord {
            case_hash: case.case_hash.clone(),
            case: descriptor(resolved, fold),
            status,
            metric,
            versions: ResultRecord::versions_now(),
            timings,
        }
    };

    if let Some(reason) = case.static_skip {
        return finish(Status::Skipped { reason: reason.to_string() }, None, timings);
    }
    // result-level cache: the store short-circuits the whole pipeline
    if let Some(existing) = store.get(&case.case_hash) {
        return finish(Status::Cached, existing.metric.clone(), timings);
    }

    match execute_case(ctx, resolved, &mut timings) {
        Ok(metric) => finish(Status::Computed, Some(metric), timings),
        Err(e) => {
            let status = classify_error(resolved, e);
            finish(status, None, timings)
        }
    }
}

fn classify_error(resolved: &ResolvedCase, e: RunnerError) -> Status {
    let def = metric_by_id(resolved.metric);
    match &e {
        RunnerError::Split(SplitError::Infeasible(_)) | RunnerError::Split(SplitError::EmptySide) => {
            Status::Skipped { reason: SKIP_INFEASIBLE_SPLIT.to_string() }
        }
        RunnerError::Metrics(MetricsError::SingleClass) => {
            Status::Skipped { reason: SKIP_SINGLE_CLASS.to_string() }
        }
        RunnerError::Metrics(MetricsError::Empty) if def.needs_behavior => {
            Status::Skipped { reason: SKIP_NO_BEHAVIOR_DATA.to_string() }
        }
        RunnerError::Metrics(MetricsError::Empty) => {
            Status::Skipped { reason: SKIP_NO_SAMPLES.to_string() }
        }
        RunnerError::Model(ModelError::EmptyTrain) => {
            Status::Skipped { reason: SKIP_NO_SAMPLES.to_string() }
        }
        _ => Status::Failed { error: e.to_string() },
    }
}

fn execute_case(
    ctx: &RunContext<'_>,
    resolved: &ResolvedCase,
    timings: &mut Timings,
) -> Result<FinalMetric, RunnerError> {
    let (clean, clean_key) = clean_corpus(ctx, resolved)?;
    let predict_seed = mix_seed(resolved.seed, "predict");

    if let Some(g) = &resolved.generalization {
        // generalization triple: slices instead of a configured split
        let slices = generalization_slices(&clean, g)?;
        let train_started = Instant::now();
        let (model, _key) = match resolved.source {
            SourceLabel::A | SourceLabel::Std => {
                let (m, k, _) = trained_model(
                    ctx,
                    &resolved.model,
                    &clean,
                    &clean_key,
                    &slices.base_train,
                    resolved.seed,
                    &TrainConfig::default(),
                    None,
                )?;
                (m, k)
            }
            SourceLabel::R => {
                let (m, k, _) = trained_model(
                    ctx,
                    &resolved.model,
                    &clean,
                    &clean_key,
                    &slices.target_train,
                    resolved.seed,
                    &TrainConfig::default(),
                    None,
                )?;
                (m, k)
            }
            SourceLabel::Ar => {
                let (base, base_key, _) = trained_model(
                    ctx,
                    &resolved.model,
                    &clean,
                    &clean_key,
                    &slices.base_train,
                    resolved.seed,
                    &TrainConfig::default(),
                    None,
                )?;
                let ft = TrainConfig {
                    epochs_scale: g.epochs_scale,
                    lr_scale: g.lr_scale,
                    fine_tune: true,
                    ..TrainConfig::default()
                };
                let (m, k, _) = trained_model(
                    ctx,
                    &resolved.model,
                    &clean,
                    &clean_key,
                    &slices.target_train,
                    resolved.seed,
                    &ft,
                    Some((&base, &base_key)),
                )?;
                (m, k)
            }
        };
        timings.train_ms = train_started.elapsed().as_millis() as u64;
        return evaluate_metric(
            resolved,
            ctx.plan,
            &model,
            &clean,
            &slices.target_test,
            predict_seed,
            timings,
        );
    }

    let split_key = KeyBuilder::new("split")
        .raw(&clean_key)
        .field(&resolved.split)
        .finish();
    let split = memo_split(ctx, &split_key, || {
        split_corpus(&clean, &resolved.split).map_err(RunnerError::from)
    })?;

    let (train_corpus, train_corpus_key) = perturbed_corpus(
        ctx,
        resolved,
        &clean,
        &clean_key,
        &split,
        &split_key,
        false,
        resolved.seed,
    )?;
    let (eval_corpus, _eval_key) = perturbed_corpus(
        ctx,
        resolved,
        &clean,
        &clean_key,
        &split,
        &split_key,
        true,
        resolved.seed,
    )?;

    let train_started = Instant::now();
    let (model, _model_key, _hit) = trained_model(
        ctx,
        &resolved.model,
        &train_corpus,
        &train_corpus_key,
        &split.train_ids,
        resolved.seed,
        &TrainConfig::default(),
        None,
    )?;
    timings.train_ms = train_started.elapsed().as_millis() as u64;

    evaluate_metric(
        resolved,
        ctx.plan,
        &model,
        &eval_corpus,
        &split.test_ids,
        predict_seed,
        timings,
    )
}

#[derive(Debug)]
pub struct RunSummary {
    pub records: Vec<ResultRecord>,
    pub computed: usize,
    pub cached: usize,
    pub skipped: usize,
    pub failed: usize,
}

impl RunSummary {
    fn from_records(records: Vec<ResultRecord>) -> Self {
        let mut s = Self { records, computed: 0, cached: 0, skipped: 0, failed: 0 };
        for r in &s.records {
            match r.status {
                Status::Computed => s.computed += 1,
                Status::Cached => s.cached += 1,
                Status::Skipped { .. } => s.skipped += 1,
                Status::Failed { .. } => s.failed += 1,
            }
        }
        s
    }
}

/// Runs a full plan: enumerate, execute (worker pool), persist, report.
pub fn run_plan(plan: &ExperimentPlan) -> Result<RunSummary, RunnerError> {
    std::fs::create_dir_all(&plan.output_dir).map_err(|e| crate::io_err(e, &plan.output_dir))?;
    let ctx = RunContext::new(plan)?;
    let mut store = ResultStore::open(&plan.output_dir.join("results.ndjson"))?;
    let cases = enumerate_cases(plan)?;

    let records = execute_cases(&ctx, &store, &cases, plan.parallelism);
    // persist fresh results in enumeration order, skipping known hashes
    let to_store: Vec<ResultRecord> = records
        .iter()
        .map(|r| {
            let mut stored = r.clone();
            if stored.status == Status::Cached {
                // keep the original record untouched in the store
                if let Some(orig) = store.get(&stored.case_hash) {
                    stored = orig.clone();
                }
            }
            stored
        })
        .collect();
    store.append_new(&to_store)?;
    crate::report::emit_report(&to_store, &plan.output_dir)?;
    Ok(RunSummary::from_records(records))
}

fn execute_cases(
    ctx: &RunContext<'_>,
    store: &ResultStore,
    cases: &[ExperimentCase],
    parallelism: usize,
) -> Vec<ResultRecord> {
    if parallelism <= 1 || cases.len() <= 1 {
        return cases.iter().map(|c| run_case(ctx, store, c)).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<ResultRecord>>> =
        cases.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(cases.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cases.len() {
                    break;
                }
                let record = run_case(ctx, store, &cases[i]);
                *slots[i].lock().unwrap() = Some(record);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every case executed"))
        .collect()
}

/// Perturbation-only pre-pass: materializes every perturbed corpus a plan
/// needs (training attack targets along the way) without evaluating models.
pub fn run_attack_pass(plan: &ExperimentPlan) -> Result<usize, RunnerError> {
    std::fs::create_dir_all(&plan.output_dir).map_err(|e| crate::io_err(e, &plan.output_dir))?;
    let ctx = RunContext::new(plan)?;
    let cases = enumerate_cases(plan)?;
    let mut done = BTreeSet::new();
    let mut built = 0usize;
    for case in &cases {
        let resolved = &case.resolved;
        if case.static_skip.is_some()
            || resolved.generalization.is_some()
            || resolved.pairs.iter().all(|p| p.perturbation.is_none())
        {
            continue;
        }
        let (clean, clean_key) = clean_corpus(&ctx, resolved)?;
        let split_key = KeyBuilder::new("split")
            .raw(&clean_key)
            .field(&resolved.split)
            .finish();
        if !done.insert((clean_key.clone(), split_key.clone())) {
            continue;
        }
        let split = memo_split(&ctx, &split_key, || {
            split_corpus(&clean, &resolved.split).map_err(RunnerError::from)
        })?;
        perturbed_corpus(
            &ctx,
            resolved,
            &clean,
            &clean_key,
            &split,
            &split_key,
            true,
            resolved.seed,
        )?;
        built += 1;
    }
    Ok(built)
}
