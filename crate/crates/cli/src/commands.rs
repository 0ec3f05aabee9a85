use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde::Serialize;

use patch_critic::baselines::{
    cosine_similarity, default_grid, derive_seed, fit_threshold, random_oracle, validation_split, ClassWeights,
    Embedder, EmbeddingProvider, HttpEmbeddingProvider, RecordedEmbeddings,
};
use patch_critic::cache::ReplayCache;
use patch_critic::calibration::{apply_threshold, BuildPrediction};
use patch_critic::context::{enhance_context, extract_post_commit_functions};
use patch_critic::critic::{
    prepare_inputs, run_batch, CriticError, CriticRequest, CriticSettings, CriticVariant, CriticVerdict,
    GenerationProvider, HttpProvider, OfflineProvider, ProviderError,
};
use patch_critic::dataset::{extract_unseen_tests_with, load_dataset, GroundTruth, Outcome, TaskInstance, TestCase};
use patch_critic::evaluation::{
    build_report, rank_workflows, EvalError, RankingResult, ReportInputs, TestPrediction, VariantPredictions,
};

use crate::config::{check_approach, RunConfig, EDIT_DISTANCE, RANDOM};
use crate::records::{
    jsonl_files, read_jsonl, remove_if_exists, write_atomic, write_jsonl, BaselineVerdict, FailureRecord,
};

/// Bad invocation rather than bad data; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const POLICY_SUFFIX: &str = "+policy";

pub struct Ctx {
    pub cfg: RunConfig,
    pub instances: Vec<TaskInstance>,
}

impl Ctx {
    pub fn load(cfg: RunConfig) -> Result<Self> {
        let mut instances = load_dataset(&cfg.dataset)?;
        instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
        info!("loaded {} instances", instances.len());
        Ok(Ctx { cfg, instances })
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.output.join(rel)
    }

    fn unseen_tests(&self, inst: &TaskInstance) -> Result<Vec<TestCase>> {
        extract_unseen_tests_with(&inst.gold_test_patch, &inst.snapshot, self.cfg.policy.complexity_unit)
            .with_context(|| format!("{}: extracting unseen tests", inst.instance_id))
    }

    fn all_tests(&self) -> Result<BTreeMap<String, Vec<TestCase>>> {
        self.instances
            .iter()
            .map(|i| Ok((i.instance_id.clone(), self.unseen_tests(i)?)))
            .collect()
    }

    fn labels(&self) -> BTreeMap<(String, String), GroundTruth> {
        let mut out = BTreeMap::new();
        for inst in &self.instances {
            for (wf, gt) in &inst.labels {
                out.insert((inst.instance_id.clone(), wf.clone()), gt.clone());
            }
        }
        out
    }
}

#[derive(Serialize)]
struct InstanceSummary<'a> {
    instance_id: &'a str,
    repo_id: &'a str,
    base_commit: &'a str,
    has_hints: bool,
    gold_files: Vec<String>,
    test_files: Vec<String>,
    snapshot_files: usize,
    workflows: Vec<&'a String>,
    labelled_workflows: Vec<&'a String>,
}

fn touched_files(patch: &patch_critic::diff::Patch) -> Vec<String> {
    patch.file_diffs.iter().map(|fd| fd.display_path()).collect()
}

pub fn ingest(ctx: &Ctx) -> Result<()> {
    let records: Vec<InstanceSummary> = ctx
        .instances
        .iter()
        .map(|i| InstanceSummary {
            instance_id: &i.instance_id,
            repo_id: &i.repo_id,
            base_commit: &i.base_commit,
            has_hints: i.hints.is_some(),
            gold_files: touched_files(&i.gold_change_patch),
            test_files: touched_files(&i.gold_test_patch),
            snapshot_files: i.snapshot.len(),
            workflows: i.candidates.keys().collect(),
            labelled_workflows: i.labels.keys().collect(),
        })
        .collect();
    write_jsonl(&ctx.out("instances.jsonl"), &records)
}

#[derive(Serialize)]
struct TestRecord<'a> {
    instance_id: &'a str,
    #[serde(flatten)]
    test: &'a TestCase,
    unit: String,
}

pub fn extract_tests(ctx: &Ctx) -> Result<()> {
    let tests = ctx.all_tests()?;
    let mut records = Vec::new();
    for (id, list) in &tests {
        if list.is_empty() {
            warn!("{id}: gold test patch adds or modifies no tests");
        }
        for t in list {
            records.push(TestRecord {
                instance_id: id,
                test: t,
                unit: ctx.cfg.policy.complexity_unit.to_string(),
            });
        }
    }
    write_jsonl(&ctx.out("tests.jsonl"), &records)
}

#[derive(Serialize)]
struct EnhancedRecord {
    instance_id: String,
    workflow: String,
    enhanced_patch: String,
    post_commit_functions: Vec<String>,
    notes: Vec<String>,
}

pub fn enhance(ctx: &Ctx) -> Result<()> {
    let mut records = Vec::new();
    for inst in &ctx.instances {
        for (wf, patch) in &inst.candidates {
            let where_ = || format!("{}/{wf}", inst.instance_id);
            let enhanced = enhance_context(patch, &inst.snapshot).with_context(where_)?;
            let functions = extract_post_commit_functions(patch, &inst.snapshot).with_context(where_)?;
            records.push(EnhancedRecord {
                instance_id: inst.instance_id.clone(),
                workflow: wf.clone(),
                enhanced_patch: enhanced.to_text(),
                post_commit_functions: functions
                    .fragments
                    .iter()
                    .map(|f| format!("{}::{}", f.file_path, f.qualified_name))
                    .collect(),
                notes: functions.notes,
            });
        }
    }
    write_jsonl(&ctx.out("enhanced.jsonl"), &records)
}

/// Stands in for the HTTP provider when its environment is not set, so
/// fully cached runs still work.
struct Unconfigured(String);

impl GenerationProvider for Unconfigured {
    fn generate(&self, _request: &CriticRequest, _digest: &str) -> Result<String, ProviderError> {
        Err(ProviderError::Config(self.0.clone()))
    }
}

fn generation_provider(cfg: &RunConfig) -> Box<dyn GenerationProvider> {
    if cfg.offline {
        return Box::new(OfflineProvider);
    }
    match HttpProvider::from_env() {
        Ok(p) => Box::new(p),
        Err(e) => Box::new(Unconfigured(e.to_string())),
    }
}

pub fn evaluate(ctx: &Ctx, variants: &[String]) -> Result<()> {
    let variants: Vec<String> = if variants.is_empty() {
        ctx.cfg.variants.clone()
    } else {
        variants.to_vec()
    };
    if variants.is_empty() {
        return Err(UsageError("evaluate needs at least one --variant".into()).into());
    }
    for v in &variants {
        check_approach(v).map_err(|e| UsageError(e.to_string()))?;
    }
    let tests = ctx.all_tests()?;
    let mut failed = 0;
    for name in &variants {
        failed += match name.as_str() {
            RANDOM => evaluate_random(ctx, &tests)?,
            EDIT_DISTANCE => evaluate_edit_distance(ctx)?,
            other => evaluate_critic(ctx, other.parse()?, &tests)?,
        };
    }
    if failed > 0 {
        bail!("{failed} evaluation unit(s) failed; see verdicts/*.errors.jsonl");
    }
    Ok(())
}

fn write_failures(ctx: &Ctx, name: &str, failures: &[FailureRecord]) -> Result<()> {
    let path = ctx.out(&format!("verdicts/{name}.errors.jsonl"));
    if failures.is_empty() {
        remove_if_exists(&path)
    } else {
        write_jsonl(&path, failures)
    }
}

fn evaluate_critic(ctx: &Ctx, variant: CriticVariant, tests: &BTreeMap<String, Vec<TestCase>>) -> Result<usize> {
    let cfg = &ctx.cfg;
    let mut inputs = Vec::new();
    let mut failures = Vec::new();
    for inst in &ctx.instances {
        let inst_tests = &tests[&inst.instance_id];
        if variant.is_test_aware() && inst_tests.is_empty() {
            warn!("{}: no unseen tests, skipped for {variant}", inst.instance_id);
            continue;
        }
        for wf in inst.candidates.keys() {
            let view = cfg.patch_view.unwrap_or(variant.default_patch_view());
            match prepare_inputs(variant, inst, wf, inst_tests, view) {
                Ok(list) => inputs.extend(list),
                Err(e) => failures.push(FailureRecord {
                    instance_id: inst.instance_id.clone(),
                    workflow: wf.clone(),
                    test_id: None,
                    error: e.to_string(),
                    raw_response: None,
                }),
            }
        }
    }
    let settings = CriticSettings {
        model_id: cfg.model.clone(),
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
        parse_mode: cfg.parse_mode,
    };
    let provider = generation_provider(cfg);
    let cache = ReplayCache::new(&cfg.cache);
    let results = run_batch(&inputs, &settings, provider.as_ref(), &cache, cfg.concurrency)?;
    let mut verdicts: Vec<CriticVerdict> = Vec::new();
    for (input, result) in inputs.iter().zip(results) {
        match result {
            Ok(v) => verdicts.push(v),
            Err(e) => {
                let raw_response = match &e {
                    CriticError::Parse { raw_response, .. } => Some(raw_response.clone()),
                    _ => None,
                };
                failures.push(FailureRecord {
                    instance_id: input.instance_id.clone(),
                    workflow: input.workflow.clone(),
                    test_id: input.test_id.clone(),
                    error: e.to_string(),
                    raw_response,
                });
            }
        }
    }
    info!("{variant}: {} verdicts, {} failures", verdicts.len(), failures.len());
    write_jsonl(&ctx.out(&format!("verdicts/{variant}.jsonl")), &verdicts)?;
    write_failures(ctx, variant.as_str(), &failures)?;
    Ok(failures.len())
}

fn evaluate_random(ctx: &Ctx, tests: &BTreeMap<String, Vec<TestCase>>) -> Result<usize> {
    let weights = match ctx.cfg.p_pass {
        Some(p) => ClassWeights::new(p)?,
        None => ClassWeights::from_frequencies(
            ctx.instances
                .iter()
                .flat_map(|i| i.labels.values())
                .flat_map(|gt| gt.tests.values().copied()),
        ),
    };
    info!("random baseline: p_pass = {}", weights.p_pass);
    let mut slots = Vec::new();
    for inst in &ctx.instances {
        let mut ids: Vec<&String> = tests[&inst.instance_id].iter().map(|t| &t.test_id).collect();
        ids.sort();
        for wf in inst.candidates.keys() {
            for id in &ids {
                slots.push((inst.instance_id.clone(), wf.clone(), (*id).clone()));
            }
        }
    }
    let draws = random_oracle(weights, derive_seed(ctx.cfg.seed, RANDOM), slots.len());
    let records: Vec<BaselineVerdict> = slots
        .into_iter()
        .zip(draws)
        .map(|((instance_id, workflow, test_id), prediction)| BaselineVerdict {
            instance_id,
            workflow,
            approach: RANDOM.to_string(),
            test_id: Some(test_id),
            prediction,
            similarity: None,
            threshold: None,
        })
        .collect();
    write_jsonl(&ctx.out(&format!("verdicts/{RANDOM}.jsonl")), &records)?;
    Ok(0)
}

fn evaluate_edit_distance(ctx: &Ctx) -> Result<usize> {
    let cfg = &ctx.cfg;
    let provider: Box<dyn EmbeddingProvider> = match &cfg.embeddings {
        Some(path) => Box::new(RecordedEmbeddings::load(path)?),
        None if cfg.offline => bail!("offline mode needs recorded embeddings (--embeddings)"),
        None => Box::new(HttpEmbeddingProvider::from_env()?),
    };
    let mut embedder = Embedder::new(provider, cfg.embed_model.clone());
    if let Some(max) = cfg.embed_max_chars {
        embedder = embedder.with_max_chars(max);
    }

    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for inst in &ctx.instances {
        let gold = embedder.embed(&inst.gold_change_patch.to_text());
        for (wf, patch) in &inst.candidates {
            let sim = gold
                .as_ref()
                .map_err(|e| anyhow!("gold patch: {e}"))
                .and_then(|g| Ok(cosine_similarity(&embedder.embed(&patch.to_text())?, g)?));
            match sim {
                Ok(s) => pairs.push((inst, wf, s)),
                Err(e) => failures.push(FailureRecord {
                    instance_id: inst.instance_id.clone(),
                    workflow: wf.clone(),
                    test_id: None,
                    error: e.to_string(),
                    raw_response: None,
                }),
            }
        }
    }

    let ids: Vec<String> = ctx.instances.iter().map(|i| i.instance_id.clone()).collect();
    let validation: BTreeSet<String> = validation_split(&ids, cfg.validation_fraction).0.into_iter().collect();
    let (mut sims, mut labels) = (Vec::new(), Vec::new());
    for (inst, wf, s) in &pairs {
        if let (true, Some(gt)) = (validation.contains(&inst.instance_id), inst.labels.get(*wf)) {
            sims.push(*s);
            labels.push(gt.build_status);
        }
    }
    if sims.is_empty() {
        bail!("no labelled candidates in the validation split; cannot fit a similarity threshold");
    }
    let threshold = fit_threshold(&sims, &labels, &default_grid())?;
    info!(
        "edit distance: threshold {} fitted on {} validation candidates",
        threshold.value,
        sims.len()
    );
    let records: Vec<BaselineVerdict> = pairs
        .into_iter()
        .map(|(inst, wf, s)| BaselineVerdict {
            instance_id: inst.instance_id.clone(),
            workflow: wf.clone(),
            approach: EDIT_DISTANCE.to_string(),
            test_id: None,
            prediction: Outcome::from_pass(s >= threshold.value),
            similarity: Some(s),
            threshold: Some(threshold.value),
        })
        .collect();
    write_jsonl(&ctx.out(&format!("verdicts/{EDIT_DISTANCE}.jsonl")), &records)?;
    write_failures(ctx, EDIT_DISTANCE, &failures)?;
    Ok(failures.len())
}

type Key = (String, String);

/// Builds from per-test outcomes; candidates missing a verdict for any
/// unseen test are skipped.
fn builds_from_tests(
    name: &str,
    groups: BTreeMap<Key, BTreeMap<String, Outcome>>,
    tests: &BTreeMap<String, Vec<TestCase>>,
) -> Result<Vec<BuildPrediction>> {
    let mut builds = Vec::new();
    for ((id, wf), per_test) in groups {
        let expected = tests.get(&id).map_or(0, Vec::len);
        if per_test.len() != expected {
            warn!(
                "{name}: {id}/{wf} has {} of {expected} test verdicts; skipped",
                per_test.len()
            );
            continue;
        }
        builds.push(BuildPrediction::from_tests(&id, &wf, per_test)?);
    }
    Ok(builds)
}

pub fn aggregate(ctx: &Ctx) -> Result<()> {
    let files = jsonl_files(&ctx.out("verdicts"))?;
    if files.is_empty() {
        return Err(UsageError("no verdict files; run `evaluate` first".into()).into());
    }
    let tests = ctx.all_tests()?;
    for (name, path) in files {
        let policy_path = ctx.out(&format!("builds/{name}{POLICY_SUFFIX}.jsonl"));
        let calibrated_path = ctx.out(&format!("calibrated/{name}.jsonl"));
        let builds = if name == RANDOM || name == EDIT_DISTANCE {
            let records: Vec<BaselineVerdict> = read_jsonl(&path)?;
            if name == RANDOM {
                let mut groups: BTreeMap<Key, BTreeMap<String, Outcome>> = BTreeMap::new();
                for r in records {
                    let test_id = r
                        .test_id
                        .ok_or_else(|| anyhow!("{}: random verdict without test_id", path.display()))?;
                    groups
                        .entry((r.instance_id, r.workflow))
                        .or_default()
                        .insert(test_id, r.prediction);
                }
                builds_from_tests(&name, groups, &tests)?
            } else {
                records
                    .iter()
                    .map(|r| BuildPrediction::from_single(&r.instance_id, &r.workflow, r.prediction))
                    .collect()
            }
        } else {
            let variant: CriticVariant = name.parse().with_context(|| format!("{}", path.display()))?;
            let verdicts: Vec<CriticVerdict> = read_jsonl(&path)?;
            if !variant.is_isolated() {
                verdicts
                    .iter()
                    .map(|v| BuildPrediction::from_single(&v.instance_id, &v.workflow, v.prediction))
                    .collect()
            } else {
                let mut groups: BTreeMap<Key, BTreeMap<String, Outcome>> = BTreeMap::new();
                let mut calibrated = Vec::new();
                for v in &verdicts {
                    let test_id = v
                        .test_id
                        .clone()
                        .ok_or_else(|| anyhow!("{}: isolated verdict without test_id", path.display()))?;
                    groups
                        .entry((v.instance_id.clone(), v.workflow.clone()))
                        .or_default()
                        .insert(test_id.clone(), v.prediction);
                    if ctx.cfg.calibrate {
                        let test = tests
                            .get(&v.instance_id)
                            .and_then(|ts| ts.iter().find(|t| t.test_id == test_id))
                            .ok_or_else(|| anyhow!("{}: verdict for unknown test `{test_id}`", v.instance_id))?;
                        calibrated.push(apply_threshold(v, test, &ctx.cfg.policy));
                    }
                }
                if ctx.cfg.calibrate {
                    let mut policy_groups: BTreeMap<Key, BTreeMap<String, Outcome>> = BTreeMap::new();
                    for v in &calibrated {
                        policy_groups
                            .entry((v.instance_id.clone(), v.workflow.clone()))
                            .or_default()
                            .insert(v.test_id.clone().unwrap_or_default(), v.prediction);
                    }
                    let forced = calibrated.iter().filter(|v| v.forced).count();
                    info!("{name}: policy forced {forced} of {} verdicts", calibrated.len());
                    write_jsonl(&calibrated_path, &calibrated)?;
                    write_jsonl(&policy_path, &builds_from_tests(&name, policy_groups, &tests)?)?;
                } else {
                    remove_if_exists(&calibrated_path)?;
                    remove_if_exists(&policy_path)?;
                }
                builds_from_tests(&name, groups, &tests)?
            }
        };
        write_jsonl(&ctx.out(&format!("builds/{name}.jsonl")), &builds)?;
    }
    Ok(())
}

pub fn rank(ctx: &Ctx, source: &str) -> Result<()> {
    let workflows: BTreeSet<&String> = ctx.instances.iter().flat_map(|i| i.candidates.keys()).collect();
    if workflows.len() < 2 {
        return Err(UsageError(format!(
            "ranking needs at least 2 workflows, the dataset has {}",
            workflows.len()
        ))
        .into());
    }
    let path = ctx.out(&format!("builds/{source}.jsonl"));
    if !path.exists() {
        return Err(UsageError(format!("{} not found; run `aggregate` first", path.display())).into());
    }
    let builds: Vec<BuildPrediction> = read_jsonl(&path)?;
    let mut rates: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for b in &builds {
        rates
            .entry(b.instance_id.clone())
            .or_default()
            .insert(b.workflow.clone(), b.pass_rate);
    }
    let predicted_workflows: BTreeSet<&String> = rates.values().flat_map(|m| m.keys()).collect();
    if predicted_workflows.len() < 2 {
        return Err(UsageError(format!("{source}: predictions cover fewer than 2 workflows")).into());
    }
    let mut rankings: Vec<RankingResult> = Vec::new();
    for inst in &ctx.instances {
        let Some(predicted) = rates.get(&inst.instance_id) else {
            continue;
        };
        let truth: BTreeMap<String, f64> = inst
            .labels
            .iter()
            .map(|(wf, gt)| (wf.clone(), gt.true_pass_rate()))
            .collect();
        match rank_workflows(&inst.instance_id, predicted, &truth) {
            Ok(r) => rankings.push(r),
            Err(EvalError::TooFewWorkflows { instance_id }) => {
                warn!("{instance_id}: fewer than 2 comparable workflows; not ranked")
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_jsonl(&ctx.out(&format!("rankings/{source}.jsonl")), &rankings)
}

pub fn report(ctx: &Ctx, rank_source: &str) -> Result<()> {
    let files = jsonl_files(&ctx.out("builds"))?;
    if files.is_empty() {
        return Err(UsageError("no build predictions; run `aggregate` first".into()).into());
    }
    let mut variants = Vec::new();
    for (name, path) in files {
        let builds: Vec<BuildPrediction> = read_jsonl(&path)?;
        let mut forced = 0;
        let micro = if let Some(base) = name.strip_suffix(POLICY_SUFFIX) {
            let verdicts: Vec<CriticVerdict> = read_jsonl(&ctx.out(&format!("calibrated/{base}.jsonl")))?;
            forced = verdicts.iter().filter(|v| v.forced).count();
            Some(critic_micro(&verdicts))
        } else if name == RANDOM {
            let records: Vec<BaselineVerdict> = read_jsonl(&ctx.out(&format!("verdicts/{RANDOM}.jsonl")))?;
            Some(
                records
                    .into_iter()
                    .filter_map(|r| {
                        Some(TestPrediction {
                            test_id: r.test_id?,
                            instance_id: r.instance_id,
                            workflow: r.workflow,
                            prediction: r.prediction,
                        })
                    })
                    .collect(),
            )
        } else if name.parse::<CriticVariant>().is_ok_and(|v| v.is_isolated()) {
            let verdicts: Vec<CriticVerdict> = read_jsonl(&ctx.out(&format!("verdicts/{name}.jsonl")))?;
            Some(critic_micro(&verdicts))
        } else {
            None
        };
        variants.push(VariantPredictions {
            name,
            micro,
            builds,
            forced,
        });
    }
    let ranking_path = ctx.out(&format!("rankings/{rank_source}.jsonl"));
    let rankings: Vec<RankingResult> = if ranking_path.exists() {
        read_jsonl(&ranking_path)?
    } else {
        warn!("{} not found; report has no ranking section", ranking_path.display());
        Vec::new()
    };
    let labels = ctx.labels();
    let report = build_report(&ReportInputs {
        labels: &labels,
        variants: &variants,
        rankings: &rankings,
        flip_positive: ctx.cfg.flip_positive,
    })?;
    write_atomic(&ctx.out("report.jsonl"), report.to_jsonl().as_bytes())?;
    write_atomic(&ctx.out("report.txt"), report.to_text().as_bytes())?;
    write_atomic(&ctx.out("pass_rate_histogram.csv"), report.pass_rate_csv().as_bytes())?;
    write_atomic(&ctx.out("rho_histogram.csv"), report.rho_csv().as_bytes())?;
    print!("{}", report.to_text());
    Ok(())
}

fn critic_micro(verdicts: &[CriticVerdict]) -> Vec<TestPrediction> {
    verdicts
        .iter()
        .filter_map(|v| {
            Some(TestPrediction {
                instance_id: v.instance_id.clone(),
                workflow: v.workflow.clone(),
                test_id: v.test_id.clone()?,
                prediction: v.prediction,
            })
        })
        .collect()
}
