//! Executes the run plan: repeated stage-one classification, seed sampling,
//! and the full seeds x settings stage-two grid.
//!
//! Call indices are assigned from the plan position (stage-one index, or
//! seed position x 6 + setting position) and the attempt number, so a replay
//! of the same manifest reproduces every transcript key regardless of how
//! the worker threads were scheduled.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{stage_two_run_id, CitationContext, PromptSetting, StageOneResult, StageTwoResult};
use crate::prompt::{Document, PromptBundle, PromptError, TemplateSet};
use crate::provider::{call_index, Gateway, ProviderConfig, ProviderError, ProviderMode, Usage};
use crate::validate::{parse_stage_one_output, parse_stage_two_output, ParseError};

pub const DEFAULT_RNG_SEED: u64 = 20_250_807;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("reading manifest {path}: {source}")]
    ManifestIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot sample {k} seeds from {n} records")]
    SampleTooLarge { k: usize, n: usize },
    #[error("stage-one record {0} has no parsed result and cannot seed stage two")]
    UnusableSeed(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("{failed} run(s) failed, tolerance is {tolerance}")]
    PlanIncomplete {
        failed: usize,
        tolerance: usize,
        partial: Box<Partial>,
    },
}

/// Records produced before a plan was declared incomplete.
#[derive(Debug, Clone)]
pub enum Partial {
    StageOne(Vec<StageOneRecord>),
    StageTwo(Vec<RunRecord>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanPaths {
    pub context: Option<PathBuf>,
    pub attachments: Option<PathBuf>,
    pub transcripts: Option<PathBuf>,
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunManifest {
    pub stage_one_count: usize,
    pub seed_sample_size: usize,
    pub rng_seed: u64,
    pub settings: Vec<PromptSetting>,
    pub retry_limit: u32,
    pub provider_mode: ProviderMode,
    pub failure_tolerance: usize,
    pub parallelism: usize,
    pub provider: ProviderConfig,
    pub paths: PlanPaths,
}

impl Default for RunManifest {
    fn default() -> Self {
        RunManifest {
            stage_one_count: 30,
            seed_sample_size: 15,
            rng_seed: DEFAULT_RNG_SEED,
            settings: PromptSetting::ALL.to_vec(),
            retry_limit: 2,
            provider_mode: ProviderMode::Replay,
            failure_tolerance: 0,
            parallelism: Gateway::DEFAULT_PARALLELISM,
            provider: ProviderConfig::default(),
            paths: PlanPaths::default(),
        }
    }
}

impl RunManifest {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.seed_sample_size > self.stage_one_count {
            return Err(OrchestratorError::InvalidManifest(format!(
                "seed_sample_size {} exceeds stage_one_count {}",
                self.seed_sample_size, self.stage_one_count
            )));
        }
        let distinct: BTreeSet<_> = self.settings.iter().collect();
        if self.settings.len() != 6 || distinct.len() != 6 {
            return Err(OrchestratorError::InvalidManifest(
                "settings must list the six design cells exactly once".into(),
            ));
        }
        if self.parallelism == 0 {
            return Err(OrchestratorError::InvalidManifest("parallelism must be >= 1".into()));
        }
        self.provider
            .validate()
            .map_err(|e| OrchestratorError::InvalidManifest(e.to_string()))
    }

    pub fn parse(text: &str) -> Result<Self, OrchestratorError> {
        let manifest: RunManifest =
            toml::from_str(text).map_err(|e| OrchestratorError::InvalidManifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    /// Loads `plan.cfg`; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path).map_err(|source| OrchestratorError::ManifestIo {
            path: path.display().to_string(),
            source,
        })?;
        let mut manifest = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut manifest.paths.context,
            &mut manifest.paths.attachments,
            &mut manifest.paths.transcripts,
            &mut manifest.paths.store,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome<T> {
    Parsed(T),
    Failed { kind: String, message: String },
}

impl<T> Outcome<T> {
    pub fn parsed(&self) -> Option<&T> {
        match self {
            Outcome::Parsed(v) => Some(v),
            Outcome::Failed { .. } => None,
        }
    }

    fn failed(err: &ParseError) -> Self {
        Outcome::Failed {
            kind: err.kind().into(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOneRecord {
    pub record_id: String,
    pub index: usize,
    pub transcript_key: String,
    pub outcome: Outcome<StageOneResult>,
    pub attempt_count: u32,
    pub usage: Usage,
}

impl StageOneRecord {
    pub fn result(&self) -> Option<&StageOneResult> {
        self.outcome.parsed()
    }
}

pub fn stage_one_record_id(index: usize) -> String {
    format!("{:02}", index + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub setting: PromptSetting,
    pub seed_ref: String,
    pub transcript_key: String,
    pub outcome: Outcome<StageTwoResult>,
    pub attempt_count: u32,
    pub usage: Usage,
}

impl RunRecord {
    pub fn result(&self) -> Option<&StageTwoResult> {
        self.outcome.parsed()
    }
}

struct Attempted<T> {
    key: String,
    outcome: Outcome<T>,
    attempts: u32,
    usage: Usage,
}

/// Issues a bundle, re-sampling on retryable parse failures. Usage is summed
/// over all attempts since every attempt is billed.
fn call_with_retries<T>(
    gateway: &Gateway,
    bundle: &PromptBundle,
    ordinal: u32,
    retry_limit: u32,
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<Attempted<T>, ProviderError> {
    let mut usage = Usage::default();
    let mut attempt = 0;
    loop {
        let t = gateway.complete(bundle, call_index(ordinal, attempt))?;
        usage.input_tokens += t.usage.input_tokens;
        usage.output_tokens += t.usage.output_tokens;
        usage.reasoning_tokens += t.usage.reasoning_tokens;
        match parse(&t.response_text) {
            Ok(v) => {
                return Ok(Attempted { key: t.key, outcome: Outcome::Parsed(v), attempts: attempt + 1, usage })
            }
            Err(e) if e.is_retryable() && attempt < retry_limit => attempt += 1,
            Err(e) => {
                return Ok(Attempted { key: t.key, outcome: Outcome::failed(&e), attempts: attempt + 1, usage })
            }
        }
    }
}

/// Runs `job(i)` for `0..n` on up to `workers` threads and returns results in
/// index order. The first provider error stops the remaining jobs.
fn run_indexed<T: Send>(
    n: usize,
    workers: usize,
    job: impl Fn(usize) -> Result<T, ProviderError> + Sync,
) -> Result<Vec<T>, ProviderError> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    let error: Mutex<Option<(usize, ProviderError)>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n || error.lock().unwrap().is_some() {
                    break;
                }
                match job(i) {
                    Ok(v) => slots.lock().unwrap()[i] = Some(v),
                    Err(e) => {
                        let mut slot = error.lock().unwrap();
                        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                            *slot = Some((i, e));
                        }
                    }
                }
            });
        }
    });
    if let Some((_, e)) = error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|v| v.expect("every job ran"))
        .collect())
}

fn ordinal(i: usize) -> u32 {
    u32::try_from(i).expect("plan position fits in 32 bits")
}

pub fn execute_stage_one(
    manifest: &RunManifest,
    context: &CitationContext,
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<Vec<StageOneRecord>, OrchestratorError> {
    if manifest.stage_one_count == 0 {
        return Ok(Vec::new());
    }
    let bundle = templates.build_stage_one_prompt(context)?;
    let records = run_indexed(manifest.stage_one_count, manifest.parallelism, |i| {
        let a = call_with_retries(gateway, &bundle, ordinal(i), manifest.retry_limit, |raw| {
            parse_stage_one_output(raw, context)
        })?;
        Ok(StageOneRecord {
            record_id: stage_one_record_id(i),
            index: i,
            transcript_key: a.key,
            outcome: a.outcome,
            attempt_count: a.attempts,
            usage: a.usage,
        })
    })?;
    let failed = records.iter().filter(|r| r.result().is_none()).count();
    if failed > manifest.failure_tolerance {
        return Err(OrchestratorError::PlanIncomplete {
            failed,
            tolerance: manifest.failure_tolerance,
            partial: Box::new(Partial::StageOne(records)),
        });
    }
    Ok(records)
}

/// Uniform sample of `k` records without replacement, returned in their
/// original order.
pub fn sample_seeds(
    records: &[StageOneRecord],
    k: usize,
    rng_seed: u64,
) -> Result<Vec<StageOneRecord>, OrchestratorError> {
    if k > records.len() {
        return Err(OrchestratorError::SampleTooLarge { k, n: records.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut picked = rand::seq::index::sample(&mut rng, records.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

pub fn execute_stage_two(
    manifest: &RunManifest,
    seeds: &[StageOneRecord],
    attachments: &[Document],
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<Vec<RunRecord>, OrchestratorError> {
    if seeds.is_empty() {
        return Err(OrchestratorError::InvalidManifest("stage two needs at least one seed".into()));
    }
    // Build every bundle up front so a missing attachment fails before any call.
    let mut jobs = Vec::with_capacity(seeds.len() * manifest.settings.len());
    for seed in seeds {
        let result = seed
            .result()
            .ok_or_else(|| OrchestratorError::UnusableSeed(seed.record_id.clone()))?;
        for &setting in &manifest.settings {
            let bundle = templates.build_stage_two_prompt(setting, result, attachments)?;
            jobs.push((seed, setting, bundle));
        }
    }
    let records = run_indexed(jobs.len(), manifest.parallelism, |i| {
        let (seed, setting, bundle) = &jobs[i];
        let run_id = stage_two_run_id(&seed.record_id, *setting, i + 1);
        let a = call_with_retries(gateway, bundle, ordinal(i), manifest.retry_limit, |raw| {
            parse_stage_two_output(raw, *setting)
        })?;
        let outcome = match a.outcome {
            Outcome::Parsed(output) => Outcome::Parsed(StageTwoResult {
                run_id: run_id.clone(),
                setting: *setting,
                seed_stage_one: seed.record_id.clone(),
                output,
            }),
            Outcome::Failed { kind, message } => Outcome::Failed { kind, message },
        };
        Ok(RunRecord {
            run_id,
            setting: *setting,
            seed_ref: seed.record_id.clone(),
            transcript_key: a.key,
            outcome,
            attempt_count: a.attempts,
            usage: a.usage,
        })
    })?;
    let failed = records.iter().filter(|r| r.result().is_none()).count();
    if failed > manifest.failure_tolerance {
        return Err(OrchestratorError::PlanIncomplete {
            failed,
            tolerance: manifest.failure_tolerance,
            partial: Box::new(Partial::StageTwo(records)),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanResult {
    pub stage_one: Vec<StageOneRecord>,
    pub seeds: Vec<String>,
    pub runs: Vec<RunRecord>,
}

impl PlanResult {
    pub fn hypothesis_count(&self) -> usize {
        self.runs
            .iter()
            .filter_map(RunRecord::result)
            .map(|r| r.output.alternative_hypotheses.len())
            .sum()
    }

    pub fn intermediate_count(&self) -> usize {
        self.runs
            .iter()
            .filter_map(RunRecord::result)
            .map(|r| r.output.intermediate_sections())
            .sum()
    }

    pub fn usages(&self) -> impl Iterator<Item = &Usage> {
        self.stage_one.iter().map(|r| &r.usage).chain(self.runs.iter().map(|r| &r.usage))
    }
}

/// Stage one, sampling, then stage two.
pub fn run_plan(
    manifest: &RunManifest,
    context: &CitationContext,
    attachments: &[Document],
    gateway: &Gateway,
    templates: &TemplateSet,
) -> Result<PlanResult, OrchestratorError> {
    manifest.validate()?;
    let stage_one = execute_stage_one(manifest, context, gateway, templates)?;
    let usable: Vec<StageOneRecord> = stage_one.iter().filter(|r| r.result().is_some()).cloned().collect();
    let seeds = sample_seeds(&usable, manifest.seed_sample_size, manifest.rng_seed)?;
    let runs = execute_stage_two(manifest, &seeds, attachments, gateway, templates)?;
    Ok(PlanResult {
        stage_one,
        seeds: seeds.into_iter().map(|s| s.record_id).collect(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BasePrompt, ClassificationCategory, CitedPaperReading};
    use crate::prompt::{MediaKind, Stage};
    use crate::provider::{ProviderReply, Transport, TransportError};
    use std::sync::Arc;

    fn stage_one_json(category: &str) -> String {
        serde_json::json!({
            "citation_context": crate::domain::FOOTNOTE_SIX,
            "citing_paper": "Chubin-Moitra-1975",
            "cited_papers": [
                {"cited_paper": "Price-1970", "classification_category": category,
                 "classification_explanation": "x", "content_expectation": "y",
                 "citation_expectation": "z"},
                {"cited_paper": "Gilbert-Woolgar-1974", "classification_category": category,
                 "classification_explanation": "x", "content_expectation": "y",
                 "citation_expectation": "Expected to cite Price (1970)."}
            ]
        })
        .to_string()
    }

    fn stage_two_json(base: BasePrompt) -> String {
        let hyps: Vec<_> = (1..=5)
            .map(|i| serde_json::json!({"hypothesis": format!("h{i}"), "justification": format!("j{i}")}))
            .collect();
        let mut doc = serde_json::json!({ "alternative_hypotheses": hyps });
        if base == BasePrompt::FourStep {
            let check = |p: &str| serde_json::json!({
                "cited_paper": p,
                "content_presence": "yes", "content_framing": "expected", "content_justification": "j",
                "citation_presence": "no", "citation_function": "not applicable", "citation_justification": "j"
            });
            doc["expectation_check"] = serde_json::json!([check("Price-1970"), check("Gilbert-Woolgar-1974")]);
            doc["lexical_cues"] = serde_json::json!([{"cue": "reiterated", "explanation": "e"}]);
            doc["extended_context"] = serde_json::json!({
                "placement": "p", "recurrence": "r", "relational_cues": "c",
                "co_citation_patterns": "c", "narrative_function": "n"
            });
        }
        doc.to_string()
    }

    /// Answers validly except for scripted (ordinal, attempt) failures.
    struct Scripted {
        bad: Vec<(u32, u32)>,
        calls: AtomicUsize,
    }

    impl Transport for Scripted {
        fn send(&self, bundle: &PromptBundle, _: &ProviderConfig, idx: u64) -> Result<ProviderReply, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let pos = ((idx >> 32) as u32, idx as u32);
            let text = if self.bad.contains(&pos) {
                "{not json".to_string()
            } else if bundle.stage == Stage::StageOne {
                let cat = if pos.0 % 3 == 0 { "Supplementary-Additional-Information" } else { "Supplementary-Perfunctory" };
                stage_one_json(cat)
            } else {
                stage_two_json(bundle.setting.unwrap().base)
            };
            Ok(ProviderReply { text, usage: Usage { input_tokens: 10, output_tokens: 2, reasoning_tokens: 1 }, echo: None })
        }
    }

    fn gateway(bad: Vec<(u32, u32)>) -> (Gateway, Arc<Scripted>) {
        let t = Arc::new(Scripted { bad, calls: AtomicUsize::new(0) });
        let g = Gateway::new(ProviderConfig::default(), ProviderMode::Live).with_transport(t.clone());
        (g, t)
    }

    fn docs() -> Vec<Document> {
        ["Chubin-Moitra-1975", "Price-1970", "Gilbert-Woolgar-1974"]
            .map(|n| Document::new(n, n.as_bytes().to_vec(), MediaKind::PlainText))
            .to_vec()
    }

    fn record(i: usize) -> StageOneRecord {
        StageOneRecord {
            record_id: stage_one_record_id(i),
            index: i,
            transcript_key: String::new(),
            outcome: Outcome::Parsed(StageOneResult {
                citation_context: "c".into(),
                citing_paper: "Chubin-Moitra-1975".into(),
                cited_papers: vec![CitedPaperReading {
                    cited_paper: "Price-1970".into(),
                    classification_category: ClassificationCategory::EssentialBasic,
                    classification_explanation: "x".into(),
                    content_expectation: "y".into(),
                    citation_expectation: "z".into(),
                }],
            }),
            attempt_count: 1,
            usage: Usage::default(),
        }
    }

    #[test]
    fn manifest_defaults_and_validation() {
        let m = RunManifest::parse("").unwrap();
        assert_eq!(m, RunManifest::default());
        assert_eq!((m.stage_one_count, m.seed_sample_size, m.retry_limit), (30, 15, 2));
        let round = RunManifest::parse(&m.to_toml()).unwrap();
        assert_eq!(round, m);
        assert!(RunManifest::parse("stage_one_count = 10\nseed_sample_size = 11").is_err());
        assert!(RunManifest::parse("settings = [\"4-step/Toward\"]").is_err());
        assert!(RunManifest::parse("bogus = 1").is_err());
        let m = RunManifest::parse("provider_mode = \"record\"\nrng_seed = 7").unwrap();
        assert_eq!((m.provider_mode, m.rng_seed), (ProviderMode::Record, 7));
    }

    #[test]
    fn stage_one_retry_on_malformed_output() {
        let (g, _) = gateway(vec![(7, 0)]);
        let m = RunManifest::default();
        let recs = execute_stage_one(&m, &CitationContext::footnote_six(), &g, &TemplateSet::embedded()).unwrap();
        assert_eq!(recs.len(), 30);
        assert_eq!(recs[7].attempt_count, 2);
        assert!(recs[7].result().is_some());
        assert!(recs.iter().enumerate().all(|(i, r)| i == 7 || r.attempt_count == 1));
        assert_eq!(recs[7].usage.input_tokens, 20);
    }

    #[test]
    fn exhausted_retries_make_plan_incomplete() {
        let (g, _) = gateway(vec![(3, 0), (3, 1), (3, 2)]);
        let m = RunManifest { stage_one_count: 5, seed_sample_size: 1, ..RunManifest::default() };
        match execute_stage_one(&m, &CitationContext::footnote_six(), &g, &TemplateSet::embedded()) {
            Err(OrchestratorError::PlanIncomplete { failed: 1, partial, .. }) => match *partial {
                Partial::StageOne(recs) => {
                    assert_eq!(recs[3].attempt_count, 3);
                    assert!(matches!(&recs[3].outcome, Outcome::Failed { kind, .. } if kind == "MalformedJson"));
                }
                _ => panic!(),
            },
            other => panic!("{other:?}"),
        }
        let tolerant = RunManifest { failure_tolerance: 1, ..m };
        let recs = execute_stage_one(&tolerant, &CitationContext::footnote_six(), &g, &TemplateSet::embedded()).unwrap();
        assert_eq!(recs.len(), 5);
    }

    #[test]
    fn empty_plan() {
        let (g, t) = gateway(vec![]);
        let m = RunManifest { stage_one_count: 0, seed_sample_size: 0, ..RunManifest::default() };
        let recs = execute_stage_one(&m, &CitationContext::footnote_six(), &g, &TemplateSet::embedded()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(t.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn sampling() {
        let recs: Vec<_> = (0..30).map(record).collect();
        assert_eq!(sample_seeds(&recs, 30, 1).unwrap(), recs);
        let a = sample_seeds(&recs, 15, 42).unwrap();
        assert_eq!(a, sample_seeds(&recs, 15, 42).unwrap());
        assert!(a.windows(2).all(|w| w[0].index < w[1].index));
        assert!(matches!(sample_seeds(&recs, 31, 1), Err(OrchestratorError::SampleTooLarge { k: 31, n: 30 })));
    }

    #[test]
    fn sampling_is_uniform() {
        let recs: Vec<_> = (0..30).map(record).collect();
        let mut hits = [0u32; 30];
        let trials = 10_000;
        for t in 0..trials {
            for r in sample_seeds(&recs, 15, t).unwrap() {
                hits[r.index] += 1;
            }
        }
        for h in hits {
            let f = f64::from(h) / trials as f64;
            assert!((f - 0.5).abs() <= 0.02, "{f}");
        }
    }

    #[test]
    fn stage_two_grid() {
        let (g, _) = gateway(vec![(4, 0)]);
        let m = RunManifest::default();
        let ctx = CitationContext::footnote_six();
        let one = execute_stage_one(&RunManifest { stage_one_count: 2, seed_sample_size: 1, ..m.clone() }, &ctx, &g, &TemplateSet::embedded()).unwrap();
        let runs = execute_stage_two(&m, &one[..1], &docs(), &g, &TemplateSet::embedded()).unwrap();
        assert_eq!(runs.len(), 6);
        let settings: Vec<_> = runs.iter().map(|r| r.setting).collect();
        assert_eq!(settings, PromptSetting::ALL);
        let hyps: usize = runs.iter().map(|r| r.result().unwrap().hypothesis_units().len()).sum();
        assert_eq!(hyps, 30);
        assert_eq!(runs[4].attempt_count, 2);
        assert_eq!(runs[0].run_id, "s2-01-4step-toward-001");

        let missing = &docs()[..2];
        assert!(matches!(
            execute_stage_two(&m, &one[..1], missing, &g, &TemplateSet::embedded()),
            Err(OrchestratorError::Prompt(PromptError::MissingAttachment(n))) if n == "Gilbert-Woolgar-1974"
        ));
    }

    #[test]
    fn full_plan_shape_and_determinism() {
        let (g, _) = gateway(vec![]);
        let m = RunManifest::default();
        let ctx = CitationContext::footnote_six();
        let a = run_plan(&m, &ctx, &docs(), &g, &TemplateSet::embedded()).unwrap();
        assert_eq!((a.stage_one.len(), a.seeds.len(), a.runs.len()), (30, 15, 90));
        assert_eq!(a.hypothesis_count(), 450);
        assert_eq!(a.intermediate_count(), 135);
        let b = run_plan(&m, &ctx, &docs(), &g.with_parallelism(1), &TemplateSet::embedded()).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    }
}
