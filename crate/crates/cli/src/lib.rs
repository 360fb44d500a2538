//! Operator surface for the workbench: the emissions shared by the command
//! line and the HTTP API, and the mapping from errors to exit codes.

pub mod api;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Serialize;

use workbench_core::analysis::{
    dotwhisker_csv, dotwhisker_json, effects_csv, emit_dotwhisker, parse_family, report_json,
    run_analysis_codes, AnalysisError, AnalysisOptions, Subject,
};
use workbench_core::domain::{CitationContext, PromptSetting};
use workbench_core::lexical::{echo_study, highlight_spans, LexicalError, MarkerLexicon, REITER};
use workbench_core::orchestrator::{OrchestratorError, RunManifest};
use workbench_core::prompt::Document;
use workbench_core::provider::{Gateway, HttpTransport, ProviderError, ProviderMode, ReplayStore};
use workbench_core::stats::design_rows;
use workbench_core::store::{table1_csv, table3_csv, CodeMatrix, MatrixRow, Store, StoreError};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;
pub const EXIT_INCOMPLETE: u8 = 4;

/// Base URL override for the live provider endpoint.
pub const BASE_URL_VAR: &str = "WORKBENCH_BASE_URL";

/// Exit status for a failed command, from the first recognised error in the chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<OrchestratorError>() {
            return match e {
                OrchestratorError::PlanIncomplete { .. } => EXIT_INCOMPLETE,
                OrchestratorError::Provider(p) => provider_code(p),
                OrchestratorError::ManifestIo { .. } => EXIT_FAILURE,
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<ProviderError>() {
            return provider_code(e);
        }
        if let Some(e) = cause.downcast_ref::<StoreError>() {
            return store_code(e);
        }
        if let Some(e) = cause.downcast_ref::<AnalysisError>() {
            return match e {
                AnalysisError::Store(s) => store_code(s),
                _ => EXIT_VALIDATION,
            };
        }
        if let Some(e) = cause.downcast_ref::<LexicalError>() {
            return match e {
                LexicalError::Io(_) => EXIT_FAILURE,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<Invalid>().is_some() {
            return EXIT_VALIDATION;
        }
    }
    EXIT_FAILURE
}

fn provider_code(e: &ProviderError) -> u8 {
    match e {
        ProviderError::InvalidConfig(_) => EXIT_VALIDATION,
        _ => EXIT_PROVIDER,
    }
}

fn store_code(e: &StoreError) -> u8 {
    match e {
        StoreError::Io(_) | StoreError::Locked(_) => EXIT_FAILURE,
        _ => EXIT_VALIDATION,
    }
}

/// A user-input problem not covered by a library error type.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

/// Loads `plan.cfg`, or the defaults when the file does not exist.
pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    if path.exists() {
        Ok(RunManifest::load(path)?)
    } else {
        Ok(RunManifest::default())
    }
}

pub fn store_path(explicit: Option<&Path>, manifest: &RunManifest) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| manifest.paths.store.clone())
        .unwrap_or_else(|| PathBuf::from("workspace"))
}

pub fn load_context(manifest: &RunManifest) -> Result<CitationContext> {
    match &manifest.paths.context {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let ctx: CitationContext =
                serde_json::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", p.display())))?;
            ctx.validate().map_err(|e| Invalid(e.to_string()))?;
            Ok(ctx)
        }
        None => Ok(CitationContext::footnote_six()),
    }
}

pub fn load_attachments(manifest: &RunManifest) -> Result<Vec<Document>> {
    match &manifest.paths.attachments {
        Some(dir) => Document::load_dir(dir).with_context(|| format!("reading attachments in {}", dir.display())),
        None => Ok(Vec::new()),
    }
}

/// Gateway for the manifest. The mode comes from `mode`, then the
/// environment, then the manifest.
pub fn gateway(manifest: &RunManifest, mode: Option<ProviderMode>) -> Result<Gateway> {
    let mode = match mode {
        Some(m) => m,
        None => ProviderMode::from_env_or(manifest.provider_mode)?,
    };
    let mut g = Gateway::new(manifest.provider.clone(), mode).with_parallelism(manifest.parallelism);
    if let Some(dir) = &manifest.paths.transcripts {
        g = g.with_store(ReplayStore::open(dir)?);
    }
    if mode != ProviderMode::Replay {
        g = g.with_transport(Arc::new(HttpTransport::from_env(std::env::var(BASE_URL_VAR).ok())));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn analysis_text(store: &Store, options: &AnalysisOptions, format: Format) -> Result<String> {
    let report = run_analysis_codes(store, options)?;
    Ok(match format {
        Format::Json => report_json(&report),
        Format::Csv => effects_csv(&report),
    })
}

/// Dot-and-whisker rows for one AME family.
pub fn ame_text(
    store: &Store,
    family: &str,
    subject: Subject,
    raw: bool,
    options: &AnalysisOptions,
    format: Format,
) -> Result<String> {
    let kind = parse_family(family)?;
    let options = AnalysisOptions { markers: subject == Subject::Markers, ..*options };
    let report = run_analysis_codes(store, &options)?;
    let rows = emit_dotwhisker(&report, kind, subject, raw)?;
    Ok(match format {
        Format::Json => dotwhisker_json(&rows),
        Format::Csv => dotwhisker_csv(&rows, raw),
    })
}

/// Marker-level AMEs over the stored hypothesis texts. Needs no coding.
pub fn echo_text(store: &Store, options: &AnalysisOptions) -> Result<String> {
    let units = store.hypotheses()?;
    if units.is_empty() {
        return Err(Invalid("the store has no hypothesis units".into()).into());
    }
    let texts: Vec<String> = units.iter().map(|u| u.text()).collect();
    let design = design_rows(units.iter().map(|u| (u.setting, u.run_id.as_str())));
    let study = echo_study(&texts, MarkerLexicon::embedded(), &design, options.alpha, options.correction)?;
    Ok(json_line(&study))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Table1,
    Table3,
    Matrix,
}

pub fn export_text(store: &Store, table: Table) -> Result<String> {
    let m = store.matrix()?;
    Ok(match table {
        Table::Table1 => table1_csv(&m),
        Table::Table3 => table3_csv(&m),
        Table::Matrix => m.to_csv(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub setting: PromptSetting,
    pub seed_ref: String,
    pub parsed: bool,
    pub attempt_count: u32,
    pub hypotheses: usize,
}

pub fn run_summaries(store: &Store, setting: Option<PromptSetting>) -> Result<Vec<RunSummary>> {
    Ok(store
        .runs()?
        .into_iter()
        .filter(|r| setting.is_none_or(|s| r.setting == s))
        .map(|r| RunSummary {
            hypotheses: r.result().map_or(0, |x| x.output.alternative_hypotheses.len()),
            parsed: r.result().is_some(),
            run_id: r.run_id,
            setting: r.setting,
            seed_ref: r.seed_ref,
            attempt_count: r.attempt_count,
        })
        .collect())
}

/// A lexicon match inside one text field, in UTF-16 code units so browser
/// clients can slice strings directly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Highlight {
    pub field: &'static str,
    pub marker: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnitView {
    pub id: String,
    pub run_id: String,
    pub index: u8,
    pub setting: PromptSetting,
    pub hypothesis: String,
    pub justification: String,
    pub highlights: Vec<Highlight>,
}

fn utf16_offset(text: &str, byte: usize) -> usize {
    text[..byte].encode_utf16().count()
}

fn highlights(field: &'static str, text: &str, lexicon: &MarkerLexicon) -> Result<Vec<Highlight>> {
    let span = |marker: &str, s: usize, e: usize| Highlight {
        field,
        marker: marker.to_string(),
        start: utf16_offset(text, s),
        end: utf16_offset(text, e),
    };
    let mut out = Vec::new();
    for m in &lexicon.items {
        out.extend(m.regex().find_iter(text).map(|x| span(&m.label, x.start(), x.end())));
    }
    if lexicon.get(REITER).is_none() {
        out.extend(highlight_spans(text, REITER)?.into_iter().map(|(s, e)| span(REITER, s, e)));
    }
    out.sort_by(|a, b| (a.start, a.end, &a.marker).cmp(&(b.start, b.end, &b.marker)));
    Ok(out)
}

pub fn unit_views(store: &Store, run_id: &str) -> Result<Vec<UnitView>> {
    if !store.runs()?.iter().any(|r| r.run_id == run_id) {
        return Err(StoreError::UnknownRun(run_id.into()).into());
    }
    let lexicon = MarkerLexicon::embedded();
    store
        .hypotheses_for_run(run_id)?
        .into_iter()
        .map(|u| {
            let mut hl = highlights("hypothesis", &u.hypothesis, lexicon)?;
            hl.extend(highlights("justification", &u.justification, lexicon)?);
            Ok(UnitView {
                id: u.id(),
                run_id: u.run_id,
                index: u.index,
                setting: u.setting,
                hypothesis: u.hypothesis,
                justification: u.justification,
                highlights: hl,
            })
        })
        .collect()
}

/// Current cell values. Before any coding every cell reads 0.
pub fn current_matrix(store: &Store) -> Result<CodeMatrix> {
    match store.matrix() {
        Ok(m) => Ok(m),
        Err(StoreError::NoMatrix) => {
            let book = store.codebook()?;
            let rows: Vec<MatrixRow> = store.hypotheses()?.iter().map(MatrixRow::from).collect();
            Ok(CodeMatrix {
                codebook_version: book.version,
                columns: book.names().into_iter().map(str::to_string).collect(),
                cells: vec![vec![0; book.codes.len()]; rows.len()],
                rows,
            })
        }
        Err(e) => Err(e.into()),
    }
}
