//! Code-level and marker-level analyses over a stored code matrix, and the
//! plot-ready emissions shared by the CLI and the HTTP API.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BasePrompt, PromptSetting};
use crate::lexical::{echo_study, reiter_cooccurrence, CooccurrenceRow, EchoStudy, LexicalError, MarkerLexicon, REITER};
use crate::stats::{
    self, ame_with, bh_fdr, cell_contrast_with, fit_lpm, wald_omnibus_with, AmeKind, Correction, DesignRow,
    EffectEstimate, Reference, StatsError, TestResult,
};
use crate::store::{cell_counts, CellCounts, CodeMatrix, Store, StoreError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no code matrix to analyze")]
    NoMatrix,
    #[error("unknown family {0:?} (expected 4step, toward or away)")]
    UnknownFamily(String),
    #[error("the report has no marker analysis")]
    NoMarkers,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Lexical(#[from] LexicalError),
    #[error(transparent)]
    Store(StoreError),
}

impl From<StoreError> for AnalysisError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NoMatrix => AnalysisError::NoMatrix,
            other => AnalysisError::Store(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub correction: Correction,
    pub alpha: f64,
    pub reference: Reference,
    pub markers: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { correction: Correction::CR1, alpha: 0.05, reference: Reference::Normal, markers: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmeResult {
    pub kind: AmeKind,
    pub effect: EffectEstimate,
    /// BH q-value across codes within this AME family.
    pub q_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub a: PromptSetting,
    pub b: PromptSetting,
    pub effect: EffectEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeAnalysis {
    pub code: String,
    pub ames: Vec<AmeResult>,
    pub omnibus: TestResult,
    pub counts: CellCounts,
    pub contrasts: Vec<ContrastResult>,
    pub zero_cells: Vec<PromptSetting>,
}

impl CodeAnalysis {
    pub fn ame(&self, kind: AmeKind) -> &EffectEstimate {
        &self.ames.iter().find(|a| a.kind == kind).expect("all three AMEs present").effect
    }

    pub fn contrast(&self, a: PromptSetting, b: PromptSetting) -> Option<&EffectEstimate> {
        self.contrasts.iter().find(|c| c.a == a && c.b == b).map(|c| &c.effect)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub codebook_version: u32,
    pub matrix_digest: String,
    pub rows: usize,
    pub clusters: usize,
    pub correction: Correction,
    pub reference: Reference,
    pub alpha: f64,
    pub code_flag: String,
    pub marker_flag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReiterSummary {
    pub four_step: Vec<CooccurrenceRow>,
    pub one_step: Vec<CooccurrenceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub metadata: ReportMetadata,
    pub codes: Vec<CodeAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<EchoStudy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reiter: Option<ReiterSummary>,
}

impl AnalysisReport {
    pub fn code(&self, name: &str) -> Option<&CodeAnalysis> {
        self.codes.iter().find(|c| c.code == name)
    }
}

pub fn matrix_design(matrix: &CodeMatrix) -> Vec<DesignRow> {
    stats::design_rows(matrix.rows.iter().map(|r| (r.setting, r.run_id.as_str())))
}

/// All 15 unordered pairs of cells, earlier canonical cell first.
pub fn cell_pairs() -> Vec<(PromptSetting, PromptSetting)> {
    let mut out = Vec::new();
    for (i, a) in PromptSetting::ALL.iter().enumerate() {
        for b in &PromptSetting::ALL[i + 1..] {
            out.push((*a, *b));
        }
    }
    out
}

/// Fits every code in the matrix. `texts` (aligned with matrix rows) enables
/// the marker and cue analyses.
pub fn analyze_matrix<S: AsRef<str>>(
    matrix: &CodeMatrix,
    texts: Option<&[S]>,
    options: &AnalysisOptions,
) -> Result<AnalysisReport, AnalysisError> {
    if matrix.rows.is_empty() {
        return Err(AnalysisError::NoMatrix);
    }
    let design = matrix_design(matrix);
    let mut codes = Vec::with_capacity(matrix.columns.len());
    let mut clusters = 0;
    for code in &matrix.columns {
        let y = stats::column_f64(&matrix.column(code)?);
        let fit = fit_lpm(code, &y, &design, options.correction)?;
        clusters = fit.n_clusters;
        let ames = AmeKind::ALL
            .into_iter()
            .map(|kind| AmeResult { kind, effect: ame_with(&fit, kind, options.reference), q_value: 1.0 })
            .collect();
        let contrasts = cell_pairs()
            .into_iter()
            .map(|(a, b)| {
                let effect = cell_contrast_with(&fit, a, b, options.reference)?;
                Ok(ContrastResult { a, b, effect })
            })
            .collect::<Result<Vec<_>, StatsError>>()?;
        codes.push(CodeAnalysis {
            code: code.clone(),
            ames,
            omnibus: wald_omnibus_with(&fit, options.reference),
            counts: cell_counts(matrix, code)?,
            contrasts,
            zero_cells: fit.zero_cells.clone(),
        });
    }
    for (f, _) in AmeKind::ALL.iter().enumerate() {
        let p: Vec<f64> = codes.iter().map(|c| c.ames[f].effect.p_value).collect();
        let q = bh_fdr(&p, options.alpha)?.q_values;
        for (c, q) in codes.iter_mut().zip(q) {
            c.ames[f].q_value = q;
        }
    }

    let (markers, reiter) = match (options.markers, texts) {
        (true, Some(texts)) => {
            let study = echo_study(texts, MarkerLexicon::embedded(), &design, options.alpha, options.correction)?;
            let reiter = ReiterSummary {
                four_step: reiter_cooccurrence(matrix, texts, REITER, Some(BasePrompt::FourStep))?,
                one_step: reiter_cooccurrence(matrix, texts, REITER, Some(BasePrompt::OneStep))?,
            };
            (Some(study), Some(reiter))
        }
        _ => (None, None),
    };

    Ok(AnalysisReport {
        metadata: ReportMetadata {
            codebook_version: matrix.codebook_version,
            matrix_digest: matrix.digest(),
            rows: matrix.rows.len(),
            clusters,
            correction: options.correction,
            reference: options.reference,
            alpha: options.alpha,
            code_flag: "95% CI excludes 0".into(),
            marker_flag: format!("BH q < {}", options.alpha),
        },
        codes,
        markers,
        reiter,
    })
}

pub fn run_analysis_codes(store: &Store, options: &AnalysisOptions) -> Result<AnalysisReport, AnalysisError> {
    let matrix = store.matrix()?;
    if options.markers {
        let texts: Vec<String> = store.hypotheses()?.iter().map(|u| u.text()).collect();
        analyze_matrix(&matrix, Some(&texts), options)
    } else {
        analyze_matrix::<String>(&matrix, None, options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Codes,
    Markers,
}

pub fn parse_family(s: &str) -> Result<AmeKind, AnalysisError> {
    AmeKind::parse(s).ok_or_else(|| AnalysisError::UnknownFamily(s.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotRow {
    pub name: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
}

fn pp(x: f64) -> f64 {
    let v = (x * 1000.0).round() / 10.0;
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// One row per code (or marker) for an AME family, largest estimate first.
/// Values are percentage points at one decimal unless `raw`, which keeps
/// unrounded proportions.
pub fn emit_dotwhisker(
    report: &AnalysisReport,
    family: AmeKind,
    subject: Subject,
    raw: bool,
) -> Result<Vec<DotRow>, AnalysisError> {
    let scale = |x: f64| if raw { x } else { pp(x) };
    let mut rows: Vec<(f64, DotRow)> = match subject {
        Subject::Codes => report
            .codes
            .iter()
            .map(|c| {
                let e = c.ame(family);
                (e.estimate, DotRow {
                    name: c.code.clone(),
                    estimate: scale(e.estimate),
                    ci_low: scale(e.ci_low),
                    ci_high: scale(e.ci_high),
                    significant: e.ci_low > 0.0 || e.ci_high < 0.0,
                })
            })
            .collect(),
        Subject::Markers => report
            .markers
            .as_ref()
            .ok_or(AnalysisError::NoMarkers)?
            .family(family)
            .map(|m| {
                (m.effect.estimate, DotRow {
                    name: m.label.clone(),
                    estimate: scale(m.effect.estimate),
                    ci_low: scale(m.effect.ci_low),
                    ci_high: scale(m.effect.ci_high),
                    significant: m.q_value < report.metadata.alpha,
                })
            })
            .collect(),
    };
    rows.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.name.cmp(&b.1.name)));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn dotwhisker_json(rows: &[DotRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("serializable");
    s.push('\n');
    s
}

pub fn dotwhisker_csv(rows: &[DotRow], raw: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let unit = if raw { "" } else { "_pp" };
    w.write_record(["name".to_string(), format!("estimate{unit}"), format!("ci_low{unit}"), format!("ci_high{unit}"), "significant".into()])
        .unwrap();
    for r in rows {
        let f = |x: f64| if raw { format!("{x}") } else { format!("{x:.1}") };
        w.write_record([r.name.clone(), f(r.estimate), f(r.ci_low), f(r.ci_high), u8::from(r.significant).to_string()])
            .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn report_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("serializable");
    s.push('\n');
    s
}

fn effect_record(name: &str, kind: &str, e: &EffectEstimate, q: Option<f64>, flag: &str) -> [String; 9] {
    let p = |x: f64| format!("{:.4}", x * 100.0);
    [
        name.to_string(),
        kind.to_string(),
        p(e.estimate),
        p(e.se),
        p(e.ci_low),
        p(e.ci_high),
        format!("{:.6}", e.p_value),
        q.map(|q| format!("{q:.6}")).unwrap_or_default(),
        flag.to_string(),
    ]
}

/// `code,effect_kind,estimate_pp,se_pp,ci_low_pp,ci_high_pp,p,q,flag`.
/// Markers appear with a `marker:` prefix.
pub fn effects_csv(report: &AnalysisReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["code", "effect_kind", "estimate_pp", "se_pp", "ci_low_pp", "ci_high_pp", "p", "q", "flag"])
        .unwrap();
    for c in &report.codes {
        let degenerate = c.zero_cells.len() == PromptSetting::ALL.len();
        for a in &c.ames {
            let e = &a.effect;
            let mut flags = Vec::new();
            if e.ci_low > 0.0 || e.ci_high < 0.0 {
                flags.push("ci_excludes_0");
            }
            if degenerate {
                flags.push("degenerate");
            }
            w.write_record(effect_record(&c.code, &format!("ame_{}", a.kind.slug()), e, Some(a.q_value), &flags.join(";")))
                .unwrap();
        }
        for ct in &c.contrasts {
            let kind = format!("cell:{}-vs-{}", ct.a.slug(), ct.b.slug());
            let flag = if ct.effect.ci_low > 0.0 || ct.effect.ci_high < 0.0 { "ci_excludes_0" } else { "" };
            w.write_record(effect_record(&c.code, &kind, &ct.effect, None, flag)).unwrap();
        }
    }
    if let Some(study) = &report.markers {
        for m in &study.effects {
            let flag = if m.significant { "q_below_alpha" } else { "" };
            w.write_record(effect_record(
                &format!("marker:{}", m.label),
                &format!("ame_{}", m.kind.slug()),
                &m.effect,
                Some(m.q_value),
                flag,
            ))
            .unwrap();
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
