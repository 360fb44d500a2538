//! Text-side measurements: nudge-marker indicators, stage-one hedging
//! counts, and co-occurrence of a cue stem with codes.

use std::collections::HashSet;
use std::path::Path;
use std::sync::LazyLock;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BasePrompt, HypothesisUnit, Nudge};
use crate::stats::{self, ame, bh_fdr, AmeKind, Correction, DesignRow, EffectEstimate, StatsError};
use crate::store::CodeMatrix;

const DEFAULT_LEXICON: &str = include_str!("../../../lexicon/nudge_markers.csv");
const DEFAULT_STOPWORDS: &str = include_str!("../../../lexicon/stopwords_en.txt");

pub const REITER: &str = "reiter";

#[derive(Debug, Error)]
pub enum LexicalError {
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("{rows} matrix rows but {texts} texts")]
    RowMismatch { rows: usize, texts: usize },
    #[error("bad pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn parse(text: &str) -> Stopwords {
        Stopwords(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect(),
        )
    }

    pub fn embedded() -> &'static Stopwords {
        static WORDS: LazyLock<Stopwords> = LazyLock::new(|| Stopwords::parse(DEFAULT_STOPWORDS));
        &WORDS
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '’'
}

/// Lowercases one whitespace-delimited token and strips punctuation at its
/// edges. A trailing apostrophe survives after "s" (plural possessive).
fn clean_token(raw: &str) -> String {
    let lower = raw.to_lowercase().replace('’', "'");
    let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric() && !is_apostrophe(c));
    let trimmed = trimmed.trim_start_matches('\'');
    let trimmed = trimmed.trim_start_matches(|c: char| !c.is_alphanumeric());
    let mut out = trimmed.to_string();
    while out.ends_with('\'') && !out[..out.len() - 1].ends_with('s') {
        out.pop();
        while out.ends_with(|c: char| !c.is_alphanumeric() && c != '\'') {
            out.pop();
        }
    }
    out
}

/// Lowercase, edge punctuation stripped, stopwords removed, single spaces.
pub fn normalize(text: &str) -> String {
    normalize_with(text, Stopwords::embedded())
}

pub fn normalize_with(text: &str, stopwords: &Stopwords) -> String {
    text.split_whitespace()
        .map(clean_token)
        .filter(|t| !t.is_empty() && !stopwords.contains(t))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased text with all words kept, used for multi-word patterns.
fn lowered(text: &str) -> String {
    text.split_whitespace()
        .map(clean_token)
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone)]
pub struct Marker {
    pub label: String,
    pub pattern: String,
    pub sources: Vec<Nudge>,
    pub examples: Vec<String>,
    regex: Regex,
    multi_word: bool,
}

impl Marker {
    pub fn regex(&self) -> &Regex {
        &self.regex
    }
}

/// Where marker patterns are applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchDomain {
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone)]
pub struct MarkerLexicon {
    pub items: Vec<Marker>,
}

fn compile(pattern: &str) -> Result<Regex, LexicalError> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .build()
        .map_err(|e| LexicalError::Pattern { pattern: pattern.into(), message: e.to_string() })
}

impl MarkerLexicon {
    pub fn parse(csv_text: &str) -> Result<MarkerLexicon, LexicalError> {
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        let header = rdr.headers().map_err(|e| LexicalError::Lexicon(e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != ["label", "pattern", "sources", "example"] {
            return Err(LexicalError::Lexicon("header must be label,pattern,sources,example".into()));
        }
        let mut items = Vec::new();
        let mut seen = HashSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| LexicalError::Lexicon(e.to_string()))?;
            let label = rec[0].trim().to_string();
            if label.is_empty() || !seen.insert(label.clone()) {
                return Err(LexicalError::Lexicon(format!("empty or duplicate label {label:?}")));
            }
            let sources = rec[2]
                .split(';')
                .map(|s| match s.trim() {
                    "toward" => Ok(Nudge::Toward),
                    "away" => Ok(Nudge::Away),
                    other => Err(LexicalError::Lexicon(format!("unknown source {other:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let pattern = rec[1].trim().to_string();
            items.push(Marker {
                regex: compile(&pattern)?,
                multi_word: pattern.contains(' '),
                label,
                pattern,
                sources,
                examples: rec[3].split(';').map(|s| s.trim().to_string()).collect(),
            });
        }
        Ok(MarkerLexicon { items })
    }

    pub fn embedded() -> &'static MarkerLexicon {
        static LEX: LazyLock<MarkerLexicon> =
            LazyLock::new(|| MarkerLexicon::parse(DEFAULT_LEXICON).expect("embedded lexicon parses"));
        &LEX
    }

    pub fn load(path: &Path) -> Result<MarkerLexicon, LexicalError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.items.iter().map(|m| m.label.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&Marker> {
        self.items.iter().find(|m| m.label == label)
    }
}

/// Presence (0/1) of every lexicon item in `text`, in lexicon order.
pub fn marker_indicators(text: &str, lexicon: &MarkerLexicon) -> Vec<u8> {
    marker_indicators_with(text, lexicon, MatchDomain::Normalized, Stopwords::embedded())
}

pub fn marker_indicators_with(
    text: &str,
    lexicon: &MarkerLexicon,
    domain: MatchDomain,
    stopwords: &Stopwords,
) -> Vec<u8> {
    let (normalized, full) = match domain {
        MatchDomain::Normalized => (normalize_with(text, stopwords), lowered(text)),
        MatchDomain::Raw => (text.to_string(), text.to_string()),
    };
    lexicon
        .items
        .iter()
        .map(|m| {
            let hay = if m.multi_word { &full } else { &normalized };
            u8::from(m.regex.is_match(hay))
        })
        .collect()
}

pub fn unit_indicators(unit: &HypothesisUnit, lexicon: &MarkerLexicon) -> Vec<u8> {
    marker_indicators(&unit.text(), lexicon)
}

/// Byte ranges in the raw text where `pattern` matches, case-insensitively.
pub fn highlight_spans(text: &str, pattern: &str) -> Result<Vec<(usize, usize)>, LexicalError> {
    Ok(compile(pattern)?.find_iter(text).map(|m| (m.start(), m.end())).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HedgeCounts {
    pub expected_to: usize,
    pub likely_to: usize,
    pub may: usize,
}

static HEDGES: LazyLock<[Regex; 3]> = LazyLock::new(|| {
    [
        r"[Ee]xpected to (reference|cite)",
        r"[Ll]ikely to (reference|cite)",
        r"[Mm]ay (reference|cite)",
    ]
    .map(|p| Regex::new(p).expect("static pattern"))
});

/// Number of notes matching each hedge expression; a note may count for more
/// than one.
pub fn hedge_counts<S: AsRef<str>>(notes: &[S]) -> HedgeCounts {
    let mut c = HedgeCounts::default();
    for note in notes {
        let n = note.as_ref();
        c.expected_to += usize::from(HEDGES[0].is_match(n));
        c.likely_to += usize::from(HEDGES[1].is_match(n));
        c.may += usize::from(HEDGES[2].is_match(n));
    }
    c
}

/// One note per stage-one run: all of its expectation text joined.
pub fn stage_one_note(result: &crate::domain::StageOneResult) -> String {
    result.expectation_notes().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceRow {
    pub code: String,
    pub code_rows: usize,
    pub code_and_term_rows: usize,
    /// P(term | code); absent when the code never occurs.
    pub share_with_term: Option<f64>,
    /// P(code | term); absent when the term never occurs.
    pub share_of_term: Option<f64>,
}

/// For each code, how often its 1-rows contain `term` (matched on normalized
/// text). `base` restricts rows to one base prompt.
pub fn reiter_cooccurrence<S: AsRef<str>>(
    matrix: &CodeMatrix,
    texts: &[S],
    term: &str,
    base: Option<BasePrompt>,
) -> Result<Vec<CooccurrenceRow>, LexicalError> {
    if texts.len() != matrix.rows.len() {
        return Err(LexicalError::RowMismatch { rows: matrix.rows.len(), texts: texts.len() });
    }
    let re = compile(term)?;
    let keep: Vec<bool> = matrix.rows.iter().map(|r| base.is_none_or(|b| r.setting.base == b)).collect();
    let has_term: Vec<bool> = texts.iter().map(|t| re.is_match(&normalize(t.as_ref()))).collect();
    let term_rows = keep.iter().zip(&has_term).filter(|(k, t)| **k && **t).count();
    Ok(matrix
        .columns
        .iter()
        .enumerate()
        .map(|(j, code)| {
            let mut code_rows = 0;
            let mut both = 0;
            for (i, row) in matrix.cells.iter().enumerate() {
                if keep[i] && row[j] == 1 {
                    code_rows += 1;
                    both += usize::from(has_term[i]);
                }
            }
            CooccurrenceRow {
                code: code.clone(),
                code_rows,
                code_and_term_rows: both,
                share_with_term: (code_rows > 0).then(|| both as f64 / code_rows as f64),
                share_of_term: (term_rows > 0).then(|| both as f64 / term_rows as f64),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerEffect {
    pub label: String,
    pub kind: AmeKind,
    pub effect: EffectEstimate,
    pub q_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoStudy {
    pub alpha: f64,
    /// Grouped by AME family, markers in lexicon order within each.
    pub effects: Vec<MarkerEffect>,
    pub indicator_rows: usize,
}

impl EchoStudy {
    pub fn family(&self, kind: AmeKind) -> impl Iterator<Item = &MarkerEffect> {
        self.effects.iter().filter(move |e| e.kind == kind)
    }

    pub fn get(&self, label: &str, kind: AmeKind) -> Option<&MarkerEffect> {
        self.effects.iter().find(|e| e.label == label && e.kind == kind)
    }
}

/// Marker-level LPMs with BH adjustment inside each AME family.
pub fn echo_study<S: AsRef<str>>(
    texts: &[S],
    lexicon: &MarkerLexicon,
    design: &[DesignRow],
    alpha: f64,
    correction: Correction,
) -> Result<EchoStudy, LexicalError> {
    if texts.len() != design.len() {
        return Err(LexicalError::RowMismatch { rows: design.len(), texts: texts.len() });
    }
    let indicators: Vec<Vec<u8>> = texts.iter().map(|t| marker_indicators(t.as_ref(), lexicon)).collect();
    let mut per_family: Vec<Vec<(String, EffectEstimate)>> = vec![Vec::new(); 3];
    for (j, m) in lexicon.items.iter().enumerate() {
        let y: Vec<f64> = indicators.iter().map(|r| f64::from(r[j])).collect();
        let fit = stats::fit_lpm(&m.label, &y, design, correction)?;
        for (f, kind) in AmeKind::ALL.into_iter().enumerate() {
            per_family[f].push((m.label.clone(), ame(&fit, kind)));
        }
    }
    let mut effects = Vec::new();
    for (kind, family) in AmeKind::ALL.into_iter().zip(per_family) {
        let p: Vec<f64> = family.iter().map(|(_, e)| e.p_value).collect();
        let bh = bh_fdr(&p, alpha)?;
        for (((label, effect), q), rejected) in family.into_iter().zip(bh.q_values).zip(bh.rejected) {
            effects.push(MarkerEffect { label, kind, effect, q_value: q, significant: rejected && q < alpha });
        }
    }
    Ok(EchoStudy { alpha, effects, indicator_rows: texts.len() })
}
