//! Shared domain types: citation contexts, the six-category classification
//! scheme, the 2×3 prompt design, and the validated stage-one / stage-two
//! model outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("unknown setting label {0:?}")]
    UnknownLabel(String),
    #[error("unknown classification category {0:?}")]
    UnknownCategory(String),
    #[error("citation context has empty {0}")]
    EmptyField(&'static str),
    #[error("citation context lists {0:?} more than once")]
    DuplicateIdentifier(String),
    #[error("hypothesis index {0} outside 1..=5")]
    BadHypothesisIndex(u8),
}

/// A citation passage together with the identifiers of its citing and cited
/// documents. Identifiers are opaque strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitationContext {
    pub id: String,
    pub text: String,
    pub citing_paper: String,
    pub cited_papers: Vec<String>,
}

impl CitationContext {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        citing_paper: impl Into<String>,
        cited_papers: Vec<String>,
    ) -> Result<Self, DomainError> {
        let ctx = CitationContext {
            id: id.into(),
            text: text.into(),
            citing_paper: citing_paper.into(),
            cited_papers,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.id.trim().is_empty() {
            return Err(DomainError::EmptyField("id"));
        }
        if self.text.trim().is_empty() {
            return Err(DomainError::EmptyField("text"));
        }
        if self.citing_paper.trim().is_empty() {
            return Err(DomainError::EmptyField("citing_paper"));
        }
        if self.cited_papers.is_empty() {
            return Err(DomainError::EmptyField("cited_papers"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in std::iter::once(&self.citing_paper).chain(&self.cited_papers) {
            if !seen.insert(id.as_str()) {
                return Err(DomainError::DuplicateIdentifier(id.clone()));
            }
        }
        Ok(())
    }

    /// The normalized footnote 6 of Chubin & Moitra (1975) used as the
    /// shipped probe case.
    pub fn footnote_six() -> Self {
        CitationContext {
            id: "cm1975-fn6".into(),
            text: FOOTNOTE_SIX.into(),
            citing_paper: "Chubin-Moitra-1975".into(),
            cited_papers: vec!["Price-1970".into(), "Gilbert-Woolgar-1974".into()],
        }
    }
}

pub const FOOTNOTE_SIX: &str = "A distinction between ‘references’ and ‘citations’ was introduced by Price (1970), then reiterated by Gilbert and Woolgar (1974). We relax that distinction until the findings of our analyses are reported.";

/// Chubin & Moitra's six mutually exclusive, hierarchical categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassificationCategory {
    EssentialBasic,
    EssentialSubsidiary,
    SupplementaryAdditionalInformation,
    SupplementaryPerfunctory,
    NegationalPartial,
    NegationalTotal,
}

impl ClassificationCategory {
    pub const ALL: [ClassificationCategory; 6] = [
        ClassificationCategory::EssentialBasic,
        ClassificationCategory::EssentialSubsidiary,
        ClassificationCategory::SupplementaryAdditionalInformation,
        ClassificationCategory::SupplementaryPerfunctory,
        ClassificationCategory::NegationalPartial,
        ClassificationCategory::NegationalTotal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ClassificationCategory::EssentialBasic => "Essential-Basic",
            ClassificationCategory::EssentialSubsidiary => "Essential-Subsidiary",
            ClassificationCategory::SupplementaryAdditionalInformation => {
                "Supplementary-Additional-Information"
            }
            ClassificationCategory::SupplementaryPerfunctory => "Supplementary-Perfunctory",
            ClassificationCategory::NegationalPartial => "Negational-Partial",
            ClassificationCategory::NegationalTotal => "Negational-Total",
        }
    }
}

impl fmt::Display for ClassificationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ClassificationCategory {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| DomainError::UnknownCategory(s.to_string()))
    }
}

impl Serialize for ClassificationCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for ClassificationCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CitedPaperReading {
    pub cited_paper: String,
    pub classification_category: ClassificationCategory,
    pub classification_explanation: String,
    pub content_expectation: String,
    pub citation_expectation: String,
}

/// Stage-one output: surface classification plus expectation notes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOneResult {
    pub citation_context: String,
    pub citing_paper: String,
    pub cited_papers: Vec<CitedPaperReading>,
}

impl StageOneResult {
    pub fn reading_for(&self, cited_paper: &str) -> Option<&CitedPaperReading> {
        self.cited_papers.iter().find(|r| r.cited_paper == cited_paper)
    }

    /// All expectation notes, one string per cited paper and expectation kind.
    pub fn expectation_notes(&self) -> Vec<&str> {
        self.cited_papers
            .iter()
            .flat_map(|r| [r.content_expectation.as_str(), r.citation_expectation.as_str()])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BasePrompt {
    FourStep,
    OneStep,
}

impl BasePrompt {
    pub fn label(self) -> &'static str {
        match self {
            BasePrompt::FourStep => "4-step",
            BasePrompt::OneStep => "1-step",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Nudge {
    Toward,
    Away,
    NoNudge,
}

impl Nudge {
    pub fn label(self) -> &'static str {
        match self {
            Nudge::Toward => "Toward",
            Nudge::Away => "Away",
            Nudge::NoNudge => "No-nudge",
        }
    }
}

/// One cell of the balanced 2×3 design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PromptSetting {
    pub base: BasePrompt,
    pub nudge: Nudge,
}

impl PromptSetting {
    /// Canonical order, matching the column order of the frequency table and
    /// the inner loop of the stage-two grid.
    pub const ALL: [PromptSetting; 6] = [
        PromptSetting::new(BasePrompt::FourStep, Nudge::Toward),
        PromptSetting::new(BasePrompt::FourStep, Nudge::Away),
        PromptSetting::new(BasePrompt::FourStep, Nudge::NoNudge),
        PromptSetting::new(BasePrompt::OneStep, Nudge::Toward),
        PromptSetting::new(BasePrompt::OneStep, Nudge::Away),
        PromptSetting::new(BasePrompt::OneStep, Nudge::NoNudge),
    ];

    /// The reference cell of the linear probability models.
    pub const REFERENCE: PromptSetting = PromptSetting::new(BasePrompt::OneStep, Nudge::NoNudge);

    pub const fn new(base: BasePrompt, nudge: Nudge) -> Self {
        PromptSetting { base, nudge }
    }

    pub fn label(self) -> String {
        format!("{}/{}", self.base.label(), self.nudge.label())
    }

    /// Path- and URL-safe form used inside run identifiers, e.g. `4step-toward`.
    pub fn slug(self) -> String {
        let base = match self.base {
            BasePrompt::FourStep => "4step",
            BasePrompt::OneStep => "1step",
        };
        let nudge = match self.nudge {
            Nudge::Toward => "toward",
            Nudge::Away => "away",
            Nudge::NoNudge => "nonudge",
        };
        format!("{base}-{nudge}")
    }

    pub fn parse_label(label: &str) -> Result<Self, DomainError> {
        Self::ALL
            .into_iter()
            .find(|s| s.label() == label.trim())
            .ok_or_else(|| DomainError::UnknownLabel(label.to_string()))
    }

    /// Position in [`PromptSetting::ALL`].
    pub fn ordinal(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).expect("all settings are listed")
    }
}

impl fmt::Display for PromptSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for PromptSetting {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_label(s)
    }
}

impl Serialize for PromptSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for PromptSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse_label(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Presence {
    #[serde(rename = "yes")]
    Yes,
    #[serde(rename = "no")]
    No,
    #[serde(rename = "not applicable")]
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Framing {
    #[serde(rename = "expected")]
    Expected,
    #[serde(rename = "different")]
    Different,
    #[serde(rename = "not applicable")]
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectationCheck {
    pub cited_paper: String,
    pub content_presence: Presence,
    pub content_framing: Framing,
    pub content_justification: String,
    pub citation_presence: Presence,
    pub citation_function: Framing,
    pub citation_justification: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexicalCue {
    pub cue: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtendedContext {
    pub placement: String,
    pub recurrence: String,
    pub relational_cues: String,
    pub co_citation_patterns: String,
    pub narrative_function: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisPair {
    pub hypothesis: String,
    pub justification: String,
}

/// The JSON object a stage-two call returns. Intermediate sections are
/// present exactly when the run used the 4-step base prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTwoOutput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expectation_check: Option<Vec<ExpectationCheck>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexical_cues: Option<Vec<LexicalCue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extended_context: Option<ExtendedContext>,
    pub alternative_hypotheses: Vec<HypothesisPair>,
}

impl StageTwoOutput {
    /// Number of intermediate sections carried (0 for 1-step, 3 for 4-step).
    pub fn intermediate_sections(&self) -> usize {
        usize::from(self.expectation_check.is_some())
            + usize::from(self.lexical_cues.is_some())
            + usize::from(self.extended_context.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTwoResult {
    pub run_id: String,
    pub setting: PromptSetting,
    pub seed_stage_one: String,
    #[serde(flatten)]
    pub output: StageTwoOutput,
}

impl StageTwoResult {
    pub fn hypothesis_units(&self) -> Vec<HypothesisUnit> {
        self.output
            .alternative_hypotheses
            .iter()
            .enumerate()
            .map(|(i, pair)| HypothesisUnit {
                run_id: self.run_id.clone(),
                index: (i + 1) as u8,
                hypothesis: pair.hypothesis.clone(),
                justification: pair.justification.clone(),
                setting: self.setting,
            })
            .collect()
    }
}

/// One hypothesis–justification pair, the unit of coding and analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisUnit {
    pub run_id: String,
    pub index: u8,
    pub hypothesis: String,
    pub justification: String,
    pub setting: PromptSetting,
}

impl HypothesisUnit {
    pub fn new(
        run_id: impl Into<String>,
        index: u8,
        hypothesis: impl Into<String>,
        justification: impl Into<String>,
        setting: PromptSetting,
    ) -> Result<Self, DomainError> {
        if !(1..=5).contains(&index) {
            return Err(DomainError::BadHypothesisIndex(index));
        }
        Ok(HypothesisUnit {
            run_id: run_id.into(),
            index,
            hypothesis: hypothesis.into(),
            justification: justification.into(),
            setting,
        })
    }

    pub fn id(&self) -> String {
        hypothesis_id(&self.run_id, self.index)
    }

    /// Hypothesis and justification joined as one interpretative unit.
    pub fn text(&self) -> String {
        format!("{} {}", self.hypothesis, self.justification)
    }
}

pub fn hypothesis_id(run_id: &str, index: u8) -> String {
    format!("{run_id}-h{index}")
}

/// Run identifiers follow `s2-{seed}-{setting slug}-{counter}`.
pub fn stage_two_run_id(seed: &str, setting: PromptSetting, counter: usize) -> String {
    format!("s2-{seed}-{}-{counter:03}", setting.slug())
}
