//! Prompt assembly for both pipeline stages.
//!
//! Stage-two templates are the two base prompts; a nudge paragraph, when one
//! applies, is inserted as its own paragraph directly after the opening role
//! paragraph. Templates are embedded at build time and pinned by SHA-256 so
//! accidental edits are caught before any request is issued.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{BasePrompt, CitationContext, Nudge, PromptSetting, StageOneResult};
use crate::sha256_hex;

pub const STAGE_TWO_FOUR_STEP: &str = include_str!("../../../prompts/stage2_4step.txt");
pub const STAGE_TWO_ONE_STEP: &str = include_str!("../../../prompts/stage2_1step.txt");
pub const NUDGE_TOWARD: &str = include_str!("../../../prompts/nudge_toward.txt");
pub const NUDGE_AWAY: &str = include_str!("../../../prompts/nudge_away.txt");
/// Reconstructed from the description of the stage-one task; not a verbatim
/// transcription.
pub const STAGE_ONE: &str = include_str!("../../../prompts/stage1.txt");
pub const CLASSIFICATION_SCHEME: &str = include_str!("../../../prompts/scheme_chubin_moitra.txt");

const CHECKSUMS: [(&str, &str); 6] = [
    ("stage2_4step.txt", "0b9370e78a79a240ac820a2261b4aea250bf6f0418b4af199e079299c8d6db8a"),
    ("stage2_1step.txt", "b7cb5ff0afd41061cd8caf7b3b2321fb87fac93fd38f7416016869b007a6f08e"),
    ("nudge_toward.txt", "952543a35273a2cff6d76ab31493adb23ccec3d6399f93c3c2715ff7c99eb04b"),
    ("nudge_away.txt", "44da694b80e696122408e773ebd1930895744462d94fc0f1366330a6f74357a6"),
    ("stage1.txt", "6b79664c87dd38c661bc27250cf443f5c09420fb9528fca21b26fc625fa4e776"),
    ("scheme_chubin_moitra.txt", "27ce6f4168ab09f4d3d1b9508a5f902dca05198c589c18876d2fe83bfd7c0677"),
];

/// The nudge paragraph goes right after this sentence and its blank line.
const ROLE_PARAGRAPH_END: &str = "extend beyond their surface appearance.\n\n";
const SCHEME_SLOT: &str = "{{SCHEME}}";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("citation context has empty text")]
    EmptyContext,
    #[error("no attachment supplied for {0:?}")]
    MissingAttachment(String),
    #[error("template {name} failed checksum (expected {expected}, found {found})")]
    TemplateCorruption {
        name: String,
        expected: String,
        found: String,
    },
    #[error("template {name} lacks the insertion anchor")]
    MissingAnchor { name: String },
    #[error("reading template {name}: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    StageOne,
    StageTwo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MediaKind {
    Pdf,
    PlainText,
}

impl MediaKind {
    pub fn mime(self) -> &'static str {
        match self {
            MediaKind::Pdf => "application/pdf",
            MediaKind::PlainText => "text/plain",
        }
    }

    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "pdf" => Some(MediaKind::Pdf),
            "txt" | "text" | "md" => Some(MediaKind::PlainText),
            _ => None,
        }
    }
}

/// A full-text document handed to the model, named by its identifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub name: String,
    pub bytes: Vec<u8>,
    pub media_kind: MediaKind,
}

impl Document {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>, media_kind: MediaKind) -> Self {
        Document {
            name: name.into(),
            bytes: bytes.into(),
            media_kind,
        }
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.bytes)
    }

    /// Loads every `*.pdf` / `*.txt` file in `dir`; the file stem is the
    /// document identifier.
    pub fn load_dir(dir: &Path) -> std::io::Result<Vec<Document>> {
        let mut docs = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
                continue;
            };
            let Some(kind) = MediaKind::from_extension(&ext.to_string_lossy()) else {
                continue;
            };
            docs.push(Document::new(stem.to_string_lossy(), fs::read(&path)?, kind));
        }
        docs.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(docs)
    }
}

/// Everything needed to issue one model call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub stage: Stage,
    pub setting: Option<PromptSetting>,
    pub system_text: String,
    pub input_payload: String,
    pub attachments: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NudgeParagraph {
    pub nudge: Nudge,
    pub text: String,
}

/// The set of prompt texts the engine renders from.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    four_step: String,
    one_step: String,
    toward: String,
    away: String,
    stage_one: String,
    scheme: String,
}

impl TemplateSet {
    pub fn embedded() -> Self {
        TemplateSet {
            four_step: STAGE_TWO_FOUR_STEP.to_string(),
            one_step: STAGE_TWO_ONE_STEP.to_string(),
            toward: NUDGE_TOWARD.to_string(),
            away: NUDGE_AWAY.to_string(),
            stage_one: STAGE_ONE.to_string(),
            scheme: CLASSIFICATION_SCHEME.to_string(),
        }
    }

    /// Loads templates from a directory laid out like `prompts/`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            fs::read_to_string(dir.join(name)).map_err(|source| PromptError::Io {
                name: name.to_string(),
                source,
            })
        };
        Ok(TemplateSet {
            four_step: read("stage2_4step.txt")?,
            one_step: read("stage2_1step.txt")?,
            toward: read("nudge_toward.txt")?,
            away: read("nudge_away.txt")?,
            stage_one: read("stage1.txt")?,
            scheme: read("scheme_chubin_moitra.txt")?,
        })
    }

    fn by_name(&self, name: &str) -> &str {
        match name {
            "stage2_4step.txt" => &self.four_step,
            "stage2_1step.txt" => &self.one_step,
            "nudge_toward.txt" => &self.toward,
            "nudge_away.txt" => &self.away,
            "stage1.txt" => &self.stage_one,
            "scheme_chubin_moitra.txt" => &self.scheme,
            _ => unreachable!("unknown template {name}"),
        }
    }

    fn verify(&self, name: &str) -> Result<&str, PromptError> {
        let expected = CHECKSUMS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, sum)| *sum)
            .expect("checksum listed");
        let text = self.by_name(name);
        let found = sha256_hex(text.as_bytes());
        if found != expected {
            return Err(PromptError::TemplateCorruption {
                name: name.to_string(),
                expected: expected.to_string(),
                found,
            });
        }
        Ok(text)
    }

    pub fn verify_all(&self) -> Result<(), PromptError> {
        for (name, _) in CHECKSUMS {
            self.verify(name)?;
        }
        Ok(())
    }

    pub fn nudge_paragraph(&self, nudge: Nudge) -> Result<NudgeParagraph, PromptError> {
        let text = match nudge {
            Nudge::Toward => self.verify("nudge_toward.txt")?.trim_end().to_string(),
            Nudge::Away => self.verify("nudge_away.txt")?.trim_end().to_string(),
            Nudge::NoNudge => String::new(),
        };
        Ok(NudgeParagraph { nudge, text })
    }

    /// The full stage-two instruction text for a design cell.
    pub fn render_stage_two(&self, setting: PromptSetting) -> Result<String, PromptError> {
        let name = match setting.base {
            BasePrompt::FourStep => "stage2_4step.txt",
            BasePrompt::OneStep => "stage2_1step.txt",
        };
        let template = self.verify(name)?;
        let nudge = self.nudge_paragraph(setting.nudge)?;
        if nudge.text.is_empty() {
            return Ok(template.to_string());
        }
        let at = template
            .find(ROLE_PARAGRAPH_END)
            .map(|i| i + ROLE_PARAGRAPH_END.len())
            .ok_or_else(|| PromptError::MissingAnchor {
                name: name.to_string(),
            })?;
        let mut out = String::with_capacity(template.len() + nudge.text.len() + 2);
        out.push_str(&template[..at]);
        out.push_str(&nudge.text);
        out.push_str("\n\n");
        out.push_str(&template[at..]);
        Ok(out)
    }

    pub fn render_stage_one(&self) -> Result<String, PromptError> {
        let template = self.verify("stage1.txt")?;
        let scheme = self.verify("scheme_chubin_moitra.txt")?;
        Ok(template.replace(SCHEME_SLOT, scheme.trim_end()))
    }

    pub fn build_stage_one_prompt(
        &self,
        context: &CitationContext,
    ) -> Result<PromptBundle, PromptError> {
        if context.text.trim().is_empty() {
            return Err(PromptError::EmptyContext);
        }
        let payload = StageOneInput {
            citation_context: &context.text,
            citing_paper: &context.citing_paper,
            cited_papers: &context.cited_papers,
        };
        Ok(PromptBundle {
            stage: Stage::StageOne,
            setting: None,
            system_text: self.render_stage_one()?,
            input_payload: serde_json::to_string_pretty(&payload).expect("serializable"),
            attachments: Vec::new(),
        })
    }

    pub fn build_stage_two_prompt(
        &self,
        setting: PromptSetting,
        seed: &StageOneResult,
        attachments: &[Document],
    ) -> Result<PromptBundle, PromptError> {
        let system_text = self.render_stage_two(setting)?;
        let input_payload = stage_two_payload(setting.base, seed);
        let names = std::iter::once(&seed.citing_paper)
            .chain(seed.cited_papers.iter().map(|r| &r.cited_paper));
        let mut docs = Vec::new();
        for name in names {
            let doc = attachments
                .iter()
                .find(|d| &d.name == name)
                .ok_or_else(|| PromptError::MissingAttachment(name.clone()))?;
            docs.push(doc.clone());
        }
        Ok(PromptBundle {
            stage: Stage::StageTwo,
            setting: Some(setting),
            system_text,
            input_payload,
            attachments: docs,
        })
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::embedded()
    }
}

#[derive(Serialize)]
struct StageOneInput<'a> {
    citation_context: &'a str,
    citing_paper: &'a str,
    cited_papers: &'a [String],
}

#[derive(Serialize)]
struct OneStepInput<'a> {
    citation_context: &'a str,
    citing_paper: &'a str,
    cited_papers: Vec<OneStepReading<'a>>,
}

#[derive(Serialize)]
struct OneStepReading<'a> {
    cited_paper: &'a str,
    classification_category: &'a str,
    classification_explanation: &'a str,
}

/// The stage-one output as handed to stage two. The 1-step input format has
/// no expectation fields, so they are dropped for that base.
pub fn stage_two_payload(base: BasePrompt, seed: &StageOneResult) -> String {
    match base {
        BasePrompt::FourStep => serde_json::to_string_pretty(seed),
        BasePrompt::OneStep => serde_json::to_string_pretty(&OneStepInput {
            citation_context: &seed.citation_context,
            citing_paper: &seed.citing_paper,
            cited_papers: seed
                .cited_papers
                .iter()
                .map(|r| OneStepReading {
                    cited_paper: &r.cited_paper,
                    classification_category: r.classification_category.label(),
                    classification_explanation: &r.classification_explanation,
                })
                .collect(),
        }),
    }
    .expect("serializable")
}

pub fn nudge_paragraph(nudge: Nudge) -> NudgeParagraph {
    TemplateSet::embedded()
        .nudge_paragraph(nudge)
        .expect("embedded templates pass their checksums")
}

pub fn build_stage_one_prompt(context: &CitationContext) -> Result<PromptBundle, PromptError> {
    TemplateSet::embedded().build_stage_one_prompt(context)
}

pub fn build_stage_two_prompt(
    setting: PromptSetting,
    seed: &StageOneResult,
    attachments: &[Document],
) -> Result<PromptBundle, PromptError> {
    TemplateSet::embedded().build_stage_two_prompt(setting, seed, attachments)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::{ClassificationCategory, CitedPaperReading};

    pub(crate) fn seed() -> StageOneResult {
        StageOneResult {
            citation_context: crate::domain::FOOTNOTE_SIX.into(),
            citing_paper: "Chubin-Moitra-1975".into(),
            cited_papers: vec![
                CitedPaperReading {
                    cited_paper: "Price-1970".into(),
                    classification_category: ClassificationCategory::SupplementaryPerfunctory,
                    classification_explanation: "Credited for the distinction.".into(),
                    content_expectation: "Introduces the distinction.".into(),
                    citation_expectation: "No prior source is expected.".into(),
                },
                CitedPaperReading {
                    cited_paper: "Gilbert-Woolgar-1974".into(),
                    classification_category: ClassificationCategory::SupplementaryPerfunctory,
                    classification_explanation: "Repeats the distinction.".into(),
                    content_expectation: "Restates the distinction.".into(),
                    citation_expectation: "Expected to cite Price (1970).".into(),
                },
            ],
        }
    }

    fn docs() -> Vec<Document> {
        ["Chubin-Moitra-1975", "Price-1970", "Gilbert-Woolgar-1974"]
            .into_iter()
            .map(|n| Document::new(n, format!("full text of {n}"), MediaKind::PlainText))
            .collect()
    }

    #[test]
    fn embedded_templates_pass_checksums() {
        TemplateSet::embedded().verify_all().unwrap();
    }

    #[test]
    fn nudge_paragraphs() {
        let t = nudge_paragraph(Nudge::Toward);
        assert!(t.text.starts_with("For example, a neutral reference can mask a corrective undertone"));
        assert!(t.text.contains("rewrite an idea’s genealogy"));
        let a = nudge_paragraph(Nudge::Away);
        assert!(a.text.starts_with("For example, overly generous praise can mask underlying criticism"));
        assert!(a.text.contains("a nod to collaborators"));
        assert_eq!(nudge_paragraph(Nudge::NoNudge).text, "");
    }

    #[test]
    fn stage_one_bundle() {
        let b = build_stage_one_prompt(&CitationContext::footnote_six()).unwrap();
        assert!(b
            .input_payload
            .contains("We relax that distinction until the findings of our analyses are reported"));
        assert!(b.attachments.is_empty());
        assert_eq!(b.stage, Stage::StageOne);
        assert!(b.system_text.contains("Supplementary-Perfunctory: \"Papers referred to"));
        assert!(!b.system_text.contains(SCHEME_SLOT));

        let mut ctx = CitationContext::footnote_six();
        ctx.text = " ".into();
        assert!(matches!(build_stage_one_prompt(&ctx), Err(PromptError::EmptyContext)));
    }

    #[test]
    fn four_step_toward_has_both() {
        let s = PromptSetting::new(BasePrompt::FourStep, Nudge::Toward);
        let b = build_stage_two_prompt(s, &seed(), &docs()).unwrap();
        assert!(b.system_text.contains("Pedantic Expectation Check"));
        assert!(b.system_text.contains(&nudge_paragraph(Nudge::Toward).text));
        assert!(b.input_payload.contains("content_expectation"));
        let names: Vec<_> = b.attachments.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["Chubin-Moitra-1975", "Price-1970", "Gilbert-Woolgar-1974"]);
    }

    #[test]
    fn one_step_no_nudge_is_bare() {
        let s = PromptSetting::new(BasePrompt::OneStep, Nudge::NoNudge);
        let b = build_stage_two_prompt(s, &seed(), &docs()).unwrap();
        assert!(!b.system_text.contains("Step 1"));
        assert!(!b.system_text.contains("For example,"));
        assert!(!b.input_payload.contains("content_expectation"));
        assert!(!b.input_payload.contains("citation_expectation"));
        assert!(b.input_payload.contains("classification_explanation"));
    }

    #[test]
    fn missing_attachment() {
        let s = PromptSetting::REFERENCE;
        let docs: Vec<_> = docs().into_iter().filter(|d| d.name != "Price-1970").collect();
        match build_stage_two_prompt(s, &seed(), &docs) {
            Err(PromptError::MissingAttachment(n)) => assert_eq!(n, "Price-1970"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupted_template_detected() {
        let dir = tempfile::tempdir().unwrap();
        for (name, _) in CHECKSUMS {
            let text = TemplateSet::embedded().by_name(name).to_string();
            fs::write(dir.path().join(name), text).unwrap();
        }
        TemplateSet::from_dir(dir.path()).unwrap().verify_all().unwrap();
        fs::write(dir.path().join("stage2_1step.txt"), "Role and Objective\n").unwrap();
        let t = TemplateSet::from_dir(dir.path()).unwrap();
        let err = t
            .build_stage_two_prompt(PromptSetting::REFERENCE, &seed(), &docs())
            .unwrap_err();
        assert!(matches!(err, PromptError::TemplateCorruption { .. }));
    }
}
