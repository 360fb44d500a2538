//! Strict parsers for the model's structured JSON outputs.
//!
//! Documents are checked against the JSON schemas shipped under
//! `docs/schemas/`, then decoded into the typed domain values. Unknown fields
//! are rejected. Enum-valued fields are trimmed of surrounding whitespace
//! before matching and matched exactly.

use std::sync::LazyLock;

use jsonschema::Validator;
use serde_json::Value;
use thiserror::Error;

use crate::domain::{
    BasePrompt, CitationContext, PromptSetting, StageOneResult, StageTwoOutput,
};

pub const STAGE_ONE_SCHEMA: &str = include_str!("../../../docs/schemas/stage1.schema.json");
pub const STAGE_TWO_FOUR_STEP_SCHEMA: &str =
    include_str!("../../../docs/schemas/stage2_4step.schema.json");
pub const STAGE_TWO_ONE_STEP_SCHEMA: &str =
    include_str!("../../../docs/schemas/stage2_1step.schema.json");

const INTERMEDIATE_SECTIONS: [&str; 3] = ["expectation_check", "lexical_cues", "extended_context"];
const EXPECTATION_ENUM_FIELDS: [&str; 4] = [
    "content_presence",
    "content_framing",
    "citation_presence",
    "citation_function",
];

static STAGE_ONE: LazyLock<Validator> = LazyLock::new(|| compile(STAGE_ONE_SCHEMA));
static STAGE_TWO_FOUR: LazyLock<Validator> = LazyLock::new(|| compile(STAGE_TWO_FOUR_STEP_SCHEMA));
static STAGE_TWO_ONE: LazyLock<Validator> = LazyLock::new(|| compile(STAGE_TWO_ONE_STEP_SCHEMA));

fn compile(schema: &str) -> Validator {
    let schema: Value = serde_json::from_str(schema).expect("embedded schema is valid JSON");
    jsonschema::validator_for(&schema).expect("embedded schema compiles")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("schema violation at {path:?}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("cited paper {0:?} is not named in the citation context")]
    IdentifierMismatch(String),
    #[error("expected exactly 5 alternative hypotheses, found {0}")]
    CardinalityError(usize),
    #[error("section {section:?} {problem} under the {base} base prompt")]
    SectionMismatch {
        section: &'static str,
        problem: &'static str,
        base: &'static str,
    },
}

impl ParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::MalformedJson(_) => "MalformedJson",
            ParseError::SchemaViolation { .. } => "SchemaViolation",
            ParseError::IdentifierMismatch(_) => "IdentifierMismatch",
            ParseError::CardinalityError(_) => "CardinalityError",
            ParseError::SectionMismatch { .. } => "SectionMismatch",
        }
    }

    /// Whether re-sampling the same prompt could plausibly fix the output.
    pub fn is_retryable(&self) -> bool {
        !matches!(self, ParseError::IdentifierMismatch(_))
    }
}

fn schema_check(validator: &Validator, doc: &Value) -> Result<(), ParseError> {
    match validator.iter_errors(doc).next() {
        None => Ok(()),
        Some(err) => Err(ParseError::SchemaViolation {
            path: err.instance_path().to_string(),
            message: err.to_string(),
        }),
    }
}

fn decode<T: serde::de::DeserializeOwned>(doc: Value) -> Result<T, ParseError> {
    serde_json::from_value(doc).map_err(|e| ParseError::SchemaViolation {
        path: String::new(),
        message: e.to_string(),
    })
}

fn trim_in_place(v: &mut Value) {
    if let Value::String(s) = v {
        let t = s.trim();
        if t.len() != s.len() {
            *s = t.to_string();
        }
    }
}

pub fn parse_stage_one_output(
    raw: &str,
    context: &CitationContext,
) -> Result<StageOneResult, ParseError> {
    let mut doc: Value =
        serde_json::from_str(raw).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    if let Some(papers) = doc.get_mut("cited_papers").and_then(Value::as_array_mut) {
        for p in papers {
            if let Some(cat) = p.get_mut("classification_category") {
                trim_in_place(cat);
            }
        }
    }
    schema_check(&STAGE_ONE, &doc)?;
    let result: StageOneResult = decode(doc)?;
    if result.citing_paper != context.citing_paper {
        return Err(ParseError::IdentifierMismatch(result.citing_paper));
    }
    for reading in &result.cited_papers {
        if !context.cited_papers.contains(&reading.cited_paper) {
            return Err(ParseError::IdentifierMismatch(reading.cited_paper.clone()));
        }
    }
    Ok(result)
}

pub fn parse_stage_two_output(
    raw: &str,
    setting: PromptSetting,
) -> Result<StageTwoOutput, ParseError> {
    let mut doc: Value =
        serde_json::from_str(raw).map_err(|e| ParseError::MalformedJson(e.to_string()))?;
    let Some(obj) = doc.as_object_mut() else {
        return Err(ParseError::SchemaViolation {
            path: String::new(),
            message: "top-level value is not a JSON object".into(),
        });
    };

    for section in INTERMEDIATE_SECTIONS {
        let present = obj.contains_key(section);
        match (setting.base, present) {
            (BasePrompt::OneStep, true) => {
                return Err(ParseError::SectionMismatch {
                    section,
                    problem: "is present",
                    base: setting.base.label(),
                })
            }
            (BasePrompt::FourStep, false) => {
                return Err(ParseError::SectionMismatch {
                    section,
                    problem: "is missing",
                    base: setting.base.label(),
                })
            }
            _ => {}
        }
    }

    if let Some(hyps) = obj.get("alternative_hypotheses").and_then(Value::as_array) {
        if hyps.len() != 5 {
            return Err(ParseError::CardinalityError(hyps.len()));
        }
    }

    if let Some(checks) = obj.get_mut("expectation_check").and_then(Value::as_array_mut) {
        for check in checks {
            for field in EXPECTATION_ENUM_FIELDS {
                if let Some(v) = check.get_mut(field) {
                    trim_in_place(v);
                }
            }
        }
    }

    let validator = match setting.base {
        BasePrompt::FourStep => &*STAGE_TWO_FOUR,
        BasePrompt::OneStep => &*STAGE_TWO_ONE,
    };
    schema_check(validator, &doc)?;
    decode(doc)
}
