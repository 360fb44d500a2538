//! Regenerates the shipped replay corpus: synthetic stage-one and stage-two
//! responses recorded through the real gateway, placeholder attachments, the
//! default plan file, and a code matrix over the generated hypothesis ids
//! whose cell counts equal the published frequency table.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{ensure, Context, Result};
use chrono::{DateTime, TimeZone, Utc};
use clap::Parser;
use serde_json::{json, Value};

use workbench_core::domain::{
    hypothesis_id, stage_two_run_id, BasePrompt, CitationContext, Nudge, PromptSetting,
};
use workbench_core::lexical::{hedge_counts, stage_one_note};
use workbench_core::orchestrator::{
    execute_stage_one, run_plan, sample_seeds, PlanPaths, RunManifest,
};
use workbench_core::prompt::{Document, PromptBundle, Stage, TemplateSet};
use workbench_core::provider::{
    accumulate_cost, Gateway, ProviderConfig, ProviderMode, ProviderReply, ReplayStore, Transport,
    TransportError, Usage,
};
use workbench_core::store::{synthesize_matrix_from_counts, table3_counts, Layout, MatrixRow};

#[derive(Parser)]
#[command(about = "Regenerate replay fixtures")]
struct Args {
    /// Repository root to write into.
    #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))]
    root: PathBuf,
}

const INPUT_TOTAL: u64 = 5_034_263;
const OUTPUT_TOTAL: u64 = 618_284;
const REASONING_TOTAL: u64 = 518_080;
const STAGE_ONE_INPUT: u64 = 2_431;
const STAGE_ONE_OUTPUT: u64 = 1_800;
const STAGE_ONE_REASONING: u64 = 1_500;

const PERF: &str = "Supplementary-Perfunctory";
const ADD: &str = "Supplementary-Additional-Information";

/// Stage-one runs where Gilbert & Woolgar get the Additional-Information label.
const ADDITIONAL: [u32; 11] = [1, 4, 7, 10, 13, 16, 19, 22, 25, 28, 29];
/// The one run where the two cited papers are labeled differently.
const SPLIT: u32 = 4;
const LIKELY: [u32; 2] = [12, 23];
const NO_PREDICTION: u32 = 17;
const ESSENTIAL_FUNCTION: [u32; 5] = [2, 8, 14, 20, 26];
const PERFUNCTORY_FUNCTION: u32 = 5;

fn fixed_clock() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 8, 20, 0, 0, 0).unwrap()
}

fn spread(total: u64, parts: u64, i: u64) -> u64 {
    total / parts + u64::from(i < total % parts)
}

fn stage_one_usage() -> Usage {
    Usage {
        input_tokens: STAGE_ONE_INPUT,
        output_tokens: STAGE_ONE_OUTPUT,
        reasoning_tokens: STAGE_ONE_REASONING,
    }
}

fn stage_two_usage(i: u64, runs: u64, stage_one_runs: u64) -> Usage {
    Usage {
        input_tokens: spread(INPUT_TOTAL - STAGE_ONE_INPUT * stage_one_runs, runs, i),
        output_tokens: spread(OUTPUT_TOTAL - STAGE_ONE_OUTPUT * stage_one_runs, runs, i),
        reasoning_tokens: spread(REASONING_TOTAL - STAGE_ONE_REASONING * stage_one_runs, runs, i),
    }
}

const EXPLANATIONS: [&str; 5] = [
    "The note credits the source for a terminological distinction and moves on without drawing on it further.",
    "The source is named as the origin of a distinction that the passage immediately sets aside.",
    "The wording acknowledges the source briefly; nothing in the passage builds on its content.",
    "The citation supplies background on a distinction the authors say they will not rely on for now.",
    "The passage attributes the distinction and then relaxes it, so the source adds context rather than a foundation.",
];

fn stage_one_response(i: u32) -> String {
    let gw = if ADDITIONAL.contains(&i) { ADD } else { PERF };
    let price = if i == SPLIT { PERF } else { gw };
    let function = if ESSENTIAL_FUNCTION.contains(&i) {
        "Essential-Basic"
    } else if i == PERFUNCTORY_FUNCTION {
        PERF
    } else {
        ADD
    };
    let gw_citation = if i == NO_PREDICTION {
        "The footnote gives no indication whether Gilbert and Woolgar acknowledge any predecessor for the terms.".to_string()
    } else if LIKELY.contains(&i) {
        format!("Gilbert and Woolgar are likely to cite Price (1970) when they restate the distinction, plausibly as {function}.")
    } else {
        format!("Gilbert and Woolgar are expected to cite Price (1970) for the distinction, most plausibly as {function}.")
    };
    json!({
        "citation_context": workbench_core::domain::FOOTNOTE_SIX,
        "citing_paper": "Chubin-Moitra-1975",
        "cited_papers": [
            {
                "cited_paper": "Price-1970",
                "classification_category": price,
                "classification_explanation": EXPLANATIONS[i as usize % 5],
                "content_expectation": "Price (1970) should define references and citations as separate bibliometric units.",
                "citation_expectation": "No earlier source for the distinction is anticipated in Price (1970)."
            },
            {
                "cited_paper": "Gilbert-Woolgar-1974",
                "classification_category": gw,
                "classification_explanation": EXPLANATIONS[(i as usize + 2) % 5],
                "content_expectation": "Gilbert and Woolgar (1974) should restate the reference and citation distinction in a review of quantitative science studies.",
                "citation_expectation": gw_citation
            }
        ]
    })
    .to_string()
}

fn code_hypothesis(code: &str) -> &'static str {
    match code {
        "Agile" => "The footnote licenses a temporary, flexible use of the two terms so the analysis can proceed without settling them.",
        "Preempt" => "The note anticipates objections that the paper blurs references and citations and disarms them in advance.",
        "Aware" => "The note signals that the authors know the distinction and the debate about policing it.",
        "MuteGW" => "Calling Gilbert and Woolgar's treatment a reiteration quietly shrinks their critical discussion.",
        "Bridge" => "The footnote links the bibliometric and sociological camps to present the study as welcome to both.",
        "Test" => "The relaxation turns the distinction into an empirical matter that the results will settle.",
        "Pragma" => "The note adopts a pragmatic stance: the terms are tools, judged by what the analysis yields.",
        "Agency" => "The authors claim the standing to reshape the distinction on their own terms.",
        "Payoff" => "The footnote postpones the conceptual question so that attention stays on the empirical findings.",
        "UseGW" => "Gilbert and Woolgar are cited, as having reiterated the terms, mainly to borrow their standing.",
        "Canon" => "Presenting the distinction as introduced and then reiterated makes it look settled and consensual.",
        "SSS" => "The note positions the paper for a science studies readership that expects both traditions to be named.",
        "SideP" => "The ordering sides with Price's bibliometric program, with the reiterated version as an echo.",
        "PrioP" => "The phrase introduced by Price, then reiterated, stresses Price's priority as originator.",
        "UseP" => "Price is invoked chiefly for his authority in citation measurement.",
        "NegP" => "The relaxation implicitly questions how useful Price's sharp distinction really is.",
        "NegGW" => "The note pushes back on Gilbert and Woolgar's handling of the terms.",
        "NegGEN" => "The footnote challenges the wider literature's insistence on the distinction.",
        "Teach" => "The citations orient newcomers to where the distinction can be looked up.",
        "MuteGEN" => "The note plays down the broader discussion of the distinction in the field.",
        "MuteP" => "The brief attribution downplays the substance of Price's own discussion.",
        _ => "The footnote performs routine attribution.",
    }
}

fn code_support(code: &str) -> &'static str {
    match code {
        "Agile" => "The phrase about relaxing the distinction until findings are reported frames the move as provisional.",
        "Preempt" => "Placing the caveat in a footnote before the analysis reads as a defensive clarification.",
        "Aware" => "Naming two sources for the distinction shows command of the relevant literature.",
        "MuteGW" => "The verb reiterated casts their contribution as repetition rather than critique.",
        "Bridge" => "Price and Gilbert and Woolgar stand for different traditions that the note places side by side.",
        "Test" => "The promise to report findings first implies the data will decide whether the distinction matters.",
        "Pragma" => "The tone is procedural and avoids any theoretical commitment.",
        "Agency" => "We relax is a first-person decision that needs no further justification in the note.",
        "Payoff" => "The deferral keeps the reader's attention on counts and content analysis.",
        "UseGW" => "Their sociological credentials lend weight to a bibliometric study.",
        "Canon" => "The tidy sequence of introduction and reiteration suggests a stable lineage.",
        "SSS" => "The venue's audience spans quantitative and qualitative approaches.",
        "SideP" => "Price appears as the origin while the later work is reiterated in passing.",
        "PrioP" => "The first name in the sequence receives the credit for the idea.",
        "UseP" => "Price's standing in the field makes the attribution authoritative.",
        "NegP" => "Setting the distinction aside suggests it may be less consequential than Price implied.",
        "NegGW" => "The reduction to a reiteration hints that their contribution added little.",
        "NegGEN" => "Relaxing the distinction runs against much of the surrounding commentary.",
        "Teach" => "The references work as pointers to introductory material.",
        "MuteGEN" => "Only two sources stand in for a broader debate.",
        "MuteP" => "Price's argument is reduced to a single attribution.",
        _ => "The wording stays close to conventional credit giving.",
    }
}

const GENERIC: [&str; 5] = [
    "The footnote mainly records where the distinction comes from.",
    "The note is a housekeeping device that clarifies terminology before the results.",
    "The citation functions as a courtesy to prior work on the terms.",
    "The footnote frames the vocabulary of the paper for readers from different backgrounds.",
    "The note manages expectations about how strictly the terms will be used.",
];

const TOWARD_ECHO: [&str; 4] = [
    "Read this way, the note can rewrite the genealogy of the idea.",
    "It may help enroll rival audiences by reframing the terms as compatible.",
    "A neutral reference here can mask a corrective undertone.",
    "The ordering highlights one work while downplaying another.",
];

const AWAY_ECHO: [&str; 4] = [
    "The citation may reflect social ties more than substantive claims.",
    "The references point readers toward introductory survey material.",
    "Generous wording can mask underlying criticism.",
    "The pairing lends borrowed authority to a loosely connected cluster of sources.",
];

fn hypothesis_pair(codes: &[&str], setting: PromptSetting, row: usize) -> Value {
    let hypothesis = match codes.first() {
        Some(c) => code_hypothesis(c).to_string(),
        None => GENERIC[row % GENERIC.len()].to_string(),
    };
    let mut support: Vec<String> = codes.iter().take(4).map(|c| code_support(c).to_string()).collect();
    if support.is_empty() {
        support.push("Nothing in the passage goes beyond naming the sources.".into());
    }
    let echo = match setting.nudge {
        Nudge::Toward if row % 3 == 0 => Some(TOWARD_ECHO[(row / 3) % TOWARD_ECHO.len()]),
        Nudge::Away if row % 4 == 1 => Some(AWAY_ECHO[(row / 4) % AWAY_ECHO.len()]),
        _ => None,
    };
    support.extend(echo.map(str::to_string));
    json!({ "hypothesis": hypothesis, "justification": support.join(" ") })
}

fn stage_two_response(setting: PromptSetting, rows: &[Vec<&str>], position: usize) -> String {
    let pairs: Vec<Value> = rows
        .iter()
        .enumerate()
        .map(|(k, codes)| hypothesis_pair(codes, setting, position * 5 + k))
        .collect();
    let mut doc = json!({ "alternative_hypotheses": pairs });
    if setting.base == BasePrompt::FourStep {
        doc["expectation_check"] = json!([
            {
                "cited_paper": "Price-1970",
                "content_presence": "yes",
                "content_framing": "expected",
                "content_justification": "Price separates references from citations and proposes notation for both.",
                "citation_presence": "not applicable",
                "citation_function": "not applicable",
                "citation_justification": "No predecessor was expected."
            },
            {
                "cited_paper": "Gilbert-Woolgar-1974",
                "content_presence": "yes",
                "content_framing": "expected",
                "content_justification": "The review defines both terms in its opening discussion.",
                "citation_presence": "yes",
                "citation_function": "different",
                "citation_justification": "Price is cited nearby for other measures, not at the definitional sentence."
            }
        ]);
        doc["lexical_cues"] = json!([
            { "cue": "introduced by", "explanation": "Assigns origin and priority to one source." },
            { "cue": "then reiterated", "explanation": "Casts the later work as repetition." },
            { "cue": "We relax", "explanation": "Marks a deliberate, provisional departure." }
        ]);
        doc["extended_context"] = json!({
            "placement": "A footnote at the first use of the two terms.",
            "recurrence": "Price recurs across the paper; Gilbert and Woolgar do not.",
            "relational_cues": "The sequence introduced, then reiterated orders the two sources.",
            "co_citation_patterns": "The two sources appear together only in this note.",
            "narrative_function": "Clears terminological ground before the empirical sections."
        });
    }
    doc.to_string()
}

/// Answers stage one by run index and stage two from a precomputed table of
/// per-row code sets.
struct Synthetic {
    stage_two: HashMap<u32, (PromptSetting, Vec<Vec<&'static str>>)>,
    stage_one_runs: u64,
}

impl Transport for Synthetic {
    fn send(&self, bundle: &PromptBundle, config: &ProviderConfig, idx: u64) -> Result<ProviderReply, TransportError> {
        let ordinal = (idx >> 32) as u32;
        let echo = Some(json!({
            "model": config.model_id,
            "temperature": config.temperature,
            "reasoning": { "effort": config.reasoning_effort.label() }
        }));
        match bundle.stage {
            Stage::StageOne => Ok(ProviderReply { text: stage_one_response(ordinal), usage: stage_one_usage(), echo }),
            Stage::StageTwo => {
                let (setting, rows) = self
                    .stage_two
                    .get(&ordinal)
                    .ok_or_else(|| TransportError::Decode(format!("no script for call {ordinal}")))?;
                ensure_setting(bundle, *setting)?;
                Ok(ProviderReply {
                    text: stage_two_response(*setting, rows, ordinal as usize),
                    usage: stage_two_usage(u64::from(ordinal), self.stage_two.len() as u64, self.stage_one_runs),
                    echo,
                })
            }
        }
    }
}

fn ensure_setting(bundle: &PromptBundle, setting: PromptSetting) -> Result<(), TransportError> {
    if bundle.setting == Some(setting) {
        Ok(())
    } else {
        Err(TransportError::Decode("plan order differs from the script".into()))
    }
}

fn leak(s: &str) -> &'static str {
    Box::leak(s.to_string().into_boxed_str())
}

fn write_attachments(dir: &Path, context: &CitationContext) -> Result<Vec<Document>> {
    fs::create_dir_all(dir)?;
    for name in std::iter::once(&context.citing_paper).chain(&context.cited_papers) {
        let text = format!(
            "Placeholder for the full text of {name}.\n\
             Replace this file with the document itself (same file stem, .pdf or .txt) for live runs.\n\
             Replay transcripts are keyed to these exact bytes.\n"
        );
        fs::write(dir.join(format!("{name}.txt")), text)?;
    }
    Ok(Document::load_dir(dir)?)
}

fn main() -> Result<()> {
    let args = Args::parse();
    let root = args.root.canonicalize().context("resolving --root")?;
    let fixtures = root.join("fixtures");
    let transcripts = fixtures.join("transcripts");
    let context = CitationContext::footnote_six();

    fs::write(fixtures.join("context.json"), serde_json::to_string_pretty(&context)? + "\n")?;
    let attachments = write_attachments(&fixtures.join("attachments"), &context)?;
    if transcripts.exists() {
        fs::remove_dir_all(&transcripts)?;
    }

    let manifest = RunManifest {
        paths: PlanPaths {
            context: Some("fixtures/context.json".into()),
            attachments: Some("fixtures/attachments".into()),
            transcripts: Some("fixtures/transcripts".into()),
            store: Some("workspace".into()),
        },
        ..RunManifest::default()
    };
    fs::write(root.join("plan.cfg"), manifest.to_toml())?;

    let templates = TemplateSet::embedded();
    let config = ProviderConfig::default();
    let record = |stage_two| {
        Gateway::new(config.clone(), ProviderMode::Record)
            .with_store(ReplayStore::open(&transcripts).expect("transcript dir"))
            .with_clock(fixed_clock)
            .with_parallelism(1)
            .with_transport(Arc::new(Synthetic { stage_two, stage_one_runs: manifest.stage_one_count as u64 }))
    };

    // Stage one first, so the seed sample (and with it every run id) is known
    // before the stage-two answers are scripted.
    let stage_one = execute_stage_one(&manifest, &context, &record(HashMap::new()), &templates)?;
    let seeds = sample_seeds(&stage_one, manifest.seed_sample_size, manifest.rng_seed)?;

    let mut layout_rows = Vec::new();
    for (pos, seed) in seeds.iter().enumerate() {
        for (s, &setting) in manifest.settings.iter().enumerate() {
            let run_id = stage_two_run_id(&seed.record_id, setting, pos * manifest.settings.len() + s + 1);
            for i in 1..=5 {
                layout_rows.push(MatrixRow { hypothesis_id: hypothesis_id(&run_id, i), run_id: run_id.clone(), setting });
            }
        }
    }
    let matrix = synthesize_matrix_from_counts(&table3_counts(), &Layout { rows: layout_rows }, 1)?;
    let mut script = HashMap::new();
    for (run, chunk) in matrix.rows.chunks(5).enumerate() {
        let rows = chunk
            .iter()
            .enumerate()
            .map(|(k, _)| {
                let cells = &matrix.cells[run * 5 + k];
                matrix
                    .columns
                    .iter()
                    .zip(cells)
                    .filter(|(_, v)| **v == 1)
                    .map(|(c, _)| leak(c))
                    .collect()
            })
            .collect();
        script.insert(run as u32, (chunk[0].setting, rows));
    }

    let recorded = run_plan(&manifest, &context, &attachments, &record(script), &templates)?;

    let replay = Gateway::new(config.clone(), ProviderMode::Replay).with_store(ReplayStore::open(&transcripts)?);
    let replayed = run_plan(&manifest, &context, &attachments, &replay, &templates)?;
    ensure!(serde_json::to_vec(&recorded)? == serde_json::to_vec(&replayed)?, "replay differs from recording");
    let ids: Vec<String> = replayed
        .runs
        .iter()
        .filter_map(|r| r.result())
        .flat_map(|r| r.hypothesis_units())
        .map(|u| u.id())
        .collect();
    let layout_ids: Vec<&str> = matrix.rows.iter().map(|r| r.hypothesis_id.as_str()).collect();
    ensure!(ids == layout_ids, "run naming drifted from the orchestrator");
    fs::write(fixtures.join("codes.csv"), matrix.to_csv())?;

    let notes: Vec<String> = replayed.stage_one.iter().filter_map(|r| r.result()).map(stage_one_note).collect();
    let cost = accumulate_cost(replayed.usages(), &config.price_table);
    println!(
        "stage one {} | seeds {} | runs {} | hypotheses {} | intermediates {}",
        replayed.stage_one.len(),
        replayed.seeds.len(),
        replayed.runs.len(),
        replayed.hypothesis_count(),
        replayed.intermediate_count()
    );
    println!("hedges {:?}", hedge_counts(&notes));
    println!(
        "tokens {} in / {} out / {} reasoning, USD {}",
        cost.input_tokens, cost.output_tokens, cost.reasoning_tokens, cost.total_usd
    );
    Ok(())
}
