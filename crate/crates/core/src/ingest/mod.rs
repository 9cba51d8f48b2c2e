//! Drafting a workflow from a video with a multimodal model, checking the
//! draft and asking again with the problems listed.

mod enrich;
mod provider;

use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use enrich::{enrich_links, EnrichOutcome, MockSearch, SearchError, SearchHit, SearchProvider};
pub use provider::{Capabilities, HttpProvider, MockProvider, ModelProvider, ProviderError, ScriptedProvider, VideoRef};

use crate::model::{VideoMeta, Workflow};
use crate::notation::{parse_json, SchemaError};
use crate::validate::{repair, validate, RepairAction, RepairError, ValidationConfig, Violation};

/// Pattern names the grammar resource must define, in its order.
pub const PATTERNS: [&str; 7] = [
    "Granularity Shifts",
    "Reflective Loops",
    "Note-to-Self",
    "External Links",
    "Segments",
    "Branches",
    "Revision Loops",
];

pub const DEFAULT_GRAMMAR: &str = include_str!("../../resources/grammar-v1.md");
pub const SCHEMA_V1: &str = include_str!("../../resources/workflow-v1.schema.json");

/// Heading placed between the base prompt and the problems found in the
/// previous answer.
pub const FEEDBACK_HEADER: &str = "## Problems in your previous answer";

/// A grammar definition checked to name every pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grammar(String);

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GrammarError {
    #[error("grammar definition is empty")]
    Empty,
    #[error("grammar definition does not define {0:?}")]
    MissingPattern(&'static str),
}

impl Grammar {
    pub fn new(text: impl Into<String>) -> Result<Self, GrammarError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GrammarError::Empty);
        }
        if let Some(p) = PATTERNS.iter().find(|p| !text.contains(*p)) {
            return Err(GrammarError::MissingPattern(p));
        }
        Ok(Grammar(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

impl Default for Grammar {
    fn default() -> Self {
        Grammar::new(DEFAULT_GRAMMAR).expect("bundled grammar names every pattern")
    }
}

/// The instruction text sent with every video. Pure in its inputs.
pub fn build_prompt(grammar: &Grammar, video: &VideoMeta) -> String {
    let title = if video.title.is_empty() { "(untitled)" } else { video.title.as_str() };
    format!(
        "You are documenting a craft tutorial video as a workflow graph.\n\
         \n\
         Video: {title}\n\
         Source: {uri}\n\
         Duration: {dur} seconds\n\
         \n\
         Use the grammar below. Look for every one of these patterns: {patterns}.\n\
         \n\
         {grammar}\n\
         \n\
         ## Output\n\
         \n\
         Answer with a single JSON document and nothing else. It must validate\n\
         against this schema:\n\
         \n\
         {schema}\n\
         \n\
         Hard constraints:\n\
         1. The graph must be fully connected: every node lies on a path from the\n\
            first thing, and every reflective node is joined to its thing.\n\
         2. Taken together, the node time spans must cover the timeline,\n\
            spanning the full video duration from 0 to {dur} seconds.\n\
         3. Use \"duration_s\": {dur} in \"video\".\n",
        uri = video.uri,
        dur = video.duration,
        patterns = PATTERNS.join(", "),
        grammar = grammar.text().trim_end(),
        schema = SCHEMA_V1.trim_end(),
    )
}

fn feedback(attempt: usize, body: &str) -> String {
    format!(
        "{FEEDBACK_HEADER} (attempt {attempt})\n\
         \n\
         Fix every item and answer again with the complete corrected JSON.\n\
         \n\
         {body}\n"
    )
}

#[derive(Clone, Debug)]
pub struct IngestConfig {
    /// Extra attempts after the first one.
    pub max_retries: usize,
    /// Per-call deadline handed to the provider.
    pub deadline: Duration,
    pub validation: ValidationConfig,
    pub grammar: Grammar,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            max_retries: 3,
            deadline: Duration::from_secs(300),
            validation: ValidationConfig::default(),
            grammar: Grammar::default(),
        }
    }
}

/// What happened to one provider answer.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Clean,
    Transport { error: String },
    Schema { error: SchemaError },
    Violations { violations: Vec<Violation> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    pub prompt_sha256: String,
    /// Digest of the raw answer; the answer itself is not kept.
    pub output_sha256: Option<String>,
    pub output_bytes: usize,
    pub outcome: AttemptOutcome,
    /// Text appended to the next prompt because of this answer.
    pub feedback: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestStatus {
    Clean,
    Repaired,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IngestReport {
    pub provider: String,
    pub video_key: String,
    pub video_sha256: Option<String>,
    pub attempts: Vec<AttemptRecord>,
    pub status: IngestStatus,
    pub repairs_applied: Vec<RepairAction>,
    pub final_violations: Vec<Violation>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum IngestError {
    #[error("provider unavailable: {reason}")]
    ProviderUnavailable { reason: String, report: Box<IngestReport> },
    #[error("video is {duration}s but the provider accepts at most {max}s")]
    VideoTooLong { duration: String, max: String, report: Box<IngestReport> },
    #[error("retries exhausted with {} violation(s) left", violations.len())]
    ExhaustedRetries { violations: Vec<Violation>, report: Box<IngestReport> },
    #[error("no answer matched the schema: {error}")]
    Schema { error: SchemaError, report: Box<IngestReport> },
}

impl IngestError {
    pub fn report(&self) -> &IngestReport {
        match self {
            IngestError::ProviderUnavailable { report, .. }
            | IngestError::VideoTooLong { report, .. }
            | IngestError::ExhaustedRetries { report, .. }
            | IngestError::Schema { report, .. } => report,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Asks `provider` for a workflow, re-prompting with the problems found
/// until an answer validates or `max_retries` retries are spent. Only then
/// is the last parsed answer handed to `repair`.
pub fn ingest_video(
    provider: &dyn ModelProvider,
    video: &VideoRef,
    cfg: &IngestConfig,
) -> Result<(Workflow, IngestReport), IngestError> {
    let mut report = IngestReport {
        provider: provider.name().to_owned(),
        video_key: video.key(),
        video_sha256: video.bytes.as_deref().map(sha256_hex),
        attempts: Vec::new(),
        status: IngestStatus::Failed,
        repairs_applied: Vec::new(),
        final_violations: Vec::new(),
        failure: None,
    };
    let max = provider.capabilities().max_video;
    if video.meta.duration > max {
        let (duration, max) = (video.meta.duration.to_string(), max.to_string());
        report.failure = Some(format!("video longer than {max}s"));
        return Err(IngestError::VideoTooLong { duration, max, report: Box::new(report) });
    }

    let base = build_prompt(&cfg.grammar, &video.meta);
    let mut pending_feedback: Option<String> = None;
    let mut last_parsed: Option<(Workflow, Vec<Violation>)> = None;
    let mut last_schema: Option<SchemaError> = None;
    let mut last_transport: Option<String> = None;

    for attempt in 1..=cfg.max_retries + 1 {
        let prompt = match &pending_feedback {
            Some(fb) => format!("{base}\n{fb}"),
            None => base.clone(),
        };
        let mut record = AttemptRecord {
            attempt,
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            output_sha256: None,
            output_bytes: 0,
            outcome: AttemptOutcome::Clean,
            feedback: None,
        };
        let raw = match provider.analyze(&prompt, video, attempt, cfg.deadline) {
            Ok(raw) => raw,
            Err(ProviderError::Unavailable(reason)) => {
                record.outcome = AttemptOutcome::Transport { error: reason.clone() };
                report.attempts.push(record);
                report.failure = Some(reason.clone());
                return Err(IngestError::ProviderUnavailable { reason, report: Box::new(report) });
            }
            Err(e) => {
                // same prompt again; nothing to correct
                last_transport = Some(e.to_string());
                record.outcome = AttemptOutcome::Transport { error: e.to_string() };
                report.attempts.push(record);
                continue;
            }
        };
        record.output_sha256 = Some(sha256_hex(raw.as_bytes()));
        record.output_bytes = raw.len();
        match parse_json(strip_fences(&raw).as_bytes()) {
            Err(error) => {
                let body = serde_json::to_string_pretty(&serde_json::json!({ "schema_error": error }))
                    .expect("schema errors serialize");
                record.feedback = Some(feedback(attempt, &body));
                record.outcome = AttemptOutcome::Schema { error: error.clone() };
                last_schema = Some(error);
            }
            Ok(mut w) => {
                // the known recording wins over whatever the model echoed
                w.video = video.meta.clone();
                let violations = validate(&w, &cfg.validation);
                if violations.is_empty() {
                    report.attempts.push(record);
                    report.status = IngestStatus::Clean;
                    return Ok((w, report));
                }
                let body = serde_json::to_string_pretty(&violations).expect("violations serialize");
                record.feedback = Some(feedback(attempt, &body));
                record.outcome = AttemptOutcome::Violations { violations: violations.clone() };
                last_parsed = Some((w, violations));
            }
        }
        pending_feedback = record.feedback.clone();
        report.attempts.push(record);
    }

    let Some((w, violations)) = last_parsed else {
        if let Some(error) = last_schema {
            report.failure = Some(format!("schema: {error}"));
            return Err(IngestError::Schema { error, report: Box::new(report) });
        }
        let reason = last_transport.unwrap_or_else(|| "no attempts were made".into());
        report.failure = Some(reason.clone());
        return Err(IngestError::ProviderUnavailable { reason, report: Box::new(report) });
    };
    match repair(&w, &violations, &cfg.validation) {
        Ok((fixed, actions)) => {
            report.repairs_applied = actions;
            report.status = IngestStatus::Repaired;
            Ok((fixed, report))
        }
        Err(RepairError::Unrepairable { code, applied, remaining, .. }) => {
            report.repairs_applied = applied;
            report.final_violations = remaining.clone();
            report.failure = Some(format!("no safe repair for {code}"));
            Err(IngestError::ExhaustedRetries { violations: remaining, report: Box::new(report) })
        }
    }
}

/// Models often wrap JSON in a Markdown code fence.
fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else { return raw };
    let rest = rest.split_once('\n').map_or("", |(_, body)| body);
    rest.trim_end().strip_suffix("```").unwrap_or(rest)
}
