//! Turns a mission prompt into classes, a costmap program and a preference
//! ranking by asking a language model.

use overseec_core::classes::{ClassSet, Provenance};
use overseec_core::dsl::{format, parse, validate, ValidatedProgram};
use overseec_core::metrics::RankMap;
use overseec_core::raster::{ClassSpec, Geometry};
use serde::Deserialize;
use thiserror::Error;

use crate::llm::{LlmBackend, LlmError, LlmRequest, Task};

pub const TEMPLATE_VERSION: &str = "v1";
const ENTITIES_TEMPLATE: &str = include_str!("../templates/entities.v1.txt");
const COMPOSE_TEMPLATE: &str = include_str!("../templates/compose.v1.txt");
const RANKS_TEMPLATE: &str = include_str!("../templates/ranks.v1.txt");

pub const DEFAULT_MAX_RETRIES: u32 = 3;

/// Classes always segmented, whatever the prompt says.
pub fn default_classes() -> Vec<ClassSpec> {
    [
        ("road", Geometry::Linear),
        ("trail", Geometry::Linear),
        ("grass", Geometry::Areal),
        ("tree", Geometry::Areal),
        ("building", Geometry::Areal),
        ("water", Geometry::Areal),
    ]
    .into_iter()
    .map(|(n, g)| ClassSpec::new(n, g))
    .collect()
}

#[derive(Debug, Error)]
pub enum InterpretError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("class set is empty")]
    EmptyClassSet,
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("malformed {task} response after {attempts} attempts: {reason}")]
    MalformedResponse { task: Task, attempts: u32, reason: String },
    #[error("no valid program after {attempts} attempts; last error: {last_error}")]
    UnparseableAfterRetries {
        attempts: u32,
        last_error: String,
        last_response: String,
    },
}

/// A validated mission prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText(String);

impl PromptText {
    pub fn new(text: impl Into<String>) -> Result<Self, InterpretError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(InterpretError::EmptyPrompt);
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn render(template: &str, prompt: &str, classes: &str, feedback: &str) -> String {
    template
        .replace("{prompt}", prompt)
        .replace("{classes}", classes)
        .replace("{feedback}", feedback)
}

fn feedback_note(previous: &str, error: &str) -> String {
    format!("\nYour previous answer was rejected.\nPrevious answer:\n{previous}\nError: {error}\nFix the error and answer again.\n")
}

fn class_list(classes: &ClassSet) -> String {
    classes
        .iter()
        .map(|c| format!("\"{}\" ({})", c.name, c.geometry))
        .collect::<Vec<_>>()
        .join(", ")
}

// Pulls the outermost JSON object out of a reply that may carry prose or a
// code fence around it.
fn json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Returns the body of the first fenced code block, or the whole text when
/// there is none.
pub fn fenced_block(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text.trim();
    };
    let after = &text[open + 3..];
    // skip an info string such as ```dsl
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => body[..close].trim(),
        None => body.trim(),
    }
}

enum Rejected {
    Backend(LlmError),
    Exhausted { attempts: u32, reason: String, response: String },
}

impl Rejected {
    fn into_error(self, exhausted: impl FnOnce(u32, String, String) -> InterpretError) -> InterpretError {
        match self {
            Rejected::Backend(e) => InterpretError::Backend(e),
            Rejected::Exhausted { attempts, reason, response } => exhausted(attempts, reason, response),
        }
    }
}

/// Calls the backend until `accept` takes the response, feeding each
/// rejection back into the next request.
fn with_feedback<T>(
    backend: &dyn LlmBackend,
    task: Task,
    prompt: &PromptText,
    max_retries: u32,
    build: impl Fn(&str) -> String,
    accept: impl Fn(&str) -> Result<T, String>,
) -> Result<T, Rejected> {
    let mut feedback = String::new();
    let mut last = (String::new(), String::new());
    for attempt in 0..=max_retries {
        let request = LlmRequest {
            task,
            user_prompt: prompt.as_str().to_string(),
            rendered: build(&feedback),
            attempt,
        };
        let response = backend.complete(&request).map_err(Rejected::Backend)?;
        match accept(&response) {
            Ok(v) => return Ok(v),
            Err(reason) => {
                log::info!("{task} attempt {attempt} rejected: {reason}");
                feedback = feedback_note(&response, &reason);
                last = (reason, response);
            }
        }
    }
    Err(Rejected::Exhausted {
        attempts: max_retries + 1,
        reason: last.0,
        response: last.1,
    })
}

#[derive(Deserialize)]
struct EntityReply {
    classes: Vec<EntityItem>,
}

#[derive(Deserialize)]
struct EntityItem {
    name: String,
    geometry: Geometry,
}

fn parse_entities(text: &str) -> Result<Vec<ClassSpec>, String> {
    let json = json_object(text).ok_or("no JSON object in response")?;
    let reply: EntityReply = serde_json::from_str(json).map_err(|e| e.to_string())?;
    if let Some(bad) = reply.classes.iter().find(|c| c.name.trim().is_empty()) {
        return Err(format!("class name {:?} is blank", bad.name));
    }
    Ok(reply.classes.into_iter().map(|c| ClassSpec::new(c.name, c.geometry)).collect())
}

/// Extracts the prompt's classes and merges them with [`default_classes`].
/// Names are de-duplicated case-insensitively; the prompt's geometry wins.
pub fn identify_entities(
    prompt: &PromptText,
    backend: &dyn LlmBackend,
    max_retries: u32,
) -> Result<ClassSet, InterpretError> {
    let found = with_feedback(
        backend,
        Task::Entities,
        prompt,
        max_retries,
        |fb| render(ENTITIES_TEMPLATE, prompt.as_str(), "", fb),
        parse_entities,
    )
    .map_err(|r| r.into_error(|attempts, reason, _| malformed(Task::Entities, attempts, reason)))?;
    let mut set = ClassSet::from_specs(&found, Provenance::Prompt);
    for spec in default_classes() {
        set.insert(&spec.name, spec.geometry, Provenance::Default);
    }
    Ok(set)
}

fn malformed(task: Task, attempts: u32, reason: String) -> InterpretError {
    InterpretError::MalformedResponse { task, attempts, reason }
}

/// A program accepted from the model, with its canonical source.
#[derive(Debug, Clone)]
pub struct Composition {
    pub program: ValidatedProgram,
    pub source: String,
    pub attempts: u32,
}

/// Asks the model for a costmap program over `classes`, re-prompting with
/// the parser or validator error until one validates.
pub fn compose_program(
    prompt: &PromptText,
    classes: &ClassSet,
    backend: &dyn LlmBackend,
    max_retries: u32,
) -> Result<Composition, InterpretError> {
    if classes.is_empty() {
        return Err(InterpretError::EmptyClassSet);
    }
    let listed = class_list(classes);
    let attempts = std::cell::Cell::new(0);
    let program = with_feedback(
        backend,
        Task::Compose,
        prompt,
        max_retries,
        |fb| render(COMPOSE_TEMPLATE, prompt.as_str(), &listed, fb),
        |text| {
            attempts.set(attempts.get() + 1);
            let program = parse(fenced_block(text)).map_err(|e| e.to_string())?;
            validate(&program, classes).map_err(|e| e.to_string())
        },
    )
    .map_err(|r| {
        r.into_error(|attempts, last_error, last_response| InterpretError::UnparseableAfterRetries {
            attempts,
            last_error,
            last_response,
        })
    })?;
    let source = format(program.program());
    Ok(Composition {
        program,
        source,
        attempts: attempts.get(),
    })
}

#[derive(Deserialize)]
struct RankReply {
    ranks: Vec<RankItem>,
}

#[derive(Deserialize)]
struct RankItem {
    name: String,
    rank: u32,
}

fn parse_ranks(text: &str, classes: &ClassSet) -> Result<RankMap, String> {
    let json = json_object(text).ok_or("no JSON object in response")?;
    let reply: RankReply = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let n = classes.len() as u32;
    let mut ranks = RankMap::new();
    for item in reply.ranks {
        if !classes.contains(&item.name) {
            // the model may rank terrain nobody asked about; it has no pixels
            continue;
        }
        if item.rank < 1 || item.rank > n {
            return Err(format!("rank {} for {:?} is outside 1..={n}", item.rank, item.name));
        }
        ranks.insert(&item.name, item.rank).map_err(|e| e.to_string())?;
    }
    if let Some(missing) = classes.names().find(|c| ranks.get(c).is_none()) {
        return Err(format!("class {missing:?} has no rank"));
    }
    Ok(ranks)
}

/// Asks the model to rank every class from most (1) to least preferred.
pub fn derive_rank_map(
    prompt: &PromptText,
    classes: &ClassSet,
    backend: &dyn LlmBackend,
    max_retries: u32,
) -> Result<RankMap, InterpretError> {
    if classes.is_empty() {
        return Err(InterpretError::EmptyClassSet);
    }
    let listed = class_list(classes);
    with_feedback(
        backend,
        Task::Ranks,
        prompt,
        max_retries,
        |fb| render(RANKS_TEMPLATE, prompt.as_str(), &listed, fb),
        |text| parse_ranks(text, classes),
    )
    .map_err(|r| r.into_error(|attempts, reason, _| malformed(Task::Ranks, attempts, reason)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_blocks() {
        assert_eq!(fenced_block("```dsl\ncost x: 1;\n```\ntrailing"), "cost x: 1;");
        assert_eq!(fenced_block("```\na\n```"), "a");
        assert_eq!(fenced_block("  bare text \n"), "bare text");
        assert_eq!(fenced_block("intro\n```\nunterminated"), "unterminated");
    }

    #[test]
    fn json_extraction() {
        assert_eq!(json_object("sure: {\"a\": {}} done"), Some("{\"a\": {}}"));
        assert_eq!(json_object("nothing"), None);
    }

    #[test]
    fn prompt_must_not_be_blank() {
        assert!(matches!(PromptText::new(" \n"), Err(InterpretError::EmptyPrompt)));
    }

    #[test]
    fn templates_have_placeholders() {
        for t in [ENTITIES_TEMPLATE, COMPOSE_TEMPLATE, RANKS_TEMPLATE] {
            assert!(t.contains("{prompt}") && t.contains("{feedback}"));
        }
        assert!(COMPOSE_TEMPLATE.contains("{classes}") && RANKS_TEMPLATE.contains("{classes}"));
    }
}
