//! Augmentation prompts: the few-shot LLM protocol, response parsers and
//! offline prompt backends.
//!
//! An exemplar renders as a five-line block:
//!
//! ```text
//! Source task: place pepsi can on the counter
//! Target task: place pepsi can on the clutter counter
//! ViT region prompt: empty counter
//! passthrough object prompt: robot arm, robot gripper
//! inpainting prompt: add a chip bag on the counter
//! ```
//!
//! and the query is the trailing `Source task:` / `Target task:` pair that
//! the model is expected to complete with the last three lines.

mod backend;

use serde::{Deserialize, Serialize};

pub use backend::{
    propose, CompletionBackend, HttpCompleter, PromptBackend, PromptRegistry, RuleBackend, ScriptedCompleter,
    DISTRACTORS,
};

use crate::backend::BackendError;

pub const SOURCE_PREFIX: &str = "Source task:";
pub const TARGET_PREFIX: &str = "Target task:";
pub const REGION_PREFIX: &str = "ViT region prompt:";
pub const PASSTHROUGH_PREFIX: &str = "passthrough object prompt:";
pub const INPAINT_PREFIX: &str = "inpainting prompt:";
pub const PASSTHROUGH_DELIMITER: &str = ", ";

pub const DEFAULT_PASSTHROUGH: [&str; 2] = ["robot arm", "robot gripper"];

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("response is missing the `{0}` field")]
    MissingField(&'static str),
    #[error("invalid prompt triple: {0}")]
    InvalidTriple(String),
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("no template matches source `{source_task}` -> target `{target_task}`")]
    UnmatchedTemplate { source_task: String, target_task: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub source_task: String,
    pub target_task: String,
    /// Present iff the augmentation creates a new task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_instruction: Option<String>,
}

impl AugmentationSpec {
    pub fn new(source_task: impl Into<String>, target_task: impl Into<String>) -> Self {
        Self {
            source_task: source_task.into(),
            target_task: target_task.into(),
            new_instruction: None,
        }
    }

    pub fn with_new_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.new_instruction = Some(instruction.into());
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.source_task.trim().is_empty() || self.target_task.trim().is_empty() {
            return Err(PromptError::InvalidSpec("source_task and target_task must be nonempty".into()));
        }
        if self.new_instruction.as_deref().is_some_and(|s| s.trim().is_empty()) {
            return Err(PromptError::InvalidSpec("new_instruction, when present, must be nonempty".into()));
        }
        Ok(())
    }
}

/// Region detection query, passthrough detection queries and the inpainting
/// prompt for one augmentation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptTriple {
    pub region_query: String,
    pub passthrough_queries: Vec<String>,
    pub inpaint_prompt: String,
}

impl PromptTriple {
    pub fn new<I, S>(region_query: impl Into<String>, passthrough: I, inpaint_prompt: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            region_query: region_query.into(),
            passthrough_queries: passthrough.into_iter().map(Into::into).collect(),
            inpaint_prompt: inpaint_prompt.into(),
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.region_query.trim().is_empty() {
            return Err(PromptError::InvalidTriple("region query is empty".into()));
        }
        if self.inpaint_prompt.trim().is_empty() {
            return Err(PromptError::InvalidTriple("inpainting prompt is empty".into()));
        }
        if self.passthrough_queries.is_empty() || self.passthrough_queries.iter().any(|q| q.trim().is_empty()) {
            return Err(PromptError::InvalidTriple("passthrough queries must be a nonempty list of nonempty queries".into()));
        }
        Ok(())
    }

    /// The three completion lines of the exemplar block.
    pub fn render_lines(&self) -> [String; 3] {
        [
            format!("{REGION_PREFIX} {}", self.region_query),
            format!("{PASSTHROUGH_PREFIX} {}", self.passthrough_queries.join(PASSTHROUGH_DELIMITER)),
            format!("{INPAINT_PREFIX} {}", self.inpaint_prompt),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExemplar {
    pub spec: AugmentationSpec,
    pub triple: PromptTriple,
}

impl FewShotExemplar {
    pub fn validate(&self) -> Result<(), PromptError> {
        self.spec.validate()?;
        self.triple.validate()
    }
}

/// The counter-clutter exemplar used for 1-shot prompting.
pub fn default_exemplars() -> Vec<FewShotExemplar> {
    vec![FewShotExemplar {
        spec: AugmentationSpec::new("place pepsi can on the counter", "place pepsi can on the clutter counter"),
        triple: PromptTriple::new("empty counter", DEFAULT_PASSTHROUGH, "add a chip bag on the counter"),
    }]
}

/// Render exemplar blocks followed by the query's two task lines, joined by
/// `\n` with no trailing newline.
pub fn build_fewshot_prompt(exemplars: &[FewShotExemplar], spec: &AugmentationSpec) -> String {
    let mut lines = Vec::with_capacity(exemplars.len() * 5 + 2);
    for ex in exemplars {
        lines.push(format!("{SOURCE_PREFIX} {}", ex.spec.source_task));
        lines.push(format!("{TARGET_PREFIX} {}", ex.spec.target_task));
        lines.extend(ex.triple.render_lines());
    }
    lines.push(format!("{SOURCE_PREFIX} {}", spec.source_task));
    lines.push(format!("{TARGET_PREFIX} {}", spec.target_task));
    lines.join("\n")
}

fn field<'a>(response: &'a str, prefix: &'static str) -> Result<&'a str, PromptError> {
    response
        .lines()
        .find_map(|line| line.strip_prefix(prefix))
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .ok_or(PromptError::MissingField(prefix))
}

/// Extract the three prefixed fields from a completion. Prefixes are
/// case-sensitive and must start a line; the first occurrence wins.
pub fn parse_prompt_triple(response: &str) -> Result<PromptTriple, PromptError> {
    let region = field(response, REGION_PREFIX)?;
    let passthrough = field(response, PASSTHROUGH_PREFIX)?;
    let inpaint = field(response, INPAINT_PREFIX)?;
    let triple = PromptTriple::new(
        region,
        passthrough.split(PASSTHROUGH_DELIMITER).map(str::trim),
        inpaint,
    );
    triple.validate()?;
    Ok(triple)
}

/// Payloads of `<int>. <payload>` lines, ordered by their number. Other lines
/// are ignored; equal numbers keep their input order.
pub fn parse_numbered_list(response: &str) -> Vec<String> {
    let mut items: Vec<(u64, usize, String)> = response
        .lines()
        .enumerate()
        .filter_map(|(pos, line)| {
            let line = line.trim();
            let (num, rest) = line.split_once(". ")?;
            if num.is_empty() || !num.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let payload = rest.trim();
            if payload.is_empty() {
                return None;
            }
            let n: u64 = num.parse().ok()?;
            Some((n, pos, payload.to_string()))
        })
        .collect();
    items.sort_by_key(|(n, pos, _)| (*n, *pos));
    items.into_iter().map(|(_, _, s)| s).collect()
}
