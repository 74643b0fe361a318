use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_fewshot_prompt, parse_prompt_triple, AugmentationSpec, FewShotExemplar, PromptError, PromptTriple,
    DEFAULT_PASSTHROUGH,
};
use crate::backend::{BackendError, JsonClient, RetryPolicy};
use crate::seed::{derive_seed, rng};

/// Distractor objects the rule backend samples from.
pub const DISTRACTORS: [&str; 3] = ["coke can", "chip bag", "box of crackers"];

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, max_tokens: u32, temperature: f64) -> Result<String, BackendError>;
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

/// `POST /v1/complete`.
#[derive(Debug, Clone)]
pub struct HttpCompleter {
    client: JsonClient,
}

impl HttpCompleter {
    pub fn new(base_url: impl Into<String>, retry: RetryPolicy) -> Self {
        Self {
            client: JsonClient::new(base_url, retry, Duration::from_secs(60)),
        }
    }
}

impl CompletionBackend for HttpCompleter {
    fn complete(&self, prompt: &str, max_tokens: u32, temperature: f64) -> Result<String, BackendError> {
        let resp: CompleteResponse = self.client.post(
            "/v1/complete",
            &CompleteRequest {
                prompt,
                max_tokens,
                temperature,
            },
        )?;
        Ok(resp.text)
    }
}

/// Returns a fixed completion and records every prompt it was sent.
#[derive(Debug, Default)]
pub struct ScriptedCompleter {
    response: String,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedCompleter {
    pub fn new(response: impl Into<String>) -> Self {
        Self {
            response: response.into(),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("poisoned").clone()
    }
}

impl CompletionBackend for ScriptedCompleter {
    fn complete(&self, prompt: &str, _max_tokens: u32, _temperature: f64) -> Result<String, BackendError> {
        self.prompts.lock().expect("poisoned").push(prompt.to_string());
        Ok(self.response.clone())
    }
}

/// Hand-engineered prompts keyed by target task. Lookups bypass any backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptRegistry {
    pub tasks: BTreeMap<String, PromptTriple>,
}

impl PromptRegistry {
    pub fn load(path: &Path) -> Result<Self, crate::store::StoreError> {
        let reg: Self = crate::store::read_json(path)?;
        Ok(reg)
    }

    pub fn insert(&mut self, task: impl Into<String>, triple: PromptTriple) {
        self.tasks.insert(task.into(), triple);
    }

    pub fn lookup(&self, spec: &AugmentationSpec) -> Option<&PromptTriple> {
        self.tasks.get(&spec.target_task)
    }
}

/// Deterministic pattern-table prompt proposer for offline runs.
#[derive(Debug, Clone)]
pub struct RuleBackend {
    seed: u64,
    distractors: Vec<String>,
}

impl RuleBackend {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            distractors: DISTRACTORS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_distractors(seed: u64, distractors: Vec<String>) -> Self {
        assert!(!distractors.is_empty(), "distractor table must be nonempty");
        Self { seed, distractors }
    }

    fn distractor_for(&self, spec: &AugmentationSpec) -> &str {
        let mut r = rng(derive_seed(self.seed, &["distractor".into(), spec.target_task.as_str().into()]));
        &self.distractors[r.random_range(0..self.distractors.len())]
    }

    pub fn propose(&self, spec: &AugmentationSpec) -> Result<PromptTriple, PromptError> {
        spec.validate()?;
        clutter_template(self, spec)
            .or_else(|| background_template(spec))
            .or_else(|| replacement_template(spec))
            .ok_or_else(|| PromptError::UnmatchedTemplate {
                source_task: spec.source_task.clone(),
                target_task: spec.target_task.clone(),
            })
    }
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn preposition_for(head: &str) -> &'static str {
    match head {
        "counter" | "table" | "shelf" | "tray" | "plate" => "on",
        _ => "in",
    }
}

/// "... cluttered top drawer" -> region "empty drawer",
/// inpaint "add a <distractor> in the drawer".
fn clutter_template(backend: &RuleBackend, spec: &AugmentationSpec) -> Option<PromptTriple> {
    let target = words(&spec.target_task);
    let pos = target.iter().position(|w| *w == "cluttered" || *w == "clutter")?;
    let head = *target.get(pos + 1..)?.last()?;
    let distractor = backend.distractor_for(spec);
    Some(PromptTriple::new(
        format!("empty {head}"),
        DEFAULT_PASSTHROUGH,
        format!("add a {distractor} {} the {head}", preposition_for(head)),
    ))
}

/// "pick coke can" -> "pick coke can on a red table cloth": the table is the
/// region, the manipulated object passes through.
fn background_template(spec: &AugmentationSpec) -> Option<PromptTriple> {
    let target = spec.target_task.as_str();
    if !(target.contains("table cloth") || target.contains("tablecloth")) {
        return None;
    }
    let cloth = ["on a ", "on an ", "from a ", "from an ", "with a ", "with an "]
        .iter()
        .find_map(|marker| target.split_once(marker).map(|(_, rest)| rest.trim()))?;
    let source = words(&spec.source_task);
    let object: Vec<&str> = source
        .iter()
        .skip(1)
        .take_while(|w| !matches!(**w, "on" | "from" | "in" | "into" | "near"))
        .copied()
        .collect();
    let mut passthrough: Vec<String> = DEFAULT_PASSTHROUGH.iter().map(|s| s.to_string()).collect();
    if !object.is_empty() {
        passthrough.push(object.join(" "));
    }
    Some(PromptTriple::new("table", passthrough, cloth))
}

/// Tasks that differ only in one contiguous phrase: the source phrase is the
/// region, the target phrase is painted in.
fn replacement_template(spec: &AugmentationSpec) -> Option<PromptTriple> {
    let s = words(&spec.source_task);
    let t = words(&spec.target_task);
    let prefix = s.iter().zip(&t).take_while(|(a, b)| a == b).count();
    let max_suffix = s.len().min(t.len()) - prefix;
    let suffix = s
        .iter()
        .rev()
        .zip(t.iter().rev())
        .take(max_suffix)
        .take_while(|(a, b)| a == b)
        .count();
    let old = &s[prefix..s.len() - suffix];
    let new = &t[prefix..t.len() - suffix];
    if old.is_empty() || new.is_empty() || prefix == 0 {
        return None;
    }
    let new = new.join(" ");
    let inpaint = if s[0] == "pick" {
        format!("robot picking up a {new}")
    } else {
        format!("add a {new}")
    };
    Some(PromptTriple::new(old.join(" "), DEFAULT_PASSTHROUGH, inpaint))
}

pub enum PromptBackend<'a> {
    Rule(&'a RuleBackend),
    Remote {
        completer: &'a dyn CompletionBackend,
        max_tokens: u32,
        temperature: f64,
    },
}

impl<'a> PromptBackend<'a> {
    pub fn remote(completer: &'a dyn CompletionBackend) -> Self {
        PromptBackend::Remote {
            completer,
            max_tokens: 128,
            temperature: 0.0,
        }
    }
}

/// Propose a prompt triple for `spec`.
///
/// The remote path renders the few-shot prompt, asks the completer and parses
/// the reply. Zero exemplars are allowed but logged: without them models
/// tend to answer free-form and the parse fails.
pub fn propose(
    backend: &PromptBackend<'_>,
    exemplars: &[FewShotExemplar],
    spec: &AugmentationSpec,
) -> Result<PromptTriple, PromptError> {
    spec.validate()?;
    match backend {
        PromptBackend::Rule(rule) => rule.propose(spec),
        PromptBackend::Remote {
            completer,
            max_tokens,
            temperature,
        } => {
            if exemplars.is_empty() {
                log::warn!("proposing prompts zero-shot; completions are unlikely to follow the field format");
            }
            for ex in exemplars {
                ex.validate()?;
            }
            let prompt = build_fewshot_prompt(exemplars, spec);
            let text = completer.complete(&prompt, *max_tokens, *temperature)?;
            parse_prompt_triple(&text)
        }
    }
}
