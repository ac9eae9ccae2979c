//! Query decomposition: turn a raw query into a coarse embedding plus
//! modality-labeled subquery embeddings.
//!
//! The rule backend splits on top-level conjunctions and relative-clause
//! markers and classifies each piece by cue words. The llm backend drives an
//! external chat endpoint with two prompt templates and degrades to the rule
//! backend on any transport or parse failure, flagging the result. The none
//! backend embeds the whole query as a single subquery.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedRequest, Embedder, Embedding, Instruction};
use crate::error::{Error, Result};

pub const MAX_SUBQUERIES: usize = 5;

/// Modality label assigned to a subquery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityLabel {
    Text,
    Table,
    Image,
}

impl ModalityLabel {
    pub fn instruction(self) -> Instruction {
        match self {
            ModalityLabel::Text => Instruction::Text,
            ModalityLabel::Table => Instruction::Table,
            ModalityLabel::Image => Instruction::Image,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "text" => Some(ModalityLabel::Text),
            "table" => Some(ModalityLabel::Table),
            "image" => Some(ModalityLabel::Image),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModalityLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModalityLabel::Text => "text",
            ModalityLabel::Table => "table",
            ModalityLabel::Image => "image",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subquery {
    pub text: String,
    pub label: ModalityLabel,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedQuery {
    pub query_text: String,
    /// Embedded with no modality instruction.
    pub coarse_embedding: Embedding,
    /// 1..=5 labeled subqueries, each embedded with its own label.
    pub subqueries: Vec<Subquery>,
    /// Set when the llm backend failed and the rule backend answered instead.
    pub fallback: bool,
}

/// Union of the subquery labels.
pub fn modality_set(dq: &DecomposedQuery) -> BTreeSet<ModalityLabel> {
    dq.subqueries.iter().map(|s| s.label).collect()
}

const TABLE_CUES: &[&[&str]] = &[
    &["how", "many"],
    &["total"],
    &["percentage"],
    &["per", "year"],
    &["rate"],
    &["number", "of"],
];

const IMAGE_CUES: &[&[&str]] = &[
    &["look", "like"],
    &["color"],
    &["logo"],
    &["photo"],
    &["depicted"],
    &["wearing"],
];

fn word_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn cue_matches(tokens: &[String], cue: &[&str]) -> bool {
    if tokens.len() < cue.len() {
        return false;
    }
    tokens.windows(cue.len()).any(|window| {
        window.iter().zip(cue).all(|(token, cue_word)| {
            token == cue_word || token.strip_suffix('s') == Some(cue_word)
        })
    })
}

/// Rule-based modality classification: numeric/tabular cues beat visual
/// cues; everything else is text.
pub fn classify_modality(subquery: &str) -> ModalityLabel {
    let tokens = word_tokens(subquery);
    if TABLE_CUES.iter().any(|cue| cue_matches(&tokens, cue)) {
        return ModalityLabel::Table;
    }
    if IMAGE_CUES.iter().any(|cue| cue_matches(&tokens, cue)) {
        return ModalityLabel::Image;
    }
    ModalityLabel::Text
}

/// Verbs that mark a relative clause after "which"/"that".
const CLAUSE_VERBS: &[&str] = &[
    "is", "are", "was", "were", "has", "have", "had", "does", "do", "did", "can", "could", "will",
    "would", "may", "might", "shows", "contains", "includes", "holds", "won", "features",
    "depicts", "lies", "stands",
];

/// ASCII-lowercased shadow of `s` with identical byte offsets.
fn ascii_lower(s: &str) -> String {
    s.chars().map(|c| c.to_ascii_lowercase()).collect()
}

fn next_word(lower: &str, from: usize) -> Option<&str> {
    let rest = lower[from..].trim_start();
    let word = rest.split(|c: char| !c.is_alphanumeric()).next()?;
    (!word.is_empty()).then_some(word)
}

/// Split a query into subquery candidates on top-level conjunctions
/// (" and ", " as well as ", ", ") and relative-clause markers ("which"/
/// "that" followed by a clause verb). Splits never happen inside
/// parentheses, brackets, or double quotes.
pub fn rule_split(query: &str) -> Vec<String> {
    let lower = ascii_lower(query);
    let bytes = lower.as_bytes();
    const SEPS: [&str; 3] = [" as well as ", " and ", ", "];
    const MARKERS: [&str; 2] = [" which ", " that "];

    let mut pieces = Vec::new();
    let mut start = 0;
    let mut depth = 0usize;
    let mut in_quote = false;
    let mut i = 0;
    'scan: while i < bytes.len() {
        // Every pattern starts with an ASCII byte, and an ASCII byte is
        // always a char boundary, so byte-indexed slicing is safe here.
        if bytes[i] >= 0x80 {
            i += 1;
            continue;
        }
        match bytes[i] {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth = depth.saturating_sub(1),
            b'"' => in_quote = !in_quote,
            _ => {}
        }
        if depth == 0 && !in_quote {
            for sep in SEPS {
                if lower[i..].starts_with(sep) {
                    pieces.push(&query[start..i]);
                    i += sep.len();
                    start = i;
                    continue 'scan;
                }
            }
            for marker in MARKERS {
                if lower[i..].starts_with(marker) {
                    let after = i + marker.len();
                    if let Some(word) = next_word(&lower, after) {
                        if CLAUSE_VERBS.contains(&word) {
                            pieces.push(&query[start..i]);
                            start = i + 1; // keep the marker word in the next piece
                            i = after;
                            continue 'scan;
                        }
                    }
                }
            }
        }
        i += 1;
    }
    pieces.push(&query[start..]);

    let mut out = Vec::new();
    for piece in pieces {
        let mut piece = piece.trim();
        for lead in ["and ", "And ", "or ", "Or "] {
            if let Some(rest) = piece.strip_prefix(lead) {
                piece = rest.trim_start();
            }
        }
        let piece = piece.trim_end_matches(['?', '.', '!', ',', ';', ':']).trim_end();
        if !piece.is_empty() {
            out.push(piece.to_string());
        }
    }
    out.truncate(MAX_SUBQUERIES);
    if out.is_empty() {
        let whole = query
            .trim()
            .trim_end_matches(['?', '.', '!', ',', ';', ':'])
            .trim_end()
            .to_string();
        out.push(if whole.is_empty() { query.trim().to_string() } else { whole });
    }
    out
}

/// A chat-completions style client; the llm decomposition backend drives it
/// with the two prompt templates.
pub trait ChatClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String>;
}

/// HTTP client posting `{model, temperature: 0, messages}` to a fixed URL
/// and reading `choices[0].message.content`.
pub struct HttpChatClient {
    url: String,
    model: String,
    client: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(url: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Validation(format!("chat client init: {e}")))?;
        Ok(Self {
            url: url.into(),
            model: model.into(),
            client,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let response = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| Error::Validation(format!("chat transport: {e}")))?;
        if !response.status().is_success() {
            return Err(Error::Validation(format!("chat status {}", response.status())));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| Error::Validation(format!("chat body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Validation("chat response has no choices".into()))
    }
}

#[derive(Serialize, Deserialize)]
struct ReplayEntry {
    prompt: String,
    response: String,
}

/// Replays recorded prompt/response pairs; unknown prompts fail like a
/// transport error, which exercises the fallback path deterministically.
pub struct ReplayChatClient {
    entries: std::collections::HashMap<String, String>,
}

impl ReplayChatClient {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let mut entries = std::collections::HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("replay record: {e}"),
            })?;
            entries.insert(entry.prompt, entry.response);
        }
        Ok(Self { entries })
    }
}

impl ChatClient for ReplayChatClient {
    fn complete(&self, prompt: &str) -> Result<String> {
        self.entries
            .get(prompt)
            .cloned()
            .ok_or_else(|| Error::Validation("replay file has no entry for prompt".into()))
    }
}

/// Wraps a client and appends every exchange to a replay file.
pub struct RecordingChatClient<C> {
    inner: C,
    sink: Mutex<std::fs::File>,
}

impl<C: ChatClient> RecordingChatClient<C> {
    pub fn new(inner: C, path: &std::path::Path) -> Result<Self> {
        let sink = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            inner,
            sink: Mutex::new(sink),
        })
    }
}

impl<C: ChatClient> ChatClient for RecordingChatClient<C> {
    fn complete(&self, prompt: &str) -> Result<String> {
        let response = self.inner.complete(prompt)?;
        let entry = ReplayEntry {
            prompt: prompt.to_string(),
            response: response.clone(),
        };
        let mut sink = self.sink.lock().expect("replay sink poisoned");
        let line = serde_json::to_string(&entry)
            .map_err(|e| Error::Validation(format!("replay record: {e}")))?;
        writeln!(sink, "{line}")?;
        Ok(response)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecomposeBackend {
    #[default]
    Rule,
    Llm,
    None,
}

pub struct Decomposer {
    backend: DecomposeBackend,
    chat: Option<Box<dyn ChatClient>>,
    decompose_prompt: String,
    modality_prompt: String,
    transport_retries: usize,
}

pub const DEFAULT_DECOMPOSE_PROMPT: &str = include_str!("../prompts/decompose.txt");
pub const DEFAULT_MODALITY_PROMPT: &str = include_str!("../prompts/modality.txt");

impl Decomposer {
    pub fn rule() -> Self {
        Self {
            backend: DecomposeBackend::Rule,
            chat: None,
            decompose_prompt: DEFAULT_DECOMPOSE_PROMPT.into(),
            modality_prompt: DEFAULT_MODALITY_PROMPT.into(),
            transport_retries: 2,
        }
    }

    pub fn whole_query() -> Self {
        Self {
            backend: DecomposeBackend::None,
            ..Self::rule()
        }
    }

    pub fn llm(chat: Box<dyn ChatClient>) -> Self {
        Self {
            backend: DecomposeBackend::Llm,
            chat: Some(chat),
            ..Self::rule()
        }
    }

    pub fn with_prompts(mut self, decompose: String, modality: String) -> Self {
        self.decompose_prompt = decompose;
        self.modality_prompt = modality;
        self
    }

    pub fn backend(&self) -> DecomposeBackend {
        self.backend
    }

    /// Decompose and embed a query. Never returns zero subqueries; llm
    /// failures degrade to the rule backend with `fallback` set.
    pub fn decompose(&self, query: &str, embedder: &dyn Embedder) -> Result<DecomposedQuery> {
        if query.trim().is_empty() {
            return Err(Error::InvalidParam("empty query".into()));
        }
        let (labeled, fallback) = match self.backend {
            DecomposeBackend::Rule => (self.rule_labeled(query), false),
            DecomposeBackend::None => {
                let text = query.trim().to_string();
                let label = classify_modality(&text);
                (vec![(text, label)], false)
            }
            DecomposeBackend::Llm => match self.llm_labeled(query) {
                Some(labeled) => (labeled, false),
                None => (self.rule_labeled(query), true),
            },
        };
        let mut requests = vec![EmbedRequest::new(query.to_string(), Instruction::None)];
        for (text, label) in &labeled {
            requests.push(EmbedRequest::new(text.clone(), label.instruction()));
        }
        let mut vectors = embedder.embed_batch(&requests)?;
        let coarse_embedding = vectors.remove(0);
        let subqueries = labeled
            .into_iter()
            .zip(vectors)
            .map(|((text, label), embedding)| Subquery {
                text,
                label,
                embedding,
            })
            .collect();
        Ok(DecomposedQuery {
            query_text: query.to_string(),
            coarse_embedding,
            subqueries,
            fallback,
        })
    }

    fn rule_labeled(&self, query: &str) -> Vec<(String, ModalityLabel)> {
        rule_split(query)
            .into_iter()
            .map(|text| {
                let label = classify_modality(&text);
                (text, label)
            })
            .collect()
    }

    fn chat_with_retries(&self, prompt: &str) -> Option<String> {
        let chat = self.chat.as_ref()?;
        for _ in 0..=self.transport_retries {
            if let Ok(response) = chat.complete(prompt) {
                return Some(response);
            }
        }
        None
    }

    /// Both llm calls; `None` on any transport or parse failure.
    fn llm_labeled(&self, query: &str) -> Option<Vec<(String, ModalityLabel)>> {
        let prompt = self.decompose_prompt.replace("{question}", query);
        let response = self.chat_with_retries(&prompt)?;
        let mut texts = parse_string_array(&response)?;
        texts.retain(|t| !t.trim().is_empty());
        if texts.is_empty() {
            return None;
        }
        texts.truncate(MAX_SUBQUERIES);
        let mut labeled = Vec::with_capacity(texts.len());
        for text in texts {
            let prompt = self.modality_prompt.replace("{subquery}", &text);
            let response = self.chat_with_retries(&prompt)?;
            let label = ModalityLabel::parse(&response)?;
            labeled.push((text.trim().to_string(), label));
        }
        Some(labeled)
    }
}

/// Extract a JSON array of strings from a chat response, tolerating
/// surrounding prose.
fn parse_string_array(response: &str) -> Option<Vec<String>> {
    let start = response.find('[')?;
    let end = response.rfind(']')?;
    if end <= start {
        return None;
    }
    serde_json::from_str(&response[start..=end]).ok()
}
