//! Chat providers, the three translation prompt templates, conversation
//! history, and extraction of code from model responses.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::http::{HttpConfig, HttpError, JsonClient};
use crate::mappings::ApiMappingRecord;
use crate::model::{serialize_sequence, ApiSequence, Language, TranslationTask};

pub const END_OF_CODE: &str = "|End-of-Code|";

const PROMPT1_TEMPLATE: &str = include_str!("../templates/prompt1.txt");
const PROMPT2_TEMPLATE: &str = include_str!("../templates/prompt2.txt");
const PROMPT3_TEMPLATE: &str = include_str!("../templates/prompt3.txt");

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("chat provider failed: {0}")]
    Transport(#[from] HttpError),
    #[error("scripted fixture exhausted after {0} response(s)")]
    FixtureExhausted(usize),
    #[error("invalid fixture: {0}")]
    Fixture(String),
    #[error("response contained no code")]
    EmptyTranslation,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Result<Self, LlmError> {
        let content = content.into();
        if content.is_empty() {
            return Err(LlmError::Precondition("message content is empty".into()));
        }
        Ok(Self { role, content })
    }

    pub fn user(content: impl Into<String>) -> Result<Self, LlmError> {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Result<Self, LlmError> {
        Self::new(Role::Assistant, content)
    }
}

/// Append-only chat history: an optional system prefix, then alternating
/// user and assistant turns starting with the user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    messages: Vec<Message>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: Message) -> Result<(), LlmError> {
        let last = self
            .messages
            .iter()
            .rev()
            .find(|m| m.role != Role::System)
            .map(|m| m.role);
        let ok = match message.role {
            Role::System => self.messages.iter().all(|m| m.role == Role::System),
            Role::User => last != Some(Role::User),
            Role::Assistant => last == Some(Role::User),
        };
        if !ok {
            return Err(LlmError::Precondition(format!(
                "{:?} message out of turn",
                message.role
            )));
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// The messages plus one more, without touching the stored history.
    pub fn with(&self, next: Message) -> Vec<Message> {
        let mut out = self.messages.clone();
        out.push(next);
        out
    }
}

/// Single-pass `$NAME` substitution; replacement text is never rescanned.
fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        let len = after
            .find(|c: char| !(c.is_ascii_uppercase() || c == '_'))
            .unwrap_or(after.len());
        match vars.iter().find(|(k, _)| *k == &after[..len]) {
            Some((_, v)) if len > 0 => {
                out.push_str(v);
                rest = &after[len..];
            }
            _ => {
                out.push('$');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Direct translation request.
pub fn render_prompt1(task: &TranslationTask) -> Message {
    let text = render(
        PROMPT1_TEMPLATE,
        &[
            ("SOURCE_CODE", &task.source_code),
            ("SOURCE_LANG", task.source_lang.display_name()),
            ("TARGET_LANG", task.target_lang.display_name()),
        ],
    );
    Message {
        role: Role::User,
        content: text,
    }
}

/// Back-translation request for one retrieved target-language sequence.
pub fn render_prompt2(
    target_apis: &ApiSequence,
    source_lang: Language,
    target_lang: Language,
) -> Result<Message, LlmError> {
    if target_apis.is_empty() {
        return Err(LlmError::Precondition("target API sequence is empty".into()));
    }
    let text = render(
        PROMPT2_TEMPLATE,
        &[
            ("TARGET_APIS", &serialize_sequence(target_apis)),
            ("SOURCE_LANG", source_lang.display_name()),
            ("TARGET_LANG", target_lang.display_name()),
        ],
    );
    Ok(Message {
        role: Role::User,
        content: text,
    })
}

/// `source → targets — description — caveats`
pub fn render_mapping_line(record: &ApiMappingRecord) -> String {
    format!(
        "{} → {} — {} — {}",
        record.source_api,
        record.target_apis.join(", "),
        record.description.trim(),
        record.caveats.trim()
    )
}

/// Knowledge-augmented translation request appended to the history.
pub fn render_prompt3(
    history: &Conversation,
    mappings: &[ApiMappingRecord],
    task: &TranslationTask,
) -> Result<Vec<Message>, LlmError> {
    let has_exchange = history.messages().iter().any(|m| m.role == Role::User)
        && history.messages().last().is_some_and(|m| m.role == Role::Assistant);
    if !has_exchange {
        return Err(LlmError::Precondition(
            "history must contain the initial translation exchange".into(),
        ));
    }
    let lines: Vec<String> = mappings.iter().map(render_mapping_line).collect();
    let text = render(
        PROMPT3_TEMPLATE,
        &[
            ("API_MAPPINGS", &lines.join("\n")),
            ("SOURCE_CODE", &task.source_code),
            ("SOURCE_LANG", task.source_lang.display_name()),
            ("TARGET_LANG", task.target_lang.display_name()),
        ],
    );
    Ok(history.with(Message {
        role: Role::User,
        content: text,
    }))
}

/// Extracts code from a model response: the first fenced block if any,
/// cut at the end-of-code sentinel, trimmed of blank edge lines.
pub fn parse_code_response(text: &str, _language: Language) -> Result<String, LlmError> {
    let body = match text.find("```") {
        Some(open) => {
            let after = &text[open + 3..];
            // Skip the info string (e.g. `python`).
            let after = after.split_once('\n').map_or("", |(_, rest)| rest);
            match after.find("```") {
                Some(close) => &after[..close],
                None => after,
            }
        }
        None => text,
    };
    let mut code = match body.find(END_OF_CODE) {
        Some(i) => body[..i].to_string(),
        None => body.to_string(),
    };
    // Drop a dangling comment marker left by `# "|End-of-Code|"`.
    if let Some(nl) = code.rfind('\n').map(|i| i + 1).or(Some(0)) {
        let last = code[nl..].trim();
        if !last.is_empty() && last.chars().all(|c| matches!(c, '#' | '/' | '*' | '"' | '\'' | ' ')) {
            code.truncate(nl);
        }
    }
    let lines: Vec<&str> = code.lines().collect();
    let first = lines.iter().position(|l| !l.trim().is_empty());
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    match (first, last) {
        (Some(f), Some(l)) => Ok(lines[f..=l].join("\n").trim_end().to_string()),
        _ => Err(LlmError::EmptyTranslation),
    }
}

/// A chat-completion backend.
pub trait ChatProvider: Send + Sync {
    /// One completion for the full message list; the first choice only.
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError>;

    /// A provider dedicated to one task, for backends whose behaviour is
    /// scripted per task. `None` means use `self`.
    fn scoped(&self, _task_id: &str) -> Option<Arc<dyn ChatProvider>> {
        None
    }
}

/// One canned reply; conditional replies look at the text of the request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Conditional {
        when_contains: String,
        then: String,
        otherwise: String,
    },
}

impl ScriptedReply {
    fn resolve(&self, messages: &[Message]) -> String {
        match self {
            ScriptedReply::Text(t) => t.clone(),
            ScriptedReply::Conditional {
                when_contains,
                then,
                otherwise,
            } => {
                if messages.iter().any(|m| m.content.contains(when_contains.as_str())) {
                    then.clone()
                } else {
                    otherwise.clone()
                }
            }
        }
    }
}

/// Fixture file contents: a shared queue, or per-task queues.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fixture {
    Queue(Vec<ScriptedReply>),
    PerTask {
        tasks: BTreeMap<String, Vec<ScriptedReply>>,
        #[serde(default)]
        default: Vec<ScriptedReply>,
    },
}

/// Per-task reply queues plus the queue used for unlisted tasks.
type TaskQueues = (BTreeMap<String, Vec<ScriptedReply>>, Vec<ScriptedReply>);

/// Replays canned responses in order and records every request.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<ScriptedReply>>,
    served: Mutex<usize>,
    per_task: Option<TaskQueues>,
    log: Arc<Mutex<Vec<Vec<Message>>>>,
}

impl ScriptedProvider {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::from_fixture(Fixture::Queue(
            responses.into_iter().map(|s| ScriptedReply::Text(s.into())).collect(),
        ))
    }

    pub fn from_fixture(fixture: Fixture) -> Self {
        match fixture {
            Fixture::Queue(replies) => Self {
                queue: Mutex::new(replies.into()),
                ..Default::default()
            },
            Fixture::PerTask { tasks, default } => Self {
                queue: Mutex::new(default.clone().into()),
                per_task: Some((tasks, default)),
                ..Default::default()
            },
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let fixture: Fixture =
            serde_json::from_str(&text).map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::from_fixture(fixture))
    }

    /// Every request served so far, across scoped children.
    pub fn requests(&self) -> Vec<Vec<Message>> {
        self.log.lock().expect("log lock poisoned").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("log lock poisoned").len()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let reply = self.queue.lock().expect("queue lock poisoned").pop_front();
        let mut served = self.served.lock().expect("lock poisoned");
        let Some(reply) = reply else {
            return Err(LlmError::FixtureExhausted(*served));
        };
        *served += 1;
        self.log.lock().expect("log lock poisoned").push(messages.to_vec());
        Ok(reply.resolve(messages))
    }

    fn scoped(&self, task_id: &str) -> Option<Arc<dyn ChatProvider>> {
        let (tasks, default) = self.per_task.as_ref()?;
        let replies = tasks.get(task_id).unwrap_or(default).clone();
        Some(Arc::new(ScriptedProvider {
            queue: Mutex::new(replies.into()),
            served: Mutex::new(0),
            per_task: None,
            log: Arc::clone(&self.log),
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteChatConfig {
    #[serde(flatten)]
    pub http: HttpConfig,
    pub model: String,
}

impl Default for RemoteChatConfig {
    fn default() -> Self {
        Self {
            http: HttpConfig::default(),
            model: "gpt-3.5-turbo".into(),
        }
    }
}

/// OpenAI-compatible `/chat/completions` client using provider defaults
/// for every sampling parameter.
pub struct RemoteChatProvider {
    model: String,
    client: JsonClient,
}

impl RemoteChatProvider {
    pub fn new(config: RemoteChatConfig) -> Result<Self, LlmError> {
        Ok(Self {
            client: JsonClient::new(config.http)?,
            model: config.model,
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
    content: Option<String>,
}

impl ChatProvider for RemoteChatProvider {
    fn complete(&self, messages: &[Message]) -> Result<String, LlmError> {
        let body = serde_json::json!({ "model": self.model, "messages": messages });
        let resp: ChatResponse = self.client.post_json("chat/completions", &body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::BadResponse("no choices in response".into()))
    }
}
