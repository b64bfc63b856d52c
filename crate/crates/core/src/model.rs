//! Language-neutral domain types shared across the crate.
//!
//! An [`ApiSequence`] is the ordered list of API invocations found in a
//! function or program. Its canonical text form (`name/argc -> name/argc`)
//! is both the embedding input and the deduplication key.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::testkit::TestMetadata;

/// Separator between calls in the canonical sequence text.
pub const CALL_SEPARATOR: &str = " -> ";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed sequence token `{token}`: {reason}")]
    MalformedToken { token: String, reason: &'static str },
    #[error("invalid API name `{0}`")]
    InvalidName(String),
    #[error("invalid span {start}..{end}")]
    InvalidSpan { start: usize, end: usize },
    #[error("unknown language `{0}`")]
    UnknownLanguage(String),
    #[error("source and target language are both {0}")]
    SameLanguage(Language),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Python,
    Java,
}

impl Language {
    pub const ALL: [Language; 2] = [Language::Python, Language::Java];

    /// Lowercase identifier used in file formats and CLI flags.
    pub fn id(self) -> &'static str {
        match self {
            Language::Python => "python",
            Language::Java => "java",
        }
    }

    /// Human-readable name substituted into prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Language::Python => "Python",
            Language::Java => "Java",
        }
    }

    pub fn file_extension(self) -> &'static str {
        match self {
            Language::Python => "py",
            Language::Java => "java",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Language {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "python" | "py" | "python3" => Ok(Language::Python),
            "java" => Ok(Language::Java),
            other => Err(ModelError::UnknownLanguage(other.to_string())),
        }
    }
}

/// Byte range of a call site within its snippet. Parsed sequences carry the
/// zero-length span `0..0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self, ModelError> {
        if start >= end {
            return Err(ModelError::InvalidSpan { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// One API invocation: the call path as written (receiver objects dropped)
/// and the number of arguments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiCall {
    pub qualified_name: String,
    pub arg_count: usize,
    #[serde(default)]
    pub span: Span,
    /// Dropped receiver, kept only when it is a plain identifier chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_hint: Option<String>,
}

impl ApiCall {
    pub fn new(qualified_name: impl Into<String>, arg_count: usize) -> Result<Self, ModelError> {
        let qualified_name = qualified_name.into();
        if !is_qualified_name(&qualified_name) {
            return Err(ModelError::InvalidName(qualified_name));
        }
        Ok(Self {
            qualified_name,
            arg_count,
            span: Span::default(),
            receiver_hint: None,
        })
    }

    pub fn with_span(mut self, span: Span) -> Self {
        self.span = span;
        self
    }

    pub fn with_receiver_hint(mut self, hint: Option<String>) -> Self {
        self.receiver_hint = hint;
        self
    }

    /// The `name/argc` token used in canonical text.
    pub fn token(&self) -> String {
        format!("{}/{}", self.qualified_name, self.arg_count)
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' || c == '$' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_' || c == '$')
}

/// `ident(.ident)*`
pub fn is_qualified_name(s: &str) -> bool {
    !s.is_empty() && s.split('.').all(is_ident)
}

/// Ordered API calls of one function or program.
#[derive(Debug, Clone, Serialize)]
pub struct ApiSequence {
    pub language: Language,
    pub calls: Vec<ApiCall>,
    canonical_text: String,
}

impl ApiSequence {
    pub fn new(language: Language, calls: Vec<ApiCall>) -> Self {
        let canonical_text = serialize_calls(&calls);
        Self {
            language,
            calls,
            canonical_text,
        }
    }

    pub fn empty(language: Language) -> Self {
        Self::new(language, Vec::new())
    }

    pub fn canonical_text(&self) -> &str {
        &self.canonical_text
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    /// Concatenates sequences of the same language in order.
    pub fn concat<'a>(language: Language, parts: impl IntoIterator<Item = &'a ApiSequence>) -> Self {
        let calls = parts.into_iter().flat_map(|s| s.calls.iter().cloned()).collect();
        Self::new(language, calls)
    }
}

impl PartialEq for ApiSequence {
    fn eq(&self, other: &Self) -> bool {
        self.language == other.language && self.calls == other.calls
    }
}

impl Eq for ApiSequence {}

impl<'de> Deserialize<'de> for ApiSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            language: Language,
            calls: Vec<ApiCall>,
        }
        let raw = Raw::deserialize(deserializer)?;
        for call in &raw.calls {
            if !is_qualified_name(&call.qualified_name) {
                return Err(serde::de::Error::custom(format!(
                    "invalid API name `{}`",
                    call.qualified_name
                )));
            }
        }
        Ok(ApiSequence::new(raw.language, raw.calls))
    }
}

fn serialize_calls(calls: &[ApiCall]) -> String {
    calls
        .iter()
        .map(ApiCall::token)
        .collect::<Vec<_>>()
        .join(CALL_SEPARATOR)
}

/// Canonical text of a sequence: `name/argc` tokens joined by ` -> `.
pub fn serialize_sequence(seq: &ApiSequence) -> String {
    serialize_calls(&seq.calls)
}

/// Inverse of [`serialize_sequence`]. Spans come back zero-length and
/// receiver hints are absent.
pub fn parse_sequence(text: &str, language: Language) -> Result<ApiSequence, ModelError> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(ApiSequence::empty(language));
    }
    let calls = text
        .split(CALL_SEPARATOR.trim())
        .map(|raw| parse_token(raw.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ApiSequence::new(language, calls))
}

fn parse_token(token: &str) -> Result<ApiCall, ModelError> {
    let malformed = |reason| ModelError::MalformedToken {
        token: token.to_string(),
        reason,
    };
    let (name, argc) = token
        .rsplit_once('/')
        .ok_or_else(|| malformed("expected `name/argcount`"))?;
    if !is_qualified_name(name) {
        return Err(malformed("name is not a dotted identifier path"));
    }
    if argc.is_empty() || !argc.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed("argument count is not a non-negative integer"));
    }
    let arg_count = argc.parse().map_err(|_| malformed("argument count out of range"))?;
    ApiCall::new(name, arg_count)
}

/// Origin of a snippet inside a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetOrigin {
    pub source_id: String,
    pub path: String,
    pub function_name: String,
}

/// A normalized function body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub language: Language,
    pub text: String,
    pub origin: SnippetOrigin,
}

/// Source program plus the test metadata that decides whether a translation
/// is correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationTask {
    pub id: String,
    pub source_lang: Language,
    pub target_lang: Language,
    pub source_code: String,
    pub metadata: TestMetadata,
}

impl TranslationTask {
    /// Checks the language pair and the metadata. Source parsing is checked
    /// by the extractor when the source sequence is needed.
    pub fn validate(&self) -> Result<(), crate::Error> {
        if self.source_lang == self.target_lang {
            return Err(ModelError::SameLanguage(self.source_lang).into());
        }
        self.metadata.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultCategory {
    SingleApi,
    ApiSequence,
}

/// API mistranslation fault patterns used to label failed translations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultPattern {
    SemanticallySimilarButIncorrectApi,
    ApiTypeMismatch,
    IncorrectParameterType,
    IncorrectReturnType,
    ImproperParameterConstraints,
    IncorrectParameterFormatting,
    NonExistentApi,
    MissingApiCalls,
    RedundantApiCalls,
    MisinterpretedApiFunctionality,
    IterationErrors,
    VariableNameConflicts,
}

impl FaultPattern {
    pub const ALL: [FaultPattern; 12] = [
        FaultPattern::SemanticallySimilarButIncorrectApi,
        FaultPattern::ApiTypeMismatch,
        FaultPattern::IncorrectParameterType,
        FaultPattern::IncorrectReturnType,
        FaultPattern::ImproperParameterConstraints,
        FaultPattern::IncorrectParameterFormatting,
        FaultPattern::NonExistentApi,
        FaultPattern::MissingApiCalls,
        FaultPattern::RedundantApiCalls,
        FaultPattern::MisinterpretedApiFunctionality,
        FaultPattern::IterationErrors,
        FaultPattern::VariableNameConflicts,
    ];

    pub fn category(self) -> FaultCategory {
        use FaultPattern::*;
        match self {
            SemanticallySimilarButIncorrectApi
            | ApiTypeMismatch
            | IncorrectParameterType
            | IncorrectReturnType
            | ImproperParameterConstraints
            | IncorrectParameterFormatting
            | NonExistentApi => FaultCategory::SingleApi,
            MissingApiCalls
            | RedundantApiCalls
            | MisinterpretedApiFunctionality
            | IterationErrors
            | VariableNameConflicts => FaultCategory::ApiSequence,
        }
    }
}
