//! Language-neutral test metadata, generated test harnesses, subprocess
//! execution and the computational-accuracy metric.

mod harness;
mod runner;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

pub use harness::{generate_harness, Harness};
pub use runner::{execute, Toolchain, Toolchains, DEFAULT_TIMEOUT_SECS};

#[derive(Debug, thiserror::Error)]
pub enum TestkitError {
    #[error("unsupported type `{0}`")]
    UnsupportedType(String),
    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),
    #[error("candidate code does not define `{0}`")]
    MissingFunction(String),
    #[error("toolchain binary `{binary}` not found for {language}")]
    MissingToolchain { language: String, binary: String },
    #[error("no toolchain registered for {0}")]
    NoToolchain(String),
    #[error("execution setup failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("computational accuracy is undefined for an empty outcome list")]
    EmptyOutcomes,
}

/// Standardized data types shared by every target language.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum StdType {
    Int,
    Long,
    Float,
    Bool,
    String,
    List(Box<StdType>),
    Map(Box<StdType>, Box<StdType>),
}

impl StdType {
    fn is_key_type(&self) -> bool {
        matches!(self, StdType::Int | StdType::Long | StdType::Bool | StdType::String)
    }
}

impl fmt::Display for StdType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StdType::Int => f.write_str("int"),
            StdType::Long => f.write_str("long"),
            StdType::Float => f.write_str("float"),
            StdType::Bool => f.write_str("bool"),
            StdType::String => f.write_str("string"),
            StdType::List(t) => write!(f, "list<{t}>"),
            StdType::Map(k, v) => write!(f, "map<{k},{v}>"),
        }
    }
}

impl FromStr for StdType {
    type Err = TestkitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        parse_type(&compact).ok_or_else(|| TestkitError::UnsupportedType(s.to_string()))
    }
}

fn parse_type(s: &str) -> Option<StdType> {
    match s {
        "int" => return Some(StdType::Int),
        "long" => return Some(StdType::Long),
        "float" | "double" => return Some(StdType::Float),
        "bool" => return Some(StdType::Bool),
        "string" | "str" => return Some(StdType::String),
        _ => {}
    }
    if let Some(inner) = s.strip_prefix("list<").and_then(|r| r.strip_suffix('>')) {
        return parse_type(inner).map(|t| StdType::List(Box::new(t)));
    }
    if let Some(inner) = s.strip_prefix("map<").and_then(|r| r.strip_suffix('>')) {
        let split = top_level_comma(inner)?;
        let key = parse_type(&inner[..split])?;
        let value = parse_type(&inner[split + 1..])?;
        if !key.is_key_type() {
            return None;
        }
        return Some(StdType::Map(Box::new(key), Box::new(value)));
    }
    None
}

fn top_level_comma(s: &str) -> Option<usize> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '<' => depth += 1,
            '>' => depth -= 1,
            ',' if depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

impl Serialize for StdType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StdType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: StdType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub inputs: Vec<Value>,
    pub expected: Value,
}

/// Function signature in standardized types plus input/expected-output cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetadata {
    pub function_name: String,
    pub params: Vec<Param>,
    pub return_type: StdType,
    pub cases: Vec<TestCase>,
}

impl TestMetadata {
    pub fn validate(&self) -> Result<(), TestkitError> {
        let bad = |msg: String| Err(TestkitError::InvalidMetadata(msg));
        if !crate::model::is_qualified_name(&self.function_name) || self.function_name.contains('.') {
            return bad(format!("function name `{}` is not an identifier", self.function_name));
        }
        if self.cases.is_empty() {
            return bad("no test cases".into());
        }
        for (i, case) in self.cases.iter().enumerate() {
            if case.inputs.len() != self.params.len() {
                return bad(format!(
                    "case {i} has {} inputs, signature has {} parameters",
                    case.inputs.len(),
                    self.params.len()
                ));
            }
            for (value, param) in case.inputs.iter().zip(&self.params) {
                if !conforms(value, &param.ty) {
                    return bad(format!("case {i}: input {value} is not a {}", param.ty));
                }
            }
            if !conforms(&case.expected, &self.return_type) {
                return bad(format!(
                    "case {i}: expected {} is not a {}",
                    case.expected, self.return_type
                ));
            }
        }
        Ok(())
    }

    /// Canonical output line expected for each case.
    pub fn expected_lines(&self) -> Vec<String> {
        self.cases
            .iter()
            .map(|c| canonical_line(&c.expected, &self.return_type))
            .collect()
    }
}

fn parse_key(key: &str, ty: &StdType) -> Option<Value> {
    match ty {
        StdType::Int | StdType::Long => key.parse::<i64>().ok().map(Value::from),
        StdType::Bool => key.parse::<bool>().ok().map(Value::from),
        StdType::String => Some(Value::from(key)),
        _ => None,
    }
}

/// Whether a JSON literal is a valid value of a standardized type.
pub fn conforms(value: &Value, ty: &StdType) -> bool {
    match ty {
        StdType::Int => value.as_i64().is_some_and(|v| i32::try_from(v).is_ok()),
        StdType::Long => value.as_i64().is_some(),
        StdType::Float => value.as_f64().is_some_and(f64::is_finite),
        StdType::Bool => value.is_boolean(),
        StdType::String => value.is_string(),
        StdType::List(inner) => value
            .as_array()
            .is_some_and(|items| items.iter().all(|v| conforms(v, inner))),
        StdType::Map(k, v) => value.as_object().is_some_and(|m| {
            m.iter()
                .all(|(key, val)| parse_key(key, k).is_some() && conforms(val, v))
        }),
    }
}

fn canonical_float(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        // Display is the shortest round-trip digits without an exponent.
        format!("{v}")
    }
}

/// Canonical text form shared by every harness: shortest round-trip
/// decimals, `true`/`false`, raw strings, `[a, b]` lists and key-sorted
/// `{k: v}` maps.
pub fn canonical(value: &Value, ty: &StdType) -> String {
    match ty {
        StdType::Int | StdType::Long => value.as_i64().map(|v| v.to_string()).unwrap_or_default(),
        StdType::Float => value.as_f64().map(canonical_float).unwrap_or_default(),
        StdType::Bool => value.as_bool().map(|b| b.to_string()).unwrap_or_default(),
        StdType::String => value.as_str().unwrap_or_default().to_string(),
        StdType::List(inner) => {
            let items: Vec<String> = value
                .as_array()
                .map(|a| a.iter().map(|v| canonical(v, inner)).collect())
                .unwrap_or_default();
            format!("[{}]", items.join(", "))
        }
        StdType::Map(k, v) => {
            let Some(map) = value.as_object() else {
                return "{}".into();
            };
            let mut entries: Vec<(MapKey, String, String)> = map
                .iter()
                .filter_map(|(key, val)| {
                    let typed = parse_key(key, k)?;
                    Some((MapKey::from(&typed), canonical(&typed, k), canonical(val, v)))
                })
                .collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let parts: Vec<String> = entries
                .into_iter()
                .map(|(_, key, val)| format!("{key}: {val}"))
                .collect();
            format!("{{{}}}", parts.join(", "))
        }
    }
}

/// One output line: canonical text with newlines escaped.
pub fn canonical_line(value: &Value, ty: &StdType) -> String {
    canonical(value, ty).replace('\n', "\\n")
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum MapKey {
    Bool(bool),
    Int(i64),
    Str(String),
}

impl From<&Value> for MapKey {
    fn from(v: &Value) -> Self {
        match v {
            Value::Bool(b) => MapKey::Bool(*b),
            Value::Number(n) => MapKey::Int(n.as_i64().unwrap_or_default()),
            other => MapKey::Str(other.as_str().unwrap_or_default().to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    CompileError,
    RuntimeError,
    Timeout,
    WrongOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub index: usize,
    pub passed: bool,
    pub expected: String,
    pub actual: Option<String>,
    /// Error text attributed to this case (exception message or compiler
    /// output).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_kind: Option<FailureKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub cases: Vec<CaseResult>,
    pub pass_all: bool,
    pub duration_ms: u64,
    #[serde(default)]
    pub stderr: String,
}

impl TestReport {
    pub fn from_cases(cases: Vec<CaseResult>, duration_ms: u64, stderr: String) -> Self {
        let pass_all = !cases.is_empty() && cases.iter().all(|c| c.passed);
        Self {
            cases,
            pass_all,
            duration_ms,
            stderr,
        }
    }

    /// Every case failed with the same kind, e.g. when the candidate did not
    /// compile.
    pub fn all_failed(expected: &[String], kind: FailureKind, message: &str) -> Self {
        let cases = expected
            .iter()
            .enumerate()
            .map(|(index, e)| CaseResult {
                index,
                passed: false,
                expected: e.clone(),
                actual: None,
                stderr: Some(message.to_string()),
                failure_kind: Some(kind),
            })
            .collect();
        Self::from_cases(cases, 0, message.to_string())
    }

    pub fn failure_kinds(&self) -> Vec<FailureKind> {
        self.cases.iter().filter_map(|c| c.failure_kind).collect()
    }
}

/// Fraction of outcomes whose final verdict passed every test.
pub fn computational_accuracy(outcomes: &[bool]) -> Result<f64, TestkitError> {
    if outcomes.is_empty() {
        return Err(TestkitError::EmptyOutcomes);
    }
    let passed = outcomes.iter().filter(|&&p| p).count();
    Ok(passed as f64 / outcomes.len() as f64)
}

/// Reads and validates a metadata JSON file.
pub fn load_metadata(path: &std::path::Path) -> Result<TestMetadata, crate::Error> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    let meta: TestMetadata = serde_json::from_str(&text).map_err(|e| crate::Error::format(path, e))?;
    meta.validate()?;
    Ok(meta)
}
