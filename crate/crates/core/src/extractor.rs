//! Function segmentation and API-call extraction over tree-sitter parses.
//!
//! A call is named by its callee path with receiver objects dropped:
//! `sb.append(x)` is `append/1` while `math.sqrt(x)` and `Math.max(a, b)`
//! keep their module or class prefix. Calls are ordered by the position of
//! their name token, which is the depth-first pre-order of call sites for
//! nested arguments and left-to-right evaluation order for chains
//! (`a.b().c()` gives `b/0 -> c/0`).

use serde::{Deserialize, Serialize};
use tree_sitter::{Node, Parser, Tree};

use crate::model::{ApiCall, ApiSequence, CodeSnippet, Language, SnippetOrigin, Span};

const JAVA_WRAP_PREFIX: &str = "class __Snippet__ {\n";
const JAVA_WRAP_SUFFIX: &str = "\n}\n";

/// Receivers treated as modules or types rather than objects in Python.
const PYTHON_MODULE_ROOTS: &[&str] = &[
    "abc",
    "argparse",
    "array",
    "bisect",
    "builtins",
    "calendar",
    "cmath",
    "collections",
    "contextlib",
    "copy",
    "csv",
    "dataclasses",
    "datetime",
    "decimal",
    "enum",
    "fractions",
    "functools",
    "glob",
    "hashlib",
    "heapq",
    "io",
    "itertools",
    "json",
    "logging",
    "math",
    "np",
    "numpy",
    "operator",
    "os",
    "pathlib",
    "pd",
    "pandas",
    "pickle",
    "queue",
    "random",
    "re",
    "shutil",
    "statistics",
    "string",
    "struct",
    "subprocess",
    "sys",
    "textwrap",
    "threading",
    "time",
    "typing",
    "unicodedata",
    // builtin types used for static-style calls such as `str.maketrans`
    "bool",
    "bytearray",
    "bytes",
    "complex",
    "dict",
    "float",
    "frozenset",
    "int",
    "list",
    "object",
    "set",
    "str",
    "tuple",
    "type",
];

/// Package roots kept as qualified prefixes in Java.
const JAVA_PACKAGE_ROOTS: &[&str] = &["java", "javax"];

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("syntax error at line {line}, column {column}")]
    Syntax { line: usize, column: usize },
    #[error("parser failure: {0}")]
    Parser(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub files_seen: usize,
    pub functions_found: usize,
    pub functions_parsed: usize,
    pub sequences_nonempty: usize,
}

impl ExtractionStats {
    pub fn merge(&mut self, other: &ExtractionStats) {
        self.files_seen += other.files_seen;
        self.functions_found += other.functions_found;
        self.functions_parsed += other.functions_parsed;
        self.sequences_nonempty += other.sequences_nonempty;
    }
}

fn new_parser(language: Language) -> Result<Parser, ExtractError> {
    let mut parser = Parser::new();
    let grammar = match language {
        Language::Python => tree_sitter_python::LANGUAGE.into(),
        Language::Java => tree_sitter_java::LANGUAGE.into(),
    };
    parser
        .set_language(&grammar)
        .map_err(|e| ExtractError::Parser(e.to_string()))?;
    Ok(parser)
}

fn parse(parser: &mut Parser, text: &str) -> Result<Tree, ExtractError> {
    parser
        .parse(text, None)
        .ok_or_else(|| ExtractError::Parser("parse cancelled".into()))
}

fn first_error(root: Node<'_>) -> Option<(usize, usize)> {
    if root.is_error() || root.is_missing() {
        let p = root.start_position();
        return Some((p.row + 1, p.column + 1));
    }
    if !root.has_error() {
        return None;
    }
    let mut cursor = root.walk();
    let children: Vec<_> = root.children(&mut cursor).collect();
    children.into_iter().find_map(first_error)
}

fn syntax_error(root: Node<'_>) -> ExtractError {
    let (line, column) = first_error(root).unwrap_or((1, 1));
    ExtractError::Syntax { line, column }
}

/// A parsed snippet. Java method snippets are wrapped in a synthetic class,
/// `offset` is the length of that prefix.
struct ParsedSnippet {
    source: String,
    tree: Tree,
    offset: usize,
}

fn parse_snippet(parser: &mut Parser, text: &str, language: Language) -> Result<ParsedSnippet, ExtractError> {
    match language {
        Language::Python => {
            let tree = parse(parser, text)?;
            Ok(ParsedSnippet {
                source: text.to_string(),
                tree,
                offset: 0,
            })
        }
        Language::Java => {
            let source = format!("{JAVA_WRAP_PREFIX}{text}{JAVA_WRAP_SUFFIX}");
            let tree = parse(parser, &source)?;
            Ok(ParsedSnippet {
                source,
                tree,
                offset: JAVA_WRAP_PREFIX.len(),
            })
        }
    }
}

/// Splits a source file into one normalized snippet per function or method.
///
/// Functions nested in other functions stay part of their enclosing snippet.
/// Definitions containing syntax errors are skipped with a warning.
pub fn segment_functions(file_text: &str, language: Language) -> Result<Vec<CodeSnippet>, ExtractError> {
    segment_functions_with_stats(file_text, language, "", "").map(|(s, _)| s)
}

pub fn segment_functions_with_stats(
    file_text: &str,
    language: Language,
    source_id: &str,
    path: &str,
) -> Result<(Vec<CodeSnippet>, ExtractionStats), ExtractError> {
    let mut parser = new_parser(language)?;
    let tree = parse(&mut parser, file_text)?;
    let mut defs = Vec::new();
    collect_definitions(tree.root_node(), language, &mut defs);

    let mut stats = ExtractionStats {
        files_seen: 1,
        functions_found: defs.len(),
        ..Default::default()
    };
    let mut snippets = Vec::with_capacity(defs.len());
    for def in defs {
        let name = def
            .child_by_field_name("name")
            .and_then(|n| n.utf8_text(file_text.as_bytes()).ok())
            .unwrap_or("<anonymous>")
            .to_string();
        if def.has_error() {
            tracing::warn!(path, function = %name, "skipping function with syntax errors");
            continue;
        }
        let text = normalize_region(file_text, def, language);
        let reparsed = parse_snippet(&mut parser, &text, language)?;
        if reparsed.tree.root_node().has_error() {
            tracing::warn!(path, function = %name, "normalized function no longer parses, skipping");
            continue;
        }
        stats.functions_parsed += 1;
        snippets.push(CodeSnippet {
            language,
            text,
            origin: SnippetOrigin {
                source_id: source_id.to_string(),
                path: path.to_string(),
                function_name: name,
            },
        });
    }
    Ok((snippets, stats))
}

fn collect_definitions<'t>(node: Node<'t>, language: Language, out: &mut Vec<Node<'t>>) {
    let is_function = match language {
        Language::Python => node.kind() == "function_definition",
        Language::Java => {
            matches!(
                node.kind(),
                "method_declaration" | "constructor_declaration" | "compact_constructor_declaration"
            ) && node.child_by_field_name("body").is_some()
        }
    };
    if is_function {
        out.push(node);
        return;
    }
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        collect_definitions(child, language, out);
    }
}

fn is_comment(kind: &str) -> bool {
    matches!(kind, "comment" | "line_comment" | "block_comment")
}

fn is_string_literal(kind: &str, language: Language) -> bool {
    match language {
        Language::Python => kind == "string",
        Language::Java => matches!(kind, "string_literal" | "character_literal" | "text_block"),
    }
}

fn collect_ranges(
    node: Node<'_>,
    language: Language,
    comments: &mut Vec<(usize, usize)>,
    strings: &mut Vec<(usize, usize)>,
) {
    let kind = node.kind();
    if is_comment(kind) {
        comments.push((node.start_byte(), node.end_byte()));
        return;
    }
    if is_string_literal(kind, language) {
        strings.push((node.start_byte(), node.end_byte()));
        return;
    }
    let mut cursor = node.walk();
    for child in node.children(&mut cursor) {
        collect_ranges(child, language, comments, strings);
    }
}

/// Normalizes a snippet: strips comments, blank lines, trailing whitespace,
/// interior runs of spaces and the common indentation. String literal
/// contents are left untouched. Idempotent on its own output.
pub fn normalize_snippet(text: &str, language: Language) -> Result<String, ExtractError> {
    let mut parser = new_parser(language)?;
    let parsed = parse_snippet(&mut parser, text, language)?;
    let root = parsed.tree.root_node();
    let start = parsed.offset;
    let end = parsed.offset + text.len();
    Ok(normalize_range(&parsed.source, root, start, end, language))
}

fn normalize_region(source: &str, node: Node<'_>, language: Language) -> String {
    let start = node.start_byte();
    // Include the indentation before the definition so dedent sees it.
    let line_start = source[..start].rfind('\n').map_or(0, |i| i + 1);
    let from = if source[line_start..start].chars().all(|c| c == ' ' || c == '\t') {
        line_start
    } else {
        start
    };
    normalize_range(source, node, from, node.end_byte(), language)
}

fn normalize_range(source: &str, scope: Node<'_>, start: usize, end: usize, language: Language) -> String {
    let mut comments = Vec::new();
    let mut strings = Vec::new();
    collect_ranges(scope, language, &mut comments, &mut strings);
    comments.retain(|&(s, e)| s >= start && e <= end);

    // (char, protected) stream with comments replaced by a single space.
    let mut chars: Vec<(char, bool)> = Vec::with_capacity(end - start);
    let mut comment_iter = comments.iter().peekable();
    let mut string_idx = 0;
    let mut pos = start;
    while pos < end {
        if let Some(&&(cs, ce)) = comment_iter.peek() {
            if pos == cs {
                chars.push((' ', false));
                pos = ce;
                comment_iter.next();
                continue;
            }
        }
        while string_idx < strings.len() && strings[string_idx].1 <= pos {
            string_idx += 1;
        }
        let protected = string_idx < strings.len() && strings[string_idx].0 <= pos;
        let c = source[pos..].chars().next().expect("char boundary");
        chars.push((c, protected));
        pos += c.len_utf8();
    }

    // Split into lines on unprotected newlines.
    let mut lines: Vec<Vec<(char, bool)>> = vec![Vec::new()];
    for (c, protected) in chars {
        if c == '\n' && !protected {
            lines.push(Vec::new());
        } else {
            lines.last_mut().expect("non-empty").push((c, protected));
        }
    }

    let is_ws = |&(c, p): &(char, bool)| !p && (c == ' ' || c == '\t' || c == '\r');
    let mut kept: Vec<Vec<(char, bool)>> = Vec::new();
    for mut line in lines {
        while line.last().is_some_and(is_ws) {
            line.pop();
        }
        if line.is_empty() {
            continue;
        }
        // Collapse interior runs after the leading indentation.
        let indent = line.iter().take_while(|ch| is_ws(ch)).count();
        let mut collapsed = line[..indent].to_vec();
        let mut prev_ws = false;
        for &(c, p) in &line[indent..] {
            let ws = !p && (c == ' ' || c == '\t');
            if ws && prev_ws {
                continue;
            }
            if ws {
                collapsed.push((' ', false));
            } else {
                collapsed.push((c, p));
            }
            prev_ws = ws;
        }
        // Keep a lone tab as-is when it was not part of a run.
        kept.push(collapsed);
    }

    let indent_of = |line: &Vec<(char, bool)>| line.iter().take_while(|ch| is_ws(ch)).count();
    let common = kept
        .iter()
        .filter(|l| l.first().is_some_and(|&(_, p)| !p))
        .map(indent_of)
        .min()
        .unwrap_or(0);

    let mut out = String::new();
    for (i, line) in kept.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let skip = if line.first().is_some_and(|&(_, p)| !p) {
            common.min(indent_of(line))
        } else {
            0
        };
        out.extend(line[skip..].iter().map(|&(c, _)| c));
    }
    out
}

/// Extracts the API sequence of one normalized snippet.
pub fn extract_api_sequence(snippet: &CodeSnippet) -> Result<ApiSequence, ExtractError> {
    let mut parser = new_parser(snippet.language)?;
    let parsed = parse_snippet(&mut parser, &snippet.text, snippet.language)?;
    let root = parsed.tree.root_node();
    if root.has_error() {
        return Err(snippet_syntax_error(root, snippet.language));
    }
    Ok(calls_in(root, &parsed.source, parsed.offset, snippet.language))
}

fn snippet_syntax_error(root: Node<'_>, language: Language) -> ExtractError {
    match syntax_error(root) {
        // Report positions relative to the unwrapped snippet.
        ExtractError::Syntax { line, column } if language == Language::Java => ExtractError::Syntax {
            line: line.saturating_sub(1).max(1),
            column,
        },
        other => other,
    }
}

/// Extracts the API sequence of a whole program. This is the per-function
/// sequences concatenated in file order, with calls in top-level code
/// included at their file position.
pub fn extract_from_program(program_text: &str, language: Language) -> Result<ApiSequence, ExtractError> {
    let mut parser = new_parser(language)?;
    let tree = parse(&mut parser, program_text)?;
    let root = tree.root_node();
    if !root.has_error() {
        return Ok(calls_in(root, program_text, 0, language));
    }
    if language == Language::Java {
        // A bare method or method list, as LLMs sometimes emit.
        let wrapped = parse_snippet(&mut parser, program_text, language)?;
        if !wrapped.tree.root_node().has_error() {
            return Ok(calls_in(
                wrapped.tree.root_node(),
                &wrapped.source,
                wrapped.offset,
                language,
            ));
        }
    }
    Err(syntax_error(root))
}

fn calls_in(root: Node<'_>, source: &str, offset: usize, language: Language) -> ApiSequence {
    let mut calls = Vec::new();
    visit(root, source, language, &mut calls);
    calls.sort_by_key(|c: &ApiCall| c.span.start);
    for call in &mut calls {
        call.span.start -= offset;
        call.span.end -= offset;
    }
    ApiSequence::new(language, calls)
}

fn visit(node: Node<'_>, source: &str, language: Language, out: &mut Vec<ApiCall>) {
    let call = match language {
        Language::Python => python_call(node, source),
        Language::Java => java_call(node, source),
    };
    if let Some(call) = call {
        out.push(call);
    }
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        visit(child, source, language, out);
    }
}

fn text<'s>(node: Node<'_>, source: &'s str) -> &'s str {
    &source[node.start_byte()..node.end_byte()]
}

fn count_args(args: Option<Node<'_>>) -> usize {
    let Some(args) = args else { return 0 };
    match args.kind() {
        "argument_list" => {
            let mut cursor = args.walk();
            let n = args
                .named_children(&mut cursor)
                .filter(|c| !is_comment(c.kind()))
                .count();
            n
        }
        // `sum(x for x in a)`
        _ => 1,
    }
}

fn span_of(start: usize, end: usize) -> Span {
    Span { start, end }
}

/// Identifier chain such as `a`, `a.b.c`; `None` if any part is not a
/// plain name.
fn identifier_chain(node: Node<'_>, source: &str, language: Language) -> Option<String> {
    match (language, node.kind()) {
        (_, "identifier") => Some(text(node, source).to_string()),
        (Language::Python, "attribute") => {
            let object = identifier_chain(node.child_by_field_name("object")?, source, language)?;
            let attr = node.child_by_field_name("attribute")?;
            Some(format!("{object}.{}", text(attr, source)))
        }
        (Language::Java, "field_access") => {
            let object = identifier_chain(node.child_by_field_name("object")?, source, language)?;
            let field = node.child_by_field_name("field")?;
            if field.kind() != "identifier" {
                return None;
            }
            Some(format!("{object}.{}", text(field, source)))
        }
        _ => None,
    }
}

fn root_of(chain: &str) -> &str {
    chain.split('.').next().unwrap_or(chain)
}

fn starts_uppercase(s: &str) -> bool {
    s.chars().next().is_some_and(char::is_uppercase)
}

fn python_call(node: Node<'_>, source: &str) -> Option<ApiCall> {
    if node.kind() != "call" {
        return None;
    }
    let function = node.child_by_field_name("function")?;
    let arg_count = count_args(node.child_by_field_name("arguments"));
    match function.kind() {
        "identifier" => ApiCall::new(text(function, source), arg_count)
            .ok()
            .map(|c| c.with_span(span_of(function.start_byte(), function.end_byte()))),
        "attribute" => {
            let object = function.child_by_field_name("object")?;
            let attr = function.child_by_field_name("attribute")?;
            let attr_name = text(attr, source);
            match identifier_chain(object, source, Language::Python) {
                Some(chain) if is_module_like_python(root_of(&chain)) => {
                    ApiCall::new(format!("{chain}.{attr_name}"), arg_count)
                        .ok()
                        .map(|c| c.with_span(span_of(object.start_byte(), attr.end_byte())))
                }
                hint => ApiCall::new(attr_name, arg_count).ok().map(|c| {
                    c.with_span(span_of(attr.start_byte(), attr.end_byte()))
                        .with_receiver_hint(hint)
                }),
            }
        }
        _ => None,
    }
}

fn is_module_like_python(root: &str) -> bool {
    PYTHON_MODULE_ROOTS.contains(&root) || starts_uppercase(root)
}

fn is_static_like_java(root: &str) -> bool {
    JAVA_PACKAGE_ROOTS.contains(&root) || starts_uppercase(root)
}

fn java_call(node: Node<'_>, source: &str) -> Option<ApiCall> {
    match node.kind() {
        "method_invocation" => {
            let name = node.child_by_field_name("name")?;
            let method = text(name, source);
            let arg_count = count_args(node.child_by_field_name("arguments"));
            let Some(object) = node.child_by_field_name("object") else {
                return ApiCall::new(method, arg_count)
                    .ok()
                    .map(|c| c.with_span(span_of(name.start_byte(), name.end_byte())));
            };
            match identifier_chain(object, source, Language::Java) {
                Some(chain) if is_static_like_java(root_of(&chain)) => {
                    ApiCall::new(format!("{chain}.{method}"), arg_count)
                        .ok()
                        .map(|c| c.with_span(span_of(object.start_byte(), name.end_byte())))
                }
                hint => ApiCall::new(method, arg_count).ok().map(|c| {
                    c.with_span(span_of(name.start_byte(), name.end_byte()))
                        .with_receiver_hint(hint)
                }),
            }
        }
        "object_creation_expression" => {
            let ty = node.child_by_field_name("type")?;
            let arg_count = count_args(node.child_by_field_name("arguments"));
            let name = java_type_path(ty, source)?;
            ApiCall::new(name, arg_count)
                .ok()
                .map(|c| c.with_span(span_of(ty.start_byte(), ty.end_byte())))
        }
        "explicit_constructor_invocation" => {
            let ctor = node.child_by_field_name("constructor")?;
            let arg_count = count_args(node.child_by_field_name("arguments"));
            ApiCall::new(text(ctor, source), arg_count)
                .ok()
                .map(|c| c.with_span(span_of(ctor.start_byte(), ctor.end_byte())))
        }
        _ => None,
    }
}

/// Constructor path with type arguments and annotations removed.
fn java_type_path(ty: Node<'_>, source: &str) -> Option<String> {
    match ty.kind() {
        "type_identifier" => Some(text(ty, source).to_string()),
        "generic_type" => {
            let mut cursor = ty.walk();
            let base = ty.named_children(&mut cursor).find(|c| c.kind() != "type_arguments")?;
            java_type_path(base, source)
        }
        "scoped_type_identifier" => {
            let mut cursor = ty.walk();
            let parts: Option<Vec<String>> = ty
                .named_children(&mut cursor)
                .filter(|c| c.kind() != "annotation" && c.kind() != "marker_annotation")
                .map(|c| java_type_path(c, source))
                .collect();
            Some(parts?.join("."))
        }
        _ => None,
    }
}
