use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tree_sitter::{Node, Parser};

use super::{StdType, TestMetadata, TestkitError};
use crate::model::Language;

pub(crate) const CASE_MARKER: &str = "@@case";
pub(crate) const ERROR_MARKER: &str = "@@error";
pub(crate) const JAVA_HARNESS_CLASS: &str = "HarnessMain";

/// A runnable test program with the output line expected for each case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harness {
    pub language: Language,
    pub program: String,
    pub expected: Vec<String>,
}

/// Builds a complete program: the candidate code followed by an entry point
/// that runs every case and prints one marker line per case.
pub fn generate_harness(metadata: &TestMetadata, code: &str, language: Language) -> Result<Harness, TestkitError> {
    metadata.validate()?;
    let program = match language {
        Language::Python => python_harness(metadata, code)?,
        Language::Java => java_harness(metadata, code)?,
    };
    Ok(Harness {
        language,
        program,
        expected: metadata.expected_lines(),
    })
}

fn python_literal(value: &Value, ty: &StdType) -> String {
    match ty {
        StdType::Int | StdType::Long => value.as_i64().unwrap_or_default().to_string(),
        StdType::Float => format!("{:?}", value.as_f64().unwrap_or_default()),
        StdType::Bool => if value.as_bool().unwrap_or_default() {
            "True"
        } else {
            "False"
        }
        .into(),
        StdType::String => json_string(value),
        StdType::List(inner) => {
            let items: Vec<String> = value
                .as_array()
                .map(|a| a.iter().map(|v| python_literal(v, inner)).collect())
                .unwrap_or_default();
            format!("[{}]", items.join(", "))
        }
        StdType::Map(k, v) => {
            let entries: Vec<String> = value
                .as_object()
                .map(|m| {
                    m.iter()
                        .map(|(key, val)| {
                            let key = super::parse_key(key, k).unwrap_or(Value::Null);
                            format!("{}: {}", python_literal(&key, k), python_literal(val, v))
                        })
                        .collect()
                })
                .unwrap_or_default();
            format!("{{{}}}", entries.join(", "))
        }
    }
}

fn json_string(value: &Value) -> String {
    serde_json::to_string(value.as_str().unwrap_or_default()).expect("string serializes")
}

fn python_type_tuple(ty: &StdType) -> String {
    match ty {
        StdType::List(inner) => format!("(\"list\", {})", python_type_tuple(inner)),
        StdType::Map(k, v) => format!("(\"map\", {}, {})", python_type_tuple(k), python_type_tuple(v)),
        scalar => format!("(\"{scalar}\",)"),
    }
}

const PYTHON_CANON: &str = r#"
def __harness_canon(v, t):
    k = t[0]
    if k in ("int", "long"):
        if isinstance(v, int) and not isinstance(v, bool):
            return str(v)
        return repr(v)
    if k == "float":
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return repr(v)
        import decimal
        f = float(v)
        if f == 0:
            return "0"
        return format(decimal.Decimal(repr(f)).normalize(), "f")
    if k == "bool":
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(v)
    if k == "string":
        return v if isinstance(v, str) else repr(v)
    if k == "list":
        return "[" + ", ".join(__harness_canon(x, t[1]) for x in v) + "]"
    if k == "map":
        return "{" + ", ".join(__harness_canon(a, t[1]) + ": " + __harness_canon(v[a], t[2]) for a in sorted(v)) + "}"
    return repr(v)
"#;

fn python_defines(code: &str, name: &str) -> bool {
    let pattern = format!(
        r"(?m)^\s*(?:async\s+)?def\s+{}\s*\(|^{}\s*=",
        regex::escape(name),
        regex::escape(name)
    );
    Regex::new(&pattern).expect("valid regex").is_match(code)
}

fn python_harness(metadata: &TestMetadata, code: &str) -> Result<String, TestkitError> {
    if !python_defines(code, &metadata.function_name) {
        return Err(TestkitError::MissingFunction(metadata.function_name.clone()));
    }
    let mut out = String::new();
    out.push_str(code.trim_end());
    out.push_str("\n\n");
    out.push_str(PYTHON_CANON.trim_start());
    out.push_str("\n\nif __name__ == \"__main__\":\n    import sys\n");
    let _ = writeln!(out, "    __harness_type = {}", python_type_tuple(&metadata.return_type));
    out.push_str("    __harness_cases = [\n");
    for case in &metadata.cases {
        let args: Vec<String> = case
            .inputs
            .iter()
            .zip(&metadata.params)
            .map(|(v, p)| python_literal(v, &p.ty))
            .collect();
        let _ = writeln!(out, "        lambda: {}({}),", metadata.function_name, args.join(", "));
    }
    out.push_str("    ]\n");
    let _ = write!(
        out,
        r#"    for __i, __case in enumerate(__harness_cases):
        try:
            __line = __harness_canon(__case(), __harness_type).replace("\n", "\\n")
            print("{CASE_MARKER} %d %s" % (__i, __line))
        except BaseException as __e:
            print("{ERROR_MARKER} %d %s: %s" % (__i, type(__e).__name__, str(__e).replace("\n", " ")))
        sys.stdout.flush()
"#
    );
    Ok(out)
}

fn java_boxed(ty: &StdType) -> String {
    match ty {
        StdType::Int => "Integer".into(),
        StdType::Long => "Long".into(),
        StdType::Float => "Double".into(),
        StdType::Bool => "Boolean".into(),
        StdType::String => "String".into(),
        StdType::List(inner) => format!("List<{}>", java_boxed(inner)),
        StdType::Map(k, v) => format!("Map<{}, {}>", java_boxed(k), java_boxed(v)),
    }
}

fn java_literal(value: &Value, ty: &StdType) -> String {
    match ty {
        StdType::Int => value.as_i64().unwrap_or_default().to_string(),
        StdType::Long => format!("{}L", value.as_i64().unwrap_or_default()),
        StdType::Float => format!("{:?}", value.as_f64().unwrap_or_default()),
        StdType::Bool => value.as_bool().unwrap_or_default().to_string(),
        StdType::String => json_string(value),
        StdType::List(inner) => {
            let items: Vec<String> = value
                .as_array()
                .map(|a| a.iter().map(|v| java_literal(v, inner)).collect())
                .unwrap_or_default();
            format!("HarnessMain.<{}>list({})", java_boxed(inner), items.join(", "))
        }
        StdType::Map(k, v) => {
            let mut parts = Vec::new();
            if let Some(m) = value.as_object() {
                for (key, val) in m {
                    let key = super::parse_key(key, k).unwrap_or(Value::Null);
                    parts.push(java_literal(&key, k));
                    parts.push(java_literal(val, v));
                }
            }
            format!(
                "HarnessMain.<{}, {}>map({})",
                java_boxed(k),
                java_boxed(v),
                parts.join(", ")
            )
        }
    }
}

const JAVA_SUPPORT: &str = r#"    @SuppressWarnings("unchecked")
    static <T> List<T> list(Object... xs) {
        List<T> out = new ArrayList<>();
        for (Object x : xs) out.add((T) x);
        return out;
    }

    @SuppressWarnings("unchecked")
    static <K, V> Map<K, V> map(Object... kv) {
        Map<K, V> out = new HashMap<>();
        for (int i = 0; i + 1 < kv.length; i += 2) out.put((K) kv[i], (V) kv[i + 1]);
        return out;
    }

    static List<Object> items(Object v) {
        List<Object> out = new ArrayList<>();
        if (v instanceof Iterable) {
            for (Object x : (Iterable<?>) v) out.add(x);
        } else if (v != null && v.getClass().isArray()) {
            int n = java.lang.reflect.Array.getLength(v);
            for (int i = 0; i < n; i++) out.add(java.lang.reflect.Array.get(v, i));
        }
        return out;
    }

    static int topComma(String t) {
        int depth = 0;
        for (int i = 0; i < t.length(); i++) {
            char c = t.charAt(i);
            if (c == '<') depth++;
            else if (c == '>') depth--;
            else if (c == ',' && depth == 0) return i;
        }
        return -1;
    }

    static String canon(Object v, String t) {
        if (t.equals("int") || t.equals("long")) {
            if (v instanceof Integer || v instanceof Long || v instanceof Short || v instanceof Byte) return v.toString();
            return "<" + v + ">";
        }
        if (t.equals("float")) {
            if (!(v instanceof Number)) return "<" + v + ">";
            double d = ((Number) v).doubleValue();
            if (d == 0) return "0";
            return new java.math.BigDecimal(Double.toString(d)).stripTrailingZeros().toPlainString();
        }
        if (t.equals("bool")) return String.valueOf(v);
        if (t.equals("string")) return String.valueOf(v);
        if (t.startsWith("list<")) {
            String inner = t.substring(5, t.length() - 1);
            StringBuilder sb = new StringBuilder("[");
            List<Object> xs = items(v);
            for (int i = 0; i < xs.size(); i++) {
                if (i > 0) sb.append(", ");
                sb.append(canon(xs.get(i), inner));
            }
            return sb.append("]").toString();
        }
        if (t.startsWith("map<")) {
            String inner = t.substring(4, t.length() - 1);
            int c = topComma(inner);
            String kt = inner.substring(0, c), vt = inner.substring(c + 1);
            TreeMap<Object, Object> sorted = new TreeMap<>((Map<?, ?>) v);
            StringBuilder sb = new StringBuilder("{");
            boolean first = true;
            for (Map.Entry<Object, Object> e : sorted.entrySet()) {
                if (!first) sb.append(", ");
                first = false;
                sb.append(canon(e.getKey(), kt)).append(": ").append(canon(e.getValue(), vt));
            }
            return sb.append("}").toString();
        }
        return String.valueOf(v);
    }
"#;

struct JavaTarget {
    /// Class declaring the function, `None` when the code is a bare method.
    owner: Option<String>,
    is_static: bool,
}

fn find_java_method(code: &str, name: &str) -> Option<JavaTarget> {
    let mut parser = Parser::new();
    parser.set_language(&tree_sitter_java::LANGUAGE.into()).ok()?;
    let tree = parser.parse(code, None)?;
    fn walk(node: Node<'_>, code: &str, name: &str, owner: Option<&str>) -> Option<JavaTarget> {
        if node.kind() == "method_declaration"
            && node
                .child_by_field_name("name")
                .is_some_and(|n| &code[n.byte_range()] == name)
        {
            let mut cursor = node.walk();
            let is_static = node
                .children(&mut cursor)
                .find(|c| c.kind() == "modifiers")
                .is_some_and(|m| code[m.byte_range()].split_whitespace().any(|w| w == "static"));
            return Some(JavaTarget {
                owner: owner.map(str::to_string),
                is_static,
            });
        }
        let class_name;
        let owner = if node.kind() == "class_declaration" {
            class_name = node
                .child_by_field_name("name")
                .map(|n| code[n.byte_range()].to_string());
            class_name.as_deref()
        } else {
            owner
        };
        let mut cursor = node.walk();
        let children: Vec<_> = node.named_children(&mut cursor).collect();
        children.into_iter().find_map(|c| walk(c, code, name, owner))
    }
    walk(tree.root_node(), code, name, None)
}

fn java_top_level_public() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^(\s*)public\s+((?:final\s+|abstract\s+|sealed\s+)*(?:class|interface|enum|record)\b)")
            .expect("valid regex")
    })
}

fn java_harness(metadata: &TestMetadata, code: &str) -> Result<String, TestkitError> {
    let name = &metadata.function_name;
    let target = find_java_method(code, name).ok_or_else(|| TestkitError::MissingFunction(name.clone()))?;

    let mut imports = Vec::new();
    let mut body = Vec::new();
    for line in code.lines() {
        let t = line.trim_start();
        if t.starts_with("import ") {
            imports.push(t.to_string());
        } else if t.starts_with("package ") {
            continue;
        } else {
            body.push(line);
        }
    }
    let body = body.join("\n");
    let (candidate, owner, is_static) = match target.owner {
        Some(owner) => (
            java_top_level_public().replace_all(&body, "$1$2").into_owned(),
            owner,
            target.is_static,
        ),
        None => (
            format!("class Solution {{\n{}\n}}", body.trim_end()),
            "Solution".to_string(),
            true,
        ),
    };
    let receiver = if is_static { owner } else { format!("new {owner}()") };

    let mut out = String::from("import java.util.*;\n");
    for import in imports {
        if import != "import java.util.*;" {
            out.push_str(&import);
            out.push('\n');
        }
    }
    out.push('\n');
    out.push_str(candidate.trim_end());
    out.push_str("\n\n");
    let _ = writeln!(out, "public class {JAVA_HARNESS_CLASS} {{");
    out.push_str("    interface Case { Object run() throws Exception; }\n\n");
    out.push_str(JAVA_SUPPORT);
    out.push_str("\n    public static void main(String[] args) {\n");
    let _ = writeln!(out, "        String type = \"{}\";", metadata.return_type);
    out.push_str("        Case[] cases = new Case[] {\n");
    for case in &metadata.cases {
        let args: Vec<String> = case
            .inputs
            .iter()
            .zip(&metadata.params)
            .map(|(v, p)| java_literal(v, &p.ty))
            .collect();
        let _ = writeln!(out, "            () -> {receiver}.{name}({}),", args.join(", "));
    }
    out.push_str("        };\n");
    let _ = write!(
        out,
        r#"        for (int i = 0; i < cases.length; i++) {{
            try {{
                String line = canon(cases[i].run(), type).replace("\n", "\\n");
                System.out.println("{CASE_MARKER} " + i + " " + line);
            }} catch (Throwable e) {{
                System.out.println("{ERROR_MARKER} " + i + " " + String.valueOf(e).replace("\n", " "));
            }}
            System.out.flush();
        }}
    }}
}}
"#
    );
    Ok(out)
}
