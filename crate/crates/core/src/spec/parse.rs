//! JSON documents → typed specs.
//!
//! Parsing never stops at the first problem: every structural issue becomes
//! a [`Diagnostic`] carrying the JSON pointer of the offending node, and
//! unrecognized fields become warnings. Semantic checks from
//! [`super::validate`] run on whatever parsed cleanly.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde_json::{Map, Value};

use super::diag::codes;
use super::validate;
use super::*;
use crate::condition::ConditionExpr;
use crate::constraint::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocumentKind {
    Tutorial,
    Exam,
    TaskSet,
    ExamConfig,
    Pipeline,
}

impl DocumentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Tutorial => "tutorial",
            Self::Exam => "exam",
            Self::TaskSet => "task_set",
            Self::ExamConfig => "exam_config",
            Self::Pipeline => "pipeline",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "tutorial" => Some(Self::Tutorial),
            "exam" => Some(Self::Exam),
            "task_set" | "taskset" => Some(Self::TaskSet),
            "exam_config" => Some(Self::ExamConfig),
            "pipeline" => Some(Self::Pipeline),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpecDocument {
    QuestionSet(QuestionSet),
    TaskSet(TaskSetSpec),
    ExamConfig(ExamConfig),
    Pipeline(PipelineSpec),
}

/// A successfully parsed document and the warnings it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<Diagnostic>,
}

/// Guesses the document kind from its top-level keys. Question sets are
/// reported as [`DocumentKind::Exam`].
pub fn detect_kind(raw: &str) -> Option<DocumentKind> {
    let value: Value = serde_json::from_str(raw).ok()?;
    match &value {
        Value::Array(_) => Some(DocumentKind::Exam),
        Value::Object(m) if m.contains_key("question_set") => Some(DocumentKind::Exam),
        Value::Object(m) if m.contains_key("tasks") => Some(DocumentKind::TaskSet),
        Value::Object(m) if m.contains_key("sample_size") => Some(DocumentKind::ExamConfig),
        Value::Object(m) if m.contains_key("name") || m.contains_key("instruction") => Some(DocumentKind::Pipeline),
        _ => None,
    }
}

pub fn parse_document(raw: &str, kind: DocumentKind, registry: &Registry) -> Result<Parsed<SpecDocument>, Vec<Diagnostic>> {
    match kind {
        DocumentKind::Tutorial | DocumentKind::Exam => parse_question_set(raw).map(|p| p.map(SpecDocument::QuestionSet)),
        DocumentKind::TaskSet => parse_task_set(raw, registry).map(|p| p.map(SpecDocument::TaskSet)),
        DocumentKind::ExamConfig => parse_exam_config(raw).map(|p| p.map(SpecDocument::ExamConfig)),
        DocumentKind::Pipeline => parse_pipeline(raw, registry).map(|p| p.map(SpecDocument::Pipeline)),
    }
}

impl<T> Parsed<T> {
    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Parsed<U> {
        Parsed { value: f(self.value), warnings: self.warnings }
    }
}

pub fn parse_question_set(raw: &str) -> Result<Parsed<QuestionSet>, Vec<Diagnostic>> {
    run(raw, |r, v| {
        let qs = r.question_set_doc(v, "")?;
        r.extend(validate::validate_question_set(&qs, ""));
        Some(qs)
    })
}

pub fn parse_task_set(raw: &str, registry: &Registry) -> Result<Parsed<TaskSetSpec>, Vec<Diagnostic>> {
    run(raw, |r, v| {
        let ts = r.task_set(v, "")?;
        r.extend(validate::validate_task_set_at(&ts, registry, ""));
        Some(ts)
    })
}

pub fn parse_exam_config(raw: &str) -> Result<Parsed<ExamConfig>, Vec<Diagnostic>> {
    run(raw, |r, v| {
        let cfg = r.exam_config(v, "")?;
        r.extend(validate::validate_exam_config(&cfg, None, ""));
        Some(cfg)
    })
}

pub fn parse_pipeline(raw: &str, registry: &Registry) -> Result<Parsed<PipelineSpec>, Vec<Diagnostic>> {
    run(raw, |r, v| {
        let p = r.pipeline(v)?;
        r.extend(validate::validate_pipeline(&p, registry));
        Some(p)
    })
}

fn run<T>(raw: &str, f: impl FnOnce(&mut Reader, &Value) -> Option<T>) -> Result<Parsed<T>, Vec<Diagnostic>> {
    let value: Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(e) => {
            return Err(alloc::vec![Diagnostic::error(
                "",
                codes::MALFORMED_DOCUMENT,
                format!("not a JSON document: {e}"),
            )])
        }
    };
    let mut reader = Reader::default();
    let out = f(&mut reader, &value);
    match out {
        Some(value) if !has_errors(&reader.diags) => Ok(Parsed { value, warnings: reader.diags }),
        _ => {
            if !has_errors(&reader.diags) {
                reader.diags.push(Diagnostic::error("", codes::MALFORMED_DOCUMENT, "document could not be parsed"));
            }
            Err(reader.diags)
        }
    }
}

/// Appends an object key to a JSON pointer.
pub(crate) fn key_path(path: &str, key: &str) -> String {
    let escaped = key.replace('~', "~0").replace('/', "~1");
    format!("{path}/{escaped}")
}

pub(crate) fn index_path(path: &str, i: usize) -> String {
    format!("{path}/{i}")
}

#[derive(Default)]
struct Reader {
    diags: Vec<Diagnostic>,
}

const CONTEXT_FIELDS: &[&str] = &["id", "type", "label", "text", "html", "url"];
const QUESTION_FIELDS: &[&str] = &["type", "question_id", "context", "question", "answer", "explanation"];
const ANNOTATION_FIELDS: &[&str] =
    &["id", "type", "prompt", "options", "from_context", "optional", "min", "max", "conditions", "constraints"];
const GROUP_FIELDS: &[&str] = &["id", "title", "annotations", "repeated", "min", "max"];
const TASK_FIELDS: &[&str] = &["task_id", "contexts", "annotations", "annotation_groups"];
const TASK_SET_FIELDS: &[&str] = &["task_set_id", "shared", "tasks", "redundancy"];
const EXAM_CONFIG_FIELDS: &[&str] = &["sample_size", "passing_score", "max_attempts", "pass_comparison"];
const PIPELINE_FIELDS: &[&str] = &["name", "version", "instruction", "tutorial", "exam", "exam_config", "task_set"];
const CONSTRAINT_FIELDS: &[&str] = &["type", "description", "regex", "name", "params", "scope"];

impl Reader {
    fn error(&mut self, path: &str, code: &str, message: impl Into<String>) {
        self.diags.push(Diagnostic::error(path, code, message));
    }

    fn extend(&mut self, diags: Vec<Diagnostic>) {
        self.diags.extend(diags);
    }

    fn type_name(v: &Value) -> &'static str {
        match v {
            Value::Null => "null",
            Value::Bool(_) => "boolean",
            Value::Number(_) => "number",
            Value::String(_) => "string",
            Value::Array(_) => "array",
            Value::Object(_) => "object",
        }
    }

    fn wrong_type(&mut self, path: &str, expected: &str, got: &Value) {
        let got = Self::type_name(got);
        self.error(path, codes::WRONG_TYPE, format!("expected {expected}, found {got}"));
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str, known: &[&str]) -> Option<&'v Map<String, Value>> {
        let Value::Object(m) = v else {
            self.wrong_type(path, "object", v);
            return None;
        };
        for key in m.keys() {
            if !known.contains(&key.as_str()) {
                self.diags.push(Diagnostic::warning(
                    key_path(path, key),
                    codes::UNKNOWN_FIELD,
                    format!("unrecognized field `{key}` is ignored"),
                ));
            }
        }
        Some(m)
    }

    fn required<'v>(&mut self, m: &'v Map<String, Value>, path: &str, key: &str) -> Option<&'v Value> {
        let v = m.get(key);
        if v.is_none() {
            self.error(&key_path(path, key), codes::MISSING_FIELD, format!("required field `{key}` is missing"));
        }
        v
    }

    fn string(&mut self, v: &Value, path: &str) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            other => {
                self.wrong_type(path, "string", other);
                None
            }
        }
    }

    fn req_string(&mut self, m: &Map<String, Value>, path: &str, key: &str) -> Option<String> {
        let v = self.required(m, path, key)?;
        self.string(v, &key_path(path, key))
    }

    fn ident(&mut self, m: &Map<String, Value>, path: &str, key: &str) -> Option<String> {
        let s = self.req_string(m, path, key)?;
        if s.is_empty() {
            self.error(&key_path(path, key), codes::EMPTY_ID, "identifiers must be non-empty");
        }
        Some(s)
    }

    fn opt_string(&mut self, m: &Map<String, Value>, path: &str, key: &str) -> Option<String> {
        let v = m.get(key)?;
        if v.is_null() {
            return None;
        }
        self.string(v, &key_path(path, key))
    }

    fn opt_bool(&mut self, m: &Map<String, Value>, path: &str, key: &str) -> Option<bool> {
        match m.get(key)? {
            Value::Bool(b) => Some(*b),
            Value::Null => None,
            other => {
                self.wrong_type(&key_path(path, key), "boolean", other);
                None
            }
        }
    }

    fn opt_u32(&mut self, m: &Map<String, Value>, path: &str, key: &str) -> Option<u32> {
        let v = m.get(key)?;
        if v.is_null() {
            return None;
        }
        match v.as_u64().and_then(|n| u32::try_from(n).ok()) {
            Some(n) => Some(n),
            None => {
                self.wrong_type(&key_path(path, key), "non-negative integer", v);
                None
            }
        }
    }

    fn req_u32(&mut self, m: &Map<String, Value>, path: &str, key: &str) -> Option<u32> {
        self.required(m, path, key)?;
        self.opt_u32(m, path, key)
    }

    fn array<'v>(&mut self, v: &'v Value, path: &str) -> Option<&'v [Value]> {
        match v {
            Value::Array(a) => Some(a),
            other => {
                self.wrong_type(path, "array", other);
                None
            }
        }
    }

    fn opt_array<'v>(&mut self, m: &'v Map<String, Value>, path: &str, key: &str) -> &'v [Value] {
        match m.get(key) {
            None | Some(Value::Null) => &[],
            Some(v) => self.array(v, &key_path(path, key)).unwrap_or(&[]),
        }
    }

    fn list<T>(
        &mut self,
        m: &Map<String, Value>,
        path: &str,
        key: &str,
        mut item: impl FnMut(&mut Self, &Value, &str) -> Option<T>,
    ) -> Vec<T> {
        let base = key_path(path, key);
        let items = self.opt_array(m, path, key);
        items.iter().enumerate().filter_map(|(i, v)| item(self, v, &index_path(&base, i))).collect()
    }

    fn options(&mut self, v: &Value, path: &str) -> Option<Options> {
        let Value::Object(m) = v else {
            self.wrong_type(path, "object", v);
            return None;
        };
        let mut entries = Vec::with_capacity(m.len());
        for (k, text) in m {
            let p = key_path(path, k);
            if k.is_empty() {
                self.error(&p, codes::EMPTY_OPTION_KEY, "option keys must be non-empty");
            }
            if let Some(t) = self.string(text, &p) {
                entries.push((k.clone(), t));
            }
        }
        Some(Options::new(entries))
    }

    fn context(&mut self, v: &Value, path: &str) -> Option<ContextObject> {
        let m = self.object(v, path, CONTEXT_FIELDS)?;
        let type_name = self.req_string(m, path, "type")?;
        let Some(kind) = ContextKind::from_name(&type_name) else {
            self.error(
                &key_path(path, "type"),
                codes::UNKNOWN_CONTEXT_TYPE,
                format!("unknown context type `{type_name}` (expected text, html, image, audio or video)"),
            );
            return None;
        };
        let id = self.opt_string(m, path, "id");
        let label = self.opt_string(m, path, "label");
        let payload = self.req_string(m, path, kind.payload_field())?;
        Some(ContextObject { id, kind, label, payload })
    }

    fn question(&mut self, v: &Value, path: &str) -> Option<McQuestion> {
        let m = self.object(v, path, QUESTION_FIELDS)?;
        if let Some(t) = self.opt_string(m, path, "type") {
            if t != "multiple-choice" {
                self.error(
                    &key_path(path, "type"),
                    codes::UNKNOWN_QUESTION_TYPE,
                    format!("questions must be multiple-choice, found `{t}`"),
                );
            }
        }
        let question_id = self.ident(m, path, "question_id");
        let context = self.list(m, path, "context", Self::context);
        let qpath = key_path(path, "question");
        let (question_text, options) = match self.required(m, path, "question") {
            Some(q) => match self.object(q, &qpath, &["question_text", "options"]) {
                Some(qm) => {
                    let text = self.req_string(qm, &qpath, "question_text");
                    let opts = self.required(qm, &qpath, "options").and_then(|o| self.options(o, &key_path(&qpath, "options")));
                    (text, opts)
                }
                None => (None, None),
            },
            None => (None, None),
        };
        let answer = self.req_string(m, path, "answer");
        let mut explanation = BTreeMap::new();
        if let Some(ev) = m.get("explanation") {
            let epath = key_path(path, "explanation");
            if let Some(opts) = self.options(ev, &epath) {
                explanation.extend(opts.iter().map(|(k, v)| (k.to_string(), v.to_string())));
            }
        }
        Some(McQuestion {
            question_id: question_id?,
            context,
            question_text: question_text?,
            options: options?,
            answer: answer?,
            explanation,
        })
    }

    fn question_list(&mut self, items: &[Value], path: &str) -> QuestionSet {
        let questions = items.iter().enumerate().filter_map(|(i, q)| self.question(q, &index_path(path, i))).collect();
        QuestionSet { questions }
    }

    /// `{"question_set": [...]}` or a bare list of questions.
    fn question_set_doc(&mut self, v: &Value, path: &str) -> Option<QuestionSet> {
        if let Value::Array(items) = v {
            return Some(self.question_list(items, path));
        }
        let m = self.object(v, path, &["question_set"])?;
        let list = self.required(m, path, "question_set")?;
        let lpath = key_path(path, "question_set");
        let items = self.array(list, &lpath)?;
        Some(self.question_list(items, &lpath))
    }

    fn condition(&mut self, v: &Value, path: &str) -> Option<ConditionExpr> {
        let Value::Object(m) = v else {
            self.wrong_type(path, "object", v);
            return None;
        };
        let op = self.req_string(m, path, "op")?;
        match op.as_str() {
            "eq" => {
                self.object(v, path, &["id", "op", "value"]);
                let id = self.ident(m, path, "id");
                let value = self.req_string(m, path, "value");
                Some(ConditionExpr::Eq { id: id?, value: value? })
            }
            "not" => {
                self.object(v, path, &["op", "arg"]);
                let arg = self.required(m, path, "arg")?;
                let inner = self.condition(arg, &key_path(path, "arg"))?;
                Some(ConditionExpr::not(inner))
            }
            "and" | "or" => {
                self.object(v, path, &["op", "args"]);
                let args_v = self.required(m, path, "args")?;
                let apath = key_path(path, "args");
                let items = self.array(args_v, &apath)?;
                if items.is_empty() {
                    self.error(&apath, codes::EMPTY_ARGS, format!("`{op}` needs at least one argument"));
                }
                let mut args = Vec::with_capacity(items.len());
                let mut ok = true;
                for (i, a) in items.iter().enumerate() {
                    match self.condition(a, &index_path(&apath, i)) {
                        Some(c) => args.push(c),
                        None => ok = false,
                    }
                }
                if !ok {
                    return None;
                }
                Some(if op == "and" { ConditionExpr::And(args) } else { ConditionExpr::Or(args) })
            }
            other => {
                self.error(
                    &key_path(path, "op"),
                    codes::UNKNOWN_OP,
                    format!("unknown condition operator `{other}` (expected eq, not, and, or)"),
                );
                None
            }
        }
    }

    fn constraint(&mut self, v: &Value, path: &str) -> Option<ConstraintDef> {
        let m = self.object(v, path, CONSTRAINT_FIELDS)?;
        let description = self.req_string(m, path, "description");
        let scope = match self.opt_string(m, path, "scope") {
            None => ConstraintScope::Annotation,
            Some(s) => match ConstraintScope::from_name(&s) {
                Some(scope) => scope,
                None => {
                    self.error(&key_path(path, "scope"), codes::UNKNOWN_SCOPE, format!("unknown constraint scope `{s}`"));
                    return None;
                }
            },
        };
        let kind = self.req_string(m, path, "type")?;
        let rule = match kind.as_str() {
            "regex" => ConstraintRule::Regex { pattern: self.req_string(m, path, "regex")? },
            "custom" => ConstraintRule::Custom {
                name: self.ident(m, path, "name")?,
                params: m.get("params").cloned().unwrap_or(Value::Null),
            },
            other => {
                self.error(
                    &key_path(path, "type"),
                    codes::UNKNOWN_CONSTRAINT_TYPE,
                    format!("unknown constraint type `{other}` (expected regex or custom)"),
                );
                return None;
            }
        };
        Some(ConstraintDef { description: description?, rule, scope })
    }

    fn annotation(&mut self, v: &Value, path: &str) -> Option<AnnotationDef> {
        let m = self.object(v, path, ANNOTATION_FIELDS)?;
        let id = self.ident(m, path, "id");
        let type_name = self.req_string(m, path, "type")?;
        let Some(kind) = AnnotationKind::from_name(&type_name) else {
            self.error(
                &key_path(path, "type"),
                codes::UNKNOWN_ANNOTATION_TYPE,
                format!(
                    "unknown annotation type `{type_name}` (expected multiple-choice, multi-label, span-from-text, text-input or datetime)"
                ),
            );
            return None;
        };
        let prompt = self.req_string(m, path, "prompt");
        let options = match m.get("options") {
            Some(o) => self.options(o, &key_path(path, "options")),
            None => None,
        };
        let from_context = self.opt_string(m, path, "from_context");
        let optional = self.opt_bool(m, path, "optional").unwrap_or(false);
        let min = self.opt_u32(m, path, "min");
        let max = self.opt_u32(m, path, "max");
        let bounds = if kind == AnnotationKind::SpanFromText {
            Some(match (min, max) {
                (None, None) => Bounds::ONE,
                (Some(min), max) => Bounds { min, max },
                (None, Some(max)) => Bounds { min: 1, max: Some(max) },
            })
        } else {
            if m.contains_key("min") || m.contains_key("max") {
                self.error(
                    path,
                    codes::BOUNDS_NOT_ALLOWED,
                    format!("min/max apply only to span-from-text annotations, not {}", kind.as_str()),
                );
            }
            None
        };
        let conditions = self.list(m, path, "conditions", Self::condition);
        let constraints = self.list(m, path, "constraints", Self::constraint);
        Some(AnnotationDef {
            id: id?,
            kind,
            prompt: prompt?,
            options,
            from_context,
            optional,
            bounds,
            conditions,
            constraints,
        })
    }

    fn group(&mut self, v: &Value, path: &str) -> Option<AnnotationGroupDef> {
        let m = self.object(v, path, GROUP_FIELDS)?;
        let id = self.ident(m, path, "id");
        let title = self.opt_string(m, path, "title").unwrap_or_default();
        let annotations = self.list(m, path, "annotations", Self::annotation);
        let repeated = self.opt_bool(m, path, "repeated").unwrap_or(false);
        let min = self.opt_u32(m, path, "min");
        let max = self.opt_u32(m, path, "max");
        let repetition = if repeated {
            Some(Bounds { min: min.unwrap_or(1), max })
        } else {
            if m.contains_key("min") || m.contains_key("max") {
                self.error(path, codes::BOUNDS_NOT_ALLOWED, "min/max require `\"repeated\": true`");
            }
            None
        };
        Some(AnnotationGroupDef { id: id?, title, annotations, repetition })
    }

    fn task(&mut self, v: &Value, path: &str) -> Option<TaskSpec> {
        let m = self.object(v, path, TASK_FIELDS)?;
        let task_id = self.ident(m, path, "task_id");
        let contexts = self.list(m, path, "contexts", Self::context);
        let annotations = self.list(m, path, "annotations", Self::annotation);
        let annotation_groups = self.list(m, path, "annotation_groups", Self::group);
        Some(TaskSpec { task_id: task_id?, contexts, annotations, annotation_groups })
    }

    fn task_set(&mut self, v: &Value, path: &str) -> Option<TaskSetSpec> {
        let m = self.object(v, path, TASK_SET_FIELDS)?;
        let task_set_id = self.ident(m, path, "task_set_id");
        let shared = self.list(m, path, "shared", Self::context);
        self.required(m, path, "tasks");
        let tasks = self.list(m, path, "tasks", Self::task);
        let redundancy = self.opt_u32(m, path, "redundancy").unwrap_or(1);
        Some(TaskSetSpec { task_set_id: task_set_id?, shared, tasks, redundancy })
    }

    fn exam_config(&mut self, v: &Value, path: &str) -> Option<ExamConfig> {
        let m = self.object(v, path, EXAM_CONFIG_FIELDS)?;
        let sample_size = self.req_u32(m, path, "sample_size");
        let passing_score = match self.required(m, path, "passing_score") {
            Some(Value::Number(n)) => n.as_f64(),
            Some(other) => {
                self.wrong_type(&key_path(path, "passing_score"), "number", other);
                None
            }
            None => None,
        };
        let max_attempts = self.req_u32(m, path, "max_attempts");
        let pass_comparison = match self.opt_string(m, path, "pass_comparison") {
            None => PassComparison::default(),
            Some(s) => match PassComparison::from_name(&s) {
                Some(c) => c,
                None => {
                    self.error(
                        &key_path(path, "pass_comparison"),
                        codes::UNKNOWN_PASS_COMPARISON,
                        format!("unknown pass comparison `{s}` (expected strict-greater or at-least)"),
                    );
                    return None;
                }
            },
        };
        Some(ExamConfig {
            sample_size: sample_size?,
            passing_score: passing_score?,
            max_attempts: max_attempts?,
            pass_comparison,
        })
    }

    fn pipeline(&mut self, v: &Value) -> Option<PipelineSpec> {
        let m = self.object(v, "", PIPELINE_FIELDS)?;
        let name = self.req_string(m, "", "name");
        let version = self.opt_u32(m, "", "version").unwrap_or(1);
        let instruction = self.opt_string(m, "", "instruction").unwrap_or_default();
        let tutorial = m.get("tutorial").and_then(|t| self.question_set_doc(t, "/tutorial"));
        let exam = m.get("exam").and_then(|t| self.question_set_doc(t, "/exam"));
        let exam_config = m.get("exam_config").and_then(|c| self.exam_config(c, "/exam_config"));
        let task_set = m.get("task_set").and_then(|t| self.task_set(t, "/task_set"));
        Some(PipelineSpec { name: name?, version, instruction, tutorial, exam, exam_config, task_set })
    }
}
