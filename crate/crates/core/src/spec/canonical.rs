//! Deterministic document form.
//!
//! Object keys are sorted, defaults are written out, unknown fields are
//! dropped. Lists keep their order, and so do `options` maps since their
//! order is the display order. Output is 2-space indented JSON with LF line
//! endings and a trailing newline.

use alloc::string::String;
use alloc::vec::Vec;
use serde_json::{Map, Value};

use super::*;
use crate::condition::ConditionExpr;

struct Obj(Vec<(&'static str, Value)>);

impl Obj {
    fn new() -> Self {
        Obj(Vec::new())
    }

    fn put(mut self, key: &'static str, v: impl Into<Value>) -> Self {
        self.0.push((key, v.into()));
        self
    }

    fn put_opt(self, key: &'static str, v: Option<impl Into<Value>>) -> Self {
        match v {
            Some(v) => self.put(key, v),
            None => self,
        }
    }

    fn build(mut self) -> Value {
        self.0.sort_by(|a, b| a.0.cmp(b.0));
        let mut m = Map::new();
        for (k, v) in self.0 {
            m.insert(k.into(), v);
        }
        Value::Object(m)
    }
}

fn list<T>(items: &[T], f: impl Fn(&T) -> Value) -> Value {
    Value::Array(items.iter().map(f).collect())
}

fn options(o: &Options) -> Value {
    let mut m = Map::new();
    for (k, v) in o.iter() {
        m.insert(k.into(), v.into());
    }
    Value::Object(m)
}

fn context(c: &ContextObject) -> Value {
    Obj::new()
        .put_opt("id", c.id.clone())
        .put_opt("label", c.label.clone())
        .put("type", c.kind.as_str())
        .put(c.kind.payload_field(), c.payload.clone())
        .build()
}

fn question(q: &McQuestion) -> Value {
    let mut explanation = Map::new();
    for (k, v) in &q.explanation {
        explanation.insert(k.clone(), v.clone().into());
    }
    Obj::new()
        .put("type", "multiple-choice")
        .put("question_id", q.question_id.clone())
        .put("context", list(&q.context, context))
        .put(
            "question",
            Obj::new().put("question_text", q.question_text.clone()).put("options", options(&q.options)).build(),
        )
        .put("answer", q.answer.clone())
        .put("explanation", Value::Object(explanation))
        .build()
}

pub(crate) fn question_set_value(qs: &QuestionSet) -> Value {
    Obj::new().put("question_set", list(&qs.questions, question)).build()
}

pub(crate) fn condition_value(c: &ConditionExpr) -> Value {
    match c {
        ConditionExpr::Eq { id, value } => {
            Obj::new().put("id", id.clone()).put("op", "eq").put("value", value.clone()).build()
        }
        ConditionExpr::Not(arg) => Obj::new().put("op", "not").put("arg", condition_value(arg)).build(),
        ConditionExpr::And(args) => Obj::new().put("op", "and").put("args", list(args, condition_value)).build(),
        ConditionExpr::Or(args) => Obj::new().put("op", "or").put("args", list(args, condition_value)).build(),
    }
}

/// Free-form values (custom constraint params) get recursively sorted keys.
fn sorted_keys(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), sorted_keys(&m[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted_keys).collect()),
        other => other.clone(),
    }
}

fn constraint(c: &ConstraintDef) -> Value {
    let base = Obj::new().put("description", c.description.clone()).put("scope", c.scope.as_str());
    match &c.rule {
        ConstraintRule::Regex { pattern } => base.put("type", "regex").put("regex", pattern.clone()),
        ConstraintRule::Custom { name, params } => {
            base.put("type", "custom").put("name", name.clone()).put("params", sorted_keys(params))
        }
    }
    .build()
}

fn annotation(a: &AnnotationDef) -> Value {
    let mut o = Obj::new()
        .put("id", a.id.clone())
        .put("type", a.kind.as_str())
        .put("prompt", a.prompt.clone())
        .put("optional", a.optional)
        .put("conditions", list(&a.conditions, condition_value))
        .put("constraints", list(&a.constraints, constraint))
        .put_opt("options", a.options.as_ref().map(options))
        .put_opt("from_context", a.from_context.clone());
    if let Some(b) = a.bounds {
        o = o.put("min", b.min).put_opt("max", b.max);
    }
    o.build()
}

fn group(g: &AnnotationGroupDef) -> Value {
    let mut o = Obj::new()
        .put("id", g.id.clone())
        .put("title", g.title.clone())
        .put("annotations", list(&g.annotations, annotation))
        .put("repeated", g.is_repeated());
    if let Some(b) = g.repetition {
        o = o.put("min", b.min).put_opt("max", b.max);
    }
    o.build()
}

fn task(t: &TaskSpec) -> Value {
    Obj::new()
        .put("task_id", t.task_id.clone())
        .put("contexts", list(&t.contexts, context))
        .put("annotations", list(&t.annotations, annotation))
        .put("annotation_groups", list(&t.annotation_groups, group))
        .build()
}

pub(crate) fn task_set_value(ts: &TaskSetSpec) -> Value {
    Obj::new()
        .put("task_set_id", ts.task_set_id.clone())
        .put("shared", list(&ts.shared, context))
        .put("tasks", list(&ts.tasks, task))
        .put("redundancy", ts.redundancy)
        .build()
}

pub(crate) fn exam_config_value(c: &ExamConfig) -> Value {
    Obj::new()
        .put("sample_size", c.sample_size)
        .put("passing_score", c.passing_score)
        .put("max_attempts", c.max_attempts)
        .put("pass_comparison", c.pass_comparison.as_str())
        .build()
}

fn pipeline_value(p: &PipelineSpec) -> Value {
    Obj::new()
        .put("name", p.name.clone())
        .put("version", p.version)
        .put("instruction", p.instruction.clone())
        .put_opt("tutorial", p.tutorial.as_ref().map(question_set_value))
        .put_opt("exam", p.exam.as_ref().map(question_set_value))
        .put_opt("exam_config", p.exam_config.as_ref().map(exam_config_value))
        .put_opt("task_set", p.task_set.as_ref().map(task_set_value))
        .build()
}

fn render(v: &Value) -> String {
    // Serializing a Value cannot fail.
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s
}

pub fn canonicalize(p: &PipelineSpec) -> String {
    render(&pipeline_value(p))
}

pub fn canonicalize_question_set(qs: &QuestionSet) -> String {
    render(&question_set_value(qs))
}

pub fn canonicalize_task_set(ts: &TaskSetSpec) -> String {
    render(&task_set_value(ts))
}

pub fn canonicalize_exam_config(c: &ExamConfig) -> String {
    render(&exam_config_value(c))
}
