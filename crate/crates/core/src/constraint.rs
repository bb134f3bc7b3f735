//! Submission gate: completeness, repetition bounds, regex and custom
//! constraints.
//!
//! A response is submittable only if every check passes. Violations are
//! reported exhaustively in document order, and those raised by regex or
//! custom constraints carry the constraint's `description` verbatim.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use regex_automata::meta::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::condition::{enabled_keys, enabled_set, settle};
use crate::datetime::is_iso8601;
use crate::response::{AnswerKey, AnswerValue, ResponseState};
use crate::spec::{
    AnnotationDef, AnnotationGroupDef, AnnotationKind, Bounds, ConstraintDef, ConstraintRule, ConstraintScope,
    ContextKind, Placement, TaskSpec,
};

/// Completeness message shown for unanswered required annotations.
pub const REQUIRED_MESSAGE: &str = "This annotation is required.";

/// A compiled constraint pattern. Patterns are implicitly anchored at both
/// ends, and only constructs with linear-time matching compile (no
/// backreferences or lookaround).
#[derive(Clone)]
pub struct Pattern {
    source: String,
    regex: Regex,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid regex `{pattern}`: {reason}")]
pub struct PatternError {
    pub pattern: String,
    pub reason: String,
}

impl Pattern {
    pub fn compile(source: &str) -> Result<Self, PatternError> {
        // Compile the user's pattern alone first so errors point at it, then
        // the anchored wrapper used for full-match semantics.
        let err = |e: regex_automata::meta::BuildError| PatternError { pattern: source.into(), reason: e.to_string() };
        Regex::new(source).map_err(err)?;
        let regex = Regex::new(&format!("^(?:{source})$")).map_err(err)?;
        Ok(Pattern { source: source.into(), regex })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn full_match(&self, value: &str) -> bool {
        self.regex.is_match(value)
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Pattern").field(&self.source).finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "scope", content = "id", rename_all = "lowercase")]
pub enum Target {
    Annotation(String),
    Group(String),
    Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Completeness,
    Repetition,
    Regex,
    Custom,
    /// The value does not fit the annotation (wrong shape, unknown option,
    /// span outside its context, unparseable datetime).
    InvalidValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub target: Target,
    pub instance: u32,
    pub kind: ViolationKind,
    pub description: String,
    /// Extra text from a custom predicate; never replaces `description`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Violation {
    fn on_annotation(id: &str, instance: u32, kind: ViolationKind, description: impl Into<String>) -> Self {
        Violation { target: Target::Annotation(id.into()), instance, kind, description: description.into(), detail: None }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            Target::Annotation(id) => write!(f, "{id}[{}]: {}", self.instance, self.description),
            Target::Group(id) => write!(f, "group {id}: {}", self.description),
            Target::Task => write!(f, "task: {}", self.description),
        }
    }
}

/// Full-match check of `value` against a regex constraint.
pub fn check_regex(c: &ConstraintDef, value: &str) -> Result<(), Violation> {
    let ConstraintRule::Regex { pattern } = &c.rule else {
        return Ok(());
    };
    // Patterns are checked at validation time; an uncompilable one rejects.
    let ok = Pattern::compile(pattern).map(|p| p.full_match(value)).unwrap_or(false);
    if ok {
        Ok(())
    } else {
        Err(Violation {
            target: Target::Task,
            instance: 0,
            kind: ViolationKind::Regex,
            description: c.description.clone(),
            detail: None,
        })
    }
}

/// What a repetition bound applies to.
#[derive(Debug, Clone, Copy)]
pub enum Repeatable<'a> {
    Group(&'a AnnotationGroupDef),
    Span(&'a AnnotationDef, u32),
}

fn bounds_message(b: Bounds, noun: &str) -> String {
    match b.max {
        Some(max) if max == b.min => format!("Provide exactly {} {noun}.", b.min),
        Some(max) => format!("Provide between {} and {max} {noun}.", b.min),
        None => format!("Provide at least {} {noun}.", b.min),
    }
}

pub fn check_repetition(def: Repeatable<'_>, count: u32) -> Result<(), Violation> {
    match def {
        Repeatable::Group(g) => {
            let Some(b) = g.repetition else {
                return Ok(());
            };
            if b.contains(count) {
                return Ok(());
            }
            Err(Violation {
                target: Target::Group(g.id.clone()),
                instance: 0,
                kind: ViolationKind::Repetition,
                description: bounds_message(b, "responses in this group"),
                detail: None,
            })
        }
        Repeatable::Span(a, instance) => {
            let b = a.bounds.unwrap_or(Bounds::ONE);
            if b.contains(count) {
                return Ok(());
            }
            Err(Violation::on_annotation(&a.id, instance, ViolationKind::Repetition, bounds_message(b, "selections")))
        }
    }
}

/// One violation per enabled, non-optional, unanswered instance.
pub fn check_completeness(task: &TaskSpec, state: &ResponseState, enabled: &[AnswerKey]) -> Vec<Violation> {
    enabled
        .iter()
        .filter(|k| !state.is_answered(k))
        .filter_map(|k| {
            let (_, a) = task.find_annotation(&k.id)?;
            if a.optional || (a.kind == AnnotationKind::SpanFromText && a.bounds.is_some_and(|b| b.min == 0)) {
                return None;
            }
            Some(Violation::on_annotation(&k.id, k.instance, ViolationKind::Completeness, REQUIRED_MESSAGE))
        })
        .collect()
}

/// Inputs handed to a custom predicate.
pub struct CustomContext<'a> {
    pub task: &'a TaskSpec,
    /// Settled response.
    pub state: &'a ResponseState,
    pub params: &'a Value,
    /// Annotation the constraint is attached to.
    pub annotation: &'a str,
    /// Group instance for annotation/group scope inside a group; `None` at
    /// task scope or for top-level annotations.
    pub instance: Option<u32>,
    pub scope: ConstraintScope,
}

pub type Predicate = dyn Fn(&CustomContext<'_>) -> Result<(), String> + Send + Sync;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("custom constraint `{0}` is already registered")]
    Duplicate(String),
}

/// Proof of registration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub name: String,
}

/// Named custom predicates. Filled at startup, then shared read-only.
#[derive(Default)]
pub struct Registry {
    predicates: BTreeMap<String, Box<Predicate>>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.predicates.keys()).finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with [`builtin`] predicates.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register(builtin::NO_DUPLICATE_QUESTION, builtin::no_duplicate_values).expect("fresh registry");
        r.register(builtin::AT_LEAST_ONE_ANSWERED, builtin::at_least_one_answered).expect("fresh registry");
        r.register(builtin::SPANS_SUBSET_OF, builtin::spans_subset_of).expect("fresh registry");
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        predicate: impl Fn(&CustomContext<'_>) -> Result<(), String> + Send + Sync + 'static,
    ) -> Result<Registration, RegistryError> {
        if self.predicates.contains_key(name) {
            return Err(RegistryError::Duplicate(name.into()));
        }
        self.predicates.insert(name.into(), Box::new(predicate));
        Ok(Registration { name: name.into() })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.predicates.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Predicate> {
        self.predicates.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.predicates.keys().map(String::as_str)
    }
}

/// Predicates shipped with the engine.
pub mod builtin {
    use super::*;
    use alloc::collections::BTreeSet;

    pub const NO_DUPLICATE_QUESTION: &str = "no-duplicate-question";
    pub const AT_LEAST_ONE_ANSWERED: &str = "at-least-one-answered";
    pub const SPANS_SUBSET_OF: &str = "spans-subset-of";

    /// All text answers of the annotation named by `params.field` (default:
    /// the annotation carrying the constraint) are pairwise distinct across
    /// the task. Comparison is exact on the submitted strings.
    pub fn no_duplicate_values(ctx: &CustomContext<'_>) -> Result<(), String> {
        let field = ctx.params.get("field").and_then(Value::as_str).unwrap_or(ctx.annotation);
        let mut seen = BTreeSet::new();
        for (key, value) in ctx.state.values() {
            if key.id != field {
                continue;
            }
            if let AnswerValue::Text(t) = value {
                if !t.is_empty() && !seen.insert(t.as_str()) {
                    return Err(format!("`{t}` was written more than once"));
                }
            }
        }
        Ok(())
    }

    /// At least one of `params.fields` is answered in the same instance.
    pub fn at_least_one_answered(ctx: &CustomContext<'_>) -> Result<(), String> {
        let instance = ctx.instance.unwrap_or(0);
        let fields: Vec<&str> = ctx
            .params
            .get("fields")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default();
        if fields.iter().any(|f| ctx.state.is_answered(&AnswerKey::new(*f, instance))) {
            Ok(())
        } else {
            Err(format!("none of {} is answered", fields.join(", ")))
        }
    }

    /// Every span selected for this annotation instance is also among the
    /// spans selected for the top-level annotation `params.field`.
    pub fn spans_subset_of(ctx: &CustomContext<'_>) -> Result<(), String> {
        let Some(field) = ctx.params.get("field").and_then(Value::as_str) else {
            return Err("params.field is missing".into());
        };
        let allowed: Vec<(u32, u32)> = match ctx.state.value(field, 0) {
            Some(AnswerValue::Spans(s)) => s.iter().map(|s| (s.start, s.end)).collect(),
            _ => Vec::new(),
        };
        let own = ctx.state.value(ctx.annotation, ctx.instance.unwrap_or(0));
        if let Some(AnswerValue::Spans(spans)) = own {
            if let Some(s) = spans.iter().find(|s| !allowed.contains(&(s.start, s.end))) {
                return Err(format!("`{}` was not selected in `{field}`", s.text));
            }
        }
        Ok(())
    }
}

fn value_problem(task: &TaskSpec, shared: &[crate::spec::ContextObject], a: &AnnotationDef, v: &AnswerValue) -> Option<String> {
    let opts = a.options.as_ref();
    match (a.kind, v) {
        (AnnotationKind::MultipleChoice, AnswerValue::Choice(c)) => {
            (!opts.is_some_and(|o| o.contains_key(c))).then(|| format!("`{c}` is not an option."))
        }
        (AnnotationKind::MultiLabel, AnswerValue::Labels(ls)) => {
            ls.iter().find(|l| !opts.is_some_and(|o| o.contains_key(l))).map(|l| format!("`{l}` is not an option."))
        }
        (AnnotationKind::SpanFromText, AnswerValue::Spans(spans)) => {
            let source = a
                .from_context
                .as_deref()
                .and_then(|id| task.find_context(id, shared))
                .filter(|c| c.kind == ContextKind::Text)
                .map(|c| c.payload.as_str())?;
            spans
                .iter()
                .find(|s| crate::response::SpanSelection::from_source(source, s.start, s.end).as_ref() != Some(*s))
                .map(|s| format!("Selection {}..{} does not match the text.", s.start, s.end))
        }
        (AnnotationKind::TextInput, AnswerValue::Text(_)) => None,
        (AnnotationKind::Datetime, AnswerValue::Datetime(d)) => {
            (!is_iso8601(d)).then(|| format!("`{d}` is not an ISO-8601 date or date-time."))
        }
        (kind, _) => Some(format!("Expected a {} answer.", kind.as_str())),
    }
}

/// Decides whether `state` may be submitted for `task`. The state is
/// settled first, so answers to disabled annotations never count.
pub fn validate_submission(task: &TaskSpec, state: &ResponseState, registry: &Registry) -> Result<(), Vec<Violation>> {
    validate_submission_with(task, &[], state, registry)
}

/// As [`validate_submission`], resolving span sources against task contexts
/// and the task set's shared contexts.
pub fn validate_submission_with(
    task: &TaskSpec,
    shared: &[crate::spec::ContextObject],
    state: &ResponseState,
    registry: &Registry,
) -> Result<(), Vec<Violation>> {
    let (state, _) = settle(task, state);
    let enabled = enabled_keys(task, &state);
    let enabled_lookup = enabled_set(task, &state);
    let mut missing: BTreeMap<&AnswerKey, Violation> =
        check_completeness(task, &state, &enabled).into_iter().map(|v| (enabled_key(&enabled, &v), v)).collect();

    let mut out = Vec::new();
    let mut task_level = Vec::new();

    let mut visit = |a: &AnnotationDef, instance: u32, group_instance: Option<u32>, out: &mut Vec<Violation>| {
        let key = AnswerKey::new(a.id.clone(), instance);
        if !enabled_lookup.contains(&key) {
            return;
        }
        if let Some(v) = missing.remove(&key) {
            out.push(v);
        }
        let value = state.get(&key).filter(|v| v.is_answered());
        if let Some(value) = value {
            if let Some(problem) = value_problem(task, shared, a, value) {
                out.push(Violation::on_annotation(&a.id, instance, ViolationKind::InvalidValue, problem));
            } else {
                if let AnswerValue::Spans(spans) = value {
                    if let Err(v) = check_repetition(Repeatable::Span(a, instance), spans.len() as u32) {
                        out.push(v);
                    }
                }
                for c in &a.constraints {
                    if let ConstraintRule::Regex { .. } = c.rule {
                        if value.text_values().into_iter().any(|t| check_regex(c, t).is_err()) {
                            out.push(Violation::on_annotation(&a.id, instance, ViolationKind::Regex, c.description.clone()));
                        }
                    }
                }
            }
        }
        for c in &a.constraints {
            let ConstraintRule::Custom { name, params } = &c.rule else {
                continue;
            };
            if c.scope == ConstraintScope::Task {
                continue;
            }
            let ctx = CustomContext {
                task,
                state: &state,
                params,
                annotation: &a.id,
                instance: group_instance,
                scope: c.scope,
            };
            if let Err(detail) = run_custom(registry, name, &ctx) {
                let target = match (c.scope, group_instance) {
                    (ConstraintScope::Group, Some(_)) => group_of(task, &a.id).map(|g| Target::Group(g.into())),
                    _ => None,
                }
                .unwrap_or_else(|| Target::Annotation(a.id.clone()));
                out.push(Violation { target, instance, kind: ViolationKind::Custom, description: c.description.clone(), detail: Some(detail) });
            }
        }
    };

    for a in &task.annotations {
        visit(a, 0, None, &mut out);
    }
    for group in &task.annotation_groups {
        let count = state.group_count(group);
        if let Err(v) = check_repetition(Repeatable::Group(group), count) {
            out.push(v);
        }
        for instance in 0..count {
            for a in &group.annotations {
                visit(a, instance, Some(instance), &mut out);
            }
        }
    }

    // Task-scoped custom constraints run once, if their annotation has any
    // enabled instance.
    for (placement, a) in task.all_annotations() {
        for c in &a.constraints {
            let ConstraintRule::Custom { name, params } = &c.rule else {
                continue;
            };
            if c.scope != ConstraintScope::Task || !enabled.iter().any(|k| k.id == a.id) {
                continue;
            }
            let _ = placement;
            let ctx = CustomContext { task, state: &state, params, annotation: &a.id, instance: None, scope: c.scope };
            if let Err(detail) = run_custom(registry, name, &ctx) {
                task_level.push(Violation {
                    target: Target::Task,
                    instance: 0,
                    kind: ViolationKind::Custom,
                    description: c.description.clone(),
                    detail: Some(detail),
                });
            }
        }
    }
    out.extend(task_level);

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn enabled_key<'k>(enabled: &'k [AnswerKey], v: &Violation) -> &'k AnswerKey {
    let Target::Annotation(id) = &v.target else { unreachable!("completeness targets annotations") };
    enabled.iter().find(|k| &k.id == id && k.instance == v.instance).expect("violation comes from an enabled key")
}

fn group_of<'t>(task: &'t TaskSpec, annotation: &str) -> Option<&'t str> {
    match task.find_annotation(annotation)? {
        (Placement::Group { group, .. }, _) => Some(task.annotation_groups[group].id.as_str()),
        _ => None,
    }
}

fn run_custom(registry: &Registry, name: &str, ctx: &CustomContext<'_>) -> Result<(), String> {
    match registry.get(name) {
        Some(p) => p(ctx),
        None => Err(format!("custom constraint `{name}` is not registered")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::ConditionExpr;
    use crate::response::SpanSelection;
    use crate::spec::{ContextObject, Options};

    const START: &str = "The quantity should only start with digits or letters.";
    const LENGTH: &str = "The length of your selection should be within 1 and 30.";
    const SNIPPET: &str =
        "As of Tuesday, 144 of the state's then-294 deaths involved nursing homes or longterm care facilities.";

    fn covid_task() -> TaskSpec {
        let mut quantity = AnnotationDef::new("quantity", AnnotationKind::SpanFromText, "Select one quantity from below.");
        quantity.from_context = Some("snippet".into());
        quantity.constraints = vec![ConstraintDef::regex(START, r"^[\w\d].*$"), ConstraintDef::regex(LENGTH, r"^.{1,30}$")];
        let mut relevance = AnnotationDef::new("relevance", AnnotationKind::MultipleChoice, "Is this quantity related to COVID-19?");
        relevance.options = Some(Options::new(vec![("A".into(), "Relevant".into()), ("B".into(), "Not relevant".into())]));
        let mut typing = AnnotationDef::new("typing", AnnotationKind::MultipleChoice, "What type is it?");
        typing.options = Some(Options::new(vec![("A".into(), "Deaths".into()), ("B".into(), "Cases".into())]));
        typing.conditions.push(ConditionExpr::eq("relevance", "A"));
        TaskSpec {
            task_id: "t1".into(),
            contexts: vec![ContextObject { id: Some("snippet".into()), kind: ContextKind::Text, label: None, payload: SNIPPET.into() }],
            annotation_groups: vec![AnnotationGroupDef {
                id: "quantity_extraction_typing".into(),
                title: "COVID-19 Quantities".into(),
                annotations: vec![quantity, relevance, typing],
                repetition: Some(Bounds { min: 1, max: Some(3) }),
            }],
            ..Default::default()
        }
    }

    fn span(start: u32, end: u32) -> AnswerValue {
        AnswerValue::Spans(vec![SpanSelection::from_source(SNIPPET, start, end).unwrap()])
    }

    #[test]
    fn leading_space_regex_message() {
        let c = ConstraintDef::regex(START, r"^[\w\d].*$");
        assert_eq!(check_regex(&c, " 294").unwrap_err().description, START);
        assert!(check_regex(&c, "294").is_ok());
    }

    #[test]
    fn length_regex_boundaries() {
        let c = ConstraintDef::regex(LENGTH, r"^.{1,30}$");
        let v31: String = core::iter::repeat_n('x', 31).collect();
        assert_eq!(check_regex(&c, &v31).unwrap_err().description, LENGTH);
        assert!(check_regex(&c, "294").is_ok());
        assert!(check_regex(&c, "").is_err());
    }

    #[test]
    fn unanchored_patterns_must_match_whole_value() {
        let c = ConstraintDef::regex("digits", r"[0-9]+");
        assert!(check_regex(&c, "294").is_ok());
        assert!(check_regex(&c, "294 deaths").is_err());
        let alt = ConstraintDef::regex("alt", "a|bc");
        assert!(check_regex(&alt, "bc").is_ok());
        assert!(check_regex(&alt, "abc").is_err());
    }

    #[test]
    fn dialect_rejects_backtracking_constructs() {
        assert!(Pattern::compile(r"(a)\1").is_err());
        assert!(Pattern::compile(r"a(?=b)").is_err());
        assert!(Pattern::compile("[").is_err());
        assert!(Pattern::compile(r"^(a|b)*c{2,5}$").is_ok());
    }

    #[test]
    fn repetition_bounds() {
        let task = covid_task();
        let g = Repeatable::Group(&task.annotation_groups[0]);
        assert!(check_repetition(g, 2).is_ok());
        assert_eq!(check_repetition(g, 0).unwrap_err().kind, ViolationKind::Repetition);
        assert!(check_repetition(g, 4).is_err());
        let drop = AnnotationGroupDef { id: "qa".into(), title: String::new(), annotations: vec![], repetition: Some(Bounds { min: 12, max: None }) };
        assert!(check_repetition(Repeatable::Group(&drop), 11).is_err());
        assert!(check_repetition(Repeatable::Group(&drop), 500).is_ok());
    }

    #[test]
    fn completeness_respects_conditions_and_optional() {
        let task = covid_task();
        let mut s = ResponseState::new();
        s.set_group_count("quantity_extraction_typing", 1).set("quantity", 0, span(39, 42)).set("relevance", 0, AnswerValue::Choice("A".into()));
        let v = validate_submission(&task, &s, &Registry::new()).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].target, Target::Annotation("typing".into()));
        assert_eq!(v[0].kind, ViolationKind::Completeness);
        s.set("relevance", 0, AnswerValue::Choice("B".into()));
        assert!(validate_submission(&task, &s, &Registry::new()).is_ok());

        let mut opt = AnnotationDef::new("note", AnnotationKind::TextInput, "Anything else?");
        opt.optional = true;
        let t2 = TaskSpec { annotations: vec![opt], ..Default::default() };
        assert!(validate_submission(&t2, &ResponseState::new(), &Registry::new()).is_ok());
    }

    #[test]
    fn full_fixture_accepts() {
        let task = covid_task();
        let mut s = ResponseState::new();
        s.set_group_count("quantity_extraction_typing", 1)
            .set("quantity", 0, span(39, 42))
            .set("relevance", 0, AnswerValue::Choice("A".into()))
            .set("typing", 0, AnswerValue::Choice("A".into()));
        assert_eq!(validate_submission(&task, &s, &Registry::new()), Ok(()));
    }

    #[test]
    fn leading_space_selection_rejected_with_exact_message() {
        let task = covid_task();
        let mut s = ResponseState::new();
        // " 294" starts one char before the number.
        s.set_group_count("quantity_extraction_typing", 1).set("quantity", 0, span(38, 42)).set("relevance", 0, AnswerValue::Choice("B".into()));
        let v = validate_submission(&task, &s, &Registry::new()).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].description, START);
    }

    #[test]
    fn zero_instances_violates_group_min() {
        let task = covid_task();
        let v = validate_submission(&task, &ResponseState::new(), &Registry::new()).unwrap_err();
        assert_eq!(v, vec![Violation {
            target: Target::Group("quantity_extraction_typing".into()),
            instance: 0,
            kind: ViolationKind::Repetition,
            description: "Provide between 1 and 3 responses in this group.".into(),
            detail: None,
        }]);
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut r = Registry::new();
        r.register("x", |_| Ok(())).unwrap();
        assert_eq!(r.register("x", |_| Ok(())), Err(RegistryError::Duplicate("x".into())));
        assert!(Registry::with_builtins().contains(builtin::NO_DUPLICATE_QUESTION));
    }

    #[test]
    fn wrong_value_shape_is_reported() {
        let task = covid_task();
        let mut s = ResponseState::new();
        s.set_group_count("quantity_extraction_typing", 1)
            .set("quantity", 0, AnswerValue::Text("294".into()))
            .set("relevance", 0, AnswerValue::Choice("Z".into()));
        let v = validate_submission(&task, &s, &Registry::new()).unwrap_err();
        assert_eq!(v.iter().filter(|v| v.kind == ViolationKind::InvalidValue).count(), 2);
    }
}
