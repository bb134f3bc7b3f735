//! Cross-reference and invariant checks over typed specs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::diag::codes;
use super::parse::{index_path, key_path};
use super::*;
use crate::constraint::{Pattern, Registry};

/// Checks every task-set invariant. Paths are relative to the task-set
/// document root. An empty result means conditions and constraints on this
/// spec can resolve every id they mention.
pub fn validate_semantics(spec: &TaskSetSpec, registry: &Registry) -> Vec<Diagnostic> {
    validate_task_set_at(spec, registry, "")
}

pub fn validate_pipeline(p: &PipelineSpec, registry: &Registry) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if !is_valid_name(&p.name) {
        out.push(Diagnostic::error(
            "/name",
            codes::INVALID_NAME,
            format!("pipeline name `{}` must match [A-Za-z0-9_-]{{1,64}}", p.name),
        ));
    }
    if let Some(t) = &p.tutorial {
        out.extend(validate_question_set(t, "/tutorial/question_set"));
    }
    if let Some(e) = &p.exam {
        out.extend(validate_question_set(e, "/exam/question_set"));
        if p.exam_config.is_none() {
            out.push(Diagnostic::error("/exam_config", codes::EXAM_CONFIG_MISSING, "an exam requires exam_config"));
        }
    }
    if let Some(cfg) = &p.exam_config {
        out.extend(validate_exam_config(cfg, p.exam.as_ref().map(QuestionSet::len), "/exam_config"));
    }
    if let Some(ts) = &p.task_set {
        out.extend(validate_task_set_at(ts, registry, "/task_set"));
    }
    out
}

pub fn validate_question_set(qs: &QuestionSet, path: &str) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if qs.questions.is_empty() {
        out.push(Diagnostic::error(path, codes::EMPTY_QUESTION_SET, "a question set needs at least one question"));
    }
    let mut seen = BTreeSet::new();
    for (i, q) in qs.questions.iter().enumerate() {
        let qp = index_path(path, i);
        if !seen.insert(q.question_id.as_str()) {
            out.push(Diagnostic::error(
                key_path(&qp, "question_id"),
                codes::DUPLICATE_ID,
                format!("duplicate question_id `{}`", q.question_id),
            ));
        }
        let opath = key_path(&key_path(&qp, "question"), "options");
        if q.options.len() < 2 {
            out.push(Diagnostic::error(&opath, codes::TOO_FEW_OPTIONS, "a question needs at least two options"));
        }
        if !q.options.contains_key(&q.answer) {
            out.push(Diagnostic::error(
                key_path(&qp, "answer"),
                codes::ANSWER_NOT_IN_OPTIONS,
                format!("answer `{}` is not one of the options", q.answer),
            ));
        }
        for key in q.explanation.keys() {
            if !q.options.contains_key(key) {
                out.push(Diagnostic::error(
                    key_path(&key_path(&qp, "explanation"), key),
                    codes::EXPLANATION_KEY_UNKNOWN,
                    format!("explanation for `{key}` does not match any option"),
                ));
            }
        }
    }
    out
}

pub fn validate_exam_config(cfg: &ExamConfig, pool: Option<usize>, path: &str) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if cfg.sample_size == 0 {
        out.push(Diagnostic::error(key_path(path, "sample_size"), codes::EXAM_CONFIG_INVALID, "sample_size must be positive"));
    }
    if let Some(pool) = pool {
        if cfg.sample_size as usize > pool {
            out.push(Diagnostic::error(
                key_path(path, "sample_size"),
                codes::SAMPLE_EXCEEDS_POOL,
                format!("sample_size {} exceeds the {pool} exam questions", cfg.sample_size),
            ));
        }
    }
    if !(0.0..=1.0).contains(&cfg.passing_score) {
        out.push(Diagnostic::error(
            key_path(path, "passing_score"),
            codes::EXAM_CONFIG_INVALID,
            "passing_score must be a fraction in [0, 1]",
        ));
    }
    if cfg.max_attempts == 0 {
        out.push(Diagnostic::error(key_path(path, "max_attempts"), codes::EXAM_CONFIG_INVALID, "max_attempts must be positive"));
    }
    out
}

pub(crate) fn validate_task_set_at(spec: &TaskSetSpec, registry: &Registry, path: &str) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if spec.redundancy == 0 {
        out.push(Diagnostic::error(key_path(path, "redundancy"), codes::REDUNDANCY_INVALID, "redundancy must be at least 1"));
    }
    if spec.tasks.is_empty() {
        out.push(Diagnostic::error(key_path(path, "tasks"), codes::EMPTY_TASK_SET, "a task set needs at least one task"));
    }
    let spath = key_path(path, "shared");
    let mut shared_ids = BTreeSet::new();
    for (i, c) in spec.shared.iter().enumerate() {
        check_context_id(c, &index_path(&spath, i), &mut shared_ids, &mut out);
    }
    let tpath = key_path(path, "tasks");
    let mut task_ids = BTreeSet::new();
    for (i, task) in spec.tasks.iter().enumerate() {
        let p = index_path(&tpath, i);
        if !task_ids.insert(task.task_id.as_str()) {
            out.push(Diagnostic::error(
                key_path(&p, "task_id"),
                codes::DUPLICATE_ID,
                format!("duplicate task_id `{}`", task.task_id),
            ));
        }
        validate_task(task, &spec.shared, &shared_ids, registry, &p, &mut out);
    }
    out
}

fn check_context_id<'a>(c: &'a ContextObject, path: &str, seen: &mut BTreeSet<&'a str>, out: &mut Vec<Diagnostic>) {
    match c.id.as_deref() {
        None => out.push(Diagnostic::error(key_path(path, "id"), codes::MISSING_FIELD, "task contexts need an `id`")),
        Some(id) if !seen.insert(id) => {
            out.push(Diagnostic::error(key_path(path, "id"), codes::DUPLICATE_ID, format!("duplicate context id `{id}`")))
        }
        Some(_) => {}
    }
}

/// Path of an annotation inside its task document.
fn annotation_path(task_path: &str, placement: Placement) -> String {
    match placement {
        Placement::Top(i) => index_path(&key_path(task_path, "annotations"), i),
        Placement::Group { group, index } => {
            let g = index_path(&key_path(task_path, "annotation_groups"), group);
            index_path(&key_path(&g, "annotations"), index)
        }
    }
}

fn validate_task(
    task: &TaskSpec,
    shared: &[ContextObject],
    shared_ids: &BTreeSet<&str>,
    registry: &Registry,
    path: &str,
    out: &mut Vec<Diagnostic>,
) {
    let cpath = key_path(path, "contexts");
    let mut ctx_ids = shared_ids.clone();
    for (i, c) in task.contexts.iter().enumerate() {
        check_context_id(c, &index_path(&cpath, i), &mut ctx_ids, out);
    }

    let mut ids = BTreeSet::new();
    for (placement, a) in task.all_annotations() {
        if !ids.insert(a.id.as_str()) {
            out.push(Diagnostic::error(
                key_path(&annotation_path(path, placement), "id"),
                codes::DUPLICATE_ID,
                format!("duplicate annotation id `{}`", a.id),
            ));
        }
    }
    let gpath = key_path(path, "annotation_groups");
    for (g, group) in task.annotation_groups.iter().enumerate() {
        let p = index_path(&gpath, g);
        if !ids.insert(group.id.as_str()) {
            out.push(Diagnostic::error(key_path(&p, "id"), codes::DUPLICATE_ID, format!("duplicate group id `{}`", group.id)));
        }
        if let Some(b) = group.repetition {
            if b.min == 0 {
                out.push(Diagnostic::error(key_path(&p, "min"), codes::BOUNDS_INVALID, "repeated groups need min >= 1"));
            }
            if let Some(max) = b.max {
                if b.min > max {
                    out.push(Diagnostic::error(
                        &p,
                        codes::BOUNDS_INVERTED,
                        format!("min {} is greater than max {max}", b.min),
                    ));
                }
            }
        }
    }

    for (placement, a) in task.all_annotations() {
        let ap = annotation_path(path, placement);
        validate_annotation(task, shared, placement, a, registry, &ap, out);
    }

    check_cycles(task, path, out);
}

fn validate_annotation(
    task: &TaskSpec,
    shared: &[ContextObject],
    placement: Placement,
    a: &AnnotationDef,
    registry: &Registry,
    path: &str,
    out: &mut Vec<Diagnostic>,
) {
    match (&a.options, a.kind.has_options()) {
        (None, true) => out.push(Diagnostic::error(
            key_path(path, "options"),
            codes::OPTIONS_MISSING,
            format!("{} annotations need options", a.kind.as_str()),
        )),
        (Some(_), false) => out.push(Diagnostic::error(
            key_path(path, "options"),
            codes::OPTIONS_NOT_ALLOWED,
            format!("{} annotations take no options", a.kind.as_str()),
        )),
        (Some(o), true) if o.is_empty() => {
            out.push(Diagnostic::error(key_path(path, "options"), codes::TOO_FEW_OPTIONS, "options must not be empty"))
        }
        _ => {}
    }
    match (&a.from_context, a.kind == AnnotationKind::SpanFromText) {
        (None, true) => out.push(Diagnostic::error(
            key_path(path, "from_context"),
            codes::FROM_CONTEXT_MISSING,
            "span-from-text annotations need `from_context`",
        )),
        (Some(_), false) => out.push(Diagnostic::error(
            key_path(path, "from_context"),
            codes::FROM_CONTEXT_NOT_ALLOWED,
            format!("{} annotations take no `from_context`", a.kind.as_str()),
        )),
        (Some(ctx), true) => match task.find_context(ctx, shared) {
            None => out.push(Diagnostic::error(
                key_path(path, "from_context"),
                codes::DANGLING_CONTEXT_REF,
                format!("no context with id `{ctx}`"),
            )),
            Some(c) if c.kind != ContextKind::Text => out.push(Diagnostic::error(
                key_path(path, "from_context"),
                codes::FROM_CONTEXT_NOT_TEXT,
                format!("spans can only be selected from text contexts; `{ctx}` is {}", c.kind.as_str()),
            )),
            Some(_) => {}
        },
        (None, false) => {}
    }
    if let Some(Bounds { min, max: Some(max) }) = a.bounds {
        if min > max {
            out.push(Diagnostic::error(path, codes::BOUNDS_INVERTED, format!("min {min} is greater than max {max}")));
        }
    }

    let condp = key_path(path, "conditions");
    let group = match placement {
        Placement::Group { group, .. } => Some(&task.annotation_groups[group]),
        Placement::Top(_) => None,
    };
    for (i, c) in a.conditions.iter().enumerate() {
        check_condition(task, group, c, &index_path(&condp, i), out);
    }

    let conp = key_path(path, "constraints");
    for (i, c) in a.constraints.iter().enumerate() {
        let p = index_path(&conp, i);
        if c.description.trim().is_empty() {
            out.push(Diagnostic::error(key_path(&p, "description"), codes::DESCRIPTION_EMPTY, "constraints need a description"));
        }
        if c.scope == ConstraintScope::Group && group.is_none() {
            out.push(Diagnostic::error(
                key_path(&p, "scope"),
                codes::SCOPE_INVALID,
                "group-scoped constraints must sit on an annotation inside a group",
            ));
        }
        match &c.rule {
            ConstraintRule::Regex { pattern } => {
                if !a.kind.is_text_valued() {
                    out.push(Diagnostic::error(
                        key_path(&p, "type"),
                        codes::REGEX_ON_NON_TEXT,
                        format!("regex constraints apply to text-valued annotations, not {}", a.kind.as_str()),
                    ));
                }
                if let Err(e) = Pattern::compile(pattern) {
                    out.push(Diagnostic::error(key_path(&p, "regex"), codes::REGEX_INVALID, format!("{e}")));
                }
            }
            ConstraintRule::Custom { name, .. } => {
                if !registry.contains(name) {
                    out.push(Diagnostic::error(
                        key_path(&p, "name"),
                        codes::UNKNOWN_CUSTOM_CONSTRAINT,
                        format!("no custom constraint named `{name}` is registered"),
                    ));
                }
            }
        }
    }
}

fn check_condition(task: &TaskSpec, group: Option<&AnnotationGroupDef>, c: &ConditionExpr, path: &str, out: &mut Vec<Diagnostic>) {
    match c {
        ConditionExpr::Eq { id, value } => {
            let target = task.find_annotation(id).filter(|(pl, _)| match pl {
                Placement::Top(_) => true,
                Placement::Group { group: g, .. } => group.is_some_and(|own| own.id == task.annotation_groups[*g].id),
            });
            match target {
                None => out.push(Diagnostic::error(
                    key_path(path, "id"),
                    codes::DANGLING_CONDITION_REF,
                    format!("condition references `{id}`, which is not an annotation in scope"),
                )),
                Some((_, a)) if a.kind != AnnotationKind::MultipleChoice => out.push(Diagnostic::error(
                    key_path(path, "id"),
                    codes::CONDITION_TARGET_NOT_CHOICE,
                    format!("conditions can only test multiple-choice annotations; `{id}` is {}", a.kind.as_str()),
                )),
                Some((_, a)) => {
                    if a.options.as_ref().is_some_and(|o| !o.contains_key(value)) {
                        out.push(Diagnostic::error(
                            key_path(path, "value"),
                            codes::CONDITION_VALUE_UNKNOWN,
                            format!("`{value}` is not an option of `{id}`"),
                        ));
                    }
                }
            }
        }
        ConditionExpr::Not(arg) => check_condition(task, group, arg, &key_path(path, "arg"), out),
        ConditionExpr::And(args) | ConditionExpr::Or(args) => {
            let ap = key_path(path, "args");
            if args.is_empty() {
                out.push(Diagnostic::error(&ap, codes::EMPTY_ARGS, "and/or need at least one argument"));
            }
            for (i, a) in args.iter().enumerate() {
                check_condition(task, group, a, &index_path(&ap, i), out);
            }
        }
    }
}

/// Reports each cycle of the "is conditioned on" digraph once, at the
/// first annotation (document order) that lies on it.
fn check_cycles(task: &TaskSpec, path: &str, out: &mut Vec<Diagnostic>) {
    let nodes: Vec<(Placement, &AnnotationDef)> = task.all_annotations().collect();
    let index: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, (_, a))| (a.id.as_str(), i)).collect();
    let edges: Vec<Vec<usize>> = nodes
        .iter()
        .map(|(_, a)| {
            let mut targets: Vec<usize> =
                a.conditions.iter().flat_map(|c| c.references()).filter_map(|id| index.get(id).copied()).collect();
            targets.sort_unstable();
            targets.dedup();
            targets
        })
        .collect();

    // Iterative DFS with colors; a back edge closes a cycle.
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Gray,
        Black,
    }
    let mut color = alloc::vec![Color::White; nodes.len()];
    let mut reported = BTreeSet::new();
    for start in 0..nodes.len() {
        if color[start] != Color::White {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = alloc::vec![(start, 0)];
        color[start] = Color::Gray;
        while let Some(top) = stack.last_mut() {
            let node = top.0;
            if top.1 < edges[node].len() {
                let to = edges[node][top.1];
                top.1 += 1;
                match color[to] {
                    Color::White => {
                        color[to] = Color::Gray;
                        stack.push((to, 0));
                    }
                    Color::Gray => {
                        let pos = stack.iter().position(|(n, _)| *n == to).unwrap_or(0);
                        let members: BTreeSet<usize> = stack[pos..].iter().map(|(n, _)| *n).collect();
                        let first = *members.iter().next().unwrap_or(&to);
                        if reported.insert(members.clone()) {
                            let names: Vec<&str> = members.iter().map(|&i| nodes[i].1.id.as_str()).collect();
                            out.push(Diagnostic::error(
                                key_path(&annotation_path(path, nodes[first].0), "conditions"),
                                codes::CONDITION_CYCLE,
                                format!("conditions form a cycle through {}", names.join(", ")),
                            ));
                        }
                    }
                    Color::Black => {}
                }
            } else {
                color[node] = Color::Black;
                stack.pop();
            }
        }
    }
}
