//! Condition trees that enable or disable annotations.
//!
//! An atom `{id, op: "eq", value}` holds when the referenced multiple-choice
//! annotation is answered in scope with exactly `value`. An unanswered
//! reference makes the atom false, so `not` over it is true.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::response::{instance_keys, AnswerKey, AnswerValue, ResponseState};
use crate::spec::{Placement, TaskSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionExpr {
    Eq { id: String, value: String },
    Not(Box<ConditionExpr>),
    And(Vec<ConditionExpr>),
    Or(Vec<ConditionExpr>),
}

impl ConditionExpr {
    pub fn eq(id: impl Into<String>, value: impl Into<String>) -> Self {
        ConditionExpr::Eq { id: id.into(), value: value.into() }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(arg: ConditionExpr) -> Self {
        ConditionExpr::Not(Box::new(arg))
    }

    /// Annotation ids referenced by atoms, in tree order.
    pub fn references(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ConditionExpr::Eq { id, .. } => out.push(id),
            ConditionExpr::Not(arg) => arg.collect_refs(out),
            ConditionExpr::And(args) | ConditionExpr::Or(args) => args.iter().for_each(|a| a.collect_refs(out)),
        }
    }
}

/// The instance an annotation is being evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope<'a> {
    Task,
    Group { group: &'a str, instance: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConditionError {
    #[error("condition references unknown annotation `{0}`")]
    UnknownReference(String),
}

/// Resolves a referenced id: same group instance first, then task level.
pub fn resolve(task: &TaskSpec, id: &str, scope: Scope<'_>) -> Result<AnswerKey, ConditionError> {
    match (task.find_annotation(id), scope) {
        (Some((Placement::Top(_), _)), _) => Ok(AnswerKey::new(id, 0)),
        (Some((Placement::Group { group, .. }, _)), Scope::Group { group: g, instance })
            if task.annotation_groups[group].id == g =>
        {
            Ok(AnswerKey::new(id, instance))
        }
        _ => Err(ConditionError::UnknownReference(id.into())),
    }
}

pub fn evaluate(
    expr: &ConditionExpr,
    task: &TaskSpec,
    state: &ResponseState,
    scope: Scope<'_>,
) -> Result<bool, ConditionError> {
    Ok(match expr {
        ConditionExpr::Eq { id, value } => {
            let key = resolve(task, id, scope)?;
            matches!(state.get(&key), Some(AnswerValue::Choice(v)) if v == value)
        }
        ConditionExpr::Not(arg) => !evaluate(arg, task, state, scope)?,
        ConditionExpr::And(args) => {
            for a in args {
                if !evaluate(a, task, state, scope)? {
                    return Ok(false);
                }
            }
            true
        }
        ConditionExpr::Or(args) => {
            for a in args {
                if evaluate(a, task, state, scope)? {
                    return Ok(true);
                }
            }
            false
        }
    })
}

fn all_hold(conditions: &[ConditionExpr], task: &TaskSpec, state: &ResponseState, scope: Scope<'_>) -> bool {
    conditions.iter().all(|c| evaluate(c, task, state, scope).unwrap_or(false))
}

/// Enabled annotation instances, in document order.
pub fn enabled_keys(task: &TaskSpec, state: &ResponseState) -> Vec<AnswerKey> {
    let mut out = Vec::new();
    for a in &task.annotations {
        if all_hold(&a.conditions, task, state, Scope::Task) {
            out.push(AnswerKey::new(a.id.clone(), 0));
        }
    }
    for group in &task.annotation_groups {
        for instance in 0..state.group_count(group) {
            let scope = Scope::Group { group: &group.id, instance };
            for a in &group.annotations {
                if all_hold(&a.conditions, task, state, scope) {
                    out.push(AnswerKey::new(a.id.clone(), instance));
                }
            }
        }
    }
    out
}

pub fn enabled_set(task: &TaskSpec, state: &ResponseState) -> BTreeSet<AnswerKey> {
    enabled_keys(task, state).into_iter().collect()
}

/// Drops answers of disabled (or nonexistent) instances until nothing
/// changes. Returns the settled state and the cleared keys in the order
/// they were removed.
pub fn settle(task: &TaskSpec, state: &ResponseState) -> (ResponseState, Vec<AnswerKey>) {
    let mut current = state.clone();
    let mut cleared = Vec::new();
    loop {
        let enabled = enabled_set(task, &current);
        let order = instance_keys(task, &current);
        let mut stale: Vec<AnswerKey> = order
            .into_iter()
            .filter(|k| current.get(k).is_some() && !enabled.contains(k))
            .collect();
        // Keys that name no instance at all (unknown id or out-of-range index).
        let known: BTreeSet<AnswerKey> = instance_keys(task, &current).into_iter().collect();
        stale.extend(current.values().map(|(k, _)| k).filter(|k| !known.contains(*k)).cloned());
        if stale.is_empty() {
            return (current, cleared);
        }
        for k in stale {
            current.remove(&k);
            cleared.push(k);
        }
    }
}
