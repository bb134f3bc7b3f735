//! Worker answers for one task.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::spec::{AnnotationGroupDef, TaskSpec};

/// Identifies one annotation instance. Top-level annotations use instance 0;
/// annotations inside a group use the group instance index.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnswerKey {
    pub id: String,
    pub instance: u32,
}

impl AnswerKey {
    pub fn new(id: impl Into<String>, instance: u32) -> Self {
        AnswerKey { id: id.into(), instance }
    }
}

/// A selected substring of a text context. Offsets count Unicode scalar
/// values, `end` exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanSelection {
    pub start: u32,
    pub end: u32,
    pub text: String,
}

impl SpanSelection {
    /// Builds a selection by slicing `source` at char offsets.
    pub fn from_source(source: &str, start: u32, end: u32) -> Option<Self> {
        if start > end {
            return None;
        }
        let text: String = source.chars().skip(start as usize).take((end - start) as usize).collect();
        if text.chars().count() != (end - start) as usize {
            return None;
        }
        Some(SpanSelection { start, end, text })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerValue {
    Choice(String),
    Labels(BTreeSet<String>),
    Spans(Vec<SpanSelection>),
    Text(String),
    Datetime(String),
}

impl AnswerValue {
    /// Empty span lists and empty strings count as unanswered; an empty
    /// label set is an explicit "none of these".
    pub fn is_answered(&self) -> bool {
        match self {
            AnswerValue::Choice(_) | AnswerValue::Labels(_) => true,
            AnswerValue::Spans(s) => !s.is_empty(),
            AnswerValue::Text(t) | AnswerValue::Datetime(t) => !t.is_empty(),
        }
    }

    /// The strings regex constraints run against.
    pub fn text_values(&self) -> Vec<&str> {
        match self {
            AnswerValue::Spans(spans) => spans.iter().map(|s| s.text.as_str()).collect(),
            AnswerValue::Text(t) => alloc::vec![t.as_str()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "WireState", into = "WireState")]
pub struct ResponseState {
    values: BTreeMap<AnswerKey, AnswerValue>,
    groups: BTreeMap<String, u32>,
}

impl ResponseState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, key: &AnswerKey) -> Option<&AnswerValue> {
        self.values.get(key)
    }

    pub fn value(&self, id: &str, instance: u32) -> Option<&AnswerValue> {
        self.values.get(&AnswerKey::new(id, instance))
    }

    pub fn set(&mut self, id: impl Into<String>, instance: u32, value: AnswerValue) -> &mut Self {
        self.values.insert(AnswerKey::new(id, instance), value);
        self
    }

    pub fn remove(&mut self, key: &AnswerKey) -> Option<AnswerValue> {
        self.values.remove(key)
    }

    pub fn set_group_count(&mut self, group: impl Into<String>, count: u32) -> &mut Self {
        self.groups.insert(group.into(), count);
        self
    }

    /// Recorded instance count, ignoring whether the group is repeated.
    pub fn raw_group_count(&self, group: &str) -> u32 {
        self.groups.get(group).copied().unwrap_or(0)
    }

    /// Effective instance count: non-repeated groups always have one.
    pub fn group_count(&self, group: &AnnotationGroupDef) -> u32 {
        if group.is_repeated() {
            self.raw_group_count(&group.id)
        } else {
            1
        }
    }

    pub fn values(&self) -> impl Iterator<Item = (&AnswerKey, &AnswerValue)> {
        self.values.iter()
    }

    pub fn group_counts(&self) -> impl Iterator<Item = (&str, u32)> {
        self.groups.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_answered(&self, key: &AnswerKey) -> bool {
        self.values.get(key).is_some_and(AnswerValue::is_answered)
    }

    pub fn answered_keys(&self) -> BTreeSet<AnswerKey> {
        self.values.iter().filter(|(_, v)| v.is_answered()).map(|(k, _)| k.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Every annotation instance of `task` under `state`'s group counts, in
/// document order: top level first, then each group instance-major.
pub fn instance_keys(task: &TaskSpec, state: &ResponseState) -> Vec<AnswerKey> {
    let mut keys: Vec<AnswerKey> = task.annotations.iter().map(|a| AnswerKey::new(a.id.clone(), 0)).collect();
    for group in &task.annotation_groups {
        for instance in 0..state.group_count(group) {
            keys.extend(group.annotations.iter().map(|a| AnswerKey::new(a.id.clone(), instance)));
        }
    }
    keys
}

#[derive(Serialize, Deserialize)]
struct WireEntry {
    id: String,
    #[serde(default)]
    instance: u32,
    value: AnswerValue,
}

#[derive(Serialize, Deserialize)]
struct WireState {
    #[serde(default)]
    values: Vec<WireEntry>,
    #[serde(default)]
    groups: BTreeMap<String, u32>,
}

impl From<WireState> for ResponseState {
    fn from(w: WireState) -> Self {
        ResponseState {
            values: w.values.into_iter().map(|e| (AnswerKey { id: e.id, instance: e.instance }, e.value)).collect(),
            groups: w.groups,
        }
    }
}

impl From<ResponseState> for WireState {
    fn from(s: ResponseState) -> Self {
        WireState {
            values: s
                .values
                .into_iter()
                .map(|(k, value)| WireEntry { id: k.id, instance: k.instance, value })
                .collect(),
            groups: s.groups,
        }
    }
}
