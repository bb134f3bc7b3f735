//! Pipeline specification model.
//!
//! Every document kind (question set, task set, exam config, whole
//! pipeline) is JSON. [`parse`] turns raw text into these types while
//! collecting [`Diagnostic`]s keyed by JSON pointer, [`validate`] checks the
//! cross-reference invariants, and [`canonical`] writes the deterministic
//! form used for storage, digests and bundles.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::collections::BTreeMap;
use serde::{Deserialize, Serialize};

use crate::condition::ConditionExpr;

pub mod canonical;
mod diag;
pub mod parse;
pub mod validate;

pub use canonical::{canonicalize, canonicalize_exam_config, canonicalize_question_set, canonicalize_task_set};
pub use diag::{codes, has_errors, Diagnostic, Severity};
pub use parse::{
    detect_kind, parse_document, parse_exam_config, parse_pipeline, parse_question_set, parse_task_set, DocumentKind,
    Parsed, SpecDocument,
};
pub use validate::{validate_pipeline, validate_semantics};

/// Returns true if `name` is a valid pipeline name (`[A-Za-z0-9_-]{1,64}`).
pub fn is_valid_name(name: &str) -> bool {
    !name.is_empty() && name.len() <= 64 && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    Text,
    Html,
    Image,
    Audio,
    Video,
}

impl ContextKind {
    pub const ALL: [ContextKind; 5] = [Self::Text, Self::Html, Self::Image, Self::Audio, Self::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Text => "text",
            Self::Html => "html",
            Self::Image => "image",
            Self::Audio => "audio",
            Self::Video => "video",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Document field carrying the body: `text` and `html` inline their
    /// content, media kinds carry a `url`.
    pub fn payload_field(self) -> &'static str {
        match self {
            Self::Text => "text",
            Self::Html => "html",
            Self::Image | Self::Audio | Self::Video => "url",
        }
    }
}

/// A displayed object: text, html, or a media reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextObject {
    /// Required inside tasks, optional inside exam/tutorial questions.
    pub id: Option<String>,
    pub kind: ContextKind,
    pub label: Option<String>,
    pub payload: String,
}

/// Option key → display text, in document order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Options(Vec<(String, String)>);

impl Options {
    pub fn new(entries: Vec<(String, String)>) -> Self {
        Options(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.0.iter().any(|(k, _)| k == key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// One multiple-choice question of a tutorial or exam.
#[derive(Debug, Clone, PartialEq)]
pub struct McQuestion {
    pub question_id: String,
    pub context: Vec<ContextObject>,
    pub question_text: String,
    pub options: Options,
    pub answer: String,
    pub explanation: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuestionSet {
    pub questions: Vec<McQuestion>,
}

impl QuestionSet {
    pub fn get(&self, question_id: &str) -> Option<&McQuestion> {
        self.questions.iter().find(|q| q.question_id == question_id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.questions.iter().map(|q| q.question_id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassComparison {
    /// score > passing_score
    #[default]
    StrictGreater,
    /// score >= passing_score
    AtLeast,
}

impl PassComparison {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::StrictGreater => "strict-greater",
            Self::AtLeast => "at-least",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "strict-greater" => Some(Self::StrictGreater),
            "at-least" => Some(Self::AtLeast),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExamConfig {
    pub sample_size: u32,
    pub passing_score: f64,
    pub max_attempts: u32,
    #[serde(default)]
    pub pass_comparison: PassComparison,
}

impl ExamConfig {
    pub fn passes(&self, score: f64) -> bool {
        match self.pass_comparison {
            PassComparison::StrictGreater => score > self.passing_score,
            PassComparison::AtLeast => score >= self.passing_score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnnotationKind {
    MultipleChoice,
    MultiLabel,
    SpanFromText,
    TextInput,
    Datetime,
}

impl AnnotationKind {
    pub const ALL: [AnnotationKind; 5] =
        [Self::MultipleChoice, Self::MultiLabel, Self::SpanFromText, Self::TextInput, Self::Datetime];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MultipleChoice => "multiple-choice",
            Self::MultiLabel => "multi-label",
            Self::SpanFromText => "span-from-text",
            Self::TextInput => "text-input",
            Self::Datetime => "datetime",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn has_options(self) -> bool {
        matches!(self, Self::MultipleChoice | Self::MultiLabel)
    }

    pub fn is_text_valued(self) -> bool {
        matches!(self, Self::SpanFromText | Self::TextInput)
    }
}

/// Repetition bounds; `max: None` is unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub min: u32,
    pub max: Option<u32>,
}

impl Bounds {
    pub const ONE: Bounds = Bounds { min: 1, max: Some(1) };

    pub fn contains(&self, count: u32) -> bool {
        count >= self.min && self.max.is_none_or(|max| count <= max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintScope {
    #[default]
    Annotation,
    Group,
    Task,
}

impl ConstraintScope {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Annotation => "annotation",
            Self::Group => "group",
            Self::Task => "task",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "annotation" => Some(Self::Annotation),
            "group" => Some(Self::Group),
            "task" => Some(Self::Task),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintRule {
    Regex { pattern: String },
    Custom { name: String, params: serde_json::Value },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintDef {
    pub description: String,
    pub rule: ConstraintRule,
    pub scope: ConstraintScope,
}

impl ConstraintDef {
    pub fn regex(description: impl Into<String>, pattern: impl Into<String>) -> Self {
        ConstraintDef {
            description: description.into(),
            rule: ConstraintRule::Regex { pattern: pattern.into() },
            scope: ConstraintScope::Annotation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationDef {
    pub id: String,
    pub kind: AnnotationKind,
    pub prompt: String,
    /// Present iff `kind` is multiple-choice or multi-label.
    pub options: Option<Options>,
    /// Present iff `kind` is span-from-text.
    pub from_context: Option<String>,
    pub optional: bool,
    /// Selection-count bounds, span-from-text only.
    pub bounds: Option<Bounds>,
    /// Implicit conjunction.
    pub conditions: Vec<ConditionExpr>,
    pub constraints: Vec<ConstraintDef>,
}

impl AnnotationDef {
    pub fn new(id: impl Into<String>, kind: AnnotationKind, prompt: impl Into<String>) -> Self {
        AnnotationDef {
            id: id.into(),
            kind,
            prompt: prompt.into(),
            options: None,
            from_context: None,
            optional: false,
            bounds: if kind == AnnotationKind::SpanFromText { Some(Bounds::ONE) } else { None },
            conditions: Vec::new(),
            constraints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationGroupDef {
    pub id: String,
    pub title: String,
    pub annotations: Vec<AnnotationDef>,
    /// `None` when the group is not repeated (exactly one instance).
    pub repetition: Option<Bounds>,
}

impl AnnotationGroupDef {
    pub fn is_repeated(&self) -> bool {
        self.repetition.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskSpec {
    pub task_id: String,
    pub contexts: Vec<ContextObject>,
    pub annotations: Vec<AnnotationDef>,
    pub annotation_groups: Vec<AnnotationGroupDef>,
}

/// Where an annotation lives inside a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Top(usize),
    Group { group: usize, index: usize },
}

impl TaskSpec {
    /// Every annotation in document order with its placement.
    pub fn all_annotations(&self) -> impl Iterator<Item = (Placement, &AnnotationDef)> {
        let top = self.annotations.iter().enumerate().map(|(i, a)| (Placement::Top(i), a));
        let grouped = self.annotation_groups.iter().enumerate().flat_map(|(g, group)| {
            group.annotations.iter().enumerate().map(move |(i, a)| (Placement::Group { group: g, index: i }, a))
        });
        top.chain(grouped)
    }

    pub fn find_annotation(&self, id: &str) -> Option<(Placement, &AnnotationDef)> {
        self.all_annotations().find(|(_, a)| a.id == id)
    }

    pub fn find_group(&self, id: &str) -> Option<&AnnotationGroupDef> {
        self.annotation_groups.iter().find(|g| g.id == id)
    }

    pub fn find_context<'a>(&'a self, id: &str, shared: &'a [ContextObject]) -> Option<&'a ContextObject> {
        self.contexts.iter().chain(shared.iter()).find(|c| c.id.as_deref() == Some(id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSetSpec {
    pub task_set_id: String,
    pub shared: Vec<ContextObject>,
    pub tasks: Vec<TaskSpec>,
    pub redundancy: u32,
}

impl TaskSetSpec {
    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}

/// The four-part pipeline plus exam configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub name: String,
    pub version: u32,
    pub instruction: String,
    pub tutorial: Option<QuestionSet>,
    pub exam: Option<QuestionSet>,
    pub exam_config: Option<ExamConfig>,
    pub task_set: Option<TaskSetSpec>,
}

impl PipelineSpec {
    pub fn new(name: impl Into<String>) -> Self {
        PipelineSpec {
            name: name.into(),
            version: 1,
            instruction: String::new(),
            tutorial: None,
            exam: None,
            exam_config: None,
            task_set: None,
        }
    }
}
