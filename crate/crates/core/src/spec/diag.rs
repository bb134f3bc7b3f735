use alloc::string::String;
use core::fmt;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A finding about a spec document. `path` is a JSON pointer into the
/// document that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub path: String,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(path: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, path: path.into(), code: code.into(), message: message.into() }
    }

    pub fn warning(path: impl Into<String>, code: &str, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, path: path.into(), code: code.into(), message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{sev}[{}] {path}: {}", self.code, self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}

/// Stable diagnostic codes.
pub mod codes {
    pub const MALFORMED_DOCUMENT: &str = "malformed-document";
    pub const MISSING_FIELD: &str = "missing-field";
    pub const WRONG_TYPE: &str = "wrong-type";
    pub const UNKNOWN_FIELD: &str = "unknown-field";
    pub const UNKNOWN_CONTEXT_TYPE: &str = "unknown-context-type";
    pub const UNKNOWN_ANNOTATION_TYPE: &str = "unknown-annotation-type";
    pub const UNKNOWN_QUESTION_TYPE: &str = "unknown-question-type";
    pub const UNKNOWN_CONSTRAINT_TYPE: &str = "unknown-constraint-type";
    pub const UNKNOWN_SCOPE: &str = "unknown-scope";
    pub const UNKNOWN_OP: &str = "unknown-op";
    pub const UNKNOWN_PASS_COMPARISON: &str = "unknown-pass-comparison";
    pub const DUPLICATE_ID: &str = "duplicate-id";
    pub const EMPTY_ID: &str = "empty-id";
    pub const INVALID_NAME: &str = "invalid-name";
    pub const ANSWER_NOT_IN_OPTIONS: &str = "answer-not-in-options";
    pub const EXPLANATION_KEY_UNKNOWN: &str = "explanation-key-unknown";
    pub const TOO_FEW_OPTIONS: &str = "too-few-options";
    pub const EMPTY_OPTION_KEY: &str = "empty-option-key";
    pub const DUPLICATE_OPTION: &str = "duplicate-option";
    pub const EMPTY_QUESTION_SET: &str = "empty-question-set";
    pub const EMPTY_TASK_SET: &str = "empty-task-set";
    pub const OPTIONS_MISSING: &str = "options-missing";
    pub const OPTIONS_NOT_ALLOWED: &str = "options-not-allowed";
    pub const FROM_CONTEXT_MISSING: &str = "from-context-missing";
    pub const FROM_CONTEXT_NOT_ALLOWED: &str = "from-context-not-allowed";
    pub const DANGLING_CONTEXT_REF: &str = "dangling-context-ref";
    pub const FROM_CONTEXT_NOT_TEXT: &str = "from-context-not-text";
    pub const BOUNDS_NOT_ALLOWED: &str = "bounds-not-allowed";
    pub const BOUNDS_INVERTED: &str = "bounds-inverted";
    pub const BOUNDS_INVALID: &str = "bounds-invalid";
    pub const DANGLING_CONDITION_REF: &str = "dangling-condition-ref";
    pub const CONDITION_TARGET_NOT_CHOICE: &str = "condition-target-not-choice";
    pub const CONDITION_VALUE_UNKNOWN: &str = "condition-value-unknown";
    pub const CONDITION_CYCLE: &str = "condition-cycle";
    pub const EMPTY_ARGS: &str = "empty-args";
    pub const REGEX_INVALID: &str = "regex-invalid";
    pub const REGEX_ON_NON_TEXT: &str = "regex-on-non-text";
    pub const DESCRIPTION_EMPTY: &str = "description-empty";
    pub const UNKNOWN_CUSTOM_CONSTRAINT: &str = "unknown-custom-constraint";
    pub const SCOPE_INVALID: &str = "scope-invalid";
    pub const REDUNDANCY_INVALID: &str = "redundancy-invalid";
    pub const EXAM_CONFIG_MISSING: &str = "exam-config-missing";
    pub const EXAM_CONFIG_INVALID: &str = "exam-config-invalid";
    pub const SAMPLE_EXCEEDS_POOL: &str = "sample-exceeds-pool";
    pub const UNKNOWN_KIND: &str = "unknown-document-kind";
}
