//! Pure engines behind a declarative crowdsourcing pipeline.
//!
//! A pipeline is four optional parts: a Markdown instruction, a tutorial
//! question set, a sampled qualification exam, and a task set whose
//! annotation UI is described declaratively (contexts, typed annotations,
//! repeatable groups, conditions and constraints).
//!
//! This crate is `no_std` (it needs `alloc`) and performs no IO:
//!
//! - [`spec`]: domain types, parsing with path-carrying [`Diagnostic`]s,
//!   semantic validation and canonical serialization.
//! - [`condition`]: boolean enablement trees and response settling.
//! - [`constraint`]: completeness, repetition bounds, regex and custom
//!   predicates; decides whether a response may be submitted.
//! - [`exam`]: seeded question sampling, grading and attempt accounting.
//! - [`lease`]: assignment leasing with per-task redundancy.
//! - [`analytics`]: exam reports, progress, pay rate and agreement.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analytics;
pub mod condition;
pub mod constraint;
pub mod datetime;
pub mod exam;
pub mod lease;
pub mod response;
pub mod spec;

pub use condition::ConditionExpr;
pub use constraint::{Registry, Violation};
pub use response::{AnswerKey, AnswerValue, ResponseState, SpanSelection};
pub use spec::{Diagnostic, Severity};
