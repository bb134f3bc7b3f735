//! Dataset export and the annotator list.

use std::collections::BTreeMap;

use crowdforge_core::analytics::mean;
use crowdforge_core::lease::AssignmentState;
use crowdforge_core::response::AnswerValue;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::store::PipelineRecord;

/// Stable salted pseudonym for a worker id.
pub fn pseudonym(secret: &[u8], worker: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"crowdforge-worker-pseudonym-v1\0");
    h.update((secret.len() as u64).to_be_bytes());
    h.update(secret);
    h.update(worker.as_bytes());
    format!("w-{}", &hex::encode(h.finalize())[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportValue {
    pub id: String,
    pub instance: u32,
    pub value: AnswerValue,
}

/// One line of the JSONL dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub task_id: String,
    pub worker_id: String,
    pub assignment_id: String,
    pub version: u32,
    pub duration_seconds: f64,
    /// Unix milliseconds.
    pub submitted_at: u64,
    pub values: Vec<ExportValue>,
    /// Group id → instance count.
    pub groups: BTreeMap<String, u32>,
}

/// Records for every submitted assignment, ordered by task id, submit
/// time, then assignment.
pub fn dataset_records(rec: &PipelineRecord, secret: &[u8]) -> Vec<ExportRecord> {
    let mut out = Vec::new();
    for (&version, book) in &rec.books {
        for a in book.assignments.iter().filter(|a| a.state == AssignmentState::Submitted) {
            let Some(resp) = &a.response else { continue };
            out.push(ExportRecord {
                task_id: a.task_id.clone(),
                worker_id: pseudonym(secret, &a.worker),
                assignment_id: a.id.clone(),
                version,
                duration_seconds: a.duration_secs().unwrap_or(0.0),
                submitted_at: a.submitted_at.unwrap_or(0),
                values: resp
                    .values()
                    .map(|(k, v)| ExportValue { id: k.id.clone(), instance: k.instance, value: v.clone() })
                    .collect(),
                groups: resp.group_counts().map(|(g, n)| (g.to_string(), n)).collect(),
            });
        }
    }
    out.sort_by(|a, b| {
        (&a.task_id, a.submitted_at, a.version, &a.assignment_id).cmp(&(&b.task_id, b.submitted_at, b.version, &b.assignment_id))
    });
    out
}

pub fn dataset_jsonl(rec: &PipelineRecord, secret: &[u8]) -> String {
    let mut out = String::new();
    for r in dataset_records(rec, secret) {
        out.push_str(&serde_json::to_string(&r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorRow {
    /// Raw marketplace id, kept for payment reconciliation.
    pub worker_id: String,
    pub exams_passed: u32,
    pub exam_attempts: u32,
    pub tasks_submitted: u32,
    pub mean_task_duration_secs: Option<f64>,
}

/// Everyone who took the exam or submitted a task, sorted by worker id.
pub fn annotators(rec: &PipelineRecord) -> Vec<AnnotatorRow> {
    let mut rows: BTreeMap<&str, (u32, u32, Vec<f64>)> = BTreeMap::new();
    for ((_, participant), s) in &rec.sessions {
        let e = rows.entry(participant).or_default();
        e.0 += u32::from(s.passed());
        e.1 += s.attempts.len() as u32;
    }
    for book in rec.books.values() {
        for a in book.assignments.iter().filter(|a| a.state == AssignmentState::Submitted) {
            rows.entry(&a.worker).or_default().2.push(a.duration_secs().unwrap_or(0.0));
        }
    }
    rows.into_iter()
        .map(|(w, (passed, attempts, durations))| AnnotatorRow {
            worker_id: w.to_string(),
            exams_passed: passed,
            exam_attempts: attempts,
            tasks_submitted: durations.len() as u32,
            mean_task_duration_secs: mean(&durations),
        })
        .collect()
}
