//! Requester-facing statistics: exam reports, task progress, pay rate and
//! inter-annotator agreement.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::exam::ExamSession;
use crate::lease::AssignmentBook;
use crate::response::AnswerValue;
use crate::spec::{AnnotationKind, QuestionSet, TaskSetSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("duration must be positive")]
    NonPositiveDuration,
    #[error("annotation `{0}` does not exist")]
    UnknownAnnotation(String),
    #[error("annotation `{0}` is not multiple-choice or multi-label")]
    NotCategorical(String),
    #[error("no task has at least two ratings")]
    TooFewRaters,
}

/// Histogram bucket keyed by the exact fraction `correct / sample_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBucket {
    pub correct: u32,
    pub sample_size: u32,
    pub score: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionStats {
    pub question_id: String,
    pub shown: u64,
    pub errors: u64,
    pub error_rate: f64,
    /// Option key → times chosen; unanswered questions are not counted.
    pub choices: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamReport {
    pub participants: u64,
    pub graded_attempts: u64,
    pub passed: u64,
    pub histogram: Vec<ScoreBucket>,
    pub best_scores: BTreeMap<String, f64>,
    pub questions: Vec<QuestionStats>,
}

/// Aggregates graded attempts. Every graded attempt counts, including
/// repeat attempts by one participant.
pub fn exam_report(pool: &QuestionSet, sessions: &[ExamSession]) -> ExamReport {
    let mut buckets: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    let mut stats: Vec<QuestionStats> = pool
        .questions
        .iter()
        .map(|q| QuestionStats {
            question_id: q.question_id.clone(),
            shown: 0,
            errors: 0,
            error_rate: 0.0,
            choices: q.options.keys().map(|k| (k.into(), 0)).collect(),
        })
        .collect();
    let index: BTreeMap<&str, usize> = pool.questions.iter().enumerate().map(|(i, q)| (q.question_id.as_str(), i)).collect();
    let mut graded = 0;
    let mut passed = 0;

    for s in sessions {
        if s.passed() {
            passed += 1;
        }
        for (attempt, grade) in s.graded() {
            graded += 1;
            *buckets.entry((grade.correct, attempt.sampled.len() as u32)).or_default() += 1;
            let b = best.entry(s.participant.clone()).or_insert(grade.score);
            if grade.score > *b {
                *b = grade.score;
            }
            for qid in &attempt.sampled {
                let Some(&i) = index.get(qid.as_str()) else { continue };
                let q = &pool.questions[i];
                let st = &mut stats[i];
                st.shown += 1;
                let answer = attempt.answers.get(qid);
                if answer != Some(&q.answer) {
                    st.errors += 1;
                }
                if let Some(a) = answer {
                    *st.choices.entry(a.clone()).or_default() += 1;
                }
            }
        }
    }
    for st in &mut stats {
        st.error_rate = if st.shown == 0 { 0.0 } else { st.errors as f64 / st.shown as f64 };
    }
    let mut histogram: Vec<ScoreBucket> = buckets
        .into_iter()
        .map(|((correct, sample_size), count)| ScoreBucket {
            correct,
            sample_size,
            score: if sample_size == 0 { 0.0 } else { f64::from(correct) / f64::from(sample_size) },
            count,
        })
        .collect();
    histogram.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.sample_size.cmp(&b.sample_size)));
    ExamReport {
        participants: sessions.len() as u64,
        graded_attempts: graded,
        passed,
        histogram,
        best_scores: best,
        questions: stats,
    }
}

/// Implied hourly pay: `reward * 3600 / seconds`.
pub fn pay_rate(mean_duration_secs: f64, reward: f64) -> Result<f64, AnalyticsError> {
    if mean_duration_secs.is_nan() || mean_duration_secs <= 0.0 {
        return Err(AnalyticsError::NonPositiveDuration);
    }
    Ok(reward * 3600.0 / mean_duration_secs)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Fleiss' kappa over a subjects × categories count table in which every
/// row sums to the same rater count n ≥ 2. When every rating falls in one
/// category (chance agreement 1) the observed agreement is perfect and 1.0
/// is returned.
pub fn fleiss_kappa(table: &[Vec<u64>]) -> Option<f64> {
    let n: u64 = table.first()?.iter().sum();
    if n < 2 || table.iter().any(|row| row.iter().sum::<u64>() != n) {
        return None;
    }
    let subjects = table.len() as f64;
    let nf = n as f64;
    let p_bar = table.iter().map(|row| row_agreement(row, n)).sum::<f64>() / subjects;
    let categories = table[0].len();
    let pe: f64 = (0..categories)
        .map(|j| {
            let pj = table.iter().map(|row| row[j] as f64).sum::<f64>() / (subjects * nf);
            pj * pj
        })
        .sum();
    if (1.0 - pe).abs() < f64::EPSILON {
        return Some(1.0);
    }
    Some((p_bar - pe) / (1.0 - pe))
}

/// Fraction of agreeing rater pairs for one subject.
fn row_agreement(row: &[u64], n: u64) -> f64 {
    let agree: u64 = row.iter().map(|&c| c * c.saturating_sub(1)).sum();
    agree as f64 / (n * (n - 1)) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub annotation: String,
    /// Mean pairwise match fraction over rated items.
    pub percent: f64,
    pub kappa: f64,
    /// Items that entered the computation.
    pub items: u64,
    /// Raters per item after down-sampling.
    pub raters: u64,
}

/// Agreement on one categorical annotation. An item is one annotation
/// instance of one task; only submissions that answered it rate it. Items
/// are down-sampled to the smallest rater count among items with at least
/// two raters, keeping the earliest submissions. Multi-label annotations
/// pool every (item, option) pair as a binary item.
pub fn agreement(spec: &TaskSetSpec, book: &AssignmentBook, annotation: &str) -> Result<Agreement, AnalyticsError> {
    let kind = spec
        .tasks
        .iter()
        .find_map(|t| t.find_annotation(annotation).map(|(_, a)| (a.kind, a.options.clone())))
        .ok_or_else(|| AnalyticsError::UnknownAnnotation(annotation.into()))?;
    if !kind.0.has_options() {
        return Err(AnalyticsError::NotCategorical(annotation.into()));
    }

    // (task index, instance) → values in submission order
    let mut items: BTreeMap<(usize, u32), Vec<&AnswerValue>> = BTreeMap::new();
    for a in book.submitted() {
        let Some(resp) = &a.response else { continue };
        for (key, value) in resp.values() {
            if key.id == annotation {
                items.entry((a.task_index, key.instance)).or_default().push(value);
            }
        }
    }
    let raters = items.values().map(Vec::len).filter(|&n| n >= 2).min().ok_or(AnalyticsError::TooFewRaters)?;

    let mut table: Vec<Vec<u64>> = Vec::new();
    for ((task_index, _), values) in &items {
        if values.len() < 2 {
            continue;
        }
        let values = &values[..raters];
        let options: Vec<String> = spec.tasks[*task_index]
            .find_annotation(annotation)
            .and_then(|(_, a)| a.options.as_ref())
            .map(|o| o.keys().map(String::from).collect())
            .unwrap_or_default();
        match kind.0 {
            AnnotationKind::MultipleChoice => {
                let mut row = vec![0u64; options.len()];
                for v in values {
                    if let AnswerValue::Choice(c) = v {
                        if let Some(j) = options.iter().position(|o| o == c) {
                            row[j] += 1;
                        }
                    }
                }
                table.push(row);
            }
            _ => {
                for o in &options {
                    let yes = values.iter().filter(|v| matches!(v, AnswerValue::Labels(ls) if ls.contains(o))).count() as u64;
                    table.push(vec![yes, raters as u64 - yes]);
                }
            }
        }
    }
    // Rows whose values did not map to options have a short sum; drop them.
    table.retain(|row| row.iter().sum::<u64>() == raters as u64);
    if table.is_empty() {
        return Err(AnalyticsError::TooFewRaters);
    }
    let percent = table.iter().map(|row| row_agreement(row, raters as u64)).sum::<f64>() / table.len() as f64;
    let kappa = fleiss_kappa(&table).ok_or(AnalyticsError::TooFewRaters)?;
    Ok(Agreement { annotation: annotation.into(), percent, kappa, items: table.len() as u64, raters: raters as u64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSetReport {
    pub tasks_total: u64,
    pub tasks_complete: u64,
    pub tasks_in_progress: u64,
    pub submissions: u64,
    pub active_leases: u64,
    pub mean_duration_secs: Option<f64>,
    pub median_duration_secs: Option<f64>,
    pub reward: Option<f64>,
    pub hourly_pay: Option<f64>,
    pub agreement: Vec<Agreement>,
}

/// Progress, timing and agreement on every categorical annotation with
/// enough ratings. A task is in progress when it is not complete and has a
/// submission or an active lease.
pub fn task_progress(spec: &TaskSetSpec, book: &AssignmentBook, reward: Option<f64>) -> TaskSetReport {
    let n = spec.tasks.len();
    let complete = (0..n).filter(|&t| book.is_complete(t)).count() as u64;
    let in_progress = (0..n)
        .filter(|&t| !book.is_complete(t) && book.submitted_count(t) + book.active_count(t) > 0)
        .count() as u64;
    let durations: Vec<f64> = book.submitted().filter_map(|a| a.duration_secs()).collect();
    let mean_d = mean(&durations);
    let mut seen = Vec::new();
    let mut agreements = Vec::new();
    for t in &spec.tasks {
        for (_, a) in t.all_annotations() {
            if a.kind.has_options() && !seen.contains(&a.id) {
                seen.push(a.id.clone());
                if let Ok(ag) = agreement(spec, book, &a.id) {
                    agreements.push(ag);
                }
            }
        }
    }
    TaskSetReport {
        tasks_total: n as u64,
        tasks_complete: complete,
        tasks_in_progress: in_progress,
        submissions: durations.len() as u64,
        active_leases: book.assignments.iter().filter(|a| a.is_active()).count() as u64,
        mean_duration_secs: mean_d,
        median_duration_secs: median(&durations),
        reward,
        hourly_pay: match (mean_d, reward) {
            (Some(d), Some(r)) => pay_rate(d, r).ok(),
            _ => None,
        },
        agreement: agreements,
    }
}
