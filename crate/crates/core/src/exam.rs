//! Tutorials and qualification exams.
//!
//! Each attempt draws an independent sample of the exam pool. The sample is
//! a pure function of a 32-byte seed, and the seed is derived from the
//! server secret, the exam content digest, the participant and the attempt
//! index, so an imported copy of the same exam replays identical samples.
//! Participants only learn their mistake count and the pass decision.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::spec::{ExamConfig, McQuestion, QuestionSet};

pub type Seed = [u8; 32];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExamError {
    #[error("no attempts left")]
    AttemptsExhausted,
    #[error("participant already passed this exam")]
    AlreadyPassed,
    #[error("`{choice}` is not an option of question `{question}`")]
    InvalidOption { question: String, choice: String },
    #[error("question `{0}` is not part of this attempt")]
    UnknownQuestion(String),
    #[error("sample size {n} exceeds pool size {pool}")]
    SampleExceedsPool { n: usize, pool: usize },
    #[error("attempt {0} does not exist")]
    UnknownAttempt(u32),
    #[error("attempt {0} was already submitted")]
    AlreadySubmitted(u32),
    #[error("attempt {0} was superseded by a newer attempt")]
    Superseded(u32),
}

impl ExamError {
    /// Stable identifier for API responses.
    pub fn code(&self) -> &'static str {
        match self {
            Self::AttemptsExhausted => "attempts-exhausted",
            Self::AlreadyPassed => "already-passed",
            Self::InvalidOption { .. } => "invalid-option",
            Self::UnknownQuestion(_) => "unknown-question",
            Self::SampleExceedsPool { .. } => "sample-exceeds-pool",
            Self::UnknownAttempt(_) => "unknown-attempt",
            Self::AlreadySubmitted(_) => "already-submitted",
            Self::Superseded(_) => "attempt-superseded",
        }
    }
}

fn absorb(h: &mut Sha256, field: &[u8]) {
    h.update((field.len() as u64).to_be_bytes());
    h.update(field);
}

/// Seed for one attempt. Fields are length-prefixed before hashing.
pub fn derive_seed(secret: &[u8], exam_digest: &str, participant: &str, attempt_index: u32) -> Seed {
    let mut h = Sha256::new();
    absorb(&mut h, b"crowdforge-exam-seed-v1");
    absorb(&mut h, secret);
    absorb(&mut h, exam_digest.as_bytes());
    absorb(&mut h, participant.as_bytes());
    h.update(attempt_index.to_be_bytes());
    h.finalize().into()
}

/// Content digest of an exam pool: sha256 of its canonical document, hex.
pub fn exam_digest(pool: &QuestionSet) -> String {
    hex::encode(Sha256::digest(crate::spec::canonicalize_question_set(pool).as_bytes()))
}

/// Uniform sample of `n` distinct pool entries without replacement, in
/// random order.
pub fn sample_questions(pool: &[String], n: usize, seed: Seed) -> Result<Vec<String>, ExamError> {
    if n > pool.len() {
        return Err(ExamError::SampleExceedsPool { n, pool: pool.len() });
    }
    let mut rng = ChaCha20Rng::from_seed(seed);
    Ok(rand::seq::index::sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i].clone()).collect())
}

/// Aggregate outcome of a graded attempt; no per-question detail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grade {
    pub correct: u32,
    pub mistakes: u32,
    pub score: f64,
    pub passed: bool,
}

/// Grades `answers` against the hidden answers of the sampled questions.
/// Missing answers count as mistakes.
pub fn grade_attempt(
    sampled: &[String],
    answers: &BTreeMap<String, String>,
    pool: &QuestionSet,
    config: &ExamConfig,
) -> Result<Grade, ExamError> {
    for (qid, choice) in answers {
        if !sampled.contains(qid) {
            return Err(ExamError::UnknownQuestion(qid.clone()));
        }
        let q = pool.get(qid).ok_or_else(|| ExamError::UnknownQuestion(qid.clone()))?;
        if !q.options.contains_key(choice) {
            return Err(ExamError::InvalidOption { question: qid.clone(), choice: choice.clone() });
        }
    }
    let total = sampled.len() as u32;
    let correct = sampled
        .iter()
        .filter(|qid| matches!((pool.get(qid), answers.get(*qid)), (Some(q), Some(a)) if *a == q.answer))
        .count() as u32;
    let score = if total == 0 { 0.0 } else { f64::from(correct) / f64::from(total) };
    Ok(Grade { correct, mistakes: total - correct, score, passed: config.passes(score) })
}

/// Tutorial feedback: correctness plus the explanation for the chosen
/// option (empty when the question has none for it).
pub fn check_tutorial_answer(question: &McQuestion, choice: &str) -> Result<(bool, String), ExamError> {
    if !question.options.contains_key(choice) {
        return Err(ExamError::InvalidOption { question: question.question_id.clone(), choice: choice.into() });
    }
    let explanation = question.explanation.get(choice).cloned().unwrap_or_default();
    Ok((choice == question.answer, explanation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    /// 1-based.
    pub index: u32,
    /// Hex of the sampling seed.
    pub seed: String,
    pub sampled: Vec<String>,
    pub answers: BTreeMap<String, String>,
    pub grade: Option<Grade>,
    /// Unix milliseconds.
    pub started_at: u64,
    pub submitted_at: Option<u64>,
    /// Set when a newer attempt was opened before this one was submitted.
    #[serde(default)]
    pub abandoned: bool,
}

impl Attempt {
    pub fn is_open(&self) -> bool {
        self.grade.is_none() && !self.abandoned
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualificationStatus {
    None,
    InProgress,
    Passed,
    FailedExhausted,
}

impl QualificationStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::InProgress => "in-progress",
            Self::Passed => "passed",
            Self::FailedExhausted => "failed-exhausted",
        }
    }
}

/// Exam identity an attempt is bound to.
#[derive(Debug, Clone, Copy)]
pub struct ExamContext<'a> {
    pub pool: &'a QuestionSet,
    pub config: &'a ExamConfig,
    pub digest: &'a str,
    pub secret: &'a [u8],
}

/// One participant's attempts at one exam version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamSession {
    pub exam: String,
    pub version: u32,
    pub participant: String,
    pub attempts: Vec<Attempt>,
}

impl ExamSession {
    pub fn new(exam: impl Into<String>, version: u32, participant: impl Into<String>) -> Self {
        ExamSession { exam: exam.into(), version, participant: participant.into(), attempts: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.attempts.iter().any(|a| a.grade.is_some_and(|g| g.passed))
    }

    pub fn status(&self, config: &ExamConfig) -> QualificationStatus {
        if self.passed() {
            QualificationStatus::Passed
        } else if self.attempts.len() as u32 >= config.max_attempts && !self.attempts.iter().any(Attempt::is_open) {
            QualificationStatus::FailedExhausted
        } else {
            QualificationStatus::InProgress
        }
    }

    pub fn remaining(&self, config: &ExamConfig) -> u32 {
        config.max_attempts.saturating_sub(self.attempts.len() as u32)
    }

    pub fn open(&self) -> Option<&Attempt> {
        self.attempts.last().filter(|a| a.is_open())
    }

    /// Starts a new attempt, consuming one chance. An earlier attempt that
    /// was never submitted is marked abandoned.
    pub fn open_attempt(&mut self, exam: ExamContext<'_>, now: u64) -> Result<&Attempt, ExamError> {
        if self.passed() {
            return Err(ExamError::AlreadyPassed);
        }
        if self.attempts.len() as u32 >= exam.config.max_attempts {
            return Err(ExamError::AttemptsExhausted);
        }
        let index = self.attempts.len() as u32 + 1;
        let seed = derive_seed(exam.secret, exam.digest, &self.participant, index);
        let sampled = sample_questions(&exam.pool.ids(), exam.config.sample_size as usize, seed)?;
        for a in &mut self.attempts {
            if a.is_open() {
                a.abandoned = true;
            }
        }
        self.attempts.push(Attempt {
            index,
            seed: hex::encode(seed),
            sampled,
            answers: BTreeMap::new(),
            grade: None,
            started_at: now,
            submitted_at: None,
            abandoned: false,
        });
        Ok(self.attempts.last().expect("just pushed"))
    }

    /// Returns the open attempt, or opens one if none is open.
    pub fn resume_or_open(&mut self, exam: ExamContext<'_>, now: u64) -> Result<&Attempt, ExamError> {
        if self.open().is_some() {
            return Ok(self.attempts.last().expect("open attempt exists"));
        }
        self.open_attempt(exam, now)
    }

    pub fn submit_attempt(
        &mut self,
        index: u32,
        answers: BTreeMap<String, String>,
        exam: ExamContext<'_>,
        now: u64,
    ) -> Result<Grade, ExamError> {
        let attempt = self
            .attempts
            .iter_mut()
            .find(|a| a.index == index)
            .ok_or(ExamError::UnknownAttempt(index))?;
        if attempt.grade.is_some() {
            return Err(ExamError::AlreadySubmitted(index));
        }
        if attempt.abandoned {
            return Err(ExamError::Superseded(index));
        }
        let grade = grade_attempt(&attempt.sampled, &answers, exam.pool, exam.config)?;
        attempt.answers = answers;
        attempt.grade = Some(grade);
        attempt.submitted_at = Some(now);
        Ok(grade)
    }

    pub fn graded(&self) -> impl Iterator<Item = (&Attempt, Grade)> {
        self.attempts.iter().filter_map(|a| a.grade.map(|g| (a, g)))
    }
}
