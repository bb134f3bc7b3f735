//! Simulated worker populations.
//!
//! Each simulated worker has a skill in [0, 1]: the probability of picking
//! the right exam answer, and of agreeing with a task's hidden "truth" on
//! categorical annotations. Workers may abandon an exam attempt or a leased
//! task. The driver talks to the service through [`WorkerClient`] (in
//! process or over HTTP) and plays the marketplace side through
//! [`MarketSide`].

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crowdforge_core::condition::{enabled_keys, settle};
use crowdforge_core::constraint::{validate_submission_with, Pattern, Registry, Violation};
use crowdforge_core::spec::{AnnotationKind, ConstraintRule, ContextObject, TaskSetSpec, TaskSpec};
use crowdforge_core::{AnswerValue, ResponseState, SpanSelection};
use parking_lot::Mutex;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::connector::MockConnector;
use crate::gateway::http::ErrorBody;
use crate::gateway::service::{ExamPage, ExternalParams, ExternalSubmit, SubmitOutcome, SubmitPayload, TaskPage};
use crate::gateway::{Service, ServiceError};

#[derive(Debug, Clone, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ClientError {
    pub code: String,
    pub message: String,
    pub violations: Vec<Violation>,
}

impl From<ServiceError> for ClientError {
    fn from(e: ServiceError) -> Self {
        ClientError { code: e.code().into(), message: e.to_string(), violations: e.violations().unwrap_or_default().to_vec() }
    }
}

/// What a worker's browser can do.
pub trait WorkerClient: Sync {
    fn exam_page(&self, pipeline: &str, params: &ExternalParams) -> Result<ExamPage, ClientError>;
    fn task_page(&self, pipeline: &str, params: &ExternalParams) -> Result<TaskPage, ClientError>;
    fn submit(&self, token: &str, payload: &SubmitPayload) -> Result<SubmitOutcome, ClientError>;
}

impl WorkerClient for Service {
    fn exam_page(&self, pipeline: &str, params: &ExternalParams) -> Result<ExamPage, ClientError> {
        Ok(Service::exam_page(self, pipeline, params)?)
    }

    fn task_page(&self, pipeline: &str, params: &ExternalParams) -> Result<TaskPage, ClientError> {
        Ok(Service::task_page(self, pipeline, params)?)
    }

    fn submit(&self, token: &str, payload: &SubmitPayload) -> Result<SubmitOutcome, ClientError> {
        Ok(Service::submit(self, token, payload.clone())?)
    }
}

/// Worker routes over HTTP, JSON flavour.
#[derive(Debug, Clone)]
pub struct HttpWorkerClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl HttpWorkerClient {
    pub fn new(base: &str) -> Self {
        HttpWorkerClient { base: base.trim_end_matches('/').into(), http: reqwest::blocking::Client::new() }
    }

    fn decode<T: serde::de::DeserializeOwned>(resp: reqwest::Result<reqwest::blocking::Response>) -> Result<T, ClientError> {
        let transport = |e: reqwest::Error| ClientError { code: "transport".into(), message: e.to_string(), violations: vec![] };
        let resp = resp.map_err(transport)?;
        if resp.status().is_success() {
            return resp.json().map_err(transport);
        }
        let status = resp.status();
        match resp.json::<ErrorBody>() {
            Ok(b) => Err(ClientError {
                code: b.error,
                message: b.message,
                violations: b.violations.and_then(|v| serde_json::from_value(v).ok()).unwrap_or_default(),
            }),
            Err(_) => Err(ClientError { code: "http".into(), message: status.to_string(), violations: vec![] }),
        }
    }
}

impl WorkerClient for HttpWorkerClient {
    fn exam_page(&self, pipeline: &str, params: &ExternalParams) -> Result<ExamPage, ClientError> {
        let url = format!("{}/w/exam/{pipeline}", self.base);
        Self::decode(self.http.get(url).query(params).query(&[("format", "json")]).send())
    }

    fn task_page(&self, pipeline: &str, params: &ExternalParams) -> Result<TaskPage, ClientError> {
        let url = format!("{}/w/task/{pipeline}", self.base);
        Self::decode(self.http.get(url).query(params).query(&[("format", "json")]).send())
    }

    fn submit(&self, token: &str, payload: &SubmitPayload) -> Result<SubmitOutcome, ClientError> {
        let url = format!("{}/w/submit/{token}", self.base);
        Self::decode(self.http.post(url).query(&[("format", "json")]).json(payload).send())
    }
}

/// The marketplace as seen by a worker: accepting HITs and the browser's
/// POST-back after a submission.
pub trait MarketSide: Sync {
    fn accept(&self, hit_id: &str, worker: &str) -> Option<String>;
    fn post_back(&self, submit: &ExternalSubmit);
}

impl MarketSide for MockConnector {
    fn accept(&self, hit_id: &str, worker: &str) -> Option<String> {
        self.accept_hit(hit_id, worker).ok()
    }

    fn post_back(&self, submit: &ExternalSubmit) {
        if let Err(e) = self.record_postback(submit.fields.clone()) {
            tracing::warn!(error = %e, "mock marketplace rejected a POST-back");
        }
    }
}

/// Stand-in marketplace for runs against a remote server.
#[derive(Debug, Default)]
pub struct LocalMarket {
    next: AtomicU64,
    pub postbacks: Mutex<Vec<ExternalSubmit>>,
}

impl MarketSide for LocalMarket {
    fn accept(&self, hit_id: &str, worker: &str) -> Option<String> {
        Some(format!("{hit_id}-{worker}-{}", self.next.fetch_add(1, Ordering::SeqCst)))
    }

    fn post_back(&self, submit: &ExternalSubmit) {
        self.postbacks.lock().push(submit.clone());
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub workers: usize,
    pub seed: u64,
    pub min_skill: f64,
    pub max_skill: f64,
    /// Chance of walking away from an exam attempt or a leased task.
    pub abandon_rate: f64,
    pub tasks_per_worker: usize,
    pub threads: usize,
    pub worker_prefix: String,
    pub turk_submit_to: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            workers: 20,
            seed: 1,
            min_skill: 0.3,
            max_skill: 1.0,
            abandon_rate: 0.05,
            tasks_per_worker: 3,
            threads: 4,
            worker_prefix: "SIMW".into(),
            turk_submit_to: "https://workersandbox.mturk.com".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExamTarget {
    pub pipeline: String,
    pub hit_id: String,
    /// question id → correct option.
    pub answer_key: BTreeMap<String, String>,
    /// question id → option keys.
    pub options: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct TaskTarget {
    pub pipeline: String,
    pub hit_id: String,
    pub task_set: TaskSetSpec,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WorkerOutcome {
    pub worker: String,
    pub skill: f64,
    pub exam_attempts: u32,
    pub passed: bool,
    pub tasks_submitted: u32,
    pub rejected: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimReport {
    pub workers: usize,
    pub exam_attempts: u64,
    pub exams_passed: u64,
    pub exam_abandons: u64,
    pub task_pages_rejected: u64,
    pub tasks_submitted: u64,
    pub tasks_abandoned: u64,
    pub task_violations: u64,
    pub postbacks: u64,
    pub errors: BTreeMap<String, u64>,
    pub per_worker: Vec<WorkerOutcome>,
}

impl SimReport {
    fn merge(&mut self, o: SimReport) {
        self.workers += o.workers;
        self.exam_attempts += o.exam_attempts;
        self.exams_passed += o.exams_passed;
        self.exam_abandons += o.exam_abandons;
        self.task_pages_rejected += o.task_pages_rejected;
        self.tasks_submitted += o.tasks_submitted;
        self.tasks_abandoned += o.tasks_abandoned;
        self.task_violations += o.task_violations;
        self.postbacks += o.postbacks;
        for (k, v) in o.errors {
            *self.errors.entry(k).or_default() += v;
        }
        self.per_worker.extend(o.per_worker);
    }

    fn error(&mut self, code: &str) {
        *self.errors.entry(code.into()).or_default() += 1;
    }
}

fn unit_hash(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p.as_bytes());
    }
    u64::from_be_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Answers an exam question: right with probability `skill`, otherwise a
/// uniformly chosen wrong option.
pub fn answer_question(rng: &mut impl Rng, skill: f64, correct: &str, options: &[String]) -> String {
    if rng.random_bool(skill.clamp(0.0, 1.0)) {
        return correct.into();
    }
    let wrong: Vec<&String> = options.iter().filter(|o| *o != correct).collect();
    wrong.choose(rng).map(|s| (*s).clone()).unwrap_or_else(|| correct.into())
}

fn words(source: &str) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut start = None;
    let chars: Vec<char> = source.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s as u32, i as u32));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s as u32, chars.len() as u32));
    }
    out
}

fn text_candidates(task: &str, id: &str, instance: u32) -> Vec<String> {
    let n = instance + 1;
    vec![
        format!("What is item {n} in {task} {id}?"),
        format!("{n}"),
        format!("answer {n} for {id}"),
        format!("{n}0"),
        "yes".into(),
    ]
}

fn pick_text(def: &crowdforge_core::spec::AnnotationDef, task: &str, instance: u32) -> String {
    let patterns: Vec<Pattern> = def
        .constraints
        .iter()
        .filter_map(|c| match &c.rule {
            ConstraintRule::Regex { pattern } => Pattern::compile(pattern).ok(),
            _ => None,
        })
        .collect();
    let cands = text_candidates(task, &def.id, instance);
    cands.iter().find(|c| patterns.iter().all(|p| p.full_match(c))).cloned().unwrap_or_else(|| cands[0].clone())
}

/// A response a worker of the given skill might produce. Categorical
/// answers follow a per-(task, annotation, instance) hidden truth with
/// probability `skill`; spans and text are drawn to satisfy the task's
/// regex constraints where simple candidates can.
pub fn fill_response(task: &TaskSpec, shared: &[ContextObject], rng: &mut impl Rng, skill: f64) -> ResponseState {
    let mut state = ResponseState::new();
    for g in &task.annotation_groups {
        let n = match g.repetition {
            Some(b) => {
                let hi = b.max.unwrap_or(b.min + 1).min(b.min + 1);
                rng.random_range(b.min..=hi.max(b.min))
            }
            None => 1,
        };
        state.set_group_count(g.id.clone(), n);
    }
    for _ in 0..8 {
        let mut changed = false;
        for key in enabled_keys(task, &state) {
            if state.get(&key).is_some() {
                continue;
            }
            let Some((_, def)) = task.find_annotation(&key.id) else { continue };
            if def.optional && rng.random_bool(0.5) {
                continue;
            }
            let salt = key.instance.to_string();
            let truth = unit_hash(&[&task.task_id, &key.id, &salt]);
            let value = match def.kind {
                AnnotationKind::MultipleChoice => {
                    let keys: Vec<String> = def.options.as_ref().map(|o| o.keys().map(String::from).collect()).unwrap_or_default();
                    if keys.is_empty() {
                        continue;
                    }
                    let right = keys[(truth % keys.len() as u64) as usize].clone();
                    let pick = if rng.random_bool(skill.clamp(0.0, 1.0)) { right } else { keys.choose(rng).cloned().unwrap_or(right) };
                    AnswerValue::Choice(pick)
                }
                AnnotationKind::MultiLabel => {
                    let keys: Vec<String> = def.options.as_ref().map(|o| o.keys().map(String::from).collect()).unwrap_or_default();
                    let mut labels = std::collections::BTreeSet::new();
                    for (i, k) in keys.iter().enumerate() {
                        let mut on = (truth >> (i % 64)) & 1 == 1;
                        if !rng.random_bool(skill.clamp(0.0, 1.0)) {
                            on = rng.random_bool(0.5);
                        }
                        if on {
                            labels.insert(k.clone());
                        }
                    }
                    AnswerValue::Labels(labels)
                }
                AnnotationKind::SpanFromText => {
                    let source = def
                        .from_context
                        .as_deref()
                        .and_then(|c| task.find_context(c, shared))
                        .map(|c| c.payload.clone())
                        .unwrap_or_default();
                    let subset_of = def.constraints.iter().find_map(|c| match &c.rule {
                        ConstraintRule::Custom { name, params } if name == "spans-subset-of" => {
                            params.get("field").and_then(|f| f.as_str()).map(String::from)
                        }
                        _ => None,
                    });
                    let pool: Vec<(u32, u32)> = match subset_of.and_then(|f| state.value(&f, 0).cloned()) {
                        Some(AnswerValue::Spans(s)) => s.iter().map(|x| (x.start, x.end)).collect(),
                        _ => words(&source),
                    };
                    let b = def.bounds.unwrap_or(crowdforge_core::spec::Bounds::ONE);
                    let want = b.min.max(1).min(b.max.unwrap_or(u32::MAX)) as usize;
                    let mut chosen: Vec<(u32, u32)> = pool.choose_multiple(rng, want.min(pool.len())).cloned().collect();
                    chosen.sort();
                    let spans: Vec<SpanSelection> =
                        chosen.into_iter().filter_map(|(s, e)| SpanSelection::from_source(&source, s, e)).collect();
                    AnswerValue::Spans(spans)
                }
                AnnotationKind::TextInput => AnswerValue::Text(pick_text(def, &task.task_id, key.instance)),
                AnnotationKind::Datetime => {
                    AnswerValue::Datetime(format!("2020-{:02}-{:02}", 1 + truth % 12, 1 + (truth >> 8) % 28))
                }
            };
            state.set(key.id.clone(), key.instance, value);
            changed = true;
        }
        state = settle(task, &state).0;
        if !changed {
            break;
        }
    }
    state
}

/// Like [`fill_response`] but retries until the response validates (or
/// gives up after `tries`).
pub fn valid_response(
    task: &TaskSpec,
    shared: &[ContextObject],
    registry: &Registry,
    rng: &mut impl Rng,
    skill: f64,
    tries: usize,
) -> ResponseState {
    let mut last = ResponseState::new();
    for _ in 0..tries.max(1) {
        last = fill_response(task, shared, rng, skill);
        if validate_submission_with(task, shared, &last, registry).is_ok() {
            break;
        }
    }
    last
}

struct Worker {
    id: String,
    skill: f64,
    rng: ChaCha20Rng,
}

fn run_worker(
    w: &mut Worker,
    client: &dyn WorkerClient,
    market: &dyn MarketSide,
    exam: Option<&ExamTarget>,
    task: Option<&TaskTarget>,
    registry: &Registry,
    cfg: &SimConfig,
) -> SimReport {
    let mut rep = SimReport { workers: 1, ..Default::default() };
    let mut outcome = WorkerOutcome { worker: w.id.clone(), skill: w.skill, ..Default::default() };
    if let Some(ex) = exam {
        if let Some(asg) = market.accept(&ex.hit_id, &w.id) {
            let params = ExternalParams::new(&asg, &ex.hit_id, &w.id, &cfg.turk_submit_to);
            loop {
                let (questions, token) = match client.exam_page(&ex.pipeline, &params) {
                    Ok(ExamPage::Attempt { questions, token, .. }) => (questions, token),
                    Ok(ExamPage::Passed { .. }) => break,
                    Ok(ExamPage::Preview { .. }) => unreachable!("non-preview params"),
                    Err(e) => {
                        rep.error(&e.code);
                        break;
                    }
                };
                if w.rng.random_bool(cfg.abandon_rate) {
                    rep.exam_abandons += 1;
                    break;
                }
                let answers: BTreeMap<String, String> = questions
                    .iter()
                    .map(|q| {
                        let opts = ex.options.get(&q.question_id).cloned().unwrap_or_default();
                        let right = ex.answer_key.get(&q.question_id).cloned().unwrap_or_default();
                        (q.question_id.clone(), answer_question(&mut w.rng, w.skill, &right, &opts))
                    })
                    .collect();
                match client.submit(&token, &SubmitPayload { answers: Some(answers), response: None }) {
                    Ok(out) => {
                        market.post_back(&out.external_submit);
                        rep.postbacks += 1;
                        rep.exam_attempts += 1;
                        outcome.exam_attempts += 1;
                        let fb = out.exam.expect("exam feedback");
                        if fb.passed {
                            rep.exams_passed += 1;
                            outcome.passed = true;
                            break;
                        }
                        if fb.remaining == 0 {
                            break;
                        }
                    }
                    Err(e) => {
                        rep.error(&e.code);
                        break;
                    }
                }
            }
        }
    }
    if let Some(t) = task {
        if let Some(asg) = market.accept(&t.hit_id, &w.id) {
            let params = ExternalParams::new(&asg, &t.hit_id, &w.id, &cfg.turk_submit_to);
            for _ in 0..cfg.tasks_per_worker {
                let (task_id, token) = match client.task_page(&t.pipeline, &params) {
                    Ok(TaskPage::Assigned { task, token, .. }) => (task.task_id, token),
                    Ok(TaskPage::Exhausted { .. }) => break,
                    Ok(TaskPage::Preview { .. }) => unreachable!("non-preview params"),
                    Err(e) if e.code == "not-qualified" => {
                        rep.task_pages_rejected += 1;
                        outcome.rejected = true;
                        break;
                    }
                    Err(e) => {
                        rep.error(&e.code);
                        break;
                    }
                };
                if w.rng.random_bool(cfg.abandon_rate) {
                    rep.tasks_abandoned += 1;
                    break;
                }
                let Some(spec) = t.task_set.task(&task_id) else { break };
                let response = valid_response(spec, &t.task_set.shared, registry, &mut w.rng, w.skill, 20);
                match client.submit(&token, &SubmitPayload { answers: None, response: Some(response) }) {
                    Ok(out) => {
                        market.post_back(&out.external_submit);
                        rep.postbacks += 1;
                        rep.tasks_submitted += 1;
                        outcome.tasks_submitted += 1;
                    }
                    Err(e) if e.code == "constraint-violation" => {
                        rep.task_violations += 1;
                        break;
                    }
                    Err(e) => {
                        rep.error(&e.code);
                        break;
                    }
                }
            }
        }
    }
    rep.per_worker.push(outcome);
    rep
}

/// Runs `cfg.workers` workers over `cfg.threads` threads. Worker `i` is
/// seeded from (`cfg.seed`, `i`), so its skill and choices do not depend
/// on scheduling.
pub fn run(
    client: &dyn WorkerClient,
    market: &dyn MarketSide,
    exam: Option<&ExamTarget>,
    task: Option<&TaskTarget>,
    registry: &Registry,
    cfg: &SimConfig,
) -> SimReport {
    let threads = cfg.threads.max(1);
    let mut total = SimReport::default();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    let mut rep = SimReport::default();
                    for i in (t..cfg.workers).step_by(threads) {
                        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                        let skill = rng.random_range(cfg.min_skill..=cfg.max_skill.max(cfg.min_skill));
                        let mut w = Worker { id: format!("{}{i:04}", cfg.worker_prefix), skill, rng };
                        rep.merge(run_worker(&mut w, client, market, exam, task, registry, cfg));
                    }
                    rep
                })
            })
            .collect();
        for h in handles {
            total.merge(h.join().expect("simulated worker thread panicked"));
        }
    });
    total.per_worker.sort_by(|a, b| a.worker.cmp(&b.worker));
    total
}

impl ExamTarget {
    pub fn from_pool(pipeline: &str, hit_id: &str, pool: &crowdforge_core::spec::QuestionSet) -> Self {
        ExamTarget {
            pipeline: pipeline.into(),
            hit_id: hit_id.into(),
            answer_key: pool.questions.iter().map(|q| (q.question_id.clone(), q.answer.clone())).collect(),
            options: pool.questions.iter().map(|q| (q.question_id.clone(), q.options.keys().map(String::from).collect())).collect(),
        }
    }
}
