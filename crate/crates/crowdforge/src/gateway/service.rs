//! Transport-independent service: everything the HTTP routes do, callable
//! in-process by tests and the simulator.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crowdforge_core::analytics::{exam_report, task_progress, ExamReport, TaskSetReport};
use crowdforge_core::constraint::Violation;
use crowdforge_core::exam::{check_tutorial_answer, ExamError, QualificationStatus};
use crowdforge_core::lease::{AssignmentState, ExternalIds, SubmitError};
use crowdforge_core::spec::{canonicalize, ContextObject, McQuestion, PipelineSpec, TaskSetSpec};
use crowdforge_core::ResponseState;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bundle::{self, BundleError};
use crate::clock::Clock;
use crate::connector::{ConnectorError, HitKind, HitRequest, MarketplaceConnector};
use crate::export::{self, AnnotatorRow};
use crate::markdown::{render_instruction, sanitize_html};
use crate::store::{Event, Launch, LaunchConfig, Outcome, PutOutcome, Store, StoreError};

/// `assignmentId` value the marketplace sends while a worker previews.
pub const PREVIEW_ASSIGNMENT_ID: &str = "ASSIGNMENT_ID_NOT_AVAILABLE";
/// Appended to `turkSubmitTo` for the POST-back.
pub const EXTERNAL_SUBMIT_PATH: &str = "/mturk/externalSubmit";

/// Marketplace qualification granted on passing `pipeline`'s exam.
pub fn qualification_name(pipeline: &str) -> String {
    format!("crowdforge-exam:{pipeline}")
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("marketplace: {0}")]
    Connector(#[from] ConnectorError),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("worker has not passed the required exam(s)")]
    NotQualified(Vec<GateStatus>),
    #[error("unknown or expired submit token")]
    UnknownToken,
    #[error("this form was already submitted")]
    TokenReplay,
    #[error("response violates {} constraint(s)", .0.len())]
    Violations(Vec<Violation>),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Store(StoreError::Submit(SubmitError::Violations(_))) => "constraint-violation",
            ServiceError::Store(e) => e.code(),
            ServiceError::Bundle(e) => e.code(),
            ServiceError::Connector(_) => "connector-failure",
            ServiceError::BadRequest(_) => "bad-request",
            ServiceError::NotFound(_) => "not-found",
            ServiceError::NotQualified(_) => "not-qualified",
            ServiceError::UnknownToken => "unknown-token",
            ServiceError::TokenReplay => "already-submitted",
            ServiceError::Violations(_) => "constraint-violation",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            ServiceError::Store(e) => match e {
                StoreError::NotFound(_) | StoreError::NotLaunched(_) => 404,
                StoreError::Invalid(_) | StoreError::InvalidLaunch(_) => 422,
                StoreError::Conflict(_) => 409,
                StoreError::Exam(ExamError::AttemptsExhausted) => 403,
                StoreError::Exam(ExamError::InvalidOption { .. } | ExamError::UnknownQuestion(_)) => 422,
                StoreError::Exam(ExamError::SampleExceedsPool { .. }) => 422,
                StoreError::Exam(_) => 409,
                StoreError::Submit(SubmitError::Violations(_)) => 422,
                StoreError::Submit(SubmitError::UnknownAssignment(_)) => 404,
                StoreError::Submit(SubmitError::NotLeasedToWorker) => 403,
                StoreError::Submit(SubmitError::LeaseExpired) => 410,
                StoreError::Submit(SubmitError::AlreadySubmitted) => 409,
                StoreError::Corrupt { .. } | StoreError::Poisoned | StoreError::Io(_) => 500,
            },
            ServiceError::Bundle(_) => 422,
            ServiceError::Connector(_) => 502,
            ServiceError::BadRequest(_) => 400,
            ServiceError::NotFound(_) | ServiceError::UnknownToken => 404,
            ServiceError::NotQualified(_) => 403,
            ServiceError::TokenReplay => 409,
            ServiceError::Violations(_) => 422,
        }
    }

    /// Violations carried by the error, if any.
    pub fn violations(&self) -> Option<&[Violation]> {
        match self {
            ServiceError::Violations(v) | ServiceError::Store(StoreError::Submit(SubmitError::Violations(v))) => Some(v),
            _ => None,
        }
    }

    pub fn diagnostics(&self) -> Option<&[crowdforge_core::Diagnostic]> {
        match self {
            ServiceError::Store(StoreError::Invalid(d)) | ServiceError::Bundle(BundleError::Invalid(d)) => Some(d),
            _ => None,
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

/// ExternalQuestion query string.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalParams {
    #[serde(rename = "assignmentId", default, skip_serializing_if = "Option::is_none")]
    pub assignment_id: Option<String>,
    #[serde(rename = "hitId", default, skip_serializing_if = "Option::is_none")]
    pub hit_id: Option<String>,
    #[serde(rename = "workerId", default, skip_serializing_if = "Option::is_none")]
    pub worker_id: Option<String>,
    #[serde(rename = "turkSubmitTo", default, skip_serializing_if = "Option::is_none")]
    pub turk_submit_to: Option<String>,
}

struct Bound {
    assignment_id: String,
    hit_id: String,
    worker_id: String,
    turk_submit_to: String,
}

impl ExternalParams {
    pub fn new(assignment_id: &str, hit_id: &str, worker_id: &str, turk_submit_to: &str) -> Self {
        ExternalParams {
            assignment_id: Some(assignment_id.into()),
            hit_id: Some(hit_id.into()),
            worker_id: Some(worker_id.into()),
            turk_submit_to: Some(turk_submit_to.into()),
        }
    }

    pub fn preview(hit_id: &str) -> Self {
        ExternalParams { assignment_id: Some(PREVIEW_ASSIGNMENT_ID.into()), hit_id: Some(hit_id.into()), ..Default::default() }
    }

    pub fn is_preview(&self) -> bool {
        self.assignment_id.as_deref() == Some(PREVIEW_ASSIGNMENT_ID)
    }

    fn bind(&self) -> Result<Bound> {
        let get = |v: &Option<String>, name: &str| {
            v.clone().filter(|s| !s.is_empty()).ok_or_else(|| ServiceError::BadRequest(format!("missing query parameter `{name}`")))
        };
        Ok(Bound {
            assignment_id: get(&self.assignment_id, "assignmentId")?,
            hit_id: get(&self.hit_id, "hitId")?,
            worker_id: get(&self.worker_id, "workerId")?,
            turk_submit_to: get(&self.turk_submit_to, "turkSubmitTo")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextView {
    pub id: Option<String>,
    #[serde(rename = "type")]
    pub kind: String,
    pub label: Option<String>,
    /// Text, sanitized HTML, or a media URL depending on `type`.
    pub payload: String,
}

fn context_view(c: &ContextObject) -> ContextView {
    let payload = match c.kind {
        crowdforge_core::spec::ContextKind::Html => sanitize_html(&c.payload),
        _ => c.payload.clone(),
    };
    ContextView { id: c.id.clone(), kind: c.kind.as_str().into(), label: c.label.clone(), payload }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionView {
    pub key: String,
    pub text: String,
}

/// A question as shown to participants: no answer, no explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub question_id: String,
    pub question_text: String,
    pub context: Vec<ContextView>,
    pub options: Vec<OptionView>,
}

fn question_view(q: &McQuestion) -> QuestionView {
    QuestionView {
        question_id: q.question_id.clone(),
        question_text: q.question_text.clone(),
        context: q.context.iter().map(context_view).collect(),
        options: q.options.iter().map(|(k, t)| OptionView { key: k.into(), text: t.into() }).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    /// Task and shared contexts, in that order.
    pub contexts: Vec<ContextView>,
    /// Canonical JSON of the task (annotations, groups, conditions,
    /// constraints) for client-side widgets.
    pub spec: Value,
}

fn task_view(ts: &TaskSetSpec, index: usize) -> TaskView {
    let task = &ts.tasks[index];
    let canonical: Value =
        serde_json::from_str(&crowdforge_core::spec::canonicalize_task_set(ts)).expect("canonical JSON parses");
    let spec = canonical["tasks"][index].clone();
    TaskView {
        task_id: task.task_id.clone(),
        contexts: task.contexts.iter().chain(ts.shared.iter()).map(context_view).collect(),
        spec,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateStatus {
    pub pipeline: String,
    pub status: QualificationStatus,
    /// Worker page of the gating exam.
    pub exam_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "page", rename_all = "snake_case")]
pub enum ExamPage {
    Preview {
        pipeline: String,
        instruction_html: String,
        sample_size: u32,
        max_attempts: u32,
    },
    Attempt {
        pipeline: String,
        instruction_html: String,
        attempt: u32,
        /// Chances left after this attempt.
        remaining: u32,
        questions: Vec<QuestionView>,
        token: String,
    },
    Passed {
        pipeline: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "page", rename_all = "snake_case")]
pub enum TaskPage {
    Preview { pipeline: String, instruction_html: String, task: TaskView },
    Assigned { pipeline: String, instruction_html: String, assignment_id: String, task: TaskView, token: String },
    /// Nothing left for this worker.
    Exhausted { pipeline: String },
}

/// Body of a worker submission.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubmitPayload {
    /// Exam: question id → chosen option.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<BTreeMap<String, String>>,
    /// Task: the response state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<ResponseState>,
}

/// The self-submitting form sent back to the worker's browser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalSubmit {
    pub action: String,
    pub fields: BTreeMap<String, String>,
}

/// Aggregate exam feedback; never per-question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamFeedback {
    pub mistakes: u32,
    pub passed: bool,
    pub remaining: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub pipeline: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exam: Option<ExamFeedback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment_id: Option<String>,
    pub external_submit: ExternalSubmit,
}

#[derive(Debug, Clone)]
enum PendingKind {
    Exam { version: u32, attempt: u32 },
    Task { version: u32, assignment: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenState {
    Open,
    InFlight,
    Used,
}

#[derive(Debug, Clone)]
struct Pending {
    pipeline: String,
    worker: String,
    kind: PendingKind,
    external_assignment: String,
    turk_submit_to: String,
    state: TokenState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchRequest {
    pub kind: HitKind,
    pub reward: f64,
    pub count: u32,
    #[serde(default)]
    pub gates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineView {
    pub name: String,
    pub version: u32,
    pub latest_version: u32,
    pub spec: Value,
    pub instruction_html: String,
    pub launches: Vec<Launch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub pipeline: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exam: Option<ExamReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_set: Option<TaskSetReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamStatus {
    pub version: u32,
    pub participants: u64,
    pub attempts: u64,
    pub graded_attempts: u64,
    pub passed: u64,
    pub in_progress: u64,
    pub failed_exhausted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSetStatus {
    pub version: u32,
    pub tasks_total: u64,
    pub tasks_complete: u64,
    pub submissions: u64,
    pub active_leases: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub pipeline: String,
    pub latest_version: u32,
    pub launches: Vec<Launch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exam: Option<ExamStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_set: Option<TaskSetStatus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TutorialFeedback {
    pub question_id: String,
    pub correct: bool,
    pub explanation: String,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Public base URL the marketplace frames, without trailing slash.
    pub external_url: String,
    /// Extra create_hit attempts after a transient failure.
    pub connector_retries: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { external_url: "http://127.0.0.1:8080".into(), connector_retries: 2 }
    }
}

pub struct Service {
    store: Arc<Store>,
    connector: Arc<dyn MarketplaceConnector>,
    clock: Arc<dyn Clock>,
    config: ServiceConfig,
    tokens: Mutex<HashMap<String, Pending>>,
    rng: Mutex<ChaCha20Rng>,
    emissions: AtomicU64,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service").field("store", &self.store).field("config", &self.config).finish_non_exhaustive()
    }
}

impl Service {
    pub fn new(
        store: Arc<Store>,
        connector: Arc<dyn MarketplaceConnector>,
        clock: Arc<dyn Clock>,
        config: ServiceConfig,
    ) -> Self {
        Service {
            store,
            connector,
            clock,
            config,
            tokens: Mutex::new(HashMap::new()),
            rng: Mutex::new(ChaCha20Rng::from_os_rng()),
            emissions: AtomicU64::new(0),
        }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// External-submit forms emitted so far.
    pub fn post_emissions(&self) -> u64 {
        self.emissions.load(Ordering::SeqCst)
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn new_token(&self) -> String {
        let bytes: [u8; 16] = self.rng.lock().random();
        hex::encode(bytes)
    }

    pub fn exam_url(&self, pipeline: &str) -> String {
        format!("{}/w/exam/{pipeline}", self.config.external_url)
    }

    pub fn task_url(&self, pipeline: &str) -> String {
        format!("{}/w/task/{pipeline}", self.config.external_url)
    }

    // ---- requester side ----

    pub fn put_pipeline(&self, name: &str, raw: &str) -> Result<PutOutcome> {
        Ok(self.store.put_pipeline(name, raw, self.now())?)
    }

    pub fn list_pipelines(&self) -> Vec<String> {
        self.store.pipeline_names()
    }

    pub fn get_pipeline(&self, name: &str, version: Option<u32>) -> Result<PipelineView> {
        self.store.read(name, |rec| {
            let sv = match version {
                Some(v) => rec.version(v).ok_or_else(|| ServiceError::NotFound(format!("{name} version {v}")))?,
                None => rec.latest(),
            };
            Ok(PipelineView {
                name: name.into(),
                version: sv.version,
                latest_version: rec.latest().version,
                spec: serde_json::from_str(&sv.canonical).expect("canonical JSON parses"),
                instruction_html: render_instruction(&sv.spec.instruction),
                launches: rec.launches.clone(),
            })
        })?
    }

    /// Creates HITs for the latest version. Retrying with the same client
    /// token returns the original launch.
    pub fn launch(&self, name: &str, req: &LaunchRequest) -> Result<Launch> {
        if !(req.reward.is_finite() && req.reward >= 0.0) {
            return Err(StoreError::InvalidLaunch("reward must be a non-negative amount".into()).into());
        }
        if req.count == 0 {
            return Err(StoreError::InvalidLaunch("count must be positive".into()).into());
        }
        for gate in &req.gates {
            let has_exam = self.store.read(gate, |r| r.latest().spec.exam.is_some()).map_err(|_| {
                StoreError::InvalidLaunch(format!("gate `{gate}` is not a known pipeline"))
            })?;
            if !has_exam {
                return Err(StoreError::InvalidLaunch(format!("gate `{gate}` has no exam")).into());
            }
        }
        let token = req.client_token.clone().unwrap_or_else(|| self.new_token());
        let (version, has_part) = self.store.read(name, |rec| {
            let sv = rec.latest();
            let has = match req.kind {
                HitKind::Exam => sv.spec.exam.is_some(),
                HitKind::TaskSet => sv.spec.task_set.is_some(),
            };
            (sv.version, has)
        })?;
        if let Some(existing) = self.store.read(name, |rec| rec.launches.iter().find(|l| l.client_token == token).cloned())? {
            return Ok(existing);
        }
        if !has_part {
            return Err(StoreError::InvalidLaunch(format!("{name} has no {}", req.kind.as_str())).into());
        }
        let external_url = match req.kind {
            HitKind::Exam => self.exam_url(name),
            HitKind::TaskSet => self.task_url(name),
        };
        let hit = HitRequest {
            kind: req.kind,
            title: format!("{name} ({})", req.kind.as_str()),
            external_url: external_url.clone(),
            reward: req.reward,
            count: req.count,
            client_token: token.clone(),
        };
        let mut tries = 0;
        let hit_ids = loop {
            match self.connector.create_hit(&hit) {
                Ok(ids) => break ids,
                Err(ConnectorError::Transient(msg)) if tries < self.config.connector_retries => {
                    tracing::warn!(%msg, tries, "create_hit failed, retrying");
                    tries += 1;
                }
                Err(e) => return Err(e.into()),
            }
        };
        let launch = Launch {
            id: String::new(),
            version,
            config: LaunchConfig { kind: req.kind, reward: req.reward, count: req.count, gates: req.gates.clone() },
            hit_ids,
            client_token: token,
            external_url,
            created_at: self.now(),
        };
        match self.store.apply(Event::Launch { name: name.into(), launch })? {
            Outcome::Launch(l) => Ok(l),
            other => unreachable!("launch produced {other:?}"),
        }
    }

    pub fn report(&self, name: &str, reward: Option<f64>) -> Result<PipelineReport> {
        let now = self.now();
        Ok(self.store.read(name, |rec| {
            let exam_version = rec.current_launch(HitKind::Exam).map(|l| l.version);
            let exam = exam_version.and_then(|v| {
                let pool = rec.version(v)?.spec.exam.as_ref()?;
                Some(exam_report(pool, &rec.exam_sessions(v)))
            });
            let task_set = rec.current_launch(HitKind::TaskSet).and_then(|l| {
                let ts = rec.version(l.version)?.spec.task_set.as_ref()?;
                let mut book = rec.books.get(&l.version)?.clone();
                book.expire(now);
                let reward = reward.or(Some(l.config.reward));
                Some(task_progress(ts, &book, reward))
            });
            PipelineReport { pipeline: name.into(), exam, task_set }
        })?)
    }

    pub fn status(&self, name: &str) -> Result<StatusView> {
        let now = self.now();
        Ok(self.store.read(name, |rec| {
            let exam = rec.current_launch(HitKind::Exam).and_then(|l| {
                let cfg = rec.version(l.version)?.spec.exam_config?;
                let sessions = rec.exam_sessions(l.version);
                let count = |s: QualificationStatus| sessions.iter().filter(|x| x.status(&cfg) == s).count() as u64;
                Some(ExamStatus {
                    version: l.version,
                    participants: sessions.len() as u64,
                    attempts: sessions.iter().map(|s| s.attempts.len() as u64).sum(),
                    graded_attempts: sessions.iter().map(|s| s.graded().count() as u64).sum(),
                    passed: count(QualificationStatus::Passed),
                    in_progress: count(QualificationStatus::InProgress),
                    failed_exhausted: count(QualificationStatus::FailedExhausted),
                })
            });
            let task_set = rec.current_launch(HitKind::TaskSet).and_then(|l| {
                let mut book = rec.books.get(&l.version)?.clone();
                book.expire(now);
                let n = book.task_ids.len();
                Some(TaskSetStatus {
                    version: l.version,
                    tasks_total: n as u64,
                    tasks_complete: (0..n).filter(|&t| book.is_complete(t)).count() as u64,
                    submissions: book.assignments.iter().filter(|a| a.state == AssignmentState::Submitted).count() as u64,
                    active_leases: book.assignments.iter().filter(|a| a.is_active()).count() as u64,
                })
            });
            StatusView { pipeline: name.into(), latest_version: rec.latest().version, launches: rec.launches.clone(), exam, task_set }
        })?)
    }

    pub fn export_jsonl(&self, name: &str) -> Result<String> {
        let secret = self.store.secret().to_vec();
        Ok(self.store.read(name, |rec| export::dataset_jsonl(rec, &secret))?)
    }

    pub fn annotators(&self, name: &str) -> Result<Vec<AnnotatorRow>> {
        Ok(self.store.read(name, export::annotators)?)
    }

    pub fn bundle(&self, name: &str, version: Option<u32>) -> Result<Vec<u8>> {
        self.store.read(name, |rec| {
            let sv = match version {
                Some(v) => rec.version(v).ok_or_else(|| ServiceError::NotFound(format!("{name} version {v}")))?,
                None => rec.latest(),
            };
            Ok(bundle::export_bundle(&sv.spec, &rec.launch_configs))
        })?
    }

    /// Imports a bundle as version 1 of a new pipeline `name`.
    pub fn import_bundle(&self, name: &str, bytes: &[u8]) -> Result<PutOutcome> {
        let imported = bundle::import_bundle(bytes, name, self.store.registry())?;
        let ev = Event::PutPipeline {
            name: name.into(),
            canonical: canonicalize(&imported.spec),
            launch_configs: Some(imported.launch_configs),
            fresh: true,
            at: self.now(),
        };
        match self.store.apply(ev)? {
            Outcome::Version(v) => Ok(PutOutcome { version: v, created: true, warnings: Vec::new() }),
            other => unreachable!("put produced {other:?}"),
        }
    }

    /// Expires overdue leases. Journals nothing when none are due.
    pub fn sweep(&self) -> Result<usize> {
        let now = self.now();
        let due = self.store.pipeline_names().iter().any(|n| {
            self.store
                .read(n, |r| r.books.values().any(|b| b.assignments.iter().any(|a| a.is_active() && now >= a.deadline)))
                .unwrap_or(false)
        });
        if !due {
            return Ok(0);
        }
        match self.store.apply(Event::Sweep { at: now })? {
            Outcome::Swept(n) => Ok(n),
            other => unreachable!("sweep produced {other:?}"),
        }
    }

    // ---- worker side ----

    fn latest_spec(&self, name: &str) -> Result<PipelineSpec> {
        Ok(self.store.read(name, |r| r.latest().spec.clone())?)
    }

    pub fn tutorial(&self, name: &str) -> Result<Vec<QuestionView>> {
        let spec = self.latest_spec(name)?;
        let t = spec.tutorial.ok_or_else(|| ServiceError::NotFound(format!("tutorial of {name}")))?;
        Ok(t.questions.iter().map(question_view).collect())
    }

    pub fn check_tutorial(&self, name: &str, question_id: &str, choice: &str) -> Result<TutorialFeedback> {
        let spec = self.latest_spec(name)?;
        let t = spec.tutorial.ok_or_else(|| ServiceError::NotFound(format!("tutorial of {name}")))?;
        let q = t.get(question_id).ok_or_else(|| ServiceError::NotFound(format!("tutorial question {question_id}")))?;
        let (correct, explanation) = check_tutorial_answer(q, choice).map_err(StoreError::Exam)?;
        Ok(TutorialFeedback { question_id: question_id.into(), correct, explanation })
    }

    fn check_gates(&self, gates: &[String], worker: &str) -> Result<()> {
        let statuses: Vec<GateStatus> = gates
            .iter()
            .map(|g| GateStatus { pipeline: g.clone(), status: self.store.qualification(g, worker), exam_url: self.exam_url(g) })
            .collect();
        if statuses.iter().all(|s| s.status == QualificationStatus::Passed) {
            Ok(())
        } else {
            Err(ServiceError::NotQualified(statuses))
        }
    }

    fn issue_token(&self, pending: Pending) -> String {
        let token = self.new_token();
        self.tokens.lock().insert(token.clone(), pending);
        token
    }

    pub fn exam_page(&self, name: &str, params: &ExternalParams) -> Result<ExamPage> {
        let launch = self
            .store
            .read(name, |r| r.current_launch(HitKind::Exam).cloned())?
            .ok_or_else(|| StoreError::NotLaunched(format!("exam of {name}")))?;
        let spec = self.store.read(name, |r| r.version(launch.version).map(|sv| sv.spec.clone()))?.expect("launched version");
        let cfg = spec.exam_config.expect("launched exams have a config");
        let instruction_html = render_instruction(&spec.instruction);
        if params.is_preview() {
            return Ok(ExamPage::Preview {
                pipeline: name.into(),
                instruction_html,
                sample_size: cfg.sample_size,
                max_attempts: cfg.max_attempts,
            });
        }
        let b = params.bind()?;
        self.check_gates(&launch.config.gates, &b.worker_id)?;
        let ev = Event::ExamOpen {
            name: name.into(),
            version: launch.version,
            participant: b.worker_id.clone(),
            resume: true,
            at: self.now(),
        };
        let attempt = match self.store.apply(ev) {
            Ok(Outcome::Attempt(a)) => a,
            Ok(other) => unreachable!("exam open produced {other:?}"),
            Err(StoreError::Exam(ExamError::AlreadyPassed)) => return Ok(ExamPage::Passed { pipeline: name.into() }),
            Err(e) => return Err(e.into()),
        };
        let pool = spec.exam.as_ref().expect("launched exams have a pool");
        let questions = attempt.sampled.iter().filter_map(|id| pool.get(id)).map(question_view).collect();
        let token = self.issue_token(Pending {
            pipeline: name.into(),
            worker: b.worker_id,
            kind: PendingKind::Exam { version: launch.version, attempt: attempt.index },
            external_assignment: b.assignment_id,
            turk_submit_to: b.turk_submit_to,
            state: TokenState::Open,
        });
        Ok(ExamPage::Attempt {
            pipeline: name.into(),
            instruction_html,
            attempt: attempt.index,
            remaining: cfg.max_attempts.saturating_sub(attempt.index),
            questions,
            token,
        })
    }

    pub fn task_page(&self, name: &str, params: &ExternalParams) -> Result<TaskPage> {
        let launch = self
            .store
            .read(name, |r| r.current_launch(HitKind::TaskSet).cloned())?
            .ok_or_else(|| StoreError::NotLaunched(format!("task set of {name}")))?;
        let spec = self.store.read(name, |r| r.version(launch.version).map(|sv| sv.spec.clone()))?.expect("launched version");
        let ts = spec.task_set.as_ref().expect("launched task sets exist");
        let instruction_html = render_instruction(&spec.instruction);
        if params.is_preview() {
            return Ok(TaskPage::Preview { pipeline: name.into(), instruction_html, task: task_view(ts, 0) });
        }
        let b = params.bind()?;
        self.check_gates(&launch.config.gates, &b.worker_id)?;
        let ev = Event::Lease {
            name: name.into(),
            version: launch.version,
            worker: b.worker_id.clone(),
            external: Some(ExternalIds { hit_id: b.hit_id.clone(), assignment_id: b.assignment_id.clone() }),
            at: self.now(),
        };
        let assignment = match self.store.apply(ev)? {
            Outcome::Lease(Some(a)) => a,
            Outcome::Lease(None) => return Ok(TaskPage::Exhausted { pipeline: name.into() }),
            other => unreachable!("lease produced {other:?}"),
        };
        let token = self.issue_token(Pending {
            pipeline: name.into(),
            worker: b.worker_id,
            kind: PendingKind::Task { version: launch.version, assignment: assignment.id.clone() },
            external_assignment: b.assignment_id,
            turk_submit_to: b.turk_submit_to,
            state: TokenState::Open,
        });
        Ok(TaskPage::Assigned {
            pipeline: name.into(),
            instruction_html,
            assignment_id: assignment.id.clone(),
            task: task_view(ts, assignment.task_index),
            token,
        })
    }

    fn set_token_state(&self, token: &str, state: TokenState) {
        if let Some(p) = self.tokens.lock().get_mut(token) {
            p.state = state;
        }
    }

    pub fn submit(&self, token: &str, payload: SubmitPayload) -> Result<SubmitOutcome> {
        let pending = {
            let mut tokens = self.tokens.lock();
            let p = tokens.get_mut(token).ok_or(ServiceError::UnknownToken)?;
            if p.state != TokenState::Open {
                return Err(ServiceError::TokenReplay);
            }
            p.state = TokenState::InFlight;
            p.clone()
        };
        let result = self.submit_pending(&pending, payload);
        match &result {
            Ok(_) => self.set_token_state(token, TokenState::Used),
            // Already-final outcomes burn the token; anything else may be retried.
            Err(ServiceError::Store(StoreError::Exam(ExamError::AlreadySubmitted(_) | ExamError::Superseded(_))))
            | Err(ServiceError::Store(StoreError::Submit(SubmitError::AlreadySubmitted | SubmitError::LeaseExpired))) => {
                self.set_token_state(token, TokenState::Used)
            }
            Err(_) => self.set_token_state(token, TokenState::Open),
        }
        result
    }

    fn submit_pending(&self, p: &Pending, payload: SubmitPayload) -> Result<SubmitOutcome> {
        let now = self.now();
        let mut fields = BTreeMap::from([("assignmentId".to_string(), p.external_assignment.clone())]);
        let (exam, assignment_id) = match &p.kind {
            PendingKind::Exam { version, attempt } => {
                let answers = payload.answers.ok_or_else(|| ServiceError::BadRequest("missing `answers`".into()))?;
                let ev = Event::ExamSubmit {
                    name: p.pipeline.clone(),
                    version: *version,
                    participant: p.worker.clone(),
                    attempt: *attempt,
                    answers,
                    at: now,
                };
                let grade = match self.store.apply(ev)? {
                    Outcome::Graded(g) => g,
                    other => unreachable!("exam submit produced {other:?}"),
                };
                let max = self.store.read(&p.pipeline, |r| r.version(*version).and_then(|sv| sv.spec.exam_config))?;
                let remaining = max.map_or(0, |c| c.max_attempts.saturating_sub(*attempt));
                if grade.passed {
                    if let Err(e) = self.connector.grant_qualification(&p.worker, &qualification_name(&p.pipeline)) {
                        tracing::warn!(error = %e, worker = %p.worker, "grant_qualification failed");
                    }
                }
                fields.insert("passed".into(), grade.passed.to_string());
                (Some(ExamFeedback { mistakes: grade.mistakes, passed: grade.passed, remaining }), None)
            }
            PendingKind::Task { version, assignment } => {
                let response = payload.response.ok_or_else(|| ServiceError::BadRequest("missing `response`".into()))?;
                let ev = Event::Submit {
                    name: p.pipeline.clone(),
                    version: *version,
                    assignment: assignment.clone(),
                    worker: p.worker.clone(),
                    response,
                    at: now,
                };
                match self.store.apply(ev) {
                    Ok(_) => {}
                    Err(StoreError::Submit(SubmitError::Violations(v))) => return Err(ServiceError::Violations(v)),
                    Err(e) => return Err(e.into()),
                }
                (None, Some(assignment.clone()))
            }
        };
        self.emissions.fetch_add(1, Ordering::SeqCst);
        let action = format!("{}{EXTERNAL_SUBMIT_PATH}", p.turk_submit_to.trim_end_matches('/'));
        Ok(SubmitOutcome { pipeline: p.pipeline.clone(), exam, assignment_id, external_submit: ExternalSubmit { action, fields } })
    }
}
