//! Journaled pipeline store.
//!
//! All state lives in memory behind one reader-writer lock. Every mutation
//! is an [`Event`]; it is applied to the state and, if it succeeds, appended
//! to `journal.jsonl` as one checksummed line before the lock is released.
//! Opening a data directory replays the journal through the same `apply`
//! code. A torn final line (crash mid-append) is truncated away, so a
//! response is either fully stored or absent; damage anywhere else is
//! reported as corruption.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crowdforge_core::constraint::Registry;
use crowdforge_core::exam::{exam_digest, Attempt, ExamContext, ExamError, ExamSession, Grade, QualificationStatus};
use crowdforge_core::lease::{Assignment, AssignmentBook, ExternalIds, SubmitError, DEFAULT_LEASE_MS};
use crowdforge_core::spec::{self, canonicalize, Diagnostic, PipelineSpec};
use crowdforge_core::ResponseState;
use parking_lot::RwLock;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::connector::HitKind;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const SECRET_FILE: &str = "secret";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("specification has {} error(s)", .0.iter().filter(|d| d.is_error()).count())]
    Invalid(Vec<Diagnostic>),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    InvalidLaunch(String),
    #[error("{0} has not been launched")]
    NotLaunched(String),
    #[error(transparent)]
    Exam(#[from] ExamError),
    #[error(transparent)]
    Submit(#[from] SubmitError),
    #[error("journal line {line} is corrupt: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("journal write failed earlier; store is read-only")]
    Poisoned,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::NotFound(_) => "not-found",
            StoreError::Invalid(_) => "invalid-spec",
            StoreError::Conflict(_) => "conflict",
            StoreError::InvalidLaunch(_) => "invalid-launch-config",
            StoreError::NotLaunched(_) => "not-launched",
            StoreError::Exam(e) => e.code(),
            StoreError::Submit(e) => e.code(),
            StoreError::Corrupt { .. } => "journal-corrupt",
            StoreError::Poisoned => "store-poisoned",
            StoreError::Io(_) => "io-error",
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// What a launch asks the marketplace for. Bundles carry these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchConfig {
    pub kind: HitKind,
    pub reward: f64,
    pub count: u32,
    /// Pipelines whose exam a worker must have passed (task sets only).
    #[serde(default)]
    pub gates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Launch {
    pub id: String,
    pub version: u32,
    pub config: LaunchConfig,
    pub hit_ids: Vec<String>,
    pub client_token: String,
    pub external_url: String,
    pub created_at: u64,
}

#[derive(Debug, Clone)]
pub struct StoredVersion {
    pub version: u32,
    pub spec: PipelineSpec,
    pub canonical: String,
    pub exam_digest: Option<String>,
    pub created_at: u64,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineRecord {
    pub name: String,
    pub versions: Vec<StoredVersion>,
    pub launches: Vec<Launch>,
    pub launch_configs: Vec<LaunchConfig>,
    /// (version, participant) → session
    pub sessions: BTreeMap<(u32, String), ExamSession>,
    /// version → assignment book of its task-set launch
    pub books: BTreeMap<u32, AssignmentBook>,
}

impl PipelineRecord {
    pub fn latest(&self) -> &StoredVersion {
        self.versions.last().expect("records are created with a version")
    }

    pub fn version(&self, v: u32) -> Option<&StoredVersion> {
        self.versions.get((v as usize).checked_sub(1)?)
    }

    /// Most recent launch of `kind`.
    pub fn current_launch(&self, kind: HitKind) -> Option<&Launch> {
        self.launches.iter().rev().find(|l| l.config.kind == kind)
    }

    pub fn exam_sessions(&self, version: u32) -> Vec<ExamSession> {
        self.sessions.range((version, String::new())..).take_while(|((v, _), _)| *v == version).map(|(_, s)| s.clone()).collect()
    }

    /// Passed on any exam version counts; otherwise the status on the
    /// current exam launch.
    pub fn qualification(&self, participant: &str) -> QualificationStatus {
        let mut status = QualificationStatus::None;
        for ((v, p), s) in &self.sessions {
            if p != participant {
                continue;
            }
            if s.passed() {
                return QualificationStatus::Passed;
            }
            if self.current_launch(HitKind::Exam).is_some_and(|l| l.version == *v) {
                if let Some(cfg) = self.version(*v).and_then(|sv| sv.spec.exam_config) {
                    status = s.status(&cfg);
                }
            }
        }
        status
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Event {
    PutPipeline {
        name: String,
        canonical: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        launch_configs: Option<Vec<LaunchConfig>>,
        /// Import: the name must not exist yet.
        #[serde(default)]
        fresh: bool,
        at: u64,
    },
    Launch {
        name: String,
        launch: Launch,
    },
    ExamOpen {
        name: String,
        version: u32,
        participant: String,
        resume: bool,
        at: u64,
    },
    ExamSubmit {
        name: String,
        version: u32,
        participant: String,
        attempt: u32,
        answers: BTreeMap<String, String>,
        at: u64,
    },
    Lease {
        name: String,
        version: u32,
        worker: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        external: Option<ExternalIds>,
        at: u64,
    },
    Submit {
        name: String,
        version: u32,
        assignment: String,
        worker: String,
        response: ResponseState,
        at: u64,
    },
    Sweep {
        at: u64,
    },
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Version(u32),
    Launch(Launch),
    Attempt(Attempt),
    Graded(Grade),
    Lease(Option<Assignment>),
    Submitted(Assignment),
    Swept(usize),
}

#[derive(Debug, Default)]
struct State {
    pipelines: BTreeMap<String, PipelineRecord>,
}

struct Ctx<'a> {
    secret: &'a [u8],
    registry: &'a Registry,
    lease_ms: u64,
}

fn parse_stored(canonical: &str, registry: &Registry) -> Result<PipelineSpec> {
    spec::parse_pipeline(canonical, registry).map(|p| p.value).map_err(StoreError::Invalid)
}

fn exam_ctx<'a>(sv: &'a StoredVersion, secret: &'a [u8]) -> Result<ExamContext<'a>> {
    match (&sv.spec.exam, &sv.spec.exam_config, &sv.exam_digest) {
        (Some(pool), Some(config), Some(digest)) => Ok(ExamContext { pool, config, digest, secret }),
        _ => Err(StoreError::NotLaunched(format!("exam of version {}", sv.version))),
    }
}

impl State {
    fn record_mut(&mut self, name: &str) -> Result<&mut PipelineRecord> {
        self.pipelines.get_mut(name).ok_or_else(|| StoreError::NotFound(format!("pipeline `{name}`")))
    }

    fn apply(&mut self, ev: &Event, ctx: &Ctx<'_>) -> Result<Outcome> {
        match ev {
            Event::PutPipeline { name, canonical, launch_configs, fresh, at } => {
                let spec = parse_stored(canonical, ctx.registry)?;
                let exists = self.pipelines.contains_key(name);
                if *fresh && exists {
                    return Err(StoreError::Conflict(format!("pipeline `{name}` already exists")));
                }
                let rec = self
                    .pipelines
                    .entry(name.clone())
                    .or_insert_with(|| PipelineRecord { name: name.clone(), ..Default::default() });
                let expected = rec.versions.len() as u32 + 1;
                if spec.version != expected || spec.name != *name {
                    return Err(StoreError::Conflict(format!("expected {name} version {expected}")));
                }
                let exam_digest = spec.exam.as_ref().map(exam_digest);
                rec.versions.push(StoredVersion {
                    version: expected,
                    spec,
                    canonical: canonical.clone(),
                    exam_digest,
                    created_at: *at,
                });
                if let Some(configs) = launch_configs {
                    rec.launch_configs = configs.clone();
                }
                Ok(Outcome::Version(expected))
            }
            Event::Launch { name, launch } => {
                let lease_ms = ctx.lease_ms;
                let rec = self.record_mut(name)?;
                if let Some(existing) = rec.launches.iter().find(|l| l.client_token == launch.client_token) {
                    return Ok(Outcome::Launch(existing.clone()));
                }
                let sv = rec
                    .version(launch.version)
                    .ok_or_else(|| StoreError::NotFound(format!("{name} version {}", launch.version)))?;
                match launch.config.kind {
                    HitKind::Exam if sv.spec.exam.is_none() => {
                        return Err(StoreError::InvalidLaunch(format!("{name} has no exam")))
                    }
                    HitKind::TaskSet => {
                        let ts = sv
                            .spec
                            .task_set
                            .as_ref()
                            .ok_or_else(|| StoreError::InvalidLaunch(format!("{name} has no task set")))?;
                        let book = AssignmentBook::new(ts, lease_ms);
                        rec.books.entry(launch.version).or_insert(book);
                    }
                    HitKind::Exam => {}
                }
                if !rec.launch_configs.contains(&launch.config) {
                    rec.launch_configs.push(launch.config.clone());
                }
                let mut launch = launch.clone();
                launch.id = format!("L{}", rec.launches.len() + 1);
                rec.launches.push(launch.clone());
                Ok(Outcome::Launch(launch))
            }
            Event::ExamOpen { name, version, participant, resume, at } => {
                let rec = self.record_mut(name)?;
                let sv = rec.version(*version).ok_or_else(|| StoreError::NotFound(format!("{name} version {version}")))?;
                let exam = exam_ctx(sv, ctx.secret)?;
                let mut session = rec
                    .sessions
                    .get(&(*version, participant.clone()))
                    .cloned()
                    .unwrap_or_else(|| ExamSession::new(name.clone(), *version, participant.clone()));
                let attempt = if *resume { session.resume_or_open(exam, *at)? } else { session.open_attempt(exam, *at)? }.clone();
                rec.sessions.insert((*version, participant.clone()), session);
                Ok(Outcome::Attempt(attempt))
            }
            Event::ExamSubmit { name, version, participant, attempt, answers, at } => {
                let rec = self.record_mut(name)?;
                let sv = rec
                    .versions
                    .get((*version as usize).wrapping_sub(1))
                    .ok_or_else(|| StoreError::NotFound(format!("{name} version {version}")))?;
                let exam = exam_ctx(sv, ctx.secret)?;
                let session = rec
                    .sessions
                    .get_mut(&(*version, participant.clone()))
                    .ok_or(StoreError::Exam(ExamError::UnknownAttempt(*attempt)))?;
                let grade = session.submit_attempt(*attempt, answers.clone(), exam, *at)?;
                Ok(Outcome::Graded(grade))
            }
            Event::Lease { name, version, worker, external, at } => {
                let rec = self.record_mut(name)?;
                let book = rec.books.get_mut(version).ok_or_else(|| StoreError::NotLaunched(format!("task set of {name}")))?;
                let Some(id) = book.next_assignment(worker, *at).map(|a| a.id.clone()) else {
                    return Ok(Outcome::Lease(None));
                };
                if let Some(ext) = external {
                    if book.get(&id).is_some_and(|a| a.external.is_none()) {
                        book.set_external(&id, ext.clone());
                    }
                }
                Ok(Outcome::Lease(book.get(&id).cloned()))
            }
            Event::Submit { name, version, assignment, worker, response, at } => {
                let rec = self.record_mut(name)?;
                let ts = rec
                    .version(*version)
                    .and_then(|sv| sv.spec.task_set.clone())
                    .ok_or_else(|| StoreError::NotFound(format!("task set of {name} version {version}")))?;
                let book = rec.books.get_mut(version).ok_or_else(|| StoreError::NotLaunched(format!("task set of {name}")))?;
                let a = book.submit(&ts, ctx.registry, assignment, worker, response, *at)?;
                Ok(Outcome::Submitted(a.clone()))
            }
            Event::Sweep { at } => {
                let n = self.pipelines.values_mut().flat_map(|r| r.books.values_mut()).map(|b| b.expire(*at).len()).sum();
                Ok(Outcome::Swept(n))
            }
        }
    }
}

struct Journal {
    file: File,
    fsync: bool,
}

fn line_checksum(body: &str) -> String {
    hex::encode(&Sha256::digest(body.as_bytes())[..4])
}

impl Journal {
    fn append(&mut self, ev: &Event) -> io::Result<()> {
        let body = serde_json::to_string(ev).map_err(io::Error::other)?;
        let line = format!("{} {}\n", line_checksum(&body), body);
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }
}

fn decode_line(line: &str) -> Option<Event> {
    let (sum, body) = line.split_once(' ')?;
    if line_checksum(body) != sum {
        return None;
    }
    serde_json::from_str(body).ok()
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// Overrides the secret file; used for seeds and worker pseudonyms.
    pub secret: Option<Vec<u8>>,
    pub lease_ms: u64,
    /// fsync after every journal append.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { secret: None, lease_ms: DEFAULT_LEASE_MS, fsync: true }
    }
}

struct Inner {
    state: State,
    journal: Option<Journal>,
    poisoned: bool,
}

pub struct Store {
    inner: RwLock<Inner>,
    secret: Vec<u8>,
    registry: Arc<Registry>,
    lease_ms: u64,
    dir: Option<PathBuf>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("dir", &self.dir).field("lease_ms", &self.lease_ms).finish_non_exhaustive()
    }
}

fn load_or_create_secret(dir: &Path) -> io::Result<Vec<u8>> {
    let path = dir.join(SECRET_FILE);
    match fs::read_to_string(&path) {
        Ok(s) => hex::decode(s.trim()).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let mut secret = vec![0u8; 32];
            rand::rng().fill_bytes(&mut secret);
            fs::write(&path, hex::encode(&secret))?;
            Ok(secret)
        }
        Err(e) => Err(e),
    }
}

impl Store {
    pub fn in_memory(secret: impl Into<Vec<u8>>, registry: Arc<Registry>) -> Self {
        Store {
            inner: RwLock::new(Inner { state: State::default(), journal: None, poisoned: false }),
            secret: secret.into(),
            registry,
            lease_ms: DEFAULT_LEASE_MS,
            dir: None,
        }
    }

    pub fn with_lease_ms(mut self, lease_ms: u64) -> Self {
        self.lease_ms = lease_ms;
        self
    }

    /// Opens (or creates) a data directory and replays its journal.
    pub fn open(dir: &Path, registry: Arc<Registry>, opts: StoreOptions) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let secret = match opts.secret {
            Some(s) => s,
            None => load_or_create_secret(dir)?,
        };
        let path = dir.join(JOURNAL_FILE);
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut state = State::default();
        let ctx = Ctx { secret: &secret, registry: &registry, lease_ms: opts.lease_ms };
        let mut reader = BufReader::new(&mut file);
        let mut offset = 0u64;
        let mut lineno = 0usize;
        let mut torn_at = None;
        loop {
            let mut buf = Vec::new();
            let n = reader.read_until(b'\n', &mut buf)?;
            if n == 0 {
                break;
            }
            lineno += 1;
            let complete = buf.last() == Some(&b'\n');
            let event = std::str::from_utf8(&buf).ok().and_then(|s| decode_line(s.trim_end_matches('\n')));
            match event {
                Some(ev) if complete => {
                    state.apply(&ev, &ctx).map_err(|e| StoreError::Corrupt { line: lineno, reason: e.to_string() })?;
                }
                _ => {
                    let mut rest = Vec::new();
                    reader.read_to_end(&mut rest)?;
                    if !rest.is_empty() {
                        return Err(StoreError::Corrupt { line: lineno, reason: "checksum or syntax mismatch".into() });
                    }
                    torn_at = Some(offset);
                    break;
                }
            }
            offset += n as u64;
        }
        drop(reader);
        if let Some(at) = torn_at {
            tracing::warn!(line = lineno, "truncating torn journal tail");
            file.set_len(at)?;
            file.seek(SeekFrom::End(0))?;
            file.sync_all()?;
        }
        Ok(Store {
            inner: RwLock::new(Inner { state, journal: Some(Journal { file, fsync: opts.fsync }), poisoned: false }),
            secret,
            registry,
            lease_ms: opts.lease_ms,
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn secret(&self) -> &[u8] {
        &self.secret
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Applies and journals one event atomically with respect to readers.
    pub fn apply(&self, ev: Event) -> Result<Outcome> {
        let mut inner = self.inner.write();
        if inner.poisoned {
            return Err(StoreError::Poisoned);
        }
        let ctx = Ctx { secret: &self.secret, registry: &self.registry, lease_ms: self.lease_ms };
        let out = inner.state.apply(&ev, &ctx)?;
        if let Some(j) = inner.journal.as_mut() {
            if let Err(e) = j.append(&ev) {
                // Memory is now ahead of disk; refuse further writes.
                inner.poisoned = true;
                return Err(e.into());
            }
        }
        Ok(out)
    }

    pub fn pipeline_names(&self) -> Vec<String> {
        self.inner.read().state.pipelines.keys().cloned().collect()
    }

    pub fn read<R>(&self, name: &str, f: impl FnOnce(&PipelineRecord) -> R) -> Result<R> {
        let inner = self.inner.read();
        let rec = inner.state.pipelines.get(name).ok_or_else(|| StoreError::NotFound(format!("pipeline `{name}`")))?;
        Ok(f(rec))
    }

    /// Stores a pipeline document. Content identical to the latest version
    /// is a no-op; any other change becomes the next version.
    pub fn put_pipeline(&self, name: &str, raw: &str, at: u64) -> Result<PutOutcome> {
        if !spec::is_valid_name(name) {
            return Err(StoreError::Invalid(vec![Diagnostic::error(
                "/name",
                spec::codes::INVALID_NAME,
                format!("`{name}` is not a valid pipeline name"),
            )]));
        }
        let parsed = spec::parse_pipeline(raw, &self.registry).map_err(StoreError::Invalid)?;
        let mut spec = parsed.value;
        spec.name = name.to_string();
        // Retry if a concurrent writer bumped the version in between.
        loop {
            let latest = self.read(name, |r| (r.latest().version, r.latest().canonical.clone())).ok();
            let next = latest.as_ref().map_or(1, |(v, _)| v + 1);
            if let Some((v, canonical)) = &latest {
                spec.version = *v;
                if canonicalize(&spec) == *canonical {
                    return Ok(PutOutcome { version: *v, created: false, warnings: parsed.warnings });
                }
            }
            spec.version = next;
            let ev = Event::PutPipeline {
                name: name.into(),
                canonical: canonicalize(&spec),
                launch_configs: None,
                fresh: false,
                at,
            };
            match self.apply(ev) {
                Ok(_) => return Ok(PutOutcome { version: next, created: true, warnings: parsed.warnings }),
                Err(StoreError::Conflict(_)) => continue,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn qualification(&self, exam_pipeline: &str, worker: &str) -> QualificationStatus {
        self.read(exam_pipeline, |r| r.qualification(worker)).unwrap_or(QualificationStatus::None)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PutOutcome {
    pub version: u32,
    pub created: bool,
    pub warnings: Vec<Diagnostic>,
}
