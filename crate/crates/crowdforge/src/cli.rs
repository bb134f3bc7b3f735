//! Requester command-line client.
//!
//! Settings resolve as flags, then environment, then a TOML config file
//! (`--config`, `CROWDFORGE_CONFIG` or `./crowdforge.toml`). Exit codes: 0
//! on success, 1 when a spec or request fails validation, 2 on transport
//! and every other failure.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use comfy_table::{presets::UTF8_BORDERS_ONLY, Table};
use crowdforge_core::constraint::Registry;
use crowdforge_core::spec::{self, Diagnostic, DocumentKind, PipelineSpec, Severity};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::clock::SystemClock;
use crate::connector::{HitKind, MockConnector};
use crate::gateway::http::{parse_tokens, serve, AppState, ErrorBody};
use crate::gateway::{LaunchRequest, Service, ServiceConfig};
use crate::sim::{self, ExamTarget, HttpWorkerClient, LocalMarket, SimConfig, TaskTarget};
use crate::store::{Store, StoreOptions};

pub const DEFAULT_API_URL: &str = "http://127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "crowdforge", version, about = "Declarative crowdsourcing pipelines: push specs, launch, monitor, download")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML file with api_url, token, pipeline and format keys.
    #[arg(long, global = true, env = "CROWDFORGE_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "CROWDFORGE_API_URL")]
    pub api_url: Option<String>,
    #[arg(long, global = true, env = "CROWDFORGE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    /// Pipeline the command works on.
    #[arg(long, short = 'p', global = true, env = "CROWDFORGE_PIPELINE")]
    pub pipeline: Option<String>,
    #[arg(long, global = true, value_enum, env = "CROWDFORGE_FORMAT")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LaunchKind {
    Exam,
    Taskset,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upload a pipeline document, or assemble one from parts
    /// (instruction .md, tutorial/exam question sets, exam config, task set).
    Push {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Check spec files offline.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    Launch {
        #[arg(value_enum)]
        kind: LaunchKind,
        #[arg(long)]
        reward: f64,
        #[arg(long)]
        count: u32,
        /// Pipeline whose exam a worker must have passed; repeatable.
        #[arg(long = "gate")]
        gates: Vec<String>,
        /// Idempotency token; relaunching with the same token is a no-op.
        #[arg(long)]
        client_token: Option<String>,
    },
    Status,
    Report {
        /// HIT reward used for the hourly pay estimate.
        #[arg(long)]
        reward: Option<f64>,
    },
    /// Download the annotation dataset as JSONL.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
    /// Download the re-launchable pipeline bundle.
    Bundle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        version: Option<u32>,
    },
    Annotators,
    /// Create a pipeline from a bundle.
    Import {
        file: PathBuf,
    },
    /// Run the server with the mock marketplace connector.
    Serve(ServeArgs),
    /// Drive simulated workers against a running server.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CROWDFORGE_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Comma-separated requester bearer tokens.
    #[arg(long, env = "CROWDFORGE_TOKENS", hide_env_values = true)]
    pub tokens: String,
    /// Public base URL workers reach (defaults to http://ADDR).
    #[arg(long, env = "CROWDFORGE_EXTERNAL_URL")]
    pub external_url: Option<String>,
    #[arg(long, env = "CROWDFORGE_DATA_DIR", default_value = "crowdforge-data")]
    pub data_dir: PathBuf,
    /// Hex secret; overrides the one stored in the data directory.
    #[arg(long, env = "CROWDFORGE_SECRET", hide_env_values = true)]
    pub secret: Option<String>,
    #[arg(long, default_value_t = 1800)]
    pub lease_secs: u64,
    #[arg(long, default_value_t = 30)]
    pub sweep_secs: u64,
    /// Seed of the mock connector's HIT ids.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Pipeline whose launched exam the workers take.
    #[arg(long)]
    pub exam: Option<String>,
    /// Pipeline whose launched task set the workers annotate.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub workers: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.3)]
    pub min_skill: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_skill: f64,
    #[arg(long, default_value_t = 0.05)]
    pub abandon_rate: f64,
    #[arg(long, default_value_t = 3)]
    pub tasks_per_worker: usize,
    #[arg(long, default_value_t = 4)]
    pub threads: usize,
    #[arg(long, default_value = "SIMW")]
    pub worker_prefix: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    api_url: Option<String>,
    token: Option<String>,
    pipeline: Option<String>,
    format: Option<Format>,
}

/// Effective client settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub api_url: String,
    pub token: Option<String>,
    pub pipeline: Option<String>,
    pub format: Format,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Other(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn other(e: impl std::fmt::Display) -> CliError {
    CliError::Other(e.to_string())
}

impl CliConfig {
    pub fn resolve(g: &GlobalArgs) -> Result<Self> {
        let path = g.config.clone().or_else(|| {
            let local = PathBuf::from("crowdforge.toml");
            local.exists().then_some(local)
        });
        let file = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(&p).map_err(|e| other(format!("{}: {e}", p.display())))?;
                toml::from_str::<FileConfig>(&raw).map_err(|e| other(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let api_url = g.api_url.clone().or(file.api_url).unwrap_or_else(|| DEFAULT_API_URL.into());
        let parsed = reqwest::Url::parse(&api_url).map_err(|e| other(format!("api url `{api_url}`: {e}")))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(other(format!("api url `{api_url}` must be http or https")));
        }
        Ok(CliConfig {
            api_url: api_url.trim_end_matches('/').into(),
            token: g.token.clone().or(file.token).filter(|t| !t.is_empty()),
            pipeline: g.pipeline.clone().or(file.pipeline),
            format: g.format.or(file.format).unwrap_or(Format::Table),
        })
    }

    fn pipeline(&self) -> Result<&str> {
        self.pipeline.as_deref().ok_or_else(|| other("no pipeline given (use --pipeline or CROWDFORGE_PIPELINE)"))
    }
}

struct Api {
    base: String,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl Api {
    fn new(cfg: &CliConfig) -> Self {
        Api { base: format!("{}/api/v1", cfg.api_url), token: cfg.token.clone(), http: reqwest::blocking::Client::new() }
    }

    fn request(&self, method: reqwest::Method, path: &str) -> Result<reqwest::blocking::RequestBuilder> {
        let token = self.token.as_deref().ok_or_else(|| other("no API token (use --token or CROWDFORGE_TOKEN)"))?;
        Ok(self.http.request(method, format!("{}{path}", self.base)).bearer_auth(token))
    }

    fn send(&self, rb: reqwest::blocking::RequestBuilder) -> Result<reqwest::blocking::Response> {
        let resp = rb.send().map_err(|e| other(format!("transport: {e}")))?;
        if resp.status().is_success() {
            return Ok(resp);
        }
        let status = resp.status();
        let body = resp.text().unwrap_or_default();
        match serde_json::from_str::<ErrorBody>(&body) {
            Ok(e) => {
                let mut msg = format!("{}: {}", e.error, e.message);
                let diags: Vec<Diagnostic> =
                    e.diagnostics.and_then(|d| serde_json::from_value(d).ok()).unwrap_or_default();
                for d in &diags {
                    msg.push_str(&format!("\n  {d}"));
                }
                if status == reqwest::StatusCode::UNPROCESSABLE_ENTITY {
                    Err(CliError::Validation(msg))
                } else {
                    Err(CliError::Other(msg))
                }
            }
            Err(_) => Err(other(format!("HTTP {status}: {body}"))),
        }
    }

    fn json(&self, rb: reqwest::blocking::RequestBuilder) -> Result<Value> {
        self.send(rb)?.json().map_err(|e| other(format!("bad response: {e}")))
    }

    fn bytes(&self, rb: reqwest::blocking::RequestBuilder) -> Result<Vec<u8>> {
        Ok(self.send(rb)?.bytes().map_err(|e| other(format!("transport: {e}")))?.to_vec())
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| other(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| other(format!("{}: {e}", path.display())))
}

/// Offline validation of one file. Markdown files are instructions and
/// always pass.
pub fn validate_file(path: &Path, registry: &Registry) -> Vec<Diagnostic> {
    if path.extension().is_some_and(|e| e == "md") {
        return Vec::new();
    }
    let raw = match std::fs::read_to_string(path) {
        Ok(r) => r,
        Err(e) => return vec![Diagnostic::error("", "unreadable", e.to_string())],
    };
    let Some(kind) = spec::detect_kind(&raw) else {
        return vec![Diagnostic::error("", spec::codes::MALFORMED_DOCUMENT, "not a recognised spec document")];
    };
    match spec::parse_document(&raw, kind, registry) {
        Ok(p) => p.warnings,
        Err(d) => d,
    }
}

/// Builds the pipeline document `push` uploads. A single pipeline file is
/// sent as is; otherwise parts are combined under `name`. Question-set
/// files whose name contains "tutorial" become the tutorial.
pub fn assemble(files: &[PathBuf], name: Option<&str>) -> Result<(String, String)> {
    let mut raws = Vec::new();
    for f in files {
        raws.push((f, read(f)?));
    }
    if let [(f, raw)] = raws.as_slice() {
        if spec::detect_kind(raw) == Some(DocumentKind::Pipeline) {
            let v: Value = serde_json::from_str(raw).map_err(|e| CliError::Validation(format!("{}: {e}", f.display())))?;
            let n = name
                .map(String::from)
                .or_else(|| v.get("name").and_then(Value::as_str).map(String::from))
                .ok_or_else(|| other("pipeline has no name"))?;
            return Ok((n, raw.clone()));
        }
    }
    let name = name.ok_or_else(|| other("assembling parts needs --pipeline"))?;
    let mut doc = Map::new();
    doc.insert("name".into(), json!(name));
    for (f, raw) in raws {
        let slot = if f.extension().is_some_and(|e| e == "md") {
            doc.insert("instruction".into(), json!(raw));
            continue;
        } else {
            match spec::detect_kind(&raw) {
                Some(DocumentKind::Exam | DocumentKind::Tutorial) => {
                    let tutorial = f.file_name().is_some_and(|n| n.to_string_lossy().to_lowercase().contains("tutorial"));
                    if tutorial { "tutorial" } else { "exam" }
                }
                Some(DocumentKind::ExamConfig) => "exam_config",
                Some(DocumentKind::TaskSet) => "task_set",
                Some(DocumentKind::Pipeline) => return Err(other(format!("{}: a pipeline document must be pushed alone", f.display()))),
                None => return Err(CliError::Validation(format!("{}: not a recognised spec document", f.display()))),
            }
        };
        let v: Value = serde_json::from_str(&raw).map_err(|e| CliError::Validation(format!("{}: {e}", f.display())))?;
        if doc.insert(slot.into(), v).is_some() {
            return Err(other(format!("{}: more than one {slot} given", f.display())));
        }
    }
    Ok((name.into(), serde_json::to_string_pretty(&Value::Object(doc)).expect("json")))
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) => {
            a.iter().map(cell).collect::<Vec<_>>().join(", ")
        }
        other => other.to_string(),
    }
}

/// Renders a JSON value as aligned columns: arrays of objects become one
/// row per element, objects become key/value rows (nested objects get
/// their own section).
pub fn render_table(v: &Value) -> String {
    let mut out = String::new();
    render_into(&mut out, None, v);
    out
}

fn render_into(out: &mut String, title: Option<&str>, v: &Value) {
    let mut table = Table::new();
    table.load_preset(UTF8_BORDERS_ONLY);
    let mut nested = Vec::new();
    match v {
        Value::Array(rows) if rows.iter().all(Value::is_object) && !rows.is_empty() => {
            let mut cols: Vec<String> = Vec::new();
            for r in rows {
                for k in r.as_object().expect("object").keys() {
                    if !cols.contains(k) {
                        cols.push(k.clone());
                    }
                }
            }
            table.set_header(cols.clone());
            for r in rows {
                table.add_row(cols.iter().map(|c| cell(r.get(c).unwrap_or(&Value::Null))).collect::<Vec<_>>());
            }
        }
        Value::Object(m) => {
            table.set_header(vec!["field", "value"]);
            for (k, x) in m {
                if x.is_object() || (x.is_array() && x.as_array().is_some_and(|a| a.iter().any(Value::is_object))) {
                    nested.push((k.clone(), x.clone()));
                } else {
                    table.add_row(vec![k.clone(), cell(x)]);
                }
            }
        }
        other => {
            table.add_row(vec![cell(other)]);
        }
    }
    if let Some(t) = title {
        out.push_str(t);
        out.push('\n');
    }
    out.push_str(&table.to_string());
    out.push('\n');
    for (k, x) in nested {
        let t = match title {
            Some(p) => format!("{p}.{k}"),
            None => k,
        };
        render_into(out, Some(&t), &x);
    }
}

/// Prints to stdout, ignoring a closed pipe.
fn out(s: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(s.as_bytes());
}

fn emit(cfg: &CliConfig, v: &Value) {
    match cfg.format {
        Format::Json => out(&format!("{}\n", serde_json::to_string_pretty(v).expect("json"))),
        Format::Table => out(&render_table(v)),
    }
}

fn print_diagnostics(path: &Path, diags: &[Diagnostic]) -> (usize, usize) {
    let mut errors = 0;
    for d in diags {
        out(&format!("{}: {d}\n", path.display()));
        if d.severity == Severity::Error {
            errors += 1;
        }
    }
    (errors, diags.len() - errors)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Validate { files } = &cli.command {
        let reg = Registry::with_builtins();
        let (mut errors, mut warnings) = (0, 0);
        let mut report = Vec::new();
        let json_out = cli.global.format == Some(Format::Json);
        for f in files {
            let diags = validate_file(f, &reg);
            if json_out {
                report.push(json!({"file": f.display().to_string(), "diagnostics": diags}));
                errors += diags.iter().filter(|d| d.severity == Severity::Error).count();
                warnings += diags.iter().filter(|d| d.severity == Severity::Warning).count();
            } else {
                let (e, w) = print_diagnostics(f, &diags);
                errors += e;
                warnings += w;
            }
        }
        if json_out {
            out(&format!("{}\n", json!({"errors": errors, "warnings": warnings, "files": report})));
        } else {
            out(&format!("{errors} errors, {warnings} warnings\n"));
        }
        return if errors > 0 { Err(CliError::Validation(format!("{errors} errors"))) } else { Ok(()) };
    }
    if let Command::Serve(args) = cli.command {
        return serve_cmd(args);
    }
    let cfg = CliConfig::resolve(&cli.global)?;
    let api = Api::new(&cfg);
    match cli.command {
        Command::Validate { .. } | Command::Serve(_) => unreachable!("handled above"),
        Command::Push { files } => {
            let (name, doc) = assemble(&files, cfg.pipeline.as_deref())?;
            let out = api.json(api.request(reqwest::Method::PUT, &format!("/pipelines/{name}"))?.body(doc))?;
            emit(&cfg, &json!({"pipeline": name, "version": out["version"], "created": out["created"], "warnings": out["warnings"]}));
        }
        Command::Launch { kind, reward, count, gates, client_token } => {
            let req = LaunchRequest {
                kind: match kind {
                    LaunchKind::Exam => HitKind::Exam,
                    LaunchKind::Taskset => HitKind::TaskSet,
                },
                reward,
                count,
                gates,
                client_token,
            };
            let name = cfg.pipeline()?;
            let out = api.json(api.request(reqwest::Method::POST, &format!("/pipelines/{name}/launch"))?.json(&req))?;
            emit(&cfg, &out);
        }
        Command::Status => {
            let name = cfg.pipeline()?;
            emit(&cfg, &api.json(api.request(reqwest::Method::GET, &format!("/pipelines/{name}/status"))?)?);
        }
        Command::Report { reward } => {
            let name = cfg.pipeline()?;
            let mut rb = api.request(reqwest::Method::GET, &format!("/pipelines/{name}/report"))?;
            if let Some(r) = reward {
                rb = rb.query(&[("reward", r)]);
            }
            emit(&cfg, &api.json(rb)?);
        }
        Command::Annotators => {
            let name = cfg.pipeline()?;
            emit(&cfg, &api.json(api.request(reqwest::Method::GET, &format!("/pipelines/{name}/annotators"))?)?);
        }
        Command::Export { out } => {
            let name = cfg.pipeline()?;
            let body = api.bytes(api.request(reqwest::Method::GET, &format!("/pipelines/{name}/export.jsonl"))?)?;
            write(&out, &body)?;
            let records = body.iter().filter(|b| **b == b'\n').count();
            emit(&cfg, &json!({"pipeline": name, "out": out.display().to_string(), "records": records}));
        }
        Command::Bundle { out, version } => {
            let name = cfg.pipeline()?;
            let mut rb = api.request(reqwest::Method::GET, &format!("/pipelines/{name}/bundle.zip"))?;
            if let Some(v) = version {
                rb = rb.query(&[("version", v)]);
            }
            let body = api.bytes(rb)?;
            let (manifest, _) = crate::bundle::verify_bundle(&body).map_err(other)?;
            write(&out, &body)?;
            emit(
                &cfg,
                &json!({"pipeline": name, "version": manifest.version, "out": out.display().to_string(), "digest": manifest.digest}),
            );
        }
        Command::Import { file } => {
            let name = cfg.pipeline()?;
            let bytes = std::fs::read(&file).map_err(|e| other(format!("{}: {e}", file.display())))?;
            let out = api.json(
                api.request(reqwest::Method::POST, &format!("/pipelines/{name}/import"))?
                    .header(reqwest::header::CONTENT_TYPE, "application/zip")
                    .body(bytes),
            )?;
            emit(&cfg, &json!({"pipeline": name, "version": out["version"], "created": out["created"]}));
        }
        Command::Simulate(args) => {
            let report = simulate_cmd(&cfg, &api, &args)?;
            let mut v = serde_json::to_value(&report).expect("json");
            if cfg.format == Format::Table {
                v.as_object_mut().expect("object").remove("per_worker");
            }
            emit(&cfg, &v);
        }
    }
    Ok(())
}

fn fetch_spec(api: &Api, name: &str, registry: &Registry) -> Result<(PipelineSpec, Value)> {
    let view = api.json(api.request(reqwest::Method::GET, &format!("/pipelines/{name}"))?)?;
    let spec = spec::parse_pipeline(&view["spec"].to_string(), registry)
        .map_err(|d| other(format!("server returned an invalid spec: {}", d.first().map(|d| d.to_string()).unwrap_or_default())))?
        .value;
    Ok((spec, view))
}

fn current_hit(view: &Value, kind: HitKind) -> Option<String> {
    view["launches"]
        .as_array()?
        .iter()
        .rev()
        .find(|l| l["config"]["kind"] == kind.as_str())
        .and_then(|l| l["hit_ids"][0].as_str())
        .map(String::from)
}

fn simulate_cmd(cfg: &CliConfig, api: &Api, args: &SimulateArgs) -> Result<sim::SimReport> {
    let registry = Registry::with_builtins();
    let exam = match &args.exam {
        Some(name) => {
            let (spec, view) = fetch_spec(api, name, &registry)?;
            let pool = spec.exam.ok_or_else(|| other(format!("{name} has no exam")))?;
            let hit = current_hit(&view, HitKind::Exam).ok_or_else(|| other(format!("{name}: exam not launched")))?;
            Some(ExamTarget::from_pool(name, &hit, &pool))
        }
        None => None,
    };
    let task = match &args.task {
        Some(name) => {
            let (spec, view) = fetch_spec(api, name, &registry)?;
            let task_set = spec.task_set.ok_or_else(|| other(format!("{name} has no task set")))?;
            let hit = current_hit(&view, HitKind::TaskSet).ok_or_else(|| other(format!("{name}: task set not launched")))?;
            Some(TaskTarget { pipeline: name.clone(), hit_id: hit, task_set })
        }
        None => None,
    };
    if exam.is_none() && task.is_none() {
        return Err(other("simulate needs --exam and/or --task"));
    }
    let sim_cfg = SimConfig {
        workers: args.workers,
        seed: args.seed,
        min_skill: args.min_skill,
        max_skill: args.max_skill,
        abandon_rate: args.abandon_rate,
        tasks_per_worker: args.tasks_per_worker,
        threads: args.threads,
        worker_prefix: args.worker_prefix.clone(),
        ..SimConfig::default()
    };
    let client = HttpWorkerClient::new(&cfg.api_url);
    let market = LocalMarket::default();
    Ok(sim::run(&client, &market, exam.as_ref(), task.as_ref(), &registry, &sim_cfg))
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let tokens = parse_tokens(&args.tokens);
    if tokens.is_empty() {
        return Err(other("CROWDFORGE_TOKENS must list at least one requester token"));
    }
    let secret = match &args.secret {
        Some(h) => Some(hex::decode(h.trim()).map_err(|e| other(format!("CROWDFORGE_SECRET: {e}")))?),
        None => None,
    };
    let opts = StoreOptions { secret, lease_ms: args.lease_secs * 1000, ..StoreOptions::default() };
    let store = Store::open(&args.data_dir, Arc::new(Registry::with_builtins()), opts).map_err(other)?;
    let external_url = args.external_url.clone().unwrap_or_else(|| format!("http://{}", args.addr));
    let service = Service::new(
        Arc::new(store),
        Arc::new(MockConnector::new(args.seed)),
        Arc::new(SystemClock),
        ServiceConfig { external_url: external_url.trim_end_matches('/').into(), ..ServiceConfig::default() },
    );
    let state = AppState { service: Arc::new(service), tokens: Arc::new(tokens) };
    let rt = tokio::runtime::Runtime::new().map_err(other)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        tracing::info!(addr = %args.addr, external_url, data_dir = %args.data_dir.display(), "serving");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        serve(listener, state, Duration::from_secs(args.sweep_secs.max(1)), shutdown).await
    })
    .map_err(other)
}

pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
