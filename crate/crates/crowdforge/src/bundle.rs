//! Re-launchable pipeline bundles.
//!
//! `bundle.zip` holds the canonical documents of one pipeline version, its
//! launch configurations and a `manifest.json` with per-member sha256
//! digests plus an overall digest over all of them. Archive timestamps and
//! permissions are fixed, so equal content gives equal bytes. The pipeline
//! name is not part of the digest: importing under a new name and
//! exporting again yields the same digest.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};

use crowdforge_core::constraint::Registry;
use crowdforge_core::spec::{
    self, canonicalize_exam_config, canonicalize_question_set, canonicalize_task_set, Diagnostic, PipelineSpec,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use crate::store::LaunchConfig;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const INSTRUCTION: &str = "instruction.md";
pub const TUTORIAL: &str = "tutorial.json";
pub const EXAM: &str = "exam.json";
pub const EXAM_CONFIG: &str = "exam_config.json";
pub const TASK_SET: &str = "taskset.json";
pub const LAUNCH: &str = "launch.json";

/// How `launch.json` names the bundled pipeline itself in a gate list.
pub const SELF_GATE: &str = "@self";

fn rename_gates(configs: &[LaunchConfig], from: &str, to: &str) -> Vec<LaunchConfig> {
    configs
        .iter()
        .map(|c| {
            let mut c = c.clone();
            for g in &mut c.gates {
                if g == from {
                    *g = to.into();
                }
            }
            c
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub name: String,
    pub version: u32,
    pub members: Vec<MemberDigest>,
    pub digest: String,
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("member `{0}` does not match the manifest digest")]
    DigestMismatch(String),
    #[error("bundle format version {0} is not supported")]
    UnsupportedFormat(u32),
    #[error("bundle is missing `{0}`")]
    MissingMember(String),
    #[error("bundle member `{0}` is not listed in the manifest")]
    UnexpectedMember(String),
    #[error("malformed bundle: {0}")]
    Malformed(String),
    #[error("bundled pipeline is invalid")]
    Invalid(Vec<Diagnostic>),
}

impl BundleError {
    pub fn code(&self) -> &'static str {
        match self {
            BundleError::DigestMismatch(_) => "digest-mismatch",
            BundleError::UnsupportedFormat(_) => "unsupported-format",
            BundleError::MissingMember(_) => "missing-member",
            BundleError::UnexpectedMember(_) => "unexpected-member",
            BundleError::Malformed(_) => "malformed-bundle",
            BundleError::Invalid(_) => "invalid-spec",
        }
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Overall digest: sha256 over `path NUL member-sha LF` lines in path order.
pub fn combined_digest(members: &[MemberDigest]) -> String {
    let mut sorted: Vec<&MemberDigest> = members.iter().collect();
    sorted.sort_by(|a, b| a.path.cmp(&b.path));
    let mut h = Sha256::new();
    for m in sorted {
        h.update(m.path.as_bytes());
        h.update([0]);
        h.update(m.sha256.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Member files of a pipeline, in archive order.
pub fn members(spec: &PipelineSpec, launch_configs: &[LaunchConfig]) -> Vec<(&'static str, String)> {
    let mut out = vec![(INSTRUCTION, spec.instruction.clone())];
    if let Some(t) = &spec.tutorial {
        out.push((TUTORIAL, canonicalize_question_set(t)));
    }
    if let Some(e) = &spec.exam {
        out.push((EXAM, canonicalize_question_set(e)));
    }
    if let Some(c) = &spec.exam_config {
        out.push((EXAM_CONFIG, canonicalize_exam_config(c)));
    }
    if let Some(ts) = &spec.task_set {
        out.push((TASK_SET, canonicalize_task_set(ts)));
    }
    let configs = rename_gates(launch_configs, &spec.name, SELF_GATE);
    let mut launch = serde_json::to_string_pretty(&configs).expect("launch configs serialize");
    launch.push('\n');
    out.push((LAUNCH, launch));
    out
}

pub fn manifest_for(spec: &PipelineSpec, launch_configs: &[LaunchConfig]) -> Manifest {
    let members: Vec<MemberDigest> = members(spec, launch_configs)
        .iter()
        .map(|(p, body)| MemberDigest { path: (*p).into(), sha256: sha_hex(body.as_bytes()), bytes: body.len() as u64 })
        .collect();
    let digest = combined_digest(&members);
    Manifest { format_version: FORMAT_VERSION, name: spec.name.clone(), version: spec.version, members, digest }
}

fn options() -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644)
}

pub fn export_bundle(spec: &PipelineSpec, launch_configs: &[LaunchConfig]) -> Vec<u8> {
    let manifest = manifest_for(spec, launch_configs);
    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let mut manifest_json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    manifest_json.push('\n');
    let mut write = |path: &str, body: &str| {
        zip.start_file(path, options()).expect("in-memory zip");
        zip.write_all(body.as_bytes()).expect("in-memory zip");
    };
    write(MANIFEST, &manifest_json);
    for (path, body) in members(spec, launch_configs) {
        write(path, &body);
    }
    zip.finish().expect("in-memory zip").into_inner()
}

#[derive(Debug, Clone)]
pub struct ImportedBundle {
    pub manifest: Manifest,
    /// Named `name` at version 1.
    pub spec: PipelineSpec,
    pub launch_configs: Vec<LaunchConfig>,
}

fn read_members(bytes: &[u8]) -> Result<BTreeMap<String, String>, BundleError> {
    let mut archive = ZipArchive::new(Cursor::new(bytes)).map_err(|e| BundleError::Malformed(e.to_string()))?;
    let mut files = BTreeMap::new();
    for i in 0..archive.len() {
        let mut f = archive.by_index(i).map_err(|e| BundleError::Malformed(e.to_string()))?;
        let name = f.name().map_err(|e| BundleError::Malformed(e.to_string()))?.into_owned();
        let mut body = String::new();
        f.read_to_string(&mut body).map_err(|e| BundleError::Malformed(format!("{name}: {e}")))?;
        files.insert(name, body);
    }
    Ok(files)
}

/// Verifies a bundle without interpreting its documents.
pub fn verify_bundle(bytes: &[u8]) -> Result<(Manifest, BTreeMap<String, String>), BundleError> {
    let mut files = read_members(bytes)?;
    let raw = files.remove(MANIFEST).ok_or_else(|| BundleError::MissingMember(MANIFEST.into()))?;
    let probe: serde_json::Value = serde_json::from_str(&raw).map_err(|e| BundleError::Malformed(e.to_string()))?;
    let fv = probe.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if fv != FORMAT_VERSION {
        return Err(BundleError::UnsupportedFormat(fv));
    }
    let manifest: Manifest = serde_json::from_value(probe).map_err(|e| BundleError::Malformed(e.to_string()))?;
    for m in &manifest.members {
        let body = files.get(&m.path).ok_or_else(|| BundleError::MissingMember(m.path.clone()))?;
        if sha_hex(body.as_bytes()) != m.sha256 {
            return Err(BundleError::DigestMismatch(m.path.clone()));
        }
    }
    if let Some(extra) = files.keys().find(|k| !manifest.members.iter().any(|m| &m.path == *k)) {
        return Err(BundleError::UnexpectedMember(extra.clone()));
    }
    if combined_digest(&manifest.members) != manifest.digest {
        return Err(BundleError::DigestMismatch(MANIFEST.into()));
    }
    Ok((manifest, files))
}

fn question_set(files: &BTreeMap<String, String>, path: &str, diags: &mut Vec<Diagnostic>) -> Option<spec::QuestionSet> {
    match spec::parse_question_set(files.get(path)?) {
        Ok(p) => Some(p.value),
        Err(d) => {
            diags.extend(d.into_iter().map(|mut x| {
                x.path = format!("{path}#{}", x.path);
                x
            }));
            None
        }
    }
}

pub fn import_bundle(bytes: &[u8], name: &str, registry: &Registry) -> Result<ImportedBundle, BundleError> {
    let (manifest, files) = verify_bundle(bytes)?;
    let mut diags = Vec::new();
    let tutorial = question_set(&files, TUTORIAL, &mut diags);
    let exam = question_set(&files, EXAM, &mut diags);
    let exam_config = files.get(EXAM_CONFIG).and_then(|raw| match spec::parse_exam_config(raw) {
        Ok(p) => Some(p.value),
        Err(d) => {
            diags.extend(d);
            None
        }
    });
    let task_set = files.get(TASK_SET).and_then(|raw| match spec::parse_task_set(raw, registry) {
        Ok(p) => Some(p.value),
        Err(d) => {
            diags.extend(d);
            None
        }
    });
    let launch_configs: Vec<LaunchConfig> = match files.get(LAUNCH) {
        Some(raw) => serde_json::from_str(raw).map_err(|e| BundleError::Malformed(format!("{LAUNCH}: {e}")))?,
        None => Vec::new(),
    };
    let launch_configs = rename_gates(&launch_configs, SELF_GATE, name);
    let instruction = files.get(INSTRUCTION).ok_or_else(|| BundleError::MissingMember(INSTRUCTION.into()))?.clone();
    let pipeline = PipelineSpec { name: name.into(), version: 1, instruction, tutorial, exam, exam_config, task_set };
    diags.extend(spec::validate_pipeline(&pipeline, registry));
    if !spec::is_valid_name(name) {
        diags.push(Diagnostic::error("/name", spec::codes::INVALID_NAME, format!("`{name}` is not a valid pipeline name")));
    }
    if spec::has_errors(&diags) {
        return Err(BundleError::Invalid(diags));
    }
    Ok(ImportedBundle { manifest, spec: pipeline, launch_configs })
}
