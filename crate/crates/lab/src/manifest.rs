//! Output directories, run manifests and reproduction.

use std::path::{Component, Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use quadsde_core::engine::Executor;

use crate::config::ExperimentConfig;
use crate::error::LabError;
use crate::experiments::{execute, Verdict};

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A directory that only accepts plain file names, so nothing can be written
/// outside it.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, LabError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| LabError::io(&root, e))?;
        Ok(OutputDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> Result<PathBuf, LabError> {
        let mut comps = Path::new(name).components();
        match (comps.next(), comps.next()) {
            (Some(Component::Normal(c)), None) if c == name && !name.contains(['/', '\\']) => Ok(self.root.join(name)),
            _ => Err(LabError::Usage(format!("refusing to write `{name}`: output names must be plain file names"))),
        }
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<(), LabError> {
        let path = self.path(name)?;
        std::fs::write(&path, bytes).map_err(|e| LabError::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl From<&Verdict> for VerdictRecord {
    fn from(v: &Verdict) -> Self {
        VerdictRecord { name: v.name.clone(), passed: v.passed, detail: v.detail.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub kind: String,
    /// sha256 of the canonical config text.
    pub config_sha256: String,
    pub wall_clock_seconds: f64,
    /// Report files; the config copy is listed too, the manifest itself is not.
    pub files: Vec<FileRecord>,
    pub verdicts: Vec<VerdictRecord>,
    pub passed: bool,
}

/// Runs the experiment and writes its reports, `config.txt` and
/// `manifest.json` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &OutputDir, exec: &Executor) -> Result<RunManifest, LabError> {
    let start = Instant::now();
    let outcome = execute(cfg, exec)?;
    let config_text = cfg.serialize();
    let mut files = Vec::new();
    for (name, bytes) in outcome.files.iter().map(|(n, b)| (n.as_str(), b.as_slice())).chain([(CONFIG_FILE, config_text.as_bytes())]) {
        if name == MANIFEST_FILE {
            return Err(LabError::Usage(format!("report name `{name}` is reserved")));
        }
        out.write(name, bytes)?;
        files.push(FileRecord { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: outcome.kind.to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        files,
        verdicts: outcome.verdicts.iter().map(VerdictRecord::from).collect(),
        passed: outcome.passed(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    out.write(MANIFEST_FILE, text.as_bytes())?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reproduction {
    /// Files whose fresh digest differs from the manifest, or that are
    /// missing from one side.
    pub mismatches: Vec<String>,
    /// Files on disk that no longer match their recorded digest.
    pub tampered: Vec<String>,
}

impl Reproduction {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.tampered.is_empty()
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Usage(format!("{}: not a run manifest: {e}", path.display())))
}

/// Re-runs the config stored next to the manifest (optionally with another
/// seed) in memory and compares report digests.
pub fn reproduce(manifest_path: &Path, seed: Option<u64>, exec: &Executor) -> Result<Reproduction, LabError> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let cfg_path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| LabError::io(&cfg_path, e))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    let mut tampered = Vec::new();
    for f in &manifest.files {
        let ok = std::fs::read(dir.join(&f.name)).map(|b| sha256_hex(&b) == f.sha256).unwrap_or(false);
        if !ok {
            tampered.push(f.name.clone());
        }
    }
    if let Some(s) = seed {
        cfg.set("seed", &s.to_string())?;
    }
    let outcome = execute(&cfg, exec)?;
    let fresh: Vec<(String, String)> =
        outcome.files.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).chain([(CONFIG_FILE.to_string(), sha256_hex(cfg.serialize().as_bytes()))]).collect();
    let mut mismatches = Vec::new();
    for f in &manifest.files {
        match fresh.iter().find(|(n, _)| *n == f.name) {
            Some((_, d)) if *d == f.sha256 => {}
            _ => mismatches.push(f.name.clone()),
        }
    }
    for (n, _) in &fresh {
        if !manifest.files.iter().any(|f| &f.name == n) {
            mismatches.push(n.clone());
        }
    }
    Ok(Reproduction { mismatches, tampered })
}
