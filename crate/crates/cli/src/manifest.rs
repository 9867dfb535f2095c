use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fail::Failure;
use crate::plan::Plan;

pub const MANIFEST_FILE: &str = "manifest.json";
const VERSION: u32 = 1;

/// Everything needed to redo a run: the fully resolved plan (configs already
/// loaded, seeds fixed) plus bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    /// Hash of the plan; identical plans share an id.
    pub run_id: String,
    pub subcommand: String,
    pub plan: Plan,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    /// Relative to the output directory.
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn run_id(plan: &Plan) -> String {
    let canonical = serde_json::to_vec(plan).expect("plans always serialize");
    let digest = Sha256::digest(&canonical);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn write(out: &Path, manifest: &RunManifest) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(manifest).expect("manifests always serialize");
    fs::write(out.join(MANIFEST_FILE), text + "\n")
        .map_err(|e| Failure::Runtime(format!("writing {}: {e}", out.join(MANIFEST_FILE).display())))
}

/// `path` may be a manifest file or a directory holding one.
pub fn read(path: &Path) -> Result<RunManifest, Failure> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file)
        .map_err(|e| Failure::Validation(format!("cannot read manifest {}: {e}", file.display())))?;
    let m: RunManifest = crate::plan::parse_json(&text, &file)?;
    if m.version != VERSION {
        return Err(Failure::Validation(format!("manifest {} has unsupported version {}", file.display(), m.version)));
    }
    Ok(m)
}

pub fn new(plan: Plan, started_unix: u64, outcome: crate::run::Outcome) -> RunManifest {
    RunManifest {
        version: VERSION,
        run_id: run_id(&plan),
        subcommand: plan.name().to_string(),
        seeds: plan.seeds(),
        plan,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        started_unix,
        finished_unix: unix_now(),
    }
}
