//! Manifest-driven preprocessing pipeline.
//!
//! Per subject: convert → register → clean → patch → export, then one
//! evaluate stage over all subjects. Every stage reads the previous stage's
//! files from the output directory and records a stamp with content hashes
//! of its inputs, parameters and outputs; a stage whose stamp still matches
//! is skipped without touching the disk.

pub mod dataset;
mod manifest;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{error, info};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use manifest::{Manifest, PatchConfig, SubjectEntry};
pub use stages::{subject_dir, PatchPlan, SubjectPaths};

use crate::formats::FormatError;
use crate::metrics::MetricError;
use crate::morph::MorphError;
use crate::patch::PatchError;
use crate::records::RecordError;
use crate::register::RegisterError;
use crate::volume::VolumeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Convert,
    Register,
    Clean,
    Patch,
    Export,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Convert,
        Stage::Register,
        Stage::Clean,
        Stage::Patch,
        Stage::Export,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Convert => "convert",
            Stage::Register => "register",
            Stage::Clean => "clean",
            Stage::Patch => "patch",
            Stage::Export => "export",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Exit-code class of a failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ErrorClass {
    Validation = 1,
    Io = 2,
    Internal = 3,
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error(transparent)]
    Morph(#[from] MorphError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error("missing input {0} (run the earlier stages first)")]
    MissingInput(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("internal error: {0}")]
    Internal(String),
}

impl StageError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        StageError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            StageError::Format(FormatError::Io(_)) | StageError::Records(RecordError::Io(_)) | StageError::Io { .. } => {
                ErrorClass::Io
            }
            StageError::Internal(_) => ErrorClass::Internal,
            _ => ErrorClass::Validation,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("subject {subject}, stage {stage}: {source}")]
    Stage {
        subject: String,
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("{failed} of {total} subjects failed; first error: {first}")]
    Subjects {
        failed: usize,
        total: usize,
        first: Box<PipelineError>,
    },
}

impl PipelineError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            PipelineError::Manifest(_) => ErrorClass::Validation,
            PipelineError::Io { .. } => ErrorClass::Io,
            PipelineError::Stage { source, .. } => source.class(),
            PipelineError::Subjects { first, .. } => first.class(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.class() as i32
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads for subject-level parallelism; 0 uses all cores.
    pub jobs: usize,
    /// Run only this stage instead of the whole chain.
    pub stage: Option<Stage>,
    /// Ignore stamps and recompute.
    pub force: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageOutcome {
    pub subject: Option<String>,
    pub stage: Stage,
    pub ran: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RunSummary {
    pub outcomes: Vec<StageOutcome>,
}

impl RunSummary {
    pub fn ran(&self) -> usize {
        self.outcomes.iter().filter(|o| o.ran).count()
    }

    pub fn skipped(&self) -> usize {
        self.outcomes.len() - self.ran()
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String, StageError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(sha256_hex(&bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StageError::MissingInput(path.to_path_buf())),
        Err(e) => Err(StageError::io(path, e)),
    }
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Stamp {
    params: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

// Keys are relative to the output root when possible, so stamps do not
// depend on where the output directory lives.
fn hash_all(root: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>, StageError> {
    paths
        .iter()
        .map(|p| {
            let key = p.strip_prefix(root).unwrap_or(p).display().to_string();
            Ok((key, hash_file(p)?))
        })
        .collect()
}

fn stamp_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(".stamps").join(format!("{stage}.json"))
}

fn up_to_date(root: &Path, stamp_file: &Path, params: &str, inputs: &BTreeMap<String, String>) -> bool {
    let Ok(text) = std::fs::read_to_string(stamp_file) else {
        return false;
    };
    let Ok(stamp) = serde_json::from_str::<Stamp>(&text) else {
        return false;
    };
    if stamp.params != params || &stamp.inputs != inputs {
        return false;
    }
    stamp
        .outputs
        .iter()
        .all(|(p, h)| hash_file(&root.join(p)).is_ok_and(|cur| &cur == h))
}

/// One unit of work: a stage with its declared inputs and parameters.
pub(crate) struct StageJob<'a> {
    pub stage: Stage,
    pub root: PathBuf,
    pub dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub params: serde_json::Value,
    pub run: Box<dyn FnOnce() -> Result<Vec<PathBuf>, StageError> + 'a>,
}

/// Runs `job` unless its stamp shows the outputs are current. Returns
/// whether it ran.
pub(crate) fn run_stamped(job: StageJob<'_>, force: bool) -> Result<bool, StageError> {
    let inputs = hash_all(&job.root, &job.inputs)?;
    let params = sha256_hex(job.params.to_string().as_bytes());
    let stamp_file = stamp_path(&job.dir, job.stage);
    if !force && up_to_date(&job.root, &stamp_file, &params, &inputs) {
        return Ok(false);
    }
    let outputs = (job.run)()?;
    let stamp = Stamp {
        params,
        inputs,
        outputs: hash_all(&job.root, &outputs)?,
    };
    let parent = stamp_file.parent().expect("stamp has a parent");
    std::fs::create_dir_all(parent).map_err(|e| StageError::io(parent, e))?;
    let text = serde_json::to_string_pretty(&stamp).expect("stamp serializes");
    std::fs::write(&stamp_file, text + "\n").map_err(|e| StageError::io(&stamp_file, e))?;
    Ok(true)
}

fn check_sources(m: &Manifest) -> Result<(), PipelineError> {
    for s in &m.subjects {
        for p in [&s.mri_path, &s.ct_path].into_iter().chain(s.prediction_path.as_ref()) {
            if !p.is_file() {
                return Err(PipelineError::Manifest(format!(
                    "subject {}: {} does not exist",
                    s.id,
                    p.display()
                )));
            }
        }
    }
    Ok(())
}

/// Runs the pipeline (or the single stage in `opts.stage`) over every
/// subject, `opts.jobs` subjects at a time.
pub fn run(manifest: &Manifest, opts: &RunOptions) -> Result<RunSummary, PipelineError> {
    manifest.validate().map_err(PipelineError::Manifest)?;
    check_sources(manifest)?;
    let out = &manifest.output_dir;
    std::fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;

    let subject_stages: Vec<Stage> = match opts.stage {
        Some(Stage::Evaluate) => Vec::new(),
        Some(s) => vec![s],
        None => Stage::ALL[..5].to_vec(),
    };
    let per_subject = |s: &SubjectEntry| -> Result<Vec<StageOutcome>, PipelineError> {
        let mut outcomes = Vec::new();
        for &stage in &subject_stages {
            let ran = stages::run_subject_stage(manifest, s, stage, opts.force).map_err(|source| PipelineError::Stage {
                subject: s.id.clone(),
                stage,
                source,
            })?;
            info!("{} {stage}: {}", s.id, if ran { "done" } else { "up to date" });
            outcomes.push(StageOutcome {
                subject: Some(s.id.clone()),
                stage,
                ran,
            });
        }
        Ok(outcomes)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Vec<StageOutcome>, PipelineError>> = {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| PipelineError::Manifest(format!("cannot start {} workers: {e}", opts.jobs)))?;
        pool.install(|| manifest.subjects.par_iter().map(per_subject).collect())
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Vec<StageOutcome>, PipelineError>> = manifest.subjects.iter().map(per_subject).collect();

    let mut summary = RunSummary::default();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(o) => summary.outcomes.extend(o),
            Err(e) => {
                error!("{e}");
                failures.push(e);
            }
        }
    }
    if !failures.is_empty() {
        let total = manifest.subjects.len();
        let failed = failures.len();
        let first = failures.into_iter().max_by_key(|e| e.class()).expect("non-empty");
        return Err(if failed == 1 {
            first
        } else {
            PipelineError::Subjects {
                failed,
                total,
                first: Box::new(first),
            }
        });
    }

    if matches!(opts.stage, None | Some(Stage::Evaluate)) {
        let ran = stages::run_evaluate(manifest, opts.force).map_err(|source| PipelineError::Stage {
            subject: "*".into(),
            stage: Stage::Evaluate,
            source,
        })?;
        if let Some(ran) = ran {
            info!("evaluate: {}", if ran { "done" } else { "up to date" });
            summary.outcomes.push(StageOutcome {
                subject: None,
                stage: Stage::Evaluate,
                ran,
            });
        }
    }
    Ok(summary)
}
