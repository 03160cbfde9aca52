use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use resistkit_core::prompting::{Prompt, ShotMode};
use resistkit_core::taxonomy::Task;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::{mpsc, Semaphore};
use tokio::task::JoinSet;

use crate::{classify, fingerprint, parse_completion, ChatBackend, InferenceError, Prediction};

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub sample_id: String,
    pub prompt: Prompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub model: String,
    pub task: Task,
    pub shot_mode: ShotMode,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub run_file: PathBuf,
    pub manifest: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: impl AsRef<Path>, run_id: &str) -> Self {
        let dir = dir.as_ref();
        RunPaths {
            run_file: dir.join(format!("{run_id}.jsonl")),
            manifest: dir.join(format!("{run_id}.manifest.json")),
        }
    }
}

/// sha256 of the first `bytes` bytes of the run file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunChecksum {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sample_id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub meta: RunMeta,
    /// Hash over every (sample_id, request fingerprint) pair of the batch.
    pub prompt_fingerprint: String,
    pub total: usize,
    /// Requests dispatched, counted across resumes.
    pub started: usize,
    /// Predictions recorded in the run file.
    pub finished: usize,
    /// Failures from the latest invocation; those samples stay unanswered.
    pub errors: Vec<ErrorRecord>,
    pub checksum: RunChecksum,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    /// Sorted by sample id.
    pub predictions: Vec<Prediction>,
    pub manifest: Manifest,
    pub requests_issued: usize,
    pub resumed: usize,
}

enum Msg {
    Done(Prediction),
    Failed(ErrorRecord),
}

fn batch_fingerprint(model: &str, items: &[BatchItem]) -> String {
    let sorted: BTreeMap<&str, String> = items
        .iter()
        .map(|i| (i.sample_id.as_str(), fingerprint(model, &i.prompt)))
        .collect();
    let mut h = Sha256::new();
    for (id, fp) in sorted {
        h.update(id.as_bytes());
        h.update([0]);
        h.update(fp.as_bytes());
        h.update([b'\n']);
    }
    hex::encode(h.finalize())
}

fn write_manifest(path: &Path, m: &Manifest) -> Result<(), InferenceError> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, m)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_lines(bytes: &[u8]) -> Result<Vec<Prediction>, InferenceError> {
    let text = std::str::from_utf8(bytes).map_err(|e| InferenceError::RunCorrupt(format!("run file is not UTF-8: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| InferenceError::RunCorrupt(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// All complete records of a run file; an unterminated final line is ignored.
pub fn read_run_file(path: &Path) -> Result<Vec<Prediction>, InferenceError> {
    let bytes = fs::read(path)?;
    let end = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    parse_lines(&bytes[..end])
}

pub fn answered_ids(predictions: &[Prediction]) -> BTreeSet<String> {
    predictions.iter().map(|p| p.sample_id.clone()).collect()
}

/// Verifies and trims an existing run, returning its records, the prefix
/// hash state and the stored manifest.
fn recover(paths: &RunPaths) -> Result<Option<(Manifest, Vec<Prediction>, Sha256, u64)>, InferenceError> {
    if !paths.manifest.exists() {
        if paths.run_file.exists() && fs::metadata(&paths.run_file)?.len() > 0 {
            return Err(InferenceError::RunCorrupt(format!(
                "{} exists without a manifest",
                paths.run_file.display()
            )));
        }
        return Ok(None);
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&paths.manifest)?)
        .map_err(|e| InferenceError::RunCorrupt(format!("unreadable manifest: {e}")))?;
    let bytes = if paths.run_file.exists() { fs::read(&paths.run_file)? } else { Vec::new() };
    let covered = manifest.checksum.bytes as usize;
    if bytes.len() < covered {
        return Err(InferenceError::RunCorrupt(format!(
            "run file has {} bytes, manifest covers {covered}",
            bytes.len()
        )));
    }
    if hex::encode(Sha256::digest(&bytes[..covered])) != manifest.checksum.sha256 {
        return Err(InferenceError::RunCorrupt("checksum mismatch".into()));
    }
    // drop a record cut off mid-write
    let end = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1).max(covered);
    if end < bytes.len() {
        tracing::warn!(dropped = bytes.len() - end, "truncating partial trailing record");
        OpenOptions::new().write(true).open(&paths.run_file)?.set_len(end as u64)?;
    }
    let records = parse_lines(&bytes[..end])?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes[..end]);
    Ok(Some((manifest, records, hasher, end as u64)))
}

/// Runs every item not already answered in the run file, with at most
/// `parallelism` requests in flight and a single writer appending results.
pub async fn run_batch(
    items: Vec<BatchItem>,
    meta: RunMeta,
    backend: Arc<dyn ChatBackend>,
    parallelism: usize,
    paths: &RunPaths,
) -> Result<BatchOutcome, InferenceError> {
    if items.is_empty() {
        return Err(InferenceError::InvalidInput("no samples".into()));
    }
    if parallelism < 1 {
        return Err(InferenceError::InvalidConfig("parallelism must be at least 1".into()));
    }
    let ids: BTreeSet<&str> = items.iter().map(|i| i.sample_id.as_str()).collect();
    if ids.len() != items.len() {
        return Err(InferenceError::InvalidInput("duplicate sample ids".into()));
    }
    let prompt_fingerprint = batch_fingerprint(&meta.model, &items);

    let (mut manifest, existing, hasher, bytes) = match recover(paths)? {
        Some((m, records, hasher, bytes)) => {
            if m.meta != meta || m.prompt_fingerprint != prompt_fingerprint {
                return Err(InferenceError::RunCorrupt(
                    "existing run was produced by a different configuration or prompt set".into(),
                ));
            }
            (m, records, hasher, bytes)
        }
        None => {
            if let Some(dir) = paths.run_file.parent() {
                fs::create_dir_all(dir)?;
            }
            File::create(&paths.run_file)?;
            let m = Manifest {
                meta: meta.clone(),
                prompt_fingerprint,
                total: items.len(),
                started: 0,
                finished: 0,
                errors: Vec::new(),
                checksum: RunChecksum { bytes: 0, sha256: hex::encode(Sha256::digest(b"")) },
            };
            write_manifest(&paths.manifest, &m)?;
            (m, Vec::new(), Sha256::new(), 0)
        }
    };

    let answered = answered_ids(&existing);
    let mut pending: Vec<BatchItem> = items
        .iter()
        .filter(|i| !answered.contains(&i.sample_id))
        .cloned()
        .collect();
    pending.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let resumed = items.len() - pending.len();
    manifest.started += pending.len();
    manifest.finished = existing.len();
    manifest.errors.clear();
    write_manifest(&paths.manifest, &manifest)?;

    let (tx, mut rx) = mpsc::channel::<Msg>(parallelism * 2);
    let run_file = paths.run_file.clone();
    let manifest_path = paths.manifest.clone();
    let writer = tokio::task::spawn_blocking(move || -> Result<Manifest, InferenceError> {
        let mut file = OpenOptions::new().append(true).open(&run_file)?;
        let mut hasher = hasher;
        let mut bytes = bytes;
        while let Some(msg) = rx.blocking_recv() {
            match msg {
                Msg::Done(p) => {
                    let mut line = serde_json::to_string(&p)?;
                    line.push('\n');
                    file.write_all(line.as_bytes())?;
                    file.flush()?;
                    hasher.update(line.as_bytes());
                    bytes += line.len() as u64;
                    manifest.finished += 1;
                }
                Msg::Failed(e) => manifest.errors.push(e),
            }
            manifest.checksum = RunChecksum { bytes, sha256: hex::encode(hasher.clone().finalize()) };
            write_manifest(&manifest_path, &manifest)?;
        }
        file.sync_all()?;
        manifest.errors.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        write_manifest(&manifest_path, &manifest)?;
        Ok(manifest)
    });

    let issued = pending.len();
    let semaphore = Arc::new(Semaphore::new(parallelism));
    let mut workers = JoinSet::new();
    let task = meta.task;
    for item in pending {
        let permit = semaphore.clone().acquire_owned().await.expect("semaphore is never closed");
        let backend = backend.clone();
        let tx = tx.clone();
        workers.spawn(async move {
            let msg = match classify(backend.as_ref(), &item.sample_id, &item.prompt).await {
                Ok(raw) => Msg::Done(parse_completion(&raw, task)),
                Err(e) => Msg::Failed(ErrorRecord {
                    sample_id: item.sample_id.clone(),
                    kind: match &e {
                        InferenceError::Transport { .. } => "transport",
                        InferenceError::BackendRejection { .. } => "backend_rejection",
                        _ => "other",
                    }
                    .into(),
                    message: e.to_string(),
                }),
            };
            drop(permit);
            // the writer only stops once every sender is gone
            let _ = tx.send(msg).await;
        });
    }
    drop(tx);
    while let Some(joined) = workers.join_next().await {
        if let Err(e) = joined {
            tracing::error!(error = %e, "request worker panicked");
        }
    }
    let manifest = writer
        .await
        .map_err(|e| InferenceError::Io(std::io::Error::other(e.to_string())))??;

    let mut by_id: BTreeMap<String, Prediction> = BTreeMap::new();
    for p in read_run_file(&paths.run_file)? {
        if ids.contains(p.sample_id.as_str()) {
            by_id.entry(p.sample_id.clone()).or_insert(p);
        }
    }
    Ok(BatchOutcome {
        predictions: by_id.into_values().collect(),
        manifest,
        requests_issued: issued,
        resumed,
    })
}
