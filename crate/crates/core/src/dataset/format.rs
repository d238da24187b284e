//! On-disk dataset: `manifest.json` plus one newline-delimited JSON file per
//! (algorithm, distribution) pair. Floats are written with 17 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{task_stats, NormalizationStats, TaskStats, Trajectory};
use crate::error::{Error, Result};
use crate::problems::{DistributionConfig, TaskRef};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub algo: String,
    pub distribution: String,
    pub records: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub budget: usize,
    pub seeds_per_task: usize,
    pub distributions: Vec<DistributionConfig>,
    pub algos: Vec<String>,
    pub tasks: Vec<TaskStats>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    /// Builds the manifest (task statistics, algorithm list) for a trajectory set.
    /// File entries are filled in by [`write_dataset`].
    pub fn new(
        distributions: Vec<DistributionConfig>,
        master_seed: u64,
        budget: usize,
        seeds_per_task: usize,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        for t in &trajectories {
            t.validate()?;
            if !distributions.iter().any(|d| d.name == t.task.distribution) {
                return Err(Error::invalid(format!(
                    "trajectory on unknown distribution `{}`",
                    t.task.distribution
                )));
            }
        }
        let mut algos: Vec<String> = trajectories.iter().map(|t| t.algo.clone()).collect();
        algos.sort();
        algos.dedup();
        let tasks = task_stats(&trajectories).into_values().collect();
        Ok(Dataset {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                master_seed,
                budget,
                seeds_per_task,
                distributions,
                algos,
                tasks,
                files: Vec::new(),
            },
            trajectories,
        })
    }

    pub fn stats(&self) -> BTreeMap<TaskRef, TaskStats> {
        self.manifest
            .tasks
            .iter()
            .map(|s| (s.task.clone(), s.clone()))
            .collect()
    }

    pub fn normalization(&self) -> Result<NormalizationStats> {
        NormalizationStats::from_tasks(self.manifest.tasks.clone())
    }
}

fn push_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

fn encode_record(t: &Trajectory) -> String {
    let mut s = String::with_capacity(32 * t.len() * (t.dim() + 1));
    s.push_str("{\"task\":");
    s.push_str(&serde_json::to_string(&t.task.to_string()).unwrap());
    s.push_str(",\"algo\":");
    s.push_str(&serde_json::to_string(&t.algo).unwrap());
    write!(s, ",\"seed\":{},\"x\":[", t.seed).unwrap();
    for (i, x) in t.xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push('[');
        for (j, v) in x.iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            push_f64(&mut s, *v);
        }
        s.push(']');
    }
    s.push_str("],\"y\":[");
    for (i, y) in t.ys.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        push_f64(&mut s, *y);
    }
    s.push_str("]}\n");
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task: TaskRef,
    algo: String,
    seed: u64,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

fn encode_records(trajs: &[&Trajectory]) -> String {
    trajs.iter().map(|t| encode_record(t)).collect()
}

fn decode_records(path: &Path, text: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: Record = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
        let t = Trajectory {
            task: r.task,
            algo: r.algo,
            seed: r.seed,
            xs: r.x,
            ys: r.y,
        };
        t.validate().map_err(|e| fail(e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

/// Writes trajectories as newline-delimited JSON.
pub fn write_records(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    fs::write(path, encode_records(&refs))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    decode_records(path, &text)
}

fn file_stem(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the data files and the manifest into `dir` (created if needed).
/// Returns the manifest with the file table filled in.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<(String, String), Vec<&Trajectory>> = BTreeMap::new();
    for t in &ds.trajectories {
        groups
            .entry((t.algo.clone(), t.task.distribution.clone()))
            .or_default()
            .push(t);
    }
    let mut manifest = ds.manifest.clone();
    manifest.files.clear();
    for ((algo, dist), trajs) in groups {
        let name = format!("{}__{}.ndjson", file_stem(&algo), file_stem(&dist));
        let text = encode_records(&trajs);
        fs::write(dir.join(&name), &text)?;
        manifest.files.push(FileEntry {
            path: name,
            algo,
            distribution: dist,
            records: trajs.len(),
            sha256: sha256_hex(text.as_bytes()),
        });
    }
    fs::write(
        dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

/// Reads and verifies a dataset directory (version, checksums, record counts).
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: FORMAT_VERSION,
        });
    }
    let mut trajectories = Vec::new();
    for entry in &manifest.files {
        let path: PathBuf = dir.join(&entry.path);
        let bytes = fs::read(&path)?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::Checksum(path));
        }
        let text = String::from_utf8(bytes).map_err(|e| Error::Format {
            path: path.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        let recs = decode_records(&path, &text)?;
        if recs.len() != entry.records {
            return Err(Error::Format {
                path,
                line: 0,
                message: format!("expected {} records, found {}", entry.records, recs.len()),
            });
        }
        trajectories.extend(recs);
    }
    Ok(Dataset {
        manifest,
        trajectories,
    })
}
