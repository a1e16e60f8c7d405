//! File writers. Every file goes through [`OutputDir`] so the manifest sees it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use opdyn::{DensityField, SystemState, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Formats};
use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// One line of the snapshot NDJSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub t: f64,
    pub positions: Vec<f64>,
    pub opinions: Vec<f64>,
}

impl SnapshotRecord {
    pub fn from_state(s: &SystemState<f64>) -> Self {
        SnapshotRecord { t: s.time, positions: s.positions().to_vec(), opinions: s.opinions().to_vec() }
    }

    pub fn dim(&self) -> usize {
        if self.opinions.is_empty() {
            0
        } else {
            self.positions.len() / self.opinions.len()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub file: String,
    pub schema: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Header line of `manifest.ndjson`; one [`FileEntry`] line per output follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: f64,
    pub wall_clock_s: f64,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn to_ndjson(&self) -> String {
        let head = serde_json::json!({
            "mode": self.mode,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "started_unix": self.started_unix,
            "wall_clock_s": self.wall_clock_s,
            "n_files": self.files.len(),
        });
        let mut out = format!("{head}\n");
        for f in &self.files {
            out.push_str(&serde_json::to_string(f).expect("file entry serialises"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let bad = |e: serde_json::Error| CliError::Config(format!("malformed manifest: {e}"));
        let mut lines = text.lines();
        let head: serde_json::Value = serde_json::from_str(lines.next().unwrap_or("")).map_err(bad)?;
        let files = lines.map(|l| serde_json::from_str(l).map_err(bad)).collect::<CliResult<Vec<FileEntry>>>()?;
        let field = |k: &str| head.get(k).cloned().unwrap_or_default();
        Ok(RunManifest {
            mode: field("mode").as_str().unwrap_or_default().to_string(),
            config_hash: field("config_hash").as_str().unwrap_or_default().to_string(),
            seed: field("seed").as_u64().unwrap_or_default(),
            version: field("version").as_str().unwrap_or_default().to_string(),
            started_unix: field("started_unix").as_f64().unwrap_or_default(),
            wall_clock_s: field("wall_clock_s").as_f64().unwrap_or_default(),
            files,
        })
    }

    /// Re-hashes every listed file under `dir`; returns the names that do not match.
    pub fn verify(&self, dir: &Path) -> CliResult<Vec<String>> {
        let mut bad = Vec::new();
        for f in &self.files {
            let bytes = fs::read(dir.join(&f.file))?;
            if sha256_hex(&bytes) != f.sha256 {
                bad.push(f.file.clone());
            }
        }
        Ok(bad)
    }
}

pub struct OutputDir {
    root: PathBuf,
    formats: Formats,
    entries: Vec<FileEntry>,
    started: Instant,
    started_unix: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Csv,
    Ndjson,
    Svg,
}

impl OutputDir {
    pub fn create(root: &Path, formats: Formats) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        Ok(OutputDir { root: root.to_path_buf(), formats, entries: Vec::new(), started: Instant::now(), started_unix })
    }

    pub fn wants(&self, kind: Kind) -> bool {
        match kind {
            Kind::Csv => self.formats.csv,
            Kind::Ndjson => self.formats.ndjson,
            Kind::Svg => self.formats.svg,
        }
    }

    /// Writes `name` if its format is enabled; `schema` names the column or record layout.
    pub fn write(&mut self, kind: Kind, name: &str, schema: &str, contents: &str) -> CliResult<()> {
        if !self.wants(kind) {
            return Ok(());
        }
        fs::write(self.root.join(name), contents)?;
        self.entries.push(FileEntry {
            file: name.to_string(),
            schema: schema.to_string(),
            bytes: contents.len(),
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn finish(self, cfg: &ExperimentConfig) -> CliResult<RunManifest> {
        let manifest = RunManifest {
            mode: cfg.mode.name().to_string(),
            config_hash: cfg.hash(),
            seed: cfg.sim.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started_unix,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
            files: self.entries,
        };
        fs::write(self.root.join("manifest.ndjson"), manifest.to_ndjson())?;
        Ok(manifest)
    }
}

pub fn snapshots_ndjson(traj: &Trajectory<f64>) -> String {
    let mut out = String::new();
    for s in &traj.snapshots {
        out.push_str(&serde_json::to_string(&SnapshotRecord::from_state(s)).expect("snapshot serialises"));
        out.push('\n');
    }
    out
}

pub fn read_snapshots(text: &str) -> CliResult<Vec<SnapshotRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Config(format!("snapshot line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn trajectory_csv(traj: &Trajectory<f64>) -> String {
    let d = traj.config.model.dim;
    let mut out = String::from("t,agent");
    for a in 0..d {
        let _ = write!(out, ",x_{a}");
    }
    out.push_str(",theta\n");
    for s in &traj.snapshots {
        for k in 0..s.len() {
            let _ = write!(out, "{},{k}", s.time);
            for x in s.position(k) {
                let _ = write!(out, ",{x}");
            }
            let _ = writeln!(out, ",{}", s.opinions()[k]);
        }
    }
    out
}

pub fn density_csv(snapshots: &[DensityField<f64>]) -> String {
    let mut out = String::from("t,i,j,z,eta,rho\n");
    for f in snapshots {
        let g = f.grid;
        for i in 0..g.nz {
            for j in 0..g.neta {
                let _ = writeln!(out, "{},{i},{j},{},{},{}", f.time, g.z(i), g.eta(j), f.at(i, j));
            }
        }
    }
    out
}

/// Fixed opinion bins; values outside the range land in the edge bins.
pub const HIST_RANGE: (f64, f64) = (-1.2, 1.2);
pub const HIST_BINS: usize = 24;

pub fn opinion_histogram(opinions: &[f64]) -> Vec<usize> {
    let (lo, hi) = HIST_RANGE;
    let mut counts = vec![0; HIST_BINS];
    for &th in opinions {
        let b = ((th - lo) / (hi - lo) * HIST_BINS as f64).floor();
        let b = if b.is_nan() { 0 } else { (b.max(0.0) as usize).min(HIST_BINS - 1) };
        counts[b] += 1;
    }
    counts
}

pub fn bin_edges(b: usize) -> (f64, f64) {
    let (lo, hi) = HIST_RANGE;
    let w = (hi - lo) / HIST_BINS as f64;
    (lo + w * b as f64, lo + w * (b + 1) as f64)
}
