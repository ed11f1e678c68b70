//! Artifacts: the trajectory CSV schema, JSON sidecars, seeds and the run
//! manifest.

use std::fs;
use std::path::{Path, PathBuf};

use lindyn::simulator::Trajectory;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::RunError;

/// A named output file held in memory until the run has finished.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json<T: Serialize>(name: &str, value: &T) -> Artifact {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serialises");
        bytes.push(b'\n');
        Artifact { name: name.into(), bytes }
    }

    pub fn csv(name: &str, header: &[String], rows: &[Vec<String>]) -> Artifact {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(r).expect("in-memory write");
        }
        Artifact { name: name.into(), bytes: w.into_inner().expect("in-memory flush") }
    }
}

/// Shortest round-trip text for a float; NaN is written as an empty cell.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

pub fn arch_name((a, b, c): (usize, usize, usize)) -> String {
    format!("{a}x{b}x{c}")
}

/// Sub-run seed: `seed` plus a stable FNV-1a hash of the sub-run's identity.
pub fn sub_seed(seed: u64, role: &str, lambda: f64, arch: (usize, usize, usize), trial: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(role.as_bytes());
    // −0.0 and 0.0 name the same sub-run.
    eat(&(lambda + 0.0).to_bits().to_le_bytes());
    for w in [arch.0, arch.1, arch.2] {
        eat(&(w as u64).to_le_bytes());
    }
    eat(&trial.to_le_bytes());
    seed.wrapping_add(h)
}

/// Rows of the trajectory schema
/// `source,step,time,loss,sval_1..sval_h,ntk_distance,lambda,arch`.
/// `(source, step, time, loss, svals, ntk_distance, lambda, arch)`.
type TrajectoryRow = (String, usize, f64, f64, Vec<f64>, f64, f64, String);

#[derive(Debug, Default)]
pub struct TrajectoryTable {
    width: usize,
    rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    pub fn new() -> Self {
        TrajectoryTable::default()
    }

    pub fn push(&mut self, source: &str, traj: &Trajectory, lambda: f64, arch: (usize, usize, usize)) {
        let name = arch_name(arch);
        for k in 0..traj.len() {
            let sv = traj.network_svals[k].clone();
            self.width = self.width.max(sv.len());
            self.rows.push((
                source.to_string(),
                traj.steps[k],
                traj.times[k],
                traj.losses[k],
                sv,
                traj.ntk_distance[k],
                lambda,
                name.clone(),
            ));
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn artifact(&self, name: &str) -> Artifact {
        let mut header: Vec<String> = ["source", "step", "time", "loss"].map(String::from).to_vec();
        header.extend((1..=self.width).map(|i| format!("sval_{i}")));
        header.extend(["ntk_distance", "lambda", "arch"].map(String::from));
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(src, step, t, l, sv, d, lam, arch)| {
                let mut r = vec![src.clone(), step.to_string(), num(*t), num(*l)];
                r.extend((0..self.width).map(|i| sv.get(i).map_or(String::new(), |v| num(*v))));
                r.extend([num(*d), num(*lam), arch.clone()]);
                r
            })
            .collect();
        Artifact::csv(name, &header, &rows)
    }
}

/// Full `QQᵀ` snapshots of a trajectory for the JSON sidecar.
#[derive(Debug, Serialize)]
pub struct QqtSnapshots {
    pub source: String,
    pub lambda: f64,
    pub arch: String,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub qqt: Vec<Vec<Vec<f64>>>,
}

impl QqtSnapshots {
    pub fn new(source: &str, traj: &Trajectory, lambda: f64, arch: (usize, usize, usize)) -> Self {
        QqtSnapshots {
            source: source.into(),
            lambda,
            arch: arch_name(arch),
            steps: traj.steps.clone(),
            times: traj.times.clone(),
            qqt: traj.qqt.iter().map(|q| q.to_rows()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub library_version: String,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub const MANIFEST: &str = "manifest.json";

/// Writes the artifacts into `dir` and then the manifest listing them.
pub fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    artifacts: &[Artifact],
    wall_time_s: f64,
) -> Result<RunManifest, RunError> {
    let io = |context: String| move |source| RunError::Io { context, source };
    fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display())))?;
    let mut files = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        let path = dir.join(&a.name);
        fs::write(&path, &a.bytes).map_err(io(format!("writing {}", path.display())))?;
        files.push(FileEntry { path: a.name.clone(), bytes: a.bytes.len(), sha256: sha256_hex(&a.bytes) });
    }
    let manifest = RunManifest {
        config: config.clone(),
        library_version: lindyn::VERSION.to_string(),
        wall_time_s,
        files,
    };
    let m = Artifact::json(MANIFEST, &manifest);
    let path = dir.join(MANIFEST);
    fs::write(&path, &m.bytes).map_err(io(format!("writing {}", path.display())))?;
    Ok(manifest)
}

/// Files whose content no longer matches the manifest.
pub fn verify(dir: &Path, manifest: &RunManifest) -> Vec<PathBuf> {
    manifest
        .files
        .iter()
        .filter(|f| {
            let p = dir.join(&f.path);
            fs::read(&p).map(|b| sha256_hex(&b) != f.sha256).unwrap_or(true)
        })
        .map(|f| dir.join(&f.path))
        .collect()
}
