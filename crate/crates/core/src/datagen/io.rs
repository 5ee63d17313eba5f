//! JSON Lines corpus format.
//!
//! One file per trajectory. Line 1 is a header object
//! `{"format","version","n","dt","frames","config","init","seed"}`; every
//! following line is one frame `{"t": k, "pos": [[x, y], ...], "contact": bool}`.
//! Floats are written in shortest round-trip form, so reads are bit-exact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Trajectory, TrajectoryMeta, CORPUS_FORMAT_VERSION};
use crate::geom::{PointSet, Vec2};
use crate::sim::{InitCondition, WorldConfig};

const FORMAT_TAG: &str = "tpnet-corpus";

#[derive(Debug, Error)]
pub enum CorpusIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported corpus version {found} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: file truncated at frame {frame}")]
    Truncated { path: PathBuf, frame: usize },
    #[error("{path}: frame {frame} has {found} particles, header says {expected}")]
    ParticleCount { path: PathBuf, frame: usize, expected: usize, found: usize },
    #[error("{path}: malformed line {line}: {msg}")]
    Malformed { path: PathBuf, line: usize, msg: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    n: usize,
    dt: f64,
    frames: usize,
    config: WorldConfig,
    init: InitCondition,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct FrameLine {
    t: usize,
    pos: Vec<[f64; 2]>,
    contact: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusIoError + '_ {
    move |source| CorpusIoError::Io { path: path.to_path_buf(), source }
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CorpusIoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: FORMAT_TAG.to_string(),
        version: traj.meta.version,
        n: traj.meta.config.n,
        dt: traj.meta.config.dt,
        frames: traj.frames.len(),
        config: traj.meta.config.clone(),
        init: traj.meta.init,
        seed: traj.meta.seed,
    };
    let json = |e: serde_json::Error| CorpusIoError::Malformed { path: path.to_path_buf(), line: 0, msg: e.to_string() };
    serde_json::to_writer(&mut w, &header).map_err(json)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    for (t, (frame, &contact)) in traj.frames.iter().zip(&traj.contact).enumerate() {
        let line = FrameLine { t, pos: frame.iter().map(|&p| p.into()).collect(), contact };
        serde_json::to_writer(&mut w, &line).map_err(json)?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, CorpusIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let malformed = |line: usize, msg: String| CorpusIoError::Malformed { path: path.to_path_buf(), line, msg };

    let first = lines.first().ok_or_else(|| CorpusIoError::Truncated { path: path.to_path_buf(), frame: 0 })?;
    let header_value: serde_json::Value = serde_json::from_str(first).map_err(|e| {
        if lines.len() == 1 && !complete {
            CorpusIoError::Truncated { path: path.to_path_buf(), frame: 0 }
        } else {
            malformed(1, e.to_string())
        }
    })?;
    if header_value.get("format").and_then(|f| f.as_str()) != Some(FORMAT_TAG) {
        return Err(malformed(1, "not a tpnet corpus header".into()));
    }
    let version = header_value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CORPUS_FORMAT_VERSION {
        return Err(CorpusIoError::Version { path: path.to_path_buf(), found: version, expected: CORPUS_FORMAT_VERSION });
    }
    let header: Header = serde_json::from_value(header_value).map_err(|e| malformed(1, e.to_string()))?;

    let mut frames = Vec::with_capacity(header.frames);
    let mut contact = Vec::with_capacity(header.frames);
    for (k, raw) in lines[1..].iter().enumerate() {
        let is_last = k + 2 == lines.len();
        let line: FrameLine = match serde_json::from_str(raw) {
            Ok(l) => l,
            Err(_) if is_last && !complete => {
                return Err(CorpusIoError::Truncated { path: path.to_path_buf(), frame: k });
            }
            Err(e) => return Err(malformed(k + 2, e.to_string())),
        };
        if line.t != k {
            return Err(malformed(k + 2, format!("frame index {} out of sequence (expected {k})", line.t)));
        }
        if line.pos.len() != header.n {
            return Err(CorpusIoError::ParticleCount {
                path: path.to_path_buf(),
                frame: k,
                expected: header.n,
                found: line.pos.len(),
            });
        }
        frames.push(PointSet::new(line.pos.into_iter().map(Vec2::from).collect()));
        contact.push(line.contact);
    }
    if frames.len() < header.frames {
        return Err(CorpusIoError::Truncated { path: path.to_path_buf(), frame: frames.len() });
    }
    if frames.len() > header.frames {
        return Err(malformed(header.frames + 2, "more frames than the header declares".into()));
    }

    Ok(Trajectory {
        meta: TrajectoryMeta { version, config: header.config, init: header.init, seed: header.seed },
        frames,
        contact,
    })
}

pub fn trajectory_file_name(index: usize) -> String {
    format!("traj_{index:05}.jsonl")
}

/// Writes one `traj_NNNNN.jsonl` per trajectory into `dir` (created if needed).
pub fn write_corpus(dir: &Path, trajectories: &[Trajectory]) -> Result<Vec<PathBuf>, CorpusIoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    trajectories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let path = dir.join(trajectory_file_name(i));
            write_trajectory(&path, t).map(|_| path)
        })
        .collect()
}

/// Reads every `*.jsonl` file in `dir`, in file-name order.
pub fn read_corpus(dir: &Path) -> Result<Vec<Trajectory>, CorpusIoError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_trajectory(p)).collect()
}
