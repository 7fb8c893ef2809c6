//! Demo corpora (one JSON record per line) and binary checkpoints.
//!
//! Checkpoint layout: the 8-byte magic `UINAVCK1`, a little-endian `u32`
//! header length, the JSON header, `param_count` little-endian `f32`
//! parameters in layout order, then the SHA-256 of all preceding bytes.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::ENCODING_VERSION;
use crate::model::{DemoEpisode, DemoStep, EpisodeConfig, ScreenshotDemo};
use crate::net::{Layout, NetDims, PolicyParams};
use crate::train::{Algo, TrainedPolicy};

pub const SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UINAVCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unknown schema version {version}")]
    UnknownSchema { line: usize, version: u32 },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("checkpoint header: {0}")]
    Header(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordKind {
    DemoEpisode,
    ScreenshotDemo,
}

/// One line of a demo file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub schema_version: u32,
    pub kind: RecordKind,
    #[serde(default)]
    pub augmented: bool,
    /// Source episode of an augmented copy, or the failure a screenshot came
    /// from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EpisodeConfig>,
    pub steps: Vec<DemoStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CorpusEntry {
    Episode {
        episode: DemoEpisode,
        augmented: bool,
        source: Option<String>,
    },
    Screenshot(ScreenshotDemo),
}

impl CorpusEntry {
    pub fn episode(episode: DemoEpisode) -> Self {
        CorpusEntry::Episode {
            episode,
            augmented: false,
            source: None,
        }
    }

    pub fn to_record(&self) -> DemoRecord {
        match self {
            CorpusEntry::Episode {
                episode,
                augmented,
                source,
            } => DemoRecord {
                schema_version: SCHEMA_VERSION,
                kind: RecordKind::DemoEpisode,
                augmented: *augmented,
                source: source.clone(),
                config: Some(episode.config.clone()),
                steps: episode.steps.clone(),
                success: Some(episode.success),
            },
            CorpusEntry::Screenshot(s) => DemoRecord {
                schema_version: SCHEMA_VERSION,
                kind: RecordKind::ScreenshotDemo,
                augmented: false,
                source: Some(s.origin.clone()),
                config: None,
                steps: vec![s.step.clone()],
                success: None,
            },
        }
    }

    fn from_record(r: DemoRecord, line: usize) -> Result<Self, PersistError> {
        let bad = |msg: &str| PersistError::Malformed {
            line,
            msg: msg.to_string(),
        };
        if r.schema_version != SCHEMA_VERSION {
            return Err(PersistError::UnknownSchema {
                line,
                version: r.schema_version,
            });
        }
        match r.kind {
            RecordKind::DemoEpisode => Ok(CorpusEntry::Episode {
                episode: DemoEpisode {
                    config: r.config.ok_or_else(|| bad("episode record without config"))?,
                    steps: r.steps,
                    success: r.success.ok_or_else(|| bad("episode record without success"))?,
                },
                augmented: r.augmented,
                source: r.source,
            }),
            RecordKind::ScreenshotDemo => {
                let mut steps = r.steps;
                if steps.len() != 1 {
                    return Err(bad("screenshot record must hold exactly one step"));
                }
                Ok(CorpusEntry::Screenshot(ScreenshotDemo {
                    step: steps.remove(0),
                    origin: r.source.unwrap_or_default(),
                }))
            }
        }
    }
}

pub fn record_line(entry: &CorpusEntry) -> String {
    serde_json::to_string(&entry.to_record()).expect("records serialize")
}

pub fn parse_line(text: &str, line: usize) -> Result<CorpusEntry, PersistError> {
    let r: DemoRecord = serde_json::from_str(text).map_err(|e| PersistError::Malformed {
        line,
        msg: e.to_string(),
    })?;
    CorpusEntry::from_record(r, line)
}

pub fn save_demos(path: &Path, entries: &[CorpusEntry]) -> Result<(), PersistError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&record_line(e));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Appends one record, creating the file if needed.
pub fn append_demo(path: &Path, entry: &CorpusEntry) -> Result<(), PersistError> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    writeln!(f, "{}", record_line(entry)).map_err(io_err(path))
}

/// Blank lines are skipped; anything else must parse.
pub fn load_demos(path: &Path) -> Result<Vec<CorpusEntry>, PersistError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

/// Episodes and screenshots of a corpus, in file order.
pub fn split_corpus(entries: Vec<CorpusEntry>) -> (Vec<DemoEpisode>, Vec<ScreenshotDemo>) {
    let mut eps = Vec::new();
    let mut shots = Vec::new();
    for e in entries {
        match e {
            CorpusEntry::Episode { episode, .. } => eps.push(episode),
            CorpusEntry::Screenshot(s) => shots.push(s),
        }
    }
    (eps, shots)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    encoding_version: u32,
    dims: NetDims,
    algo: Algo,
    use_masks: bool,
    param_count: usize,
}

pub fn checkpoint_bytes(p: &TrainedPolicy) -> Vec<u8> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        encoding_version: ENCODING_VERSION,
        dims: p.params.dims,
        algo: p.algo,
        use_masks: p.use_masks,
        param_count: p.params.data.len(),
    };
    let h = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + h.len() + 4 * p.params.data.len() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(h.len() as u32).to_le_bytes());
    out.extend_from_slice(&h);
    for x in &p.params.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<TrainedPolicy, PersistError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(PersistError::BadMagic);
    }
    if bytes.len() < 8 + 4 + 32 {
        return Err(PersistError::Truncated);
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(PersistError::Checksum);
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let rest = &body[12..];
    if rest.len() < hlen {
        return Err(PersistError::Truncated);
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..hlen]).map_err(|e| PersistError::Header(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(PersistError::CheckpointVersion(header.format_version));
    }
    if header.encoding_version != ENCODING_VERSION {
        return Err(PersistError::Header(format!(
            "encoding version {} (expected {ENCODING_VERSION})",
            header.encoding_version
        )));
    }
    let layout = Layout::new(header.dims).map_err(|e| PersistError::Header(e.to_string()))?;
    if layout.len() != header.param_count {
        return Err(PersistError::Header(format!(
            "{} parameters declared, layout has {}",
            header.param_count,
            layout.len()
        )));
    }
    let blob = &rest[hlen..];
    if blob.len() != 4 * header.param_count {
        return Err(PersistError::Truncated);
    }
    let data = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(TrainedPolicy {
        params: PolicyParams {
            dims: header.dims,
            data,
        },
        algo: header.algo,
        use_masks: header.use_masks,
    })
}

pub fn save_checkpoint(path: &Path, p: &TrainedPolicy) -> Result<(), PersistError> {
    fs::write(path, checkpoint_bytes(p)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedPolicy, PersistError> {
    parse_checkpoint(&fs::read(path).map_err(io_err(path))?)
}
