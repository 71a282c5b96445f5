//! Binary track files.
//!
//! Little-endian layout:
//!
//! ```text
//! 0   magic "GTLTRACK"
//! 8   u32 format version
//! 12  u32 stage id
//! 16  u64 n_tracks
//! 24  u64 n_states per track
//! 32  u64 dim
//! 40  [u8; 32] SHA-256 of the producing checkpoint's weights
//! 72  f64 states, track-major then state then coordinate
//! ..  [u8; 32] SHA-256 of every preceding byte
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{read_file, write_atomic};
use crate::geometry::Track;
use crate::numerics::Vector;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"GTLTRACK";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 72;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct TrackFile {
    pub stage: u32,
    /// Hex SHA-256 tying the tracks to a checkpoint.
    pub model_sha256: String,
    /// States per track; every track has the same count.
    pub n_states: usize,
    pub dim: usize,
    pub tracks: Vec<Track>,
}

impl TrackFile {
    /// Builds a file from tracks of one shape. With no tracks, `n_states`
    /// and `dim` are 0.
    pub fn new(stage: u32, model_sha256: &str, tracks: Vec<Track>) -> Result<Self> {
        let (n_states, dim) = tracks.first().map_or((0, 0), |t| (t.segments() + 1, t.dim()));
        if let Some(t) = tracks.iter().find(|t| t.segments() + 1 != n_states || t.dim() != dim) {
            return Err(Error::dim(
                "track file shape",
                format!("{n_states} states of dim {dim}"),
                format!("{} states of dim {}", t.segments() + 1, t.dim()),
            ));
        }
        let digest = hex::decode(model_sha256).ok().filter(|d| d.len() == DIGEST_LEN);
        if digest.is_none() {
            return Err(Error::Config {
                path: "model_sha256".to_string(),
                message: "expected 64 hex digits".to_string(),
            });
        }
        Ok(TrackFile {
            stage,
            model_sha256: model_sha256.to_ascii_lowercase(),
            n_states,
            dim,
            tracks,
        })
    }
}

pub fn encode_tracks(file: &TrackFile) -> Vec<u8> {
    let body = file.tracks.len() * file.n_states * file.dim * 8;
    let mut out = Vec::with_capacity(HEADER_LEN + body + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&file.stage.to_le_bytes());
    out.extend_from_slice(&(file.tracks.len() as u64).to_le_bytes());
    out.extend_from_slice(&(file.n_states as u64).to_le_bytes());
    out.extend_from_slice(&(file.dim as u64).to_le_bytes());
    out.extend_from_slice(&hex::decode(&file.model_sha256).expect("validated by TrackFile::new"));
    for t in &file.tracks {
        for s in t.states() {
            for v in s.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn decode_tracks(bytes: &[u8], file: &str) -> Result<TrackFile> {
    let format = |offset: usize, message: String| Error::Format {
        file: file.to_string(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            file: file.to_string(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(format(0, "bad magic".to_string()));
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(format(8, format!("unsupported version {version}")));
    }
    let stage = u32_at(bytes, 12);
    let n_tracks = u64_at(bytes, 16);
    let n_states = u64_at(bytes, 24);
    let dim = u64_at(bytes, 32);
    if n_tracks > 0 && n_states < 2 {
        return Err(format(24, format!("{n_states} states per track, need at least 2")));
    }
    if n_tracks > 0 && dim == 0 {
        return Err(format(32, "dimension 0".to_string()));
    }
    let expected = n_tracks
        .checked_mul(n_states)
        .and_then(|v| v.checked_mul(dim))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add((HEADER_LEN + DIGEST_LEN) as u64))
        .ok_or_else(|| format(16, "header counts overflow".to_string()))?;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            file: file.to_string(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(format(expected as usize, format!("{} trailing bytes", bytes.len() as u64 - expected)));
    }
    let body_end = bytes.len() - DIGEST_LEN;
    let actual = hex::encode(Sha256::digest(&bytes[..body_end]));
    let stored = hex::encode(&bytes[body_end..]);
    if actual != stored {
        return Err(Error::Checksum { expected: stored, actual });
    }
    let (n_tracks, n_states, dim) = (n_tracks as usize, n_states as usize, dim as usize);
    let mut tracks = Vec::with_capacity(n_tracks);
    let mut at = HEADER_LEN;
    for _ in 0..n_tracks {
        let mut states = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let start = at;
            let v: Vec<f64> = (0..dim)
                .map(|_| {
                    let x = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
                    at += 8;
                    x
                })
                .collect();
            states.push(Vector::new(v).map_err(|_| format(start, "non-finite state".to_string()))?);
        }
        tracks.push(Track::new(states)?);
    }
    Ok(TrackFile {
        stage,
        model_sha256: hex::encode(&bytes[40..72]),
        n_states,
        dim,
        tracks,
    })
}

pub fn save_tracks(path: &Path, file: &TrackFile) -> Result<()> {
    write_atomic(path, &encode_tracks(file))
}

pub fn load_tracks(path: &Path) -> Result<TrackFile> {
    decode_tracks(&read_file(path)?, &path.display().to_string())
}
