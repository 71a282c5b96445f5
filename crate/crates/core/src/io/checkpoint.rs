use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_file, write_atomic, SCHEMA_VERSION};
use crate::network::{ArchKind, Architecture, Network};
use crate::numerics::Rng;
use crate::{Error, Result};

/// A trained or initialized model with the descriptor and seed that made it.
/// Weights are stored as nested decimal arrays with 17 significant digits,
/// so a load reproduces them bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub architecture: Architecture,
    pub seed: u64,
    pub rng: String,
    /// SHA-256 of the compact JSON encoding of `weights`.
    pub weights_sha256: String,
    pub weights: Network,
}

/// Hex SHA-256 of the compact JSON encoding of the network weights.
pub fn model_checksum(net: &Network) -> Result<String> {
    let bytes = serde_json::to_vec(net)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn check_matches(arch: &Architecture, net: &Network) -> Result<()> {
    net.validate()?;
    let shape_err = |what: &str| Error::dim("checkpoint weights vs architecture", what.to_string(), "different shape");
    if net.kind() != arch.kind || net.stages.iter().any(|s| s.kind() != arch.kind) {
        return Err(shape_err(arch.kind.as_str()));
    }
    if net.input_dim() != arch.input_dim {
        return Err(Error::dim("checkpoint input_dim", arch.input_dim, net.input_dim()));
    }
    if net.output_dim() != arch.n_classes {
        return Err(Error::dim("checkpoint n_classes", arch.n_classes, net.output_dim()));
    }
    let widths: Vec<usize> = net.stages.iter().map(|s| s.width()).collect();
    if widths != arch.widths {
        return Err(Error::dim("checkpoint widths", format!("{:?}", arch.widths), format!("{widths:?}")));
    }
    let per_stage = match arch.kind {
        ArchKind::Plain => 2 * arch.blocks_per_stage,
        ArchKind::Resnet => arch.blocks_per_stage,
    };
    if let Some(s) = net.stages.iter().find(|s| s.depth() != per_stage) {
        return Err(Error::dim("checkpoint stage depth", per_stage, s.depth()));
    }
    if net.stem.is_some() != (arch.input_dim != arch.widths[0]) {
        return Err(shape_err("stem present exactly when input_dim differs from widths[0]"));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(architecture: Architecture, seed: u64, weights: Network) -> Result<Self> {
        architecture.validate()?;
        check_matches(&architecture, &weights)?;
        Ok(Checkpoint {
            schema_version: SCHEMA_VERSION,
            weights_sha256: model_checksum(&weights)?,
            architecture,
            seed,
            rng: Rng::ALGORITHM.to_string(),
            weights,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and verifies a checkpoint: schema version, weight checksum and
    /// agreement between weights and architecture.
    pub fn from_json(text: &str, file: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ck: Checkpoint = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: format!("{file}: {}", e.path()),
            message: e.inner().to_string(),
        })?;
        if ck.schema_version != SCHEMA_VERSION {
            return Err(Error::Config {
                path: format!("{file}: schema_version"),
                message: format!("unsupported version {}, expected {SCHEMA_VERSION}", ck.schema_version),
            });
        }
        let actual = model_checksum(&ck.weights)?;
        if actual != ck.weights_sha256 {
            return Err(Error::Checksum {
                expected: ck.weights_sha256,
                actual,
            });
        }
        ck.architecture.validate()?;
        check_matches(&ck.architecture, &ck.weights)?;
        Ok(ck)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, ck.to_json()?.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format {
        file: path.display().to_string(),
        offset: e.utf8_error().valid_up_to() as u64,
        message: "invalid UTF-8".to_string(),
    })?;
    Checkpoint::from_json(&text, &path.display().to_string())
}
