//! Self-describing binary container for trained models, plus the JSON
//! metadata sidecar.
//!
//! Layout: magic `KTMD`, version u32, model id, algorithm tag byte,
//! hyperparameter JSON, payload JSON — all length-prefixed, little-endian.
//! Serialized maps are tree-ordered so artifacts from identical runs are
//! byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::registry::{Algorithm, ModelSpec};
use crate::store::TrainedModel;
use crate::{Error, Result};

pub const KTMD_MAGIC: [u8; 4] = *b"KTMD";
pub const KTMD_VERSION: u32 = 1;

/// Training metadata written next to each artifact. Volatile fields such as
/// wall time are deliberately excluded: reruns of the same seed must
/// produce byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub model_id: String,
    pub algorithm: Algorithm,
    pub view: Option<crate::features::Granularity>,
    pub seed: u64,
    pub training_rows: usize,
    pub hyperparameters: std::collections::BTreeMap<String, crate::registry::HyperValue>,
}

fn write_block(w: &mut impl Write, bytes: &[u8]) -> Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_block(r: &mut impl Read) -> Result<Vec<u8>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn write_model(path: impl AsRef<Path>, spec: &ModelSpec, model: &TrainedModel) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    w.write_all(&KTMD_MAGIC)?;
    w.write_all(&KTMD_VERSION.to_le_bytes())?;
    write_block(&mut w, spec.model_id.as_bytes())?;
    w.write_all(&[spec.algorithm.tag()])?;
    write_block(&mut w, serde_json::to_string(&spec.hyperparameters)?.as_bytes())?;
    write_block(&mut w, serde_json::to_string(model)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<(String, Algorithm, TrainedModel)> {
    let file = File::open(path.as_ref())?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != KTMD_MAGIC {
        return Err(Error::BadArtifact(format!("bad KTMD magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if u32::from_le_bytes(word) != KTMD_VERSION {
        return Err(Error::BadArtifact("unsupported KTMD version".into()));
    }
    let model_id = String::from_utf8(read_block(&mut r)?)
        .map_err(|e| Error::BadArtifact(format!("bad model id: {e}")))?;
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)?;
    let algorithm = Algorithm::from_tag(tag[0])
        .ok_or_else(|| Error::BadArtifact(format!("unknown algorithm tag {}", tag[0])))?;
    let _hyper = read_block(&mut r)?;
    let payload = read_block(&mut r)?;
    let model: TrainedModel = serde_json::from_slice(&payload)?;
    Ok((model_id, algorithm, model))
}

pub fn write_sidecar(path: impl AsRef<Path>, sidecar: &Sidecar) -> Result<()> {
    let json = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(path.as_ref(), json)?;
    Ok(())
}
