//! Encoder checkpoints: magic, config, then every weight tensor with its
//! name and shape, little-endian. Optimizer state is optional and appended
//! behind a flag byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{AdamState, Tensor};
use crate::{Error, Result};

use super::{EncoderConfig, KtTransformer};

pub const KTTX_MAGIC: [u8; 4] = *b"KTTX";
pub const KTTX_VERSION: u32 = 1;

fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::BadArtifact(format!("bad utf8 in checkpoint: {e}")))
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    write_string(w, name)?;
    w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
    for &d in &t.shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Tensor)> {
    let name = read_string(r)?;
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rank = u32::from_le_bytes(word) as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut long = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut long)?;
        shape.push(u64::from_le_bytes(long) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut long)?;
        data.push(f64::from_le_bytes(long));
    }
    Ok((name, Tensor::new(shape, data)))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &KtTransformer,
    optimizer: Option<&AdamState>,
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    w.write_all(&KTTX_MAGIC)?;
    w.write_all(&KTTX_VERSION.to_le_bytes())?;
    let config_json = serde_json::to_string(&model.config)?;
    write_string(&mut w, &config_json)?;
    w.write_all(&(model.n_questions as u64).to_le_bytes())?;
    w.write_all(&(model.params.len() as u32).to_le_bytes())?;
    for (name, t) in model.names.iter().zip(&model.params) {
        write_tensor(&mut w, name, t)?;
    }
    match optimizer {
        None => w.write_all(&[0u8])?,
        Some(state) => {
            w.write_all(&[1u8])?;
            w.write_all(&state.step.to_le_bytes())?;
            for (i, (m, v)) in state.m.iter().zip(&state.v).enumerate() {
                write_tensor(&mut w, &format!("adam.m{i}"), &Tensor::new(vec![m.len()], m.clone()))?;
                write_tensor(&mut w, &format!("adam.v{i}"), &Tensor::new(vec![v.len()], v.clone()))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(KtTransformer, Option<AdamState>)> {
    let file = File::open(path.as_ref())?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != KTTX_MAGIC {
        return Err(Error::BadArtifact(format!("bad KTTX magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if u32::from_le_bytes(word) != KTTX_VERSION {
        return Err(Error::BadArtifact("unsupported KTTX version".into()));
    }
    let config: EncoderConfig = serde_json::from_str(&read_string(&mut r)?)?;
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let n_questions = u64::from_le_bytes(long) as usize;
    r.read_exact(&mut word)?;
    let n_params = u32::from_le_bytes(word) as usize;
    let mut names = Vec::with_capacity(n_params);
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let (name, t) = read_tensor(&mut r)?;
        names.push(name);
        params.push(t);
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let optimizer = if flag[0] == 1 {
        r.read_exact(&mut long)?;
        let step = u64::from_le_bytes(long);
        let mut m = Vec::with_capacity(n_params);
        let mut v = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let (_, tm) = read_tensor(&mut r)?;
            let (_, tv) = read_tensor(&mut r)?;
            m.push(tm.data);
            v.push(tv.data);
        }
        Some(AdamState { m, v, step })
    } else {
        None
    };
    let positional = super::sinusoidal_positional_encoding(config.max_seq_len, config.d_model);
    Ok((KtTransformer { config, n_questions, params, names, positional }, optimizer))
}
