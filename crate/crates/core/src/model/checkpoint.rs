//! Checkpoint directories: `config.json` plus a flat named-tensor file.
//!
//! Tensor file layout (little-endian): magic `CPTT`, `u32` version, `u32`
//! count, then per tensor `u32` name length, UTF-8 name, `u8` dtype code,
//! `u32` rank, `u64` dims, row-major payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::params::{ParamRef, Params};
use super::{ConceptModel, EncoderConfig};
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tokenizer::WordPiece;

const MAGIC: &[u8; 4] = b"CPTT";
const TENSOR_VERSION: u32 = 1;
pub const FORMAT_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.bin";
pub const VOCAB_FILE: &str = "vocab.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub vocab_size: usize,
    pub num_concepts: usize,
    /// Concept ids in head row order.
    pub concepts: Vec<String>,
    pub dtype: DType,
}

#[derive(Clone, Debug)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    bytes: Vec<u8>,
}

impl StoredTensor {
    fn values<T: Scalar>(&self) -> Vec<T> {
        let w = self.dtype.width();
        self.bytes
            .chunks_exact(w)
            .map(|c| match self.dtype {
                DType::F32 if T::DTYPE == DType::F32 => T::read_le(c),
                DType::F64 if T::DTYPE == DType::F64 => T::read_le(c),
                DType::F32 => T::lit(f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))),
                DType::F64 => T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))),
            })
            .collect()
    }
}

pub fn encode_tensors<T: Scalar>(params: &[ParamRef<'_, T>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(T::DTYPE.code());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.data {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("{}: truncated at byte {}", self.origin, self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8], origin: &str) -> Result<Vec<StoredTensor>> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{origin}: not a tensor file")));
    }
    let version = r.u32()?;
    if version != TENSOR_VERSION {
        return Err(Error::Checkpoint(format!("{origin}: unsupported tensor format {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint(format!("{origin}: tensor name is not UTF-8")))?
            .to_string();
        let code = r.take(1)?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Checkpoint(format!("{origin}: tensor {name} has unknown dtype {code}")))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| Error::Checkpoint(format!("{origin}: tensor {name} is too large")))?;
        let bytes = r.take(numel)?.to_vec();
        out.push(StoredTensor { name, dtype, shape, bytes });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{origin}: trailing bytes after last tensor")));
    }
    Ok(out)
}

pub fn read_tensors(path: &Path) -> Result<Vec<StoredTensor>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes, &path.display().to_string())
}

/// Copies stored values into `target`, checking that every expected tensor
/// exists with the right shape. With `strict`, unexpected tensors are errors;
/// otherwise they are ignored (loading an encoder out of a full model).
pub fn load_params<T: Scalar, P: Params<T>>(target: &mut P, tensors: &[StoredTensor], prefix: &str, strict: bool) -> Result<()> {
    let mut by_name: BTreeMap<&str, &StoredTensor> = BTreeMap::new();
    for t in tensors {
        if by_name.insert(t.name.as_str(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
        }
    }
    let mut used = 0;
    for p in target.params_mut() {
        let name = super::params::join(prefix, &p.name);
        let t = by_name
            .get(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if t.shape != p.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape, p.shape
            )));
        }
        p.data.copy_from_slice(&t.values::<T>());
        used += 1;
    }
    if strict && used != by_name.len() {
        let expected: Vec<String> = target.params().iter().map(|p| super::params::join(prefix, &p.name)).collect();
        let extra: Vec<&str> = by_name.keys().copied().filter(|k| !expected.iter().any(|e| e == k)).collect();
        return Err(Error::Checkpoint(format!("unexpected tensors: {}", extra.join(", "))));
    }
    Ok(())
}

/// Builds a directory under a temporary name and renames it over `dir`.
pub fn write_dir_atomic(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = dir
        .file_name()
        .ok_or_else(|| Error::arg(format!("{} has no final component", dir.display())))?;
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    let tmp: PathBuf = parent.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if dir.exists() {
        let old = parent.join(format!(".{}.old-{}", name.to_string_lossy(), std::process::id()));
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    } else {
        fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes config, tensors and (optionally) the tokenizer vocabulary into
/// an already-staged directory.
pub fn write_model_files<T: Scalar>(
    dir: &Path,
    model: &ConceptModel<T>,
    concepts: &[String],
    tokenizer: Option<&WordPiece>,
) -> Result<()> {
    if concepts.len() != model.ecp.concepts() {
        return Err(Error::Checkpoint(format!(
            "{} concept ids for a head with {} outputs",
            concepts.len(),
            model.ecp.concepts()
        )));
    }
    let config = CheckpointConfig {
        format_version: FORMAT_VERSION,
        encoder: model.encoder.config.clone(),
        vocab_size: model.encoder.config.vocab_size,
        num_concepts: concepts.len(),
        concepts: concepts.to_vec(),
        dtype: T::DTYPE,
    };
    let json = serde_json::to_vec_pretty(&config).map_err(|e| Error::json(CONFIG_FILE, e))?;
    write_file(&dir.join(CONFIG_FILE), &json)?;
    write_file(&dir.join(MODEL_FILE), &encode_tensors(&model.params()))?;
    if let Some(tok) = tokenizer {
        tok.save(dir.join(VOCAB_FILE))?;
    }
    Ok(())
}

pub fn save_model<T: Scalar>(
    dir: &Path,
    model: &ConceptModel<T>,
    concepts: &[String],
    tokenizer: Option<&WordPiece>,
) -> Result<()> {
    write_dir_atomic(dir, |tmp| write_model_files(tmp, model, concepts, tokenizer))
}

pub fn read_config(dir: &Path) -> Result<CheckpointConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config: CheckpointConfig =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if config.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format version {} unsupported",
            path.display(),
            config.format_version
        )));
    }
    if config.num_concepts != config.concepts.len() || config.vocab_size != config.encoder.vocab_size {
        return Err(Error::Checkpoint(format!("{}: inconsistent sizes", path.display())));
    }
    config.encoder.validate()?;
    Ok(config)
}

pub fn load_model<T: Scalar>(dir: &Path) -> Result<(ConceptModel<T>, CheckpointConfig)> {
    let config = read_config(dir)?;
    let mut model = ConceptModel::zeros(&config.encoder, config.num_concepts)?;
    let tensors = read_tensors(&dir.join(MODEL_FILE))?;
    load_params(&mut model, &tensors, "", true)?;
    Ok((model, config))
}

pub fn load_tokenizer(dir: &Path) -> Result<WordPiece> {
    WordPiece::load(dir.join(VOCAB_FILE))
}
