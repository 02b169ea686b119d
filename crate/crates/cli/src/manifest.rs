//! Per-run manifest: command, resolved settings, seed, input digests and
//! the files written.

use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};

use concept_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    tool_version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a serde_json::Value,
    inputs: &'a [InputDigest],
    outputs: &'a [String],
}

fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

/// Files under `path` in sorted order, or `path` itself.
fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    let mut out = Vec::new();
    for e in entries {
        out.extend(files_under(&e)?);
    }
    Ok(out)
}

/// Checks that every input exists, then digests it; directories are
/// digested file by file.
pub fn digest_inputs(inputs: &[(&str, &Path)]) -> Result<Vec<InputDigest>> {
    for (role, path) in inputs {
        if !path.exists() {
            return Err(Error::data(path.display().to_string(), format!("{role} input not found")));
        }
    }
    let mut out = Vec::new();
    for (role, path) in inputs {
        for file in files_under(path)? {
            let (sha256, bytes) = sha256_file(&file)?;
            out.push(InputDigest {
                role: role.to_string(),
                path: file.display().to_string(),
                sha256,
                bytes,
            });
        }
    }
    Ok(out)
}

/// Output directory of one command, recording what gets written to it.
pub struct Run {
    pub command: &'static str,
    pub out: PathBuf,
    pub seed: u64,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new(command: &'static str, out: PathBuf, seed: u64, inputs: Vec<InputDigest>) -> Result<Self> {
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Self { command, out, seed, inputs, outputs: Vec::new() })
    }

    /// Path of an output file, recorded in the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.output(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(name, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn finish<C: Serialize>(mut self, config: &C) -> Result<()> {
        let config = serde_json::to_value(config).map_err(|e| Error::json(MANIFEST_FILE, e))?;
        self.outputs.sort();
        self.outputs.dedup();
        let manifest = Manifest {
            schema_version: MANIFEST_SCHEMA,
            tool: env!("CARGO_PKG_NAME"),
            tool_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            seed: self.seed,
            config: &config,
            inputs: &self.inputs,
            outputs: &self.outputs,
        };
        let path = self.out.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(MANIFEST_FILE, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_input_names_the_path() {
        let err = digest_inputs(&[("corpus", Path::new("/no/such/file.jsonl"))]).unwrap_err();
        assert!(err.to_string().contains("/no/such/file.jsonl"), "{err}");
    }

    #[test]
    fn digests_files_and_directories() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b"), b"abc").unwrap();
        fs::create_dir(dir.path().join("a")).unwrap();
        fs::write(dir.path().join("a/x"), b"").unwrap();
        let d = digest_inputs(&[("ckpt", dir.path())]).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d[0].path.ends_with("a/x"));
        assert_eq!(d[1].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d[1].bytes, 3);
    }
}
