//! JSON Lines corpus files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::AnnotatedDocument;
use crate::error::{Error, Result};

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::json(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a corpus file.
pub fn read_corpus(path: &Path) -> Result<Vec<AnnotatedDocument>> {
    let docs: Vec<AnnotatedDocument> = read_jsonl(path)?;
    for d in &docs {
        d.validate().map_err(|e| match e {
            Error::Data { location, message } => {
                Error::data(format!("{}: {location}", path.display()), message)
            }
            other => other,
        })?;
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            "{\"id\": \"d1\", \"text\": \"plato wrote\", \"mentions\": [{\"entity\": \"Q859\", \"start\": 0, \"end\": 5}]}\n",
        )
        .unwrap();
        let docs = read_corpus(&p).unwrap();
        assert_eq!(docs[0].doc_id, "d1");
        assert_eq!(docs[0].mentions[0].entity, "Q859");
        write_jsonl(&p, &docs).unwrap();
        let line = std::fs::read_to_string(&p).unwrap();
        assert!(line.starts_with("{\"id\":\"d1\""));

        std::fs::write(&p, "{\"id\": \"d1\", \"text\": \"ab\", \"mentions\": [{\"entity\": \"Q\", \"start\": 1, \"end\": 9}]}\n").unwrap();
        let err = read_corpus(&p).unwrap_err().to_string();
        assert!(err.contains("c.jsonl"), "{err}");
    }
}
