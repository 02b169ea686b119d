//! Flat TOML settings layered over defaults.

use std::fs;
use std::path::Path;

use concept_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

pub fn read_table(path: Option<&Path>) -> Result<Table> {
    let Some(path) = path else {
        return Ok(Table::new());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
        return Err(Error::Config(format!("{}: key {k} holds a table; settings are flat", path.display())));
    }
    Ok(table)
}

fn as_table<T: Serialize>(value: &T) -> Result<Table> {
    match Value::try_from(value) {
        Ok(Value::Table(t)) => Ok(t),
        _ => Err(Error::Config("settings do not serialize to a table".into())),
    }
}

/// Settings of `base` replaced by those in `keys`; a key `base` lacks is an
/// error naming `what`.
pub fn overlay<T: Serialize + DeserializeOwned>(base: &T, keys: &Table, what: &str) -> Result<T> {
    let mut table = as_table(base)?;
    for (k, v) in keys {
        if !table.contains_key(k) {
            return Err(Error::Config(format!("unknown {what} setting {k:?}")));
        }
        table.insert(k.clone(), v.clone());
    }
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{what} settings: {}", e.message())))
}

/// Splits `keys` into those `base` knows and the rest.
pub fn take_known<T: Serialize>(base: &T, keys: &mut Table) -> Result<Table> {
    let known = as_table(base)?;
    let mine: Vec<String> = keys.keys().filter(|k| known.contains_key(*k)).cloned().collect();
    Ok(mine.into_iter().filter_map(|k| keys.remove(&k).map(|v| (k, v))).collect())
}

pub fn take_string(keys: &mut Table, key: &str) -> Result<Option<String>> {
    match keys.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(Error::Config(format!("setting {key:?} must be a string, got {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use concept_core::pretrain::TrainConfig;

    fn table(text: &str) -> Table {
        text.parse().unwrap()
    }

    #[test]
    fn file_values_replace_defaults() {
        let c = overlay(&TrainConfig::default(), &table("lr = 0.001\nmax_steps = 7"), "training").unwrap();
        assert_eq!((c.lr, c.max_steps), (1e-3, 7));
        assert_eq!(c.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn integers_are_accepted_for_floats() {
        let c = overlay(&TrainConfig::default(), &table("lambda = 0"), "training").unwrap();
        assert_eq!(c.lambda, 0.0);
    }

    #[test]
    fn unknown_and_mistyped_keys_fail() {
        let err = overlay(&TrainConfig::default(), &table("learning_rate = 1.0"), "training").unwrap_err();
        assert!(err.to_string().contains("learning_rate"));
        assert!(overlay(&TrainConfig::default(), &table("max_steps = \"many\""), "training").is_err());
    }

    #[test]
    fn known_keys_are_split_off() {
        let mut keys = table("lr = 0.1\nhidden = 8\npreset = \"desk\"");
        let mine = take_known(&TrainConfig::default(), &mut keys).unwrap();
        assert_eq!(mine.keys().collect::<Vec<_>>(), ["lr"]);
        assert_eq!(take_string(&mut keys, "preset").unwrap().as_deref(), Some("desk"));
        assert_eq!(keys.keys().collect::<Vec<_>>(), ["hidden"]);
    }
}
