//! Checkpoint directories: weight files plus `meta.json`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use tryon_tensor::{io as tio, ParamStore};

use crate::error::{read_file, write_file, Error, Result};

pub const META_FILE: &str = "meta.json";

pub fn save_weights(dir: &Path, file: &str, store: &ParamStore) -> Result<()> {
    write_file(&dir.join(file), &tio::encode(store.iter()))
}

/// Loads `file` into `store`, whose layout must match exactly.
pub fn load_weights(dir: &Path, file: &str, store: &mut ParamStore) -> Result<()> {
    let path = dir.join(file);
    let tensors = tio::decode(&read_file(&path)?).map_err(|e| Error::decode(&path, e))?;
    store.load_from(&tensors).map_err(|e| Error::decode(&path, e))
}

pub fn save_meta<T: Serialize>(dir: &Path, meta: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).expect("meta serializes");
    write_file(&dir.join(META_FILE), text.as_bytes())
}

pub fn load_meta<T: DeserializeOwned>(dir: &Path) -> Result<T> {
    let path = dir.join(META_FILE);
    let bytes = read_file(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::decode(&path, e))
}

/// Hex SHA-256 of a parameter store's serialized form.
pub fn weights_hash(store: &ParamStore) -> String {
    hex::encode(Sha256::digest(tio::encode(store.iter())))
}
