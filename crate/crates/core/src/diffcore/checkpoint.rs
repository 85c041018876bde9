//! Checkpoint file: a JSON document mapping parameter name to shape and flat values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Free-form string metadata (config hash, seed, epoch, ...).
    pub metadata: BTreeMap<String, String>,
    params: Vec<StoredParam>,
}

impl Checkpoint {
    pub fn from_store(store: &ParameterStore, metadata: BTreeMap<String, String>) -> Self {
        let params = store
            .iter()
            .map(|(name, e)| StoredParam {
                name: name.to_string(),
                shape: e.value.shape().to_vec(),
                frozen: e.frozen,
                values: e.value.data().to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            metadata,
            params,
        }
    }

    pub fn to_store(&self) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for p in &self.params {
            let t = Tensor::new(p.shape.clone(), p.values.clone())?;
            store.insert(p.name.clone(), t, p.frozen);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::data(format!(
                "{}: checkpoint format version {} (expected {})",
                path.display(),
                ckpt.format_version,
                CHECKPOINT_FORMAT_VERSION
            )));
        }
        Ok(ckpt)
    }
}
