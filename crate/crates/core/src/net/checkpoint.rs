//! Checkpoint directories: `meta.json` plus little-endian `f32` `params.bin`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ParamRole, ParamStore};
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
    pub frozen: bool,
    pub role: ParamRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    framework: String,
    config: serde_json::Value,
    epoch: usize,
    index: IndexMap<String, IndexEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub framework: String,
    /// Snapshot of the configuration the parameters were trained with.
    pub config: serde_json::Value,
    pub epoch: usize,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut index = IndexMap::new();
        let mut offset = 0;
        for (name, p) in self.params.iter() {
            index.insert(
                name.to_string(),
                IndexEntry {
                    shape: p.shape.clone(),
                    dtype: "f32".into(),
                    byte_offset: offset,
                    frozen: p.frozen,
                    role: p.role,
                },
            );
            offset += p.len() * 4;
        }
        let meta = Meta { framework: self.framework.clone(), config: self.config.clone(), epoch: self.epoch, index };
        let meta_path = dir.join(META_FILE);
        let mut text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
        text.push('\n');
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
        let bin_path = dir.join(PARAMS_FILE);
        fs::write(&bin_path, self.params.to_le_bytes()).map_err(|e| Error::io(&bin_path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
        let bin_path = dir.join(PARAMS_FILE);
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let mut params = ParamStore::new();
        for (name, e) in meta.index {
            if e.dtype != "f32" {
                return Err(Error::Config(format!("parameter `{name}` has unsupported dtype {}", e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.byte_offset + n * 4;
            let raw = bytes.get(e.byte_offset..end).ok_or_else(|| {
                Error::ShapeMismatch(format!("`{name}` spans bytes {}..{end} of a {}-byte file", e.byte_offset, bytes.len()))
            })?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params.insert(name.clone(), e.shape, values, e.role)?;
            if let Some(p) = params.get_mut(&name) {
                p.frozen = e.frozen;
            }
        }
        Ok(Self { framework: meta.framework, config: meta.config, epoch: meta.epoch, params })
    }
}
