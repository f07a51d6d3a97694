//! On-disk checkpoints: a directory holding `manifest.json` and `params.bin`.
//!
//! `params.bin` is every array's values as little-endian IEEE-754 `f64`,
//! concatenated in manifest order. The manifest records each array's name,
//! shape, byte offset and frozen flag, plus the model metadata needed to
//! rebuild the layer structure.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::common::{CommonSpaceSpec, CommonSpaceStack};
use crate::models::network::{Network, NetworkSpec};
use crate::models::params::ParamStore;
use crate::slots::SlotRange;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelMeta {
    Network { spec: NetworkSpec, frozen: bool },
    CommonSpace { spec: CommonSpaceSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelMeta,
    pub slot_ranges: Vec<SlotRange>,
    pub arrays: Vec<ArrayEntry>,
}

fn write_store(dir: &Path, model: ModelMeta, slot_ranges: Vec<SlotRange>, store: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut arrays = Vec::with_capacity(store.len());
    for p in store.iter() {
        let (r, c) = p.value.shape();
        arrays.push(ArrayEntry {
            name: p.name.clone(),
            shape: [r, c],
            offset: blob.len() as u64,
            frozen: p.frozen,
        });
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model,
        slot_ranges,
        arrays,
    };
    fs::write(dir.join(PARAMS_FILE), &blob)?;
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

fn read_store(dir: &Path) -> Result<(Manifest, ParamStore)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let blob_path = dir.join(PARAMS_FILE);
    for p in [&manifest_path, &blob_path] {
        if !p.exists() {
            return Err(Error::Missing(p.clone()));
        }
    }
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    let version = raw.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {version:?} (expected {FORMAT_VERSION})"
        )));
    }
    let manifest: Manifest = serde_json::from_value(raw)?;
    let blob = fs::read(&blob_path)?;

    let mut store = ParamStore::new();
    let mut expected_offset = 0u64;
    for a in &manifest.arrays {
        let count = a.shape[0] * a.shape[1];
        let start = a.offset as usize;
        let end = start + count * 8;
        if a.offset != expected_offset || end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "array `{}` expects bytes {start}..{end} but params.bin has {} bytes",
                a.name,
                blob.len()
            )));
        }
        let values = blob[start..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let id = store.add(a.name.clone(), Tensor::new(a.shape[0], a.shape[1], values)?);
        if a.frozen {
            store.param_mut(id.0).frozen = true;
        }
        expected_offset = end as u64;
    }
    if expected_offset as usize != blob.len() {
        return Err(Error::Checkpoint(format!(
            "params.bin has {} bytes, manifest describes {expected_offset}",
            blob.len()
        )));
    }
    Ok((manifest, store))
}

pub fn save_network(net: &Network, dir: &Path) -> Result<()> {
    write_store(
        dir,
        ModelMeta::Network {
            spec: net.spec.clone(),
            frozen: net.frozen,
        },
        vec![net.spec.slots],
        &net.params,
    )
}

pub fn load_network(dir: &Path) -> Result<Network> {
    let (manifest, store) = read_store(dir)?;
    match manifest.model {
        ModelMeta::Network { spec, frozen } => Network::from_params(spec, store, frozen),
        ModelMeta::CommonSpace { .. } => Err(Error::Checkpoint(format!(
            "{} holds a common-space stack, not a network",
            dir.display()
        ))),
    }
}

pub fn save_common_space(stack: &CommonSpaceStack, dir: &Path) -> Result<()> {
    write_store(
        dir,
        ModelMeta::CommonSpace {
            spec: stack.spec.clone(),
        },
        Vec::new(),
        &stack.params,
    )
}

pub fn load_common_space(dir: &Path) -> Result<CommonSpaceStack> {
    let (manifest, store) = read_store(dir)?;
    match manifest.model {
        ModelMeta::CommonSpace { spec } => CommonSpaceStack::from_params(spec, store),
        ModelMeta::Network { .. } => Err(Error::Checkpoint(format!(
            "{} holds a network, not a common-space stack",
            dir.display()
        ))),
    }
}
