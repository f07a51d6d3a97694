//! Dataset directories: `data.bin` holds the samples then the labels, all as
//! little-endian `f64`; `meta.json` records the shape and class map.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};

pub const DATA_FILE: &str = "data.bin";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub count: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub split: Split,
    /// Human-readable name per class id.
    pub class_names: Vec<String>,
    pub seed: Option<u64>,
}

pub fn save_dataset(dir: &Path, data: &Dataset, seed: Option<u64>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity((data.samples.len() + data.len()) * 8);
    for v in data.samples.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &data.labels {
        blob.extend_from_slice(&(l as f64).to_le_bytes());
    }
    let meta = DatasetMeta {
        count: data.len(),
        dim: data.dim(),
        num_classes: data.num_classes,
        split: data.split,
        class_names: (0..data.num_classes).map(|c| format!("class_{c}")).collect(),
        seed,
    };
    fs::write(dir.join(DATA_FILE), blob)?;
    fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetMeta)> {
    let (meta_path, data_path) = (dir.join(META_FILE), dir.join(DATA_FILE));
    for p in [&meta_path, &data_path] {
        if !p.exists() {
            return Err(Error::Missing(p.clone()));
        }
    }
    let meta: DatasetMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
    let blob = fs::read(&data_path)?;
    let values = meta.count * meta.dim;
    let expected = (values + meta.count) * 8;
    if blob.len() != expected {
        return Err(Error::Format(format!(
            "{}: {} bytes, meta.json describes {expected}",
            data_path.display(),
            blob.len()
        )));
    }
    let all: Vec<f64> = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let labels = all[values..]
        .iter()
        .map(|&l| {
            if l >= 0.0 && l.fract() == 0.0 {
                Ok(l as usize)
            } else {
                Err(Error::Format(format!("non-integer label {l}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(
        Tensor::new(meta.count, meta.dim, all[..values].to_vec())?,
        labels,
        meta.num_classes,
        meta.split,
    )?;
    Ok((data, meta))
}
