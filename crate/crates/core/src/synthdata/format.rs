//! Bag files and the dataset manifest.
//!
//! One bag per record file: magic `MILF`, u32 version = 1, u32 N, u32 D,
//! u32 label, u32 has_instance_labels, optionally N bytes of instance
//! labels, then N·D little-endian float32 features. The dataset is a JSON
//! manifest `{version, config, records: [paths]}` with record paths
//! relative to the manifest; the record file stem is the bag id.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DatasetConfig;
use crate::error::{Error, Result};
use crate::mil::Bag;
use crate::numerics::{ByteReader, Matrix, Scalar};

pub const BAG_MAGIC: &[u8; 4] = b"MILF";
const BAG_VERSION: u32 = 1;
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub records: Vec<String>,
}

fn encode_bag<T: Scalar>(bag: &Bag<T>) -> Vec<u8> {
    let n = bag.instances();
    let d = bag.feature_dim();
    let mut buf = Vec::with_capacity(24 + n + n * d * 4);
    buf.extend_from_slice(BAG_MAGIC);
    buf.extend_from_slice(&BAG_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&(bag.label as u32).to_le_bytes());
    buf.extend_from_slice(&u32::from(bag.instance_labels.is_some()).to_le_bytes());
    if let Some(labels) = &bag.instance_labels {
        buf.extend_from_slice(labels);
    }
    for &v in bag.features.data() {
        buf.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
    }
    buf
}

fn decode_bag<T: Scalar>(bytes: &[u8], id: String) -> Result<Bag<T>> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != BAG_MAGIC {
        return Err(r.err_at(0, "expected magic MILF"));
    }
    let version = r.u32("version")?;
    if version != BAG_VERSION {
        return Err(r.err_here(format!("unsupported bag version {version}")));
    }
    let n = r.u32("instance count")? as usize;
    let d = r.u32("feature dim")? as usize;
    let label = r.u32("label")? as usize;
    let has_labels = r.u32("has_instance_labels")?;
    let instance_labels = match has_labels {
        0 => None,
        1 => Some(r.take(n, "instance labels")?.to_vec()),
        other => return Err(r.err_here(format!("has_instance_labels must be 0 or 1, got {other}"))),
    };
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(T::from(r.f32("feature value")?).unwrap());
    }
    if r.position() != bytes.len() {
        return Err(r.err_here("trailing bytes after bag record".into()));
    }
    Ok(Bag {
        features: Matrix::new(n, d, data)?,
        label,
        instance_labels,
        id,
    })
}

/// Write one record file per bag plus `manifest.json`; returns the manifest
/// path. Bag ids become file stems, so they must be filesystem-safe.
pub fn save_bags<T: Scalar>(
    bags: &[Bag<T>],
    config: &DatasetConfig,
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(bags.len());
    for bag in bags {
        let file = format!("{}.milf", bag.id);
        fs::write(dir.join(&file), encode_bag(bag))?;
        records.push(file);
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: config.clone(),
        records,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

/// Load a dataset back from its manifest.
pub fn load_bags<T: Scalar>(manifest_path: &Path) -> Result<(DatasetConfig, Vec<Bag<T>>)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Config(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut bags = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        let path = base.join(record);
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("bad record name {record}")))?
            .to_string();
        let bytes = fs::read(&path)?;
        bags.push(decode_bag(&bytes, id)?);
    }
    Ok((manifest.config, bags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate_dataset;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("amdmil_fmt_{tag}"));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_cfg() -> DatasetConfig {
        DatasetConfig {
            seed: 11,
            num_bags: 6,
            feature_dim: 4,
            n_range: (2, 5),
            witness_rate: 0.5,
            class_count: 2,
            separation: 1.0,
            noise_std: 1.0,
        }
    }

    #[test]
    fn save_load_round_trip_preserves_every_field() {
        let cfg = small_cfg();
        let bags = generate_dataset::<f32>(&cfg).unwrap();
        let dir = tmp_dir("roundtrip");
        let manifest = save_bags(&bags, &cfg, &dir).unwrap();
        let (loaded_cfg, loaded) = load_bags::<f32>(&manifest).unwrap();
        assert_eq!(loaded_cfg.seed, cfg.seed);
        assert_eq!(loaded, bags);
    }

    #[test]
    fn truncated_record_is_a_format_error_with_offset() {
        let cfg = small_cfg();
        let bags = generate_dataset::<f32>(&cfg).unwrap();
        let dir = tmp_dir("trunc");
        let manifest = save_bags(&bags, &cfg, &dir).unwrap();
        let record = dir.join("bag0000.milf");
        let mut bytes = fs::read(&record).unwrap();
        bytes.truncate(bytes.len() / 2);
        fs::write(&record, bytes).unwrap();
        match load_bags::<f32>(&manifest) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn hand_written_record_following_the_byte_spec_loads() {
        // independent writer: 2 instances, 1 feature dim, label 1, labels [0, 1],
        // features [0.5, -1.25]
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MILF");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8, 1u8]);
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-1.25f32).to_le_bytes());
        let bag = decode_bag::<f32>(&bytes, "fixture".into()).unwrap();
        assert_eq!(bag.instances(), 2);
        assert_eq!(bag.label, 1);
        assert_eq!(bag.instance_labels, Some(vec![0, 1]));
        assert_eq!(bag.features.data(), &[0.5, -1.25]);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let bytes = b"XILF\x01\x00\x00\x00".to_vec();
        assert!(matches!(
            decode_bag::<f32>(&bytes, "x".into()),
            Err(Error::Format { .. })
        ));
    }
}
