//! Label support map over a training set, and the priors derived from it.
//!
//! The support count of label `l` at voxel `v` is the number of training
//! volumes labelling `v` with `l`. Counts are kept sparse, per label, so
//! memory scales with labelled voxels rather than with grid × label count.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::training_set_digest;
use crate::edt;
use crate::error::{Error, Result};
use crate::volume::{GridMeta, LabelVolume, ScalarVolume};

pub const SUPPORT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Sparse support of one label: ascending voxel indices with their counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSupport {
    pub label: u32,
    pub indices: Vec<u32>,
    pub counts: Vec<u16>,
}

impl LabelSupport {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sum of counts: the label's voxel total over all training volumes.
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn count_at(&self, voxel: usize) -> u16 {
        match self.indices.binary_search(&(voxel as u32)) {
            Ok(i) => self.counts[i],
            Err(_) => 0,
        }
    }

    pub fn dense_counts(&self, len: usize) -> Vec<u16> {
        let mut out = vec![0u16; len];
        for (&i, &c) in self.indices.iter().zip(&self.counts) {
            out[i as usize] = c;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportMap {
    meta: GridMeta,
    n_train: u16,
    supports: Vec<LabelSupport>,
    training_hash: String,
}

/// Likelihood field of one label, extended beyond its support by
/// `exp(-distance) / n_train`.
#[derive(Debug, Clone, PartialEq)]
pub struct FudgedPrior {
    pub label: u32,
    pub field: ScalarVolume,
}

const CHUNK: usize = 1 << 14;

/// Tally per-voxel label occurrences over a training set.
pub fn build_support_map(training: &[LabelVolume]) -> Result<SupportMap> {
    let first = training
        .first()
        .ok_or_else(|| Error::InvalidArgument("support map needs at least one training volume".into()))?;
    let meta = *first.meta();
    for (i, v) in training.iter().enumerate() {
        meta.ensure_compatible(v.meta(), &format!("training volume #{i}"))?;
    }
    let n_train = u16::try_from(training.len()).map_err(|_| {
        Error::InvalidArgument(format!(
            "{} training volumes exceed the supported maximum of {}",
            training.len(),
            u16::MAX
        ))
    })?;

    let chunks: Vec<Vec<(u32, u32, u16)>> = (0..meta.len().div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(meta.len());
            let mut out = Vec::new();
            let mut column = Vec::with_capacity(training.len());
            for v in lo..hi {
                column.clear();
                column.extend(training.iter().map(|t| t.voxels()[v]));
                column.sort_unstable();
                let mut start = 0;
                while start < column.len() {
                    let label = column[start];
                    let end = start + column[start..].iter().take_while(|&&l| l == label).count();
                    out.push((label, v as u32, (end - start) as u16));
                    start = end;
                }
            }
            out
        })
        .collect();

    let mut by_label: BTreeMap<u32, LabelSupport> = BTreeMap::new();
    for (label, v, c) in chunks.into_iter().flatten() {
        let s = by_label.entry(label).or_insert_with(|| LabelSupport {
            label,
            indices: Vec::new(),
            counts: Vec::new(),
        });
        s.indices.push(v);
        s.counts.push(c);
    }

    Ok(SupportMap {
        meta,
        n_train,
        supports: by_label.into_values().collect(),
        training_hash: training_set_digest(training),
    })
}

impl SupportMap {
    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn n_train(&self) -> usize {
        self.n_train as usize
    }

    pub fn training_hash(&self) -> &str {
        &self.training_hash
    }

    pub fn label_table(&self) -> Vec<u32> {
        self.supports.iter().map(|s| s.label).collect()
    }

    pub fn supports(&self) -> &[LabelSupport] {
        &self.supports
    }

    pub fn support(&self, label: u32) -> Result<&LabelSupport> {
        self.supports
            .binary_search_by_key(&label, |s| s.label)
            .map(|i| &self.supports[i])
            .map_err(|_| Error::UnknownLabel(label))
    }

    /// Mean per-volume voxel count of `label`.
    pub fn mean_count(&self, label: u32) -> Result<f64> {
        Ok(self.support(label)?.total() as f64 / self.n_train as f64)
    }

    /// Support normalised by the training-set size.
    pub fn fuzzy_prior(&self, label: u32) -> Result<ScalarVolume> {
        let s = self.support(label)?;
        let n = self.n_train as f64;
        let mut field = vec![0.0; self.meta.len()];
        for (&i, &c) in s.indices.iter().zip(&s.counts) {
            field[i as usize] = c as f64 / n;
        }
        ScalarVolume::new(self.meta, field)
    }

    /// Squared distance (mm²) from every voxel to the label's support.
    pub fn squared_distance_to_support(&self, label: u32) -> Result<Vec<f64>> {
        let s = self.support(label)?;
        if s.is_empty() {
            return Err(Error::EmptySupport(label));
        }
        edt::squared_distance_to_indices(&self.meta, &s.indices)
    }

    /// Fuzzy prior with zero-support voxels replaced by
    /// `exp(-E) / n_train`, where `E` is the distance to the support.
    pub fn fudged_prior(&self, label: u32) -> Result<FudgedPrior> {
        let s = self.support(label)?;
        let sq = self.squared_distance_to_support(label)?;
        let n = self.n_train as f64;
        let mut field: Vec<f64> = sq.iter().map(|&d2| (-d2.sqrt()).exp() / n).collect();
        for (&i, &c) in s.indices.iter().zip(&s.counts) {
            field[i as usize] = c as f64 / n;
        }
        Ok(FudgedPrior {
            label,
            field: ScalarVolume::new(self.meta, field)?,
        })
    }

    /// Write the manifest plus one `label_<id>.bin` blob per label
    /// (little-endian records of `u32` voxel index, `u16` count).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut labels = Vec::with_capacity(self.supports.len());
        for s in &self.supports {
            let file = blob_name(s.label);
            let mut bytes = Vec::with_capacity(s.len() * 6);
            for (&i, &c) in s.indices.iter().zip(&s.counts) {
                bytes.extend_from_slice(&i.to_le_bytes());
                bytes.extend_from_slice(&c.to_le_bytes());
            }
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            labels.push(BlobEntry {
                id: s.label,
                file,
                entries: s.len(),
            });
        }
        let manifest = SupportManifest {
            version: SUPPORT_FORMAT_VERSION,
            n_train: self.n_train as usize,
            label_table: self.label_table(),
            grid: self.meta,
            training_hash: self.training_hash.clone(),
            labels,
        };
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: SupportManifest = serde_json::from_str(&text)?;
        if m.version != SUPPORT_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "support manifest version {} is not supported",
                m.version
            )));
        }
        let meta = GridMeta::new(m.grid.dims, m.grid.spacing)?;
        let n_train = u16::try_from(m.n_train)
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("invalid n_train {}", m.n_train)))?;
        let mut supports = Vec::with_capacity(m.labels.len());
        for entry in &m.labels {
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if bytes.len() != entry.entries * 6 {
                return Err(Error::format(
                    bytes.len(),
                    format!("{} should hold {} records", path.display(), entry.entries),
                ));
            }
            let mut s = LabelSupport {
                label: entry.id,
                indices: Vec::with_capacity(entry.entries),
                counts: Vec::with_capacity(entry.entries),
            };
            for (k, rec) in bytes.chunks_exact(6).enumerate() {
                let i = u32::from_le_bytes(rec[..4].try_into().unwrap());
                let c = u16::from_le_bytes([rec[4], rec[5]]);
                let ordered = s.indices.last().is_none_or(|&prev| prev < i);
                if !ordered || i as usize >= meta.len() || c == 0 || c > n_train {
                    return Err(Error::format(
                        k * 6,
                        format!("invalid record (voxel {i}, count {c}) in {}", path.display()),
                    ));
                }
                s.indices.push(i);
                s.counts.push(c);
            }
            supports.push(s);
        }
        let table: Vec<u32> = supports.iter().map(|s| s.label).collect();
        if table != m.label_table || table.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "support manifest label table is inconsistent with its blobs".into(),
            ));
        }
        Ok(SupportMap {
            meta,
            n_train,
            supports,
            training_hash: m.training_hash,
        })
    }
}

fn blob_name(label: u32) -> String {
    format!("label_{label}.bin")
}

#[derive(Serialize, Deserialize)]
struct SupportManifest {
    version: u32,
    n_train: usize,
    label_table: Vec<u32>,
    grid: GridMeta,
    training_hash: String,
    labels: Vec<BlobEntry>,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    id: u32,
    file: String,
    entries: usize,
}
