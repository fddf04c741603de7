//! Influence regions and splitting merged predictions into original labels.
//!
//! For a merged label, the influence map assigns each voxel the member whose
//! fudged prior is largest there. The fudged prior of a label is
//! `count / n_train` on its support and `exp(-E) / n_train` elsewhere, with
//! `E` the distance to the support. The argmax is evaluated on the exact key
//! (higher count first, then smaller squared distance), which orders members
//! the same way without forming tiny exponentials. Remaining ties go to the
//! smaller label ID.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nifti;
use crate::plan::MergePlan;
use crate::support::SupportMap;
use crate::volume::LabelVolume;

pub const INFLUENCE_FORMAT_VERSION: u32 = 1;
pub const INFLUENCE_MANIFEST: &str = "influence_manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceMap {
    pub merged_label: u32,
    pub members: Vec<u32>,
    pub field: LabelVolume,
}

pub fn build_influence_map(plan: &MergePlan, merged: u32, s: &SupportMap) -> Result<InfluenceMap> {
    let members = plan
        .members(merged)
        .ok_or_else(|| Error::InvalidArgument(format!("merged label {merged} is not in the plan")))?
        .to_vec();
    for &l in &members {
        match s.support(l) {
            Ok(sup) if !sup.is_empty() => {}
            _ => return Err(Error::EmptySupport(l)),
        }
    }
    let meta = *s.meta();
    if let [only] = members[..] {
        return Ok(InfluenceMap {
            merged_label: merged,
            members,
            field: LabelVolume::filled(meta, only),
        });
    }

    let mut best_count = vec![0u16; meta.len()];
    let mut best_sq = vec![f64::INFINITY; meta.len()];
    let mut best_label = vec![members[0]; meta.len()];
    for &l in &members {
        let sq = s.squared_distance_to_support(l)?;
        // away from this label's support: nearer support wins among
        // unsupported candidates
        best_count
            .par_iter()
            .zip(best_sq.par_iter_mut())
            .zip(best_label.par_iter_mut())
            .zip(sq.par_iter())
            .for_each(|(((&c, bsq), bl), &d)| {
                if d > 0.0 && c == 0 && d < *bsq {
                    *bsq = d;
                    *bl = l;
                }
            });
        let sup = s.support(l)?;
        for (&i, &c) in sup.indices.iter().zip(&sup.counts) {
            let i = i as usize;
            if c > best_count[i] {
                best_count[i] = c;
                best_sq[i] = 0.0;
                best_label[i] = l;
            }
        }
    }
    Ok(InfluenceMap {
        merged_label: merged,
        members,
        field: LabelVolume::new(meta, best_label)?,
    })
}

/// One influence map per merged label, in merged-ID order.
pub fn build_influence_maps(plan: &MergePlan, s: &SupportMap) -> Result<Vec<InfluenceMap>> {
    (1..=plan.n_merged() as u32)
        .into_par_iter()
        .map(|m| build_influence_map(plan, m, s))
        .collect()
}

/// Replace each merged label by its influence-map original label; merged 0
/// becomes the plan's background label.
pub fn split(merged: &LabelVolume, plan: &MergePlan, maps: &[InfluenceMap]) -> Result<LabelVolume> {
    let mut by_id: Vec<Option<&InfluenceMap>> = vec![None; plan.n_merged() + 1];
    for m in maps {
        merged.meta().ensure_compatible(
            m.field.meta(),
            &format!("influence map for merged label {}", m.merged_label),
        )?;
        if let Some(slot) = by_id.get_mut(m.merged_label as usize) {
            if m.merged_label > 0 {
                *slot = Some(m);
            }
        }
    }
    for (m, _) in merged.unique_labels() {
        if m != 0 && by_id.get(m as usize).copied().flatten().is_none() {
            return Err(Error::MissingInfluenceMap(m));
        }
    }
    let background = plan.background;
    let out: Vec<u32> = merged
        .voxels()
        .par_iter()
        .enumerate()
        .map(|(i, &m)| match m {
            0 => background,
            m => by_id[m as usize].expect("checked above").field.voxels()[i],
        })
        .collect();
    LabelVolume::new(*merged.meta(), out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    plan_digest: String,
    maps: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    merged_label: u32,
    members: Vec<u32>,
    file: String,
}

fn map_file(m: u32) -> String {
    format!("influence_{m}.nii.gz")
}

/// Write `influence_<m>.nii.gz` files and a manifest bound to the plan.
pub fn save_influence_maps(dir: impl AsRef<Path>, plan: &MergePlan, maps: &[InfluenceMap]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    maps.par_iter()
        .map(|m| nifti::save_labels(&m.field, dir.join(map_file(m.merged_label))))
        .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        version: INFLUENCE_FORMAT_VERSION,
        plan_digest: plan.digest()?,
        maps: maps
            .iter()
            .map(|m| ManifestEntry {
                merged_label: m.merged_label,
                members: m.members.clone(),
                file: map_file(m.merged_label),
            })
            .collect(),
    };
    let path = dir.join(INFLUENCE_MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Load maps, refusing a manifest written for a different plan.
pub fn load_influence_maps(dir: impl AsRef<Path>, plan: &MergePlan) -> Result<Vec<InfluenceMap>> {
    let dir = dir.as_ref();
    let path = dir.join(INFLUENCE_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != INFLUENCE_FORMAT_VERSION {
        return Err(Error::InvalidArgument(format!(
            "influence manifest version {} is not supported",
            manifest.version
        )));
    }
    let expected = plan.digest()?;
    if manifest.plan_digest != expected {
        return Err(Error::DigestMismatch {
            expected,
            found: manifest.plan_digest,
        });
    }
    manifest
        .maps
        .par_iter()
        .map(|e| {
            let field = nifti::load_labels(dir.join(&e.file))?;
            let members = plan
                .members(e.merged_label)
                .ok_or(Error::MissingInfluenceMap(e.merged_label))?;
            if members != e.members.as_slice() {
                return Err(Error::InvalidArgument(format!(
                    "manifest members for merged label {} disagree with the plan",
                    e.merged_label
                )));
            }
            if let Some((l, _)) = field.unique_labels().into_iter().find(|(l, _)| !members.contains(l)) {
                return Err(Error::InvalidArgument(format!(
                    "influence map {} contains label {l} outside its group",
                    e.file
                )));
            }
            Ok(InfluenceMap {
                merged_label: e.merged_label,
                members: e.members.clone(),
                field,
            })
        })
        .collect()
}
