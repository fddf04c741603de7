//! Merge plans: grouping original labels into merged labels, applying the
//! grouping to volumes, and sweeping thresholds.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::graph::{build_graph, colour_count, greedy_color, smallest_last_order, MergeParams};
use crate::pairwise::{DistanceMatrix, RatioMatrix};
use crate::volume::LabelVolume;

pub const PLAN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub training_hash: String,
    pub d_matrix_digest: String,
    pub v_matrix_digest: String,
}

/// Grouping of original labels into merged labels.
///
/// Merged IDs start at 1 and follow the ascending smallest member of each
/// group; the background label always maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergePlan {
    pub version: u32,
    pub background: u32,
    pub delta_d_mm: f64,
    #[serde(with = "threshold")]
    pub delta_v: f64,
    pub pins: Vec<u32>,
    pub groups: Vec<Vec<u32>>,
    pub mapping: BTreeMap<u32, u32>,
    pub label_table: Vec<u32>,
    pub provenance: Provenance,
}

/// Thresholds may be infinite; JSON has no infinity, so those are written as
/// the string `"inf"`.
pub mod threshold {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid threshold {t:?}"))),
        }
    }
}

/// Turn a proper colouring into a plan.
///
/// `label_table` lists every original label the plan must map, including
/// the background; every coloured label must appear in it.
pub fn build_merge_plan(
    colouring: &BTreeMap<u32, usize>,
    label_table: &[u32],
    params: &MergeParams,
    provenance: Provenance,
) -> Result<MergePlan> {
    let mut classes: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (&label, &c) in colouring {
        if label == params.background {
            return Err(Error::InvalidArgument("the background label cannot be coloured".into()));
        }
        classes.entry(c).or_default().push(label);
    }
    let mut groups: Vec<Vec<u32>> = classes.into_values().collect();
    // members are already ascending; order groups by smallest member
    groups.sort_by_key(|g| g[0]);

    let mut mapping = BTreeMap::new();
    for (k, g) in groups.iter().enumerate() {
        for &l in g {
            mapping.insert(l, k as u32 + 1);
        }
    }
    let mut table = label_table.to_vec();
    table.sort_unstable();
    table.dedup();
    for &l in &table {
        if l == params.background {
            mapping.insert(l, 0);
        } else if !mapping.contains_key(&l) {
            return Err(Error::UnmappedLabel { label: l, voxels: 0 });
        }
    }
    if let Some(&l) = mapping.keys().find(|l| table.binary_search(l).is_err()) {
        return Err(Error::UnknownLabel(l));
    }
    let mut pins = params.pins.clone();
    pins.sort_unstable();
    pins.dedup();
    Ok(MergePlan {
        version: PLAN_FORMAT_VERSION,
        background: params.background,
        delta_d_mm: params.delta_d,
        delta_v: params.delta_v,
        pins,
        groups,
        mapping,
        label_table: table,
        provenance,
    })
}

/// Full planning pipeline: threshold, order, colour, number.
pub fn plan_from_matrices(
    d: &DistanceMatrix,
    v: &RatioMatrix,
    params: &MergeParams,
    training_hash: &str,
) -> Result<MergePlan> {
    let g = build_graph(d, v, params)?;
    let order = smallest_last_order(&g);
    let colouring = greedy_color(&g, &order.order)?;
    let mut table = d.labels().to_vec();
    if !table.contains(&params.background) {
        table.push(params.background);
    }
    build_merge_plan(
        &colouring,
        &table,
        params,
        Provenance {
            training_hash: training_hash.to_string(),
            d_matrix_digest: d.digest(),
            v_matrix_digest: v.digest(),
        },
    )
}

impl MergePlan {
    /// Number of merged labels, background excluded.
    pub fn n_merged(&self) -> usize {
        self.groups.len()
    }

    pub fn merged_id(&self, original: u32) -> Option<u32> {
        self.mapping.get(&original).copied()
    }

    /// Members of merged label `m` (1-based).
    pub fn members(&self, m: u32) -> Option<&[u32]> {
        (m >= 1)
            .then(|| self.groups.get(m as usize - 1))
            .flatten()
            .map(Vec::as_slice)
    }

    pub fn params(&self) -> MergeParams {
        MergeParams {
            delta_d: self.delta_d_mm,
            delta_v: self.delta_v,
            pins: self.pins.clone(),
            background: self.background,
        }
    }

    /// Within-group pairs that break the thresholds or involve a pin,
    /// re-derived from the matrices.
    pub fn violations(&self, d: &DistanceMatrix, v: &RatioMatrix) -> Result<Vec<(u32, u32)>> {
        let params = self.params();
        let mut bad = Vec::new();
        for g in &self.groups {
            for (k, &a) in g.iter().enumerate() {
                for &b in &g[k + 1..] {
                    let i = d.position(a).ok_or(Error::UnknownLabel(a))?;
                    let j = d.position(b).ok_or(Error::UnknownLabel(b))?;
                    let pinned = self.pins.contains(&a) || self.pins.contains(&b);
                    if pinned || !params.mergeable(d.get(i, j), v.get(i, j)) {
                        bad.push((a, b));
                    }
                }
            }
        }
        Ok(bad)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: MergePlan = serde_json::from_str(text)?;
        plan.check()?;
        Ok(plan)
    }

    /// Hash of the canonical JSON form.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        if self.version != PLAN_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "merge plan version {} is not supported",
                self.version
            )));
        }
        if self.mapping.get(&self.background) != Some(&0) {
            return Err(Error::InvalidArgument("background must map to merged label 0".into()));
        }
        for (k, g) in self.groups.iter().enumerate() {
            for l in g {
                if self.mapping.get(l) != Some(&(k as u32 + 1)) {
                    return Err(Error::InvalidArgument(format!(
                        "label {l} is listed in group {} but mapped elsewhere",
                        k + 1
                    )));
                }
            }
        }
        let grouped: usize = self.groups.iter().map(Vec::len).sum();
        if grouped + 1 != self.mapping.len() {
            return Err(Error::InvalidArgument("mapping and groups disagree".into()));
        }
        Ok(())
    }
}

/// Relabel every voxel through the plan's mapping.
pub fn apply_merge(vol: &LabelVolume, plan: &MergePlan) -> Result<LabelVolume> {
    for (label, voxels) in vol.unique_labels() {
        if !plan.mapping.contains_key(&label) {
            return Err(Error::UnmappedLabel { label, voxels });
        }
    }
    let mut out = vol.voxels().to_vec();
    out.par_chunks_mut(1 << 14).for_each(|chunk| {
        let mut last: Option<(u32, u32)> = None;
        for x in chunk.iter_mut() {
            let merged = match last {
                Some((from, to)) if from == *x => to,
                _ => plan.mapping[x],
            };
            last = Some((*x, merged));
            *x = merged;
        }
    });
    LabelVolume::new(*vol.meta(), out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub delta_d: f64,
    pub delta_v: f64,
    pub n_merged: usize,
}

/// Merged-label count for every threshold combination, rows ordered by
/// `delta_d` list position, then `delta_v`.
pub fn sweep(
    d: &DistanceMatrix,
    v: &RatioMatrix,
    delta_d: &[f64],
    delta_v: &[f64],
    pins: &[u32],
    background: u32,
) -> Result<Vec<SweepRow>> {
    if delta_d.is_empty() || delta_v.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one value per threshold".into(),
        ));
    }
    let combos: Vec<(f64, f64)> = delta_d
        .iter()
        .flat_map(|&dd| delta_v.iter().map(move |&dv| (dd, dv)))
        .collect();
    combos
        .par_iter()
        .map(|&(dd, dv)| {
            let params = MergeParams {
                delta_d: dd,
                delta_v: dv,
                pins: pins.to_vec(),
                background,
            };
            let g = build_graph(d, v, &params)?;
            let c = greedy_color(&g, &smallest_last_order(&g).order)?;
            Ok(SweepRow {
                delta_d: dd,
                delta_v: dv,
                n_merged: colour_count(&c),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("delta_d,delta_v,n_merged_labels\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.delta_d, r.delta_v, r.n_merged));
    }
    out
}
