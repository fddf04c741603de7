//! Per-label overlap and volume metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::LabelVolume;

/// Dice coefficient for one label; `None` when both masks are empty.
pub fn dice(pred: &LabelVolume, gt: &LabelVolume, label: u32) -> Result<Option<f64>> {
    gt.meta().ensure_compatible(pred.meta(), "prediction")?;
    let (mut a, mut b, mut both) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.voxels().iter().zip(gt.voxels()) {
        let (ip, ig) = (p == label, g == label);
        a += ip as u64;
        b += ig as u64;
        both += (ip && ig) as u64;
    }
    Ok(dice_from_counts(a, b, both))
}

fn dice_from_counts(pred: u64, gt: u64, both: u64) -> Option<f64> {
    (pred + gt > 0).then(|| 2.0 * both as f64 / (pred + gt) as f64)
}

fn rve_from_counts(pred: u64, gt: u64) -> Option<f64> {
    (gt > 0).then(|| (pred as f64 - gt as f64) / gt as f64)
}

/// Signed relative volume error `(|pred| - |gt|) / |gt|`; `None` when the
/// reference is empty.
pub fn relative_volume_error(pred: &LabelVolume, gt: &LabelVolume, label: u32) -> Result<Option<f64>> {
    gt.meta().ensure_compatible(pred.meta(), "prediction")?;
    let a = pred.voxels().iter().filter(|&&p| p == label).count() as u64;
    let b = gt.voxels().iter().filter(|&&g| g == label).count() as u64;
    Ok(rve_from_counts(a, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: u32,
    pub dice: Option<f64>,
    pub rel_vol_err: Option<f64>,
    pub gt_voxels: u64,
    pub pred_voxels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    /// Mean Dice over labels present in the reference.
    pub mean_dice: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str = "label_id,dice,rel_vol_err,gt_voxels,pred_voxels";

/// Rows for every non-background label in either volume.
pub fn report(pred: &LabelVolume, gt: &LabelVolume, background: u32) -> Result<MetricsReport> {
    gt.meta().ensure_compatible(pred.meta(), "prediction")?;
    // label -> (pred, gt, both)
    let mut tally: BTreeMap<u32, [u64; 3]> = BTreeMap::new();
    for (&p, &g) in pred.voxels().iter().zip(gt.voxels()) {
        tally.entry(p).or_default()[0] += 1;
        tally.entry(g).or_default()[1] += 1;
        if p == g {
            tally.entry(p).or_default()[2] += 1;
        }
    }
    tally.remove(&background);
    let rows: Vec<MetricsRow> = tally
        .into_iter()
        .map(|(label, [a, b, both])| MetricsRow {
            label,
            dice: dice_from_counts(a, b, both),
            rel_vol_err: rve_from_counts(a, b),
            gt_voxels: b,
            pred_voxels: a,
        })
        .collect();
    Ok(MetricsReport {
        mean_dice: mean_dice(&rows),
        rows,
    })
}

fn mean_dice(rows: &[MetricsRow]) -> Option<f64> {
    let scores: Vec<f64> = rows.iter().filter(|r| r.gt_voxels > 0).filter_map(|r| r.dice).collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsReport {
    /// Undefined values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.label,
                cell(r.dice),
                cell(r.rel_vol_err),
                r.gt_voxels,
                r.pred_voxels
            )
            .unwrap();
        }
        out
    }

    pub fn row(&self, label: u32) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}
