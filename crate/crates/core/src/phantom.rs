//! Synthetic label volumes for exercising the pipeline end to end.
//!
//! A phantom is a set of blobs (spheres or boxes), one per label, placed on a
//! grid. Each training subject sees every blob shifted by an independent
//! integer jitter, so pooled supports grow by roughly the jitter amplitude.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridMeta, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobShape {
    Sphere,
    Box,
}

/// A blob at a fixed voxel centre, radius (or half-extent) in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub label: u32,
    pub centre: [usize; 3],
    pub radius_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub n_labels: usize,
    pub n_train: usize,
    pub shape: BlobShape,
    /// Radius range `[min, max]` in mm for randomly placed blobs.
    pub radius_mm: [f64; 2],
    /// Minimum nominal gap between any two blobs, after worst-case jitter.
    pub min_gap_mm: f64,
    /// Per-axis jitter amplitude in voxels.
    pub jitter: usize,
    pub seed: u64,
    /// Explicit placement; when non-empty it replaces random placement and
    /// `n_labels` is ignored.
    #[serde(default)]
    pub blobs: Vec<BlobSpec>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [32, 32, 32],
            spacing: [1.0; 3],
            n_labels: 6,
            n_train: 4,
            shape: BlobShape::Sphere,
            radius_mm: [3.0, 5.0],
            min_gap_mm: 2.0,
            jitter: 1,
            seed: 0,
            blobs: Vec::new(),
        }
    }
}

/// Minimum nominal gap between two labels over all subject pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGap {
    pub a: u32,
    pub b: u32,
    pub gap_mm: f64,
}

/// Generator bookkeeping for oracle checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub labels: Vec<u32>,
    pub radii_mm: Vec<f64>,
    /// `centres[subject][blob]`
    pub centres: Vec<Vec<[usize; 3]>>,
    /// Voxel count per label, one entry per subject.
    pub volumes: BTreeMap<u32, Vec<u64>>,
    /// Analytic surface-to-surface gaps of the continuous blobs. This is a
    /// lower bound on the voxel distance, exact for axis-aligned integer
    /// placements.
    pub gaps: Vec<PairGap>,
}

impl PhantomTruth {
    pub fn mean_volume(&self, label: u32) -> Option<f64> {
        self.volumes
            .get(&label)
            .map(|v| v.iter().sum::<u64>() as f64 / v.len() as f64)
    }

    pub fn gap(&self, a: u32, b: u32) -> Option<f64> {
        let (a, b) = (a.min(b), a.max(b));
        self.gaps.iter().find(|g| g.a == a && g.b == b).map(|g| g.gap_mm)
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub volumes: Vec<LabelVolume>,
    pub truth: PhantomTruth,
}

const PLACEMENT_ATTEMPTS: usize = 20_000;

fn subject_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn surface_gap(shape: BlobShape, spacing: &[f64; 3], c1: [usize; 3], r1: f64, c2: [usize; 3], r2: f64) -> f64 {
    let delta = |k: usize| (c1[k] as f64 - c2[k] as f64).abs() * spacing[k];
    match shape {
        BlobShape::Sphere => {
            let d = (0..3).map(|k| delta(k) * delta(k)).sum::<f64>().sqrt();
            d - r1 - r2
        }
        BlobShape::Box => {
            let per_axis: Vec<f64> = (0..3).map(|k| delta(k) - r1 - r2).collect();
            if per_axis.iter().all(|&g| g < 0.0) {
                per_axis.into_iter().fold(f64::NEG_INFINITY, f64::max)
            } else {
                per_axis.iter().map(|g| g.max(0.0).powi(2)).sum::<f64>().sqrt()
            }
        }
    }
}

/// Voxel reach of a blob along each axis.
fn reach(radius: f64, spacing: &[f64; 3]) -> [usize; 3] {
    [0, 1, 2].map(|k| (radius / spacing[k]).floor() as usize)
}

fn fits(meta: &GridMeta, centre: [usize; 3], reach: [usize; 3], jitter: usize) -> bool {
    (0..3).all(|k| centre[k] >= reach[k] + jitter && centre[k] + reach[k] + jitter < meta.dims[k])
}

fn place_blobs(spec: &PhantomSpec, meta: &GridMeta) -> Result<Vec<BlobSpec>> {
    if !spec.blobs.is_empty() {
        let mut labels: Vec<u32> = spec.blobs.iter().map(|b| b.label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != spec.blobs.len() || labels.contains(&0) {
            return Err(Error::InvalidArgument(
                "explicit blobs need distinct non-zero labels".into(),
            ));
        }
        for b in &spec.blobs {
            if b.radius_mm.is_nan()
                || b.radius_mm < 0.0
                || !fits(meta, b.centre, reach(b.radius_mm, &spec.spacing), spec.jitter)
            {
                return Err(Error::Packing(format!(
                    "blob for label {} does not fit the grid with jitter {}",
                    b.label, spec.jitter
                )));
            }
        }
        return Ok(spec.blobs.clone());
    }

    let [rmin, rmax] = spec.radius_mm;
    if !(rmin >= 0.0 && rmax >= rmin) {
        return Err(Error::InvalidArgument(format!(
            "invalid radius range {:?}",
            spec.radius_mm
        )));
    }
    let jitter_mm = (0..3)
        .map(|k| (spec.jitter as f64 * spec.spacing[k]).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut rng = subject_rng(spec.seed, 0);
    let mut placed: Vec<BlobSpec> = Vec::with_capacity(spec.n_labels);
    for label in 1..=spec.n_labels as u32 {
        let mut ok = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let radius = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
            let r = reach(radius, &spec.spacing);
            let lo = r.map(|x| x + spec.jitter);
            if (0..3).any(|k| 2 * lo[k] >= meta.dims[k]) {
                continue;
            }
            let centre = [0, 1, 2].map(|k| rng.gen_range(lo[k]..meta.dims[k] - lo[k]));
            let clear = placed.iter().all(|b| {
                surface_gap(spec.shape, &spec.spacing, centre, radius, b.centre, b.radius_mm) - 2.0 * jitter_mm
                    >= spec.min_gap_mm
            });
            if clear {
                placed.push(BlobSpec {
                    label,
                    centre,
                    radius_mm: radius,
                });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Packing(format!(
                "could not place label {label} of {} on {} after {PLACEMENT_ATTEMPTS} attempts",
                spec.n_labels, meta
            )));
        }
    }
    Ok(placed)
}

fn rasterize(meta: &GridMeta, shape: BlobShape, blobs: &[BlobSpec], centres: &[[usize; 3]]) -> LabelVolume {
    let mut vol = LabelVolume::filled(*meta, 0);
    let s = meta.spacing;
    for (b, c) in blobs.iter().zip(centres) {
        let r = reach(b.radius_mm, &s);
        for z in c[2] - r[2]..=c[2] + r[2] {
            for y in c[1] - r[1]..=c[1] + r[1] {
                for x in c[0] - r[0]..=c[0] + r[0] {
                    let d = [x, y, z].map(|v| v as f64);
                    let off = [0, 1, 2].map(|k| (d[k] - c[k] as f64) * s[k]);
                    let inside = match shape {
                        BlobShape::Sphere => off.iter().map(|o| o * o).sum::<f64>() <= b.radius_mm * b.radius_mm,
                        BlobShape::Box => off.iter().all(|o| o.abs() <= b.radius_mm),
                    };
                    let i = meta.index([x, y, z]);
                    if inside && vol.voxels()[i] == 0 {
                        vol.voxels_mut()[i] = b.label;
                    }
                }
            }
        }
    }
    vol
}

/// Generate `n_train` subjects and the generator's bookkeeping.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let meta = GridMeta::new(spec.dims, spec.spacing)?;
    if spec.n_train == 0 {
        return Err(Error::InvalidArgument("n_train must be positive".into()));
    }
    if spec.min_gap_mm.is_nan() || spec.min_gap_mm < 0.0 {
        return Err(Error::InvalidArgument("min_gap_mm must be >= 0".into()));
    }
    let blobs = place_blobs(spec, &meta)?;
    let j = spec.jitter as i64;

    let subjects: Vec<(LabelVolume, Vec<[usize; 3]>)> = (0..spec.n_train)
        .into_par_iter()
        .map(|k| {
            let mut rng = subject_rng(spec.seed, k as u64 + 1);
            let centres: Vec<[usize; 3]> = blobs
                .iter()
                .map(|b| b.centre.map(|c| (c as i64 + rng.gen_range(-j..=j)) as usize))
                .collect();
            (rasterize(&meta, spec.shape, &blobs, &centres), centres)
        })
        .collect();

    let mut volumes = BTreeMap::new();
    for b in &blobs {
        volumes.insert(b.label, Vec::with_capacity(spec.n_train));
    }
    for (vol, _) in &subjects {
        let counts: BTreeMap<u32, usize> = vol.unique_labels().into_iter().collect();
        for b in &blobs {
            volumes
                .get_mut(&b.label)
                .unwrap()
                .push(counts.get(&b.label).copied().unwrap_or(0) as u64);
        }
    }

    let mut gaps = Vec::new();
    for (p, a) in blobs.iter().enumerate() {
        for b in &blobs[p + 1..] {
            let qa = blobs.iter().position(|x| x.label == a.label).unwrap();
            let qb = blobs.iter().position(|x| x.label == b.label).unwrap();
            let mut best = f64::INFINITY;
            for (_, ca) in &subjects {
                for (_, cb) in &subjects {
                    let g = surface_gap(spec.shape, &spec.spacing, ca[qa], a.radius_mm, cb[qb], b.radius_mm);
                    best = best.min(g);
                }
            }
            gaps.push(PairGap {
                a: a.label.min(b.label),
                b: a.label.max(b.label),
                gap_mm: best,
            });
        }
    }
    gaps.sort_by_key(|g| (g.a, g.b));

    let mut order: Vec<usize> = (0..blobs.len()).collect();
    order.sort_by_key(|&i| blobs[i].label);
    let truth = PhantomTruth {
        labels: order.iter().map(|&i| blobs[i].label).collect(),
        radii_mm: order.iter().map(|&i| blobs[i].radius_mm).collect(),
        centres: subjects
            .iter()
            .map(|(_, c)| order.iter().map(|&i| c[i]).collect())
            .collect(),
        volumes,
        gaps,
    };
    Ok(Phantom {
        volumes: subjects.into_iter().map(|(v, _)| v).collect(),
        truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    Dilate,
    Erode,
    BoundaryJitter,
}

/// Morphological damage with a 6-connected structuring element, applied
/// `radius` times. Never introduces a label that is not already present.
///
/// * dilate: background voxels touching a region take the smallest
///   touching label;
/// * erode: region voxels touching anything else (or the grid edge) become
///   background;
/// * boundary jitter: every voxel with a differing face-neighbour copies a
///   uniformly chosen face-neighbour.
pub fn perturb(vol: &LabelVolume, kind: Perturbation, radius: usize, seed: u64, background: u32) -> LabelVolume {
    let meta = *vol.meta();
    let mut cur = vol.voxels().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut neighbours = Vec::with_capacity(6);
    for _ in 0..radius {
        let prev = cur.clone();
        for i in 0..meta.len() {
            let l = prev[i];
            neighbours.clear();
            neighbours.extend(meta.face_neighbours(i));
            match kind {
                Perturbation::Dilate => {
                    if l == background {
                        if let Some(n) = neighbours.iter().map(|&n| prev[n]).filter(|&n| n != background).min() {
                            cur[i] = n;
                        }
                    }
                }
                Perturbation::Erode => {
                    if l != background && (meta.on_grid_face(i) || neighbours.iter().any(|&n| prev[n] != l)) {
                        cur[i] = background;
                    }
                }
                Perturbation::BoundaryJitter => {
                    if neighbours.iter().any(|&n| prev[n] != l) {
                        let pick = neighbours[rng.gen_range(0..neighbours.len())];
                        cur[i] = prev[pick];
                    }
                }
            }
        }
    }
    LabelVolume::new(meta, cur).expect("same grid")
}
