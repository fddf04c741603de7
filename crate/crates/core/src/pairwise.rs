//! Pairwise label statistics: minimum inter-label distances and average
//! volume ratios.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::kdtree::{KdTree, Point};
use crate::support::SupportMap;
use crate::volume::{GridMeta, LabelVolume};

/// Voxels of a set with at least one 6-connected neighbour outside it.
/// Positions past the grid faces count as outside.
///
/// `indices` must be sorted ascending.
pub fn inner_boundary(meta: &GridMeta, indices: &[u32]) -> Vec<u32> {
    debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
    let contains = |i: usize| indices.binary_search(&(i as u32)).is_ok();
    indices
        .iter()
        .copied()
        .filter(|&i| {
            let i = i as usize;
            meta.on_grid_face(i) || meta.face_neighbours(i).any(|n| !contains(n))
        })
        .collect()
}

fn sorted_intersect(a: &[u32], b: &[u32]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Symmetric matrix of minimum Euclidean distances (mm) between the pooled
/// supports of each pair of labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<u32>,
    squared: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_squared(labels: Vec<u32>, squared: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if squared.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "{} entries for a {n}x{n} matrix",
                squared.len()
            )));
        }
        Ok(Self { labels, squared })
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn squared(&self, i: usize, j: usize) -> f64 {
        self.squared[i * self.labels.len() + j]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.squared(i, j).sqrt()
    }

    pub fn position(&self, label: u32) -> Option<usize> {
        self.labels.binary_search(&label).ok()
    }

    pub fn between(&self, a: u32, b: u32) -> Result<f64> {
        let i = self.position(a).ok_or(Error::UnknownLabel(a))?;
        let j = self.position(b).ok_or(Error::UnknownLabel(b))?;
        Ok(self.get(i, j))
    }

    /// Full square CSV, label IDs as header row and column, 6 decimals.
    pub fn to_csv(&self) -> String {
        square_csv(&self.labels, |i, j| self.get(i, j))
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_csv().as_bytes())
    }
}

/// Symmetric matrix of larger-over-smaller mean label volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioMatrix {
    labels: Vec<u32>,
    mean_volumes: Vec<f64>,
}

impl RatioMatrix {
    /// `mean_volumes` in mm³, one per label, all strictly positive.
    pub fn new(labels: Vec<u32>, mean_volumes: Vec<f64>) -> Result<Self> {
        if labels.len() != mean_volumes.len() {
            return Err(Error::InvalidArgument("one mean volume per label required".into()));
        }
        for (&l, &v) in labels.iter().zip(&mean_volumes) {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::DegenerateLabel(l));
            }
        }
        Ok(Self { labels, mean_volumes })
    }

    /// Mean volumes taken from the support map: a label's total support
    /// count equals its voxel total over the training set.
    pub fn from_support(s: &SupportMap, labels: &[u32]) -> Result<Self> {
        let vv = s.meta().voxel_volume();
        let volumes = labels
            .iter()
            .map(|&l| match s.support(l) {
                Ok(sup) => Ok(sup.total() as f64 / s.n_train() as f64 * vv),
                Err(Error::UnknownLabel(l)) => Err(Error::DegenerateLabel(l)),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels.to_vec(), volumes)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn mean_volumes(&self) -> &[f64] {
        &self.mean_volumes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.mean_volumes[i], self.mean_volumes[j]);
        if i == j {
            1.0
        } else {
            a.max(b) / a.min(b)
        }
    }

    pub fn to_csv(&self) -> String {
        square_csv(&self.labels, |i, j| self.get(i, j))
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.to_csv().as_bytes())
    }
}

fn square_csv(labels: &[u32], entry: impl Fn(usize, usize) -> f64) -> String {
    let mut out = String::from("label_id");
    for l in labels {
        write!(out, ",{l}").unwrap();
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        write!(out, "{l}").unwrap();
        for j in 0..labels.len() {
            write!(out, ",{:.6}", entry(i, j)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Minimum pooled-support distance between every pair of `labels`.
///
/// Overlapping supports give 0. Otherwise each pair is resolved by
/// nearest-neighbour queries from one label's inner boundary into a k-d tree
/// over the other's inner boundary; a closest pair of disjoint voxel sets
/// always lies on their inner boundaries.
pub fn min_distance_matrix(s: &SupportMap, labels: &[u32]) -> Result<DistanceMatrix> {
    let mut sorted = labels.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != labels.len() || sorted != labels {
        return Err(Error::InvalidArgument("labels must be sorted and distinct".into()));
    }
    let meta = *s.meta();
    let supports = labels
        .iter()
        .map(|&l| {
            let sup = s.support(l)?;
            if sup.is_empty() {
                Err(Error::EmptySupport(l))
            } else {
                Ok(sup)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let boundaries: Vec<Vec<Point>> = supports
        .par_iter()
        .map(|sup| {
            inner_boundary(&meta, &sup.indices)
                .into_iter()
                .map(|i| meta.position(i as usize))
                .collect()
        })
        .collect();
    let trees: Vec<KdTree> = boundaries.par_iter().map(|b| KdTree::new(b.clone())).collect();

    let n = labels.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if sorted_intersect(&supports[i].indices, &supports[j].indices) {
                return 0.0;
            }
            // query the smaller boundary into the larger tree
            let (q, t) = if boundaries[i].len() <= boundaries[j].len() {
                (i, j)
            } else {
                (j, i)
            };
            let mut best = f64::INFINITY;
            for p in &boundaries[q] {
                let d = trees[t].nearest_squared(p).expect("non-empty boundary");
                if d < best {
                    best = d;
                }
            }
            best
        })
        .collect();

    let mut squared = vec![0.0; n * n];
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        squared[i * n + j] = v;
        squared[j * n + i] = v;
    }
    DistanceMatrix::from_squared(labels.to_vec(), squared)
}

/// Ratio matrix from per-volume label counts.
pub fn volume_ratio_matrix(training: &[LabelVolume], labels: &[u32]) -> Result<RatioMatrix> {
    let first = training
        .first()
        .ok_or_else(|| Error::InvalidArgument("ratio matrix needs at least one volume".into()))?;
    let meta = *first.meta();
    let mut totals = vec![0u64; labels.len()];
    for (k, v) in training.iter().enumerate() {
        meta.ensure_compatible(v.meta(), &format!("training volume #{k}"))?;
        for (label, count) in v.unique_labels() {
            if let Ok(i) = labels.binary_search(&label) {
                totals[i] += count as u64;
            }
        }
    }
    let n = training.len() as f64;
    let vv = meta.voxel_volume();
    RatioMatrix::new(labels.to_vec(), totals.iter().map(|&t| t as f64 / n * vv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::support::build_support_map;
    use crate::volume::GridMeta;

    fn cube(meta: &GridMeta, lo: [usize; 3], side: usize) -> Vec<u32> {
        let mut out = Vec::new();
        for z in lo[2]..lo[2] + side {
            for y in lo[1]..lo[1] + side {
                for x in lo[0]..lo[0] + side {
                    out.push(meta.index([x, y, z]) as u32);
                }
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn boundary_of_single_voxel() {
        let meta = GridMeta::isotropic([5, 5, 5]);
        let one = vec![meta.index([2, 2, 2]) as u32];
        assert_eq!(inner_boundary(&meta, &one), one);
    }

    #[test]
    fn boundary_of_interior_cube() {
        let meta = GridMeta::isotropic([8, 8, 8]);
        let c = cube(&meta, [2, 2, 2], 4);
        assert_eq!(inner_boundary(&meta, &c).len(), 56);
    }

    #[test]
    fn grid_faces_count_as_outside() {
        let meta = GridMeta::isotropic([3, 3, 3]);
        let all: Vec<u32> = (0..27).collect();
        assert_eq!(inner_boundary(&meta, &all).len(), 26);
    }

    fn two_label_map(meta: GridMeta, a: [usize; 3], b: [usize; 3]) -> SupportMap {
        let mut v = LabelVolume::filled(meta, 0);
        v.set(a, 1);
        v.set(b, 2);
        build_support_map(&[v]).unwrap()
    }

    #[test]
    fn single_voxels_seven_apart() {
        let s = two_label_map(GridMeta::isotropic([1, 1, 8]), [0, 0, 0], [0, 0, 7]);
        let d = min_distance_matrix(&s, &[1, 2]).unwrap();
        assert_eq!(d.between(1, 2).unwrap(), 7.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn face_adjacent_voxels_are_one_apart() {
        let s = two_label_map(GridMeta::isotropic([3, 3, 3]), [1, 1, 1], [1, 2, 1]);
        let d = min_distance_matrix(&s, &[1, 2]).unwrap();
        assert_eq!(d.between(1, 2).unwrap(), 1.0);
    }

    #[test]
    fn overlapping_supports_are_zero() {
        let meta = GridMeta::isotropic([9, 9, 9]);
        let mut a = LabelVolume::filled(meta, 0);
        let mut b = LabelVolume::filled(meta, 0);
        // label 2 sits strictly inside label 1's pooled support
        for i in cube(&meta, [1, 1, 1], 7) {
            a.voxels_mut()[i as usize] = 1;
        }
        b.set([4, 4, 4], 2);
        let s = build_support_map(&[a, b]).unwrap();
        let d = min_distance_matrix(&s, &[1, 2]).unwrap();
        assert_eq!(d.between(1, 2).unwrap(), 0.0);
    }

    #[test]
    fn anisotropic_distance_in_mm() {
        let s = two_label_map(GridMeta::new([4, 1, 1], [2.5, 1.0, 1.0]).unwrap(), [0, 0, 0], [3, 0, 0]);
        let d = min_distance_matrix(&s, &[1, 2]).unwrap();
        assert_eq!(d.between(1, 2).unwrap(), 7.5);
    }

    #[test]
    fn ratio_matrix_values() {
        let r = RatioMatrix::new(vec![1, 2, 3], vec![100.0, 50.0, 100.0]).unwrap();
        assert_eq!(r.get(0, 1), 2.0);
        assert_eq!(r.get(1, 0), 2.0);
        assert_eq!(r.get(0, 2), 1.0);
        assert_eq!(r.get(1, 1), 1.0);
        assert!(matches!(
            RatioMatrix::new(vec![4], vec![0.0]),
            Err(Error::DegenerateLabel(4))
        ));
    }

    #[test]
    fn ratio_from_volumes_matches_support() {
        let meta = GridMeta::new([4, 4, 4], [1.0, 2.0, 1.0]).unwrap();
        let mut a = LabelVolume::filled(meta, 0);
        let mut b = LabelVolume::filled(meta, 0);
        for x in 0..4 {
            a.set([x, 0, 0], 1);
            b.set([x, 1, 0], 1);
            b.set([x, 2, 0], 1);
        }
        a.set([0, 3, 3], 2);
        b.set([1, 3, 3], 2);
        b.set([2, 3, 3], 2);
        let vols = [a, b];
        let r = volume_ratio_matrix(&vols, &[1, 2]).unwrap();
        assert_eq!(r.mean_volumes(), &[12.0, 3.0]);
        assert_eq!(r.get(0, 1), 4.0);
        let s = build_support_map(&vols).unwrap();
        assert_eq!(RatioMatrix::from_support(&s, &[1, 2]).unwrap(), r);
        assert!(matches!(
            volume_ratio_matrix(&vols, &[1, 2, 9]),
            Err(Error::DegenerateLabel(9))
        ));
    }

    #[test]
    fn csv_layout() {
        let d = DistanceMatrix::from_squared(vec![3, 8], vec![0.0, 4.0, 4.0, 0.0]).unwrap();
        assert_eq!(d.to_csv(), "label_id,3,8\n3,0.000000,2.000000\n8,2.000000,0.000000\n");
    }
}
