//! Independent reference implementations used as test oracles. None of these
//! call into the code paths they check.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use labelmerge::{GridMeta, LabelVolume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sq_dist_int(a: [usize; 3], b: [usize; 3]) -> i64 {
    (0..3).map(|k| (a[k] as i64 - b[k] as i64).pow(2)).sum()
}

/// Voxels (as coordinates) carrying `label` in any of the volumes.
pub fn pooled_support(vols: &[LabelVolume], label: u32) -> Vec<[usize; 3]> {
    let meta = vols[0].meta();
    (0..meta.len())
        .filter(|&i| vols.iter().any(|v| v.voxels()[i] == label))
        .map(|i| meta.coords(i))
        .collect()
}

/// All-pairs minimum squared distance in voxel units.
pub fn brute_min_sq(a: &[[usize; 3]], b: &[[usize; 3]]) -> i64 {
    a.iter()
        .flat_map(|p| b.iter().map(move |q| sq_dist_int(*p, *q)))
        .min()
        .expect("non-empty sets")
}

/// Squared distance from every voxel to the nearest mask voxel, in voxel units.
pub fn brute_edt(meta: &GridMeta, mask: &[bool]) -> Vec<i64> {
    let sites: Vec<[usize; 3]> = (0..meta.len()).filter(|&i| mask[i]).map(|i| meta.coords(i)).collect();
    (0..meta.len())
        .map(|i| {
            let c = meta.coords(i);
            sites.iter().map(|&s| sq_dist_int(c, s)).min().unwrap()
        })
        .collect()
}

/// Exact chromatic number by backtracking (small graphs only).
pub fn chromatic_number(n: usize, edges: &[(usize, usize)]) -> usize {
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in edges {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    fn colourable(v: usize, k: usize, adj: &[Vec<bool>], col: &mut Vec<usize>) -> bool {
        if v == adj.len() {
            return true;
        }
        for c in 0..k {
            if (0..v).all(|u| !(adj[v][u] && col[u] == c)) {
                col[v] = c;
                if colourable(v + 1, k, adj, col) {
                    return true;
                }
            }
        }
        false
    }
    if n == 0 {
        return 0;
    }
    (1..=n).find(|&k| colourable(0, k, &adj, &mut vec![0; n])).unwrap()
}

/// Smallest-last greedy colouring recomputing degrees from scratch at every
/// step. Returns (colour per vertex, colours used, degeneracy).
pub fn reference_smallest_last(n: usize, edges: &[(usize, usize)]) -> (Vec<usize>, usize, usize) {
    let adjacent = |a: usize, b: usize| edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a));
    let mut remaining: BTreeSet<usize> = (0..n).collect();
    let mut removal = Vec::new();
    let mut degeneracy = 0;
    while !remaining.is_empty() {
        let (deg, v) = remaining
            .iter()
            .map(|&v| (remaining.iter().filter(|&&u| u != v && adjacent(u, v)).count(), v))
            .min()
            .unwrap();
        degeneracy = degeneracy.max(deg);
        remaining.remove(&v);
        removal.push(v);
    }
    let mut colour: Vec<Option<usize>> = vec![None; n];
    for &v in removal.iter().rev() {
        let used: BTreeSet<usize> = (0..n).filter(|&u| adjacent(u, v)).filter_map(|u| colour[u]).collect();
        colour[v] = Some((0..).find(|c| !used.contains(c)).unwrap());
    }
    let colour: Vec<usize> = colour.into_iter().map(Option::unwrap).collect();
    let used = colour.iter().max().map_or(0, |m| m + 1);
    (colour, used, degeneracy)
}

/// (pred, gt) -> voxel count.
pub fn confusion(pred: &LabelVolume, gt: &LabelVolume) -> HashMap<(u32, u32), u64> {
    let mut m = HashMap::new();
    for (&p, &g) in pred.voxels().iter().zip(gt.voxels()) {
        *m.entry((p, g)).or_insert(0) += 1;
    }
    m
}

pub fn dice_from_confusion(c: &HashMap<(u32, u32), u64>, label: u32) -> Option<f64> {
    let pred: u64 = c.iter().filter(|((p, _), _)| *p == label).map(|(_, n)| n).sum();
    let gt: u64 = c.iter().filter(|((_, g), _)| *g == label).map(|(_, n)| n).sum();
    let both = c.get(&(label, label)).copied().unwrap_or(0);
    (pred + gt > 0).then(|| 2.0 * both as f64 / (pred + gt) as f64)
}

/// Dense influence-map oracle: at every voxel evaluate each member's fudged
/// prior from a brute-force distance and take the argmax (ties: smaller ID).
pub fn dense_influence(vols: &[LabelVolume], members: &[u32]) -> Vec<u32> {
    let meta = vols[0].meta();
    let n = vols.len() as f64;
    let supports: Vec<Vec<[usize; 3]>> = members.iter().map(|&l| pooled_support(vols, l)).collect();
    (0..meta.len())
        .map(|i| {
            let c = meta.coords(i);
            let mut best = (f64::NEG_INFINITY, u32::MAX);
            for (k, &l) in members.iter().enumerate() {
                let count = vols.iter().filter(|v| v.voxels()[i] == l).count();
                let value = if count > 0 {
                    count as f64 / n
                } else {
                    let e = supports[k].iter().map(|&s| sq_dist_int(c, s)).min().unwrap() as f64;
                    (-e.sqrt()).exp() / n
                };
                if value > best.0 || (value == best.0 && l < best.1) {
                    best = (value, l);
                }
            }
            best.1
        })
        .collect()
}

/// Random volumes built from random-walk blobs; supports of different
/// labels may touch or overlap across subjects.
pub fn random_walk_volumes(seed: u64, dims: [usize; 3], n_labels: u32, n_subjects: usize) -> Vec<LabelVolume> {
    let meta = GridMeta::isotropic(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<[usize; 3]> = (0..n_labels)
        .map(|_| [0, 1, 2].map(|k| rng.gen_range(0..dims[k])))
        .collect();
    (0..n_subjects)
        .map(|_| {
            let mut v = LabelVolume::filled(meta, 0);
            for (l, a) in anchors.iter().enumerate() {
                let mut p = *a;
                for _ in 0..rng.gen_range(1..40) {
                    v.set(p, l as u32 + 1);
                    let k = rng.gen_range(0..3);
                    if rng.gen_bool(0.5) {
                        p[k] = (p[k] + 1).min(dims[k] - 1);
                    } else {
                        p[k] = p[k].saturating_sub(1);
                    }
                }
            }
            v
        })
        .collect()
}

/// Mean voxel count per label over volumes.
pub fn mean_counts(vols: &[LabelVolume]) -> BTreeMap<u32, f64> {
    let mut m = BTreeMap::new();
    for v in vols {
        for &x in v.voxels() {
            *m.entry(x).or_insert(0.0) += 1.0;
        }
    }
    m.values_mut().for_each(|c| *c /= vols.len() as f64);
    m
}
