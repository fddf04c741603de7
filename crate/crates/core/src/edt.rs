//! Exact Euclidean distance transform on anisotropic grids.
//!
//! Separable lower-envelope-of-parabolas method: one linear pass per axis
//! over squared distances. With unit spacing every intermediate value is a
//! small integer held exactly in an `f64`, so results are exact.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{GridMeta, ScalarVolume};

/// Squared distance (mm²) from each voxel centre to the nearest voxel centre
/// where `mask` is true.
pub fn squared_distance_to_mask(meta: &GridMeta, mask: &[bool]) -> Result<Vec<f64>> {
    assert_eq!(mask.len(), meta.len(), "mask does not match grid");
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let mut field: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { f64::INFINITY }).collect();
    transform_in_place(meta, &mut field);
    Ok(field)
}

/// Squared distance field seeded from a sorted list of mask voxel indices.
pub fn squared_distance_to_indices(meta: &GridMeta, indices: &[u32]) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut field = vec![f64::INFINITY; meta.len()];
    for &i in indices {
        field[i as usize] = 0.0;
    }
    transform_in_place(meta, &mut field);
    Ok(field)
}

/// Euclidean distance (mm) to the nearest mask voxel; zero on the mask.
pub fn edt(meta: &GridMeta, mask: &[bool]) -> Result<ScalarVolume> {
    let sq = squared_distance_to_mask(meta, mask)?;
    ScalarVolume::new(*meta, sq.into_iter().map(f64::sqrt).collect())
}

fn transform_in_place(meta: &GridMeta, field: &mut [f64]) {
    let [nx, ny, nz] = meta.dims;
    let [sx, sy, sz] = meta.spacing;

    // x: rows are contiguous.
    field.par_chunks_mut(nx).for_each_init(
        || Envelope::new(nx),
        |env, row| {
            env.line.copy_from_slice(row);
            env.run(sx, row);
        },
    );

    // y: each z-slab is independent.
    field.par_chunks_mut(nx * ny).for_each_init(
        || Envelope::new(ny),
        |env, slab| {
            let mut out = vec![0.0; ny];
            for x in 0..nx {
                for y in 0..ny {
                    env.line[y] = slab[x + nx * y];
                }
                env.run(sy, &mut out);
                for y in 0..ny {
                    slab[x + nx * y] = out[y];
                }
            }
        },
    );

    // z: columns gathered in parallel, scattered afterwards.
    if nz > 1 {
        let plane = nx * ny;
        let src: &[f64] = field;
        let columns: Vec<Vec<f64>> = (0..plane)
            .into_par_iter()
            .map_init(
                || Envelope::new(nz),
                |env, c| {
                    for z in 0..nz {
                        env.line[z] = src[c + plane * z];
                    }
                    let mut out = vec![0.0; nz];
                    env.run(sz, &mut out);
                    out
                },
            )
            .collect();
        for (c, col) in columns.iter().enumerate() {
            for (z, &v) in col.iter().enumerate() {
                field[c + plane * z] = v;
            }
        }
    }
}

/// Scratch buffers for the 1D lower envelope.
struct Envelope {
    line: Vec<f64>,
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Self {
            line: vec![0.0; n],
            sites: vec![0; n],
            bounds: vec![0.0; n + 1],
        }
    }

    /// out[q] = min_p line[p] + ((q - p) * spacing)²
    fn run(&mut self, spacing: f64, out: &mut [f64]) {
        let f = &self.line;
        let n = f.len();
        let pos = |i: usize| i as f64 * spacing;
        let mut k: usize = 0;
        let mut have = false;
        for q in 0..n {
            if f[q].is_infinite() {
                continue;
            }
            if !have {
                have = true;
                k = 0;
                self.sites[0] = q;
                self.bounds[0] = f64::NEG_INFINITY;
                self.bounds[1] = f64::INFINITY;
                continue;
            }
            loop {
                let p = self.sites[k];
                let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                if s <= self.bounds[k] {
                    if k == 0 {
                        // q dominates everything seen so far
                        self.sites[0] = q;
                        self.bounds[0] = f64::NEG_INFINITY;
                        self.bounds[1] = f64::INFINITY;
                        break;
                    }
                    k -= 1;
                } else {
                    k += 1;
                    self.sites[k] = q;
                    self.bounds[k] = s;
                    self.bounds[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        if !have {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
        let mut j = 0;
        for (q, o) in out.iter_mut().enumerate() {
            while self.bounds[j + 1] < pos(q) {
                j += 1;
            }
            let p = self.sites[j];
            let d = (q as f64 - p as f64) * spacing;
            *o = d * d + f[p];
        }
    }
}
