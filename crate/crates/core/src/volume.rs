//! Label and scalar volumes on a shared voxel grid.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spacing tolerance (mm) for grid compatibility.
pub const SPACING_TOLERANCE: f64 = 1e-6;

/// Grid geometry: voxels per axis and mm per voxel along each axis.
///
/// Voxels are stored x-fastest, so the linear index of `(x, y, z)` is
/// `x + nx * (y + ny * z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl GridMeta {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "grid dims must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "grid spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).is_none() {
            return Err(Error::InvalidArgument(format!("grid {dims:?} is too large")));
        }
        Ok(Self { dims, spacing })
    }

    /// Unit-spaced grid; panics on a zero dimension.
    pub fn isotropic(dims: [usize; 3]) -> Self {
        Self::new(dims, [1.0; 3]).expect("dims must be positive")
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, [x, y, z]: [usize; 3]) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let rest = index / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Voxel-centre position in mm, relative to voxel (0,0,0).
    #[inline]
    pub fn position(&self, index: usize) -> [f64; 3] {
        let c = self.coords(index);
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    /// Linear indices of the in-grid 6-connected neighbours of `index`.
    pub fn face_neighbours(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.coords(index);
        let strides = [1, self.dims[0], self.dims[0] * self.dims[1]];
        (0..3).flat_map(move |axis| {
            let lo = (c[axis] > 0).then(|| index - strides[axis]);
            let hi = (c[axis] + 1 < self.dims[axis]).then(|| index + strides[axis]);
            lo.into_iter().chain(hi)
        })
    }

    /// True when `index` lies on an outer face of the grid.
    pub fn on_grid_face(&self, index: usize) -> bool {
        let c = self.coords(index);
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.dims[a])
    }

    pub fn compatible_with(&self, other: &GridMeta) -> bool {
        self.dims == other.dims
            && self
                .spacing
                .iter()
                .zip(other.spacing.iter())
                .all(|(a, b)| (a - b).abs() <= SPACING_TOLERANCE)
    }

    pub fn ensure_compatible(&self, other: &GridMeta, name: &str) -> Result<()> {
        if self.compatible_with(other) {
            Ok(())
        } else {
            Err(Error::IncompatibleGrid {
                name: name.to_string(),
                expected: *self,
                found: *other,
            })
        }
    }
}

impl fmt::Display for GridMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{} @ {}x{}x{} mm",
            self.dims[0], self.dims[1], self.dims[2], self.spacing[0], self.spacing[1], self.spacing[2]
        )
    }
}

/// Dense 3D label map. Label 0 is background unless a caller says otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    meta: GridMeta,
    voxels: Vec<u32>,
}

impl LabelVolume {
    pub fn new(meta: GridMeta, voxels: Vec<u32>) -> Result<Self> {
        if voxels.len() != meta.len() {
            return Err(Error::InvalidArgument(format!(
                "voxel buffer has {} entries, grid {} needs {}",
                voxels.len(),
                meta,
                meta.len()
            )));
        }
        Ok(Self { meta, voxels })
    }

    pub fn filled(meta: GridMeta, label: u32) -> Self {
        Self {
            voxels: vec![label; meta.len()],
            meta,
        }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn voxels(&self) -> &[u32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [u32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<u32> {
        self.voxels
    }

    pub fn get(&self, xyz: [usize; 3]) -> u32 {
        self.voxels[self.meta.index(xyz)]
    }

    pub fn set(&mut self, xyz: [usize; 3], label: u32) {
        let i = self.meta.index(xyz);
        self.voxels[i] = label;
    }

    /// Distinct labels in ascending order with their voxel counts.
    pub fn unique_labels(&self) -> Vec<(u32, usize)> {
        unique_counts(&self.voxels)
    }
}

pub(crate) fn unique_counts(voxels: &[u32]) -> Vec<(u32, usize)> {
    let mut counts = std::collections::BTreeMap::new();
    for &v in voxels {
        *counts.entry(v).or_insert(0usize) += 1;
    }
    counts.into_iter().collect()
}

/// Dense 3D field of finite reals (priors, distance fields).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    meta: GridMeta,
    voxels: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(meta: GridMeta, voxels: Vec<f64>) -> Result<Self> {
        if voxels.len() != meta.len() {
            return Err(Error::InvalidArgument(format!(
                "voxel buffer has {} entries, grid {} needs {}",
                voxels.len(),
                meta,
                meta.len()
            )));
        }
        if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at voxel {i}",
                voxels[i]
            )));
        }
        Ok(Self { meta, voxels })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn get(&self, xyz: [usize; 3]) -> f64 {
        self.voxels[self.meta.index(xyz)]
    }
}

/// Either kind of volume, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Label(LabelVolume),
    Scalar(ScalarVolume),
}

impl Volume {
    pub fn meta(&self) -> &GridMeta {
        match self {
            Volume::Label(v) => v.meta(),
            Volume::Scalar(v) => v.meta(),
        }
    }

    pub fn into_label(self) -> Result<LabelVolume> {
        match self {
            Volume::Label(v) => Ok(v),
            Volume::Scalar(_) => Err(Error::InvalidArgument(
                "expected an integer label volume, found a floating-point volume".into(),
            )),
        }
    }
}
