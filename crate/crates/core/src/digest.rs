//! Content hashes over canonical serialisations.

use sha2::{Digest, Sha256};

use crate::volume::LabelVolume;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn feed_volume(h: &mut Sha256, vol: &LabelVolume) {
    let meta = vol.meta();
    for d in meta.dims {
        h.update((d as u64).to_le_bytes());
    }
    for s in meta.spacing {
        h.update(s.to_bits().to_le_bytes());
    }
    for v in vol.voxels() {
        h.update(v.to_le_bytes());
    }
}

/// Order-sensitive hash of a training set's grids and voxel payloads.
pub fn training_set_digest(vols: &[LabelVolume]) -> String {
    let mut h = Sha256::new();
    h.update((vols.len() as u64).to_le_bytes());
    for v in vols {
        feed_volume(&mut h, v);
    }
    hex(&h.finalize())
}
