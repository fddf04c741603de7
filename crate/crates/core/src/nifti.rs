//! Single-file NIfTI-1 reader and writer (`.nii`, `.nii.gz`).
//!
//! Only the grid (dims + per-axis spacing), datatype and intensity scaling
//! are interpreted. Orientation fields are written as a plain scaled identity
//! and ignored on read.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{GridMeta, LabelVolume, ScalarVolume, Volume};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;
const DT_INT64: i16 = 1024;
const DT_UINT64: i16 = 1280;

// Header field offsets.
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_SFORM_CODE: usize = 254;
const OFF_SROW: usize = 280;
const OFF_MAGIC: usize = 344;

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct Reader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl Reader<'_> {
    fn take<const N: usize>(&self, offset: usize) -> Result<[u8; N]> {
        let mut out: [u8; N] = self
            .bytes
            .get(offset..offset + N)
            .ok_or_else(|| Error::format(self.bytes.len(), "unexpected end of data"))?
            .try_into()
            .expect("slice length checked");
        if matches!(self.endian, Endian::Big) {
            out.reverse();
        }
        Ok(out)
    }

    fn i16(&self, offset: usize) -> Result<i16> {
        self.take::<2>(offset).map(i16::from_le_bytes)
    }

    fn f32(&self, offset: usize) -> Result<f32> {
        self.take::<4>(offset).map(f32::from_le_bytes)
    }
}

/// Widen a header float to the f64 with the same shortest decimal spelling,
/// so that e.g. a spacing of 0.7 survives a save/load cycle unchanged.
fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

/// Read a NIfTI-1 volume. Gzip compression is detected from the content.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut decoded = Vec::new();
        if let Err(e) = MultiGzDecoder::new(raw.as_slice()).read_to_end(&mut decoded) {
            return Err(Error::format(
                decoded.len(),
                format!("corrupt or truncated gzip stream: {e}"),
            ));
        }
        decode_volume(&decoded)
    } else {
        decode_volume(&raw)
    }
}

/// Parse an uncompressed single-file NIfTI-1 byte stream.
pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            bytes.len(),
            format!("header needs {HEADER_SIZE} bytes, file has {}", bytes.len()),
        ));
    }
    let sizeof_hdr: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    let endian = if i32::from_le_bytes(sizeof_hdr) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(sizeof_hdr) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::format(0, "sizeof_hdr is not 348"));
    };
    let r = Reader { bytes, endian };

    let magic = &bytes[OFF_MAGIC..OFF_MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(Error::format(
            OFF_MAGIC,
            format!("expected single-file magic \"n+1\", found {magic:?}"),
        ));
    }

    let ndim = r.i16(OFF_DIM)?;
    if !(1..=7).contains(&ndim) {
        return Err(Error::format(OFF_DIM, format!("dim[0] = {ndim} out of range 1..=7")));
    }
    let mut dims = [1usize; 3];
    for axis in 1..=7usize {
        let offset = OFF_DIM + 2 * axis;
        let d = r.i16(offset)?;
        if axis as i16 > ndim {
            continue;
        }
        if d < 1 {
            return Err(Error::format(offset, format!("dim[{axis}] = {d} must be positive")));
        }
        if axis <= 3 {
            dims[axis - 1] = d as usize;
        } else if d != 1 {
            return Err(Error::format(
                offset,
                format!("dim[{axis}] = {d}; only 3D volumes are supported"),
            ));
        }
    }

    let mut spacing = [1.0f64; 3];
    for (axis, s) in spacing.iter_mut().enumerate() {
        let offset = OFF_PIXDIM + 4 * (axis + 1);
        if axis as i16 >= ndim {
            continue;
        }
        let p = r.f32(offset)?;
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::format(
                offset,
                format!("pixdim[{}] = {p} must be positive", axis + 1),
            ));
        }
        *s = widen(p);
    }
    let meta = GridMeta::new(dims, spacing).map_err(|e| Error::format(OFF_DIM, e.to_string()))?;

    let datatype = r.i16(OFF_DATATYPE)?;
    let width = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 | DT_INT64 | DT_UINT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };

    let vox_offset = r.f32(OFF_VOX_OFFSET)?;
    if !(vox_offset.is_finite() && vox_offset >= DATA_OFFSET as f32) {
        return Err(Error::format(
            OFF_VOX_OFFSET,
            format!("vox_offset {vox_offset} precedes the end of the header"),
        ));
    }
    let start = vox_offset as usize;
    let needed = meta.len() * width;
    if bytes.len() < start + needed {
        return Err(Error::format(
            bytes.len(),
            format!(
                "truncated voxel data: need {needed} bytes from offset {start}, file ends at {}",
                bytes.len()
            ),
        ));
    }
    let data = &bytes[start..start + needed];

    let slope = r.f32(OFF_SCL_SLOPE)?;
    let inter = r.f32(OFF_SCL_INTER)?;
    let identity_scaling = slope == 0.0 || slope.is_nan() || (slope == 1.0 && inter == 0.0);

    let word = |i: usize| -> [u8; 8] {
        let mut w = [0u8; 8];
        w[..width].copy_from_slice(&data[i * width..(i + 1) * width]);
        if matches!(endian, Endian::Big) {
            w[..width].reverse();
        }
        w
    };

    match datatype {
        DT_FLOAT32 | DT_FLOAT64 => {
            let mut voxels = Vec::with_capacity(meta.len());
            for i in 0..meta.len() {
                let w = word(i);
                let mut v = if datatype == DT_FLOAT32 {
                    f32::from_le_bytes(w[..4].try_into().unwrap()) as f64
                } else {
                    f64::from_le_bytes(w)
                };
                if !identity_scaling {
                    v = v * slope as f64 + inter as f64;
                }
                if !v.is_finite() {
                    return Err(Error::format(start + i * width, format!("non-finite value {v}")));
                }
                voxels.push(v);
            }
            Ok(Volume::Scalar(ScalarVolume::new(meta, voxels)?))
        }
        _ => {
            if !identity_scaling {
                return Err(Error::format(
                    OFF_SCL_SLOPE,
                    format!("label volumes must not be scaled (scl_slope={slope}, scl_inter={inter})"),
                ));
            }
            let mut voxels = Vec::with_capacity(meta.len());
            for i in 0..meta.len() {
                let w = word(i);
                let v: i128 = match datatype {
                    DT_UINT8 => w[0] as i128,
                    DT_INT8 => w[0] as i8 as i128,
                    DT_INT16 => i16::from_le_bytes([w[0], w[1]]) as i128,
                    DT_UINT16 => u16::from_le_bytes([w[0], w[1]]) as i128,
                    DT_INT32 => i32::from_le_bytes(w[..4].try_into().unwrap()) as i128,
                    DT_UINT32 => u32::from_le_bytes(w[..4].try_into().unwrap()) as i128,
                    DT_INT64 => i64::from_le_bytes(w) as i128,
                    DT_UINT64 => u64::from_le_bytes(w) as i128,
                    _ => unreachable!("datatype validated above"),
                };
                let label = u32::try_from(v).map_err(|_| {
                    Error::format(
                        start + i * width,
                        format!("label value {v} is not a non-negative 32-bit integer"),
                    )
                })?;
                voxels.push(label);
            }
            Ok(Volume::Label(LabelVolume::new(meta, voxels)?))
        }
    }
}

fn header(meta: &GridMeta, datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    let put = |h: &mut [u8], off: usize, b: &[u8]| h[off..off + b.len()].copy_from_slice(b);
    put(&mut h, 0, &(HEADER_SIZE as i32).to_le_bytes());
    let dim: [i16; 8] = [
        3,
        meta.dims[0] as i16,
        meta.dims[1] as i16,
        meta.dims[2] as i16,
        1,
        1,
        1,
        1,
    ];
    for (k, d) in dim.iter().enumerate() {
        put(&mut h, OFF_DIM + 2 * k, &d.to_le_bytes());
    }
    put(&mut h, OFF_DATATYPE, &datatype.to_le_bytes());
    put(&mut h, OFF_BITPIX, &bitpix.to_le_bytes());
    let pixdim = [
        1.0f32,
        meta.spacing[0] as f32,
        meta.spacing[1] as f32,
        meta.spacing[2] as f32,
        0.0,
        0.0,
        0.0,
        0.0,
    ];
    for (k, p) in pixdim.iter().enumerate() {
        put(&mut h, OFF_PIXDIM + 4 * k, &p.to_le_bytes());
    }
    put(&mut h, OFF_VOX_OFFSET, &(DATA_OFFSET as f32).to_le_bytes());
    put(&mut h, OFF_SCL_SLOPE, &1.0f32.to_le_bytes());
    put(&mut h, OFF_SCL_INTER, &0.0f32.to_le_bytes());
    h[OFF_XYZT_UNITS] = 2; // mm
    put(&mut h, OFF_SFORM_CODE, &1i16.to_le_bytes());
    for row in 0..3 {
        for col in 0..4 {
            let v = if row == col { meta.spacing[row] as f32 } else { 0.0 };
            put(&mut h, OFF_SROW + 16 * row + 4 * col, &v.to_le_bytes());
        }
    }
    put(&mut h, OFF_MAGIC, b"n+1\0");
    h
}

fn check_dims(meta: &GridMeta) -> Result<()> {
    if meta.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::InvalidArgument(format!(
            "grid {meta} exceeds the NIfTI-1 per-axis limit of {}",
            i16::MAX
        )));
    }
    Ok(())
}

/// Serialise a volume to uncompressed NIfTI-1 bytes.
///
/// Labels are written as INT32 (or UINT32 when a label exceeds `i32::MAX`).
/// Scalars are written as FLOAT32 when every value survives the narrowing
/// exactly, otherwise as FLOAT64.
pub fn encode_volume(vol: &Volume) -> Result<Vec<u8>> {
    check_dims(vol.meta())?;
    let out = match vol {
        Volume::Label(v) => {
            let fits_i32 = v.voxels().iter().all(|&x| x <= i32::MAX as u32);
            let dt = if fits_i32 { DT_INT32 } else { DT_UINT32 };
            let mut out = header(v.meta(), dt, 32);
            out.reserve(v.voxels().len() * 4);
            for &x in v.voxels() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
        Volume::Scalar(v) => {
            let narrow = v.voxels().iter().all(|&x| (x as f32) as f64 == x);
            if narrow {
                let mut out = header(v.meta(), DT_FLOAT32, 32);
                for &x in v.voxels() {
                    out.extend_from_slice(&(x as f32).to_le_bytes());
                }
                out
            } else {
                let mut out = header(v.meta(), DT_FLOAT64, 64);
                for &x in v.voxels() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                out
            }
        }
    };
    Ok(out)
}

/// Write a volume; a path ending in `.gz` is gzip-compressed.
pub fn save_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(vol)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let gz = path.extension().is_some_and(|e| e == "gz");
    let res = if gz {
        let mut enc = GzEncoder::new(w, Compression::default());
        enc.write_all(&bytes)
            .and_then(|_| enc.finish())
            .and_then(|mut inner| inner.flush())
    } else {
        w.write_all(&bytes).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

pub fn save_labels(vol: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    save_volume(&Volume::Label(vol.clone()), path)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    load_volume(path)?.into_label()
}
