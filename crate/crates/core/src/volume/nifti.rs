//! Single-file NIfTI-1 (`.nii` / `.nii.gz`) reading and writing.
//!
//! Only what the pipeline needs: 3D scalar volumes of uint8, int16, float32
//! or float64, with axis-aligned sform/qform affines. The value kind of a grid
//! is stored in `descrip` as `kind=<name>`; label volumes additionally carry
//! the NIfTI label intent.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Geometry, LabelMask, Orientation, ValueKind, VolumeError, VoxelGrid};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const INTENT_LABEL: i16 = 1002;
const ORIENTATION_TOL: f64 = 1e-3;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const INTENT_CODE: usize = 68;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataType {
    UInt8,
    Int16,
    Float32,
    Float64,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => DataType::UInt8,
            4 => DataType::Int16,
            16 => DataType::Float32,
            64 => DataType::Float64,
            _ => return None,
        })
    }

    fn code(self) -> i16 {
        match self {
            DataType::UInt8 => 2,
            DataType::Int16 => 4,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
        }
    }

    fn size(self) -> usize {
        match self {
            DataType::UInt8 => 1,
            DataType::Int16 => 2,
            DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn io_err(path: &Path, source: std::io::Error) -> VolumeError {
    VolumeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a NIfTI-1 volume, applying `scl_slope`/`scl_inter`.
pub fn load_nifti(path: impl AsRef<Path>) -> Result<VoxelGrid, VolumeError> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| io_err(path, e))?;
    let bytes = if is_gz(path) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| io_err(path, e))?;
        out
    } else {
        raw
    };
    decode(&bytes)
}

/// Reads a NIfTI-1 volume and interprets it as a label mask.
pub fn load_label_mask(path: impl AsRef<Path>) -> Result<LabelMask, VolumeError> {
    LabelMask::new(load_nifti(path)?)
}

/// Decodes an in-memory NIfTI-1 image.
pub fn decode(bytes: &[u8]) -> Result<VoxelGrid, VolumeError> {
    if bytes.len() < HEADER_SIZE {
        return Err(VolumeError::MalformedHeader(format!(
            "file is {} bytes, shorter than the 348-byte header",
            bytes.len()
        )));
    }
    if LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        decode_with::<LittleEndian>(bytes)
    } else if BigEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        decode_with::<BigEndian>(bytes)
    } else {
        Err(VolumeError::MalformedHeader("sizeof_hdr is not 348".into()))
    }
}

fn read_f32s<B: ByteOrder>(bytes: &[u8], offset: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| f64::from(B::read_f32(&bytes[offset + 4 * i..])))
        .collect()
}

fn decode_with<B: ByteOrder>(bytes: &[u8]) -> Result<VoxelGrid, VolumeError> {
    if &bytes[offsets::MAGIC..offsets::MAGIC + 4] != b"n+1\0" {
        return Err(VolumeError::MalformedHeader(format!(
            "bad magic {:?}, expected single-file NIfTI-1",
            &bytes[offsets::MAGIC..offsets::MAGIC + 4]
        )));
    }

    let dim: Vec<i16> = (0..8).map(|i| B::read_i16(&bytes[offsets::DIM + 2 * i..])).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(VolumeError::MalformedHeader(format!("dim[0] = {ndim} out of range")));
    }
    let ndim = ndim as usize;
    let mut dims = [1usize; 3];
    for (a, d) in dims.iter_mut().enumerate().take(ndim.min(3)) {
        let v = dim[a + 1];
        if v < 1 {
            return Err(VolumeError::MalformedHeader(format!("dim[{}] = {v}", a + 1)));
        }
        *d = v as usize;
    }
    if let Some(extra) = (4..=ndim).find(|&a| dim[a] > 1) {
        return Err(VolumeError::UnsupportedDimensionality(format!(
            "axis {extra} has extent {}; only 3D volumes are supported",
            dim[extra]
        )));
    }

    let datatype_code = B::read_i16(&bytes[offsets::DATATYPE..]);
    let datatype = DataType::from_code(datatype_code).ok_or(VolumeError::UnsupportedDatatype(datatype_code))?;

    let pixdim = read_f32s::<B>(bytes, offsets::PIXDIM, 8);
    let vox_offset = B::read_f32(&bytes[offsets::VOX_OFFSET..]);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(VolumeError::MalformedHeader(format!("vox_offset = {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let slope = B::read_f32(&bytes[offsets::SCL_SLOPE..]) as f64;
    let inter = B::read_f32(&bytes[offsets::SCL_INTER..]) as f64;
    let intent = B::read_i16(&bytes[offsets::INTENT_CODE..]);
    let descrip = &bytes[offsets::DESCRIP..offsets::DESCRIP + 80];

    let affine = header_affine::<B>(bytes, &pixdim);
    let geometry = geometry_from_affine(dims, &pixdim, &affine)?;

    let n: usize = dims.iter().product();
    let need = vox_offset + n * datatype.size();
    if bytes.len() < need {
        return Err(VolumeError::MalformedHeader(format!(
            "payload truncated: need {need} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = &bytes[vox_offset..need];
    let mut values: Vec<f64> = match datatype {
        DataType::UInt8 => data.iter().map(|&v| f64::from(v)).collect(),
        DataType::Int16 => data.chunks_exact(2).map(|c| f64::from(B::read_i16(c))).collect(),
        DataType::Float32 => data.chunks_exact(4).map(|c| f64::from(B::read_f32(c))).collect(),
        DataType::Float64 => data.chunks_exact(8).map(B::read_f64).collect(),
    };
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }

    let kind = kind_from_descrip(descrip).unwrap_or(if intent == INTENT_LABEL {
        ValueKind::Label
    } else {
        ValueKind::Hu
    });
    VoxelGrid::new(geometry, kind, values)
}

fn kind_from_descrip(descrip: &[u8]) -> Option<ValueKind> {
    let end = descrip.iter().position(|&b| b == 0).unwrap_or(descrip.len());
    let text = std::str::from_utf8(&descrip[..end]).ok()?;
    text.split_whitespace()
        .find_map(|tok| tok.strip_prefix("kind="))
        .and_then(ValueKind::parse)
}

/// Voxel-to-world affine, sform preferred over qform, pixdim scaling last.
fn header_affine<B: ByteOrder>(bytes: &[u8], pixdim: &[f64]) -> [[f64; 4]; 3] {
    let sform_code = B::read_i16(&bytes[offsets::SFORM_CODE..]);
    let qform_code = B::read_i16(&bytes[offsets::QFORM_CODE..]);
    if sform_code > 0 {
        let s = read_f32s::<B>(bytes, offsets::SROW_X, 12);
        let a = [
            [s[0], s[1], s[2], s[3]],
            [s[4], s[5], s[6], s[7]],
            [s[8], s[9], s[10], s[11]],
        ];
        if det3(&a) != 0.0 && s.iter().all(|v| v.is_finite()) {
            return a;
        }
    }
    let spacing = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    if qform_code > 0 {
        let q = read_f32s::<B>(bytes, offsets::QUATERN_B, 3);
        let off = read_f32s::<B>(bytes, offsets::QOFFSET_X, 3);
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let r = quatern_to_rotation(q[0], q[1], q[2]);
        let mut a = [[0.0; 4]; 3];
        for row in 0..3 {
            for col in 0..3 {
                let f = if col == 2 { qfac } else { 1.0 };
                a[row][col] = r[row][col] * spacing[col] * f;
            }
            a[row][3] = off[row];
        }
        return a;
    }
    [
        [spacing[0], 0.0, 0.0, 0.0],
        [0.0, spacing[1], 0.0, 0.0],
        [0.0, 0.0, spacing[2], 0.0],
    ]
}

fn det3(a: &[[f64; 4]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn quatern_to_rotation(b: f64, c: f64, d: f64) -> [[f64; 3]; 3] {
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        ],
    ]
}

/// Quaternion (b, c, d) and qfac for a signed-permutation direction matrix.
fn rotation_to_quatern(m: &[[f64; 3]; 3]) -> ([f64; 3], f64) {
    let mut r = *m;
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    let qfac = if det < 0.0 { -1.0 } else { 1.0 };
    if qfac < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
    }
    let (r11, r12, r13) = (r[0][0], r[0][1], r[0][2]);
    let (r21, r22, r23) = (r[1][0], r[1][1], r[1][2]);
    let (r31, r32, r33) = (r[2][0], r[2][1], r[2][2]);
    let trace = r11 + r22 + r33 + 1.0;
    let (mut a, mut b, mut c, mut d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r32 - r23) / a;
        c = 0.25 * (r13 - r31) / a;
        d = 0.25 * (r21 - r12) / a;
    } else {
        let xd = 1.0 + r11 - (r22 + r33);
        let yd = 1.0 + r22 - (r11 + r33);
        let zd = 1.0 + r33 - (r11 + r22);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r12 + r21) / b;
            d = 0.25 * (r13 + r31) / b;
            a = 0.25 * (r32 - r23) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r12 + r21) / c;
            d = 0.25 * (r23 + r32) / c;
            a = 0.25 * (r13 - r31) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r13 + r31) / d;
            c = 0.25 * (r23 + r32) / d;
            a = 0.25 * (r21 - r12) / d;
        }
        if a < 0.0 {
            a = -a;
            b = -b;
            c = -c;
            d = -d;
        }
    }
    let _ = a;
    ([b, c, d], qfac)
}

fn geometry_from_affine(dims: [usize; 3], pixdim: &[f64], affine: &[[f64; 4]; 3]) -> Result<Geometry, VolumeError> {
    let mut spacing = [0.0; 3];
    let mut dir = [[0.0; 3]; 3];
    for col in 0..3 {
        let norm = (0..3).map(|r| affine[r][col].powi(2)).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(VolumeError::MalformedHeader(format!("affine column {col} is zero")));
        }
        for r in 0..3 {
            dir[r][col] = affine[r][col] / norm;
        }
        let p = pixdim[col + 1].abs();
        spacing[col] = if p > 0.0 && p.is_finite() { p } else { norm };
    }
    let orientation = Orientation::from_matrix(&dir, ORIENTATION_TOL)?;
    let geometry = Geometry {
        dims,
        spacing,
        origin: [affine[0][3], affine[1][3], affine[2][3]],
        orientation,
    };
    geometry.validate()?;
    Ok(geometry)
}

/// Encodes a grid as little-endian NIfTI-1. Label grids are written as uint8,
/// everything else as float32.
pub fn encode(grid: &VoxelGrid) -> Result<Vec<u8>, VolumeError> {
    let g = grid.geometry();
    if g.dims.iter().any(|&d| d > i16::MAX as usize) {
        return Err(VolumeError::InvalidGeometry(format!(
            "dims {:?} exceed the NIfTI-1 limit",
            g.dims
        )));
    }
    let datatype = if grid.kind() == ValueKind::Label {
        if let Some(v) = grid
            .values()
            .iter()
            .find(|v| !(v.fract() == 0.0 && (0.0..=255.0).contains(*v)))
        {
            return Err(VolumeError::InvalidGeometry(format!(
                "label value {v} does not fit uint8"
            )));
        }
        DataType::UInt8
    } else {
        DataType::Float32
    };

    let n = grid.len();
    let mut buf = vec![0u8; VOX_OFFSET + n * datatype.size()];
    type E = LittleEndian;
    E::write_i32(&mut buf[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
    let dim = [3i16, g.dims[0] as i16, g.dims[1] as i16, g.dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        E::write_i16(&mut buf[offsets::DIM + 2 * i..], *d);
    }
    if datatype == DataType::UInt8 {
        E::write_i16(&mut buf[offsets::INTENT_CODE..], INTENT_LABEL);
    }
    E::write_i16(&mut buf[offsets::DATATYPE..], datatype.code());
    E::write_i16(&mut buf[offsets::BITPIX..], (datatype.size() * 8) as i16);

    let m = g.orientation.matrix();
    let (quat, qfac) = rotation_to_quatern(&m);
    let pixdim = [qfac, g.spacing[0], g.spacing[1], g.spacing[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        E::write_f32(&mut buf[offsets::PIXDIM + 4 * i..], *p as f32);
    }
    E::write_f32(&mut buf[offsets::VOX_OFFSET..], VOX_OFFSET as f32);
    E::write_f32(&mut buf[offsets::SCL_SLOPE..], 1.0);
    E::write_f32(&mut buf[offsets::SCL_INTER..], 0.0);
    // mm + seconds
    buf[offsets::XYZT_UNITS] = 2 | 8;
    let descrip = format!("cardioseg kind={}", grid.kind().as_str());
    buf[offsets::DESCRIP..offsets::DESCRIP + descrip.len()].copy_from_slice(descrip.as_bytes());

    E::write_i16(&mut buf[offsets::QFORM_CODE..], 1);
    E::write_i16(&mut buf[offsets::SFORM_CODE..], 1);
    for (i, q) in quat.iter().enumerate() {
        E::write_f32(&mut buf[offsets::QUATERN_B + 4 * i..], *q as f32);
    }
    for (i, o) in g.origin.iter().enumerate() {
        E::write_f32(&mut buf[offsets::QOFFSET_X + 4 * i..], *o as f32);
    }
    let affine = g.affine();
    for row in 0..3 {
        for col in 0..4 {
            E::write_f32(
                &mut buf[offsets::SROW_X + 16 * row + 4 * col..],
                affine[row][col] as f32,
            );
        }
    }
    buf[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(b"n+1\0");

    let data = &mut buf[VOX_OFFSET..];
    match datatype {
        DataType::UInt8 => {
            for (d, &v) in data.iter_mut().zip(grid.values()) {
                *d = v as u8;
            }
        }
        _ => {
            for (chunk, &v) in data.chunks_exact_mut(4).zip(grid.values()) {
                E::write_f32(chunk, v as f32);
            }
        }
    }
    Ok(buf)
}

/// Writes a grid to `path`; a `.gz` suffix selects gzip compression.
pub fn save_nifti(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let path = path.as_ref();
    let bytes = encode(grid)?;
    let out = if is_gz(path) {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes).map_err(|e| io_err(path, e))?;
        enc.finish().map_err(|e| io_err(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| io_err(path, e))
}
