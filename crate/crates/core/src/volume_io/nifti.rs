//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Only the subset the pipeline exchanges is supported: 2D or 3D images
//! stored as uint8, int16 or float32. Gzip is detected from the payload,
//! not the file name, on read; on write it is selected by a `.gz` suffix.

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Grid3, LabelMap, Mask3, TissueClass, Volume};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
const XYZT_UNITS_MM: u8 = 2;

/// On-disk voxel type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int16,
    Float32,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(DataType::Uint8),
            4 => Some(DataType::Int16),
            16 => Some(DataType::Float32),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::Uint8 => 1,
            DataType::Int16 => 2,
            DataType::Float32 => 4,
        }
    }
}

/// qform/sform orientation fields, carried through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

/// Header fields of a loaded file that are not part of the voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiMeta {
    pub datatype: DataType,
    /// Value of `dim[0]`.
    pub ndim: u8,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub big_endian: bool,
    pub gzipped: bool,
    pub orientation: Orientation,
    pub descrip: String,
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    endian: Endian,
}

impl HeaderReader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.bytes[at..at + N]);
        b
    }

    fn i16(&self, at: usize) -> i16 {
        match self.endian {
            Endian::Little => i16::from_le_bytes(self.arr(at)),
            Endian::Big => i16::from_be_bytes(self.arr(at)),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        match self.endian {
            Endian::Little => f32::from_le_bytes(self.arr(at)),
            Endian::Big => f32::from_be_bytes(self.arr(at)),
        }
    }
}

struct HeaderWriter {
    bytes: Vec<u8>,
    endian: Endian,
}

impl HeaderWriter {
    fn put(&mut self, at: usize, le: &[u8], be: &[u8]) {
        let src = match self.endian {
            Endian::Little => le,
            Endian::Big => be,
        };
        self.bytes[at..at + src.len()].copy_from_slice(src);
    }

    fn i16(&mut self, at: usize, v: i16) {
        self.put(at, &v.to_le_bytes(), &v.to_be_bytes());
    }

    fn i32(&mut self, at: usize, v: i32) {
        self.put(at, &v.to_le_bytes(), &v.to_be_bytes());
    }

    fn f32(&mut self, at: usize, v: f32) {
        self.put(at, &v.to_le_bytes(), &v.to_be_bytes());
    }
}

struct Decoded {
    dims: [usize; 3],
    spacing: [f64; 3],
    values: Vec<f32>,
    meta: NiftiMeta,
}

fn read_file_bytes(path: &Path) -> Result<(Vec<u8>, bool)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1F && raw[1] == 0x8B {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok((out, true))
    } else {
        Ok((raw, false))
    }
}

fn decode(bytes: &[u8], gzipped: bool) -> Result<Decoded> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file holds {} bytes, shorter than the {HEADER_SIZE}-byte header",
            bytes.len()
        )));
    }
    let sizeof = [bytes[0], bytes[1], bytes[2], bytes[3]];
    let endian = if i32::from_le_bytes(sizeof) == HEADER_SIZE as i32 {
        Endian::Little
    } else if i32::from_be_bytes(sizeof) == HEADER_SIZE as i32 {
        Endian::Big
    } else {
        return Err(Error::Format(format!(
            "sizeof_hdr is {}, expected {HEADER_SIZE}",
            i32::from_le_bytes(sizeof)
        )));
    };
    if &bytes[344..348] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected single-file n+1",
            &bytes[344..348]
        )));
    }
    let h = HeaderReader { bytes, endian };

    let ndim = h.i16(40);
    if !(2..=3).contains(&ndim) {
        return Err(Error::Unsupported(format!("dim[0] = {ndim}, expected 2 or 3")));
    }
    let mut dims = [1usize; 3];
    for (axis, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = h.i16(42 + 2 * axis as usize);
        if v <= 0 {
            return Err(Error::Format(format!("dim[{}] = {v}", axis + 1)));
        }
        *d = v as usize;
    }
    let code = h.i16(70);
    let datatype = DataType::from_code(code)
        .ok_or_else(|| Error::Unsupported(format!("datatype code {code}")))?;

    let mut spacing = [1.0f64; 3];
    for (axis, s) in spacing.iter_mut().enumerate() {
        let v = h.f32(80 + 4 * axis).abs();
        if v > 0.0 && v.is_finite() {
            *s = widen(v);
        }
    }

    let vox_offset = h.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let count: usize = dims.iter().product();
    let needed = count * datatype.bytes();
    let available = bytes.len().saturating_sub(offset);
    if available < needed {
        return Err(Error::Truncated {
            expected: needed,
            found: available,
        });
    }
    let payload = &bytes[offset..offset + needed];

    let scl_slope = h.f32(112);
    let scl_inter = h.f32(116);
    let scale = (scl_slope != 0.0 && scl_slope.is_finite())
        .then(|| (scl_slope as f64, scl_inter as f64));

    let mut values: Vec<f32> = match datatype {
        DataType::Uint8 => payload.iter().map(|&b| b as f32).collect(),
        DataType::Int16 => payload
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                let v = match endian {
                    Endian::Little => i16::from_le_bytes(b),
                    Endian::Big => i16::from_be_bytes(b),
                };
                v as f32
            })
            .collect(),
        DataType::Float32 => payload
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                match endian {
                    Endian::Little => f32::from_le_bytes(b),
                    Endian::Big => f32::from_be_bytes(b),
                }
            })
            .collect(),
    };
    if let Some((slope, inter)) = scale {
        if slope != 1.0 || inter != 0.0 {
            for v in &mut values {
                *v = (*v as f64 * slope + inter) as f32;
            }
        }
    }

    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = h.f32(280 + 16 * r + 4 * c);
        }
    }
    let orientation = Orientation {
        qform_code: h.i16(252),
        sform_code: h.i16(254),
        quatern: [h.f32(256), h.f32(260), h.f32(264)],
        qoffset: [h.f32(268), h.f32(272), h.f32(276)],
        srow,
    };
    let descrip = String::from_utf8_lossy(&bytes[148..228])
        .trim_end_matches('\0')
        .to_string();

    Ok(Decoded {
        dims,
        spacing,
        values,
        meta: NiftiMeta {
            datatype,
            ndim: ndim as u8,
            scl_slope,
            scl_inter,
            big_endian: matches!(endian, Endian::Big),
            gzipped,
            orientation,
            descrip,
        },
    })
}

/// Loads an intensity image. Scaling from `scl_slope`/`scl_inter` is applied.
pub fn load_nifti(path: impl AsRef<Path>) -> Result<(Volume, NiftiMeta)> {
    let (bytes, gz) = read_file_bytes(path.as_ref())?;
    let d = decode(&bytes, gz)?;
    Ok((Grid3::from_vec(d.dims, d.spacing, d.values)?, d.meta))
}

/// Loads a tissue label map; every voxel must hold an integral code 0–8.
pub fn load_labelmap(path: impl AsRef<Path>) -> Result<(LabelMap, NiftiMeta)> {
    let (bytes, gz) = read_file_bytes(path.as_ref())?;
    let d = decode(&bytes, gz)?;
    let labels = d
        .values
        .iter()
        .map(|&v| {
            let code = (v >= 0.0 && v <= 255.0 && v.fract() == 0.0)
                .then_some(v as u8)
                .and_then(TissueClass::from_code);
            code.ok_or_else(|| Error::Input(format!("invalid tissue label {v}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Grid3::from_vec(d.dims, d.spacing, labels)?, d.meta))
}

/// Loads a binary mask; any nonzero voxel is foreground.
pub fn load_nifti_mask(path: impl AsRef<Path>) -> Result<(Mask3, NiftiMeta)> {
    let (bytes, gz) = read_file_bytes(path.as_ref())?;
    let d = decode(&bytes, gz)?;
    let mask = d.values.iter().map(|&v| v != 0.0).collect();
    Ok((Grid3::from_vec(d.dims, d.spacing, mask)?, d.meta))
}

/// f32 to f64 through its shortest decimal form, so a header value
/// written from 0.8 reads back as 0.8 rather than 0.800000011920929.
fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

pub(crate) fn encode(
    dims: [usize; 3],
    spacing: [f64; 3],
    values: &[f32],
    datatype: DataType,
    orientation: Option<&Orientation>,
    big_endian: bool,
) -> Result<Vec<u8>> {
    if dims.iter().any(|&d| d == 0 || d > i16::MAX as usize) {
        return Err(Error::Input(format!("cannot encode dims {dims:?}")));
    }
    let endian = if big_endian { Endian::Big } else { Endian::Little };
    let mut w = HeaderWriter {
        bytes: vec![0u8; VOX_OFFSET + values.len() * datatype.bytes()],
        endian,
    };
    w.i32(0, HEADER_SIZE as i32);
    w.bytes[38] = b'r';
    let ndim: i16 = if dims[2] == 1 { 2 } else { 3 };
    w.i16(40, ndim);
    for (axis, &d) in dims.iter().enumerate() {
        w.i16(42 + 2 * axis, d as i16);
    }
    for axis in 3..7 {
        w.i16(42 + 2 * axis, 1);
    }
    w.i16(70, datatype.code());
    w.i16(72, (datatype.bytes() * 8) as i16);
    w.f32(76, 1.0);
    for (axis, &s) in spacing.iter().enumerate() {
        w.f32(80 + 4 * axis, s as f32);
    }
    w.f32(108, VOX_OFFSET as f32);
    w.f32(112, 1.0);
    w.f32(116, 0.0);
    w.bytes[123] = XYZT_UNITS_MM;
    let descrip = b"hemosynth";
    w.bytes[148..148 + descrip.len()].copy_from_slice(descrip);
    if let Some(o) = orientation {
        w.i16(252, o.qform_code);
        w.i16(254, o.sform_code);
        for i in 0..3 {
            w.f32(256 + 4 * i, o.quatern[i]);
            w.f32(268 + 4 * i, o.qoffset[i]);
        }
        for (r, row) in o.srow.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                w.f32(280 + 16 * r + 4 * c, v);
            }
        }
    }
    w.bytes[344..348].copy_from_slice(MAGIC);

    let payload = &mut w.bytes[VOX_OFFSET..];
    match datatype {
        DataType::Uint8 => {
            for (dst, &v) in payload.iter_mut().zip(values) {
                *dst = exact_int(v, 0.0, 255.0)? as u8;
            }
        }
        DataType::Int16 => {
            for (dst, &v) in payload.chunks_exact_mut(2).zip(values) {
                let i = exact_int(v, i16::MIN as f32, i16::MAX as f32)? as i16;
                dst.copy_from_slice(&if big_endian {
                    i.to_be_bytes()
                } else {
                    i.to_le_bytes()
                });
            }
        }
        DataType::Float32 => {
            for (dst, &v) in payload.chunks_exact_mut(4).zip(values) {
                dst.copy_from_slice(&if big_endian {
                    v.to_be_bytes()
                } else {
                    v.to_le_bytes()
                });
            }
        }
    }
    Ok(w.bytes)
}

fn exact_int(v: f32, lo: f32, hi: f32) -> Result<f32> {
    if v.fract() == 0.0 && v >= lo && v <= hi {
        Ok(v)
    } else {
        Err(Error::Input(format!(
            "value {v} is not representable in the target integer type"
        )))
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    if gz {
        let mut enc = GzEncoder::new(out, Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        out = enc.finish().map_err(|e| Error::io(path, e))?;
    } else {
        out.write_all(bytes).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes a float32 image.
pub fn save_nifti(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    save_nifti_as(volume, path, DataType::Float32, None)
}

/// Writes `volume` with an explicit on-disk type. Integer types require
/// every value to be exactly representable.
pub fn save_nifti_as(
    volume: &Volume,
    path: impl AsRef<Path>,
    datatype: DataType,
    orientation: Option<&Orientation>,
) -> Result<()> {
    let bytes = encode(
        volume.dims(),
        volume.spacing(),
        volume.data(),
        datatype,
        orientation,
        false,
    )?;
    write_bytes(path.as_ref(), &bytes)
}

/// Writes a label map as uint8.
pub fn save_labelmap(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let values: Vec<f32> = labels.data().iter().map(|c| c.code() as f32).collect();
    let bytes = encode(
        labels.dims(),
        labels.spacing(),
        &values,
        DataType::Uint8,
        None,
        false,
    )?;
    write_bytes(path.as_ref(), &bytes)
}

/// Writes a binary mask as uint8 0/1.
pub fn save_mask(mask: &Mask3, path: impl AsRef<Path>) -> Result<()> {
    let values: Vec<f32> = mask.data().iter().map(|&b| b as u8 as f32).collect();
    let bytes = encode(
        mask.dims(),
        mask.spacing(),
        &values,
        DataType::Uint8,
        None,
        false,
    )?;
    write_bytes(path.as_ref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn ramp(dims: [usize; 3]) -> Volume {
        let n = dims.iter().product::<usize>();
        Grid3::from_vec(dims, [0.8, 0.9, 1.1], (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn scale_is_applied() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.nii");
        let v = Grid3::from_vec([1, 1, 1], [1.0; 3], vec![3.0f32]).unwrap();
        let mut bytes = encode(v.dims(), v.spacing(), v.data(), DataType::Int16, None, false)
            .unwrap();
        bytes[112..116].copy_from_slice(&2.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&1.0f32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let (loaded, meta) = load_nifti(&path).unwrap();
        assert_eq!(loaded.data(), &[7.0]);
        assert_eq!(meta.datatype, DataType::Int16);
    }

    #[test]
    fn zero_slope_means_raw() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("z.nii");
        let v = Grid3::from_vec([2, 1, 1], [1.0; 3], vec![3.0f32, -4.0]).unwrap();
        let mut bytes = encode(v.dims(), v.spacing(), v.data(), DataType::Int16, None, false)
            .unwrap();
        bytes[112..116].copy_from_slice(&0.0f32.to_le_bytes());
        bytes[116..120].copy_from_slice(&5.0f32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert_eq!(load_nifti(&path).unwrap().0.data(), &[3.0, -4.0]);
    }

    #[test]
    fn big_endian_files_load() {
        let dir = tempdir().unwrap();
        let v = ramp([3, 4, 2]);
        for dt in [DataType::Uint8, DataType::Int16, DataType::Float32] {
            let path = dir.path().join("be.nii");
            let bytes = encode(v.dims(), v.spacing(), v.data(), dt, None, true).unwrap();
            fs::write(&path, &bytes).unwrap();
            let (loaded, meta) = load_nifti(&path).unwrap();
            assert!(meta.big_endian);
            assert_eq!(loaded, v);
        }
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempdir().unwrap();
        let v = ramp([5, 3, 2]);
        save_nifti(&v, dir.path().join("a.nii")).unwrap();
        save_nifti(&v, dir.path().join("a.nii.gz")).unwrap();
        let raw = fs::read(dir.path().join("a.nii.gz")).unwrap();
        assert_eq!(&raw[..2], &[0x1F, 0x8B]);
        let (a, ma) = load_nifti(dir.path().join("a.nii")).unwrap();
        let (b, mb) = load_nifti(dir.path().join("a.nii.gz")).unwrap();
        assert_eq!(a, b);
        assert!(!ma.gzipped && mb.gzipped);
    }

    #[test]
    fn header_errors() {
        let dir = tempdir().unwrap();
        let v = ramp([2, 2, 2]);
        let good = encode(v.dims(), v.spacing(), v.data(), DataType::Float32, None, false)
            .unwrap();
        let path = dir.path().join("bad.nii");

        let mut b = good.clone();
        b[0..4].copy_from_slice(&349i32.to_le_bytes());
        fs::write(&path, &b).unwrap();
        assert!(matches!(load_nifti(&path), Err(Error::Format(_))));

        let mut b = good.clone();
        b[344..348].copy_from_slice(b"ni1\0");
        fs::write(&path, &b).unwrap();
        assert!(matches!(load_nifti(&path), Err(Error::Format(_))));

        let mut b = good.clone();
        b[70..72].copy_from_slice(&64i16.to_le_bytes());
        fs::write(&path, &b).unwrap();
        assert!(matches!(load_nifti(&path), Err(Error::Unsupported(_))));

        fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(
            load_nifti(&path),
            Err(Error::Truncated {
                expected: 32,
                found: 29
            })
        ));

        fs::write(&path, &good[..100]).unwrap();
        assert!(matches!(load_nifti(&path), Err(Error::Format(_))));
    }

    #[test]
    fn two_dimensional_images() {
        let dir = tempdir().unwrap();
        let v = ramp([4, 3, 1]);
        let path = dir.path().join("slice.nii");
        save_nifti(&v, &path).unwrap();
        let (loaded, meta) = load_nifti(&path).unwrap();
        assert_eq!(meta.ndim, 2);
        assert_eq!(loaded.dims(), [4, 3, 1]);
        assert_eq!(loaded.data(), v.data());
    }

    #[test]
    fn orientation_survives() {
        let dir = tempdir().unwrap();
        let v = ramp([2, 2, 2]);
        let o = Orientation {
            qform_code: 1,
            sform_code: 2,
            quatern: [0.1, 0.2, 0.3],
            qoffset: [-10.0, 5.5, 3.25],
            srow: [[0.8, 0.0, 0.0, -1.0], [0.0, 0.8, 0.0, 2.0], [0.0, 0.0, 0.8, 3.0]],
        };
        let path = dir.path().join("o.nii");
        save_nifti_as(&v, &path, DataType::Float32, Some(&o)).unwrap();
        let (_, meta) = load_nifti(&path).unwrap();
        assert_eq!(meta.orientation, o);
        save_nifti_as(&v, &path, DataType::Float32, Some(&meta.orientation)).unwrap();
        assert_eq!(load_nifti(&path).unwrap().1.orientation, o);
    }

    #[test]
    fn integer_types_reject_fractions() {
        let dir = tempdir().unwrap();
        let v = Grid3::from_vec([1, 1, 1], [1.0; 3], vec![0.5f32]).unwrap();
        assert!(save_nifti_as(&v, dir.path().join("f.nii"), DataType::Uint8, None).is_err());
        let v = Grid3::from_vec([1, 1, 1], [1.0; 3], vec![300.0f32]).unwrap();
        assert!(save_nifti_as(&v, dir.path().join("f.nii"), DataType::Uint8, None).is_err());
    }

    #[test]
    fn labelmap_roundtrip_and_validation() {
        let dir = tempdir().unwrap();
        let labels = Grid3::from_vec(
            [9, 1, 1],
            [0.8; 3],
            TissueClass::ALL.to_vec(),
        )
        .unwrap();
        let path = dir.path().join("l.nii.gz");
        save_labelmap(&labels, &path).unwrap();
        let (back, meta) = load_labelmap(&path).unwrap();
        assert_eq!(back, labels);
        assert_eq!(meta.datatype, DataType::Uint8);

        let bad = Grid3::from_vec([1, 1, 1], [1.0; 3], vec![9.0f32]).unwrap();
        save_nifti_as(&bad, &path, DataType::Uint8, None).unwrap();
        assert!(load_labelmap(&path).is_err());
    }

    #[test]
    fn write_failure_is_reported() {
        let v = ramp([2, 2, 2]);
        let err = save_nifti(&v, "/nonexistent-dir/x.nii").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
