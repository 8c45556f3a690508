//! Volumetric images, label maps and 2D slices, plus the operations that
//! prepare them for synthesis and scoring.
//!
//! Voxels are stored with x varying fastest: the linear index of `(x, y, z)`
//! is `x + nx * (y + ny * z)`. NIfTI-1 stores its payload in the same order,
//! so no reordering happens at the file boundary.

mod manifest;
mod nifti;

pub use manifest::{CaseRecord, Diagnosis, Manifest, PapileGrade, Split};
pub use nifti::{
    load_labelmap, load_nifti, load_nifti_mask, save_labelmap, save_mask, save_nifti,
    save_nifti_as, DataType, NiftiMeta, Orientation,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default padded cube edge length, in voxels.
pub const PAD_TARGET: usize = 210;

/// Dense 3D grid with physical voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<T> {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<T>,
}

/// Scalar intensity volume.
pub type Volume = Grid3<f32>;
/// Per-voxel tissue labels aligned with a [`Volume`].
pub type LabelMap = Grid3<TissueClass>;
/// Binary 3D mask.
pub type Mask3 = Grid3<bool>;

impl<T: Clone> Grid3<T> {
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: T) -> Result<Self> {
        validate_geometry(dims, spacing)?;
        Ok(Self {
            dims,
            spacing,
            data: vec![value; dims.iter().product()],
        })
    }

    /// Reads the slice with the given normal `plane` at position `index`.
    pub fn slice(&self, plane: Plane, index: usize) -> Result<Grid2<T>> {
        let n = self.num_slices(plane);
        if index >= n {
            return Err(Error::Input(format!(
                "{plane} slice {index} out of range (0..{n})"
            )));
        }
        let (h, w) = plane.slice_shape(self.dims);
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let [x, y, z] = plane.voxel(index, r, c);
                data.push(self.data[self.linear(x, y, z)].clone());
            }
        }
        Ok(Grid2 {
            height: h,
            width: w,
            data,
        })
    }

    /// Writes `grid` into the slice at `index`.
    pub fn set_slice(&mut self, plane: Plane, index: usize, grid: &Grid2<T>) -> Result<()> {
        let n = self.num_slices(plane);
        if index >= n {
            return Err(Error::Input(format!(
                "{plane} slice {index} out of range (0..{n})"
            )));
        }
        let (h, w) = plane.slice_shape(self.dims);
        if grid.height != h || grid.width != w {
            return Err(Error::Alignment(format!(
                "slice grid {}x{} does not match {plane} shape {h}x{w}",
                grid.height, grid.width
            )));
        }
        for r in 0..h {
            for c in 0..w {
                let [x, y, z] = plane.voxel(index, r, c);
                let li = self.linear(x, y, z);
                self.data[li] = grid.data[r * w + c].clone();
            }
        }
        Ok(())
    }
}

impl<T> Grid3<T> {
    pub fn from_vec(dims: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        validate_geometry(dims, spacing)?;
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::Input(format!(
                "voxel count {} does not match dims {dims:?} ({expected})",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn linear(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> &T {
        &self.data[self.linear(x, y, z)]
    }

    pub fn num_slices(&self, plane: Plane) -> usize {
        self.dims[plane.normal_axis()]
    }

    pub fn same_geometry<U>(&self, other: &Grid3<U>) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn ensure_aligned<U>(&self, other: &Grid3<U>, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Alignment(format!(
                "{what}: dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid3<U> {
        Grid3 {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Grid3<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

impl Grid3<f32> {
    /// Minimum and maximum intensity; `None` for an empty grid.
    pub fn intensity_range(&self) -> Option<(f32, f32)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

fn validate_geometry(dims: [usize; 3], spacing: [f64; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Input(format!("empty dims {dims:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Input(format!(
            "spacing must be positive, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Dense row-major 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Binary 2D mask.
pub type Mask2 = Grid2<bool>;

impl<T: Clone> Grid2<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid2<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Input(format!(
                "{} values for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid2<U> {
        Grid2 {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub(crate) fn ensure_same_shape<U>(&self, other: &Grid2<U>, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Alignment(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

impl Grid2<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn and(&self, other: &Mask2) -> Mask2 {
        debug_assert_eq!(self.shape(), other.shape());
        Grid2 {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask2) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Tissue classes produced by the upstream brain segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum TissueClass {
    #[default]
    Background = 0,
    ExternalCsf = 1,
    GrayMatter = 2,
    WhiteMatter = 3,
    Ventricles = 4,
    Cerebellum = 5,
    DeepGrayMatter = 6,
    BrainstemSpinalCord = 7,
    CorpusCallosum = 8,
}

impl TissueClass {
    pub const ALL: [TissueClass; 9] = [
        TissueClass::Background,
        TissueClass::ExternalCsf,
        TissueClass::GrayMatter,
        TissueClass::WhiteMatter,
        TissueClass::Ventricles,
        TissueClass::Cerebellum,
        TissueClass::DeepGrayMatter,
        TissueClass::BrainstemSpinalCord,
        TissueClass::CorpusCallosum,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Member of the brain mask (every class except background).
    pub fn is_brain(self) -> bool {
        self != TissueClass::Background
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Background => "background",
            TissueClass::ExternalCsf => "external_csf",
            TissueClass::GrayMatter => "gray_matter",
            TissueClass::WhiteMatter => "white_matter",
            TissueClass::Ventricles => "ventricles",
            TissueClass::Cerebellum => "cerebellum",
            TissueClass::DeepGrayMatter => "deep_gray_matter",
            TissueClass::BrainstemSpinalCord => "brainstem_spinal_cord",
            TissueClass::CorpusCallosum => "corpus_callosum",
        }
    }
}

/// Slicing plane, named by anatomical orientation.
///
/// | plane    | normal | rows | cols |
/// |----------|--------|------|------|
/// | axial    | z      | y    | x    |
/// | coronal  | y      | z    | x    |
/// | sagittal | x      | z    | y    |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn normal_axis(self) -> usize {
        match self {
            Plane::Axial => 2,
            Plane::Coronal => 1,
            Plane::Sagittal => 0,
        }
    }

    /// (height, width) of a slice through a grid of `dims`.
    pub fn slice_shape(self, dims: [usize; 3]) -> (usize, usize) {
        match self {
            Plane::Axial => (dims[1], dims[0]),
            Plane::Coronal => (dims[2], dims[0]),
            Plane::Sagittal => (dims[2], dims[1]),
        }
    }

    /// Voxel coordinate of pixel `(row, col)` on slice `index`.
    #[inline]
    pub fn voxel(self, index: usize, row: usize, col: usize) -> [usize; 3] {
        match self {
            Plane::Axial => [col, row, index],
            Plane::Coronal => [col, index, row],
            Plane::Sagittal => [index, col, row],
        }
    }

    /// In-plane pixel spacing as (row, col) millimetres.
    pub fn pixel_spacing(self, spacing: [f64; 3]) -> [f64; 2] {
        match self {
            Plane::Axial => [spacing[1], spacing[0]],
            Plane::Coronal => [spacing[2], spacing[0]],
            Plane::Sagittal => [spacing[2], spacing[1]],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            other => Err(Error::Input(format!("unknown plane '{other}'"))),
        }
    }
}

/// One 2D slice cut from a case volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2D {
    pub plane: Plane,
    pub index: usize,
    pub grid: Grid2<f32>,
    pub source_case: String,
    pub label_grid: Option<Grid2<TissueClass>>,
    /// (row, col) pixel spacing in mm.
    pub pixel_spacing: [f64; 2],
}

impl Slice2D {
    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn brain_mask(&self) -> Option<Mask2> {
        self.label_grid.as_ref().map(brain_mask_2d)
    }
}

pub fn brain_mask_2d(labels: &Grid2<TissueClass>) -> Mask2 {
    labels.map(|c| c.is_brain())
}

pub fn brain_mask_3d(labels: &LabelMap) -> Mask3 {
    labels.map(|c| c.is_brain())
}

/// Min–max rescaling to [0, 1]. A constant volume maps to all zeros.
pub fn normalize_minmax(volume: &Volume) -> Result<Volume> {
    let (lo, hi) = volume
        .intensity_range()
        .ok_or_else(|| Error::Input("cannot normalize an empty volume".into()))?;
    if hi <= lo {
        return Ok(volume.map(|_| 0.0));
    }
    let (lo, range) = (lo as f64, hi as f64 - lo as f64);
    Ok(volume.map(|&v| {
        let n = ((v as f64 - lo) / range) as f32;
        n.clamp(0.0, 1.0)
    }))
}

/// Zero-pads every axis to `target`, centring the content with the odd
/// surplus voxel on the high side.
pub fn pad_to_cube<T: Clone + Default>(grid: &Grid3<T>, target: usize) -> Result<Grid3<T>> {
    let dims = grid.dims();
    if dims.iter().any(|&d| d > target) {
        return Err(Error::Oversize { dims, target });
    }
    if dims == [target; 3] {
        return Ok(grid.clone());
    }
    let offset = dims.map(|d| (target - d) / 2);
    let mut out = Grid3::filled([target; 3], grid.spacing(), T::default())?;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            let src = grid.linear(0, y, z);
            let dst = out.linear(offset[0], y + offset[1], z + offset[2]);
            out.data[dst..dst + dims[0]].clone_from_slice(&grid.data[src..src + dims[0]]);
        }
    }
    Ok(out)
}

/// Slices along `plane` containing any ventricle or deep gray matter voxel,
/// in ascending index order.
pub fn extract_roi_slices(
    volume: &Volume,
    labels: &LabelMap,
    plane: Plane,
    case_id: &str,
) -> Result<Vec<Slice2D>> {
    volume.ensure_aligned(labels, "volume vs label map")?;
    roi_slice_indices(labels, plane)
        .into_iter()
        .map(|index| {
            Ok(Slice2D {
                plane,
                index,
                grid: volume.slice(plane, index)?,
                source_case: case_id.to_string(),
                label_grid: Some(labels.slice(plane, index)?),
                pixel_spacing: plane.pixel_spacing(volume.spacing()),
            })
        })
        .collect()
}

/// Indices of slices along `plane` that contain ventricles or deep gray matter.
pub fn roi_slice_indices(labels: &LabelMap, plane: Plane) -> Vec<usize> {
    let axis = plane.normal_axis();
    let mut hit = vec![false; labels.dims()[axis]];
    let [nx, ny, _] = labels.dims();
    for (i, &c) in labels.data().iter().enumerate() {
        if matches!(c, TissueClass::Ventricles | TissueClass::DeepGrayMatter) {
            let coord = match axis {
                0 => i % nx,
                1 => (i / nx) % ny,
                _ => i / (nx * ny),
            };
            hit[coord] = true;
        }
    }
    hit.iter()
        .enumerate()
        .filter_map(|(i, &h)| h.then_some(i))
        .collect()
}

/// Physical volume in mm³ occupied by `class`.
pub fn tissue_volume(labels: &LabelMap, class: TissueClass) -> f64 {
    labels.data().iter().filter(|&&c| c == class).count() as f64 * labels.voxel_volume()
}
