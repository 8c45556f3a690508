//! Hemorrhage heatmaps and the anomaly scores derived from them.
//!
//! Heatmaps come either from an external model (NIfTI float volumes) or
//! from the built-in reference scorer. The reference scorer is a simple
//! stand-in, not a learned model: inside the periventricular candidate
//! region it ramps heat up as a pixel gets darker relative to the typical
//! intensity of its own tissue class,
//!
//! ```text
//! r = I / level(class)
//! h = clamp((ratio_hi - r) / (ratio_hi - ratio_lo), 0, 1)
//! ```
//!
//! where `level(class)` is a percentile of that class's intensities over
//! the whole case. Normal tissue sits near `r = 1` and stays cold;
//! attenuated blood products sit near the attenuation factor and saturate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgproc::dilate_disk;
use crate::volume_io::{
    brain_mask_2d, load_nifti, roi_slice_indices, Diagnosis, Grid2, Grid3, LabelMap, Mask2,
    Plane, Slice2D, TissueClass, Volume,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapSource {
    Reference,
    External(String),
}

/// Heat values over one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceHeatmap {
    pub case: String,
    pub plane: Plane,
    pub index: usize,
    pub grid: Grid2<f32>,
    pub source: HeatmapSource,
}

/// Heat values over a whole case volume.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeatmap {
    grid: Grid3<f32>,
    source: HeatmapSource,
}

impl VolumeHeatmap {
    pub fn new(grid: Grid3<f32>, source: HeatmapSource) -> Result<Self> {
        if let Some(v) = grid.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("heat value {v} outside [0, 1]")));
        }
        Ok(Self { grid, source })
    }

    pub fn grid(&self) -> &Grid3<f32> {
        &self.grid
    }

    pub fn source(&self) -> &HeatmapSource {
        &self.source
    }

    pub fn slice(&self, case: &str, plane: Plane, index: usize) -> Result<SliceHeatmap> {
        Ok(SliceHeatmap {
            case: case.to_string(),
            plane,
            index,
            grid: self.grid.slice(plane, index)?,
            source: self.source.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceScorerParams {
    /// Percentile of a class's intensities taken as its reference level.
    pub reference_percentile: f64,
    /// Relative intensity at which heat starts to rise.
    pub ratio_hi: f64,
    /// Relative intensity at and below which heat is 1.
    pub ratio_lo: f64,
    /// Disk radius used to grow ventricles and deep gray matter into the ROI.
    pub roi_dilation_radius: usize,
}

impl Default for ReferenceScorerParams {
    fn default() -> Self {
        Self {
            reference_percentile: 50.0,
            ratio_hi: 0.75,
            ratio_lo: 0.5,
            roi_dilation_radius: 3,
        }
    }
}

impl ReferenceScorerParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.reference_percentile) {
            return Err(Error::Parameter(format!(
                "reference percentile {} outside [0, 100]",
                self.reference_percentile
            )));
        }
        if !(self.ratio_lo >= 0.0 && self.ratio_lo < self.ratio_hi && self.ratio_hi.is_finite()) {
            return Err(Error::Parameter(format!(
                "need 0 <= ratio_lo < ratio_hi, got {} / {}",
                self.ratio_lo, self.ratio_hi
            )));
        }
        Ok(())
    }
}

/// Per-class reference intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueReference {
    levels: [f32; 9],
}

impl TissueReference {
    pub fn from_volume(volume: &Volume, labels: &LabelMap, percentile: f64) -> Result<Self> {
        volume.ensure_aligned(labels, "volume vs label map")?;
        Ok(Self::from_pairs(volume.data(), labels.data(), percentile))
    }

    pub fn from_slice(slice: &Slice2D, percentile: f64) -> Result<Self> {
        let labels = slice
            .label_grid
            .as_ref()
            .ok_or_else(|| Error::Input("slice has no label grid".into()))?;
        Ok(Self::from_pairs(slice.grid.data(), labels.data(), percentile))
    }

    fn from_pairs(values: &[f32], labels: &[TissueClass], percentile: f64) -> Self {
        let mut per_class: [Vec<f32>; 9] = Default::default();
        for (&v, &c) in values.iter().zip(labels) {
            if c.is_brain() {
                per_class[c.code() as usize].push(v);
            }
        }
        let mut levels = [0f32; 9];
        for (level, mut vals) in levels.iter_mut().zip(per_class) {
            if !vals.is_empty() {
                vals.sort_by(f32::total_cmp);
                *level = percentile_sorted(&vals, percentile) as f32;
            }
        }
        Self { levels }
    }

    pub fn level(&self, class: TissueClass) -> f32 {
        self.levels[class.code() as usize]
    }
}

/// Percentile with linear interpolation between order statistics
/// (`q` in [0, 100], `sorted` ascending and nonempty).
pub fn percentile_sorted(sorted: &[f32], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let frac = pos - i as f64;
    sorted[i] as f64 + (sorted[j] as f64 - sorted[i] as f64) * frac
}

/// Candidate region: ventricles and deep gray matter grown by a disk of
/// `radius`, clipped to the brain, united with all white matter.
pub fn candidate_roi(labels: &Grid2<TissueClass>, radius: usize) -> Mask2 {
    let core = labels.map(|&c| matches!(c, TissueClass::Ventricles | TissueClass::DeepGrayMatter));
    let mut roi = dilate_disk(&core, radius).and(&brain_mask_2d(labels));
    for (v, &c) in roi.data_mut().iter_mut().zip(labels.data()) {
        *v |= c == TissueClass::WhiteMatter;
    }
    roi
}

/// Intensity divided by the reference level of each pixel's own tissue,
/// clamped to [0, 1]. Pixels of classes without a level map to 1.
pub fn relative_intensity(slice: &Slice2D, reference: &TissueReference) -> Result<Grid2<f32>> {
    let labels = slice
        .label_grid
        .as_ref()
        .ok_or_else(|| Error::Input("relative intensity needs a label grid".into()))?;
    slice.grid.ensure_same_shape(labels, "slice vs label grid")?;
    let data = slice
        .grid
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&v, &c)| {
            let level = reference.level(c);
            if level > 0.0 {
                (v / level).clamp(0.0, 1.0)
            } else {
                1.0
            }
        })
        .collect();
    Grid2::from_vec(slice.height(), slice.width(), data)
}

/// Reference-scorer heat for one slice.
pub fn reference_heatmap(
    slice: &Slice2D,
    reference: &TissueReference,
    params: &ReferenceScorerParams,
) -> Result<SliceHeatmap> {
    params.validate()?;
    let labels = slice
        .label_grid
        .as_ref()
        .ok_or_else(|| Error::Input("reference scorer needs a label grid".into()))?;
    slice.grid.ensure_same_shape(labels, "slice vs label grid")?;
    let roi = candidate_roi(labels, params.roi_dilation_radius);
    let span = params.ratio_hi - params.ratio_lo;
    let data = slice
        .grid
        .data()
        .iter()
        .zip(labels.data())
        .zip(roi.data())
        .map(|((&v, &c), &inside)| {
            let level = reference.level(c);
            if !inside || level <= 0.0 {
                return 0.0;
            }
            let r = v as f64 / level as f64;
            ((params.ratio_hi - r) / span).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(SliceHeatmap {
        case: slice.source_case.clone(),
        plane: slice.plane,
        index: slice.index,
        grid: Grid2::from_vec(slice.height(), slice.width(), data)?,
        source: HeatmapSource::Reference,
    })
}

/// Reference heat for a whole case, evaluated on every axial slice that
/// contains ventricles or deep gray matter; all other voxels are 0.
pub fn reference_heatmap_volume(
    case: &str,
    volume: &Volume,
    labels: &LabelMap,
    params: &ReferenceScorerParams,
) -> Result<VolumeHeatmap> {
    params.validate()?;
    volume.ensure_aligned(labels, "volume vs label map")?;
    let reference = TissueReference::from_volume(volume, labels, params.reference_percentile)?;
    let plane = Plane::Axial;
    let indices = roi_slice_indices(labels, plane);
    let slices: Vec<(usize, Grid2<f32>)> = indices
        .par_iter()
        .map(|&index| {
            let slice = Slice2D {
                plane,
                index,
                grid: volume.slice(plane, index)?,
                source_case: case.to_string(),
                label_grid: Some(labels.slice(plane, index)?),
                pixel_spacing: plane.pixel_spacing(volume.spacing()),
            };
            Ok((index, reference_heatmap(&slice, &reference, params)?.grid))
        })
        .collect::<Result<_>>()?;
    let mut grid = Grid3::filled(volume.dims(), volume.spacing(), 0f32)?;
    for (index, heat) in &slices {
        grid.set_slice(plane, *index, heat)?;
    }
    VolumeHeatmap::new(grid, HeatmapSource::Reference)
}

/// Loads a model heatmap for a case volume of `expected_dims`. Values
/// outside [0, 1] (and NaN) are clamped; the count of clamped voxels is
/// returned and logged.
pub fn load_external_heatmap(
    path: impl AsRef<Path>,
    expected_dims: [usize; 3],
) -> Result<(VolumeHeatmap, usize)> {
    let path = path.as_ref();
    let (grid, _) = load_nifti(path)?;
    if grid.dims() != expected_dims {
        return Err(Error::Alignment(format!(
            "heatmap {} has dims {:?}, case volume has {:?}",
            path.display(),
            grid.dims(),
            expected_dims
        )));
    }
    let mut clamped = 0usize;
    let grid = grid.map(|&v| {
        if (0.0..=1.0).contains(&v) {
            v
        } else {
            clamped += 1;
            if v > 1.0 {
                1.0
            } else {
                0.0
            }
        }
    });
    if clamped > 0 {
        log::warn!(
            "{}: clamped {clamped} heat values into [0, 1]",
            path.display()
        );
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.trim_end_matches(".gz").trim_end_matches(".nii").to_string())
        .unwrap_or_default();
    Ok((VolumeHeatmap::new(grid, HeatmapSource::External(name))?, clamped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreLevel {
    Case,
    Slice,
}

/// Maximum heat over a case or a slice. Serializes as one record of the
/// scores file: `{case, level, plane, index, score}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub case: String,
    pub level: ScoreLevel,
    pub plane: Option<Plane>,
    pub index: Option<usize>,
    #[serde(rename = "score")]
    pub value: f64,
}

fn max_heat(grid: &Grid2<f32>) -> Result<f32> {
    if grid.is_empty() {
        return Err(Error::Input("empty heatmap".into()));
    }
    Ok(grid.data().iter().copied().fold(f32::NEG_INFINITY, f32::max))
}

pub fn slice_anomaly_score(heatmap: &SliceHeatmap) -> Result<AnomalyScore> {
    Ok(AnomalyScore {
        case: heatmap.case.clone(),
        level: ScoreLevel::Slice,
        plane: Some(heatmap.plane),
        index: Some(heatmap.index),
        value: max_heat(&heatmap.grid)? as f64,
    })
}

/// Maximum over all given slice heatmaps of one case.
pub fn case_anomaly_score(case: &str, heatmaps: &[SliceHeatmap]) -> Result<AnomalyScore> {
    if heatmaps.is_empty() {
        return Err(Error::Input(format!("case {case} has no slice heatmaps")));
    }
    let mut best = f32::NEG_INFINITY;
    for h in heatmaps {
        best = best.max(max_heat(&h.grid)?);
    }
    Ok(AnomalyScore {
        case: case.to_string(),
        level: ScoreLevel::Case,
        plane: None,
        index: None,
        value: best as f64,
    })
}

/// Positive iff the score strictly exceeds the threshold.
pub fn classify(score: &AnomalyScore, threshold: f64) -> Diagnosis {
    if score.value > threshold {
        Diagnosis::GmhIvh
    } else {
        Diagnosis::NotGmhIvh
    }
}

/// Location of a slice's maximum heat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub case: String,
    pub plane: Plane,
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub heat: f32,
}

/// Arg-max pixel; ties resolve to the smallest row-major index.
pub fn extract_point_prompt(heatmap: &SliceHeatmap) -> Result<PointPrompt> {
    let grid = &heatmap.grid;
    if grid.is_empty() {
        return Err(Error::Input("empty heatmap".into()));
    }
    let (mut best_i, mut best) = (0usize, grid.data()[0]);
    for (i, &v) in grid.data().iter().enumerate().skip(1) {
        if v > best {
            best = v;
            best_i = i;
        }
    }
    Ok(PointPrompt {
        case: heatmap.case.clone(),
        plane: heatmap.plane,
        index: heatmap.index,
        row: best_i / grid.width(),
        col: best_i % grid.width(),
        heat: best,
    })
}

/// Case score plus the slice scores it was reduced from.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseScores {
    pub case: AnomalyScore,
    pub slices: Vec<AnomalyScore>,
}

/// Scores every region-of-interest slice of all three planes and reduces
/// them to the case score.
pub fn score_case(case: &str, heat: &VolumeHeatmap, labels: &LabelMap) -> Result<CaseScores> {
    heat.grid().ensure_aligned(labels, "heatmap vs label map")?;
    let mut heatmaps = Vec::new();
    for plane in Plane::ALL {
        for index in roi_slice_indices(labels, plane) {
            heatmaps.push(heat.slice(case, plane, index)?);
        }
    }
    let slices = heatmaps
        .iter()
        .map(slice_anomaly_score)
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseScores {
        case: case_anomaly_score(case, &heatmaps)?,
        slices,
    })
}
