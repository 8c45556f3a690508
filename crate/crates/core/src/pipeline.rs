//! Case loading, scoring and segmentation shared by the command line and
//! the HTTP service, so both produce identical numbers.

use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::refine::{
    lesion_volume, merge_refinement, region_grow, rle_encode, threshold_segment_3d,
    RegionGrowParams,
};
use crate::scoring::{
    extract_point_prompt, load_external_heatmap, reference_heatmap_volume, relative_intensity,
    score_case, CaseScores, ReferenceScorerParams, TissueReference, VolumeHeatmap,
};
use crate::volume_io::{
    load_labelmap, load_nifti, load_nifti_mask, normalize_minmax, roi_slice_indices, CaseRecord,
    LabelMap, Manifest, Mask3, Plane, Slice2D, Volume,
};

/// Min-max normalizes a volume unless its intensities already lie in [0, 1].
pub fn unit_range(volume: Volume) -> Result<Volume> {
    match volume.intensity_range() {
        Some((lo, hi)) if lo < 0.0 || hi > 1.0 => normalize_minmax(&volume),
        _ => Ok(volume),
    }
}

/// A case's images in memory. Intensities are min-max normalized when
/// they are not already within [0, 1].
#[derive(Debug, Clone)]
pub struct CaseData {
    pub record: CaseRecord,
    pub volume: Volume,
    pub labels: LabelMap,
    pub lesion: Option<Mask3>,
}

impl CaseData {
    pub fn load(record: &CaseRecord) -> Result<Self> {
        let (volume, _) = load_nifti(&record.volume)?;
        let (labels, _) = load_labelmap(&record.labels)?;
        volume.ensure_aligned(&labels, &format!("case {}: volume vs labels", record.id))?;
        let volume = unit_range(volume)?;
        let lesion = match &record.lesion_mask {
            Some(p) => {
                let (m, _) = load_nifti_mask(p)?;
                m.ensure_aligned(&labels, &format!("case {}: lesion mask vs labels", record.id))?;
                Some(m)
            }
            None => None,
        };
        Ok(Self {
            record: record.clone(),
            volume,
            labels,
            lesion,
        })
    }

    pub fn id(&self) -> &str {
        &self.record.id
    }
}

/// Where heatmaps come from: `reference` or `dir:PATH`, the latter holding
/// `{id}.nii.gz` or `{id}.nii` per case.
#[derive(Debug, Clone, PartialEq)]
pub enum HeatmapProvider {
    Reference(ReferenceScorerParams),
    Directory(PathBuf),
}

impl FromStr for HeatmapProvider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "reference" {
            Ok(Self::Reference(ReferenceScorerParams::default()))
        } else if let Some(dir) = s.strip_prefix("dir:") {
            Ok(Self::Directory(PathBuf::from(dir)))
        } else {
            Err(Error::Parameter(format!(
                "heatmap source must be `reference` or `dir:PATH`, got `{s}`"
            )))
        }
    }
}

impl fmt::Display for HeatmapProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Reference(_) => f.write_str("reference"),
            Self::Directory(d) => write!(f, "dir:{}", d.display()),
        }
    }
}

fn external_path(dir: &Path, id: &str) -> Result<PathBuf> {
    for name in [format!("{id}.nii.gz"), format!("{id}.nii")] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::NotFound(format!("no heatmap for case {id} in {}", dir.display())))
}

pub fn case_heatmap(case: &CaseData, provider: &HeatmapProvider) -> Result<VolumeHeatmap> {
    match provider {
        HeatmapProvider::Reference(params) => {
            reference_heatmap_volume(case.id(), &case.volume, &case.labels, params)
        }
        HeatmapProvider::Directory(dir) => {
            let path = external_path(dir, case.id())?;
            Ok(load_external_heatmap(path, case.volume.dims())?.0)
        }
    }
}

/// A loaded case with its heatmap and scores.
#[derive(Debug, Clone)]
pub struct ScoredCase {
    pub data: CaseData,
    pub heat: VolumeHeatmap,
    pub scores: CaseScores,
}

impl ScoredCase {
    pub fn build(record: &CaseRecord, provider: &HeatmapProvider) -> Result<Self> {
        let data = CaseData::load(record)?;
        let heat = case_heatmap(&data, provider)?;
        let scores = score_case(data.id(), &heat, &data.labels)?;
        Ok(Self { data, heat, scores })
    }
}

/// Scores every case of a manifest in parallel, keeping per-case failures.
pub fn score_manifest(
    manifest: &Manifest,
    provider: &HeatmapProvider,
) -> Vec<(String, Result<ScoredCase>)> {
    manifest
        .cases
        .par_iter()
        .map(|rec| (rec.id.clone(), ScoredCase::build(rec, provider)))
        .collect()
}

/// Thresholded 3D segmentation, optionally refined per axial slice: in
/// every axial slice with heat above the threshold, a region grown from the
/// slice's heat maximum replaces the thresholded component under it.
///
/// The region grows over relative intensity (each pixel divided by the
/// median of its tissue class), so the tolerance means the same thing in
/// ventricles, white matter and deep gray matter.
pub fn segment_case(
    case: &CaseData,
    heat: &VolumeHeatmap,
    threshold: f64,
    refine: Option<&RegionGrowParams>,
) -> Result<Mask3> {
    let mut mask = threshold_segment_3d(heat.grid(), threshold)?;
    let Some(params) = refine else {
        return Ok(mask);
    };
    params.validate()?;
    let reference = TissueReference::from_volume(&case.volume, &case.labels, 50.0)?;
    let plane = Plane::Axial;
    let refined: Vec<(usize, crate::volume_io::Mask2)> = (0..mask.num_slices(plane))
        .into_par_iter()
        .map(|index| -> Result<Option<_>> {
            let thresholded = mask.slice(plane, index)?;
            if !thresholded.any() {
                return Ok(None);
            }
            let slice_heat = heat.slice(case.id(), plane, index)?;
            let prompt = extract_point_prompt(&slice_heat)?;
            let mut slice = Slice2D {
                plane,
                index,
                grid: case.volume.slice(plane, index)?,
                source_case: case.id().to_string(),
                label_grid: Some(case.labels.slice(plane, index)?),
                pixel_spacing: plane.pixel_spacing(case.volume.spacing()),
            };
            slice.grid = relative_intensity(&slice, &reference)?;
            let grown = region_grow(&slice, &prompt, params)?;
            let merged =
                merge_refinement(&thresholded, &grown, (prompt.row, prompt.col), params.connectivity)?;
            Ok(Some((index, merged)))
        })
        .filter_map(|r| r.transpose())
        .collect::<Result<_>>()?;
    for (index, m) in &refined {
        mask.set_slice(plane, *index, m)?;
    }
    Ok(mask)
}

/// Per-row `[start, length]` runs for one slice.
pub type RowRuns = Vec<Vec<[usize; 2]>>;

/// Segmentation as returned to clients: the lesion volume and the mask of
/// every region-of-interest slice of each plane in run-length form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentationSummary {
    pub volume_mm3: f64,
    pub slices: BTreeMap<Plane, BTreeMap<usize, RowRuns>>,
}

pub fn summarize_segmentation(mask: &Mask3, labels: &LabelMap) -> Result<SegmentationSummary> {
    let mut slices = BTreeMap::new();
    for plane in Plane::ALL {
        let mut per_plane = BTreeMap::new();
        for index in roi_slice_indices(labels, plane) {
            per_plane.insert(index, rle_encode(&mask.slice(plane, index)?));
        }
        slices.insert(plane, per_plane);
    }
    Ok(SegmentationSummary {
        volume_mm3: lesion_volume(mask),
        slices,
    })
}
