//! Binary segmentation from heatmaps, prompt-seeded refinement and mask
//! measurements.
//!
//! Refinement is a seeded region grow. It stands in for a promptable
//! foundation segmentation model: the heatmap maximum of a slice seeds a
//! flood fill over similarly dark, connected pixels.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::scoring::{candidate_roi, PointPrompt};
use crate::volume_io::{Grid2, Grid3, Mask2, Mask3, Slice2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        // row-major order, which fixes the BFS visiting order
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionGrowParams {
    /// Tolerance above the seed intensity.
    pub delta: f32,
    /// Widen the tolerance to half the gap between the seed and the top of
    /// the intensity range, `max(delta, (1 - I(seed)) / 2)`. On a
    /// normalized image this puts the boundary at half contrast.
    pub half_contrast: bool,
    pub connectivity: Connectivity,
    pub max_pixels: usize,
    /// Restrict growth to the periventricular candidate region.
    pub confine_to_roi: bool,
    /// Disk radius of the candidate region (only used when confining).
    pub roi_dilation_radius: usize,
}

impl Default for RegionGrowParams {
    fn default() -> Self {
        Self {
            delta: 0.05,
            half_contrast: false,
            connectivity: Connectivity::Eight,
            max_pixels: 5000,
            confine_to_roi: true,
            roi_dilation_radius: 3,
        }
    }
}

impl RegionGrowParams {
    /// Settings used for pipeline refinement, which grows over the
    /// tissue-relative image: half-contrast tolerance on top of the
    /// defaults.
    pub fn refinement() -> Self {
        Self {
            half_contrast: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) {
            return Err(Error::Parameter(format!("delta {} < 0", self.delta)));
        }
        if self.max_pixels == 0 {
            return Err(Error::Parameter("max_pixels must be > 0".into()));
        }
        Ok(())
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(())
}

/// `heat > threshold`, pixelwise.
pub fn threshold_segment(heat: &Grid2<f32>, threshold: f64) -> Result<Mask2> {
    check_threshold(threshold)?;
    Ok(heat.map(|&h| h as f64 > threshold))
}

pub fn threshold_segment_3d(heat: &Grid3<f32>, threshold: f64) -> Result<Mask3> {
    check_threshold(threshold)?;
    Ok(heat.map(|&h| h as f64 > threshold))
}

/// Breadth-first fill from `seed` over pixels accepted by `inside`.
/// Stops once `cap` pixels are taken.
fn flood(
    shape: (usize, usize),
    seed: (usize, usize),
    connectivity: Connectivity,
    cap: usize,
    mut inside: impl FnMut(usize) -> bool,
) -> Mask2 {
    let (h, w) = shape;
    let mut mask = Grid2::filled(h, w, false);
    let mut queue = VecDeque::from([seed]);
    mask.set(seed.0, seed.1, true);
    let mut taken = 1;
    while let Some((r, c)) = queue.pop_front() {
        for &(dr, dc) in connectivity.offsets() {
            if taken >= cap {
                return mask;
            }
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if *mask.get(nr, nc) || !inside(nr * w + nc) {
                continue;
            }
            mask.set(nr, nc, true);
            taken += 1;
            queue.push_back((nr, nc));
        }
    }
    mask
}

/// Seeded region grow over `intensity <= I(seed) + delta`. The seed is
/// always part of the result.
pub fn region_grow(slice: &Slice2D, prompt: &PointPrompt, params: &RegionGrowParams) -> Result<Mask2> {
    params.validate()?;
    let (h, w) = slice.grid.shape();
    if prompt.row >= h || prompt.col >= w {
        return Err(Error::Input(format!(
            "prompt ({}, {}) outside {h}x{w} slice",
            prompt.row, prompt.col
        )));
    }
    let roi = if params.confine_to_roi {
        let labels = slice
            .label_grid
            .as_ref()
            .ok_or_else(|| Error::Input("confining to the ROI needs a label grid".into()))?;
        Some(candidate_roi(labels, params.roi_dilation_radius))
    } else {
        None
    };
    let data = slice.grid.data();
    let seed = *slice.grid.get(prompt.row, prompt.col);
    let delta = if params.half_contrast {
        params.delta.max((1.0 - seed) / 2.0)
    } else {
        params.delta
    };
    let limit = seed + delta;
    Ok(flood(
        (h, w),
        (prompt.row, prompt.col),
        params.connectivity,
        params.max_pixels,
        |i| data[i] <= limit && roi.as_ref().is_none_or(|m| m.data()[i]),
    ))
}

/// Connected component of `mask` containing `seed`; empty if the seed is off.
pub fn component_at(mask: &Mask2, seed: (usize, usize), connectivity: Connectivity) -> Mask2 {
    if !*mask.get(seed.0, seed.1) {
        return Grid2::filled(mask.height(), mask.width(), false);
    }
    let data = mask.data();
    flood(mask.shape(), seed, connectivity, usize::MAX, |i| data[i])
}

/// Replaces the component of `thresholded` under the seed with `grown`.
pub fn merge_refinement(
    thresholded: &Mask2,
    grown: &Mask2,
    seed: (usize, usize),
    connectivity: Connectivity,
) -> Result<Mask2> {
    thresholded.ensure_same_shape(grown, "thresholded vs grown mask")?;
    let replaced = component_at(thresholded, seed, connectivity);
    let data = thresholded
        .data()
        .iter()
        .zip(replaced.data())
        .zip(grown.data())
        .map(|((&t, &r), &g)| (t && !r) || g)
        .collect();
    Grid2::from_vec(thresholded.height(), thresholded.width(), data)
}

/// Dice similarity; two empty masks count as a perfect match.
pub fn dsc(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Alignment(format!(
            "mask sizes {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

pub fn dsc_2d(a: &Mask2, b: &Mask2) -> Result<f64> {
    a.ensure_same_shape(b, "dice")?;
    dsc(a.data(), b.data())
}

pub fn dsc_3d(a: &Mask3, b: &Mask3) -> Result<f64> {
    a.ensure_aligned(b, "dice")?;
    dsc(a.data(), b.data())
}

/// Mean slice Dice over the slices along `plane` where the reference is
/// nonempty. `None` if the reference has no lesion at all.
pub fn mean_slice_dsc(
    pred: &Mask3,
    truth: &Mask3,
    plane: crate::volume_io::Plane,
) -> Result<Option<f64>> {
    pred.ensure_aligned(truth, "dice")?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for index in 0..truth.num_slices(plane) {
        let t = truth.slice(plane, index)?;
        if !t.any() {
            continue;
        }
        sum += dsc_2d(&pred.slice(plane, index)?, &t)?;
        n += 1;
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Voxel count times voxel volume, in mm³.
pub fn lesion_volume(mask: &Mask3) -> f64 {
    mask.count() as f64 * mask.voxel_volume()
}

/// Runs of `true` per row as `[start, length]` pairs.
pub fn rle_encode(mask: &Mask2) -> Vec<Vec<[usize; 2]>> {
    mask.data()
        .chunks(mask.width())
        .map(|row| {
            let mut runs = Vec::new();
            let mut c = 0;
            while c < row.len() {
                if row[c] {
                    let start = c;
                    while c < row.len() && row[c] {
                        c += 1;
                    }
                    runs.push([start, c - start]);
                } else {
                    c += 1;
                }
            }
            runs
        })
        .collect()
}

pub fn rle_decode(rows: &[Vec<[usize; 2]>], width: usize) -> Result<Mask2> {
    let mut mask = Grid2::filled(rows.len(), width, false);
    for (r, runs) in rows.iter().enumerate() {
        for &[start, len] in runs {
            if start + len > width {
                return Err(Error::Input(format!(
                    "run [{start}, {len}] exceeds row width {width}"
                )));
            }
            for c in start..start + len {
                mask.set(r, c, true);
            }
        }
    }
    Ok(mask)
}
