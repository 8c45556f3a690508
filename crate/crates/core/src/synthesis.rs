//! Pseudo-hemorrhage slice synthesis.
//!
//! A lesion is the intersection of a random blob shape with an anatomically
//! motivated candidate region. Pixels under the lesion are darkened by a
//! random attenuation factor and the lesion edge is softened by compositing
//! through a blurred copy of the mask:
//!
//! ```text
//! I' = I * (1 - alpha * (1 - f)),   alpha = clamp(blur(mask), 0, 1)
//! ```
//!
//! Because `alpha` and `1 - f` lie in [0, 1], `I' <= I` everywhere.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imgproc::{
    blur_2d, close_2d, dilate_disk, gaussian_kernel_sigma, gaussian_kernel_sized, open_2d,
    rescale_255,
};
use crate::seed::{derive_seed, rng_from, Rng};
use crate::volume_io::{
    brain_mask_2d, extract_roi_slices, load_labelmap, load_nifti, normalize_minmax, save_mask,
    save_nifti, CaseRecord, Grid2, Grid3, Mask2, Plane, Slice2D, TissueClass,
};

/// Parameters of the synthesis pipeline. Deserializes from JSON with every
/// field optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Probabilities of the four hemorrhage scenarios, in scenario order.
    pub scenario_probs: [f64; 4],
    /// Attenuation factor range `[f_lo, f_hi]`.
    pub attenuation_range: [f64; 2],
    /// Odd Gaussian kernel size for smoothing the shape noise.
    pub noise_blur_kernel: usize,
    /// Range of the shape threshold on the 0–255 noise scale.
    pub shape_threshold_range: [f64; 2],
    /// Range of the stretch factor applied along one random axis.
    pub stretch_range: [f64; 2],
    pub boundary_blur_sigma: f64,
    pub roi_dilation_radius: usize,
    pub max_retries: usize,
    /// Smallest acceptable 3D lesion, in voxels. Volume injection retries
    /// new shapes until one is at least this large.
    pub min_lesion_voxels: usize,
    /// Probability that an exported slice receives a lesion.
    pub lesion_fraction: f64,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            scenario_probs: [0.30, 0.30, 0.30, 0.10],
            attenuation_range: [0.3, 0.5],
            noise_blur_kernel: 15,
            shape_threshold_range: [170.0, 230.0],
            stretch_range: [1.0, 2.0],
            boundary_blur_sigma: 1.5,
            roi_dilation_radius: 3,
            max_retries: 10,
            min_lesion_voxels: 250,
            lesion_fraction: 1.0,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_probs(&self.scenario_probs)?;
        let [f_lo, f_hi] = self.attenuation_range;
        if !(0.0 < f_lo && f_lo <= f_hi && f_hi < 1.0) {
            return Err(Error::Parameter(format!(
                "attenuation range must satisfy 0 < lo <= hi < 1, got {:?}",
                self.attenuation_range
            )));
        }
        if self.noise_blur_kernel < 3 || self.noise_blur_kernel % 2 == 0 {
            return Err(Error::Parameter(format!(
                "noise blur kernel must be odd and >= 3, got {}",
                self.noise_blur_kernel
            )));
        }
        let [t_lo, t_hi] = self.shape_threshold_range;
        if !(t_lo.is_finite() && t_hi.is_finite() && t_lo <= t_hi) {
            return Err(Error::Parameter(format!(
                "shape threshold range {:?}",
                self.shape_threshold_range
            )));
        }
        let [s_lo, s_hi] = self.stretch_range;
        if !(s_lo > 0.0 && s_lo <= s_hi && s_hi.is_finite()) {
            return Err(Error::Parameter(format!(
                "stretch range {:?}",
                self.stretch_range
            )));
        }
        if !(self.boundary_blur_sigma >= 0.0 && self.boundary_blur_sigma.is_finite()) {
            return Err(Error::Parameter("boundary blur sigma must be >= 0".into()));
        }
        if self.max_retries == 0 {
            return Err(Error::Parameter("max_retries must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lesion_fraction) {
            return Err(Error::Parameter(format!(
                "lesion_fraction {} outside [0, 1]",
                self.lesion_fraction
            )));
        }
        Ok(())
    }

    pub fn shape_params(&self) -> ShapeParams {
        ShapeParams {
            noise_blur_kernel: self.noise_blur_kernel,
            stretch_range: self.stretch_range,
        }
    }
}

fn validate_probs(probs: &[f64; 4]) -> Result<()> {
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "scenario probabilities must be non-negative and sum to 1, got {probs:?}"
        )));
    }
    Ok(())
}

/// Where a synthetic hemorrhage may be placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HemorrhageScenario {
    /// Dilated ventricles and deep gray matter.
    DilatedVentDgm = 1,
    /// Dilated region without deep gray matter.
    VentriclesOnly = 2,
    /// Dilated region without ventricles.
    DgmOnly = 3,
    /// White matter of one hemisphere.
    HemisphericWm = 4,
}

impl HemorrhageScenario {
    pub const ALL: [HemorrhageScenario; 4] = [
        HemorrhageScenario::DilatedVentDgm,
        HemorrhageScenario::VentriclesOnly,
        HemorrhageScenario::DgmOnly,
        HemorrhageScenario::HemisphericWm,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get((code as usize).wrapping_sub(1)).copied()
    }
}

impl Serialize for HemorrhageScenario {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.code())
    }
}

impl<'de> Deserialize<'de> for HemorrhageScenario {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let code = u8::deserialize(d)?;
        Self::from_code(code)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid scenario {code}")))
    }
}

/// Shape-generation knobs that are not per-sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    pub noise_blur_kernel: usize,
    pub stretch_range: [f64; 2],
}

impl Default for ShapeParams {
    fn default() -> Self {
        SynthesisConfig::default().shape_params()
    }
}

/// A slice carrying a synthetic lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLesionSample {
    pub image: Slice2D,
    pub lesion_mask: Mask2,
    /// Candidate region the lesion was confined to.
    pub region: Mask2,
    pub scenario: HemorrhageScenario,
    pub attenuation: f64,
    pub threshold: f64,
}

/// Smoothed, rescaled and stretched noise field on the 0–255 scale.
///
/// Consumes `height * width` uniform draws, then one draw for the stretch
/// axis and one for the stretch factor.
pub fn random_shape_field(height: usize, width: usize, shape: &ShapeParams, rng: &mut Rng) -> Grid2<f64> {
    let noise: Vec<f64> = (0..height * width)
        .map(|_| rng.random::<f64>() * 255.0)
        .collect();
    let noise = Grid2::from_vec(height, width, noise).expect("sized");
    let mut field = blur_2d(&noise, &gaussian_kernel_sized(shape.noise_blur_kernel));
    rescale_255(field.data_mut());

    let along_rows = rng.random::<bool>();
    let [s_lo, s_hi] = shape.stretch_range;
    let factor = if s_hi > s_lo {
        rng.random_range(s_lo..=s_hi)
    } else {
        s_lo
    };
    stretch_2d(&field, along_rows, factor)
}

/// Anisotropic rescale about the grid centre along one axis, with linear
/// interpolation and edge clamping.
fn stretch_2d(field: &Grid2<f64>, along_rows: bool, factor: f64) -> Grid2<f64> {
    if factor == 1.0 {
        return field.clone();
    }
    let (h, w) = field.shape();
    let n = if along_rows { h } else { w };
    let centre = (n as f64 - 1.0) / 2.0;
    // Source taps depend only on the position along the stretched axis.
    let taps: Vec<(usize, usize, f64)> = (0..n)
        .map(|dst| {
            let src = (centre + (dst as f64 - centre) / factor).clamp(0.0, n as f64 - 1.0);
            let i0 = src.floor() as usize;
            (i0, (i0 + 1).min(n - 1), src - i0 as f64)
        })
        .collect();
    let src = field.data();
    let mut out = field.clone();
    for (r, row) in out.data_mut().chunks_exact_mut(w).enumerate() {
        if along_rows {
            let (i0, i1, frac) = taps[r];
            let (a, b) = (&src[i0 * w..][..w], &src[i1 * w..][..w]);
            for ((o, &a), &b) in row.iter_mut().zip(a).zip(b) {
                *o = a + (b - a) * frac;
            }
        } else {
            let line = &src[r * w..][..w];
            for (o, &(i0, i1, frac)) in row.iter_mut().zip(&taps) {
                let (a, b) = (line[i0], line[i1]);
                *o = a + (b - a) * frac;
            }
        }
    }
    out
}

/// Thresholds a shape field (`S > t`), cleans it with opening then closing
/// and confines it to the brain.
pub fn shape_from_field(field: &Grid2<f64>, threshold: f64, brain_mask: &Mask2) -> Mask2 {
    let binary = field.map(|&v| v > threshold);
    close_2d(&open_2d(&binary)).and(brain_mask)
}

/// Random blob mask confined to `brain_mask`. May be empty.
pub fn generate_random_shape(
    brain_mask: &Mask2,
    threshold: f64,
    shape: &ShapeParams,
    rng: &mut Rng,
) -> Mask2 {
    let (h, w) = brain_mask.shape();
    let field = random_shape_field(h, w, shape, rng);
    shape_from_field(&field, threshold, brain_mask)
}

/// Inverse-CDF draw over the four scenarios.
pub fn sample_scenario(probs: &[f64; 4], rng: &mut Rng) -> Result<HemorrhageScenario> {
    validate_probs(probs)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (p, s) in probs.iter().zip(HemorrhageScenario::ALL) {
        acc += p;
        if u < acc {
            return Ok(s);
        }
    }
    // u landed in the rounding gap above the last cumulative sum
    Ok(HemorrhageScenario::ALL
        .into_iter()
        .zip(probs)
        .rev()
        .find(|(_, &p)| p > 0.0)
        .map(|(s, _)| s)
        .expect("some probability is positive"))
}

/// Candidate hemorrhage region for `scenario` on a 2D label grid.
///
/// Scenario 4 splits the slice at the brain-mask centroid column: the left
/// hemisphere is the columns strictly left of it. One boolean is drawn from
/// `rng` for scenario 4 only.
pub fn select_hemorrhage_region(
    labels: &Grid2<TissueClass>,
    scenario: HemorrhageScenario,
    radius: usize,
    rng: &mut Rng,
) -> Mask2 {
    let brain = brain_mask_2d(labels);
    match scenario {
        HemorrhageScenario::HemisphericWm => {
            let left = rng.random::<bool>();
            let centre = centroid_col(&brain);
            let mut out = labels.map(|&c| c == TissueClass::WhiteMatter);
            let w = out.width();
            if let Some(centre) = centre {
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    let col = (i % w) as f64;
                    *v &= if left { col < centre } else { col >= centre };
                }
            } else {
                out.data_mut().fill(false);
            }
            out
        }
        _ => {
            let roi = labels.map(|&c| {
                matches!(c, TissueClass::Ventricles | TissueClass::DeepGrayMatter)
            });
            let dilated = dilate_disk(&roi, radius).and(&brain);
            let excluded = match scenario {
                HemorrhageScenario::VentriclesOnly => Some(TissueClass::DeepGrayMatter),
                HemorrhageScenario::DgmOnly => Some(TissueClass::Ventricles),
                _ => None,
            };
            match excluded {
                None => dilated,
                Some(ex) => {
                    let mut out = dilated;
                    for (v, &c) in out.data_mut().iter_mut().zip(labels.data()) {
                        *v &= c != ex;
                    }
                    out
                }
            }
        }
    }
}

fn centroid_col(mask: &Mask2) -> Option<f64> {
    let w = mask.width();
    let (sum, n) = mask
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .fold((0.0, 0usize), |(s, n), (i, _)| (s + (i % w) as f64, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Soft compositing weight: the blurred mask clamped to [0, 1], with values
/// within 1e-9 of 1 snapped to exactly 1.
pub fn soft_alpha(mask: &Mask2, sigma: f64) -> Grid2<f64> {
    let m = mask.map(|&b| if b { 1.0 } else { 0.0 });
    let mut a = if sigma > 0.0 {
        blur_2d(&m, &gaussian_kernel_sigma(sigma))
    } else {
        m
    };
    for v in a.data_mut() {
        *v = snap_alpha(*v);
    }
    a
}

#[inline]
pub(crate) fn snap_alpha(v: f64) -> f64 {
    if v > 1.0 - 1e-9 {
        1.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
pub(crate) fn attenuate(intensity: f32, alpha: f64, f: f64) -> f32 {
    (intensity as f64 * (1.0 - alpha * (1.0 - f))) as f32
}

/// Injects one pseudo-hemorrhage into a slice.
///
/// Draw order from `rng`: scenario, region (scenario 4 only), then per
/// attempt a threshold and a shape, then the attenuation factor.
pub fn synthesize_pseudo_lesion(
    slice: &Slice2D,
    config: &SynthesisConfig,
    rng: &mut Rng,
) -> Result<PseudoLesionSample> {
    let labels = slice
        .label_grid
        .as_ref()
        .ok_or_else(|| Error::Input("slice has no label grid".into()))?;
    slice.grid.ensure_same_shape(labels, "slice vs label grid")?;
    let brain = brain_mask_2d(labels);
    let scenario = sample_scenario(&config.scenario_probs, rng)?;
    let region = select_hemorrhage_region(labels, scenario, config.roi_dilation_radius, rng);
    let shape = config.shape_params();
    let [t_lo, t_hi] = config.shape_threshold_range;

    let mut found = None;
    for _ in 0..config.max_retries {
        let t = if t_hi > t_lo {
            rng.random_range(t_lo..=t_hi)
        } else {
            t_lo
        };
        let mask = generate_random_shape(&brain, t, &shape, rng).and(&region);
        if mask.any() {
            found = Some((mask, t));
            break;
        }
    }
    let (lesion_mask, threshold) = found.ok_or_else(|| Error::SynthesisFailed {
        retries: config.max_retries,
        reason: format!(
            "no lesion in scenario {} region of {} {}",
            scenario.code(),
            slice.plane,
            slice.index
        ),
    })?;

    let [f_lo, f_hi] = config.attenuation_range;
    let f = if f_hi > f_lo {
        rng.random_range(f_lo..=f_hi)
    } else {
        f_lo
    };
    let alpha = soft_alpha(&lesion_mask, config.boundary_blur_sigma);
    let mut image = slice.clone();
    for (v, &a) in image.grid.data_mut().iter_mut().zip(alpha.data()) {
        *v = attenuate(*v, a, f);
    }
    Ok(PseudoLesionSample {
        image,
        lesion_mask,
        region,
        scenario,
        attenuation: f,
        threshold,
    })
}

/// One line of the training-set manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub image: String,
    pub mask: String,
    pub scenario: Option<HemorrhageScenario>,
    pub f: Option<f64>,
    pub t: Option<f64>,
    pub case: String,
    pub plane: Plane,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub manifest: PathBuf,
    pub samples: usize,
    pub lesioned: usize,
    pub failures: usize,
    /// Lesioned-sample count per scenario, in scenario order.
    pub scenario_histogram: [usize; 4],
}

pub const TRAINING_MANIFEST: &str = "samples.jsonl";

/// Per-slice generator, independent of iteration order.
pub fn slice_rng(seed: u64, case: &str, plane: Plane, index: usize) -> Rng {
    rng_from(derive_seed(
        seed,
        &[
            case.as_bytes(),
            plane.as_str().as_bytes(),
            &(index as u64).to_le_bytes(),
        ],
    ))
}

enum SliceOutcome {
    Sample(TrainingRecord, Grid2<f32>, Mask2),
    Failed,
}

/// Synthesizes a training set from normal cases.
///
/// Every region-of-interest slice of every case along all three planes is
/// visited; with probability `lesion_fraction` it receives a lesion. Each
/// emitted slice becomes a float32 image and a uint8 mask, and one JSON
/// line in `samples.jsonl`. Slices whose synthesis fails are skipped and
/// counted.
pub fn export_training_set(
    cases: &[CaseRecord],
    config: &SynthesisConfig,
    out_dir: &Path,
) -> Result<ExportSummary> {
    config.validate()?;
    if let Some(c) = cases.iter().find(|c| c.diagnosis.is_positive() || c.lesion_mask.is_some()) {
        return Err(Error::Input(format!(
            "case {} is not normal; synthesis requires normal cases",
            c.id
        )));
    }
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let mut summary = ExportSummary {
        manifest: out_dir.join(TRAINING_MANIFEST),
        samples: 0,
        lesioned: 0,
        failures: 0,
        scenario_histogram: [0; 4],
    };
    let mut lines = String::new();

    for case in cases {
        let (volume, _) = load_nifti(&case.volume)?;
        let (labels, _) = load_labelmap(&case.labels)?;
        let volume = match volume.intensity_range() {
            Some((lo, hi)) if lo >= 0.0 && hi <= 1.0 => volume,
            _ => normalize_minmax(&volume)?,
        };
        let mut slices = Vec::new();
        for plane in Plane::ALL {
            slices.extend(extract_roi_slices(&volume, &labels, plane, &case.id)?);
        }
        let outcomes: Vec<SliceOutcome> = slices
            .par_iter()
            .map(|slice| synthesize_for_export(slice, config))
            .collect();

        for (slice, outcome) in slices.iter().zip(outcomes) {
            match outcome {
                SliceOutcome::Failed => summary.failures += 1,
                SliceOutcome::Sample(record, image, mask) => {
                    write_slice_pair(out_dir, &record, slice, &image, &mask)?;
                    if let Some(s) = record.scenario {
                        summary.scenario_histogram[s.code() as usize - 1] += 1;
                        summary.lesioned += 1;
                    }
                    summary.samples += 1;
                    lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
                    lines.push('\n');
                }
            }
        }
    }

    let mut f = fs::File::create(&summary.manifest).map_err(|e| Error::io(&summary.manifest, e))?;
    f.write_all(lines.as_bytes())
        .map_err(|e| Error::io(&summary.manifest, e))?;
    Ok(summary)
}

fn synthesize_for_export(slice: &Slice2D, config: &SynthesisConfig) -> SliceOutcome {
    let mut rng = slice_rng(config.seed, &slice.source_case, slice.plane, slice.index);
    let stem = format!("{}_{}_{:03}", slice.source_case, slice.plane, slice.index);
    let mut record = TrainingRecord {
        image: format!("images/{stem}.nii"),
        mask: format!("masks/{stem}.nii"),
        scenario: None,
        f: None,
        t: None,
        case: slice.source_case.clone(),
        plane: slice.plane,
        index: slice.index,
    };
    let u: f64 = rng.random();
    if u >= config.lesion_fraction {
        let empty = Grid2::filled(slice.height(), slice.width(), false);
        return SliceOutcome::Sample(record, slice.grid.clone(), empty);
    }
    match synthesize_pseudo_lesion(slice, config, &mut rng) {
        Ok(sample) => {
            record.scenario = Some(sample.scenario);
            record.f = Some(sample.attenuation);
            record.t = Some(sample.threshold);
            SliceOutcome::Sample(record, sample.image.grid, sample.lesion_mask)
        }
        Err(_) => SliceOutcome::Failed,
    }
}

/// Slices are written as `[width, height, 1]` images so that columns map
/// to x and rows to y.
fn write_slice_pair(
    out_dir: &Path,
    record: &TrainingRecord,
    slice: &Slice2D,
    image: &Grid2<f32>,
    mask: &Mask2,
) -> Result<()> {
    let [row_sp, col_sp] = slice.pixel_spacing;
    let spacing = [col_sp, row_sp, 1.0];
    let dims = [slice.width(), slice.height(), 1];
    let img = Grid3::from_vec(dims, spacing, image.data().to_vec())?;
    save_nifti(&img, out_dir.join(&record.image))?;
    let m = Grid3::from_vec(dims, spacing, mask.data().to_vec())?;
    save_mask(&m, out_dir.join(&record.mask))
}
