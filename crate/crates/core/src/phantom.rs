//! Synthetic fetal-brain phantoms built from nested ellipsoids, and 3D
//! lesion injection for ground-truth validation cases.
//!
//! Tissue contrast follows T2 weighting: fluid is bright, gray matter and
//! deep nuclei darker than white matter, blood products darker still.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imgproc::{
    blur_3d, close_3d, dilate_ball, gaussian_kernel_sigma, gaussian_kernel_sized,
    largest_component_3d, open_3d, rescale_255,
};
use crate::seed::{rng_from, Rng};
use crate::synthesis::{attenuate, sample_scenario, snap_alpha, HemorrhageScenario, SynthesisConfig};
use crate::volume_io::{brain_mask_3d, roi_slice_indices, Grid3, LabelMap, Mask3, Plane, TissueClass, Volume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    /// Centre in voxel coordinates.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub semi_axes: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.level(p) <= 1.0
    }

    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|i| {
                let d = (p[i] - self.center[i]) / self.semi_axes[i];
                d * d
            })
            .sum()
    }

    /// Analytic volume in voxels.
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.semi_axes.iter().product::<f64>()
    }

    /// Whether `self` lies strictly inside `outer`, checked on a dense
    /// sampling of `self`'s surface.
    pub fn strictly_inside(&self, outer: &Ellipsoid) -> bool {
        const N_THETA: usize = 48;
        const N_PHI: usize = 96;
        (0..=N_THETA).all(|i| {
            let theta = std::f64::consts::PI * i as f64 / N_THETA as f64;
            (0..N_PHI).all(|j| {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / N_PHI as f64;
                let dir = [theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()];
                let p = [0, 1, 2].map(|k| self.center[k] + self.semi_axes[k] * dir[k]);
                outer.level(p) < 1.0
            })
        })
    }

    fn mirrored_x(&self, mid_x: f64) -> Ellipsoid {
        let mut e = *self;
        e.center[0] = 2.0 * mid_x - e.center[0];
        e
    }
}

/// Base intensity per tissue before noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueIntensities {
    pub external_csf: f32,
    pub gray_matter: f32,
    pub white_matter: f32,
    pub ventricles: f32,
    pub deep_gray_matter: f32,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        Self {
            external_csf: 0.90,
            gray_matter: 0.50,
            white_matter: 0.65,
            ventricles: 0.90,
            deep_gray_matter: 0.45,
        }
    }
}

impl TissueIntensities {
    pub fn of(&self, class: TissueClass) -> f32 {
        match class {
            TissueClass::ExternalCsf => self.external_csf,
            TissueClass::GrayMatter => self.gray_matter,
            TissueClass::WhiteMatter => self.white_matter,
            TissueClass::Ventricles => self.ventricles,
            TissueClass::DeepGrayMatter => self.deep_gray_matter,
            _ => 0.0,
        }
    }

    fn all(&self) -> [f32; 5] {
        [
            self.external_csf,
            self.gray_matter,
            self.white_matter,
            self.ventricles,
            self.deep_gray_matter,
        ]
    }
}

/// Phantom geometry and appearance.
///
/// Layers from the outside in: brain (outer surface of the external CSF),
/// cortex (outer surface of gray matter), white matter, and inside the
/// white matter a mirrored pair of lateral ventricles and deep gray nuclei.
/// The right-hand structures are the left ones reflected about the
/// mid-sagittal plane `x = (nx - 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub brain: Ellipsoid,
    pub cortex: Ellipsoid,
    pub white_matter: Ellipsoid,
    /// Left lateral ventricle.
    pub ventricle: Ellipsoid,
    /// Left deep gray nucleus.
    pub deep_gray: Ellipsoid,
    pub intensities: TissueIntensities,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self::for_dims([128; 3])
    }
}

impl PhantomParams {
    /// Default anatomy scaled to `dims` (proportions tuned at 128³).
    pub fn for_dims(dims: [usize; 3]) -> Self {
        let c = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let s = dims.map(|d| d as f64 / 128.0);
        let ell = |off: [f64; 3], axes: [f64; 3]| Ellipsoid {
            center: [0, 1, 2].map(|i| c[i] + off[i] * s[i]),
            semi_axes: [0, 1, 2].map(|i| axes[i] * s[i]),
        };
        Self {
            dims,
            spacing: [0.8; 3],
            brain: ell([0.0; 3], [50.0, 58.0, 46.0]),
            cortex: ell([0.0; 3], [46.0, 54.0, 42.0]),
            white_matter: ell([0.0; 3], [40.0, 48.0, 36.0]),
            ventricle: ell([-8.0, -4.0, 2.0], [4.5, 16.0, 7.0]),
            deep_gray: ell([-18.0, 2.0, -6.0], [6.0, 9.0, 7.0]),
            intensities: TissueIntensities::default(),
            noise_sd: 0.02,
            seed: 0,
        }
    }

    /// Default anatomy with per-case variation drawn from `seed`: overall
    /// head size within ±5%, ventricle and deep gray size within ±15%,
    /// tissue intensities within ±0.03. The same seed also drives the noise.
    pub fn varied(dims: [usize; 3], seed: u64) -> Self {
        let mut p = Self::for_dims(dims);
        let mut rng = rng_from(crate::seed::derive_seed(seed, &[b"anatomy"]));
        // On small grids the one-voxel margin may not leave room for +5%.
        let room = (0..3)
            .map(|i| (p.brain.center[i].min(dims[i] as f64 - 1.0 - p.brain.center[i]) - 1.0) / p.brain.semi_axes[i])
            .fold(f64::INFINITY, f64::min);
        let head = rng.random_range(0.95..=1.05f64).min(room.max(0.0));
        for e in [&mut p.brain, &mut p.cortex, &mut p.white_matter] {
            e.semi_axes = e.semi_axes.map(|a| a * head);
        }
        for e in [&mut p.ventricle, &mut p.deep_gray] {
            let k = rng.random_range(0.85..=1.15);
            e.semi_axes = e.semi_axes.map(|a| a * k);
        }
        let i = &mut p.intensities;
        for v in [
            &mut i.external_csf,
            &mut i.gray_matter,
            &mut i.white_matter,
            &mut i.ventricles,
            &mut i.deep_gray_matter,
        ] {
            *v += rng.random_range(-0.03f32..=0.03);
        }
        p.seed = seed;
        p
    }

    fn mid_x(&self) -> f64 {
        (self.dims[0] as f64 - 1.0) / 2.0
    }

    pub fn ventricles(&self) -> [Ellipsoid; 2] {
        [self.ventricle, self.ventricle.mirrored_x(self.mid_x())]
    }

    pub fn deep_grays(&self) -> [Ellipsoid; 2] {
        [self.deep_gray, self.deep_gray.mirrored_x(self.mid_x())]
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Parameter(format!(
                "dims {:?} / spacing {:?}",
                self.dims, self.spacing
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Parameter(format!("noise_sd {}", self.noise_sd)));
        }
        if self.intensities.all().iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::Parameter("tissue intensities must lie in (0, 1)".into()));
        }
        let grid_box = Ellipsoid {
            center: self.brain.center,
            semi_axes: [0, 1, 2].map(|i| self.brain.semi_axes[i] + 1.0),
        };
        let hi = self.dims.map(|d| d as f64 - 1.0);
        if (0..3).any(|i| grid_box.center[i] - grid_box.semi_axes[i] < 0.0 || grid_box.center[i] + grid_box.semi_axes[i] > hi[i]) {
            return Err(Error::Parameter("brain does not fit in the grid".into()));
        }
        let nested = [
            (self.cortex, self.brain, "cortex within brain"),
            (self.white_matter, self.cortex, "white matter within cortex"),
        ];
        for (inner, outer, what) in nested {
            if !inner.strictly_inside(&outer) {
                return Err(Error::Parameter(format!("containment violated: {what}")));
            }
        }
        for e in self.ventricles().iter().chain(self.deep_grays().iter()) {
            if !e.strictly_inside(&self.white_matter) {
                return Err(Error::Parameter(
                    "ventricles and deep gray matter must lie inside white matter".into(),
                ));
            }
        }
        Ok(())
    }

    fn classify(&self, p: [f64; 3]) -> TissueClass {
        if !self.brain.contains(p) {
            TissueClass::Background
        } else if !self.cortex.contains(p) {
            TissueClass::ExternalCsf
        } else if !self.white_matter.contains(p) {
            TissueClass::GrayMatter
        } else if self.ventricles().iter().any(|e| e.contains(p)) {
            TissueClass::Ventricles
        } else if self.deep_grays().iter().any(|e| e.contains(p)) {
            TissueClass::DeepGrayMatter
        } else {
            TissueClass::WhiteMatter
        }
    }
}

/// Builds the phantom image and its label map. Pure in `params`.
pub fn generate_phantom(params: &PhantomParams) -> Result<(Volume, LabelMap)> {
    params.validate()?;
    let [nx, ny, nz] = params.dims;
    let mut labels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                labels.push(params.classify([x as f64, y as f64, z as f64]));
            }
        }
    }
    let mut rng = rng_from(params.seed);
    let noise = Normal::new(0.0, params.noise_sd).expect("validated sd");
    let values = labels
        .iter()
        .map(|&c| {
            if !c.is_brain() {
                return 0.0;
            }
            let base = params.intensities.of(c);
            if params.noise_sd == 0.0 {
                base
            } else {
                (base as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32
            }
        })
        .collect();
    Ok((
        Grid3::from_vec(params.dims, params.spacing, values)?,
        Grid3::from_vec(params.dims, params.spacing, labels)?,
    ))
}

/// Synthesis settings used for phantom validation lesions: the defaults,
/// with a larger shape budget so that the minimum lesion size is met.
pub fn lesion_config() -> SynthesisConfig {
    SynthesisConfig {
        max_retries: 30,
        ..SynthesisConfig::default()
    }
}

/// Parameters actually used for an injected 3D lesion.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionInfo {
    pub scenario: HemorrhageScenario,
    pub attenuation: f64,
    pub threshold: f64,
    pub voxels: usize,
}

/// 3D candidate region for `scenario`, the volumetric counterpart of
/// [`crate::synthesis::select_hemorrhage_region`]; the hemisphere split is
/// at the brain-mask centroid along x. Hemispheric white matter is limited
/// to the axial slab holding ventricles or deep gray matter, i.e. the
/// periventricular white matter that region-of-interest slices cover.
pub fn select_hemorrhage_region_3d(
    labels: &LabelMap,
    scenario: HemorrhageScenario,
    radius: usize,
    rng: &mut Rng,
) -> Mask3 {
    let brain = brain_mask_3d(labels);
    match scenario {
        HemorrhageScenario::HemisphericWm => {
            let left = rng.random::<bool>();
            let nx = labels.dims()[0];
            let (sum, n) = brain
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .fold((0.0, 0usize), |(s, n), (i, _)| (s + (i % nx) as f64, n + 1));
            let mut out = labels.map(|&c| c == TissueClass::WhiteMatter);
            if n == 0 {
                out.data_mut().fill(false);
                return out;
            }
            let centre = sum / n as f64;
            let slab = roi_slice_indices(labels, Plane::Axial);
            let (z_lo, z_hi) = match (slab.first(), slab.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => (1, 0),
            };
            let plane_len = nx * labels.dims()[1];
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                let x = (i % nx) as f64;
                let z = i / plane_len;
                *v &= (if left { x < centre } else { x >= centre }) && (z_lo..=z_hi).contains(&z);
            }
            out
        }
        _ => {
            let roi = labels.map(|&c| matches!(c, TissueClass::Ventricles | TissueClass::DeepGrayMatter));
            let mut out = dilate_ball(&roi, radius);
            let excluded = match scenario {
                HemorrhageScenario::VentriclesOnly => Some(TissueClass::DeepGrayMatter),
                HemorrhageScenario::DgmOnly => Some(TissueClass::Ventricles),
                _ => None,
            };
            for ((v, &c), &b) in out.data_mut().iter_mut().zip(labels.data()).zip(brain.data()) {
                *v &= b && Some(c) != excluded;
            }
            out
        }
    }
}

fn bounding_box(mask: &Mask3, pad: usize) -> Option<([usize; 3], [usize; 3])> {
    let [nx, ny, _] = mask.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &b)| b) {
        any = true;
        let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    any.then(|| {
        let dims = mask.dims();
        (
            lo.map(|v| v.saturating_sub(pad)),
            [0, 1, 2].map(|k| (hi[k] + pad).min(dims[k] - 1)),
        )
    })
}

/// Random 3D blob field over a box, smoothed, rescaled and stretched.
fn shape_field_3d(box_dims: [usize; 3], config: &SynthesisConfig, rng: &mut Rng) -> Grid3<f64> {
    let n: usize = box_dims.iter().product();
    let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 255.0).collect();
    let noise = Grid3::from_vec(box_dims, [1.0; 3], noise).expect("sized");
    let mut field = blur_3d(&noise, &gaussian_kernel_sized(config.noise_blur_kernel));
    rescale_255(field.data_mut());

    let axis = rng.random_range(0..3usize);
    let [s_lo, s_hi] = config.stretch_range;
    let factor = if s_hi > s_lo {
        rng.random_range(s_lo..=s_hi)
    } else {
        s_lo
    };
    if factor == 1.0 {
        return field;
    }
    let len = box_dims[axis];
    let centre = (len as f64 - 1.0) / 2.0;
    let mut out = field.clone();
    let [bx, by, _] = box_dims;
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let mut p = [i % bx, (i / bx) % by, i / (bx * by)];
        let src = (centre + (p[axis] as f64 - centre) / factor).clamp(0.0, len as f64 - 1.0);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        let frac = src - i0 as f64;
        p[axis] = i0;
        let a = *field.get(p[0], p[1], p[2]);
        p[axis] = i1;
        let b = *field.get(p[0], p[1], p[2]);
        *v = a + (b - a) * frac;
    }
    out
}

/// Injects one contiguous hypointense lesion and returns the lesioned
/// volume together with the exact lesion mask.
///
/// The random shape is generated on the bounding box of the candidate
/// region (padded by the noise kernel radius), thresholded, opened and
/// closed with a 3×3×3 cube, confined to the region and reduced to its
/// largest 26-connected component.
pub fn inject_lesion_3d(
    volume: &Volume,
    labels: &LabelMap,
    config: &SynthesisConfig,
    rng_seed: u64,
) -> Result<(Volume, Mask3, LesionInfo)> {
    config.validate()?;
    volume.ensure_aligned(labels, "volume vs label map")?;
    let mut rng = rng_from(rng_seed);
    let scenario = sample_scenario(&config.scenario_probs, &mut rng)?;
    let region = select_hemorrhage_region_3d(labels, scenario, config.roi_dilation_radius, &mut rng);
    let Some((lo, hi)) = bounding_box(&region, config.noise_blur_kernel / 2) else {
        return Err(Error::InjectionFailed {
            retries: config.max_retries,
        });
    };
    let box_dims = [0, 1, 2].map(|k| hi[k] - lo[k] + 1);
    let [t_lo, t_hi] = config.shape_threshold_range;

    // Keep the first shape that is large enough; failing that, the
    // largest one seen.
    let mut found: Option<(Mask3, f64, usize)> = None;
    for _ in 0..config.max_retries {
        let t = if t_hi > t_lo {
            rng.random_range(t_lo..=t_hi)
        } else {
            t_lo
        };
        let field = shape_field_3d(box_dims, config, &mut rng);
        let binary = field.map(|&v| v > t);
        let cleaned = close_3d(&open_3d(&binary));
        let mut mask = region.map(|_| false);
        let [bx, by, _] = box_dims;
        for (i, &b) in cleaned.data().iter().enumerate() {
            if b {
                let p = [lo[0] + i % bx, lo[1] + (i / bx) % by, lo[2] + i / (bx * by)];
                let li = mask.linear(p[0], p[1], p[2]);
                mask.data_mut()[li] = region.data()[li];
            }
        }
        let mask = largest_component_3d(&mask);
        let size = mask.count();
        if size > found.as_ref().map_or(0, |f| f.2) {
            found = Some((mask, t, size));
        }
        if size > 0 && size >= config.min_lesion_voxels {
            break;
        }
    }
    let (mask, threshold, _) = found.ok_or(Error::InjectionFailed {
        retries: config.max_retries,
    })?;

    let [f_lo, f_hi] = config.attenuation_range;
    let f = if f_hi > f_lo {
        rng.random_range(f_lo..=f_hi)
    } else {
        f_lo
    };
    let alpha = soft_alpha_3d(&mask, config.boundary_blur_sigma);
    let mut out = volume.clone();
    for (v, &a) in out.data_mut().iter_mut().zip(alpha.data()) {
        *v = attenuate(*v, a, f);
    }
    let voxels = mask.count();
    Ok((
        out,
        mask,
        LesionInfo {
            scenario,
            attenuation: f,
            threshold,
            voxels,
        },
    ))
}

pub(crate) fn soft_alpha_3d(mask: &Mask3, sigma: f64) -> Grid3<f64> {
    let m = mask.map(|&b| if b { 1.0 } else { 0.0 });
    let mut a = if sigma > 0.0 {
        blur_3d(&m, &gaussian_kernel_sigma(sigma))
    } else {
        m
    };
    for v in a.data_mut() {
        *v = snap_alpha(*v);
    }
    a
}
