//! C interface. Volumes and label maps cross the boundary as opaque
//! handles; every fallible call returns an [`HsStatus`] and leaves a message
//! for [`hs_last_error_message`] on the calling thread.
//!
//! Boolean arrays (labels, masks) are `uint8_t`, nonzero meaning true.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hemosynth::phantom::{generate_phantom, PhantomParams};
use hemosynth::pipeline::unit_range;
use hemosynth::refine::dsc;
use hemosynth::scoring::{reference_heatmap_volume, score_case, ReferenceScorerParams};
use hemosynth::stats::{delong_test, pr_aupr, roc_auroc, wilson_interval, youden_threshold};
use hemosynth::volume_io::{load_labelmap, load_nifti, save_nifti, LabelMap, Volume};
use hemosynth::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsStatus {
    Ok = 0,
    NullArgument = 1,
    Io = 2,
    Format = 3,
    Alignment = 4,
    InvalidParameter = 5,
    InvalidInput = 6,
    Degenerate = 7,
    Unstable = 8,
    SynthesisFailed = 9,
    NotFound = 10,
    Panic = 11,
}

impl From<&Error> for HsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => HsStatus::Io,
            Error::Format(_) | Error::Unsupported(_) | Error::Truncated { .. } => HsStatus::Format,
            Error::Alignment(_) | Error::Oversize { .. } => HsStatus::Alignment,
            Error::Parameter(_) => HsStatus::InvalidParameter,
            Error::Input(_) | Error::Manifest(_) => HsStatus::InvalidInput,
            Error::Degenerate(_) => HsStatus::Degenerate,
            Error::UnstableMetric { .. } => HsStatus::Unstable,
            Error::SynthesisFailed { .. } | Error::InjectionFailed { .. } => HsStatus::SynthesisFailed,
            Error::NotFound(_) => HsStatus::NotFound,
        }
    }
}

/// Intensity volume, x fastest.
pub struct HsVolume(Volume);

/// Tissue label map, x fastest, one class code per voxel.
pub struct HsLabelMap(LabelMap);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(HsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(HsStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HsStatus::NullArgument, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HsStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(HsStatus::InvalidInput, "path is not UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn bools(p: *const u8, n: usize, what: &str) -> Result<Vec<bool>, Fail> {
    Ok(slice_arg(p, n, what)?.iter().map(|&b| b != 0).collect())
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or NULL after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a NIfTI-1 volume (`.nii` or `.nii.gz`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_volume_load(path: *const c_char, out_volume: *mut *mut HsVolume) -> HsStatus {
    guard(|| {
        let slot = out(out_volume, "out_volume")?;
        let (v, _) = load_nifti(path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(HsVolume(v)));
        Ok(())
    })
}

/// Writes a volume as float32 NIfTI-1, gzipped when the path ends in `.gz`.
///
/// # Safety
/// `volume` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hs_volume_save(volume: *const HsVolume, path: *const c_char) -> HsStatus {
    guard(|| {
        let v = volume.as_ref().ok_or_else(|| null("volume"))?;
        save_nifti(&v.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `volume` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hs_volume_free(volume: *mut HsVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// # Safety
/// `volume` must be a live handle; `dims` must hold 3 elements.
#[no_mangle]
pub unsafe extern "C" fn hs_volume_dims(volume: *const HsVolume, dims: *mut usize) -> HsStatus {
    guard(|| {
        let v = volume.as_ref().ok_or_else(|| null("volume"))?;
        let d = out(dims as *mut [usize; 3], "dims")?;
        *d = v.0.dims();
        Ok(())
    })
}

/// Voxel spacing in mm.
///
/// # Safety
/// `volume` must be a live handle; `spacing` must hold 3 elements.
#[no_mangle]
pub unsafe extern "C" fn hs_volume_spacing(volume: *const HsVolume, spacing: *mut f64) -> HsStatus {
    guard(|| {
        let v = volume.as_ref().ok_or_else(|| null("volume"))?;
        let s = out(spacing as *mut [f64; 3], "spacing")?;
        *s = v.0.spacing();
        Ok(())
    })
}

/// Borrowed voxel data, `nx * ny * nz` floats, x fastest. NULL for a NULL
/// handle. Valid while the handle lives.
///
/// # Safety
/// `volume` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_volume_data(volume: *const HsVolume) -> *const f32 {
    volume.as_ref().map_or(ptr::null(), |v| v.0.data().as_ptr())
}

/// Loads a tissue label map.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_labels` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_labelmap_load(path: *const c_char, out_labels: *mut *mut HsLabelMap) -> HsStatus {
    guard(|| {
        let slot = out(out_labels, "out_labels")?;
        let (l, _) = load_labelmap(path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(HsLabelMap(l)));
        Ok(())
    })
}

/// # Safety
/// `labels` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hs_labelmap_free(labels: *mut HsLabelMap) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

/// # Safety
/// `labels` must be a live handle; `dims` must hold 3 elements.
#[no_mangle]
pub unsafe extern "C" fn hs_labelmap_dims(labels: *const HsLabelMap, dims: *mut usize) -> HsStatus {
    guard(|| {
        let l = labels.as_ref().ok_or_else(|| null("labels"))?;
        let d = out(dims as *mut [usize; 3], "dims")?;
        *d = l.0.dims();
        Ok(())
    })
}

/// Borrowed class codes (0 background .. 8 corpus callosum), x fastest.
///
/// # Safety
/// `labels` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hs_labelmap_data(labels: *const HsLabelMap) -> *const u8 {
    // TissueClass is repr(u8), so the class array is a byte array.
    labels.as_ref().map_or(ptr::null(), |l| l.0.data().as_ptr().cast())
}

/// Generates a normal phantom case of the given size.
///
/// # Safety
/// Both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_phantom_generate(
    nx: usize,
    ny: usize,
    nz: usize,
    seed: u64,
    out_volume: *mut *mut HsVolume,
    out_labels: *mut *mut HsLabelMap,
) -> HsStatus {
    guard(|| {
        let v_slot = out(out_volume, "out_volume")?;
        let l_slot = out(out_labels, "out_labels")?;
        let params = PhantomParams { seed, ..PhantomParams::for_dims([nx, ny, nz]) };
        let (v, l) = generate_phantom(&params)?;
        *v_slot = Box::into_raw(Box::new(HsVolume(v)));
        *l_slot = Box::into_raw(Box::new(HsLabelMap(l)));
        Ok(())
    })
}

/// Case anomaly score under the reference scorer: the maximum heat over all
/// region-of-interest slices. Intensities outside [0, 1] are min-max
/// normalized first, as in the command line pipeline.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn hs_case_score(
    volume: *const HsVolume,
    labels: *const HsLabelMap,
    out_score: *mut f64,
) -> HsStatus {
    guard(|| {
        let v = volume.as_ref().ok_or_else(|| null("volume"))?;
        let l = labels.as_ref().ok_or_else(|| null("labels"))?;
        let slot = out(out_score, "out_score")?;
        let v = unit_range(v.0.clone())?;
        let heat = reference_heatmap_volume("ffi", &v, &l.0, &ReferenceScorerParams::default())?;
        *slot = score_case("ffi", &heat, &l.0)?.case.value;
        Ok(())
    })
}

unsafe fn scalar_metric(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_value: *mut f64,
    f: fn(&[f64], &[bool]) -> hemosynth::Result<f64>,
) -> HsStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        let s = slice_arg(scores, n, "scores")?;
        let l = bools(labels, n, "labels")?;
        *slot = f(s, &l)?;
        Ok(())
    })
}

/// Area under the ROC curve (trapezoidal, ties count half).
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_auroc(scores: *const f64, labels: *const u8, n: usize, out_value: *mut f64) -> HsStatus {
    scalar_metric(scores, labels, n, out_value, |s, l| Ok(roc_auroc(s, l)?.1))
}

/// Area under the precision-recall curve (step interpolation).
///
/// # Safety
/// As for [`hs_auroc`].
#[no_mangle]
pub unsafe extern "C" fn hs_aupr(scores: *const f64, labels: *const u8, n: usize, out_value: *mut f64) -> HsStatus {
    scalar_metric(scores, labels, n, out_value, |s, l| Ok(pr_aupr(s, l)?.1))
}

/// Threshold maximizing sensitivity + specificity - 1; a sample is
/// positive when its score is strictly above it.
///
/// # Safety
/// As for [`hs_auroc`].
#[no_mangle]
pub unsafe extern "C" fn hs_youden_threshold(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_value: *mut f64,
) -> HsStatus {
    scalar_metric(scores, labels, n, out_value, youden_threshold)
}

/// Paired DeLong test of two AUROCs on the same samples.
///
/// # Safety
/// `scores_a`, `scores_b` and `labels` must hold `n` elements; the out
/// pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_delong_test(
    scores_a: *const f64,
    scores_b: *const f64,
    labels: *const u8,
    n: usize,
    out_z: *mut f64,
    out_p: *mut f64,
) -> HsStatus {
    guard(|| {
        let z = out(out_z, "out_z")?;
        let p = out(out_p, "out_p")?;
        let a = slice_arg(scores_a, n, "scores_a")?;
        let b = slice_arg(scores_b, n, "scores_b")?;
        let l = bools(labels, n, "labels")?;
        let r = delong_test(a, b, &l)?;
        *z = r.statistic;
        *p = r.p_value;
        Ok(())
    })
}

/// Wilson score interval for `k` successes out of `n`.
///
/// # Safety
/// The out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_wilson_interval(
    k: usize,
    n: usize,
    level: f64,
    out_lo: *mut f64,
    out_hi: *mut f64,
) -> HsStatus {
    guard(|| {
        let lo = out(out_lo, "out_lo")?;
        let hi = out(out_hi, "out_hi")?;
        let ci = wilson_interval(k, n, level)?;
        *lo = ci.lo;
        *hi = ci.hi;
        Ok(())
    })
}

/// Dice similarity of two masks of `n` elements; 1 when both are empty.
///
/// # Safety
/// `a` and `b` must hold `n` elements; `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hs_dsc(a: *const u8, b: *const u8, n: usize, out_value: *mut f64) -> HsStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        *slot = dsc(&bools(a, n, "a")?, &bools(b, n, "b")?)?;
        Ok(())
    })
}
