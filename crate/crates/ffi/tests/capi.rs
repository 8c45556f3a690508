use hemosynth_ffi::*;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

fn last_error() -> String {
    let p = hs_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_match_hand_values() {
    // 3 of 4 positive-negative pairs ordered correctly.
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut v = f64::NAN;
    unsafe {
        assert_eq!(hs_auroc(scores.as_ptr(), labels.as_ptr(), 4, &mut v), HsStatus::Ok);
        assert_eq!(v, 0.75);
        assert_eq!(hs_aupr(scores.as_ptr(), labels.as_ptr(), 4, &mut v), HsStatus::Ok);
        // Recall 1/2 at precision 1, then recall 1 at precision 2/3.
        assert!((v - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(hs_youden_threshold(scores.as_ptr(), labels.as_ptr(), 4, &mut v), HsStatus::Ok);
        // Midpoint of 0.1 and 0.35; ties with 0.6 resolve to the smaller.
        assert!((v - 0.225).abs() < 1e-12);
    }
    assert!(hs_last_error_message().is_null());
}

#[test]
fn single_class_is_degenerate_with_message() {
    let scores = [0.1, 0.2];
    let labels = [1u8, 1];
    let mut v = 0.0;
    let s = unsafe { hs_auroc(scores.as_ptr(), labels.as_ptr(), 2, &mut v) };
    assert_eq!(s, HsStatus::Degenerate);
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_reported() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(hs_auroc(ptr::null(), ptr::null(), 3, &mut v), HsStatus::NullArgument);
        assert_eq!(hs_dsc(ptr::null(), ptr::null(), 0, ptr::null_mut()), HsStatus::NullArgument);
        assert_eq!(hs_volume_load(ptr::null(), ptr::null_mut()), HsStatus::NullArgument);
        hs_volume_free(ptr::null_mut());
        hs_labelmap_free(ptr::null_mut());
        assert!(hs_volume_data(ptr::null()).is_null());
    }
}

#[test]
fn dsc_and_wilson() {
    let a = [1u8, 1, 0, 0];
    let b = [1u8, 0, 1, 0];
    let (mut v, mut lo, mut hi) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(hs_dsc(a.as_ptr(), b.as_ptr(), 4, &mut v), HsStatus::Ok);
        assert_eq!(v, 0.5);
        assert_eq!(hs_wilson_interval(0, 10, 0.95, &mut lo, &mut hi), HsStatus::Ok);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.35);
        assert_eq!(hs_wilson_interval(11, 10, 0.95, &mut lo, &mut hi), HsStatus::InvalidParameter);
    }
}

#[test]
fn delong_self_comparison() {
    let s = [0.2, 0.7, 0.4, 0.9, 0.1];
    let l = [0u8, 1, 0, 1, 1];
    let (mut z, mut p) = (f64::NAN, f64::NAN);
    unsafe {
        assert_eq!(hs_delong_test(s.as_ptr(), s.as_ptr(), l.as_ptr(), 5, &mut z, &mut p), HsStatus::Ok);
    }
    assert_eq!((z, p), (0.0, 1.0));
}

#[test]
fn phantom_handles_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("v.nii.gz").to_str().unwrap()).unwrap();
    unsafe {
        let (mut v, mut l) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(hs_phantom_generate(48, 56, 40, 5, &mut v, &mut l), HsStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(hs_volume_dims(v, dims.as_mut_ptr()), HsStatus::Ok);
        assert_eq!(dims, [48, 56, 40]);
        assert_eq!(hs_labelmap_dims(l, dims.as_mut_ptr()), HsStatus::Ok);
        assert_eq!(dims, [48, 56, 40]);
        let n = 48 * 56 * 40;
        let codes = std::slice::from_raw_parts(hs_labelmap_data(l), n);
        assert!(codes.iter().all(|&c| c <= 8));
        assert!(codes.contains(&4) && codes.contains(&0));

        let mut score = f64::NAN;
        assert_eq!(hs_case_score(v, l, &mut score), HsStatus::Ok);
        assert!((0.0..=1.0).contains(&score));

        assert_eq!(hs_volume_save(v, path.as_ptr()), HsStatus::Ok);
        let mut w = ptr::null_mut();
        assert_eq!(hs_volume_load(path.as_ptr(), &mut w), HsStatus::Ok);
        let mut spacing = [0.0; 3];
        assert_eq!(hs_volume_spacing(w, spacing.as_mut_ptr()), HsStatus::Ok);
        assert_eq!(spacing, [0.8; 3]);
        let a = std::slice::from_raw_parts(hs_volume_data(v), n);
        let b = std::slice::from_raw_parts(hs_volume_data(w), n);
        assert_eq!(a, b);
        hs_volume_free(v);
        hs_volume_free(w);
        hs_labelmap_free(l);
    }
}

#[test]
fn missing_file_is_io_error() {
    let path = CString::new("/nonexistent/x.nii").unwrap();
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { hs_volume_load(path.as_ptr(), &mut v) }, HsStatus::Io);
    assert!(v.is_null());
    assert!(last_error().contains("/nonexistent/x.nii"));
}

const EXPORTS: &[&str] = &[
    "hs_last_error_message",
    "hs_volume_load",
    "hs_volume_save",
    "hs_volume_free",
    "hs_volume_dims",
    "hs_volume_spacing",
    "hs_volume_data",
    "hs_labelmap_load",
    "hs_labelmap_free",
    "hs_labelmap_dims",
    "hs_labelmap_data",
    "hs_phantom_generate",
    "hs_case_score",
    "hs_auroc",
    "hs_aupr",
    "hs_youden_threshold",
    "hs_delong_test",
    "hs_wilson_interval",
    "hs_dsc",
];

fn header() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hemosynth.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in EXPORTS {
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(text.contains("typedef struct HsVolume HsVolume;"));
    assert!(text.contains("HS_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    let mut body = String::from("#include \"hemosynth.h\"\nint main(void) {\n  HsVolume *v = 0; HsLabelMap *l = 0;\n");
    body.push_str("  enum HsStatus s = hs_phantom_generate(8, 8, 8, 1, &v, &l);\n");
    body.push_str("  double score; s = hs_case_score(v, l, &score);\n");
    body.push_str("  hs_volume_free(v); hs_labelmap_free(l);\n  return s == HS_STATUS_OK ? 0 : 1;\n}\n");
    std::fs::write(&src, body).unwrap();
    let include = header().parent().unwrap().to_path_buf();
    for (compiler, extra) in [("cc", vec!["-std=c99"]), ("c++", vec!["-x", "c++"])] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror"])
            .args(&extra)
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .status()
            .unwrap_or_else(|e| panic!("{compiler} not runnable: {e}"));
        assert!(status.success(), "{compiler} rejected the header");
    }
}
