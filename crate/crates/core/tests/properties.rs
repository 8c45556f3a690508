use proptest::prelude::*;

use hemosynth::refine::{
    component_at, dsc, region_grow, rle_decode, rle_encode, threshold_segment, Connectivity,
    RegionGrowParams,
};
use hemosynth::scoring::{candidate_roi, reference_heatmap, PointPrompt, ReferenceScorerParams, TissueReference};
use hemosynth::service::quantize;
use hemosynth::stats::{
    bootstrap_ci, pr_aupr, roc_auroc, wilson_interval, youden_threshold, BootstrapParams,
};
use hemosynth::volume_io::{Grid2, Mask2, Plane, Slice2D, TissueClass};

/// Scores on a coarse grid (to force ties) with both classes present.
fn labelled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60)
        .prop_flat_map(|n| (prop::collection::vec(0u8..12, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
        .prop_map(|(s, l)| (s.into_iter().map(|v| f64::from(v) / 11.0).collect(), l))
}

fn mask(h: usize, w: usize) -> impl Strategy<Value = Mask2> {
    prop::collection::vec(any::<bool>(), h * w).prop_map(move |d| Grid2::from_vec(h, w, d).unwrap())
}

fn grid(h: usize, w: usize) -> impl Strategy<Value = Grid2<f32>> {
    prop::collection::vec(0.0f32..=1.0, h * w).prop_map(move |d| Grid2::from_vec(h, w, d).unwrap())
}

/// Label grid with a ventricle block, deep gray block and white matter
/// around, so every class the scorer uses is present.
fn anatomy(h: usize, w: usize) -> Grid2<TissueClass> {
    let mut g = Grid2::filled(h, w, TissueClass::WhiteMatter);
    for r in 0..h {
        for c in 0..w {
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                g.set(r, c, TissueClass::Background);
            } else if (3..6).contains(&r) && (3..7).contains(&c) {
                g.set(r, c, TissueClass::Ventricles);
            } else if (8..11).contains(&r) && (9..12).contains(&c) {
                g.set(r, c, TissueClass::DeepGrayMatter);
            }
        }
    }
    g
}

fn slice_of(g: Grid2<f32>, labels: Grid2<TissueClass>) -> Slice2D {
    Slice2D {
        plane: Plane::Axial,
        index: 0,
        grid: g,
        source_case: "p".into(),
        label_grid: Some(labels),
        pixel_spacing: [1.0, 1.0],
    }
}

fn is_connected(m: &Mask2, seed: (usize, usize), conn: Connectivity) -> bool {
    component_at(m, seed, conn) == *m
}

proptest! {
    #[test]
    fn auroc_is_mann_whitney((s, l) in labelled_scores()) {
        let (_, auc) = roc_auroc(&s, &l).unwrap();
        let (mut u, mut pairs) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    pairs += 1.0;
                    u += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        prop_assert!((auc - u / pairs).abs() < 1e-9);
    }

    #[test]
    fn aupr_matches_threshold_enumeration((s, l) in labelled_scores()) {
        let (_, ap) = pr_aupr(&s, &l).unwrap();
        let mut ts = s.clone();
        ts.sort_by(|a, b| b.total_cmp(a));
        ts.dedup();
        let pos = l.iter().filter(|&&b| b).count();
        let (mut want, mut prev) = (0.0, 0usize);
        for t in ts {
            let tp = (0..s.len()).filter(|&i| s[i] >= t && l[i]).count();
            let all = (0..s.len()).filter(|&i| s[i] >= t).count();
            want += (tp - prev) as f64 / pos as f64 * (tp as f64 / all as f64);
            prev = tp;
        }
        prop_assert_eq!(ap, want);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn youden_threshold_maximizes_j((s, l) in labelled_scores()) {
        let t = youden_threshold(&s, &l).unwrap();
        let j = |t: f64| {
            let tp = (0..s.len()).filter(|&i| l[i] && s[i] > t).count() as f64;
            let tn = (0..s.len()).filter(|&i| !l[i] && s[i] <= t).count() as f64;
            let p = l.iter().filter(|&&b| b).count() as f64;
            tp / p + tn / (s.len() as f64 - p) - 1.0
        };
        let best = s.iter().map(|&c| j(c)).chain([j(-1.0)]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((j(t) - best).abs() < 1e-12);
    }

    #[test]
    fn thresholding_is_antitone(g in grid(7, 9), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m_lo = threshold_segment(&g, lo).unwrap();
        let m_hi = threshold_segment(&g, hi).unwrap();
        prop_assert!(m_hi.is_subset_of(&m_lo));
    }

    #[test]
    fn region_growing_is_connected_and_monotone_in_delta(
        g in grid(12, 14),
        row in 0usize..12,
        col in 0usize..14,
        d1 in 0.0f32..0.5,
        d2 in 0.0f32..0.5,
        eight in any::<bool>(),
    ) {
        let slice = slice_of(g, Grid2::filled(12, 14, TissueClass::WhiteMatter));
        let prompt = PointPrompt { case: "p".into(), plane: Plane::Axial, index: 0, row, col, heat: 1.0 };
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let params = |delta| RegionGrowParams { delta, connectivity: conn, confine_to_roi: false, ..Default::default() };
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let small = region_grow(&slice, &prompt, &params(lo)).unwrap();
        let large = region_grow(&slice, &prompt, &params(hi)).unwrap();
        prop_assert!(*small.get(row, col));
        prop_assert!(small.is_subset_of(&large));
        prop_assert!(is_connected(&small, (row, col), conn));
        prop_assert!(is_connected(&large, (row, col), conn));
        let seed = *slice.grid.get(row, col) + lo;
        for (&v, &m) in slice.grid.data().iter().zip(small.data()) {
            prop_assert!(!m || v <= seed);
        }
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in mask(6, 6), b in mask(6, 6)) {
        let ab = dsc(a.data(), b.data()).unwrap();
        let ba = dsc(b.data(), a.data()).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dsc(a.data(), a.data()).unwrap(), 1.0);
    }

    #[test]
    fn heat_falls_as_intensity_rises_within_a_class(g in grid(14, 16)) {
        let labels = anatomy(14, 16);
        let slice = slice_of(g, labels.clone());
        let reference = TissueReference::from_slice(&slice, 50.0).unwrap();
        let params = ReferenceScorerParams::default();
        let heat = reference_heatmap(&slice, &reference, &params).unwrap();
        let roi = candidate_roi(&labels, params.roi_dilation_radius);
        let n = labels.len();
        for i in 0..n {
            prop_assert!((0.0..=1.0).contains(&heat.grid.data()[i]));
            if !roi.data()[i] {
                prop_assert_eq!(heat.grid.data()[i], 0.0);
                continue;
            }
            for j in 0..n {
                if roi.data()[j] && labels.data()[i] == labels.data()[j]
                    && slice.grid.data()[i] <= slice.grid.data()[j]
                {
                    prop_assert!(heat.grid.data()[i] >= heat.grid.data()[j]);
                }
            }
        }
    }

    #[test]
    fn wilson_interval_brackets_the_proportion(n in 1usize..500, k_frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let k = (k_frac * n as f64).floor() as usize;
        let ci = wilson_interval(k, n, level).unwrap();
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= ci.lo && ci.lo <= p && p <= ci.hi && ci.hi <= 1.0);
        if k == 0 { prop_assert_eq!(ci.lo, 0.0); }
        if k == n { prop_assert_eq!(ci.hi, 1.0); }
    }

    #[test]
    fn bootstrap_interval_contains_estimate(values in prop::collection::vec(-5.0f64..5.0, 2..40), seed in any::<u64>()) {
        let params = BootstrapParams { resamples: 200, seed, ..Default::default() };
        let mean = |idx: &[usize]| Some(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64);
        let out = bootstrap_ci(values.len(), mean, &params).unwrap();
        prop_assert!(out.ci.lo <= out.ci.estimate && out.ci.estimate <= out.ci.hi);
    }

    #[test]
    fn run_lengths_round_trip(m in mask(5, 11)) {
        let runs = rle_encode(&m);
        prop_assert_eq!(runs.len(), 5);
        prop_assert_eq!(rle_decode(&runs, 11).unwrap(), m);
    }

    #[test]
    fn quantization_is_monotone(a in 0.0f32..=1.0, b in 0.0f32..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo) <= quantize(hi));
        prop_assert!((f64::from(quantize(a)) - f64::from(a) * 255.0).abs() <= 0.5);
    }
}
