//! Acceptance criteria, one PASS/FAIL line each. Runs without the test
//! harness so the lines come out in order and uninterleaved.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use hemosynth::commands::{cmd_phantom, cmd_segment, cmd_synth, PhantomOptions};
use hemosynth::phantom::{generate_phantom, PhantomParams};
use hemosynth::pipeline::{score_manifest, segment_case, HeatmapProvider, ScoredCase};
use hemosynth::refine::{lesion_volume, mean_slice_dsc, RegionGrowParams};
use hemosynth::service::{index_cases, router};
use hemosynth::stats::{
    mcnemar_from_counts, placement_auroc, pr_aupr, roc_auroc, wilcoxon_signed_rank,
    wilson_interval, youden_threshold,
};
use hemosynth::synthesis::{
    slice_rng, soft_alpha, synthesize_pseudo_lesion, HemorrhageScenario, SynthesisConfig,
};
use hemosynth::volume_io::{
    brain_mask_2d, extract_roi_slices, load_nifti, load_nifti_mask, pad_to_cube, save_nifti_as,
    DataType, Grid3, Manifest, Plane, Slice2D, TissueClass,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64, what: &str) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_s), || {
        format!("{what} took {elapsed:.1?}, limit {limit_s} s")
    })
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// ---- metric oracles -------------------------------------------------------

/// Fraction of positive/negative pairs ranked correctly, ties counting half.
fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / pairs
}

/// Average precision by visiting every distinct score as a threshold, from
/// the highest down, and counting by brute force at each.
fn enumerated_aupr(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = labels.iter().filter(|&&l| l).count();
    let (mut ap, mut prev_tp) = (0.0, 0usize);
    for t in thresholds {
        let tp = (0..scores.len()).filter(|&i| scores[i] >= t && labels[i]).count();
        let fp = (0..scores.len()).filter(|&i| scores[i] >= t && !labels[i]).count();
        ap += (tp - prev_tp) as f64 / pos as f64 * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    ap
}

fn metric_oracles() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut instances = 0;
    while instances < 200 {
        let n = rng.random_range(2..=200);
        // Coarse grids force ties.
        let levels = [3u32, 10, 1000][rng.random_range(0..3)];
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        instances += 1;
        let (_, auc) = roc_auroc(&scores, &labels).map_err(e)?;
        let pairwise = pairwise_auroc(&scores, &labels);
        ensure((auc - pairwise).abs() <= 1e-9, || format!("AUROC {auc} vs pairwise {pairwise}"))?;
        let (_, ap) = pr_aupr(&scores, &labels).map_err(e)?;
        let exhaustive = enumerated_aupr(&scores, &labels);
        ensure(ap == exhaustive, || format!("AUPR {ap} vs enumeration {exhaustive}"))?;
        let placed = placement_auroc(&scores, &labels).map_err(e)?;
        ensure((placed - auc).abs() <= 1e-12, || format!("placement AUC {placed} vs {auc}"))?;
    }
    let w = wilson_interval(8, 10, 0.95).map_err(e)?;
    ensure((w.lo - 0.490).abs() <= 1e-3 && (w.hi - 0.943).abs() <= 1e-3, || {
        format!("Wilson(8, 10) = ({}, {})", w.lo, w.hi)
    })?;
    let m = mcnemar_from_counts(10, 2);
    ensure((m.p_value - 158.0 / 4096.0).abs() <= 1e-12, || format!("McNemar p {}", m.p_value))?;
    let wx = wilcoxon_signed_rank(&[1.0, 2.0, 3.0]).map_err(e)?;
    ensure(wx.p_value == 0.25, || format!("Wilcoxon p {}", wx.p_value))?;
    let elapsed = start.elapsed();
    within(elapsed, 10, "oracle suite")?;
    Ok(format!("{instances} instances, Wilson ({:.4}, {:.4}), {elapsed:.1?}", w.lo, w.hi))
}

// ---- synthesis suite ------------------------------------------------------

/// Every lesion pixel lies within `radius` (Euclidean) of a ventricle or
/// deep gray pixel, by exhaustive search.
fn near_periventricular(slice: &Slice2D, row: usize, col: usize, radius: usize) -> bool {
    let labels = slice.label_grid.as_ref().unwrap();
    let r = radius as isize;
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc > r * r {
                continue;
            }
            let (y, x) = (row as isize + dr, col as isize + dc);
            if y < 0 || x < 0 || y >= labels.height() as isize || x >= labels.width() as isize {
                continue;
            }
            if matches!(*labels.get(y as usize, x as usize), TissueClass::Ventricles | TissueClass::DeepGrayMatter) {
                return true;
            }
        }
    }
    false
}

struct SynthRun {
    counts: [usize; 4],
    failures: usize,
    fingerprint: Vec<u32>,
}

fn synthesize_all(slices: &[Slice2D], reps: u64, cfg: &SynthesisConfig) -> Result<SynthRun, String> {
    use rayon::prelude::*;
    let jobs: Vec<(usize, u64)> = (0..slices.len()).flat_map(|i| (0..reps).map(move |k| (i, k))).collect();
    let outcomes: Vec<Result<Option<(HemorrhageScenario, u32)>, String>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let slice = &slices[i];
            let mut rng = slice_rng(cfg.seed.wrapping_add(k), &slice.source_case, slice.plane, slice.index);
            let s = match synthesize_pseudo_lesion(slice, cfg, &mut rng) {
                Ok(s) => s,
                Err(hemosynth::Error::SynthesisFailed { .. }) => return Ok(None),
                Err(err) => return Err(err.to_string()),
            };
            let labels = slice.label_grid.as_ref().unwrap();
            let brain = brain_mask_2d(labels);
            let w = labels.width();
            let brain_cols: Vec<usize> = (0..labels.len())
                .filter(|&p| brain.data()[p])
                .map(|p| p % w)
                .collect();
            let centre = brain_cols.iter().sum::<usize>() as f64 / brain_cols.len() as f64;
            let mut side = None;
            for (p, &m) in s.lesion_mask.data().iter().enumerate() {
                if !m {
                    continue;
                }
                let (row, col) = (p / w, p % w);
                let class = labels.data()[p];
                ensure(brain.data()[p], || format!("lesion pixel outside brain in {}", slice.index))?;
                let ok = match s.scenario {
                    HemorrhageScenario::HemisphericWm => {
                        let left = (col as f64) < centre;
                        let consistent = *side.get_or_insert(left) == left;
                        class == TissueClass::WhiteMatter && consistent
                    }
                    HemorrhageScenario::VentriclesOnly => {
                        class != TissueClass::DeepGrayMatter && near_periventricular(slice, row, col, cfg.roi_dilation_radius)
                    }
                    HemorrhageScenario::DgmOnly => {
                        class != TissueClass::Ventricles && near_periventricular(slice, row, col, cfg.roi_dilation_radius)
                    }
                    HemorrhageScenario::DilatedVentDgm => near_periventricular(slice, row, col, cfg.roi_dilation_radius),
                };
                ensure(ok, || format!("lesion pixel ({row}, {col}) outside the {:?} region", s.scenario))?;
            }
            ensure((0.3..=0.5).contains(&s.attenuation), || format!("attenuation {}", s.attenuation))?;
            let alpha = soft_alpha(&s.lesion_mask, cfg.boundary_blur_sigma);
            let mut hash = 0u32;
            for ((&before, &after), &a) in slice.grid.data().iter().zip(s.image.grid.data()).zip(alpha.data()) {
                ensure(after <= before, || format!("intensity rose from {before} to {after}"))?;
                if a == 1.0 && before > 0.0 {
                    let ratio = f64::from(after) / f64::from(before);
                    ensure((0.3 - 1e-6..=0.5 + 1e-6).contains(&ratio), || format!("core ratio {ratio}"))?;
                }
                hash = hash.rotate_left(5) ^ after.to_bits();
            }
            Ok(Some((s.scenario, hash)))
        })
        .collect();
    let mut run = SynthRun { counts: [0; 4], failures: 0, fingerprint: Vec::new() };
    for o in outcomes {
        match o? {
            Some((sc, h)) => {
                run.counts[sc.code() as usize - 1] += 1;
                run.fingerprint.push(h);
            }
            None => run.failures += 1,
        }
    }
    Ok(run)
}

fn synthesis_suite() -> Check {
    let start = Instant::now();
    let mut slices = Vec::new();
    for seed in 0..4u64 {
        let (v, l) = generate_phantom(&PhantomParams::varied([128; 3], seed)).map_err(e)?;
        for plane in Plane::ALL {
            let mut s = extract_roi_slices(&v, &l, plane, &format!("p{seed}")).map_err(e)?;
            slices.append(&mut s);
        }
    }
    let reps = 10_000u64.div_ceil(slices.len() as u64) + 1;
    let cfg = SynthesisConfig { seed: 77, ..SynthesisConfig::default() };
    let run = synthesize_all(&slices, reps, &cfg)?;
    let total: usize = run.counts.iter().sum();
    ensure(total >= 10_000, || format!("only {total} samples"))?;
    let freqs = run.counts.map(|c| c as f64 / total as f64);
    for (f, p) in freqs.iter().zip(cfg.scenario_probs) {
        ensure((f - p).abs() <= 0.02, || format!("scenario frequencies {freqs:.4?}"))?;
    }
    let chi2: f64 = run
        .counts
        .iter()
        .zip(cfg.scenario_probs)
        .map(|(&c, p)| {
            let expected = p * total as f64;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
    ensure(p_value > 0.01, || format!("chi-square {chi2:.3}, p {p_value:.4}"))?;
    let again = synthesize_all(&slices, reps, &cfg)?;
    ensure(again.fingerprint == run.fingerprint, || "re-run with the same seed differs".into())?;
    let elapsed = start.elapsed();
    within(elapsed, 60, "synthesis suite")?;
    Ok(format!(
        "{total} samples ({} slices failed), frequencies {freqs:.3?}, chi-square p {p_value:.3}, {elapsed:.1?}",
        run.failures
    ))
}

// ---- end-to-end benchmark -------------------------------------------------

fn end_to_end() -> Check {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(e)?;
    pool.install(|| {
        let start = Instant::now();
        let dir = tempfile::tempdir().map_err(e)?;
        let opts = PhantomOptions { count: 40, seed: 2024, with_lesions: 0.25, dims: [128; 3] };
        cmd_phantom(dir.path(), &opts).map_err(e)?;
        let manifest = Manifest::load(dir.path().join("manifest.json")).map_err(e)?;
        let provider = HeatmapProvider::Reference(Default::default());
        let cases: Vec<ScoredCase> = score_manifest(&manifest, &provider)
            .into_iter()
            .map(|(id, r)| r.map_err(|err| format!("{id}: {err}")))
            .collect::<Result<_, _>>()?;
        let lesioned = cases.iter().filter(|c| c.data.lesion.is_some()).count();
        ensure(lesioned == 10, || format!("{lesioned} lesioned cases"))?;

        let case_scores: Vec<f64> = cases.iter().map(|c| c.scores.case.value).collect();
        let case_labels: Vec<bool> = cases.iter().map(|c| c.data.record.diagnosis.is_positive()).collect();
        let (_, case_auc) = roc_auroc(&case_scores, &case_labels).map_err(e)?;

        let (mut slice_scores, mut slice_labels) = (Vec::new(), Vec::new());
        for c in &cases {
            for s in &c.scores.slices {
                slice_scores.push(s.value);
                slice_labels.push(match &c.data.lesion {
                    Some(m) => m.slice(s.plane.unwrap(), s.index.unwrap()).map_err(e)?.any(),
                    None => false,
                });
            }
        }
        let (_, slice_auc) = roc_auroc(&slice_scores, &slice_labels).map_err(e)?;
        let threshold = youden_threshold(&slice_scores, &slice_labels).map_err(e)?;

        let refine = RegionGrowParams::refinement();
        let (mut thresholded, mut refined) = (Vec::new(), Vec::new());
        for c in cases.iter().filter(|c| c.data.lesion.is_some()) {
            let truth = c.data.lesion.as_ref().unwrap();
            let plain = segment_case(&c.data, &c.heat, threshold, None).map_err(e)?;
            let grown = segment_case(&c.data, &c.heat, threshold, Some(&refine)).map_err(e)?;
            thresholded.push(mean_slice_dsc(&plain, truth, Plane::Axial).map_err(e)?.unwrap_or(0.0));
            refined.push(mean_slice_dsc(&grown, truth, Plane::Axial).map_err(e)?.unwrap_or(0.0));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (dsc_t, dsc_r) = (mean(&thresholded), mean(&refined));
        let elapsed = start.elapsed();
        let summary = format!(
            "case AUROC {case_auc:.3}, slice AUROC {slice_auc:.3}, threshold {threshold:.4}, \
             DSC thresholded {dsc_t:.3} refined {dsc_r:.3}, {elapsed:.1?} on one thread"
        );
        ensure(case_auc >= 0.90, || summary.clone())?;
        ensure(slice_auc >= 0.85, || summary.clone())?;
        ensure(dsc_t >= 0.45, || summary.clone())?;
        ensure(dsc_r >= 0.50, || summary.clone())?;
        ensure(dsc_r >= dsc_t, || summary.clone())?;
        within(elapsed, 120, &summary)?;
        Ok(summary)
    })
}

// ---- format round trip ----------------------------------------------------

fn format_round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let dims = [23, 17, 11];
    let n = dims.iter().product::<usize>();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cases: [(DataType, Vec<f32>); 3] = [
        (DataType::Uint8, (0..n).map(|_| rng.random_range(0..=255) as f32).collect()),
        (DataType::Int16, (0..n).map(|_| rng.random_range(-32768..=32767) as f32).collect()),
        (DataType::Float32, (0..n).map(|_| rng.random_range(-1e3f32..1e3)).collect()),
    ];
    let mut checked = 0;
    for (dt, data) in cases {
        let v = Grid3::from_vec(dims, [0.5, 0.8, 1.25], data).map_err(e)?;
        for ext in ["nii", "nii.gz"] {
            let path = dir.path().join(format!("{dt:?}.{ext}"));
            save_nifti_as(&v, &path, dt, None).map_err(e)?;
            let (back, _) = load_nifti(&path).map_err(e)?;
            ensure(back.dims() == dims && back.spacing() == v.spacing(), || format!("{dt:?} {ext}: geometry"))?;
            let same = back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || format!("{dt:?} {ext}: voxels differ"))?;
            checked += 1;
        }
    }
    let (phantom, _) = generate_phantom(&PhantomParams::default()).map_err(e)?;
    let padded = pad_to_cube(&phantom, 210).map_err(e)?;
    let sum = |g: &Grid3<f32>| g.data().iter().map(|&x| f64::from(x)).sum::<f64>();
    let (a, b) = (sum(&phantom), sum(&padded));
    ensure(padded.dims() == [210; 3] && a == b, || format!("padded sum {b} vs {a}"))?;
    Ok(format!("{checked} type/compression combinations identical, padded sum {a}"))
}

// ---- determinism ----------------------------------------------------------

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Check {
    let base = tempfile::tempdir().map_err(e)?;
    let mut trees = Vec::new();
    for (run, threads) in [(0, 1), (1, 4), (2, 4)] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(e)?;
        let root = base.path().join(format!("run{run}"));
        pool.install(|| -> Result<(), String> {
            let normals = PhantomOptions { count: 2, seed: 11, with_lesions: 0.0, dims: [64; 3] };
            cmd_phantom(&root.join("normal"), &normals).map_err(e)?;
            let mixed = PhantomOptions { count: 4, seed: 12, with_lesions: 0.5, dims: [64; 3] };
            cmd_phantom(&root.join("mixed"), &mixed).map_err(e)?;
            let cfg = SynthesisConfig { seed: 13, lesion_fraction: 0.7, ..SynthesisConfig::default() };
            cmd_synth(&root.join("normal/manifest.json"), &cfg, &root.join("synth"), false).map_err(e)?;
            Ok(())
        })?;
        trees.push(tree(&root));
    }
    let files = trees[0].len();
    ensure(files > 20, || format!("only {files} files written"))?;
    for (i, t) in trees.iter().enumerate().skip(1) {
        if let Some(name) = trees[0].keys().chain(t.keys()).find(|k| trees[0].get(*k) != t.get(*k)) {
            return Err(format!("run {i} differs at {name}"));
        }
    }
    Ok(format!("{files} files byte-identical over 3 runs on 1 and 4 threads"))
}

// ---- service consistency --------------------------------------------------

fn service_consistency() -> Check {
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    let dir = tempfile::tempdir().map_err(e)?;
    let opts = PhantomOptions { count: 2, seed: 31, with_lesions: 0.5, dims: [96; 3] };
    let manifest = cmd_phantom(dir.path(), &opts).map_err(e)?;
    let case = manifest.cases.iter().find(|c| c.lesion_mask.is_some()).unwrap().id.clone();
    let manifest = Manifest::load(dir.path().join("manifest.json")).map_err(e)?;
    let provider = HeatmapProvider::Reference(Default::default());
    let app = router(Arc::new(index_cases(&manifest, &provider).map_err(e)?));
    let rt = tokio::runtime::Runtime::new().map_err(e)?;
    let mut compared = 0;
    for threshold in [0.0, 0.1, 0.3, 0.7, 1.0] {
        for refine in [false, true] {
            let out = dir.path().join("mask.nii.gz");
            let cli = cmd_segment(&manifest, &case, &provider, threshold, refine, &out).map_err(e)?;
            let (written, _) = load_nifti_mask(&out).map_err(e)?;
            ensure(lesion_volume(&written) == cli.volume_mm3, || "printed volume differs from the file".into())?;
            let body = serde_json::json!({ "threshold": threshold, "refine": refine }).to_string();
            let req = axum::http::Request::post(format!("/api/cases/{case}/segment"))
                .header("content-type", "application/json")
                .body(axum::body::Body::from(body))
                .map_err(e)?;
            let resp = rt.block_on(app.clone().oneshot(req)).map_err(e)?;
            ensure(resp.status() == 200, || format!("status {}", resp.status()))?;
            let bytes = rt.block_on(resp.into_body().collect()).map_err(e)?.to_bytes();
            let json: serde_json::Value = serde_json::from_slice(&bytes).map_err(e)?;
            let served = json["volume_mm3"].as_f64().ok_or("no volume_mm3")?;
            ensure(served == cli.volume_mm3, || {
                format!("threshold {threshold} refine {refine}: service {served} vs CLI {}", cli.volume_mm3)
            })?;
            compared += 1;
        }
    }
    Ok(format!("{compared} threshold/refine settings agree exactly on case {case}"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 6] = [
        ("metric oracles", metric_oracles),
        ("synthesis properties", synthesis_suite),
        ("end-to-end phantom benchmark", end_to_end),
        ("format round trip", format_round_trip),
        ("determinism", determinism),
        ("service/CLI segmentation consistency", service_consistency),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
