//! The work behind each CLI subcommand, as library functions so that tests
//! and the service can call them directly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::phantom::{generate_phantom, inject_lesion_3d, lesion_config, PhantomParams};
use crate::pipeline::{segment_case, summarize_segmentation, HeatmapProvider, ScoredCase};
use crate::refine::{lesion_volume, mean_slice_dsc, RegionGrowParams};
use crate::scoring::{AnomalyScore, ScoreLevel};
use crate::seed::derive_seed;
use crate::stats::{compare_scores, evaluate_level, EvaluationReport, ReportParams};
use crate::synthesis::{export_training_set, ExportSummary, HemorrhageScenario, SynthesisConfig};
use crate::volume_io::{
    load_nifti_mask, save_labelmap, save_mask, save_nifti, CaseRecord, Diagnosis, Manifest,
    PapileGrade, Plane, Split,
};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomOptions {
    pub count: usize,
    pub seed: u64,
    /// Fraction of cases that receive a lesion.
    pub with_lesions: f64,
    pub dims: [usize; 3],
}

impl Default for PhantomOptions {
    fn default() -> Self {
        Self {
            count: 1,
            seed: 0,
            with_lesions: 0.0,
            dims: [128; 3],
        }
    }
}

/// Which of `count` cases get a lesion: exactly `round(fraction * count)`,
/// chosen by ranking a per-case hash of the seed.
pub fn lesioned_cases(count: usize, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!("lesion fraction {fraction} outside [0, 1]")));
    }
    let k = (fraction * count as f64).round() as usize;
    let mut ranked: Vec<(u64, usize)> = (0..count)
        .map(|i| (derive_seed(seed, &[b"lesioned", &(i as u64).to_le_bytes()]), i))
        .collect();
    ranked.sort_unstable();
    let mut out = vec![false; count];
    for &(_, i) in &ranked[..k] {
        out[i] = true;
    }
    Ok(out)
}

pub fn case_id(i: usize) -> String {
    format!("case{i:03}")
}

/// Papile grade attached to a phantom lesion of a given scenario.
fn grade_for(scenario: HemorrhageScenario) -> PapileGrade {
    match scenario {
        HemorrhageScenario::DgmOnly => PapileGrade::I,
        HemorrhageScenario::VentriclesOnly => PapileGrade::II,
        HemorrhageScenario::DilatedVentDgm => PapileGrade::III,
        HemorrhageScenario::HemisphericWm => PapileGrade::IV,
    }
}

/// Writes `count` phantom cases and `manifest.json` (relative paths) into
/// `out_dir`. Lesioned cases are diagnosed GMH-IVH and get a reference mask.
pub fn cmd_phantom(out_dir: &Path, opts: &PhantomOptions) -> Result<Manifest> {
    if opts.count == 0 {
        return Err(Error::Parameter("phantom count must be >= 1".into()));
    }
    let lesioned = lesioned_cases(opts.count, opts.with_lesions, opts.seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let cfg = lesion_config();
    let cases: Vec<CaseRecord> = (0..opts.count)
        .into_par_iter()
        .map(|i| {
            let id = case_id(i);
            let idx = (i as u64).to_le_bytes();
            let params = PhantomParams::varied(opts.dims, derive_seed(opts.seed, &[b"case", &idx]));
            let (volume, labels) = generate_phantom(&params)?;
            let volume_name = format!("{id}_t2.nii.gz");
            let labels_name = format!("{id}_labels.nii.gz");
            save_labelmap(&labels, out_dir.join(&labels_name))?;
            let mut record = CaseRecord {
                id: id.clone(),
                volume: PathBuf::from(&volume_name),
                labels: PathBuf::from(labels_name),
                lesion_mask: None,
                grade: None,
                split: Split::Train,
                diagnosis: Diagnosis::NotGmhIvh,
            };
            if lesioned[i] {
                let seed = derive_seed(opts.seed, &[b"lesion", &idx]);
                let (lesioned, mask, info) = inject_lesion_3d(&volume, &labels, &cfg, seed)?;
                log::info!(
                    "{id}: scenario {} f={:.3} voxels={}",
                    info.scenario.code(),
                    info.attenuation,
                    info.voxels
                );
                let mask_name = format!("{id}_lesion.nii.gz");
                save_mask(&mask, out_dir.join(&mask_name))?;
                save_nifti(&lesioned, out_dir.join(&volume_name))?;
                record.lesion_mask = Some(PathBuf::from(mask_name));
                record.grade = Some(grade_for(info.scenario));
                record.split = Split::ValidationInternal;
                record.diagnosis = Diagnosis::GmhIvh;
            } else {
                save_nifti(&volume, out_dir.join(&volume_name))?;
            }
            Ok(record)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest { cases };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Exports the training set; with `strict`, any slice whose synthesis
/// failed turns into an error after the export completes.
pub fn cmd_synth(
    manifest: &Path,
    config: &SynthesisConfig,
    out_dir: &Path,
    strict: bool,
) -> Result<ExportSummary> {
    let manifest = Manifest::load(manifest)?;
    let summary = export_training_set(&manifest.cases, config, out_dir)?;
    if strict && summary.failures > 0 {
        return Err(Error::SynthesisFailed {
            retries: config.max_retries,
            reason: format!("{} slices failed", summary.failures),
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseError {
    pub case: String,
    pub error: String,
}

/// Contents of a scores file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub source: String,
    pub scores: Vec<AnomalyScore>,
    pub errors: Vec<CaseError>,
}

impl ScoreFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Case and slice scores for every case, in manifest order. Cases that fail
/// are listed under `errors`.
pub fn cmd_score(manifest: &Manifest, provider: &HeatmapProvider) -> ScoreFile {
    let mut file = ScoreFile {
        source: provider.to_string(),
        ..Default::default()
    };
    for (id, outcome) in crate::pipeline::score_manifest(manifest, provider) {
        match outcome {
            Ok(scored) => {
                file.scores.push(scored.scores.case);
                file.scores.extend(scored.scores.slices);
            }
            Err(e) => {
                log::error!("{id}: {e}");
                file.errors.push(CaseError { case: id, error: e.to_string() });
            }
        }
    }
    file
}

type ScoreKey = (String, ScoreLevel, Option<Plane>, Option<usize>);

fn key(s: &AnomalyScore) -> ScoreKey {
    (s.case.clone(), s.level, s.plane, s.index)
}

/// Ground-truth labels for the records of a score file. Slice labels need
/// a lesion mask for every positive case; `None` when one is missing.
fn truth_labels(
    scores: &[AnomalyScore],
    manifest: &Manifest,
) -> Result<(Vec<bool>, Option<Vec<bool>>)> {
    let mut case_labels = Vec::new();
    let mut masks = HashMap::new();
    let mut slice_ok = true;
    for s in scores.iter().filter(|s| s.level == ScoreLevel::Case) {
        let rec = manifest
            .get(&s.case)
            .ok_or_else(|| Error::Input(format!("case {} has no manifest entry", s.case)))?;
        case_labels.push(rec.diagnosis.is_positive());
        match (&rec.lesion_mask, rec.diagnosis.is_positive()) {
            (Some(p), _) => {
                masks.insert(s.case.clone(), Some(load_nifti_mask(p)?.0));
            }
            (None, true) => slice_ok = false,
            (None, false) => {
                masks.insert(s.case.clone(), None);
            }
        }
    }
    if !slice_ok {
        return Ok((case_labels, None));
    }
    let mut slice_labels = Vec::new();
    for s in scores.iter().filter(|s| s.level == ScoreLevel::Slice) {
        let mask = masks
            .get(&s.case)
            .ok_or_else(|| Error::Input(format!("slice record for unscored case {}", s.case)))?;
        let positive = match (mask, s.plane, s.index) {
            (Some(m), Some(plane), Some(index)) => m.slice(plane, index)?.any(),
            (None, Some(_), Some(_)) => false,
            _ => return Err(Error::Input(format!("slice record of {} lacks plane/index", s.case))),
        };
        slice_labels.push(positive);
    }
    Ok((case_labels, Some(slice_labels)))
}

fn values(scores: &[AnomalyScore], level: ScoreLevel) -> Vec<f64> {
    scores.iter().filter(|s| s.level == level).map(|s| s.value).collect()
}

/// The evaluation report for a score file, optionally compared with a
/// second score file over the same records.
pub fn cmd_eval(
    scores: &ScoreFile,
    manifest: &Manifest,
    compare: Option<&ScoreFile>,
    params: &ReportParams,
) -> Result<EvaluationReport> {
    let (case_labels, slice_labels) = truth_labels(&scores.scores, manifest)?;
    let case_scores = values(&scores.scores, ScoreLevel::Case);
    let case = evaluate_level(&case_scores, &case_labels, params)?;
    let slice_scores = values(&scores.scores, ScoreLevel::Slice);
    let slice = match &slice_labels {
        Some(l) if l.iter().any(|&b| b) && l.iter().any(|&b| !b) => {
            Some(evaluate_level(&slice_scores, l, params)?)
        }
        _ => None,
    };
    let mut comparisons = Vec::new();
    if let Some(other) = compare {
        let index: HashMap<ScoreKey, f64> = other.scores.iter().map(|s| (key(s), s.value)).collect();
        let paired = |level: ScoreLevel| -> Result<Vec<f64>> {
            scores
                .scores
                .iter()
                .filter(|s| s.level == level)
                .map(|s| {
                    index.get(&key(s)).copied().ok_or_else(|| {
                        Error::Input(format!("comparison scores lack a record for {:?}", key(s)))
                    })
                })
                .collect()
        };
        let vs = other.source.clone();
        comparisons.extend(compare_scores(
            "case",
            &vs,
            &case_scores,
            &paired(ScoreLevel::Case)?,
            &case_labels,
            params,
        )?);
        if let (Some(_), Some(l)) = (&slice, &slice_labels) {
            comparisons.extend(compare_scores(
                "slice",
                &vs,
                &slice_scores,
                &paired(ScoreLevel::Slice)?,
                l,
                params,
            )?);
        }
    }
    Ok(EvaluationReport { case, slice, comparisons })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentOutcome {
    pub case: String,
    pub threshold: f64,
    pub refine: bool,
    pub volume_mm3: f64,
    /// Mean axial slice Dice against the reference mask, when there is one.
    pub mean_slice_dsc: Option<f64>,
}

/// Segments one case, writes the mask to `out` and reports its volume.
pub fn cmd_segment(
    manifest: &Manifest,
    case: &str,
    provider: &HeatmapProvider,
    threshold: f64,
    refine: bool,
    out: &Path,
) -> Result<SegmentOutcome> {
    let record = manifest
        .get(case)
        .ok_or_else(|| Error::NotFound(format!("case {case}")))?;
    let scored = ScoredCase::build(record, provider)?;
    let params = RegionGrowParams::refinement();
    let mask = segment_case(&scored.data, &scored.heat, threshold, refine.then_some(&params))?;
    save_mask(&mask, out)?;
    let mean_slice_dsc = match &scored.data.lesion {
        Some(truth) => mean_slice_dsc(&mask, truth, Plane::Axial)?,
        None => None,
    };
    Ok(SegmentOutcome {
        case: case.to_string(),
        threshold,
        refine,
        volume_mm3: lesion_volume(&mask),
        mean_slice_dsc,
    })
}

/// Same computation as the service's segmentation endpoint, for checking
/// that the two agree.
pub fn segmentation_summary(
    scored: &ScoredCase,
    threshold: f64,
    refine: bool,
) -> Result<crate::pipeline::SegmentationSummary> {
    let params = RegionGrowParams::refinement();
    let mask = segment_case(&scored.data, &scored.heat, threshold, refine.then_some(&params))?;
    summarize_segmentation(&mask, &scored.data.labels)
}
