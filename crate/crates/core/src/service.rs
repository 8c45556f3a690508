//! HTTP backend for the case viewer. Every case is loaded and scored once at
//! startup; requests only read that immutable index.

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::Arc;

use crate::commands::segmentation_summary;
use crate::error::{Error, Result};
use crate::pipeline::{score_manifest, HeatmapProvider, ScoredCase, SegmentationSummary};
use crate::volume_io::{
    roi_slice_indices, tissue_volume, Diagnosis, Grid2, Manifest, PapileGrade, Plane, TissueClass,
};

/// Loaded, scored cases ordered by descending case score (ties by id).
pub struct CaseIndex {
    cases: Vec<ScoredCase>,
    by_id: HashMap<String, usize>,
}

impl CaseIndex {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ScoredCase> {
        self.by_id.get(id).map(|&i| &self.cases[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScoredCase> {
        self.cases.iter()
    }
}

/// Loads and scores every case. Cases that fail are logged and left out;
/// an index with no case at all is an error.
pub fn index_cases(manifest: &Manifest, provider: &HeatmapProvider) -> Result<CaseIndex> {
    if manifest.cases.is_empty() {
        return Err(Error::Input("manifest lists no cases".into()));
    }
    let mut cases = Vec::new();
    for (id, outcome) in score_manifest(manifest, provider) {
        match outcome {
            Ok(c) => cases.push(c),
            Err(e) => log::error!("skipping case {id}: {e}"),
        }
    }
    if cases.is_empty() {
        return Err(Error::Input("no case in the manifest could be loaded".into()));
    }
    cases.sort_by(|a, b| {
        b.scores
            .case
            .value
            .total_cmp(&a.scores.case.value)
            .then_with(|| a.data.id().cmp(b.data.id()))
    });
    let by_id = cases.iter().enumerate().map(|(i, c)| (c.data.id().to_string(), i)).collect();
    Ok(CaseIndex { cases, by_id })
}

/// `round(v * 255)` with halves rounded away from zero; inputs are clamped
/// to [0, 1] first.
pub fn quantize(v: f32) -> u8 {
    (f64::from(v.clamp(0.0, 1.0)) * 255.0).round() as u8
}

/// 8-bit grayscale PNG of a [0, 1] grid.
pub fn render_png(grid: &Grid2<f32>) -> Vec<u8> {
    let pixels: Vec<u8> = grid.data().iter().map(|&v| quantize(v)).collect();
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, grid.width() as u32, grid.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().expect("in-memory PNG header");
    writer.write_image_data(&pixels).expect("in-memory PNG data");
    writer.finish().expect("in-memory PNG");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub grade: Option<PapileGrade>,
    pub diagnosis: Diagnosis,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneInfo {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub planes: BTreeMap<Plane, PlaneInfo>,
    /// First and last region-of-interest slice per plane, inclusive.
    pub roi_slice_ranges: BTreeMap<Plane, Option<[usize; 2]>>,
    /// mm³ per tissue class name.
    pub tissue_volumes: BTreeMap<String, f64>,
}

pub fn case_meta(case: &ScoredCase) -> CaseMeta {
    let labels = &case.data.labels;
    let dims = labels.dims();
    let mut planes = BTreeMap::new();
    let mut roi_slice_ranges = BTreeMap::new();
    for plane in Plane::ALL {
        let (rows, cols) = plane.slice_shape(dims);
        planes.insert(plane, PlaneInfo { slices: labels.num_slices(plane), rows, cols });
        let roi = roi_slice_indices(labels, plane);
        roi_slice_ranges.insert(plane, roi.first().zip(roi.last()).map(|(&a, &b)| [a, b]));
    }
    let tissue_volumes = TissueClass::ALL
        .iter()
        .map(|&c| (c.name().to_string(), tissue_volume(labels, c)))
        .collect();
    CaseMeta {
        dims,
        spacing: labels.spacing(),
        planes,
        roi_slice_ranges,
        tissue_volumes,
    }
}

/// Failure as sent to clients: a status and `{"error": "..."}`.
#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        Self(StatusCode::NOT_FOUND, what.into())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Parameter(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

type Shared = Arc<CaseIndex>;

fn lookup<'a>(index: &'a CaseIndex, id: &str) -> Result<&'a ScoredCase, ApiError> {
    index.get(id).ok_or_else(|| ApiError::not_found(format!("unknown case {id}")))
}

async fn list_cases(State(index): State<Shared>) -> Json<Vec<CaseEntry>> {
    Json(
        index
            .iter()
            .map(|c| CaseEntry {
                id: c.data.id().to_string(),
                grade: c.data.record.grade,
                diagnosis: c.data.record.diagnosis,
                score: c.scores.case.value,
            })
            .collect(),
    )
}

async fn meta(State(index): State<Shared>, Path(id): Path<String>) -> Result<Json<CaseMeta>, ApiError> {
    Ok(Json(case_meta(lookup(&index, &id)?)))
}

#[derive(Debug, Default, Deserialize)]
struct LayerQuery {
    layer: Option<String>,
}

async fn slice_png(
    State(index): State<Shared>,
    Path((id, plane, slice)): Path<(String, String, String)>,
    Query(q): Query<LayerQuery>,
) -> Result<Response, ApiError> {
    let case = lookup(&index, &id)?;
    let plane: Plane = plane.parse().map_err(|_| ApiError::not_found(format!("unknown plane {plane}")))?;
    let slice: usize = slice.parse().map_err(|_| ApiError::not_found(format!("bad slice index {slice}")))?;
    if slice >= case.data.volume.num_slices(plane) {
        return Err(ApiError::not_found(format!("{plane} slice {slice} out of range")));
    }
    let grid = match q.layer.as_deref().unwrap_or("image") {
        "image" => case.data.volume.slice(plane, slice)?,
        "heatmap" => case.heat.grid().slice(plane, slice)?,
        other => return Err(ApiError::not_found(format!("unknown layer {other}"))),
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], render_png(&grid)).into_response())
}

#[derive(Debug, Clone, Deserialize)]
struct SegmentRequest {
    threshold: f64,
    #[serde(default)]
    refine: bool,
}

async fn segment(
    State(index): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<SegmentRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<SegmentationSummary>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let index = index.clone();
    let summary = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let case = lookup(&index, &id)?;
        Ok(segmentation_summary(case, req.threshold, req.refine)?)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(summary))
}

pub fn router(index: Arc<CaseIndex>) -> Router {
    let api = Router::new()
        .route("/cases", get(list_cases))
        .route("/cases/{id}/meta", get(meta))
        .route("/cases/{id}/slices/{plane}/{index}", get(slice_png))
        .route("/cases/{id}/segment", post(segment))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(index);
    Router::new().nest("/api", api)
}

/// Serves the index until the process is stopped.
pub async fn serve(index: CaseIndex, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    log::info!("serving {} cases on http://{addr}/api", index.len());
    axum::serve(listener, router(Arc::new(index)))
        .await
        .map_err(|e| Error::io(addr.to_string(), e))
}
