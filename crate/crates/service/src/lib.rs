//! Read-only HTTP service over one scene index.
//!
//! | route | method | body |
//! |-------|--------|------|
//! | `/health` | GET | `{"ok":true}` |
//! | `/scene` | GET | metadata JSON |
//! | `/scene/points` | GET | `u32` N, then N × (3 `f32` position, 3 `u8` color), little-endian |
//! | `/query` | POST | [`QueryRequest`] → [`QueryResponse`] |
//! | `/node/{id}` | GET | [`NodeInfo`] |
//!
//! Errors are `{"error": message}` with status 400 (bad body, unknown mode,
//! wrong dimension), 404 (unknown node or route) or 503 (text query without
//! a text provider).

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use scenehier_core::embed::EmbeddingProvider;
use scenehier_core::model::{read_tree, NodeId, NodeKind, PointCloud, SceneTree};
use scenehier_core::query::{top_k, SceneIndex};
use scenehier_core::{Error, ScoreMode};

const DEFAULT_COLOR: [u8; 3] = [180, 180, 180];

/// Everything a request handler reads. Immutable after construction.
pub struct ServiceState {
    pub tree: SceneTree,
    pub index: SceneIndex,
    pub cloud: PointCloud,
    pub text: Option<Arc<dyn EmbeddingProvider>>,
}

impl ServiceState {
    pub fn new(tree: SceneTree, cloud: PointCloud, text: Option<Arc<dyn EmbeddingProvider>>) -> scenehier_core::Result<Self> {
        if cloud.len() != tree.num_points as usize {
            return Err(Error::LengthMismatch { expected: tree.num_points as usize, actual: cloud.len() });
        }
        if let Some(p) = &text {
            if p.dim() != tree.dim as usize {
                return Err(Error::DimMismatch { expected: tree.dim as usize, actual: p.dim() });
            }
        }
        let index = SceneIndex::new(&tree);
        Ok(Self { tree, index, cloud, text })
    }

    pub fn load(tree: &Path, cloud: &Path, text: Option<Arc<dyn EmbeddingProvider>>) -> scenehier_core::Result<Self> {
        Self::new(read_tree(tree)?, scenehier_core::io::load_point_cloud(cloud)?, text)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub include_heatmap: bool,
}

fn default_mode() -> String {
    "avg".into()
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub score: f64,
    pub point_count: usize,
}

/// Per-point scores as `u8` levels over `[min, max]`, base64 encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireHeatmap {
    pub min: f64,
    pub max: f64,
    pub values: String,
}

impl WireHeatmap {
    pub fn levels(&self) -> Result<Vec<u8>, base64::DecodeError> {
        base64::engine::general_purpose::STANDARD.decode(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub mode: ScoreMode,
    pub nodes: Vec<RankedNode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<WireHeatmap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Parent object for segments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<NodeId>,
    /// Segment ids for objects.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeId>,
    pub point_indices: Vec<u32>,
    pub feature_norm: f64,
    pub observed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub scene_id: String,
    pub num_points: usize,
    pub num_objects: usize,
    pub num_segments: usize,
    pub dim: usize,
    pub points: String,
}

/// Maps scores to `round(255 (s - min) / (max - min))`; a constant field
/// maps to 0.
pub fn quantize(scores: &[f64]) -> (Vec<u8>, f64, f64) {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() {
        return (Vec::new(), 0.0, 0.0);
    }
    let span = max - min;
    let q = scores
        .iter()
        .map(|&s| if span > 0.0 { ((s - min) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    (q, min, max)
}

pub fn dequantize(levels: &[u8], min: f64, max: f64) -> Vec<f64> {
    levels.iter().map(|&l| min + (max - min) * l as f64 / 255.0).collect()
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// The `/scene/points` payload.
pub fn encode_points(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + cloud.len() * 15);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for (i, p) in cloud.positions.iter().enumerate() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let c = cloud.colors.as_ref().map_or(DEFAULT_COLOR, |c| c[i].map(to_u8));
        out.extend_from_slice(&c);
    }
    out
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

type Shared = Arc<ServiceState>;

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "ok": true }))
}

async fn scene(State(s): State<Shared>) -> Json<SceneInfo> {
    Json(SceneInfo {
        scene_id: s.tree.scene_id.clone(),
        num_points: s.cloud.len(),
        num_objects: s.tree.objects.len(),
        num_segments: s.tree.segments.len(),
        dim: s.tree.dim as usize,
        points: "/scene/points".into(),
    })
}

async fn points(State(s): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "application/octet-stream")], encode_points(&s.cloud)).into_response()
}

/// Scores one request against the shared index.
pub fn run_query(state: &ServiceState, req: &QueryRequest) -> Result<QueryResponse, (u16, String)> {
    let mode: ScoreMode = req.mode.parse().map_err(|e: Error| (400, e.to_string()))?;
    let embedding = match (&req.text, &req.embedding) {
        (Some(_), Some(_)) => return Err((400, "give either text or embedding, not both".into())),
        (None, None) => return Err((400, "missing text or embedding".into())),
        (None, Some(e)) => e.clone(),
        (Some(t), None) => match &state.text {
            Some(p) if p.has_text() => p.embed_text(t).map_err(|e| (500, e.to_string()))?,
            _ => return Err((503, "no text embedding provider; send an embedding instead".into())),
        },
    };
    let result = state.index.score(&embedding, mode).map_err(|e| (400, e.to_string()))?;
    let heatmap = req.include_heatmap.then(|| {
        let (q, min, max) = quantize(&state.index.heatmap(&result));
        WireHeatmap { min, max, values: base64::engine::general_purpose::STANDARD.encode(q) }
    });
    let nodes = top_k(&result, req.k)
        .nodes
        .into_iter()
        .map(|n| {
            let point_count = match n.kind {
                NodeKind::Object => state.tree.object(n.id).map_or(0, |o| o.mask.len()),
                NodeKind::Segment => state.tree.segment(n.id).map_or(0, |s| s.mask.len()),
            };
            RankedNode { id: n.id, kind: n.kind, score: n.score, point_count }
        })
        .collect();
    Ok(QueryResponse { mode, nodes, heatmap })
}

async fn query(State(s): State<Shared>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let req: QueryRequest = serde_json::from_slice(&body).map_err(|e| bad_request(format!("malformed request: {e}")))?;
    run_query(&s, &req).map(Json).map_err(|(code, msg)| {
        ApiError(StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), msg)
    })
}

async fn node(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<NodeInfo>, ApiError> {
    let id: NodeId = id.parse().map_err(|_| bad_request(format!("node id {id:?} is not an integer")))?;
    if let Some(o) = s.tree.object(id) {
        return Ok(Json(NodeInfo {
            id,
            kind: NodeKind::Object,
            parent: None,
            children: s.tree.segments_of(id).map(|c| c.id).collect(),
            point_indices: o.mask.point_indices.clone(),
            feature_norm: o.feature.norm(),
            observed: o.feature.observed,
        }));
    }
    if let Some(seg) = s.tree.segment(id) {
        return Ok(Json(NodeInfo {
            id,
            kind: NodeKind::Segment,
            parent: Some(seg.mask.parent_object),
            children: Vec::new(),
            point_indices: seg.mask.point_indices.clone(),
            feature_norm: seg.feature.norm(),
            observed: seg.feature.observed,
        }));
    }
    Err(ApiError(StatusCode::NOT_FOUND, format!("no node {id}")))
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such route".into())
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scene", get(scene))
        .route("/scene/points", get(points))
        .route("/query", post(query))
        .route("/node/{id}", get(node))
        .fallback(not_found)
        .with_state(state)
}

/// Serves on an already bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds `addr` (port 0 picks a free one) and serves in a background task.
pub async fn spawn(addr: SocketAddr, state: Shared) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    log::info!("serving {} on http://{local}", state.tree.scene_id);
    Ok((local, tokio::spawn(serve(listener, state))))
}
