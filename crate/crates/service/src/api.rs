use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use dressup_core::tweaking::{Attribute, Tweak, TweakKind, TweakPayload};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::manager::SessionManager;
use crate::session::{GarmentOrigin, PersonSource};

pub const CHECKPOINT_HEADER: &str = "x-model-checkpoint";
pub const CACHE_HEADER: &str = "x-render-cache";

/// JSON body whose decode errors come back in the API error format, naming the field.
pub struct JsonBody<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_body", e.body_text()))?;
        let de = &mut serde_json::Deserializer::from_slice(&bytes);
        serde_path_to_error::deserialize(de)
            .map(JsonBody)
            .map_err(|e| {
                let path = e.path().to_string();
                let inner = e.into_inner();
                if inner.is_syntax() || inner.is_eof() {
                    return ApiError::new(
                        StatusCode::BAD_REQUEST,
                        "invalid_json",
                        inner.to_string(),
                    );
                }
                let err = ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "validation_error",
                    inner.to_string(),
                );
                if path == "." {
                    err
                } else {
                    err.with_field(path)
                }
            })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub person: PersonSource,
    /// Labels of the person's own garments, bottom layer first.
    #[serde(default)]
    pub order: Option<Vec<u8>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AddGarmentRequest {
    pub source: GarmentOrigin,
    pub label: u8,
    /// Insert position, default the top of the stack.
    #[serde(default)]
    pub position: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReorderRequest {
    /// New position `i` holds old garment `permutation[i]`.
    pub permutation: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TweakMode {
    #[default]
    Append,
    /// Replace the last tweak with the same kind and garment, else append.
    Replace,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TweakRequest {
    pub kind: TweakKind,
    pub magnitude: f64,
    pub target_garment: usize,
    #[serde(default)]
    pub payload: Option<TweakPayload>,
    #[serde(default)]
    pub mode: TweakMode,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DirectionInfo {
    pub id: String,
    pub attribute: Attribute,
    pub fit_accuracy: f64,
    pub train_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub checkpoint_id: Option<String>,
}

type AppState = Arc<SessionManager>;

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/directions", get(directions))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/garments", post(add_garment))
        .route("/sessions/{id}/garments/{index}/thumbnail", get(thumbnail))
        .route("/sessions/{id}/reorder", post(reorder))
        .route("/sessions/{id}/tweaks", post(add_tweak))
        .route("/sessions/{id}/tweaks/last", delete(remove_last_tweak))
        .route("/sessions/{id}/render", get(render))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(manager)
}

async fn health(State(m): State<AppState>) -> Json<Health> {
    let ck = m.engine.checkpoint_id().map(str::to_string);
    Json(Health {
        status: "ok".into(),
        model_loaded: ck.is_some(),
        checkpoint_id: ck,
    })
}

async fn directions(State(m): State<AppState>) -> Json<Vec<DirectionInfo>> {
    Json(
        m.engine
            .directions
            .iter()
            .map(|(id, d)| DirectionInfo {
                id: id.clone(),
                attribute: d.attribute,
                fit_accuracy: d.fit_accuracy,
                train_count: d.train_count,
            })
            .collect(),
    )
}

async fn create_session(
    State(m): State<AppState>,
    JsonBody(req): JsonBody<CreateSessionRequest>,
) -> ApiResult<Response> {
    let view = m.create(req.person, req.order).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(m): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(m.get(&id).await?).into_response())
}

async fn add_garment(
    State(m): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<AddGarmentRequest>,
) -> ApiResult<Response> {
    Ok(Json(
        m.add_garment(&id, req.source, req.label, req.position)
            .await?,
    )
    .into_response())
}

async fn reorder(
    State(m): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<ReorderRequest>,
) -> ApiResult<Response> {
    Ok(Json(m.reorder(&id, req.permutation).await?).into_response())
}

async fn add_tweak(
    State(m): State<AppState>,
    Path(id): Path<String>,
    JsonBody(req): JsonBody<TweakRequest>,
) -> ApiResult<Response> {
    let tweak = Tweak {
        kind: req.kind,
        magnitude: req.magnitude,
        target_garment: req.target_garment,
        payload: req.payload,
    };
    let view = m
        .push_tweak(&id, tweak, req.mode == TweakMode::Replace)
        .await?;
    Ok(Json(view).into_response())
}

async fn remove_last_tweak(
    State(m): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    Ok(Json(m.pop_tweak(&id).await?).into_response())
}

fn png_response(m: &SessionManager, png: Vec<u8>, cached: Option<bool>) -> Response {
    let mut resp = ([(header::CONTENT_TYPE, "image/png")], png).into_response();
    let h = resp.headers_mut();
    if let Some(ck) = m
        .engine
        .checkpoint_id()
        .and_then(|c| HeaderValue::from_str(c).ok())
    {
        h.insert(CHECKPOINT_HEADER, ck);
    }
    if let Some(hit) = cached {
        h.insert(
            CACHE_HEADER,
            HeaderValue::from_static(if hit { "hit" } else { "miss" }),
        );
    }
    resp
}

async fn render(State(m): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (png, cached) = m.render(&id).await?;
    Ok(png_response(&m, png, Some(cached)))
}

async fn thumbnail(
    State(m): State<AppState>,
    Path((id, index)): Path<(String, usize)>,
) -> ApiResult<Response> {
    let png = m.thumbnail(&id, index).await?;
    Ok(png_response(&m, png, None))
}
