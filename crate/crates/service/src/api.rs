//! Routes and handlers.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use geoverlay_core::dem::{crop_window, write_ascii_grid};
use geoverlay_core::overlay::{check_texture_size, encode_png, extract_tile, DEFAULT_TILE_PX, MAX_TEXTURE_SIZE};
use geoverlay_core::simulate::{FieldError, ParamSpec};
use geoverlay_core::workflow::{
    build_avalanche_graph, build_snow_graph, node_ids, DatasetSource, ExecutionResult, ReleaseBand, ReleaseSource,
};
use geoverlay_core::{AvalancheParams, Error, MipPyramid, Parallelism, RegionAABB, SimError, SnowParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::jobs::{Job, JobKind, JobLookup, JobStats, JobStore, DEFAULT_MAX_JOBS};
use crate::registry::{Dataset, DatasetRegistry};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_jobs: usize,
    /// Directory with the built UI bundle, served at `/`.
    pub ui_dir: Option<PathBuf>,
    pub parallelism: Parallelism,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_jobs: DEFAULT_MAX_JOBS,
            ui_dir: None,
            parallelism: Parallelism::Auto,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    registry: DatasetRegistry,
    jobs: RwLock<JobStore>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(mut registry: DatasetRegistry, config: ServiceConfig) -> Self {
        registry.set_parallelism(config.parallelism);
        Self {
            inner: Arc::new(Inner {
                registry,
                jobs: RwLock::new(JobStore::new(config.max_jobs)),
                config,
            }),
        }
    }

    pub fn registry(&self) -> &DatasetRegistry {
        &self.inner.registry
    }

    fn jobs_read(&self) -> std::sync::RwLockReadGuard<'_, JobStore> {
        self.inner.jobs.read().unwrap_or_else(|e| e.into_inner())
    }

    fn lookup(&self, id: &str) -> Result<Arc<Job>, ApiError> {
        match self.jobs_read().get(id) {
            JobLookup::Found(j) => Ok(j),
            JobLookup::Evicted => Err(ApiError::new(StatusCode::GONE, format!("job `{id}` was evicted; re-run it"))),
            JobLookup::Unknown => Err(ApiError::not_found(format!("unknown job `{id}`"))),
        }
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/datasets", get(list_datasets))
        .route("/api/datasets/{name}", get(get_dataset))
        .route("/api/datasets/{name}/hillshade/{z}/{x}/{y}", get(hillshade_tile))
        .route("/api/schema", get(schema))
        .route("/api/simulate", post(simulate))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/tiles/{z}/{x}/{y}", get(job_tile))
        .route("/api/jobs/{id}/export/{layer}", get(export_layer));
    let app = match &state.inner.config.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_index)),
    };
    app.with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    fields: Vec<FieldError>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            fields: Vec::new(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(field: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            fields: vec![FieldError {
                field: field.to_string(),
                message: message.clone(),
            }],
            message,
        }
    }

    fn fields(fields: Vec<FieldError>) -> Self {
        let message = fields
            .iter()
            .map(|f| format!("{}: {}", f.field, f.message))
            .collect::<Vec<_>>()
            .join("; ");
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            message,
            fields,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        if let Some(limit) = e.texture_limit() {
            return ApiError::unprocessable("region", limit.to_string());
        }
        let mut cur = &e;
        while let Error::Workflow(geoverlay_core::WorkflowError::NodeFailed { source, .. }) = cur {
            cur = source;
        }
        match cur {
            Error::Sim(SimError::InvalidParams(f)) => ApiError::fields(f.clone()),
            Error::Params(m) => ApiError::unprocessable("params", m.clone()),
            Error::Dem(d) => ApiError::unprocessable("region", d.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.message, "fields": self.fields })),
        )
            .into_response()
    }
}

async fn placeholder_index() -> Html<&'static str> {
    Html("<!doctype html><title>geoverlay</title><p>UI bundle not configured. The API lives under <code>/api</code>.</p>")
}

async fn list_datasets(State(s): State<AppState>) -> Json<Value> {
    let list: Vec<_> = s.registry().iter().map(|d| d.summary()).collect();
    Json(json!(list))
}

fn dataset<'a>(s: &'a AppState, name: &str) -> Result<&'a Arc<Dataset>, ApiError> {
    s.registry()
        .get(name)
        .ok_or_else(|| ApiError::not_found(format!("unknown dataset `{name}`")))
}

async fn get_dataset(State(s): State<AppState>, Path(name): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(json!(dataset(&s, &name)?.summary())))
}

#[derive(Serialize)]
struct Schema {
    avalanche: Vec<ParamSpec>,
    snow: Vec<ParamSpec>,
    release: ReleaseBand,
    max_texture_size: usize,
    tile_size: usize,
    max_jobs: usize,
}

async fn schema(State(s): State<AppState>) -> Json<Value> {
    Json(json!(Schema {
        avalanche: AvalancheParams::schema(),
        snow: SnowParams::schema(),
        release: ReleaseBand::default(),
        max_texture_size: MAX_TEXTURE_SIZE,
        tile_size: DEFAULT_TILE_PX,
        max_jobs: s.inner.config.max_jobs,
    }))
}

fn parse_tile(z: &str, x: &str, y: &str) -> Result<(u32, u32, u32), ApiError> {
    let bad = || ApiError::not_found("bad tile path");
    let y = y.strip_suffix(".png").ok_or_else(bad)?;
    let n = |s: &str| s.parse::<u32>().map_err(|_| bad());
    Ok((n(z)?, n(x)?, n(y)?))
}

fn tile_response(pyr: &MipPyramid, (z, x, y): (u32, u32, u32)) -> Result<Response, ApiError> {
    let tile = extract_tile(pyr, z, x, y, DEFAULT_TILE_PX).map_err(|e| ApiError::not_found(e.to_string()))?;
    let png = encode_png(&tile).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        png,
    )
        .into_response())
}

async fn hillshade_tile(
    State(s): State<AppState>,
    Path((name, z, x, y)): Path<(String, String, String, String)>,
) -> Result<Response, ApiError> {
    let ds = dataset(&s, &name)?.clone();
    let tile = parse_tile(&z, &x, &y)?;
    let pyr = tokio::task::spawn_blocking(move || ds.hillshade())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    tile_response(&pyr, tile)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateRequest {
    dataset: String,
    #[serde(default)]
    kind: JobKind,
    #[serde(default)]
    params: Value,
    seed: Option<u64>,
    region: Option<RegionAABB>,
    /// Steepness band; the dataset's own mask is used when absent.
    release: Option<ReleaseBand>,
}

fn parse_params<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, ApiError> {
    let v = if v.is_null() { json!({}) } else { v };
    serde_json::from_value(v).map_err(|e| {
        let msg = e.to_string();
        // serde names the offending key in unknown-field errors.
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("unknown field"))
            .unwrap_or("params")
            .to_string();
        ApiError::unprocessable(&field, msg)
    })
}

enum Plan {
    Avalanche(AvalancheParams, ReleaseSource),
    Snow(SnowParams),
}

async fn simulate(State(s): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: SimulateRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) if e.is_syntax() || e.is_eof() => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}")))
        }
        Err(e) => return Err(ApiError::unprocessable("body", e.to_string())),
    };
    let ds = dataset(&s, &req.dataset)?.clone();

    let plan = match req.kind {
        JobKind::Avalanche => {
            let mut p: AvalancheParams = parse_params(req.params)?;
            if let Some(seed) = req.seed {
                p.seed = seed;
            }
            let errs = p.field_errors();
            if !errs.is_empty() {
                return Err(ApiError::fields(errs));
            }
            let release = match (req.release, &ds.release) {
                (Some(b), _) => {
                    if !(0.0 <= b.min_deg && b.min_deg < b.max_deg && b.max_deg <= 90.0) || b.stride < 1 {
                        return Err(ApiError::unprocessable(
                            "release",
                            "need 0 <= min_deg < max_deg <= 90 and stride >= 1",
                        ));
                    }
                    ReleaseSource::Steepness {
                        min_deg: b.min_deg,
                        max_deg: b.max_deg,
                        stride: b.stride,
                    }
                }
                (None, Some(mask)) => ReleaseSource::Mask(mask.clone()),
                (None, None) => ReleaseSource::default(),
            };
            Plan::Avalanche(p, release)
        }
        JobKind::Snow => {
            let p: SnowParams = parse_params(req.params)?;
            let errs = p.field_errors();
            if !errs.is_empty() {
                return Err(ApiError::fields(errs));
            }
            Plan::Snow(p)
        }
    };

    let region = req.region.unwrap_or_else(|| ds.dem.extent());
    region
        .validate()
        .map_err(|e| ApiError::unprocessable("region", e.to_string()))?;
    // Reject oversized overlays before doing any work.
    let w = crop_window(&ds.dem, &region).map_err(|e| ApiError::unprocessable("region", e.to_string()))?;
    check_texture_size(w.ncols, w.nrows).map_err(|e| ApiError::unprocessable("region", e.to_string()))?;

    let source = DatasetSource::new(ds.dem.clone());
    let (graph, seed) = match &plan {
        Plan::Avalanche(p, release) => (build_avalanche_graph(region, &source, p, release)?, Some(p.seed)),
        Plan::Snow(p) => (build_snow_graph(region, &source, p)?, None),
    };
    let executor = ds.executor().lock_owned().await;
    let result: Result<ExecutionResult, Error> = tokio::task::spawn_blocking(move || {
        let mut executor = executor;
        executor.execute(&graph).map_err(Error::from)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let result = result?;

    let terminal = match req.kind {
        JobKind::Avalanche => node_ids::OVERLAY,
        JobKind::Snow => node_ids::SNOW,
    };
    let internal = |what: &str| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("missing {what}"));
    let pyramid = result
        .get(terminal, "pyramid")
        .and_then(|r| r.as_pyramid())
        .ok_or_else(|| internal("pyramid"))?;
    let dem = result
        .get(node_ids::STITCH, "dem")
        .and_then(|r| r.as_dem())
        .ok_or_else(|| internal("stitched DEM"))?;
    let runout = result
        .get(node_ids::TRAJECTORIES, "runout")
        .and_then(|r| r.as_runout())
        .map(|r| Arc::new(r.clone()));
    let stats = JobStats {
        particles: runout.as_ref().map(|r| r.particles),
        model_runtime_ms: result.report.total_ms,
        z_delta_max_global: runout.as_ref().map(|r| r.z_delta_max_global()),
        total_steps: runout.as_ref().map(|r| r.total_steps),
    };
    let (bounds, cellsize) = (dem.extent(), dem.cellsize());
    let pyramid = Arc::new(pyramid.clone());
    let job = s
        .inner
        .jobs
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .insert(|id| Job {
            id,
            dataset: ds.name.clone(),
            kind: req.kind,
            seed,
            bounds,
            cellsize,
            pyramid,
            runout,
            report: result.report.clone(),
            stats,
        });
    Ok(Json(job_summary(&job)))
}

fn job_summary(job: &Job) -> Value {
    let base = job.pyramid.base();
    json!({
        "job_id": job.id,
        "dataset": job.dataset,
        "kind": job.kind,
        "seed": job.seed,
        "stats": job.stats,
        "tile_url": format!("/api/jobs/{}/tiles/{{z}}/{{x}}/{{y}}.png", job.id),
        "tile_size": DEFAULT_TILE_PX,
        "max_zoom": job.pyramid.max_zoom(DEFAULT_TILE_PX),
        "width": base.width(),
        "height": base.height(),
        "bounds": job.bounds,
        "cellsize": job.cellsize,
        "report": job.report,
    })
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let job = s.lookup(&id)?;
    Ok(Json(job_summary(&job)))
}

async fn job_tile(
    State(s): State<AppState>,
    Path((id, z, x, y)): Path<(String, String, String, String)>,
) -> Result<Response, ApiError> {
    let job = s.lookup(&id)?;
    tile_response(&job.pyramid, parse_tile(&z, &x, &y)?)
}

async fn export_layer(
    State(s): State<AppState>,
    Path((id, layer)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let job = s.lookup(&id)?;
    let unknown = || ApiError::not_found(format!("unknown layer `{layer}`"));
    let name = layer.strip_suffix(".asc").ok_or_else(unknown)?;
    let runout = job
        .runout
        .as_ref()
        .ok_or_else(|| ApiError::not_found("snow jobs have no raster layers"))?;
    let grid = match name {
        "z_delta_max" => runout.z_delta_max_grid(),
        "hit_count" => runout.hit_count_grid(),
        _ => return Err(unknown()),
    }
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], write_ascii_grid(&grid)).into_response())
}
