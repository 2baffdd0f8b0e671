//! HTTP facade over the overlay engine: datasets, simulation jobs and map
//! tiles.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/api/datasets` | registered datasets |
//! | GET | `/api/datasets/{name}/hillshade/{z}/{x}/{y}.png` | base layer tile |
//! | GET | `/api/schema` | accepted parameter ranges |
//! | POST | `/api/simulate` | run a workflow, returns a job summary |
//! | GET | `/api/jobs/{id}` | job summary |
//! | GET | `/api/jobs/{id}/tiles/{z}/{x}/{y}.png` | overlay tile |
//! | GET | `/api/jobs/{id}/export/{layer}.asc` | `z_delta_max` or `hit_count` grid |

mod api;
mod jobs;
mod registry;

pub use api::{router, ApiError, AppState, ServiceConfig};
pub use jobs::{Job, JobKind, JobLookup, JobStats, JobStore, DEFAULT_MAX_JOBS};
pub use registry::{Dataset, DatasetRegistry, DatasetSummary, RegistryError, DEM_FILE, RELEASE_FILE};

/// Serves `state` on `listener` until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
