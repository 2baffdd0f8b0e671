//! Terrain overlay compute engine.
//!
//! DEM rasters flow through node-graph workflows ([`workflow`]) that derive
//! terrain quantities ([`terrain`]), run snow-cover and Monte-Carlo
//! avalanche simulations ([`simulate`]) and emit multi-resolution RGBA
//! overlays ([`overlay`]).

pub mod dem;
pub mod overlay;
pub mod par;
pub mod rng;
pub mod simulate;
pub mod terrain;
pub mod workflow;

pub use dem::{DemError, DemGrid, RegionAABB, TileId};
pub use overlay::{MipPyramid, OverlayError, OverlayTexture};
pub use par::Parallelism;
pub use simulate::{AvalancheParams, ReleaseMask, RunoutRaster, SimError, SnowParams};
pub use workflow::WorkflowError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dem(#[from] DemError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("invalid parameters: {0}")]
    Params(String),
}

impl Error {
    /// The texture-size violation behind this error, if that is its cause.
    pub fn texture_limit(&self) -> Option<&OverlayError> {
        match self {
            Error::Overlay(e @ OverlayError::TooLarge { .. }) => Some(e),
            Error::Sim(SimError::Overlay(e @ OverlayError::TooLarge { .. })) => Some(e),
            Error::Workflow(WorkflowError::NodeFailed { source, .. }) => source.texture_limit(),
            _ => None,
        }
    }
}
