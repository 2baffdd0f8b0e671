//! Standard avalanche and snow graphs.

use std::sync::Arc;

use serde_json::json;

use super::ops::{ColorizeParams, ReleaseBand, ZoomParams};
use super::{Binding, Graph, NodeSpec, Resource};
use crate::dem::{self, DemError, DemGrid, RegionAABB};
use crate::simulate::{AvalancheParams, ReleaseMask, SnowParams};

pub mod node_ids {
    pub const SELECT_TILES: &str = "select_tiles";
    pub const FETCH_TILES: &str = "fetch_tiles";
    pub const STITCH: &str = "stitch";
    pub const NORMALS: &str = "normals";
    pub const RELEASE_POINTS: &str = "release_points";
    pub const TRAJECTORIES: &str = "trajectories";
    pub const OVERLAY: &str = "overlay";
    pub const SNOW: &str = "snow";
}

pub mod source_names {
    pub const REGION: &str = "region";
    pub const WORLD: &str = "world";
    pub const DATASET: &str = "dataset";
    pub const RELEASE_MASK: &str = "release_mask";
}

use node_ids::*;
use source_names as src;

/// A dataset raster whose extent is the tiling world.
#[derive(Debug, Clone)]
pub struct DatasetSource {
    pub dem: Arc<DemGrid>,
    /// Quadtree zoom used to fetch tiles; see [`choose_tile_zoom`].
    pub tile_zoom: u32,
}

impl DatasetSource {
    pub fn new(dem: Arc<DemGrid>) -> Self {
        let tile_zoom = choose_tile_zoom(&dem);
        Self { dem, tile_zoom }
    }
}

#[derive(Debug, Clone)]
pub enum ReleaseSource {
    /// Release where the slope lies in a band, on a `stride` lattice.
    Steepness { min_deg: f64, max_deg: f64, stride: usize },
    /// Explicit mask over the whole dataset or over the cropped region.
    Mask(Arc<ReleaseMask>),
}

impl Default for ReleaseSource {
    fn default() -> Self {
        let b = ReleaseBand::default();
        ReleaseSource::Steepness {
            min_deg: b.min_deg,
            max_deg: b.max_deg,
            stride: b.stride,
        }
    }
}

/// Largest zoom up to 3 that splits the grid evenly into tiles of at least
/// 2x2 cells.
pub fn choose_tile_zoom(dem: &DemGrid) -> u32 {
    (0..=3u32)
        .rev()
        .find(|&z| {
            let n = 1usize << z;
            dem.ncols().is_multiple_of(n) && dem.nrows().is_multiple_of(n) && dem.ncols() / n >= 2 && dem.nrows() / n >= 2
        })
        .unwrap_or(0)
}

fn terrain_prefix(g: &mut Graph, region: RegionAABB, dataset: &DatasetSource) {
    let zoom = serde_json::to_value(ZoomParams { zoom: dataset.tile_zoom }).expect("params serialize");
    g.bind(src::REGION, Resource::Region(region));
    g.bind(src::WORLD, Resource::Region(dataset.dem.extent()));
    g.bind(src::DATASET, Resource::DemGrid(dataset.dem.clone()));
    g.add_node(
        NodeSpec::new(SELECT_TILES, "select_tiles", zoom.clone())
            .input("region", Binding::source(src::REGION))
            .input("world", Binding::source(src::WORLD)),
    );
    g.add_node(
        NodeSpec::new(FETCH_TILES, "fetch_tiles", json!({}))
            .input("tiles", Binding::node(SELECT_TILES, "tiles"))
            .input("dataset", Binding::source(src::DATASET)),
    );
    g.add_node(
        NodeSpec::new(STITCH, "stitch", zoom)
            .input("tiles", Binding::node(FETCH_TILES, "tiles"))
            .input("region", Binding::source(src::REGION)),
    );
    g.add_node(NodeSpec::new(NORMALS, "compute_normals", json!({})).input("dem", Binding::node(STITCH, "dem")));
}

/// Tiles, stitch, normals, release, trajectories and overlay.
pub fn build_avalanche_graph(
    region: RegionAABB,
    dataset: &DatasetSource,
    params: &AvalancheParams,
    release: &ReleaseSource,
) -> Result<Graph, crate::Error> {
    region.validate()?;
    params.validate()?;
    let mut g = Graph::new();
    terrain_prefix(&mut g, region, dataset);
    let mask_binding = match release {
        ReleaseSource::Steepness {
            min_deg,
            max_deg,
            stride,
        } => {
            let band = ReleaseBand {
                min_deg: *min_deg,
                max_deg: *max_deg,
                stride: *stride,
            };
            g.add_node(
                NodeSpec::new(RELEASE_POINTS, "release_points", serde_json::to_value(band).expect("serialize"))
                    .input("slope", Binding::node(NORMALS, "slope")),
            );
            Binding::node(RELEASE_POINTS, "mask")
        }
        ReleaseSource::Mask(mask) => {
            let mask = align_mask(mask, &dataset.dem, &region)?;
            g.bind(src::RELEASE_MASK, Resource::ReleaseMask(mask));
            Binding::source(src::RELEASE_MASK)
        }
    };
    g.add_node(
        NodeSpec::new(TRAJECTORIES, "trajectories", serde_json::to_value(params).expect("serialize"))
            .input("dem", Binding::node(STITCH, "dem"))
            .input("mask", mask_binding),
    );
    g.add_node(
        NodeSpec::new(
            OVERLAY,
            "colorize_overlay",
            serde_json::to_value(ColorizeParams::default()).expect("serialize"),
        )
        .input("runout", Binding::node(TRAJECTORIES, "runout")),
    );
    Ok(g)
}

/// Tiles, stitch, normals and snow cover. The first four nodes match the
/// avalanche graph, so an executor shares their cached outputs.
pub fn build_snow_graph(
    region: RegionAABB,
    dataset: &DatasetSource,
    params: &SnowParams,
) -> Result<Graph, crate::Error> {
    region.validate()?;
    params.validate()?;
    let mut g = Graph::new();
    terrain_prefix(&mut g, region, dataset);
    g.add_node(
        NodeSpec::new(SNOW, "snow_cover", serde_json::to_value(params).expect("serialize"))
            .input("dem", Binding::node(STITCH, "dem"))
            .input("normals", Binding::node(NORMALS, "normals")),
    );
    Ok(g)
}

/// Crops a dataset-sized mask to the region; region-sized masks pass.
fn align_mask(mask: &Arc<ReleaseMask>, dataset: &DemGrid, region: &RegionAABB) -> Result<Arc<ReleaseMask>, DemError> {
    let w = dem::crop_window(dataset, region)?;
    if mask.ncols == w.ncols && mask.nrows == w.nrows {
        return Ok(mask.clone());
    }
    if mask.ncols == dataset.ncols() && mask.nrows == dataset.nrows() {
        return Ok(Arc::new(mask.window(w)));
    }
    Err(DemError::Invalid(format!(
        "release mask {}x{} matches neither the dataset {}x{} nor the region {}x{}",
        mask.ncols,
        mask.nrows,
        dataset.ncols(),
        dataset.nrows(),
        w.ncols,
        w.nrows
    )))
}
