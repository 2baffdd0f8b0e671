//! Operation registry and the built-in terrain operations.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::resource::{Resource, ResourceKind};
use crate::dem;
use crate::overlay::{self, Colormap};
use crate::par::Parallelism;
use crate::simulate::{self, AvalancheParams, SnowParams};
use crate::terrain;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortSpec {
    pub name: &'static str,
    pub kind: ResourceKind,
}

pub const fn port(name: &'static str, kind: ResourceKind) -> PortSpec {
    PortSpec { name, kind }
}

pub type Inputs = BTreeMap<String, Resource>;
pub type Outputs = BTreeMap<String, Resource>;

/// Execution settings handed to every node. They never change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpContext {
    pub parallelism: Parallelism,
}

pub trait Operation: Send + Sync {
    fn name(&self) -> &str;
    fn inputs(&self) -> &[PortSpec];
    fn outputs(&self) -> &[PortSpec];

    fn validate_params(&self, _params: &Value) -> Result<(), String> {
        Ok(())
    }

    fn run(&self, ctx: &OpContext, params: &Value, inputs: &Inputs) -> Result<Outputs, Error>;
}

/// Operation backed by a closure; handy for ad-hoc graphs.
pub struct FnOp<F> {
    name: &'static str,
    inputs: Vec<PortSpec>,
    outputs: Vec<PortSpec>,
    f: F,
}

impl<F> FnOp<F>
where
    F: Fn(&Value, &Inputs) -> Result<Outputs, Error> + Send + Sync,
{
    pub fn new(name: &'static str, inputs: Vec<PortSpec>, outputs: Vec<PortSpec>, f: F) -> Self {
        Self {
            name,
            inputs,
            outputs,
            f,
        }
    }
}

impl<F> Operation for FnOp<F>
where
    F: Fn(&Value, &Inputs) -> Result<Outputs, Error> + Send + Sync,
{
    fn name(&self) -> &str {
        self.name
    }
    fn inputs(&self) -> &[PortSpec] {
        &self.inputs
    }
    fn outputs(&self) -> &[PortSpec] {
        &self.outputs
    }
    fn run(&self, _ctx: &OpContext, params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        (self.f)(params, inputs)
    }
}

#[derive(Clone, Default)]
pub struct Registry {
    ops: BTreeMap<String, Arc<dyn Operation>>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.ops.keys()).finish()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with every built-in operation.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(SelectTiles);
        r.register(FetchTiles);
        r.register(Stitch);
        r.register(ComputeNormals);
        r.register(ReleasePoints);
        r.register(Trajectories);
        r.register(ColorizeOverlay);
        r.register(SnowCover);
        r.register(Mipmap);
        r
    }

    pub fn register(&mut self, op: impl Operation + 'static) -> &mut Self {
        self.ops.insert(op.name().to_string(), Arc::new(op));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Operation>> {
        self.ops.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.ops.keys().map(|s| s.as_str())
    }
}

fn parse<T: DeserializeOwned>(params: &Value) -> Result<T, String> {
    let v = if params.is_null() {
        Value::Object(Default::default())
    } else {
        params.clone()
    };
    serde_json::from_value(v).map_err(|e| e.to_string())
}

fn params_of<T: DeserializeOwned>(params: &Value) -> Result<T, Error> {
    parse(params).map_err(Error::Params)
}

fn input<'a>(inputs: &'a Inputs, name: &str) -> Result<&'a Resource, Error> {
    inputs
        .get(name)
        .ok_or_else(|| Error::Params(format!("missing input `{name}`")))
}

macro_rules! take {
    ($inputs:expr, $name:literal, $acc:ident) => {
        input($inputs, $name)?
            .$acc()
            .ok_or_else(|| Error::Params(format!("input `{}` has the wrong kind", $name)))?
    };
}

fn outputs(items: impl IntoIterator<Item = (&'static str, Resource)>) -> Outputs {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZoomParams {
    pub zoom: u32,
}

/// Quadtree tiles of `world` that overlap `region`.
struct SelectTiles;

impl Operation for SelectTiles {
    fn name(&self) -> &str {
        "select_tiles"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 2] = [port("region", ResourceKind::Region), port("world", ResourceKind::Region)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("tiles", ResourceKind::TileSet)];
        &P
    }
    fn validate_params(&self, params: &Value) -> Result<(), String> {
        parse::<ZoomParams>(params).map(|_| ())
    }
    fn run(&self, _ctx: &OpContext, params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let p: ZoomParams = params_of(params)?;
        let region = take!(inputs, "region", as_region);
        let world = take!(inputs, "world", as_region);
        let tiles = dem::select_tiles(region, p.zoom, world)?;
        Ok(outputs([("tiles", Resource::TileSet(tiles))]))
    }
}

/// Cuts tiles out of the dataset raster.
struct FetchTiles;

impl Operation for FetchTiles {
    fn name(&self) -> &str {
        "fetch_tiles"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 2] = [port("tiles", ResourceKind::TileSet), port("dataset", ResourceKind::DemGrid)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("tiles", ResourceKind::Tiles)];
        &P
    }
    fn run(&self, _ctx: &OpContext, _params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let ids = take!(inputs, "tiles", as_tile_set);
        let dataset = take!(inputs, "dataset", as_dem);
        let tiles = dem::fetch_tiles(dataset, ids)?;
        Ok(outputs([("tiles", Resource::Tiles(Arc::new(tiles)))]))
    }
}

/// Stitches tiles, then crops to the region.
struct Stitch;

impl Operation for Stitch {
    fn name(&self) -> &str {
        "stitch"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 2] = [port("tiles", ResourceKind::Tiles), port("region", ResourceKind::Region)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("dem", ResourceKind::DemGrid)];
        &P
    }
    fn validate_params(&self, params: &Value) -> Result<(), String> {
        parse::<ZoomParams>(params).map(|_| ())
    }
    fn run(&self, _ctx: &OpContext, params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let p: ZoomParams = params_of(params)?;
        let tiles = take!(inputs, "tiles", as_tiles);
        let region = take!(inputs, "region", as_region);
        let stitched = dem::stitch(tiles, p.zoom)?;
        let cropped = dem::crop_to_region(&stitched, region)?;
        Ok(outputs([("dem", Resource::DemGrid(Arc::new(cropped)))]))
    }
}

struct ComputeNormals;

impl Operation for ComputeNormals {
    fn name(&self) -> &str {
        "compute_normals"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("dem", ResourceKind::DemGrid)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 2] = [port("normals", ResourceKind::NormalField), port("slope", ResourceKind::SlopeField)];
        &P
    }
    fn run(&self, ctx: &OpContext, _params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let grid = take!(inputs, "dem", as_dem);
        let normals = terrain::compute_normals_with(grid, ctx.parallelism)?;
        let slope = terrain::steepness_deg(&normals);
        Ok(outputs([
            ("normals", Resource::NormalField(Arc::new(normals))),
            ("slope", Resource::SlopeField(Arc::new(slope))),
        ]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReleaseBand {
    pub min_deg: f64,
    pub max_deg: f64,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl Default for ReleaseBand {
    fn default() -> Self {
        Self {
            min_deg: 28.0,
            max_deg: 60.0,
            stride: 1,
        }
    }
}

struct ReleasePoints;

impl Operation for ReleasePoints {
    fn name(&self) -> &str {
        "release_points"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("slope", ResourceKind::SlopeField)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("mask", ResourceKind::ReleaseMask)];
        &P
    }
    fn validate_params(&self, params: &Value) -> Result<(), String> {
        let b: ReleaseBand = parse(params)?;
        if !(0.0 <= b.min_deg && b.min_deg < b.max_deg && b.max_deg <= 90.0) || b.stride < 1 {
            return Err(format!("bad release band {b:?}"));
        }
        Ok(())
    }
    fn run(&self, ctx: &OpContext, params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let b: ReleaseBand = params_of(params)?;
        let slope = take!(inputs, "slope", as_slope);
        let mask = simulate::detect_release_points_with(slope, b.min_deg, b.max_deg, b.stride, ctx.parallelism)?;
        Ok(outputs([("mask", Resource::ReleaseMask(Arc::new(mask)))]))
    }
}

struct Trajectories;

impl Operation for Trajectories {
    fn name(&self) -> &str {
        "trajectories"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 2] = [port("dem", ResourceKind::DemGrid), port("mask", ResourceKind::ReleaseMask)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("runout", ResourceKind::RunoutRaster)];
        &P
    }
    fn validate_params(&self, params: &Value) -> Result<(), String> {
        let p: AvalancheParams = parse(params)?;
        p.validate().map_err(|e| e.to_string())
    }
    fn run(&self, ctx: &OpContext, params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let p: AvalancheParams = params_of(params)?;
        let grid = take!(inputs, "dem", as_dem);
        let mask = take!(inputs, "mask", as_mask);
        let runout = simulate::run_avalanche_with(grid, mask, &p, ctx.parallelism)?;
        Ok(outputs([("runout", Resource::RunoutRaster(Arc::new(runout)))]))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorizeParams {
    /// Built-in velocity map when absent.
    pub colormap: Option<Colormap>,
}

/// Colors `z_delta_max` and builds the overlay pyramid.
struct ColorizeOverlay;

impl Operation for ColorizeOverlay {
    fn name(&self) -> &str {
        "colorize_overlay"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("runout", ResourceKind::RunoutRaster)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 2] = [port("texture", ResourceKind::Texture), port("pyramid", ResourceKind::Pyramid)];
        &P
    }
    fn validate_params(&self, params: &Value) -> Result<(), String> {
        let p: ColorizeParams = parse(params)?;
        if let Some(c) = p.colormap {
            Colormap::new(c.stops().to_vec(), c.zero_transparent).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
    fn run(&self, _ctx: &OpContext, params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let p: ColorizeParams = params_of(params)?;
        let runout = take!(inputs, "runout", as_runout);
        let cmap = p.colormap.unwrap_or_else(Colormap::velocity);
        let tex = overlay::colorize(runout, &cmap)?;
        let pyr = overlay::build_mipmap(&tex);
        Ok(outputs([
            ("texture", Resource::Texture(Arc::new(tex))),
            ("pyramid", Resource::Pyramid(Arc::new(pyr))),
        ]))
    }
}

struct SnowCover;

impl Operation for SnowCover {
    fn name(&self) -> &str {
        "snow_cover"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 2] = [port("dem", ResourceKind::DemGrid), port("normals", ResourceKind::NormalField)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 2] = [port("texture", ResourceKind::Texture), port("pyramid", ResourceKind::Pyramid)];
        &P
    }
    fn validate_params(&self, params: &Value) -> Result<(), String> {
        let p: SnowParams = parse(params)?;
        p.validate().map_err(|e| e.to_string())
    }
    fn run(&self, ctx: &OpContext, params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let p: SnowParams = params_of(params)?;
        let grid = take!(inputs, "dem", as_dem);
        let normals = take!(inputs, "normals", as_normals);
        let tex = simulate::compute_snow_with(grid, normals, &p, ctx.parallelism)?;
        let pyr = overlay::build_mipmap(&tex);
        Ok(outputs([
            ("texture", Resource::Texture(Arc::new(tex))),
            ("pyramid", Resource::Pyramid(Arc::new(pyr))),
        ]))
    }
}

struct Mipmap;

impl Operation for Mipmap {
    fn name(&self) -> &str {
        "mipmap"
    }
    fn inputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("texture", ResourceKind::Texture)];
        &P
    }
    fn outputs(&self) -> &[PortSpec] {
        const P: [PortSpec; 1] = [port("pyramid", ResourceKind::Pyramid)];
        &P
    }
    fn run(&self, _ctx: &OpContext, _params: &Value, inputs: &Inputs) -> Result<Outputs, Error> {
        let tex = take!(inputs, "texture", as_texture);
        Ok(outputs([(
            "pyramid",
            Resource::Pyramid(Arc::new(overlay::build_mipmap(tex))),
        )]))
    }
}
