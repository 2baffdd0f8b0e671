//! Typed values passed between workflow nodes, and their content digests.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::dem::{DemGrid, RegionAABB, TileId};
use crate::overlay::{MipPyramid, OverlayTexture};
use crate::simulate::{ReleaseMask, RunoutRaster};
use crate::terrain::{NormalField, SlopeField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ResourceKind {
    Region,
    DemGrid,
    NormalField,
    SlopeField,
    ReleaseMask,
    RunoutRaster,
    Texture,
    Pyramid,
    Scalar,
    Params,
    /// Quadtree tile addresses.
    TileSet,
    /// Fetched tile rasters.
    Tiles,
}

impl ResourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Region => "REGION",
            ResourceKind::DemGrid => "DEM_GRID",
            ResourceKind::NormalField => "NORMAL_FIELD",
            ResourceKind::SlopeField => "SLOPE_FIELD",
            ResourceKind::ReleaseMask => "RELEASE_MASK",
            ResourceKind::RunoutRaster => "RUNOUT_RASTER",
            ResourceKind::Texture => "TEXTURE",
            ResourceKind::Pyramid => "PYRAMID",
            ResourceKind::Scalar => "SCALAR",
            ResourceKind::Params => "PARAMS",
            ResourceKind::TileSet => "TILE_SET",
            ResourceKind::Tiles => "TILES",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Resource {
    Region(RegionAABB),
    DemGrid(Arc<DemGrid>),
    NormalField(Arc<NormalField>),
    SlopeField(Arc<SlopeField>),
    ReleaseMask(Arc<ReleaseMask>),
    RunoutRaster(Arc<RunoutRaster>),
    Texture(Arc<OverlayTexture>),
    Pyramid(Arc<MipPyramid>),
    Scalar(f64),
    Params(serde_json::Value),
    TileSet(Vec<TileId>),
    Tiles(Arc<Vec<(TileId, DemGrid)>>),
}

macro_rules! accessor {
    ($name:ident, $variant:ident, $ty:ty) => {
        pub fn $name(&self) -> Option<&$ty> {
            match self {
                Resource::$variant(v) => Some(v),
                _ => None,
            }
        }
    };
}

impl Resource {
    pub fn kind(&self) -> ResourceKind {
        match self {
            Resource::Region(_) => ResourceKind::Region,
            Resource::DemGrid(_) => ResourceKind::DemGrid,
            Resource::NormalField(_) => ResourceKind::NormalField,
            Resource::SlopeField(_) => ResourceKind::SlopeField,
            Resource::ReleaseMask(_) => ResourceKind::ReleaseMask,
            Resource::RunoutRaster(_) => ResourceKind::RunoutRaster,
            Resource::Texture(_) => ResourceKind::Texture,
            Resource::Pyramid(_) => ResourceKind::Pyramid,
            Resource::Scalar(_) => ResourceKind::Scalar,
            Resource::Params(_) => ResourceKind::Params,
            Resource::TileSet(_) => ResourceKind::TileSet,
            Resource::Tiles(_) => ResourceKind::Tiles,
        }
    }

    accessor!(as_region, Region, RegionAABB);
    accessor!(as_dem, DemGrid, DemGrid);
    accessor!(as_normals, NormalField, NormalField);
    accessor!(as_slope, SlopeField, SlopeField);
    accessor!(as_mask, ReleaseMask, ReleaseMask);
    accessor!(as_runout, RunoutRaster, RunoutRaster);
    accessor!(as_texture, Texture, OverlayTexture);
    accessor!(as_pyramid, Pyramid, MipPyramid);
    accessor!(as_scalar, Scalar, f64);
    accessor!(as_params, Params, serde_json::Value);
    accessor!(as_tile_set, TileSet, Vec<TileId>);
    accessor!(as_tiles, Tiles, Vec<(TileId, DemGrid)>);

    /// SHA-256 over a canonical byte encoding tagged with the kind.
    pub fn digest(&self) -> Digest {
        let mut h = Hasher::new("resource");
        h.str(self.kind().as_str());
        match self {
            Resource::Region(r) => h.region(r),
            Resource::DemGrid(g) => h.grid(g),
            Resource::NormalField(n) => {
                h.usize(n.ncols).usize(n.nrows);
                for v in &n.normals {
                    h.f64(v[0]).f64(v[1]).f64(v[2]);
                }
            }
            Resource::SlopeField(s) => {
                h.usize(s.ncols).usize(s.nrows);
                s.slope_deg.iter().for_each(|&v| {
                    h.f64(v);
                });
            }
            Resource::ReleaseMask(m) => {
                h.usize(m.ncols).usize(m.nrows);
                h.bytes(&m.mask.iter().map(|&b| b as u8).collect::<Vec<_>>());
            }
            Resource::RunoutRaster(r) => {
                h.usize(r.ncols).usize(r.nrows);
                h.f64(r.origin_x).f64(r.origin_y).f64(r.cellsize);
                r.z_delta_max.iter().for_each(|&v| {
                    h.f64(v);
                });
                r.hit_count.iter().for_each(|&v| {
                    h.u64(v as u64);
                });
                h.u64(r.particles).u64(r.total_steps);
            }
            Resource::Texture(t) => h.texture(t),
            Resource::Pyramid(p) => {
                h.usize(p.levels().len());
                p.levels().iter().for_each(|t| h.texture(t));
            }
            Resource::Scalar(v) => {
                h.f64(*v);
            }
            Resource::Params(v) => {
                h.str(&canonical_json(v));
            }
            Resource::TileSet(ids) => {
                h.usize(ids.len());
                ids.iter().for_each(|id| h.tile(id));
            }
            Resource::Tiles(tiles) => {
                h.usize(tiles.len());
                for (id, g) in tiles.iter() {
                    h.tile(id);
                    h.grid(g);
                }
            }
        }
        h.finish()
    }
}

/// 256-bit content digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Length-prefixed field encoder over SHA-256.
pub(crate) struct Hasher(Sha256);

impl Hasher {
    pub(crate) fn new(domain: &str) -> Self {
        let mut h = Hasher(Sha256::new());
        h.str(domain);
        h
    }

    pub(crate) fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.update((b.len() as u64).to_le_bytes());
        self.0.update(b);
        self
    }

    pub(crate) fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub(crate) fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub(crate) fn usize(&mut self, v: usize) -> &mut Self {
        self.u64(v as u64)
    }

    pub(crate) fn f64(&mut self, v: f64) -> &mut Self {
        self.0.update(v.to_bits().to_le_bytes());
        self
    }

    pub(crate) fn digest(&mut self, d: &Digest) -> &mut Self {
        self.0.update(d.0);
        self
    }

    fn region(&mut self, r: &RegionAABB) {
        self.f64(r.min_x).f64(r.min_y).f64(r.max_x).f64(r.max_y);
    }

    fn tile(&mut self, id: &TileId) {
        self.u64(id.zoom as u64).u64(id.tx as u64).u64(id.ty as u64);
    }

    fn grid(&mut self, g: &DemGrid) {
        self.usize(g.ncols()).usize(g.nrows());
        self.f64(g.origin_x()).f64(g.origin_y()).f64(g.cellsize()).f64(g.nodata());
        let mut buf = Vec::with_capacity(g.len() * 8);
        for &z in g.elevations() {
            buf.extend_from_slice(&z.to_bits().to_le_bytes());
        }
        self.bytes(&buf);
    }

    fn texture(&mut self, t: &OverlayTexture) {
        self.usize(t.width()).usize(t.height()).bytes(t.pixels());
    }

    pub(crate) fn finish(self) -> Digest {
        Digest(self.0.finalize().into())
    }
}

/// JSON text with object keys sorted at every level.
pub fn canonical_json(v: &serde_json::Value) -> String {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical_json(&map[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(items) => {
            let body: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", body.join(","))
        }
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_json_sorts_keys() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":{"y":[1,2],"x":null}}"#).unwrap();
        assert_eq!(canonical_json(&a), r#"{"a":{"x":null,"y":[1,2]},"b":1}"#);
    }

    #[test]
    fn kinds_separate_digests() {
        assert_ne!(Resource::Scalar(1.0).digest(), Resource::Params(serde_json::json!(1.0)).digest());
        assert_eq!(Resource::Scalar(2.5).digest(), Resource::Scalar(2.5).digest());
    }

    proptest! {
        #[test]
        fn any_bit_flip_changes_digest(values in prop::collection::vec(-1e4f64..1e4, 4..40), idx in any::<prop::sample::Index>(), bit in 0u32..64) {
            let n = values.len();
            let ncols = 2;
            let nrows = n / 2;
            let vals = values[..ncols * nrows].to_vec();
            let g = DemGrid::new(ncols, nrows, 0.0, 0.0, 1.0, -9999.0, vals.clone()).unwrap();
            let i = idx.index(vals.len());
            let mut flipped = vals;
            flipped[i] = f64::from_bits(flipped[i].to_bits() ^ (1u64 << bit));
            prop_assume!(flipped[i].is_finite());
            let h = DemGrid::new(ncols, nrows, 0.0, 0.0, 1.0, -9999.0, flipped).unwrap();
            prop_assert_ne!(Resource::DemGrid(Arc::new(g)).digest(), Resource::DemGrid(Arc::new(h)).digest());
        }
    }
}
