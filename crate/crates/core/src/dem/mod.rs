//! Elevation rasters: storage, ESRI ASCII grid I/O, quadtree tiling and
//! synthetic terrain.
//!
//! All coordinates live in a local metric frame: x grows east, y grows north,
//! elevations are meters. Row 0 of a [`DemGrid`] is the northernmost row, the
//! same order ASCII grids store their lines in.

mod ascii;
mod synthetic;
mod tiles;

pub use ascii::{parse_ascii_grid, write_ascii_grid};
pub use synthetic::{
    gen_smooth_terrain,
    gen_parabola, parabola_elevation, PARABOLA_CELLSIZE, PARABOLA_HEIGHT, PARABOLA_LENGTH,
    PARABOLA_NCOLS, PARABOLA_NROWS, PARABOLA_RELEASE_COL,
};
pub use tiles::{crop_to_region, crop_window, fetch_tiles, select_tiles, stitch, tile_extent, Window};

use serde::{Deserialize, Serialize};

/// Default sentinel written for voids.
pub const DEFAULT_NODATA: f64 = -9999.0;

/// Fractional index offsets closer than this to an integer are snapped, so
/// queries at cell centers hit the raster value exactly.
const SNAP_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DemError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid region: {0}")]
    InvalidRegion(String),
    #[error("invalid tile: {0}")]
    InvalidTile(String),
    #[error("region does not intersect the world extent")]
    EmptySelection,
    #[error("cannot stitch tiles: {}", .0.join("; "))]
    Stitch(Vec<String>),
    #[error("sampling at ({x}, {y}) failed: {reason}")]
    Sampling { x: f64, y: f64, reason: String },
    #[error("nodata cell at row {row}, column {col}")]
    Nodata { row: usize, col: usize },
}

/// Axis-aligned bounding box in the grid frame (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionAABB {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl RegionAABB {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, DemError> {
        let region = Self {
            min_x,
            min_y,
            max_x,
            max_y,
        };
        region.validate()?;
        Ok(region)
    }

    pub fn validate(&self) -> Result<(), DemError> {
        let finite = [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(DemError::InvalidRegion("non-finite bound".into()));
        }
        if !(self.min_x < self.max_x && self.min_y < self.max_y) {
            return Err(DemError::InvalidRegion(format!(
                "expected min < max, got x [{}, {}], y [{}, {}]",
                self.min_x, self.max_x, self.min_y, self.max_y
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    /// Overlap with positive area. Boxes that only share an edge do not
    /// intersect.
    pub fn intersects(&self, other: &RegionAABB) -> bool {
        self.min_x < other.max_x
            && other.min_x < self.max_x
            && self.min_y < other.max_y
            && other.min_y < self.max_y
    }

    pub fn intersection(&self, other: &RegionAABB) -> Option<RegionAABB> {
        if !self.intersects(other) {
            return None;
        }
        Some(RegionAABB {
            min_x: self.min_x.max(other.min_x),
            min_y: self.min_y.max(other.min_y),
            max_x: self.max_x.min(other.max_x),
            max_y: self.max_y.min(other.max_y),
        })
    }
}

/// Quadtree tile address. `tx` grows east, `ty` grows south.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileId {
    pub zoom: u32,
    pub tx: u32,
    pub ty: u32,
}

impl TileId {
    pub const MAX_ZOOM: u32 = 30;

    pub fn new(zoom: u32, tx: u32, ty: u32) -> Result<Self, DemError> {
        if zoom > Self::MAX_ZOOM {
            return Err(DemError::InvalidTile(format!(
                "zoom {zoom} exceeds {}",
                Self::MAX_ZOOM
            )));
        }
        let n = 1u32 << zoom;
        if tx >= n || ty >= n {
            return Err(DemError::InvalidTile(format!(
                "({tx}, {ty}) outside the {n}x{n} grid of zoom {zoom}"
            )));
        }
        Ok(Self { zoom, tx, ty })
    }
}

/// Rectangular elevation raster anchored at its lower-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemGrid {
    ncols: usize,
    nrows: usize,
    origin_x: f64,
    origin_y: f64,
    cellsize: f64,
    nodata: f64,
    elevations: Vec<f64>,
}

impl DemGrid {
    pub fn new(
        ncols: usize,
        nrows: usize,
        origin_x: f64,
        origin_y: f64,
        cellsize: f64,
        nodata: f64,
        elevations: Vec<f64>,
    ) -> Result<Self, DemError> {
        if ncols < 2 || nrows < 2 {
            return Err(DemError::Invalid(format!(
                "need at least 2x2 cells, got {ncols}x{nrows}"
            )));
        }
        if !(cellsize > 0.0 && cellsize.is_finite()) {
            return Err(DemError::Invalid(format!("cellsize must be > 0, got {cellsize}")));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(DemError::Invalid("non-finite origin".into()));
        }
        if elevations.len() != ncols * nrows {
            return Err(DemError::Invalid(format!(
                "expected {} elevations, got {}",
                ncols * nrows,
                elevations.len()
            )));
        }
        if let Some(i) = elevations
            .iter()
            .position(|&z| z != nodata && !z.is_finite())
        {
            return Err(DemError::Invalid(format!(
                "non-finite elevation at row {}, column {}",
                i / ncols,
                i % ncols
            )));
        }
        Ok(Self {
            ncols,
            nrows,
            origin_x,
            origin_y,
            cellsize,
            nodata,
            elevations,
        })
    }

    /// Builds a grid by evaluating `f(x, y)` at every cell center.
    pub fn from_fn(
        ncols: usize,
        nrows: usize,
        origin_x: f64,
        origin_y: f64,
        cellsize: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, DemError> {
        let top = origin_y + nrows as f64 * cellsize;
        let mut elevations = Vec::with_capacity(ncols * nrows);
        for row in 0..nrows {
            let y = top - (row as f64 + 0.5) * cellsize;
            for col in 0..ncols {
                let x = origin_x + (col as f64 + 0.5) * cellsize;
                elevations.push(f(x, y));
            }
        }
        Self::new(ncols, nrows, origin_x, origin_y, cellsize, DEFAULT_NODATA, elevations)
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn origin_x(&self) -> f64 {
        self.origin_x
    }
    pub fn origin_y(&self) -> f64 {
        self.origin_y
    }
    pub fn cellsize(&self) -> f64 {
        self.cellsize
    }
    pub fn nodata(&self) -> f64 {
        self.nodata
    }
    pub fn elevations(&self) -> &[f64] {
        &self.elevations
    }
    pub fn len(&self) -> usize {
        self.elevations.len()
    }
    pub fn is_empty(&self) -> bool {
        self.elevations.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.elevations[row * self.ncols + col]
    }

    pub fn is_nodata_at(&self, row: usize, col: usize) -> bool {
        self.get(row, col) == self.nodata
    }

    /// First nodata cell in row-major order, if any.
    pub fn first_nodata(&self) -> Option<(usize, usize)> {
        self.elevations
            .iter()
            .position(|&z| z == self.nodata)
            .map(|i| (i / self.ncols, i % self.ncols))
    }

    pub fn top(&self) -> f64 {
        self.origin_y + self.nrows as f64 * self.cellsize
    }

    /// Full cell extent of the raster.
    pub fn extent(&self) -> RegionAABB {
        RegionAABB {
            min_x: self.origin_x,
            min_y: self.origin_y,
            max_x: self.origin_x + self.ncols as f64 * self.cellsize,
            max_y: self.top(),
        }
    }

    /// Hull of the cell centers: the area where bilinear sampling has a full
    /// neighborhood. Particles live inside it.
    pub fn sample_domain(&self) -> RegionAABB {
        let half = 0.5 * self.cellsize;
        let e = self.extent();
        RegionAABB {
            min_x: e.min_x + half,
            min_y: e.min_y + half,
            max_x: e.max_x - half,
            max_y: e.max_y - half,
        }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cellsize,
            self.top() - (row as f64 + 0.5) * self.cellsize,
        )
    }

    /// Cell containing `(x, y)`, clamped to the raster.
    pub fn cell_at(&self, x: f64, y: f64) -> (usize, usize) {
        let col = ((x - self.origin_x) / self.cellsize).floor();
        let row = ((self.top() - y) / self.cellsize).floor();
        let col = col.clamp(0.0, (self.ncols - 1) as f64) as usize;
        let row = row.clamp(0.0, (self.nrows - 1) as f64) as usize;
        (row, col)
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.elevations
            .iter()
            .filter(|&&z| z != self.nodata)
            .fold(None, |acc, &z| match acc {
                None => Some((z, z)),
                Some((lo, hi)) => Some((lo.min(z), hi.max(z))),
            })
    }

    /// Copies the sub-raster starting at `(row0, col0)`.
    pub fn window(&self, w: Window) -> Result<DemGrid, DemError> {
        if w.nrows == 0
            || w.ncols == 0
            || w.row0 + w.nrows > self.nrows
            || w.col0 + w.ncols > self.ncols
        {
            return Err(DemError::Invalid(format!(
                "window {w:?} outside {}x{} grid",
                self.ncols, self.nrows
            )));
        }
        let mut elevations = Vec::with_capacity(w.nrows * w.ncols);
        for row in w.row0..w.row0 + w.nrows {
            let start = self.index(row, w.col0);
            elevations.extend_from_slice(&self.elevations[start..start + w.ncols]);
        }
        let origin_x = self.origin_x + w.col0 as f64 * self.cellsize;
        let origin_y = self.origin_y + (self.nrows - w.row0 - w.nrows) as f64 * self.cellsize;
        DemGrid::new(
            w.ncols,
            w.nrows,
            origin_x,
            origin_y,
            self.cellsize,
            self.nodata,
            elevations,
        )
    }

    pub fn contains_sample_point(&self, x: f64, y: f64) -> bool {
        let d = self.sample_domain();
        let tol = SNAP_EPS * self.cellsize;
        x >= d.min_x - tol && x <= d.max_x + tol && y >= d.min_y - tol && y <= d.max_y + tol
    }

    /// Bilinear elevation and horizontal gradient `(z, dz/dx, dz/dy)`.
    pub fn sample_with_gradient(&self, x: f64, y: f64) -> Result<(f64, f64, f64), DemError> {
        if !x.is_finite() || !y.is_finite() || !self.contains_sample_point(x, y) {
            return Err(DemError::Sampling {
                x,
                y,
                reason: "outside the cell-center hull".into(),
            });
        }
        let u = snap((x - self.origin_x) / self.cellsize - 0.5);
        let s = snap((self.top() - y) / self.cellsize - 0.5);
        let col0 = (u.floor().max(0.0) as usize).min(self.ncols - 2);
        let row0 = (s.floor().max(0.0) as usize).min(self.nrows - 2);
        let tx = (u - col0 as f64).clamp(0.0, 1.0);
        let ts = (s - row0 as f64).clamp(0.0, 1.0);

        let z00 = self.get(row0, col0);
        let z01 = self.get(row0, col0 + 1);
        let z10 = self.get(row0 + 1, col0);
        let z11 = self.get(row0 + 1, col0 + 1);
        if [z00, z01, z10, z11].contains(&self.nodata) {
            return Err(DemError::Sampling {
                x,
                y,
                reason: "nodata in bilinear neighborhood".into(),
            });
        }

        let north = z00 + tx * (z01 - z00);
        let south = z10 + tx * (z11 - z10);
        let z = north + ts * (south - north);
        let dz_du = (1.0 - ts) * (z01 - z00) + ts * (z11 - z10);
        let dz_ds = (1.0 - tx) * (z10 - z00) + tx * (z11 - z01);
        Ok((z, dz_du / self.cellsize, -dz_ds / self.cellsize))
    }
}

/// Bilinear interpolation of the four surrounding cell-center elevations.
pub fn sample_elevation(grid: &DemGrid, x: f64, y: f64) -> Result<f64, DemError> {
    grid.sample_with_gradient(x, y).map(|(z, _, _)| z)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP_EPS {
        r
    } else {
        v
    }
}
