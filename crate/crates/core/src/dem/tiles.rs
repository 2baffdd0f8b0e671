//! Quadtree tiling over a dataset-level world box.
//!
//! Level 0 is the whole world; each level halves both axes. `tx` counts
//! columns from the west edge and `ty` counts rows from the north edge, the
//! same orientation as raster rows.

use std::collections::BTreeMap;

use super::{DemError, DemGrid, RegionAABB, TileId};

/// Sub-raster in cell indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row0: usize,
    pub col0: usize,
    pub nrows: usize,
    pub ncols: usize,
}

pub fn tile_extent(world: &RegionAABB, tile: TileId) -> RegionAABB {
    let n = (1u64 << tile.zoom) as f64;
    let w = world.width() / n;
    let h = world.height() / n;
    RegionAABB {
        min_x: world.min_x + tile.tx as f64 * w,
        max_x: world.min_x + (tile.tx + 1) as f64 * w,
        max_y: world.max_y - tile.ty as f64 * h,
        min_y: world.max_y - (tile.ty + 1) as f64 * h,
    }
}

/// Tiles at `zoom` whose extent overlaps `region`, ordered by `(ty, tx)`.
pub fn select_tiles(
    region: &RegionAABB,
    zoom: u32,
    world: &RegionAABB,
) -> Result<Vec<TileId>, DemError> {
    region.validate()?;
    world.validate()?;
    if zoom > TileId::MAX_ZOOM {
        return Err(DemError::InvalidTile(format!("zoom {zoom} too deep")));
    }
    let clip = region.intersection(world).ok_or(DemError::EmptySelection)?;
    let n = 1u64 << zoom;
    let w = world.width() / n as f64;
    let h = world.height() / n as f64;
    let last = (n - 1) as f64;
    // Candidate ranges padded by one tile, then filtered exactly.
    let tx_lo = (((clip.min_x - world.min_x) / w).floor() - 1.0).clamp(0.0, last) as u32;
    let tx_hi = (((clip.max_x - world.min_x) / w).floor() + 1.0).clamp(0.0, last) as u32;
    let ty_lo = (((world.max_y - clip.max_y) / h).floor() - 1.0).clamp(0.0, last) as u32;
    let ty_hi = (((world.max_y - clip.min_y) / h).floor() + 1.0).clamp(0.0, last) as u32;

    let mut out = Vec::new();
    for ty in ty_lo..=ty_hi {
        for tx in tx_lo..=tx_hi {
            let id = TileId { zoom, tx, ty };
            if tile_extent(world, id).intersects(&clip) {
                out.push(id);
            }
        }
    }
    if out.is_empty() {
        return Err(DemError::EmptySelection);
    }
    Ok(out)
}

/// Cuts the requested tiles out of a dataset raster whose extent is the
/// quadtree world. Each grid axis must be divisible by `2^zoom`.
pub fn fetch_tiles(dataset: &DemGrid, ids: &[TileId]) -> Result<Vec<(TileId, DemGrid)>, DemError> {
    ids.iter()
        .map(|&id| {
            let n = 1usize << id.zoom;
            if !dataset.ncols().is_multiple_of(n) || !dataset.nrows().is_multiple_of(n) {
                return Err(DemError::InvalidTile(format!(
                    "{}x{} grid does not split into {n}x{n} tiles",
                    dataset.ncols(),
                    dataset.nrows()
                )));
            }
            let (tw, th) = (dataset.ncols() / n, dataset.nrows() / n);
            if id.tx as usize >= n || id.ty as usize >= n {
                return Err(DemError::InvalidTile(format!("{id:?} out of range")));
            }
            let tile = dataset.window(Window {
                row0: id.ty as usize * th,
                col0: id.tx as usize * tw,
                nrows: th,
                ncols: tw,
            })?;
            Ok((id, tile))
        })
        .collect()
}

/// Places tile rasters side by side by tile coordinate. No resampling.
pub fn stitch(tiles: &[(TileId, DemGrid)], zoom: u32) -> Result<DemGrid, DemError> {
    let Some((_, first)) = tiles.first() else {
        return Err(DemError::Stitch(vec!["no tiles".into()]));
    };
    let mut problems = Vec::new();
    let mut by_coord: BTreeMap<(u32, u32), &DemGrid> = BTreeMap::new();
    for (id, g) in tiles {
        if id.zoom != zoom {
            problems.push(format!("{id:?}: zoom {} != {zoom}", id.zoom));
        }
        if g.cellsize() != first.cellsize() {
            problems.push(format!("{id:?}: cellsize {} != {}", g.cellsize(), first.cellsize()));
        }
        if g.ncols() != first.ncols() || g.nrows() != first.nrows() {
            problems.push(format!(
                "{id:?}: dimensions {}x{} != {}x{}",
                g.ncols(),
                g.nrows(),
                first.ncols(),
                first.nrows()
            ));
        }
        if g.nodata() != first.nodata() && !(g.nodata().is_nan() && first.nodata().is_nan()) {
            problems.push(format!("{id:?}: nodata {} != {}", g.nodata(), first.nodata()));
        }
        if by_coord.insert((id.ty, id.tx), g).is_some() {
            problems.push(format!("{id:?}: duplicate tile"));
        }
    }
    let tx_min = by_coord.keys().map(|k| k.1).min().unwrap_or(0);
    let tx_max = by_coord.keys().map(|k| k.1).max().unwrap_or(0);
    let ty_min = by_coord.keys().map(|k| k.0).min().unwrap_or(0);
    let ty_max = by_coord.keys().map(|k| k.0).max().unwrap_or(0);
    for ty in ty_min..=ty_max {
        for tx in tx_min..=tx_max {
            if !by_coord.contains_key(&(ty, tx)) {
                problems.push(format!("missing tile (zoom {zoom}, {tx}, {ty})"));
            }
        }
    }
    if !problems.is_empty() {
        return Err(DemError::Stitch(problems));
    }

    let (tw, th) = (first.ncols(), first.nrows());
    let cols_t = (tx_max - tx_min + 1) as usize;
    let rows_t = (ty_max - ty_min + 1) as usize;
    let ncols = cols_t * tw;
    let nrows = rows_t * th;
    let mut elevations = vec![0.0; ncols * nrows];
    for (&(ty, tx), g) in &by_coord {
        let r_off = (ty - ty_min) as usize * th;
        let c_off = (tx - tx_min) as usize * tw;
        for (r, src) in g.elevations().chunks(tw).enumerate() {
            let dst = (r_off + r) * ncols + c_off;
            elevations[dst..dst + tw].copy_from_slice(src);
        }
    }
    let south_west = by_coord[&(ty_max, tx_min)];
    DemGrid::new(
        ncols,
        nrows,
        south_west.origin_x(),
        south_west.origin_y(),
        first.cellsize(),
        first.nodata(),
        elevations,
    )
}

/// Cells of `grid` whose extent overlaps `region`.
pub fn crop_window(grid: &DemGrid, region: &RegionAABB) -> Result<Window, DemError> {
    let clip = region
        .intersection(&grid.extent())
        .ok_or(DemError::EmptySelection)?;
    let cs = grid.cellsize();
    let col0 = ((clip.min_x - grid.origin_x()) / cs).floor().max(0.0) as usize;
    let col1 = (((clip.max_x - grid.origin_x()) / cs).ceil() as usize).min(grid.ncols());
    let row0 = ((grid.top() - clip.max_y) / cs).floor().max(0.0) as usize;
    let row1 = (((grid.top() - clip.min_y) / cs).ceil() as usize).min(grid.nrows());
    let w = Window {
        row0,
        col0,
        nrows: row1.saturating_sub(row0),
        ncols: col1.saturating_sub(col0),
    };
    if w.nrows < 2 || w.ncols < 2 {
        return Err(DemError::InvalidRegion(format!(
            "region covers {}x{} cells, need at least 2x2",
            w.ncols, w.nrows
        )));
    }
    Ok(w)
}

pub fn crop_to_region(grid: &DemGrid, region: &RegionAABB) -> Result<DemGrid, DemError> {
    let w = crop_window(grid, region)?;
    if w.row0 == 0 && w.col0 == 0 && w.nrows == grid.nrows() && w.ncols == grid.ncols() {
        return Ok(grid.clone());
    }
    grid.window(w)
}
