//! Synthetic benchmark terrains.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{DemGrid, DEFAULT_NODATA};
use crate::simulate::ReleaseMask;

pub const PARABOLA_NCOLS: usize = 501;
pub const PARABOLA_NROWS: usize = 151;
pub const PARABOLA_CELLSIZE: f64 = 10.0;
/// Drop from the top of the slope to the valley floor.
pub const PARABOLA_HEIGHT: f64 = 1000.0;
/// Horizontal length of the sloped section; flat beyond.
pub const PARABOLA_LENGTH: f64 = 2000.0;
/// Column of the three release cells.
pub const PARABOLA_RELEASE_COL: usize = 5;

/// Elevation of the parabola at distance `x` east of the first column
/// center: `h (1 - x/L)^2` on the slope, 0 on the floor.
pub fn parabola_elevation(x: f64) -> f64 {
    if x <= PARABOLA_LENGTH {
        let t = 1.0 - x.max(0.0) / PARABOLA_LENGTH;
        PARABOLA_HEIGHT * t * t
    } else {
        0.0
    }
}

/// Parabolic slope descending east, constant across rows, with three
/// release cells near the top on the center row and its two neighbors.
pub fn gen_parabola() -> (DemGrid, ReleaseMask) {
    let ncols = PARABOLA_NCOLS;
    let nrows = PARABOLA_NROWS;
    let row: Vec<f64> = (0..ncols)
        .map(|c| parabola_elevation(c as f64 * PARABOLA_CELLSIZE))
        .collect();
    let elevations = (0..nrows).flat_map(|_| row.iter().copied()).collect();
    let grid = DemGrid::new(
        ncols,
        nrows,
        0.0,
        0.0,
        PARABOLA_CELLSIZE,
        DEFAULT_NODATA,
        elevations,
    )
    .expect("parabola grid is valid");

    let mut mask = ReleaseMask::empty(ncols, nrows);
    let center = nrows / 2;
    for row in center - 1..=center + 1 {
        mask.set(row, PARABOLA_RELEASE_COL, true);
    }
    (grid, mask)
}

/// Random smooth terrain: a tilted plane plus a few long-wavelength
/// sinusoids and Gaussian bumps. Deterministic in `seed`.
pub fn gen_smooth_terrain(seed: u64, ncols: usize, nrows: usize, cellsize: f64) -> DemGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let w = ncols as f64 * cellsize;
    let h = nrows as f64 * cellsize;

    let angle = unit() * std::f64::consts::TAU;
    let tilt = 0.2 + 0.6 * unit();
    let (tx, ty) = (tilt * angle.cos(), tilt * angle.sin());

    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            let wavelength = (0.6 + unit()) * w.max(h);
            let dir = unit() * std::f64::consts::TAU;
            let k = std::f64::consts::TAU / wavelength;
            [k * dir.cos(), k * dir.sin(), unit() * std::f64::consts::TAU, (0.02 + 0.05 * unit()) * wavelength]
        })
        .collect();
    let bumps: Vec<[f64; 4]> = (0..4)
        .map(|_| {
            let sigma = (0.1 + 0.2 * unit()) * w.min(h);
            [unit() * w, unit() * h, sigma, (unit() - 0.5) * 0.6 * sigma]
        })
        .collect();

    DemGrid::from_fn(ncols, nrows, 0.0, 0.0, cellsize, |x, y| {
        let mut z = 2000.0 - tx * x - ty * y;
        for [kx, ky, phase, amp] in &waves {
            z += amp * (kx * x + ky * y + phase).sin();
        }
        for [cx, cy, sigma, amp] in &bumps {
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            z += amp * (-d2 / (2.0 * sigma * sigma)).exp();
        }
        z
    })
    .expect("smooth terrain is valid")
}
