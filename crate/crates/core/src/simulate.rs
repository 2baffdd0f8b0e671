//! Release-point detection, Monte-Carlo avalanche particles and snow cover.
//!
//! Particles walk the bilinear DEM surface in `cellsize`-long steps. Each
//! step blends the previous heading with the local downhill direction
//! (persistence), rotates the result by a uniform random angle
//! (randomness), and moves on. A particle stops once the angle from its
//! position up to its own release point drops below the runout angle.

use serde::{Deserialize, Serialize};

use crate::dem::{DemError, DemGrid, DEFAULT_NODATA};
use crate::overlay::{OverlayError, OverlayTexture};
use crate::par::{self, Parallelism};
use crate::rng::ParticleStream;
use crate::terrain::{NormalField, SlopeField, FLAT_GRADIENT};

/// Blended headings shorter than this count as no motion.
const MIN_HEADING: f64 = 1e-9;
/// Blend widths are floored to this so zero widths act as thresholds.
const SNOW_EPS: f64 = 1e-6;
/// Particles simulated per scheduling unit.
const BLOCK: usize = 64;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameters: {}", format_fields(.0))]
    InvalidParams(Vec<FieldError>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Dem(#[from] DemError),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}

/// One rejected parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn format_fields(errs: &[FieldError]) -> String {
    errs.iter()
        .map(|e| format!("{}: {}", e.field, e.message))
        .collect::<Vec<_>>()
        .join(", ")
}

fn field(field: &str, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvalancheParams {
    /// Weight of the previous heading in `[0, 1]`.
    pub persistence: f64,
    /// Jitter amplitude in `[0, 1]`; 1 means up to ±90°.
    pub randomness: f64,
    #[serde(alias = "runout_angle")]
    pub runout_angle_deg: f64,
    #[serde(alias = "particles")]
    pub particles_per_release_cell: u32,
    pub seed: u64,
    /// `None` means `10 * max(ncols, nrows)`.
    pub max_steps: Option<usize>,
}

impl Default for AvalancheParams {
    fn default() -> Self {
        Self {
            persistence: 0.9,
            randomness: 0.16,
            runout_angle_deg: 25.0,
            particles_per_release_cell: 2048,
            seed: 0,
            max_steps: None,
        }
    }
}

/// Upper bound on particles per release cell accepted by validation.
pub const MAX_PARTICLES_PER_CELL: u32 = 65_536;

/// Accepted range of one numeric parameter, for clients that mirror
/// validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Whether `min` and `max` themselves are rejected.
    pub exclusive: bool,
    pub default: f64,
    pub unit: &'static str,
}

fn spec(name: &'static str, min: Option<f64>, max: Option<f64>, exclusive: bool, default: f64, unit: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        min,
        max,
        exclusive,
        default,
        unit,
    }
}

impl AvalancheParams {
    pub fn schema() -> Vec<ParamSpec> {
        let d = Self::default();
        vec![
            spec("persistence", Some(0.0), Some(1.0), false, d.persistence, ""),
            spec("randomness", Some(0.0), Some(1.0), false, d.randomness, ""),
            spec("runout_angle_deg", Some(0.0), Some(90.0), true, d.runout_angle_deg, "deg"),
            spec(
                "particles_per_release_cell",
                Some(1.0),
                Some(MAX_PARTICLES_PER_CELL as f64),
                false,
                d.particles_per_release_cell as f64,
                "",
            ),
        ]
    }

    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.persistence) {
            errs.push(field("persistence", format!("must be in [0, 1], got {}", self.persistence)));
        }
        if !(0.0..=1.0).contains(&self.randomness) {
            errs.push(field("randomness", format!("must be in [0, 1], got {}", self.randomness)));
        }
        if !(self.runout_angle_deg > 0.0 && self.runout_angle_deg < 90.0) {
            errs.push(field(
                "runout_angle_deg",
                format!("must be in (0, 90), got {}", self.runout_angle_deg),
            ));
        }
        if !(1..=MAX_PARTICLES_PER_CELL).contains(&self.particles_per_release_cell) {
            errs.push(field(
                "particles_per_release_cell",
                format!(
                    "must be in [1, {MAX_PARTICLES_PER_CELL}], got {}",
                    self.particles_per_release_cell
                ),
            ));
        }
        if self.max_steps == Some(0) {
            errs.push(field("max_steps", "must be at least 1"));
        }
        errs
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let errs = self.field_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidParams(errs))
        }
    }

    pub fn step_cap(&self, grid: &DemGrid) -> usize {
        self.max_steps
            .unwrap_or(10 * grid.ncols().max(grid.nrows()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnowParams {
    pub snow_line_m: f64,
    pub altitude_blend_m: f64,
    pub max_steepness_deg: f64,
    pub steepness_blend_deg: f64,
}

impl Default for SnowParams {
    fn default() -> Self {
        Self {
            snow_line_m: 1500.0,
            altitude_blend_m: 200.0,
            max_steepness_deg: 45.0,
            steepness_blend_deg: 10.0,
        }
    }
}

impl SnowParams {
    pub fn schema() -> Vec<ParamSpec> {
        let d = Self::default();
        vec![
            spec("snow_line_m", None, None, false, d.snow_line_m, "m"),
            spec("altitude_blend_m", Some(0.0), None, false, d.altitude_blend_m, "m"),
            spec("max_steepness_deg", None, None, false, d.max_steepness_deg, "deg"),
            spec("steepness_blend_deg", Some(0.0), None, false, d.steepness_blend_deg, "deg"),
        ]
    }

    pub fn field_errors(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if !self.snow_line_m.is_finite() {
            errs.push(field("snow_line_m", "must be finite"));
        }
        if !(self.altitude_blend_m >= 0.0 && self.altitude_blend_m.is_finite()) {
            errs.push(field("altitude_blend_m", "must be a finite value >= 0"));
        }
        if !self.max_steepness_deg.is_finite() {
            errs.push(field("max_steepness_deg", "must be finite"));
        }
        if !(self.steepness_blend_deg >= 0.0 && self.steepness_blend_deg.is_finite()) {
            errs.push(field("steepness_blend_deg", "must be a finite value >= 0"));
        }
        errs
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let errs = self.field_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidParams(errs))
        }
    }

    /// Snow opacity in `[0, 1]` for one texel.
    pub fn coverage(&self, z: f64, slope_deg: f64) -> f64 {
        let a_alt = ((z - (self.snow_line_m - self.altitude_blend_m))
            / self.altitude_blend_m.max(SNOW_EPS))
        .clamp(0.0, 1.0);
        let a_slope = (((self.max_steepness_deg + self.steepness_blend_deg) - slope_deg)
            / self.steepness_blend_deg.max(SNOW_EPS))
        .clamp(0.0, 1.0);
        a_alt * a_slope
    }
}

/// Binary release raster, row-major, row 0 north.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseMask {
    pub ncols: usize,
    pub nrows: usize,
    pub mask: Vec<bool>,
}

impl ReleaseMask {
    pub fn empty(ncols: usize, nrows: usize) -> Self {
        Self {
            ncols,
            nrows,
            mask: vec![false; ncols * nrows],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.ncols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.mask[row * self.ncols + col] = v;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Set cells in row-major order; position in this list is the release
    /// ordinal.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i / self.ncols, i % self.ncols))
            .collect()
    }

    /// Interprets any non-zero, non-nodata value as a release cell.
    pub fn from_grid(grid: &DemGrid) -> Self {
        Self {
            ncols: grid.ncols(),
            nrows: grid.nrows(),
            mask: grid
                .elevations()
                .iter()
                .map(|&v| v != grid.nodata() && v != 0.0)
                .collect(),
        }
    }

    /// 0/1 grid with the georeference of `like`.
    pub fn to_grid(&self, like: &DemGrid) -> Result<DemGrid, DemError> {
        DemGrid::new(
            self.ncols,
            self.nrows,
            like.origin_x(),
            like.origin_y(),
            like.cellsize(),
            DEFAULT_NODATA,
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
    }

    pub fn window(&self, w: crate::dem::Window) -> ReleaseMask {
        let mut out = ReleaseMask::empty(w.ncols, w.nrows);
        for r in 0..w.nrows {
            for c in 0..w.ncols {
                out.set(r, c, self.get(w.row0 + r, w.col0 + c));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    RunoutAngle,
    DomainExit,
    Flat,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<(f64, f64)>,
    pub stop_reason: StopReason,
}

/// Per-cell accumulation of all particles of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunoutRaster {
    pub ncols: usize,
    pub nrows: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub cellsize: f64,
    /// Largest single-step vertical drop into each cell, meters.
    pub z_delta_max: Vec<f64>,
    pub hit_count: Vec<u32>,
    /// Particles released.
    pub particles: u64,
    /// Steps taken by all particles.
    pub total_steps: u64,
}

impl RunoutRaster {
    pub fn zeros_like(grid: &DemGrid) -> Self {
        let n = grid.len();
        Self {
            ncols: grid.ncols(),
            nrows: grid.nrows(),
            origin_x: grid.origin_x(),
            origin_y: grid.origin_y(),
            cellsize: grid.cellsize(),
            z_delta_max: vec![0.0; n],
            hit_count: vec![0; n],
            particles: 0,
            total_steps: 0,
        }
    }

    pub fn z_delta_max_global(&self) -> f64 {
        self.z_delta_max.iter().copied().fold(0.0, f64::max)
    }

    pub fn z_delta_max_grid(&self) -> Result<DemGrid, DemError> {
        self.layer(self.z_delta_max.clone())
    }

    pub fn hit_count_grid(&self) -> Result<DemGrid, DemError> {
        self.layer(self.hit_count.iter().map(|&h| h as f64).collect())
    }

    fn layer(&self, values: Vec<f64>) -> Result<DemGrid, DemError> {
        DemGrid::new(
            self.ncols,
            self.nrows,
            self.origin_x,
            self.origin_y,
            self.cellsize,
            DEFAULT_NODATA,
            values,
        )
    }

    fn record(&mut self, cell: usize, delta: f64) {
        self.hit_count[cell] += 1;
        if delta > self.z_delta_max[cell] {
            self.z_delta_max[cell] = delta;
        }
    }
}

/// Marks cells on a `stride` lattice whose slope lies in `[min_deg, max_deg]`.
pub fn detect_release_points(
    slope: &SlopeField,
    min_deg: f64,
    max_deg: f64,
    stride: usize,
) -> Result<ReleaseMask, SimError> {
    detect_release_points_with(slope, min_deg, max_deg, stride, Parallelism::Sequential)
}

pub fn detect_release_points_with(
    slope: &SlopeField,
    min_deg: f64,
    max_deg: f64,
    stride: usize,
    policy: Parallelism,
) -> Result<ReleaseMask, SimError> {
    let mut errs = Vec::new();
    if !(0.0 <= min_deg && min_deg < max_deg && max_deg <= 90.0) {
        errs.push(field(
            "band",
            format!("need 0 <= min < max <= 90, got [{min_deg}, {max_deg}]"),
        ));
    }
    if stride < 1 {
        errs.push(field("stride", "must be at least 1"));
    }
    if !errs.is_empty() {
        return Err(SimError::InvalidParams(errs));
    }
    let nc = slope.ncols;
    let mut mask = vec![false; nc * slope.nrows];
    policy.install(|| {
        par::for_each_row(policy, &mut mask, nc, |row, out| {
            if row % stride != 0 {
                return;
            }
            for (col, m) in out.iter_mut().enumerate().step_by(stride) {
                let s = slope.slope_deg[row * nc + col];
                *m = min_deg <= s && s <= max_deg;
            }
        })
    });
    Ok(ReleaseMask {
        ncols: nc,
        nrows: slope.nrows,
        mask,
    })
}

/// Walks one particle, calling `visit(x, y, z_prev, z)` after every step.
fn trace(
    grid: &DemGrid,
    start: (f64, f64),
    params: &AvalancheParams,
    rng: &mut ParticleStream,
    mut visit: impl FnMut(f64, f64, f64, f64),
) -> Result<(StopReason, usize), SimError> {
    let (x0, y0) = start;
    let (z0, mut gx, mut gy) = grid.sample_with_gradient(x0, y0)?;
    let dom = grid.sample_domain();
    let step_len = grid.cellsize();
    let alpha = params.runout_angle_deg.to_radians();
    let jitter = params.randomness * std::f64::consts::FRAC_PI_2;
    let cap = params.step_cap(grid);
    let p = params.persistence;

    let (mut x, mut y, mut z) = (x0, y0, z0);
    let mut heading: Option<[f64; 2]> = None;
    let mut steps = 0usize;
    loop {
        if steps == cap {
            return Ok((StopReason::MaxSteps, steps));
        }
        let mag = gx.hypot(gy);
        let g = if mag < FLAT_GRADIENT {
            None
        } else {
            Some([-gx / mag, -gy / mag])
        };
        let g_vec = g.unwrap_or([0.0, 0.0]);
        let prev = heading.unwrap_or(g_vec);
        let mut d = [p * prev[0] + (1.0 - p) * g_vec[0], p * prev[1] + (1.0 - p) * g_vec[1]];
        let len = d[0].hypot(d[1]);
        if len < MIN_HEADING {
            match g {
                None => return Ok((StopReason::Flat, steps)),
                Some(g) => d = g,
            }
        } else if p != 0.0 {
            // With zero persistence `d` is already the unit gradient.
            d = [d[0] / len, d[1] / len];
        }
        if jitter > 0.0 {
            let theta = rng.symmetric(steps as u64, jitter);
            let (s, c) = theta.sin_cos();
            d = [c * d[0] - s * d[1], s * d[0] + c * d[1]];
        }

        let (mut nx, mut ny) = (x + step_len * d[0], y + step_len * d[1]);
        let exits = nx < dom.min_x || nx > dom.max_x || ny < dom.min_y || ny > dom.max_y;
        if exits {
            let t = exit_fraction(x, y, nx, ny, &dom);
            nx = (x + t * (nx - x)).clamp(dom.min_x, dom.max_x);
            ny = (y + t * (ny - y)).clamp(dom.min_y, dom.max_y);
        }
        let (nz, ngx, ngy) = grid.sample_with_gradient(nx, ny)?;
        steps += 1;
        visit(nx, ny, z, nz);
        if exits {
            return Ok((StopReason::DomainExit, steps));
        }
        x = nx;
        y = ny;
        z = nz;
        gx = ngx;
        gy = ngy;
        heading = Some(d);

        let travel = (z0 - z).atan2((x - x0).hypot(y - y0));
        if travel < alpha {
            return Ok((StopReason::RunoutAngle, steps));
        }
    }
}

/// Fraction of the segment `(x, y) -> (nx, ny)` inside `dom`.
fn exit_fraction(x: f64, y: f64, nx: f64, ny: f64, dom: &crate::dem::RegionAABB) -> f64 {
    let mut t: f64 = 1.0;
    let dx = nx - x;
    let dy = ny - y;
    if dx < 0.0 && nx < dom.min_x {
        t = t.min((dom.min_x - x) / dx);
    } else if dx > 0.0 && nx > dom.max_x {
        t = t.min((dom.max_x - x) / dx);
    }
    if dy < 0.0 && ny < dom.min_y {
        t = t.min((dom.min_y - y) / dy);
    } else if dy > 0.0 && ny > dom.max_y {
        t = t.min((dom.max_y - y) / dy);
    }
    t.clamp(0.0, 1.0)
}

pub fn simulate_particle(
    grid: &DemGrid,
    start: (f64, f64),
    params: &AvalancheParams,
    rng: &mut ParticleStream,
) -> Result<Trajectory, SimError> {
    if !grid.contains_sample_point(start.0, start.1) {
        return Err(SimError::Dem(DemError::Sampling {
            x: start.0,
            y: start.1,
            reason: "particle start outside the grid".into(),
        }));
    }
    let mut positions = vec![start];
    let (stop_reason, _) = trace(grid, start, params, rng, |x, y, _, _| positions.push((x, y)))?;
    Ok(Trajectory {
        positions,
        stop_reason,
    })
}

pub fn run_avalanche(
    grid: &DemGrid,
    mask: &ReleaseMask,
    params: &AvalancheParams,
) -> Result<RunoutRaster, SimError> {
    run_avalanche_with(grid, mask, params, Parallelism::Auto)
}

/// Monte-Carlo run over every release cell. Particle `p` of release cell
/// `k` draws from the stream `(seed, k, p)`, and per-cell accumulation uses
/// only max and sum, so the raster is identical for any `policy`.
pub fn run_avalanche_with(
    grid: &DemGrid,
    mask: &ReleaseMask,
    params: &AvalancheParams,
    policy: Parallelism,
) -> Result<RunoutRaster, SimError> {
    params.validate()?;
    if mask.ncols != grid.ncols() || mask.nrows != grid.nrows() {
        return Err(SimError::DimensionMismatch(format!(
            "mask {}x{} vs grid {}x{}",
            mask.ncols,
            mask.nrows,
            grid.ncols(),
            grid.nrows()
        )));
    }
    let starts: Vec<(f64, f64)> = mask
        .cells()
        .into_iter()
        .map(|(r, c)| grid.cell_center(r, c))
        .collect();
    let per_cell = params.particles_per_release_cell as usize;
    let total = starts.len() * per_cell;
    let mut raster = RunoutRaster::zeros_like(grid);
    raster.particles = total as u64;
    if total == 0 {
        return Ok(raster);
    }

    let nblocks = total.div_ceil(BLOCK);
    let wave = (policy.thread_count() * 8).max(1);
    let simulate_block = |b: usize| -> Result<(Vec<(u32, f64)>, u64), SimError> {
        let mut visits = Vec::new();
        let mut steps = 0u64;
        for idx in b * BLOCK..((b + 1) * BLOCK).min(total) {
            let (k, p) = (idx / per_cell, idx % per_cell);
            let start = starts[k];
            let mut rng = ParticleStream::new(params.seed, k as u32, p as u32);
            let (r, c) = grid.cell_at(start.0, start.1);
            visits.push((grid.index(r, c) as u32, 0.0));
            let (_, n) = trace(grid, start, params, &mut rng, |x, y, z_prev, z| {
                let (r, c) = grid.cell_at(x, y);
                visits.push((grid.index(r, c) as u32, (z_prev - z).max(0.0)));
            })?;
            steps += n as u64;
        }
        Ok((visits, steps))
    };

    policy.install(|| {
        let mut first = 0;
        while first < nblocks {
            let n = wave.min(nblocks - first);
            let results = par::map_indices(policy, n, |i| simulate_block(first + i));
            for res in results {
                let (visits, steps) = res?;
                raster.total_steps += steps;
                for (cell, delta) in visits {
                    raster.record(cell as usize, delta);
                }
            }
            first += n;
        }
        Ok::<(), SimError>(())
    })?;
    Ok(raster)
}

/// White texels whose alpha is the product of an altitude ramp and a
/// steepness ramp.
pub fn compute_snow(
    grid: &DemGrid,
    normals: &NormalField,
    params: &SnowParams,
) -> Result<OverlayTexture, SimError> {
    compute_snow_with(grid, normals, params, Parallelism::Sequential)
}

pub fn compute_snow_with(
    grid: &DemGrid,
    normals: &NormalField,
    params: &SnowParams,
    policy: Parallelism,
) -> Result<OverlayTexture, SimError> {
    params.validate()?;
    if normals.ncols != grid.ncols() || normals.nrows != grid.nrows() {
        return Err(SimError::DimensionMismatch(format!(
            "normals {}x{} vs grid {}x{}",
            normals.ncols,
            normals.nrows,
            grid.ncols(),
            grid.nrows()
        )));
    }
    crate::overlay::check_texture_size(grid.ncols(), grid.nrows())?;
    let nc = grid.ncols();
    let mut pixels = vec![0u8; nc * grid.nrows() * 4];
    policy.install(|| {
        par::for_each_row(policy, &mut pixels, nc * 4, |row, out| {
            for col in 0..nc {
                let i = row * nc + col;
                let slope = normals.normals[i][2].clamp(-1.0, 1.0).acos().to_degrees();
                let a = params.coverage(grid.elevations()[i], slope);
                out[col * 4..col * 4 + 4].copy_from_slice(&[255, 255, 255, (255.0 * a).round() as u8]);
            }
        })
    });
    Ok(OverlayTexture::new(nc, grid.nrows(), pixels)?)
}
