//! Surface normals, steepness and descent directions of a DEM.

use serde::{Deserialize, Serialize};

use crate::dem::{DemError, DemGrid};
use crate::par::{self, Parallelism};

/// Horizontal gradient magnitude (m/m) below which terrain counts as flat.
pub const FLAT_GRADIENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalField {
    pub ncols: usize,
    pub nrows: usize,
    /// Unit vectors, x east, y north, z up. Row-major, row 0 north.
    pub normals: Vec<[f64; 3]>,
}

impl NormalField {
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.normals[row * self.ncols + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeField {
    pub ncols: usize,
    pub nrows: usize,
    /// Degrees in `[0, 90)`.
    pub slope_deg: Vec<f64>,
}

impl SlopeField {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slope_deg[row * self.ncols + col]
    }
}

/// Result of a descent query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Descent {
    /// Unit vector pointing downhill.
    Direction([f64; 2]),
    Flat,
}

pub fn compute_normals(grid: &DemGrid) -> Result<NormalField, DemError> {
    compute_normals_with(grid, Parallelism::Sequential)
}

/// Central differences inside, one-sided differences on the border.
pub fn compute_normals_with(grid: &DemGrid, policy: Parallelism) -> Result<NormalField, DemError> {
    if let Some((row, col)) = grid.first_nodata() {
        return Err(DemError::Nodata { row, col });
    }
    let (nc, nr) = (grid.ncols(), grid.nrows());
    let cs = grid.cellsize();
    let mut normals = vec![[0.0, 0.0, 1.0]; nc * nr];
    policy.install(|| {
        par::for_each_row(policy, &mut normals, nc, |row, out| {
            for (col, n) in out.iter_mut().enumerate() {
                let dzdx = if col == 0 {
                    (grid.get(row, 1) - grid.get(row, 0)) / cs
                } else if col == nc - 1 {
                    (grid.get(row, nc - 1) - grid.get(row, nc - 2)) / cs
                } else {
                    (grid.get(row, col + 1) - grid.get(row, col - 1)) / (2.0 * cs)
                };
                // Rows run south, y runs north.
                let dzdy = if row == 0 {
                    (grid.get(0, col) - grid.get(1, col)) / cs
                } else if row == nr - 1 {
                    (grid.get(nr - 2, col) - grid.get(nr - 1, col)) / cs
                } else {
                    (grid.get(row - 1, col) - grid.get(row + 1, col)) / (2.0 * cs)
                };
                let len = (dzdx * dzdx + dzdy * dzdy + 1.0).sqrt();
                *n = [-dzdx / len, -dzdy / len, 1.0 / len];
            }
        })
    });
    Ok(NormalField {
        ncols: nc,
        nrows: nr,
        normals,
    })
}

pub fn steepness_deg(normals: &NormalField) -> SlopeField {
    SlopeField {
        ncols: normals.ncols,
        nrows: normals.nrows,
        slope_deg: normals
            .normals
            .iter()
            .map(|n| n[2].clamp(-1.0, 1.0).acos().to_degrees())
            .collect(),
    }
}

/// Normalized negative gradient of the bilinear surface at `(x, y)`.
pub fn downslope_dir(grid: &DemGrid, x: f64, y: f64) -> Result<Descent, DemError> {
    let (_, gx, gy) = grid.sample_with_gradient(x, y)?;
    let mag = gx.hypot(gy);
    if mag < FLAT_GRADIENT {
        Ok(Descent::Flat)
    } else {
        Ok(Descent::Direction([-gx / mag, -gy / mag]))
    }
}

/// Deterministic steepest-descent path from the center of `start_cell`
/// (`(row, col)`), advancing `step` meters per iteration.
///
/// Stops when the terrain is flat, when the next position would leave the
/// cell-center hull (the last position is clipped onto it), when the angle
/// from the current position up to the start falls below
/// `runout_angle_deg`, or after `10 * max(ncols, nrows)` steps.
///
/// This walker is deliberately separate from [`crate::simulate`] and is used
/// to check it.
pub fn oracle_descent_path(
    grid: &DemGrid,
    start_cell: (usize, usize),
    runout_angle_deg: f64,
    step: f64,
) -> Vec<(f64, f64)> {
    let (x0, y0) = grid.cell_center(start_cell.0, start_cell.1);
    let mut path = vec![(x0, y0)];
    let Ok(z0) = grid.sample_with_gradient(x0, y0).map(|s| s.0) else {
        return path;
    };
    let alpha = runout_angle_deg.to_radians();
    let dom = grid.sample_domain();
    let cap = 10 * grid.ncols().max(grid.nrows());

    let (mut x, mut y) = (x0, y0);
    for _ in 0..cap {
        let Ok(Descent::Direction([dx, dy])) = downslope_dir(grid, x, y) else {
            break;
        };
        let (nx, ny) = (x + step * dx, y + step * dy);
        let inside = nx >= dom.min_x && nx <= dom.max_x && ny >= dom.min_y && ny <= dom.max_y;
        if !inside {
            // Largest fraction of the step that stays in the hull.
            let mut t: f64 = 1.0;
            if nx < dom.min_x {
                t = t.min((dom.min_x - x) / (nx - x));
            }
            if nx > dom.max_x {
                t = t.min((dom.max_x - x) / (nx - x));
            }
            if ny < dom.min_y {
                t = t.min((dom.min_y - y) / (ny - y));
            }
            if ny > dom.max_y {
                t = t.min((dom.max_y - y) / (ny - y));
            }
            let t = t.clamp(0.0, 1.0);
            let cx = (x + t * (nx - x)).clamp(dom.min_x, dom.max_x);
            let cy = (y + t * (ny - y)).clamp(dom.min_y, dom.max_y);
            path.push((cx, cy));
            break;
        }
        path.push((nx, ny));
        x = nx;
        y = ny;
        let Ok(z) = grid.sample_with_gradient(x, y).map(|s| s.0) else {
            break;
        };
        let travel = (z0 - z).atan2((x - x0).hypot(y - y0));
        if travel < alpha {
            break;
        }
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dem::gen_parabola;
    use proptest::prelude::*;

    fn plane(f: impl Fn(f64, f64) -> f64) -> DemGrid {
        DemGrid::from_fn(20, 16, 0.0, 0.0, 5.0, f).unwrap()
    }

    #[test]
    fn flat_normals_point_up() {
        let g = plane(|_, _| 123.0);
        let n = compute_normals(&g).unwrap();
        assert!(n.normals.iter().all(|v| *v == [0.0, 0.0, 1.0]));
        assert!(steepness_deg(&n).slope_deg.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn inclined_plane_normals() {
        let n = compute_normals(&plane(|x, _| x)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for v in &n.normals {
            assert!((v[0] + h).abs() < 1e-9 && v[1].abs() < 1e-9 && (v[2] - h).abs() < 1e-9);
        }
        let s = steepness_deg(&n);
        assert!(s.slope_deg.iter().all(|d| (d - 45.0).abs() < 1e-9));
    }

    #[test]
    fn north_facing_plane_sign() {
        // z grows north: normal tilts south (negative y).
        let n = compute_normals(&plane(|_, y| 0.5 * y)).unwrap();
        assert!(n.normals.iter().all(|v| v[1] < 0.0 && v[0].abs() < 1e-12));
    }

    #[test]
    fn rotation_about_z_keeps_steepness() {
        let east = steepness_deg(&compute_normals(&plane(|x, _| 0.7 * x)).unwrap());
        let sq = DemGrid::from_fn(16, 16, 0.0, 0.0, 5.0, |_, y| 0.7 * y).unwrap();
        let north = steepness_deg(&compute_normals(&sq).unwrap());
        for (a, b) in east.slope_deg.iter().zip(&north.slope_deg) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn offset_does_not_change_normals() {
        let (g, _) = gen_parabola();
        let shifted = DemGrid::new(
            g.ncols(),
            g.nrows(),
            g.origin_x(),
            g.origin_y(),
            g.cellsize(),
            g.nodata(),
            g.elevations().iter().map(|z| z + 250.0).collect(),
        )
        .unwrap();
        let (a, b) = (compute_normals(&g).unwrap(), compute_normals(&shifted).unwrap());
        for (u, v) in a.normals.iter().zip(&b.normals) {
            for k in 0..3 {
                assert!((u[k] - v[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nodata_is_reported() {
        let mut z = vec![1.0; 9];
        z[5] = -9999.0;
        let g = DemGrid::new(3, 3, 0.0, 0.0, 1.0, -9999.0, z).unwrap();
        assert_eq!(compute_normals(&g), Err(DemError::Nodata { row: 1, col: 2 }));
    }

    #[test]
    fn parallel_normals_match_sequential() {
        let (g, _) = gen_parabola();
        let a = compute_normals(&g).unwrap();
        let b = compute_normals_with(&g, Parallelism::Threads(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parabola_normal_matches_stencil() {
        let (g, _) = gen_parabola();
        let n = compute_normals(&g).unwrap().get(75, 100);
        // Independent evaluation from the closed form at neighboring centers.
        let z = |c: f64| crate::dem::parabola_elevation(c * 10.0);
        let dzdx = (z(101.0) - z(99.0)) / 20.0;
        let len = (dzdx * dzdx + 1.0).sqrt();
        let want = [-dzdx / len, 0.0, 1.0 / len];
        for k in 0..3 {
            assert!((n[k] - want[k]).abs() < 1e-9, "{n:?} vs {want:?}");
        }
    }

    #[test]
    fn descent_directions() {
        assert_eq!(
            downslope_dir(&plane(|x, _| x), 40.0, 40.0).unwrap(),
            Descent::Direction([-1.0, 0.0])
        );
        assert_eq!(downslope_dir(&plane(|_, _| 5.0), 40.0, 40.0).unwrap(), Descent::Flat);
        let (g, _) = gen_parabola();
        let (x, y) = g.cell_center(75, 100);
        assert_eq!(downslope_dir(&g, x + 3.0, y).unwrap(), Descent::Direction([1.0, 0.0]));
        assert!(downslope_dir(&g, -1.0, y).is_err());
    }

    #[test]
    fn oracle_on_flat_grid_stays_put() {
        let g = plane(|_, _| 0.0);
        assert_eq!(oracle_descent_path(&g, (3, 3), 25.0, 5.0), vec![g.cell_center(3, 3)]);
    }

    #[test]
    fn oracle_on_plane_stops_at_travel_angle() {
        // 45 degree plane: travel angle stays 45, so it runs to the west edge.
        let g = plane(|x, _| x);
        let p = oracle_descent_path(&g, (8, 18), 25.0, 5.0);
        assert_eq!(p.last().unwrap().0, g.sample_domain().min_x);
        // 20 degree plane is below alpha: one step then stop.
        let slope = 20f64.to_radians().tan();
        let g = plane(|x, _| slope * x);
        assert_eq!(oracle_descent_path(&g, (8, 18), 25.0, 5.0).len(), 2);
    }

    #[test]
    fn oracle_on_parabola_descends_east() {
        let (g, _) = gen_parabola();
        let p = oracle_descent_path(&g, (75, 5), 25.0, g.cellsize());
        assert!(p.len() > 10);
        for w in p.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert_eq!(w[1].1, w[0].1);
        }
        let zs: Vec<f64> = p
            .iter()
            .map(|&(x, y)| crate::dem::sample_elevation(&g, x, y).unwrap())
            .collect();
        assert!(zs.windows(2).all(|w| w[1] <= w[0]));
    }

    proptest! {
        #[test]
        fn steepness_matches_arccos(theta in 0.0f64..1.5, phi in 0.0f64..std::f64::consts::TAU) {
            let n = NormalField {
                ncols: 1,
                nrows: 1,
                normals: vec![[theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()]],
            };
            let s = steepness_deg(&n).slope_deg[0];
            prop_assert!((s - theta.to_degrees()).abs() < 1e-9);
        }

        #[test]
        fn normals_are_unit_and_upward(seed in 0u64..1000) {
            let g = crate::dem::gen_smooth_terrain(seed, 12, 9, 7.5);
            for v in compute_normals(&g).unwrap().normals {
                let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                prop_assert!((len - 1.0).abs() < 1e-9);
                prop_assert!(v[2] > 0.0);
            }
        }
    }
}
