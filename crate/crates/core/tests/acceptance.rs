//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use geoverlay_core::dem::{gen_parabola, gen_smooth_terrain, parse_ascii_grid, write_ascii_grid};
use geoverlay_core::overlay::{build_mipmap, check_texture_size, colorize, decode_png, encode_png, Colormap};
use geoverlay_core::rng::ParticleStream;
use geoverlay_core::simulate::{compute_snow, detect_release_points, run_avalanche_with, simulate_particle};
use geoverlay_core::terrain::{compute_normals, oracle_descent_path, steepness_deg, SlopeField};
use geoverlay_core::workflow::{
    build_avalanche_graph, build_snow_graph, node_ids, DatasetSource, Executor, NodeStatus, ReleaseSource,
    Resource,
};
use geoverlay_core::{
    AvalancheParams, DemGrid, Error, OverlayError, OverlayTexture, Parallelism, ReleaseMask, RunoutRaster,
    SnowParams,
};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

fn paper_params(seed: u64) -> AvalancheParams {
    AvalancheParams {
        persistence: 0.90,
        randomness: 0.16,
        runout_angle_deg: 25.0,
        particles_per_release_cell: 2048,
        seed,
        max_steps: None,
    }
}

fn raster_hash(r: &RunoutRaster) -> String {
    Resource::RunoutRaster(Arc::new(r.clone())).digest().to_hex()
}

fn cells(grid: &DemGrid, path: &[(f64, f64)]) -> Vec<(usize, usize)> {
    path.iter().map(|&(x, y)| grid.cell_at(x, y)).collect()
}

fn oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let params = AvalancheParams {
        persistence: 0.0,
        randomness: 0.0,
        runout_angle_deg: 25.0,
        ..Default::default()
    };
    let mut compared = 0usize;
    let mut steps = 0usize;
    let mut check = |grid: &DemGrid, starts: &[(usize, usize)], label: &str| -> Result<(), String> {
        for &(r, c) in starts {
            let start = grid.cell_center(r, c);
            let mut rng = ParticleStream::new(0, 0, 0);
            let traj = simulate_particle(grid, start, &params, &mut rng).map_err(|e| e.to_string())?;
            let got = cells(grid, &traj.positions);
            let want = cells(grid, &oracle_descent_path(grid, (r, c), 25.0, grid.cellsize()));
            ensure!(
                got == want,
                "{label} start ({r},{c}): {} cells vs oracle {}",
                got.len(),
                want.len()
            );
            compared += 1;
            steps += got.len() - 1;
        }
        Ok(())
    };

    let (parabola, mask) = gen_parabola();
    let mut starts = mask.cells();
    starts.extend((0..parabola.nrows()).step_by(15).flat_map(|r| (0..200).step_by(13).map(move |c| (r, c))));
    check(&parabola, &starts, "parabola")?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..100u64 {
        let nc = 24 + below(&mut rng, 40);
        let nr = 24 + below(&mut rng, 40);
        let cs = range(&mut rng, 5.0, 30.0);
        let grid = gen_smooth_terrain(seed, nc, nr, cs);
        let starts: Vec<(usize, usize)> = (0..nr).step_by(4).flat_map(|r| (0..nc).step_by(4).map(move |c| (r, c))).collect();
        check(&grid, &starts, &format!("terrain {seed}"))?;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s");
    Ok(format!("{compared} paths, {steps} steps matched exactly in {secs:.2} s"))
}

/// Cells with hits must form one 8-connected region holding every release
/// cell and at least one valley-floor cell.
fn footprint_connected(grid: &DemGrid, mask: &ReleaseMask, r: &RunoutRaster) -> Result<usize, String> {
    let (nc, nr) = (r.ncols, r.nrows);
    let hit = |row: usize, col: usize| r.hit_count[row * nc + col] > 0;
    let release = mask.cells();
    let (r0, c0) = release[0];
    ensure!(hit(r0, c0), "release cell not hit");
    let mut seen = vec![false; nc * nr];
    let mut queue = VecDeque::from([(r0, c0)]);
    seen[r0 * nc + c0] = true;
    let mut size = 0;
    while let Some((row, col)) = queue.pop_front() {
        size += 1;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (rr, cc) = (row as i64 + dr, col as i64 + dc);
                if rr < 0 || cc < 0 || rr >= nr as i64 || cc >= nc as i64 {
                    continue;
                }
                let (rr, cc) = (rr as usize, cc as usize);
                if hit(rr, cc) && !seen[rr * nc + cc] {
                    seen[rr * nc + cc] = true;
                    queue.push_back((rr, cc));
                }
            }
        }
    }
    let total = r.hit_count.iter().filter(|&&h| h > 0).count();
    ensure!(size == total, "{total} hit cells but the release component has {size}");
    ensure!(release.iter().all(|&(a, b)| seen[a * nc + b]), "release cells disconnected");
    let floor = (0..nr * nc).filter(|&i| seen[i] && grid.elevations()[i] == 0.0).count();
    ensure!(floor > 0, "footprint never reaches the valley floor");
    Ok(floor)
}

fn paper_parameter_run() -> Outcome {
    let (grid, mask) = gen_parabola();
    let params = paper_params(7);
    let t0 = Instant::now();
    let a = run_avalanche_with(&grid, &mask, &params, Parallelism::Sequential).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    let b = run_avalanche_with(&grid, &mask, &params, Parallelism::Sequential).map_err(|e| e.to_string())?;
    ensure!(a.particles == 6144, "{} particles", a.particles);
    let floor = footprint_connected(&grid, &mask, &a)?;
    ensure!(a == b && raster_hash(&a) == raster_hash(&b), "seed-7 runs differ");
    ensure!(
        a.z_delta_max.iter().zip(&b.z_delta_max).all(|(x, y)| x.to_bits() == y.to_bits()),
        "z_delta_max bits differ"
    );
    ensure!(secs < 5.0, "single-threaded run took {secs:.2} s");
    let rate = a.total_steps as f64 / secs;
    ensure!(rate >= 1e6, "{rate:.0} particle-steps/s");
    Ok(format!(
        "6144 particles, {floor} floor cells reached, {:.3} s single-threaded, {:.2e} steps/s, bitwise repeatable",
        secs, rate
    ))
}

fn max_runout(mask: &ReleaseMask, r: &RunoutRaster) -> f64 {
    let release = mask.cells();
    let mut best = 0.0f64;
    for row in 0..r.nrows {
        for col in 0..r.ncols {
            if r.hit_count[row * r.ncols + col] == 0 {
                continue;
            }
            for &(a, b) in &release {
                let dx = (col as f64 - b as f64) * r.cellsize;
                let dy = (row as f64 - a as f64) * r.cellsize;
                best = best.max(dx.hypot(dy));
            }
        }
    }
    best
}

fn runout_monotonicity() -> Outcome {
    let (grid, mask) = gen_parabola();
    let alphas = [15.0, 20.0, 25.0, 30.0, 35.0];
    let mut spans = Vec::new();
    for seed in 0..20u64 {
        let mut prev = f64::INFINITY;
        let mut row = Vec::new();
        for &alpha in &alphas {
            let params = AvalancheParams {
                runout_angle_deg: alpha,
                particles_per_release_cell: 256,
                ..paper_params(seed)
            };
            let r = run_avalanche_with(&grid, &mask, &params, Parallelism::Auto).map_err(|e| e.to_string())?;
            let d = max_runout(&mask, &r);
            ensure!(d <= prev, "seed {seed}: runout {d} m at {alpha} deg exceeds {prev} m");
            prev = d;
            row.push(d);
        }
        spans.push(row);
    }
    let first = &spans[0];
    Ok(format!(
        "20 seeds non-increasing; seed 0 runout {:.0} m at 15 deg to {:.0} m at 35 deg",
        first[0], first[4]
    ))
}

fn thread_invariance() -> Outcome {
    let (grid, mask) = gen_parabola();
    for seed in 0..5u64 {
        let params = AvalancheParams {
            particles_per_release_cell: 512,
            ..paper_params(seed)
        };
        let reference = run_avalanche_with(&grid, &mask, &params, Parallelism::Threads(1)).map_err(|e| e.to_string())?;
        let h1 = raster_hash(&reference);
        for n in [2usize, 4, 8] {
            let r = run_avalanche_with(&grid, &mask, &params, Parallelism::Threads(n)).map_err(|e| e.to_string())?;
            ensure!(raster_hash(&r) == h1, "seed {seed}: {n} threads differ from 1");
        }
        let seq = run_avalanche_with(&grid, &mask, &params, Parallelism::Sequential).map_err(|e| e.to_string())?;
        ensure!(raster_hash(&seq) == h1, "seed {seed}: sequential differs");
    }
    Ok(format!(
        "5 seeds x {{1,2,4,8}} threads identical (parallel feature {})",
        if cfg!(feature = "parallel") { "on" } else { "off" }
    ))
}

fn brute_force_mask(slope: &SlopeField, min: f64, max: f64, stride: usize) -> Vec<bool> {
    let mut out = Vec::new();
    for i in 0..slope.nrows {
        for j in 0..slope.ncols {
            let s = slope.slope_deg[i * slope.ncols + j];
            out.push(i % stride == 0 && j % stride == 0 && s >= min && s <= max);
        }
    }
    out
}

fn release_mask_oracle() -> Outcome {
    let (grid, _) = gen_parabola();
    let slope = steepness_deg(&compute_normals(&grid).map_err(|e| e.to_string())?);
    let mut counts = Vec::new();
    for (min, max) in [(28.0, 60.0), (30.0, 45.0)] {
        for stride in [1usize, 4] {
            let mask = detect_release_points(&slope, min, max, stride).map_err(|e| e.to_string())?;
            let want = brute_force_mask(&slope, min, max, stride);
            ensure!(mask.mask == want, "band [{min},{max}] stride {stride} differs");
            ensure!(mask.count() > 0, "band [{min},{max}] stride {stride} is empty");
            counts.push(mask.count());
        }
    }
    Ok(format!("4 band/stride cases match cell-for-cell, counts {counts:?}"))
}

fn snow_formula() -> Outcome {
    let (grid, _) = gen_parabola();
    let normals = compute_normals(&grid).map_err(|e| e.to_string())?;
    let slope = steepness_deg(&normals);
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut partial = 0usize;
    for set in 0..10 {
        let p = SnowParams {
            snow_line_m: range(&mut rng, 100.0, 1100.0),
            altitude_blend_m: if set == 0 { 0.0 } else { range(&mut rng, 0.0, 400.0) },
            max_steepness_deg: range(&mut rng, 10.0, 50.0),
            steepness_blend_deg: if set == 1 { 0.0 } else { range(&mut rng, 0.0, 20.0) },
        };
        let tex = compute_snow(&grid, &normals, &p).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            let (r, c) = (below(&mut rng, grid.nrows()), below(&mut rng, grid.ncols()));
            let z = grid.get(r, c);
            let s = slope.slope_deg[r * grid.ncols() + c];
            let eps = 1e-6;
            let a_alt = ((z - (p.snow_line_m - p.altitude_blend_m)) / p.altitude_blend_m.max(eps)).clamp(0.0, 1.0);
            let a_slope =
                (((p.max_steepness_deg + p.steepness_blend_deg) - s) / p.steepness_blend_deg.max(eps)).clamp(0.0, 1.0);
            let alpha = (255.0 * a_alt * a_slope).round() as u8;
            let px = tex.pixel(c, r);
            ensure!(px == [255, 255, 255, alpha], "set {set} texel ({r},{c}): {px:?} vs alpha {alpha}");
            partial += usize::from(alpha > 0 && alpha < 255);
        }
    }
    Ok(format!("10000 texels exact, {partial} in the blend ramps"))
}

fn random_texture(rng: &mut ChaCha8Rng, w: usize, h: usize) -> OverlayTexture {
    let mut px = vec![0u8; w * h * 4];
    rng.fill_bytes(&mut px);
    for p in px.chunks_exact_mut(4) {
        match p[3] % 4 {
            0 => p[3] = 0,
            1 => p[3] = 255,
            _ => {}
        }
    }
    OverlayTexture::new(w, h, px).unwrap()
}

/// Integer 2x2 premultiplied average with round-half-up.
fn oracle_level1(tex: &OverlayTexture) -> Vec<[u8; 4]> {
    let mut out = Vec::new();
    for y in 0..tex.height() / 2 {
        for x in 0..tex.width() / 2 {
            let block = [
                tex.pixel(2 * x, 2 * y),
                tex.pixel(2 * x + 1, 2 * y),
                tex.pixel(2 * x, 2 * y + 1),
                tex.pixel(2 * x + 1, 2 * y + 1),
            ];
            let sa: u64 = block.iter().map(|p| p[3] as u64).sum();
            let a = (sa + 2) / 4;
            if a == 0 {
                out.push([0; 4]);
                continue;
            }
            let mut px = [0u8; 4];
            for k in 0..3 {
                let sc: u64 = block.iter().map(|p| p[k] as u64 * p[3] as u64).sum();
                px[k] = ((sc + 2 * a) / (4 * a)).min(255) as u8;
            }
            px[3] = a as u8;
            out.push(px);
        }
    }
    out
}

fn mipmap_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst = 0.0f64;
    let mut levels = 0;
    for case in 0..40 {
        let w = 1usize << below(&mut rng, 8);
        let h = 1usize << below(&mut rng, 8);
        let tex = random_texture(&mut rng, w, h);
        let pyr = build_mipmap(&tex);
        let base = tex.premultiplied_mean();
        for lvl in pyr.levels() {
            let m = lvl.premultiplied_mean();
            for k in 0..4 {
                let err = (m[k] - base[k]).abs() / 255.0;
                worst = worst.max(err);
                ensure!(err <= 0.5 / 255.0, "case {case} ({w}x{h}) channel {k}: {err}");
            }
            levels += 1;
        }
    }
    for case in 0..50 {
        let tex = random_texture(&mut rng, 8, 8);
        let pyr = build_mipmap(&tex);
        let l1 = &pyr.levels()[1];
        let want = oracle_level1(&tex);
        let got: Vec<[u8; 4]> = (0..16).map(|i| l1.pixel(i % 4, i / 4)).collect();
        ensure!(got == want, "8x8 case {case}: level 1 differs from oracle");
    }
    Ok(format!(
        "{levels} levels within {:.3}/255 of level 0; 50 random 8x8 level-1 exact",
        worst * 255.0
    ))
}

fn reexecution_contract() -> Outcome {
    let (grid, mask) = gen_parabola();
    let dataset = DatasetSource::new(Arc::new(grid.clone()));
    let mut params = AvalancheParams {
        particles_per_release_cell: 256,
        ..paper_params(7)
    };
    let release = ReleaseSource::Mask(Arc::new(mask));
    let region = grid.extent();
    let mut ex = Executor::default();

    let g = build_avalanche_graph(region, &dataset, &params, &release).map_err(|e| e.to_string())?;
    ensure!(g.nodes().len() == 6, "MASK graph has {} nodes", g.nodes().len());
    let cold = ex.execute(&g).map_err(|e| e.to_string())?.report;
    ensure!(cold.executed().len() == 6 && cold.cache_hits().is_empty(), "cold run {:?}", cold.nodes);
    let warm = ex.execute(&g).map_err(|e| e.to_string())?.report;
    ensure!(warm.cache_hits().len() == 6 && warm.executed().is_empty(), "warm run {:?}", warm.executed());

    params.persistence = 0.8;
    let g2 = build_avalanche_graph(region, &dataset, &params, &release).map_err(|e| e.to_string())?;
    let edit = ex.execute(&g2).map_err(|e| e.to_string())?.report;
    ensure!(
        edit.executed() == [node_ids::TRAJECTORIES, node_ids::OVERLAY],
        "after a params edit executed {:?}",
        edit.executed()
    );
    for id in [node_ids::SELECT_TILES, node_ids::FETCH_TILES, node_ids::STITCH, node_ids::NORMALS] {
        ensure!(edit.status(id) == Some(NodeStatus::CacheHit), "{id} re-ran");
    }

    let snow = build_snow_graph(region, &dataset, &SnowParams::default()).map_err(|e| e.to_string())?;
    let s = ex.execute(&snow).map_err(|e| e.to_string())?.report;
    ensure!(s.cache_hits().len() == 4 && s.executed() == [node_ids::SNOW], "snow run {:?}", s.executed());
    Ok(format!(
        "cold 6 EXECUTED, warm 6 CACHE_HIT, params edit {} EXECUTED / {} CACHE_HIT, snow reuses 4",
        edit.executed().len(),
        edit.cache_hits().len()
    ))
}

fn texture_cap() -> Outcome {
    let is_cap = |e: &OverlayError| matches!(e, OverlayError::TooLarge { .. }) && e.to_string().contains("8192");
    ensure!(check_texture_size(8192, 8192).is_ok(), "8192 rejected");
    for (w, h) in [(8193, 1), (1, 8193), (9000, 9000)] {
        let e = OverlayTexture::transparent(w, h).unwrap_err();
        ensure!(is_cap(&e), "{w}x{h}: {e}");
        let e = OverlayTexture::new(w, h, Vec::new()).unwrap_err();
        ensure!(is_cap(&e), "{w}x{h} new: {e}");
    }
    let wide = DemGrid::from_fn(8193, 2, 0.0, 0.0, 1.0, |x, _| x).map_err(|e| e.to_string())?;
    let runout = RunoutRaster::zeros_like(&wide);
    let e = colorize(&runout, &Colormap::velocity()).unwrap_err();
    ensure!(is_cap(&e), "colorize: {e}");
    let normals = compute_normals(&wide).map_err(|e| e.to_string())?;
    let e = Error::from(compute_snow(&wide, &normals, &SnowParams::default()).unwrap_err());
    ensure!(e.texture_limit().is_some(), "snow: {e}");

    // Requested through a workflow, the failure names the node and the cap.
    let ds = DatasetSource::new(Arc::new(wide.clone()));
    let g = build_snow_graph(wide.extent(), &ds, &SnowParams::default()).map_err(|e| e.to_string())?;
    let e = Error::from(Executor::default().execute(&g).unwrap_err());
    ensure!(e.texture_limit().is_some() && is_cap(e.texture_limit().unwrap()), "workflow: {e}");
    Ok(format!("rejects > 8192 on either axis: \"{}\"", e.texture_limit().unwrap()))
}

fn random_grid(rng: &mut ChaCha8Rng) -> DemGrid {
    let nc = 2 + below(rng, 40);
    let nr = 2 + below(rng, 40);
    let nodata = if below(rng, 2) == 0 { -9999.0 } else { -32768.0 };
    let scale = [1e-3, 1.0, 1e3, 1e7][below(rng, 4)];
    let z = (0..nc * nr)
        .map(|_| if below(rng, 20) == 0 { nodata } else { range(rng, -1.0, 1.0) * scale })
        .collect();
    DemGrid::new(
        nc,
        nr,
        range(rng, -1e6, 1e6),
        range(rng, -1e6, 1e6),
        range(rng, 0.01, 100.0),
        nodata,
        z,
    )
    .unwrap()
}

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for i in 0..50 {
        let g = random_grid(&mut rng);
        let back = parse_ascii_grid(&write_ascii_grid(&g)).map_err(|e| format!("grid {i}: {e}"))?;
        ensure!(back == g, "grid {i} changed in the ASCII round trip");
        ensure!(
            back.elevations().iter().zip(g.elevations()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "grid {i} bits changed"
        );
    }
    for i in 0..50 {
        let (w, h) = (1 + below(&mut rng, 300), 1 + below(&mut rng, 300));
        let tex = random_texture(&mut rng, w, h);
        let back = decode_png(&encode_png(&tex).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure!(back == tex, "texture {i} ({w}x{h}) changed in the PNG round trip");
    }
    Ok("50 ASCII grids and 50 PNG textures identical after round trip".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("paper-parameter parabola run", paper_parameter_run),
        ("runout monotonicity", runout_monotonicity),
        ("thread-count invariance", thread_invariance),
        ("release-mask oracle", release_mask_oracle),
        ("snow formula", snow_formula),
        ("mipmap conservation", mipmap_conservation),
        ("re-execution contract", reexecution_contract),
        ("texture cap", texture_cap),
        ("format round trips", format_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<30} {detail} [{secs:.2} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name:<30} {why} [{secs:.2} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
