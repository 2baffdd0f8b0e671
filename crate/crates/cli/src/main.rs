//! `geoverlay`: generate datasets, run simulations, benchmark, serve.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geoverlay_core::dem::{gen_parabola, parse_ascii_grid, write_ascii_grid};
use geoverlay_core::overlay::encode_png;
use geoverlay_core::workflow::{
    build_avalanche_graph, build_snow_graph, node_ids, DatasetSource, ExecutionResult, Executor, Resource,
    ReleaseSource,
};
use geoverlay_core::{AvalancheParams, DemGrid, Parallelism, ReleaseMask, RunoutRaster, SnowParams};
use geoverlay_service::{AppState, DatasetRegistry, ServiceConfig, DEFAULT_MAX_JOBS, RELEASE_FILE};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "geoverlay", version, about = "Terrain overlay simulations and tiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (dem.asc, release.asc).
    Generate {
        #[arg(long, value_enum, default_value_t = Kind::Parabola)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one simulation and export the overlay and rasters.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = Mode::Avalanche)]
        mode: Mode,
        #[command(flatten)]
        snow: SnowArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Time repeated avalanche runs and check thread determinism.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 10)]
        runs: usize,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory of datasets, one subdirectory each.
        #[arg(long, env = "WEBIGEO_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_JOBS)]
        max_jobs: usize,
        /// Built UI bundle to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Parabola,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Avalanche,
    Snow,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dem: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    persistence: f64,
    #[arg(long, default_value_t = 0.16)]
    randomness: f64,
    /// Degrees.
    #[arg(long, default_value_t = 25.0)]
    runout_angle: f64,
    /// Particles per release cell.
    #[arg(long, default_value_t = 2048)]
    particles: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
    /// Release mask grid; defaults to release.asc beside the DEM, then to
    /// slope detection.
    #[arg(long)]
    release: Option<PathBuf>,
    #[arg(long, default_value_t = 28.0)]
    release_min: f64,
    #[arg(long, default_value_t = 60.0)]
    release_max: f64,
    #[arg(long, default_value_t = 1)]
    stride: usize,
}

#[derive(Args)]
struct SnowArgs {
    #[arg(long, default_value_t = SnowParams::default().snow_line_m)]
    snow_line: f64,
    #[arg(long, default_value_t = SnowParams::default().altitude_blend_m)]
    altitude_blend: f64,
    #[arg(long, default_value_t = SnowParams::default().max_steepness_deg)]
    max_steepness: f64,
    #[arg(long, default_value_t = SnowParams::default().steepness_blend_deg)]
    steepness_blend: f64,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl ToString) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Generate { kind, out } => cmd_generate(kind, &out),
        Command::Simulate { run, mode, snow, out } => cmd_simulate(&run, mode, &snow, &out),
        Command::Bench { run, runs } => cmd_bench(&run, runs),
        Command::Serve {
            port,
            host,
            data_dir,
            max_jobs,
            ui_dir,
            threads,
        } => cmd_serve(&host, port, data_dir, max_jobs, ui_dir, threads),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn cmd_generate(kind: Kind, out: &Path) -> CmdResult {
    let Kind::Parabola = kind;
    std::fs::create_dir_all(out).map_err(|e| Failure::runtime(format!("{}: {e}", out.display())))?;
    let (dem, mask) = gen_parabola();
    write(&out.join("dem.asc"), write_ascii_grid(&dem))?;
    let mask_grid = mask.to_grid(&dem).map_err(Failure::runtime)?;
    write(&out.join(RELEASE_FILE), write_ascii_grid(&mask_grid))?;
    println!(
        "{}",
        json!({"dem": out.join("dem.asc"), "release": out.join(RELEASE_FILE), "release_cells": mask.count()})
    );
    Ok(())
}

fn read_grid(path: &Path) -> Result<DemGrid, Failure> {
    if !path.is_file() {
        return Err(Failure::usage(format!("no such file: {}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    parse_ascii_grid(&text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

struct Loaded {
    dem: Arc<DemGrid>,
    release: ReleaseSource,
    release_label: String,
}

fn load(run: &RunArgs) -> Result<Loaded, Failure> {
    let dem = read_grid(&run.dem)?;
    let beside = run.dem.with_file_name(RELEASE_FILE);
    let mask_path = match &run.release {
        Some(p) => Some(p.clone()),
        None if beside.is_file() => Some(beside),
        None => None,
    };
    let (release, release_label) = match mask_path {
        Some(p) => {
            let g = read_grid(&p)?;
            if g.ncols() != dem.ncols() || g.nrows() != dem.nrows() {
                return Err(Failure::usage(format!(
                    "release mask {} is {}x{}, DEM is {}x{}",
                    p.display(),
                    g.ncols(),
                    g.nrows(),
                    dem.ncols(),
                    dem.nrows()
                )));
            }
            (
                ReleaseSource::Mask(Arc::new(ReleaseMask::from_grid(&g))),
                p.display().to_string(),
            )
        }
        None => {
            if !(0.0 <= run.release_min && run.release_min < run.release_max && run.release_max <= 90.0)
                || run.stride < 1
            {
                return Err(Failure::usage("need 0 <= release-min < release-max <= 90 and stride >= 1"));
            }
            (
                ReleaseSource::Steepness {
                    min_deg: run.release_min,
                    max_deg: run.release_max,
                    stride: run.stride,
                },
                format!("slope [{}, {}] stride {}", run.release_min, run.release_max, run.stride),
            )
        }
    };
    Ok(Loaded {
        dem: Arc::new(dem),
        release,
        release_label,
    })
}

fn avalanche_params(run: &RunArgs) -> Result<AvalancheParams, Failure> {
    let p = AvalancheParams {
        persistence: run.persistence,
        randomness: run.randomness,
        runout_angle_deg: run.runout_angle,
        particles_per_release_cell: run.particles,
        seed: run.seed,
        max_steps: None,
    };
    usage_check(p.field_errors())?;
    Ok(p)
}

fn usage_check(errs: Vec<geoverlay_core::simulate::FieldError>) -> CmdResult {
    if errs.is_empty() {
        return Ok(());
    }
    let msg = errs
        .iter()
        .map(|e| format!("{}: {}", e.field, e.message))
        .collect::<Vec<_>>()
        .join("; ");
    Err(Failure::usage(msg))
}

fn parallelism(threads: Option<usize>) -> Result<Parallelism, Failure> {
    if threads == Some(0) {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    Ok(Parallelism::from_threads(threads))
}

fn runout_of(res: &ExecutionResult) -> Result<&RunoutRaster, Failure> {
    res.get(node_ids::TRAJECTORIES, "runout")
        .and_then(Resource::as_runout)
        .ok_or_else(|| Failure::runtime("workflow produced no runout raster"))
}

fn z_delta_hash(r: &RunoutRaster) -> Result<String, Failure> {
    let g = r.z_delta_max_grid().map_err(Failure::runtime)?;
    Ok(Resource::DemGrid(Arc::new(g)).digest().to_hex())
}

fn cmd_simulate(run: &RunArgs, mode: Mode, snow: &SnowArgs, out: &Path) -> CmdResult {
    let policy = parallelism(run.threads)?;
    let loaded = load(run)?;
    let source = DatasetSource::new(loaded.dem.clone());
    let region = loaded.dem.extent();
    let graph = match mode {
        Mode::Avalanche => build_avalanche_graph(region, &source, &avalanche_params(run)?, &loaded.release),
        Mode::Snow => {
            let p = SnowParams {
                snow_line_m: snow.snow_line,
                altitude_blend_m: snow.altitude_blend,
                max_steepness_deg: snow.max_steepness,
                steepness_blend_deg: snow.steepness_blend,
            };
            usage_check(p.field_errors())?;
            build_snow_graph(region, &source, &p)
        }
    }
    .map_err(Failure::runtime)?;

    let mut ex = Executor::default().with_parallelism(policy);
    let res = ex.execute(&graph).map_err(Failure::runtime)?;
    let model_ms = res.report.total_ms;

    std::fs::create_dir_all(out).map_err(|e| Failure::runtime(format!("{}: {e}", out.display())))?;
    let terminal = if mode == Mode::Avalanche { node_ids::OVERLAY } else { node_ids::SNOW };
    let tex = res
        .get(terminal, "texture")
        .and_then(Resource::as_texture)
        .ok_or_else(|| Failure::runtime("workflow produced no texture"))?;
    let overlay_path = out.join("overlay.png");
    write(&overlay_path, encode_png(tex).map_err(Failure::runtime)?)?;
    let mut files = vec![overlay_path];
    let mut stats = json!({
        "mode": if mode == Mode::Avalanche { "avalanche" } else { "snow" },
        "model_runtime_ms": model_ms,
        "width": tex.width(),
        "height": tex.height(),
    });
    if mode == Mode::Avalanche {
        let r = runout_of(&res)?;
        for (name, grid) in [("z_delta_max.asc", r.z_delta_max_grid()), ("hit_count.asc", r.hit_count_grid())] {
            let path = out.join(name);
            write(&path, write_ascii_grid(&grid.map_err(Failure::runtime)?))?;
            files.push(path);
        }
        stats["particles"] = json!(r.particles);
        stats["total_steps"] = json!(r.total_steps);
        stats["z_delta_max_global"] = json!(r.z_delta_max_global());
        stats["hit_cells"] = json!(r.hit_count.iter().filter(|&&h| h > 0).count());
        stats["z_delta_max_hash"] = json!(z_delta_hash(r)?);
        stats["release"] = json!(loaded.release_label);
        stats["seed"] = json!(run.seed);
    }
    stats["files"] = json!(files);
    println!("{}", serde_json::to_string_pretty(&stats).expect("json"));
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchReport {
    runs: usize,
    mean_ms: f64,
    min_ms: f64,
    max_ms: f64,
    particle_steps_per_sec: f64,
    thread_count: usize,
    total_particle_steps: u64,
    total_model_ms: f64,
    particles_per_run: u64,
    z_delta_max_hash: String,
    /// Hash of the same run on one thread.
    single_thread_hash: String,
    deterministic: bool,
}

fn cmd_bench(run: &RunArgs, runs: usize) -> CmdResult {
    if runs < 1 {
        return Err(Failure::usage("--runs must be at least 1"));
    }
    let policy = parallelism(run.threads)?;
    let params = avalanche_params(run)?;
    let loaded = load(run)?;
    let source = DatasetSource::new(loaded.dem.clone());
    let graph =
        build_avalanche_graph(loaded.dem.extent(), &source, &params, &loaded.release).map_err(Failure::runtime)?;

    let mut ex = Executor::default().with_parallelism(policy);
    let mut times = Vec::with_capacity(runs);
    let mut steps = 0u64;
    let mut last = None;
    for _ in 0..runs {
        ex.clear_cache();
        let t0 = Instant::now();
        let res = ex.execute(&graph).map_err(Failure::runtime)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        let r = runout_of(&res)?;
        steps += r.total_steps;
        last = Some((z_delta_hash(r)?, r.particles));
    }
    let (hash, particles) = last.expect("at least one run");

    let mut single = Executor::default().with_parallelism(Parallelism::Threads(1));
    let reference = single.execute(&graph).map_err(Failure::runtime)?;
    let single_hash = z_delta_hash(runout_of(&reference)?)?;

    let total_ms: f64 = times.iter().sum();
    let report = BenchReport {
        runs,
        mean_ms: total_ms / runs as f64,
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(0.0, f64::max),
        particle_steps_per_sec: steps as f64 / (total_ms / 1e3),
        thread_count: policy.thread_count(),
        total_particle_steps: steps,
        total_model_ms: total_ms,
        particles_per_run: particles,
        deterministic: hash == single_hash,
        z_delta_max_hash: hash,
        single_thread_hash: single_hash,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    if !report.deterministic {
        return Err(Failure::runtime("z_delta_max differs between thread counts"));
    }
    Ok(())
}

fn cmd_serve(
    host: &str,
    port: u16,
    data_dir: Option<PathBuf>,
    max_jobs: usize,
    ui_dir: Option<PathBuf>,
    threads: Option<usize>,
) -> CmdResult {
    let policy = parallelism(threads)?;
    if max_jobs < 1 {
        return Err(Failure::usage("--max-jobs must be at least 1"));
    }
    let mut registry = DatasetRegistry::with_builtin();
    if let Some(dir) = &data_dir {
        if !dir.is_dir() {
            return Err(Failure::usage(format!("no such directory: {}", dir.display())));
        }
        registry.load_dir(dir).map_err(Failure::runtime)?;
    }
    let state = AppState::new(
        registry,
        ServiceConfig {
            max_jobs,
            ui_dir,
            parallelism: policy,
        },
    );
    let rt = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| Failure::runtime(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(Failure::runtime)?;
        let names: Vec<&str> = state.registry().iter().map(|d| d.name.as_str()).collect();
        println!("listening on http://{addr} (port {}) datasets: {}", addr.port(), names.join(", "));
        geoverlay_service::serve(listener, state.clone())
            .await
            .map_err(Failure::runtime)
    })
}
