use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use geoverlay_core::dem::parse_ascii_grid;
use geoverlay_core::overlay::decode_png;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geoverlay"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn generate(dir: &Path) {
    let out = run(&["generate", "--kind", "parabola", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn generate_is_deterministic_with_three_release_cells() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path());
    generate(b.path());
    for f in ["dem.asc", "release.asc"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let dem = std::fs::read_to_string(a.path().join("dem.asc")).unwrap();
    assert!(dem.starts_with("ncols 501\nnrows 151\n"));
    let g = parse_ascii_grid(&dem).unwrap();
    assert_eq!(g.cellsize(), 10.0);
    let mask = parse_ascii_grid(&std::fs::read_to_string(a.path().join("release.asc")).unwrap()).unwrap();
    assert_eq!(mask.elevations().iter().filter(|&&v| v == 1.0).count(), 3);
    assert_eq!(mask.elevations().iter().filter(|&&v| v == 0.0).count(), 501 * 151 - 3);
}

#[test]
fn simulate_writes_overlay_and_rasters() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let out = dir.path().join("out");
    let dem = dir.path().join("dem.asc");
    let stats = stdout_json(&run(&[
        "simulate",
        "--dem",
        dem.to_str().unwrap(),
        "--particles",
        "64",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(stats["particles"], 192);
    assert!(stats["hit_cells"].as_u64().unwrap() > 0);

    let tex = decode_png(&std::fs::read(out.join("overlay.png")).unwrap()).unwrap();
    assert_eq!((tex.width(), tex.height()), (501, 151));
    let opaque = (0..151)
        .flat_map(|y| (0..501).map(move |x| (x, y)))
        .filter(|&(x, y)| tex.pixel(x, y)[3] > 0)
        .count();
    assert!(opaque > 0);
    let hits = parse_ascii_grid(&std::fs::read_to_string(out.join("hit_count.asc")).unwrap()).unwrap();
    assert_eq!(
        hits.elevations().iter().filter(|&&v| v > 0.0).count() as u64,
        stats["hit_cells"].as_u64().unwrap()
    );
    assert!(out.join("z_delta_max.asc").is_file());
}

#[test]
fn snow_line_above_terrain_is_transparent() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let out = dir.path().join("snow");
    let dem = dir.path().join("dem.asc");
    stdout_json(&run(&[
        "simulate",
        "--mode",
        "snow",
        "--dem",
        dem.to_str().unwrap(),
        "--snow-line",
        "5000",
        "--out",
        out.to_str().unwrap(),
    ]));
    let tex = decode_png(&std::fs::read(out.join("overlay.png")).unwrap()).unwrap();
    for y in 0..tex.height() {
        for x in 0..tex.width() {
            assert_eq!(tex.pixel(x, y)[3], 0);
        }
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.asc");
    let out = run(&["simulate", "--dem", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(run(&["simulate", "--bogus"]).status.code(), Some(2));

    generate(dir.path());
    let dem = dir.path().join("dem.asc");
    let out = run(&["simulate", "--dem", dem.to_str().unwrap(), "--persistence", "1.5", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("persistence"));
}

#[test]
fn bench_hash_is_thread_invariant() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path());
    let dem = dir.path().join("dem.asc");
    let bench = |threads: &str| {
        stdout_json(&run(&[
            "bench",
            "--dem",
            dem.to_str().unwrap(),
            "--particles",
            "32",
            "--runs",
            "2",
            "--threads",
            threads,
        ]))
    };
    let one = bench("1");
    let eight = bench("8");
    assert_eq!(one["runs"], 2);
    assert_eq!(eight["thread_count"], 8);
    assert_eq!(eight["deterministic"], true);
    assert_eq!(one["z_delta_max_hash"], eight["z_delta_max_hash"]);
    assert!(one["particle_steps_per_sec"].as_f64().unwrap() > 0.0);
}

#[test]
fn serve_answers_dataset_listing() {
    let mut child = bin()
        .args(["serve", "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line
        .split_whitespace()
        .find_map(|w| w.strip_prefix("http://"))
        .unwrap()
        .to_string();

    let mut s = TcpStream::connect(&addr).unwrap();
    write!(s, "GET /api/datasets HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"parabola\""));

    // Port already taken.
    let port = addr.rsplit(':').next().unwrap();
    let _hold = std::net::TcpListener::bind(("127.0.0.1", 0)).unwrap();
    let held = _hold.local_addr().unwrap().port().to_string();
    assert_ne!(held, port);
    assert_eq!(run(&["serve", "--port", &held]).status.code(), Some(1));
}
