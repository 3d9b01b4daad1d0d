//! Command-line front end. Exit codes: 0 ok, 1 usage, 2 data error, 3 no convergence.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::calibration::{fit_quadratic, parse_pairs_csv, CalibrationSamples, CalibrationTable, Quantity};
use crate::config::{parse_entries, parse_fixed, ConfigError, KeyResult};
use crate::detector::{detect, DetectorThresholds, TriangleCandidate};
use crate::geometry::{pose_to_range_bearing, BeaconGeometry, CameraIntrinsics, Pose3};
use crate::image::GrayImage;
use crate::sim::config::{apply_beacon_key, apply_camera_key, apply_detector_key, BeaconSpec};
use crate::sim::world::format_float as ff;
use crate::sim::{run, SimConfig, DEFAULT_CONFIG};
use crate::solver::{solve, solve_detector_order, Correspondence, InitMode, SolverConfig};
use crate::tracker::{BeaconTracker, Measurement};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

const AFTER_HELP: &str = "\
FILE FORMATS
  config files     UTF-8 `key = value` lines, dotted keys, `#` comments; unknown keys are errors.
                   `scenario.<name>.<key> = value` lines override <key> under --scenario <name>.
  camera file      keys fx fy cx cy width height (optionally prefixed `camera.`).
  beacon file      keys height width, or apex/base1/base2 as `x y z` (optionally prefixed `beacon.`).
  detector config  detector thresholds, e.g. `pixel_threshold = 200` (optionally prefixed `detector.`).
  calibration      one `camera_id quantity c0 c1 c2` record per line, truth = c0 + c1*raw + c2*raw^2.
  pairs CSV        `raw,truth` rows with an optional header.
  track CSV        `t,apex_x,apex_y,b1_x,b1_y,b2_x,b2_y[,robot_v,robot_w]`; empty pixel fields = no detection.
  images           binary 8-bit PGM (P5, maxval 255).

EXIT CODES
  0 ok, 1 usage error, 2 data error, 3 solver did not converge";

#[derive(Debug, Parser)]
#[command(name = "followme", version, about = "IR-beacon follow-me pipeline and simulator", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a quadratic correction from `raw,truth` pairs and store it in a calibration file.
    Calibrate(CalibrateArgs),
    /// Print beacon triangle candidates found in a PGM image.
    Detect(DetectArgs),
    /// Recover the beacon pose from six pixel coordinates.
    Solve(SolveArgs),
    /// Run the particle filter over a CSV of observations.
    Track(TrackArgs),
    /// Run the closed-loop simulation and write telemetry CSV.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// CSV of `raw,truth` pairs.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    camera_id: String,
    /// `bearing` or `range`.
    #[arg(long)]
    quantity: Quantity,
    /// Calibration file; an existing record for the same camera and quantity is replaced.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    image: PathBuf,
    /// Detector thresholds; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// `apex_x apex_y b1_x b1_y b2_x b2_y`, px.
    #[arg(long, num_args = 6, allow_negative_numbers = true, value_names = ["PX"; 6])]
    obs: Vec<f64>,
    /// Beacon geometry file; 0.12 m x 0.08 m isoceles when omitted.
    #[arg(long)]
    beacon: Option<PathBuf>,
    /// Camera intrinsics file; 640x480, f = 400 px when omitted.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Initial pose `x y z qw qx qy qz` (beacon in optical frame).
    #[arg(long, num_args = 7, allow_negative_numbers = true, value_names = ["V"; 7])]
    init: Option<Vec<f64>>,
    /// Disable step halving.
    #[arg(long)]
    pure_newton: bool,
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Observation CSV.
    #[arg(long)]
    input: PathBuf,
    /// Simulation-style config supplying camera, beacon, tracker and dt.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the tracker seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Estimates CSV; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Dump the final particle set as CSV.
    #[arg(long)]
    particles_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Config file; the built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Apply the `scenario.<name>.*` overrides from the config.
    #[arg(long)]
    scenario: Option<String>,
    /// Overrides every seed in the config.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Inclusive seed range `a..b`, run in parallel, one file per seed (`<out>` gets `_seed<N>` inserted).
    #[arg(long, requires = "out")]
    seeds: Option<String>,
    /// Telemetry CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write every front-camera frame as `frame_%06d.pgm`.
    #[arg(long)]
    dump_frames: Option<PathBuf>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::NotConverged(_) => EXIT_NO_CONVERGENCE,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |e: io::Error| CliError::Data(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(path, bytes).map_err(io_err)
}

/// Parses a flat key file, offering each key (with `prefix.` stripped) to `apply`.
fn apply_keys(
    text: &str,
    prefix: &str,
    mut apply: impl FnMut(&str, &str) -> KeyResult,
) -> Result<(), ConfigError> {
    for e in parse_entries(text)? {
        let key = e.key.strip_prefix(prefix).unwrap_or(&e.key);
        apply(key, &e.value).into_error(&e)?;
    }
    Ok(())
}

fn load_detector(path: Option<&Path>) -> Result<DetectorThresholds, CliError> {
    let mut th = DetectorThresholds::default();
    if let Some(p) = path {
        apply_keys(&read_text(p)?, "detector.", |k, v| apply_detector_key(&mut th, k, v))
            .map_err(data)?;
    }
    th.validate().map_err(CliError::Data)?;
    Ok(th)
}

fn load_camera(path: Option<&Path>) -> Result<CameraIntrinsics, CliError> {
    let mut cam = SimConfig::default().camera;
    if let Some(p) = path {
        apply_keys(&read_text(p)?, "camera.", |k, v| apply_camera_key(&mut cam, k, v))
            .map_err(data)?;
    }
    cam.validate().map_err(data)?;
    Ok(cam)
}

fn load_beacon(path: Option<&Path>) -> Result<BeaconGeometry, CliError> {
    let mut spec: BeaconSpec = SimConfig::default().beacon;
    let Some(p) = path else {
        return spec.geometry().map_err(data);
    };
    let mut explicit: [Option<Vector3<f64>>; 3] = [None; 3];
    let text = read_text(p)?;
    apply_keys(&text, "beacon.", |k, v| {
        let slot = match k {
            "apex" => 0,
            "base1" => 1,
            "base2" => 2,
            _ => return apply_beacon_key(&mut spec, k, v),
        };
        match parse_fixed::<3>(v) {
            Ok([x, y, z]) => {
                explicit[slot] = Some(Vector3::new(x, y, z));
                KeyResult::Applied
            }
            Err(e) => KeyResult::Bad(e),
        }
    })
    .map_err(data)?;
    match explicit {
        [Some(a), Some(b1), Some(b2)] => BeaconGeometry::new(a, b1, b2).map_err(data),
        [None, None, None] => spec.geometry().map_err(data),
        _ => Err(CliError::Data("beacon file needs all of apex, base1, base2".into())),
    }
}

fn load_sim_config(path: Option<&Path>, scenario: Option<&str>) -> Result<SimConfig, CliError> {
    let text = match path {
        Some(p) => read_text(p)?,
        None => DEFAULT_CONFIG.to_string(),
    };
    SimConfig::from_text(&text, scenario).map_err(data)
}

fn cmd_calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let pairs = parse_pairs_csv(&read_text(&a.input)?).map_err(data)?;
    let fit = fit_quadratic(&CalibrationSamples::new(a.quantity, pairs).map_err(data)?).map_err(data)?;
    let mut table = if a.output.exists() {
        CalibrationTable::parse(&read_text(&a.output)?).map_err(data)?
    } else {
        CalibrationTable::default()
    };
    table.upsert(&a.camera_id, a.quantity, fit.map);
    write_file(&a.output, table.to_string().as_bytes())?;
    let m = fit.map;
    writeln!(
        out,
        "{} {} {} {} {} residual_rms {}",
        a.camera_id,
        a.quantity,
        ff(m.c0),
        ff(m.c1),
        ff(m.c2),
        ff(fit.residual_rms)
    )
    .map_err(data)
}

fn cmd_detect(a: &DetectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let th = load_detector(a.config.as_deref())?;
    let bytes = fs::read(&a.image).map_err(|e| CliError::Data(format!("{}: {e}", a.image.display())))?;
    let img = GrayImage::decode_pgm(&bytes).map_err(data)?;
    for c in detect(&img, &th) {
        let [p, b1, b2] = c.centers();
        let line = [p.x, p.y, b1.x, b1.y, b2.x, b2.y, c.score].map(ff).join(" ");
        writeln!(out, "{line}").map_err(data)?;
    }
    Ok(())
}

fn pose_from_values(v: &[f64]) -> Result<Pose3, CliError> {
    let q = nalgebra::Quaternion::new(v[3], v[4], v[5], v[6]);
    if !(q.norm() > 1e-12) || v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Data("initial pose needs a finite, non-zero quaternion".into()));
    }
    Ok(Pose3::new(
        UnitQuaternion::from_quaternion(q),
        Vector3::new(v[0], v[1], v[2]),
    ))
}

fn cmd_solve(a: &SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let geom = load_beacon(a.beacon.as_deref())?;
    let cam = load_camera(a.camera.as_deref())?;
    let o = &a.obs;
    let obs = TriangleCandidate::from_points(
        Vector2::new(o[0], o[1]),
        Vector2::new(o[2], o[3]),
        Vector2::new(o[4], o[5]),
    );
    let mut cfg = SolverConfig::default();
    if a.pure_newton {
        cfg = cfg.pure_newton();
    }
    if let Some(v) = &a.init {
        cfg.init_mode = InitMode::Given(pose_from_values(v)?);
    }
    let r = solve(&obs, &geom, &cam, &cfg).map_err(data)?;
    let t = r.pose.translation();
    let [qw, qx, qy, qz] = r.pose.quaternion_wxyz();
    let rb = pose_to_range_bearing(&r.pose);
    let corr = match r.correspondence {
        Correspondence::Canonical => "canonical",
        Correspondence::Swapped => "swapped",
    };
    let pose = [t.x, t.y, t.z, qw, qx, qy, qz].map(ff).join(" ");
    writeln!(out, "pose {pose}").map_err(data)?;
    writeln!(out, "range_bearing {} {}", ff(rb.range), ff(rb.bearing)).map_err(data)?;
    writeln!(out, "iterations {}", r.iterations).map_err(data)?;
    writeln!(out, "residual_rms {}", ff(r.final_residual_rms)).map_err(data)?;
    writeln!(out, "correspondence {corr}").map_err(data)?;
    writeln!(out, "converged {}", r.converged).map_err(data)?;
    if r.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "solver did not converge after {} iterations (residual {} px)",
            r.iterations, r.final_residual_rms
        )))
    }
}

/// One row of the track input.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TrackRow {
    t: f64,
    centers: Option<[Vector2<f64>; 3]>,
    robot_v: f64,
    robot_w: f64,
}

fn parse_track_csv(text: &str) -> Result<Vec<TrackRow>, CliError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |msg: &str| CliError::Data(format!("line {}: {msg}", idx + 1));
        let Ok(t) = f[0].parse::<f64>() else {
            if rows.is_empty() && idx == 0 {
                continue;
            }
            return Err(bad("bad time value"));
        };
        if f.len() != 7 && f.len() != 9 {
            return Err(bad("expected 7 or 9 fields"));
        }
        let px: Vec<Option<f64>> = f[1..7]
            .iter()
            .map(|s| if s.is_empty() { Ok(None) } else { s.parse().map(Some) })
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad pixel value"))?;
        let centers = if px.iter().all(Option::is_none) {
            None
        } else if let [Some(ax), Some(ay), Some(bx), Some(by), Some(cx), Some(cy)] = px[..] {
            Some([Vector2::new(ax, ay), Vector2::new(bx, by), Vector2::new(cx, cy)])
        } else {
            return Err(bad("pixel fields must be all present or all empty"));
        };
        let (robot_v, robot_w) = if f.len() == 9 {
            (
                f[7].parse().map_err(|_| bad("bad robot_v"))?,
                f[8].parse().map_err(|_| bad("bad robot_w"))?,
            )
        } else {
            (0.0, 0.0)
        };
        rows.push(TrackRow {
            t,
            centers,
            robot_v,
            robot_w,
        });
    }
    Ok(rows)
}

/// Candidate with the base pair ordered for positive image winding.
fn oriented_candidate(c: &[Vector2<f64>; 3]) -> TriangleCandidate {
    let cand = TriangleCandidate::from_points(c[0], c[1], c[2]);
    let (u, v) = (c[1] - c[0], c[2] - c[0]);
    if u.x * v.y - u.y * v.x < 0.0 {
        cand.swapped_base()
    } else {
        cand
    }
}

fn cmd_track(a: &TrackArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_sim_config(a.config.as_deref(), None)?;
    if let Some(s) = a.seed {
        cfg.tracker.rng_seed = s;
    }
    let geom = cfg.beacon.geometry().map_err(data)?;
    let camera = cfg.front_camera();
    let rows = parse_track_csv(&read_text(&a.input)?)?;
    let mut tracker = BeaconTracker::new(cfg.tracker);
    let mut text = String::from("t,x,y,z,qw,qx,qy,qz,range,bearing\n");
    let mut prev: Option<&TrackRow> = None;
    for row in &rows {
        let dt = match prev {
            Some(p) if row.t > p.t => row.t - p.t,
            Some(_) => return Err(CliError::Data(format!("time must increase (t = {})", row.t))),
            None => cfg.dt,
        };
        let (v, w) = prev.map_or((0.0, 0.0), |p| (p.robot_v, p.robot_w));
        let mut candidate = row.centers.as_ref().map(oriented_candidate);
        let mut solver_pose = None;
        if let Some(c) = &candidate {
            let solved =
                solve_detector_order(c, &geom, &camera.intrinsics, &cfg.solver, cfg.max_solver_residual);
            if let Ok(s) = solved {
                if s.final_residual_rms <= cfg.max_solver_residual {
                    solver_pose = Some(camera.to_base(&s.pose));
                    if s.correspondence == Correspondence::Swapped {
                        candidate = Some(c.swapped_base());
                    }
                }
            }
        }
        let m = candidate.as_ref().map(|c| Measurement {
            observation: c,
            solver_pose,
        });
        let est = tracker.step(v, w, dt, m, &geom, &camera);
        match est {
            Some(o) => {
                let p = o.pose.translation();
                let [qw, qx, qy, qz] = o.pose.quaternion_wxyz();
                let rb = o.range_bearing;
                let fields = [row.t, p.x, p.y, p.z, qw, qx, qy, qz, rb.range, rb.bearing].map(ff);
                text.push_str(&fields.join(","));
                text.push('\n');
            }
            None => text.push_str(&format!("{},,,,,,,,,\n", ff(row.t))),
        }
        prev = Some(row);
    }
    match &a.output {
        Some(p) => write_file(p, text.as_bytes())?,
        None => out.write_all(text.as_bytes()).map_err(data)?,
    }
    if let Some(p) = &a.particles_out {
        let mut buf = Vec::new();
        match tracker.particles() {
            Some(set) => set.write_csv(&mut buf).map_err(data)?,
            None => return Err(CliError::Data("no particles: the filter never started".into())),
        }
        write_file(p, &buf)?;
    }
    Ok(())
}

/// Parses `a..b` (inclusive).
fn parse_seed_range(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("--seeds expects `a..b`, got `{s}`"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

/// `dir/name.ext` -> `dir/name_seed<N>.ext`
fn per_seed_path(base: &Path, seed: u64) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}_seed{seed}"),
    };
    base.with_file_name(name)
}

fn simulate_one(cfg: &SimConfig, out: Option<&Path>, dump: Option<&Path>, stdout: &mut dyn Write) -> Result<String, CliError> {
    let mut buf = Vec::new();
    let (_, summary) = run(cfg, &mut buf, dump).map_err(data)?;
    match out {
        Some(p) => write_file(p, &buf)?,
        None => stdout.write_all(&buf).map_err(data)?,
    }
    Ok(summary.to_string())
}

fn cmd_simulate(a: &SimulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_sim_config(a.config.as_deref(), a.scenario.as_deref())?;
    let Some(range) = &a.seeds else {
        let cfg = match a.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        };
        let summary = simulate_one(&cfg, a.out.as_deref(), a.dump_frames.as_deref(), out)?;
        writeln!(err, "{summary}").map_err(data)?;
        return Ok(());
    };
    let seeds = parse_seed_range(range)?;
    let base = a.out.as_deref().expect("clap enforces --out with --seeds");
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(seeds.len());
    let results: Vec<(u64, Result<String, CliError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let seeds = &seeds;
                let cfg = &cfg;
                scope.spawn(move || {
                    seeds
                        .iter()
                        .skip(w)
                        .step_by(workers)
                        .map(|&s| {
                            let dump = a.dump_frames.as_deref().map(|d| d.join(format!("seed{s}")));
                            let path = per_seed_path(base, s);
                            (s, simulate_one(&cfg.clone().with_seed(s), Some(&path), dump.as_deref(), &mut io::sink()))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("simulation worker panicked")).collect()
    });
    let mut results = results;
    results.sort_by_key(|(s, _)| *s);
    for (s, r) in results {
        let summary = r?;
        writeln!(err, "seed {s}\n{summary}").map_err(data)?;
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(text.as_bytes());
            } else {
                let _ = out.write_all(text.as_bytes());
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::Detect(a) => cmd_detect(a, out),
        Command::Solve(a) => cmd_solve(a, out),
        Command::Track(a) => cmd_track(a, out),
        Command::Simulate(a) => cmd_simulate(a, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}
