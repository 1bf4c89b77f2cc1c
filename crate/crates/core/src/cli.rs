//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use crate::graph::PipelineDesc;
use crate::render::TransferFunction;
use crate::service::{self, CameraState, FrameFormat, Session, SessionConfig, SessionError};
use crate::volume::{build_pyramid_to_path, BlockSource, DenseVolume, Dtype, FileSource, VolumeError};

pub const LOG_ENV: &str = "OOCV_LOG";
pub const PORT_ENV: &str = "OOCV_PORT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("VolumeError: {0}")]
    Volume(#[from] VolumeError),
    #[error("SessionError: {0}")]
    Session(#[from] SessionError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid json in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("ServerError: {0}")]
    Server(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "oocv", version, about = "Out-of-core volume pyramids, rendering, and frame streaming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an OOCV pyramid from a raw little-endian voxel file.
    Build(BuildArgs),
    /// Render one frame to PNG (or raw RGBA8).
    Render(RenderArgs),
    /// Print a volume's metadata as JSON.
    Info(InfoArgs),
    /// Render an orbit and print per-frame cache statistics.
    Bench(BenchArgs),
    /// Run the frame streaming server.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    input: PathBuf,
    /// X,Y,Z
    #[arg(long, value_parser = parse_dims)]
    dims: [u64; 3],
    #[arg(long, default_value = "u8")]
    dtype: Dtype,
    #[arg(long, default_value_t = 32)]
    block: u32,
    /// Maximum level count; fewer are built once a level fits one block.
    #[arg(long, default_value_t = 32)]
    levels: u32,
    #[arg(long, default_value_t = 1)]
    channels: u32,
    #[arg(long, default_value_t = 1)]
    timepoints: u32,
    /// X,Y,Z physical voxel size
    #[arg(long, value_parser = parse_voxel_size, default_value = "1,1,1")]
    voxel_size: [f64; 3],
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
struct VolumeInput {
    /// OOCV file
    #[arg(long)]
    input: Option<PathBuf>,
    /// Built-in test volume: constant[:N[:V]], hot-voxel[:N], radial[:N], noise[:N[:SEED]]
    #[arg(long)]
    procedural: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct ViewArgs {
    #[command(flatten)]
    volume: VolumeInput,
    /// WxH
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    size: (u32, u32),
    /// px,py,pz,tx,ty,tz,ux,uy,uz,fov_deg (volume centered on the origin)
    #[arg(long, value_parser = CameraState::parse, allow_hyphen_values = true)]
    camera: Option<CameraState>,
    /// Transfer function JSON file
    #[arg(long)]
    tf: Option<PathBuf>,
    /// Pipeline JSON file or preset name (ea-default, mip)
    #[arg(long, default_value = "ea-default")]
    pipeline: String,
    /// Sample spacing in voxels
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Force a pyramid level
    #[arg(long)]
    lod: Option<u32>,
    #[arg(long, default_value_t = 512)]
    cache_mb: u64,
    #[arg(long, default_value_t = 0)]
    timepoint: u32,
    #[arg(long, default_value_t = 0)]
    channel: u32,
    /// Worker threads (0 = all cores); output bytes do not depend on it
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[command(flatten)]
    view: ViewArgs,
    /// Load blocks until the frame needs no coarser fallback
    #[arg(long)]
    warm: bool,
    #[arg(long, value_enum, default_value = "png")]
    format: OutputFormat,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum OutputFormat {
    Png,
    Raw,
}

#[derive(Args, Debug)]
struct InfoArgs {
    #[command(flatten)]
    volume: VolumeInput,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    view: ViewArgs,
    /// Number of frames around a full orbit
    #[arg(long, default_value_t = 16)]
    orbit: u32,
    /// Blocks loaded between frames
    #[arg(long, default_value_t = 256)]
    pump: usize,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, env = PORT_ENV, default_value_t = 7878)]
    port: u16,
    /// Websocket gateway port (0 disables)
    #[arg(long, default_value_t = 7879)]
    ws_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Directory clients may load OOCV files from
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Cache per loaded volume
    #[arg(long, default_value_t = 256)]
    cache_mb: u64,
    /// Default frame size, WxH
    #[arg(long, value_parser = parse_size, default_value = "256x256")]
    size: (u32, u32),
    /// Blocks loaded after each frame
    #[arg(long, default_value_t = 64)]
    pump: usize,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String>
where
    T::Err: std::fmt::Display,
{
    let v: Vec<T> = s.split(',').map(|p| p.trim().parse::<T>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected three comma-separated values, got '{s}'"))
}

fn parse_dims(s: &str) -> Result<[u64; 3], String> {
    parse_triple(s)
}

fn parse_voxel_size(s: &str) -> Result<[f64; 3], String> {
    let v: [f64; 3] = parse_triple(s)?;
    if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err("voxel sizes must be positive".into());
    }
    Ok(v)
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let w: u32 = w.parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 || w > crate::render::MAX_DIMENSION || h > crate::render::MAX_DIMENSION {
        return Err(format!("size {w}x{h} outside 1..={}", crate::render::MAX_DIMENSION));
    }
    Ok((w, h))
}

/// Run with the process arguments and environment, printing to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr().lock();
    run_with(args, &mut out, &mut err)
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Build(a) => build(a, out),
        Command::Render(a) => {
            let line = with_threads(a.view.threads, || render(a))?;
            emit(out, &line)
        }
        Command::Info(a) => info(a, out),
        Command::Bench(a) => {
            for line in with_threads(a.view.threads, || bench(a))? {
                emit(out, &line)?;
            }
            Ok(())
        }
        Command::Serve(a) => serve(a),
    }
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> Result<R, CliError> + Send) -> Result<R, CliError> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("--threads {threads}: {e}")))?;
    pool.install(f)
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|source| CliError::Io { path: path.to_owned(), source })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.to_owned(), source })
}

fn emit(out: &mut dyn Write, v: &serde_json::Value) -> Result<(), CliError> {
    writeln!(out, "{v}").map_err(|source| CliError::Io { path: "<stdout>".into(), source })
}

fn build(a: BuildArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bytes = read_file(&a.input)?;
    let dense = DenseVolume::from_raw_bytes(&bytes, a.dims, a.dtype, a.channels, a.timepoints, a.voxel_size)?;
    let start = Instant::now();
    let meta = build_pyramid_to_path(&dense, a.block, a.levels, &a.out)?;
    let blocks: u64 =
        (0..meta.levels).map(|l| meta.blocks_in_level(l)).sum::<u64>() * meta.channels as u64 * meta.timepoints as u64;
    emit(
        out,
        &json!({"out": a.out, "levels": meta.levels, "blocks": blocks, "build_ms": start.elapsed().as_secs_f64() * 1e3}),
    )
}

fn open_input(v: &VolumeInput) -> Result<Arc<dyn BlockSource>, CliError> {
    match (&v.input, &v.procedural) {
        (Some(path), None) => Ok(Arc::new(FileSource::open(path)?)),
        (None, Some(spec)) => {
            let spec = crate::volume::ProceduralSpec::parse(spec.strip_prefix("procedural:").unwrap_or(spec))?;
            Ok(Arc::new(crate::volume::ProceduralSource::new(spec)?))
        }
        _ => Err(CliError::Usage("give exactly one of --input or --procedural".into())),
    }
}

fn info(a: InfoArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let source = open_input(&a.volume)?;
    let meta = source.meta();
    let levels: Vec<_> = (0..meta.levels)
        .map(|l| json!({"level": l, "dims": meta.level_dims(l), "blocks": meta.block_grid(l)}))
        .collect();
    let mut v = serde_json::to_value(meta).expect("meta serializes");
    v["pyramid"] = levels.into();
    v["total_voxels"] = meta.total_voxels().into();
    emit(out, &v)
}

fn load_pipeline(arg: &str) -> Result<PipelineDesc, CliError> {
    if let Some(p) = PipelineDesc::preset(arg) {
        return Ok(p);
    }
    read_json(Path::new(arg))
}

/// Build a session from the shared view flags.
fn session_for(v: &ViewArgs, pump_budget: usize) -> Result<Session, CliError> {
    let (width, height) = v.size;
    let mut s =
        Session::new(SessionConfig { cache_bytes: v.cache_mb << 20, width, height, pump_budget, data_root: None });
    let id = s.add_volume(open_input(&v.volume)?)?;
    if let Some(cam) = v.camera {
        s.set_camera(cam)?;
    }
    if let Some(path) = &v.tf {
        let tf: TransferFunction = read_json(path)?;
        s.set_transfer_function(id, tf)?;
    }
    s.set_pipeline(&load_pipeline(&v.pipeline)?)?;
    let settings = crate::render::RenderSettings { step: v.step, lod: v.lod, ..Default::default() };
    s.set_render_settings(settings)?;
    s.set_timepoint(id, v.timepoint)?;
    s.set_channel(id, v.channel)?;
    Ok(s)
}

fn cache_totals(s: &Session) -> (u64, u64, u64) {
    s.cache_stats().iter().fold((0, 0, 0), |(h, m, r), (_, c)| (h + c.hits, m + c.misses, r + c.resident_bytes))
}

fn render(a: RenderArgs) -> Result<serde_json::Value, CliError> {
    let mut s = session_for(&a.view, usize::MAX)?;
    if a.warm {
        s.warm(64)?;
    }
    let start = Instant::now();
    let frame = s.render()?;
    let frame_ms = start.elapsed().as_secs_f64() * 1e3;
    let bytes = match a.format {
        OutputFormat::Png => crate::render::encode_png(&frame.buffers).map_err(SessionError::from)?,
        OutputFormat::Raw => frame.buffers.to_rgba8(),
    };
    std::fs::write(&a.out, bytes).map_err(|source| CliError::Io { path: a.out.clone(), source })?;
    let (hits, misses, resident) = cache_totals(&s);
    Ok(json!({
        "hits": hits,
        "misses": misses,
        "fallback_samples": frame.stats.fallback_samples,
        "samples": frame.stats.samples,
        "resident_bytes": resident,
        "frame_ms": frame_ms,
        "pipeline": frame.pipeline,
    }))
}

/// Bench lines are collected and printed after the orbit so timing excludes stdout.
fn bench(a: BenchArgs) -> Result<Vec<serde_json::Value>, CliError> {
    if a.orbit == 0 {
        return Err(CliError::Usage("--orbit must be at least 1".into()));
    }
    let mut s = session_for(&a.view, a.pump)?;
    let base = s.camera();
    let mut lines = Vec::new();
    for k in 0..a.orbit {
        s.set_camera(base.orbit(std::f64::consts::TAU * k as f64 / a.orbit as f64))?;
        let start = Instant::now();
        let (_, stats) = s.request_frame(FrameFormat::Raw)?;
        let frame_ms = start.elapsed().as_secs_f64() * 1e3;
        let (hits, misses, resident) = cache_totals(&s);
        let peak = s.cache_stats().iter().map(|(_, c)| c.peak_resident_bytes).max().unwrap_or(0);
        lines.push(json!({
            "frame": k,
            "hits": hits,
            "misses": misses,
            "fallback_samples": stats["fallback_samples"],
            "pending_loads": stats["pending_loads"],
            "resident_bytes": resident,
            "peak_resident_bytes": peak,
            "capacity": a.view.cache_mb << 20,
            "frame_ms": frame_ms,
        }));
    }
    Ok(lines)
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let (width, height) = a.size;
    let config =
        SessionConfig { cache_bytes: a.cache_mb << 20, width, height, pump_budget: a.pump, data_root: a.data_dir };
    let ws = (a.ws_port != 0).then(|| SocketAddr::new(a.bind, a.ws_port));
    service::run_server(SocketAddr::new(a.bind, a.port), ws, config).map_err(CliError::Server)
}
