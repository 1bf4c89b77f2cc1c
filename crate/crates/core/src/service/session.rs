use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use nalgebra::Vector3;
use serde::Deserialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::protocol::{decode_message, decode_payload, FrameFormat, FrameMessage, WireMessage};
use crate::cache::{BlockCache, CacheConfig, CacheError, CacheStats};
use crate::graph::{GraphError, PassKind, PipelineDesc, PipelineSlot, RenderedFrame, Renderer, SoftwareRenderer};
use crate::render::{encode_png, FrameStats, RenderError, RenderResources, RenderSettings, TfPoint, TransferFunction};
use crate::scene::{Camera, NodeId, Payload, Scene, SceneError, TfId, Transform, VolumeId, VolumeRef};
use crate::volume::{BlockSource, FileSource, ProceduralSource, ProceduralSpec, VolumeError, VolumeMeta};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown command '{0}'")]
    UnknownCommand(String),
    #[error("missing \"cmd\" field")]
    MissingCommand,
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("unknown volume id {0}")]
    UnknownVolume(u64),
    #[error("{what} {index} out of range (volume has {limit})")]
    IndexOutOfRange { what: &'static str, index: u32, limit: u32 },
    #[error("loading volumes by path is disabled on this server")]
    PathsDisabled,
    #[error("path '{0}' is outside the data directory")]
    PathOutsideRoot(String),
    #[error("unexpected frame message from client")]
    UnexpectedFrame,
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    /// Cache capacity for each loaded volume.
    pub cache_bytes: u64,
    pub width: u32,
    pub height: u32,
    /// Blocks loaded after each frame.
    pub pump_budget: usize,
    /// Directory that "load_volume" paths resolve against. `None` disables paths.
    pub data_root: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { cache_bytes: 256 << 20, width: 256, height: 256, pump_budget: 64, data_root: None }
    }
}

/// Volume sources shared read-only between sessions, keyed by canonical path
/// or procedural spec.
#[derive(Default)]
pub struct SourceRegistry {
    sources: Mutex<HashMap<String, Arc<dyn BlockSource>>>,
}

impl SourceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or_open(
        &self,
        key: String,
        open: impl FnOnce() -> Result<Arc<dyn BlockSource>, VolumeError>,
    ) -> Result<Arc<dyn BlockSource>, VolumeError> {
        let mut map = self.sources.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(s) = map.get(&key) {
            return Ok(s.clone());
        }
        let s = open()?;
        map.insert(key, s.clone());
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct CameraState {
    pub position: [f64; 3],
    pub target: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    #[serde(default = "default_fov")]
    pub fov: f64,
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_fov() -> f64 {
    45.0
}

impl Default for CameraState {
    fn default() -> Self {
        Self { position: [0.0, 0.0, 100.0], target: [0.0; 3], up: default_up(), fov: default_fov() }
    }
}

impl CameraState {
    /// Parse `px,py,pz,tx,ty,tz,ux,uy,uz,fov_deg`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let v: Vec<f64> =
            s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        if v.len() != 10 {
            return Err(format!("expected 10 comma-separated numbers, got {}", v.len()));
        }
        Ok(Self { position: [v[0], v[1], v[2]], target: [v[3], v[4], v[5]], up: [v[6], v[7], v[8]], fov: v[9] })
    }

    /// Camera on +Z looking at the origin from twice the largest extent.
    pub fn framing(extent: [f64; 3]) -> Self {
        let r = extent.iter().cloned().fold(0.0, f64::max);
        Self { position: [0.0, 0.0, 2.0 * r], ..Default::default() }
    }

    /// Orbit around the target in the XZ plane.
    pub fn orbit(&self, angle: f64) -> Self {
        let t = Vector3::from(self.target);
        let d = Vector3::from(self.position) - t;
        let (s, c) = angle.sin_cos();
        let p = t + Vector3::new(c * d.x + s * d.z, d.y, -s * d.x + c * d.z);
        Self { position: p.into(), ..*self }
    }

    fn transform(&self) -> Result<(Transform, Camera), SessionError> {
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return Err(SessionError::BadArguments(format!("fov {} outside (0, 180) degrees", self.fov)));
        }
        let t = Transform::look_at(self.position.into(), self.target.into(), self.up.into())?;
        Ok((t, Camera { fov_y: self.fov.to_radians(), ..Camera::default() }))
    }
}

struct LoadedVolume {
    node: NodeId,
    cache: Arc<BlockCache>,
    vref: VolumeRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameSummary {
    pub frame_id: u32,
    pub stats: FrameStats,
    pub pending_loads: usize,
}

/// One client's scene, camera, pipeline and caches.
pub struct Session {
    config: SessionConfig,
    registry: Arc<SourceRegistry>,
    scene: Scene,
    camera_node: NodeId,
    camera: CameraState,
    camera_set: bool,
    pipeline: PipelineSlot,
    renderer: SoftwareRenderer,
    settings: RenderSettings,
    resources: RenderResources,
    volumes: BTreeMap<VolumeId, LoadedVolume>,
    next_volume: u64,
    next_frame_id: u32,
    continuous: Option<FrameFormat>,
    dirty: bool,
    last: Option<FrameSummary>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PipelineArg {
    Preset(String),
    Desc(PipelineDesc),
}

#[derive(Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
enum Command {
    Hello,
    Ping,
    LoadVolume {
        path: Option<String>,
        procedural: Option<String>,
    },
    SetCamera {
        position: [f64; 3],
        target: [f64; 3],
        #[serde(default = "default_up")]
        up: [f64; 3],
        #[serde(default = "default_fov")]
        fov: f64,
    },
    SetTransferFunction {
        volume_id: u64,
        points: Vec<TfPoint>,
    },
    SetTimepoint {
        volume_id: u64,
        index: u32,
    },
    SetChannel {
        volume_id: u64,
        index: u32,
    },
    SetPipeline {
        pipeline: PipelineArg,
    },
    SetSize {
        width: u32,
        height: u32,
    },
    RequestFrame {
        #[serde(default)]
        format: FrameFormat,
    },
    SetContinuous {
        on: bool,
        #[serde(default)]
        format: FrameFormat,
    },
    Stats,
}

const COMMANDS: [&str; 13] = [
    "hello",
    "ping",
    "load_volume",
    "set_camera",
    "set_transfer_function",
    "set_timepoint",
    "set_channel",
    "set_pipeline",
    "set_settings",
    "set_size",
    "request_frame",
    "set_continuous",
    "stats",
];

pub fn error_reply(in_reply_to: Option<&str>, message: impl std::fmt::Display) -> WireMessage {
    WireMessage::Control(json!({"cmd": "error", "in_reply_to": in_reply_to, "message": message.to_string()}))
}

fn ack(cmd: &str) -> WireMessage {
    WireMessage::Control(json!({"cmd": "ack", "in_reply_to": cmd}))
}

impl Session {
    pub fn new(config: SessionConfig) -> Self {
        Self::with_registry(config, Arc::new(SourceRegistry::new()))
    }

    pub fn with_registry(config: SessionConfig, registry: Arc<SourceRegistry>) -> Self {
        let mut scene = Scene::new();
        let root = scene.root();
        let camera = CameraState::default();
        let (t, cam) = camera.transform().expect("default camera is valid");
        let camera_node = scene.add(root, "camera", t, Payload::Camera(cam)).expect("root exists");
        let mut renderer = SoftwareRenderer::new();
        let (w, h) = (config.width.max(1), config.height.max(1));
        renderer.initialize(w, h).unwrap_or_else(|_| renderer.initialize(256, 256).expect("default size is valid"));
        Self {
            config,
            registry,
            scene,
            camera_node,
            camera,
            camera_set: false,
            pipeline: PipelineSlot::default(),
            renderer,
            settings: RenderSettings::default(),
            resources: RenderResources::default(),
            volumes: BTreeMap::new(),
            next_volume: 1,
            next_frame_id: 1,
            continuous: None,
            dirty: true,
            last: None,
        }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn camera(&self) -> CameraState {
        self.camera
    }

    pub fn settings(&self) -> &RenderSettings {
        &self.settings
    }

    pub fn size(&self) -> (u32, u32) {
        self.renderer.size().expect("renderer stays initialized")
    }

    pub fn pipeline_name(&self) -> String {
        self.pipeline.active().name().to_string()
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous.is_some()
    }

    pub fn volume_meta(&self, id: VolumeId) -> Result<&VolumeMeta, SessionError> {
        Ok(self.volume(id)?.cache.meta())
    }

    pub fn cache(&self, id: VolumeId) -> Result<&Arc<BlockCache>, SessionError> {
        Ok(&self.volume(id)?.cache)
    }

    fn volume(&self, id: VolumeId) -> Result<&LoadedVolume, SessionError> {
        self.volumes.get(&id).ok_or(SessionError::UnknownVolume(id.0))
    }

    /// Add a volume from any block source. It is centered on the world
    /// origin, gets the default color map, and, if no camera was set yet,
    /// the camera frames it.
    pub fn add_volume(&mut self, source: Arc<dyn BlockSource>) -> Result<VolumeId, SessionError> {
        let cache = Arc::new(BlockCache::new(source, CacheConfig { capacity: self.config.cache_bytes })?);
        let id = VolumeId(self.next_volume);
        let extent = cache.meta().physical_extent();
        let vref = VolumeRef { volume: id, channel: 0, timepoint: 0, transfer_function: TfId(id.0), filter: None };
        let center = Transform::from_translation(-extent[0] / 2.0, -extent[1] / 2.0, -extent[2] / 2.0);
        let root = self.scene.root();
        let node = self.scene.add(root, format!("volume{}", id.0), center, Payload::Volume(vref))?;
        self.next_volume += 1;
        self.resources.caches.insert(id, cache.clone());
        self.resources.transfer_functions.insert(vref.transfer_function, TransferFunction::default_colormap());
        self.volumes.insert(id, LoadedVolume { node, cache, vref });
        if !self.camera_set {
            self.apply_camera(CameraState::framing(extent))?;
        }
        self.dirty = true;
        Ok(id)
    }

    /// Add a mesh, point cloud, light or group under the scene root.
    /// Volumes go through [`Session::add_volume`] so they get a cache.
    pub fn add_object(&mut self, name: &str, transform: Transform, payload: Payload) -> Result<NodeId, SessionError> {
        if matches!(payload, Payload::Volume(_) | Payload::Camera(_)) {
            return Err(SessionError::BadArguments("volumes and cameras are managed by the session".into()));
        }
        let root = self.scene.root();
        let id = self.scene.add(root, name, transform, payload)?;
        self.dirty = true;
        Ok(id)
    }

    pub fn load_procedural(&mut self, spec: &str) -> Result<VolumeId, SessionError> {
        let parsed = ProceduralSpec::parse(spec)?;
        let source = self.registry.get_or_open(format!("procedural:{spec}"), || {
            Ok(Arc::new(ProceduralSource::new(parsed)?) as Arc<dyn BlockSource>)
        })?;
        self.add_volume(source)
    }

    /// Load a file relative to the configured data directory.
    pub fn load_path(&mut self, path: &str) -> Result<VolumeId, SessionError> {
        let root = self.config.data_root.as_ref().ok_or(SessionError::PathsDisabled)?;
        let full = resolve_under(root, path)?;
        let key = full.to_string_lossy().into_owned();
        let source =
            self.registry.get_or_open(key, || Ok(Arc::new(FileSource::open(&full)?) as Arc<dyn BlockSource>))?;
        self.add_volume(source)
    }

    fn apply_camera(&mut self, camera: CameraState) -> Result<(), SessionError> {
        let (t, cam) = camera.transform()?;
        self.scene.set_transform(self.camera_node, t)?;
        self.scene.set_payload(self.camera_node, Payload::Camera(cam))?;
        self.camera = camera;
        self.dirty = true;
        Ok(())
    }

    pub fn set_camera(&mut self, camera: CameraState) -> Result<(), SessionError> {
        self.apply_camera(camera)?;
        self.camera_set = true;
        Ok(())
    }

    pub fn set_transfer_function(&mut self, id: VolumeId, tf: TransferFunction) -> Result<(), SessionError> {
        let tf_id = self.volume(id)?.vref.transfer_function;
        self.resources.transfer_functions.insert(tf_id, tf);
        self.dirty = true;
        Ok(())
    }

    fn update_ref(&mut self, id: VolumeId, f: impl FnOnce(&mut VolumeRef)) -> Result<(), SessionError> {
        let v = self.volumes.get_mut(&id).ok_or(SessionError::UnknownVolume(id.0))?;
        f(&mut v.vref);
        self.scene.set_payload(v.node, Payload::Volume(v.vref))?;
        self.dirty = true;
        Ok(())
    }

    pub fn set_timepoint(&mut self, id: VolumeId, index: u32) -> Result<(), SessionError> {
        let limit = self.volume_meta(id)?.timepoints;
        if index >= limit {
            return Err(SessionError::IndexOutOfRange { what: "timepoint", index, limit });
        }
        self.update_ref(id, |r| r.timepoint = index)
    }

    pub fn set_channel(&mut self, id: VolumeId, index: u32) -> Result<(), SessionError> {
        let limit = self.volume_meta(id)?.channels;
        if index >= limit {
            return Err(SessionError::IndexOutOfRange { what: "channel", index, limit });
        }
        self.update_ref(id, |r| r.channel = index)
    }

    /// Validate and install a pipeline. On error the current pipeline stays active.
    pub fn set_pipeline(&mut self, desc: &PipelineDesc) -> Result<(), SessionError> {
        self.pipeline.swap_pipeline(desc)?;
        self.dirty = true;
        Ok(())
    }

    pub fn set_render_settings(&mut self, settings: RenderSettings) -> Result<(), SessionError> {
        settings.validate()?;
        self.settings = settings;
        self.dirty = true;
        Ok(())
    }

    /// Overlay a partial settings object such as `{"step": 0.5, "mode": "mip"}`.
    pub fn update_settings(&mut self, overrides: &Map<String, Value>) -> Result<(), SessionError> {
        let s = crate::graph::settings_with_overrides(&self.settings, overrides)?;
        self.set_render_settings(s)
    }

    pub fn set_size(&mut self, width: u32, height: u32) -> Result<(), SessionError> {
        self.renderer.resize(width, height)?;
        self.dirty = true;
        Ok(())
    }

    /// Render with the current state, without loading anything.
    pub fn render(&mut self) -> Result<RenderedFrame, SessionError> {
        let schedule = self.pipeline.active();
        let snapshot = self.scene.flatten_visible();
        Ok(self.renderer.render_frame(&snapshot, Some(self.camera_node), &schedule, &self.settings, &self.resources)?)
    }

    pub fn pending_loads(&self) -> usize {
        self.volumes.values().map(|v| v.cache.pending_loads()).sum()
    }

    /// Load up to `budget` queued blocks in total across volumes.
    pub fn pump(&self, budget: usize) -> Result<usize, SessionError> {
        let mut done = 0;
        for v in self.volumes.values() {
            if done >= budget {
                break;
            }
            done += v.cache.pump_loads(budget - done)?;
        }
        Ok(done)
    }

    /// Render and load until a frame needs no fallback and queues nothing,
    /// or `max_rounds` is reached. Returns the number of rounds.
    pub fn warm(&mut self, max_rounds: usize) -> Result<usize, SessionError> {
        for round in 1..=max_rounds {
            let frame = self.render()?;
            if frame.stats.fallback_samples == 0 && self.pending_loads() == 0 {
                return Ok(round);
            }
            self.pump(usize::MAX)?;
        }
        Ok(max_rounds)
    }

    pub fn cache_stats(&self) -> Vec<(VolumeId, CacheStats)> {
        self.volumes.iter().map(|(id, v)| (*id, v.cache.stats())).collect()
    }

    /// Render one frame, then pump loads. Returns the frame message and the
    /// stats message that follows it on the wire.
    pub fn request_frame(&mut self, format: FrameFormat) -> Result<(FrameMessage, Value), SessionError> {
        let frame = self.render()?;
        let load_error = self.pump(self.config.pump_budget).err().map(|e| e.to_string());
        let frame_id = self.next_frame_id;
        self.next_frame_id = self.next_frame_id.wrapping_add(1).max(1);
        self.dirty = false;
        let summary = FrameSummary { frame_id, stats: frame.stats, pending_loads: self.pending_loads() };
        self.last = Some(summary);
        let data = match format {
            FrameFormat::Raw => frame.buffers.to_rgba8(),
            FrameFormat::Png => encode_png(&frame.buffers)?,
        };
        let msg = FrameMessage { width: frame.buffers.width, height: frame.buffers.height, frame_id, format, data };
        let mut stats = self.stats_value();
        if let Some(e) = load_error {
            stats["load_error"] = e.into();
        }
        Ok((msg, stats))
    }

    pub fn stats_value(&self) -> Value {
        let volumes: Vec<Value> =
            self.cache_stats().into_iter().map(|(id, s)| json!({"volume_id": id.0, "cache": s})).collect();
        let last = self.last.unwrap_or_default();
        json!({
            "cmd": "stats",
            "frame_id": self.last.map(|l| l.frame_id),
            "pipeline": self.pipeline_name(),
            "frame": last.stats,
            "fallback_samples": last.stats.fallback_samples,
            "pending_loads": self.pending_loads(),
            "volumes": volumes,
        })
    }

    pub fn capabilities() -> Value {
        json!({
            "cmd": "hello",
            "version": env!("CARGO_PKG_VERSION"),
            "protocol": PROTOCOL_VERSION,
            "pass_kinds": PassKind::ALL.map(|k| k.as_str()),
            "formats": ["raw", "png"],
            "pipelines": PipelineDesc::PRESETS,
            "commands": COMMANDS,
        })
    }

    /// Apply one control message and produce its replies. Never fails:
    /// problems become error replies.
    pub fn handle_command(&mut self, msg: &Value) -> Vec<WireMessage> {
        let name = msg.get("cmd").and_then(Value::as_str).map(str::to_owned);
        match self.dispatch(msg, name.as_deref()) {
            Ok(replies) => replies,
            Err(e) => vec![error_reply(name.as_deref(), e)],
        }
    }

    fn dispatch(&mut self, msg: &Value, name: Option<&str>) -> Result<Vec<WireMessage>, SessionError> {
        let name = name.ok_or(SessionError::MissingCommand)?;
        if name == "set_settings" {
            let mut overrides = msg.as_object().cloned().unwrap_or_default();
            overrides.remove("cmd");
            self.update_settings(&overrides)?;
            return Ok(vec![ack(name)]);
        }
        if !COMMANDS.contains(&name) {
            return Err(SessionError::UnknownCommand(name.to_owned()));
        }
        let cmd: Command =
            serde_json::from_value(msg.clone()).map_err(|e| SessionError::BadArguments(e.to_string()))?;
        Ok(match cmd {
            Command::Hello => vec![WireMessage::Control(Self::capabilities())],
            Command::Ping => vec![WireMessage::Control(json!({"cmd": "pong"}))],
            Command::LoadVolume { path, procedural } => {
                let id = match (path, procedural) {
                    (Some(p), None) => self.load_path(&p)?,
                    (None, Some(spec)) => self.load_procedural(&spec)?,
                    _ => {
                        return Err(SessionError::BadArguments("give exactly one of \"path\" or \"procedural\"".into()))
                    }
                };
                let meta = serde_json::to_value(self.volume_meta(id)?).expect("meta serializes");
                vec![WireMessage::Control(json!({"cmd": "volume_loaded", "volume_id": id.0, "meta": meta}))]
            }
            Command::SetCamera { position, target, up, fov } => {
                self.set_camera(CameraState { position, target, up, fov })?;
                vec![ack(name)]
            }
            Command::SetTransferFunction { volume_id, points } => {
                self.set_transfer_function(VolumeId(volume_id), TransferFunction::new(points)?)?;
                vec![ack(name)]
            }
            Command::SetTimepoint { volume_id, index } => {
                self.set_timepoint(VolumeId(volume_id), index)?;
                vec![ack(name)]
            }
            Command::SetChannel { volume_id, index } => {
                self.set_channel(VolumeId(volume_id), index)?;
                vec![ack(name)]
            }
            Command::SetPipeline { pipeline } => {
                let desc = match pipeline {
                    PipelineArg::Preset(p) => PipelineDesc::preset(&p)
                        .ok_or_else(|| SessionError::BadArguments(format!("unknown preset '{p}'")))?,
                    PipelineArg::Desc(d) => d,
                };
                self.set_pipeline(&desc)?;
                vec![ack(name)]
            }
            Command::SetSize { width, height } => {
                self.set_size(width, height)?;
                vec![ack(name)]
            }
            Command::RequestFrame { format } => {
                let (frame, stats) = self.request_frame(format)?;
                vec![WireMessage::Frame(frame), WireMessage::Control(stats)]
            }
            Command::SetContinuous { on, format } => {
                self.continuous = on.then_some(format);
                self.dirty = true;
                vec![ack(name)]
            }
            Command::Stats => vec![WireMessage::Control(self.stats_value())],
        })
    }

    /// Handle a payload whose length prefix was already stripped.
    pub fn handle_payload(&mut self, payload: &[u8]) -> Vec<WireMessage> {
        match decode_payload(payload) {
            Ok(WireMessage::Control(v)) => self.handle_command(&v),
            Ok(WireMessage::Frame(_)) => vec![error_reply(None, SessionError::UnexpectedFrame)],
            Err(e) => vec![error_reply(None, e)],
        }
    }

    /// Handle a buffer of one or more complete framed messages. A decoding
    /// error produces an error reply and drops the rest of the buffer.
    pub fn handle_bytes(&mut self, mut bytes: &[u8]) -> Vec<WireMessage> {
        let mut replies = Vec::new();
        loop {
            match decode_message(bytes) {
                Ok((WireMessage::Control(v), used)) => {
                    replies.extend(self.handle_command(&v));
                    bytes = &bytes[used..];
                }
                Ok((WireMessage::Frame(_), _)) => {
                    replies.push(error_reply(None, SessionError::UnexpectedFrame));
                    break;
                }
                Err(e) => {
                    replies.push(error_reply(None, e));
                    break;
                }
            }
            if bytes.is_empty() {
                break;
            }
        }
        replies
    }

    /// In continuous mode, produce a frame when state changed or loads are
    /// pending. Loads are pumped before rendering.
    pub fn tick(&mut self) -> Option<Vec<WireMessage>> {
        let format = self.continuous?;
        if !self.dirty && self.pending_loads() == 0 {
            return None;
        }
        if let Err(e) = self.pump(self.config.pump_budget) {
            self.dirty = false;
            return Some(vec![error_reply(Some("set_continuous"), e)]);
        }
        Some(match self.request_frame(format) {
            Ok((frame, stats)) => vec![WireMessage::Frame(frame), WireMessage::Control(stats)],
            Err(e) => {
                self.dirty = false;
                vec![error_reply(Some("set_continuous"), e)]
            }
        })
    }
}

fn resolve_under(root: &Path, path: &str) -> Result<PathBuf, SessionError> {
    let root = root.canonicalize().map_err(VolumeError::Io)?;
    let full = root.join(path).canonicalize().map_err(VolumeError::Io)?;
    if !full.starts_with(&root) {
        return Err(SessionError::PathOutsideRoot(path.to_owned()));
    }
    Ok(full)
}
