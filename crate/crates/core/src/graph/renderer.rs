use std::sync::{Arc, RwLock};

use super::{execute_pipeline, validate_pipeline, GraphError, PipelineDesc, Schedule};
use crate::render::{resolve_camera, FrameBuffers, FrameStats, RenderResources, RenderSettings};
use crate::scene::{NodeId, SceneSnapshot};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub buffers: FrameBuffers,
    pub stats: FrameStats,
    /// Name of the pipeline the frame was rendered with.
    pub pipeline: String,
}

/// A backend that turns a scene snapshot into an image. Renderers own no
/// scene or cache state, so they can be exchanged freely between frames.
pub trait Renderer: Send {
    fn name(&self) -> &'static str;
    fn initialize(&mut self, width: u32, height: u32) -> Result<(), GraphError>;
    fn resize(&mut self, width: u32, height: u32) -> Result<(), GraphError>;
    /// Current target size, or `None` before `initialize` and after `shutdown`.
    fn size(&self) -> Option<(u32, u32)>;
    fn render_frame(
        &mut self,
        snapshot: &SceneSnapshot,
        camera: Option<NodeId>,
        pipeline: &Schedule,
        settings: &RenderSettings,
        resources: &RenderResources,
    ) -> Result<RenderedFrame, GraphError>;
    fn shutdown(&mut self);
}

/// Executes pipelines with the CPU raycaster and rasterizer.
#[derive(Debug, Default)]
pub struct SoftwareRenderer {
    size: Option<(u32, u32)>,
}

impl SoftwareRenderer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Renderer for SoftwareRenderer {
    fn name(&self) -> &'static str {
        "software"
    }

    fn initialize(&mut self, width: u32, height: u32) -> Result<(), GraphError> {
        FrameBuffers::check_size(width, height)?;
        self.size = Some((width, height));
        Ok(())
    }

    fn resize(&mut self, width: u32, height: u32) -> Result<(), GraphError> {
        self.size.ok_or(GraphError::NotInitialized)?;
        self.initialize(width, height)
    }

    fn size(&self) -> Option<(u32, u32)> {
        self.size
    }

    fn render_frame(
        &mut self,
        snapshot: &SceneSnapshot,
        camera: Option<NodeId>,
        pipeline: &Schedule,
        settings: &RenderSettings,
        resources: &RenderResources,
    ) -> Result<RenderedFrame, GraphError> {
        let (w, h) = self.size.ok_or(GraphError::NotInitialized)?;
        let view = resolve_camera(snapshot, camera)?;
        let (buffers, stats) = execute_pipeline(pipeline, snapshot, &view, settings, resources, w, h)?;
        Ok(RenderedFrame { buffers, stats, pipeline: pipeline.name().to_string() })
    }

    fn shutdown(&mut self) {
        self.size = None;
    }
}

/// Returns the background for every frame. Useful for exercising scene logic
/// without paying for rendering.
#[derive(Debug, Default)]
pub struct NullRenderer {
    size: Option<(u32, u32)>,
}

impl NullRenderer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Renderer for NullRenderer {
    fn name(&self) -> &'static str {
        "null"
    }

    fn initialize(&mut self, width: u32, height: u32) -> Result<(), GraphError> {
        FrameBuffers::check_size(width, height)?;
        self.size = Some((width, height));
        Ok(())
    }

    fn resize(&mut self, width: u32, height: u32) -> Result<(), GraphError> {
        self.size.ok_or(GraphError::NotInitialized)?;
        self.initialize(width, height)
    }

    fn size(&self) -> Option<(u32, u32)> {
        self.size
    }

    fn render_frame(
        &mut self,
        _snapshot: &SceneSnapshot,
        _camera: Option<NodeId>,
        pipeline: &Schedule,
        settings: &RenderSettings,
        _resources: &RenderResources,
    ) -> Result<RenderedFrame, GraphError> {
        let (w, h) = self.size.ok_or(GraphError::NotInitialized)?;
        Ok(RenderedFrame {
            buffers: FrameBuffers::new(w, h, settings.background),
            stats: FrameStats::default(),
            pipeline: pipeline.name().to_string(),
        })
    }

    fn shutdown(&mut self) {
        self.size = None;
    }
}

/// The active pipeline, swappable from any thread.
///
/// A frame grabs the current schedule once with [`PipelineSlot::active`] and
/// renders with it to completion, so a swap lands at the next frame.
#[derive(Debug)]
pub struct PipelineSlot {
    active: RwLock<Arc<Schedule>>,
}

impl PipelineSlot {
    pub fn new(desc: &PipelineDesc) -> Result<Self, GraphError> {
        Ok(Self { active: RwLock::new(Arc::new(validate_pipeline(desc)?)) })
    }

    pub fn active(&self) -> Arc<Schedule> {
        self.active.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Validate `desc` and make it active. On error the previous pipeline stays.
    pub fn swap_pipeline(&self, desc: &PipelineDesc) -> Result<Arc<Schedule>, GraphError> {
        let schedule = Arc::new(validate_pipeline(desc)?);
        *self.active.write().unwrap_or_else(|e| e.into_inner()) = schedule.clone();
        Ok(schedule)
    }
}

impl Default for PipelineSlot {
    fn default() -> Self {
        Self::new(&PipelineDesc::ea_default()).expect("preset is valid")
    }
}
