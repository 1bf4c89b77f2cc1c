//! Software volume raycaster and mesh rasterizer.

mod camera;
mod frame;
mod image;
mod raster;
mod sampler;
mod transfer;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{BlockCache, CacheError};
use crate::scene::{FilterId, NodeId, TfId, VolumeId};

pub use camera::{generate_ray, ray_aabb, select_lod, CameraView, Ray};
pub use frame::{march_volumes, raycast_frame, resolve_camera};
pub use image::{encode_png, write_png};
pub use raster::{rasterize_meshes, RasterStats};
pub use sampler::{sample_trilinear, BlockMemo};
pub use transfer::{classify_and_correct, composite_step, SampleFilter, TfPoint, TransferFunction};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("no camera in scene")]
    NoCamera,
    #[error("camera node {0:?} is not a visible camera")]
    NotACamera(NodeId),
    #[error("unknown volume {0:?}")]
    UnknownVolume(VolumeId),
    #[error("unknown transfer function {0:?}")]
    UnknownTransferFunction(TfId),
    #[error("unknown filter {0:?}")]
    UnknownFilter(FilterId),
    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),
    #[error("invalid render settings: {0}")]
    InvalidSettings(String),
    #[error("volume {volume:?} has no channel {channel} / timepoint {timepoint}")]
    InvalidVolumeRef { volume: VolumeId, channel: u32, timepoint: u32 },
    #[error("invalid frame size {width}x{height}")]
    InvalidSize { width: u32, height: u32 },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("png encoding: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const MAX_DIMENSION: u32 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositingMode {
    #[default]
    EmissionAbsorption,
    Mip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    /// Sample spacing in units of the smallest world-space voxel edge.
    pub step: f64,
    /// Spacing at which transfer-function opacities are defined.
    pub reference_step: f64,
    /// Straight RGBA.
    pub background: [f64; 4],
    pub filter: SampleFilter,
    pub early_termination: f64,
    pub mode: CompositingMode,
    /// Force a pyramid level instead of footprint-based selection.
    pub lod: Option<u32>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            step: 1.0,
            reference_step: 1.0,
            background: [0.0, 0.0, 0.0, 1.0],
            filter: SampleFilter::None,
            early_termination: 0.999,
            mode: CompositingMode::EmissionAbsorption,
            lod: None,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidSettings(m));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step {} must be positive", self.step));
        }
        if !(self.reference_step > 0.0 && self.reference_step.is_finite()) {
            return bad(format!("reference_step {} must be positive", self.reference_step));
        }
        if !(self.early_termination > 0.0 && self.early_termination <= 1.0) {
            return bad(format!("early_termination {} outside (0, 1]", self.early_termination));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background outside [0, 1]".into());
        }
        self.filter.validate()
    }
}

/// Premultiplied RGBA color plus a depth plane. Depth is the world-space
/// distance along each pixel-center ray to the nearest opaque surface.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffers {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[f32; 4]>,
    pub depth: Vec<f32>,
}

impl FrameBuffers {
    /// A cleared target: `background` (straight RGBA) at infinite depth.
    pub fn new(width: u32, height: u32, background: [f64; 4]) -> Self {
        let a = background[3];
        let px = [background[0] * a, background[1] * a, background[2] * a, a].map(|c| c as f32);
        let n = width as usize * height as usize;
        Self { width, height, color: vec![px; n], depth: vec![f32::INFINITY; n] }
    }

    pub fn check_size(width: u32, height: u32) -> Result<(), RenderError> {
        if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
            return Err(RenderError::InvalidSize { width, height });
        }
        Ok(())
    }

    /// 8-bit RGBA, row 0 at the top, each channel `floor(clamp(x) * 255 + 0.5)`.
    pub fn to_rgba8(&self) -> Vec<u8> {
        self.color.iter().flat_map(|px| px.map(|c| (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)).collect()
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 4] {
        self.color[y as usize * self.width as usize + x as usize]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameStats {
    pub rays: u64,
    pub samples: u64,
    /// Samples taken at a coarser level than requested because blocks were missing.
    pub fallback_samples: u64,
    pub early_terminations: u64,
    pub triangles: u64,
    pub degenerate_triangles: u64,
}

impl FrameStats {
    pub fn merge(&mut self, o: &FrameStats) {
        self.rays += o.rays;
        self.samples += o.samples;
        self.fallback_samples += o.fallback_samples;
        self.early_terminations += o.early_terminations;
        self.triangles += o.triangles;
        self.degenerate_triangles += o.degenerate_triangles;
    }
}

/// Everything a frame references by id.
#[derive(Clone, Default)]
pub struct RenderResources {
    pub caches: BTreeMap<VolumeId, Arc<BlockCache>>,
    pub transfer_functions: BTreeMap<TfId, TransferFunction>,
    pub filters: BTreeMap<FilterId, SampleFilter>,
}
