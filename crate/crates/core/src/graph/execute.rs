use std::collections::HashMap;

use super::{color_param, gamma_param, settings_with_overrides, GraphError, PassDesc, PassKind, Schedule, DISPLAY};
use crate::render::{
    march_volumes, rasterize_meshes, CameraView, CompositingMode, FrameBuffers, FrameStats, RenderResources,
    RenderSettings,
};
use crate::scene::SceneSnapshot;

/// Run every pass in schedule order and return the "display" attachment.
///
/// Each pass sees only its declared inputs. Errors carry the failing pass name.
pub fn execute_pipeline(
    schedule: &Schedule,
    snapshot: &SceneSnapshot,
    view: &CameraView,
    settings: &RenderSettings,
    resources: &RenderResources,
    width: u32,
    height: u32,
) -> Result<(FrameBuffers, FrameStats), GraphError> {
    FrameBuffers::check_size(width, height)?;
    settings.validate()?;
    let mut attachments: HashMap<&str, FrameBuffers> = HashMap::new();
    let mut stats = FrameStats::default();
    for pass in schedule.passes() {
        let inputs: Vec<&FrameBuffers> = pass.inputs.iter().map(|n| &attachments[n.as_str()]).collect();
        let out = run_pass(pass, &inputs, snapshot, view, settings, resources, width, height, &mut stats)
            .map_err(|source| GraphError::Pass { pass: pass.name.clone(), source })?;
        attachments.insert(pass.output.as_str(), out);
    }
    let display = attachments.remove(DISPLAY).expect("validated schedule produces display");
    Ok((display, stats))
}

#[allow(clippy::too_many_arguments)]
fn run_pass(
    pass: &PassDesc,
    inputs: &[&FrameBuffers],
    snapshot: &SceneSnapshot,
    view: &CameraView,
    settings: &RenderSettings,
    resources: &RenderResources,
    width: u32,
    height: u32,
    stats: &mut FrameStats,
) -> Result<FrameBuffers, crate::render::RenderError> {
    let base = |inputs: &[&FrameBuffers]| match inputs.first() {
        Some(fb) => (*fb).clone(),
        None => FrameBuffers::new(width, height, settings.background),
    };
    Ok(match pass.kind {
        PassKind::Clear => {
            let color = pass.params.get("color").and_then(color_param).unwrap_or(settings.background);
            FrameBuffers::new(width, height, color)
        }
        PassKind::MeshRaster => {
            let mut fb = base(inputs);
            let r = rasterize_meshes(snapshot, view, &mut fb);
            stats.triangles += r.triangles;
            stats.degenerate_triangles += r.degenerate_triangles;
            fb
        }
        PassKind::VolumeRaycast | PassKind::MipRaycast => {
            let mut s = settings_with_overrides(settings, &pass.params)?;
            s.mode = if pass.kind == PassKind::MipRaycast {
                CompositingMode::Mip
            } else {
                CompositingMode::EmissionAbsorption
            };
            let (fb, st) = march_volumes(snapshot, view, &s, resources, &base(inputs))?;
            stats.merge(&st);
            fb
        }
        PassKind::Tonemap => {
            let gamma = pass.params.get("gamma").and_then(gamma_param).unwrap_or(1.0);
            let mut fb = inputs[0].clone();
            if gamma != 1.0 {
                let inv = (1.0 / gamma) as f32;
                for px in &mut fb.color {
                    for c in &mut px[..3] {
                        *c = c.max(0.0).powf(inv);
                    }
                }
            }
            fb
        }
        PassKind::Compose => {
            let (top, bottom) = (inputs[0], inputs[1]);
            let mut fb = bottom.clone();
            for (i, px) in fb.color.iter_mut().enumerate() {
                let t = top.color[i];
                let k = 1.0 - t[3];
                *px = [0, 1, 2, 3].map(|c| t[c] + k * px[c]);
                fb.depth[i] = fb.depth[i].min(top.depth[i]);
            }
            fb
        }
    })
}
