use std::sync::Arc;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rayon::prelude::*;

use super::camera::{lod_for_distance, slab, CameraView};
use super::raster::rasterize_meshes;
use super::sampler::{sample_trilinear, BlockMemo};
use super::transfer::{classify_and_correct, composite_step};
use super::{
    CompositingMode, FrameBuffers, FrameStats, RenderError, RenderResources, RenderSettings, SampleFilter,
    TransferFunction,
};
use crate::cache::BlockCache;
use crate::scene::{NodeId, SceneSnapshot};
use crate::volume::VolumeMeta;

/// Find the camera to render from: `camera` if given, otherwise the first
/// visible camera in snapshot order.
pub fn resolve_camera(snapshot: &SceneSnapshot, camera: Option<NodeId>) -> Result<CameraView, RenderError> {
    match camera {
        Some(id) => snapshot
            .cameras()
            .find(|(item, _)| item.id == id)
            .map(|(item, cam)| CameraView::new(&item.world, *cam))
            .ok_or(RenderError::NotACamera(id)),
        None => {
            snapshot.cameras().next().map(|(item, cam)| CameraView::new(&item.world, *cam)).ok_or(RenderError::NoCamera)
        }
    }
}

/// Clear, rasterize meshes, then raycast volumes over them.
pub fn raycast_frame(
    snapshot: &SceneSnapshot,
    camera: Option<NodeId>,
    settings: &RenderSettings,
    resources: &RenderResources,
    width: u32,
    height: u32,
) -> Result<(FrameBuffers, FrameStats), RenderError> {
    FrameBuffers::check_size(width, height)?;
    settings.validate()?;
    let view = resolve_camera(snapshot, camera)?;
    let mut fb = FrameBuffers::new(width, height, settings.background);
    let raster = rasterize_meshes(snapshot, &view, &mut fb);
    let (out, mut stats) = march_volumes(snapshot, &view, settings, resources, &fb)?;
    stats.triangles = raster.triangles;
    stats.degenerate_triangles = raster.degenerate_triangles;
    Ok((out, stats))
}

struct PreparedVolume<'a> {
    cache: &'a BlockCache,
    meta: &'a VolumeMeta,
    tf: &'a TransferFunction,
    filter: SampleFilter,
    channel: u32,
    timepoint: u32,
    world_to_local: Matrix4<f64>,
    world_to_local_dir: Matrix3<f64>,
    extent: Vector3<f64>,
    /// Smallest level-0 voxel edge in world units.
    world_voxel: f64,
}

fn prepare<'a>(
    snapshot: &SceneSnapshot,
    settings: &RenderSettings,
    resources: &'a RenderResources,
) -> Result<Vec<PreparedVolume<'a>>, RenderError> {
    let mut out = Vec::new();
    for (item, vref) in snapshot.volumes() {
        let cache: &Arc<BlockCache> =
            resources.caches.get(&vref.volume).ok_or(RenderError::UnknownVolume(vref.volume))?;
        let tf = resources
            .transfer_functions
            .get(&vref.transfer_function)
            .ok_or(RenderError::UnknownTransferFunction(vref.transfer_function))?;
        let filter = match vref.filter {
            Some(id) => *resources.filters.get(&id).ok_or(RenderError::UnknownFilter(id))?,
            None => settings.filter,
        };
        let meta = cache.meta();
        if vref.channel >= meta.channels || vref.timepoint >= meta.timepoints {
            return Err(RenderError::InvalidVolumeRef {
                volume: vref.volume,
                channel: vref.channel,
                timepoint: vref.timepoint,
            });
        }
        let Some(world_to_local) = item.world.try_inverse() else {
            // zero scale somewhere up the chain: nothing to draw
            continue;
        };
        let world_voxel = (0..3)
            .map(|a| meta.voxel_size[a] * item.world.fixed_view::<3, 1>(0, a).norm())
            .fold(f64::INFINITY, f64::min);
        let ext = meta.physical_extent();
        out.push(PreparedVolume {
            cache,
            meta,
            tf,
            filter,
            channel: vref.channel,
            timepoint: vref.timepoint,
            world_to_local,
            world_to_local_dir: world_to_local.fixed_view::<3, 3>(0, 0).into_owned(),
            extent: Vector3::new(ext[0], ext[1], ext[2]),
            world_voxel,
        });
    }
    Ok(out)
}

struct RayVolume {
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    t0: f64,
    t1: f64,
}

/// Raycast every visible volume over `input`, which carries the background and
/// any rasterized surfaces. Rays stop at the input depth and the input color is
/// composited behind whatever the volumes accumulate.
pub fn march_volumes(
    snapshot: &SceneSnapshot,
    view: &CameraView,
    settings: &RenderSettings,
    resources: &RenderResources,
    input: &FrameBuffers,
) -> Result<(FrameBuffers, FrameStats), RenderError> {
    settings.validate()?;
    let volumes = prepare(snapshot, settings, resources)?;
    let (w, h) = (input.width, input.height);
    if volumes.is_empty() {
        return Ok((input.clone(), FrameStats::default()));
    }
    let step = settings.step * volumes.iter().map(|v| v.world_voxel).fold(f64::INFINITY, f64::min);

    type Row = Result<(Vec<[f32; 4]>, FrameStats), RenderError>;
    let rows: Vec<Row> = (0..h)
        .into_par_iter()
        .map(|j| {
            let mut memos: Vec<BlockMemo> = volumes.iter().map(|_| BlockMemo::new()).collect();
            let mut row = Vec::with_capacity(w as usize);
            let mut stats = FrameStats::default();
            for i in 0..w {
                let idx = (j * w + i) as usize;
                let acc = march_ray(
                    view,
                    settings,
                    &volumes,
                    &mut memos,
                    step,
                    i,
                    j,
                    w,
                    h,
                    input.depth[idx] as f64,
                    &mut stats,
                )?;
                let under = input.color[idx];
                let k = 1.0 - acc[3];
                row.push([0, 1, 2, 3].map(|c| (acc[c] + k * under[c] as f64) as f32));
            }
            Ok((row, stats))
        })
        .collect();

    let mut out = input.clone();
    let mut stats = FrameStats::default();
    for (j, row) in rows.into_iter().enumerate() {
        let (colors, s) = row?;
        let start = j * w as usize;
        out.color[start..start + w as usize].copy_from_slice(&colors);
        stats.merge(&s);
    }
    Ok((out, stats))
}

#[allow(clippy::too_many_arguments)]
fn march_ray(
    view: &CameraView,
    settings: &RenderSettings,
    volumes: &[PreparedVolume],
    memos: &mut [BlockMemo],
    step: f64,
    i: u32,
    j: u32,
    w: u32,
    h: u32,
    surface_depth: f64,
    stats: &mut FrameStats,
) -> Result<[f64; 4], RenderError> {
    let ray = view.ray_through(i as f64 + 0.5, j as f64 + 0.5, w, h);
    stats.rays += 1;
    let hits: Vec<Option<RayVolume>> = volumes
        .iter()
        .map(|v| {
            let o = v.world_to_local * Vector4::new(ray.origin.x, ray.origin.y, ray.origin.z, 1.0);
            let origin = o.xyz();
            let dir = v.world_to_local_dir * ray.direction;
            slab(&origin, &dir, &Vector3::zeros(), &v.extent).map(|(t0, t1)| RayVolume { origin, dir, t0, t1 })
        })
        .collect();
    let near = view.camera.near;
    let Some(t_start) = hits.iter().flatten().map(|r| r.t0).reduce(f64::min) else {
        return Ok([0.0; 4]);
    };
    let t_start = t_start.max(near);
    let t_end =
        hits.iter().flatten().map(|r| r.t1).fold(f64::NEG_INFINITY, f64::max).min(view.camera.far).min(surface_depth);
    for m in memos.iter_mut() {
        m.clear();
    }

    let mip = settings.mode == CompositingMode::Mip;
    let mut acc = [0.0; 4];
    let mut maxima = vec![f64::NEG_INFINITY; volumes.len()];
    let mut k = 0u64;
    loop {
        let t = t_start + (k as f64 + 0.5) * step;
        if t >= t_end {
            break;
        }
        k += 1;
        for (n, (v, hit)) in volumes.iter().zip(&hits).enumerate() {
            let Some(hit) = hit else { continue };
            if t < hit.t0 || t > hit.t1 {
                continue;
            }
            let p = hit.origin + hit.dir * t;
            let level = match settings.lod {
                Some(l) => l.min(v.meta.coarsest_level()),
                None => lod_for_distance(
                    t * ray.direction.dot(&view.forward),
                    view.camera.fov_y,
                    h,
                    v.world_voxel,
                    v.meta.levels,
                ),
            };
            let (s, used) = sample_trilinear(v.meta, v.cache, &p, level, v.channel, v.timepoint, &mut memos[n])?;
            stats.samples += 1;
            if used > level {
                stats.fallback_samples += 1;
            }
            if mip {
                maxima[n] = maxima[n].max(v.filter.apply(s));
            } else {
                let c = classify_and_correct(v.tf, s, settings.step, settings.reference_step, v.filter);
                acc = composite_step(acc, c);
            }
        }
        if !mip && acc[3] >= settings.early_termination {
            stats.early_terminations += 1;
            break;
        }
    }
    if mip {
        for (v, m) in volumes.iter().zip(maxima) {
            if m.is_finite() {
                acc = composite_step(acc, v.tf.eval(m));
            }
        }
    }
    Ok(acc)
}
