//! Z-buffered mesh and point rasterization.
//!
//! Depth is stored as the world-space ray parameter of the pixel-center ray,
//! the same quantity the volume marcher uses, so meshes and volumes composite
//! with exact depth agreement.

use nalgebra::{Vector3, Vector4};

use super::camera::CameraView;
use super::FrameBuffers;
use crate::scene::SceneSnapshot;

const AMBIENT: f64 = 0.2;
const DIFFUSE: f64 = 0.8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterStats {
    pub triangles: u64,
    pub degenerate_triangles: u64,
    pub points: u64,
}

struct Light {
    /// Unit vector pointing toward the light.
    to_light: Vector3<f64>,
    color: [f64; 3],
}

fn scene_lights(snapshot: &SceneSnapshot, view: &CameraView) -> Vec<Light> {
    let lights: Vec<Light> = snapshot
        .lights()
        .filter_map(|(item, l)| {
            let d = (item.world * Vector4::new(l.direction.x, l.direction.y, l.direction.z, 0.0)).xyz();
            (d.norm() > 0.0).then(|| Light { to_light: -d.normalize(), color: l.color })
        })
        .collect();
    if lights.is_empty() {
        // headlight
        vec![Light { to_light: -view.forward, color: [1.0; 3] }]
    } else {
        lights
    }
}

/// Shade with `base * (0.8 * sum(max(0, n.l) * light) + 0.2)`, lighting both faces.
fn shade(base: [f64; 4], normal: Vector3<f64>, lights: &[Light]) -> [f64; 3] {
    let mut diffuse = [0.0; 3];
    for l in lights {
        let k = normal.dot(&l.to_light).max(0.0);
        for (d, c) in diffuse.iter_mut().zip(l.color) {
            *d += k * c;
        }
    }
    [0, 1, 2].map(|c| base[c] * (DIFFUSE * diffuse[c] + AMBIENT))
}

/// Camera-space vertex: (right, up, forward distance).
fn to_camera(view: &CameraView, p: &Vector3<f64>) -> Vector3<f64> {
    let v = p - view.origin;
    Vector3::new(v.dot(&view.right), v.dot(&view.up), v.dot(&view.forward))
}

fn from_camera(view: &CameraView, c: &Vector3<f64>) -> Vector3<f64> {
    view.origin + view.right * c.x + view.up * c.y + view.forward * c.z
}

/// Sutherland-Hodgman clip of a polygon against `z >= near`.
fn clip_near(poly: &[Vector3<f64>], near: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ina, inb) = (a.z >= near, b.z >= near);
        if ina {
            out.push(a);
        }
        if ina != inb {
            let t = (near - a.z) / (b.z - a.z);
            out.push(a + (b - a) * t);
        }
    }
    out
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Rasterize every visible mesh and point cloud into `target`, keeping the
/// nearest surface per pixel. Covered pixels become opaque shaded color.
pub fn rasterize_meshes(snapshot: &SceneSnapshot, view: &CameraView, target: &mut FrameBuffers) -> RasterStats {
    let (w, h) = (target.width, target.height);
    let lights = scene_lights(snapshot, view);
    let mut stats = RasterStats::default();

    for (item, mesh) in snapshot.meshes() {
        let world: Vec<Vector3<f64>> =
            mesh.vertices.iter().map(|v| (item.world * Vector4::new(v.x, v.y, v.z, 1.0)).xyz()).collect();
        for tri in &mesh.triangles {
            stats.triangles += 1;
            let [a, b, c] = tri.map(|i| world[i as usize]);
            let cross = (b - a).cross(&(c - a));
            if cross.norm() <= 1e-12 {
                stats.degenerate_triangles += 1;
                continue;
            }
            let normal = cross.normalize();
            let cam: Vec<_> = [a, b, c].iter().map(|p| to_camera(view, p)).collect();
            let poly = clip_near(&cam, view.camera.near);
            if poly.len() < 3 {
                continue;
            }
            let screen: Vec<(f64, f64)> = poly
                .iter()
                .map(|p| {
                    let (x, y, _) = view.project(&from_camera(view, p), w, h);
                    (x, y)
                })
                .collect();
            for k in 1..screen.len() - 1 {
                raster_triangle(view, target, [screen[0], screen[k], screen[k + 1]], a, normal, mesh.color, &lights);
            }
        }
    }

    for (item, cloud) in snapshot.point_clouds() {
        for p in &cloud.points {
            stats.points += 1;
            let wp = (item.world * Vector4::new(p.x, p.y, p.z, 1.0)).xyz();
            let (x, y, z) = view.project(&wp, w, h);
            if z < view.camera.near || x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                continue;
            }
            let idx = y as usize * w as usize + x as usize;
            let t = (wp - view.origin).norm() as f32;
            if t < target.depth[idx] {
                target.depth[idx] = t;
                let c = cloud.color;
                target.color[idx] = [c[0] as f32, c[1] as f32, c[2] as f32, 1.0];
            }
        }
    }
    stats
}

#[allow(clippy::too_many_arguments)]
fn raster_triangle(
    view: &CameraView,
    target: &mut FrameBuffers,
    s: [(f64, f64); 3],
    on_plane: Vector3<f64>,
    normal: Vector3<f64>,
    base: [f64; 4],
    lights: &[Light],
) {
    let area = edge(s[0], s[1], s[2]);
    if area.abs() < 1e-12 || !area.is_finite() {
        return;
    }
    let (w, h) = (target.width, target.height);
    let min_x = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
    let max_x = s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil().min(w as f64) as u32;
    let min_y = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as u32;
    let max_y = s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil().min(h as f64) as u32;
    let sign = area.signum();
    for y in min_y..max_y {
        for x in min_x..max_x {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = [(0, 1), (1, 2), (2, 0)].iter().all(|&(i, j)| edge(s[i], s[j], p) * sign >= 0.0);
            if !inside {
                continue;
            }
            let ray = view.ray_through(p.0, p.1, w, h);
            let denom = normal.dot(&ray.direction);
            if denom == 0.0 {
                continue;
            }
            let t = normal.dot(&(on_plane - ray.origin)) / denom;
            let idx = y as usize * w as usize + x as usize;
            if t <= 0.0 || (t as f32) >= target.depth[idx] {
                continue;
            }
            let facing = if denom > 0.0 { -normal } else { normal };
            let [r, g, b] = shade(base, facing, lights);
            target.depth[idx] = t as f32;
            target.color[idx] = [r as f32, g as f32, b as f32, 1.0];
        }
    }
}
