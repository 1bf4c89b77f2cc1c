use nalgebra::{Matrix4, Vector3, Vector4};

use crate::scene::Camera;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    /// Unit length.
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// A camera resolved to world space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraView {
    pub origin: Vector3<f64>,
    pub forward: Vector3<f64>,
    pub right: Vector3<f64>,
    pub up: Vector3<f64>,
    pub camera: Camera,
}

impl CameraView {
    pub fn new(world: &Matrix4<f64>, camera: Camera) -> Self {
        let axis = |v: Vector4<f64>| (world * v).xyz().normalize();
        Self {
            origin: (world * Vector4::new(0.0, 0.0, 0.0, 1.0)).xyz(),
            forward: axis(Vector4::new(0.0, 0.0, -1.0, 0.0)),
            right: axis(Vector4::new(1.0, 0.0, 0.0, 0.0)),
            up: axis(Vector4::new(0.0, 1.0, 0.0, 0.0)),
            camera,
        }
    }

    fn half_extents(&self, width: u32, height: u32) -> (f64, f64) {
        let ty = (self.camera.fov_y / 2.0).tan();
        (ty * width as f64 / height as f64, ty)
    }

    /// Ray through a continuous image position (pixel `(i, j)` covers
    /// `[i, i+1) x [j, j+1)`, row 0 at the top).
    pub fn ray_through(&self, px: f64, py: f64, width: u32, height: u32) -> Ray {
        let (tx, ty) = self.half_extents(width, height);
        let sx = (2.0 * px / width as f64 - 1.0) * tx;
        let sy = (1.0 - 2.0 * py / height as f64) * ty;
        Ray { origin: self.origin, direction: (self.forward + self.right * sx + self.up * sy).normalize() }
    }

    /// Image position of a world point, and its distance along the view axis.
    pub fn project(&self, p: &Vector3<f64>, width: u32, height: u32) -> (f64, f64, f64) {
        let v = p - self.origin;
        let z = v.dot(&self.forward);
        let (tx, ty) = self.half_extents(width, height);
        let x = v.dot(&self.right) / z / tx;
        let y = v.dot(&self.up) / z / ty;
        ((x + 1.0) * width as f64 / 2.0, (1.0 - y) * height as f64 / 2.0, z)
    }
}

/// Pinhole ray through the center of pixel `(i, j)`.
pub fn generate_ray(view: &CameraView, i: u32, j: u32, width: u32, height: u32) -> Ray {
    view.ray_through(i as f64 + 0.5, j as f64 + 0.5, width, height)
}

/// Slab test on an unnormalized direction. Parameters are in units of `dir`.
pub(crate) fn slab(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    min: &Vector3<f64>,
    max: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < min[a] || origin[a] > max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[a];
        let (t0, t1) = ((min[a] - origin[a]) * inv, (max[a] - origin[a]) * inv);
        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
    }
    (t_near <= t_far && t_far >= 0.0).then_some((t_near, t_far))
}

/// Entry and exit ray parameters for an axis-aligned box, or `None` on a miss.
/// `t_near` is negative when the origin is inside the box.
pub fn ray_aabb(ray: &Ray, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<(f64, f64)> {
    slab(&ray.origin, &ray.direction, min, max)
}

/// Pyramid level whose voxels roughly match the pixel footprint at `position`.
///
/// The footprint at view distance `d` is `2 d tan(fov/2) / height`; the level
/// is `floor(log2(footprint / voxel_size))`, clamped to the pyramid.
pub fn select_lod(position: &Vector3<f64>, view: &CameraView, height: u32, voxel_size: f64, levels: u32) -> u32 {
    let d = (position - view.origin).dot(&view.forward);
    lod_for_distance(d, view.camera.fov_y, height, voxel_size, levels)
}

pub(crate) fn lod_for_distance(d: f64, fov_y: f64, height: u32, voxel_size: f64, levels: u32) -> u32 {
    let footprint = 2.0 * d * (fov_y / 2.0).tan() / height as f64;
    let ratio = (footprint / voxel_size).max(1.0);
    (ratio.log2().floor() as u32).min(levels.saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Transform;
    use approx::assert_relative_eq;

    fn view(fov_deg: f64) -> CameraView {
        let t = Transform::look_at(Vector3::new(1.0, 2.0, 10.0), Vector3::new(1.0, 2.0, 0.0), Vector3::y()).unwrap();
        CameraView::new(&t.local_matrix(), Camera { fov_y: fov_deg.to_radians(), ..Camera::default() })
    }

    #[test]
    fn center_pixel_looks_forward() {
        let v = view(60.0);
        let r = generate_ray(&v, 50, 30, 101, 61);
        assert_relative_eq!(r.direction, v.forward, epsilon = 1e-12);
    }

    #[test]
    fn ninety_degree_edge() {
        let v = view(90.0);
        let r = v.ray_through(0.0, 32.0, 64, 64);
        assert_relative_eq!(r.direction.x.abs(), r.direction.z.abs(), epsilon = 1e-12);
        let r = v.ray_through(32.0, 0.0, 64, 64);
        assert_relative_eq!(r.direction.y.abs(), r.direction.z.abs(), epsilon = 1e-12);
    }

    #[test]
    fn slab_axis_aligned() {
        let r = Ray { origin: Vector3::new(-2.0, 0.0, 0.0), direction: Vector3::x() };
        let (lo, hi) = (Vector3::repeat(-0.5), Vector3::repeat(0.5));
        assert_eq!(ray_aabb(&r, &lo, &hi), Some((1.5, 2.5)));
        let parallel = Ray { origin: Vector3::new(-2.0, 0.7, 0.0), direction: Vector3::x() };
        assert_eq!(ray_aabb(&parallel, &lo, &hi), None);
        let away = Ray { origin: Vector3::new(-2.0, 0.0, 0.0), direction: -Vector3::x() };
        assert_eq!(ray_aabb(&away, &lo, &hi), None);
        let inside = Ray { origin: Vector3::zeros(), direction: Vector3::x() };
        assert_eq!(ray_aabb(&inside, &lo, &hi), Some((-0.5, 0.5)));
    }

    #[test]
    fn lod_clamps_and_scales() {
        let fov = 90f64.to_radians();
        // footprint = 2 d / 100
        assert_eq!(lod_for_distance(10.0, fov, 100, 1.0, 4), 0);
        assert_eq!(lod_for_distance(250.0, fov, 100, 1.0, 4), 2);
        // footprint exactly four voxels
        let footprint = 2.0 * 37.0 * (fov / 2.0).tan() / 100.0;
        assert_eq!(lod_for_distance(37.0, fov, 100, footprint / 4.0, 6), 2);
        assert_eq!(lod_for_distance(37.0, fov, 100, footprint * 2.0, 6), 0);
        assert_eq!(lod_for_distance(1.0e6, fov, 100, 1.0, 4), 3);
        assert_eq!(lod_for_distance(-5.0, fov, 100, 1.0, 4), 0);
    }
}
