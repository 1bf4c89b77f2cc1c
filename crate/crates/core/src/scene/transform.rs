use nalgebra::{Matrix4, Quaternion, Unit, UnitQuaternion, Vector3};

use super::SceneError;

/// Translation, rotation and per-axis scale. The local matrix is `T * R * S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    translation: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
    scale: Vector3<f64>,
}

impl Default for Transform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        translation: Vector3::new(0.0, 0.0, 0.0),
        rotation: Unit::new_unchecked(Quaternion::new(1.0, 0.0, 0.0, 0.0)),
        scale: Vector3::new(1.0, 1.0, 1.0),
    };

    /// Build from raw parts. The quaternion must already be unit length
    /// (within 1e-6) and no scale component may be zero.
    pub fn new(translation: Vector3<f64>, rotation: Quaternion<f64>, scale: Vector3<f64>) -> Result<Self, SceneError> {
        let norm = rotation.norm();
        if norm.is_nan() || (norm - 1.0).abs() > 1e-6 {
            return Err(SceneError::InvalidTransform(format!("rotation norm {norm} is not 1")));
        }
        if scale.iter().any(|s| *s == 0.0 || !s.is_finite()) || translation.iter().any(|t| !t.is_finite()) {
            return Err(SceneError::InvalidTransform(format!("scale {scale:?} / translation {translation:?}")));
        }
        Ok(Self { translation, rotation: UnitQuaternion::new_normalize(rotation), scale })
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self { translation: Vector3::new(x, y, z), ..Self::IDENTITY }
    }

    pub fn from_scale(x: f64, y: f64, z: f64) -> Result<Self, SceneError> {
        Self::new(Vector3::zeros(), Quaternion::identity(), Vector3::new(x, y, z))
    }

    /// A camera-style pose at `eye` looking at `target`: local -Z maps to the
    /// view direction and local +Y to the (re-orthogonalized) `up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self, SceneError> {
        let forward = target - eye;
        if forward.norm() == 0.0 || forward.cross(&up).norm() < 1e-12 {
            return Err(SceneError::InvalidTransform("degenerate look-at frame".into()));
        }
        // face_towards maps local +Z onto its direction argument
        let rotation = UnitQuaternion::face_towards(&-forward, &up);
        Ok(Self { translation: eye, rotation, scale: Vector3::new(1.0, 1.0, 1.0) })
    }

    pub fn with_rotation(mut self, rotation: UnitQuaternion<f64>) -> Self {
        self.rotation = rotation;
        self
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.rotation
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.scale
    }

    /// `Translation * Rotation * Scale` acting on column vectors.
    pub fn local_matrix(&self) -> Matrix4<f64> {
        let mut m = self.rotation.to_rotation_matrix().to_homogeneous();
        for c in 0..3 {
            for r in 0..3 {
                m[(r, c)] *= self.scale[c];
            }
            m[(c, 3)] = self.translation[c];
        }
        m
    }
}
