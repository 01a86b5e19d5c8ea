use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default vertical field of view used when intrinsics are set by convention.
pub const DEFAULT_VFOV_DEG: f64 = 55.0;

/// Tolerance for SE(3) validity checks.
pub const SE3_TOL: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if cx < 0.0 || cx >= width as f64 || cy < 0.0 || cy >= height as f64 {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Convention intrinsics: 55 degree vertical FOV, principal point at the
    /// image center.
    pub fn default_for_size(width: usize, height: usize) -> Self {
        let f = 0.5 * height as f64 / (0.5 * DEFAULT_VFOV_DEG).to_radians().tan();
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

/// World-to-camera rigid transform: `p_cam = R * p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = CameraExtrinsics {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        CameraExtrinsics {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Checks R'R = I and det(R) = 1 to within `SE3_TOL`.
    pub fn validate(&self) -> Result<()> {
        let ortho_err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if ortho_err > SE3_TOL {
            return Err(Error::InvalidExtrinsics(format!(
                "rotation not orthonormal, |R'R - I| = {ortho_err:e}"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > SE3_TOL {
            return Err(Error::InvalidExtrinsics(format!(
                "det(R) = {det}, expected 1"
            )));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidExtrinsics("non-finite translation".into()));
        }
        Ok(())
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// `self` applied after `inner`: maps world through `inner`'s camera frame
    /// into `self`'s frame. Used to express a camera offset relative to a
    /// source pose.
    pub fn compose(&self, inner: &CameraExtrinsics) -> CameraExtrinsics {
        CameraExtrinsics {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    /// Rotation angle (radians) between this pose's orientation and another's.
    pub fn rotation_angle_to(&self, other: &CameraExtrinsics) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }
}

/// The six supported camera families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraType {
    OrbitLeft,
    OrbitRight,
    OrbitUp,
    OrbitDown,
    DollyIn,
    DollyOut,
}

impl CameraType {
    pub const ALL: [CameraType; 6] = [
        CameraType::OrbitLeft,
        CameraType::OrbitRight,
        CameraType::OrbitUp,
        CameraType::OrbitDown,
        CameraType::DollyIn,
        CameraType::DollyOut,
    ];

    pub fn is_orbit(&self) -> bool {
        matches!(
            self,
            CameraType::OrbitLeft
                | CameraType::OrbitRight
                | CameraType::OrbitUp
                | CameraType::OrbitDown
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CameraType::OrbitLeft => "orbit_left",
            CameraType::OrbitRight => "orbit_right",
            CameraType::OrbitUp => "orbit_up",
            CameraType::OrbitDown => "orbit_down",
            CameraType::DollyIn => "dolly_in",
            CameraType::DollyOut => "dolly_out",
        }
    }

    /// One-hot index used for camera-label conditioning.
    pub fn index(&self) -> usize {
        CameraType::ALL.iter().position(|c| c == self).unwrap()
    }
}

impl fmt::Display for CameraType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CameraType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CameraType::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCameraType(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Static,
    Dynamic,
}

/// Ordered per-frame camera poses for one target view or movement.
///
/// `magnitude` is in degrees for orbits and in fractional depth units for
/// dollies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub poses: Vec<CameraExtrinsics>,
    pub kind: TrajectoryKind,
    pub camera_type: CameraType,
    pub magnitude: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Camera pose offset realizing one camera type at the given magnitude.
///
/// The offset is expressed in the source camera frame (x right, y down,
/// z forward) and maps source-camera coordinates to target-camera
/// coordinates. Orbits rotate the camera position about the point at
/// `scene_center_depth` on the source optical axis and re-aim at it;
/// dollies translate along the optical axis by
/// `magnitude * scene_center_depth`.
pub fn pose_for_camera_type(
    camera_type: CameraType,
    magnitude: f64,
    scene_center_depth: f64,
) -> CameraExtrinsics {
    debug_assert!(magnitude >= 0.0);
    debug_assert!(scene_center_depth > 0.0);
    let center = Vector3::new(0.0, 0.0, scene_center_depth);
    match camera_type {
        CameraType::DollyIn | CameraType::DollyOut => {
            let sign = if camera_type == CameraType::DollyIn {
                1.0
            } else {
                -1.0
            };
            let pos = Vector3::new(0.0, 0.0, sign * magnitude * scene_center_depth);
            CameraExtrinsics {
                rotation: Matrix3::identity(),
                translation: -pos,
            }
        }
        _ => {
            let theta = magnitude.to_radians();
            let rot = match camera_type {
                // Horizontal orbits revolve about the vertical (y) axis
                // through the pivot, vertical orbits about the horizontal (x)
                // axis. Signs pick the direction the camera moves.
                CameraType::OrbitLeft => Rotation3::from_axis_angle(&Vector3::y_axis(), theta).into_inner(),
                CameraType::OrbitRight => Rotation3::from_axis_angle(&Vector3::y_axis(), -theta).into_inner(),
                CameraType::OrbitUp => Rotation3::from_axis_angle(&Vector3::x_axis(), -theta).into_inner(),
                CameraType::OrbitDown => Rotation3::from_axis_angle(&Vector3::x_axis(), theta).into_inner(),
                _ => unreachable!(),
            };
            let pos = center - rot * center;
            look_at(pos, center)
        }
    }
}

/// World-to-camera pose for a camera at `pos` aimed at `target`, with image-y
/// pointing down.
fn look_at(pos: Vector3<f64>, target: Vector3<f64>) -> CameraExtrinsics {
    let forward = (target - pos).normalize();
    let y_ref = Vector3::new(0.0, 1.0, 0.0);
    let right = y_ref.cross(&forward).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[
        right.transpose(),
        down.transpose(),
        forward.transpose(),
    ]);
    CameraExtrinsics {
        translation: -(rotation * pos),
        rotation,
    }
}

/// N identical copies of the target pose reached at full magnitude.
pub fn make_static_trajectory(
    camera_type: CameraType,
    magnitude: f64,
    n: usize,
    source_pose: &CameraExtrinsics,
    scene_center_depth: f64,
) -> Result<Trajectory> {
    if n < 1 {
        return Err(Error::InvalidArgument("trajectory needs N >= 1".into()));
    }
    let pose = pose_for_camera_type(camera_type, magnitude, scene_center_depth).compose(source_pose);
    Ok(Trajectory {
        poses: vec![pose; n],
        kind: TrajectoryKind::Static,
        camera_type,
        magnitude,
    })
}

/// Linear ramp from the source pose (frame 0) to full magnitude (frame N-1).
pub fn make_dynamic_trajectory(
    camera_type: CameraType,
    magnitude: f64,
    n: usize,
    source_pose: &CameraExtrinsics,
    scene_center_depth: f64,
) -> Result<Trajectory> {
    if n < 1 {
        return Err(Error::InvalidArgument("trajectory needs N >= 1".into()));
    }
    let mut poses = Vec::with_capacity(n);
    poses.push(*source_pose);
    for i in 1..n {
        let mag_i = magnitude * i as f64 / (n - 1) as f64;
        poses.push(pose_for_camera_type(camera_type, mag_i, scene_center_depth).compose(source_pose));
    }
    Ok(Trajectory {
        poses,
        kind: TrajectoryKind::Dynamic,
        camera_type,
        magnitude,
    })
}
