//! Deterministic synthetic scenes: fronto-parallel textured planes and
//! spheres under per-frame rigid motion, raycast with exact analytic depth
//! from arbitrary camera poses. Every oracle-backed test and the end-to-end
//! pipeline run on these scenes.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{DepthMap, Frame};
use crate::geometry::{CameraExtrinsics, CameraIntrinsics};
use crate::rng::mix;
use crate::scoring::{OracleView, SceneOracle};
use crate::warp::Video;

/// Depth assigned to rays that escape the scene entirely (black sky).
const SKY_DEPTH: f64 = 1e4;
/// Texture cell size in world units.
const TEXEL: f64 = 0.25;

/// Axis-aligned textured plane `z = depth` (world frame at frame 0),
/// optionally bounded in x/y and moving rigidly per frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub depth: f64,
    /// (x_min, x_max, y_min, y_max) bounds; `None` is an infinite plane.
    pub extent: Option<(f64, f64, f64, f64)>,
    /// World-space displacement per frame.
    #[serde(default)]
    pub velocity: (f64, f64, f64),
}

/// Textured sphere with per-frame rigid motion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereSpec {
    pub center: (f64, f64, f64),
    pub radius: f64,
    #[serde(default)]
    pub velocity: (f64, f64, f64),
}

/// Full parametric scene description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    #[serde(default)]
    pub planes: Vec<PlaneSpec>,
    #[serde(default)]
    pub spheres: Vec<SphereSpec>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(Error::InvalidArgument(
                "scene needs positive size and frame count".into(),
            ));
        }
        if self.planes.is_empty() && self.spheres.is_empty() {
            return Err(Error::EmptyInput("scene has no objects".into()));
        }
        if self.planes.iter().any(|p| p.depth <= 0.0) {
            return Err(Error::InvalidArgument("plane depths must be positive".into()));
        }
        if self.spheres.iter().any(|s| s.radius <= 0.0) {
            return Err(Error::InvalidArgument("sphere radii must be positive".into()));
        }
        Ok(())
    }
}

/// A validated scene plus its texture seed.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub seed: u64,
}

fn vec3(t: (f64, f64, f64)) -> Vector3<f64> {
    Vector3::new(t.0, t.1, t.2)
}

/// Hash-based texture color anchored to an object's local coordinates.
fn texture(seed: u64, object: u64, local: &Vector3<f64>) -> [u8; 3] {
    let qa = (local.x / TEXEL).floor() as i64 as u64;
    let qb = (local.y / TEXEL).floor() as i64 as u64;
    let qc = (local.z / TEXEL).floor() as i64 as u64;
    let h = mix(seed ^ mix(object) ^ mix(qa) ^ mix(qb.rotate_left(21)) ^ mix(qc.rotate_left(42)));
    // keep colors away from pure black so holes stay distinguishable
    [
        32 + ((h & 0xff) % 192) as u8,
        32 + (((h >> 8) & 0xff) % 192) as u8,
        32 + (((h >> 16) & 0xff) % 192) as u8,
    ]
}

impl SyntheticScene {
    pub fn new(spec: SceneSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(SyntheticScene { spec, seed })
    }

    /// Raycasts one frame from an arbitrary pose. Depth is the exact
    /// camera-space z of the nearest hit; escaped rays are black at
    /// [`SKY_DEPTH`].
    pub fn render(
        &self,
        frame_idx: usize,
        pose: &CameraExtrinsics,
        k: &CameraIntrinsics,
    ) -> Result<(Frame, DepthMap)> {
        if frame_idx >= self.spec.frames {
            return Err(Error::InvalidArgument(format!(
                "frame {frame_idx} out of range 0..{}",
                self.spec.frames
            )));
        }
        pose.validate()?;
        let (w, h) = (k.width, k.height);
        let origin = pose.center();
        let r_t = pose.rotation.transpose();
        let mut frame = Frame::new(w, h);
        let mut depth = vec![SKY_DEPTH; w * h];
        let f = frame_idx as f64;
        for v in 0..h {
            for u in 0..w {
                // camera-frame direction with unit z: the ray parameter is
                // exactly the camera-space depth of the hit
                let dir_cam = Vector3::new(
                    (u as f64 - k.cx) / k.fx,
                    (v as f64 - k.cy) / k.fy,
                    1.0,
                );
                let dir = r_t * dir_cam;
                let mut best_t = f64::INFINITY;
                let mut color = [0u8, 0, 0];
                for (pi, plane) in self.spec.planes.iter().enumerate() {
                    let offset = vec3(plane.velocity) * f;
                    let z_now = plane.depth + offset.z;
                    if dir.z.abs() < 1e-12 {
                        continue;
                    }
                    let t = (z_now - origin.z) / dir.z;
                    if t <= 1e-6 || t >= best_t {
                        continue;
                    }
                    let p = origin + t * dir;
                    let local = p - offset;
                    if let Some((x0, x1, y0, y1)) = plane.extent {
                        if local.x < x0 || local.x > x1 || local.y < y0 || local.y > y1 {
                            continue;
                        }
                    }
                    best_t = t;
                    color = texture(self.seed, pi as u64, &local);
                }
                for (si, sphere) in self.spec.spheres.iter().enumerate() {
                    let c_now = vec3(sphere.center) + vec3(sphere.velocity) * f;
                    let oc = origin - c_now;
                    let a = dir.dot(&dir);
                    let b = 2.0 * oc.dot(&dir);
                    let cc = oc.dot(&oc) - sphere.radius * sphere.radius;
                    let disc = b * b - 4.0 * a * cc;
                    if disc < 0.0 {
                        continue;
                    }
                    let sq = disc.sqrt();
                    let mut t = (-b - sq) / (2.0 * a);
                    if t <= 1e-6 {
                        t = (-b + sq) / (2.0 * a);
                    }
                    if t <= 1e-6 || t >= best_t {
                        continue;
                    }
                    best_t = t;
                    let local = origin + t * dir - c_now;
                    color = texture(self.seed, 1000 + si as u64, &local);
                }
                if best_t.is_finite() {
                    frame.set(v, u, color);
                    depth[v * w + u] = best_t;
                }
            }
        }
        Ok((frame, DepthMap::new(w, h, depth)?))
    }

    /// Ground-truth oracle for a fixed frame under the given poses.
    pub fn oracle_for_poses(
        &self,
        frame_idx: usize,
        poses: &[CameraExtrinsics],
        k: &CameraIntrinsics,
    ) -> Result<SceneOracle> {
        let views = poses
            .iter()
            .map(|pose| {
                let (_, depth) = self.render(frame_idx, pose, k)?;
                Ok(OracleView { depth, pose: *pose })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneOracle {
            intrinsics: *k,
            views,
        })
    }
}

/// Renders the identity-pose video with its exact depth maps, plus an oracle
/// holding the identity view of every frame.
pub fn generate_synthetic_scene(
    spec: SceneSpec,
    seed: u64,
) -> Result<(Video, Vec<DepthMap>, SceneOracle)> {
    let scene = SyntheticScene::new(spec, seed)?;
    let k = CameraIntrinsics::default_for_size(scene.spec.width, scene.spec.height);
    let identity = CameraExtrinsics::identity();
    let mut frames = Vec::with_capacity(scene.spec.frames);
    let mut depths = Vec::with_capacity(scene.spec.frames);
    let mut views = Vec::with_capacity(scene.spec.frames);
    for f in 0..scene.spec.frames {
        let (frame, depth) = scene.render(f, &identity, &k)?;
        views.push(OracleView {
            depth: depth.clone(),
            pose: identity,
        });
        frames.push(frame);
        depths.push(depth);
    }
    Ok((
        Video::new(frames)?,
        depths,
        SceneOracle {
            intrinsics: k,
            views,
        },
    ))
}

/// The canonical two-plane occlusion scene: a finite foreground plane in
/// front of an infinite background plane.
pub fn two_plane_spec(width: usize, height: usize, frames: usize) -> SceneSpec {
    SceneSpec {
        width,
        height,
        frames,
        planes: vec![
            PlaneSpec {
                depth: 2.0,
                extent: Some((-0.5, 0.5, -0.4, 0.4)),
                velocity: (0.0, 0.0, 0.0),
            },
            PlaneSpec {
                depth: 4.0,
                extent: None,
                velocity: (0.0, 0.0, 0.0),
            },
        ],
        spheres: vec![],
    }
}

/// A two-plane scene with a laterally drifting foreground plane.
pub fn moving_two_plane_spec(width: usize, height: usize, frames: usize) -> SceneSpec {
    let mut spec = two_plane_spec(width, height, frames);
    spec.planes[0].velocity = (0.02, 0.0, 0.0);
    spec
}
