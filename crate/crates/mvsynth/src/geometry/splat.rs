use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::frame::{DepthMap, Frame, VisibilityMask};

use super::{CameraExtrinsics, CameraIntrinsics};

/// Points closer than this to the image plane are dropped during splatting.
pub const NEAR_PLANE: f64 = 1e-4;

/// Depths within this of each other contest a z-buffer cell as a tie.
pub const Z_TIE_TOL: f64 = 1e-9;

/// Colored 3D points in world coordinates, one per source pixel.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[u8; 3]>,
    /// (row, col) of the pixel each point was lifted from.
    pub source_pixel: Vec<(u32, u32)>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Lifts an RGBD frame into a world-space point cloud.
///
/// Pixel (row `v`, col `u`) with depth `d` unprojects to the camera-frame
/// point `(d*(u-cx)/fx, d*(v-cy)/fy, d)`, which the inverse of `pose` maps to
/// world coordinates.
pub fn lift_to_pointcloud(
    frame: &Frame,
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics,
    pose: &CameraExtrinsics,
) -> Result<PointCloud> {
    if frame.width() != depth.width() || frame.height() != depth.height() {
        return Err(Error::DimensionMismatch(format!(
            "frame {}x{} vs depth {}x{}",
            frame.width(),
            frame.height(),
            depth.width(),
            depth.height()
        )));
    }
    pose.validate()?;
    let (w, h) = (frame.width(), frame.height());
    let mut cloud = PointCloud {
        points: Vec::with_capacity(w * h),
        colors: Vec::with_capacity(w * h),
        source_pixel: Vec::with_capacity(w * h),
    };
    for v in 0..h {
        for u in 0..w {
            let d = depth.get(v, u);
            let p_cam = Vector3::new(
                d * (u as f64 - intrinsics.cx) / intrinsics.fx,
                d * (v as f64 - intrinsics.cy) / intrinsics.fy,
                d,
            );
            cloud.points.push(pose.to_world(&p_cam));
            cloud.colors.push(frame.get(v, u));
            cloud.source_pixel.push((v as u32, u as u32));
        }
    }
    Ok(cloud)
}

/// Per-pixel z-buffer result: winning depth and point index.
fn splat_zbuffer(
    cloud: &PointCloud,
    intrinsics: &CameraIntrinsics,
    target: &CameraExtrinsics,
) -> Vec<Option<(f64, usize)>> {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut zbuf: Vec<Option<(f64, usize)>> = vec![None; w * h];
    for (i, point) in cloud.points.iter().enumerate() {
        let q = target.to_camera(point);
        if q.z <= NEAR_PLANE {
            continue;
        }
        let u = (intrinsics.fx * q.x / q.z + intrinsics.cx).round();
        let v = (intrinsics.fy * q.y / q.z + intrinsics.cy).round();
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        let cell = &mut zbuf[v as usize * w + u as usize];
        let wins = match cell {
            None => true,
            Some((best_z, best_i)) => {
                if q.z < *best_z - Z_TIE_TOL {
                    true
                } else if (q.z - *best_z).abs() <= Z_TIE_TOL {
                    // tie: lower source-pixel row-major index wins
                    source_index(cloud, i, intrinsics.width)
                        < source_index(cloud, *best_i, intrinsics.width)
                } else {
                    false
                }
            }
        };
        if wins {
            *cell = Some((q.z, i));
        }
    }
    zbuf
}

fn source_index(cloud: &PointCloud, i: usize, width: usize) -> usize {
    let (r, c) = cloud.source_pixel[i];
    r as usize * width + c as usize
}

/// Forward-splats a point cloud into the target view with a z-buffer.
///
/// Each point lands on its nearest pixel; the smallest camera-space depth
/// wins a contested cell, with ties (within [`Z_TIE_TOL`]) broken by the
/// lower source-pixel row-major index. Uncovered pixels stay black with
/// mask 0.
pub fn reproject(
    cloud: &PointCloud,
    intrinsics: &CameraIntrinsics,
    target: &CameraExtrinsics,
) -> Result<(Frame, VisibilityMask)> {
    let (frame, mask, _) = reproject_depth(cloud, intrinsics, target)?;
    Ok((frame, mask))
}

/// Same splat, but also returns the winning camera-space depth per pixel.
///
/// Used to carry ground-truth depth into warped views; uncovered pixels are
/// `None`.
pub fn reproject_depth(
    cloud: &PointCloud,
    intrinsics: &CameraIntrinsics,
    target: &CameraExtrinsics,
) -> Result<(Frame, VisibilityMask, Vec<Option<f64>>)> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("point cloud has no points".into()));
    }
    let (w, h) = (intrinsics.width, intrinsics.height);
    let zbuf = splat_zbuffer(cloud, intrinsics, target);
    let mut frame = Frame::new(w, h);
    let mut mask = VisibilityMask::zeros(w, h);
    let mut depth = vec![None; w * h];
    for (cell_idx, cell) in zbuf.iter().enumerate() {
        if let Some((z, point_idx)) = cell {
            let (r, c) = (cell_idx / w, cell_idx % w);
            frame.set(r, c, cloud.colors[*point_idx]);
            mask.set(r, c, 1);
            depth[cell_idx] = Some(*z);
        }
    }
    Ok((frame, mask, depth))
}
