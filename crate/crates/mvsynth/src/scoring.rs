//! Consistency rewards and metrics: a geometry-oracle scorer that reprojects
//! candidates through ground-truth depth, and symmetric epipolar distance
//! (SED) metrics with thresholded aggregation (TSED).

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{DepthMap, Frame};
use crate::geometry::{lift_to_pointcloud, reproject_depth, CameraExtrinsics, CameraIntrinsics};
use crate::guidance::ConsistencyScorer;

/// Default SED threshold on the median per-match distance (pixels).
pub const DEFAULT_TE: f64 = 1.25;
/// Default minimum match count for a pair to be judged at all.
pub const DEFAULT_TM: usize = 10;
/// Relative depth tolerance deciding co-visibility after reprojection.
pub const DEPTH_REL_TOL: f64 = 1e-3;
/// Pose components must agree within this for view lookup.
const POSE_LOOKUP_TOL: f64 = 1e-9;

/// Ground truth for one view.
#[derive(Debug, Clone)]
pub struct OracleView {
    pub depth: DepthMap,
    pub pose: CameraExtrinsics,
}

/// Ground-truth geometry of a synthetic scene: shared intrinsics plus
/// per-view depth and pose.
#[derive(Debug, Clone)]
pub struct SceneOracle {
    pub intrinsics: CameraIntrinsics,
    pub views: Vec<OracleView>,
}

#[derive(Serialize, Deserialize)]
struct DepthMapFile {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct OracleViewFile {
    depth: DepthMapFile,
    pose: CameraExtrinsics,
}

#[derive(Serialize, Deserialize)]
struct SceneOracleFile {
    intrinsics: CameraIntrinsics,
    views: Vec<OracleViewFile>,
}

impl SceneOracle {
    pub fn view(&self, idx: usize) -> Result<&OracleView> {
        self.views.get(idx).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "view {idx} out of range (oracle has {})",
                self.views.len()
            ))
        })
    }

    /// Finds the view whose pose matches `pose` elementwise.
    pub fn find_view(&self, pose: &CameraExtrinsics) -> Option<usize> {
        self.views.iter().position(|v| {
            (v.pose.rotation - pose.rotation).abs().max() < POSE_LOOKUP_TOL
                && (v.pose.translation - pose.translation).abs().max() < POSE_LOOKUP_TOL
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = SceneOracleFile {
            intrinsics: self.intrinsics,
            views: self
                .views
                .iter()
                .map(|v| OracleViewFile {
                    depth: DepthMapFile {
                        width: v.depth.width(),
                        height: v.depth.height(),
                        values: v.depth.values().to_vec(),
                    },
                    pose: v.pose,
                })
                .collect(),
        };
        let json = serde_json::to_string_pretty(&file)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SceneOracleFile = serde_json::from_str(&text)?;
        let views = file
            .views
            .into_iter()
            .map(|v| {
                Ok(OracleView {
                    depth: DepthMap::new(v.depth.width, v.depth.height, v.depth.values)?,
                    pose: v.pose,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SceneOracle {
            intrinsics: file.intrinsics,
            views,
        })
    }
}

/// Pixel correspondences between two views; points are (col, row).
#[derive(Debug, Clone, Default)]
pub struct PointMatches {
    pub pairs: Vec<([f64; 2], [f64; 2])>,
}

/// Reprojects `candidate` (an image of view `view_a`) into view `view_b`
/// through the oracle's ground-truth depth and poses, then returns the
/// negated mean squared RGB error (in [0,1] units) over co-visible pixels.
/// Zero co-visibility yields negative infinity.
pub fn oracle_score(
    candidate: &Frame,
    reference: &Frame,
    oracle: &SceneOracle,
    view_a: usize,
    view_b: usize,
) -> Result<f64> {
    let a = oracle.view(view_a)?;
    let b = oracle.view(view_b)?;
    if reference.width() != b.depth.width() || reference.height() != b.depth.height() {
        return Err(Error::DimensionMismatch(format!(
            "reference {}x{} vs oracle view {}x{}",
            reference.width(),
            reference.height(),
            b.depth.width(),
            b.depth.height()
        )));
    }
    let cloud = lift_to_pointcloud(candidate, &a.depth, &oracle.intrinsics, &a.pose)?;
    let (warped, mask, depths) = reproject_depth(&cloud, &oracle.intrinsics, &b.pose)?;
    let w = warped.width();
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..warped.height() {
        for c in 0..w {
            if mask.get(r, c) == 0 {
                continue;
            }
            let gt = b.depth.get(r, c);
            let z = depths[r * w + c].expect("mask 1 implies a depth");
            if (z - gt).abs() > DEPTH_REL_TOL * gt {
                continue; // occluded in the reference view
            }
            let pa = warped.get(r, c);
            let pb = reference.get(r, c);
            for ch in 0..3 {
                let d = (pa[ch] as f64 - pb[ch] as f64) / 255.0;
                sum += d * d;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-sum / (3 * count) as f64)
}

/// [`ConsistencyScorer`] backed by a [`SceneOracle`]; views are resolved by
/// pose lookup. Unknown poses score negative infinity.
pub struct OracleScorer<'a> {
    pub oracle: &'a SceneOracle,
}

impl ConsistencyScorer for OracleScorer<'_> {
    fn score(
        &self,
        candidate: &Frame,
        reference: &Frame,
        candidate_pose: &CameraExtrinsics,
        reference_pose: &CameraExtrinsics,
    ) -> f64 {
        let (Some(a), Some(b)) = (
            self.oracle.find_view(candidate_pose),
            self.oracle.find_view(reference_pose),
        ) else {
            return f64::NEG_INFINITY;
        };
        oracle_score(candidate, reference, self.oracle, a, b).unwrap_or(f64::NEG_INFINITY)
    }
}

fn intrinsic_matrix(k: &CameraIntrinsics) -> Matrix3<f64> {
    Matrix3::new(k.fx, 0.0, k.cx, 0.0, k.fy, k.cy, 0.0, 0.0, 1.0)
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Fundamental matrix mapping view-a pixels to view-b epipolar lines:
/// `F = K^-T [t_rel]x R_rel K^-1` with the relative pose from a to b.
pub fn fundamental_from_poses(
    k: &CameraIntrinsics,
    pose_a: &CameraExtrinsics,
    pose_b: &CameraExtrinsics,
) -> Result<Matrix3<f64>> {
    pose_a.validate()?;
    pose_b.validate()?;
    let r_rel = pose_b.rotation * pose_a.rotation.transpose();
    let t_rel = pose_b.translation - r_rel * pose_a.translation;
    if t_rel.norm() < 1e-12 {
        return Err(Error::DegenerateFundamental);
    }
    let k_inv = intrinsic_matrix(k)
        .try_inverse()
        .ok_or_else(|| Error::InvalidIntrinsics("intrinsics not invertible".into()))?;
    Ok(k_inv.transpose() * skew(&t_rel) * r_rel * k_inv)
}

fn point_line_distance(point: &[f64; 2], line: &Vector3<f64>) -> f64 {
    let num = (line.x * point[0] + line.y * point[1] + line.z).abs();
    let denom = (line.x * line.x + line.y * line.y).sqrt();
    if denom == 0.0 {
        // Degenerate line: a point at the epipole satisfies the constraint
        // vacuously, anything else can never satisfy it.
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num / denom
}

/// Per-match symmetric epipolar distance:
/// `sqrt(0.5 * (dist(x', Fx)^2 + dist(x, F^T x')^2))` in pixels.
pub fn sed_per_match(matches: &PointMatches, f: &Matrix3<f64>) -> Result<Vec<f64>> {
    if matches.pairs.is_empty() {
        return Err(Error::EmptyInput("SED needs at least one match".into()));
    }
    Ok(matches
        .pairs
        .iter()
        .map(|(xa, xb)| {
            let ha = Vector3::new(xa[0], xa[1], 1.0);
            let hb = Vector3::new(xb[0], xb[1], 1.0);
            let line_b = f * ha;
            let line_a = f.transpose() * hb;
            let d1 = point_line_distance(xb, &line_b);
            let d2 = point_line_distance(xa, &line_a);
            (0.5 * (d1 * d1 + d2 * d2)).sqrt()
        })
        .collect())
}

/// Root-mean symmetric epipolar distance over all matches (pixels).
pub fn sed(matches: &PointMatches, f: &Matrix3<f64>) -> Result<f64> {
    let per = sed_per_match(matches, f)?;
    let mean_sq = per.iter().map(|d| d * d).sum::<f64>() / per.len() as f64;
    Ok(mean_sq.sqrt())
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Generates ground-truth correspondences between two oracle views by
/// unprojecting a strided pixel grid of view a and projecting into view b,
/// keeping points that land in-bounds and pass the occlusion check.
pub fn generate_matches(
    oracle: &SceneOracle,
    view_a: usize,
    view_b: usize,
    stride: usize,
) -> Result<PointMatches> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let a = oracle.view(view_a)?;
    let b = oracle.view(view_b)?;
    let k = &oracle.intrinsics;
    let (w, h) = (k.width, k.height);
    let mut pairs = Vec::new();
    for v in (0..h).step_by(stride) {
        for u in (0..w).step_by(stride) {
            let d = a.depth.get(v, u);
            let p_cam = Vector3::new(
                d * (u as f64 - k.cx) / k.fx,
                d * (v as f64 - k.cy) / k.fy,
                d,
            );
            let world = a.pose.to_world(&p_cam);
            let q = b.pose.to_camera(&world);
            if q.z <= 1e-6 {
                continue;
            }
            let ub = k.fx * q.x / q.z + k.cx;
            let vb = k.fy * q.y / q.z + k.cy;
            if ub < 0.0 || vb < 0.0 || ub > (w - 1) as f64 || vb > (h - 1) as f64 {
                continue;
            }
            let gt = b.depth.get(vb.round() as usize, ub.round() as usize);
            if (q.z - gt).abs() > DEPTH_REL_TOL.max(0.02) * gt {
                continue; // occluded in view b
            }
            pairs.push(([u as f64, v as f64], [ub, vb]));
        }
    }
    Ok(PointMatches { pairs })
}

/// Fraction of view pairs that are consistent: a pair counts as consistent
/// iff it has at least `t_m` ground-truth matches and the median per-match
/// SED is below `t_e` pixels.
pub fn tsed(
    frame_pairs: &[(usize, usize)],
    oracle: &SceneOracle,
    t_e: f64,
    t_m: usize,
) -> Result<f64> {
    if frame_pairs.is_empty() {
        return Err(Error::EmptyInput("TSED needs at least one pair".into()));
    }
    let mut consistent = 0usize;
    for (a, b) in frame_pairs {
        let matches = generate_matches(oracle, *a, *b, 2)?;
        if matches.pairs.len() < t_m {
            continue;
        }
        let f = match fundamental_from_poses(&oracle.intrinsics, &oracle.view(*a)?.pose, &oracle.view(*b)?.pose) {
            Ok(f) => f,
            Err(Error::DegenerateFundamental) => continue,
            Err(e) => return Err(e),
        };
        let per = sed_per_match(&matches, &f)?;
        if median(per) < t_e {
            consistent += 1;
        }
    }
    Ok(consistent as f64 / frame_pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_for_camera_type, CameraType};
    use approx::assert_abs_diff_eq;
    use nalgebra::Matrix3;

    /// Flat textured scene at constant depth, seen from identity and a
    /// second orbit pose.
    fn two_view_oracle(w: usize, h: usize, depth: f64) -> (SceneOracle, Frame) {
        let k = CameraIntrinsics::default_for_size(w, h);
        let mut frame = Frame::new(w, h);
        for r in 0..h {
            for c in 0..w {
                frame.set(
                    r,
                    c,
                    [
                        ((r * 37 + c * 11) % 251) as u8,
                        ((r * 13 + c * 71) % 251) as u8,
                        ((r * 53 + c * 29) % 251) as u8,
                    ],
                );
            }
        }
        let depth_a = DepthMap::new(w, h, vec![depth; w * h]).unwrap();
        let pose_b = pose_for_camera_type(CameraType::OrbitLeft, 5.0_f64.to_radians(), depth);
        // depth of the flat plane z = depth seen from pose_b: intersect each
        // pixel ray with the plane; camera-space depth is the z of the
        // camera-frame point
        let mut depth_b = vec![0.0; w * h];
        for v in 0..h {
            for u in 0..w {
                let dir = nalgebra::Vector3::new(
                    (u as f64 - k.cx) / k.fx,
                    (v as f64 - k.cy) / k.fy,
                    1.0,
                );
                let dir_w = pose_b.rotation.transpose() * dir;
                let origin = pose_b.center();
                let t = (depth - origin.z) / dir_w.z;
                let world = origin + t * dir_w;
                depth_b[v * w + u] = pose_b.to_camera(&world).z;
            }
        }
        let oracle = SceneOracle {
            intrinsics: k,
            views: vec![
                OracleView {
                    depth: depth_a,
                    pose: CameraExtrinsics::identity(),
                },
                OracleView {
                    depth: DepthMap::new(w, h, depth_b).unwrap(),
                    pose: pose_b,
                },
            ],
        };
        (oracle, frame)
    }

    #[test]
    fn self_score_is_zero_and_maximal() {
        let (oracle, frame) = two_view_oracle(16, 16, 4.0);
        let s = oracle_score(&frame, &frame, &oracle, 0, 0).unwrap();
        assert_eq!(s, 0.0);
        // any perturbed candidate scores no better
        let mut rng_state = 123u64;
        for _ in 0..10 {
            let mut pert = frame.clone();
            for r in 0..16 {
                for c in 0..16 {
                    rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
                    if rng_state >> 60 == 0 {
                        pert.set(r, c, [0, 0, 0]);
                    }
                }
            }
            let sp = oracle_score(&pert, &frame, &oracle, 0, 0).unwrap();
            assert!(sp <= s);
        }
    }

    #[test]
    fn brightness_offset_scores_minus_delta_squared() {
        let (oracle, _) = two_view_oracle(8, 8, 4.0);
        let mut base = Frame::new(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                base.set(r, c, [100, 100, 100]);
            }
        }
        let mut brighter = Frame::new(8, 8);
        let delta_u8 = 51u8; // 0.2 in [0,1]
        for r in 0..8 {
            for c in 0..8 {
                brighter.set(r, c, [151, 151, 151]);
            }
        }
        let s = oracle_score(&brighter, &base, &oracle, 0, 0).unwrap();
        let delta = delta_u8 as f64 / 255.0;
        assert_abs_diff_eq!(s, -delta * delta, epsilon = 1e-12);
    }

    #[test]
    fn epipolar_constraint_and_rank() {
        let (oracle, _) = two_view_oracle(16, 16, 4.0);
        let f = fundamental_from_poses(
            &oracle.intrinsics,
            &oracle.views[0].pose,
            &oracle.views[1].pose,
        )
        .unwrap();
        let matches = generate_matches(&oracle, 0, 1, 2).unwrap();
        assert!(matches.pairs.len() >= DEFAULT_TM);
        for (xa, xb) in &matches.pairs {
            let ha = nalgebra::Vector3::new(xa[0], xa[1], 1.0);
            let hb = nalgebra::Vector3::new(xb[0], xb[1], 1.0);
            let resid = hb.dot(&(f * ha));
            // normalize by the line magnitude to get a pixel-scale residual
            let line = f * ha;
            let d = resid.abs() / (line.x * line.x + line.y * line.y).sqrt();
            assert!(d < 1e-6, "epipolar residual {d}");
        }
        let svals = f.svd(false, false).singular_values;
        assert!(svals[2] < 1e-9 * svals[0], "rank must be 2: {svals:?}");
    }

    #[test]
    fn swapping_views_transposes_f_up_to_scale() {
        let (oracle, _) = two_view_oracle(16, 16, 4.0);
        let f_ab = fundamental_from_poses(
            &oracle.intrinsics,
            &oracle.views[0].pose,
            &oracle.views[1].pose,
        )
        .unwrap();
        let f_ba = fundamental_from_poses(
            &oracle.intrinsics,
            &oracle.views[1].pose,
            &oracle.views[0].pose,
        )
        .unwrap();
        let t = f_ab.transpose();
        // compare after normalizing by the largest-magnitude entry
        let scale = |m: &Matrix3<f64>| {
            let mx = m.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            m / mx
        };
        let (a, b) = (scale(&t), scale(&f_ba));
        for (x, y) in a.iter().zip(b.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-9);
        }
    }

    #[test]
    fn pure_rotation_is_degenerate() {
        let (oracle, _) = two_view_oracle(8, 8, 4.0);
        let err = fundamental_from_poses(
            &oracle.intrinsics,
            &oracle.views[0].pose,
            &oracle.views[0].pose,
        );
        assert!(matches!(err, Err(Error::DegenerateFundamental)));
    }

    #[test]
    fn sed_hand_case_and_scale_invariance() {
        // one match where the forward distance is exactly 2 px and the
        // reverse line is nearly degenerate, so SED = sqrt(1/2 * 4) = sqrt(2)
        let f = Matrix3::new(0.0, 0.0, 0.0, 1e9, 0.0, 1.0, 0.0, 0.0, 0.0);
        let matches = PointMatches {
            pairs: vec![([0.0, 0.0], [0.0, 2.0])],
        };
        let s = sed(&matches, &f).unwrap();
        assert_abs_diff_eq!(s, 2.0f64.sqrt(), epsilon = 1e-9);
        let s_scaled = sed(&matches, &(f * 3.7)).unwrap();
        assert_abs_diff_eq!(s, s_scaled, epsilon = 1e-9);
        assert!(s >= 0.0);
        assert!(sed(&PointMatches::default(), &f).is_err());
    }

    #[test]
    fn gt_matches_have_negligible_sed() {
        let (oracle, _) = two_view_oracle(16, 16, 4.0);
        let f = fundamental_from_poses(
            &oracle.intrinsics,
            &oracle.views[0].pose,
            &oracle.views[1].pose,
        )
        .unwrap();
        let matches = generate_matches(&oracle, 0, 1, 2).unwrap();
        assert!(sed(&matches, &f).unwrap() < 1e-6);
    }

    #[test]
    fn tsed_thresholds() {
        let (oracle, _) = two_view_oracle(16, 16, 4.0);
        let pairs = [(0usize, 1usize)];
        // ground truth passes the default thresholds
        assert_eq!(tsed(&pairs, &oracle, DEFAULT_TE, DEFAULT_TM).unwrap(), 1.0);
        // impossible match-count requirement fails every pair
        assert_eq!(tsed(&pairs, &oracle, DEFAULT_TE, 1_000_000).unwrap(), 0.0);
        // monotone: tightening T_e can only lower the fraction
        let loose = tsed(&pairs, &oracle, 10.0, DEFAULT_TM).unwrap();
        let tight = tsed(&pairs, &oracle, 1e-12, DEFAULT_TM).unwrap();
        assert!(tight <= loose);
    }

    #[test]
    fn oracle_json_round_trip() {
        let (oracle, _) = two_view_oracle(8, 8, 4.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        oracle.save_json(&path).unwrap();
        let loaded = SceneOracle::load_json(&path).unwrap();
        assert_eq!(loaded.views.len(), 2);
        assert_eq!(loaded.intrinsics, oracle.intrinsics);
        assert_eq!(loaded.views[1].pose, oracle.views[1].pose);
        assert_eq!(loaded.views[1].depth.values(), oracle.views[1].depth.values());
    }
}
