//! Warped-video training-set construction.
//!
//! One input video plus per-frame depth becomes M warped (video, mask-video)
//! pairs — two per camera family in static mode, one per family in dynamic
//! mode — plus the original video with all-ones masks.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{
    load_frame_sequence, load_mask_sequence, save_frame_sequence, save_mask_sequence, DepthMap,
    Frame, VisibilityMask,
};
use crate::geometry::{
    lift_to_pointcloud, make_dynamic_trajectory, make_static_trajectory, reproject,
    CameraExtrinsics, CameraIntrinsics, CameraType, Trajectory, TrajectoryKind,
};
use crate::rng::{derive_rng, stream};

/// Orbit magnitudes are drawn uniformly from this range (degrees).
pub const ORBIT_ANGLE_RANGE_DEG: (f64, f64) = (4.0, 12.0);
/// Dolly magnitudes are drawn uniformly from this range (fractional depth).
pub const DOLLY_RANGE: (f64, f64) = (0.1, 0.4);

/// An ordered sequence of equally sized RGB frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Video {
    frames: Vec<Frame>,
}

impl Video {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::EmptyInput("video needs at least one frame".into()))?;
        let (w, h) = (first.width(), first.height());
        if frames.iter().any(|f| f.width() != w || f.height() != h) {
            return Err(Error::DimensionMismatch(
                "all video frames must share dimensions".into(),
            ));
        }
        Ok(Video { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}

/// Camera label of a training sample: a warped view or the untouched input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraLabel {
    Original,
    Warped(CameraType),
}

impl CameraLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            CameraLabel::Original => "original",
            CameraLabel::Warped(ct) => ct.as_str(),
        }
    }
}

/// One (video, mask-video) pair of the training set.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub video: Video,
    pub mask_video: Vec<VisibilityMask>,
    pub camera_label: CameraLabel,
    pub magnitude: f64,
}

impl TrainingSample {
    fn validate(&self) -> Result<()> {
        if self.mask_video.len() != self.video.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} masks for {} frames",
                self.mask_video.len(),
                self.video.len()
            )));
        }
        if self.camera_label == CameraLabel::Original
            && self.mask_video.iter().any(|m| m.fraction() < 1.0)
        {
            return Err(Error::InvalidArgument(
                "original sample must carry all-ones masks".into(),
            ));
        }
        Ok(())
    }
}

/// The full training set: M warped samples plus the original.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<TrainingSample>,
    pub mode: TrajectoryKind,
    pub seed: u64,
}

/// Warps every frame of a video along a trajectory.
pub fn warp_video(
    video: &Video,
    depths: &[DepthMap],
    intrinsics: &CameraIntrinsics,
    trajectory: &Trajectory,
) -> Result<(Video, Vec<VisibilityMask>)> {
    if depths.len() != video.len() || trajectory.len() != video.len() {
        return Err(Error::DimensionMismatch(format!(
            "video has {} frames, {} depths, trajectory length {}",
            video.len(),
            depths.len(),
            trajectory.len()
        )));
    }
    let source_pose = CameraExtrinsics::identity();
    let warped: Vec<(Frame, VisibilityMask)> = video
        .frames()
        .par_iter()
        .zip(depths.par_iter())
        .zip(trajectory.poses.par_iter())
        .map(|((frame, depth), pose)| {
            let cloud = lift_to_pointcloud(frame, depth, intrinsics, &source_pose)?;
            reproject(&cloud, intrinsics, pose)
        })
        .collect::<Result<_>>()?;
    let (frames, masks) = warped.into_iter().unzip();
    Ok((Video::new(frames)?, masks))
}

fn draw_magnitude(camera_type: CameraType, rng: &mut impl Rng) -> f64 {
    let (lo, hi) = if camera_type.is_orbit() {
        ORBIT_ANGLE_RANGE_DEG
    } else {
        DOLLY_RANGE
    };
    rng.random_range(lo..hi)
}

/// Builds the training set Ω for one input video.
///
/// Static mode draws two magnitudes per camera family (M = 12); dynamic mode
/// draws one (M = 6). Sample `j` draws from the stream `(DATASET, j)` so the
/// set is fully determined by `seed` regardless of construction order.
pub fn build_training_set(
    video: &Video,
    depths: &[DepthMap],
    intrinsics: &CameraIntrinsics,
    mode: TrajectoryKind,
    seed: u64,
) -> Result<TrainingSet> {
    if depths.len() != video.len() {
        return Err(Error::DimensionMismatch(format!(
            "video has {} frames but {} depth maps",
            video.len(),
            depths.len()
        )));
    }
    let scene_center_depth = depths[0].median();
    let per_type = match mode {
        TrajectoryKind::Static => 2,
        TrajectoryKind::Dynamic => 1,
    };
    let specs: Vec<(usize, CameraType)> = CameraType::ALL
        .iter()
        .flat_map(|ct| std::iter::repeat(*ct).take(per_type))
        .enumerate()
        .collect();

    let source_pose = CameraExtrinsics::identity();
    let n = video.len();
    let mut samples = Vec::with_capacity(specs.len() + 1);
    samples.push(TrainingSample {
        video: video.clone(),
        mask_video: vec![VisibilityMask::ones(video.width(), video.height()); n],
        camera_label: CameraLabel::Original,
        magnitude: 0.0,
    });

    let warped: Vec<TrainingSample> = specs
        .par_iter()
        .map(|(j, camera_type)| {
            let mut rng = derive_rng(seed, &[stream::DATASET, *j as u64]);
            let magnitude = draw_magnitude(*camera_type, &mut rng);
            let trajectory = match mode {
                TrajectoryKind::Static => make_static_trajectory(
                    *camera_type,
                    magnitude,
                    n,
                    &source_pose,
                    scene_center_depth,
                )?,
                TrajectoryKind::Dynamic => make_dynamic_trajectory(
                    *camera_type,
                    magnitude,
                    n,
                    &source_pose,
                    scene_center_depth,
                )?,
            };
            let (warped_video, mask_video) = warp_video(video, depths, intrinsics, &trajectory)?;
            Ok(TrainingSample {
                video: warped_video,
                mask_video,
                camera_label: CameraLabel::Warped(*camera_type),
                magnitude,
            })
        })
        .collect::<Result<_>>()?;
    samples.extend(warped);

    let set = TrainingSet {
        samples,
        mode,
        seed,
    };
    for s in &set.samples {
        s.validate()?;
    }
    Ok(set)
}

/// Manifest entry for one materialized sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestSample {
    pub id: usize,
    pub camera_label: String,
    pub magnitude: f64,
    pub frame_dir: String,
    pub mask_dir: String,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
}

/// On-disk dataset manifest (`manifest.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mode: TrajectoryKind,
    pub seed: u64,
    pub samples: Vec<ManifestSample>,
}

/// Materializes the training set under `out_dir` and writes `manifest.json`.
pub fn save_training_set(set: &TrainingSet, out_dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = DatasetManifest {
        mode: set.mode,
        seed: set.seed,
        samples: Vec::with_capacity(set.samples.len()),
    };
    for (id, sample) in set.samples.iter().enumerate() {
        let frame_dir = format!("sample_{id:02}/frames");
        let mask_dir = format!("sample_{id:02}/masks");
        save_frame_sequence(&out_dir.join(&frame_dir), sample.video.frames())?;
        save_mask_sequence(&out_dir.join(&mask_dir), &sample.mask_video)?;
        manifest.samples.push(ManifestSample {
            id,
            camera_label: sample.camera_label.as_str().to_string(),
            magnitude: sample.magnitude,
            frame_dir,
            mask_dir,
            num_frames: sample.video.len(),
            width: sample.video.width(),
            height: sample.video.height(),
        });
    }
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a materialized training set back from `manifest.json`.
pub fn load_training_set(dir: &Path) -> Result<TrainingSet> {
    let path = dir.join("manifest.json");
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&json)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let video = Video::new(load_frame_sequence(&dir.join(&entry.frame_dir))?)?;
        let mask_video = load_mask_sequence(&dir.join(&entry.mask_dir))?;
        let camera_label = if entry.camera_label == "original" {
            CameraLabel::Original
        } else {
            CameraLabel::Warped(entry.camera_label.parse()?)
        };
        samples.push(TrainingSample {
            video,
            mask_video,
            camera_label,
            magnitude: entry.magnitude,
        });
    }
    Ok(TrainingSet {
        samples,
        mode: manifest.mode,
        seed: manifest.seed,
    })
}
