//! End-to-end orchestration: ingest (or synthesize) a source video, build
//! the warped training set, fine-tune the adapter, complete the requested
//! views, sample videos, and emit metrics. Every stage failure carries a
//! stage tag; all randomness flows from the run seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{decode_video, encode_image, encode_video};
use crate::diffusion::{
    prepare_training_samples, sample_ddpm, train, DiffusionSchedule, PreparedSample, ToyDenoiser,
    ToyDenoiserConfig, TrainConfig, TrainObjective, DEFAULT_LR, DEFAULT_TRAIN_STEPS,
    DEFAULT_WEIGHT_DECAY,
};
use crate::error::{Error, Result};
use crate::frame::{
    load_depth_sequence, load_frame_sequence, save_frame_sequence, DepthMap, Frame,
};
use crate::geometry::{
    lift_to_pointcloud, pose_for_camera_type, reproject_depth, CameraExtrinsics,
    CameraIntrinsics, CameraType, TrajectoryKind,
};
use crate::guidance::{
    inpaint_condition, multiview_inpaint, Backend, GuidanceConfig, InpaintTask,
};
use crate::scoring::{oracle_score, tsed, OracleScorer, OracleView, SceneOracle, DEFAULT_TE, DEFAULT_TM};
use crate::synth::{SceneSpec, SyntheticScene};
use crate::warp::{build_training_set, save_training_set, Video};

/// One requested target view.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraSpec {
    pub camera_type: CameraType,
    pub magnitude: f64,
}

/// Guidance settings of a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GuidanceSettings {
    pub s: usize,
    pub backend: Backend,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        GuidanceSettings {
            s: 8,
            backend: Backend::Ddpm,
        }
    }
}

/// Training settings of a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainSettings {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub rank: usize,
    pub alpha: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: DEFAULT_TRAIN_STEPS,
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            rank: 4,
            alpha: 1.0,
        }
    }
}

/// Where the source video comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Frame and depth directories on disk.
    Paths {
        frames_dir: PathBuf,
        depths_dir: PathBuf,
    },
    /// A synthetic scene rendered on the fly (exact oracle available).
    Scene(SceneSpec),
}

/// Full configuration of an end-to-end run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: TrajectoryKind,
    pub seed: u64,
    pub input: InputSpec,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub guidance: GuidanceSettings,
    #[serde(default)]
    pub training: TrainSettings,
    pub cameras: Vec<CameraSpec>,
}

impl RunConfig {
    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(Error::EmptyInput("run config requests no cameras".into()));
        }
        if let InputSpec::Paths {
            frames_dir,
            depths_dir,
        } = &self.input
        {
            for dir in [frames_dir, depths_dir] {
                if !dir.is_dir() {
                    return Err(Error::InvalidArgument(format!(
                        "input directory {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        if let InputSpec::Scene(spec) = &self.input {
            spec.validate()?;
        }
        Ok(())
    }
}

/// Per-view entry of the metrics report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub camera_type: String,
    pub magnitude: f64,
    pub oracle_score: f64,
}

/// Metrics JSON emitted at the end of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: TrajectoryKind,
    pub seed: u64,
    pub per_view_oracle_scores: Vec<ViewMetrics>,
    /// Present when at least two views were requested.
    pub pairwise_tsed: Option<f64>,
    pub mean_train_loss_head: f64,
    pub mean_train_loss_tail: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Warps one frame (with depth) to a target pose.
pub fn warp_frame(
    frame: &Frame,
    depth: &DepthMap,
    k: &CameraIntrinsics,
    target: &CameraExtrinsics,
) -> Result<(Frame, crate::frame::VisibilityMask, Vec<Option<f64>>)> {
    let cloud = lift_to_pointcloud(frame, depth, k, &CameraExtrinsics::identity())?;
    reproject_depth(&cloud, k, target)
}

/// Ground-truth-or-best-effort oracle over the requested target poses: exact
/// renders for synthetic scenes, warped input depth (holes filled with the
/// median) otherwise.
fn build_oracle(
    scene: Option<&SyntheticScene>,
    frame0: &Frame,
    depth0: &DepthMap,
    k: &CameraIntrinsics,
    poses: &[CameraExtrinsics],
) -> Result<SceneOracle> {
    if let Some(scene) = scene {
        return scene.oracle_for_poses(0, poses, k);
    }
    let views = poses
        .iter()
        .map(|pose| {
            let (_, _, depths) = warp_frame(frame0, depth0, k, pose)?;
            let covered: Vec<f64> = depths.iter().filter_map(|d| *d).collect();
            if covered.is_empty() {
                return Err(Error::InvalidDepth(
                    "warped view has no covered pixels".into(),
                ));
            }
            let mut sorted = covered.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let fill = sorted[sorted.len() / 2];
            let values = depths.iter().map(|d| d.unwrap_or(fill)).collect();
            Ok(OracleView {
                depth: DepthMap::new(k.width, k.height, values)?,
                pose: *pose,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneOracle {
        intrinsics: *k,
        views,
    })
}

/// Flattened latent-grid encoding of a single start image, matching frame 0
/// of [`encode_video`] applied to any video that begins with it.
fn start_image_cond(frame: &Frame) -> Vec<f64> {
    let latent = encode_image(frame);
    let (h, w, _) = latent.dim();
    let mut cond = Vec::with_capacity((h / 8) * (w / 8) * 3);
    for i in (0..h).step_by(8) {
        for j in (0..w).step_by(8) {
            for c in 0..3 {
                cond.push(latent[(i, j, c)]);
            }
        }
    }
    cond
}

fn camera_one_hot(ct: CameraType) -> [f64; 6] {
    let mut v = [0.0; 6];
    v[ct.index()] = 1.0;
    v
}

/// Runs the whole pipeline; returns the metrics that were also written to
/// `out_dir/metrics.json`.
pub fn run_pipeline(config: &RunConfig) -> Result<RunMetrics> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    mkdir(&config.out_dir).map_err(|e| e.in_stage("config"))?;
    write_json(&config.out_dir.join("run_config.json"), config)
        .map_err(|e| e.in_stage("config"))?;

    // stage: ingest
    let (video, depths, scene) = match &config.input {
        InputSpec::Paths {
            frames_dir,
            depths_dir,
        } => {
            let frames = load_frame_sequence(frames_dir).map_err(|e| e.in_stage("ingest"))?;
            let depths = load_depth_sequence(depths_dir).map_err(|e| e.in_stage("ingest"))?;
            (
                Video::new(frames).map_err(|e| e.in_stage("ingest"))?,
                depths,
                None,
            )
        }
        InputSpec::Scene(spec) => {
            let scene = SyntheticScene::new(spec.clone(), config.seed)
                .map_err(|e| e.in_stage("ingest"))?;
            let k = CameraIntrinsics::default_for_size(spec.width, spec.height);
            let identity = CameraExtrinsics::identity();
            let mut frames = Vec::new();
            let mut depths = Vec::new();
            for f in 0..spec.frames {
                let (frame, depth) =
                    scene.render(f, &identity, &k).map_err(|e| e.in_stage("ingest"))?;
                frames.push(frame);
                depths.push(depth);
            }
            (
                Video::new(frames).map_err(|e| e.in_stage("ingest"))?,
                depths,
                Some(scene),
            )
        }
    };
    if depths.len() != video.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} depth maps for {} frames",
            depths.len(),
            video.len()
        ))
        .in_stage("ingest"));
    }
    let k = CameraIntrinsics::default_for_size(video.width(), video.height());
    let scene_center_depth = depths[0].median();

    // stage: dataset
    let training_set = build_training_set(&video, &depths, &k, config.mode, config.seed)
        .map_err(|e| e.in_stage("dataset"))?;
    let dataset_dir = config.out_dir.join("dataset");
    mkdir(&dataset_dir).map_err(|e| e.in_stage("dataset"))?;
    save_training_set(&training_set, &dataset_dir).map_err(|e| e.in_stage("dataset"))?;

    // stage: train (video model)
    let schedule = DiffusionSchedule::default();
    let samples = prepare_training_samples(&training_set).map_err(|e| e.in_stage("train"))?;
    let data_dim = samples[0].latent.len();
    let cond_dim = samples[0].cond.len();
    let mut model_cfg = ToyDenoiserConfig::new(data_dim, cond_dim);
    model_cfg.rank = config.training.rank;
    model_cfg.alpha = config.training.alpha;
    let mut video_model =
        ToyDenoiser::new(model_cfg, config.seed).map_err(|e| e.in_stage("train"))?;
    let train_cfg = TrainConfig {
        steps: config.training.steps,
        lr: config.training.lr,
        weight_decay: config.training.weight_decay,
        seed: config.seed,
        objective: TrainObjective::Noise,
    };
    let losses =
        train(&mut video_model, &samples, &schedule, &train_cfg).map_err(|e| e.in_stage("train"))?;
    video_model
        .save(&config.out_dir.join("model.ravm"))
        .map_err(|e| e.in_stage("train"))?;
    let head_n = losses.len().min(20).max(1);
    let mean_head = losses[..head_n].iter().sum::<f64>() / head_n as f64;
    let mean_tail = losses[losses.len() - head_n..].iter().sum::<f64>() / head_n as f64;

    // target poses for the requested cameras
    let poses: Vec<CameraExtrinsics> = config
        .cameras
        .iter()
        .map(|c| pose_for_camera_type(c.camera_type, c.magnitude, scene_center_depth))
        .collect();
    let oracle = build_oracle(scene.as_ref(), &video.frames()[0], &depths[0], &k, &poses)
        .map_err(|e| e.in_stage("oracle"))?;
    oracle
        .save_json(&config.out_dir.join("oracle.json"))
        .map_err(|e| e.in_stage("oracle"))?;

    // per-mode completion and sampling
    let views_dir = config.out_dir.join("views");
    mkdir(&views_dir).map_err(|e| e.in_stage("sample"))?;
    let start_images: Vec<Frame> = match config.mode {
        TrajectoryKind::Static => {
            // stage: inpaint - complete the warped first frame of each view
            let tasks: Vec<InpaintTask> = poses
                .iter()
                .enumerate()
                .map(|(i, pose)| {
                    let (warped, mask, _) = warp_frame(&video.frames()[0], &depths[0], &k, pose)?;
                    Ok(InpaintTask {
                        warped,
                        mask,
                        pose: *pose,
                        view: i as u64,
                    })
                })
                .collect::<Result<_>>()
                .map_err(|e: Error| e.in_stage("inpaint"))?;
            let inpaint_samples: Vec<PreparedSample> = training_set
                .samples
                .iter()
                .map(|s| {
                    let frame0 = &s.video.frames()[0];
                    let mask0 = &s.mask_video[0];
                    let task = InpaintTask {
                        warped: frame0.clone(),
                        mask: mask0.clone(),
                        pose: CameraExtrinsics::identity(),
                        view: 0,
                    };
                    PreparedSample {
                        latent: encode_image(frame0).as_slice().unwrap().to_vec(),
                        mask: mask0.values().to_vec(),
                        cond: inpaint_condition(&task),
                    }
                })
                .collect();
            let inpaint_objective = match config.guidance.backend {
                Backend::Ddpm => TrainObjective::Noise,
                Backend::Flow => TrainObjective::Velocity,
            };
            let mut inpaint_cfg = ToyDenoiserConfig::new(
                inpaint_samples[0].latent.len(),
                inpaint_samples[0].cond.len(),
            );
            inpaint_cfg.rank = config.training.rank;
            inpaint_cfg.alpha = config.training.alpha;
            let mut inpaint_model = ToyDenoiser::new(inpaint_cfg, config.seed ^ 0x1)
                .map_err(|e| e.in_stage("inpaint"))?;
            let inpaint_train_cfg = TrainConfig {
                objective: inpaint_objective,
                ..train_cfg.clone()
            };
            train(&mut inpaint_model, &inpaint_samples, &schedule, &inpaint_train_cfg)
                .map_err(|e| e.in_stage("inpaint"))?;
            inpaint_model
                .save(&config.out_dir.join("inpaint_model.ravm"))
                .map_err(|e| e.in_stage("inpaint"))?;
            let guidance_cfg = GuidanceConfig::new(
                config.guidance.s,
                config.guidance.backend,
                config.seed,
            )
            .map_err(|e| e.in_stage("inpaint"))?;
            let scorer = OracleScorer { oracle: &oracle };
            let (images, reports) =
                multiview_inpaint(&tasks, &inpaint_model, &guidance_cfg, &schedule, &scorer)
                    .map_err(|e| e.in_stage("inpaint"))?;
            let reports_dir = config.out_dir.join("reports");
            mkdir(&reports_dir).map_err(|e| e.in_stage("inpaint"))?;
            let inpainted_dir = config.out_dir.join("inpainted");
            mkdir(&inpainted_dir).map_err(|e| e.in_stage("inpaint"))?;
            for (i, (img, report)) in images.iter().zip(&reports).enumerate() {
                img.save_png(&inpainted_dir.join(format!("view_{i:02}.png")))
                    .map_err(|e| e.in_stage("inpaint"))?;
                write_json(&reports_dir.join(format!("guidance_view_{i:02}.json")), report)
                    .map_err(|e| e.in_stage("inpaint"))?;
            }
            images
        }
        // dynamic mode starts every video from the original first frame
        TrajectoryKind::Dynamic => vec![video.frames()[0].clone(); config.cameras.len()],
    };

    // stage: sample - one video per requested camera
    let n_latent_values = encode_video(&video)
        .map_err(|e| e.in_stage("sample"))?
        .dim();
    for (i, cam) in config.cameras.iter().enumerate() {
        let mut cond = start_image_cond(&start_images[i]);
        if config.mode == TrajectoryKind::Dynamic {
            cond.extend_from_slice(&camera_one_hot(cam.camera_type));
        }
        if cond.len() != video_model.config.cond_dim {
            return Err(Error::DimensionMismatch(format!(
                "condition length {} vs model {}",
                cond.len(),
                video_model.config.cond_dim
            ))
            .in_stage("sample"));
        }
        // the video model is noise-trained; its sampler is always the DDPM
        // chain (the backend choice applies to inpainting guidance)
        let view_key = 1000 + i as u64;
        let z = sample_ddpm(
            &video_model,
            &cond,
            data_dim,
            &schedule,
            config.seed,
            view_key,
        )
        .map_err(|e| e.in_stage("sample"))?;
        let latent = ndarray::Array4::from_shape_vec(n_latent_values, z)
            .map_err(|e| Error::ShapeViolation(e.to_string()).in_stage("sample"))?;
        let mut sampled = decode_video(&latent).map_err(|e| e.in_stage("sample"))?;
        // frame 0 is pinned to the designated start image
        let mut frames = sampled.frames().to_vec();
        frames[0] = start_images[i].clone();
        sampled = Video::new(frames).map_err(|e| e.in_stage("sample"))?;
        let dir = views_dir.join(format!("view_{i:02}_{}", cam.camera_type.as_str()));
        mkdir(&dir).map_err(|e| e.in_stage("sample"))?;
        save_frame_sequence(&dir, sampled.frames()).map_err(|e| e.in_stage("sample"))?;
    }

    // stage: metrics
    let mut per_view = Vec::with_capacity(config.cameras.len());
    for (i, cam) in config.cameras.iter().enumerate() {
        let score = if config.mode == TrajectoryKind::Static && config.cameras.len() > 1 {
            // mean consistency of the completed view against the others
            let mut acc = 0.0;
            let mut n = 0usize;
            for j in 0..config.cameras.len() {
                if i == j {
                    continue;
                }
                acc += oracle_score(&start_images[i], &start_images[j], &oracle, i, j)
                    .map_err(|e| e.in_stage("metrics"))?;
                n += 1;
            }
            acc / n as f64
        } else {
            oracle_score(&start_images[i], &start_images[i], &oracle, i, i)
                .map_err(|e| e.in_stage("metrics"))?
        };
        per_view.push(ViewMetrics {
            view: i,
            camera_type: cam.camera_type.as_str().to_string(),
            magnitude: cam.magnitude,
            oracle_score: score,
        });
    }
    let pairwise_tsed = if config.cameras.len() >= 2 {
        let mut pairs = Vec::new();
        for i in 0..config.cameras.len() {
            for j in i + 1..config.cameras.len() {
                pairs.push((i, j));
            }
        }
        Some(tsed(&pairs, &oracle, DEFAULT_TE, DEFAULT_TM).map_err(|e| e.in_stage("metrics"))?)
    } else {
        None
    };
    let metrics = RunMetrics {
        mode: config.mode,
        seed: config.seed,
        per_view_oracle_scores: per_view,
        pairwise_tsed,
        mean_train_loss_head: mean_head,
        mean_train_loss_tail: mean_tail,
    };
    write_json(&config.out_dir.join("metrics.json"), &metrics)
        .map_err(|e| e.in_stage("metrics"))?;
    Ok(metrics)
}
