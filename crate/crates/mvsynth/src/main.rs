//! Command-line entry points for the multi-view synthesis pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvsynth::codec::encode_image;
use mvsynth::diffusion::{
    prepare_training_samples, sample_ddpm, train, DiffusionSchedule, ToyDenoiser,
    ToyDenoiserConfig, TrainConfig, TrainObjective,
};
use mvsynth::frame::{
    load_depth_sequence, load_frame_sequence, load_mask_sequence, save_frame_sequence,
    save_mask_sequence, Frame,
};
use mvsynth::geometry::{
    make_static_trajectory, CameraType, TrajectoryKind,
};
use mvsynth::guidance::{multiview_inpaint, Backend, GuidanceConfig, InpaintTask};
use mvsynth::latent_mask::{downsample_mask, DownsampleAnchor};
use mvsynth::pipeline::{run_pipeline, RunConfig};
use mvsynth::scoring::{
    fundamental_from_poses, generate_matches, oracle_score, sed, tsed, OracleScorer, SceneOracle,
};
use mvsynth::synth::{generate_synthetic_scene, two_plane_spec, SceneSpec};
use mvsynth::warp::{build_training_set, load_training_set, save_training_set, warp_video, Video};

#[derive(Parser)]
#[command(name = "mvsynth", about = "Video-to-multi-view synthesis pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warp a video along a camera trajectory.
    Warp {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        depths: PathBuf,
        #[arg(long)]
        camera: CameraType,
        #[arg(long)]
        magnitude: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the warped training set from a source video.
    BuildDataset {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        depths: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: TrajectoryKind,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Downsample a pixel-space mask video to the latent grid.
    DownsampleMasks {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long, default_value = "top_left", value_parser = parse_anchor)]
        anchor: DownsampleAnchor,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune the adapter on a materialized dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 400)]
        steps: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 1e-3)]
        weight_decay: f64,
        #[arg(long, default_value_t = 4)]
        rank: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a video from a trained model and a start image.
    Sample {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        start: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Camera label appended as a one-hot (dynamic-mode models).
        #[arg(long)]
        camera: Option<CameraType>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sequentially inpaint warped views with stochastic-control guidance.
    InpaintMultiview {
        /// Directory with warped/frame_*.png, masks/mask_*.png, oracle.json.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "S", default_value_t = 8)]
        s: usize,
        #[arg(long, default_value = "ddpm")]
        backend: Backend,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate consistency metrics over a directory of view images.
    EvalConsistency {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long, default_value = "oracle")]
        metric: String,
        #[arg(long, default_value_t = 1.25)]
        te: f64,
        #[arg(long, default_value_t = 10)]
        tm: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic scene: frames, depths, and the geometry oracle.
    SynthScene {
        /// Scene spec JSON; omitted = built-in two-plane scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        height: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<TrajectoryKind, String> {
    match s {
        "static" => Ok(TrajectoryKind::Static),
        "dynamic" => Ok(TrajectoryKind::Dynamic),
        other => Err(format!("unknown mode `{other}` (static|dynamic)")),
    }
}

fn parse_anchor(s: &str) -> Result<DownsampleAnchor, String> {
    match s {
        "top_left" => Ok(DownsampleAnchor::TopLeft),
        "center" => Ok(DownsampleAnchor::Center),
        other => Err(format!("unknown anchor `{other}` (top_left|center)")),
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("RAV_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("RAV_THREADS must be a positive integer, got `{v}`"))?;
        if n == 0 {
            anyhow::bail!("RAV_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &std::path::Path, value: &T) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn real_main() -> anyhow::Result<()> {
    configure_threads()?;
    let cli = Cli::parse();
    match cli.command {
        Command::Warp {
            frames,
            depths,
            camera,
            magnitude,
            out,
        } => {
            let video = Video::new(load_frame_sequence(&frames)?)?;
            let depth_maps = load_depth_sequence(&depths)?;
            let k = mvsynth::geometry::CameraIntrinsics::default_for_size(
                video.width(),
                video.height(),
            );
            let scene_center = depth_maps
                .first()
                .ok_or_else(|| anyhow::anyhow!("no depth maps found"))?
                .median();
            let trajectory = make_static_trajectory(
                camera,
                magnitude,
                video.len(),
                &mvsynth::geometry::CameraExtrinsics::identity(),
                scene_center,
            )?;
            let (warped, masks) = warp_video(&video, &depth_maps, &k, &trajectory)?;
            save_frame_sequence(&out.join("frames"), warped.frames())?;
            save_mask_sequence(&out.join("masks"), &masks)?;
            println!("warped {} frames to {}", warped.len(), out.display());
        }
        Command::BuildDataset {
            frames,
            depths,
            mode,
            seed,
            out,
        } => {
            let video = Video::new(load_frame_sequence(&frames)?)?;
            let depth_maps = load_depth_sequence(&depths)?;
            let k = mvsynth::geometry::CameraIntrinsics::default_for_size(
                video.width(),
                video.height(),
            );
            let set = build_training_set(&video, &depth_maps, &k, mode, seed)?;
            let manifest = save_training_set(&set, &out)?;
            println!(
                "wrote {} samples to {}",
                manifest.samples.len(),
                out.display()
            );
        }
        Command::DownsampleMasks { masks, anchor, out } => {
            let mask_video = load_mask_sequence(&masks)?;
            let latent = downsample_mask(&mask_video, anchor)?;
            latent.save(&out)?;
            let (n, h, w) = latent.shape();
            println!("latent mask {n}x{h}x{w} -> {}", out.display());
        }
        Command::Train {
            dataset,
            steps,
            lr,
            weight_decay,
            rank,
            alpha,
            seed,
            out,
        } => {
            let set = load_training_set(&dataset)?;
            let samples = prepare_training_samples(&set)?;
            let mut cfg = ToyDenoiserConfig::new(samples[0].latent.len(), samples[0].cond.len());
            cfg.rank = rank;
            cfg.alpha = alpha;
            let mut model = ToyDenoiser::new(cfg, seed)?;
            let train_cfg = TrainConfig {
                steps,
                lr,
                weight_decay,
                seed,
                objective: TrainObjective::Noise,
            };
            let losses = train(&mut model, &samples, &DiffusionSchedule::default(), &train_cfg)?;
            model.save(&out)?;
            write_json(&out.with_extension("json"), &train_cfg)?;
            println!(
                "trained {steps} steps, final loss {:.6}, checkpoint {}",
                losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Sample {
            model,
            start,
            seed,
            camera,
            out,
        } => {
            let model = ToyDenoiser::load(&model)?;
            let start_frame = Frame::load_png(&start)?;
            let latent = encode_image(&start_frame);
            let (h, w, _) = latent.dim();
            let mut cond = Vec::new();
            for i in (0..h).step_by(8) {
                for j in (0..w).step_by(8) {
                    for c in 0..3 {
                        cond.push(latent[(i, j, c)]);
                    }
                }
            }
            if let Some(ct) = camera {
                let mut one_hot = [0.0; 6];
                one_hot[ct.index()] = 1.0;
                cond.extend_from_slice(&one_hot);
            }
            anyhow::ensure!(
                cond.len() == model.config.cond_dim,
                "condition length {} does not match the model's {} (wrong --camera usage?)",
                cond.len(),
                model.config.cond_dim
            );
            let schedule = DiffusionSchedule::default();
            let z = sample_ddpm(&model, &cond, model.config.data_dim, &schedule, seed, 0)?;
            // infer the latent video shape from the model dimensions
            let cells = model.config.data_dim / 3;
            let hw = (h / 8) * (w / 8);
            anyhow::ensure!(
                cells % hw == 0,
                "model data dim {} does not fit a {}x{} latent grid",
                model.config.data_dim,
                h / 8,
                w / 8
            );
            let n_lat = cells / hw;
            let arr = ndarray::Array4::from_shape_vec((n_lat, h / 8, w / 8, 3), z)?;
            let mut video = mvsynth::codec::decode_video(&arr)?;
            let mut frames = video.frames().to_vec();
            frames[0] = start_frame;
            video = Video::new(frames)?;
            save_frame_sequence(&out, video.frames())?;
            println!("sampled {} frames to {}", video.len(), out.display());
        }
        Command::InpaintMultiview {
            dataset,
            model,
            s,
            backend,
            seed,
            out,
        } => {
            let model = ToyDenoiser::load(&model)?;
            let warped = load_frame_sequence(&dataset.join("warped"))?;
            let masks = load_mask_sequence(&dataset.join("masks"))?;
            let oracle = SceneOracle::load_json(&dataset.join("oracle.json"))?;
            anyhow::ensure!(
                warped.len() == masks.len() && warped.len() == oracle.views.len(),
                "dataset has {} frames, {} masks, {} oracle views",
                warped.len(),
                masks.len(),
                oracle.views.len()
            );
            let tasks: Vec<InpaintTask> = warped
                .into_iter()
                .zip(masks)
                .enumerate()
                .map(|(i, (frame, mask))| InpaintTask {
                    warped: frame,
                    mask,
                    pose: oracle.views[i].pose,
                    view: i as u64,
                })
                .collect();
            let config = GuidanceConfig::new(s, backend, seed)?;
            let scorer = OracleScorer { oracle: &oracle };
            let schedule = DiffusionSchedule::default();
            let (images, reports) =
                multiview_inpaint(&tasks, &model, &config, &schedule, &scorer)?;
            std::fs::create_dir_all(&out)?;
            for (i, img) in images.iter().enumerate() {
                img.save_png(&out.join(format!("view_{i:02}.png")))?;
            }
            write_json(&out.join("report.json"), &reports)?;
            println!("inpainted {} views to {}", images.len(), out.display());
        }
        Command::EvalConsistency {
            frames,
            oracle,
            metric,
            te,
            tm,
            out,
        } => {
            let images = load_frame_sequence(&frames)?;
            let oracle = SceneOracle::load_json(&oracle)?;
            anyhow::ensure!(
                images.len() == oracle.views.len(),
                "{} images vs {} oracle views",
                images.len(),
                oracle.views.len()
            );
            let n = images.len();
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    pairs.push((i, j));
                }
            }
            let report: serde_json::Value = match metric.as_str() {
                "oracle" => {
                    let mut scores = Vec::new();
                    for (i, j) in &pairs {
                        scores.push(serde_json::json!({
                            "pair": [i, j],
                            "score": oracle_score(&images[*i], &images[*j], &oracle, *i, *j)?,
                        }));
                    }
                    serde_json::json!({ "metric": "oracle", "pairs": scores })
                }
                "sed" => {
                    let mut scores = Vec::new();
                    for (i, j) in &pairs {
                        let f = fundamental_from_poses(
                            &oracle.intrinsics,
                            &oracle.views[*i].pose,
                            &oracle.views[*j].pose,
                        )?;
                        let matches = generate_matches(&oracle, *i, *j, 2)?;
                        scores.push(serde_json::json!({
                            "pair": [i, j],
                            "sed": sed(&matches, &f)?,
                            "matches": matches.pairs.len(),
                        }));
                    }
                    serde_json::json!({ "metric": "sed", "pairs": scores })
                }
                "tsed" => {
                    let value = tsed(&pairs, &oracle, te, tm)?;
                    serde_json::json!({ "metric": "tsed", "te": te, "tm": tm, "tsed": value })
                }
                other => anyhow::bail!("unknown metric `{other}` (oracle|sed|tsed)"),
            };
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
        }
        Command::SynthScene {
            spec,
            width,
            height,
            frames,
            seed,
            out,
        } => {
            let spec: SceneSpec = match spec {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
                None => two_plane_spec(width, height, frames),
            };
            let (video, depths, oracle) = generate_synthetic_scene(spec, seed)?;
            save_frame_sequence(&out.join("frames"), video.frames())?;
            mvsynth::frame::save_depth_sequence(&out.join("depths"), &depths)?;
            oracle.save_json(&out.join("oracle.json"))?;
            println!(
                "rendered {} frames at {}x{} to {}",
                video.len(),
                video.width(),
                video.height(),
                out.display()
            );
        }
        Command::Run { config } => {
            let config = RunConfig::load_json(&config)?;
            let metrics = run_pipeline(&config)?;
            println!(
                "run complete: {} views, tsed {:?}",
                metrics.per_view_oracle_scores.len(),
                metrics.pairwise_tsed
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
