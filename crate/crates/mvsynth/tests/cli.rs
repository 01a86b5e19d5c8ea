//! Black-box tests of the `mvsynth` binary: every subcommand is exercised
//! against fixtures built with the library, and outputs are checked against
//! library results where a direct comparison exists.

use std::path::Path;
use std::process::{Command, Output};

use mvsynth::diffusion::{ToyDenoiser, ToyDenoiserConfig};
use mvsynth::frame::{save_frame_sequence, save_mask_sequence, Frame, VisibilityMask};
use mvsynth::geometry::{
    lift_to_pointcloud, pose_for_camera_type, reproject, CameraExtrinsics, CameraIntrinsics,
    CameraType,
};
use mvsynth::latent_mask::{downsample_mask, DownsampleAnchor, LatentMask};
use mvsynth::synth::{two_plane_spec, SyntheticScene};

fn mvsynth_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvsynth"))
        .args(args)
        .env_remove("RAV_THREADS")
        .output()
        .expect("binary should launch")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn synth_build_train_sample_chain() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("scene");
    let out = mvsynth_cmd(&[
        "synth-scene",
        "--width",
        "16",
        "--height",
        "16",
        "--frames",
        "5",
        "--seed",
        "3",
        "--out",
        scene.to_str().unwrap(),
    ]);
    assert_ok(&out, "synth-scene");
    assert!(scene.join("frames/frame_00004.png").is_file());
    assert!(scene.join("depths/depth_00000.bin").is_file());
    assert!(scene.join("oracle.json").is_file());

    let dataset = dir.path().join("dataset");
    let out = mvsynth_cmd(&[
        "build-dataset",
        "--frames",
        scene.join("frames").to_str().unwrap(),
        "--depths",
        scene.join("depths").to_str().unwrap(),
        "--mode",
        "static",
        "--seed",
        "5",
        "--out",
        dataset.to_str().unwrap(),
    ]);
    assert_ok(&out, "build-dataset");
    assert!(dataset.join("manifest.json").is_file());
    assert!(dataset.join("sample_00/frames/frame_00000.png").is_file());
    assert!(dataset.join("sample_00/masks/mask_00000.png").is_file());

    let model = dir.path().join("model.ravm");
    let out = mvsynth_cmd(&[
        "train",
        "--dataset",
        dataset.to_str().unwrap(),
        "--steps",
        "20",
        "--seed",
        "7",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_ok(&out, "train");
    assert!(model.is_file());
    assert!(dir.path().join("model.json").is_file());

    let sampled = dir.path().join("sampled");
    let start = scene.join("frames/frame_00000.png");
    let out = mvsynth_cmd(&[
        "sample",
        "--model",
        model.to_str().unwrap(),
        "--start",
        start.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        sampled.to_str().unwrap(),
    ]);
    assert_ok(&out, "sample");
    // 5-frame source -> 2 latent frames -> 5 decoded frames, frame 0 pinned
    let frames = mvsynth::frame::load_frame_sequence(&sampled).unwrap();
    assert_eq!(frames.len(), 5);
    assert_eq!(frames[0], Frame::load_png(&start).unwrap());
}

#[test]
fn downsample_masks_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let masks_dir = dir.path().join("masks");
    let masks: Vec<VisibilityMask> = (0..5u8)
        .map(|f| {
            let values = (0..16 * 16).map(|i| ((i + f as usize) % 3 != 0) as u8).collect();
            VisibilityMask::from_values(16, 16, values).unwrap()
        })
        .collect();
    save_mask_sequence(&masks_dir, &masks).unwrap();

    let out_path = dir.path().join("latent.lmask");
    let out = mvsynth_cmd(&[
        "downsample-masks",
        "--masks",
        masks_dir.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_ok(&out, "downsample-masks");
    let from_cli = LatentMask::load(&out_path).unwrap();
    let expected = downsample_mask(&masks, DownsampleAnchor::TopLeft).unwrap();
    assert_eq!(from_cli.shape(), expected.shape());
    assert_eq!(from_cli.values(), expected.values());
}

/// Renders a two-view inpainting fixture: ground-truth source view plus a
/// warped target view with holes, the matching oracle, and a fresh model
/// checkpoint with inpainting dimensions.
fn inpaint_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let (w, h) = (16usize, 16);
    let scene = SyntheticScene::new(two_plane_spec(w, h, 1), 4).unwrap();
    let k = CameraIntrinsics::default_for_size(w, h);
    let identity = CameraExtrinsics::identity();
    let (src, depth) = scene.render(0, &identity, &k).unwrap();
    let target = pose_for_camera_type(CameraType::OrbitLeft, 8.0, depth.median());
    let cloud = lift_to_pointcloud(&src, &depth, &k, &identity).unwrap();
    let (warped, mask) = reproject(&cloud, &k, &target).unwrap();

    let dataset = dir.join("inpaint_dataset");
    save_frame_sequence(&dataset.join("warped"), &[src, warped]).unwrap();
    save_mask_sequence(
        &dataset.join("masks"),
        &[VisibilityMask::ones(w, h), mask],
    )
    .unwrap();
    let oracle = scene.oracle_for_poses(0, &[identity, target], &k).unwrap();
    oracle.save_json(&dataset.join("oracle.json")).unwrap();

    let model_path = dir.join("inpaint_model.ravm");
    let model = ToyDenoiser::new(ToyDenoiserConfig::new(w * h * 3, w * h * 4), 17).unwrap();
    model.save(&model_path).unwrap();
    (dataset, model_path)
}

#[test]
fn inpaint_multiview_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, model) = inpaint_fixture(dir.path());
    let out_dir = dir.path().join("inpainted");
    let out = mvsynth_cmd(&[
        "inpaint-multiview",
        "--dataset",
        dataset.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--S",
        "2",
        "--seed",
        "6",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out, "inpaint-multiview");
    assert!(out_dir.join("view_00.png").is_file());
    assert!(out_dir.join("view_01.png").is_file());
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
}

#[test]
fn eval_consistency_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, _) = inpaint_fixture(dir.path());
    // score the warped inputs themselves against the oracle
    let out = mvsynth_cmd(&[
        "eval-consistency",
        "--frames",
        dataset.join("warped").to_str().unwrap(),
        "--oracle",
        dataset.join("oracle.json").to_str().unwrap(),
        "--metric",
        "oracle",
    ]);
    assert_ok(&out, "eval-consistency oracle");
    let report: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("stdout should be JSON");
    assert_eq!(report["metric"], "oracle");
    assert!(report["pairs"][0]["score"].as_f64().unwrap() <= 0.0);

    let report_path = dir.path().join("tsed.json");
    let out = mvsynth_cmd(&[
        "eval-consistency",
        "--frames",
        dataset.join("warped").to_str().unwrap(),
        "--oracle",
        dataset.join("oracle.json").to_str().unwrap(),
        "--metric",
        "tsed",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_ok(&out, "eval-consistency tsed");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let v = report["tsed"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&v));
}

#[test]
fn run_subcommand_and_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run_out");
    let config = serde_json::json!({
        "mode": "dynamic",
        "seed": 12,
        "input": { "scene": {
            "width": 16, "height": 16, "frames": 5,
            "planes": [
                { "depth": 2.0, "extent": [-0.5, 0.5, -0.4, 0.4] },
                { "depth": 4.0, "extent": null }
            ],
            "spheres": []
        }},
        "out_dir": out_dir,
        "guidance": { "s": 2, "backend": "ddpm" },
        "training": { "steps": 20, "lr": 1e-4, "weight_decay": 1e-3, "rank": 4, "alpha": 1.0 },
        "cameras": [ { "camera_type": "orbit_left", "magnitude": 6.0 } ]
    });
    let config_path = dir.path().join("run.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_mvsynth"))
        .args(["run", "--config", config_path.to_str().unwrap()])
        .env("RAV_THREADS", "1")
        .output()
        .unwrap();
    assert_ok(&out, "run");
    assert!(out_dir.join("metrics.json").is_file());
    assert!(out_dir.join("model.ravm").is_file());

    let out = Command::new(env!("CARGO_BIN_EXE_mvsynth"))
        .args(["run", "--config", config_path.to_str().unwrap()])
        .env("RAV_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success(), "bogus RAV_THREADS must be rejected");
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn bad_arguments_exit_nonzero() {
    let out = mvsynth_cmd(&["inpaint-multiview", "--dataset", "/nonexistent", "--model", "/nonexistent", "--backend", "sde", "--seed", "1", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    let out = mvsynth_cmd(&["eval-consistency", "--frames", "/nonexistent", "--oracle", "/nonexistent", "--metric", "met3r"]);
    assert!(!out.status.success());
}
