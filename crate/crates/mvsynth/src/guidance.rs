//! Stochastic-control guidance: at every sampler step draw S candidate
//! continuations, score each candidate's clean estimate against previously
//! completed views, and keep the argmax. Candidate noise comes from streams
//! keyed by (seed, view, step, candidate), so S = 1 reproduces the plain
//! sampler bit for bit and parallel scoring stays deterministic.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_image, encode_image};
use crate::diffusion::{
    clean_estimate_ddpm, ddpm_step_from_eps_hat, flow_clean_estimate, flow_sde_step,
    initial_noise, step_noise, Denoiser, DiffusionSchedule, DEFAULT_FLOW_STEPS,
};
use crate::error::{Error, Result};
use crate::frame::{Frame, VisibilityMask};
use crate::geometry::CameraExtrinsics;

/// Which reverse process advances the candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Ddpm,
    Flow,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Backend::Ddpm),
            "flow" => Ok(Backend::Flow),
            other => Err(Error::InvalidArgument(format!("unknown backend `{other}`"))),
        }
    }
}

/// Candidate count, step budget, backend and seed of a guided run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub s: usize,
    pub steps: usize,
    pub backend: Backend,
    pub seed: u64,
}

impl GuidanceConfig {
    pub fn new(s: usize, backend: Backend, seed: u64) -> Result<Self> {
        let steps = match backend {
            Backend::Ddpm => crate::diffusion::DEFAULT_STEPS,
            Backend::Flow => DEFAULT_FLOW_STEPS,
        };
        let cfg = GuidanceConfig {
            s,
            steps,
            backend,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s < 1 || self.steps < 1 {
            return Err(Error::InvalidArgument(
                "guidance needs S >= 1 and steps >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One inpainting job: a warped frame with its visibility mask, pose, and
/// the stream index that keys its noise draws.
#[derive(Debug, Clone)]
pub struct InpaintTask {
    pub warped: Frame,
    pub mask: VisibilityMask,
    pub pose: CameraExtrinsics,
    pub view: u64,
}

impl InpaintTask {
    pub fn validate(&self) -> Result<()> {
        if self.mask.width() != self.warped.width() || self.mask.height() != self.warped.height() {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs frame {}x{}",
                self.mask.width(),
                self.mask.height(),
                self.warped.width(),
                self.warped.height()
            )));
        }
        Ok(())
    }
}

/// A finished view available as a consistency reference.
#[derive(Debug, Clone)]
pub struct CompletedView {
    pub image: Frame,
    pub pose: CameraExtrinsics,
}

/// Deterministic pairwise consistency score; higher is more consistent, and
/// an image is maximally consistent with itself under equal poses.
pub trait ConsistencyScorer {
    fn score(
        &self,
        candidate: &Frame,
        reference: &Frame,
        candidate_pose: &CameraExtrinsics,
        reference_pose: &CameraExtrinsics,
    ) -> f64;
}

/// Per-run bookkeeping emitted as JSON next to the outputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GuidanceReport {
    pub selected_rewards: Vec<f64>,
    pub scorer_calls: usize,
    pub candidates: usize,
    pub steps: usize,
}

/// Argmax with lowest-index tie-breaking.
fn argmax(rewards: &[f64]) -> usize {
    let mut best = 0;
    for (i, r) in rewards.iter().enumerate().skip(1) {
        if *r > rewards[best] {
            best = i;
        }
    }
    best
}

/// Generic guided chain on flat latents: advances S candidates per step and
/// keeps the one whose clean estimate maximizes `reward`. The reward is only
/// consulted for selection; every candidate state is produced by one
/// unmodified sampler step.
pub fn guided_chain<D: Denoiser + ?Sized>(
    model: &D,
    cond: &[f64],
    z_init: Vec<f64>,
    config: &GuidanceConfig,
    schedule: &DiffusionSchedule,
    view: u64,
    mut reward: impl FnMut(&[f64]) -> f64,
) -> Result<(Vec<f64>, GuidanceReport)> {
    config.validate()?;
    let mut report = GuidanceReport {
        candidates: config.s,
        ..GuidanceReport::default()
    };
    let dim = z_init.len();
    let mut z = z_init;
    match config.backend {
        Backend::Ddpm => {
            let steps = schedule.steps();
            for t in (1..=steps).rev() {
                let eps_hat = model.predict(&z, t as f64 / steps as f64, cond);
                let mut candidates = Vec::with_capacity(config.s);
                let mut rewards = Vec::with_capacity(config.s);
                for s in 0..config.s {
                    let eps = step_noise(config.seed, view, t as u64, s as u64, dim);
                    let cand = ddpm_step_from_eps_hat(&z, &eps_hat, t, &eps, schedule)?;
                    let eps_hat_s =
                        model.predict(&cand, (t - 1) as f64 / steps as f64, cond);
                    let clean = clean_estimate_ddpm(&cand, t - 1, &eps_hat_s, schedule)?;
                    rewards.push(reward(&clean));
                    candidates.push(cand);
                }
                let best = argmax(&rewards);
                report.selected_rewards.push(rewards[best]);
                report.scorer_calls += config.s;
                z = candidates.swap_remove(best);
                report.steps += 1;
            }
        }
        Backend::Flow => {
            let steps = config.steps;
            let dt = 1.0 / steps as f64;
            for i in 0..steps {
                let t = i as f64 / steps as f64;
                let v_hat = model.predict(&z, t, cond);
                let mut candidates = Vec::with_capacity(config.s);
                let mut rewards = Vec::with_capacity(config.s);
                for s in 0..config.s {
                    let eps = step_noise(config.seed, view, i as u64, s as u64, dim);
                    let cand = flow_sde_step(&z, t, dt, &v_hat, &eps)?;
                    let t_next = (i + 1) as f64 / steps as f64;
                    let v_s = model.predict(&cand, t_next, cond);
                    let clean = flow_clean_estimate(&cand, t_next, &v_s);
                    rewards.push(reward(&clean));
                    candidates.push(cand);
                }
                let best = argmax(&rewards);
                report.selected_rewards.push(rewards[best]);
                report.scorer_calls += config.s;
                z = candidates.swap_remove(best);
                report.steps += 1;
            }
        }
    }
    Ok((z, report))
}

/// Condition vector of an inpainting task: the masked image latent followed
/// by the flat mask.
pub fn inpaint_condition(task: &InpaintTask) -> Vec<f64> {
    let (h, w) = (task.warped.height(), task.warped.width());
    let mut masked = task.warped.clone();
    for r in 0..h {
        for c in 0..w {
            if task.mask.get(r, c) == 0 {
                masked.set(r, c, [0, 0, 0]);
            }
        }
    }
    let latent = encode_image(&masked);
    let mut cond: Vec<f64> = latent.as_slice().unwrap().to_vec();
    cond.extend(task.mask.values().iter().map(|m| *m as f64));
    cond
}

/// Dimension of an inpainting latent for the given image size.
pub fn inpaint_data_dim(width: usize, height: usize) -> usize {
    width * height * 3
}

/// Copies visible pixels of the warped input over the sampled image.
fn composite(task: &InpaintTask, sampled: Frame) -> Frame {
    let mut out = sampled;
    for r in 0..task.warped.height() {
        for c in 0..task.warped.width() {
            if task.mask.get(r, c) == 1 {
                out.set(r, c, task.warped.get(r, c));
            }
        }
    }
    out
}

/// Completes one view, rewarding consistency against every previously
/// completed view (the mean of the pairwise scores).
pub fn guided_sample<D: Denoiser + ?Sized>(
    task: &InpaintTask,
    completed: &[CompletedView],
    model: &D,
    config: &GuidanceConfig,
    schedule: &DiffusionSchedule,
    scorer: &dyn ConsistencyScorer,
) -> Result<(Frame, GuidanceReport)> {
    task.validate()?;
    if completed.is_empty() {
        return Err(Error::EmptyInput(
            "guided_sample needs at least one completed view".into(),
        ));
    }
    let cond = inpaint_condition(task);
    let (h, w) = (task.warped.height(), task.warped.width());
    let dim = inpaint_data_dim(w, h);
    let z_init = initial_noise(config.seed, task.view, dim);
    let mut calls = 0usize;
    let (z, mut report) = guided_chain(
        model,
        &cond,
        z_init,
        config,
        schedule,
        task.view,
        |clean| {
            // score the candidate as it would actually ship: visible pixels
            // composited over the decoded clean estimate
            let img = composite(
                task,
                decode_image(
                    &ndarray::Array3::from_shape_vec((h, w, 3), clean.to_vec()).unwrap(),
                ),
            );
            calls += completed.len();
            completed
                .iter()
                .map(|c| scorer.score(&img, &c.image, &task.pose, &c.pose))
                .sum::<f64>()
                / completed.len() as f64
        },
    )?;
    report.scorer_calls = calls;
    let latent = ndarray::Array3::from_shape_vec((h, w, 3), z).unwrap();
    Ok((composite(task, decode_image(&latent)), report))
}

/// Completes the first two views concurrently: per step, all S^2 pairs of
/// clean estimates are scored and the argmax pair survives.
pub fn guided_sample_pair<D: Denoiser + ?Sized>(
    task_a: &InpaintTask,
    task_b: &InpaintTask,
    model: &D,
    config: &GuidanceConfig,
    schedule: &DiffusionSchedule,
    scorer: &dyn ConsistencyScorer,
) -> Result<(Frame, Frame, GuidanceReport)> {
    task_a.validate()?;
    task_b.validate()?;
    config.validate()?;
    let (h, w) = (task_a.warped.height(), task_a.warped.width());
    if (task_b.warped.height(), task_b.warped.width()) != (h, w) {
        return Err(Error::DimensionMismatch(
            "paired tasks must share image dimensions".into(),
        ));
    }
    let cond_a = inpaint_condition(task_a);
    let cond_b = inpaint_condition(task_b);
    let dim = inpaint_data_dim(w, h);
    let mut za = initial_noise(config.seed, task_a.view, dim);
    let mut zb = initial_noise(config.seed, task_b.view, dim);
    let mut report = GuidanceReport {
        candidates: config.s,
        ..GuidanceReport::default()
    };
    // candidates are scored post-composite, i.e. as they would ship
    let decode = |clean: &[f64], task: &InpaintTask| {
        composite(
            task,
            decode_image(&ndarray::Array3::from_shape_vec((h, w, 3), clean.to_vec()).unwrap()),
        )
    };

    // one sampler step of both views: S candidates each with their clean
    // estimates, shared model prediction per view
    enum StepSpec {
        Ddpm(usize),
        Flow { i: usize, steps: usize },
    }
    let advance = |spec: &StepSpec,
                   z: &[f64],
                   cond: &[f64],
                   task: &InpaintTask|
     -> Result<(Vec<Vec<f64>>, Vec<Frame>)> {
        let view = task.view;
        let mut cands = Vec::with_capacity(config.s);
        let mut cleans = Vec::with_capacity(config.s);
        match *spec {
            StepSpec::Ddpm(t) => {
                let steps = schedule.steps();
                let eps_hat = model.predict(z, t as f64 / steps as f64, cond);
                for s in 0..config.s {
                    let eps = step_noise(config.seed, view, t as u64, s as u64, dim);
                    let cand = ddpm_step_from_eps_hat(z, &eps_hat, t, &eps, schedule)?;
                    let eps_hat_s = model.predict(&cand, (t - 1) as f64 / steps as f64, cond);
                    let clean = clean_estimate_ddpm(&cand, t - 1, &eps_hat_s, schedule)?;
                    cleans.push(decode(&clean, task));
                    cands.push(cand);
                }
            }
            StepSpec::Flow { i, steps } => {
                let dt = 1.0 / steps as f64;
                let t = i as f64 / steps as f64;
                let v_hat = model.predict(z, t, cond);
                for s in 0..config.s {
                    let eps = step_noise(config.seed, view, i as u64, s as u64, dim);
                    let cand = flow_sde_step(z, t, dt, &v_hat, &eps)?;
                    let t_next = (i + 1) as f64 / steps as f64;
                    let v_s = model.predict(&cand, t_next, cond);
                    cleans.push(decode(&flow_clean_estimate(&cand, t_next, &v_s), task));
                    cands.push(cand);
                }
            }
        }
        Ok((cands, cleans))
    };

    let specs: Vec<StepSpec> = match config.backend {
        Backend::Ddpm => (1..=schedule.steps()).rev().map(StepSpec::Ddpm).collect(),
        Backend::Flow => (0..config.steps)
            .map(|i| StepSpec::Flow {
                i,
                steps: config.steps,
            })
            .collect(),
    };
    for spec in &specs {
        let (mut cands_a, cleans_a) = advance(spec, &za, &cond_a, task_a)?;
        let (mut cands_b, cleans_b) = advance(spec, &zb, &cond_b, task_b)?;
        let (mut best, mut best_r) = ((0, 0), f64::NEG_INFINITY);
        for sa in 0..config.s {
            for sb in 0..config.s {
                // symmetric: each view's pixels are reprojected into the
                // other, so the score sees both candidates' synthesized
                // content
                let r = 0.5
                    * (scorer.score(&cleans_a[sa], &cleans_b[sb], &task_a.pose, &task_b.pose)
                        + scorer.score(&cleans_b[sb], &cleans_a[sa], &task_b.pose, &task_a.pose));
                report.scorer_calls += 2;
                if r > best_r {
                    best_r = r;
                    best = (sa, sb);
                }
            }
        }
        report.selected_rewards.push(best_r);
        report.steps += 1;
        za = cands_a.swap_remove(best.0);
        zb = cands_b.swap_remove(best.1);
    }
    let to_frame = |z: Vec<f64>, task: &InpaintTask| {
        composite(
            task,
            decode_image(&ndarray::Array3::from_shape_vec((h, w, 3), z).unwrap()),
        )
    };
    Ok((to_frame(za, task_a), to_frame(zb, task_b), report))
}

/// Sequential multi-view completion: the first two views are inpainted
/// concurrently as a pair, every later view is guided against all prior
/// completions. A single task falls back to an unguided completion.
pub fn multiview_inpaint<D: Denoiser + ?Sized>(
    tasks: &[InpaintTask],
    model: &D,
    config: &GuidanceConfig,
    schedule: &DiffusionSchedule,
    scorer: &dyn ConsistencyScorer,
) -> Result<(Vec<Frame>, Vec<GuidanceReport>)> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("no inpainting tasks".into()));
    }
    if tasks.len() == 1 {
        let task = &tasks[0];
        task.validate()?;
        let cond = inpaint_condition(task);
        let dim = inpaint_data_dim(task.warped.width(), task.warped.height());
        let unguided = GuidanceConfig { s: 1, ..*config };
        let z_init = initial_noise(config.seed, task.view, dim);
        let (z, report) = guided_chain(
            model,
            &cond,
            z_init,
            &unguided,
            schedule,
            task.view,
            |_| 0.0,
        )?;
        let latent =
            ndarray::Array3::from_shape_vec((task.warped.height(), task.warped.width(), 3), z)
                .unwrap();
        return Ok((vec![composite(task, decode_image(&latent))], vec![report]));
    }
    let mut images = Vec::with_capacity(tasks.len());
    let mut reports = Vec::with_capacity(tasks.len());
    let (img_a, img_b, pair_report) =
        guided_sample_pair(&tasks[0], &tasks[1], model, config, schedule, scorer)?;
    let mut completed = vec![
        CompletedView {
            image: img_a.clone(),
            pose: tasks[0].pose,
        },
        CompletedView {
            image: img_b.clone(),
            pose: tasks[1].pose,
        },
    ];
    images.push(img_a);
    images.push(img_b);
    reports.push(pair_report.clone());
    reports.push(pair_report);
    for task in &tasks[2..] {
        let (img, report) = guided_sample(task, &completed, model, config, schedule, scorer)?;
        completed.push(CompletedView {
            image: img.clone(),
            pose: task.pose,
        });
        images.push(img);
        reports.push(report);
    }
    Ok((images, reports))
}
