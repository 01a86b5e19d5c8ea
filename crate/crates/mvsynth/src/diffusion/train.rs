//! Adapter-only training loop: decoupled-weight-decay adaptive-moment
//! updates applied to the low-rank parameters while the base weights stay
//! frozen.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::denoiser::ToyDenoiser;
use super::loss::{forward_noise, masked_diffusion_loss, masked_loss_grad};
use super::schedule::DiffusionSchedule;
use crate::codec::encode_video;
use crate::error::{Error, Result};
use crate::geometry::{CameraType, TrajectoryKind};
use crate::latent_mask::{downsample_mask, DownsampleAnchor};
use crate::rng::{derive_rng, stream};
use crate::warp::{CameraLabel, TrainingSet};

/// Default number of adapter training steps.
pub const DEFAULT_TRAIN_STEPS: usize = 400;
/// Default learning rate.
pub const DEFAULT_LR: f64 = 1e-4;
/// Default decoupled weight decay.
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-3;

/// What the network is asked to regress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainObjective {
    /// Predict the forward-process noise at a discrete schedule step.
    #[default]
    Noise,
    /// Predict the straight-line velocity of a noise-to-data interpolation.
    Velocity,
}

/// Training hyperparameters; serialized alongside checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub objective: TrainObjective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: DEFAULT_TRAIN_STEPS,
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            seed: 0,
            objective: TrainObjective::Noise,
        }
    }
}

/// A training sample lowered to flat latent space: the target latent video,
/// its latent-grid visibility mask (one entry per cell), and the condition
/// vector already assembled.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub latent: Vec<f64>,
    pub mask: Vec<u8>,
    pub cond: Vec<f64>,
}

/// Encodes a training set into [`PreparedSample`]s.
///
/// The condition is the flattened first-frame latent; dynamic-mode sets
/// additionally append a six-way one-hot camera label (all zeros for the
/// original video).
pub fn prepare_training_samples(set: &TrainingSet) -> Result<Vec<PreparedSample>> {
    if set.samples.is_empty() {
        return Err(Error::EmptyInput("training set has no samples".into()));
    }
    let dynamic = set.mode == TrajectoryKind::Dynamic;
    set.samples
        .iter()
        .map(|sample| {
            let latent = encode_video(&sample.video)?;
            let lmask = downsample_mask(&sample.mask_video, DownsampleAnchor::TopLeft)?;
            let (_, h, w, _) = latent.dim();
            let mut cond: Vec<f64> = latent
                .as_slice()
                .expect("standard layout")
                .iter()
                .take(h * w * 3)
                .copied()
                .collect();
            if dynamic {
                let mut one_hot = [0.0; CameraType::ALL.len()];
                if let CameraLabel::Warped(ct) = sample.camera_label {
                    one_hot[ct.index()] = 1.0;
                }
                cond.extend_from_slice(&one_hot);
            }
            Ok(PreparedSample {
                latent: latent.as_slice().unwrap().to_vec(),
                mask: lmask.values().to_vec(),
                cond,
            })
        })
        .collect()
}

/// Adaptive-moment optimizer with decoupled weight decay, holding state for
/// the two adapter matrices only.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    m_b: Array2<f64>,
    v_b: Array2<f64>,
    m_a: Array2<f64>,
    v_a: Array2<f64>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, b_shape: (usize, usize), a_shape: (usize, usize)) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_b: Array2::zeros(b_shape),
            v_b: Array2::zeros(b_shape),
            m_a: Array2::zeros(a_shape),
            v_a: Array2::zeros(a_shape),
        }
    }

    pub fn for_model(model: &ToyDenoiser, lr: f64, weight_decay: f64) -> Self {
        Self::new(
            lr,
            weight_decay,
            model.lora.theta_b.dim(),
            model.lora.theta_a.dim(),
        )
    }

    /// One decoupled update of both adapter matrices.
    pub fn step(
        &mut self,
        theta_b: &mut Array2<f64>,
        theta_a: &mut Array2<f64>,
        grad_b: &Array2<f64>,
        grad_a: &Array2<f64>,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let update =
            |theta: &mut Array2<f64>, g: &Array2<f64>, m: &mut Array2<f64>, v: &mut Array2<f64>| {
                *m = &*m * self.beta1 + g * (1.0 - self.beta1);
                *v = &*v * self.beta2 + &g.mapv(|x| x * x) * (1.0 - self.beta2);
                for ((t, m), v) in theta.iter_mut().zip(m.iter()).zip(v.iter()) {
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    *t -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *t);
                }
            };
        update(theta_b, grad_b, &mut self.m_b, &mut self.v_b);
        update(theta_a, grad_a, &mut self.m_a, &mut self.v_a);
    }
}

/// Analytic adapter gradients from the output-layer gradient `g` and the
/// last hidden activation `h`.
fn adapter_grads(
    model: &ToyDenoiser,
    g: &Array1<f64>,
    h: &Array1<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let alpha = model.lora.alpha;
    let ah = model.lora.theta_a.dot(h);
    // d out / d theta_b: outer(g, A h); d out / d theta_a: outer(B^T g, h)
    let d = g.len();
    let r = model.lora.rank;
    let k = h.len();
    let mut grad_b = Array2::zeros((d, r));
    for i in 0..d {
        for j in 0..r {
            grad_b[(i, j)] = alpha * g[i] * ah[j];
        }
    }
    let btg = model.lora.theta_b.t().dot(g);
    let mut grad_a = Array2::zeros((r, k));
    for i in 0..r {
        for j in 0..k {
            grad_a[(i, j)] = alpha * btg[i] * h[j];
        }
    }
    (grad_b, grad_a)
}

/// One masked-loss training step; updates only the adapter and returns the
/// loss value.
pub fn train_step(
    model: &mut ToyDenoiser,
    sample: &PreparedSample,
    schedule: &DiffusionSchedule,
    objective: TrainObjective,
    rng: &mut ChaCha8Rng,
    opt: &mut AdamW,
) -> Result<f64> {
    let dim = sample.latent.len();
    let eps: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let (z_t, t_norm, target) = match objective {
        TrainObjective::Noise => {
            let t = rng.random_range(1..=schedule.steps());
            let z_t = forward_noise(&sample.latent, t, &eps, schedule)?;
            (z_t, t as f64 / schedule.steps() as f64, eps)
        }
        TrainObjective::Velocity => {
            let t: f64 = rng.random_range(0.0..1.0);
            let z_t: Vec<f64> = sample
                .latent
                .iter()
                .zip(&eps)
                .map(|(z1, e)| t * z1 + (1.0 - t) * e)
                .collect();
            let v: Vec<f64> = sample
                .latent
                .iter()
                .zip(&eps)
                .map(|(z1, e)| z1 - e)
                .collect();
            (z_t, t, v)
        }
    };
    let (out, h2) = model.forward_with_hidden(&z_t, t_norm, &sample.cond);
    let loss = masked_diffusion_loss(&target, &out, &sample.mask, 3)?;
    let g = Array1::from_vec(masked_loss_grad(&target, &out, &sample.mask, 3));
    let (grad_b, grad_a) = adapter_grads(model, &g, &h2);
    opt.step(
        &mut model.lora.theta_b,
        &mut model.lora.theta_a,
        &grad_b,
        &grad_a,
    );
    Ok(loss)
}

/// Runs the configured number of training steps, sampling uniformly over the
/// prepared set. Returns the per-step losses.
pub fn train(
    model: &mut ToyDenoiser,
    samples: &[PreparedSample],
    schedule: &DiffusionSchedule,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let mut rng = derive_rng(config.seed, &[stream::TRAIN]);
    let mut opt = AdamW::for_model(model, config.lr, config.weight_decay);
    let mut losses = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let idx = rng.random_range(0..samples.len());
        losses.push(train_step(
            model,
            &samples[idx],
            schedule,
            config.objective,
            &mut rng,
            &mut opt,
        )?);
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::denoiser::ToyDenoiserConfig;

    fn toy_sample(dim_cells: usize, cond_dim: usize, seed: u64) -> PreparedSample {
        let mut rng = derive_rng(seed, &[stream::DATASET]);
        PreparedSample {
            latent: (0..dim_cells * 3).map(|_| StandardNormal.sample(&mut rng)).collect(),
            mask: (0..dim_cells).map(|i| (i % 3 != 0) as u8).collect(),
            cond: (0..cond_dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
        }
    }

    fn toy_model(seed: u64) -> ToyDenoiser {
        let mut cfg = ToyDenoiserConfig::new(12, 5);
        cfg.hidden = 24;
        cfg.rank = 2;
        ToyDenoiser::new(cfg, seed).unwrap()
    }

    #[test]
    fn base_weights_untouched_by_training() {
        let mut model = toy_model(1);
        let frozen = (model.w1.clone(), model.w2.clone(), model.theta_0.clone());
        let samples = vec![toy_sample(4, 5, 2), toy_sample(4, 5, 3)];
        let schedule = DiffusionSchedule::default();
        train(&mut model, &samples, &schedule, &TrainConfig::default()).unwrap();
        assert_eq!(model.w1, frozen.0);
        assert_eq!(model.w2, frozen.1);
        assert_eq!(model.theta_0, frozen.2);
        // and the adapter actually moved
        assert!(model.lora.theta_b.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn training_reduces_loss_on_toy_set() {
        let mut model = toy_model(4);
        let samples = vec![toy_sample(4, 5, 7), toy_sample(4, 5, 8)];
        let schedule = DiffusionSchedule::default();
        let config = TrainConfig {
            steps: 2000,
            lr: 3e-3,
            ..TrainConfig::default()
        };
        let losses = train(&mut model, &samples, &schedule, &config).unwrap();
        let head: f64 = losses[..200].iter().sum::<f64>() / 200.0;
        let tail: f64 = losses[losses.len() - 200..].iter().sum::<f64>() / 200.0;
        assert!(
            tail < head,
            "mean loss should fall: head {head:.4} tail {tail:.4}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let schedule = DiffusionSchedule::default();
        let samples = vec![toy_sample(4, 5, 7)];
        let mut run = || {
            let mut model = toy_model(4);
            train(&mut model, &samples, &schedule, &TrainConfig::default()).unwrap();
            (model.lora.theta_b.clone(), model.lora.theta_a.clone())
        };
        let (b1, a1) = run();
        let (b2, a2) = run();
        assert_eq!(b1, b2);
        assert_eq!(a1, a2);
    }

    #[test]
    fn adapter_grads_match_finite_differences() {
        let mut model = toy_model(9);
        // nonzero theta_b so the theta_a gradient path is exercised
        model
            .lora
            .theta_b
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = 0.05 * ((i % 7) as f64 - 3.0));
        let sample = toy_sample(4, 5, 10);
        let schedule = DiffusionSchedule::default();
        let t = 13;
        let mut rng = derive_rng(0, &[stream::TRAIN]);
        let eps: Vec<f64> = (0..sample.latent.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let z_t = forward_noise(&sample.latent, t, &eps, &schedule).unwrap();
        let t_norm = t as f64 / schedule.steps() as f64;
        let loss_of = |m: &ToyDenoiser| {
            let out = m.forward_with_hidden(&z_t, t_norm, &sample.cond).0;
            masked_diffusion_loss(&eps, &out, &sample.mask, 3).unwrap()
        };
        let (out, h2) = model.forward_with_hidden(&z_t, t_norm, &sample.cond);
        let g = Array1::from_vec(masked_loss_grad(&eps, &out, &sample.mask, 3));
        let (grad_b, grad_a) = adapter_grads(&model, &g, &h2);
        let h = 1e-5;
        let mut rng = derive_rng(1, &[stream::TRAIN]);
        for _ in 0..32 {
            let i = rng.random_range(0..grad_b.nrows());
            let j = rng.random_range(0..grad_b.ncols());
            let mut pert = model.clone();
            pert.lora.theta_b[(i, j)] += h;
            let up = loss_of(&pert);
            pert.lora.theta_b[(i, j)] -= 2.0 * h;
            let down = loss_of(&pert);
            let fd = (up - down) / (2.0 * h);
            let analytic = grad_b[(i, j)];
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (fd - analytic).abs() / denom < 1e-4,
                "theta_b grad mismatch at ({i},{j}): fd {fd} vs {analytic}"
            );
        }
        for _ in 0..32 {
            let i = rng.random_range(0..grad_a.nrows());
            let j = rng.random_range(0..grad_a.ncols());
            let mut pert = model.clone();
            pert.lora.theta_a[(i, j)] += h;
            let up = loss_of(&pert);
            pert.lora.theta_a[(i, j)] -= 2.0 * h;
            let down = loss_of(&pert);
            let fd = (up - down) / (2.0 * h);
            let analytic = grad_a[(i, j)];
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (fd - analytic).abs() / denom < 1e-4,
                "theta_a grad mismatch at ({i},{j}): fd {fd} vs {analytic}"
            );
        }
    }
}
