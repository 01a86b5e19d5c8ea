//! Plain (unguided) reverse samplers: the ancestral DDPM update and an
//! Euler–Maruyama step of the variance-matched flow SDE, plus the keyed
//! noise streams shared with the guided sampler so candidate counts of one
//! degenerate to these chains bit-for-bit.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::denoiser::Denoiser;
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, stream};

/// Default number of flow-SDE integration steps.
pub const DEFAULT_FLOW_STEPS: usize = 50;

/// Standard-normal vector of the given length.
pub fn draw_standard(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Initial noise of a sampling run, keyed by (seed, view).
pub fn initial_noise(seed: u64, view: u64, dim: usize) -> Vec<f64> {
    let mut rng = derive_rng(seed, &[stream::INIT, view]);
    draw_standard(&mut rng, dim)
}

/// Per-step, per-candidate noise stream, keyed by (seed, view, step, candidate).
pub fn step_noise(seed: u64, view: u64, step: u64, candidate: u64, dim: usize) -> Vec<f64> {
    let mut rng = derive_rng(seed, &[stream::STEP, view, step, candidate]);
    draw_standard(&mut rng, dim)
}

/// One ancestral DDPM update given a precomputed noise prediction.
///
/// `mu = (z_t - (beta_t / sqrt(1 - abar_t)) * eps_hat) / sqrt(alpha_t)`,
/// then `z_{t-1} = mu + posterior_sigma_t * eps`; the noise term is omitted
/// at `t = 1`.
pub fn ddpm_step_from_eps_hat(
    z_t: &[f64],
    eps_hat: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if t < 1 || t > schedule.steps() {
        return Err(Error::InvalidArgument(format!(
            "step {t} outside 1..={}",
            schedule.steps()
        )));
    }
    if z_t.len() != eps_hat.len() || z_t.len() != eps.len() {
        return Err(Error::DimensionMismatch(
            "z_t, eps_hat and eps must share shape".into(),
        ));
    }
    let coef = schedule.beta(t) / schedule.noise_coef(t);
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let sigma = if t > 1 { schedule.posterior_sigma(t) } else { 0.0 };
    Ok(z_t
        .iter()
        .zip(eps_hat)
        .zip(eps)
        .map(|((z, eh), e)| (z - coef * eh) * inv_sqrt_alpha + sigma * e)
        .collect())
}

/// One ancestral DDPM update, querying the model for the noise prediction.
pub fn ddpm_step<D: Denoiser + ?Sized>(
    z_t: &[f64],
    model: &D,
    cond: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    let eps_hat = model.predict(z_t, t as f64 / schedule.steps() as f64, cond);
    ddpm_step_from_eps_hat(z_t, &eps_hat, t, eps, schedule)
}

/// Tweedie-style clean estimate at schedule index `t` (0..=T):
/// `(z - sqrt(1 - abar_t) * eps_hat) / sqrt(abar_t)`.
pub fn clean_estimate_ddpm(
    z: &[f64],
    t: usize,
    eps_hat: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if t > schedule.steps() {
        return Err(Error::InvalidArgument(format!(
            "step {t} outside 0..={}",
            schedule.steps()
        )));
    }
    if z.len() != eps_hat.len() {
        return Err(Error::DimensionMismatch(
            "z and eps_hat must share shape".into(),
        ));
    }
    if t == 0 {
        // already clean; avoids multiplying a possibly undefined prediction
        // by the zero noise coefficient
        return Ok(z.to_vec());
    }
    let (a, s) = (schedule.signal_coef(t), schedule.noise_coef(t));
    Ok(z.iter().zip(eps_hat).map(|(z, e)| (z - s * e) / a).collect())
}

/// Deterministic Euler step of the probability-flow ODE: `z + v_hat * dt`.
pub fn flow_velocity_step(z: &[f64], _t: f64, dt: f64, v_hat: &[f64]) -> Vec<f64> {
    z.iter().zip(v_hat).map(|(z, v)| z + v * dt).collect()
}

/// Noise estimate of the straight-path flow at time `t`: `z - t * v_hat`.
pub fn flow_noise_estimate(z: &[f64], t: f64, v_hat: &[f64]) -> Vec<f64> {
    z.iter().zip(v_hat).map(|(z, v)| z - t * v).collect()
}

/// Clean estimate of the straight-path flow at time `t`: `z + (1 - t) * v_hat`.
pub fn flow_clean_estimate(z: &[f64], t: f64, v_hat: &[f64]) -> Vec<f64> {
    z.iter().zip(v_hat).map(|(z, v)| z + (1.0 - t) * v).collect()
}

/// One Euler–Maruyama step of the variance-matched SDE with the same
/// marginals as the straight-path ODE (`t = 0` noise, `t = 1` data):
/// `z + v_hat*dt - (z - t*v_hat)*(1-t)*dt + sqrt(2*(1-t)^2*dt) * eps`.
pub fn flow_sde_step(z: &[f64], t: f64, dt: f64, v_hat: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")));
    }
    if z.len() != v_hat.len() || z.len() != eps.len() {
        return Err(Error::DimensionMismatch(
            "z, v_hat and eps must share shape".into(),
        ));
    }
    let diff = (2.0 * (1.0 - t) * (1.0 - t) * dt).sqrt();
    Ok(z.iter()
        .zip(v_hat)
        .zip(eps)
        .map(|((z, v), e)| z + v * dt - (z - t * v) * (1.0 - t) * dt + diff * e)
        .collect())
}

/// Full unguided DDPM reverse chain from a given initial state, drawing step
/// noises from the keyed streams (candidate index 0).
pub fn sample_ddpm_chain<D: Denoiser + ?Sized>(
    model: &D,
    cond: &[f64],
    z_init: Vec<f64>,
    schedule: &DiffusionSchedule,
    seed: u64,
    view: u64,
) -> Result<Vec<f64>> {
    let mut z = z_init;
    for t in (1..=schedule.steps()).rev() {
        let eps = step_noise(seed, view, t as u64, 0, z.len());
        z = ddpm_step(&z, model, cond, t, &eps, schedule)?;
    }
    Ok(z)
}

/// Unguided DDPM sample from keyed initial noise.
pub fn sample_ddpm<D: Denoiser + ?Sized>(
    model: &D,
    cond: &[f64],
    dim: usize,
    schedule: &DiffusionSchedule,
    seed: u64,
    view: u64,
) -> Result<Vec<f64>> {
    sample_ddpm_chain(model, cond, initial_noise(seed, view, dim), schedule, seed, view)
}

/// Full unguided flow-SDE chain from a given initial state.
pub fn sample_flow_chain<D: Denoiser + ?Sized>(
    model: &D,
    cond: &[f64],
    z_init: Vec<f64>,
    steps: usize,
    seed: u64,
    view: u64,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("flow chain needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = z_init;
    for i in 0..steps {
        let t = i as f64 / steps as f64;
        let v = model.predict(&z, t, cond);
        let eps = step_noise(seed, view, i as u64, 0, z.len());
        z = flow_sde_step(&z, t, dt, &v, &eps)?;
    }
    Ok(z)
}

/// Unguided flow-SDE sample from keyed initial noise.
pub fn sample_flow<D: Denoiser + ?Sized>(
    model: &D,
    cond: &[f64],
    dim: usize,
    steps: usize,
    seed: u64,
    view: u64,
) -> Result<Vec<f64>> {
    sample_flow_chain(model, cond, initial_noise(seed, view, dim), steps, seed, view)
}

/// Reference velocity field of the straight-path flow that carries N(0, 1)
/// at `t = 0` to N(mu1, s1^2) at `t = 1`. Closed-form marginals make it a
/// test oracle for the SDE/ODE equivalence checks.
pub fn gaussian_flow_velocity(mu1: f64, s1: f64) -> impl Fn(&[f64], f64, &[f64]) -> Vec<f64> {
    move |z: &[f64], t: f64, _cond: &[f64]| {
        let var = t * t * s1 * s1 + (1.0 - t) * (1.0 - t);
        z.iter()
            .map(|z| mu1 + (t * s1 * s1 - (1.0 - t)) * (z - t * mu1) / var)
            .collect()
    }
}

/// Analytic optimal noise predictor for data distributed as N(mu0, s0^2)
/// under the given schedule; the Bayes-optimal denoiser of the DDPM moment
/// oracle.
pub fn gaussian_ddpm_denoiser(
    mu0: f64,
    s0: f64,
    schedule: &DiffusionSchedule,
) -> impl Fn(&[f64], f64, &[f64]) -> Vec<f64> + '_ {
    let steps = schedule.steps() as f64;
    move |z: &[f64], t_norm: f64, _cond: &[f64]| {
        let t = (t_norm * steps).round() as usize;
        let abar = schedule.alpha_bar(t);
        let var = abar * s0 * s0 + 1.0 - abar;
        z.iter()
            .map(|z| {
                // E[z0 | z_t], then invert the forward map for eps
                let post = mu0 + abar.sqrt() * s0 * s0 * (z - abar.sqrt() * mu0) / var;
                (z - abar.sqrt() * post) / (1.0 - abar).sqrt()
            })
            .collect()
    }
}
