//! Plain and masked denoising losses, plus the forward noising process.
//!
//! Latents are handled as flat `f64` slices laid out with the channel axis
//! innermost, so a mask over latent cells expands over channels by index
//! division.

use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};

/// Forward process: `sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps`.
pub fn forward_noise(
    z0: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if z0.len() != eps.len() {
        return Err(Error::DimensionMismatch(format!(
            "z0 has {} elements, eps has {}",
            z0.len(),
            eps.len()
        )));
    }
    if t < 1 || t > schedule.steps() {
        return Err(Error::InvalidArgument(format!(
            "step {t} outside 1..={}",
            schedule.steps()
        )));
    }
    let (a, s) = (schedule.signal_coef(t), schedule.noise_coef(t));
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + s * e).collect())
}

/// Mean squared error over all elements.
pub fn diffusion_loss(eps: &[f64], eps_hat: &[f64]) -> Result<f64> {
    if eps.len() != eps_hat.len() {
        return Err(Error::DimensionMismatch(format!(
            "eps has {} elements, eps_hat has {}",
            eps.len(),
            eps_hat.len()
        )));
    }
    if eps.is_empty() {
        return Err(Error::EmptyInput("loss over empty tensors".into()));
    }
    let sum: f64 = eps
        .iter()
        .zip(eps_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / eps.len() as f64)
}

/// Squared error averaged over visible elements only:
/// `sum(m * (eps - eps_hat)^2) / (C * sum(m))`, and 0 for an all-zero mask.
///
/// `mask` has one entry per latent cell; each cell spans `channels`
/// consecutive elements of `eps`.
pub fn masked_diffusion_loss(
    eps: &[f64],
    eps_hat: &[f64],
    mask: &[u8],
    channels: usize,
) -> Result<f64> {
    if eps.len() != eps_hat.len() || eps.len() != mask.len() * channels {
        return Err(Error::DimensionMismatch(format!(
            "eps {} / eps_hat {} / mask {} x {channels} channels",
            eps.len(),
            eps_hat.len(),
            mask.len()
        )));
    }
    let visible: usize = mask.iter().map(|m| *m as usize).sum();
    if visible == 0 {
        return Ok(0.0);
    }
    let sum: f64 = eps
        .iter()
        .zip(eps_hat)
        .enumerate()
        .filter(|(i, _)| mask[i / channels] == 1)
        .map(|(_, (a, b))| (a - b) * (a - b))
        .sum();
    Ok(sum / (channels * visible) as f64)
}

/// Gradient of [`masked_diffusion_loss`] with respect to `eps_hat`.
pub fn masked_loss_grad(eps: &[f64], eps_hat: &[f64], mask: &[u8], channels: usize) -> Vec<f64> {
    let visible: usize = mask.iter().map(|m| *m as usize).sum();
    if visible == 0 {
        return vec![0.0; eps_hat.len()];
    }
    let norm = (channels * visible) as f64;
    eps.iter()
        .zip(eps_hat)
        .enumerate()
        .map(|(i, (e, eh))| {
            if mask[i / channels] == 1 {
                2.0 * (eh - e) / norm
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, stream};
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn forward_noise_endpoints() {
        let s = DiffusionSchedule::default();
        let z0 = vec![0.5, -0.25, 1.0];
        let eps = vec![1.0, -1.0, 0.5];
        // z0 = 0 returns the scaled noise
        let out = forward_noise(&[0.0; 3], 5, &eps, &s).unwrap();
        for (o, e) in out.iter().zip(&eps) {
            assert_abs_diff_eq!(*o, s.noise_coef(5) * e, epsilon = 1e-15);
        }
        // a step with abar == 1 would return z0; abar(1) is close, check the formula
        let out = forward_noise(&z0, 1, &[0.0; 3], &s).unwrap();
        for (o, z) in out.iter().zip(&z0) {
            assert_abs_diff_eq!(*o, s.signal_coef(1) * z, epsilon = 1e-15);
        }
    }

    #[test]
    fn forward_noise_rejects_bad_input() {
        let s = DiffusionSchedule::default();
        assert!(forward_noise(&[0.0], 1, &[0.0, 0.0], &s).is_err());
        assert!(forward_noise(&[0.0], 0, &[0.0], &s).is_err());
        assert!(forward_noise(&[0.0], 41, &[0.0], &s).is_err());
    }

    #[test]
    fn forward_noise_moments_monte_carlo() {
        // empirical mean/variance at fixed t vs the analytic marginal
        let s = DiffusionSchedule::default();
        let t = 20;
        let z0 = 0.7;
        let mut rng = derive_rng(99, &[stream::INIT]);
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let z = forward_noise(&[z0], t, &[e], &s).unwrap()[0];
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let expect_mean = s.signal_coef(t) * z0;
        let expect_var = 1.0 - s.alpha_bar(t);
        let se_mean = expect_var.sqrt() / (n as f64).sqrt();
        assert!((mean - expect_mean).abs() < 3.0 * se_mean);
        let se_var = expect_var * (2.0 / n as f64).sqrt();
        assert!((var - expect_var).abs() < 3.0 * se_var);
    }

    #[test]
    fn plain_loss_hand_case() {
        assert_eq!(diffusion_loss(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert_eq!(diffusion_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(diffusion_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn masked_loss_hand_case() {
        // two cells of one channel each, second masked out
        assert_eq!(
            masked_diffusion_loss(&[1.0, 2.0], &[0.0, 0.0], &[1, 0], 1).unwrap(),
            1.0
        );
        assert_eq!(
            masked_diffusion_loss(&[1.0, 2.0], &[0.0, 0.0], &[0, 0], 1).unwrap(),
            0.0
        );
    }

    #[test]
    fn all_ones_mask_equals_plain_loss() {
        let eps = vec![0.3, -0.8, 1.2, 0.05, -2.0, 0.6];
        let eps_hat = vec![0.1, 0.0, 1.0, -0.4, -1.5, 0.9];
        let masked = masked_diffusion_loss(&eps, &eps_hat, &[1, 1], 3).unwrap();
        let plain = diffusion_loss(&eps, &eps_hat).unwrap();
        assert_abs_diff_eq!(masked, plain, epsilon = 1e-15);
    }

    #[test]
    fn grad_matches_finite_differences() {
        let eps = vec![0.3, -0.8, 1.2, 0.05];
        let mut eps_hat = vec![0.1, 0.0, 1.0, -0.4];
        let mask = [1u8, 0];
        let grad = masked_loss_grad(&eps, &eps_hat, &mask, 2);
        let h = 1e-6;
        for i in 0..eps_hat.len() {
            let orig = eps_hat[i];
            eps_hat[i] = orig + h;
            let up = masked_diffusion_loss(&eps, &eps_hat, &mask, 2).unwrap();
            eps_hat[i] = orig - h;
            let down = masked_diffusion_loss(&eps, &eps_hat, &mask, 2).unwrap();
            eps_hat[i] = orig;
            assert_abs_diff_eq!(grad[i], (up - down) / (2.0 * h), epsilon = 1e-6);
        }
        // masked-out coordinates have exactly zero gradient
        assert_eq!(grad[2], 0.0);
        assert_eq!(grad[3], 0.0);
    }
}
