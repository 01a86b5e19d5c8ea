//! Variance-preserving noise schedule (DDPM convention).

use crate::error::{Error, Result};

/// Default number of reverse-process steps.
pub const DEFAULT_STEPS: usize = 40;
/// Default linear-beta endpoints.
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

/// Per-step coefficients of a variance-preserving diffusion.
///
/// Steps are 1-indexed: `beta(t)` and `alpha(t)` accept `1..=T`, while the
/// cumulative product `alpha_bar(t)` accepts `0..=T` with `alpha_bar(0) = 1`.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    /// Builds a schedule from explicit betas (one per step, each in (0, 1)).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::EmptyInput("schedule needs at least one step".into()));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidArgument(
                "betas must lie strictly in (0, 1)".into(),
            ));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(DiffusionSchedule { betas, alpha_bars })
    }

    /// Linear beta ramp over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::EmptyInput("schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        assert!((1..=self.steps()).contains(&t), "step {t} out of range");
        self.betas[t - 1]
    }

    /// `alpha_t = 1 - beta_t` for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// Cumulative product for `t` in `0..=T`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.steps(), "step {t} out of range");
        self.alpha_bars[t]
    }

    /// Signal coefficient `sqrt(alpha_bar_t)` of the forward marginal.
    pub fn signal_coef(&self, t: usize) -> f64 {
        self.alpha_bar(t).sqrt()
    }

    /// Noise coefficient `sqrt(1 - alpha_bar_t)` of the forward marginal.
    pub fn noise_coef(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// Posterior noise scale of the ancestral reverse step at `t`.
    pub fn posterior_sigma(&self, t: usize) -> f64 {
        let var = self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t));
        var.sqrt()
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_schedule_shape() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.steps(), 40);
        assert_abs_diff_eq!(s.beta(1), 1e-4);
        assert_abs_diff_eq!(s.beta(40), 2e-2);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = DiffusionSchedule::default();
        for t in 1..=s.steps() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn variance_preserving_per_step() {
        let s = DiffusionSchedule::default();
        for t in 1..=s.steps() {
            let signal_sq = s.signal_coef(t).powi(2);
            let noise_sq = s.noise_coef(t).powi(2);
            assert_abs_diff_eq!(signal_sq + noise_sq, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(DiffusionSchedule::from_betas(vec![]).is_err());
        assert!(DiffusionSchedule::from_betas(vec![0.0]).is_err());
        assert!(DiffusionSchedule::from_betas(vec![1.0]).is_err());
        assert!(DiffusionSchedule::linear(0, 1e-4, 2e-2).is_err());
    }

    #[test]
    fn posterior_sigma_matches_formula() {
        let s = DiffusionSchedule::default();
        let t = 7;
        let expect =
            (s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t))).sqrt();
        assert_eq!(s.posterior_sigma(t), expect);
    }
}
