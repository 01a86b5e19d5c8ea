//! Low-rank adaptation of a dense linear map.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Low-rank residual `alpha * theta_b * theta_a` applied on top of a frozen
/// base map. `theta_b` starts at zero so a freshly adapted model matches the
/// base model exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraParams {
    pub theta_b: Array2<f64>,
    pub theta_a: Array2<f64>,
    pub alpha: f64,
    pub rank: usize,
}

impl LoraParams {
    /// Creates parameters for a `d x k` base map: `theta_b` is `d x r` zeros,
    /// `theta_a` is `r x k` with small random entries. Rank is capped at
    /// `min(d, k) / 2` to keep the adaptation genuinely low-rank.
    pub fn new(d: usize, k: usize, rank: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if rank == 0 || rank > d.min(k) / 2 {
            return Err(Error::InvalidArgument(format!(
                "rank {rank} outside 1..={} for a {d}x{k} map",
                d.min(k) / 2
            )));
        }
        let scale = 1.0 / (k as f64).sqrt();
        let theta_a =
            Array2::from_shape_fn((rank, k), |_| scale * crate::rng::normal(rng));
        Ok(LoraParams {
            theta_b: Array2::zeros((d, rank)),
            theta_a,
            alpha,
            rank,
        })
    }

    /// Materializes the adapted weight `theta_0 + alpha * theta_b * theta_a`.
    pub fn materialize(&self, theta_0: &Array2<f64>) -> Result<Array2<f64>> {
        let delta = self.theta_b.dot(&self.theta_a);
        if delta.dim() != theta_0.dim() {
            return Err(Error::DimensionMismatch(format!(
                "base {:?} vs low-rank product {:?}",
                theta_0.dim(),
                delta.dim()
            )));
        }
        Ok(theta_0 + &(self.alpha * delta))
    }
}

/// Applies the adapted map without materializing it:
/// `theta_0 * x + alpha * theta_b * (theta_a * x)`.
pub fn lora_forward(
    input: &Array1<f64>,
    theta_0: &Array2<f64>,
    lora: &LoraParams,
) -> Result<Array1<f64>> {
    let (d, k) = theta_0.dim();
    if input.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "input length {} vs base map {d}x{k}",
            input.len()
        )));
    }
    if lora.theta_b.dim() != (d, lora.rank) || lora.theta_a.dim() != (lora.rank, k) {
        return Err(Error::DimensionMismatch(format!(
            "adapter shapes {:?}/{:?} vs base {d}x{k} rank {}",
            lora.theta_b.dim(),
            lora.theta_a.dim(),
            lora.rank
        )));
    }
    let base = theta_0.dot(input);
    let low = lora.theta_b.dot(&lora.theta_a.dot(input));
    Ok(base + lora.alpha * low)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, stream};
    use ndarray::arr2;

    fn rng() -> ChaCha8Rng {
        derive_rng(7, &[stream::MODEL_INIT])
    }

    #[test]
    fn zero_b_matches_base_bitwise() {
        let mut r = rng();
        let theta_0 = Array2::from_shape_fn((6, 8), |_| crate::rng::normal(&mut r));
        let lora = LoraParams::new(6, 8, 3, 1.0, &mut r).unwrap();
        let x = Array1::from_shape_fn(8, |_| crate::rng::normal(&mut r));
        let adapted = lora_forward(&x, &theta_0, &lora).unwrap();
        let base = theta_0.dot(&x);
        assert_eq!(adapted, base);
    }

    #[test]
    fn alpha_zero_matches_base_bitwise() {
        let mut r = rng();
        let theta_0 = Array2::from_shape_fn((6, 8), |_| crate::rng::normal(&mut r));
        let mut lora = LoraParams::new(6, 8, 3, 0.0, &mut r).unwrap();
        // nonzero theta_b but alpha = 0
        lora.theta_b = Array2::from_shape_fn((6, 3), |_| crate::rng::normal(&mut r));
        let x = Array1::from_shape_fn(8, |_| crate::rng::normal(&mut r));
        let adapted = lora_forward(&x, &theta_0, &lora).unwrap();
        assert_eq!(adapted, theta_0.dot(&x));
    }

    #[test]
    fn hand_case_2x2() {
        let theta_0 = Array2::eye(2);
        let lora = LoraParams {
            theta_b: arr2(&[[1.0], [0.0]]),
            theta_a: arr2(&[[0.0, 1.0]]),
            alpha: 1.0,
            rank: 1,
        };
        let x = Array1::from_vec(vec![3.0, 4.0]);
        let out = lora_forward(&x, &theta_0, &lora).unwrap();
        assert_eq!(out.to_vec(), vec![7.0, 4.0]);
    }

    #[test]
    fn materialized_equivalence() {
        let mut r = rng();
        let theta_0 = Array2::from_shape_fn((10, 12), |_| crate::rng::normal(&mut r));
        let mut lora = LoraParams::new(10, 12, 5, 0.7, &mut r).unwrap();
        lora.theta_b = Array2::from_shape_fn((10, 5), |_| crate::rng::normal(&mut r));
        let x = Array1::from_shape_fn(12, |_| crate::rng::normal(&mut r));
        let fused = lora.materialize(&theta_0).unwrap().dot(&x);
        let factored = lora_forward(&x, &theta_0, &lora).unwrap();
        for (a, b) in fused.iter().zip(factored.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_cap_enforced() {
        let mut r = rng();
        assert!(LoraParams::new(6, 8, 4, 1.0, &mut r).is_err());
        assert!(LoraParams::new(6, 8, 0, 1.0, &mut r).is_err());
        assert!(LoraParams::new(6, 8, 3, 1.0, &mut r).is_ok());
    }
}
