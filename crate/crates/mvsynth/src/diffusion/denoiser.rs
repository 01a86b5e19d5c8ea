//! Small conditional denoiser: two tanh hidden layers over the concatenated
//! [noisy latent, sinusoidal time embedding, condition vector], with a
//! low-rank-adapted linear output head. Only the adapter trains.

use std::fs;
use std::io::Read as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::lora::{lora_forward, LoraParams};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, stream};

/// Dimension of the sinusoidal time embedding.
pub const TIME_EMB_DIM: usize = 16;
/// Checkpoint file magic.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RAVM";
const CHECKPOINT_VERSION: u32 = 1;

/// Anything that predicts a target (noise or velocity) from a noisy latent,
/// a normalized time in [0, 1], and a condition vector.
pub trait Denoiser {
    fn predict(&self, z: &[f64], t: f64, cond: &[f64]) -> Vec<f64>;
}

impl<F> Denoiser for F
where
    F: Fn(&[f64], f64, &[f64]) -> Vec<f64>,
{
    fn predict(&self, z: &[f64], t: f64, cond: &[f64]) -> Vec<f64> {
        self(z, t, cond)
    }
}

/// Sinusoidal embedding of a normalized time value.
pub fn time_embedding(t: f64) -> [f64; TIME_EMB_DIM] {
    let mut emb = [0.0; TIME_EMB_DIM];
    for i in 0..TIME_EMB_DIM / 2 {
        let freq = std::f64::consts::PI * (1 << i) as f64;
        emb[2 * i] = (freq * t).sin();
        emb[2 * i + 1] = (freq * t).cos();
    }
    emb
}

/// Shape and adapter settings of a [`ToyDenoiser`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToyDenoiserConfig {
    pub data_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub rank: usize,
    pub alpha: f64,
}

impl ToyDenoiserConfig {
    pub fn new(data_dim: usize, cond_dim: usize) -> Self {
        ToyDenoiserConfig {
            data_dim,
            cond_dim,
            hidden: 256,
            rank: 4,
            alpha: 1.0,
        }
    }

    fn input_dim(&self) -> usize {
        self.data_dim + TIME_EMB_DIM + self.cond_dim
    }
}

/// The toy network. Base weights are frozen after initialization; training
/// touches only `lora`.
#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    pub config: ToyDenoiserConfig,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub theta_0: Array2<f64>,
    pub lora: LoraParams,
}

impl ToyDenoiser {
    /// Random base weights (scaled by fan-in), zero-initialized adapter.
    pub fn new(config: ToyDenoiserConfig, seed: u64) -> Result<Self> {
        if config.data_dim == 0 || config.hidden == 0 {
            return Err(Error::InvalidArgument(
                "denoiser dimensions must be positive".into(),
            ));
        }
        let mut rng = derive_rng(seed, &[stream::MODEL_INIT]);
        let input_dim = config.input_dim();
        let mut init = |rows: usize, cols: usize| {
            let scale = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| {
                scale * crate::rng::normal(&mut rng)
            })
        };
        let w1 = init(config.hidden, input_dim);
        let w2 = init(config.hidden, config.hidden);
        let theta_0 = init(config.data_dim, config.hidden);
        let lora = LoraParams::new(
            config.data_dim,
            config.hidden,
            config.rank,
            config.alpha,
            &mut rng,
        )?;
        Ok(ToyDenoiser {
            config,
            w1,
            b1: Array1::zeros(config.hidden),
            w2,
            b2: Array1::zeros(config.hidden),
            theta_0,
            lora,
        })
    }

    fn assemble_input(&self, z: &[f64], t: f64, cond: &[f64]) -> Array1<f64> {
        debug_assert_eq!(z.len(), self.config.data_dim);
        debug_assert_eq!(cond.len(), self.config.cond_dim);
        let mut x = Vec::with_capacity(self.config.input_dim());
        x.extend_from_slice(z);
        x.extend_from_slice(&time_embedding(t));
        x.extend_from_slice(cond);
        Array1::from_vec(x)
    }

    /// Forward pass that also returns the last hidden activation, which is
    /// everything the adapter's analytic gradients need.
    pub fn forward_with_hidden(&self, z: &[f64], t: f64, cond: &[f64]) -> (Vec<f64>, Array1<f64>) {
        let x = self.assemble_input(z, t, cond);
        let h1 = (self.w1.dot(&x) + &self.b1).mapv(f64::tanh);
        let h2 = (self.w2.dot(&h1) + &self.b2).mapv(f64::tanh);
        let out = lora_forward(&h2, &self.theta_0, &self.lora)
            .expect("internal shapes are consistent");
        (out.to_vec(), h2)
    }

    /// Output of the frozen base network (adapter ignored).
    pub fn base_predict(&self, z: &[f64], t: f64, cond: &[f64]) -> Vec<f64> {
        let x = self.assemble_input(z, t, cond);
        let h1 = (self.w1.dot(&x) + &self.b1).mapv(f64::tanh);
        let h2 = (self.w2.dot(&h1) + &self.b2).mapv(f64::tanh);
        self.theta_0.dot(&h2).to_vec()
    }

    /// Saves all parameters (base and adapter) as little-endian f32 blocks.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for dim in [
            self.config.data_dim,
            self.config.cond_dim,
            self.config.hidden,
            self.config.rank,
        ] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.config.alpha as f32).to_le_bytes());
        let blocks: [&[f64]; 7] = [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
            self.theta_0.as_slice().unwrap(),
            self.lora.theta_b.as_slice().unwrap(),
            self.lora.theta_a.as_slice().unwrap(),
        ];
        for block in blocks {
            for v in block {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::BadFormat {
            path: path.into(),
            reason: reason.into(),
        };
        if bytes.len() < 28 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing RAVM magic"));
        }
        let mut off = 4;
        let mut read_u32 = |bytes: &[u8]| -> u32 {
            let v = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
            v
        };
        let version = read_u32(&bytes);
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let data_dim = read_u32(&bytes) as usize;
        let cond_dim = read_u32(&bytes) as usize;
        let hidden = read_u32(&bytes) as usize;
        let rank = read_u32(&bytes) as usize;
        let alpha = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
        off += 4;
        let config = ToyDenoiserConfig {
            data_dim,
            cond_dim,
            hidden,
            rank,
            alpha,
        };
        let input_dim = config.input_dim();
        let counts = [
            hidden * input_dim,
            hidden,
            hidden * hidden,
            hidden,
            data_dim * hidden,
            data_dim * rank,
            rank * hidden,
        ];
        let total: usize = counts.iter().sum();
        if bytes.len() != off + 4 * total {
            return Err(bad("parameter payload has the wrong length"));
        }
        let mut read_block = |count: usize| -> Vec<f64> {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                v.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
                off += 4;
            }
            v
        };
        let w1 = Array2::from_shape_vec((hidden, input_dim), read_block(counts[0])).unwrap();
        let b1 = Array1::from_vec(read_block(counts[1]));
        let w2 = Array2::from_shape_vec((hidden, hidden), read_block(counts[2])).unwrap();
        let b2 = Array1::from_vec(read_block(counts[3]));
        let theta_0 = Array2::from_shape_vec((data_dim, hidden), read_block(counts[4])).unwrap();
        let theta_b = Array2::from_shape_vec((data_dim, rank), read_block(counts[5])).unwrap();
        let theta_a = Array2::from_shape_vec((rank, hidden), read_block(counts[6])).unwrap();
        Ok(ToyDenoiser {
            config,
            w1,
            b1,
            w2,
            b2,
            theta_0,
            lora: LoraParams {
                theta_b,
                theta_a,
                alpha,
                rank,
            },
        })
    }
}

impl Denoiser for ToyDenoiser {
    fn predict(&self, z: &[f64], t: f64, cond: &[f64]) -> Vec<f64> {
        self.forward_with_hidden(z, t, cond).0
    }
}
