//! Downsampling pixel-space visibility masks to the compressed latent grid.
//!
//! The latent grid of the assumed spatio-temporal codec is 8x smaller
//! spatially and keeps the first frame intact, then collapses every
//! subsequent group of four frames with an element-wise logical AND:
//! `H x W x N -> (H/8) x (W/8) x (1 + (N-1)/4)`.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::VisibilityMask;

/// Spatial reduction factor of the latent grid.
pub const SPATIAL_FACTOR: usize = 8;
/// Temporal group size collapsed per latent frame after the first.
pub const TEMPORAL_FACTOR: usize = 4;

/// Which pixel of each 8x8 block the nearest-neighbor reduction samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleAnchor {
    #[default]
    TopLeft,
    Center,
}

impl DownsampleAnchor {
    fn offset(&self) -> usize {
        match self {
            DownsampleAnchor::TopLeft => 0,
            DownsampleAnchor::Center => SPATIAL_FACTOR / 2 - 1,
        }
    }
}

/// Binary mask on the latent grid, shape `n_lat x h x w`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentMask {
    n: usize,
    h: usize,
    w: usize,
    values: Vec<u8>,
}

impl LatentMask {
    pub fn from_values(n: usize, h: usize, w: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != n * h * w {
            return Err(Error::ShapeViolation(format!(
                "latent mask expected {} values, got {}",
                n * h * w,
                values.len()
            )));
        }
        if values.iter().any(|v| *v > 1) {
            return Err(Error::InvalidArgument("latent mask values must be 0 or 1".into()));
        }
        Ok(LatentMask { n, h, w, values })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn get(&self, frame: usize, row: usize, col: usize) -> u8 {
        self.values[(frame * self.h + row) * self.w + col]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    /// Writes the binary grid format: header `lmask <n> <h> <w>\n` then one
    /// byte per cell.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + self.values.len());
        out.extend_from_slice(format!("lmask {} {} {}\n", self.n, self.h, self.w).as_bytes());
        out.extend_from_slice(&self.values);
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let header_end = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::BadFormat {
                path: path.into(),
                reason: "missing header line".into(),
            })?;
        let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| Error::BadFormat {
            path: path.into(),
            reason: "non-ascii header".into(),
        })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "lmask" {
            return Err(Error::BadFormat {
                path: path.into(),
                reason: format!("bad header `{header}`"),
            });
        }
        let dims: Vec<usize> = parts[1..]
            .iter()
            .map(|p| p.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::BadFormat {
                path: path.into(),
                reason: "bad dimensions".into(),
            })?;
        LatentMask::from_values(dims[0], dims[1], dims[2], bytes[header_end + 1..].to_vec())
    }
}

/// Nearest-neighbor 8x spatial reduction of one mask frame.
///
/// With the default anchor, `output(i, j) = input(8i, 8j)`.
pub fn spatial_downsample_nearest(
    mask: &VisibilityMask,
    anchor: DownsampleAnchor,
) -> Result<Vec<u8>> {
    if mask.width() % SPATIAL_FACTOR != 0 || mask.height() % SPATIAL_FACTOR != 0 {
        return Err(Error::ShapeViolation(format!(
            "mask {}x{} not divisible by {SPATIAL_FACTOR}",
            mask.width(),
            mask.height()
        )));
    }
    let (h, w) = (
        mask.height() / SPATIAL_FACTOR,
        mask.width() / SPATIAL_FACTOR,
    );
    let off = anchor.offset();
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            out.push(mask.get(i * SPATIAL_FACTOR + off, j * SPATIAL_FACTOR + off));
        }
    }
    Ok(out)
}

/// Reduces a mask video to the latent grid.
///
/// Spatially each frame is reduced 8x with nearest-neighbor sampling;
/// temporally the first frame is kept intact and each following group of
/// four frames is collapsed with a logical AND, so a latent cell is visible
/// only if it is visible across its whole group.
pub fn downsample_mask(
    mask_video: &[VisibilityMask],
    anchor: DownsampleAnchor,
) -> Result<LatentMask> {
    let n_px = mask_video.len();
    if n_px == 0 || (n_px - 1) % TEMPORAL_FACTOR != 0 {
        return Err(Error::ShapeViolation(format!(
            "mask video length {n_px} must be 1 mod {TEMPORAL_FACTOR}"
        )));
    }
    let first = &mask_video[0];
    if mask_video
        .iter()
        .any(|m| m.width() != first.width() || m.height() != first.height())
    {
        return Err(Error::DimensionMismatch(
            "mask frames must share dimensions".into(),
        ));
    }
    let spatial: Vec<Vec<u8>> = mask_video
        .iter()
        .map(|m| spatial_downsample_nearest(m, anchor))
        .collect::<Result<_>>()?;
    let (h, w) = (
        first.height() / SPATIAL_FACTOR,
        first.width() / SPATIAL_FACTOR,
    );
    let n_lat = 1 + (n_px - 1) / TEMPORAL_FACTOR;
    let mut values = Vec::with_capacity(n_lat * h * w);
    values.extend_from_slice(&spatial[0]);
    for k in 1..n_lat {
        // latent frame k covers pixel frames 4k-3 ..= 4k
        let group = &spatial[(TEMPORAL_FACTOR * k - (TEMPORAL_FACTOR - 1))..=(TEMPORAL_FACTOR * k)];
        for cell in 0..h * w {
            values.push(group.iter().fold(1u8, |acc, f| acc & f[cell]));
        }
    }
    LatentMask::from_values(n_lat, h, w, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_of(h: usize, w: usize, values: Vec<u8>) -> VisibilityMask {
        VisibilityMask::from_values(w, h, values).unwrap()
    }

    #[test]
    fn spatial_all_zeros_and_single_one() {
        let zeros = VisibilityMask::zeros(8, 8);
        assert_eq!(
            spatial_downsample_nearest(&zeros, DownsampleAnchor::TopLeft).unwrap(),
            vec![0]
        );
        let mut one = VisibilityMask::zeros(8, 8);
        one.set(0, 0, 1);
        assert_eq!(
            spatial_downsample_nearest(&one, DownsampleAnchor::TopLeft).unwrap(),
            vec![1]
        );
        // center anchor ignores the top-left pixel
        assert_eq!(
            spatial_downsample_nearest(&one, DownsampleAnchor::Center).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn spatial_checkerboard_of_blocks() {
        let mut values = vec![0u8; 16 * 16];
        for r in 0..16 {
            for c in 0..16 {
                let block = (r / 8 + c / 8) % 2;
                values[r * 16 + c] = (block == 0) as u8;
            }
        }
        let m = mask_of(16, 16, values);
        assert_eq!(
            spatial_downsample_nearest(&m, DownsampleAnchor::TopLeft).unwrap(),
            vec![1, 0, 0, 1]
        );
    }

    #[test]
    fn spatial_rejects_indivisible() {
        let m = VisibilityMask::zeros(12, 8);
        assert!(spatial_downsample_nearest(&m, DownsampleAnchor::TopLeft).is_err());
    }

    #[test]
    fn temporal_and_over_groups_of_four() {
        // constant-per-frame masks [1,1,0,1,1] -> latent temporal [1,0]
        let frames: Vec<VisibilityMask> = [1u8, 1, 0, 1, 1]
            .iter()
            .map(|v| {
                if *v == 1 {
                    VisibilityMask::ones(8, 8)
                } else {
                    VisibilityMask::zeros(8, 8)
                }
            })
            .collect();
        let lat = downsample_mask(&frames, DownsampleAnchor::TopLeft).unwrap();
        assert_eq!(lat.shape(), (2, 1, 1));
        assert_eq!(lat.values(), &[1, 0]);
    }

    #[test]
    fn constant_videos_stay_constant() {
        let ones = vec![VisibilityMask::ones(16, 16); 9];
        let lat = downsample_mask(&ones, DownsampleAnchor::TopLeft).unwrap();
        assert!(lat.values().iter().all(|v| *v == 1));
        let zeros = vec![VisibilityMask::zeros(16, 16); 9];
        let lat = downsample_mask(&zeros, DownsampleAnchor::TopLeft).unwrap();
        assert!(lat.values().iter().all(|v| *v == 0));
    }

    #[test]
    fn shape_law() {
        let frames = vec![VisibilityMask::ones(16, 24); 9];
        let lat = downsample_mask(&frames, DownsampleAnchor::TopLeft).unwrap();
        assert_eq!(lat.shape(), (3, 3, 2));
        assert!(downsample_mask(&frames[..8], DownsampleAnchor::TopLeft).is_err());
        assert!(downsample_mask(&frames[..0], DownsampleAnchor::TopLeft).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.lmask");
        let lat = LatentMask::from_values(2, 1, 2, vec![1, 0, 0, 1]).unwrap();
        lat.save(&path).unwrap();
        assert_eq!(LatentMask::load(&path).unwrap(), lat);
    }

    proptest! {
        /// Latent value 1 at (k>=1, i, j) iff all four contributing frames are 1.
        #[test]
        fn temporal_reduction_is_conservative(bits in proptest::collection::vec(0u8..=1, 9 * 4)) {
            let frames: Vec<VisibilityMask> = (0..9)
                .map(|f| mask_of(16, 16, {
                    let mut v = vec![0u8; 16 * 16];
                    for (cell, b) in bits[f * 4..(f + 1) * 4].iter().enumerate() {
                        // place the sampled bits on the anchor pixels
                        let (i, j) = (cell / 2, cell % 2);
                        v[(i * 8) * 16 + j * 8] = *b;
                    }
                    v
                }))
                .collect();
            let lat = downsample_mask(&frames, DownsampleAnchor::TopLeft).unwrap();
            prop_assert_eq!(lat.shape(), (3, 2, 2));
            for k in 1..3usize {
                for i in 0..2 {
                    for j in 0..2 {
                        let expect = (4 * k - 3..=4 * k)
                            .all(|f| frames[f].get(i * 8, j * 8) == 1);
                        prop_assert_eq!(lat.get(k, i, j) == 1, expect);
                    }
                }
            }
        }
    }
}
