//! Toy latent codec.
//!
//! Stands in for a learned spatio-temporal autoencoder with a fixed,
//! invertible-in-expectation transform: pixels are rescaled to [-1, 1], the
//! video path additionally subsamples to the latent grid of
//! [`crate::latent_mask`] (top-left pixel of each 8x8 block; frame 0 then
//! the last frame of each group of four). Decoding upsamples with nearest
//! neighbor. The image path keeps full resolution.

use ndarray::{Array3, Array4};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::latent_mask::{SPATIAL_FACTOR, TEMPORAL_FACTOR};
use crate::warp::Video;

/// Real-valued latent video, shape `n_lat x h x w x 3`.
pub type LatentVideo = Array4<f64>;
/// Real-valued latent image, shape `h x w x 3`.
pub type LatentImage = Array3<f64>;

fn to_unit(v: u8) -> f64 {
    v as f64 / 255.0 * 2.0 - 1.0
}

fn from_unit(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * 255.0).round() as u8
}

/// Encodes a video onto the latent grid; requires the mask shape law
/// (H, W divisible by 8; N = 1 mod 4).
pub fn encode_video(video: &Video) -> Result<LatentVideo> {
    let (n_px, h_px, w_px) = (video.len(), video.height(), video.width());
    if h_px % SPATIAL_FACTOR != 0 || w_px % SPATIAL_FACTOR != 0 || (n_px - 1) % TEMPORAL_FACTOR != 0
    {
        return Err(Error::ShapeViolation(format!(
            "video {n_px}x{h_px}x{w_px} violates the latent shape law"
        )));
    }
    let (n, h, w) = (
        1 + (n_px - 1) / TEMPORAL_FACTOR,
        h_px / SPATIAL_FACTOR,
        w_px / SPATIAL_FACTOR,
    );
    let mut out = Array4::zeros((n, h, w, 3));
    for k in 0..n {
        let frame_idx = if k == 0 { 0 } else { TEMPORAL_FACTOR * k };
        let frame = &video.frames()[frame_idx];
        for i in 0..h {
            for j in 0..w {
                let px = frame.get(i * SPATIAL_FACTOR, j * SPATIAL_FACTOR);
                for c in 0..3 {
                    out[(k, i, j, c)] = to_unit(px[c]);
                }
            }
        }
    }
    Ok(out)
}

/// Decodes a latent video back to pixel space by nearest-neighbor upsampling.
pub fn decode_video(latent: &LatentVideo) -> Result<Video> {
    let (n, h, w, c) = latent.dim();
    if c != 3 {
        return Err(Error::ShapeViolation(format!("expected 3 channels, got {c}")));
    }
    let n_px = 1 + (n - 1) * TEMPORAL_FACTOR;
    let mut frames = Vec::with_capacity(n_px);
    for f in 0..n_px {
        let k = if f == 0 {
            0
        } else {
            (f + TEMPORAL_FACTOR - 1) / TEMPORAL_FACTOR
        };
        let mut frame = Frame::new(w * SPATIAL_FACTOR, h * SPATIAL_FACTOR);
        for r in 0..h * SPATIAL_FACTOR {
            for col in 0..w * SPATIAL_FACTOR {
                let (i, j) = (r / SPATIAL_FACTOR, col / SPATIAL_FACTOR);
                frame.set(
                    r,
                    col,
                    [
                        from_unit(latent[(k, i, j, 0)]),
                        from_unit(latent[(k, i, j, 1)]),
                        from_unit(latent[(k, i, j, 2)]),
                    ],
                );
            }
        }
        frames.push(frame);
    }
    Video::new(frames)
}

/// Encodes a single image at full resolution (identity up to rescaling).
pub fn encode_image(frame: &Frame) -> LatentImage {
    let (h, w) = (frame.height(), frame.width());
    let mut out = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            let px = frame.get(i, j);
            for c in 0..3 {
                out[(i, j, c)] = to_unit(px[c]);
            }
        }
    }
    out
}

/// Decodes a latent image, clamping to the pixel range.
pub fn decode_image(latent: &LatentImage) -> Frame {
    let (h, w, _) = latent.dim();
    let mut frame = Frame::new(w, h);
    for i in 0..h {
        for j in 0..w {
            frame.set(
                i,
                j,
                [
                    from_unit(latent[(i, j, 0)]),
                    from_unit(latent[(i, j, 1)]),
                    from_unit(latent[(i, j, 2)]),
                ],
            );
        }
    }
    frame
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_is_exact() {
        let mut f = Frame::new(4, 3);
        for r in 0..3 {
            for c in 0..4 {
                f.set(r, c, [(r * 80) as u8, (c * 60) as u8, 255]);
            }
        }
        assert_eq!(decode_image(&encode_image(&f)), f);
    }

    #[test]
    fn image_latent_range() {
        let mut f = Frame::new(2, 1);
        f.set(0, 0, [0, 128, 255]);
        let z = encode_image(&f);
        assert_eq!(z[(0, 0, 0)], -1.0);
        assert_eq!(z[(0, 0, 2)], 1.0);
        assert!(z[(0, 0, 1)].abs() < 0.01);
    }

    #[test]
    fn video_latent_shape_follows_law() {
        let frames = vec![Frame::new(16, 8); 5];
        let video = Video::new(frames).unwrap();
        let z = encode_video(&video).unwrap();
        assert_eq!(z.dim(), (2, 1, 2, 3));
        let decoded = decode_video(&z).unwrap();
        assert_eq!(decoded.len(), 5);
        assert_eq!(decoded.width(), 16);
        assert_eq!(decoded.height(), 8);
    }

    #[test]
    fn video_encode_rejects_bad_shapes() {
        let video = Video::new(vec![Frame::new(16, 8); 4]).unwrap();
        assert!(encode_video(&video).is_err());
        let video = Video::new(vec![Frame::new(12, 8); 5]).unwrap();
        assert!(encode_video(&video).is_err());
    }

    #[test]
    fn block_constant_video_round_trips() {
        // constant 8x8 blocks and group-constant frames survive the codec
        let mut frames = Vec::new();
        for f in 0..5 {
            let group = if f == 0 { 0 } else { 1 };
            let mut frame = Frame::new(16, 8);
            for r in 0..8 {
                for c in 0..16 {
                    let b = (c / 8) as u8;
                    frame.set(r, c, [group * 100 + b * 50, 10, 200]);
                }
            }
            frames.push(frame);
        }
        let video = Video::new(frames).unwrap();
        let decoded = decode_video(&encode_video(&video).unwrap()).unwrap();
        assert_eq!(decoded.frames()[0], video.frames()[0]);
        assert_eq!(decoded.frames()[4], video.frames()[4]);
    }
}
