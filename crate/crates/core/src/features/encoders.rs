//! Encoder and face-detector interfaces with deterministic stand-ins.

use std::collections::HashSet;

use ndarray::{s, Array3, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Mat;
use crate::params::randn;

/// Maps one image to a fixed-width vector.
pub trait ImageEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn out_dim(&self) -> usize;
    fn encode(&self, image: ArrayView3<f64>) -> Vec<f64>;
}

/// Maps a clip of consecutive frames to a fixed-width vector.
pub trait ClipEncoder: Send + Sync {
    fn name(&self) -> &str;
    fn out_dim(&self) -> usize;
    fn encode_clip(&self, clip: &[Array3<f64>]) -> Vec<f64>;
}

/// Axis-aligned face region.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Roi {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

pub trait FaceDetector: Send + Sync {
    /// `None` when no face is found in frame `index`.
    fn detect(&self, index: usize, frame: ArrayView3<f64>) -> Option<Roi>;
}

/// Bilinear resize with half-pixel centres.
pub fn resize_bilinear(img: ArrayView3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = img.dim();
    let mut out = Array3::zeros((out_h, out_w, c));
    let coord = |o: usize, n_out: usize, n_in: usize| {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n_in - 1);
        (x0, x1, x - x0 as f64)
    };
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, out_h, h);
        for x in 0..out_w {
            let (x0, x1, fx) = coord(x, out_w, w);
            for ch in 0..c {
                let top = img[[y0, x0, ch]] * (1.0 - fx) + img[[y0, x1, ch]] * fx;
                let bot = img[[y1, x0, ch]] * (1.0 - fx) + img[[y1, x1, ch]] * fx;
                out[[y, x, ch]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Returns the top-left pixel's first channel repeated `out_dim` times.
#[derive(Clone, Debug)]
pub struct FirstPixelEncoder {
    pub out_dim: usize,
}

impl ImageEncoder for FirstPixelEncoder {
    fn name(&self) -> &str {
        "first-pixel"
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn encode(&self, image: ArrayView3<f64>) -> Vec<f64> {
        vec![image[[0, 0, 0]]; self.out_dim]
    }
}

/// Seeded random linear map of a `grid × grid` bilinear thumbnail.
#[derive(Clone, Debug)]
pub struct RandomImageEncoder {
    name: String,
    grid: usize,
    channels: usize,
    /// `out_dim × (grid·grid·channels)`
    weight: Mat,
}

impl RandomImageEncoder {
    pub fn new(name: &str, grid: usize, channels: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = grid * grid * channels;
        Self {
            name: name.to_string(),
            grid,
            channels,
            weight: randn(&mut rng, (out_dim, fan_in), 1.0 / (fan_in as f64).sqrt()),
        }
    }

    fn thumbnail(&self, image: ArrayView3<f64>) -> Vec<f64> {
        assert_eq!(image.dim().2, self.channels, "channel count mismatch");
        resize_bilinear(image, self.grid, self.grid)
            .iter()
            .copied()
            .collect()
    }
}

impl ImageEncoder for RandomImageEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn encode(&self, image: ArrayView3<f64>) -> Vec<f64> {
        let x = ndarray::Array1::from(self.thumbnail(image));
        self.weight.dot(&x).to_vec()
    }
}

/// Encodes a clip from its mean thumbnail and mean absolute frame-to-frame
/// change, each through a seeded random linear map.
#[derive(Clone, Debug)]
pub struct RandomClipEncoder {
    frame: RandomImageEncoder,
    /// `out_dim × (grid·grid·channels)`
    motion_weight: Mat,
}

impl RandomClipEncoder {
    pub fn new(grid: usize, channels: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d6f74696f6e);
        let fan_in = grid * grid * channels;
        Self {
            frame: RandomImageEncoder::new("clip-appearance", grid, channels, out_dim, seed),
            motion_weight: randn(&mut rng, (out_dim, fan_in), 1.0 / (fan_in as f64).sqrt()),
        }
    }
}

impl ClipEncoder for RandomClipEncoder {
    fn name(&self) -> &str {
        "random-clip"
    }

    fn out_dim(&self) -> usize {
        self.frame.out_dim()
    }

    fn encode_clip(&self, clip: &[Array3<f64>]) -> Vec<f64> {
        let thumbs: Vec<ndarray::Array1<f64>> = clip
            .iter()
            .map(|f| ndarray::Array1::from(self.frame.thumbnail(f.view())))
            .collect();
        let n = thumbs.len() as f64;
        let mean = thumbs
            .iter()
            .fold(ndarray::Array1::zeros(thumbs[0].len()), |a, t| a + t)
            / n;
        let mut change = ndarray::Array1::<f64>::zeros(thumbs[0].len());
        for w in thumbs.windows(2) {
            change += &(&w[1] - &w[0]).mapv(f64::abs);
        }
        if thumbs.len() > 1 {
            change /= n - 1.0;
        }
        (self.frame.weight.dot(&mean) + self.motion_weight.dot(&change)).to_vec()
    }
}

/// Treats the whole frame as the face.
#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysDetect;

impl FaceDetector for AlwaysDetect {
    fn detect(&self, _index: usize, frame: ArrayView3<f64>) -> Option<Roi> {
        let (h, w, _) = frame.dim();
        Some(Roi {
            top: 0,
            left: 0,
            height: h,
            width: w,
        })
    }
}

/// Whole-frame detector that fails on a fixed set of frame indices.
#[derive(Clone, Debug, Default)]
pub struct FailingDetector {
    pub fail_on: HashSet<usize>,
}

impl FailingDetector {
    pub fn new(fail_on: impl IntoIterator<Item = usize>) -> Self {
        Self {
            fail_on: fail_on.into_iter().collect(),
        }
    }
}

impl FaceDetector for FailingDetector {
    fn detect(&self, index: usize, frame: ArrayView3<f64>) -> Option<Roi> {
        if self.fail_on.contains(&index) {
            None
        } else {
            AlwaysDetect.detect(index, frame)
        }
    }
}

pub(crate) fn crop(frame: ArrayView3<f64>, roi: Roi) -> ArrayView3<f64> {
    frame.slice_move(s![
        roi.top..roi.top + roi.height,
        roi.left..roi.left + roi.width,
        ..
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_to_single_pixel_is_mean() {
        let img = Array3::from_shape_vec((2, 2, 1), vec![0.1, 0.3, 0.5, 0.9]).unwrap();
        let r = resize_bilinear(img.view(), 1, 1);
        assert!((r[[0, 0, 0]] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn bilinear_same_size_is_identity() {
        let img = Array3::from_shape_fn((3, 4, 2), |(y, x, c)| (y * 8 + x * 2 + c) as f64 / 32.0);
        assert_eq!(resize_bilinear(img.view(), 3, 4), img);
    }

    #[test]
    fn random_encoder_is_deterministic() {
        let img = Array3::from_shape_fn((8, 8, 3), |(y, x, c)| ((y + 2 * x + c) % 7) as f64 / 7.0);
        let a = RandomImageEncoder::new("e", 4, 3, 16, 5);
        let b = RandomImageEncoder::new("e", 4, 3, 16, 5);
        assert_eq!(a.encode(img.view()), b.encode(img.view()));
        let c = RandomImageEncoder::new("e", 4, 3, 16, 6);
        assert_ne!(a.encode(img.view()), c.encode(img.view()));
    }
}
