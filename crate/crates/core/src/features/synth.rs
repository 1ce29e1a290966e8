//! Seeded generative stand-in for frozen video backbones.
//!
//! Every sentence class belongs to an *ambiguity pair*. Both classes of a pair
//! draw their spatial and motion streams from one shared distribution; only
//! the emotion stream differs, by `margin` along a fixed unit direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::extract::{motion_window_count, sample_track, SamplingStrategy};
use super::{FeatureSequence, Modality};
use crate::autograd::Mat;
use crate::error::{EafError, Result};
use crate::params::randn;

const KEYFRAMES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamSpec {
    /// Frames per video, `T`.
    pub frames: usize,
    /// Raw encoder width of every stream.
    pub d_feat: usize,
    /// Motion window width `w`.
    pub window: usize,
    /// Motion window stride `sd`.
    pub stride: usize,
    /// Emotion sampling interval `st`.
    pub interval: usize,
    pub sampling: SamplingStrategy,
    /// Distance between the two emotion class means.
    pub margin: f64,
    /// Per-coordinate noise standard deviation.
    pub noise_std: f64,
    pub n_pairs: usize,
    /// Probability that face detection fails on a frame.
    pub detection_failure_rate: f64,
    /// Seed for class prototypes (shared by all samples of a dataset).
    pub prototype_seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            frames: 100,
            d_feat: 16,
            window: 16,
            stride: 8,
            interval: 8,
            sampling: SamplingStrategy::SingleFrame,
            margin: 2.0,
            noise_std: 1.0,
            n_pairs: 3,
            detection_failure_rate: 0.0,
            prototype_seed: 0,
        }
    }
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.margin < 0.0 || self.margin.is_nan() {
            return Err(EafError::InvalidArgument(format!(
                "margin must be ≥ 0, got {}",
                self.margin
            )));
        }
        if self.noise_std < 0.0 {
            return Err(EafError::InvalidArgument("noise_std must be ≥ 0".into()));
        }
        if self.n_pairs == 0 || self.d_feat == 0 || self.interval == 0 {
            return Err(EafError::InvalidArgument(
                "n_pairs, d_feat and interval must be ≥ 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.detection_failure_rate) {
            return Err(EafError::InvalidArgument(
                "detection_failure_rate must be in [0, 1)".into(),
            ));
        }
        motion_window_count(self.frames, self.window, self.stride).ok_or(
            EafError::VideoShorterThanWindow {
                frames: self.frames,
                window: self.window,
            },
        )?;
        Ok(())
    }

    /// `(T, S, F)`
    pub fn lengths(&self) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let s = motion_window_count(self.frames, self.window, self.stride).unwrap();
        Ok((
            self.frames,
            s,
            super::emotion_sample_count(self.frames, self.interval),
        ))
    }
}

/// Sentence class: which ambiguity pair, and which side of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassLabel {
    pub pair: usize,
    /// 0 or 1.
    pub polarity: usize,
}

impl ClassLabel {
    pub fn class_id(self) -> usize {
        2 * self.pair + self.polarity
    }

    pub fn from_class_id(id: usize) -> Self {
        Self {
            pair: id / 2,
            polarity: id % 2,
        }
    }
}

/// Class-conditional means derived from `prototype_seed`.
#[derive(Clone, Debug)]
pub struct Prototypes {
    spatial: Vec<Mat>,
    motion: Vec<Mat>,
    emotion_base: Vec<Mat>,
    /// Unit `1 × d_feat` direction separating the two emotion classes.
    emotion_axis: Mat,
}

impl Prototypes {
    pub fn new(spec: &StreamSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.prototype_seed);
        let d = spec.d_feat;
        let mut spatial = Vec::new();
        let mut motion = Vec::new();
        let mut emotion_base = Vec::new();
        for _ in 0..spec.n_pairs {
            spatial.push(randn(&mut rng, (KEYFRAMES, d), 1.0));
            motion.push(randn(&mut rng, (KEYFRAMES, d), 1.0));
            emotion_base.push(randn(&mut rng, (1, d), 1.0));
        }
        let axis = randn(&mut rng, (1, d), 1.0);
        let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self {
            spatial,
            motion,
            emotion_base,
            emotion_axis: axis / norm,
        }
    }

    pub fn emotion_axis(&self) -> &Mat {
        &self.emotion_axis
    }

    /// Emotion class mean.
    pub fn emotion_mean(&self, spec: &StreamSpec, label: ClassLabel) -> Mat {
        let sign = if label.polarity == 0 { 1.0 } else { -1.0 };
        &self.emotion_base[label.pair] + &(&self.emotion_axis * (sign * spec.margin / 2.0))
    }
}

fn keyframe_trajectory(keys: &Mat, t: usize, frames: usize) -> ndarray::Array1<f64> {
    let pos = if frames > 1 {
        t as f64 / (frames - 1) as f64 * (KEYFRAMES - 1) as f64
    } else {
        0.0
    };
    let k0 = (pos.floor() as usize).min(KEYFRAMES - 2);
    let a = pos - k0 as f64;
    &keys.row(k0) * (1.0 - a) + &keys.row(k0 + 1) * a
}

/// Streams before emotion sampling: the emotion track is per frame, with a
/// per-frame face-detection mask.
#[derive(Clone, Debug)]
pub struct RawStreams {
    pub spatial: FeatureSequence,
    pub motion: FeatureSequence,
    pub emotion_track: Mat,
    pub face_valid: Vec<bool>,
}

impl RawStreams {
    /// Samples the emotion track and interpolates detection failures.
    pub fn emotion(&self, interval: usize, strategy: SamplingStrategy) -> Result<FeatureSequence> {
        sample_track(&self.emotion_track, &self.face_valid, interval, strategy)
    }
}

pub fn synthesize_raw(
    spec: &StreamSpec,
    protos: &Prototypes,
    label: ClassLabel,
    seed: u64,
) -> Result<RawStreams> {
    spec.validate()?;
    if label.pair >= spec.n_pairs || label.polarity > 1 {
        return Err(EafError::InvalidArgument(format!(
            "class {label:?} outside spec"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_len, d, sigma) = (spec.frames, spec.d_feat, spec.noise_std);
    let noise = |rng: &mut ChaCha8Rng| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    };

    let mut spatial = Mat::zeros((t_len, d));
    for t in 0..t_len {
        let mu = keyframe_trajectory(&protos.spatial[label.pair], t, t_len);
        for c in 0..d {
            spatial[[t, c]] = mu[c] + noise(&mut rng);
        }
    }

    let s_len = motion_window_count(t_len, spec.window, spec.stride).unwrap();
    let mut motion = Mat::zeros((s_len, d));
    for k in 0..s_len {
        let start = k * spec.stride;
        let mut mu = ndarray::Array1::<f64>::zeros(d);
        for t in start..start + spec.window {
            mu += &keyframe_trajectory(&protos.motion[label.pair], t, t_len);
        }
        mu /= spec.window as f64;
        for c in 0..d {
            motion[[k, c]] = mu[c] + noise(&mut rng);
        }
    }

    let mean = protos.emotion_mean(spec, label);
    let mut emotion_track = Mat::zeros((t_len, d));
    for t in 0..t_len {
        for c in 0..d {
            emotion_track[[t, c]] = mean[[0, c]] + noise(&mut rng);
        }
    }
    let mut face_valid: Vec<bool> = (0..t_len)
        .map(|_| rng.gen::<f64>() >= spec.detection_failure_rate)
        .collect();
    if !face_valid.iter().any(|&v| v) {
        face_valid[0] = true;
    }

    Ok(RawStreams {
        spatial: FeatureSequence::dense(Modality::Spatial, spatial)?,
        motion: FeatureSequence::new(
            Modality::Motion,
            motion,
            (0..s_len).map(|k| k * spec.stride).collect(),
            vec![true; s_len],
        )?,
        emotion_track,
        face_valid,
    })
}

/// Spatial (`T` rows), motion (`S` rows) and sampled emotion (`F` rows) streams
/// for one sample of class `label`.
pub fn synthesize_features(
    spec: &StreamSpec,
    label: ClassLabel,
    seed: u64,
) -> Result<(FeatureSequence, FeatureSequence, FeatureSequence)> {
    spec.validate()?;
    let protos = Prototypes::new(spec);
    let raw = synthesize_raw(spec, &protos, label, seed)?;
    let emotion = raw.emotion(spec.interval, spec.sampling)?;
    Ok((raw.spatial, raw.motion, emotion))
}

/// Independent per-sample seed derived from a dataset seed (SplitMix64 finaliser).
pub fn sample_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
