use ndarray::{s, Array1};
use serde::{Deserialize, Serialize};

use super::encoders::{crop, resize_bilinear, ClipEncoder, FaceDetector, ImageEncoder};
use super::{interpolate_missing, stack_rows, FeatureSequence, FrameSequence, Modality};
use crate::autograd::Mat;
use crate::error::{EafError, Result};

/// How one emotion row is formed from its `st`-frame window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// The first frame of the window.
    #[default]
    SingleFrame,
    /// Elementwise max over the window's detected frames.
    MaxPool,
    /// Elementwise mean over the window's detected frames.
    MeanPool,
}

impl SamplingStrategy {
    pub const ALL: [SamplingStrategy; 3] = [Self::SingleFrame, Self::MaxPool, Self::MeanPool];
}

/// `S = ⌊(T − w)/sd⌋ + 1`, or `None` when `T < w`.
pub fn motion_window_count(frames: usize, window: usize, stride: usize) -> Option<usize> {
    (frames >= window && window >= 1 && stride >= 1).then(|| (frames - window) / stride + 1)
}

/// Number of sampled indices `{0, st, 2·st, …}` strictly below `T`.
pub fn emotion_sample_count(frames: usize, interval: usize) -> usize {
    if frames == 0 {
        0
    } else {
        (frames - 1) / interval + 1
    }
}

/// Per frame: the global view (bilinear resize to `global_size`) concatenated
/// with the mean encoding of the four quadrant crops of the full frame.
pub fn extract_spatial(
    frames: &FrameSequence,
    enc: &dyn ImageEncoder,
    global_size: (usize, usize),
) -> Result<FeatureSequence> {
    let (h, w, _) = frames.frame_dim();
    if h < 2 || w < 2 {
        // frames share dimensions, so the first frame is the offender
        return Err(EafError::FrameTooSmall {
            index: 0,
            height: h,
            width: w,
            min: 2,
        });
    }
    let (hh, hw) = (h / 2, w / 2);
    let rows: Vec<Vec<f64>> = frames
        .frames()
        .iter()
        .map(|f| {
            let global = resize_bilinear(f.view(), global_size.0, global_size.1);
            let mut row = enc.encode(global.view());
            let quads = [
                f.slice(s![..hh, ..hw, ..]),
                f.slice(s![..hh, hw.., ..]),
                f.slice(s![hh.., ..hw, ..]),
                f.slice(s![hh.., hw.., ..]),
            ];
            let mut local = Array1::<f64>::zeros(enc.out_dim());
            for q in quads {
                local += &Array1::from(enc.encode(q));
            }
            local /= 4.0;
            row.extend(local.iter());
            row
        })
        .collect();
    FeatureSequence::dense(Modality::Spatial, stack_rows(&rows))
}

/// One row per sliding window of `window` frames at stride `stride`; each
/// row's frame index is its window start.
pub fn extract_motion(
    frames: &FrameSequence,
    enc: &dyn ClipEncoder,
    window: usize,
    stride: usize,
) -> Result<FeatureSequence> {
    if window == 0 || stride == 0 {
        return Err(EafError::InvalidArgument(
            "window and stride must be ≥ 1".into(),
        ));
    }
    let t = frames.len();
    let count = motion_window_count(t, window, stride)
        .ok_or(EafError::VideoShorterThanWindow { frames: t, window })?;
    let starts: Vec<usize> = (0..count).map(|k| k * stride).collect();
    let rows: Vec<Vec<f64>> = starts
        .iter()
        .map(|&s0| enc.encode_clip(&frames.frames()[s0..s0 + window]))
        .collect();
    let n = rows.len();
    FeatureSequence::new(Modality::Motion, stack_rows(&rows), starts, vec![true; n])
}

/// Single-frame emotion sampling at every `interval`-th frame.
pub fn extract_emotion(
    frames: &FrameSequence,
    detector: &dyn FaceDetector,
    enc: &dyn ImageEncoder,
    interval: usize,
) -> Result<FeatureSequence> {
    extract_emotion_with(
        frames,
        detector,
        enc,
        interval,
        SamplingStrategy::SingleFrame,
    )
}

/// Emotion stream with a selectable window aggregation. A row whose window
/// has no successful detection is marked invalid and then interpolated.
pub fn extract_emotion_with(
    frames: &FrameSequence,
    detector: &dyn FaceDetector,
    enc: &dyn ImageEncoder,
    interval: usize,
    strategy: SamplingStrategy,
) -> Result<FeatureSequence> {
    if interval == 0 {
        return Err(EafError::InvalidArgument(
            "sampling interval must be ≥ 1".into(),
        ));
    }
    let t = frames.len();
    let count = emotion_sample_count(t, interval);
    let encode_at = |i: usize| {
        let f = frames.frames()[i].view();
        detector.detect(i, f).map(|roi| enc.encode(crop(f, roi)))
    };
    let mut rows = Vec::with_capacity(count);
    let mut valid = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * interval;
        let row = match strategy {
            SamplingStrategy::SingleFrame => encode_at(start),
            SamplingStrategy::MaxPool | SamplingStrategy::MeanPool => {
                let hits: Vec<Vec<f64>> = (start..(start + interval).min(t))
                    .filter_map(encode_at)
                    .collect();
                pool_rows(&hits, strategy)
            }
        };
        valid.push(row.is_some());
        rows.push(row.unwrap_or_else(|| vec![0.0; enc.out_dim()]));
    }
    if !valid.iter().any(|&v| v) {
        return Err(EafError::NoValidFaceFrames);
    }
    let index = (0..count).map(|k| k * interval).collect();
    let seq = FeatureSequence::new(Modality::Emotion, stack_rows(&rows), index, valid)?;
    interpolate_missing(&seq)
}

pub(crate) fn pool_rows(rows: &[Vec<f64>], strategy: SamplingStrategy) -> Option<Vec<f64>> {
    let first = rows.first()?;
    let mut acc = first.clone();
    for r in &rows[1..] {
        for (a, v) in acc.iter_mut().zip(r) {
            match strategy {
                SamplingStrategy::MaxPool => *a = a.max(*v),
                _ => *a += v,
            }
        }
    }
    if strategy == SamplingStrategy::MeanPool {
        let n = rows.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Some(acc)
}

/// Applies a sampling strategy to a dense per-frame track (`T` rows with
/// per-frame validity), yielding one row per `interval` window. Used when
/// per-frame encodings are already available.
pub fn sample_track(
    track: &Mat,
    frame_valid: &[bool],
    interval: usize,
    strategy: SamplingStrategy,
) -> Result<FeatureSequence> {
    if interval == 0 {
        return Err(EafError::InvalidArgument(
            "sampling interval must be ≥ 1".into(),
        ));
    }
    let t = track.nrows();
    let count = emotion_sample_count(t, interval);
    let mut rows = Vec::with_capacity(count);
    let mut valid = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * interval;
        let window: Vec<usize> = match strategy {
            SamplingStrategy::SingleFrame => vec![start],
            _ => (start..(start + interval).min(t)).collect(),
        };
        let hits: Vec<Vec<f64>> = window
            .into_iter()
            .filter(|&i| frame_valid[i])
            .map(|i| track.row(i).to_vec())
            .collect();
        let row = pool_rows(&hits, strategy);
        valid.push(row.is_some());
        rows.push(row.unwrap_or_else(|| vec![0.0; track.ncols()]));
    }
    if !valid.iter().any(|&v| v) {
        return Err(EafError::NoValidFaceFrames);
    }
    let index = (0..count).map(|k| k * interval).collect();
    interpolate_missing(&FeatureSequence::new(
        Modality::Emotion,
        stack_rows(&rows),
        index,
        valid,
    )?)
}
