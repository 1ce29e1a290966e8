//! Decoupled spatial, motion and emotion feature streams.
//!
//! Frame-level extraction runs pluggable encoders over a [`FrameSequence`];
//! [`synth`] produces the same three streams directly from a seeded
//! generative model for controlled experiments.

pub mod encoders;
pub mod extract;
pub mod io;
pub mod synth;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{EafError, Result};

pub use encoders::{
    AlwaysDetect, ClipEncoder, FaceDetector, FailingDetector, FirstPixelEncoder, ImageEncoder,
    RandomClipEncoder, RandomImageEncoder, Roi,
};
pub use extract::{
    emotion_sample_count, extract_emotion, extract_emotion_with, extract_motion, extract_spatial,
    motion_window_count, SamplingStrategy,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Spatial,
    Motion,
    Emotion,
}

impl Modality {
    pub fn code(self) -> u32 {
        match self {
            Modality::Spatial => 0,
            Modality::Motion => 1,
            Modality::Emotion => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Modality::Spatial),
            1 => Some(Modality::Motion),
            2 => Some(Modality::Emotion),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Spatial => "spatial",
            Modality::Motion => "motion",
            Modality::Emotion => "emotion",
        }
    }
}

/// A video as `T` images of shape `(height, width, channels)` with values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    frames: Vec<Array3<f64>>,
    pub fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Array3<f64>>, fps: f64) -> Result<Self> {
        let first = frames.first().ok_or(EafError::Empty("frame sequence"))?;
        let dim = first.dim();
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != dim {
                return Err(EafError::Dimension(format!(
                    "frame {i} is {:?}, frame 0 is {dim:?}",
                    f.dim()
                )));
            }
            if f.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(EafError::InvalidArgument(format!(
                    "frame {i} has pixel values outside [0, 1]"
                )));
            }
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Array3<f64>] {
        &self.frames
    }

    /// `(height, width, channels)`
    pub fn frame_dim(&self) -> (usize, usize, usize) {
        self.frames[0].dim()
    }
}

/// An `L × d` feature matrix tagged with its modality, the source frame of
/// each row, and a per-row validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub modality: Modality,
    pub data: Mat,
    pub frame_index: Vec<usize>,
    pub valid: Vec<bool>,
}

impl FeatureSequence {
    pub fn new(
        modality: Modality,
        data: Mat,
        frame_index: Vec<usize>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let l = data.nrows();
        if l == 0 {
            return Err(EafError::Empty("feature sequence"));
        }
        if frame_index.len() != l || valid.len() != l {
            return Err(EafError::Dimension(format!(
                "{} rows but {} frame indices and {} mask entries",
                l,
                frame_index.len(),
                valid.len()
            )));
        }
        if frame_index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EafError::InvalidArgument(
                "frame_index must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            modality,
            data,
            frame_index,
            valid,
        })
    }

    /// All rows valid, frame indices `0..L`.
    pub fn dense(modality: Modality, data: Mat) -> Result<Self> {
        let l = data.nrows();
        Self::new(modality, data, (0..l).collect(), vec![true; l])
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }
}

/// Affine head mapping `d_feat`-wide rows to the shared width `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    /// `d × d_feat`
    pub weight: Mat,
    /// `1 × d`
    pub bias: Mat,
}

impl ProjectionHead {
    pub fn new(weight: Mat, bias: Mat) -> Result<Self> {
        if bias.dim() != (1, weight.nrows()) {
            return Err(EafError::Dimension(format!(
                "bias {:?} does not match weight rows {}",
                bias.dim(),
                weight.nrows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Maps every row `r` to `W·r + b`; length, frame indices and mask are kept.
pub fn project(seq: &FeatureSequence, head: &ProjectionHead) -> Result<FeatureSequence> {
    if head.in_dim() != seq.dim() {
        return Err(EafError::Dimension(format!(
            "projection expects {}-wide rows, {} stream has {}",
            head.in_dim(),
            seq.modality.as_str(),
            seq.dim()
        )));
    }
    let data = seq.data.dot(&head.weight.t()) + &head.bias;
    Ok(FeatureSequence {
        data,
        ..seq.clone()
    })
}

/// Repairs invalid rows by linear interpolation along `frame_index` between the
/// nearest valid neighbours. Rows before the first or after the last valid row
/// copy that row.
pub fn interpolate_missing(seq: &FeatureSequence) -> Result<FeatureSequence> {
    let valid_rows: Vec<usize> = (0..seq.len()).filter(|&i| seq.valid[i]).collect();
    if valid_rows.is_empty() {
        return Err(EafError::NoValidRows);
    }
    let mut data = seq.data.clone();
    let mut next = 0; // position in valid_rows of the first valid row at or after i
    for i in 0..seq.len() {
        while next < valid_rows.len() && valid_rows[next] < i {
            next += 1;
        }
        if seq.valid[i] {
            continue;
        }
        let after = valid_rows.get(next).copied();
        let before = next.checked_sub(1).map(|k| valid_rows[k]);
        let row = match (before, after) {
            (Some(p), Some(n)) => {
                let (fp, fn_, fi) = (
                    seq.frame_index[p] as f64,
                    seq.frame_index[n] as f64,
                    seq.frame_index[i] as f64,
                );
                let t = (fi - fp) / (fn_ - fp);
                let u = seq.data.row(p);
                let v = seq.data.row(n);
                &u * (1.0 - t) + &v * t
            }
            (Some(p), None) => seq.data.row(p).to_owned(),
            (None, Some(n)) => seq.data.row(n).to_owned(),
            (None, None) => unreachable!(),
        };
        data.row_mut(i).assign(&row);
    }
    Ok(FeatureSequence {
        modality: seq.modality,
        data,
        frame_index: seq.frame_index.clone(),
        valid: vec![true; seq.len()],
    })
}

/// Stacks rows of per-step vectors into a matrix.
pub(crate) fn stack_rows(rows: &[Vec<f64>]) -> Mat {
    let d = rows.first().map_or(0, Vec::len);
    let mut m = Mat::zeros((rows.len(), d));
    for (mut dst, src) in m.axis_iter_mut(Axis(0)).zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(src.as_slice()));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn seq(rows: Mat, valid: Vec<bool>) -> FeatureSequence {
        let l = rows.nrows();
        FeatureSequence::new(
            Modality::Emotion,
            rows,
            (0..l).map(|i| i * 8).collect(),
            valid,
        )
        .unwrap()
    }

    #[test]
    fn interpolation_identity_on_complete_data() {
        let s = seq(array![[1.0, 2.0], [3.0, 5.0], [-1.0, 0.0]], vec![true; 3]);
        assert_eq!(interpolate_missing(&s).unwrap(), s);
    }

    #[test]
    fn interpolation_thirds() {
        let (u, v) = (array![3.0, -6.0], array![9.0, 0.0]);
        let mut m = Mat::zeros((4, 2));
        m.row_mut(0).assign(&u);
        m.row_mut(3).assign(&v);
        let s = seq(m, vec![true, false, false, true]);
        let out = interpolate_missing(&s).unwrap();
        let e1 = (&u * 2.0 + &v) / 3.0;
        let e2 = (&u + &v * 2.0) / 3.0;
        for c in 0..2 {
            assert!((out.data[[1, c]] - e1[c]).abs() < 1e-12);
            assert!((out.data[[2, c]] - e2[c]).abs() < 1e-12);
        }
        assert!(out.all_valid());
    }

    #[test]
    fn interpolation_respects_uneven_frame_spacing() {
        let s = FeatureSequence::new(
            Modality::Emotion,
            array![[0.0], [123.0], [4.0]],
            vec![0, 1, 4],
            vec![true, false, true],
        )
        .unwrap();
        assert!((interpolate_missing(&s).unwrap().data[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_edges_copy_nearest() {
        let s = seq(
            array![[0.0, 0.0], [2.0, 7.0], [0.0, 0.0]],
            vec![false, true, false],
        );
        let out = interpolate_missing(&s).unwrap();
        for r in 0..3 {
            assert_eq!(out.data.row(r), array![2.0, 7.0]);
        }
    }

    #[test]
    fn interpolation_midpoint() {
        let s = seq(
            array![[1.0, 4.0], [0.0, 0.0], [3.0, -2.0]],
            vec![true, false, true],
        );
        assert_eq!(
            interpolate_missing(&s).unwrap().data.row(1),
            array![2.0, 1.0]
        );
    }

    #[test]
    fn interpolation_needs_a_valid_row() {
        let s = seq(array![[1.0], [2.0]], vec![false, false]);
        assert!(matches!(
            interpolate_missing(&s),
            Err(EafError::NoValidRows)
        ));
    }

    #[test]
    fn feature_sequence_invariants() {
        assert!(
            FeatureSequence::new(Modality::Spatial, Mat::zeros((0, 3)), vec![], vec![]).is_err()
        );
        assert!(FeatureSequence::new(
            Modality::Spatial,
            Mat::zeros((2, 3)),
            vec![1, 1],
            vec![true; 2]
        )
        .is_err());
        assert!(FeatureSequence::new(
            Modality::Spatial,
            Mat::zeros((2, 3)),
            vec![0],
            vec![true; 2]
        )
        .is_err());
    }

    #[test]
    fn project_identity_and_constant() {
        let s = FeatureSequence::dense(Modality::Motion, array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let id = ProjectionHead::new(Mat::eye(2), Mat::zeros((1, 2))).unwrap();
        assert_eq!(project(&s, &id).unwrap(), s);
        let c = ProjectionHead::new(Mat::zeros((3, 2)), array![[0.5, -1.0, 2.0]]).unwrap();
        let out = project(&s, &c).unwrap();
        for r in 0..2 {
            assert_eq!(out.data.row(r), array![0.5, -1.0, 2.0]);
        }
        assert_eq!(out.frame_index, s.frame_index);
    }

    #[test]
    fn project_to_llm_width() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let s = FeatureSequence::dense(
            Modality::Spatial,
            crate::params::randn(&mut rng, (7, 48), 1.0),
        )
        .unwrap();
        let head = ProjectionHead::new(
            crate::params::randn(&mut rng, (1024, 48), 0.1),
            Mat::zeros((1, 1024)),
        )
        .unwrap();
        assert_eq!(project(&s, &head).unwrap().data.dim(), (7, 1024));
    }

    #[test]
    fn project_dimension_mismatch() {
        let s = FeatureSequence::dense(Modality::Motion, Mat::zeros((2, 3))).unwrap();
        let h = ProjectionHead::new(Mat::zeros((4, 2)), Mat::zeros((1, 4))).unwrap();
        assert!(matches!(project(&s, &h), Err(EafError::Dimension(_))));
    }

    fn mat_strategy(r: usize, c: usize) -> impl Strategy<Value = Mat> {
        proptest::collection::vec(-5.0f64..5.0, r * c)
            .prop_map(move |v| Mat::from_shape_vec((r, c), v).unwrap())
    }

    proptest! {
        #[test]
        fn project_is_affine(
            w in mat_strategy(4, 3), b in mat_strategy(1, 4),
            u in mat_strategy(5, 3), v in mat_strategy(5, 3),
            alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
        ) {
            let head = ProjectionHead::new(w, b.clone()).unwrap();
            let mix = FeatureSequence::dense(Modality::Spatial, &u * alpha + &v * beta).unwrap();
            let pu = project(&FeatureSequence::dense(Modality::Spatial, u).unwrap(), &head).unwrap();
            let pv = project(&FeatureSequence::dense(Modality::Spatial, v).unwrap(), &head).unwrap();
            let lhs = project(&mix, &head).unwrap().data;
            let rhs = &pu.data * alpha + &pv.data * beta - &b * (alpha + beta - 1.0);
            for (a, e) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((a - e).abs() < 1e-10);
            }
        }

        #[test]
        fn interpolation_idempotent(
            rows in mat_strategy(6, 2),
            mask in proptest::collection::vec(any::<bool>(), 6),
        ) {
            prop_assume!(mask.iter().any(|&m| m));
            let s = seq(rows, mask);
            let once = interpolate_missing(&s).unwrap();
            let twice = interpolate_missing(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.all_valid());
        }
    }
}
