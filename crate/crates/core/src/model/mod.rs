//! LSTM captioners: an encoder-decoder (S2VT-style) and a soft-attention
//! decoder (SA-style), their sentence likelihood and title decoding.

mod captioner;
mod checkpoint;
mod decode;
pub(crate) mod lstm;

pub use captioner::{AttentionContext, CaptionModel, ModelDims, SpecialTokens};
pub use checkpoint::Checkpoint;
pub use decode::{DecodeMode, Decoded};
pub use lstm::{LstmCell, LstmState};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Which captioner architecture a parameter set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Encoder-decoder: the video is consumed first, words are then emitted
    /// from the encoded state.
    S2vt,
    /// Decoder with per-word soft attention over all clips.
    Sa,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::S2vt => "s2vt",
            ModelKind::Sa => "sa",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s2vt" => Ok(ModelKind::S2vt),
            "sa" => Ok(ModelKind::Sa),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

/// A video as a sequence of `n >= 1` clip feature vectors (an `n x d_v` matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    clips: Tensor,
}

impl VideoFeatures {
    pub fn new(clips: Tensor) -> Result<Self> {
        if clips.rank() != 2 {
            return Err(Error::dim("video_features", clips.shape(), &[0, 0]));
        }
        if !clips.is_finite() {
            return Err(Error::NonFinite("video features".into()));
        }
        Ok(Self { clips })
    }

    pub fn from_clips(clips: &[Vec<f64>]) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Empty { op: "video_features" });
        }
        Self::new(Tensor::from_rows(clips)?)
    }

    /// `len` copies of the same clip.
    pub fn constant(clip: &[f64], len: usize) -> Result<Self> {
        Self::from_clips(&vec![clip.to_vec(); len])
    }

    pub fn len(&self) -> usize {
        self.clips.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.clips.cols()
    }

    pub fn clip(&self, i: usize) -> &[f64] {
        self.clips.row(i)
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.clips
    }

    /// The contiguous clip range `start..start + len`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            clips: self.clips.row_range(start, len)?,
        })
    }
}

/// Content tokens of a sentence; begin and end markers are implicit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sentence(pub Vec<usize>);

impl Sentence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How long the dummy observation sequence is by default for each kind.
pub fn default_dummy_len(kind: ModelKind, encoder_len: usize) -> usize {
    match kind {
        ModelKind::Sa => 1,
        ModelKind::S2vt => encoder_len.max(1),
    }
}

/// Observation attached to sentence-only examples.
///
/// SA gets the unit vector `e_1` so that the attended context embeds to the
/// first column of the context matrix; S2VT gets zeros so the encoded state
/// does not depend on the video input weights.
pub fn make_dummy_observation(kind: ModelKind, d_v: usize, len: usize) -> Result<VideoFeatures> {
    if d_v == 0 || len == 0 {
        return Err(Error::InvalidArgument(format!(
            "dummy observation needs d_v >= 1 and len >= 1, got {d_v}, {len}"
        )));
    }
    let mut v = vec![0.0; d_v];
    if kind == ModelKind::Sa {
        v[0] = 1.0;
    }
    VideoFeatures::constant(&v, len)
}

/// Shared handle used by training examples.
pub type SharedVideo = Arc<VideoFeatures>;
