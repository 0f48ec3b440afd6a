//! Bidirectional LSTM that scores each clip for highlight-ness.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::HighlightWindow;
use crate::error::{Error, Result};
use crate::model::lstm::{lstm_step, LstmState, StateVars};
use crate::model::{Checkpoint, VideoFeatures};
use crate::numerics::{sigmoid, ParamSet, Tape, Tensor, Var};
use crate::training::{adam_step, clip_gradients, sum_grads, OptimizerState};

const NAMES: [&str; 8] = [
    "fwd.w", "fwd.u", "fwd.b", "bwd.w", "bwd.u", "bwd.b", "out.w", "out.b",
];
pub const DETECTOR_KIND: &str = "detector";

/// Per-clip highlight probabilities in (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ClipScores(pub Vec<f64>);

impl ClipScores {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub init_scale: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 30,
            lr: 0.01,
            batch_size: 10,
            init_scale: 0.08,
            clip_norm: Some(5.0),
            seed: 0,
        }
    }
}

/// Forward and backward LSTMs over clips plus a scalar projection of the
/// concatenated hidden states.
#[derive(Clone, Debug, PartialEq)]
pub struct HighlightDetector {
    video_dim: usize,
    hidden: usize,
    params: ParamSet,
}

fn shapes(video_dim: usize, hidden: usize) -> [Vec<usize>; 8] {
    let g = 4 * hidden;
    [
        vec![g, video_dim],
        vec![g, hidden],
        vec![g],
        vec![g, video_dim],
        vec![g, hidden],
        vec![g],
        vec![1, 2 * hidden],
        vec![1],
    ]
}

impl HighlightDetector {
    pub fn init<R: rand::Rng + ?Sized>(
        video_dim: usize,
        hidden: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if video_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("detector dims must be positive".into()));
        }
        let mut params = ParamSet::new();
        for (name, shape) in NAMES.iter().zip(shapes(video_dim, hidden)) {
            let t = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                Tensor::uniform(&shape, scale, rng)
            };
            params.push(*name, t);
        }
        Ok(Self {
            video_dim,
            hidden,
            params,
        })
    }

    pub fn zeros(video_dim: usize, hidden: usize) -> Result<Self> {
        Self::from_params(video_dim, hidden, {
            let mut p = ParamSet::new();
            for (name, shape) in NAMES.iter().zip(shapes(video_dim, hidden)) {
                p.push(*name, Tensor::zeros(&shape));
            }
            p
        })
    }

    pub fn from_params(video_dim: usize, hidden: usize, params: ParamSet) -> Result<Self> {
        let want = shapes(video_dim, hidden);
        if params.len() != NAMES.len() {
            return Err(Error::Checkpoint(format!(
                "detector expects {} tensors, got {}",
                NAMES.len(),
                params.len()
            )));
        }
        for ((name, t), (wn, ws)) in params.iter().zip(NAMES.iter().zip(&want)) {
            if name != *wn || t.shape() != ws.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "detector tensor {name} {:?}, expected {wn} {ws:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            video_dim,
            hidden,
            params,
        })
    }

    pub fn video_dim(&self) -> usize {
        self.video_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    fn logits_on_tape(&self, tape: &mut Tape, p: &[Var], video: &VideoFeatures) -> Result<Var> {
        if video.dim() != self.video_dim {
            return Err(Error::dim("score_clips", &[self.video_dim], &[video.dim()]));
        }
        let n = video.len();
        let h = self.hidden;
        let clips = tape.constant(video.as_tensor().clone());
        let xs: Vec<Var> = (0..n).map(|i| tape.row(clips, i)).collect::<Result<_>>()?;
        let zero = LstmState::zeros(h);
        let mut fwd = Vec::with_capacity(n);
        let mut s = StateVars::constant(tape, &zero)?;
        for &x in &xs {
            s = lstm_step(tape, &[(p[0], x)], p[1], p[2], s, h)?;
            fwd.push(s.h);
        }
        let mut bwd = vec![fwd[0]; n];
        let mut s = StateVars::constant(tape, &zero)?;
        for i in (0..n).rev() {
            s = lstm_step(tape, &[(p[3], xs[i])], p[4], p[5], s, h)?;
            bwd[i] = s.h;
        }
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            let both = tape.concat(&[fwd[i], bwd[i]])?;
            let z = tape.matmul(p[6], both)?;
            logits.push(tape.add(z, p[7])?);
        }
        tape.concat(&logits)
    }

    pub fn score_clips(&self, video: &VideoFeatures) -> Result<ClipScores> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let logits = self.logits_on_tape(&mut tape, &p, video)?;
        let scores: Vec<f64> = tape.value(logits).data().iter().map(|&z| sigmoid(z)).collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("clip scores".into()));
        }
        Ok(ClipScores(scores))
    }

    /// Summed per-clip cross-entropy against window labels, with gradients.
    pub fn loss_with_grads(
        &self,
        video: &VideoFeatures,
        window: HighlightWindow,
    ) -> Result<(f64, Vec<Tensor>)> {
        window.check(video.len())?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, true);
        let logits = self.logits_on_tape(&mut tape, &p, video)?;
        let loss = tape.sigmoid_bce(logits, window_targets(video.len(), window))?;
        let value = tape.value(loss).item();
        let g = tape.backward(loss)?;
        Ok((value, p.iter().map(|&v| g.get(v)).collect()))
    }

    /// Mean per-clip cross-entropy over a labeled set.
    pub fn mean_loss(&self, labeled: &[(&VideoFeatures, HighlightWindow)]) -> Result<f64> {
        if labeled.is_empty() {
            return Err(Error::Empty { op: "detector_loss" });
        }
        let mut total = 0.0;
        let mut clips = 0;
        for (v, w) in labeled {
            w.check(v.len())?;
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape, false);
            let logits = self.logits_on_tape(&mut tape, &p, v)?;
            let loss = tape.sigmoid_bce(logits, window_targets(v.len(), *w))?;
            total += tape.value(loss).item();
            clips += v.len();
        }
        Ok(total / clips as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(DETECTOR_KIND, self.params.clone());
        ck.set_meta("video_dim", &self.video_dim);
        ck.set_meta("hidden", &self.hidden);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.kind != DETECTOR_KIND {
            return Err(Error::Checkpoint(format!(
                "expected a detector checkpoint, found {:?}",
                ck.kind
            )));
        }
        Self::from_params(ck.meta_as("video_dim")?, ck.meta_as("hidden")?, ck.params.clone())
    }
}

fn window_targets(n: usize, w: HighlightWindow) -> Tensor {
    Tensor::from_parts(
        vec![n],
        (0..n).map(|i| if w.contains(i) { 1.0 } else { 0.0 }).collect(),
    )
}

/// Fits a fresh detector to `labeled` by minibatch per-clip cross-entropy.
/// Deterministic in `cfg.seed`.
pub fn train_detector(
    labeled: &[(&VideoFeatures, HighlightWindow)],
    cfg: &DetectorConfig,
) -> Result<HighlightDetector> {
    let Some((first, _)) = labeled.first() else {
        return Err(Error::Empty { op: "train_detector" });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let det = HighlightDetector::init(first.dim(), cfg.hidden, cfg.init_scale, &mut rng)?;
    continue_training(det, labeled, cfg, &mut rng)
}

/// Further epochs on an existing detector.
pub fn finetune_detector(
    det: HighlightDetector,
    labeled: &[(&VideoFeatures, HighlightWindow)],
    cfg: &DetectorConfig,
) -> Result<HighlightDetector> {
    if labeled.is_empty() {
        return Err(Error::Empty { op: "train_detector" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    continue_training(det, labeled, cfg, &mut rng)
}

fn continue_training(
    mut det: HighlightDetector,
    labeled: &[(&VideoFeatures, HighlightWindow)],
    cfg: &DetectorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<HighlightDetector> {
    for (v, w) in labeled {
        w.check(v.len())?;
    }
    let mut opt = OptimizerState::new(&det.params);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let per: Vec<(f64, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&i| det.loss_with_grads(labeled[i].0, labeled[i].1))
                .collect::<Result<_>>()?;
            let clips: usize = batch.iter().map(|&i| labeled[i].0.len()).sum();
            let mut grads = sum_grads(per.into_iter().map(|(_, g)| g), 1.0 / clips as f64);
            if let Some(c) = cfg.clip_norm {
                clip_gradients(&mut grads, c);
            }
            adam_step(&mut det.params, &grads, &mut opt, cfg.lr)?;
        }
    }
    Ok(det)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::Rng;

    fn video(rng: &mut ChaCha8Rng, n: usize, d: usize) -> VideoFeatures {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        VideoFeatures::from_clips(&rows).unwrap()
    }

    #[test]
    fn zero_weights_score_half() {
        let det = HighlightDetector::zeros(3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = det.score_clips(&video(&mut rng, 5, 3)).unwrap();
        assert_eq!(s.0, vec![0.5; 5]);
    }

    #[test]
    fn single_clip_video() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let det = HighlightDetector::init(3, 4, 0.5, &mut rng).unwrap();
        let s = det.score_clips(&video(&mut rng, 1, 3)).unwrap();
        assert_eq!(s.0.len(), 1);
        assert!(s.0[0] > 0.0 && s.0[0] < 1.0);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let det = HighlightDetector::zeros(3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(det.score_clips(&video(&mut rng, 4, 2)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let det = HighlightDetector::init(3, 2, 0.5, &mut rng).unwrap();
        let v = video(&mut rng, 4, 3);
        let w = HighlightWindow { start: 1, length: 2 };
        let report = grad_check(
            |tape, vars| {
                let logits = det.logits_on_tape(tape, vars, &v)?;
                tape.sigmoid_bce(logits, window_targets(4, w))
            },
            det.params.tensors(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn all_positive_window_drives_scores_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = video(&mut rng, 4, 3);
        let w = HighlightWindow { start: 0, length: 4 };
        let cfg = DetectorConfig {
            hidden: 4,
            epochs: 200,
            lr: 0.05,
            ..DetectorConfig::default()
        };
        let det = train_detector(&[(&v, w)], &cfg).unwrap();
        assert!(det.score_clips(&v).unwrap().0.iter().all(|&s| s > 0.95));
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let vids: Vec<VideoFeatures> = (0..6).map(|_| video(&mut rng, 6, 3)).collect();
        let labeled: Vec<(&VideoFeatures, HighlightWindow)> = vids
            .iter()
            .enumerate()
            .map(|(i, v)| (v, HighlightWindow { start: i % 4, length: 2 }))
            .collect();
        let cfg = DetectorConfig {
            hidden: 4,
            epochs: 20,
            batch_size: 3,
            ..DetectorConfig::default()
        };
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = HighlightDetector::init(3, 4, cfg.init_scale, &mut init_rng).unwrap();
        let a = train_detector(&labeled, &cfg).unwrap();
        let b = train_detector(&labeled, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.mean_loss(&labeled).unwrap() <= init.mean_loss(&labeled).unwrap());
        assert!(train_detector(&[], &cfg).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let det = HighlightDetector::init(3, 4, 0.1, &mut rng).unwrap();
        let ck = Checkpoint::from_bytes(&det.to_checkpoint().to_bytes()).unwrap();
        assert_eq!(HighlightDetector::from_checkpoint(&ck).unwrap(), det);
    }
}
