use std::cmp::Ordering;

use super::captioner::{CaptionModel, Runner};
use super::lstm::StateVars;
use super::{Sentence, VideoFeatures};
use crate::error::{Error, Result};
use crate::numerics::Tape;

/// Search strategy for the most probable title.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    /// Beam search keeping this many prefixes.
    Beam(usize),
}

impl Default for DecodeMode {
    fn default() -> Self {
        DecodeMode::Greedy
    }
}

/// A decoded title and the log-probability of the emitted sequence.
///
/// `log_prob` covers every emitted token, the terminator included when it
/// was emitted before `max_len` ran out.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub sentence: Sentence,
    pub log_prob: f64,
    pub terminated: bool,
}

struct Hyp {
    /// Emitted tokens, terminator included once finished.
    emitted: Vec<usize>,
    log_prob: f64,
    state: Option<StateVars>,
}

impl Hyp {
    fn finished(&self) -> bool {
        self.state.is_none()
    }
}

/// Higher log-probability first, then lexicographically smaller emissions.
fn rank(a: &Hyp, b: &Hyp) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.emitted.cmp(&b.emitted))
}

fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

impl CaptionModel {
    /// Approximates `argmax_S p(S | V)`; emits at most `max_len` tokens.
    pub fn decode_title(
        &self,
        video: &VideoFeatures,
        mode: DecodeMode,
        max_len: usize,
    ) -> Result<Decoded> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be >= 1".into()));
        }
        let mut tape = Tape::new();
        let mut run = Runner::new(self, &mut tape, false);
        run.load_video(video)?;
        match mode {
            DecodeMode::Greedy => greedy(self, &mut run, max_len),
            DecodeMode::Beam(width) => {
                if width == 0 {
                    return Err(Error::InvalidArgument("beam width must be >= 1".into()));
                }
                beam(self, &mut run, width, max_len)
            }
        }
    }
}

fn greedy(model: &CaptionModel, run: &mut Runner, max_len: usize) -> Result<Decoded> {
    let eos = model.tokens().eos;
    let mut state = run.initial()?;
    let mut prev = model.tokens().bos;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (dist, next) = run.step(prev, state)?;
        let dist = run.tape.value(dist).data();
        let w = argmax(dist);
        log_prob += dist[w].ln();
        if w == eos {
            return Ok(Decoded {
                sentence: Sentence::new(tokens),
                log_prob,
                terminated: true,
            });
        }
        tokens.push(w);
        state = next;
        prev = w;
    }
    Ok(Decoded {
        sentence: Sentence::new(tokens),
        log_prob,
        terminated: false,
    })
}

fn beam(model: &CaptionModel, run: &mut Runner, width: usize, max_len: usize) -> Result<Decoded> {
    let eos = model.tokens().eos;
    let bos = model.tokens().bos;
    let mut hyps = vec![Hyp {
        emitted: Vec::new(),
        log_prob: 0.0,
        state: Some(run.initial()?),
    }];
    for _ in 0..max_len {
        if hyps.iter().all(Hyp::finished) {
            break;
        }
        let mut candidates = Vec::new();
        for hyp in hyps {
            let Some(state) = hyp.state else {
                candidates.push(hyp);
                continue;
            };
            let prev = hyp.emitted.last().copied().unwrap_or(bos);
            let (dist, next) = run.step(prev, state)?;
            let dist = run.tape.value(dist).to_vec();
            for (w, p) in dist.iter().enumerate() {
                let mut emitted = hyp.emitted.clone();
                emitted.push(w);
                candidates.push(Hyp {
                    emitted,
                    log_prob: hyp.log_prob + p.ln(),
                    state: (w != eos).then_some(next),
                });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(width);
        hyps = candidates;
    }
    let best = hyps.into_iter().min_by(rank).expect("beam is never empty");
    let terminated = best.finished();
    let mut tokens = best.emitted;
    if terminated {
        tokens.pop();
    }
    Ok(Decoded {
        sentence: Sentence::new(tokens),
        log_prob: best.log_prob,
        terminated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelDims, ModelKind, SpecialTokens};
    use crate::numerics::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(vocab: usize) -> ModelDims {
        ModelDims {
            video_dim: 2,
            embed_dim: 3,
            hidden_dim: 4,
            attention_dim: 2,
            vocab_size: vocab,
        }
    }

    #[test]
    fn immediate_terminator_gives_empty_title() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = CaptionModel::init(ModelKind::S2vt, dims(4), SpecialTokens::default(), &mut rng).unwrap();
        m.params_mut()
            .set_named("out.b", Tensor::vector(vec![0.0, 50.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let v = VideoFeatures::constant(&[0.1, 0.2], 3).unwrap();
        for mode in [DecodeMode::Greedy, DecodeMode::Beam(3)] {
            let d = m.decode_title(&v, mode, 5).unwrap();
            assert!(d.sentence.is_empty());
            assert!(d.terminated);
        }
    }

    #[test]
    fn zero_width_or_length_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = CaptionModel::init(ModelKind::Sa, dims(4), SpecialTokens::default(), &mut rng).unwrap();
        let v = VideoFeatures::constant(&[0.1, 0.2], 3).unwrap();
        assert!(m.decode_title(&v, DecodeMode::Greedy, 0).is_err());
        assert!(m.decode_title(&v, DecodeMode::Beam(0), 3).is_err());
    }

    #[test]
    fn greedy_stops_at_max_len() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = CaptionModel::init(ModelKind::Sa, dims(4), SpecialTokens::default(), &mut rng).unwrap();
        m.params_mut()
            .set_named("out.b", Tensor::vector(vec![0.0, 0.0, 0.0, 40.0]).unwrap())
            .unwrap();
        let v = VideoFeatures::constant(&[0.1, 0.2], 2).unwrap();
        let d = m.decode_title(&v, DecodeMode::Greedy, 3).unwrap();
        assert_eq!(d.sentence.tokens(), &[3, 3, 3]);
        assert!(!d.terminated);
    }
}
