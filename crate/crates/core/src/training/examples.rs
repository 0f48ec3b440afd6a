use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::highlight::HighlightWindow;
use crate::model::{Sentence, SharedVideo, SpecialTokens, VideoFeatures};

/// Where a training sentence came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExampleSource {
    Paired,
    Augmented,
    Description,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExampleVideo {
    Real(SharedVideo),
    /// Stands for the model kind's dummy observation.
    Dummy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub video: ExampleVideo,
    pub sentence: Sentence,
    pub highlight: Option<HighlightWindow>,
    pub source: ExampleSource,
}

impl TrainingExample {
    pub fn paired(video: SharedVideo, sentence: Sentence, highlight: Option<HighlightWindow>) -> Result<Self> {
        if let Some(w) = highlight {
            w.check(video.len())?;
        }
        Ok(Self {
            video: ExampleVideo::Real(video),
            sentence,
            highlight,
            source: ExampleSource::Paired,
        })
    }

    /// A description attached to its own video.
    pub fn description_pair(video: SharedVideo, sentence: Sentence) -> Self {
        Self {
            video: ExampleVideo::Real(video),
            sentence,
            highlight: None,
            source: ExampleSource::Description,
        }
    }

    pub fn sentence_only(sentence: Sentence, source: ExampleSource) -> Result<Self> {
        if source == ExampleSource::Paired {
            return Err(Error::InvalidArgument(
                "a sentence-only example cannot have source paired".into(),
            ));
        }
        Ok(Self {
            video: ExampleVideo::Dummy,
            sentence,
            highlight: None,
            source,
        })
    }

    pub fn is_dummy(&self) -> bool {
        matches!(self.video, ExampleVideo::Dummy)
    }

    /// The observation the captioner sees: the highlight crop when one is
    /// assigned, the whole video otherwise, or `dummy`.
    pub fn observation<'a>(&'a self, dummy: &'a VideoFeatures) -> Result<Cow<'a, VideoFeatures>> {
        match &self.video {
            ExampleVideo::Dummy => Ok(Cow::Borrowed(dummy)),
            ExampleVideo::Real(v) => match self.highlight {
                Some(w) => Ok(Cow::Owned(w.crop(v)?)),
                None => Ok(Cow::Borrowed(v.as_ref())),
            },
        }
    }
}

/// Example indices of one minibatch with their padded target rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub members: Vec<usize>,
    /// Per member: content tokens, the terminator, then `PAD` up to the
    /// longest row in the batch.
    pub targets: Vec<Vec<usize>>,
    /// `true` through the terminator, `false` on padding.
    pub mask: Vec<Vec<bool>>,
}

/// Number of dummy-observation examples used per epoch: the count that makes
/// their share of the epoch equal `ratio`, capped by what is available.
pub fn augmented_per_epoch(n_real: usize, n_dummy: usize, ratio: f64) -> usize {
    if ratio <= 0.0 || n_dummy == 0 {
        0
    } else if ratio >= 1.0 {
        n_dummy
    } else {
        ((ratio / (1.0 - ratio) * n_real as f64).round() as usize).min(n_dummy)
    }
}

/// Deterministic epoch plan. Real-video and dummy examples are shuffled
/// separately, the first [`augmented_per_epoch`] dummy examples are spread
/// evenly through the real ones, and the sequence is cut into batches.
pub fn make_batches(
    examples: &[TrainingExample],
    cfg: &TrainConfig,
    epoch_seed: u64,
    tokens: SpecialTokens,
) -> Vec<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let (mut dummy, mut real): (Vec<usize>, Vec<usize>) =
        (0..examples.len()).partition(|&i| examples[i].is_dummy());
    real.shuffle(&mut rng);
    dummy.shuffle(&mut rng);
    dummy.truncate(augmented_per_epoch(real.len(), dummy.len(), cfg.augmentation_ratio));

    let total = real.len() + dummy.len();
    let mut order = Vec::with_capacity(total);
    let (mut ri, mut di) = (real.into_iter(), dummy.iter());
    let nd = di.len();
    for t in 0..total {
        if (t + 1) * nd / total > t * nd / total {
            order.push(*di.next().unwrap());
        } else {
            order.push(ri.next().unwrap());
        }
    }

    order
        .chunks(cfg.batch_size.max(1))
        .map(|members| {
            let width = members
                .iter()
                .map(|&i| examples[i].sentence.len() + 1)
                .max()
                .unwrap_or(0);
            let mut targets = Vec::with_capacity(members.len());
            let mut mask = Vec::with_capacity(members.len());
            for &i in members {
                let s = examples[i].sentence.tokens();
                let mut row = s.to_vec();
                row.push(tokens.eos);
                let mut m = vec![true; row.len()];
                row.resize(width, PAD);
                m.resize(width, false);
                targets.push(row);
                mask.push(m);
            }
            Batch {
                members: members.to_vec(),
                targets,
                mask,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn paired(n: usize) -> Vec<TrainingExample> {
        let v = Arc::new(VideoFeatures::from_clips(&[vec![1.0]]).unwrap());
        (0..n)
            .map(|i| TrainingExample::paired(v.clone(), Sentence::new(vec![4 + i % 3]), None).unwrap())
            .collect()
    }

    fn augmented(n: usize) -> Vec<TrainingExample> {
        (0..n)
            .map(|i| {
                TrainingExample::sentence_only(Sentence::new(vec![5; 1 + i % 4]), ExampleSource::Augmented)
                    .unwrap()
            })
            .collect()
    }

    fn cfg(ratio: f64, batch: usize) -> TrainConfig {
        TrainConfig {
            augmentation_ratio: ratio,
            batch_size: batch,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_ratio_excludes_augmented() {
        let mut ex = paired(20);
        ex.extend(augmented(20));
        let batches = make_batches(&ex, &cfg(0.0, 7), 1, SpecialTokens::default());
        let used: Vec<usize> = batches.iter().flat_map(|b| b.members.clone()).collect();
        assert_eq!(used.len(), 20);
        assert!(used.iter().all(|&i| !ex[i].is_dummy()));
    }

    #[test]
    fn half_ratio_uses_everything_once() {
        let mut ex = paired(100);
        ex.extend(augmented(100));
        let batches = make_batches(&ex, &cfg(0.5, 10), 9, SpecialTokens::default());
        let mut used: Vec<usize> = batches.iter().flat_map(|b| b.members.clone()).collect();
        used.sort();
        assert_eq!(used, (0..200).collect::<Vec<_>>());
        // Uniform interleave: every batch of 10 holds 5 augmented examples.
        for b in &batches {
            assert_eq!(b.members.iter().filter(|&&i| ex[i].is_dummy()).count(), 5);
        }
    }

    #[test]
    fn ratio_sets_expected_share() {
        let mut ex = paired(80);
        ex.extend(augmented(500));
        let batches = make_batches(&ex, &cfg(0.2, 10), 3, SpecialTokens::default());
        let used: Vec<usize> = batches.iter().flat_map(|b| b.members.clone()).collect();
        assert_eq!(used.len(), 100);
        assert_eq!(used.iter().filter(|&&i| ex[i].is_dummy()).count(), 20);
    }

    #[test]
    fn padding_and_mask() {
        let ex = augmented(4);
        let batches = make_batches(&ex, &cfg(1.0, 4), 0, SpecialTokens::default());
        let b = &batches[0];
        for (k, &i) in b.members.iter().enumerate() {
            let n = ex[i].sentence.len();
            assert_eq!(b.targets[k].len(), 5);
            assert_eq!(b.targets[k][n], 1);
            assert_eq!(b.mask[k].iter().filter(|&&m| m).count(), n + 1);
            assert!(b.targets[k][n + 1..].iter().all(|&t| t == PAD));
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let mut ex = paired(30);
        ex.extend(augmented(30));
        let a = make_batches(&ex, &cfg(0.3, 4), 5, SpecialTokens::default());
        assert_eq!(a, make_batches(&ex, &cfg(0.3, 4), 5, SpecialTokens::default()));
        assert_ne!(a, make_batches(&ex, &cfg(0.3, 4), 6, SpecialTokens::default()));
    }

    #[test]
    fn sentence_only_cannot_be_paired() {
        assert!(TrainingExample::sentence_only(Sentence::new(vec![4]), ExampleSource::Paired).is_err());
    }
}
