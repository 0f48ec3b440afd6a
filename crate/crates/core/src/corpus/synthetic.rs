//! Planted-highlight corpus generator.
//!
//! Every video is a sequence of clip vectors. A window of `window_length`
//! clips spells out the title: the window is cut into one contiguous segment
//! per title word and each clip in a segment is that word's pattern vector
//! plus Gaussian noise. Clips outside the window are pure noise. The planted
//! window is the ground-truth highlight.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CorpusRecord, Split};
use crate::error::{Error, Result};
use crate::highlight::HighlightWindow;
use crate::kv;
use crate::model::VideoFeatures;
use crate::numerics::Tensor;

/// Parameters of the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    pub clips_per_video: usize,
    pub window_length: usize,
    pub vocab_size: usize,
    pub title_min_len: usize,
    pub title_max_len: usize,
    pub noise: f64,
    pub d_v: usize,
    pub seed: u64,
    /// Fraction of training videos whose highlight is written as a label.
    pub labeled_fraction: f64,
    /// If non-zero, no word appears in more than this many training titles.
    pub max_word_titles: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Upper bound on descriptions per video (at least one is drawn).
    pub max_descriptions: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_videos: 200,
            clips_per_video: 30,
            window_length: 8,
            vocab_size: 30,
            title_min_len: 3,
            title_max_len: 5,
            noise: 0.1,
            d_v: 32,
            seed: 7,
            labeled_fraction: 0.142,
            max_word_titles: 0,
            train_fraction: 0.8,
            val_fraction: 0.1,
            max_descriptions: 3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(format!("synthetic spec: {m}")));
        if self.n_videos == 0 || self.clips_per_video == 0 || self.window_length == 0 {
            return fail("counts must be positive");
        }
        if self.window_length > self.clips_per_video {
            return fail("window_length exceeds clips_per_video");
        }
        if self.title_min_len == 0 || self.title_min_len > self.title_max_len {
            return fail("bad title length range");
        }
        if self.vocab_size < self.title_max_len {
            return fail("vocab_size smaller than title_max_len");
        }
        if self.title_max_len > self.window_length {
            return fail("title_max_len exceeds window_length");
        }
        if self.d_v == 0 || !(self.noise >= 0.0) {
            return fail("d_v must be positive and noise non-negative");
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction)
            || self.train_fraction < 0.0
            || self.val_fraction < 0.0
            || self.train_fraction + self.val_fraction > 1.0
        {
            return fail("fractions out of range");
        }
        Ok(())
    }

    /// Reads `key = value` lines; keys are the field names.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut s = Self::default();
        for e in kv::parse(text, path)? {
            match e.key.as_str() {
                "n_videos" => s.n_videos = kv::value(&e, path)?,
                "clips_per_video" => s.clips_per_video = kv::value(&e, path)?,
                "window_length" => s.window_length = kv::value(&e, path)?,
                "vocab_size" => s.vocab_size = kv::value(&e, path)?,
                "title_min_len" => s.title_min_len = kv::value(&e, path)?,
                "title_max_len" => s.title_max_len = kv::value(&e, path)?,
                "noise" => s.noise = kv::value(&e, path)?,
                "d_v" => s.d_v = kv::value(&e, path)?,
                "seed" => s.seed = kv::value(&e, path)?,
                "labeled_fraction" => s.labeled_fraction = kv::value(&e, path)?,
                "max_word_titles" => s.max_word_titles = kv::value(&e, path)?,
                "train_fraction" => s.train_fraction = kv::value(&e, path)?,
                "val_fraction" => s.val_fraction = kv::value(&e, path)?,
                "max_descriptions" => s.max_descriptions = kv::value(&e, path)?,
                _ => return Err(kv::unknown_key(&e, path)),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "n_videos = {}\nclips_per_video = {}\nwindow_length = {}\nvocab_size = {}\n\
             title_min_len = {}\ntitle_max_len = {}\nnoise = {}\nd_v = {}\nseed = {}\n\
             labeled_fraction = {}\nmax_word_titles = {}\ntrain_fraction = {}\n\
             val_fraction = {}\nmax_descriptions = {}\n",
            self.n_videos,
            self.clips_per_video,
            self.window_length,
            self.vocab_size,
            self.title_min_len,
            self.title_max_len,
            self.noise,
            self.d_v,
            self.seed,
            self.labeled_fraction,
            self.max_word_titles,
            self.train_fraction,
            self.val_fraction,
            self.max_descriptions,
        )
    }

    pub fn words(&self) -> Vec<String> {
        (0..self.vocab_size).map(|i| format!("w{i}")).collect()
    }
}

/// Generated records plus the ground truth needed to check them.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub records: Vec<CorpusRecord>,
    /// Planted window of every record, labeled or not.
    pub planted: Vec<HighlightWindow>,
    pub words: Vec<String>,
    /// One pattern vector per word.
    pub patterns: Vec<Vec<f64>>,
}

/// Mutually orthonormal when `count <= dim`, otherwise random unit vectors.
fn make_patterns(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
        if count <= dim {
            for u in &out {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= dot * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        out.push(v.iter().map(|a| a / norm).collect());
    }
    out
}

fn sample_title(
    spec: &SyntheticSpec,
    usage: Option<&mut Vec<usize>>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let len = rng.random_range(spec.title_min_len..=spec.title_max_len);
    let mut pool: Vec<usize> = match &usage {
        Some(u) if spec.max_word_titles > 0 => (0..spec.vocab_size)
            .filter(|&w| u[w] < spec.max_word_titles)
            .collect(),
        _ => (0..spec.vocab_size).collect(),
    };
    if pool.len() < len {
        return Err(Error::InvalidArgument(format!(
            "vocabulary of {} cannot keep every word in at most {} training titles",
            spec.vocab_size, spec.max_word_titles
        )));
    }
    pool.shuffle(rng);
    pool.truncate(len);
    if let Some(u) = usage {
        for &w in &pool {
            u[w] += 1;
        }
    }
    Ok(pool)
}

fn words_to_text(words: &[String], title: &[usize]) -> String {
    title.iter().map(|&w| words[w].as_str()).collect::<Vec<_>>().join(" ")
}

/// Deterministic in `spec.seed`; feature values are rounded to `f32`
/// precision so that writing and re-loading the corpus is lossless.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let words = spec.words();
    let patterns = make_patterns(spec.vocab_size, spec.d_v, &mut rng);

    let n = spec.n_videos;
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    let n_val = ((spec.val_fraction * n as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    let n_labeled = (spec.labeled_fraction * n_train as f64).round() as usize;

    let mut usage = vec![0usize; spec.vocab_size];
    let mut records = Vec::with_capacity(n);
    let mut planted = Vec::with_capacity(n);
    let mut train_seen = 0;
    for (i, &split) in splits.iter().enumerate() {
        let title = sample_title(
            spec,
            (split == Split::Train).then_some(&mut usage),
            &mut rng,
        )?;
        let start = rng.random_range(0..=spec.clips_per_video - spec.window_length);
        let window = HighlightWindow {
            start,
            length: spec.window_length,
        };
        let mut data = Vec::with_capacity(spec.clips_per_video * spec.d_v);
        for k in 0..spec.clips_per_video {
            let base = if window.contains(k) {
                let seg = (k - start) * title.len() / spec.window_length;
                Some(&patterns[title[seg]])
            } else {
                None
            };
            for d in 0..spec.d_v {
                let signal = base.map_or(0.0, |p| p[d]);
                let v = signal + noise.sample(&mut rng);
                data.push(v as f32 as f64);
            }
        }
        let n_desc = rng.random_range(1..=spec.max_descriptions.max(1));
        let descriptions = (0..n_desc)
            .map(|_| sample_title(spec, None, &mut rng).map(|t| words_to_text(&words, &t)))
            .collect::<Result<Vec<_>>>()?;
        let labeled = match split {
            Split::Train => {
                train_seen += 1;
                train_seen <= n_labeled
            }
            Split::Val | Split::Test => true,
        };
        records.push(CorpusRecord {
            id: format!("syn{i:04}"),
            video: Arc::new(VideoFeatures::new(Tensor::matrix(
                spec.clips_per_video,
                spec.d_v,
                data,
            )?)?),
            title: words_to_text(&words, &title),
            descriptions,
            highlight: labeled.then_some(window),
            split,
        });
        planted.push(window);
    }
    Ok(SyntheticCorpus {
        records,
        planted,
        words,
        patterns,
    })
}

/// Sentence-only samples from the title distribution of `spec`.
pub fn sample_sentences(spec: &SyntheticSpec, count: usize, seed: u64) -> Result<Vec<String>> {
    spec.validate()?;
    let words = spec.words();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| sample_title(spec, None, &mut rng).map(|t| words_to_text(&words, &t)))
        .collect()
}

/// Random Gaussian word vectors for every synthetic word.
pub fn synthetic_embeddings(spec: &SyntheticSpec, dim: usize, seed: u64) -> Vec<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    spec.words()
        .into_iter()
        .map(|w| {
            let v = (0..dim).map(|_| normal.sample(&mut rng) as f32 as f64).collect();
            (w, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use std::collections::HashMap;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_videos: 20,
            clips_per_video: 12,
            window_length: 6,
            vocab_size: 10,
            d_v: 16,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn noiseless_window_equals_patterns() {
        let spec = SyntheticSpec {
            noise: 0.0,
            ..small()
        };
        let c = generate_synthetic(&spec).unwrap();
        for (r, w) in c.records.iter().zip(&c.planted) {
            let title: Vec<usize> = tokenize(&r.title)
                .iter()
                .map(|t| t[1..].parse().unwrap())
                .collect();
            for k in 0..spec.clips_per_video {
                let clip = r.video.clip(k);
                if w.contains(k) {
                    let seg = (k - w.start) * title.len() / w.length;
                    let p = &c.patterns[title[seg]];
                    for (a, b) in clip.iter().zip(p) {
                        assert_eq!(*a, *b as f32 as f64);
                    }
                } else {
                    assert!(clip.iter().all(|v| *v == 0.0));
                }
            }
        }
    }

    #[test]
    fn patterns_orthonormal_when_they_fit() {
        let c = generate_synthetic(&small()).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let dot: f64 = c.patterns[i].iter().zip(&c.patterns[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bitwise_reproducible() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.records, b.records);
        let other = generate_synthetic(&SyntheticSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn default_split_and_labels() {
        let c = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let count = |s| c.records.iter().filter(|r| r.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (160, 20, 20));
        let labeled_train = c
            .records
            .iter()
            .filter(|r| r.split == Split::Train && r.highlight.is_some())
            .count();
        assert_eq!(labeled_train, 23);
        assert!(c
            .records
            .iter()
            .filter(|r| r.split != Split::Train)
            .all(|r| r.highlight.is_some()));
    }

    #[test]
    fn word_usage_cap_holds_on_training_titles() {
        let spec = SyntheticSpec {
            n_videos: 60,
            vocab_size: 200,
            max_word_titles: 2,
            clips_per_video: 8,
            window_length: 8,
            ..SyntheticSpec::default()
        };
        let c = generate_synthetic(&spec).unwrap();
        let mut usage: HashMap<String, usize> = HashMap::new();
        for r in c.records.iter().filter(|r| r.split == Split::Train) {
            let mut toks = tokenize(&r.title);
            toks.dedup();
            for t in toks {
                *usage.entry(t).or_default() += 1;
            }
        }
        assert!(usage.values().all(|&u| u <= 2));
    }

    #[test]
    fn spec_file_round_trip() {
        let spec = SyntheticSpec {
            seed: 99,
            noise: 0.25,
            ..SyntheticSpec::default()
        };
        let back = SyntheticSpec::parse(&spec.to_kv(), Path::new("s")).unwrap();
        assert_eq!(back, spec);
        assert!(SyntheticSpec::parse("bogus = 1", Path::new("s")).is_err());
        assert!(SyntheticSpec::parse("window_length = 40", Path::new("s")).is_err());
    }
}
