//! Sentence-only training examples: retrieval by mean-embedding cosine
//! similarity and packaging with the dummy observation.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{tokenize, Vocabulary};
use crate::error::{Error, Result};
use crate::training::{ExampleSource, TrainingExample};

/// Function words ignored when embedding a sentence.
pub const STOP_WORDS: [&str; 50] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "at", "by", "for", "with", "about", "to",
    "from", "in", "on", "into", "over", "under", "up", "down", "out", "off", "is", "are", "was",
    "were", "be", "been", "am", "it", "its", "this", "that", "these", "those", "i", "you", "he",
    "she", "we", "they", "my", "your", "his", "her", "our", "their", "so",
];

/// Word vectors keyed by lowercased word.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Later duplicates of a case-folded key replace earlier ones.
    pub fn from_entries(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map(|e| e.1.len()).ok_or(Error::Empty { op: "embedding_table" })?;
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        let mut vectors = HashMap::with_capacity(entries.len());
        for (w, v) in entries {
            if v.len() != dim {
                return Err(Error::dim("embedding_table", &[dim], &[v.len()]));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of {w:?}")));
            }
            vectors.insert(w.to_lowercase(), v);
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Text form: a `count dim` header, then `word v1 v2 ...` per line.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|x| x.parse().map_err(|_| bad(1, format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [count, dim] = h[..] else {
            return Err(bad(1, "header must be `count dim`".into()));
        };
        let mut entries = Vec::with_capacity(count);
        for (i, line) in lines {
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap().to_string();
            let v: Vec<f64> = parts
                .map(|x| x.parse().map_err(|_| bad(i + 1, format!("bad value {x:?}"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(bad(i + 1, format!("expected {dim} values, got {}", v.len())));
            }
            entries.push((word, v));
        }
        if entries.len() != count {
            return Err(bad(1, format!("header says {count} words, found {}", entries.len())));
        }
        Self::from_entries(entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path)
    }

    /// Text form with words sorted; values use shortest round-trip notation.
    pub fn to_text(&self) -> String {
        let mut words: Vec<&String> = self.vectors.keys().collect();
        words.sort();
        let mut s = format!("{} {}\n", words.len(), self.dim);
        for w in words {
            s.push_str(w);
            for v in &self.vectors[w] {
                write!(s, " {v:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Deduplicated candidate sentences kept in sorted order, so results do not
/// depend on the order sentences were supplied in.
#[derive(Clone, Debug, PartialEq)]
pub struct SentencePool {
    sentences: Vec<String>,
    tokens: Vec<Vec<String>>,
}

impl SentencePool {
    pub fn new<S: AsRef<str>>(sentences: &[S]) -> Self {
        let set: BTreeSet<String> = sentences
            .iter()
            .map(|s| s.as_ref().trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let sentences: Vec<String> = set.into_iter().collect();
        let tokens = sentences.iter().map(|s| tokenize(s)).collect();
        Self { sentences, tokens }
    }

    /// One sentence per line.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(&text.lines().collect::<Vec<_>>()))
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn tokens(&self) -> &[Vec<String>] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

fn feature_of_tokens(tokens: &[String], table: &EmbeddingTable, stop: &[&str], raw: &str) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; table.dim()];
    let mut used = 0;
    for t in tokens {
        if stop.contains(&t.as_str()) {
            continue;
        }
        if let Some(v) = table.get(t) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Unembeddable(raw.to_string()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / used as f64).collect();
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Unembeddable(raw.to_string()));
    }
    Ok(mean.iter().map(|x| x / norm).collect())
}

/// Unit-normalized mean embedding of the non-stop, in-table tokens.
pub fn sentence_feature(sentence: &str, table: &EmbeddingTable, stop: &[&str]) -> Result<Vec<f64>> {
    feature_of_tokens(&tokenize(sentence), table, stop, sentence)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Retrieval {
    /// Sampled sentences in pool order.
    pub sentences: Vec<String>,
    /// Every pool sentence above the threshold for some query, in pool order.
    pub eligible: Vec<String>,
    pub warnings: Vec<String>,
}

/// Pool sentences whose similarity to at least one query is strictly above
/// `threshold`, subsampled uniformly without replacement to `target_n`.
/// Queries and pool sentences that cannot be embedded are skipped.
pub fn retrieve_augmentations<S: AsRef<str> + Sync>(
    queries: &[S],
    pool: &SentencePool,
    table: &EmbeddingTable,
    threshold: f64,
    target_n: usize,
    seed: u64,
) -> Result<Retrieval> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [-1, 1]")));
    }
    let mut warnings = Vec::new();
    if pool.is_empty() {
        warnings.push("sentence pool is empty".to_string());
        return Ok(Retrieval {
            sentences: Vec::new(),
            eligible: Vec::new(),
            warnings,
        });
    }
    let q_feats: Vec<Vec<f64>> = queries
        .par_iter()
        .filter_map(|q| sentence_feature(q.as_ref(), table, &STOP_WORDS).ok())
        .collect();
    let skipped = queries.len() - q_feats.len();
    if skipped > 0 {
        warnings.push(format!("{skipped} unembeddable queries skipped"));
    }
    let flags: Vec<Option<bool>> = pool
        .tokens
        .par_iter()
        .zip(pool.sentences.par_iter())
        .map(|(t, raw)| {
            let f = feature_of_tokens(t, table, &STOP_WORDS, raw).ok()?;
            Some(q_feats.iter().any(|q| cosine(q, &f) > threshold))
        })
        .collect();
    let skipped = flags.iter().filter(|f| f.is_none()).count();
    if skipped > 0 {
        warnings.push(format!("{skipped} unembeddable pool sentences skipped"));
    }
    let eligible: Vec<String> = flags
        .iter()
        .zip(&pool.sentences)
        .filter(|(f, _)| **f == Some(true))
        .map(|(_, s)| s.clone())
        .collect();
    let sentences = if eligible.len() <= target_n {
        eligible.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, eligible.len(), target_n).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| eligible[i].clone()).collect()
    };
    Ok(Retrieval {
        sentences,
        eligible,
        warnings,
    })
}

/// Wraps sentences as dummy-observation examples tagged with `source`.
/// Out-of-vocabulary words become the unknown token; sentences with no
/// tokens are dropped.
pub fn attach_dummy<S: AsRef<str>>(
    sentences: &[S],
    vocab: &Vocabulary,
    source: ExampleSource,
) -> Result<Vec<TrainingExample>> {
    sentences
        .iter()
        .map(|s| vocab.encode(s.as_ref()))
        .filter(|s| !s.is_empty())
        .map(|s| TrainingExample::sentence_only(s, source))
        .collect()
}
