//! Caption scores: corpus BLEU@1-4, tf-idf CIDEr and an exact-match METEOR
//! variant. Inputs are raw strings tokenized with [`crate::corpus::tokenize`];
//! each candidate has a single reference.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::tokenize;
use crate::error::{Error, Result};

/// Count of every n-gram of one order.
pub type NGramCounts<'a> = HashMap<&'a [String], usize>;

pub fn ngrams(tokens: &[String], n: usize) -> NGramCounts<'_> {
    let mut out = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn tokenized<S: AsRef<str>>(op: &'static str, cands: &[S], refs: &[S]) -> Result<(Vec<Vec<String>>, Vec<Vec<String>>)> {
    if cands.is_empty() {
        return Err(Error::Empty { op });
    }
    if cands.len() != refs.len() {
        return Err(Error::dim(op, &[cands.len()], &[refs.len()]));
    }
    let t = |xs: &[S]| xs.iter().map(|s| tokenize(s.as_ref())).collect();
    Ok((t(cands), t(refs)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScores {
    /// `scores[k]` is BLEU@(k+1).
    pub scores: Vec<f64>,
    /// Corpus modified n-gram precision per order.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
}

/// Corpus-level BLEU with clipped counts and brevity penalty
/// `exp(1 - r/c)` when `c < r`. An order with no candidate n-grams has
/// precision 0, and any zero precision makes the score 0.
pub fn bleu<S: AsRef<str>>(candidates: &[S], references: &[S], max_n: usize) -> Result<BleuScores> {
    let (cands, refs) = tokenized("bleu", candidates, references)?;
    if max_n == 0 {
        return Err(Error::InvalidArgument("bleu: max_n must be >= 1".into()));
    }
    let mut precisions = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let (mut clipped, mut total) = (0usize, 0usize);
        for (c, r) in cands.iter().zip(&refs) {
            let rc = ngrams(r, n);
            for (g, k) in ngrams(c, n) {
                clipped += k.min(rc.get(g).copied().unwrap_or(0));
                total += k;
            }
        }
        precisions.push(if total == 0 { 0.0 } else { clipped as f64 / total as f64 });
    }
    let c: usize = cands.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let brevity_penalty = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let mut scores = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for (k, &p) in precisions.iter().enumerate() {
        zero |= p == 0.0;
        log_sum += if p > 0.0 { p.ln() } else { 0.0 };
        scores.push(if zero || brevity_penalty == 0.0 {
            0.0
        } else {
            brevity_penalty * (log_sum / (k + 1) as f64).exp()
        });
    }
    Ok(BleuScores {
        scores,
        precisions,
        brevity_penalty,
    })
}

fn tfidf<'a>(counts: &NGramCounts<'a>, idf: &dyn Fn(&[String]) -> f64) -> Vec<(&'a [String], f64)> {
    let total: usize = counts.values().sum();
    let mut v: Vec<(&[String], f64)> = counts
        .iter()
        .map(|(g, k)| (*g, *k as f64 / total as f64 * idf(g)))
        .collect();
    v.sort_by(|a, b| a.0.cmp(b.0));
    v
}

/// Basic tf-idf cosine CIDEr: per order n = 1..4 the candidate and its
/// reference become tf-idf vectors with idf `ln(N / max(1, df))` over the N
/// references; item score is the mean cosine over orders (0 for a zero
/// vector) and the corpus score is the mean over items.
pub fn cider<S: AsRef<str>>(candidates: &[S], references: &[S]) -> Result<f64> {
    let (cands, refs) = tokenized("cider", candidates, references)?;
    let n_docs = refs.len() as f64;
    let mut item_scores = vec![0.0; cands.len()];
    for n in 1..=4 {
        let ref_counts: Vec<NGramCounts> = refs.iter().map(|r| ngrams(r, n)).collect();
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for rc in &ref_counts {
            for g in rc.keys() {
                *df.entry(*g).or_insert(0) += 1;
            }
        }
        let idf = |g: &[String]| (n_docs / df.get(g).copied().unwrap_or(0).max(1) as f64).ln();
        for (i, c) in cands.iter().enumerate() {
            let cc = ngrams(c, n);
            let rc = &ref_counts[i];
            let cv = tfidf(&cc, &idf);
            let rv = tfidf(rc, &idf);
            let norm = |v: &[(&[String], f64)]| v.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
            let (nc, nr) = (norm(&cv), norm(&rv));
            if nc == 0.0 || nr == 0.0 {
                continue;
            }
            let rmap: HashMap<&[String], f64> = rv.iter().copied().collect();
            let dot: f64 = cv.iter().map(|(g, w)| w * rmap.get(g).copied().unwrap_or(0.0)).sum();
            item_scores[i] += dot / (nc * nr) / 4.0;
        }
    }
    Ok(item_scores.iter().sum::<f64>() / item_scores.len() as f64)
}

/// Exact-token alignment of one candidate/reference pair: each candidate
/// token, left to right, takes the leftmost unused equal reference token.
/// Returns the reference position of every candidate token (or `None`).
pub fn align(cand: &[String], reference: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    cand.iter()
        .map(|t| {
            let j = (0..reference.len()).find(|&j| !used[j] && reference[j] == *t)?;
            used[j] = true;
            Some(j)
        })
        .collect()
}

/// METEOR-style score of one pair with exact matching only.
pub fn meteor_pair(cand: &[String], reference: &[String]) -> f64 {
    let a = align(cand, reference);
    let matches = a.iter().flatten().count();
    if matches == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for m in &a {
        match (*m, prev) {
            (Some(j), Some(p)) if j == p + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *m;
    }
    let p = matches as f64 / cand.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    f * (1.0 - penalty)
}

/// Mean [`meteor_pair`] over the corpus.
pub fn meteor_lite<S: AsRef<str>>(candidates: &[S], references: &[S]) -> Result<f64> {
    let (cands, refs) = tokenized("meteor_lite", candidates, references)?;
    let total: f64 = cands.iter().zip(&refs).map(|(c, r)| meteor_pair(c, r)).sum();
    Ok(total / cands.len() as f64)
}

/// All scores in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub cider: f64,
}

impl ScoreReport {
    pub fn compute<S: AsRef<str>>(candidates: &[S], references: &[S]) -> Result<Self> {
        let b = bleu(candidates, references, 4)?;
        let report = Self {
            bleu1: b.scores[0],
            bleu2: b.scores[1],
            bleu3: b.scores[2],
            bleu4: b.scores[3],
            meteor: meteor_lite(candidates, references)?,
            cider: cider(candidates, references)?,
        };
        if report.fields().iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite("score report".into()));
        }
        Ok(report)
    }

    pub fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("bleu1", self.bleu1),
            ("bleu2", self.bleu2),
            ("bleu3", self.bleu3),
            ("bleu4", self.bleu4),
            ("meteor", self.meteor),
            ("cider", self.cider),
        ]
    }

    /// `key = value` lines in percent, one decimal.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            writeln!(s, "{k} = {:.1}", 100.0 * v).unwrap();
        }
        s
    }

    /// One line of `key=value` pairs with raw fractions.
    pub fn to_line(&self) -> String {
        self.fields()
            .iter()
            .map(|(k, v)| format!("{k}={v:.6}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
