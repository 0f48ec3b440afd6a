//! Corpus records, vocabulary, clip pooling, on-disk formats and the
//! synthetic planted-highlight generator.

mod io;
mod pooling;
mod synthetic;
mod vocab;

pub use io::{load_corpus, read_blob, write_blob, write_corpus, LoadedCorpus, MANIFEST_MAGIC};
pub use pooling::{pool_clips, pool_frames, PoolingConfig};
pub use synthetic::{
    generate_synthetic, sample_sentences, synthetic_embeddings, SyntheticCorpus, SyntheticSpec,
};
pub use vocab::{build_vocab, Vocabulary, BOS, EOS, PAD, UNK};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::highlight::HighlightWindow;
use crate::model::SharedVideo;

/// Dataset partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// One video with its title, optional descriptions and optional highlight
/// label (in pooled clip indices).
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusRecord {
    pub id: String,
    pub video: SharedVideo,
    pub title: String,
    pub descriptions: Vec<String>,
    pub highlight: Option<HighlightWindow>,
    pub split: Split,
}

impl CorpusRecord {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Error::InvalidRecord {
            id: self.id.clone(),
            msg,
        };
        if self.title.trim().is_empty() {
            return Err(invalid("empty title".into()));
        }
        if let Some(w) = self.highlight {
            if w.length == 0 || w.end() > self.video.len() {
                return Err(invalid(format!(
                    "highlight {}+{} exceeds {} clips",
                    w.start,
                    w.length,
                    self.video.len()
                )));
            }
        }
        Ok(())
    }
}

/// Lowercases, splits punctuation into separate tokens, splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Records of one split, in corpus order.
pub fn split_records(records: &[CorpusRecord], split: Split) -> Vec<&CorpusRecord> {
    records.iter().filter(|r| r.split == split).collect()
}
