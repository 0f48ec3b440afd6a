//! Named training configurations, one per row of the comparison table, and
//! the pipeline that turns corpus records into a trained variant.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    labeled_map, train_captioner, train_highlight_sensitive, Bootstrap, ExampleSource, HlSetup,
    HlVideo, IterationLog, TrainConfig, TrainingExample,
};
use crate::augmentation::attach_dummy;
use crate::corpus::{split_records, CorpusRecord, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::highlight::{detect_window, HighlightDetector, HighlightWindow, MeanAp};
use crate::model::{CaptionModel, ModelDims, ModelKind, VideoFeatures};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Vanilla,
    VanillaGtHl,
    Hl0,
    Hl1,
    Hl,
    VanillaDesc,
    DescAug,
    WebAug,
    HlWebAug,
}

/// How highlight windows enter training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HighlightMode {
    /// Whole videos.
    Off,
    /// Alternating procedure bootstrapped from a detector trained on labels.
    Supervised,
    /// Alternating procedure bootstrapped from a full-video model; labels unused.
    Unsupervised,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescriptionMode {
    Off,
    /// Extra titles attached to their own video.
    Paired,
    /// Sentence-only examples with the dummy observation.
    Augmented,
}

/// Which part of a test video the captioner sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestWindow {
    Full,
    GroundTruth,
    Detector,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariantSpec {
    pub variant: Variant,
    /// Command-line name.
    pub name: &'static str,
    /// Row label in result tables.
    pub label: &'static str,
    pub highlight: HighlightMode,
    /// Overrides the configured alternation cap.
    pub iteration_cap: Option<usize>,
    pub descriptions: DescriptionMode,
    pub web_augmentation: bool,
    /// Train the full-video augmented model first and finetune it with
    /// highlight windows.
    pub pretrain: bool,
    pub test_window: TestWindow,
}

const fn spec(variant: Variant, name: &'static str, label: &'static str) -> VariantSpec {
    VariantSpec {
        variant,
        name,
        label,
        highlight: HighlightMode::Off,
        iteration_cap: None,
        descriptions: DescriptionMode::Off,
        web_augmentation: false,
        pretrain: false,
        test_window: TestWindow::Full,
    }
}

pub const VARIANTS: [VariantSpec; 9] = [
    spec(Variant::Vanilla, "vanilla", "Vanilla"),
    VariantSpec {
        test_window: TestWindow::GroundTruth,
        ..spec(Variant::VanillaGtHl, "vanilla-gt-hl", "Vanilla-GT-HL")
    },
    VariantSpec {
        highlight: HighlightMode::Unsupervised,
        test_window: TestWindow::Detector,
        ..spec(Variant::Hl0, "hl-0", "HL-0")
    },
    VariantSpec {
        highlight: HighlightMode::Supervised,
        iteration_cap: Some(1),
        test_window: TestWindow::Detector,
        ..spec(Variant::Hl1, "hl-1", "HL-1")
    },
    VariantSpec {
        highlight: HighlightMode::Supervised,
        test_window: TestWindow::Detector,
        ..spec(Variant::Hl, "hl", "HL")
    },
    VariantSpec {
        descriptions: DescriptionMode::Paired,
        ..spec(Variant::VanillaDesc, "vanilla-desc", "Vanilla+Desc.")
    },
    VariantSpec {
        descriptions: DescriptionMode::Augmented,
        ..spec(Variant::DescAug, "desc-aug", "Desc. Aug.")
    },
    VariantSpec {
        web_augmentation: true,
        ..spec(Variant::WebAug, "web-aug", "Web Aug.")
    },
    VariantSpec {
        highlight: HighlightMode::Supervised,
        web_augmentation: true,
        pretrain: true,
        test_window: TestWindow::Detector,
        ..spec(Variant::HlWebAug, "hl-web-aug", "HL+Web Aug.")
    },
];

impl Variant {
    pub fn spec(self) -> &'static VariantSpec {
        VARIANTS.iter().find(|s| s.variant == self).expect("every variant is registered")
    }

    pub fn name(self) -> &'static str {
        self.spec().name
    }

    pub fn all() -> impl Iterator<Item = Variant> {
        VARIANTS.iter().map(|s| s.variant)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VARIANTS
            .iter()
            .find(|v| v.name == s)
            .map(|v| v.variant)
            .ok_or_else(|| {
                let names: Vec<&str> = VARIANTS.iter().map(|v| v.name).collect();
                Error::InvalidArgument(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Inputs shared by every variant.
pub struct VariantData<'a> {
    pub records: &'a [CorpusRecord],
    pub vocab: &'a Vocabulary,
    /// Retrieved sentence-only examples; required by web-augmented variants.
    pub web_sentences: &'a [String],
}

#[derive(Clone, Debug)]
pub struct VariantRun {
    pub variant: Variant,
    pub model: CaptionModel,
    pub detector: Option<HighlightDetector>,
    /// Final training windows by record id (highlight variants).
    pub assignments: Vec<(String, HighlightWindow, f64)>,
    /// Detector mAP on labeled validation and test videos, before the loop and
    /// after each iteration.
    pub detector_map: Vec<MeanAp>,
    /// Training log, one entry per line.
    pub log: Vec<String>,
}

impl VariantRun {
    /// What the captioner observes for `record` at test time.
    pub fn observation<'r>(&self, record: &'r CorpusRecord, length: usize) -> Result<Cow<'r, VideoFeatures>> {
        let video = record.video.as_ref();
        observe(self.variant.spec().test_window, self.detector.as_ref(), record, video, length)
    }
}

/// Test-time view of `record` under `mode`. Ground-truth mode falls back to
/// the whole video for unlabeled records.
pub fn observe<'r>(
    mode: TestWindow,
    detector: Option<&HighlightDetector>,
    record: &CorpusRecord,
    video: &'r VideoFeatures,
    length: usize,
) -> Result<Cow<'r, VideoFeatures>> {
    match mode {
        TestWindow::Full => Ok(Cow::Borrowed(video)),
        TestWindow::GroundTruth => match record.highlight {
            Some(w) => Ok(Cow::Owned(w.crop(video)?)),
            None => Ok(Cow::Borrowed(video)),
        },
        TestWindow::Detector => {
            let det = detector.ok_or_else(|| Error::InvalidArgument("variant needs a highlight detector".into()))?;
            let w = detect_window(&det.score_clips(video)?.0, length.min(video.len()))?;
            Ok(Cow::Owned(w.crop(video)?))
        }
    }
}

/// Freshly initialized captioner sized for the corpus and vocabulary.
pub fn init_model(kind: ModelKind, video_dim: usize, vocab: &Vocabulary, cfg: &TrainConfig) -> Result<CaptionModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    CaptionModel::init(
        kind,
        ModelDims::compact(video_dim, vocab.len(), cfg.hidden),
        vocab.special_tokens(),
        &mut rng,
    )
}

fn full_examples(records: &[&CorpusRecord], vocab: &Vocabulary) -> Result<Vec<TrainingExample>> {
    records
        .iter()
        .map(|r| TrainingExample::paired(r.video.clone(), vocab.encode(&r.title), None))
        .collect()
}

fn hl_videos(records: &[&CorpusRecord], vocab: &Vocabulary, use_labels: bool) -> Vec<HlVideo> {
    records
        .iter()
        .map(|r| HlVideo {
            id: r.id.clone(),
            video: r.video.clone(),
            sentence: vocab.encode(&r.title),
            label: if use_labels { r.highlight } else { None },
        })
        .collect()
}

fn epoch_lines(prefix: &str, log: &[super::EpochLog]) -> Vec<String> {
    log.iter().map(|e| format!("{prefix}{}", e.line())).collect()
}

/// Trains `variant` on the train split, selecting epochs on the validation
/// split.
pub fn run_variant(variant: Variant, kind: ModelKind, data: &VariantData<'_>, cfg: &TrainConfig) -> Result<VariantRun> {
    let spec = variant.spec();
    let mut cfg = cfg.clone();
    if let Some(cap) = spec.iteration_cap {
        cfg.iteration_cap = cap;
    }
    cfg.validate()?;
    let train = split_records(data.records, Split::Train);
    let val = split_records(data.records, Split::Val);
    let first = train.first().ok_or(Error::Empty { op: "run_variant" })?;
    let video_dim = first.video.dim();
    let vocab = data.vocab;

    let mut extra = Vec::new();
    match spec.descriptions {
        DescriptionMode::Off => {}
        DescriptionMode::Paired => {
            for r in &train {
                for d in &r.descriptions {
                    let s = vocab.encode(d);
                    if !s.is_empty() {
                        extra.push(TrainingExample::description_pair(r.video.clone(), s));
                    }
                }
            }
        }
        DescriptionMode::Augmented => {
            let descs: Vec<&str> = train.iter().flat_map(|r| r.descriptions.iter().map(String::as_str)).collect();
            extra.extend(attach_dummy(&descs, vocab, ExampleSource::Description)?);
        }
    }
    if spec.web_augmentation {
        if data.web_sentences.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "variant {} needs augmentation sentences",
                spec.name
            )));
        }
        extra.extend(attach_dummy(data.web_sentences, vocab, ExampleSource::Augmented)?);
    }

    let mut log = vec![format!(
        "variant {} model {} train {} val {} extra {}",
        spec.name,
        kind,
        train.len(),
        val.len(),
        extra.len()
    )];
    let init = init_model(kind, video_dim, vocab, &cfg)?;
    let mut full = full_examples(&train, vocab)?;
    full.extend_from_slice(&extra);
    let val_full = full_examples(&val, vocab)?;

    if spec.highlight == HighlightMode::Off {
        let out = train_captioner(&full, &val_full, init, &cfg, cfg.epochs)?;
        log.extend(epoch_lines("", &out.log));
        log.push(format!("best_epoch {} val_loss {:.6}", out.best_epoch, out.best_val_loss));
        return Ok(VariantRun {
            variant,
            model: out.model,
            detector: None,
            assignments: Vec::new(),
            detector_map: Vec::new(),
            log,
        });
    }

    let (start, pretrained, bootstrap) = match (spec.highlight, spec.pretrain) {
        (HighlightMode::Unsupervised, _) => {
            let seed_run = train_captioner(&full, &val_full, init.clone(), &cfg, cfg.epochs)?;
            log.extend(epoch_lines("bootstrap ", &seed_run.log));
            (init, false, Bootstrap::Model(seed_run.model))
        }
        (_, true) => {
            let pre = train_captioner(&full, &val_full, init, &cfg, cfg.epochs)?;
            log.extend(epoch_lines("pretrain ", &pre.log));
            (pre.model, true, Bootstrap::Detector)
        }
        _ => (init, false, Bootstrap::Detector),
    };
    let use_labels = spec.highlight == HighlightMode::Supervised;
    let hl_train = hl_videos(&train, vocab, use_labels);
    let hl_val = hl_videos(&val, vocab, false);
    let outcome = train_highlight_sensitive(
        HlSetup {
            train: &hl_train,
            val: &hl_val,
            extra: &extra,
            init: start,
            pretrained,
            bootstrap,
        },
        &cfg,
    )?;

    // Labeled held-out videos measure detector quality.
    let mut held_out = split_records(data.records, Split::Val);
    held_out.extend(split_records(data.records, Split::Test));
    let eval = hl_videos(&held_out, vocab, true);
    let mut maps = Vec::new();
    for det in &outcome.detectors {
        if let Some(m) = labeled_map(det, &eval)? {
            maps.push(m);
        }
    }
    for it in &outcome.iterations {
        log.extend(epoch_lines(&format!("iteration {} ", it.iteration), &it.epochs));
        log.push(IterationLog::line(it));
    }
    for (i, m) in maps.iter().enumerate() {
        log.push(format!("detector {i} map {:.6} evaluated {}", m.map, m.evaluated));
    }
    let assignments = hl_train
        .iter()
        .zip(&outcome.windows)
        .zip(&outcome.losses)
        .map(|((t, w), l)| (t.id.clone(), *w, *l))
        .collect();
    Ok(VariantRun {
        variant,
        model: outcome.model,
        detector: Some(outcome.detector),
        assignments,
        detector_map: maps,
        log,
    })
}
