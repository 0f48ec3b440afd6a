//! Alternating optimization of captioner parameters and highlight windows.

use rayon::prelude::*;

use super::{train_captioner, EpochLog, TrainConfig, TrainingExample};
use crate::error::{Error, Result};
use crate::highlight::{
    detect_window, detector_map, select_highlight_by_loss, train_detector,
    DetectorConfig, HighlightDetector, HighlightWindow, MeanAp,
};
use crate::model::{CaptionModel, Sentence, SharedVideo, VideoFeatures};

/// A training video with its title and optional ground-truth window.
#[derive(Clone, Debug, PartialEq)]
pub struct HlVideo {
    pub id: String,
    pub video: SharedVideo,
    pub sentence: Sentence,
    pub label: Option<HighlightWindow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reassignment {
    pub windows: Vec<HighlightWindow>,
    pub losses: Vec<f64>,
    pub old_total: f64,
    pub new_total: f64,
    pub changed: usize,
}

/// Re-selects every window by loss with the parameters fixed. Errors if the
/// summed loss increases, which exhaustive selection rules out.
pub fn reassign_highlights(
    model: &CaptionModel,
    items: &[(&VideoFeatures, &Sentence)],
    previous: &[HighlightWindow],
    length: usize,
) -> Result<Reassignment> {
    if items.len() != previous.len() {
        return Err(Error::dim("reassign_highlights", &[items.len()], &[previous.len()]));
    }
    let per: Vec<(HighlightWindow, f64, f64)> = items
        .par_iter()
        .zip(previous.par_iter())
        .map(|((v, s), old)| {
            let old_loss = model.sentence_nll(&old.crop(v)?, s)?;
            let (w, loss) = select_highlight_by_loss(model, v, s, length.min(v.len()))?;
            Ok((w, loss, old_loss))
        })
        .collect::<Result<_>>()?;
    let old_total: f64 = per.iter().map(|p| p.2).sum();
    let new_total: f64 = per.iter().map(|p| p.1).sum();
    if !(new_total <= old_total) {
        return Err(Error::Invariant(format!(
            "reassignment raised the total loss from {old_total} to {new_total}"
        )));
    }
    let changed = per.iter().zip(previous).filter(|(p, old)| p.0 != **old).count();
    Ok(Reassignment {
        windows: per.iter().map(|p| p.0).collect(),
        losses: per.iter().map(|p| p.1).collect(),
        old_total,
        new_total,
        changed,
    })
}

/// How the first windows are obtained.
#[derive(Clone, Debug)]
pub enum Bootstrap {
    /// Train a detector on the labeled training videos and use its windows.
    Detector,
    /// Select windows by loss under an already trained model; no labels used.
    Model(CaptionModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub epochs: Vec<EpochLog>,
    pub changed: usize,
    pub old_total: f64,
    pub new_total: f64,
}

impl IterationLog {
    pub fn line(&self) -> String {
        format!(
            "iteration {} changed {} total_loss_before {:.6} total_loss_after {:.6}",
            self.iteration, self.changed, self.old_total, self.new_total
        )
    }
}

#[derive(Clone, Debug)]
pub struct HlOutcome {
    pub model: CaptionModel,
    pub detector: HighlightDetector,
    /// Detector before the loop followed by the one retrained after each
    /// iteration.
    pub detectors: Vec<HighlightDetector>,
    pub windows: Vec<HighlightWindow>,
    pub losses: Vec<f64>,
    pub iterations: Vec<IterationLog>,
}

pub struct HlSetup<'a> {
    pub train: &'a [HlVideo],
    /// Validation videos; cropped with the current detector for selection.
    pub val: &'a [HlVideo],
    /// Sentence-only or description examples mixed into every round.
    pub extra: &'a [TrainingExample],
    pub init: CaptionModel,
    /// When set, the first round finetunes `init` instead of a full run.
    pub pretrained: bool,
    pub bootstrap: Bootstrap,
}

pub fn detector_config(cfg: &TrainConfig) -> DetectorConfig {
    DetectorConfig {
        hidden: cfg.detector_hidden,
        epochs: cfg.detector_epochs,
        lr: cfg.detector_lr,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        ..DetectorConfig::default()
    }
}

/// Windows picked by `det` for each video.
pub fn detector_windows(
    det: &HighlightDetector,
    videos: &[&VideoFeatures],
    length: usize,
) -> Result<Vec<HighlightWindow>> {
    videos
        .par_iter()
        .map(|v| detect_window(&det.score_clips(v)?.0, length.min(v.len())))
        .collect()
}

fn cropped(items: &[HlVideo], windows: &[HighlightWindow], extra: &[TrainingExample]) -> Result<Vec<TrainingExample>> {
    let mut out = items
        .iter()
        .zip(windows)
        .map(|(it, w)| TrainingExample::paired(it.video.clone(), it.sentence.clone(), Some(*w)))
        .collect::<Result<Vec<_>>>()?;
    out.extend_from_slice(extra);
    Ok(out)
}

/// Detector mAP on labeled videos, if any carry labels.
pub fn labeled_map(det: &HighlightDetector, items: &[HlVideo]) -> Result<Option<MeanAp>> {
    let labeled: Vec<(&VideoFeatures, HighlightWindow)> = items
        .iter()
        .filter_map(|it| it.label.map(|w| (it.video.as_ref(), w)))
        .collect();
    if labeled.is_empty() {
        return Ok(None);
    }
    detector_map(det, &labeled).map(Some)
}

/// Bootstrap windows, then up to `cfg.iteration_cap` rounds of: train (first
/// round) or finetune the captioner on the cropped windows, reassign windows
/// by loss, retrain the detector on the new windows (ground-truth labels kept
/// where they exist). Stops after a round that changes no window.
pub fn train_highlight_sensitive(setup: HlSetup<'_>, cfg: &TrainConfig) -> Result<HlOutcome> {
    cfg.validate()?;
    let HlSetup {
        train,
        val,
        extra,
        init,
        pretrained,
        bootstrap,
    } = setup;
    if train.is_empty() {
        return Err(Error::Empty { op: "train_highlight_sensitive" });
    }
    let length = cfg.window_length;
    let videos: Vec<&VideoFeatures> = train.iter().map(|t| t.video.as_ref()).collect();
    let det_cfg = detector_config(cfg);

    let (mut detector, mut windows) = match bootstrap {
        Bootstrap::Detector => {
            let labeled: Vec<(&VideoFeatures, HighlightWindow)> = train
                .iter()
                .filter_map(|t| t.label.map(|w| (t.video.as_ref(), w)))
                .collect();
            if labeled.is_empty() {
                return Err(Error::InvalidArgument(
                    "highlight-sensitive training needs labeled training videos".into(),
                ));
            }
            let det = train_detector(&labeled, &det_cfg)?;
            let w = detector_windows(&det, &videos, length)?;
            (det, w)
        }
        Bootstrap::Model(seed_model) => {
            let w = train
                .par_iter()
                .map(|t| {
                    select_highlight_by_loss(&seed_model, &t.video, &t.sentence, length.min(t.video.len()))
                        .map(|r| r.0)
                })
                .collect::<Result<Vec<_>>>()?;
            let pairs: Vec<(&VideoFeatures, HighlightWindow)> =
                videos.iter().copied().zip(w.iter().copied()).collect();
            (train_detector(&pairs, &det_cfg)?, w)
        }
    };

    let mut detectors = vec![detector.clone()];
    let mut model = init;
    let mut iterations = Vec::new();
    let mut losses = Vec::new();
    for iteration in 1..=cfg.iteration_cap {
        let examples = cropped(train, &windows, extra)?;
        let val_videos: Vec<&VideoFeatures> = val.iter().map(|v| v.video.as_ref()).collect();
        let val_windows = detector_windows(&detector, &val_videos, length)?;
        let val_examples = cropped(val, &val_windows, &[])?;
        let epochs = if iteration == 1 && !pretrained {
            cfg.epochs
        } else {
            cfg.finetune_epochs
        };
        let outcome = train_captioner(&examples, &val_examples, model, cfg, epochs)?;
        model = outcome.model;

        let items: Vec<(&VideoFeatures, &Sentence)> =
            train.iter().map(|t| (t.video.as_ref(), &t.sentence)).collect();
        let re = reassign_highlights(&model, &items, &windows, length)?;
        let entry = IterationLog {
            iteration,
            epochs: outcome.log,
            changed: re.changed,
            old_total: re.old_total,
            new_total: re.new_total,
        };
        log::info!("{}", entry.line());
        iterations.push(entry);
        windows = re.windows;
        losses = re.losses;

        let targets: Vec<(&VideoFeatures, HighlightWindow)> = train
            .iter()
            .zip(&windows)
            .map(|(t, w)| (t.video.as_ref(), t.label.unwrap_or(*w)))
            .collect();
        detector = train_detector(&targets, &det_cfg)?;
        detectors.push(detector.clone());
        if re.changed == 0 {
            break;
        }
    }
    Ok(HlOutcome {
        model,
        detector,
        detectors,
        windows,
        losses,
        iterations,
    })
}
