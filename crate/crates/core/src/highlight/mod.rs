//! Highlight windows, the clip-level detector, loss-driven window selection
//! and detection quality (AP / mAP).

mod assignments;
mod detector;

pub use assignments::{read_assignments, write_assignments, Assignment, ASSIGNMENTS_MAGIC};
pub use detector::{
    finetune_detector, train_detector, ClipScores, DetectorConfig, HighlightDetector,
    DETECTOR_KIND,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaptionModel, Sentence, VideoFeatures};

/// Contiguous clip range `start..start + length`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HighlightWindow {
    pub start: usize,
    pub length: usize,
}

impl HighlightWindow {
    pub fn new(start: usize, length: usize) -> Self {
        Self { start, length }
    }

    pub fn end(&self) -> usize {
        self.start + self.length
    }

    pub fn contains(&self, clip: usize) -> bool {
        clip >= self.start && clip < self.end()
    }

    /// Errors unless the window is non-empty and fits in `n` clips.
    pub fn check(&self, n: usize) -> Result<()> {
        if self.length == 0 || self.end() > n {
            return Err(Error::InvalidArgument(format!(
                "window {}+{} does not fit {} clips",
                self.start, self.length, n
            )));
        }
        Ok(())
    }

    /// Intersection over union of the two clip ranges.
    pub fn iou(&self, other: &HighlightWindow) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end().min(other.end());
        let inter = hi.saturating_sub(lo);
        let union = self.length + other.length - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Crops `video` to this window.
    pub fn crop(&self, video: &VideoFeatures) -> Result<VideoFeatures> {
        self.check(video.len())?;
        video.window(self.start, self.length)
    }
}

fn check_length(length: usize, n: usize) -> Result<()> {
    if length == 0 || length > n {
        return Err(Error::InvalidArgument(format!(
            "window length {length} not in 1..={n}"
        )));
    }
    Ok(())
}

/// Start maximizing the score sum over `length` consecutive clips; ties go to
/// the smallest start.
pub fn detect_window(scores: &[f64], length: usize) -> Result<HighlightWindow> {
    check_length(length, scores.len())?;
    let mut best = (0, f64::NEG_INFINITY);
    for start in 0..=scores.len() - length {
        let sum: f64 = scores[start..start + length].iter().sum();
        if sum > best.1 {
            best = (start, sum);
        }
    }
    Ok(HighlightWindow::new(best.0, length))
}

/// Teacher-forced loss of `sentence` for every window start.
pub fn window_losses(
    model: &CaptionModel,
    video: &VideoFeatures,
    sentence: &Sentence,
    length: usize,
) -> Result<Vec<f64>> {
    check_length(length, video.len())?;
    (0..=video.len() - length)
        .map(|s| model.sentence_nll(&video.window(s, length)?, sentence))
        .collect()
}

/// The window whose crop gives `sentence` the lowest loss, and that loss.
/// Ties go to the smallest start.
pub fn select_highlight_by_loss(
    model: &CaptionModel,
    video: &VideoFeatures,
    sentence: &Sentence,
    length: usize,
) -> Result<(HighlightWindow, f64)> {
    let losses = window_losses(model, video, sentence, length)?;
    let mut best = (0, losses[0]);
    for (s, &l) in losses.iter().enumerate().skip(1) {
        if l < best.1 {
            best = (s, l);
        }
    }
    Ok((HighlightWindow::new(best.0, length), best.1))
}

/// Per-clip binary labels of a window.
pub fn window_labels(n: usize, window: HighlightWindow) -> Vec<bool> {
    (0..n).map(|i| window.contains(i)).collect()
}

/// Non-interpolated average precision: mean over positives of precision at
/// the positive's rank, ranking by score descending with ties kept in input
/// order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("average_precision", &[scores.len()], &[labels.len()]));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("average_precision scores".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::InvalidArgument("average_precision: no positive labels".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Mean AP over videos; videos without positives are skipped and counted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanAp {
    pub map: f64,
    pub evaluated: usize,
    pub excluded: usize,
}

pub fn mean_ap(items: &[(Vec<f64>, Vec<bool>)]) -> Result<MeanAp> {
    let mut total = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for (scores, labels) in items {
        if !labels.iter().any(|&l| l) {
            excluded += 1;
            continue;
        }
        total += average_precision(scores, labels)?;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::Empty { op: "mean_ap" });
    }
    Ok(MeanAp {
        map: total / evaluated as f64,
        evaluated,
        excluded,
    })
}

/// Detector mAP over labeled videos.
pub fn detector_map(
    det: &HighlightDetector,
    labeled: &[(&VideoFeatures, HighlightWindow)],
) -> Result<MeanAp> {
    let items = labeled
        .iter()
        .map(|(v, w)| Ok((det.score_clips(v)?.0, window_labels(v.len(), *w))))
        .collect::<Result<Vec<_>>>()?;
    mean_ap(&items)
}
