use std::path::Path;

use crate::error::{Error, Result};
use crate::kv;

/// Training hyperparameters. The text form is one `key = value` per line
/// with keys equal to the field names; `clip_norm = 0` disables clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub finetune_epochs: usize,
    pub iteration_cap: usize,
    pub window_length: usize,
    pub augmentation_ratio: f64,
    pub seed: u64,
    pub clip_norm: f64,
    /// Captioner LSTM width.
    pub hidden: usize,
    pub detector_hidden: usize,
    pub detector_epochs: usize,
    pub detector_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 200,
            batch_size: 10,
            finetune_epochs: 50,
            iteration_cap: 3,
            window_length: 8,
            augmentation_ratio: 0.2,
            seed: 0,
            clip_norm: 0.0,
            hidden: 32,
            detector_hidden: 32,
            detector_epochs: 30,
            detector_lr: 0.01,
        }
    }
}

impl TrainConfig {
    /// Settings for synthetic desk-scale corpora, where the default learning
    /// rate needs far more than 200 epochs to move the models.
    pub fn desk() -> Self {
        Self {
            lr: 0.01,
            epochs: 60,
            finetune_epochs: 20,
            ..Self::default()
        }
    }

    /// `full` or `desk`.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::default()),
            "desk" => Some(Self::desk()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.detector_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.epochs == 0
            || self.batch_size == 0
            || self.iteration_cap == 0
            || self.window_length == 0
            || self.hidden == 0
            || self.detector_hidden == 0
        {
            return bad("counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.augmentation_ratio) {
            return bad("augmentation_ratio must lie in [0, 1]");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be >= 0");
        }
        Ok(())
    }

    pub fn clip(&self) -> Option<f64> {
        (self.clip_norm > 0.0).then_some(self.clip_norm)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut c = Self::default();
        for e in kv::parse(text, path)? {
            match e.key.as_str() {
                "lr" => c.lr = kv::value(&e, path)?,
                "epochs" => c.epochs = kv::value(&e, path)?,
                "batch_size" => c.batch_size = kv::value(&e, path)?,
                "finetune_epochs" => c.finetune_epochs = kv::value(&e, path)?,
                "iteration_cap" => c.iteration_cap = kv::value(&e, path)?,
                "window_length" => c.window_length = kv::value(&e, path)?,
                "augmentation_ratio" => c.augmentation_ratio = kv::value(&e, path)?,
                "seed" => c.seed = kv::value(&e, path)?,
                "clip_norm" => c.clip_norm = kv::value(&e, path)?,
                "hidden" => c.hidden = kv::value(&e, path)?,
                "detector_hidden" => c.detector_hidden = kv::value(&e, path)?,
                "detector_epochs" => c.detector_epochs = kv::value(&e, path)?,
                "detector_lr" => c.detector_lr = kv::value(&e, path)?,
                _ => return Err(kv::unknown_key(&e, path)),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lr = {}\nepochs = {}\nbatch_size = {}\nfinetune_epochs = {}\niteration_cap = {}\n\
             window_length = {}\naugmentation_ratio = {}\nseed = {}\nclip_norm = {}\n\
             hidden = {}\ndetector_hidden = {}\ndetector_epochs = {}\ndetector_lr = {}\n",
            self.lr,
            self.epochs,
            self.batch_size,
            self.finetune_epochs,
            self.iteration_cap,
            self.window_length,
            self.augmentation_ratio,
            self.seed,
            self.clip_norm,
            self.hidden,
            self.detector_hidden,
            self.detector_epochs,
            self.detector_lr,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.epochs, c.batch_size), (1e-4, 200, 10));
        assert_eq!((c.finetune_epochs, c.iteration_cap, c.window_length), (50, 3, 8));
        assert_eq!(c.augmentation_ratio, 0.2);
        c.validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        assert_eq!(TrainConfig::preset("full"), Some(c));
        assert!(TrainConfig::preset("fast").is_none());
    }

    #[test]
    fn text_round_trip_and_errors() {
        let c = TrainConfig {
            lr: 0.003,
            seed: 42,
            clip_norm: 5.0,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::parse(&c.to_kv(), Path::new("c")).unwrap(), c);
        assert!(TrainConfig::parse("augmentation_ratio = 1.5", Path::new("c")).is_err());
        assert!(TrainConfig::parse("learning_rate = 1", Path::new("c")).is_err());
        assert!(TrainConfig::parse("epochs = ten", Path::new("c")).is_err());
    }
}
