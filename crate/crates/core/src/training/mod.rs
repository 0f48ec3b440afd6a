//! Optimizer, captioner training, the alternating highlight-sensitive
//! procedure and batch assembly.

mod alternating;
mod config;
mod examples;
mod optim;
mod trainer;
mod variants;

pub use alternating::{
    detector_config, detector_windows, labeled_map, reassign_highlights, train_highlight_sensitive,
    Bootstrap, HlOutcome, HlSetup, HlVideo, IterationLog, Reassignment,
};
pub use config::TrainConfig;
pub use examples::{
    augmented_per_epoch, make_batches, Batch, ExampleSource, ExampleVideo, TrainingExample,
};
pub use optim::{adam_step, clip_gradients, grad_norm, OptimizerState};
pub(crate) use optim::sum_grads;
pub use trainer::{
    dummy_for, example_losses, mean_loss, perplexity, train_captioner, EpochLog, TrainOutcome,
};
pub use variants::{
    init_model, observe, run_variant, DescriptionMode, HighlightMode, TestWindow, Variant, VariantData,
    VariantRun, VariantSpec, VARIANTS,
};
