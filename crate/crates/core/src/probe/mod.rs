//! Linear-probe evaluation: labelled subset selection, classifier training
//! on frozen features, and the learning-rate range test.

mod lr_find;
mod split;
mod train;

pub use lr_find::{lr_find, LrSweep, SweepModel, SweepRow, LR_SKIP_START, LR_SMOOTHING};
pub use split::{split_labels, LabelBudget, ProbeSplit};
pub use train::{
    classifier_spec, predict, probe_lr_sweep, probe_objective, softmax_cross_entropy, train_probe, LearningRate, ProbeConfig,
    ProbeData, ProbeEpoch, ProbeOutcome, FALLBACK_LR,
};
