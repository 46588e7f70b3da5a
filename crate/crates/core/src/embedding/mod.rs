//! Trainable image encoder, contrastive objectives, classifier heads and
//! the feature fusion module, all with hand-written gradients.

pub mod checkpoint;
mod features;
pub mod gradcheck;
mod loss;
mod mlp;
mod model;
pub mod scpm;
mod train;

pub use features::{extract_features, Standardizer, FEATURE_DIM};
pub use gradcheck::{finite_diff_check, relative_error, GradCheck};
pub use loss::{
    bce, bce_backward, contrastive_loss, cosine, jaccard_weight, label_similarity, pair_weight,
    quality_loss, ContrastiveOutput, WeightingScheme,
};
pub use mlp::{sigmoid, Activation, Mlp, Optimizer, OptimizerKind, Trace};
pub use model::{
    labels_above, normalize, normalize_backward, predict_labels, to_auto_prompt, ClassifierHead,
    Embedding, Encoder, Head, ProbeHead, DEFAULT_THRESHOLD,
};
pub use scpm::{
    scpm_backward, scpm_forward, scpm_fuse, FeatureMap, ScpmGrad, ScpmParams, ScpmTrace,
};
pub use train::{
    classifier_examples, log_csv, total_loss, train_classifier, train_classifier_on, train_encoder,
    train_on_table, train_with_validation, write_log_csv, ClassifierConfig, EpochLog, FeatureTable,
    Group, TrainConfig, TrainedEncoder,
};
