//! Data generation, ingestion, and base-model pretraining.

pub mod cache;
pub mod classification;
pub mod corrupt;
pub mod idx;
pub mod regression;

pub use cache::config_hash;
pub use classification::{
    build_classification_task, classifier_accuracy, classifier_arch, gen_synthetic_digits,
    to_labeled, train_base_classifier, ClassificationTask, N_CLASSES,
};
pub use corrupt::{corrupt, rotate_image, NOISE_SD, ROTATION_RANGE_DEG};
pub use idx::{load_idx, IdxError, ImageSet};
pub use regression::{
    gen_regression, regression_base_arch, regression_mean, regression_sample,
    train_base_regressor, RegressionTask,
};
