//! Toy federated learning task: Gaussian-mixture data, label-skewed
//! partitioning, multinomial logistic regression trained with DP-SGD, and a
//! Renyi-DP accountant.

mod dataset;
mod dpsgd;
mod model;
mod privacy;

pub use dataset::{generate_dataset, partition_dirichlet, split_holdout, DatasetSplits, Examples};
pub use dpsgd::{clip_in_place, local_train_dpsgd, DPConfig, LocalTrainResult};
pub use model::{evaluate, train_central, ModelParams};
pub use privacy::{rdp_epsilon, subsampled_gaussian_rdp, PrivacyLedger, RDP_ORDERS};
