//! Meta-model fingerprinting over extracted attribute vectors.

mod dataset;
mod mi;
mod pca;
mod tree;

pub use dataset::{build_dataset, relabel, Dataset, Task};
pub use mi::{label_entropy, mutual_information, FeatureImportance};
pub use pca::{jacobi_eigen, pca, PcaResult};
pub use tree::{
    best_split, fit_tree, stratified_folds, train_tree, CvReport, Node, Split, TreeModel,
};
