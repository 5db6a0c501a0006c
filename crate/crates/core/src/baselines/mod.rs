//! Order-free baseline classifiers over fixed-length representations:
//! L2-regularized logistic regression and linear SVM, and a random forest
//! that stops adding trees once validation AUROC stalls.

mod forest;
mod linear;
mod suite;

pub use forest::{train_forest, DecisionTree, ForestConfig, ForestModel, Node};
pub use linear::{objective_and_gradient, predict_linear, train_linear, LinearConfig, LinearModel, LossKind};
pub use suite::{run_baseline_suite, write_suite_csv, write_suite_json, Classifier, SuiteConfig, SuiteRow};
