//! Selecting the drift δ by grid search, and the counterfactual objective.

pub mod classifier;
pub mod counterfactual;
pub mod grid;

pub use classifier::LogisticClassifier;
pub use counterfactual::{
    counterfactual_loss, generate_counterfactual, regeneration_depth, CounterfactualBatch,
    CounterfactualLoss, CounterfactualSpec, InstanceLoss, OutcomeLoss,
};
pub use grid::{
    default_grid, grid_search_by, grid_search_delta, refinement_grid, select_delta_star,
    DeltaPoint, GridSearchConfig, GridSearchReport,
};
