//! Recurrent mortality predictors: a single global model, one model per
//! cohort, and multi-task models sharing a trunk across cohort heads.

mod grid;
mod model;
mod train;

pub use grid::{grid_search, GridResult, GridRow};
pub use model::{HeadLayout, Hyper, RiskExample, RiskNet, RiskObjective, Variant};
pub use train::{parameter_count, predict_batch, predict_risk, train_model, Member, RiskModel, Sample, TrainConfig};
