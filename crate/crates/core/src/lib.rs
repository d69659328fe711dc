//! Transformer-based cancer drug response (TCR) model.
//!
//! Predicts natural-log IC50 for (drug, cell line) pairs from a molecular
//! graph of the drug and a multi-omics profile of the cell line. The crate
//! bundles everything needed to run desk-scale experiments end to end:
//!
//! - [`tensor`]: dense f64 tensors with tape-based reverse-mode autodiff,
//!   enough to express and train the full network.
//! - [`dataset`]: data model, preprocessing, cross-validation splits, and a
//!   seeded synthetic generator so experiments run without restricted data.
//! - [`model`]: the network itself — GCN drug encoder, omics subnetworks,
//!   atom-omics attention transformer blocks, 1D-conv prediction head.
//! - [`train`]: dual MSE/ranking loss, cross-sampling batch construction,
//!   Adam optimization.
//! - [`eval`]: PCC/DrugPCC/SCC/RMSE metrics, responder analysis, and the
//!   one-hot cell-identity ablation.
//!
//! Heavy inner loops run data-parallel under the `parallel` feature
//! (enabled by default); disabling it yields a fully sequential build with
//! bitwise-identical results.

pub mod dataset;
pub mod eval;
pub mod model;
pub mod parallel;
pub mod tensor;
pub mod train;
