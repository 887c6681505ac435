//! Active label queries: mixture fitting on ensemble losses, selection
//! strategies, the label store, and oracles.

pub mod gmm;
pub mod labels;
pub mod oracle;
pub mod strategy;

pub use gmm::{fit_gmm2, posterior_inlier, Gmm1d};
pub use labels::{per_round_budget, Answer, BudgetMode, Label, LabelStore};
pub use oracle::{DeferredOracle, Oracle, Reply, SimulatedOracle};
pub use strategy::{select_queries, QueryStrategy, Selection};
