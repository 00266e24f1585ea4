//! Block-coordinate minimization of the hierarchical prototype objective.

mod fit;
mod init;
mod updates;

use serde::{Deserialize, Serialize};

pub use fit::{
    fit, fit_observed, predict_inductive, solve_seen, solve_unseen, InductivePrediction, INNER_TOL,
    STALL_PATIENCE,
};
pub use init::{init_state, kmeans, KMeans};
pub use updates::{
    assignment_costs, update_cu, update_cu_gzsl, update_d, update_p_sylvester, update_pu_gzsl,
    update_z,
};

/// Outcome of an inner alternation or a dictionary line search.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub inner_iterations: usize,
    /// Objective before the first update, then after each iteration.
    pub objective_trace: Vec<f64>,
    pub stalled: bool,
}

/// The block that was just updated, reported to fit observers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Assignment,
    UnseenPrototypes,
    UnseenCodes,
    SeenCodes,
    SeenPrototypes,
    VisualDictionary,
    SemanticDictionary,
}
