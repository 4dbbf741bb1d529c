//! Simulation and privacy analysis of zero-sum obfuscated distributed
//! optimization.
//!
//! Agents on an undirected graph each hold a private cost `h_i`. Before
//! optimizing, every pair of neighbors exchanges Gaussian noise, and each
//! agent shifts the affine coefficient of its cost by the resulting zero-sum
//! mask. Distributed gradient descent on the masked costs then finds the same
//! minimizer, while a passive coalition learns only a noisy, sum-preserving
//! view of the honest coefficients. This crate runs both phases and measures
//! how much that view leaks.

pub mod adversary;
pub mod cost;
pub mod error;
pub mod graph;
pub mod harness;
pub mod obfuscation;
pub mod optimizer;
pub mod rng;
pub mod spectral;

pub use adversary::{
    corollary_epsilon, empirical_kl, extract_view, reduce_view, theoretical_epsilon, validate_scenario, CorruptedSet,
    PrivacyBound, PrivacyReport, ScenarioPair,
};
pub use cost::{aggregate_minimizer, CoefficientMatrix, Cost, FeasibleBox, PolynomialCost, QuadraticCost};
pub use error::{Error, Result};
pub use graph::Topology;
pub use obfuscation::{compute_masks, draw_noise, effective_costs, mask_degree, run_phase_one};
pub use optimizer::{consensus_weights, dgd_run, DgdConfig, ExecutionTrace};
