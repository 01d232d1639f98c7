//! Discrete minimizers of segregated multi-density energies on 2D grids.
//!
//! A [`Problem`] couples `k >= 2` nonnegative densities with reactions,
//! diffusions and admissible boundary traces; [`solve`] minimizes the energy
//! over node-wise segregated states and the [`verifier`] and [`freeboundary`]
//! modules measure the computed solutions.

pub mod error;
pub mod freeboundary;
pub mod grid;
pub(crate) mod linalg;
pub mod minimizer;
pub mod presets;
pub mod problem;
pub mod segregation;
pub mod verifier;

pub use error::{Error, Result};
pub use grid::{
    ball_dirichlet_integral, build_grid, gradient_energy_density, integrate, laplacian5, Field,
    Grid, GridId, GridSpec, NodeKind, Shape,
};
pub use problem::{
    check_a2, rescale_to_unit_diffusion, uniqueness_condition_check, validate_admissible,
    BoundaryData, DiffusionCoeff, DiffusionMap, Problem, Reaction, ReactionTerm, Tolerances,
};
pub use segregation::{hat, is_segregated, multiplicity_map, project_segregated, State};
pub use minimizer::{
    descent_step, energy, energy_gradient, multi_start, perturbation_study, solve, Init, Solution,
    SolveOptions,
};
pub use freeboundary::{
    adjacency_graph, extract_interfaces, junction_analysis, locate_multiple_points,
    support_connectedness, AdjacencyGraph, NodalReport,
};
pub use verifier::{acf_product, compute_barriers, extremality_residuals, lipschitz_report};
