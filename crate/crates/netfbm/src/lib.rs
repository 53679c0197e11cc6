//! Simulation and verification toolkit for parabolic diffusion on metric
//! graphs with dynamic and Kirchhoff node conditions, perturbed at the nodes
//! by fractional Brownian motion.

pub mod error;
pub mod graph;
pub mod mesh;
pub mod operator;
pub mod fbm;
pub mod rkhs;
pub mod semigroup;
pub mod solver;
pub mod config;
pub mod study;

pub use error::{Error, Result};
pub use graph::{NetworkGraph, NodeCoupling};
pub use mesh::{EdgePotential, Mesh};
pub use operator::{DiscreteGenerator, KirchhoffTrace};
pub use fbm::{FbmPath, FbmSpec, Normalization, SamplingMethod};
pub use rkhs::RkhsGridFunction;
pub use semigroup::{classify, dirichlet_operator, equilibrium_projection, BlockSemigroup, DirichletOperator, StabilityAssessment, StabilityClass};
pub use config::{parse_config, validate_config, ExperimentConfig, Study};
pub use study::run_study;
pub use solver::{
    adjoint_test_vectors, convolve, full_system_solve, long_time_report, mc_second_moments,
    mild_solution, regularity_profile, strong_residual, variance_on_grid, variance_quadrature,
    weak_residual, yosida_convergence, Formulation, MeasureVerdict, MomentReport, NoiseEmbedding,
    Trajectory, VerdictRule,
};
