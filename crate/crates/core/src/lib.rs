//! Energy-based structured prediction trained as a bi-level problem.
//!
//! An inference network `A_θ` is fitted to an auxiliary loss
//! (likelihood plus a learned energy `E_φ`), and the energy parameters are
//! moved along the implicit hypergradient of a primary loss (structured
//! hinge or cost-augmented contrastive divergence). Inverse Hessian products
//! are approximated by a truncated von Neumann series built from
//! divided-difference Hessian-vector products.
//!
//! Module map:
//!
//! - [`tensor`]: dense vectors/matrices, [`ParamVector`], the [`ScalarFn`]
//!   differentiation contract, gradient and Hessian-vector products.
//! - [`models`]: feature MLPs, the multi-label and sequence energies, and the
//!   inference networks.
//! - [`losses`]: task costs, metrics, negative sampling, and the auxiliary /
//!   primary objectives.
//! - [`implicit`]: the von Neumann iHVP and the hypergradient engine.
//! - [`trainer`]: the outer/inner training loops and the two baselines.
//! - [`data`]: file loaders, the synthetic correlated-label generator, splits.
//! - [`analysis`]: the learned label Hessian against label co-occurrence.
//! - [`quadratic`]: a bi-level toy problem with an exact hypergradient.
//! - [`cli`]: run configuration, checkpoints, and the command implementations
//!   behind the `strucgrad` binary.

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod implicit;
pub mod losses;
pub mod models;
pub mod quadratic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use implicit::{biased_grad_phi, implicit_grad_phi, neumann_ihvp, HypergradReport, IhvpConfig};
pub use tensor::{Group, Layout, Matrix, ParamVector, ScalarFn};
