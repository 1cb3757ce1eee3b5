//! Kernels, MMD² estimators, InfoNCE and a permutation two-sample test.

mod infonce;
mod kernel;
mod mmd;
mod permutation;

pub use infonce::{infonce_loss, infonce_value};
pub use kernel::{gram_matrix, gram_var, kernel_eval, KernelSpec, MultiKernel};
pub use mmd::{mmd2_biased, mmd2_biased_value, mmd2_unbiased, mmd2_unbiased_value, weighted_mmd2_biased};
pub use permutation::{permutation_test, PermutationResult};
