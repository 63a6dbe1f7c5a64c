//! Training-free denoisers for diffusion models, built directly from a
//! dataset of images.
//!
//! The exact posterior mean under the forward noising process is a
//! softmax-weighted average of the training images; restricted to a
//! crop it is a patch posterior mean, and a set of overlapping crops
//! recombines into a patch-set posterior composite (PSPC) denoiser.
//! This crate implements those denoisers with numerically careful
//! kernels, plus the surrounding laboratory: the noising process and
//! its time schedules, patch geometry, analytic Jacobians and
//! sensitivity maps, deterministic probability flow samplers, and
//! evaluation sweeps with reproducible on-disk formats.
//!
//! Everything is deterministic given a seed: parallel code reduces in
//! a fixed order, so results are independent of the thread count.

pub mod composite;
pub mod denoisers;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod handle;
pub mod patch;
pub mod sampler;
pub mod sensitivity;
pub mod store;

pub use composite::{
    pspc_denoise, pspc_flex, pspc_square, KnotSchedule, LambdaSchedule, SizeSchedule,
};
pub use denoisers::empirical::{optimal_denoise, patch_posterior_mean, posterior_weights};
pub use denoisers::{Denoiser, GridLoc};
pub use diffusion::{edm_schedule, DiffusionProcess, TimeSchedule};
pub use error::{PspcError, Result};
pub use eval::{build_forward_evalset, mse_sweep, patch_error_sweep, EvalSet};
pub use patch::{flex_crop, square_crop_set, CropSpec, PatchSet};
pub use sampler::{sample_euler, sample_heun, Solver, Trajectory};
pub use sensitivity::{sensitivity_map, SensitivityMap};
pub use store::dataset::{ImageDataset, ImageShape};
pub use store::tensor::Tensor;
