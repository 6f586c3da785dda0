//! Compressive holographic video.
//!
//! A single in-line hologram is exposed through a sequence of binary
//! per-pixel masks, one per sub-frame. This crate models that capture as a
//! linear operator from a 4D complex object field (time, depth, y, x) to the
//! sensor image, provides its exact adjoint, and reconstructs the 4D field
//! with TV-regularized two-step iterative shrinkage. Simulation, focus and
//! particle-tracking analysis, and a raster file format round out the
//! toolkit used by the `chv` command-line driver.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod io;
pub mod field;
pub mod masks;
pub mod model;
pub mod solver;
pub mod scene;
pub mod tv;

pub use error::{Error, Result};
pub use field::{make_transfer, make_transfer_with, propagate, propagate_padded, ComplexField, TransferFunction};
pub use masks::{generate_bernoulli_masks, generate_partition_masks, validate_masks, MaskReport, MaskStack};
pub use model::{
    adjoint, forward, operator_norm_estimate, subtract_background, Geometry, Hologram, HologramKind, Object4D,
    SensingOperator, Shape4,
};
pub use solver::{backpropagate, backpropagate_masked, twist_reconstruct, SolveTrace, SolverConfig};
pub use tv::{tv_denoise, tv_norm};
pub use analysis::{
    block_variance_map, detect_particles, focus_profile, track_particles, velocities, DetectionConfig, FocusProfile,
    Track,
};
pub use io::{read_raster, write_raster, Raster};
pub use scene::{build_scene, psnr, simulate_capture, NoiseSpec, SceneSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
