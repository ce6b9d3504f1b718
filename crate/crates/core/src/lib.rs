//! Bi-equivariant denoising diffusion on SE(3).
//!
//! The crate is organised bottom-up:
//!
//! * [`lie`] exact SO(3)/SE(3) algebra (exp/log, composition, adjoint);
//! * [`irreps`] real Wigner-D matrices, spherical harmonics and Clebsch-Gordan
//!   contraction to a type-1 output;
//! * [`igso3`] the isotropic Gaussian on SO(3) (density, inverse-CDF sampling, score);
//! * [`pointcloud`] point containers and radius queries;
//! * [`diffusion`] the Brownian kernel on SE(3), contact-based origin selection,
//!   forward diffusion, analytic score targets and the exact mixture score;
//! * [`score_model`] bi-equivariant score fields built from synthetic
//!   spherical-harmonic descriptor fields;
//! * [`sampler`] annealed Langevin dynamics on SE(3).
//!
//! Every numerical type is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the
//! documented tolerances assume.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffusion;
pub mod error;
pub mod igso3;
pub mod irreps;
pub mod lie;
pub mod pointcloud;
pub mod sampler;
pub mod scalar;
pub mod score_model;
pub mod stats;

pub use error::{Error, Result};

/// Crate version, recorded in output provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use scalar::Scalar;

pub type Vec3 = lie::Vec3<f64>;
pub type Rotation = lie::Rotation<f64>;
pub type Pose = lie::Pose<f64>;
pub type Twist = lie::Twist<f64>;
pub type IrrepsVector = irreps::IrrepsVector<f64>;
pub use irreps::IrrepsLayout;
pub use sampler::Integrator;
pub type IgParams = igso3::IgParams<f64>;
pub type Igso3Sampler = igso3::Igso3Sampler<f64>;
pub type PointCloud = pointcloud::PointCloud<f64>;
pub type DiffusionConfig = diffusion::DiffusionConfig<f64>;
pub type MarginalOracle = diffusion::MarginalOracle<f64>;
pub type SyntheticEdfParams = score_model::SyntheticEdfParams<f64>;
pub type ScoreModel = score_model::ScoreModel<f64>;
pub type QuerySet = score_model::QuerySet<f64>;
pub type AnnealSchedule = sampler::AnnealSchedule<f64>;

pub type Rotation32 = lie::Rotation<f32>;
pub type Pose32 = lie::Pose<f32>;
pub type Twist32 = lie::Twist<f32>;
