//! Single-image human reconstruction into 3D Gaussian splats with a
//! parametric body prior.

pub(crate) mod binio;
pub mod body;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod gsplat;
pub mod imaging;
pub mod latent;
pub mod model;
pub mod objectives;
pub mod trainer;

pub use error::{Error, Result};
