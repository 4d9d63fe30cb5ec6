//! Diffusion variational autoencoders: VAEs whose latent space is a closed
//! Riemannian submanifold of Euclidean space, with Brownian-motion transition
//! kernels as approximate posteriors.
//!
//! The crate is organised along the data flow of a training run:
//!
//! - [`manifold`] — the supported latent manifolds with closest-point
//!   projection, geodesic distance, uniform sampling, volume and curvature;
//! - [`diffusion`] — the random-walk reparametrization sampler, heat-kernel
//!   densities and KL divergences;
//! - [`nets`] — dense networks with explicit backpropagation, the
//!   manifold-valued encoder head and Adam;
//! - [`model`] — the assembled model, ELBO loss, training loop, evaluation
//!   and importance-sampled log-likelihood;
//! - [`data`] — synthetic translated-picture datasets and MNIST ingestion;
//! - [`topo`] — topology diagnostics (torus degree, sphere coverage) and
//!   latent/reconstruction exports.

pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod error;
mod la;
#[doc(hidden)]
pub mod la_debug {
    pub use crate::la::wrap_angle as wrap_angle_pub;
}
pub mod manifold;
pub mod model;
pub mod nets;
pub mod rng;
pub mod topo;

pub use error::{Error, Result};
pub use manifold::{Manifold, ManifoldPoint};
