//! Traveling fronts and entire solutions of nonlocal dispersal equations
//! `u_t = J*u - u + f(u)` with ignition nonlinearities.

pub mod banded;
pub mod cauchy;
pub mod config;
pub mod entire;
pub mod error;
pub mod field;
pub mod waves;
pub mod kernel;
pub mod pipeline;
pub mod quad;
pub mod reaction;
pub mod spectral;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/overview.md")]
pub mod book_overview {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/kernels.md")]
pub mod book_kernels {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/reaction.md")]
pub mod book_reaction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/field.md")]
pub mod book_field {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/waves.md")]
pub mod book_waves {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/spectral.md")]
pub mod book_spectral {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cauchy.md")]
pub mod book_cauchy {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/entire.md")]
pub mod book_entire {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod book_pipeline {}
