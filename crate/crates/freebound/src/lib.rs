//! Bounds on classical free energies at fixed one-particle density.
//!
//! Given a nonnegative density `rho` sampled on a rectangular grid and a
//! short-range pair interaction `w` (stable, with a power-law core of
//! exponent `alpha` inside radius `r0` and an integrable tail of exponent
//! `s > d`), this crate evaluates
//!
//! * closed-form lower and upper bounds on the canonical free energy
//!   `F_T[rho]` and the grand-canonical free energy `G_T[rho]`,
//! * the explicit trial states behind each upper bound (interval splitting
//!   in 1D, Monge/quantile states, Besicovitch cube trials, optimal-transport
//!   states with block regularization, smeared floating crystals), and
//! * exact desk-scale oracles (multi-marginal linear programs, iterative
//!   proportional fitting, grand-canonical dual ascent) that every bound and
//!   construction is verified against.
//!
//! All numerical kernels are generic over the scalar type through the
//! [`Scalar`] trait; concrete `f64` aliases are exported at the crate root
//! and are what the CLI and the test suites use.

// Index loops over grid axes and cells mirror the math; iterator rewrites
// obscure them.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::type_complexity)]

pub mod bounds;
pub mod constructions;
pub mod covering;
pub mod density;
mod error;
pub mod geometry;
pub mod io;
pub mod oracle;
pub mod potential;
pub mod states;
pub mod suite;

pub use error::{Error, Result};

/// Floating-point scalar the numerical kernels are generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::iter::Sum
    + std::ops::AddAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::fmt::LowerExp
    + Default
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Lossless-enough conversion from an `f64` literal into the working scalar.
#[inline]
pub(crate) fn cast<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 literal must convert into the scalar type")
}

pub type Grid64 = geometry::Grid<f64>;
pub type GridDensity64 = density::GridDensity<f64>;
pub type LocalGeometry64 = density::LocalGeometry<f64>;
pub type PotentialSpec64 = potential::PotentialSpec<f64>;
pub type CubeCover64 = covering::CubeCover<f64>;
pub type BallCover64 = covering::BallCover<f64>;
pub type Partition64 = covering::Partition<f64>;
pub type CanonicalState64 = states::CanonicalState<f64>;
pub type GrandCanonicalState64 = states::GrandCanonicalState<f64>;
pub type BoundReport64 = bounds::BoundReport<f64>;
pub type PackingConstants64 = bounds::PackingConstants<f64>;
