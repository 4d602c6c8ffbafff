//! Operator-algebraic toolkit for finite quantum lattice systems.
//!
//! The crate implements a chain complex over the sites of a finite lattice
//! whose boundary operator turns densities into derivations, together with
//! the machinery that makes conserved currents and topological response
//! computable at finite size:
//!
//! * sparse operator algebra over tensor-product bases with a dense oracle
//!   backend ([`algebra`]);
//! * the brick poset, its Möbius function, and conical partitions
//!   ([`geometry`]);
//! * chains, derivations, the contracting homotopy, and the shifted graded
//!   Lie bracket ([`complex`]);
//! * energy and symmetry currents ([`currents`]);
//! * spectral contexts, gap filters, and locally-generated evolutions
//!   ([`spectral`]);
//! * the ground-state-adapted homotopy ([`state`]);
//! * parameter meshes and Maurer-Cartan descent for Berry, Hall, and pump
//!   invariants ([`mesh`], [`descent`]);
//! * a line-oriented model format and run harness ([`model`], [`run`]).

pub mod algebra;
pub mod complex;
pub mod currents;
pub mod descent;
pub mod error;
pub mod families;
pub mod geometry;
pub mod localization;
pub mod mesh;
pub mod model;
pub mod run;
pub mod spectral;
pub mod state;

pub use algebra::{BasisString, DenseRealization, LocalOperator};
pub use error::{Error, Result};
pub use geometry::{Brick, ConicalPartition, Lattice, SiteId};
