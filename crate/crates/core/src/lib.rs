//! Learning distance-dependent consensus weights from a demonstration.
//!
//! Agents interact over a directed graph with edge weights
//! `w(α) = ∫_δ^α u(s) ds` of their distance `α`. Given one recorded
//! trajectory, [`ioc::learn`] recovers the policy `u` by adjoint gradient
//! descent. [`experiment`] wraps the whole pipeline behind JSON configs and
//! CSV files.

// `!(a < b)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod case_study;
pub mod dynamics;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod ioc;
pub mod policy;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graph.md")]
    mod graph {}
    #[doc = include_str!("../../../book/src/policy.md")]
    mod policy {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/inverse.md")]
    mod inverse {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
