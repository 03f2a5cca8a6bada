//! Numerical toolkit for the Frobenius manifold structure on pairs of
//! meromorphic functions glued along the unit circle, together with its flat
//! coordinates and the associated Whitham-type hierarchy.

pub mod checks;
pub mod coords;
pub mod geometry;
pub mod hierarchy;
pub mod manifold;
pub mod series;
