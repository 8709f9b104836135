//! Exact computation of genus-zero r-spin correlators, two independent ways.
//!
//! The engine integrates the Gelfand-Dickey hierarchy — the dispersionless
//! Lax symbol and its wave-function solution, plus the full dispersive
//! operator form — and, separately, reconstructs the same correlators from
//! geometric recursions (topological recursion relations, string equation,
//! closed-form base cases). Everything is exact: rationals, the quotient
//! ring Q[L]/(L^(2(r+1)) + r), and epsilon-graded Laurent coefficients.
//!
//! Module layout:
//! - [`scalar`]: exact coefficient rings (Rational, the quotient ring, eps-graded).
//! - [`series`]: truncated multivariate formal power series over those rings.
//! - [`zsymbol`]: commutative Laurent symbols in z — the dispersionless algebra.
//! - [`pdo`]: noncommutative pseudo-differential operators — the dispersive algebra.
//! - [`hierarchy`]: jet integration of the flows; the closed potential.
//! - [`correlators`]: t-variables, correlator extraction, recursions, cross-checks.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod correlators;
pub mod hierarchy;
pub mod pdo;
pub mod scalar;
pub mod series;
pub mod zsymbol;
