//! Hierarchical (k+1, n)-threshold secret sharing with proactive share renewal.
//!
//! The crate is layered bottom-up:
//!
//! - [`algebra`]: prime-field scalars, polynomials and Lagrange interpolation.
//! - [`curve`]: a short-Weierstrass elliptic-curve group used for user keys and
//!   renewal commitments.
//! - [`hierarchy`]: the user tree, registration tokens, group and round keys,
//!   leave and rejoin.
//! - [`sharing`]: threshold factors, the split operation, top-down dealing and
//!   bottom-up reconstruction.
//! - [`proactive`]: per-subtree share renewal, commitment verification and claim
//!   resolution.
//! - [`simnet`]: a deterministic simulated network with a mobile adversary.

pub mod algebra;
pub mod curve;
pub mod hierarchy;
pub mod proactive;
pub mod sharing;
pub mod simnet;

pub mod decimal;

pub use algebra::{Field, FieldElement, Polynomial};
pub use curve::{Curve, CurveParams, CurvePoint};
pub use hierarchy::{HierarchyTree, NodeRef, UserId};
