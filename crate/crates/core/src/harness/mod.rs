//! Verification infrastructure: loop-based formula oracles, the finite-difference gradient
//! checker, and the versioned oracle-case corpus.

pub mod corpus;
pub mod gradcheck;
pub mod oracle;

pub use gradcheck::{grad_check, GradCheckReport};
