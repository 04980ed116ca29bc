//! Discovery of analytical Lyapunov functions.
//!
//! A convex neural certificate is trained on the Lyapunov risk, distilled
//! into closed-form candidates by genetic-programming symbolic regression,
//! and each candidate is falsified with symbolic Lie derivatives, multi-start
//! root finding and dense sampling. Counterexamples flow back into training
//! until a candidate survives.

pub mod compositional;
pub mod data;
pub mod dynamics;
pub mod expr;
pub mod falsifier;
pub mod landscape;
pub mod neuralnet;
pub mod orchestrator;
pub mod report;
pub mod symreg;

mod error;

pub use error::{Error, Result};
