//! Inverse-limit graph spaces and the analysis toolbox around them:
//! admissible towers of metric measure graphs, limit distances and measures,
//! metric differentials of curve fragments, pointwise Lipschitz constants,
//! measurable differentiable structures, Alberti representations, and exact
//! m-adic blow-ups.

pub mod alberti;
pub mod blowup;
pub mod error;
pub mod fragment;
pub mod graph;
pub mod io;
pub mod limit;
pub mod lip;
pub mod rational;
pub mod seminorm;
pub mod space;
pub mod suite;
pub mod system;

pub use error::{MdlError, Result};
