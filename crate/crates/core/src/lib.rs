//! Core library of the ByteComposer melody-composition agent.
//!
//! The pipeline runs four stages over ABC scores: conception analysis,
//! draft composition, self-evaluation with repair, and aesthetic selection.
//! Every step is recorded in a state memory tree so a session can be
//! inspected, resumed or backtracked.

pub mod abc;
pub mod attributes;
pub mod eval;
pub mod generator;
pub mod voter;
pub mod memory;
pub mod expert;
pub mod pipeline;
