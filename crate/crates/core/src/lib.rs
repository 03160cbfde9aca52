//! Client-resistance detection toolkit: label space, corpus handling, prompt
//! construction, cross-validated evaluation, lexical analysis, alliance
//! analytics and feedback-study statistics.
//!
//! Everything in this crate is pure and synchronous. Network inference lives
//! in `resistkit-inference`, the HTTP service in `resistkit-server`.

pub mod alliance;
pub mod corpus;
pub mod evaluation;
pub mod lexstats;
pub mod prompting;
pub mod stats;
pub mod study;
pub mod taxonomy;

pub use taxonomy::{Label, PredictedLabel, Task};
