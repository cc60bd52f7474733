//! A tiny decoder-only transformer that adds integers of any length.
//!
//! The model is trained only on single-digit and two-digit additions, then
//! run stage by stage from the least significant digit, feeding each stage's
//! output (whose digit count carries the carry) into the next stage's input.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod generate;
pub mod instances;
pub mod model;
pub mod optim;
pub mod reference;
pub mod vocab;

pub use error::{Error, Result};
pub use reference::{add_digit_strings, collate, decompose_stages, DigitString, GenerationTrace};
