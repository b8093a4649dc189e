#![forbid(unsafe_code)]

//! Iterated graph systems: self-similar replacement graphs, discrete
//! p-modulus and p-resistance, flow bases with replacement flows, and
//! numerical estimation of conformal and walk dimensions of the fractal
//! limit spaces.

pub mod error;
pub mod flow;
pub mod graph;
pub mod lift;
pub mod linalg;
pub mod maxflow;
pub mod modulus;
pub mod replacement;
pub mod symmetry;
pub mod tilde;
pub mod system;
pub mod words;

pub use error::{Error, Result};
pub use system::{IgsSystem, Orientation, SymbolId, TypeId};
pub use words::Word;
