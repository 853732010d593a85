//! Explicit constructions of narrow deep ReLU networks.
//!
//! * [`memorize`]: width-2 networks that send every training point exactly
//!   to its label, with vector and signed-label variants.
//! * [`approximate`]: width `d + 1` approximators of non-negative functions
//!   built on a hyperrectangle grid.
//! * [`norms`]: parameter norms and their envelopes.
//! * [`train`]: the regularized objective, its gradient, gradient descent and
//!   the bounds certified by a constructed memorizer.
//! * [`io`]: dataset and network files, and the command-line entry points.

pub mod approximate;
pub mod error;
pub mod geometry;
pub mod io;
pub mod memorize;
pub mod norms;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{Activation, ConstructionTrace, Layer, Matrix, Network};
pub use memorize::{LabeledDataset, Labels};
