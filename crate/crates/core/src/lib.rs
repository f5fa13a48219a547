//! Dictionary learning with iterative thresholding and K residual means
//! (ITKrM), extended with replacement of coherent or unused atoms and with
//! adaptive choice of the sparsity level and the dictionary size.
//!
//! The building blocks are organised as follows:
//!
//! * [`dictionary`], [`linalg`], [`metrics`]: unit-norm dictionaries,
//!   projections and distances between dictionaries.
//! * [`signal`], [`constructions`]: the synthetic signal model and special
//!   dictionaries and initialisations.
//! * [`engine`]: one ITKrM iteration, optionally with atom scores, candidate
//!   learning and the sparsity-level estimate.
//! * [`candidates`], [`learn`]: replacement of coherent and unused atoms, and
//!   learning loops of fixed size.
//! * [`adaptive`]: pruning, adding and the sparsity update.
//! * [`omp`], [`image`]: evaluation by OMP and image patch data.
//! * [`container`]: binary storage of dictionaries and batches.

pub mod adaptive;
pub mod candidates;
pub mod constructions;
pub mod container;
pub mod dictionary;
pub mod engine;
pub mod error;
pub mod image;
pub mod learn;
pub mod linalg;
pub mod metrics;
pub mod omp;
pub mod rng;
pub mod signal;

pub use dictionary::{Dictionary, Support};
pub use error::{Error, Result};
