//! One-dimensional general diffusion markets given by a scale function and
//! a speed measure: boundary classification, dc checks, no-arbitrage
//! verdicts and Monte Carlo validation.

pub mod characteristics;
pub mod quad;
pub mod regularity;
pub mod boundary;
pub mod verdict;
pub mod simulate;
pub mod cli;
