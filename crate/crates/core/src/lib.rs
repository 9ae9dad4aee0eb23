//! Numerical tools for MIMO channels with phase noise.
//!
//! The channel is `y = (H ∘ e^{jΘ}) x + z`. [`channel`] samples it,
//! [`entropy`] and [`likelihood`] estimate the entropies that make up
//! mutual information, [`auxdist`] and [`bounds`] evaluate lower and
//! duality upper bounds and fit high-SNR slopes, and [`recovery`] studies
//! when input amplitudes are determined by output magnitudes.

// `!(x > 0.0)` is used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entropy;
pub mod error;
pub mod auxdist;
pub mod bounds;
pub mod channel;
pub mod likelihood;
pub mod mathfn;
pub mod recovery;

pub use error::{Error, Result};

// The book's snippets run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/prelog.md")]
    mod prelog {}
    #[doc = include_str!("../../../book/src/mathfn.md")]
    mod mathfn {}
    #[doc = include_str!("../../../book/src/entropy.md")]
    mod entropy {}
    #[doc = include_str!("../../../book/src/duality.md")]
    mod duality {}
    #[doc = include_str!("../../../book/src/recovery.md")]
    mod recovery {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
