//! Scene-text line recognizer built from scratch: a densely connected
//! encoder with residual attention, convolutional sequence modeling and a CTC
//! output layer, together with the autograd engine, synthetic data and
//! training loop it needs.
//!
//! The guide in `book/` walks through each part; its code blocks run as
//! doctests of this crate.

pub mod cli;
pub mod ctc;
pub mod data;
pub mod error;
pub mod init;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/ctc.md")]
    mod ctc {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
