//! Entropy-based scoring of attention heads and positional-encoding
//! denoising for rotary (RoPE) attention.

pub mod dope;
pub mod error;
pub mod lab;
pub mod linalg;
pub mod noise;
pub mod qkdp;
pub mod registry;
pub mod rope;
pub mod spectral;

pub use error::{Error, Result};
