//! Bi-level feature redundancy reduction for unsupervised domain adaptation.
//!
//! * [`normalization`]: batch whitening with a Newton–Schulz inverse square
//!   root and the transferable decorrelated layer (per-domain whitening
//!   followed by a shared channel-transferability gate).
//! * [`orthogonality`]: the trace/determinant penalty that pushes the
//!   singular values of the classifier weights to one.
//! * [`autodiff`]: the reverse-mode tape that differentiates both.
//! * [`model`], [`data`], [`diagnostics`], [`cli`]: a desk-scale training
//!   harness and its measurement instruments.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to double precision, which is what the training
//! harness uses.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod normalization;
pub mod orthogonality;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = tensor::Mat<f64>;
pub type EigenDecomposition = tensor::EigenDecomposition<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Gradients = autodiff::Gradients<f64>;
pub type BnParams = normalization::BnParams<f64>;
pub type DomainStats = normalization::DomainStats<f64>;
pub type TdbnState = normalization::TdbnState<f64>;

pub type MatrixF32 = tensor::Mat<f32>;
pub type TdbnStateF32 = normalization::TdbnState<f32>;
