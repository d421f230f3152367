//! Thermo-optical power limiter model and Trojan-horse key-rate certification
//! for phase-encoding MDI-QKD.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod limiter;
pub mod mdi;
pub mod quadrature;
pub mod search;
pub mod spectral;
pub mod tha;

pub use error::{CoreError, Result};
