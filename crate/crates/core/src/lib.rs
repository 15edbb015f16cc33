//! Smoluchowski coagulation with the multiplicative kernel `K(x, y) = (xy)^s`, `s < 1/2`.
//!
//! - [`specfun`]: Γ, Li₂ and Euler's constant.
//! - [`asymptotics`]: closed-form exponents, amplitudes and regime formulas.
//! - [`selfsim`]: self-similar profiles for `s < 0` by two-parameter shooting.
//! - [`evolution`]: time evolution on a uniform mass grid with an escaped-mass ledger.
//! - [`analysis`]: rescaling of snapshots and collapse diagnostics.
//! - [`io`]: run configuration, orchestration and file output.

pub mod analysis;
pub mod asymptotics;
pub mod error;
pub mod evolution;
pub mod interp;
pub mod io;
pub mod selfsim;
pub mod specfun;

pub use error::{Error, Result};
