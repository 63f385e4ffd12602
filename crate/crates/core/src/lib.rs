//! Decoupled SPDZ for anonymous, confidential genomic case/control matching.
//!
//! Beaver triples are produced by three independent generators (BTG_A, BTG_B,
//! BTG_C) running an ElGamal-based multiplicatively homomorphic protocol, then
//! blindly dispensed to the MPC servers that process the data. On top of the
//! resulting SPDZ-style additive sharing the crate provides probabilistic
//! truncation for fixed-point values, a sign test, and the genomic pipeline:
//! the inflation factor `λ = (4·n0·n2 − n1²) / ((n1 + 2·n2)(n1 + 2·n0))` and
//! the residual-vector filter `‖(I − UUᵀ)z‖ ≤ τ`.
//!
//! Everything runs inside an in-process, deterministic multi-party runtime
//! ([`net::Runtime`]) that logs a replayable transcript.
//!
//! ## Modules
//!
//! * [`modmath`]: prime fields, safe-prime groups and the ElGamal layer.
//! * [`btg`]: the 3-party Beaver triple generator.
//! * [`mhkm`]: n-party multiplicative key dispensation by chaining BTG sessions.
//! * [`dispense`]: additive sharing and blind triple dispensation.
//! * [`spdz`]: share algebra, openings and Beaver multiplication.
//! * [`fixpt`]: fixed-point encoding, truncation, multiplication and sign test.
//! * [`gwas`]: genotype data, inflation factor and the matching pipeline.
//! * [`net`]: parties, channels, scheduler and transcripts.

pub mod btg;
pub mod dispense;
pub mod error;
pub mod fixpt;
pub mod gwas;
pub mod mhkm;
pub mod modmath;
pub mod net;
pub mod spdz;

pub use error::{Error, Result};
