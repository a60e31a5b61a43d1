//! Baseband simulator for digital predistortion (DPD) in massive MIMO downlinks.
//!
//! The crate models a bank of nonlinear power amplifiers behind a zero-forcing
//! precoder and compares two ways of training the per-antenna predistorters:
//!
//! * conventional indirect learning, where every PA is linearized on its own
//!   and the precoder is left untouched ([`learning::train_conventional`]);
//! * successive refinement, which alternates LMS updates of the DPD bank and
//!   the precoding matrix inside one feedback loop that includes the channel
//!   ([`learning::successive_refinement`]).
//!
//! All processing is complex baseband. The building blocks are usable on their
//! own: waveform generation and spectral metrics in [`signals`], the Saleh PA
//! bank in [`pa`], memory-polynomial identification in [`mempoly`] and
//! precoding in [`precoding`]. [`scenario`] and [`cli`] wire them into the
//! reproducible experiment runner behind the `mimo-dpd` binary.

pub mod cli;
pub mod error;
pub mod format;
pub mod learning;
pub mod mempoly;
pub mod pa;
pub mod precoding;
pub mod scenario;
pub mod signals;

pub use error::{Error, Result};
pub use num_complex::Complex64;
