//! Simulator for delivering a double bit to two receivers who can only read
//! it together.
//!
//! Alice encodes each bit pair in the relative ordering of singlet halves
//! sent to Bob and Sonai. Neither receiver can tell which of the four
//! codebook orderings was used without the other's measurement results, and
//! results are disclosed one at a time in turn.

pub mod cli;
pub mod codebook;
pub mod epr;
pub mod montecarlo;
pub mod netsim;
pub mod protocol;
pub mod unionfind;

pub use codebook::{BitPair, Codebook};
pub use netsim::{FairnessPolicy, Strategy};
pub use protocol::{DecodeResult, DecodeStatus, ProtocolConfig, Role};
