//! Deterministic simulator and analysis library for a reputation-weighted
//! BFT proof-of-stake protocol.
//!
//! The protocol stack follows the usual three phases — credential-based
//! proposer sortition, graded consensus over soft votes, then binary
//! agreement with a common-coin fallback — and layers per-node reputation
//! scores on top: credentials and votes from low-scoring accounts count at a
//! fraction of their face value, distrusted leaders are replaced by the best
//! compensated alternative, and the committee size target is grown to win
//! back the voting weight lost to attenuation.
//!
//! Everything is deterministic given a scenario configuration and an RNG
//! seed: sortition is a pure function of keys and seeds, and randomness only
//! drives network delays, drops, transaction generation and adversary coins.

#![forbid(unsafe_code)]

pub mod consensus;
pub mod metrics;
pub mod netsim;
pub mod reputation;
pub mod scenario;
pub mod sortition;
pub mod types;
pub mod verify;
