//! Shared domain types: accounts, transactions, blocks, seeds, digests and
//! the protocol parameter set.
//!
//! Everything here is deliberately plain data. Behavioural logic lives in the
//! protocol modules; the one exception is block hashing, which belongs with
//! the block layout it commits to.

use sha2::{Digest as _, Sha256};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// Digest width used when nothing else is configured, in bits.
pub const DEFAULT_HASHLEN: u16 = 256;

/// Errors raised by structural validation of the types in this module.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum TypeError {
    #[error("malformed block: a block without a proposer must carry no payments")]
    MalformedBlock,
    #[error("invalid protocol parameters: {0:?}")]
    InvalidParams(Vec<String>),
    #[error("invalid account {id}: {reason}")]
    InvalidAccount { id: u32, reason: String },
}

/// Stable, ordinal account identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId(pub u32);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ground-truth behaviour class of an account.
///
/// Only the simulator and the metrics layer may branch on this; protocol code
/// never sees it and must infer trust through reputation scores alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    /// Follows the protocol and emits only clean transactions.
    Honest,
    /// Follows the voting protocol but emits illicit transactions and
    /// proposes blocks without filtering them.
    IllicitProposer,
    /// Votes according to a mixed adversarial strategy ([`ValidatorPolicy`]).
    MaliciousValidator,
}

/// Mixed strategy for a malicious validator.
///
/// On each voting step the validator votes empty with probability `p_empty`;
/// otherwise it supports a malicious proposal (when one is visible) with
/// probability `p_support_malicious`, and mimics the honest rule the rest of
/// the time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidatorPolicy {
    pub p_empty: f64,
    pub p_support_malicious: f64,
}

impl Default for ValidatorPolicy {
    fn default() -> Self {
        ValidatorPolicy { p_empty: 0.0, p_support_malicious: 0.0 }
    }
}

/// A staked participant.
#[derive(Debug, Clone)]
pub struct Account {
    pub id: AccountId,
    /// Consensus weight in whole currency units; one unit is one sub-user.
    pub stake: u64,
    pub behavior: Behavior,
    /// Probability that a transaction emitted by this account is illicit.
    pub illicit_rate: f64,
    /// Voting strategy; consulted only when `behavior` is malicious.
    pub policy: ValidatorPolicy,
}

impl Account {
    /// Checks the per-account field constraints.
    pub fn validate(&self) -> Result<(), TypeError> {
        let fail = |reason: &str| {
            Err(TypeError::InvalidAccount { id: self.id.0, reason: reason.to_string() })
        };
        if !(0.0..=1.0).contains(&self.illicit_rate) {
            return fail("illicit_rate must lie in [0, 1]");
        }
        if self.behavior == Behavior::Honest && self.illicit_rate > 0.0 {
            return fail("honest accounts must have illicit_rate 0");
        }
        if !(0.0..=1.0).contains(&self.policy.p_empty)
            || !(0.0..=1.0).contains(&self.policy.p_support_malicious)
        {
            return fail("validator policy probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A payment, tagged with ground-truth licitness for the simulator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub sender: AccountId,
    pub receiver: AccountId,
    pub amount: u64,
    /// Ground truth; protocol code never reads this, scoring and metrics do.
    pub illicit: bool,
    pub created_round: u64,
}

/// Fixed-width digest; the active width is `hashlen` bits (always whole bytes).
///
/// Ordering is big-endian lexicographic, i.e. the order of the digests'
/// integer values.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(Vec<u8>);

impl Digest {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Digest(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn bit_len(&self) -> u16 {
        (self.0.len() * 8) as u16
    }

    /// The all-zero digest of the given width.
    pub fn zeroed(hashlen: u16) -> Self {
        Digest(vec![0u8; usize::from(hashlen) / 8])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// SHA-256 over a domain tag and length-prefixed parts, truncated to
/// `hashlen` bits.
///
/// Length prefixes make the encoding injective, so distinct part lists can
/// never collide by concatenation.
pub fn digest_parts(hashlen: u16, tag: &str, parts: &[&[u8]]) -> Digest {
    debug_assert!(hashlen >= 64 && hashlen <= 256 && hashlen % 8 == 0);
    let mut hasher = Sha256::new();
    hasher.update((tag.len() as u32).to_le_bytes());
    hasher.update(tag.as_bytes());
    for part in parts {
        hasher.update((part.len() as u32).to_le_bytes());
        hasher.update(part);
    }
    let full = hasher.finalize();
    Digest(full[..usize::from(hashlen) / 8].to_vec())
}

/// Sortition seed for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seed {
    pub round: u64,
    pub value: Digest,
}

/// A block, either a proposal or the protocol-empty block.
///
/// For proposed blocks `seed_material` is the leader's signature over the
/// previous seed and round; the protocol-empty block carries the previous
/// seed value itself (unsigned) and no proposer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub round: u64,
    pub seed_material: Digest,
    pub prev_hash: Digest,
    pub payments: Vec<Transaction>,
    pub proposer: Option<AccountId>,
}

impl Block {
    /// The protocol-empty block for `round` on top of the given predecessor.
    pub fn empty(round: u64, prev_seed: &Seed, prev_hash: Digest) -> Block {
        Block {
            round,
            seed_material: prev_seed.value.clone(),
            prev_hash,
            payments: Vec::new(),
            proposer: None,
        }
    }

    /// True iff this is the protocol-empty block.
    pub fn is_empty(&self) -> bool {
        self.payments.is_empty() && self.proposer.is_none()
    }

    /// Structural check: a proposer-less block must be the empty block.
    /// A proposer may legitimately submit a block with no payments (vacuous
    /// transaction pool), so the converse is not enforced.
    pub fn check_form(&self) -> Result<(), TypeError> {
        if self.proposer.is_none() && !self.payments.is_empty() {
            return Err(TypeError::MalformedBlock);
        }
        Ok(())
    }

    pub fn illicit_count(&self) -> usize {
        self.payments.iter().filter(|t| t.illicit).count()
    }
}

/// Structural hash of a block; commits to every field.
pub fn hash_block(block: &Block, hashlen: u16) -> Digest {
    let mut parts: Vec<Vec<u8>> = Vec::with_capacity(4 + block.payments.len());
    parts.push(block.round.to_le_bytes().to_vec());
    parts.push(block.seed_material.as_bytes().to_vec());
    parts.push(block.prev_hash.as_bytes().to_vec());
    parts.push(match block.proposer {
        Some(id) => id.0.to_le_bytes().to_vec(),
        None => Vec::new(),
    });
    for t in &block.payments {
        let mut enc = Vec::with_capacity(25);
        enc.extend_from_slice(&t.sender.0.to_le_bytes());
        enc.extend_from_slice(&t.receiver.0.to_le_bytes());
        enc.extend_from_slice(&t.amount.to_le_bytes());
        enc.push(t.illicit as u8);
        enc.extend_from_slice(&t.created_round.to_le_bytes());
        parts.push(enc);
    }
    let views: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
    digest_parts(hashlen, "block", &views)
}

/// Protocol-wide constants, fixed for the lifetime of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    /// Digest width in bits; multiple of 8 in [64, 256].
    pub hashlen: u16,
    /// Expected number of proposer selections per round; drives the proposer
    /// threshold min(1, tau_proposer * stake / total_stake).
    pub tau_proposer: f64,
    /// Target total validator votes per step; the committee compensation
    /// loop steers realized vote volume back to this value.
    pub committee_votes: f64,
    /// Reputation acceptance threshold separating trusted from suspect.
    pub p_th: f64,
    /// Floor applied to reputation scores so no account divides by zero in
    /// credential scaling.
    pub epsilon: f64,
    /// Forced-empty backstop: a round that has not finalized by this step
    /// ends with the protocol-empty block.
    pub max_steps: u32,
    /// Reputation refresh cadence in rounds.
    pub epoch_rounds: u32,
    /// Width of the sliding transaction window used for scoring, in rounds.
    pub window_rounds: u32,
    pub reputation_enabled: bool,
    pub compensation_enabled: bool,
    /// When false, validators never switch to a compensated alternative
    /// proposer: a distrusted best-credential proposer simply draws empty
    /// votes. Exists to measure what the alternative rule buys.
    pub alternative_leader_rule: bool,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            hashlen: DEFAULT_HASHLEN,
            tau_proposer: 20.0,
            committee_votes: 40.0,
            p_th: 0.5,
            epsilon: 0.01,
            max_steps: 13,
            epoch_rounds: 10,
            window_rounds: 10,
            reputation_enabled: true,
            compensation_enabled: false,
            alternative_leader_rule: true,
        }
    }
}

impl ProtocolParams {
    /// Checks every field constraint and reports all violations at once.
    pub fn validate(&self) -> Result<(), TypeError> {
        let mut errs = Vec::new();
        if self.hashlen < 64 || self.hashlen > 256 || self.hashlen % 8 != 0 {
            errs.push(format!("hashlen must be a multiple of 8 in [64, 256], got {}", self.hashlen));
        }
        if !(self.tau_proposer > 0.0) {
            errs.push(format!("tau_proposer must be positive, got {}", self.tau_proposer));
        }
        if !(self.committee_votes >= 4.0) {
            errs.push(format!("committee_votes must be at least 4, got {}", self.committee_votes));
        }
        if !(self.p_th > 0.0 && self.p_th < 1.0) {
            errs.push(format!("p_th must lie in (0, 1), got {}", self.p_th));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= self.p_th) {
            errs.push(format!(
                "epsilon must lie in (0, p_th], got {} with p_th {}",
                self.epsilon, self.p_th
            ));
        }
        if self.max_steps < 5 {
            errs.push(format!("max_steps must be at least 5, got {}", self.max_steps));
        }
        if self.epoch_rounds == 0 {
            errs.push("epoch_rounds must be positive".to_string());
        }
        if self.window_rounds == 0 {
            errs.push("window_rounds must be positive".to_string());
        }
        if errs.is_empty() { Ok(()) } else { Err(TypeError::InvalidParams(errs)) }
    }
}

/// Validates a whole account set: per-account constraints, unique ids and a
/// positive total stake.
pub fn validate_accounts(accounts: &[Account]) -> Result<(), Vec<String>> {
    let mut errs = Vec::new();
    let mut seen = BTreeSet::new();
    for acct in accounts {
        if let Err(e) = acct.validate() {
            errs.push(e.to_string());
        }
        if !seen.insert(acct.id) {
            errs.push(format!("duplicate account id {}", acct.id));
        }
    }
    if accounts.iter().map(|a| a.stake).sum::<u64>() == 0 {
        errs.push("total stake must be positive".to_string());
    }
    if errs.is_empty() { Ok(()) } else { Err(errs) }
}
