//! Cryptographic sortition over simulated VRF digests.
//!
//! Signatures and VRF outputs are modelled as keyed digests: deterministic,
//! verifiable by recomputation, and uniform enough on [0, 1) for selection
//! statistics. Proposer selection walks every sub-user (one per currency
//! unit) and keeps the minimal digest; validator committees are weighted by
//! a per-account binomial vote count read off a cumulative range table.

use crate::types::{digest_parts, AccountId, Digest, ProtocolParams, Seed};
use std::collections::BTreeSet;
use thiserror::Error;

/// Tolerance for a probability mass function to count as summing to one.
pub const PMF_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SortitionError {
    #[error("total stake must be positive")]
    ZeroTotalStake,
    #[error("step key for account {account} at ({round}, {step}) was already used")]
    KeyReused { account: AccountId, round: u64, step: u32 },
    #[error("invalid vote pmf: {0}")]
    InvalidPmf(String),
    #[error("invalid vote range table: {0}")]
    InvalidTable(String),
}

/// Keyed digest: SHA-256 over the key and message parts under a domain tag,
/// truncated to `hashlen` bits. Stands in for both signatures and VRF output.
pub fn keyed_digest(key: &[u8], hashlen: u16, tag: &str, parts: &[&[u8]]) -> Digest {
    let mut all: Vec<&[u8]> = Vec::with_capacity(parts.len() + 1);
    all.push(key);
    all.extend_from_slice(parts);
    digest_parts(hashlen, tag, &all)
}

/// Maps a digest to [0, 1) as integer(digest) / 2^hashlen, rounded toward
/// zero to f64 precision.
///
/// The top 53 bits carry all representable information, so the result is
/// order-preserving (strictly increasing whenever the top 53 bits differ)
/// and can never round up to 1.0 the way a nearest-rounding of an all-ones
/// digest would.
pub fn normalize(digest: &Digest) -> f64 {
    let bytes = digest.as_bytes();
    debug_assert!(bytes.len() >= 8, "digests are at least 64 bits");
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&bytes[..8]);
    let top = u64::from_be_bytes(buf);
    (top >> 11) as f64 / (1u64 << 53) as f64
}

/// Master key material for an account. Public by construction in this
/// simulation: verification recomputes rather than trusting the sender.
pub fn master_key(account: AccountId) -> [u8; 32] {
    let d = digest_parts(256, "master-key", &[&account.0.to_le_bytes()]);
    let mut key = [0u8; 32];
    key.copy_from_slice(d.as_bytes());
    key
}

/// Ephemeral signing key for one account and one protocol step.
pub fn step_key_material(master: &[u8; 32], round: u64, step: u32) -> [u8; 32] {
    let d = digest_parts(256, "step-key", &[master, &round.to_le_bytes(), &step.to_le_bytes()]);
    let mut key = [0u8; 32];
    key.copy_from_slice(d.as_bytes());
    key
}

/// An acquired per-step ephemeral key. All signatures a node emits within a
/// step go through one of these.
pub struct StepKey {
    pub account: AccountId,
    pub round: u64,
    pub step: u32,
    key: [u8; 32],
}

impl StepKey {
    pub fn sign(&self, hashlen: u16, tag: &str, parts: &[&[u8]]) -> Digest {
        keyed_digest(&self.key, hashlen, tag, parts)
    }
}

/// Per-node key store enforcing the ephemeral-key discipline: a step key can
/// be acquired once, and is considered destroyed afterwards.
pub struct Keychain {
    account: AccountId,
    master: [u8; 32],
    spent: BTreeSet<(u64, u32)>,
}

impl Keychain {
    pub fn new(account: AccountId) -> Self {
        Keychain { account, master: master_key(account), spent: BTreeSet::new() }
    }

    /// Derives the ephemeral key for (round, step) and marks it destroyed.
    /// A second acquisition for the same step is a protocol violation.
    pub fn acquire(&mut self, round: u64, step: u32) -> Result<StepKey, SortitionError> {
        if !self.spent.insert((round, step)) {
            return Err(SortitionError::KeyReused { account: self.account, round, step });
        }
        Ok(StepKey {
            account: self.account,
            round,
            step,
            key: step_key_material(&self.master, round, step),
        })
    }
}

/// Recomputes the signature an account's step key would produce. Keys are
/// public derivations here, so this doubles as signature verification.
pub fn expected_signature(
    account: AccountId,
    round: u64,
    step: u32,
    hashlen: u16,
    tag: &str,
    parts: &[&[u8]],
) -> Digest {
    let key = step_key_material(&master_key(account), round, step);
    keyed_digest(&key, hashlen, tag, parts)
}

/// A sortition credential: the digest that proves (and weighs) selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub account: AccountId,
    pub round: u64,
    pub step: u32,
    /// Winning sub-user index for proposer credentials, `None` for
    /// validator credentials.
    pub subuser: Option<u64>,
    pub digest: Digest,
}

impl Credential {
    pub fn normalized(&self) -> f64 {
        normalize(&self.digest)
    }
}

fn proposer_subuser_digest(
    account: AccountId,
    round: u64,
    prev_seed: &Seed,
    subuser: u64,
    hashlen: u16,
) -> Digest {
    expected_signature(
        account,
        round,
        1,
        hashlen,
        "proposer-credential",
        &[prev_seed.value.as_bytes(), &round.to_le_bytes(), &subuser.to_le_bytes()],
    )
}

/// Proposer sortition for one account: signs (round, 1, K, seed) for every
/// sub-user K = 1..=stake, keeps the K with the minimal digest, and returns
/// a credential iff its normalized value clears the stake-proportional
/// threshold min(1, tau_proposer * stake / total_stake).
pub fn proposer_credential(
    account: AccountId,
    stake: u64,
    total_stake: u64,
    round: u64,
    prev_seed: &Seed,
    params: &ProtocolParams,
) -> Result<Option<Credential>, SortitionError> {
    if total_stake == 0 {
        return Err(SortitionError::ZeroTotalStake);
    }
    if stake == 0 {
        return Ok(None);
    }
    let mut best: Option<(Digest, u64)> = None;
    for k in 1..=stake {
        let d = proposer_subuser_digest(account, round, prev_seed, k, params.hashlen);
        match &best {
            Some((cur, _)) if *cur <= d => {}
            _ => best = Some((d, k)),
        }
    }
    let (digest, subuser) = best.expect("stake >= 1 yields at least one sub-user");
    let psi = (params.tau_proposer * stake as f64 / total_stake as f64).min(1.0);
    if normalize(&digest) < psi {
        Ok(Some(Credential { account, round, step: 1, subuser: Some(subuser), digest }))
    } else {
        Ok(None)
    }
}

/// Verifies a proposer credential by recomputing the claimed sub-user digest
/// and re-checking the selection threshold.
pub fn verify_proposer_credential(
    cred: &Credential,
    stake: u64,
    total_stake: u64,
    prev_seed: &Seed,
    params: &ProtocolParams,
) -> bool {
    let Some(subuser) = cred.subuser else { return false };
    if cred.step != 1 || subuser == 0 || subuser > stake || total_stake == 0 {
        return false;
    }
    let expect = proposer_subuser_digest(cred.account, cred.round, prev_seed, subuser, params.hashlen);
    if expect != cred.digest {
        return false;
    }
    let psi = (params.tau_proposer * stake as f64 / total_stake as f64).min(1.0);
    normalize(&cred.digest) < psi
}

/// Validator sortition digest for (round, step >= 2). Every staked account
/// has one; committee membership is decided by the vote count it maps to.
pub fn validator_credential(
    account: AccountId,
    round: u64,
    step: u32,
    prev_seed: &Seed,
    params: &ProtocolParams,
) -> Credential {
    debug_assert!(step >= 2, "validator credentials start at step 2");
    let digest = expected_signature(
        account,
        round,
        step,
        params.hashlen,
        "validator-credential",
        &[prev_seed.value.as_bytes(), &round.to_le_bytes(), &step.to_le_bytes()],
    );
    Credential { account, round, step, subuser: None, digest }
}

/// Verifies a validator credential by recomputation.
pub fn verify_validator_credential(cred: &Credential, prev_seed: &Seed, params: &ProtocolParams) -> bool {
    if cred.step < 2 || cred.subuser.is_some() {
        return false;
    }
    let expect = validator_credential(cred.account, cred.round, cred.step, prev_seed, params);
    expect.digest == cred.digest
}

/// Binomial(n, p) probability mass function as a dense vector over 0..=n
/// successes. Uses the multiplicative recurrence while the starting mass
/// (1-p)^n is representable and n is small, and log-space otherwise so large
/// stakes cannot underflow term by term.
pub fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&p), "selection probability must lie in [0, 1]");
    let len = usize::try_from(n + 1).expect("stake fits in memory");
    if p == 0.0 {
        let mut pmf = vec![0.0; len];
        pmf[0] = 1.0;
        return pmf;
    }
    if p == 1.0 {
        let mut pmf = vec![0.0; len];
        pmf[len - 1] = 1.0;
        return pmf;
    }
    let q = 1.0 - p;
    let start = q.powi(n as i32);
    if n <= 100 && start >= f64::MIN_POSITIVE {
        let mut pmf = Vec::with_capacity(len);
        let mut term = start;
        pmf.push(term);
        let ratio = p / q;
        for v in 0..n {
            term *= (n - v) as f64 / (v + 1) as f64 * ratio;
            pmf.push(term);
        }
        pmf
    } else {
        // ln C(n, v) from a cumulative log-factorial table, exponentiated
        // per term; far tails flush to zero instead of poisoning the rest.
        let mut ln_fact = Vec::with_capacity(len);
        ln_fact.push(0.0f64);
        for k in 1..=n {
            ln_fact.push(ln_fact[k as usize - 1] + (k as f64).ln());
        }
        let (ln_p, ln_q) = (p.ln(), q.ln());
        (0..=n)
            .map(|v| {
                let ln_choose = ln_fact[n as usize] - ln_fact[v as usize] - ln_fact[(n - v) as usize];
                (ln_choose + v as f64 * ln_p + (n - v) as f64 * ln_q).exp()
            })
            .collect()
    }
}

/// Per-account vote distribution for one step, exactly as the protocol
/// states it: Binomial(n = stake, p = stake / total_stake).
pub fn binomial_vote_pmf(stake: u64, total_stake: u64) -> Result<Vec<f64>, SortitionError> {
    if total_stake == 0 {
        return Err(SortitionError::ZeroTotalStake);
    }
    if stake > total_stake {
        return Err(SortitionError::InvalidPmf(format!(
            "stake {stake} exceeds total stake {total_stake}"
        )));
    }
    Ok(binomial_pmf(stake, stake as f64 / total_stake as f64))
}

/// Vote distribution scaled to a committee target: Binomial(stake, min(1,
/// target * stake / sum_sq_stake)). Expected total votes across accounts is
/// `target`; with target = sum_sq_stake / total_stake this reduces to
/// [`binomial_vote_pmf`].
pub fn scaled_vote_pmf(stake: u64, sum_sq_stake: f64, target: f64) -> Vec<f64> {
    assert!(sum_sq_stake > 0.0 && target >= 0.0);
    let p = (target * stake as f64 / sum_sq_stake).min(1.0);
    binomial_pmf(stake, p)
}

/// Cumulative vote ranges over [0, 1): a normalized credential value falling
/// in the v-th half-open range grants v votes.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteRangeTable {
    /// bounds[v] is the inclusive lower end of the v-vote range; the final
    /// entry is the exclusive upper end 1.0.
    bounds: Vec<f64>,
}

impl VoteRangeTable {
    /// Builds the table from a vote pmf. Adjacent ranges share their
    /// boundary value exactly, and the final bound is pinned to 1.0 so the
    /// table partitions [0, 1) without float-sum gaps.
    pub fn from_pmf(pmf: &[f64]) -> Result<Self, SortitionError> {
        if pmf.is_empty() {
            return Err(SortitionError::InvalidPmf("empty pmf".to_string()));
        }
        if pmf.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SortitionError::InvalidPmf("masses must be finite and nonnegative".to_string()));
        }
        let sum: f64 = pmf.iter().sum();
        if (sum - 1.0).abs() > PMF_SUM_TOL {
            return Err(SortitionError::InvalidPmf(format!("masses sum to {sum}, not 1")));
        }
        let mut bounds = Vec::with_capacity(pmf.len() + 1);
        bounds.push(0.0);
        let mut acc = 0.0;
        for w in pmf {
            acc += w;
            bounds.push(acc.min(1.0));
        }
        *bounds.last_mut().expect("nonempty") = 1.0;
        Ok(VoteRangeTable { bounds })
    }

    /// Unvalidated constructor for diagnostics and fault-injection tests;
    /// pair with [`check_partition`](Self::check_partition).
    pub fn from_raw_bounds(bounds: Vec<f64>) -> Self {
        VoteRangeTable { bounds }
    }

    /// Number of votes granted to a normalized credential value in [0, 1).
    pub fn assign(&self, lambda: f64) -> u64 {
        debug_assert!((0.0..1.0).contains(&lambda), "normalized values lie in [0, 1)");
        let uppers = &self.bounds[1..];
        uppers.partition_point(|b| *b <= lambda) as u64
    }

    /// Largest vote count the table can grant.
    pub fn max_votes(&self) -> u64 {
        (self.bounds.len() - 2) as u64
    }

    /// Verifies the ranges exactly partition [0, 1): bounds start at 0, end
    /// at 1, and never decrease. Adjacent ranges share bound values by
    /// construction, so any gap or overlap shows up as a violation here.
    pub fn check_partition(&self) -> Result<(), SortitionError> {
        if self.bounds.len() < 2 {
            return Err(SortitionError::InvalidTable("need at least one range".to_string()));
        }
        if self.bounds[0] != 0.0 {
            return Err(SortitionError::InvalidTable(format!(
                "first bound is {}, not 0",
                self.bounds[0]
            )));
        }
        if *self.bounds.last().unwrap() != 1.0 {
            return Err(SortitionError::InvalidTable(format!(
                "last bound is {}, not 1",
                self.bounds.last().unwrap()
            )));
        }
        for (v, pair) in self.bounds.windows(2).enumerate() {
            if !(pair[0] <= pair[1]) {
                return Err(SortitionError::InvalidTable(format!(
                    "bounds decrease at vote count {v}: {} > {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }
}
