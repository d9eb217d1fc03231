//! Reputation scores and the arithmetic they induce on credentials, votes
//! and leader choice.
//!
//! A score p in [epsilon, 1] scales everything its owner presents: a
//! credential value Lambda is perceived as p * Lambda, a kappa-vote ballot
//! counts as p * kappa. The comparisons here (`prefers`,
//! `compensation_factor`) are two algebraic views of the same replacement
//! rule: a worse raw credential wins once its owner's score clears the
//! compensated threshold.

use crate::sortition::VoteRangeTable;
use crate::types::AccountId;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use thiserror::Error;

/// Relative width below which two credential-over-score ratios count as
/// equal. Scores often arrive as decimal-rounded values whose ratios can sit
/// exactly on a decision boundary; inside this band the strict comparison is
/// treated as a tie (and resolved by account id) instead of being decided by
/// rounding noise.
pub const RATIO_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ReputationError {
    #[error("compensation factor undefined for theta {theta}, delta {delta}")]
    UndefinedCompensation { theta: f64, delta: f64 },
    #[error("no attenuation reports to average")]
    NoReports,
    #[error("malformed score table at line {line}: {reason}")]
    ScoreParse { line: usize, reason: String },
    #[error("score table i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One generated transaction as the scorer sees it: when, and whether it was
/// illicit (simulation ground truth stands in for an external classifier).
#[derive(Debug, Clone, Copy)]
pub struct TxStamp {
    pub round: u64,
    pub illicit: bool,
}

/// A node's view of everyone's trustworthiness. Accounts without an entry
/// score 1.0: no history means no evidence against them.
#[derive(Debug, Clone)]
pub struct ReputationList {
    pub owner: AccountId,
    pub refreshed_round: u64,
    scores: BTreeMap<AccountId, f64>,
}

impl ReputationList {
    pub fn new(owner: AccountId) -> Self {
        ReputationList { owner, refreshed_round: 0, scores: BTreeMap::new() }
    }

    pub fn with_scores(owner: AccountId, refreshed_round: u64, scores: BTreeMap<AccountId, f64>) -> Self {
        ReputationList { owner, refreshed_round, scores }
    }

    pub fn score(&self, account: AccountId) -> f64 {
        self.scores.get(&account).copied().unwrap_or(1.0)
    }

    pub fn set_score(&mut self, account: AccountId, score: f64) {
        self.scores.insert(account, score);
    }

    pub fn scores(&self) -> &BTreeMap<AccountId, f64> {
        &self.scores
    }
}

/// Scores accounts from their transaction window: 1 minus the fraction of
/// illicit transactions over the last `window_rounds` completed rounds,
/// floored at `epsilon`. Accounts with no transactions in the window keep a
/// clean slate of 1.0.
pub fn score_accounts(
    history: &BTreeMap<AccountId, Vec<TxStamp>>,
    current_round: u64,
    window_rounds: u32,
    epsilon: f64,
) -> BTreeMap<AccountId, f64> {
    let window_start = current_round.saturating_sub(u64::from(window_rounds));
    let mut out = BTreeMap::new();
    for (&account, stamps) in history {
        let mut total = 0u64;
        let mut illicit = 0u64;
        for s in stamps {
            if s.round >= window_start && s.round < current_round {
                total += 1;
                illicit += s.illicit as u64;
            }
        }
        let score = if total == 0 {
            1.0
        } else {
            (1.0 - illicit as f64 / total as f64).clamp(epsilon, 1.0)
        };
        out.insert(account, score);
    }
    out
}

/// Compensation factor C = 1 / (1 - delta / theta): the score multiple an
/// alternative must clear to beat a credential that is `delta` better.
pub fn compensation_factor(theta: f64, delta: f64) -> Result<f64, ReputationError> {
    if !(theta > 0.0) || !(0.0..theta).contains(&delta) {
        return Err(ReputationError::UndefinedCompensation { theta, delta });
    }
    Ok(1.0 / (1.0 - delta / theta))
}

/// A proposer as one validator perceives it: raw credential value and the
/// score the validator assigns to the proposing account.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: AccountId,
    pub theta: f64,
    pub score: f64,
}

impl Candidate {
    fn perceived_ratio(&self) -> f64 {
        self.theta / self.score
    }
}

/// Picks the candidate with the smaller theta/score. Ratios within
/// [`RATIO_TIE_TOL`] of each other are ties and go to the smaller account id.
pub fn prefers<'a>(a: &'a Candidate, b: &'a Candidate) -> &'a Candidate {
    let (ra, rb) = (a.perceived_ratio(), b.perceived_ratio());
    if (ra - rb).abs() <= RATIO_TIE_TOL * ra.max(rb) {
        if a.id <= b.id { a } else { b }
    } else if ra < rb {
        a
    } else {
        b
    }
}

/// Outcome of leader selection from one validator's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaderChoice {
    Proposal(AccountId),
    Empty,
}

/// Reputation-weighted leader choice: argmin of theta/score over the
/// candidates (folded in account-id order so ties are reproducible), vetoed
/// to Empty when even the winner's score sits at or below `p_th`.
pub fn select_leader(candidates: &[Candidate], p_th: f64) -> LeaderChoice {
    let mut sorted: Vec<&Candidate> = candidates.iter().collect();
    sorted.sort_by_key(|c| c.id);
    let Some(mut best) = sorted.first().copied() else { return LeaderChoice::Empty };
    for c in &sorted[1..] {
        best = prefers(best, c);
    }
    if best.score > p_th {
        LeaderChoice::Proposal(best.id)
    } else {
        LeaderChoice::Empty
    }
}

/// Baseline leader choice with reputation disabled: plain argmin of the raw
/// credential value, ties to the smaller id, no veto.
pub fn select_leader_raw(candidates: &[Candidate]) -> Option<AccountId> {
    candidates
        .iter()
        .min_by(|a, b| a.theta.total_cmp(&b.theta).then(a.id.cmp(&b.id)))
        .map(|c| c.id)
}

/// Degraded rule kept for comparison runs: the raw-credential winner is
/// vetoed when distrusted, but no alternative replaces it — the vote simply
/// goes Empty.
pub fn select_leader_veto_only(candidates: &[Candidate], p_th: f64) -> LeaderChoice {
    match select_leader_raw(candidates) {
        None => LeaderChoice::Empty,
        Some(id) => {
            let winner = candidates.iter().find(|c| c.id == id).expect("winner came from candidates");
            if winner.score > p_th {
                LeaderChoice::Proposal(id)
            } else {
                LeaderChoice::Empty
            }
        }
    }
}

/// Surety condition for replacing a distrusted leader: the alternative's
/// score must exceed C_{leader,alt} * p_th, where the factor compensates for
/// the alternative's worse raw credential. When this holds, `select_leader`
/// picks the alternative no matter what sub-threshold score the leader has.
pub fn alternative_defeats_leader(
    theta_leader: f64,
    theta_alt: f64,
    score_alt: f64,
    p_th: f64,
) -> Result<bool, ReputationError> {
    let c = compensation_factor(theta_alt, theta_alt - theta_leader)?;
    Ok(score_alt > c * p_th)
}

/// Integer votes a ballot appears to carry once its credential value is
/// scaled by the voter's score, read off the same unscaled range table.
pub fn perceived_votes(score: f64, lambda: f64, table: &VoteRangeTable) -> u64 {
    table.assign(score * lambda)
}

/// Credential value lost to attenuation: Lambda * (1 - p).
pub fn credential_attenuation(score: f64, lambda: f64) -> f64 {
    lambda * (1.0 - score)
}

/// Effective voting weight of a ballot set under the given scores: returns
/// (V, L) with V = sum of p * kappa and L = sum of kappa - V.
pub fn effective_votes(scores: &ReputationList, votes: &BTreeMap<AccountId, u64>) -> (f64, f64) {
    let mut v = 0.0;
    let mut total = 0.0;
    for (&voter, &kappa) in votes {
        v += scores.score(voter) * kappa as f64;
        total += kappa as f64;
    }
    (v, total - v)
}

/// Effective votes and losses broken out by trust class (score above vs at
/// or below p_th), plus the derived loss gap and vote-ratio statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub kappa_h: f64,
    pub kappa_m: f64,
    pub v_h: f64,
    pub v_m: f64,
    pub l_h: f64,
    pub l_m: f64,
    /// delta_l = 2 * l_m - l_h.
    pub delta_l: f64,
    /// delta_l / v_m; undefined when the suspect class cast no weight.
    pub l_hat: Option<f64>,
    /// v_h / v_m; undefined when the suspect class cast no weight.
    pub ratio: Option<f64>,
}

/// Builds a [`SplitReport`] from per-voter (granted, perceived, trusted)
/// triples under an arbitrary partition. [`split_report`] partitions by the
/// score threshold; measurement code may partition by ground truth instead
/// (the two coincide whenever scores separate the classes across p_th).
pub fn split_by<I>(parts: I) -> SplitReport
where
    I: IntoIterator<Item = (u64, f64, bool)>,
{
    let (mut kappa_h, mut kappa_m, mut v_h, mut v_m) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (kappa, perceived, trusted) in parts {
        let k = kappa as f64;
        if trusted {
            kappa_h += k;
            v_h += perceived;
        } else {
            kappa_m += k;
            v_m += perceived;
        }
    }
    let l_h = kappa_h - v_h;
    let l_m = kappa_m - v_m;
    let delta_l = 2.0 * l_m - l_h;
    let (l_hat, ratio) = if v_m > 0.0 { (Some(delta_l / v_m), Some(v_h / v_m)) } else { (None, None) };
    SplitReport { kappa_h, kappa_m, v_h, v_m, l_h, l_m, delta_l, l_hat, ratio }
}

/// Splits a ballot set into trusted (score > p_th) and suspect voters and
/// reports the class-wise effective votes, losses and their ratio.
pub fn split_report(scores: &ReputationList, votes: &BTreeMap<AccountId, u64>, p_th: f64) -> SplitReport {
    split_by(votes.iter().map(|(&voter, &kappa)| {
        let p = scores.score(voter);
        (kappa, p * kappa as f64, p > p_th)
    }))
}

/// One voter's ballot as a counting validator perceived it.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterView {
    pub kappa: u64,
    /// Real-valued perceived weight p * kappa.
    pub perceived: f64,
    /// kappa - perceived.
    pub loss: f64,
}

/// Everything one counting validator observed about a voting step: granted
/// and perceived votes per voter, class split, and the aggregate loss.
#[derive(Debug, Clone)]
pub struct AttenuationReport {
    pub counter: AccountId,
    pub round: u64,
    pub step: u32,
    pub per_voter: BTreeMap<AccountId, VoterView>,
    pub total_kappa: u64,
    pub effective: f64,
    pub loss: f64,
    pub split: SplitReport,
}

/// Builds a counting validator's report over a step's ballots.
pub fn attenuation_report(
    counter: AccountId,
    round: u64,
    step: u32,
    scores: &ReputationList,
    votes: &BTreeMap<AccountId, u64>,
    p_th: f64,
) -> AttenuationReport {
    let mut per_voter = BTreeMap::new();
    let mut total_kappa = 0u64;
    for (&voter, &kappa) in votes {
        let perceived = scores.score(voter) * kappa as f64;
        per_voter.insert(voter, VoterView { kappa, perceived, loss: kappa as f64 - perceived });
        total_kappa += kappa;
    }
    let (effective, loss) = effective_votes(scores, votes);
    let split = split_report(scores, votes, p_th);
    AttenuationReport { counter, round, step, per_voter, total_kappa, effective, loss, split }
}

/// Expected vote loss for a step: the mean of the counting validators'
/// per-report losses.
pub fn expected_attenuation(reports: &[AttenuationReport]) -> Result<f64, ReputationError> {
    if reports.is_empty() {
        return Err(ReputationError::NoReports);
    }
    Ok(reports.iter().map(|r| r.loss).sum::<f64>() / reports.len() as f64)
}

/// Next-round committee vote target: the baseline grown by the expected
/// loss, so attenuation is paid for by extra raw votes.
pub fn compensate(v_rs: f64, expected_loss: f64) -> f64 {
    v_rs + expected_loss
}

/// Writes a score table as `account_id,score` rows with a header line.
pub fn write_scores<W: Write>(mut w: W, scores: &BTreeMap<AccountId, f64>) -> Result<(), ReputationError> {
    writeln!(w, "account_id,score")?;
    for (account, score) in scores {
        writeln!(w, "{account},{score}")?;
    }
    Ok(())
}

/// Reads a score table written by [`write_scores`]; scores must lie in [0, 1].
pub fn read_scores<R: BufRead>(r: R) -> Result<BTreeMap<AccountId, f64>, ReputationError> {
    let mut out = BTreeMap::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if idx == 0 {
            if line != "account_id,score" {
                return Err(ReputationError::ScoreParse {
                    line: 1,
                    reason: format!("expected header 'account_id,score', got '{line}'"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parse = |reason: String| ReputationError::ScoreParse { line: idx + 1, reason };
        let (id_str, score_str) = line
            .split_once(',')
            .ok_or_else(|| parse("expected two comma-separated fields".to_string()))?;
        let id: u32 = id_str.trim().parse().map_err(|e| parse(format!("bad account id: {e}")))?;
        let score: f64 = score_str.trim().parse().map_err(|e| parse(format!("bad score: {e}")))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(parse(format!("score {score} outside [0, 1]")));
        }
        if out.insert(AccountId(id), score).is_some() {
            return Err(parse(format!("duplicate account id {id}")));
        }
    }
    Ok(out)
}
