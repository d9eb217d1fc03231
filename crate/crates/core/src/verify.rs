//! Built-in self-checks: fast, deterministic validations of the library's
//! core numerical claims, runnable from the CLI.
//!
//! Each check pits an implementation against an independently computed
//! route — a rearranged formula, an exact integer computation, or a paired
//! replay — so a silent regression in either side surfaces as a mismatch.

use crate::netsim::{NetworkParams, ReputationMode, ScenarioConfig, Simulation};
use crate::reputation::{
    compensation_factor, prefers, split_report, Candidate, ReputationList, RATIO_TIE_TOL,
};
use crate::sortition::{binomial_vote_pmf, scaled_vote_pmf, VoteRangeTable};
use crate::types::{Account, AccountId, Behavior, ProtocolParams, ValidatorPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;

/// Result of one self-check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(name: &'static str, detail: String) -> Self {
        CheckOutcome { name, passed: true, detail }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        CheckOutcome { name, passed: false, detail }
    }
}

/// Leader preference versus the compensation-factor inequality over a dense
/// 0.05 grid of credentials and scores. The two are algebraically the same
/// statement, so any disagreement outside the shared tie band is a defect.
pub fn check_leader_preference_grid() -> CheckOutcome {
    let name = "leader-preference-grid";
    let grid: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
    let thetas: Vec<f64> = grid.iter().copied().filter(|t| *t < 1.0).collect();
    let mut points = 0u64;
    let mut mismatches = 0u64;
    for (ti, &theta_better) in thetas.iter().enumerate() {
        for &theta_worse in &thetas[ti + 1..] {
            for &p_better in &grid {
                for &p_worse in &grid {
                    points += 1;
                    // Implementation route: ratio comparison inside `prefers`.
                    let better = Candidate { id: AccountId(0), theta: theta_better, score: p_better };
                    let worse = Candidate { id: AccountId(1), theta: theta_worse, score: p_worse };
                    let picked_worse = prefers(&better, &worse).id == worse.id;
                    // Independent route: the worse credential wins exactly
                    // when its score clears the compensated threshold.
                    let c = compensation_factor(theta_worse, theta_worse - theta_better)
                        .expect("grid keeps delta inside [0, theta)");
                    let lhs = p_worse;
                    let rhs = c * p_better;
                    let tied = (lhs - rhs).abs() <= RATIO_TIE_TOL * lhs.max(rhs);
                    // Ties resolve by account id in both routes; id 0 wins.
                    let oracle_picks_worse = !tied && lhs > rhs;
                    if picked_worse != oracle_picks_worse {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let detail = format!("{mismatches} mismatches over {points} grid points");
    if mismatches == 0 {
        CheckOutcome::pass(name, detail)
    } else {
        CheckOutcome::fail(name, detail)
    }
}

/// The split-report identity ratio = 2 + l_hat on random committees whose
/// trusted class carries exactly twice the suspect raw votes, plus the
/// trusted-loss bound l_h <= 2 * l_m under score ordering.
pub fn check_split_identity() -> CheckOutcome {
    let name = "split-identity";
    let mut rng = ChaCha12Rng::seed_from_u64(0x5011);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n_suspect = rng.gen_range(1..=5usize);
        let n_trusted = rng.gen_range(1..=6usize);
        let mut votes = BTreeMap::new();
        let mut scores = ReputationList::new(AccountId(0));
        let mut kappa_m = 0u64;
        for i in 0..n_suspect {
            let id = AccountId(100 + i as u32);
            let k = rng.gen_range(1..=4u64);
            kappa_m += k;
            votes.insert(id, k);
            scores.set_score(id, rng.gen_range(0.05..=0.5));
        }
        let kappa_h = 2 * kappa_m;
        for i in 0..n_trusted {
            let id = AccountId(i as u32);
            let share = kappa_h / n_trusted as u64 + u64::from((i as u64) < kappa_h % n_trusted as u64);
            if share > 0 {
                votes.insert(id, share);
                scores.set_score(id, rng.gen_range(0.5001..=1.0));
            }
        }
        let rep = split_report(&scores, &votes, 0.5);
        let (Some(ratio), Some(l_hat)) = (rep.ratio, rep.l_hat) else {
            return CheckOutcome::fail(name, "suspect class unexpectedly cast no weight".into());
        };
        worst = worst.max((ratio - (2.0 + l_hat)).abs());
        if rep.l_h > 2.0 * rep.l_m + 1e-12 {
            return CheckOutcome::fail(
                name,
                format!("trusted loss {} exceeded twice the suspect loss {}", rep.l_h, rep.l_m),
            );
        }
    }
    let detail = format!("max |ratio - (2 + l_hat)| = {worst:.3e} over 500 committees");
    if worst <= 1e-9 {
        CheckOutcome::pass(name, detail)
    } else {
        CheckOutcome::fail(name, detail)
    }
}

/// Exact binomial coefficients (u128 arithmetic) versus the recurrence-based
/// probability mass function, and the scaled form at its matching target.
pub fn check_binomial_pmf_exact() -> CheckOutcome {
    let name = "binomial-pmf-exact";
    fn choose(n: u64, k: u64) -> u128 {
        let k = k.min(n - k);
        let mut num = 1u128;
        let mut den = 1u128;
        for i in 0..k {
            num *= (n - i) as u128;
            den *= (i + 1) as u128;
        }
        num / den
    }
    let mut worst = 0.0f64;
    for &(stake, total) in &[(1u64, 3u64), (5, 20), (8, 8), (12, 40), (30, 100)] {
        let pmf = match binomial_vote_pmf(stake, total) {
            Ok(p) => p,
            Err(e) => return CheckOutcome::fail(name, format!("pmf construction failed: {e}")),
        };
        let p = stake as f64 / total as f64;
        for (v, &mass) in pmf.iter().enumerate() {
            let exact = choose(stake, v as u64) as f64
                * p.powi(v as i32)
                * (1.0 - p).powi((stake - v as u64) as i32);
            worst = worst.max((mass - exact).abs());
        }
        let sum: f64 = pmf.iter().sum();
        worst = worst.max((sum - 1.0).abs());
        // The scaled family collapses to the plain form when the target is
        // the stake-squared sum over the total.
        let sum_sq = (stake * stake) as f64;
        let scaled = scaled_vote_pmf(stake, sum_sq, sum_sq / total as f64);
        for (a, b) in scaled.iter().zip(&pmf) {
            worst = worst.max((a - b).abs());
        }
    }
    let detail = format!("max deviation from exact mass {worst:.3e}");
    if worst <= 1e-12 {
        CheckOutcome::pass(name, detail)
    } else {
        CheckOutcome::fail(name, detail)
    }
}

/// Vote range tables must partition [0, 1) exactly and answer boundary
/// lambdas consistently; a deliberately gapped table must be flagged.
pub fn check_range_table_partition() -> CheckOutcome {
    let name = "range-table-partition";
    let mut rng = ChaCha12Rng::seed_from_u64(0xc0ffee);
    for _ in 0..200 {
        let stake = rng.gen_range(1..=25u64);
        let total = stake + rng.gen_range(1..=100u64);
        let pmf = match binomial_vote_pmf(stake, total) {
            Ok(p) => p,
            Err(e) => return CheckOutcome::fail(name, format!("pmf failed: {e}")),
        };
        let table = match VoteRangeTable::from_pmf(&pmf) {
            Ok(t) => t,
            Err(e) => return CheckOutcome::fail(name, format!("table failed: {e}")),
        };
        if let Err(e) = table.check_partition() {
            return CheckOutcome::fail(name, format!("partition violated: {e}"));
        }
        if table.assign(0.0) != 0 && pmf[0] > 0.0 {
            return CheckOutcome::fail(name, "lambda 0 must map to the first bucket".into());
        }
    }
    // Mutation sensitivity: a gapped table must fail the partition check.
    let gapped = VoteRangeTable::from_raw_bounds(vec![0.0, 0.4, 0.9]);
    if gapped.check_partition().is_ok() {
        return CheckOutcome::fail(name, "a gapped table slipped past the partition check".into());
    }
    CheckOutcome::pass(name, "200 random tables partition [0, 1); gapped bait rejected".into())
}

/// Ten rounds with reputation disabled must replay byte-for-byte as the same
/// scenario under an all-ones oracle.
pub fn check_baseline_replay() -> CheckOutcome {
    let name = "baseline-replay";
    let accounts: Vec<Account> = (0..8)
        .map(|i| Account {
            id: AccountId(i),
            stake: 5,
            behavior: if i < 6 { Behavior::Honest } else { Behavior::IllicitProposer },
            illicit_rate: if i < 6 { 0.0 } else { 1.0 },
            policy: ValidatorPolicy::default(),
        })
        .collect();
    let base = ScenarioConfig {
        accounts,
        params: ProtocolParams::default(),
        network: NetworkParams::default(),
        rounds: 10,
        rng_seed: 424242,
        reputation_mode: ReputationMode::SlidingWindow,
    };
    let mut off = base.clone();
    off.params.reputation_enabled = false;
    let mut ones = base;
    ones.reputation_mode = ReputationMode::Oracle((0..8).map(|i| (AccountId(i), 1.0)).collect());
    let off_report = match Simulation::run_scenario(off) {
        Ok(r) => r,
        Err(e) => return CheckOutcome::fail(name, format!("reputation-off run failed: {e}")),
    };
    let ones_report = match Simulation::run_scenario(ones) {
        Ok(r) => r,
        Err(e) => return CheckOutcome::fail(name, format!("all-ones run failed: {e}")),
    };
    let mut off_csv = Vec::new();
    let mut ones_csv = Vec::new();
    if crate::metrics::write_records_csv(&mut off_csv, &off_report.records).is_err()
        || crate::metrics::write_records_csv(&mut ones_csv, &ones_report.records).is_err()
    {
        return CheckOutcome::fail(name, "csv serialization failed".into());
    }
    if off_csv == ones_csv {
        CheckOutcome::pass(name, format!("{} identical bytes over 10 rounds", off_csv.len()))
    } else {
        CheckOutcome::fail(name, "reputation-off and all-ones runs diverged".into())
    }
}

/// Runs every check in a fixed order.
pub fn run_all_checks() -> Vec<CheckOutcome> {
    vec![
        check_leader_preference_grid(),
        check_split_identity(),
        check_binomial_pmf_exact(),
        check_range_table_partition(),
        check_baseline_replay(),
    ]
}
