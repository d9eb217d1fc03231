//! Per-round records, CSV emission, run summaries and parameter sweeps.
//!
//! The CSV layer is deliberately hand-rolled: the column set is small and
//! fixed, and byte-stable output (exact column order, exact float format)
//! is a hard requirement for replay comparisons, so the format is pinned
//! here rather than delegated.

use crate::netsim::{ScenarioConfig, SimReport};
use crate::types::Behavior;
use std::io::Write;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("unknown sweep parameter '{0}' (expected p_th, honest_stake_fraction, or illicit_rate)")]
    UnknownParam(String),
    #[error("sweep value {value} invalid for {param}: {reason}")]
    InvalidValue { param: String, value: f64, reason: String },
}

/// Fixed column order of the per-round CSV.
pub const CSV_HEADER: &str = "round,leader_id,leader_honest,block_empty,illicit_tx_count,steps_used,total_votes_step2,effective_votes_step2,attenuation,ratio_hm,l_hat,compensated_committee";

/// One finalized round as observed by the honest reporters.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub leader_id: Option<u32>,
    pub leader_honest: Option<bool>,
    pub block_empty: bool,
    pub illicit_tx_count: u64,
    pub steps_used: u32,
    /// Mean granted step-2 votes across honest reports.
    pub total_votes_step2: f64,
    /// Mean perceived step-2 votes across honest reports.
    pub effective_votes_step2: f64,
    /// Mean step-2 vote loss across honest reports.
    pub attenuation: f64,
    /// Mean effective-vote ratio of ground-truth honest to malicious voters
    /// (score-weighted); `None` when no malicious-class account voted.
    pub ratio_hm: Option<f64>,
    /// Mean normalized loss gap (2*l_m - l_h) / v_m over the same classes;
    /// `None` alongside `ratio_hm`.
    pub l_hat: Option<f64>,
    /// Committee vote target the round's sortition actually used.
    pub compensated_committee: f64,
}

/// Nine-significant-digit scientific notation, the one float format every
/// emitted CSV uses.
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

fn fmt_opt_f64(x: Option<f64>) -> String {
    x.map(fmt_sig9).unwrap_or_default()
}

impl RoundRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.leader_id.map(|v| v.to_string()).unwrap_or_default(),
            self.leader_honest.map(|v| v.to_string()).unwrap_or_default(),
            self.block_empty,
            self.illicit_tx_count,
            self.steps_used,
            fmt_sig9(self.total_votes_step2),
            fmt_sig9(self.effective_votes_step2),
            fmt_sig9(self.attenuation),
            fmt_opt_f64(self.ratio_hm),
            fmt_opt_f64(self.l_hat),
            fmt_sig9(self.compensated_committee),
        )
    }
}

/// Writes the header plus one row per record, with `\n` line endings.
pub fn write_records_csv<W: Write>(mut w: W, records: &[RoundRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.to_csv_row())?;
    }
    Ok(())
}

/// Aggregate statistics over a run's records.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rounds: u64,
    pub empty_rate: f64,
    /// Fraction of rounds whose block carried at least one illicit payment.
    pub illicit_round_rate: f64,
    pub total_illicit_txs: u64,
    /// Fraction of rounds led by a non-honest account.
    pub malicious_leader_rate: f64,
    pub mean_steps: f64,
    pub mean_total_votes: f64,
    pub mean_effective_votes: f64,
    pub mean_attenuation: f64,
    pub mean_ratio_hm: Option<f64>,
    pub mean_l_hat: Option<f64>,
}

pub fn summarize(records: &[RoundRecord]) -> RunSummary {
    let n = records.len() as f64;
    let frac = |count: usize| if records.is_empty() { 0.0 } else { count as f64 / n };
    let mean = |f: &dyn Fn(&RoundRecord) -> f64| {
        if records.is_empty() {
            0.0
        } else {
            records.iter().map(|r| f(r)).sum::<f64>() / n
        }
    };
    let mean_opt = |f: &dyn Fn(&RoundRecord) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = records.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    RunSummary {
        rounds: records.len() as u64,
        empty_rate: frac(records.iter().filter(|r| r.block_empty).count()),
        illicit_round_rate: frac(records.iter().filter(|r| r.illicit_tx_count > 0).count()),
        total_illicit_txs: records.iter().map(|r| r.illicit_tx_count).sum(),
        malicious_leader_rate: frac(
            records.iter().filter(|r| r.leader_honest == Some(false)).count(),
        ),
        mean_steps: mean(&|r| f64::from(r.steps_used)),
        mean_total_votes: mean(&|r| r.total_votes_step2),
        mean_effective_votes: mean(&|r| r.effective_votes_step2),
        mean_attenuation: mean(&|r| r.attenuation),
        mean_ratio_hm: mean_opt(&|r| r.ratio_hm),
        mean_l_hat: mean_opt(&|r| r.l_hat),
    }
}

/// Scenario dimensions the sweep runner can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    PTh,
    HonestStakeFraction,
    IllicitRate,
}

impl SweepParam {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::PTh => "p_th",
            SweepParam::HonestStakeFraction => "honest_stake_fraction",
            SweepParam::IllicitRate => "illicit_rate",
        }
    }
}

impl FromStr for SweepParam {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p_th" => Ok(SweepParam::PTh),
            "honest_stake_fraction" => Ok(SweepParam::HonestStakeFraction),
            "illicit_rate" => Ok(SweepParam::IllicitRate),
            other => Err(MetricsError::UnknownParam(other.to_string())),
        }
    }
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rewrites one scenario dimension to the swept value, and nothing else —
/// a sweep that silently changed a second dimension would not measure the
/// trend it claims to.
///
/// `HonestStakeFraction` reassigns behaviors in account-id order until the
/// honest prefix holds at least the requested stake share; the remainder
/// become illicit proposers at rate 1. Oracle scores are left as written:
/// sweep stake under a uniform all-ones oracle for the raw baseline, or in
/// sliding-window mode to let scores track the reassigned behaviors.
pub fn apply_sweep_value(
    config: &mut ScenarioConfig,
    param: SweepParam,
    value: f64,
) -> Result<(), MetricsError> {
    let invalid = |reason: &str| MetricsError::InvalidValue {
        param: param.to_string(),
        value,
        reason: reason.to_string(),
    };
    match param {
        SweepParam::PTh => {
            if !(0.0..1.0).contains(&value) {
                return Err(invalid("p_th must lie in [0, 1)"));
            }
            config.params.p_th = value;
        }
        SweepParam::IllicitRate => {
            if !(0.0..=1.0).contains(&value) {
                return Err(invalid("illicit_rate must lie in [0, 1]"));
            }
            for account in &mut config.accounts {
                if account.behavior != Behavior::Honest {
                    account.illicit_rate = value;
                }
            }
        }
        SweepParam::HonestStakeFraction => {
            if !(0.0..=1.0).contains(&value) {
                return Err(invalid("honest_stake_fraction must lie in [0, 1]"));
            }
            let total: u64 = config.accounts.iter().map(|a| a.stake).sum();
            let mut honest_so_far = 0u64;
            for account in &mut config.accounts {
                if (honest_so_far as f64) < value * total as f64 {
                    account.behavior = Behavior::Honest;
                    account.illicit_rate = 0.0;
                    honest_so_far += account.stake;
                } else {
                    account.behavior = Behavior::IllicitProposer;
                    account.illicit_rate = 1.0;
                }
            }
        }
    }
    Ok(())
}

/// Fixed column order of the sweep summary CSV.
pub const SWEEP_HEADER: &str = "param,value,rounds,empty_rate,illicit_round_rate,malicious_leader_rate,mean_steps,mean_effective_votes,mean_attenuation,mean_ratio_hm,mean_l_hat,mean_rep_illicit";

/// One sweep point: the value run and what came out.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub summary: RunSummary,
    /// Mean final reputation of illicit-rate accounts, when any exist.
    pub mean_rep_illicit: Option<f64>,
}

impl SweepRow {
    pub fn from_report(param: SweepParam, value: f64, report: &SimReport) -> SweepRow {
        SweepRow {
            param,
            value,
            summary: summarize(&report.records),
            mean_rep_illicit: report.mean_illicit_reputation,
        }
    }
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.param,
            fmt_sig9(r.value),
            r.summary.rounds,
            fmt_sig9(r.summary.empty_rate),
            fmt_sig9(r.summary.illicit_round_rate),
            fmt_sig9(r.summary.malicious_leader_rate),
            fmt_sig9(r.summary.mean_steps),
            fmt_sig9(r.summary.mean_effective_votes),
            fmt_sig9(r.summary.mean_attenuation),
            fmt_opt_f64(r.summary.mean_ratio_hm),
            fmt_opt_f64(r.summary.mean_l_hat),
            fmt_opt_f64(r.mean_rep_illicit),
        )?;
    }
    Ok(())
}
