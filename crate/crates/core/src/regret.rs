//! Loss evaluation, regret distributions, satisfaction probabilities, and
//! threshold selection.
//!
//! Regret of a candidate against a target is the per-scenario difference in
//! next-period log-wealth loss, candidate minus target, simulated over a
//! shared posterior-predictive sample (common random numbers). The
//! satisfaction probability is the fraction of scenarios where the candidate
//! is no worse; selection keeps candidates whose probability clears the
//! investor's threshold.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::Decision;
use crate::error::{Error, Result};
use crate::mc::ReturnSample;

/// Whether "no worse than the target" counts ties (weak) or not (strict).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InequalityMode {
    #[default]
    Weak,
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Among admissible candidates, the smallest satisfaction probability
    /// at or above the threshold.
    #[default]
    ClosestToKappa,
    MaxPi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionRule {
    None,
    /// At most one fund added and at most one removed between consecutive
    /// selections.
    #[default]
    OneFundChange,
}

/// Threshold-selection policy.
#[derive(Debug, Clone)]
pub struct SelectionPolicy {
    pub kappa: f64,
    pub tie_rule: TieRule,
    pub transition_rule: TransitionRule,
    /// Optional per-asset monthly expense ratios subtracted from returns
    /// inside the loss.
    pub fee_vector: Option<Array1<f64>>,
}

impl SelectionPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "kappa {} outside (0, 1)",
                self.kappa
            )));
        }
        if let Some(fees) = &self.fee_vector {
            if fees.iter().any(|&f| f < 0.0 || !f.is_finite()) {
                return Err(Error::InvalidArgument("fee entries must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Probabilities at which regret quantiles are reported.
pub const QUANTILE_PROBS: [f64; 7] = [0.10, 0.20, 0.40, 0.50, 0.60, 0.80, 0.90];

/// Monte Carlo distribution of regret (or any scalar diagnostic) for one
/// candidate/target pair.
#[derive(Debug, Clone)]
pub struct RegretDistribution {
    /// Valid draws, in draw order.
    pub draws: Vec<f64>,
    pub mean: f64,
    /// (probability, value) pairs at `QUANTILE_PROBS`.
    pub quantiles: Vec<(f64, f64)>,
    /// Fraction of valid draws that are nonpositive (weak mode) or strictly
    /// negative (strict mode).
    pub pi: f64,
    /// Draws discarded because either portfolio left the log domain.
    pub n_invalid: usize,
}

/// Linear-interpolation quantile on sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

impl RegretDistribution {
    /// Builds summary statistics from per-draw values.
    pub fn from_draws(draws: Vec<f64>, n_invalid: usize, ineq: InequalityMode) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Numerical(
                "all Monte Carlo draws were invalid".into(),
            ));
        }
        let m = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / m;
        let satisfied = draws
            .iter()
            .filter(|&&r| match ineq {
                InequalityMode::Weak => r <= 0.0,
                InequalityMode::Strict => r < 0.0,
            })
            .count();
        let pi = satisfied as f64 / m;
        let mut sorted = draws.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let quantiles = QUANTILE_PROBS
            .iter()
            .map(|&p| (p, quantile_sorted(&sorted, p)))
            .collect();
        Ok(RegretDistribution {
            draws,
            mean,
            quantiles,
            pi,
            n_invalid,
        })
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.quantiles
            .iter()
            .find(|(q, _)| (*q - p).abs() < 1e-12)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    }
}

/// Negative log cumulative return of a portfolio, optionally net of fees.
pub fn loss_log_wealth(
    weights: &Array1<f64>,
    returns: &Array1<f64>,
    fees: Option<&Array1<f64>>,
) -> Result<f64> {
    let mut port = 0.0;
    match fees {
        Some(tau) => {
            for ((&w, &r), &t) in weights.iter().zip(returns.iter()).zip(tau.iter()) {
                port += w * (r - t);
            }
        }
        None => {
            for (&w, &r) in weights.iter().zip(returns.iter()) {
                port += w * r;
            }
        }
    }
    if port <= -1.0 {
        return Err(Error::Numerical(format!(
            "portfolio return {port} outside the log domain"
        )));
    }
    Ok(-(1.0 + port).ln())
}

/// Weight/fee pairs restricted to the nonzero support, paired with column
/// indices, for the draw-loop hot path.
struct SupportWeights {
    entries: Vec<(usize, f64, f64)>,
}

impl SupportWeights {
    fn new(weights: &Array1<f64>, fees: Option<&Array1<f64>>) -> Self {
        let entries = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| w.abs() > 1e-12)
            .map(|(i, &w)| (i, w, fees.map_or(0.0, |tau| tau[i])))
            .collect();
        SupportWeights { entries }
    }

    #[inline]
    fn portfolio_return(&self, row: &[f64]) -> f64 {
        let mut port = 0.0;
        for &(i, w, tau) in &self.entries {
            port += w * (row[i] - tau);
        }
        port
    }
}

fn draw_rows(sample: &ReturnSample) -> impl Iterator<Item = &[f64]> {
    let n = sample.draws.ncols();
    let data = sample
        .draws
        .as_slice()
        .expect("draw matrix is row-major contiguous");
    data.chunks_exact(n).take(sample.m)
}

/// Per-draw losses of one weight vector over the sample; `None` marks a
/// log-domain violation.
fn losses_over_sample(
    weights: &Array1<f64>,
    sample: &ReturnSample,
    fees: Option<&Array1<f64>>,
) -> Vec<Option<f64>> {
    let sw = SupportWeights::new(weights, fees);
    draw_rows(sample)
        .map(|row| {
            let port = sw.portfolio_return(row);
            if port <= -1.0 {
                None
            } else {
                Some(-(1.0 + port).ln())
            }
        })
        .collect()
}

/// Satisfaction probability alone, without materializing the draw vector.
fn pi_against_losses(
    weights: &Array1<f64>,
    target_losses: &[Option<f64>],
    sample: &ReturnSample,
    fees: Option<&Array1<f64>>,
    ineq: InequalityMode,
) -> Result<f64> {
    let sw = SupportWeights::new(weights, fees);
    let mut valid = 0usize;
    let mut satisfied = 0usize;
    for (row, lt) in draw_rows(sample).zip(target_losses.iter()) {
        let port = sw.portfolio_return(row);
        let Some(lt) = lt else { continue };
        if port <= -1.0 {
            continue;
        }
        let rho = -(1.0 + port).ln() - lt;
        valid += 1;
        let ok = match ineq {
            InequalityMode::Weak => rho <= 0.0,
            InequalityMode::Strict => rho < 0.0,
        };
        if ok {
            satisfied += 1;
        }
    }
    if valid == 0 {
        return Err(Error::Numerical(
            "all Monte Carlo draws were invalid".into(),
        ));
    }
    Ok(satisfied as f64 / valid as f64)
}

/// Regret distribution of a candidate against a target over a shared sample.
///
/// Per draw, regret is candidate loss minus target loss; draws violating the
/// log domain for either portfolio are excluded and counted.
pub fn regret_distribution(
    w_sparse: &Array1<f64>,
    w_target: &Array1<f64>,
    sample: &ReturnSample,
    fees: Option<&Array1<f64>>,
    ineq: InequalityMode,
) -> Result<RegretDistribution> {
    let target_losses = losses_over_sample(w_target, sample, fees);
    regret_against_losses(w_sparse, &target_losses, sample, fees, ineq)
}

fn regret_against_losses(
    w_sparse: &Array1<f64>,
    target_losses: &[Option<f64>],
    sample: &ReturnSample,
    fees: Option<&Array1<f64>>,
    ineq: InequalityMode,
) -> Result<RegretDistribution> {
    let sw = SupportWeights::new(w_sparse, fees);
    let mut draws = Vec::with_capacity(sample.m);
    let mut n_invalid = 0usize;
    for (row, lt) in draw_rows(sample).zip(target_losses.iter()) {
        let port = sw.portfolio_return(row);
        match (port > -1.0, lt) {
            (true, Some(lt)) => draws.push(-(1.0 + port).ln() - lt),
            _ => n_invalid += 1,
        }
    }
    RegretDistribution::from_draws(draws, n_invalid, ineq)
}

/// Satisfaction probability of every candidate against one target, all
/// computed on the same draws.
pub fn satisfaction_probabilities(
    decisions: &[Decision],
    target: &Decision,
    sample: &ReturnSample,
    fees: Option<&Array1<f64>>,
    ineq: InequalityMode,
) -> Result<Vec<f64>> {
    let target_losses = losses_over_sample(&target.weights, sample, fees);
    decisions
        .par_iter()
        .map(|d| pi_against_losses(&d.weights, &target_losses, sample, fees, ineq))
        .collect()
}

/// Full regret distributions for every candidate against one target.
pub fn regret_cross_section(
    decisions: &[Decision],
    target: &Decision,
    sample: &ReturnSample,
    fees: Option<&Array1<f64>>,
    ineq: InequalityMode,
) -> Result<Vec<RegretDistribution>> {
    let target_losses = losses_over_sample(&target.weights, sample, fees);
    decisions
        .par_iter()
        .map(|d| regret_against_losses(&d.weights, &target_losses, sample, fees, ineq))
        .collect()
}

/// Monthly and annualized distributions of the predictive Sharpe-ratio
/// difference, target minus candidate, one value per parameter draw.
#[derive(Debug, Clone)]
pub struct SharpeDiffSummary {
    pub monthly: RegretDistribution,
    /// Monthly values scaled by sqrt(12).
    pub annualized: RegretDistribution,
}

/// Predictive Sharpe-ratio difference over retained parameter draws.
pub fn sharpe_diff_distribution(
    w_sparse: &Array1<f64>,
    w_target: &Array1<f64>,
    sample: &ReturnSample,
) -> Result<SharpeDiffSummary> {
    let params = sample.param_summary.as_ref().ok_or_else(|| {
        Error::InvalidArgument("sample was generated without parameter summaries".into())
    })?;
    let mut monthly = Vec::with_capacity(params.len());
    for p in params {
        let sr = |w: &Array1<f64>| -> Result<f64> {
            let var = w.dot(&p.sigma.dot(w));
            if var <= 0.0 {
                return Err(Error::Numerical(format!(
                    "portfolio predictive variance {var} <= 0"
                )));
            }
            Ok(w.dot(&p.mu) / var.sqrt())
        };
        monthly.push(sr(w_target)? - sr(w_sparse)?);
    }
    let annual: Vec<f64> = monthly.iter().map(|v| v * 12f64.sqrt()).collect();
    Ok(SharpeDiffSummary {
        monthly: RegretDistribution::from_draws(monthly, 0, InequalityMode::Weak)?,
        annualized: RegretDistribution::from_draws(annual, 0, InequalityMode::Weak)?,
    })
}

/// True when `cur` differs from `prev` by at most one added fund and at most
/// one removed fund.
pub fn one_fund_change_ok(cur: &[usize], prev: &[usize]) -> bool {
    let additions = cur.iter().filter(|i| !prev.contains(i)).count();
    let removals = prev.iter().filter(|i| !cur.contains(i)).count();
    additions <= 1 && removals <= 1
}

/// Outcome of threshold selection for one period.
#[derive(Debug, Clone)]
pub struct Selection {
    pub decision: Decision,
    /// Index into the candidate list; `None` when the previous decision was
    /// carried forward.
    pub index: Option<usize>,
    /// Satisfaction probability of the winner; `None` when carried forward.
    pub pi: Option<f64>,
    /// The threshold could not be met.
    pub fallback: bool,
    /// No candidate satisfied the transition rule; the previous decision was
    /// held unchanged.
    pub held_previous: bool,
}

fn better_candidate(key_a: f64, a: usize, key_b: f64, b: usize, candidates: &[Decision]) -> bool {
    // Smaller key wins; ties broken by smaller support, then id.
    if key_a != key_b {
        return key_a < key_b;
    }
    let (sa, sb) = (candidates[a].support.len(), candidates[b].support.len());
    if sa != sb {
        return sa < sb;
    }
    candidates[a].id < candidates[b].id
}

/// Selects one decision: among candidates satisfying the transition rule,
/// prefer those with satisfaction probability at or above kappa (winner per
/// tie rule); if none clears the threshold, take the maximal probability with
/// a fallback flag; if no candidate satisfies the transition rule at all,
/// hold the previous decision unchanged.
pub fn select(
    candidates: &[Decision],
    pis: &[f64],
    policy: &SelectionPolicy,
    previous: Option<&Decision>,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates".into()));
    }
    if candidates.len() != pis.len() {
        return Err(Error::InvalidArgument(
            "candidate and probability lengths differ".into(),
        ));
    }
    policy.validate()?;

    let transition_ok = |d: &Decision| -> bool {
        match (policy.transition_rule, previous) {
            (TransitionRule::OneFundChange, Some(prev)) => {
                one_fund_change_ok(&d.support, &prev.support)
            }
            _ => true,
        }
    };

    let mut best_admissible: Option<(f64, usize)> = None;
    let mut best_any: Option<(f64, usize)> = None;
    for (i, d) in candidates.iter().enumerate() {
        if !transition_ok(d) {
            continue;
        }
        let pi = pis[i];
        // Fallback ranking: maximal pi regardless of the threshold.
        let any_key = -pi;
        if best_any
            .map(|(k, j)| better_candidate(any_key, i, k, j, candidates))
            .unwrap_or(true)
        {
            best_any = Some((any_key, i));
        }
        if pi >= policy.kappa {
            let key = match policy.tie_rule {
                TieRule::ClosestToKappa => pi - policy.kappa,
                TieRule::MaxPi => -pi,
            };
            if best_admissible
                .map(|(k, j)| better_candidate(key, i, k, j, candidates))
                .unwrap_or(true)
            {
                best_admissible = Some((key, i));
            }
        }
    }

    if let Some((_, i)) = best_admissible {
        return Ok(Selection {
            decision: candidates[i].clone(),
            index: Some(i),
            pi: Some(pis[i]),
            fallback: false,
            held_previous: false,
        });
    }
    if let Some((_, i)) = best_any {
        return Ok(Selection {
            decision: candidates[i].clone(),
            index: Some(i),
            pi: Some(pis[i]),
            fallback: true,
            held_previous: false,
        });
    }
    // Nothing satisfies the transition rule; hold the previous portfolio.
    let prev = previous.expect("transition filtering requires a previous decision");
    Ok(Selection {
        decision: prev.clone(),
        index: None,
        pi: None,
        fallback: true,
        held_previous: true,
    })
}
