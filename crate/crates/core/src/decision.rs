//! Candidate portfolio construction.
//!
//! Three families of decisions are built from one set of predictive moments:
//! a gross-exposure-penalized path solved by coordinate descent with
//! soft-thresholding, enumerated anchored subsets optimized by a projected
//! gradient on the constrained simplex, and enumerated equal-weighted
//! subsets that skip optimization entirely.

use itertools::Itertools;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dlm::PredictiveMoments;
use crate::error::{Error, Result};
use crate::linalg;

/// Sign restriction on penalized-path weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// Long and short positions allowed.
    Free,
    /// Long-only.
    Nonnegative,
}

/// How a decision was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionMethod {
    L1Path,
    EnumeratedKelly,
    EqualWeight,
    DenseKelly,
    SingleAsset,
    Dense1N,
}

impl ConstructionMethod {
    fn long_only(self) -> bool {
        !matches!(self, ConstructionMethod::L1Path)
    }
}

/// A candidate portfolio: normalized weights, their nonzero support, and a
/// construction identifier.
#[derive(Debug, Clone)]
pub struct Decision {
    pub weights: Array1<f64>,
    /// Sorted indices with |weight| above the support tolerance (1e-12).
    pub support: Vec<usize>,
    pub id: String,
    pub method: ConstructionMethod,
}

const SUPPORT_TOL: f64 = 1e-12;

impl Decision {
    pub fn new(weights: Array1<f64>, id: String, method: ConstructionMethod) -> Result<Self> {
        let sum: f64 = weights.sum();
        if (sum - 1.0).abs() >= 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "decision {id} weights sum to {sum}, expected 1"
            )));
        }
        if method.long_only() {
            if let Some(w) = weights.iter().find(|&&w| w < -SUPPORT_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "decision {id} has negative weight {w} under a long-only method"
                )));
            }
        }
        let support = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| w.abs() > SUPPORT_TOL)
            .map(|(i, _)| i)
            .collect();
        Ok(Decision {
            weights,
            support,
            id,
            method,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.weights.len()
    }
}

/// Penalty path: strictly decreasing penalties with the matching decisions.
#[derive(Debug, Clone)]
pub struct LambdaPath {
    pub lambdas: Vec<f64>,
    pub decisions: Vec<Decision>,
}

/// Case-study enumeration rules: every portfolio holds the anchor fund at
/// `anchor_min` or more, and spreads at least `diversification_min` across
/// the q - 1 non-anchor funds (each at `diversification_min / (q - 1)` or
/// more).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnumerationRules {
    pub anchor: String,
    pub q_min: usize,
    pub q_max: usize,
    pub anchor_min: f64,
    pub diversification_min: f64,
}

impl Default for EnumerationRules {
    fn default() -> Self {
        EnumerationRules {
            anchor: "SPY".into(),
            q_min: 2,
            q_max: 5,
            anchor_min: 0.25,
            diversification_min: 0.25,
        }
    }
}

impl EnumerationRules {
    pub fn validate(&self) -> Result<()> {
        if !(self.anchor_min > 0.0 && self.anchor_min < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "anchor_min {} outside (0, 1)",
                self.anchor_min
            )));
        }
        if self.q_min < 2 || self.q_max < self.q_min {
            return Err(Error::InvalidArgument(format!(
                "invalid subset size range {}..={}",
                self.q_min, self.q_max
            )));
        }
        if self.anchor_min + self.diversification_min > 1.0 + 1e-12 {
            return Err(Error::Infeasible(format!(
                "anchor_min {} + diversification_min {} exceeds 1",
                self.anchor_min, self.diversification_min
            )));
        }
        Ok(())
    }

    fn other_min(&self, q: usize) -> f64 {
        self.diversification_min / (q as f64 - 1.0)
    }
}

/// Rescales raw weights to sum to one. Fails when the sum is below the
/// normalization floor of 1e-6 in magnitude.
pub fn normalize(raw: &Array1<f64>) -> Result<Array1<f64>> {
    let sum: f64 = raw.sum();
    if sum.abs() < 1e-6 {
        return Err(Error::Numerical(format!(
            "weight sum {sum:.3e} below normalization floor"
        )));
    }
    Ok(raw / sum)
}

/// Post-hoc optimality residual of the penalized quadratic problem. Zero at
/// an exact minimizer; used both inside the solver and as an independent
/// check on its output.
pub fn kkt_residual(
    sigma_nc: &Array2<f64>,
    mu: &Array1<f64>,
    w: &Array1<f64>,
    lambda: f64,
    mode: SignMode,
) -> f64 {
    let g = sigma_nc.dot(w) - mu;
    let mut worst = 0.0f64;
    for j in 0..w.len() {
        let r = match mode {
            SignMode::Free => {
                if w[j] == 0.0 {
                    (g[j].abs() - lambda).max(0.0)
                } else {
                    (g[j] + lambda * w[j].signum()).abs()
                }
            }
            SignMode::Nonnegative => {
                if w[j] > 0.0 {
                    (g[j] + lambda).abs()
                } else {
                    (-(g[j] + lambda)).max(0.0)
                }
            }
        };
        worst = worst.max(r);
    }
    worst
}

fn l1_objective(sigma_nc: &Array2<f64>, mu: &Array1<f64>, w: &Array1<f64>, lambda: f64) -> f64 {
    0.5 * w.dot(&sigma_nc.dot(w)) - w.dot(mu) + lambda * w.iter().map(|x| x.abs()).sum::<f64>()
}

const L1_MAX_SWEEPS: usize = 10_000;
const L1_COORD_TOL: f64 = 1e-10;
const L1_KKT_TOL: f64 = 1e-8;
const L1_KKT_RELAXED: f64 = 1e-6;

fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

pub(crate) fn solve_l1_from(
    sigma_nc: &Array2<f64>,
    mu: &Array1<f64>,
    lambda: f64,
    mode: SignMode,
    warm: Option<&Array1<f64>>,
    objective_trace: Option<&mut Vec<f64>>,
) -> Result<Array1<f64>> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument(format!("lambda {lambda} < 0")));
    }
    let n = mu.len();
    let diag: Vec<f64> = (0..n).map(|i| sigma_nc[[i, i]]).collect();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::NotSpd(
            "sigma_nc has a nonpositive diagonal entry".into(),
        ));
    }
    let mut w = match warm {
        Some(x) => x.clone(),
        None => Array1::zeros(n),
    };
    let mut trace = objective_trace;
    if let Some(t) = trace.as_deref_mut() {
        t.push(l1_objective(sigma_nc, mu, &w, lambda));
    }

    let mut sweeps = 0;
    loop {
        // Refresh the product at sweep start to keep incremental drift bounded.
        let mut o = sigma_nc.dot(&w);
        let mut max_delta = 0.0f64;
        for j in 0..n {
            let b = mu[j] - (o[j] - diag[j] * w[j]);
            let new_w = match mode {
                SignMode::Free => soft_threshold(b, lambda) / diag[j],
                SignMode::Nonnegative => (b - lambda).max(0.0) / diag[j],
            };
            let delta = new_w - w[j];
            if delta != 0.0 {
                for k in 0..n {
                    o[k] += sigma_nc[[k, j]] * delta;
                }
                w[j] = new_w;
                max_delta = max_delta.max(delta.abs());
            }
        }
        sweeps += 1;
        if let Some(t) = trace.as_deref_mut() {
            let obj = l1_objective(sigma_nc, mu, &w, lambda);
            debug_assert!(
                obj <= *t.last().unwrap() + 1e-12 * (1.0 + t.last().unwrap().abs()),
                "objective increased across a sweep"
            );
            t.push(obj);
        }
        if max_delta < L1_COORD_TOL || sweeps >= L1_MAX_SWEEPS {
            let kkt = kkt_residual(sigma_nc, mu, &w, lambda, mode);
            if kkt <= L1_KKT_TOL {
                return Ok(w);
            }
            if sweeps >= L1_MAX_SWEEPS {
                if kkt <= L1_KKT_RELAXED {
                    log::debug!("coordinate descent stopped at relaxed tolerance {kkt:.3e}");
                    return Ok(w);
                }
                return Err(Error::Numerical(format!(
                    "coordinate descent failed to converge (KKT residual {kkt:.3e})"
                )));
            }
            // Coordinate changes stalled but optimality is not yet met; keep
            // sweeping toward the KKT tolerance.
        }
    }
}

/// Minimizes `0.5 wᵀ sigma_nc w - wᵀ mu + lambda ||w||_1` by cyclic
/// coordinate descent with soft-thresholding (clipped at zero in
/// `Nonnegative` mode). Returns raw, un-normalized weights.
pub fn solve_l1(moments: &PredictiveMoments, lambda: f64, mode: SignMode) -> Result<Array1<f64>> {
    solve_l1_from(&moments.sigma_nc, &moments.mu, lambda, mode, None, None)
}

fn lambda_max(mu: &Array1<f64>, mode: SignMode) -> Result<f64> {
    let lm = match mode {
        SignMode::Free => mu.iter().fold(0.0f64, |a, &x| a.max(x.abs())),
        SignMode::Nonnegative => mu.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x)),
    };
    if !lm.is_finite() || lm <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "penalty upper bound undefined (lambda_max = {lm})"
        )));
    }
    Ok(lm)
}

/// Builds the penalty path: `n_points` decisions on a log-spaced grid from
/// just under the full-shrinkage penalty down to 1e-4 of it, with the
/// unpenalized decision appended at lambda = 0. Each solution is warm-started
/// from the previous grid point and normalized to sum to one; grid points
/// whose raw weights fall below the normalization floor are dropped with a
/// diagnostic.
pub fn lambda_path(
    moments: &PredictiveMoments,
    n_points: usize,
    mode: SignMode,
) -> Result<LambdaPath> {
    if n_points < 2 {
        return Err(Error::InvalidArgument(
            "path needs at least 2 points".into(),
        ));
    }
    let lm = lambda_max(&moments.mu, mode)?;
    let hi = 0.999 * lm;
    let lo = 1e-4 * lm;
    let mut grid: Vec<f64> = Vec::with_capacity(n_points);
    let segments = n_points - 2;
    if segments == 0 {
        grid.push(hi);
    } else {
        let log_hi = hi.ln();
        let step = (lo.ln() - log_hi) / segments as f64;
        for k in 0..=segments {
            grid.push((log_hi + step * k as f64).exp());
        }
    }
    grid.push(0.0);

    let mut lambdas = Vec::with_capacity(n_points);
    let mut decisions = Vec::with_capacity(n_points);
    let mut warm: Option<Array1<f64>> = None;
    for (k, &lambda) in grid.iter().enumerate() {
        let raw = solve_l1_from(
            &moments.sigma_nc,
            &moments.mu,
            lambda,
            mode,
            warm.as_ref(),
            None,
        )?;
        warm = Some(raw.clone());
        match normalize(&raw) {
            Ok(weights) => {
                let id = format!("lambda_{k:04}");
                lambdas.push(lambda);
                decisions.push(Decision::new(weights, id, ConstructionMethod::L1Path)?);
            }
            Err(e) => {
                log::warn!("dropping path point {k} (lambda {lambda:.3e}): {e}");
            }
        }
    }
    if decisions.is_empty() {
        return Err(Error::Numerical(
            "every path point failed normalization".into(),
        ));
    }
    Ok(LambdaPath { lambdas, decisions })
}

const QP_MAX_ITERS: usize = 50_000;
const QP_TOL: f64 = 1e-8;
const QP_RELAXED: f64 = 1e-5;

/// Minimizes the unpenalized quadratic loss over
/// `{w : w_i >= lb_i on subset, w_i = 0 off subset, sum w = 1}` by projected
/// gradient on the shifted simplex with step 1/L.
pub fn solve_kelly_constrained(
    moments: &PredictiveMoments,
    subset: &[usize],
    lower_bounds: &[f64],
) -> Result<Decision> {
    let n = moments.n_assets();
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty subset".into()));
    }
    if subset.len() != lower_bounds.len() {
        return Err(Error::InvalidArgument(
            "subset and bounds length mismatch".into(),
        ));
    }
    if subset.iter().any(|&i| i >= n) {
        return Err(Error::InvalidArgument("subset index out of range".into()));
    }
    if lower_bounds.iter().any(|&b| b < 0.0) {
        return Err(Error::Infeasible("negative lower bound".into()));
    }
    let lb_sum: f64 = lower_bounds.iter().sum();
    if lb_sum > 1.0 + 1e-12 {
        return Err(Error::Infeasible(format!(
            "lower bounds sum to {lb_sum} > 1"
        )));
    }
    let free_mass = (1.0 - lb_sum).max(0.0);

    let q = subset.len();
    let sigma_s = Array2::from_shape_fn((q, q), |(a, b)| moments.sigma_nc[[subset[a], subset[b]]]);
    let mu_s = Array1::from_shape_fn(q, |a| moments.mu[subset[a]]);
    let lb = Array1::from_vec(lower_bounds.to_vec());

    let weights_from = |v: &Array1<f64>| {
        let mut w = Array1::<f64>::zeros(n);
        for (a, &i) in subset.iter().enumerate() {
            w[i] = lb[a] + v[a];
        }
        w
    };

    if free_mass == 0.0 {
        let w = weights_from(&Array1::zeros(q));
        let id = subset.iter().map(|i| i.to_string()).join("+");
        return Decision::new(w, id, ConstructionMethod::EnumeratedKelly);
    }

    let lip = linalg::largest_eigenvalue(&sigma_s).max(f64::MIN_POSITIVE);
    let step = 1.0 / lip;
    let mut v = Array1::<f64>::from_elem(q, free_mass / q as f64);
    let mut converged = false;
    for it in 0..QP_MAX_ITERS {
        let grad = sigma_s.dot(&(&lb + &v)) - &mu_s;
        let v_next = linalg::project_simplex(&(&v - &(&grad * step)), free_mass);
        let pg_norm = (&v - &v_next).mapv(|x| x * x).sum().sqrt() * lip;
        v = v_next;
        if pg_norm < QP_TOL {
            converged = true;
            break;
        }
        if it == QP_MAX_ITERS - 1 && pg_norm < QP_RELAXED {
            log::debug!("constrained solve stopped at relaxed tolerance {pg_norm:.3e}");
            converged = true;
        }
    }
    if !converged {
        return Err(Error::Numerical(
            "projected gradient failed to reach the relaxed tolerance".into(),
        ));
    }

    let w = normalize(&weights_from(&v))?;
    let id = subset.iter().map(|i| i.to_string()).join("+");
    Decision::new(w, id, ConstructionMethod::EnumeratedKelly)
}

fn subset_id(universe: &[String], subset: &[usize]) -> String {
    subset.iter().map(|&i| universe[i].as_str()).join("+")
}

/// Enumerates every anchored subset of the allowed sizes and optimizes each
/// under the lower-bound rules. Subsets whose optimization degenerates fall
/// back to the feasible all-at-lower-bound point with the remaining mass on
/// the anchor.
pub fn enumerate_case_study(
    universe: &[String],
    rules: &EnumerationRules,
    moments: &PredictiveMoments,
) -> Result<Vec<Decision>> {
    rules.validate()?;
    if universe.len() != moments.n_assets() {
        return Err(Error::InvalidArgument(
            "universe does not match moments".into(),
        ));
    }
    let anchor_idx = universe
        .iter()
        .position(|t| *t == rules.anchor)
        .ok_or_else(|| Error::UnknownTicker(rules.anchor.clone()))?;
    let others: Vec<usize> = (0..universe.len()).filter(|&i| i != anchor_idx).collect();

    let mut subsets: Vec<Vec<usize>> = Vec::new();
    for q in rules.q_min..=rules.q_max.min(universe.len()) {
        for combo in others.iter().copied().combinations(q - 1) {
            let mut subset = combo;
            subset.push(anchor_idx);
            subset.sort_unstable();
            subsets.push(subset);
        }
    }

    let decisions: Vec<Decision> = subsets
        .par_iter()
        .map(|subset| {
            let q = subset.len();
            let other_min = rules.other_min(q);
            let lb: Vec<f64> = subset
                .iter()
                .map(|&i| {
                    if i == anchor_idx {
                        rules.anchor_min
                    } else {
                        other_min
                    }
                })
                .collect();
            let mut d = match solve_kelly_constrained(moments, subset, &lb) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!(
                        "constrained solve degenerate for {}: {e}; using bounds fallback",
                        subset_id(universe, subset)
                    );
                    let mut w = Array1::<f64>::zeros(universe.len());
                    let mut rest = 1.0;
                    for (&i, &b) in subset.iter().zip(lb.iter()) {
                        if i != anchor_idx {
                            w[i] = b;
                            rest -= b;
                        }
                    }
                    w[anchor_idx] = rest;
                    Decision::new(w, String::new(), ConstructionMethod::EnumeratedKelly)
                        .expect("bounds fallback is always a valid decision")
                }
            };
            d.id = subset_id(universe, subset);
            d
        })
        .collect();
    Ok(decisions)
}

/// Enumerates every nonempty subset of size at most `max_q` with equal
/// weights on the subset. No optimization is involved.
pub fn enumerate_equal_weight(universe: &[String], max_q: usize) -> Result<Vec<Decision>> {
    if max_q == 0 {
        return Err(Error::InvalidArgument("max_q must be >= 1".into()));
    }
    if max_q > universe.len() {
        return Err(Error::InvalidArgument(format!(
            "max_q {max_q} exceeds universe size {}",
            universe.len()
        )));
    }
    let n = universe.len();
    let mut decisions = Vec::new();
    for q in 1..=max_q {
        for subset in (0..n).combinations(q) {
            let mut w = Array1::<f64>::zeros(n);
            for &i in &subset {
                w[i] = 1.0 / q as f64;
            }
            // Equal weights can miss exact unit sum in floating point; pin it.
            let w = normalize(&w)?;
            decisions.push(Decision::new(
                w,
                subset_id(universe, &subset),
                ConstructionMethod::EqualWeight,
            )?);
        }
    }
    Ok(decisions)
}

/// The three benchmark targets.
#[derive(Debug, Clone)]
pub struct TargetSet {
    pub dense_kelly: Decision,
    pub single_asset: Decision,
    pub dense_1n: Decision,
}

/// Long-only unpenalized decision over the full universe.
pub fn dense_kelly_target(moments: &PredictiveMoments) -> Result<Decision> {
    let n = moments.n_assets();
    let subset: Vec<usize> = (0..n).collect();
    let mut d = solve_kelly_constrained(moments, &subset, &vec![0.0; n])?;
    d.id = "dense_kelly".into();
    d.method = ConstructionMethod::DenseKelly;
    Ok(d)
}

/// Unit weight on one named ticker.
pub fn single_asset_target(universe: &[String], ticker: &str) -> Result<Decision> {
    let idx = universe
        .iter()
        .position(|t| t == ticker)
        .ok_or_else(|| Error::UnknownTicker(ticker.to_string()))?;
    let mut w = Array1::<f64>::zeros(universe.len());
    w[idx] = 1.0;
    Decision::new(w, ticker.to_string(), ConstructionMethod::SingleAsset)
}

/// Equal weight over the full universe.
pub fn dense_1n_target(n: usize) -> Result<Decision> {
    let w = normalize(&Array1::from_elem(n, 1.0))?;
    Decision::new(w, "dense_1n".into(), ConstructionMethod::Dense1N)
}

/// Builds all three targets for one period.
pub fn make_targets(
    moments: &PredictiveMoments,
    universe: &[String],
    single_ticker: &str,
) -> Result<TargetSet> {
    if universe.len() != moments.n_assets() {
        return Err(Error::InvalidArgument(
            "universe does not match moments".into(),
        ));
    }
    Ok(TargetSet {
        dense_kelly: dense_kelly_target(moments)?,
        single_asset: single_asset_target(universe, single_ticker)?,
        dense_1n: dense_1n_target(universe.len())?,
    })
}
