//! Sequential conjugate filtering with variance discounting.
//!
//! Two filters are maintained: a per-asset factor regression with
//! time-varying coefficients and observation precision, and a factor-mean
//! filter with a full normal-inverse-Wishart residual covariance. Both evolve
//! their posteriors into next-period priors by discounting, dividing scale by
//! a factor in (0.8, 1], which inflates variance without breaking conjugacy.
//! `assemble_moments` combines the two into one-period-ahead predictive
//! moments for the asset universe.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Discount factors per evolving quantity. Defaults: slow decay (0.9925) for
/// the coefficient and factor-mean states, faster decay (0.97) for the
/// residual variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountConfig {
    /// State variance of the per-asset coefficients.
    pub delta_beta: f64,
    /// Observation precision of the per-asset regression.
    pub delta_epsilon: f64,
    /// State variance of the factor mean.
    pub delta_c: f64,
    /// Degrees of freedom of the factor covariance.
    pub delta_f: f64,
}

impl Default for DiscountConfig {
    fn default() -> Self {
        DiscountConfig {
            delta_beta: 0.9925,
            delta_epsilon: 0.97,
            delta_c: 0.9925,
            delta_f: 0.97,
        }
    }
}

impl DiscountConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("delta_beta", self.delta_beta),
            ("delta_epsilon", self.delta_epsilon),
            ("delta_c", self.delta_c),
            ("delta_f", self.delta_f),
        ] {
            if !(value > 0.8 && value <= 1.0) {
                return Err(Error::InvalidDiscount { name, value });
            }
        }
        Ok(())
    }
}

/// Conjugate posterior of one asset's factor regression: coefficient mean
/// `m`, coefficient scale `c` (on the observation-variance-absorbed scale),
/// and gamma precision hyperparameters `n`, `d` with point estimate
/// `s = d / n` of the observation variance.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetFilterState {
    pub m: Array1<f64>,
    pub c: Array2<f64>,
    pub n: f64,
    pub d: f64,
}

impl AssetFilterState {
    pub fn new(m: Array1<f64>, c: Array2<f64>, n: f64, d: f64) -> Result<Self> {
        if c.nrows() != m.len() || c.ncols() != m.len() {
            return Err(Error::InvalidArgument("prior scale shape mismatch".into()));
        }
        if !linalg::is_spd(&c, 1e-10) {
            return Err(Error::NotSpd("asset prior C".into()));
        }
        if n <= 0.0 || d <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "prior n and d must be positive, got n={n}, d={d}"
            )));
        }
        Ok(AssetFilterState { m, c, n, d })
    }

    /// Weakly informative default: zero mean, diffuse scale 10·I, n = 5, and
    /// d set so the variance point estimate matches `residual_var` (falling
    /// back to 0.0025, i.e. 5% monthly volatility).
    pub fn default_prior(p: usize, residual_var: Option<f64>) -> Self {
        let s0 = residual_var
            .filter(|v| v.is_finite() && *v > 0.0)
            .unwrap_or(0.0025);
        let n = 5.0;
        AssetFilterState {
            m: Array1::zeros(p),
            c: Array2::eye(p) * 10.0,
            n,
            d: n * s0,
        }
    }

    /// Point estimate of the observation variance.
    pub fn s(&self) -> f64 {
        self.d / self.n
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Posterior of the factor-mean model: mean `m`, scalar state scale `c`
/// (in units of the residual covariance), covariance point estimate `s`,
/// and degrees of freedom `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorFilterState {
    pub m: Array1<f64>,
    pub c: f64,
    pub s: Array2<f64>,
    pub n: f64,
}

impl FactorFilterState {
    pub fn new(m: Array1<f64>, c: f64, s: Array2<f64>, n: f64) -> Result<Self> {
        if s.nrows() != m.len() || s.ncols() != m.len() {
            return Err(Error::InvalidArgument("factor scale shape mismatch".into()));
        }
        if !linalg::is_spd(&s, 1e-10) {
            return Err(Error::NotSpd("factor prior S".into()));
        }
        if c <= 0.0 || n <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "prior c and n must be positive, got c={c}, n={n}"
            )));
        }
        Ok(FactorFilterState { m, c, s, n })
    }

    /// Weakly informative default: zero mean, diffuse scale 10, n = p + 2,
    /// and covariance estimate `sample_cov` (falling back to 0.0025·I).
    pub fn default_prior(p: usize, sample_cov: Option<Array2<f64>>) -> Self {
        let s = sample_cov
            .filter(|s| s.nrows() == p && linalg::is_spd(s, 1e-10))
            .unwrap_or_else(|| Array2::eye(p) * 0.0025);
        FactorFilterState {
            m: Array1::zeros(p),
            c: 10.0,
            s,
            n: p as f64 + 2.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// One-period-ahead predictive moments of the asset returns.
#[derive(Debug, Clone)]
pub struct PredictiveMoments {
    /// Predictive mean.
    pub mu: Array1<f64>,
    /// Predictive covariance.
    pub sigma: Array2<f64>,
    /// Non-central second moment `sigma + mu muᵀ`.
    pub sigma_nc: Array2<f64>,
    /// Lower Cholesky factor of `sigma_nc`.
    pub chol: Array2<f64>,
    /// Idiosyncratic variance estimates (diagonal of the residual matrix).
    pub psi: Array1<f64>,
}

impl PredictiveMoments {
    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }
}

/// One sequential update of an asset filter on (return, contemporaneous
/// factor vector).
pub fn update_asset_filter(
    state: &AssetFilterState,
    r: f64,
    f: &Array1<f64>,
    cfg: &DiscountConfig,
) -> Result<AssetFilterState> {
    cfg.validate()?;
    if f.len() != state.dim() {
        return Err(Error::InvalidArgument(format!(
            "factor vector has length {}, filter expects {}",
            f.len(),
            state.dim()
        )));
    }
    let s = state.s();
    let r_scale = &state.c / cfg.delta_beta;
    let rf = r_scale.dot(f);
    let q = f.dot(&rf) + s;
    if q <= 0.0 || !q.is_finite() {
        return Err(Error::Numerical(format!(
            "asset forecast variance degenerate (q = {q})"
        )));
    }
    let e = r - f.dot(&state.m);
    let gain = &rf / q;
    let n_new = cfg.delta_epsilon * state.n + 1.0;
    let d_new = cfg.delta_epsilon * state.d + s * e * e / q;
    let s_new = d_new / n_new;
    let m_new = &state.m + &(&gain * e);
    let p = state.dim();
    let mut c_new = r_scale;
    for i in 0..p {
        for j in 0..p {
            c_new[[i, j]] -= gain[i] * gain[j] * q;
        }
    }
    c_new *= s_new / s;
    // Symmetrize against roundoff drift.
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (c_new[[i, j]] + c_new[[j, i]]);
            c_new[[i, j]] = m;
            c_new[[j, i]] = m;
        }
    }
    Ok(AssetFilterState {
        m: m_new,
        c: c_new,
        n: n_new,
        d: d_new,
    })
}

/// One sequential update of the factor filter on a factor return vector.
pub fn update_factor_filter(
    state: &FactorFilterState,
    f: &Array1<f64>,
    cfg: &DiscountConfig,
) -> Result<FactorFilterState> {
    cfg.validate()?;
    if f.len() != state.dim() {
        return Err(Error::InvalidArgument(format!(
            "factor vector has length {}, filter expects {}",
            f.len(),
            state.dim()
        )));
    }
    let r = state.c / cfg.delta_c;
    let q = r + 1.0;
    let e = f - &state.m;
    let gain = r / q;
    let m_new = &state.m + &(&e * gain);
    let c_new = r / q;
    let n_new = cfg.delta_f * state.n + 1.0;
    let p = state.dim();
    let mut s_new = &state.s * (cfg.delta_f * state.n);
    for i in 0..p {
        for j in 0..p {
            s_new[[i, j]] += e[i] * e[j] / q;
        }
    }
    s_new /= n_new;
    Ok(FactorFilterState {
        m: m_new,
        c: c_new,
        s: s_new,
        n: n_new,
    })
}

/// Cholesky with a bounded diagonal-jitter rescue: on failure, add
/// `1e-10 * trace / n` to the diagonal and retry up to 3 times with 10x
/// escalation.
fn cholesky_with_jitter(a: &Array2<f64>) -> Result<Array2<f64>> {
    match linalg::cholesky(a) {
        Ok(l) => Ok(l),
        Err(_) => {
            let n = a.nrows();
            let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
            let mut jitter = 1e-10 * trace.abs().max(f64::MIN_POSITIVE) / n as f64;
            for _ in 0..3 {
                let mut jittered = a.clone();
                for i in 0..n {
                    jittered[[i, i]] += jitter;
                }
                if let Ok(l) = linalg::cholesky(&jittered) {
                    log::debug!("cholesky required jitter {jitter:.3e}");
                    return Ok(l);
                }
                jitter *= 10.0;
            }
            Err(Error::Numerical(
                "non-central second moment not positive definite after jitter".into(),
            ))
        }
    }
}

/// Combines asset and factor posteriors into plug-in predictive moments.
///
/// With `B` the p x N matrix whose column i is asset i's coefficient mean:
/// `mu = Bᵀ m_F`, `sigma = Bᵀ S_F B + diag(s_i)`, `sigma_nc = sigma + mu muᵀ`.
pub fn assemble_moments(
    asset_states: &[AssetFilterState],
    factor_state: &FactorFilterState,
) -> Result<PredictiveMoments> {
    let p = factor_state.dim();
    let n = asset_states.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no asset states".into()));
    }
    if let Some(bad) = asset_states.iter().find(|s| s.dim() != p) {
        return Err(Error::InvalidArgument(format!(
            "asset state has factor dimension {}, expected {p}",
            bad.dim()
        )));
    }

    let mut b = Array2::<f64>::zeros((p, n));
    for (i, st) in asset_states.iter().enumerate() {
        b.column_mut(i).assign(&st.m);
    }
    let mu = b.t().dot(&factor_state.m);
    let mut sigma = b.t().dot(&factor_state.s).dot(&b);
    let psi = Array1::from_iter(asset_states.iter().map(|s| s.s()));
    for i in 0..n {
        sigma[[i, i]] += psi[i];
    }
    // Symmetrize against roundoff drift.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (sigma[[i, j]] + sigma[[j, i]]);
            sigma[[i, j]] = m;
            sigma[[j, i]] = m;
        }
    }
    let mut sigma_nc = sigma.clone();
    for i in 0..n {
        for j in 0..n {
            sigma_nc[[i, j]] += mu[i] * mu[j];
        }
    }
    let chol = cholesky_with_jitter(&sigma_nc)?;
    Ok(PredictiveMoments {
        mu,
        sigma,
        sigma_nc,
        chol,
        psi,
    })
}
