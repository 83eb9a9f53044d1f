//! Joint posterior-predictive simulation of next-month returns.
//!
//! Each draw walks the generative model top-down: factor covariance from an
//! inverse-Wishart, factor mean given covariance, factor returns, then per
//! asset the observation variance, coefficients given variance, and the
//! asset return. Draw streams are split deterministically (stream 0 drives
//! the factor-level draws, stream 1 + i drives asset i in ticker order), so
//! per-asset generation can run on any worker layout without changing the
//! output.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::dlm::{AssetFilterState, FactorFilterState};
use crate::error::{Error, Result};
use crate::linalg;

/// One parameter draw's implied asset-return moments, kept for Sharpe-ratio
/// diagnostics.
#[derive(Debug, Clone)]
pub struct ParamDraw {
    pub mu: Array1<f64>,
    pub sigma: Array2<f64>,
}

/// Monte Carlo sample of next-month returns.
#[derive(Debug, Clone)]
pub struct ReturnSample {
    /// M x N simulated asset returns; row i is generated from row i of
    /// `factor_draws`.
    pub draws: Array2<f64>,
    /// M x p simulated factor returns.
    pub factor_draws: Array2<f64>,
    /// Per-draw moments, present when requested at sampling time.
    pub param_summary: Option<Vec<ParamDraw>>,
    pub seed: u64,
    pub m: usize,
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for substream `index` of a root seed. Substreams are independent
/// ChaCha8 generators keyed by a SplitMix64 mix of (seed, index).
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    mix64(
        seed ^ index
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(0x2545_f491_4f6c_dd1d),
    )
}

fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, index))
}

/// Lower-triangular Bartlett factor: diagonal entries are square roots of
/// chi-square draws with decreasing degrees of freedom, subdiagonal entries
/// standard normal.
fn bartlett_factor(rng: &mut ChaCha8Rng, p: usize, dof: f64) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros((p, p));
    for i in 0..p {
        let chi2 = Gamma::new((dof - i as f64) / 2.0, 2.0).unwrap();
        a[[i, i]] = chi2.sample(rng).sqrt();
        for j in 0..i {
            a[[i, j]] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    a
}

/// Draws joint posterior-predictive samples of next-month asset returns.
///
/// Per draw: factor covariance ~ inverse-Wishart(df = n + p - 1, scale = n S);
/// factor mean ~ N(m, c * covariance); factor return ~ N(mean, covariance);
/// per asset, precision ~ Gamma(n_i/2, rate d_i/2), coefficients
/// ~ N(m_i, (v / s_i) C_i) with v the drawn variance, and the asset return is
/// the coefficient combination of the drawn factor return plus N(0, v) noise.
/// Deterministic given `seed`.
pub fn sample_predictive(
    asset_states: &[AssetFilterState],
    factor_state: &FactorFilterState,
    m_draws: usize,
    seed: u64,
    keep_params: bool,
) -> Result<ReturnSample> {
    if m_draws == 0 {
        return Err(Error::InvalidArgument("draw count M must be >= 1".into()));
    }
    let p = factor_state.dim();
    let n_assets = asset_states.len();
    if n_assets == 0 {
        return Err(Error::InvalidArgument("no asset states".into()));
    }
    if let Some(bad) = asset_states.iter().find(|s| s.dim() != p) {
        return Err(Error::InvalidArgument(format!(
            "asset state has factor dimension {}, expected {p}",
            bad.dim()
        )));
    }
    let iw_dof = factor_state.n + p as f64 - 1.0;
    if iw_dof <= p as f64 - 1.0 {
        return Err(Error::InvalidArgument(format!(
            "inverse-Wishart degrees of freedom {iw_dof} <= p - 1"
        )));
    }

    // Wishart scale for the covariance draw is the inverse of n * S; its
    // Cholesky factor is fixed across draws.
    let scale = &factor_state.s * factor_state.n;
    let scale_inv = linalg::inv_spd(&scale)?;
    let l_v = linalg::cholesky(&scale_inv)?;

    // Factor-level phase on stream 0.
    let mut rng = stream_rng(seed, 0);
    let mut factor_draws = Array2::<f64>::zeros((m_draws, p));
    let mut mu_f_draws = Array2::<f64>::zeros((m_draws, p));
    let mut sigma_f_draws: Vec<Array2<f64>> =
        Vec::with_capacity(if keep_params { m_draws } else { 0 });
    let sqrt_c = factor_state.c.sqrt();
    for m in 0..m_draws {
        let a = bartlett_factor(&mut rng, p, iw_dof);
        // W = T Tᵀ ~ Wishart(dof, scale⁻¹); the covariance draw is W⁻¹, and
        // x = T⁻ᵀ z has covariance W⁻¹.
        let t = l_v.dot(&a);
        let z1 = Array1::from_shape_fn(p, |_| rng.sample::<f64, _>(StandardNormal));
        let mu_f = &factor_state.m + &(linalg::solve_lower_transpose(&t, &z1) * sqrt_c);
        let z2 = Array1::from_shape_fn(p, |_| rng.sample::<f64, _>(StandardNormal));
        let f = &mu_f + &linalg::solve_lower_transpose(&t, &z2);
        mu_f_draws.row_mut(m).assign(&mu_f);
        factor_draws.row_mut(m).assign(&f);
        if keep_params {
            // Sigma_F = T⁻ᵀ T⁻¹, assembled from columns of T⁻¹.
            let mut t_inv = Array2::<f64>::zeros((p, p));
            for j in 0..p {
                let mut e = Array1::<f64>::zeros(p);
                e[j] = 1.0;
                t_inv.column_mut(j).assign(&linalg::solve_lower(&t, &e));
            }
            sigma_f_draws.push(t_inv.t().dot(&t_inv));
        }
    }

    // Asset phase, one substream per asset in ticker order.
    let mut draws = Array2::<f64>::zeros((m_draws, n_assets));
    let mut beta_draws: Vec<Array2<f64>> = Vec::new();
    let mut v_draws = Array2::<f64>::zeros((m_draws, n_assets));
    if keep_params {
        beta_draws = (0..n_assets)
            .map(|_| Array2::<f64>::zeros((m_draws, p)))
            .collect();
    }
    for (i, st) in asset_states.iter().enumerate() {
        let mut rng = stream_rng(seed, 1 + i as u64);
        let degenerate = st.d == 0.0;
        let c_zero = st.c.iter().all(|&x| x == 0.0);
        let l_c = if c_zero {
            Array2::<f64>::zeros((p, p))
        } else {
            linalg::cholesky(&st.c)?
        };
        let s_i = st.s();
        let gamma = if degenerate {
            None
        } else {
            Some(Gamma::new(st.n / 2.0, 2.0 / st.d).unwrap())
        };
        for m in 0..m_draws {
            let (v, beta) = if degenerate {
                (0.0, st.m.clone())
            } else {
                let phi: f64 = gamma.as_ref().unwrap().sample(&mut rng);
                let v = 1.0 / phi;
                let z = Array1::from_shape_fn(p, |_| rng.sample::<f64, _>(StandardNormal));
                let beta = &st.m + &(l_c.dot(&z) * (v / s_i).sqrt());
                (v, beta)
            };
            let noise = if v > 0.0 {
                rng.sample::<f64, _>(StandardNormal) * v.sqrt()
            } else {
                0.0
            };
            draws[[m, i]] = beta.dot(&factor_draws.row(m)) + noise;
            v_draws[[m, i]] = v;
            if keep_params {
                beta_draws[i].row_mut(m).assign(&beta);
            }
        }
    }

    let param_summary = if keep_params {
        let mut out = Vec::with_capacity(m_draws);
        for m in 0..m_draws {
            // B is p x N with column i the drawn coefficients of asset i.
            let mut b = Array2::<f64>::zeros((p, n_assets));
            for (i, bd) in beta_draws.iter().enumerate() {
                b.column_mut(i).assign(&bd.row(m));
            }
            let mu = b.t().dot(&mu_f_draws.row(m));
            let mut sigma = b.t().dot(&sigma_f_draws[m]).dot(&b);
            for i in 0..n_assets {
                sigma[[i, i]] += v_draws[[m, i]];
            }
            out.push(ParamDraw { mu, sigma });
        }
        Some(out)
    } else {
        None
    };

    Ok(ReturnSample {
        draws,
        factor_draws,
        param_summary,
        seed,
        m: m_draws,
    })
}

/// Monte Carlo standard error of a mean estimate: sample standard deviation
/// (divisor M - 1) over sqrt(M).
pub fn mc_standard_error(values: &[f64]) -> Result<f64> {
    let m = values.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "standard error needs at least 2 values, got {m}"
        )));
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m as f64 - 1.0);
    Ok((var / m as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlm::assemble_moments;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn tight_states(n_assets: usize, p: usize) -> (Vec<AssetFilterState>, FactorFilterState) {
        // Near-degenerate posteriors: huge dof, tiny coefficient scale.
        let assets: Vec<AssetFilterState> = (0..n_assets)
            .map(|i| AssetFilterState {
                m: Array1::from_shape_fn(p, |j| 0.5 + 0.1 * (i + j) as f64),
                c: Array2::eye(p) * 1e-12,
                n: 1e6,
                d: 1e6 * 1e-6,
            })
            .collect();
        let factor = FactorFilterState {
            m: Array1::from_shape_fn(p, |j| 0.004 + 0.001 * j as f64),
            c: 1e-8,
            s: Array2::eye(p) * 4e-4,
            n: 1e6,
        };
        (assets, factor)
    }

    #[test]
    fn degenerate_state_mean_matches_plugin() {
        let (assets, factor) = tight_states(2, 2);
        let m = 100_000;
        let sample = sample_predictive(&assets, &factor, m, 99, false).unwrap();
        for (i, st) in assets.iter().enumerate() {
            let col: Vec<f64> = sample.draws.column(i).to_vec();
            let mean = col.iter().sum::<f64>() / m as f64;
            let se = mc_standard_error(&col).unwrap();
            let expect = st.m.dot(&factor.m);
            assert!(
                (mean - expect).abs() < 3.0 * se,
                "asset {i}: mean {mean} vs {expect}, se {se}"
            );
        }
    }

    #[test]
    fn empirical_mean_approaches_plugin_moments() {
        let (assets, factor) = tight_states(3, 2);
        let mom = assemble_moments(&assets, &factor).unwrap();
        let m = 100_000;
        let sample = sample_predictive(&assets, &factor, m, 5, false).unwrap();
        for i in 0..3 {
            let col: Vec<f64> = sample.draws.column(i).to_vec();
            let mean = col.iter().sum::<f64>() / m as f64;
            let se = mc_standard_error(&col).unwrap();
            assert!((mean - mom.mu[i]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn factor_dispersion_matches_scale_estimate() {
        let (_, factor) = tight_states(1, 2);
        let assets = vec![AssetFilterState {
            m: array![1.0, 0.0],
            c: Array2::eye(2) * 1e-12,
            n: 1e6,
            d: 1.0,
        }];
        let m = 100_000;
        let sample = sample_predictive(&assets, &factor, m, 17, false).unwrap();
        let mf = sample.factor_draws.mean_axis(ndarray::Axis(0)).unwrap();
        let mut trace_emp = 0.0;
        for j in 0..2 {
            let var: f64 = sample
                .factor_draws
                .column(j)
                .iter()
                .map(|&x| (x - mf[j]) * (x - mf[j]))
                .sum::<f64>()
                / (m as f64 - 1.0);
            trace_emp += var;
        }
        let trace_s: f64 = (0..2).map(|i| factor.s[[i, i]]).sum();
        assert!(
            (trace_emp - trace_s).abs() / trace_s < 0.02,
            "trace {trace_emp} vs {trace_s}"
        );
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let (assets, factor) = tight_states(2, 2);
        let a = sample_predictive(&assets, &factor, 500, 1234, true).unwrap();
        let b = sample_predictive(&assets, &factor, 500, 1234, true).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.factor_draws, b.factor_draws);
        let pa = a.param_summary.unwrap();
        let pb = b.param_summary.unwrap();
        for (x, y) in pa.iter().zip(pb.iter()) {
            assert_eq!(x.mu, y.mu);
            assert_eq!(x.sigma, y.sigma);
        }
    }

    #[test]
    fn passthrough_single_asset() {
        // One asset, one factor, coefficient pinned at 1 with no noise: the
        // asset draws equal the factor draws exactly.
        let assets = vec![AssetFilterState {
            m: array![1.0],
            c: array![[0.0]],
            n: 100.0,
            d: 0.0,
        }];
        let factor = FactorFilterState::new(array![0.01], 0.5, array![[1e-4]], 20.0).unwrap();
        let sample = sample_predictive(&assets, &factor, 200, 3, false).unwrap();
        for m in 0..200 {
            assert_eq!(sample.draws[[m, 0]], sample.factor_draws[[m, 0]]);
        }
    }

    #[test]
    fn zero_draws_rejected() {
        let (assets, factor) = tight_states(1, 2);
        assert!(sample_predictive(&assets, &factor, 0, 1, false).is_err());
    }

    #[test]
    fn mc_standard_error_cases() {
        assert_abs_diff_eq!(mc_standard_error(&[2.0; 100]).unwrap(), 0.0);
        let mut vals = vec![0.0; 50_000];
        vals.extend(vec![1.0; 50_000]);
        let se = mc_standard_error(&vals).unwrap();
        assert!((se - 0.5 / (100_000f64).sqrt()).abs() < 1e-6);
        assert!(mc_standard_error(&[1.0]).is_err());
    }

    #[test]
    fn rows_are_exchangeable() {
        // Permuting draw rows permutes nothing that matters downstream:
        // order statistics and sign counts are invariant.
        let (assets, factor) = tight_states(2, 2);
        let sample = sample_predictive(&assets, &factor, 1000, 7, false).unwrap();
        let mut col: Vec<f64> = sample.draws.column(0).to_vec();
        let mut permuted = col.clone();
        permuted.rotate_left(317);
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        permuted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(col, permuted);
    }
}
