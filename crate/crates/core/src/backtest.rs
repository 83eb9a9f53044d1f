//! Walk-forward orchestration and output emission.
//!
//! Each out-of-sample month: filters hold data strictly before the month,
//! predictive moments are assembled, candidates and the target are built,
//! a seeded Monte Carlo sample induces the satisfaction probabilities, the
//! threshold policy picks one decision, and its realized return is recorded.
//! Per-period draw seeds are a hash of (global seed, period index) so
//! extending the dataset never perturbs earlier periods.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::decision::{
    dense_1n_target, dense_kelly_target, enumerate_case_study, enumerate_equal_weight, lambda_path,
    single_asset_target, Decision, EnumerationRules, SignMode,
};
use crate::dlm::{
    assemble_moments, update_asset_filter, update_factor_filter, AssetFilterState, DiscountConfig,
    FactorFilterState, PredictiveMoments,
};
use crate::error::{Error, Result};
use crate::market_data::{AlignedDataset, Month};
use crate::mc::{sample_predictive, substream_seed, ReturnSample};
use crate::regret::{
    regret_cross_section, regret_distribution, satisfaction_probabilities, select,
    sharpe_diff_distribution, InequalityMode, RegretDistribution, SelectionPolicy,
};

/// Candidate-set construction method for the walk-forward run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMethod {
    L1Path,
    EnumeratedKelly,
    EqualWeight,
}

/// Benchmark decision the candidates are measured against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetKind {
    DenseKelly,
    SingleAsset(String),
    Dense1N,
}

/// Full configuration of one walk-forward run.
#[derive(Debug, Clone)]
pub struct BacktestConfig {
    /// Months of data consumed before the first decision.
    pub train_periods: usize,
    pub discounts: DiscountConfig,
    pub decision_method: DecisionMethod,
    pub target_kind: TargetKind,
    pub policy: SelectionPolicy,
    pub mc_draws: usize,
    pub n_lambda: usize,
    pub seed: u64,
    /// Sign restriction for the penalized path; `None` selects the method
    /// default (free for the path, long-only otherwise).
    pub sign_mode: Option<SignMode>,
    pub inequality: InequalityMode,
    /// Rules for the enumerated-subset method.
    pub enumeration: EnumerationRules,
    /// Largest subset size for the equal-weight method.
    pub max_q: usize,
    /// Retain per-draw parameter summaries to compute the Sharpe-difference
    /// diagnostic each period.
    pub keep_params: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            train_periods: 120,
            discounts: DiscountConfig::default(),
            decision_method: DecisionMethod::L1Path,
            target_kind: TargetKind::DenseKelly,
            policy: SelectionPolicy {
                kappa: 0.45,
                tie_rule: Default::default(),
                transition_rule: Default::default(),
                fee_vector: None,
            },
            mc_draws: 10_000,
            n_lambda: 500,
            seed: 0,
            sign_mode: None,
            inequality: InequalityMode::Weak,
            enumeration: EnumerationRules::default(),
            max_q: 4,
            keep_params: true,
        }
    }
}

impl BacktestConfig {
    fn effective_sign_mode(&self) -> SignMode {
        self.sign_mode.unwrap_or(match self.decision_method {
            DecisionMethod::L1Path => SignMode::Free,
            _ => SignMode::Nonnegative,
        })
    }

    pub fn validate(&self, n_assets: usize) -> Result<()> {
        if self.train_periods < 2 {
            return Err(Error::InvalidArgument("train_periods must be >= 2".into()));
        }
        if self.mc_draws == 0 {
            return Err(Error::InvalidArgument("mc_draws must be >= 1".into()));
        }
        if self.n_lambda < 2 {
            return Err(Error::InvalidArgument("n_lambda must be >= 2".into()));
        }
        self.discounts.validate()?;
        self.policy.validate()?;
        if let Some(fees) = &self.policy.fee_vector {
            if fees.len() != n_assets {
                return Err(Error::InvalidArgument(format!(
                    "fee vector has length {}, universe has {n_assets}",
                    fees.len()
                )));
            }
        }
        Ok(())
    }
}

/// Centered quantile band of one period's distribution.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Band {
    pub q20: f64,
    pub q40: f64,
    pub q60: f64,
    pub q80: f64,
}

impl Band {
    fn from_distribution(d: &RegretDistribution) -> Band {
        Band {
            q20: d.quantile(0.20),
            q40: d.quantile(0.40),
            q60: d.quantile(0.60),
            q80: d.quantile(0.80),
        }
    }
}

/// One out-of-sample month.
#[derive(Debug, Clone)]
pub struct PeriodRecord {
    pub date: Month,
    pub decision: Decision,
    /// Satisfaction probability of the selected decision.
    pub pi: f64,
    pub regret_mean: f64,
    pub regret_band: Band,
    /// Annualized mean Sharpe-ratio difference (target minus selected).
    pub sharpe_mean: Option<f64>,
    pub sharpe_band: Option<Band>,
    pub sharpe_mean_monthly: Option<f64>,
    pub realized_selected: f64,
    pub realized_target: f64,
    /// The kappa threshold could not be met this period.
    pub fallback: bool,
    /// No candidate satisfied the transition rule; previous decision held.
    pub held_previous: bool,
    /// More than 1% of draws left the log domain.
    pub high_invalid_share: bool,
    pub n_invalid: usize,
}

/// Per-candidate summary captured for one period.
#[derive(Debug, Clone)]
pub struct CrossSectionRow {
    pub id: String,
    pub pi: f64,
    pub regret_mean: f64,
    pub q40: f64,
    pub q60: f64,
}

#[derive(Debug, Clone)]
pub struct CrossSection {
    pub date: Month,
    pub rows: Vec<CrossSectionRow>,
}

/// Annualized out-of-sample statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OosStats {
    pub sharpe: f64,
    pub sd_pct: f64,
    pub mean_pct: f64,
}

/// Result of one walk-forward run.
#[derive(Debug, Clone)]
pub struct BacktestResult {
    pub tickers: Vec<String>,
    pub records: Vec<PeriodRecord>,
    /// Candidate cross-section of the first out-of-sample period.
    pub first_cross_section: CrossSection,
    /// Absent when the run is too short (or too degenerate) to annualize.
    pub selected_stats: Option<OosStats>,
    pub target_stats: Option<OosStats>,
}

impl BacktestResult {
    pub fn selected_returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.realized_selected).collect()
    }

    pub fn target_returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.realized_target).collect()
    }
}

/// Annualized mean, standard deviation (both percent), and their ratio.
pub fn oos_stats(returns: &[f64], periods_per_year: usize) -> Result<OosStats> {
    if returns.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 returns for out-of-sample statistics".into(),
        ));
    }
    let n = returns.len() as f64;
    let k = periods_per_year as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::Numerical("return series has zero variance".into()));
    }
    let mean_pct = k * mean * 100.0;
    let sd_pct = k.sqrt() * var.sqrt() * 100.0;
    Ok(OosStats {
        sharpe: mean_pct / sd_pct,
        sd_pct,
        mean_pct,
    })
}

fn ols_residual_variance(returns: &[f64], factors: &Array2<f64>) -> Option<f64> {
    let t = returns.len();
    let p = factors.ncols();
    if t <= p {
        return None;
    }
    let mut xtx = Array2::<f64>::zeros((p, p));
    let mut xty = Array1::<f64>::zeros(p);
    for (row, &r) in factors.rows().into_iter().zip(returns.iter()) {
        for i in 0..p {
            for j in 0..p {
                xtx[[i, j]] += row[i] * row[j];
            }
            xty[i] += row[i] * r;
        }
    }
    let beta = crate::linalg::solve_spd(&xtx, &xty).ok()?;
    let mut rss = 0.0;
    for (row, &r) in factors.rows().into_iter().zip(returns.iter()) {
        let e = r - row.dot(&beta);
        rss += e * e;
    }
    let v = rss / (t - p) as f64;
    (v > 0.0 && v.is_finite()).then_some(v)
}

fn sample_covariance(factors: &Array2<f64>) -> Option<Array2<f64>> {
    let t = factors.nrows();
    let p = factors.ncols();
    if t < 2 {
        return None;
    }
    let mean = factors.mean_axis(ndarray::Axis(0))?;
    let mut cov = Array2::<f64>::zeros((p, p));
    for row in factors.rows() {
        for i in 0..p {
            for j in 0..p {
                cov[[i, j]] += (row[i] - mean[i]) * (row[j] - mean[j]);
            }
        }
    }
    cov /= (t - 1) as f64;
    Some(cov)
}

/// Number of leading months used to scale-match the default priors.
const PRIOR_WINDOW: usize = 12;

struct FilterBank {
    assets: Vec<AssetFilterState>,
    factor: FactorFilterState,
}

impl FilterBank {
    /// Priors scale-matched to the first months of the training window, with
    /// no data consumed yet. The window never reaches past the training
    /// periods, so priors stay a function of pre-decision data only.
    fn init(dataset: &AlignedDataset, train_periods: usize) -> FilterBank {
        let p = dataset.factors.names.len();
        let n = dataset.returns.tickers.len();
        let w = PRIOR_WINDOW.min(train_periods).min(dataset.len());
        let head_f = dataset
            .factors
            .values
            .slice(ndarray::s![..w, ..])
            .to_owned();
        let assets = (0..n)
            .map(|i| {
                let head_r: Vec<f64> = (0..w).map(|t| dataset.returns.values[[t, i]]).collect();
                AssetFilterState::default_prior(p, ols_residual_variance(&head_r, &head_f))
            })
            .collect();
        let factor = FactorFilterState::default_prior(p, sample_covariance(&head_f));
        FilterBank { assets, factor }
    }

    /// Consumes one month: factor filter first, then every asset filter on
    /// the same factor vector.
    fn update(&mut self, dataset: &AlignedDataset, t: usize, cfg: &DiscountConfig) -> Result<()> {
        let f = dataset.factors.values.row(t).to_owned();
        self.factor = update_factor_filter(&self.factor, &f, cfg)?;
        for (i, st) in self.assets.iter_mut().enumerate() {
            *st = update_asset_filter(st, dataset.returns.values[[t, i]], &f, cfg)?;
        }
        Ok(())
    }

    fn moments(&self) -> Result<PredictiveMoments> {
        assemble_moments(&self.assets, &self.factor)
    }
}

fn build_candidates(
    cfg: &BacktestConfig,
    moments: &PredictiveMoments,
    tickers: &[String],
) -> Result<Vec<Decision>> {
    match cfg.decision_method {
        DecisionMethod::L1Path => {
            Ok(lambda_path(moments, cfg.n_lambda, cfg.effective_sign_mode())?.decisions)
        }
        DecisionMethod::EnumeratedKelly => enumerate_case_study(tickers, &cfg.enumeration, moments),
        DecisionMethod::EqualWeight => enumerate_equal_weight(tickers, cfg.max_q),
    }
}

fn build_target(
    cfg: &BacktestConfig,
    moments: &PredictiveMoments,
    tickers: &[String],
) -> Result<Decision> {
    match &cfg.target_kind {
        TargetKind::DenseKelly => dense_kelly_target(moments),
        TargetKind::SingleAsset(ticker) => single_asset_target(tickers, ticker),
        TargetKind::Dense1N => dense_1n_target(tickers.len()),
    }
}

struct PeriodEngine<'a> {
    dataset: &'a AlignedDataset,
    cfg: &'a BacktestConfig,
    bank: FilterBank,
}

struct PeriodOutput {
    candidates: Vec<Decision>,
    target: Decision,
    pis: Vec<f64>,
    sample: ReturnSample,
}

impl<'a> PeriodEngine<'a> {
    fn new(dataset: &'a AlignedDataset, cfg: &'a BacktestConfig) -> Result<Self> {
        cfg.validate(dataset.returns.tickers.len())?;
        if dataset.len() <= cfg.train_periods {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} months, training needs more than {}",
                dataset.len(),
                cfg.train_periods
            )));
        }
        let mut bank = FilterBank::init(dataset, cfg.train_periods);
        for t in 0..cfg.train_periods {
            bank.update(dataset, t, &cfg.discounts)?;
        }
        Ok(PeriodEngine { dataset, cfg, bank })
    }

    /// Candidates, target, and probabilities for the decision at month `t`;
    /// uses only data strictly before `t`.
    fn evaluate_period(&self, t: usize) -> Result<PeriodOutput> {
        let tickers = &self.dataset.returns.tickers;
        let moments = self.bank.moments()?;
        let candidates = build_candidates(self.cfg, &moments, tickers)?;
        let target = build_target(self.cfg, &moments, tickers)?;
        let sample = sample_predictive(
            &self.bank.assets,
            &self.bank.factor,
            self.cfg.mc_draws,
            substream_seed(self.cfg.seed, t as u64),
            self.cfg.keep_params,
        )?;
        let pis = satisfaction_probabilities(
            &candidates,
            &target,
            &sample,
            self.cfg.policy.fee_vector.as_ref(),
            self.cfg.inequality,
        )?;
        Ok(PeriodOutput {
            candidates,
            target,
            pis,
            sample,
        })
    }

    fn advance(&mut self, t: usize) -> Result<()> {
        self.bank.update(self.dataset, t, &self.cfg.discounts)
    }
}

/// Runs the full walk-forward loop. Deterministic given the configuration.
pub fn run(dataset: &AlignedDataset, cfg: &BacktestConfig) -> Result<BacktestResult> {
    let mut engine = PeriodEngine::new(dataset, cfg)?;
    let tickers = dataset.returns.tickers.clone();
    let fees = cfg.policy.fee_vector.clone();
    let mut records: Vec<PeriodRecord> = Vec::new();
    let mut previous: Option<Decision> = None;
    let mut first_cross_section: Option<CrossSection> = None;

    for t in cfg.train_periods..dataset.len() {
        let date = dataset.dates()[t];
        let out = engine.evaluate_period(t)?;

        if first_cross_section.is_none() {
            let dists = regret_cross_section(
                &out.candidates,
                &out.target,
                &out.sample,
                fees.as_ref(),
                cfg.inequality,
            )?;
            let rows = out
                .candidates
                .iter()
                .zip(out.pis.iter())
                .zip(dists.iter())
                .map(|((d, &pi), dist)| CrossSectionRow {
                    id: d.id.clone(),
                    pi,
                    regret_mean: dist.mean,
                    q40: dist.quantile(0.40),
                    q60: dist.quantile(0.60),
                })
                .collect();
            first_cross_section = Some(CrossSection { date, rows });
        }

        let selection = select(&out.candidates, &out.pis, &cfg.policy, previous.as_ref())?;
        let chosen = selection.decision.clone();
        let regret = regret_distribution(
            &chosen.weights,
            &out.target.weights,
            &out.sample,
            fees.as_ref(),
            cfg.inequality,
        )?;
        let pi = selection.pi.unwrap_or(regret.pi);

        let (sharpe_mean, sharpe_band, sharpe_mean_monthly) = if cfg.keep_params {
            let s = sharpe_diff_distribution(&chosen.weights, &out.target.weights, &out.sample)?;
            (
                Some(s.annualized.mean),
                Some(Band::from_distribution(&s.annualized)),
                Some(s.monthly.mean),
            )
        } else {
            (None, None, None)
        };

        let realized = dataset.returns.values.row(t);
        let realized_selected = chosen.weights.dot(&realized);
        let realized_target = out.target.weights.dot(&realized);
        let high_invalid_share = regret.n_invalid as f64 > 0.01 * cfg.mc_draws as f64;
        if high_invalid_share {
            log::warn!(
                "{date}: {} of {} draws outside the log domain",
                regret.n_invalid,
                cfg.mc_draws
            );
        }

        records.push(PeriodRecord {
            date,
            decision: chosen.clone(),
            pi,
            regret_mean: regret.mean,
            regret_band: Band::from_distribution(&regret),
            sharpe_mean,
            sharpe_band,
            sharpe_mean_monthly,
            realized_selected,
            realized_target,
            fallback: selection.fallback,
            held_previous: selection.held_previous,
            high_invalid_share,
            n_invalid: regret.n_invalid,
        });

        previous = Some(chosen);
        engine.advance(t)?;
    }

    let selected_series: Vec<f64> = records.iter().map(|r| r.realized_selected).collect();
    let target_series: Vec<f64> = records.iter().map(|r| r.realized_target).collect();
    let selected_stats = oos_stats(&selected_series, 12).ok();
    let target_stats = oos_stats(&target_series, 12).ok();

    Ok(BacktestResult {
        tickers,
        records,
        first_cross_section: first_cross_section.expect("at least one period"),
        selected_stats,
        target_stats,
    })
}

/// Evaluates the candidate cross-section of one out-of-sample month without
/// running the selection sequence.
pub fn cross_section_at(
    dataset: &AlignedDataset,
    cfg: &BacktestConfig,
    date: Month,
) -> Result<CrossSection> {
    let mut engine = PeriodEngine::new(dataset, cfg)?;
    let first = dataset.dates()[cfg.train_periods];
    let last = *dataset.dates().last().unwrap();
    let t = match dataset.dates().iter().position(|d| *d == date) {
        Some(t) if t >= cfg.train_periods => t,
        _ => {
            return Err(Error::DateOutOfRange {
                requested: date.to_string(),
                min: first.to_string(),
                max: last.to_string(),
            })
        }
    };
    for u in cfg.train_periods..t {
        engine.advance(u)?;
    }
    let out = engine.evaluate_period(t)?;
    let dists = regret_cross_section(
        &out.candidates,
        &out.target,
        &out.sample,
        cfg.policy.fee_vector.as_ref(),
        cfg.inequality,
    )?;
    let rows = out
        .candidates
        .iter()
        .zip(out.pis.iter())
        .zip(dists.iter())
        .map(|((d, &pi), dist)| CrossSectionRow {
            id: d.id.clone(),
            pi,
            regret_mean: dist.mean,
            q40: dist.quantile(0.40),
            q60: dist.quantile(0.60),
        })
        .collect();
    Ok(CrossSection { date, rows })
}

/// Output-emission options.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmitOptions {
    /// Keep only each year's first record in weights.csv.
    pub annual_weights: bool,
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Histogram of satisfaction probabilities over fixed [0, 1] bins.
pub fn pi_histogram_csv(pis: &[f64], n_bins: usize) -> String {
    let mut counts = vec![0usize; n_bins];
    for &pi in pis {
        let mut b = (pi * n_bins as f64).floor() as usize;
        if b >= n_bins {
            b = n_bins - 1;
        }
        counts[b] += 1;
    }
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (b, &c) in counts.iter().enumerate() {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        out.push_str(&format!("{lo},{hi},{c}\n"));
    }
    out
}

fn cross_section_csv(cs: &CrossSection) -> String {
    let mut rows = cs.rows.clone();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::from("id,pi,regret_mean,q40,q60\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id, r.pi, r.regret_mean, r.q40, r.q60
        ));
    }
    out
}

/// Writes the cross-section and probability-histogram files for one period;
/// returns the created paths.
pub fn emit_cross_section(cs: &CrossSection, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let path = out_dir.join(format!("cross_section_{}.csv", cs.date));
    write_file(&path, &cross_section_csv(cs))?;
    written.push(path);
    let pis: Vec<f64> = cs.rows.iter().map(|r| r.pi).collect();
    let path = out_dir.join(format!("pi_histogram_{}.csv", cs.date));
    write_file(&path, &pi_histogram_csv(&pis, 20))?;
    written.push(path);
    Ok(written)
}

/// Writes the plot-data file set and returns the created paths.
pub fn emit_plot_data(
    result: &BacktestResult,
    out_dir: &Path,
    options: &EmitOptions,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let mut regret = String::from("date,mean,q20,q40,q60,q80\n");
    for r in &result.records {
        regret.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.date,
            r.regret_mean,
            r.regret_band.q20,
            r.regret_band.q40,
            r.regret_band.q60,
            r.regret_band.q80
        ));
    }
    let path = out_dir.join("regret_evolution.csv");
    write_file(&path, &regret)?;
    written.push(path);

    written.extend(emit_cross_section(&result.first_cross_section, out_dir)?);

    let mut weights = String::from("date");
    for t in &result.tickers {
        weights.push(',');
        weights.push_str(t);
    }
    weights.push('\n');
    let mut last_year: Option<i32> = None;
    for r in &result.records {
        if options.annual_weights {
            if last_year == Some(r.date.year()) {
                continue;
            }
            last_year = Some(r.date.year());
        }
        weights.push_str(&r.date.to_string());
        for &w in r.decision.weights.iter() {
            weights.push_str(&format!(",{w}"));
        }
        weights.push('\n');
    }
    let path = out_dir.join("weights.csv");
    write_file(&path, &weights)?;
    written.push(path);

    // Annualized scale, with the monthly mean alongside.
    let mut sharpe = String::from("date,mean,q20,q40,q60,q80,mean_monthly\n");
    for r in &result.records {
        if let (Some(mean), Some(band), Some(monthly)) =
            (r.sharpe_mean, r.sharpe_band, r.sharpe_mean_monthly)
        {
            sharpe.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.date, mean, band.q20, band.q40, band.q60, band.q80, monthly
            ));
        }
    }
    let path = out_dir.join("sharpe_diff_evolution.csv");
    write_file(&path, &sharpe)?;
    written.push(path);

    #[derive(Serialize)]
    struct Stats {
        selected: Option<OosStats>,
        target: Option<OosStats>,
    }
    let stats = serde_json::to_string_pretty(&Stats {
        selected: result.selected_stats,
        target: result.target_stats,
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    let path = out_dir.join("stats.json");
    write_file(&path, &(stats + "\n"))?;
    written.push(path);

    Ok(written)
}
