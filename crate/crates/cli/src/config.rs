//! Flat JSON run configuration and the flag > file > default merge.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use kelly_regret_core::{
    BacktestConfig, DecisionMethod, DiscountConfig, EnumerationRules, InequalityMode,
    SelectionPolicy, SignMode, TargetKind, TieRule, TransitionRule,
};

/// On-disk configuration. Every key is optional; unknown keys are rejected.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub returns: Option<String>,
    pub factors: Option<String>,
    pub out_dir: Option<String>,
    pub train_periods: Option<usize>,
    pub delta_beta: Option<f64>,
    pub delta_epsilon: Option<f64>,
    pub delta_c: Option<f64>,
    pub delta_f: Option<f64>,
    pub decision_method: Option<String>,
    pub target: Option<String>,
    pub kappa: Option<f64>,
    pub tie_rule: Option<String>,
    pub transition_rule: Option<String>,
    /// Monthly expense ratio per ticker; unlisted tickers pay none.
    pub fees: Option<BTreeMap<String, f64>>,
    pub mc_draws: Option<usize>,
    pub n_lambda: Option<usize>,
    pub seed: Option<u64>,
    pub sign_mode: Option<String>,
    pub inequality_mode: Option<String>,
    pub keep_params: Option<bool>,
    pub anchor: Option<String>,
    pub max_q: Option<usize>,
    pub threads: Option<usize>,
    pub annual_weights: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
    }
}

/// Command-line overrides shared by `backtest` and `cross-section`.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct RunArgs {
    /// Flat JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed driving all Monte Carlo draws.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Satisfaction-probability threshold in (0, 1).
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Candidate construction: l1 | enum | ew.
    #[arg(long)]
    pub method: Option<String>,
    /// Target decision: dense | ticker:<T> | ew-dense.
    #[arg(long)]
    pub target: Option<String>,
    /// Sign restriction for the penalized path: free | nonneg.
    #[arg(long)]
    pub sign: Option<String>,
    /// Tie handling of the satisfaction inequality: weak | strict.
    #[arg(long)]
    pub ineq: Option<String>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Keep only each year's first row in weights.csv.
    #[arg(long)]
    pub annual_weights: bool,
}

/// Fully resolved run settings, serialized to the output directory for
/// reproducibility.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub returns: String,
    pub factors: String,
    pub out_dir: String,
    pub train_periods: usize,
    pub delta_beta: f64,
    pub delta_epsilon: f64,
    pub delta_c: f64,
    pub delta_f: f64,
    pub decision_method: String,
    pub target: String,
    pub kappa: f64,
    pub tie_rule: String,
    pub transition_rule: String,
    pub fees: Option<BTreeMap<String, f64>>,
    pub mc_draws: usize,
    pub n_lambda: usize,
    pub seed: u64,
    pub sign_mode: String,
    pub inequality_mode: String,
    pub keep_params: bool,
    pub anchor: String,
    pub max_q: usize,
    pub threads: usize,
    pub annual_weights: bool,
}

fn parse_method(s: &str) -> Result<DecisionMethod> {
    Ok(match s {
        "l1" | "l1_path" => DecisionMethod::L1Path,
        "enum" | "enumerated_kelly" => DecisionMethod::EnumeratedKelly,
        "ew" | "equal_weight" => DecisionMethod::EqualWeight,
        other => bail!("unknown decision_method {other:?} (expected l1 | enum | ew)"),
    })
}

fn parse_target(s: &str) -> Result<TargetKind> {
    if let Some(ticker) = s.strip_prefix("ticker:") {
        if ticker.is_empty() {
            bail!("target ticker: requires a ticker name");
        }
        return Ok(TargetKind::SingleAsset(ticker.to_string()));
    }
    Ok(match s {
        "dense" | "dense_kelly" => TargetKind::DenseKelly,
        "ew-dense" | "dense_1n" => TargetKind::Dense1N,
        other => bail!("unknown target {other:?} (expected dense | ticker:<T> | ew-dense)"),
    })
}

fn parse_sign(s: &str) -> Result<SignMode> {
    Ok(match s {
        "free" => SignMode::Free,
        "nonneg" | "nonnegative" => SignMode::Nonnegative,
        other => bail!("unknown sign_mode {other:?} (expected free | nonneg)"),
    })
}

fn parse_ineq(s: &str) -> Result<InequalityMode> {
    Ok(match s {
        "weak" => InequalityMode::Weak,
        "strict" => InequalityMode::Strict,
        other => bail!("unknown inequality_mode {other:?} (expected weak | strict)"),
    })
}

fn parse_tie(s: &str) -> Result<TieRule> {
    Ok(match s {
        "closest_to_kappa" => TieRule::ClosestToKappa,
        "max_pi" => TieRule::MaxPi,
        other => bail!("unknown tie_rule {other:?} (expected closest_to_kappa | max_pi)"),
    })
}

fn parse_transition(s: &str) -> Result<TransitionRule> {
    Ok(match s {
        "none" => TransitionRule::None,
        "one_fund_change" => TransitionRule::OneFundChange,
        other => bail!("unknown transition_rule {other:?} (expected none | one_fund_change)"),
    })
}

fn method_str(m: DecisionMethod) -> &'static str {
    match m {
        DecisionMethod::L1Path => "l1_path",
        DecisionMethod::EnumeratedKelly => "enumerated_kelly",
        DecisionMethod::EqualWeight => "equal_weight",
    }
}

fn target_str(t: &TargetKind) -> String {
    match t {
        TargetKind::DenseKelly => "dense".into(),
        TargetKind::SingleAsset(ticker) => format!("ticker:{ticker}"),
        TargetKind::Dense1N => "ew-dense".into(),
    }
}

/// Resolved settings plus everything needed to run.
pub struct Resolved {
    pub returns: PathBuf,
    pub factors: PathBuf,
    pub out_dir: PathBuf,
    pub backtest: BacktestConfig,
    pub fees: Option<BTreeMap<String, f64>>,
    pub threads: usize,
    pub annual_weights: bool,
}

impl Resolved {
    /// Applies flag > file > default precedence.
    pub fn merge(args: &RunArgs, file: &FileConfig) -> Result<Resolved> {
        let defaults = BacktestConfig::default();
        let decision_method = match &file.decision_method {
            Some(s) => parse_method(s)?,
            None => defaults.decision_method,
        };
        let decision_method = match &args.method {
            Some(s) => parse_method(s)?,
            None => decision_method,
        };
        let target_kind = match &file.target {
            Some(s) => parse_target(s)?,
            None => defaults.target_kind.clone(),
        };
        let target_kind = match &args.target {
            Some(s) => parse_target(s)?,
            None => target_kind,
        };
        let sign_mode = match (&args.sign, &file.sign_mode) {
            (Some(s), _) => Some(parse_sign(s)?),
            (None, Some(s)) => Some(parse_sign(s)?),
            (None, None) => None,
        };
        let inequality = match (&args.ineq, &file.inequality_mode) {
            (Some(s), _) => parse_ineq(s)?,
            (None, Some(s)) => parse_ineq(s)?,
            (None, None) => InequalityMode::Weak,
        };
        let tie_rule = match &file.tie_rule {
            Some(s) => parse_tie(s)?,
            None => TieRule::default(),
        };
        let transition_rule = match &file.transition_rule {
            Some(s) => parse_transition(s)?,
            None => TransitionRule::default(),
        };
        let discounts = DiscountConfig {
            delta_beta: file.delta_beta.unwrap_or(0.9925),
            delta_epsilon: file.delta_epsilon.unwrap_or(0.97),
            delta_c: file.delta_c.unwrap_or(0.9925),
            delta_f: file.delta_f.unwrap_or(0.97),
        };
        let policy = SelectionPolicy {
            kappa: args.kappa.or(file.kappa).unwrap_or(0.45),
            tie_rule,
            transition_rule,
            fee_vector: None, // aligned to tickers after the panels load
        };
        let mut enumeration = EnumerationRules::default();
        if let Some(anchor) = &file.anchor {
            enumeration.anchor = anchor.clone();
        }

        let backtest = BacktestConfig {
            train_periods: file.train_periods.unwrap_or(defaults.train_periods),
            discounts,
            decision_method,
            target_kind,
            policy,
            mc_draws: file.mc_draws.unwrap_or(defaults.mc_draws),
            n_lambda: file.n_lambda.unwrap_or(defaults.n_lambda),
            seed: args.seed.or(file.seed).unwrap_or(0),
            sign_mode,
            inequality,
            enumeration,
            max_q: file.max_q.unwrap_or(defaults.max_q),
            keep_params: file.keep_params.unwrap_or(true),
        };

        let returns = file
            .returns
            .as_deref()
            .map(PathBuf::from)
            .context("missing `returns` path (set it in the config file)")?;
        let factors = file
            .factors
            .as_deref()
            .map(PathBuf::from)
            .context("missing `factors` path (set it in the config file)")?;
        let out_dir = args
            .out
            .clone()
            .or_else(|| file.out_dir.as_deref().map(PathBuf::from))
            .context("missing output directory (use --out or `out_dir`)")?;
        for (name, path) in [("returns", &returns), ("factors", &factors)] {
            if !path.exists() {
                bail!("{name} path {} does not exist", path.display());
            }
        }

        Ok(Resolved {
            returns,
            factors,
            out_dir,
            backtest,
            fees: file.fees.clone(),
            threads: args.threads.or(file.threads).unwrap_or(0),
            annual_weights: args.annual_weights || file.annual_weights.unwrap_or(false),
        })
    }

    /// Aligns the fee map to the loaded ticker order; unknown tickers in the
    /// map are rejected.
    pub fn fee_vector(&self, tickers: &[String]) -> Result<Option<Array1<f64>>> {
        let Some(map) = &self.fees else {
            return Ok(None);
        };
        for ticker in map.keys() {
            if !tickers.iter().any(|t| t == ticker) {
                bail!("fees name unknown ticker {ticker:?}");
            }
        }
        let v = Array1::from_iter(tickers.iter().map(|t| map.get(t).copied().unwrap_or(0.0)));
        Ok(Some(v))
    }

    pub fn to_resolved_config(&self) -> ResolvedConfig {
        let cfg = &self.backtest;
        let sign = cfg.sign_mode.unwrap_or(match cfg.decision_method {
            DecisionMethod::L1Path => SignMode::Free,
            _ => SignMode::Nonnegative,
        });
        ResolvedConfig {
            returns: self.returns.display().to_string(),
            factors: self.factors.display().to_string(),
            out_dir: self.out_dir.display().to_string(),
            train_periods: cfg.train_periods,
            delta_beta: cfg.discounts.delta_beta,
            delta_epsilon: cfg.discounts.delta_epsilon,
            delta_c: cfg.discounts.delta_c,
            delta_f: cfg.discounts.delta_f,
            decision_method: method_str(cfg.decision_method).into(),
            target: target_str(&cfg.target_kind),
            kappa: cfg.policy.kappa,
            tie_rule: match cfg.policy.tie_rule {
                TieRule::ClosestToKappa => "closest_to_kappa".into(),
                TieRule::MaxPi => "max_pi".into(),
            },
            transition_rule: match cfg.policy.transition_rule {
                TransitionRule::None => "none".into(),
                TransitionRule::OneFundChange => "one_fund_change".into(),
            },
            fees: self.fees.clone(),
            mc_draws: cfg.mc_draws,
            n_lambda: cfg.n_lambda,
            seed: cfg.seed,
            sign_mode: match sign {
                SignMode::Free => "free".into(),
                SignMode::Nonnegative => "nonneg".into(),
            },
            inequality_mode: match cfg.inequality {
                InequalityMode::Weak => "weak".into(),
                InequalityMode::Strict => "strict".into(),
            },
            keep_params: cfg.keep_params,
            anchor: cfg.enumeration.anchor.clone(),
            max_q: cfg.max_q,
            threads: self.threads,
            annual_weights: self.annual_weights,
        }
    }
}
