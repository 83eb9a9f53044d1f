//! Regret-based selection of sparse dynamic portfolios.
//!
//! The pipeline: load or synthesize monthly return and factor panels,
//! sequentially filter them through discounted conjugate models, assemble
//! one-period-ahead predictive moments, construct candidate portfolios
//! (a gross-exposure-penalized path, enumerated anchored subsets, or
//! equal-weighted subsets), simulate the regret of each candidate against a
//! target from the posterior predictive, and select the candidate whose
//! satisfaction probability clears an investor threshold, period by period.

pub mod backtest;
pub mod decision;
pub mod dlm;
pub mod error;
pub mod linalg;
pub mod market_data;
pub mod mc;
pub mod regret;

pub use backtest::{
    cross_section_at, emit_cross_section, emit_plot_data, oos_stats, run, BacktestConfig,
    BacktestResult, DecisionMethod, EmitOptions, OosStats, TargetKind,
};
pub use decision::{
    enumerate_case_study, enumerate_equal_weight, lambda_path, make_targets, normalize,
    solve_kelly_constrained, solve_l1, ConstructionMethod, Decision, EnumerationRules, LambdaPath,
    SignMode,
};
pub use dlm::{
    assemble_moments, update_asset_filter, update_factor_filter, AssetFilterState, DiscountConfig,
    FactorFilterState, PredictiveMoments,
};
pub use error::{Error, Result};
pub use market_data::{
    align, load_factors, load_returns, synthesize, AlignedDataset, FactorPanel, Month, ReturnPanel,
    SyntheticSpec,
};
pub use mc::{mc_standard_error, sample_predictive, substream_seed, ParamDraw, ReturnSample};
pub use regret::{
    loss_log_wealth, regret_distribution, satisfaction_probabilities, select,
    sharpe_diff_distribution, InequalityMode, RegretDistribution, Selection, SelectionPolicy,
    SharpeDiffSummary, TieRule, TransitionRule,
};
