//! Return-panel loading, validation, alignment, and synthetic generation.
//!
//! The on-disk format is a plain CSV with a `date` column of `YYYY-MM` month
//! identifiers followed by one column per ticker (returns.csv) or factor
//! (factors.csv). Values are simple returns as decimal fractions per month.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Calendar month, stored as months since year 0. Intra-month timing is
/// deliberately undefined; the data is monthly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Month(i64);

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidArgument(format!(
                "month {month} outside 1..=12"
            )));
        }
        Ok(Month(year as i64 * 12 + (month as i64 - 1)))
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12) as i32
    }

    pub fn month(self) -> u32 {
        (self.0.rem_euclid(12) + 1) as u32
    }

    pub fn succ(self) -> Month {
        Month(self.0 + 1)
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::InvalidArgument(format!("bad month identifier {s:?}")))?;
        let year: i32 = y
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad year in {s:?}")))?;
        let month: u32 = m
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad month in {s:?}")))?;
        Month::new(year, month)
    }
}

impl TryFrom<String> for Month {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Month> for String {
    fn from(m: Month) -> String {
        m.to_string()
    }
}

/// Monthly simple-return panel for the investable assets.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub dates: Vec<Month>,
    pub tickers: Vec<String>,
    /// T x N matrix, row per month in `dates` order.
    pub values: Array2<f64>,
}

/// Monthly factor-return panel.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPanel {
    pub dates: Vec<Month>,
    pub names: Vec<String>,
    /// T x p matrix, row per month in `dates` order.
    pub values: Array2<f64>,
}

/// Return and factor panels restricted to a common date index.
#[derive(Debug, Clone)]
pub struct AlignedDataset {
    pub returns: ReturnPanel,
    pub factors: FactorPanel,
}

impl AlignedDataset {
    pub fn dates(&self) -> &[Month] {
        &self.returns.dates
    }

    pub fn len(&self) -> usize {
        self.returns.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dataset restricted to the first `n` months. Used by the walk-forward
    /// information-discipline checks.
    pub fn truncate(&self, n: usize) -> AlignedDataset {
        let n = n.min(self.len());
        AlignedDataset {
            returns: ReturnPanel {
                dates: self.returns.dates[..n].to_vec(),
                tickers: self.returns.tickers.clone(),
                values: self.returns.values.slice(ndarray::s![..n, ..]).to_owned(),
            },
            factors: FactorPanel {
                dates: self.factors.dates[..n].to_vec(),
                names: self.factors.names.clone(),
                values: self.factors.values.slice(ndarray::s![..n, ..]).to_owned(),
            },
        }
    }
}

/// Ground-truth specification for a synthetic dataset: a static factor model
/// with known loadings, factor moments, and idiosyncratic noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub n_factors: usize,
    pub n_periods: usize,
    /// N x p loading matrix, row per asset.
    pub betas: Vec<Vec<f64>>,
    pub factor_mean: Vec<f64>,
    /// p x p SPD matrix.
    pub factor_cov: Vec<Vec<f64>>,
    /// Per-asset idiosyncratic variances; zero is allowed (noise-free asset).
    pub idio_var: Vec<f64>,
    pub seed: u64,
    /// First month of the generated panel; defaults to 2000-01.
    #[serde(default = "default_start")]
    pub start: Month,
}

fn default_start() -> Month {
    Month::new(2000, 1).unwrap()
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_periods == 0 {
            return Err(Error::InvalidArgument("n_periods must be >= 1".into()));
        }
        if self.n_assets == 0 || self.n_factors == 0 {
            return Err(Error::InvalidArgument(
                "n_assets and n_factors must be >= 1".into(),
            ));
        }
        if self.betas.len() != self.n_assets || self.betas.iter().any(|r| r.len() != self.n_factors)
        {
            return Err(Error::InvalidArgument(
                "betas must be n_assets x n_factors".into(),
            ));
        }
        if self.factor_mean.len() != self.n_factors {
            return Err(Error::InvalidArgument("factor_mean length mismatch".into()));
        }
        if self.factor_cov.len() != self.n_factors
            || self.factor_cov.iter().any(|r| r.len() != self.n_factors)
        {
            return Err(Error::InvalidArgument("factor_cov must be p x p".into()));
        }
        if self.idio_var.len() != self.n_assets {
            return Err(Error::InvalidArgument("idio_var length mismatch".into()));
        }
        if self.idio_var.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "idiosyncratic variances must be nonnegative".into(),
            ));
        }
        let cov = self.factor_cov_matrix();
        if !linalg::is_spd(&cov, 1e-10) {
            return Err(Error::NotSpd("factor_cov".into()));
        }
        Ok(())
    }

    pub fn factor_cov_matrix(&self) -> Array2<f64> {
        let p = self.n_factors;
        Array2::from_shape_fn((p, p), |(i, j)| self.factor_cov[i][j])
    }

    pub fn beta_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_assets, self.n_factors), |(i, j)| self.betas[i][j])
    }
}

fn validate_dates(dates: &[Month], path: &str) -> Result<()> {
    for w in dates.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::DuplicateDate {
                path: path.to_string(),
                date: w[1].to_string(),
            });
        }
    }
    Ok(())
}

impl ReturnPanel {
    pub fn new(dates: Vec<Month>, tickers: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if tickers.len() < 2 {
            return Err(Error::InvalidPanel(format!(
                "return panel needs at least 2 tickers, got {}",
                tickers.len()
            )));
        }
        if values.nrows() != dates.len() || values.ncols() != tickers.len() {
            return Err(Error::InvalidPanel(
                "values shape does not match header".into(),
            ));
        }
        validate_dates(&dates, "<memory>")?;
        for (t, date) in dates.iter().enumerate() {
            for (i, ticker) in tickers.iter().enumerate() {
                let v = values[[t, i]];
                if !v.is_finite() || v <= -1.0 {
                    return Err(Error::InvalidReturn {
                        date: date.to_string(),
                        ticker: ticker.clone(),
                        value: v,
                    });
                }
            }
        }
        Ok(ReturnPanel {
            dates,
            tickers,
            values,
        })
    }

    pub fn to_csv(&self) -> String {
        panel_to_csv(&self.dates, &self.tickers, &self.values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

impl FactorPanel {
    pub fn new(dates: Vec<Month>, names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidPanel(
                "factor panel needs at least 1 factor".into(),
            ));
        }
        if values.nrows() != dates.len() || values.ncols() != names.len() {
            return Err(Error::InvalidPanel(
                "values shape does not match header".into(),
            ));
        }
        validate_dates(&dates, "<memory>")?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!("non-finite factor value {v}")));
        }
        Ok(FactorPanel {
            dates,
            names,
            values,
        })
    }

    pub fn to_csv(&self) -> String {
        panel_to_csv(&self.dates, &self.names, &self.values)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn panel_to_csv(dates: &[Month], columns: &[String], values: &Array2<f64>) -> String {
    let mut out = String::from("date");
    for c in columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (t, date) in dates.iter().enumerate() {
        out.push_str(&date.to_string());
        for i in 0..columns.len() {
            out.push(',');
            // Shortest round-trip formatting keeps re-parsing exact.
            out.push_str(&format!("{}", values[[t, i]]));
        }
        out.push('\n');
    }
    out
}

/// Parses a date-indexed CSV into (sorted dates, column names, values).
fn parse_panel_csv(path: &Path) -> Result<(Vec<Month>, Vec<String>, Array2<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let path_s = path.display().to_string();
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader {
            path: path_s.clone(),
            detail: "file is empty".into(),
        })?
        .trim_end_matches('\r');
    let mut cols = header.split(',');
    match cols.next() {
        Some(first) if first.trim() == "date" => {}
        other => {
            return Err(Error::MalformedHeader {
                path: path_s,
                detail: format!("first column must be `date`, got {other:?}"),
            })
        }
    }
    let names: Vec<String> = cols.map(|c| c.trim().to_string()).collect();
    if names.is_empty() || names.iter().any(|n| n.is_empty()) {
        return Err(Error::MalformedHeader {
            path: path_s,
            detail: "expected non-empty column names after `date`".into(),
        });
    }

    let mut rows: Vec<(Month, Vec<f64>)> = Vec::new();
    for (lineno, raw) in lines.enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = lineno + 2; // 1-based, counting the header
        let mut fields = line.split(',');
        let date_s = fields.next().unwrap_or("").trim();
        let date: Month = date_s.parse().map_err(|_| Error::ParseCell {
            path: path_s.clone(),
            row,
            column: "date".into(),
            detail: format!("bad month identifier {date_s:?}"),
        })?;
        let mut vals = Vec::with_capacity(names.len());
        for name in &names {
            let cell = fields.next().ok_or_else(|| Error::ParseCell {
                path: path_s.clone(),
                row,
                column: name.clone(),
                detail: "missing cell".into(),
            })?;
            let v: f64 = cell.trim().parse().map_err(|_| Error::ParseCell {
                path: path_s.clone(),
                row,
                column: name.clone(),
                detail: format!("non-numeric cell {cell:?}"),
            })?;
            vals.push(v);
        }
        if fields.next().is_some() {
            return Err(Error::ParseCell {
                path: path_s.clone(),
                row,
                column: "<extra>".into(),
                detail: "more cells than header columns".into(),
            });
        }
        rows.push((date, vals));
    }

    rows.sort_by_key(|(d, _)| *d);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(Error::DuplicateDate {
                path: path_s,
                date: w[0].0.to_string(),
            });
        }
    }

    let dates: Vec<Month> = rows.iter().map(|(d, _)| *d).collect();
    let mut values = Array2::<f64>::zeros((rows.len(), names.len()));
    for (t, (_, vals)) in rows.iter().enumerate() {
        for (i, &v) in vals.iter().enumerate() {
            values[[t, i]] = v;
        }
    }
    Ok((dates, names, values))
}

/// Loads and validates a returns.csv panel. Rows are sorted ascending by date.
pub fn load_returns(path: &Path) -> Result<ReturnPanel> {
    let (dates, tickers, values) = parse_panel_csv(path)?;
    ReturnPanel::new(dates, tickers, values)
}

/// Loads and validates a factors.csv panel. Rows are sorted ascending by date.
pub fn load_factors(path: &Path) -> Result<FactorPanel> {
    let (dates, names, values) = parse_panel_csv(path)?;
    FactorPanel::new(dates, names, values)
}

/// Restricts both panels to the intersection of their date indices.
pub fn align(returns: &ReturnPanel, factors: &FactorPanel) -> Result<AlignedDataset> {
    let factor_dates: std::collections::BTreeSet<Month> = factors.dates.iter().copied().collect();
    let keep_r: Vec<usize> = returns
        .dates
        .iter()
        .enumerate()
        .filter(|(_, d)| factor_dates.contains(d))
        .map(|(i, _)| i)
        .collect();
    if keep_r.len() < 2 {
        return Err(Error::EmptyIntersection);
    }
    let common: std::collections::BTreeSet<Month> =
        keep_r.iter().map(|&i| returns.dates[i]).collect();
    let keep_f: Vec<usize> = factors
        .dates
        .iter()
        .enumerate()
        .filter(|(_, d)| common.contains(d))
        .map(|(i, _)| i)
        .collect();

    let select = |values: &Array2<f64>, rows: &[usize]| {
        let mut out = Array2::<f64>::zeros((rows.len(), values.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(k).assign(&values.row(r));
        }
        out
    };

    Ok(AlignedDataset {
        returns: ReturnPanel {
            dates: keep_r.iter().map(|&i| returns.dates[i]).collect(),
            tickers: returns.tickers.clone(),
            values: select(&returns.values, &keep_r),
        },
        factors: FactorPanel {
            dates: keep_f.iter().map(|&i| factors.dates[i]).collect(),
            names: factors.names.clone(),
            values: select(&factors.values, &keep_f),
        },
    })
}

/// Generates (returns, factors) panels from a known factor model.
///
/// Factors are i.i.d. normal with the specified mean and covariance; asset
/// returns are `betas * factors + idiosyncratic noise`. Deterministic given
/// the seed.
pub fn synthesize(spec: &SyntheticSpec) -> Result<(ReturnPanel, FactorPanel)> {
    spec.validate()?;
    let p = spec.n_factors;
    let n = spec.n_assets;
    let t = spec.n_periods;
    let chol = linalg::cholesky(&spec.factor_cov_matrix())?;
    let betas = spec.beta_matrix();
    let mean = Array1::from_vec(spec.factor_mean.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut factor_values = Array2::<f64>::zeros((t, p));
    let mut return_values = Array2::<f64>::zeros((t, n));
    for row in 0..t {
        let z = Array1::from_shape_fn(p, |_| std_normal.sample(&mut rng));
        let f = &mean + &chol.dot(&z);
        factor_values.row_mut(row).assign(&f);
        for i in 0..n {
            let noise = if spec.idio_var[i] > 0.0 {
                std_normal.sample(&mut rng) * spec.idio_var[i].sqrt()
            } else {
                0.0
            };
            return_values[[row, i]] = betas.row(i).dot(&f) + noise;
        }
    }

    let dates: Vec<Month> = {
        let mut d = spec.start;
        (0..t)
            .map(|_| {
                let cur = d;
                d = d.succ();
                cur
            })
            .collect()
    };
    let tickers: Vec<String> = (0..n).map(|i| format!("A{:02}", i + 1)).collect();
    let names: Vec<String> = (0..p).map(|j| format!("F{}", j + 1)).collect();

    // Clamp pathological draws below the -1 floor rather than failing; the
    // generator is a verification harness, not a market model.
    for v in return_values.iter_mut() {
        if *v <= -1.0 {
            *v = -0.9999;
        }
    }

    let returns = ReturnPanel::new(dates.clone(), tickers, return_values)?;
    let factors = FactorPanel::new(dates, names, factor_values)?;
    Ok((returns, factors))
}
