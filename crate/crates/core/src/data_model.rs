//! Asset universe, return panels, signals, configuration and the activity filter.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrpError};

/// Ticker prefix that marks a sector ETF.
pub const SECTOR_ETF_PREFIX: &str = "XL";

/// Signal threshold used when none is configured.
pub const DEFAULT_SIGNAL_THRESHOLD: f64 = 1e-3;

/// Recent-magnitude threshold used when none is configured.
pub const DEFAULT_MAGNITUDE_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssetId {
    ticker: String,
    is_sector_etf: bool,
}

impl AssetId {
    pub fn new(ticker: impl Into<String>) -> Result<Self> {
        let ticker = ticker.into();
        let trimmed = ticker.trim();
        if trimmed.is_empty() || trimmed.len() != ticker.len() {
            return Err(TrpError::InvalidTicker(ticker));
        }
        let is_sector_etf = ticker.starts_with(SECTOR_ETF_PREFIX);
        Ok(Self { ticker, is_sector_etf })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    /// True iff the ticker begins with `XL`.
    pub fn is_sector_etf(&self) -> bool {
        self.is_sector_etf
    }
}

impl std::fmt::Display for AssetId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.ticker)
    }
}

/// N assets by T periods of returns. Rows are assets.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    assets: Vec<AssetId>,
    returns: Array2<f64>,
}

impl ReturnsPanel {
    /// `returns` must be shaped `(assets.len(), T)` with `T >= 1` and only finite entries.
    pub fn new(assets: Vec<AssetId>, returns: Array2<f64>) -> Result<Self> {
        if assets.is_empty() {
            return Err(TrpError::ShapeMismatch("panel has no assets".into()));
        }
        if returns.nrows() != assets.len() {
            return Err(TrpError::ShapeMismatch(format!(
                "{} assets but {} return rows",
                assets.len(),
                returns.nrows()
            )));
        }
        if returns.ncols() == 0 {
            return Err(TrpError::InsufficientHistory {
                periods: 0,
                required: 1,
            });
        }
        let mut seen = HashSet::with_capacity(assets.len());
        for a in &assets {
            if !seen.insert(a.ticker()) {
                return Err(TrpError::DuplicateTicker(a.ticker().to_owned()));
            }
        }
        if let Some(((i, t), _)) = returns.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(TrpError::NonFiniteValue { row: t + 2, col: i + 1 });
        }
        Ok(Self { assets, returns })
    }

    /// Builds a panel from tickers and per-asset return rows.
    pub fn from_rows<S: AsRef<str>>(tickers: &[S], rows: &[Vec<f64>]) -> Result<Self> {
        let assets = tickers
            .iter()
            .map(|t| AssetId::new(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let periods = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != periods) {
            return Err(TrpError::ShapeMismatch("ragged return rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let returns =
            Array2::from_shape_vec((rows.len(), periods), flat).map_err(|e| TrpError::ShapeMismatch(e.to_string()))?;
        Self::new(assets, returns)
    }

    pub fn assets(&self) -> &[AssetId] {
        &self.assets
    }

    pub fn returns(&self) -> &Array2<f64> {
        &self.returns
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.returns.row(i)
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn n_periods(&self) -> usize {
        self.returns.ncols()
    }

    pub fn index_of(&self, ticker: &str) -> Option<usize> {
        self.assets.iter().position(|a| a.ticker() == ticker)
    }

    /// Writes the panel in the wide CSV layout accepted by [`load_returns`].
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.assets.iter().map(AssetId::ticker))?;
        for t in 0..self.n_periods() {
            w.write_record(self.returns.column(t).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| TrpError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Signed per-asset signals aligned with a panel's asset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalVector {
    values: Vec<f64>,
}

impl SignalVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(TrpError::NonFiniteValue { row: i + 1, col: 2 });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Signals restricted to `active`, in active-set order.
    pub fn restrict(&self, active: &ActiveSet) -> Vec<f64> {
        active.indices().iter().map(|&i| self.values[i]).collect()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootMode {
    /// Node of maximal degree in the undirected MST.
    Hub,
    /// Node of maximal absolute signal.
    MaxMagnitude,
    /// A designated asset, by its 0-based position in the returns panel.
    FixedIndex(usize),
}

impl std::str::FromStr for RootMode {
    type Err = TrpError;

    /// Parses `hub`, `maxmag` or `fixed:IDX`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hub" => Ok(RootMode::Hub),
            "maxmag" | "max-magnitude" => Ok(RootMode::MaxMagnitude),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|i| i.parse().ok())
                .map(RootMode::FixedIndex)
                .ok_or_else(|| TrpError::InvalidConfig(format!("unknown root mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for RootMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RootMode::Hub => f.write_str("hub"),
            RootMode::MaxMagnitude => f.write_str("maxmag"),
            RootMode::FixedIndex(i) => write!(f, "fixed:{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrpConfig {
    /// Activity-filter window k. `None` uses the full history.
    pub lookback: Option<usize>,
    /// Minimum recent magnitude ε (strict).
    pub magnitude_threshold: f64,
    /// Minimum absolute signal τ (strict).
    pub signal_threshold: f64,
    /// Split/replication mix ρ in [0, 1].
    pub rho: f64,
    /// Target gross leverage L.
    pub leverage: f64,
    pub root_mode: RootMode,
    /// Position cap c.
    pub cap: Option<f64>,
    /// Minimum absolute weight η.
    pub min_weight: Option<f64>,
    /// Exponent p for subtree masses. Never affects the weights.
    pub subtree_exponent: f64,
    /// Rescale surviving weights to gross L after clip/threshold.
    pub renormalize_after_postprocess: bool,
    /// Demean weights within each depth-one subtree of the market root.
    pub neutralize_depth_one: bool,
    /// Apply clip/threshold in the rooted-MST variant as well.
    pub postprocess_mst: bool,
}

impl Default for TrpConfig {
    fn default() -> Self {
        Self {
            lookback: None,
            magnitude_threshold: DEFAULT_MAGNITUDE_THRESHOLD,
            signal_threshold: DEFAULT_SIGNAL_THRESHOLD,
            rho: 0.5,
            leverage: 1.0,
            root_mode: RootMode::Hub,
            cap: None,
            min_weight: None,
            subtree_exponent: 1.0,
            renormalize_after_postprocess: false,
            neutralize_depth_one: false,
            postprocess_mst: false,
        }
    }
}

impl TrpConfig {
    pub fn validate(&self, periods: usize) -> Result<()> {
        let bad = |m: String| Err(TrpError::InvalidConfig(m));
        if let Some(k) = self.lookback {
            if k == 0 {
                return bad("lookback must be positive".into());
            }
            if k > periods {
                return Err(TrpError::LookbackExceedsHistory { lookback: k, periods });
            }
        }
        if !(self.magnitude_threshold.is_finite() && self.magnitude_threshold > 0.0) {
            return bad(format!(
                "magnitude threshold must be positive, got {}",
                self.magnitude_threshold
            ));
        }
        if !(self.signal_threshold.is_finite() && self.signal_threshold > 0.0) {
            return bad(format!(
                "signal threshold must be positive, got {}",
                self.signal_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(self.leverage.is_finite() && self.leverage > 0.0) {
            return bad(format!("leverage must be positive, got {}", self.leverage));
        }
        if let Some(c) = self.cap {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("cap must be positive, got {c}"));
            }
        }
        if let Some(eta) = self.min_weight {
            if !(eta.is_finite() && eta >= 0.0) {
                return bad(format!("min weight must be nonnegative, got {eta}"));
            }
        }
        if !(self.subtree_exponent.is_finite() && self.subtree_exponent >= 1.0) {
            return bad(format!("subtree exponent must be >= 1, got {}", self.subtree_exponent));
        }
        Ok(())
    }

    /// Lookback window resolved against a history of `periods`.
    pub fn effective_lookback(&self, periods: usize) -> usize {
        self.lookback.unwrap_or(periods)
    }
}

/// Assets passing the activity filter, in ascending panel order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
    recent_magnitudes: Vec<f64>,
}

impl ActiveSet {
    /// Builds an active set directly from panel indices. Indices are sorted and deduplicated.
    pub fn from_indices(mut indices: Vec<usize>, recent_magnitudes: Vec<f64>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self {
            indices,
            recent_magnitudes,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn n_active(&self) -> usize {
        self.indices.len()
    }

    pub fn recent_magnitudes(&self) -> &[f64] {
        &self.recent_magnitudes
    }

    /// Position of panel index `i` within the active set.
    pub fn ordinal_of(&self, i: usize) -> Option<usize> {
        self.indices.binary_search(&i).ok()
    }
}

/// Mean absolute return over the last `k` periods, per asset.
pub fn recent_magnitude(panel: &ReturnsPanel, k: usize) -> Result<Vec<f64>> {
    let periods = panel.n_periods();
    if k == 0 {
        return Err(TrpError::InvalidConfig("lookback must be positive".into()));
    }
    if k > periods {
        return Err(TrpError::LookbackExceedsHistory { lookback: k, periods });
    }
    Ok(panel
        .returns()
        .rows()
        .into_iter()
        .map(|row| row.iter().skip(periods - k).map(|r| r.abs()).sum::<f64>() / k as f64)
        .collect())
}

/// Assets with `m_i > ε` and `|s_i| > τ`.
pub fn active_set(panel: &ReturnsPanel, signals: &SignalVector, cfg: &TrpConfig) -> Result<ActiveSet> {
    if signals.len() != panel.n_assets() {
        return Err(TrpError::ShapeMismatch(format!(
            "{} signals for {} assets",
            signals.len(),
            panel.n_assets()
        )));
    }
    cfg.validate(panel.n_periods())?;
    let m = recent_magnitude(panel, cfg.effective_lookback(panel.n_periods()))?;
    let indices: Vec<usize> = (0..panel.n_assets())
        .filter(|&i| m[i] > cfg.magnitude_threshold && signals.values()[i].abs() > cfg.signal_threshold)
        .collect();
    if indices.is_empty() {
        return Err(TrpError::EmptyActiveSet);
    }
    Ok(ActiveSet {
        indices,
        recent_magnitudes: m,
    })
}

fn open(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TrpError::MissingFile(path.to_owned()),
        _ => TrpError::Io {
            path: path.to_owned(),
            source: e,
        },
    })?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(|e| TrpError::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(text)
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| TrpError::ParseError {
        row,
        col,
        message: format!("`{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(TrpError::NonFiniteValue { row, col });
    }
    Ok(v)
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

/// Parses a wide returns CSV: header row of tickers, then one row per period.
pub fn parse_returns(text: &str) -> Result<ReturnsPanel> {
    let mut records = csv_reader(text).into_records();
    let header = match records.next() {
        Some(r) => r?,
        None => {
            return Err(TrpError::ParseError {
                row: 1,
                col: 1,
                message: "missing header row".into(),
            })
        }
    };
    let tickers: Vec<String> = header.iter().map(|t| t.trim().to_owned()).collect();
    let n = tickers.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (r, record) in records.enumerate() {
        let record = record?;
        let row = r + 2;
        if record.len() != n {
            return Err(TrpError::ParseError {
                row,
                col: record.len().min(n) + 1,
                message: format!("expected {n} fields, found {}", record.len()),
            });
        }
        for (c, cell) in record.iter().enumerate() {
            columns[c].push(parse_cell(cell, row, c + 1)?);
        }
    }
    let periods = columns.first().map_or(0, Vec::len);
    if periods == 0 {
        return Err(TrpError::ParseError {
            row: 2,
            col: 1,
            message: "no data rows".into(),
        });
    }
    if periods < 2 {
        return Err(TrpError::InsufficientHistory { periods, required: 2 });
    }
    ReturnsPanel::from_rows(&tickers, &columns)
}

/// Loads a wide returns CSV from disk.
pub fn load_returns(path: impl AsRef<Path>) -> Result<ReturnsPanel> {
    parse_returns(&open(path.as_ref())?)
}

/// Parses a `ticker,signal` CSV and aligns it to `panel`. Assets absent from
/// the file get signal 0. An optional header row `ticker,signal` is skipped.
pub fn parse_signals(text: &str, panel: &ReturnsPanel) -> Result<SignalVector> {
    let index: HashMap<&str, usize> = panel
        .assets()
        .iter()
        .enumerate()
        .map(|(i, a)| (a.ticker(), i))
        .collect();
    let mut values = vec![0.0; panel.n_assets()];
    let mut seen = HashSet::new();
    for (r, record) in csv_reader(text).into_records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != 2 {
            return Err(TrpError::ParseError {
                row,
                col: 1,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let ticker = record[0].trim();
        if row == 1 && ticker.eq_ignore_ascii_case("ticker") {
            continue;
        }
        let &i = index
            .get(ticker)
            .ok_or_else(|| TrpError::UnknownTicker(ticker.to_owned()))?;
        if !seen.insert(i) {
            return Err(TrpError::DuplicateTicker(ticker.to_owned()));
        }
        values[i] = parse_cell(&record[1], row, 2)?;
    }
    SignalVector::new(values)
}

pub fn load_signals(path: impl AsRef<Path>, panel: &ReturnsPanel) -> Result<SignalVector> {
    parse_signals(&open(path.as_ref())?, panel)
}
