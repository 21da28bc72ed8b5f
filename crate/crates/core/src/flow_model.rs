//! Synthetic returns from a three-level nested flow model.
//!
//! Each asset belongs to a sector and to a basket inside that sector:
//!
//! ```text
//! r_i = theta_m z_M + theta_s z_sector(i) + theta_b z_basket(i) + sigma_eps eps_i
//! ```
//!
//! with independent standard normal shocks. Off-diagonal covariances take one
//! of three values (same basket, same sector, different sector), which orders
//! the correlation distances and shapes the MST.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_model::ActiveSet;
use crate::data_model::ReturnsPanel;
use crate::dependence::{build_mst, correlation_matrix, distance_matrix, mantegna_distance, SpanningTree};
use crate::error::{Result, TrpError};

/// Identifies the pseudo-random stream used by [`generate_returns`]. Bump it
/// whenever the draw order or the generator changes.
pub const GENERATOR_VERSION: &str = "chacha8/standard-normal/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loadings {
    pub market: f64,
    pub sector: f64,
    pub basket: f64,
    pub idio: f64,
}

impl Loadings {
    pub fn new(market: f64, sector: f64, basket: f64, idio: f64) -> Self {
        Self {
            market,
            sector,
            basket,
            idio,
        }
    }

    /// Equal common loadings `sqrt(lambda)` and idiosyncratic volatility `sqrt(1 - lambda)`.
    pub fn from_lambda(lambda: f64) -> Self {
        let c = lambda.sqrt();
        Self::new(c, c, c, (1.0 - lambda).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModelParams {
    pub theta_m: f64,
    pub theta_s: f64,
    pub theta_b: f64,
    pub sigma_eps: f64,
    /// Overrides the four loadings above when present.
    pub lambda: Option<f64>,
    pub tickers: Vec<String>,
    pub sector_of: Vec<String>,
    pub basket_of: Vec<String>,
    pub seed: u64,
}

/// Layout of a nested universe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniverseShape {
    pub sectors: usize,
    pub baskets_per_sector: usize,
    pub assets_per_basket: usize,
}

impl Default for UniverseShape {
    /// 4 sectors x 3 baskets x 4 assets = 48 names.
    fn default() -> Self {
        Self {
            sectors: 4,
            baskets_per_sector: 3,
            assets_per_basket: 4,
        }
    }
}

impl UniverseShape {
    pub fn n_assets(&self) -> usize {
        self.sectors * self.baskets_per_sector * self.assets_per_basket
    }
}

impl FlowModelParams {
    /// A nested universe with tickers `S{s}B{b}N{a}`.
    pub fn nested(shape: UniverseShape, loadings: Loadings, seed: u64) -> Self {
        let mut tickers = Vec::new();
        let mut sector_of = Vec::new();
        let mut basket_of = Vec::new();
        for s in 0..shape.sectors {
            for b in 0..shape.baskets_per_sector {
                for a in 0..shape.assets_per_basket {
                    tickers.push(format!("S{s}B{b}N{a}"));
                    sector_of.push(format!("S{s}"));
                    basket_of.push(format!("S{s}B{b}"));
                }
            }
        }
        Self {
            theta_m: loadings.market,
            theta_s: loadings.sector,
            theta_b: loadings.basket,
            sigma_eps: loadings.idio,
            lambda: None,
            tickers,
            sector_of,
            basket_of,
            seed,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Loadings after applying the lambda override.
    pub fn effective_loadings(&self) -> Loadings {
        match self.lambda {
            Some(l) => Loadings::from_lambda(l),
            None => Loadings::new(self.theta_m, self.theta_s, self.theta_b, self.sigma_eps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrpError::InconsistentLabels(m));
        let n = self.tickers.len();
        if n == 0 {
            return bad("universe is empty".into());
        }
        if self.sector_of.len() != n || self.basket_of.len() != n {
            return bad(format!(
                "{n} tickers, {} sector labels, {} basket labels",
                self.sector_of.len(),
                self.basket_of.len()
            ));
        }
        let mut basket_sector: BTreeMap<&str, &str> = BTreeMap::new();
        for (b, s) in self.basket_of.iter().zip(&self.sector_of) {
            if let Some(prev) = basket_sector.insert(b, s) {
                if prev != s {
                    return bad(format!("basket {b} spans sectors {prev} and {s}"));
                }
            }
        }
        let l = [self.theta_m, self.theta_s, self.theta_b, self.sigma_eps];
        if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TrpError::InvalidConfig(
                "loadings must be finite and nonnegative".into(),
            ));
        }
        if let Some(lambda) = self.lambda {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(TrpError::InvalidConfig(format!(
                    "lambda must lie in [0, 1], got {lambda}"
                )));
            }
        }
        Ok(())
    }

    fn label_indices(labels: &[String]) -> (usize, Vec<usize>) {
        let sorted: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
        let index: BTreeMap<&str, usize> = sorted.iter().enumerate().map(|(k, l)| (*l, k)).collect();
        (sorted.len(), labels.iter().map(|l| index[l.as_str()]).collect())
    }

    pub fn same_basket(&self, i: usize, j: usize) -> bool {
        self.basket_of[i] == self.basket_of[j]
    }

    pub fn same_sector(&self, i: usize, j: usize) -> bool {
        self.sector_of[i] == self.sector_of[j]
    }
}

/// Draws `periods` periods. Per period the draw order is: market shock,
/// sector shocks (sorted label order), basket shocks (sorted label order),
/// then one idiosyncratic shock per asset.
pub fn generate_returns(params: &FlowModelParams, periods: usize) -> Result<ReturnsPanel> {
    params.validate()?;
    if periods == 0 {
        return Err(TrpError::InsufficientHistory {
            periods: 0,
            required: 1,
        });
    }
    let l = params.effective_loadings();
    let (n_sectors, sector_idx) = FlowModelParams::label_indices(&params.sector_of);
    let (n_baskets, basket_idx) = FlowModelParams::label_indices(&params.basket_of);
    let n = params.n_assets();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut returns = Array2::zeros((n, periods));
    let mut z_s = vec![0.0; n_sectors];
    let mut z_b = vec![0.0; n_baskets];
    for t in 0..periods {
        let z_m: f64 = rng.sample(StandardNormal);
        z_s.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
        z_b.iter_mut().for_each(|z| *z = rng.sample(StandardNormal));
        for i in 0..n {
            let eps: f64 = rng.sample(StandardNormal);
            returns[[i, t]] =
                l.market * z_m + l.sector * z_s[sector_idx[i]] + l.basket * z_b[basket_idx[i]] + l.idio * eps;
        }
    }
    let assets = params
        .tickers
        .iter()
        .map(crate::data_model::AssetId::new)
        .collect::<Result<Vec<_>>>()?;
    ReturnsPanel::new(assets, returns)
}

/// Covariance tiers and total variance implied by the loadings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceTiers {
    pub same_basket: f64,
    pub same_sector: f64,
    pub cross_sector: f64,
    pub variance: f64,
}

impl CovarianceTiers {
    pub fn from_loadings(l: Loadings) -> Self {
        let m = l.market * l.market;
        let s = l.sector * l.sector;
        let b = l.basket * l.basket;
        Self {
            same_basket: m + s + b,
            same_sector: m + s,
            cross_sector: m,
            variance: m + s + b + l.idio * l.idio,
        }
    }
}

/// Analytic covariance matrix of the model.
pub fn population_covariance(params: &FlowModelParams) -> Result<Array2<f64>> {
    params.validate()?;
    let tiers = CovarianceTiers::from_loadings(params.effective_loadings());
    let n = params.n_assets();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            tiers.variance
        } else if params.same_basket(i, j) {
            tiers.same_basket
        } else if params.same_sector(i, j) {
            tiers.same_sector
        } else {
            tiers.cross_sector
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TierReport {
    pub rho_basket: f64,
    pub rho_sector: f64,
    pub rho_cross: f64,
    pub d_basket: f64,
    pub d_sector: f64,
    pub d_cross: f64,
}

/// Population correlations and distances per tier; fails unless
/// `rho_basket > rho_sector > rho_cross` and the distances order the other way.
pub fn tier_ordering_check(params: &FlowModelParams) -> Result<TierReport> {
    params.validate()?;
    let tiers = CovarianceTiers::from_loadings(params.effective_loadings());
    let corr = |c: f64| c / tiers.variance;
    let report = TierReport {
        rho_basket: corr(tiers.same_basket),
        rho_sector: corr(tiers.same_sector),
        rho_cross: corr(tiers.cross_sector),
        d_basket: mantegna_distance(corr(tiers.same_basket)),
        d_sector: mantegna_distance(corr(tiers.same_sector)),
        d_cross: mantegna_distance(corr(tiers.cross_sector)),
    };
    let ordered = report.rho_basket > report.rho_sector
        && report.rho_sector > report.rho_cross
        && report.d_basket < report.d_sector
        && report.d_sector < report.d_cross;
    if !ordered {
        return Err(TrpError::DegenerateTiers {
            basket: report.rho_basket,
            sector: report.rho_sector,
            cross: report.rho_cross,
        });
    }
    Ok(report)
}

/// Edge-type composition of an MST over a labeled universe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeStats {
    pub intra_basket: f64,
    /// Same sector, different basket.
    pub intra_sector: f64,
    pub cross_sector: f64,
    pub max_degree: usize,
    pub n_edges: usize,
}

/// Classifies the edges of `tree`, whose nodes are the assets of `params` in order.
pub fn edge_type_fractions(params: &FlowModelParams, tree: &SpanningTree) -> RegimeStats {
    let (mut basket, mut sector, mut cross) = (0usize, 0usize, 0usize);
    for e in tree.edges() {
        if params.same_basket(e.a, e.b) {
            basket += 1;
        } else if params.same_sector(e.a, e.b) {
            sector += 1;
        } else {
            cross += 1;
        }
    }
    let total = tree.edges().len().max(1) as f64;
    RegimeStats {
        intra_basket: basket as f64 / total,
        intra_sector: sector as f64 / total,
        cross_sector: cross as f64 / total,
        max_degree: tree.degrees().into_iter().max().unwrap_or(0),
        n_edges: tree.edges().len(),
    }
}

/// Generates a panel, builds its MST over all assets and reports its edge composition.
pub fn mst_regime_probe(params: &FlowModelParams, periods: usize) -> Result<RegimeStats> {
    params.validate()?;
    let mut baskets_per_sector: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (s, b) in params.sector_of.iter().zip(&params.basket_of) {
        baskets_per_sector.entry(s).or_default().insert(b);
    }
    if baskets_per_sector.len() < 2 || baskets_per_sector.values().any(|b| b.len() < 2) {
        return Err(TrpError::InvalidConfig(
            "regime probe needs at least 2 sectors with at least 2 baskets each".into(),
        ));
    }
    let panel = generate_returns(params, periods)?;
    let all = ActiveSet::from_indices((0..panel.n_assets()).collect(), vec![]);
    let tree = build_mst(&distance_matrix(&correlation_matrix(&panel, &all)));
    Ok(edge_type_fractions(params, &tree))
}
