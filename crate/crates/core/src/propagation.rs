//! Signal propagation over a rooted topology and the end-to-end allocator.
//!
//! Every node `v` carries a topological factor `g_v`: the root starts at 1 and
//! each child inherits `alpha(b(u), rho) * g_u` from its parent `u`, where
//! `alpha(b, rho) = (1 - rho) + rho / b`. Final weights are the signals scaled
//! by their factors and normalized to gross leverage `L`:
//!
//! ```text
//! w_i = L * s_i * g_i / sum_j |s_j| * g_j        (i active, 0 otherwise)
//! ```
//!
//! `rho = 0` reduces to normalized raw signals; `rho = 1` is a conservative
//! equal split where the children of every node share exactly its factor.

use serde::Serialize;

use crate::data_model::{active_set, ActiveSet, ReturnsPanel, SignalVector, TrpConfig};
use crate::dependence::{build_mst, correlation_matrix, distance_matrix, SpanningTree};
use crate::error::{Diagnostic, Result, TrpError};
use crate::topology::{
    anchor_market_sector, augmented_mst, root_at_dummy, root_tree, select_root, subtree_mass, RootedTopology,
    SubtreeMass, MARKET_ROOT_FALLBACK_LABEL, MARKET_ROOT_LABEL,
};

/// Which rooted topology the allocator builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// MST over the active assets, rooted by [`crate::data_model::RootMode`].
    MstRooted,
    /// Dummy market root with sector ETFs forced to depth one.
    SectorAnchored,
}

impl std::str::FromStr for Variant {
    type Err = TrpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mst" => Ok(Variant::MstRooted),
            "sector" => Ok(Variant::SectorAnchored),
            _ => Err(TrpError::InvalidConfig(format!("unknown variant `{s}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::MstRooted => "mst",
            Variant::SectorAnchored => "sector",
        })
    }
}

/// Propagation coefficient `(1 - rho) + rho / b` for a node with `b >= 1` children.
/// Evaluated as `1 - rho (1 - 1/b)`, which never rounds above 1.
pub fn alpha(b: usize, rho: f64) -> f64 {
    debug_assert!(b >= 1);
    1.0 - rho * (1.0 - 1.0 / b as f64)
}

/// Mass amplification `b (1 - rho) + rho`: ratio of summed child factors to the parent factor.
pub fn beta(b: usize, rho: f64) -> f64 {
    b as f64 * (1.0 - rho) + rho
}

/// Per-level growth bound `B (1 - rho) + rho`.
pub fn gamma_bound(max_branching: usize, rho: f64) -> f64 {
    beta(max_branching.max(1), rho)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopoFactors {
    rho: f64,
    g: Vec<f64>,
    alpha: Vec<Option<f64>>,
    beta: Vec<Option<f64>>,
    gamma_bound: f64,
}

impl TopoFactors {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Factors for every node, dummy root included.
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    /// `alpha` for internal nodes, `None` for leaves.
    pub fn alpha(&self, u: usize) -> Option<f64> {
        self.alpha[u]
    }

    /// `beta` for internal nodes, `None` for leaves.
    pub fn beta(&self, u: usize) -> Option<f64> {
        self.beta[u]
    }

    pub fn gamma_bound(&self) -> f64 {
        self.gamma_bound
    }
}

/// Factors by top-down recursion from `g_root = 1`.
pub fn topo_factors(topo: &RootedTopology, rho: f64) -> TopoFactors {
    topo_factors_with(topo, rho, alpha)
}

/// [`topo_factors`] with a substitutable coefficient. The verify harness uses
/// this to inject faults and confirm its checks catch them.
pub(crate) fn topo_factors_with(topo: &RootedTopology, rho: f64, coeff: fn(usize, f64) -> f64) -> TopoFactors {
    let n = topo.n_nodes();
    let internal = |u: usize| topo.branching(u) >= 1;
    let alpha_u: Vec<Option<f64>> = (0..n)
        .map(|u| internal(u).then(|| coeff(topo.branching(u), rho)))
        .collect();
    let beta_u: Vec<Option<f64>> = (0..n)
        .map(|u| internal(u).then(|| beta(topo.branching(u), rho)))
        .collect();
    let mut g = vec![0.0; n];
    for &v in topo.order() {
        g[v] = match topo.parent(v) {
            None => 1.0,
            Some(p) => alpha_u[p].expect("a parent has at least one child") * g[p],
        };
    }
    TopoFactors {
        rho,
        g,
        alpha: alpha_u,
        beta: beta_u,
        gamma_bound: gamma_bound(topo.max_branching(), rho),
    }
}

/// `g_v` as the product of `alpha` over the ancestors of `v`, root first.
pub fn path_product(topo: &RootedTopology, rho: f64, v: usize) -> f64 {
    topo.path_from_root(v)
        .into_iter()
        .map(|u| alpha(topo.branching(u), rho))
        .product()
}

/// Sum of `g_v` over nodes at depth `level`.
pub fn level_mass(factors: &TopoFactors, topo: &RootedTopology, level: usize) -> f64 {
    (0..topo.n_nodes())
        .filter(|&v| topo.depth(v) == level)
        .map(|v| factors.g[v])
        .sum()
}

/// Pre-normalization exposures `x_v = s_v * g_v` over real nodes.
pub fn raw_portfolio(signals: &[f64], factors: &TopoFactors, topo: &RootedTopology) -> Vec<f64> {
    assert_eq!(signals.len(), topo.n_real(), "signals must cover the real nodes");
    signals.iter().zip(&factors.g).map(|(s, g)| s * g).collect()
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// `w = L x / ||x||_1`; zero weights and [`Diagnostic::DegenerateSignal`] when `||x||_1 = 0`.
pub fn normalize_leverage(x: &[f64], leverage: f64) -> (Vec<f64>, Option<Diagnostic>) {
    let gross = l1(x);
    if gross > 0.0 {
        (x.iter().map(|v| leverage * v / gross).collect(), None)
    } else {
        (vec![0.0; x.len()], Some(Diagnostic::DegenerateSignal))
    }
}

/// Clip to `[-cap, cap]`, then zero entries with `|w| < min_weight`, then
/// optionally rescale survivors back to gross `leverage`.
pub fn postprocess(
    w: &[f64],
    cap: Option<f64>,
    min_weight: Option<f64>,
    renormalize: bool,
    leverage: f64,
) -> (Vec<f64>, Option<Diagnostic>) {
    let cap = cap.unwrap_or(f64::INFINITY);
    let eta = min_weight.unwrap_or(0.0);
    let out: Vec<f64> = w
        .iter()
        .map(|v| v.clamp(-cap, cap))
        .map(|v| if v.abs() < eta { 0.0 } else { v })
        .collect();
    if l1(w) > 0.0 && l1(&out) == 0.0 {
        return (out, Some(Diagnostic::AllWeightsPruned));
    }
    if renormalize {
        return normalize_leverage(&out, leverage);
    }
    (out, None)
}

/// Demeans the weights inside each depth-one subtree of the market root, then
/// restores gross `leverage`. `w` covers the real nodes of `topo`.
pub fn neutralize_depth_one(w: &[f64], topo: &RootedTopology, leverage: f64) -> Result<(Vec<f64>, Option<Diagnostic>)> {
    if !topo.is_dummy_root() {
        return Err(TrpError::InvalidConfig(
            "depth-one neutralization needs the market-rooted topology".into(),
        ));
    }
    let mut out = w.to_vec();
    for &head in topo.children(topo.root()) {
        let members: Vec<usize> = topo.subtree(head).into_iter().filter(|&v| !topo.is_dummy(v)).collect();
        let mean = members.iter().map(|&v| w[v]).sum::<f64>() / members.len() as f64;
        for &v in &members {
            out[v] = w[v] - mean;
        }
    }
    Ok(normalize_leverage(&out, leverage))
}

/// Depth-one groups of a market-rooted topology: real nodes per root child.
pub fn depth_one_groups(topo: &RootedTopology) -> Vec<Vec<usize>> {
    topo.children(topo.root())
        .iter()
        .map(|&h| topo.subtree(h).into_iter().filter(|&v| !topo.is_dummy(v)).collect())
        .collect()
}

/// The fixed-topology map `F(s) = L D_g s / ||D_g s||_1`, or `None` when the denominator is zero.
pub fn conditional_map(g: &[f64], s: &[f64], leverage: f64) -> Option<Vec<f64>> {
    let x: Vec<f64> = s.iter().zip(g).map(|(s, g)| s * g).collect();
    let gross = l1(&x);
    (gross > 0.0).then(|| x.iter().map(|v| leverage * v / gross).collect())
}

/// L1 Lipschitz constant of [`conditional_map`] on inputs with `||D_g s||_1 >= gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub gamma: f64,
    pub lipschitz_constant: f64,
}

impl StabilityCertificate {
    pub fn new(gamma: f64, leverage: f64) -> Self {
        let lipschitz_constant = if gamma > 0.0 {
            2.0 * leverage / gamma
        } else {
            f64::INFINITY
        };
        Self {
            gamma,
            lipschitz_constant,
        }
    }

    /// Certificate for the pair `(s, s')` using the smaller of their weighted gross exposures.
    pub fn for_pair(g: &[f64], s: &[f64], s_prime: &[f64], leverage: f64) -> Self {
        let weighted = |v: &[f64]| v.iter().zip(g).map(|(a, b)| (a * b).abs()).sum::<f64>();
        Self::new(weighted(s).min(weighted(s_prime)), leverage)
    }

    pub fn is_finite(&self) -> bool {
        self.lipschitz_constant.is_finite()
    }
}

/// Exposures and weights over the full panel; inactive assets hold zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Portfolio {
    pre_norm: Vec<f64>,
    weights: Vec<f64>,
    leverage_target: f64,
}

impl Portfolio {
    pub fn zero(n: usize, leverage_target: f64) -> Self {
        Self {
            pre_norm: vec![0.0; n],
            weights: vec![0.0; n],
            leverage_target,
        }
    }

    pub fn pre_norm(&self) -> &[f64] {
        &self.pre_norm
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn gross(&self) -> f64 {
        l1(&self.weights)
    }

    pub fn net(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn leverage_target(&self) -> f64 {
        self.leverage_target
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }
}

/// Output of [`allocate`]: the portfolio plus every intermediate object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Allocation {
    pub variant: Variant,
    pub portfolio: Portfolio,
    /// `None` when nothing passed the activity filter.
    pub active: Option<ActiveSet>,
    /// The undirected tree the topology was extracted from. In the fallback
    /// branch it includes the dummy node as its last vertex.
    pub tree: Option<SpanningTree>,
    pub topology: Option<RootedTopology>,
    pub factors: Option<TopoFactors>,
    /// Computed for reporting only; never feeds the weights.
    pub subtree_mass: Option<SubtreeMass>,
    pub topology_hash: Option<String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Allocation {
    /// `g` per panel asset; `None` for inactive assets.
    pub fn asset_factors(&self, n_assets: usize) -> Vec<Option<f64>> {
        let mut out = vec![None; n_assets];
        if let (Some(active), Some(f)) = (&self.active, &self.factors) {
            for (k, &i) in active.indices().iter().enumerate() {
                out[i] = Some(f.g[k]);
            }
        }
        out
    }
}

/// Node labels for a topology over `active`: tickers, then the market root label.
pub fn node_labels<'a>(panel: &'a ReturnsPanel, active: &ActiveSet, topo_nodes: usize) -> Vec<&'a str> {
    let mut labels: Vec<&str> = active.indices().iter().map(|&i| panel.assets()[i].ticker()).collect();
    if topo_nodes > labels.len() {
        let taken = labels.contains(&MARKET_ROOT_LABEL);
        labels.push(if taken {
            MARKET_ROOT_FALLBACK_LABEL
        } else {
            MARKET_ROOT_LABEL
        });
    }
    labels
}

/// Builds the rooted topology for `variant` over the active assets.
pub fn build_topology(
    panel: &ReturnsPanel,
    active: &ActiveSet,
    signals: &[f64],
    cfg: &TrpConfig,
    variant: Variant,
) -> Result<(SpanningTree, RootedTopology)> {
    let mst = build_mst(&distance_matrix(&correlation_matrix(panel, active)));
    match variant {
        Variant::MstRooted => {
            let root = select_root(&mst, signals, cfg.root_mode, active)?;
            let topo = root_tree(&mst, root)?;
            Ok((mst, topo))
        }
        Variant::SectorAnchored => {
            let sectors: Vec<usize> = active
                .indices()
                .iter()
                .enumerate()
                .filter(|(_, &i)| panel.assets()[i].is_sector_etf())
                .map(|(k, _)| k)
                .collect();
            if sectors.is_empty() {
                let aug = augmented_mst(panel, active);
                let topo = root_at_dummy(&aug)?;
                Ok((aug, topo))
            } else {
                let topo = anchor_market_sector(&mst, &sectors)?;
                Ok((mst, topo))
            }
        }
    }
}

/// End-to-end allocation: filter, correlation, distance, MST, rooting,
/// factors, exposures, leverage normalization, then post-processing and
/// neutralization where configured.
///
/// Post-processing runs for [`Variant::SectorAnchored`], or for the rooted-MST
/// variant when `cfg.postprocess_mst` is set. An empty active set or a zero
/// exposure vector yields an all-zero portfolio with a diagnostic.
pub fn allocate(panel: &ReturnsPanel, signals: &SignalVector, cfg: &TrpConfig, variant: Variant) -> Result<Allocation> {
    cfg.validate(panel.n_periods())?;
    if cfg.neutralize_depth_one && variant != Variant::SectorAnchored {
        return Err(TrpError::InvalidConfig(
            "depth-one neutralization requires the sector variant".into(),
        ));
    }
    let n = panel.n_assets();
    let active = match active_set(panel, signals, cfg) {
        Ok(a) => a,
        Err(TrpError::EmptyActiveSet) => {
            return Ok(Allocation {
                variant,
                portfolio: Portfolio::zero(n, cfg.leverage),
                active: None,
                tree: None,
                topology: None,
                factors: None,
                subtree_mass: None,
                topology_hash: None,
                diagnostics: vec![Diagnostic::EmptyActiveSet],
            })
        }
        Err(e) => return Err(e),
    };
    let s = signals.restrict(&active);
    let (tree, topo) = build_topology(panel, &active, &s, cfg, variant)?;
    let mass = subtree_mass(&topo, &s, cfg.subtree_exponent);
    let factors = topo_factors(&topo, cfg.rho);
    let x = raw_portfolio(&s, &factors, &topo);

    let mut diagnostics = Vec::new();
    let (mut w, diag) = normalize_leverage(&x, cfg.leverage);
    diagnostics.extend(diag);
    if diagnostics.is_empty() && (variant == Variant::SectorAnchored || cfg.postprocess_mst) {
        let (pw, diag) = postprocess(
            &w,
            cfg.cap,
            cfg.min_weight,
            cfg.renormalize_after_postprocess,
            cfg.leverage,
        );
        w = pw;
        diagnostics.extend(diag);
    }
    if diagnostics.is_empty() && cfg.neutralize_depth_one {
        let (nw, diag) = neutralize_depth_one(&w, &topo, cfg.leverage)?;
        w = nw;
        diagnostics.extend(diag);
    }

    let mut portfolio = Portfolio::zero(n, cfg.leverage);
    for (k, &i) in active.indices().iter().enumerate() {
        portfolio.pre_norm[i] = x[k];
        portfolio.weights[i] = w[k];
    }
    let labels = node_labels(panel, &active, topo.n_nodes());
    let topology_hash = Some(topo.hash(&labels));
    Ok(Allocation {
        variant,
        portfolio,
        active: Some(active),
        tree: Some(tree),
        topology: Some(topo),
        factors: Some(factors),
        subtree_mass: Some(mass),
        topology_hash,
        diagnostics,
    })
}
