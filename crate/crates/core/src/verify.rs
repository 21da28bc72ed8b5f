//! Seeded property harness.
//!
//! Each named check draws its own instances from a generator seeded by the
//! run seed and the check's position in [`CHECK_NAMES`], so results do not
//! depend on which other checks run or in what order. Identity checks report
//! the largest absolute error seen; bound checks report the smallest margin
//! (negative means violated).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data_model::{ActiveSet, AssetId, ReturnsPanel, SignalVector, TrpConfig};
use crate::dependence::{
    brute_force_mst, build_mst, correlation_matrix, distance_matrix, DistanceMatrix, Edge, SpanningTree,
};
use crate::flow_model::{generate_returns, tier_ordering_check, FlowModelParams, Loadings, UniverseShape};
use crate::propagation::{
    allocate, alpha, build_topology, conditional_map, level_mass, normalize_leverage, path_product, raw_portfolio,
    topo_factors_with, StabilityCertificate, Variant,
};
use crate::topology::{root_tree, RootedTopology};

pub const CHECK_NAMES: [&str; 16] = [
    "distance-bounds",
    "path-product-equals-recursion",
    "rho-zero-limit",
    "rho-one-equal-split",
    "mass-amplification",
    "level-mass-bound",
    "factor-bounds",
    "sign-preservation",
    "scale-symmetry",
    "p-independence",
    "depth-one-sector-etfs",
    "spanning-tree-connectivity",
    "mst-oracle-equality",
    "lipschitz-conditional",
    "tier-ordering",
    "leverage-identity",
];

/// Absolute tolerance for algebraic identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-10;

/// Smallest weighted gross exposure for which the Lipschitz check applies.
pub const LIPSCHITZ_MIN_GAMMA: f64 = 0.01;

/// Faults the harness can inject into its own factor computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Propagation coefficient evaluated at `b + 1` instead of `b`.
    AlphaBranchPlusOne,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub instances: usize,
    pub seed: u64,
    /// Largest tree drawn for the topology checks.
    pub max_nodes: usize,
    pub mutation: Option<Mutation>,
    /// Run only these checks; all when empty.
    pub only: Vec<String>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            instances: 1000,
            seed: 0,
            max_nodes: 64,
            mutation: None,
            only: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `worst_slack` is the largest absolute error.
    Identity,
    /// `worst_slack` is the smallest margin to the bound.
    Bound,
    /// Pass/fail predicate; `worst_slack` is 0 when every instance passed, else 1.
    Predicate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub kind: CheckKind,
    pub instances: usize,
    pub evaluations: usize,
    pub failures: usize,
    pub worst_slack: f64,
    pub tolerance: f64,
}

impl CheckRecord {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub instances_per_check: usize,
    pub mutation: Option<Mutation>,
    pub checks: Vec<CheckRecord>,
    pub overall: bool,
}

impl VerifyReport {
    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    kind: CheckKind,
    tolerance: f64,
    instances: usize,
    evaluations: usize,
    failures: usize,
    worst: f64,
    failed: bool,
}

impl Tracker {
    fn new(kind: CheckKind, tolerance: f64) -> Self {
        Self {
            kind,
            tolerance,
            instances: 0,
            evaluations: 0,
            failures: 0,
            worst: match kind {
                CheckKind::Bound => f64::INFINITY,
                _ => 0.0,
            },
            failed: false,
        }
    }

    fn identity(&mut self, err: f64) {
        self.evaluations += 1;
        let err = if err.is_nan() { f64::INFINITY } else { err.abs() };
        self.worst = self.worst.max(err);
        if err > self.tolerance {
            self.failed = true;
        }
    }

    fn bound(&mut self, margin: f64) {
        self.evaluations += 1;
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        self.worst = self.worst.min(margin);
        if margin < -self.tolerance {
            self.failed = true;
        }
    }

    fn predicate(&mut self, ok: bool) {
        self.evaluations += 1;
        if !ok {
            self.worst = 1.0;
            self.failed = true;
        }
    }

    fn end_instance(&mut self) {
        self.instances += 1;
        if self.failed {
            self.failures += 1;
        }
        self.failed = false;
    }

    fn into_record(self, name: &str) -> CheckRecord {
        CheckRecord {
            name: name.to_owned(),
            kind: self.kind,
            instances: self.instances,
            evaluations: self.evaluations,
            failures: self.failures,
            worst_slack: if self.worst.is_finite() {
                self.worst
            } else if self.evaluations == 0 {
                0.0
            } else {
                self.worst.signum() * f64::MAX
            },
            tolerance: self.tolerance,
        }
    }
}

fn rho_grid() -> impl Iterator<Item = f64> {
    (0..=10).map(|k| k as f64 / 10.0)
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

/// A random rooted tree on `1..=max_nodes` nodes. Shapes alternate between
/// uniform labeled trees, random recursive trees and deep, narrow trees.
pub fn random_topology(rng: &mut impl Rng, max_nodes: usize) -> RootedTopology {
    let n = rng.random_range(1..=max_nodes.max(1));
    let pairs: Vec<(usize, usize)> = match (n, rng.random_range(0..3)) {
        (1, _) => vec![],
        (2, _) => vec![(0, 1)],
        (_, 0) => {
            let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
            crate::dependence::prufer_decode(&seq, n)
        }
        (_, 1) => (1..n).map(|v| (rng.random_range(0..v), v)).collect(),
        _ => (1..n).map(|v| (rng.random_range(v.saturating_sub(3)..v), v)).collect(),
    };
    let tree = SpanningTree::new(n, pairs.into_iter().map(|(a, b)| Edge { a, b, weight: 0.0 }))
        .expect("generated edges form a tree");
    root_tree(&tree, rng.random_range(0..n)).expect("root in range")
}

fn random_signals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                0.0
            } else {
                rng.random_range(-2.0..2.0)
            }
        })
        .collect()
}

struct Harness {
    mutation: Option<Mutation>,
    instances: usize,
    max_nodes: usize,
}

fn mutated_alpha(b: usize, rho: f64) -> f64 {
    alpha(b + 1, rho)
}

impl Harness {
    fn factors(&self, topo: &RootedTopology, rho: f64) -> crate::propagation::TopoFactors {
        match self.mutation {
            None => topo_factors_with(topo, rho, alpha),
            Some(Mutation::AlphaBranchPlusOne) => topo_factors_with(topo, rho, mutated_alpha),
        }
    }

    fn weights(&self, topo: &RootedTopology, rho: f64, s: &[f64], leverage: f64) -> Option<Vec<f64>> {
        let f = self.factors(topo, rho);
        let (w, diag) = normalize_leverage(&raw_portfolio(s, &f, topo), leverage);
        diag.is_none().then_some(w)
    }

    fn run_check(&self, name: &str, rng: &mut ChaCha8Rng) -> CheckRecord {
        let tol = IDENTITY_TOLERANCE;
        let mut t = match name {
            "distance-bounds" => Tracker::new(CheckKind::Bound, 0.0),
            "level-mass-bound" | "factor-bounds" | "lipschitz-conditional" => Tracker::new(CheckKind::Bound, tol),
            "tier-ordering" => Tracker::new(CheckKind::Bound, 0.0),
            "sign-preservation" | "depth-one-sector-etfs" | "spanning-tree-connectivity" => {
                Tracker::new(CheckKind::Predicate, 0.0)
            }
            "p-independence" | "mst-oracle-equality" => Tracker::new(CheckKind::Identity, 0.0),
            _ => Tracker::new(CheckKind::Identity, tol),
        };
        for _ in 0..self.instances {
            match name {
                "distance-bounds" => self.distance_bounds(rng, &mut t),
                "path-product-equals-recursion" => {
                    let topo = random_topology(rng, self.max_nodes);
                    for rho in rho_grid() {
                        let f = self.factors(&topo, rho);
                        for v in 0..topo.n_nodes() {
                            t.identity(f.g()[v] - path_product(&topo, rho, v));
                        }
                    }
                }
                "rho-zero-limit" => {
                    let topo = random_topology(rng, self.max_nodes);
                    let s = random_signals(rng, topo.n_real());
                    let f = self.factors(&topo, 0.0);
                    f.g().iter().for_each(|g| t.identity(g - 1.0));
                    if let Some(w) = self.weights(&topo, 0.0, &s, 1.5) {
                        let norm = l1(&s);
                        for (wi, si) in w.iter().zip(&s) {
                            t.identity(wi - 1.5 * si / norm);
                        }
                    }
                }
                "rho-one-equal-split" => {
                    let topo = random_topology(rng, self.max_nodes);
                    let f = self.factors(&topo, 1.0);
                    for u in 0..topo.n_nodes() {
                        let kids = topo.children(u);
                        if !kids.is_empty() {
                            t.identity(f.alpha(u).unwrap() - 1.0 / kids.len() as f64);
                            t.identity(kids.iter().map(|&v| f.g()[v]).sum::<f64>() - f.g()[u]);
                        }
                    }
                }
                "mass-amplification" => {
                    let topo = random_topology(rng, self.max_nodes);
                    for rho in rho_grid() {
                        let f = self.factors(&topo, rho);
                        for u in 0..topo.n_nodes() {
                            let kids = topo.children(u);
                            if kids.is_empty() {
                                continue;
                            }
                            let b = kids.len();
                            let beta = f.beta(u).unwrap();
                            let child_sum: f64 = kids.iter().map(|&v| f.g()[v]).sum();
                            t.identity(child_sum - beta * f.g()[u]);
                            t.identity((beta - 1.0) - (b as f64 - 1.0) * (1.0 - rho));
                            let strict = b > 1 && rho < 1.0;
                            if !(if strict { beta > 1.0 } else { (beta - 1.0).abs() <= tol }) {
                                t.identity(f64::INFINITY);
                            }
                        }
                    }
                }
                "level-mass-bound" => {
                    let topo = random_topology(rng, self.max_nodes);
                    for rho in rho_grid() {
                        let f = self.factors(&topo, rho);
                        for level in 0..=topo.max_depth() {
                            let bound = f.gamma_bound().powi(level as i32);
                            t.bound(bound - level_mass(&f, &topo, level));
                        }
                    }
                }
                "factor-bounds" => {
                    let topo = random_topology(rng, self.max_nodes);
                    let b_max = topo.max_branching().max(1) as f64;
                    for rho in rho_grid() {
                        let f = self.factors(&topo, rho);
                        for v in 0..topo.n_nodes() {
                            let d = topo.depth(v) as i32;
                            let g = f.g()[v];
                            t.bound(1.0 - g);
                            t.bound(g - (1.0 - rho + rho / b_max).powi(d));
                            t.bound(g - (1.0 - rho).powi(d));
                        }
                    }
                }
                "sign-preservation" => {
                    let topo = random_topology(rng, self.max_nodes);
                    let s = random_signals(rng, topo.n_real());
                    for rho in rho_grid() {
                        if let Some(w) = self.weights(&topo, rho, &s, 1.0) {
                            for (wi, si) in w.iter().zip(&s) {
                                t.predicate(*si == 0.0 || wi.signum() == si.signum() && *wi != 0.0);
                            }
                        }
                    }
                }
                "scale-symmetry" => {
                    let topo = random_topology(rng, self.max_nodes);
                    let s = random_signals(rng, topo.n_real());
                    let c: f64 = rng.random_range(0.01..100.0) * if rng.random_bool(0.5) { -1.0 } else { 1.0 };
                    let cs: Vec<f64> = s.iter().map(|v| v * c).collect();
                    for rho in rho_grid() {
                        if let (Some(w), Some(wc)) =
                            (self.weights(&topo, rho, &s, 1.0), self.weights(&topo, rho, &cs, 1.0))
                        {
                            let err: f64 = w.iter().zip(&wc).map(|(a, b)| (b - c.signum() * a).abs()).sum();
                            t.identity(err);
                        }
                    }
                }
                "p-independence" => self.p_independence(rng, &mut t),
                "depth-one-sector-etfs" | "spanning-tree-connectivity" => self.sector_anchor(name, rng, &mut t),
                "mst-oracle-equality" => {
                    let n = rng.random_range(2..=7);
                    let d = random_distance(rng, n);
                    let k = build_mst(&d);
                    let b = brute_force_mst(&d).expect("n <= 7");
                    t.identity(k.total_weight() - b.total_weight());
                }
                "lipschitz-conditional" => {
                    let topo = random_topology(rng, self.max_nodes);
                    let rho = rng.random_range(0..=10) as f64 / 10.0;
                    let f = self.factors(&topo, rho);
                    let g = &f.g()[..topo.n_real()];
                    let lev = rng.random_range(0.5..3.0);
                    let s = random_signals(rng, topo.n_real());
                    let s2: Vec<f64> = if rng.random_bool(0.5) {
                        s.iter().map(|v| v + rng.random_range(-0.05..0.05)).collect()
                    } else {
                        random_signals(rng, topo.n_real())
                    };
                    let cert = StabilityCertificate::for_pair(g, &s, &s2, lev);
                    if cert.gamma > LIPSCHITZ_MIN_GAMMA {
                        let a = conditional_map(g, &s, lev).expect("gamma > 0");
                        let b = conditional_map(g, &s2, lev).expect("gamma > 0");
                        let lhs: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
                        let weighted: f64 = s.iter().zip(&s2).zip(g).map(|((x, y), gv)| (gv * (x - y)).abs()).sum();
                        let plain: f64 = s.iter().zip(&s2).map(|(x, y)| (x - y).abs()).sum();
                        t.bound(cert.lipschitz_constant * weighted - lhs);
                        t.bound(cert.lipschitz_constant * plain - lhs);
                    }
                }
                "tier-ordering" => {
                    let params = if rng.random_bool(0.5) {
                        FlowModelParams::nested(
                            UniverseShape {
                                sectors: 2,
                                baskets_per_sector: 2,
                                assets_per_basket: 2,
                            },
                            Loadings::new(
                                rng.random_range(0.0..1.0),
                                rng.random_range(0.01..1.0),
                                rng.random_range(0.01..1.0),
                                rng.random_range(0.0..1.0),
                            ),
                            0,
                        )
                    } else {
                        FlowModelParams::nested(
                            UniverseShape {
                                sectors: 2,
                                baskets_per_sector: 2,
                                assets_per_basket: 2,
                            },
                            Loadings::new(0.0, 0.0, 0.0, 1.0),
                            0,
                        )
                        .with_lambda(rng.random_range(0.001..=1.0))
                    };
                    match tier_ordering_check(&params) {
                        Ok(r) => {
                            t.bound(r.rho_basket - r.rho_sector);
                            t.bound(r.rho_sector - r.rho_cross);
                            t.bound(r.d_sector - r.d_basket);
                            t.bound(r.d_cross - r.d_sector);
                        }
                        Err(_) => t.bound(f64::NEG_INFINITY),
                    }
                }
                "leverage-identity" => {
                    let topo = random_topology(rng, self.max_nodes);
                    let s = random_signals(rng, topo.n_real());
                    let lev = rng.random_range(0.1..10.0);
                    for rho in rho_grid() {
                        if let Some(w) = self.weights(&topo, rho, &s, lev) {
                            t.identity(l1(&w) - lev);
                        }
                    }
                }
                other => unreachable!("unknown check {other}"),
            }
            t.end_instance();
        }
        t.into_record(name)
    }

    fn distance_bounds(&self, rng: &mut ChaCha8Rng, t: &mut Tracker) {
        let n = rng.random_range(1..=20);
        let periods = rng.random_range(2..=30);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let row = match rng.random_range(0..5) {
                0 => vec![rng.random_range(-0.1..0.1); periods],
                1 if i > 0 => rows[rng.random_range(0..i)].iter().map(|v: &f64| -v).collect(),
                2 if i > 0 => rows[rng.random_range(0..i)].clone(),
                _ => (0..periods).map(|_| rng.random_range(-0.1..0.1)).collect(),
            };
            rows.push(row);
        }
        let tickers: Vec<String> = (0..n).map(|i| format!("A{i}")).collect();
        let panel = ReturnsPanel::from_rows(&tickers, &rows).expect("finite rows");
        let active = ActiveSet::from_indices((0..n).collect(), vec![]);
        let c = correlation_matrix(&panel, &active);
        let d = distance_matrix(&c);
        for i in 0..n {
            for j in 0..n {
                let dij = d.get(i, j);
                t.bound(dij.min(1.0 - dij));
                t.bound(if dij == d.get(j, i) { 0.0 } else { -1.0 });
                t.bound(1.0 - c.get(i, j).abs());
            }
            t.bound(0.0 - d.get(i, i).abs());
        }
    }

    fn p_independence(&self, rng: &mut ChaCha8Rng, t: &mut Tracker) {
        let (panel, signals) = random_universe(rng, self.max_nodes, 0);
        let rho = rng.random_range(0..=10) as f64 / 10.0;
        let weights: Vec<Vec<f64>> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&p| {
                let cfg = TrpConfig {
                    rho,
                    subtree_exponent: p,
                    ..TrpConfig::default()
                };
                allocate(&panel, &signals, &cfg, Variant::MstRooted)
                    .expect("valid universe")
                    .portfolio
                    .weights()
                    .to_vec()
            })
            .collect();
        for w in &weights[1..] {
            let bitwise = w.iter().zip(&weights[0]).all(|(a, b)| a.to_bits() == b.to_bits());
            t.identity(if bitwise { 0.0 } else { f64::INFINITY });
        }
    }

    fn sector_anchor(&self, name: &str, rng: &mut ChaCha8Rng, t: &mut Tracker) {
        let n_sectors = if name == "spanning-tree-connectivity" {
            rng.random_range(0..=5)
        } else {
            rng.random_range(1..=5)
        };
        let (panel, signals) = random_universe(rng, self.max_nodes.max(n_sectors + 1), n_sectors);
        let cfg = TrpConfig::default();
        let active = crate::data_model::active_set(&panel, &signals, &cfg).expect("every asset is active");
        let s = signals.restrict(&active);
        let (tree, topo) = build_topology(&panel, &active, &s, &cfg, Variant::SectorAnchored).expect("valid topology");
        let n = active.n_active();
        let sectors: Vec<usize> = (0..n)
            .filter(|&k| panel.assets()[active.indices()[k]].is_sector_etf())
            .collect();
        if name == "depth-one-sector-etfs" {
            for &x in &sectors {
                t.predicate(topo.depth(x) == 1 && topo.parent(x) == Some(topo.root()));
            }
            return;
        }
        // spanning tree of {m} + active, built only from tree edges and root-to-ETF edges
        t.predicate(topo.is_dummy_root() && topo.n_nodes() == n + 1 && topo.tree_edges().len() == n);
        let allowed: std::collections::HashSet<(usize, usize)> = tree
            .edge_pairs()
            .into_iter()
            .chain(sectors.iter().map(|&x| (x, n)))
            .collect();
        for (p, c) in topo.tree_edges() {
            t.predicate(allowed.contains(&(p.min(c), p.max(c))));
        }
        let mut reach = vec![false; n + 1];
        for &v in topo.order() {
            reach[v] = true;
        }
        t.predicate(reach.iter().all(|&r| r));
    }
}

fn random_distance(rng: &mut impl Rng, n: usize) -> DistanceMatrix {
    let mut d = ndarray::Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let w: f64 = rng.random();
            d[[i, j]] = w;
            d[[j, i]] = w;
        }
    }
    DistanceMatrix::from_raw(d).expect("symmetric")
}

/// A flow-model universe of 2..=max_assets names, `n_sector_etfs` of them
/// renamed to `XL*` tickers, with strictly nonzero signals.
pub fn random_universe(rng: &mut impl Rng, max_assets: usize, n_sector_etfs: usize) -> (ReturnsPanel, SignalVector) {
    let n = rng.random_range(n_sector_etfs.max(2)..=max_assets.max(2));
    let shape = UniverseShape {
        sectors: 1,
        baskets_per_sector: 1,
        assets_per_basket: n,
    };
    let mut params = FlowModelParams::nested(
        shape,
        Loadings::new(rng.random_range(0.0..0.5), 0.0, 0.0, 0.1),
        rng.random(),
    );
    let buckets = rng.random_range(1..=4);
    for i in 0..n {
        let s = i % buckets;
        params.sector_of[i] = format!("S{s}");
        params.basket_of[i] = format!("S{s}B{}", i % (2 * buckets) / buckets);
    }
    params.theta_s = rng.random_range(0.0..0.5);
    params.theta_b = rng.random_range(0.0..0.5);
    let panel = generate_returns(&params, 40).expect("valid params");
    let mut picks: Vec<usize> = (0..n).collect();
    for k in 0..n_sector_etfs {
        let j = rng.random_range(k..n);
        picks.swap(k, j);
    }
    let mut assets = panel.assets().to_vec();
    for (k, &i) in picks.iter().take(n_sector_etfs).enumerate() {
        assets[i] = AssetId::new(format!("XL{}", (b'A' + k as u8) as char)).expect("valid ticker");
    }
    let panel = ReturnsPanel::new(assets, panel.returns().clone()).expect("valid panel");
    let signals = (0..n)
        .map(|_| {
            let m = rng.random_range(0.01..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    (panel, SignalVector::new(signals).expect("finite"))
}

/// Runs the selected checks, one thread per check.
pub fn run(opts: &VerifyOptions) -> VerifyReport {
    let harness = Harness {
        mutation: opts.mutation,
        instances: opts.instances,
        max_nodes: opts.max_nodes.max(1),
    };
    let selected: Vec<(usize, &str)> = CHECK_NAMES
        .iter()
        .enumerate()
        .filter(|(_, n)| opts.only.is_empty() || opts.only.iter().any(|o| o == *n))
        .map(|(k, n)| (k, *n))
        .collect();
    let checks: Vec<CheckRecord> = std::thread::scope(|scope| {
        let handles: Vec<_> = selected
            .iter()
            .map(|&(k, name)| {
                let harness = &harness;
                let seed = opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64);
                scope.spawn(move || harness.run_check(name, &mut ChaCha8Rng::seed_from_u64(seed)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("check panicked")).collect()
    });
    let overall = checks.iter().all(CheckRecord::passed);
    VerifyReport {
        seed: opts.seed,
        instances_per_check: opts.instances,
        mutation: opts.mutation,
        checks,
        overall,
    }
}
