//! Rooted topologies: orienting the MST away from a chosen root, and the
//! market/sector-anchored construction with a dummy market root.
//!
//! Node ids `0..n_real` are active-set ordinals. When a dummy market root is
//! present it is node `n_real`.

use ndarray::{concatenate, Array2, Axis};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data_model::{ActiveSet, ReturnsPanel, RootMode};
use crate::dependence::{build_mst, distance_matrix, pearson_rows, CorrelationMatrix, SpanningTree};
use crate::error::{Result, TrpError};

/// Label of the dummy market root.
pub const MARKET_ROOT_LABEL: &str = "SPY";
/// Dummy root label used when a real asset is already called [`MARKET_ROOT_LABEL`].
pub const MARKET_ROOT_FALLBACK_LABEL: &str = "SPY:root";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootedTopology {
    n_real: usize,
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    max_branching: usize,
    is_dummy_root: bool,
    /// Nodes in breadth-first order from the root; parents precede children.
    order: Vec<usize>,
}

impl RootedTopology {
    /// Builds a topology from a parent map. `parent[root]` must be `None` and
    /// every other node must reach the root. With `is_dummy_root`, the root
    /// must be node `n_real` and the map has `n_real + 1` entries.
    pub fn from_parents(n_real: usize, parent: Vec<Option<usize>>, is_dummy_root: bool) -> Result<Self> {
        let n = n_real + usize::from(is_dummy_root);
        let bad = |m: &str| Err(TrpError::ShapeMismatch(format!("invalid rooted topology: {m}")));
        if parent.len() != n || n == 0 {
            return bad("parent map size");
        }
        let roots: Vec<usize> = (0..n).filter(|&v| parent[v].is_none()).collect();
        if roots.len() != 1 {
            return bad("expected exactly one root");
        }
        let root = roots[0];
        if is_dummy_root && root != n_real {
            return bad("dummy root must be the last node");
        }
        let mut children = vec![Vec::new(); n];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n || p == v {
                    return bad("parent out of range");
                }
                children[p].push(v);
            }
        }
        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut order = Vec::with_capacity(n);
        order.push(root);
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &c in &children[u] {
                depth[c] = depth[u] + 1;
                order.push(c);
            }
        }
        if order.len() != n {
            return bad("cycle or unreachable node");
        }
        let max_branching = children.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            n_real,
            root,
            parent,
            children,
            depth,
            max_branching,
            is_dummy_root,
            order,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.parent.len()
    }

    /// Number of real (non-dummy) nodes.
    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn is_dummy_root(&self) -> bool {
        self.is_dummy_root
    }

    pub fn is_dummy(&self, v: usize) -> bool {
        self.is_dummy_root && v == self.n_real
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// Children in ascending node order.
    pub fn children(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    pub fn branching(&self, u: usize) -> usize {
        self.children[u].len()
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn depths(&self) -> &[usize] {
        &self.depth
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Largest branching number B over internal nodes (0 for a single node).
    pub fn max_branching(&self) -> usize {
        self.max_branching
    }

    /// Top-down traversal order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Nodes at depth `level`, ascending.
    pub fn level(&self, level: usize) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&v| self.depth[v] == level).collect()
    }

    /// Ancestors of `v` from the root down, excluding `v`.
    pub fn path_from_root(&self, v: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.depth[v]);
        let mut cur = self.parent[v];
        while let Some(u) = cur {
            path.push(u);
            cur = self.parent[u];
        }
        path.reverse();
        path
    }

    /// Every node in the subtree rooted at `u`, including `u`.
    pub fn subtree(&self, u: usize) -> Vec<usize> {
        let mut out = vec![u];
        let mut head = 0;
        while head < out.len() {
            let x = out[head];
            head += 1;
            out.extend_from_slice(&self.children[x]);
        }
        out
    }

    /// The undirected edges `(parent, child)` of the rooted tree.
    pub fn tree_edges(&self) -> Vec<(usize, usize)> {
        (0..self.n_nodes())
            .filter_map(|v| self.parent[v].map(|p| (p, v)))
            .collect()
    }

    /// Stable digest of the parent map under the given node labels.
    pub fn hash(&self, labels: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(labels[self.root].as_bytes());
        h.update(b"\n");
        for v in 0..self.n_nodes() {
            if let Some(p) = self.parent[v] {
                h.update(labels[v].as_bytes());
                h.update(b"<");
                h.update(labels[p].as_bytes());
                h.update(b"\n");
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Picks the root of the rooted-MST variant. Ties go to the lowest ordinal.
///
/// `signals` are restricted to the active set; `FixedIndex` refers to a panel
/// index and is mapped through `active`.
pub fn select_root(tree: &SpanningTree, signals: &[f64], mode: RootMode, active: &ActiveSet) -> Result<usize> {
    let n = tree.n_nodes();
    if n == 0 {
        return Err(TrpError::EmptyActiveSet);
    }
    let argmax = |score: &dyn Fn(usize) -> f64| (1..n).fold(0, |best, v| if score(v) > score(best) { v } else { best });
    match mode {
        RootMode::Hub => {
            let deg = tree.degrees();
            Ok(argmax(&|v| deg[v] as f64))
        }
        RootMode::MaxMagnitude => {
            if signals.len() != n {
                return Err(TrpError::ShapeMismatch(format!(
                    "{} signals for {n} tree nodes",
                    signals.len()
                )));
            }
            Ok(argmax(&|v| signals[v].abs()))
        }
        RootMode::FixedIndex(i) => active.ordinal_of(i).ok_or(TrpError::FixedIndexNotActive(i)),
    }
}

/// Orients `tree` away from `root`. Children are listed in ascending order.
pub fn root_tree(tree: &SpanningTree, root: usize) -> Result<RootedTopology> {
    let n = tree.n_nodes();
    if root >= n {
        return Err(TrpError::ShapeMismatch(format!("root {root} not in a {n}-node tree")));
    }
    let adj = tree.adjacency();
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                queue.push_back(v);
            }
        }
    }
    RootedTopology::from_parents(n, parent, false)
}

/// Market/sector anchoring: adds a dummy root `m` joined to every sector ETF
/// and extracts a depth-first spanning tree of the augmented graph.
///
/// The root's edges to the sector ETFs are claimed before any MST edge is
/// explored, so every sector ETF ends up at depth one. The search then
/// descends from each ETF in ascending order, visiting neighbors in ascending
/// order.
pub fn anchor_market_sector(tree: &SpanningTree, sector_etfs: &[usize]) -> Result<RootedTopology> {
    let n = tree.n_nodes();
    let mut sectors = sector_etfs.to_vec();
    sectors.sort_unstable();
    sectors.dedup();
    if sectors.is_empty() {
        return Err(TrpError::NoSectorEtfs);
    }
    if let Some(&x) = sectors.iter().find(|&&x| x >= n) {
        return Err(TrpError::ShapeMismatch(format!(
            "sector node {x} not in a {n}-node tree"
        )));
    }
    let m = n;
    let adj = tree.adjacency();
    let mut parent = vec![None; n + 1];
    let mut seen = vec![false; n + 1];
    seen[m] = true;
    for &x in &sectors {
        seen[x] = true;
        parent[x] = Some(m);
    }
    for &x in &sectors {
        // (node, next neighbor position)
        let mut stack = vec![(x, 0usize)];
        while let Some(top) = stack.last_mut() {
            let (u, pos) = *top;
            if pos == adj[u].len() {
                stack.pop();
                continue;
            }
            top.1 += 1;
            let v = adj[u][pos];
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                stack.push((v, 0));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(TrpError::ShapeMismatch("real-asset tree is not connected".into()));
    }
    RootedTopology::from_parents(n, parent, true)
}

/// MST over the active assets plus an appended all-zero dummy asset (last node).
pub fn augmented_mst(panel: &ReturnsPanel, active: &ActiveSet) -> SpanningTree {
    let rows = panel.returns().select(Axis(0), active.indices());
    let dummy = Array2::zeros((1, panel.n_periods()));
    let augmented = concatenate(Axis(0), &[rows.view(), dummy.view()]).expect("matching period counts");
    let corr = CorrelationMatrix::sanitize(pearson_rows(augmented.view()));
    build_mst(&distance_matrix(&corr))
}

/// Fallback when no sector ETF is active: MST on the augmented universe,
/// rooted at the dummy node.
pub fn fallback_augmented_mst(panel: &ReturnsPanel, active: &ActiveSet) -> Result<RootedTopology> {
    root_at_dummy(&augmented_mst(panel, active))
}

/// Roots a tree whose last node is the dummy market node at that node.
pub fn root_at_dummy(tree: &SpanningTree) -> Result<RootedTopology> {
    let n_real = tree
        .n_nodes()
        .checked_sub(1)
        .ok_or_else(|| TrpError::ShapeMismatch("empty augmented tree".into()))?;
    let rooted = root_tree(tree, n_real)?;
    RootedTopology::from_parents(n_real, rooted.parent, true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtreeMass {
    masses: Vec<f64>,
    exponent: f64,
}

impl SubtreeMass {
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }
}

/// `S_u = sum of |s_i|^p` over the real assets in the subtree of `u`.
pub fn subtree_mass(topo: &RootedTopology, signals: &[f64], p: f64) -> SubtreeMass {
    let mut masses: Vec<f64> = (0..topo.n_nodes())
        .map(|v| {
            if topo.is_dummy(v) {
                0.0
            } else {
                signals[v].abs().powf(p)
            }
        })
        .collect();
    for &v in topo.order().iter().rev() {
        if let Some(parent) = topo.parent(v) {
            masses[parent] += masses[v];
        }
    }
    SubtreeMass { masses, exponent: p }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependence::Edge;

    fn tree(n: usize, pairs: &[(usize, usize)]) -> SpanningTree {
        SpanningTree::new(n, pairs.iter().map(|&(a, b)| Edge { a, b, weight: 0.1 })).unwrap()
    }

    fn all_active(n: usize) -> ActiveSet {
        ActiveSet::from_indices((0..n).collect(), vec![])
    }

    #[test]
    fn hub_root_on_path() {
        let t = tree(3, &[(0, 1), (1, 2)]);
        assert_eq!(
            select_root(&t, &[0.1, 0.2, 0.3], RootMode::Hub, &all_active(3)).unwrap(),
            1
        );
    }

    #[test]
    fn max_magnitude_root() {
        let t = tree(3, &[(0, 1), (1, 2)]);
        let r = select_root(&t, &[0.1, -0.9, 0.2], RootMode::MaxMagnitude, &all_active(3)).unwrap();
        assert_eq!(r, 1);
    }

    #[test]
    fn max_magnitude_tie_goes_to_lowest_ordinal() {
        let t = tree(4, &[(0, 1), (0, 2), (0, 3)]);
        let r = select_root(&t, &[0.1, 0.5, -0.5, 0.2], RootMode::MaxMagnitude, &all_active(4)).unwrap();
        assert_eq!(r, 1);
    }

    #[test]
    fn tie_break_exhaustive() {
        // brute-force check of the lowest-ordinal rule over every magnitude
        // pattern drawn from {0.1, 0.5} on 5 nodes
        let t = tree(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        for mask in 0u32..32 {
            let s: Vec<f64> = (0..5).map(|i| if mask >> i & 1 == 1 { -0.5 } else { 0.1 }).collect();
            let expected = (0..5).find(|&i| s[i].abs() == 0.5).unwrap_or(0);
            assert_eq!(
                select_root(&t, &s, RootMode::MaxMagnitude, &all_active(5)).unwrap(),
                expected
            );
        }
        // degree ties on a path: 1, 2 and 3 all have degree 2
        assert_eq!(select_root(&t, &[0.0; 5], RootMode::Hub, &all_active(5)).unwrap(), 1);
    }

    #[test]
    fn fixed_root_must_be_active() {
        let t = tree(2, &[(0, 1)]);
        let active = ActiveSet::from_indices(vec![3, 7], vec![]);
        assert_eq!(
            select_root(&t, &[1.0, 1.0], RootMode::FixedIndex(7), &active).unwrap(),
            1
        );
        assert!(matches!(
            select_root(&t, &[1.0, 1.0], RootMode::FixedIndex(4), &active),
            Err(TrpError::FixedIndexNotActive(4))
        ));
    }

    #[test]
    fn rooting_a_path() {
        let t = tree(3, &[(0, 1), (1, 2)]);
        let r = root_tree(&t, 0).unwrap();
        assert_eq!(r.parents(), &[None, Some(0), Some(1)]);
        assert_eq!(r.depths(), &[0, 1, 2]);
        let r = root_tree(&t, 1).unwrap();
        assert_eq!(r.branching(1), 2);
        assert_eq!(r.depths(), &[1, 0, 1]);
        assert_eq!(r.children(1), &[0, 2]);
        assert_eq!(r.max_branching(), 2);
    }

    #[test]
    fn handshake_identity() {
        let t = tree(6, &[(0, 1), (0, 2), (2, 3), (2, 4), (4, 5)]);
        for root in 0..6 {
            let r = root_tree(&t, root).unwrap();
            assert_eq!((0..6).map(|u| r.branching(u)).sum::<usize>(), 5);
            for v in 0..6 {
                if let Some(p) = r.parent(v) {
                    assert_eq!(r.depth(v), r.depth(p) + 1);
                }
            }
        }
    }

    #[test]
    fn single_anchor_reroots() {
        let t = tree(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let a = anchor_market_sector(&t, &[2]).unwrap();
        assert_eq!(a.n_nodes(), 6);
        assert!(a.is_dummy_root());
        assert_eq!(a.root(), 5);
        assert_eq!(a.depth(2), 1);
        let plain = root_tree(&t, 2).unwrap();
        for v in 0..5 {
            assert_eq!(a.depth(v), plain.depth(v) + 1);
        }
    }

    #[test]
    fn adjacent_sector_etfs_stay_depth_one() {
        // 1 and 2 are adjacent in the MST; the augmented graph has a cycle m-1-2-m
        let t = tree(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let a = anchor_market_sector(&t, &[1, 2]).unwrap();
        assert_eq!(a.depth(1), 1);
        assert_eq!(a.depth(2), 1);
        assert_eq!(a.parent(0), Some(1));
        assert_eq!(a.parent(3), Some(2));
        assert_eq!(a.tree_edges().len(), 5);
    }

    #[test]
    fn depth_first_not_breadth_first() {
        // star around 0 with ETFs 1 and 3: from 1 the search reaches 0, then 2
        let t = tree(4, &[(0, 1), (0, 2), (0, 3)]);
        let a = anchor_market_sector(&t, &[1, 3]).unwrap();
        assert_eq!(a.parents(), &[Some(1), Some(4), Some(0), Some(4), None]);
    }

    #[test]
    fn no_sector_etfs() {
        let t = tree(2, &[(0, 1)]);
        assert!(matches!(anchor_market_sector(&t, &[]), Err(TrpError::NoSectorEtfs)));
    }

    #[test]
    fn fallback_single_asset() {
        let p = ReturnsPanel::from_rows(&["A"], &[vec![0.01, -0.02, 0.03]]).unwrap();
        let topo = fallback_augmented_mst(&p, &all_active(1)).unwrap();
        assert_eq!(topo.n_nodes(), 2);
        assert_eq!(topo.root(), 1);
        assert_eq!(topo.depth(0), 1);
    }

    #[test]
    fn fallback_dummy_distance() {
        let p = ReturnsPanel::from_rows(
            &["A", "B", "C"],
            &[vec![0.01, -0.02, 0.03], vec![0.02, 0.01, -0.01], vec![0.0, 0.05, 0.01]],
        )
        .unwrap();
        let rows = p.returns().select(Axis(0), &[0, 1, 2]);
        let aug = concatenate(Axis(0), &[rows.view(), Array2::zeros((1, 3)).view()]).unwrap();
        let d = distance_matrix(&CorrelationMatrix::sanitize(pearson_rows(aug.view())));
        for i in 0..3 {
            assert_eq!(d.get(i, 3), 0.5f64.sqrt());
        }
    }

    #[test]
    fn subtree_mass_examples() {
        let t = tree(3, &[(0, 1), (1, 2)]);
        let r = root_tree(&t, 0).unwrap();
        let s = [0.5, 0.3, -0.4];
        let m2 = subtree_mass(&r, &s, 2.0);
        assert!((m2.masses()[2] - 0.16).abs() < 1e-15);
        assert!((m2.masses()[0] - (0.25 + 0.09 + 0.16)).abs() < 1e-15);
        let ones = subtree_mass(&r, &[1.0, -1.0, 1.0], 1.0);
        assert_eq!(ones.masses(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn subtree_mass_skips_dummy() {
        let t = tree(3, &[(0, 1), (1, 2)]);
        let a = anchor_market_sector(&t, &[0, 2]).unwrap();
        let m = subtree_mass(&a, &[0.5, 0.5, 0.5], 1.0);
        assert!((m.masses()[3] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let t = tree(3, &[(0, 1), (1, 2)]);
        let labels = ["A", "B", "C"];
        let a = root_tree(&t, 0).unwrap().hash(&labels);
        assert_eq!(a, root_tree(&t, 0).unwrap().hash(&labels));
        assert_ne!(a, root_tree(&t, 1).unwrap().hash(&labels));
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn from_parents_rejects_cycles() {
        assert!(RootedTopology::from_parents(3, vec![None, Some(2), Some(1)], false).is_err());
        assert!(RootedTopology::from_parents(2, vec![None, None], false).is_err());
        assert!(RootedTopology::from_parents(2, vec![Some(2), Some(2), None], true).is_ok());
    }
}
