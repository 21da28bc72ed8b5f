//! Correlation, Mantegna distance and minimum spanning trees over the active universe.

use ndarray::{Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::data_model::{ActiveSet, ReturnsPanel};
use crate::error::{Result, TrpError};

/// Largest universe [`brute_force_mst`] will enumerate.
pub const BRUTE_FORCE_MAX_NODES: usize = 8;

/// Sanitized sample correlation: symmetric, unit diagonal, entries in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix(Array2<f64>);

impl CorrelationMatrix {
    /// Clip to [-1, 1], replace NaN by 0, symmetrize, then force the unit diagonal.
    pub fn sanitize(mut raw: Array2<f64>) -> Self {
        assert_eq!(raw.nrows(), raw.ncols(), "correlation matrix must be square");
        raw.mapv_inplace(|c| c.clamp(-1.0, 1.0));
        raw.mapv_inplace(|c| if c.is_nan() { 0.0 } else { c });
        let sym = (&raw + &raw.t()) / 2.0;
        let mut sym = sym;
        sym.diag_mut().fill(1.0);
        Self(sym)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }
}

/// Mantegna distances `sqrt((1 - C) / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Array2<f64>);

impl DistanceMatrix {
    /// Wraps an arbitrary symmetric, zero-diagonal weight matrix. Used by the
    /// oracle tests, which draw weights directly.
    pub fn from_raw(values: Array2<f64>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n {
            return Err(TrpError::ShapeMismatch("distance matrix must be square".into()));
        }
        for i in 0..n {
            if values[[i, i]] != 0.0 {
                return Err(TrpError::ShapeMismatch("distance diagonal must be zero".into()));
            }
            for j in 0..i {
                if values[[i, j]] != values[[j, i]] || !values[[i, j]].is_finite() {
                    return Err(TrpError::ShapeMismatch(
                        "distance matrix must be symmetric and finite".into(),
                    ));
                }
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    /// Smaller endpoint.
    pub a: usize,
    /// Larger endpoint.
    pub b: usize,
    pub weight: f64,
}

/// An undirected spanning tree over nodes `0..n_nodes`.
///
/// Edges are stored with `a < b`, sorted by `(a, b)`, and `total_weight` is
/// summed in that order so equal edge sets always produce bitwise-equal totals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanningTree {
    n_nodes: usize,
    edges: Vec<Edge>,
    total_weight: f64,
}

impl SpanningTree {
    /// Canonicalizes `edges` and checks the tree invariants.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let tree = Self::canonical(n_nodes, edges);
        if !tree.is_spanning_tree() {
            return Err(TrpError::ShapeMismatch(format!(
                "{} edges do not form a spanning tree on {n_nodes} nodes",
                tree.edges.len()
            )));
        }
        Ok(tree)
    }

    fn canonical(n_nodes: usize, edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|e| Edge {
                a: e.a.min(e.b),
                b: e.a.max(e.b),
                weight: e.weight,
            })
            .collect();
        edges.sort_by_key(|e| (e.a, e.b));
        let total_weight = edges.iter().map(|e| e.weight).sum();
        Self {
            n_nodes,
            edges,
            total_weight,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.a, e.b)).collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for e in &self.edges {
            deg[e.a] += 1;
            deg[e.b] += 1;
        }
        deg
    }

    /// Neighbor lists in ascending order.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for e in &self.edges {
            adj[e.a].push(e.b);
            adj[e.b].push(e.a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Connected, acyclic, `n - 1` edges, endpoints in range, no self loops.
    pub fn is_spanning_tree(&self) -> bool {
        if self.n_nodes == 0 {
            return self.edges.is_empty();
        }
        if self.edges.len() != self.n_nodes - 1 {
            return false;
        }
        let mut uf = UnionFind::new(self.n_nodes);
        self.edges
            .iter()
            .all(|e| e.a != e.b && e.b < self.n_nodes && uf.union(e.a, e.b))
    }
}

/// Disjoint sets with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets containing `a` and `b`; false if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Pearson correlation between the rows of `series`, unsanitized.
/// Zero-variance rows produce NaN entries.
pub fn pearson_rows(series: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = series.nrows();
    let t = series.ncols() as f64;
    let means = series.sum_axis(Axis(1)) / t;
    let centered = Array2::from_shape_fn(series.raw_dim(), |(i, k)| series[[i, k]] - means[i]);
    let sd: Vec<f64> = centered.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let c = centered.row(i).dot(&centered.row(j)) / (sd[i] * sd[j]);
            out[[i, j]] = c;
            out[[j, i]] = c;
        }
    }
    out
}

/// Sanitized correlation of the active rows over the full history.
pub fn correlation_matrix(panel: &ReturnsPanel, active: &ActiveSet) -> CorrelationMatrix {
    let rows = panel.returns().select(Axis(0), active.indices());
    CorrelationMatrix::sanitize(pearson_rows(rows.view()))
}

/// Mantegna distance for a single correlation value.
pub fn mantegna_distance(c: f64) -> f64 {
    ((1.0 - c) / 2.0).sqrt()
}

pub fn distance_matrix(corr: &CorrelationMatrix) -> DistanceMatrix {
    let mut d = corr.values().mapv(mantegna_distance);
    d.diag_mut().fill(0.0);
    DistanceMatrix(d)
}

/// Kruskal over the complete graph. Ties are broken by `(weight, min index, max index)`.
pub fn build_mst(dist: &DistanceMatrix) -> SpanningTree {
    let n = dist.len();
    let mut candidates: Vec<Edge> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .map(|(a, b)| Edge {
            a,
            b,
            weight: dist.get(a, b),
        })
        .collect();
    candidates.sort_by(|x, y| x.weight.total_cmp(&y.weight).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
    let mut uf = UnionFind::new(n);
    let mut chosen = Vec::with_capacity(n.saturating_sub(1));
    for e in candidates {
        if uf.union(e.a, e.b) {
            chosen.push(e);
            if chosen.len() + 1 == n {
                break;
            }
        }
    }
    SpanningTree::canonical(n, chosen)
}

/// Decodes a Prüfer sequence of length `n - 2` into the edges of a labeled tree.
pub fn prufer_decode(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    debug_assert_eq!(seq.len() + 2, n);
    let mut degree = vec![1usize; n];
    for &v in seq {
        degree[v] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &v in seq {
        let leaf = (0..n).find(|&u| degree[u] == 1).expect("a leaf always exists");
        edges.push((leaf, v));
        degree[leaf] -= 1;
        degree[v] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&u| degree[u] == 1).collect();
    edges.push((rest[0], rest[1]));
    edges
}

/// Exhaustive minimum over all `n^(n-2)` labeled spanning trees. Test oracle.
pub fn brute_force_mst(dist: &DistanceMatrix) -> Result<SpanningTree> {
    let n = dist.len();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(TrpError::UniverseTooLarge {
            n,
            max: BRUTE_FORCE_MAX_NODES,
        });
    }
    let to_tree = |pairs: Vec<(usize, usize)>| {
        SpanningTree::canonical(
            n,
            pairs.into_iter().map(|(a, b)| Edge {
                a,
                b,
                weight: dist.get(a, b),
            }),
        )
    };
    if n <= 1 {
        return Ok(SpanningTree::canonical(n, []));
    }
    if n == 2 {
        return Ok(to_tree(vec![(0, 1)]));
    }
    let len = n - 2;
    let mut seq = vec![0usize; len];
    let mut best: Option<SpanningTree> = None;
    loop {
        let tree = to_tree(prufer_decode(&seq, n));
        if best.as_ref().is_none_or(|b| tree.total_weight < b.total_weight) {
            best = Some(tree);
        }
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == len {
                return Ok(best.expect("at least one tree enumerated"));
            }
            seq[pos] += 1;
            if seq[pos] < n {
                break;
            }
            seq[pos] = 0;
            pos += 1;
        }
    }
}
