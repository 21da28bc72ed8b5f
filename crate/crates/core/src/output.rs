//! Writers for weights, trees and rooted topologies.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::data_model::{ReturnsPanel, SignalVector, TrpConfig};
use crate::dependence::SpanningTree;
use crate::error::Result;
use crate::propagation::Allocation;
use crate::topology::RootedTopology;

/// One row of the weights table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRow {
    pub ticker: String,
    pub signal: f64,
    /// Propagation factor; `None` for assets outside the active set.
    pub g_factor: Option<f64>,
    pub weight: f64,
}

pub fn weight_rows(panel: &ReturnsPanel, signals: &SignalVector, alloc: &Allocation) -> Vec<WeightRow> {
    let g = alloc.asset_factors(panel.n_assets());
    panel
        .assets()
        .iter()
        .enumerate()
        .map(|(i, a)| WeightRow {
            ticker: a.ticker().to_owned(),
            signal: signals.values()[i],
            g_factor: g[i],
            weight: alloc.portfolio.weights()[i],
        })
        .collect()
}

fn header_comment(cfg: &TrpConfig, alloc: &Allocation) -> String {
    format!(
        "# rho={} leverage={} variant={} topology={}",
        cfg.rho,
        cfg.leverage,
        alloc.variant,
        alloc.topology_hash.as_deref().unwrap_or("none")
    )
}

/// `ticker,signal,g_factor,weight` with a leading `#` parameter line.
/// Inactive assets have an empty `g_factor` cell.
pub fn write_weights_csv<W: Write>(
    mut out: W,
    panel: &ReturnsPanel,
    signals: &SignalVector,
    cfg: &TrpConfig,
    alloc: &Allocation,
) -> Result<()> {
    writeln!(out, "{}", header_comment(cfg, alloc)).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["ticker", "signal", "g_factor", "weight"])?;
    for row in weight_rows(panel, signals, alloc) {
        w.write_record([
            row.ticker,
            row.signal.to_string(),
            row.g_factor.map(|g| g.to_string()).unwrap_or_default(),
            row.weight.to_string(),
        ])?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct WeightsDoc<'a> {
    rho: f64,
    leverage: f64,
    variant: String,
    topology: Option<&'a str>,
    diagnostics: Vec<String>,
    weights: Vec<WeightRow>,
}

pub fn write_weights_json<W: Write>(
    out: W,
    panel: &ReturnsPanel,
    signals: &SignalVector,
    cfg: &TrpConfig,
    alloc: &Allocation,
) -> Result<()> {
    let doc = WeightsDoc {
        rho: cfg.rho,
        leverage: cfg.leverage,
        variant: alloc.variant.to_string(),
        topology: alloc.topology_hash.as_deref(),
        diagnostics: alloc.diagnostics.iter().map(|d| d.to_string()).collect(),
        weights: weight_rows(panel, signals, alloc),
    };
    serde_json::to_writer_pretty(out, &doc)?;
    Ok(())
}

fn io_err(e: std::io::Error) -> crate::error::TrpError {
    crate::error::TrpError::Io {
        path: "<output>".into(),
        source: e,
    }
}

fn quote(label: &str) -> String {
    format!("\"{}\"", label.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Undirected DOT graph, one `"A" -- "B" [weight=w];` line per edge.
pub fn tree_dot(tree: &SpanningTree, labels: &[&str]) -> String {
    let mut s = String::from("graph {\n");
    for e in tree.edges() {
        let _ = writeln!(
            s,
            "  {} -- {} [weight={}];",
            quote(labels[e.a]),
            quote(labels[e.b]),
            e.weight
        );
    }
    s.push_str("}\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EdgeRecord {
    pub a: String,
    pub b: String,
    pub weight: f64,
}

pub fn tree_edge_records(tree: &SpanningTree, labels: &[&str]) -> Vec<EdgeRecord> {
    tree.edges()
        .iter()
        .map(|e| EdgeRecord {
            a: labels[e.a].to_owned(),
            b: labels[e.b].to_owned(),
            weight: e.weight,
        })
        .collect()
}

pub fn tree_json(tree: &SpanningTree, labels: &[&str]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "nodes": labels,
        "edges": tree_edge_records(tree, labels),
        "total_weight": tree.total_weight(),
    }))?)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RootedDoc {
    pub root: String,
    pub parents: BTreeMap<String, String>,
    pub depths: BTreeMap<String, usize>,
    pub branching: BTreeMap<String, usize>,
}

pub fn rooted_doc(topo: &RootedTopology, labels: &[&str]) -> RootedDoc {
    let n = topo.n_nodes();
    RootedDoc {
        root: labels[topo.root()].to_owned(),
        parents: (0..n)
            .filter_map(|v| topo.parent(v).map(|p| (labels[v].to_owned(), labels[p].to_owned())))
            .collect(),
        depths: (0..n).map(|v| (labels[v].to_owned(), topo.depth(v))).collect(),
        branching: (0..n).map(|v| (labels[v].to_owned(), topo.branching(v))).collect(),
    }
}

pub fn rooted_json(topo: &RootedTopology, labels: &[&str]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&rooted_doc(topo, labels))?)
}

/// Directed DOT graph, parent to child, nodes at equal depth on one rank.
pub fn rooted_dot(topo: &RootedTopology, labels: &[&str]) -> String {
    let mut s = String::from("digraph {\n");
    for d in 0..=topo.max_depth() {
        let nodes: Vec<String> = topo.level(d).iter().map(|&v| quote(labels[v])).collect();
        let _ = writeln!(s, "  {{ rank=same; {}; }}", nodes.join("; "));
    }
    for (p, c) in topo.tree_edges() {
        let _ = writeln!(s, "  {} -> {};", quote(labels[p]), quote(labels[c]));
    }
    s.push_str("}\n");
    s
}
