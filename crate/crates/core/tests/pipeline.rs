//! End-to-end allocation against a from-scratch reimplementation: two-pass
//! Pearson, Prim's algorithm, explicit ancestor products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use trp_core::{allocate, ReturnsPanel, RootMode, SignalVector, TrpConfig, Variant};

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    let c = sxy / (sxx * syy).sqrt();
    if c.is_finite() {
        c.clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Prim's algorithm on a dense matrix; returns the adjacency lists.
fn prim(d: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = d.len();
    let mut adj = vec![Vec::new(); n];
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, usize::MAX); n];
    in_tree[0] = true;
    for v in 1..n {
        best[v] = (d[0][v], 0);
    }
    for _ in 1..n {
        let v = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&a, &b| best[a].0.total_cmp(&best[b].0))
            .unwrap();
        in_tree[v] = true;
        let u = best[v].1;
        adj[u].push(v);
        adj[v].push(u);
        for w in 0..n {
            if !in_tree[w] && d[v][w] < best[w].0 {
                best[w] = (d[v][w], v);
            }
        }
    }
    adj
}

fn oracle_weights(rows: &[Vec<f64>], s: &[f64], cfg: &TrpConfig) -> Vec<f64> {
    let n = rows.len();
    let active: Vec<usize> = (0..n)
        .filter(|&i| {
            let m = rows[i].iter().map(|r| r.abs()).sum::<f64>() / rows[i].len() as f64;
            m > cfg.magnitude_threshold && s[i].abs() > cfg.signal_threshold
        })
        .collect();
    let k = active.len();
    let mut w = vec![0.0; n];
    if k == 0 {
        return w;
    }
    let d: Vec<Vec<f64>> = active
        .iter()
        .map(|&i| {
            active
                .iter()
                .map(|&j| {
                    if i == j {
                        0.0
                    } else {
                        ((1.0 - pearson(&rows[i], &rows[j])) / 2.0).sqrt()
                    }
                })
                .collect()
        })
        .collect();
    let adj = prim(&d);
    let sa: Vec<f64> = active.iter().map(|&i| s[i]).collect();
    let root = match cfg.root_mode {
        RootMode::Hub => (0..k).max_by_key(|&v| (adj[v].len(), std::cmp::Reverse(v))).unwrap(),
        RootMode::MaxMagnitude => (0..k)
            .max_by(|&a, &b| sa[a].abs().total_cmp(&sa[b].abs()).then(b.cmp(&a)))
            .unwrap(),
        RootMode::FixedIndex(i) => active.iter().position(|&a| a == i).unwrap(),
    };
    let mut parent = vec![usize::MAX; k];
    let mut seen = vec![false; k];
    let mut queue = std::collections::VecDeque::from([root]);
    seen[root] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent[v] = u;
                queue.push_back(v);
            }
        }
    }
    let branching = |u: usize| adj[u].len() - usize::from(u != root);
    let rho = cfg.rho;
    let x: Vec<f64> = (0..k)
        .map(|v| {
            let mut g = 1.0;
            let mut u = v;
            while u != root {
                u = parent[u];
                g *= (1.0 - rho) + rho / branching(u) as f64;
            }
            g * sa[v]
        })
        .collect();
    let norm: f64 = x.iter().map(|v| v.abs()).sum();
    for (ord, &i) in active.iter().enumerate() {
        w[i] = cfg.leverage * x[ord] / norm;
    }
    w
}

#[test]
fn allocate_matches_independent_pipeline() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..300 {
        let n = rng.random_range(1..=40);
        let t = rng.random_range(8..=50);
        let market: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let beta: f64 = rng.random_range(-1.0..1.0);
                market
                    .iter()
                    .map(|m| 0.01 * (beta * m + rng.sample::<f64, _>(StandardNormal)))
                    .collect()
            })
            .collect();
        let s: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random_range(-1.0..1.0)
                }
            })
            .collect();
        let tickers: Vec<String> = (0..n).map(|i| format!("T{i}")).collect();
        let panel = ReturnsPanel::from_rows(&tickers, &rows).unwrap();
        let root_mode = match case % 3 {
            0 => RootMode::Hub,
            1 => RootMode::MaxMagnitude,
            _ => match (0..n).find(|&i| s[i].abs() > 1e-3) {
                Some(i) => RootMode::FixedIndex(i),
                None => RootMode::Hub,
            },
        };
        let cfg = TrpConfig {
            rho: rng.random_range(0.0..=1.0),
            leverage: rng.random_range(0.5..2.0),
            root_mode,
            ..TrpConfig::default()
        };
        let got = allocate(&panel, &SignalVector::new(s.clone()).unwrap(), &cfg, Variant::MstRooted).unwrap();
        let want = oracle_weights(&rows, &s, &cfg);
        for (a, b) in got.portfolio.weights().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn lookback_window_restricts_activity_only() {
    // The last two periods are flat for asset 1, so a two-period window drops it
    // while the correlation still uses the full history.
    let rows = vec![
        vec![0.01, -0.02, 0.015, 0.01, -0.01],
        vec![0.02, -0.01, 0.01, 0.0, 0.0],
        vec![-0.01, 0.02, -0.005, 0.01, 0.02],
    ];
    let panel = ReturnsPanel::from_rows(&["A", "B", "C"], &rows).unwrap();
    let s = SignalVector::new(vec![0.5, 0.5, -0.5]).unwrap();
    let cfg = TrpConfig {
        lookback: Some(2),
        ..TrpConfig::default()
    };
    let alloc = allocate(&panel, &s, &cfg, Variant::MstRooted).unwrap();
    assert_eq!(alloc.portfolio.weights()[1], 0.0);
    assert_eq!(alloc.active.unwrap().indices(), &[0, 2]);
    let full = allocate(&panel, &s, &TrpConfig::default(), Variant::MstRooted).unwrap();
    assert_ne!(full.portfolio.weights()[1], 0.0);
}
