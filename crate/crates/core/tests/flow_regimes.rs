//! Monte Carlo checks of the nested flow model against analytic moments and
//! against a random-weight spanning-tree baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trp_core::dependence::{build_mst, DistanceMatrix};
use trp_core::flow_model::{
    edge_type_fractions, generate_returns, mst_regime_probe, population_covariance, FlowModelParams, Loadings,
    UniverseShape,
};

fn desk(l: Loadings, seed: u64) -> FlowModelParams {
    FlowModelParams::nested(UniverseShape::default(), l, seed)
}

fn sample_within_se(params: &FlowModelParams, periods: usize) -> f64 {
    let panel = generate_returns(params, periods).unwrap();
    let sigma = population_covariance(params).unwrap();
    let n = panel.n_assets();
    let t = periods as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = panel.row(i);
            let m = r.sum() / t;
            r.iter().map(|x| x - m).collect()
        })
        .collect();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let c: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum::<f64>() / (t - 1.0);
            let se = ((sigma[[i, j]].powi(2) + sigma[[i, i]] * sigma[[j, j]]) / t).sqrt();
            worst = worst.max((c - sigma[[i, j]]).abs() / se);
        }
    }
    worst
}

#[test]
fn sample_covariance_tracks_population() {
    assert!(sample_within_se(&desk(Loadings::new(0.3, 0.2, 0.15, 0.1), 7), 5000) < 5.0);
    assert!(sample_within_se(&desk(Loadings::new(0.0, 0.0, 0.0, 0.0), 8).with_lambda(0.4), 5000) < 5.0);
}

#[test]
fn balanced_loadings_recover_baskets() {
    let p = desk(Loadings::new(0.3, 0.3, 0.3, 0.1), 3);
    let r = mst_regime_probe(&p, 4000).unwrap();
    assert!(r.intra_basket > r.cross_sector, "{r:?}");
    assert_eq!(r.n_edges, 47);
}

/// Mean edge-type fractions of MSTs built on i.i.d. uniform distances.
fn random_baseline(params: &FlowModelParams, draws: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = params.n_assets();
    let (mut basket, mut cross) = (0.0, 0.0);
    for _ in 0..draws {
        let mut d = ndarray::Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..i {
                let w: f64 = rng.random();
                d[[i, j]] = w;
                d[[j, i]] = w;
            }
        }
        let stats = edge_type_fractions(params, &build_mst(&DistanceMatrix::from_raw(d).unwrap()));
        basket += stats.intra_basket;
        cross += stats.cross_sector;
    }
    (basket / draws as f64, cross / draws as f64)
}

fn mean_fractions(l: f64, seeds: u64) -> (f64, f64) {
    let (mut basket, mut cross) = (0.0, 0.0);
    for seed in 0..seeds {
        let r = mst_regime_probe(&desk(Loadings::new(0.0, 0.0, 0.0, 0.0), seed).with_lambda(l), 500).unwrap();
        basket += r.intra_basket;
        cross += r.cross_sector;
    }
    (basket / seeds as f64, cross / seeds as f64)
}

#[test]
fn weak_common_flow_looks_like_random_tree() {
    let p = desk(Loadings::new(0.0, 0.0, 0.0, 0.0), 0);
    let (base_basket, base_cross) = random_baseline(&p, 200);
    let (weak_basket, weak_cross) = mean_fractions(1e-4, 40);
    let (strong_basket, _) = mean_fractions(0.5, 40);
    assert!(
        (weak_basket - base_basket).abs() < 0.03,
        "{weak_basket} vs {base_basket}"
    );
    assert!((weak_cross - base_cross).abs() < 0.05, "{weak_cross} vs {base_cross}");
    assert!(strong_basket > base_basket + 0.3, "{strong_basket} vs {base_basket}");
}
