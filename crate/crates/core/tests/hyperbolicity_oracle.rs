use hypergeo_core::hyperbolicity::{
    delta_hyperbolicity, delta_rel_sampled, DistanceMatrix, Metric, SamplingConfig,
};
use hypergeo_core::rng;
use hypergeo_core::trainer::{gaussian_control, generate_tree_dataset, TreeConfig};
use rand::Rng;

/// All-pairs path lengths of a random weighted tree on `m` nodes.
fn random_tree_metric(m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::seeded(seed);
    let mut adj = vec![Vec::new(); m];
    for v in 1..m {
        let p = r.random_range(0..v);
        let w = r.random_range(0.1..2.0);
        adj[v].push((p, w));
        adj[p].push((v, w));
    }
    let mut d: Vec<Vec<f64>> = (0..m)
        .map(|s| {
            let mut d = vec![f64::NAN; m];
            d[s] = 0.0;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &(v, w) in &adj[u] {
                    if d[v].is_nan() {
                        d[v] = d[u] + w;
                        stack.push(v);
                    }
                }
            }
            d
        })
        .collect();
    // path sums in the two directions may round differently
    for i in 0..m {
        for j in 0..i {
            d[i][j] = d[j][i];
        }
    }
    d
}

/// Largest violation of the four-point condition over all quadruples.
fn four_point_defect(d: &[Vec<f64>]) -> f64 {
    let m = d.len();
    let mut worst: f64 = 0.0;
    for x in 0..m {
        for y in 0..m {
            for z in 0..m {
                for w in 0..m {
                    let mut s = [d[x][y] + d[z][w], d[x][z] + d[y][w], d[x][w] + d[y][z]];
                    s.sort_by(f64::total_cmp);
                    worst = worst.max((s[2] - s[1]) / 2.0);
                }
            }
        }
    }
    worst
}

#[test]
fn random_trees_are_zero_hyperbolic() {
    for seed in 0..50 {
        let m = 3 + (seed as usize % 10);
        let rows = random_tree_metric(m, seed);
        assert!(four_point_defect(&rows) < 1e-9);
        let d = DistanceMatrix::new(m, rows.concat()).unwrap();
        let report = delta_hyperbolicity(&d).unwrap();
        assert!(report.delta.abs() < 1e-9, "seed {seed}: {}", report.delta);
    }
}

#[test]
fn delta_rel_is_scale_invariant_and_bounded() {
    let mut r = rng::seeded(5);
    let pts: Vec<Vec<f64>> = (0..20).map(|_| rng::normal_vec(&mut r, 3, 1.0)).collect();
    let d = DistanceMatrix::from_points(&pts, Metric::Euclidean).unwrap();
    let base = delta_hyperbolicity(&d).unwrap();
    assert!((0.0..=1.0).contains(&base.delta_rel));
    for alpha in [0.01, 3.0, 250.0] {
        let scaled = delta_hyperbolicity(&d.scaled(alpha).unwrap()).unwrap();
        assert!((scaled.delta_rel - base.delta_rel).abs() < 1e-12);
        assert!((scaled.delta - alpha * base.delta).abs() < 1e-9 * alpha.max(1.0));
    }
}

#[test]
fn tree_data_is_more_hyperbolic_than_gaussian_cloud() {
    let tree = generate_tree_dataset(&TreeConfig {
        per_class: 8,
        ..TreeConfig::default()
    })
    .unwrap();
    let points: Vec<&[f64]> = tree.points.iter().map(|p| p.coords()).collect();
    let control = gaussian_control(&tree, 1).unwrap();
    let cloud: Vec<&[f64]> = control.points.iter().map(|p| p.coords()).collect();
    let cfg = SamplingConfig {
        metric: Metric::Poincare(tree.kappa()),
        sample_size: 60,
        trials: 5,
        seed: 2,
    };
    let t = delta_rel_sampled(&points, &cfg).unwrap();
    let c = delta_rel_sampled(&cloud, &cfg).unwrap();
    assert!(
        t.delta_rel < c.delta_rel,
        "tree {} vs cloud {}",
        t.delta_rel,
        c.delta_rel
    );
}
