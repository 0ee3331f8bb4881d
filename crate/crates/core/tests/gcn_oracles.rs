mod common;

use common::{random_matrix, Lcg};
use itemsel_core::gnn::{
    accuracy, build_knn_graph, gcn_forward, gcn_train, loss, loss_and_gradient, node_labels, FeatureMatrix,
    GcnHyperparams, GcnModel, ItemGraph, TrainSplit, N_LEVELS,
};
use itemsel_core::{Matrix, ScaleVector, N_DIMS};

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("n{i}")).collect()
}

/// Dense `D^{-1/2}(A+I)D^{-1/2}` from an undirected edge list.
fn dense_norm_adjacency(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[i][j] /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

/// Triple-loop forward pass.
fn loop_forward(model: &GcnModel, adj: &[Vec<f64>], x: &Matrix) -> Vec<Vec<Vec<f64>>> {
    let n = x.rows();
    let mut h: Vec<Vec<f64>> = x.to_rows();
    for w in &model.params.layers {
        let mut ah = vec![vec![0.0; h[0].len()]; n];
        for i in 0..n {
            for j in 0..n {
                for c in 0..h[0].len() {
                    ah[i][c] += adj[i][j] * h[j][c];
                }
            }
        }
        let mut z = vec![vec![0.0; w.cols()]; n];
        for i in 0..n {
            for o in 0..w.cols() {
                let mut s = 0.0;
                for c in 0..w.rows() {
                    s += ah[i][c] * w[(c, o)];
                }
                z[i][o] = s.max(0.0);
            }
        }
        h = z;
    }
    model
        .params
        .heads
        .iter()
        .zip(&model.params.head_bias)
        .map(|(w, b)| {
            (0..n)
                .map(|i| {
                    (0..N_LEVELS)
                        .map(|o| b[o] + (0..w.rows()).map(|c| h[i][c] * w[(c, o)]).sum::<f64>())
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn small_model(input_dim: usize, hidden: usize, seed: u64) -> GcnModel {
    let mut m = GcnModel::init(
        input_dim,
        GcnHyperparams {
            hidden,
            seed,
            ..Default::default()
        },
    );
    // non-zero biases so their gradients are exercised
    let mut rng = Lcg::new(seed + 100);
    for b in &mut m.params.head_bias {
        for v in b.iter_mut() {
            *v = rng.normal() * 0.1;
        }
    }
    m
}

const EDGES5: [(usize, usize); 5] = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)];

#[test]
fn normalized_adjacency_matches_dense_construction() {
    let g = ItemGraph::from_edges(5, &EDGES5);
    let dense = dense_norm_adjacency(5, &EDGES5);
    let got = g.dense_adjacency();
    for i in 0..5 {
        for j in 0..5 {
            assert!((got[(i, j)] - dense[i][j]).abs() < 1e-15);
        }
    }
}

#[test]
fn forward_matches_loop_oracle() {
    let mut rng = Lcg::new(1);
    let x = random_matrix(&mut rng, 5, 4, 1.0);
    let f = FeatureMatrix::new(ids(5), x.clone()).unwrap();
    let g = ItemGraph::from_edges(5, &EDGES5);
    let model = small_model(4, 7, 3);
    let got = gcn_forward(&model, &g, &f).unwrap();
    let want = loop_forward(&model, &dense_norm_adjacency(5, &EDGES5), &x);
    for h in 0..N_DIMS {
        for i in 0..5 {
            for o in 0..N_LEVELS {
                assert!((got[h][(i, o)] - want[h][i][o]).abs() < 1e-10);
            }
        }
    }
}

fn random_labels(rng: &mut Lcg, n: usize) -> Vec<ScaleVector> {
    (0..n)
        .map(|i| {
            let lv: Vec<i64> = (0..N_DIMS).map(|_| rng.below(6) as i64).collect();
            ScaleVector::new(format!("n{i}"), &lv).unwrap()
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = Lcg::new(2);
    let x = random_matrix(&mut rng, 5, 3, 1.0);
    let f = FeatureMatrix::new(ids(5), x).unwrap();
    let g = ItemGraph::from_edges(5, &EDGES5);
    let labels = node_labels(&f, &random_labels(&mut rng, 5));
    let mask = vec![true, true, false, true, true];
    let mut model = small_model(3, 6, 4);
    let (_, grad) = loss_and_gradient(&model, &g, &f, &labels, &mask).unwrap();
    let analytic = grad.to_flat();
    let base = model.params.to_flat();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 0..base.len() {
        let mut plus = base.clone();
        plus[p] += eps;
        model.params.set_flat(&plus);
        let lp = loss(&model, &g, &f, &labels, &mask).unwrap();
        let mut minus = base.clone();
        minus[p] -= eps;
        model.params.set_flat(&minus);
        let lm = loss(&model, &g, &f, &labels, &mask).unwrap();
        let numeric = (lp - lm) / (2.0 * eps);
        let scale = analytic[p].abs().max(numeric.abs());
        if scale > 1e-7 {
            worst = worst.max((analytic[p] - numeric).abs() / scale);
        }
    }
    model.params.set_flat(&base);
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn separable_twenty_nodes_are_learned() {
    let n = 20;
    let mut rng = Lcg::new(8);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let class = i % 2;
        let base = if class == 0 { [1.0, 0.2, 0.0] } else { [0.0, 0.2, 1.0] };
        rows.push(base.iter().map(|b| b + 0.05 * rng.uniform()).collect::<Vec<f64>>());
        let lv = if class == 0 { [1i64; N_DIMS] } else { [4i64; N_DIMS] };
        labels.push(ScaleVector::new(format!("n{i}"), &lv).unwrap());
    }
    let f = FeatureMatrix::new(ids(n), Matrix::from_rows(&rows).unwrap()).unwrap();
    let g = build_knn_graph(&f, 3).unwrap();
    let split = TrainSplit {
        train: vec![true; n],
        val: vec![false; n],
    };
    let hyper = GcnHyperparams {
        hidden: 32,
        epochs: 500,
        ..Default::default()
    };
    let (model, report) = gcn_train(&f, &g, &labels, &split, &hyper).unwrap();
    assert!(report.epochs_run <= 500);
    let acc = accuracy(&model, &g, &f, &labels, &split.train).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
    assert!(report.final_train_loss < report.initial_train_loss);
}

#[test]
fn training_is_bit_reproducible() {
    let mut rng = Lcg::new(4);
    let x = random_matrix(&mut rng, 12, 5, 1.0);
    let f = FeatureMatrix::new(ids(12), x).unwrap();
    let g = build_knn_graph(&f, 3).unwrap();
    let labels = random_labels(&mut rng, 12);
    let split = TrainSplit::random(&[true; 12], 0.25, 5);
    let hyper = GcnHyperparams {
        hidden: 8,
        epochs: 40,
        seed: 5,
        ..Default::default()
    };
    let (a, ra) = gcn_train(&f, &g, &labels, &split, &hyper).unwrap();
    let (b, rb) = gcn_train(&f, &g, &labels, &split, &hyper).unwrap();
    assert_eq!(a.params.to_flat(), b.params.to_flat());
    assert_eq!(ra, rb);
}

#[test]
fn knn_graph_is_symmetric_and_contains_nearest_neighbors() {
    let mut rng = Lcg::new(6);
    let x = random_matrix(&mut rng, 15, 4, 1.0);
    let f = FeatureMatrix::new(ids(15), x.clone()).unwrap();
    let g = build_knn_graph(&f, 3).unwrap();
    assert!(g.is_symmetric());
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|v| v * v).sum::<f64>().sqrt() * b.iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    for i in 0..15 {
        let mut sims: Vec<(f64, usize)> = (0..15).filter(|&j| j != i).map(|j| (cos(x.row(i), x.row(j)), j)).collect();
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in &sims[..3] {
            assert!(g.neighbors(i).contains(&j));
        }
        assert!(g.neighbors(i).contains(&i));
    }
}
