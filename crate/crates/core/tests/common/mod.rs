#![allow(dead_code)]

use dgcnn::filters::BnMode;
use dgcnn::meshgraph::CellComplex;
use dgcnn::model::{ArchSpec, ModelParams};
use dgcnn::training::{loss_and_grad, Prepared};
use dgcnn::Slots64;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Worst central-difference disagreement per parameter block, as
/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
pub fn finite_difference_errors(
    params: &ModelParams<f64>,
    batch: &[Prepared<f64>],
    mode: BnMode,
    step: f64,
    floor: f64,
) -> Vec<(String, f64)> {
    let refs: Vec<&Prepared<f64>> = batch.iter().collect();
    let (_, grads, _) = loss_and_grad(params, &refs, mode).expect("gradient");
    let analytic: Vec<(String, Vec<f64>)> = grads
        .named_slices(false)
        .into_iter()
        .map(|(n, s)| (n, s.to_vec()))
        .collect();
    let loss_at = |p: &ModelParams<f64>| loss_and_grad(p, &refs, mode).expect("loss").0;
    let mut out = Vec::new();
    for (block, (name, ga)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for k in 0..ga.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.named_slices_mut(false)[block].1[k] += step;
            minus.named_slices_mut(false)[block].1[k] -= step;
            let num = (loss_at(&plus) - loss_at(&minus)) / (2.0 * step);
            let err = (ga[k] - num).abs() / ga[k].abs().max(num.abs()).max(floor);
            worst = worst.max(err);
        }
        out.push((name.clone(), worst));
    }
    out
}

/// Random conditioned-looking samples on `complex` for a freshly built model.
pub fn random_batch(
    arch: &ArchSpec,
    complex: &CellComplex,
    channels: usize,
    samples: usize,
    steps: usize,
    seed: u64,
) -> (ModelParams<f64>, Vec<Prepared<f64>>) {
    let mut params = ModelParams::<f64>::build(arch, complex, channels, seed).expect("model");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    // Jitter every trainable entry so no ReLU input sits exactly at zero.
    for (_, block) in params.named_slices_mut(false) {
        for v in block.iter_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let slots: Arc<Slots64> = Arc::new(params.bind(complex).expect("bind"));
    let n = complex.len();
    let batch = (0..samples)
        .map(|_| Prepared {
            features: Array2::from_shape_fn((n, channels), |_| rng.gen_range(0.0..1.0)),
            slots: slots.clone(),
            strain: (1..=steps).map(|k| k as f64 / steps as f64).collect(),
            target: Array1::from_shape_fn(steps, |_| rng.gen_range(-1.0..1.0)),
        })
        .collect();
    (params, batch)
}

/// Random symmetric graph on `n` nodes with edge probability `p`.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> CellComplex {
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    graph_from_lists(adj)
}

pub fn graph_from_lists(adj: Vec<Vec<usize>>) -> CellComplex {
    let cells = adj
        .into_iter()
        .map(|f| dgcnn::meshgraph::Cell {
            volume: 1.0,
            face_neighbors: f,
            vertex_neighbors: Vec::new(),
        })
        .collect();
    CellComplex::unstructured(cells).expect("valid graph")
}
