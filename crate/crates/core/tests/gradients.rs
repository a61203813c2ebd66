mod common;

use common::{finite_difference_errors, random_batch};
use dgcnn::filters::{dense_backward, Activation, BnMode, Dense};
use dgcnn::meshgraph::CellComplex;
use dgcnn::microgen::{generate_polycrystal, segment_to_grain_graph, GrainCount, GrainFeatureSet, OrientationMode, PolycrystalSpec};
use dgcnn::model::{forward_batch, ArchSpec, SampleRef};
use dgcnn::training::{loss_and_grad, Prepared};
use ndarray::{array, Array1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn assert_all_below(errs: &[(String, f64)], tol: f64) {
    for (name, e) in errs {
        assert!(*e < tol, "{name}: relative error {e:e}");
    }
}

#[test]
fn dgcnn_gradients_match_finite_differences_in_both_norm_modes() {
    let grid = CellComplex::grid(&[4, 4]).unwrap();
    let arch: ArchSpec = "dgcnn:2/2/1:*s".parse().unwrap();
    let (params, batch) = random_batch(&arch, &grid, 2, 3, 5, 11);
    for mode in [BnMode::Batch, BnMode::Running] {
        let errs = finite_difference_errors(&params, &batch, mode, 1e-5, 1e-6);
        assert_all_below(&errs, 1e-5);
    }
}

#[test]
fn cnn_and_reduced_graph_gradients_match_finite_differences() {
    let grid = CellComplex::grid(&[4, 4]).unwrap();
    let arch: ArchSpec = "cnn:2/1/2".parse().unwrap();
    let (params, batch) = random_batch(&arch, &grid, 1, 2, 4, 5);
    assert_all_below(&finite_difference_errors(&params, &batch, BnMode::Batch, 1e-5, 1e-6), 1e-5);

    let spec = PolycrystalSpec {
        dims: vec![8, 8],
        grains: GrainCount::fixed(6),
        lloyd_steps: 0,
        orientation: OrientationMode::InPlaneAngle,
    };
    let micro = generate_polycrystal(&spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let g = segment_to_grain_graph(&micro, GrainFeatureSet::first(4).unwrap()).unwrap();
    let arch: ArchSpec = "rgcnn:2/2/1".parse().unwrap();
    let (params, batch) = random_batch(&arch, &g.complex, 4, 2, 4, 9);
    assert_all_below(&finite_difference_errors(&params, &batch, BnMode::Batch, 1e-5, 1e-6), 1e-5);
}

#[test]
fn zero_loss_batch_has_zero_gradient() {
    let grid = CellComplex::grid(&[3, 3]).unwrap();
    let arch: ArchSpec = "dgcnn:2/1/1".parse().unwrap();
    let (params, batch) = random_batch(&arch, &grid, 1, 2, 4, 1);
    let refs: Vec<SampleRef<'_, f64>> = batch.iter().map(|p| p.as_ref()).collect();
    let (outs, _) = forward_batch(&params, &refs, BnMode::Batch).unwrap();
    let exact: Vec<Prepared<f64>> = batch
        .iter()
        .zip(outs)
        .map(|(p, o)| Prepared {
            target: o,
            slots: Arc::clone(&p.slots),
            ..p.clone()
        })
        .collect();
    let er: Vec<&Prepared<f64>> = exact.iter().collect();
    let (loss, grads, _) = loss_and_grad(&params, &er, BnMode::Batch).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.flatten().iter().all(|&g| g == 0.0));
}

#[test]
fn linear_layer_quadratic_loss_gradient_is_closed_form() {
    let layer = Dense {
        weight: array![[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]],
        bias: Array1::zeros(2),
        activation: Activation::Linear,
    };
    let x = array![1.0, -2.0, 0.5];
    let target = array![0.3, -0.7];
    let y = dgcnn::filters::dense(&x, &layer).unwrap();
    let dy = (&y - &target) * 2.0;
    let (dw, _, _) = dense_backward(&x, &y, &layer, &dy);
    // Input-major storage: dw[i][j] = 2 (y_j - t_j) x_i.
    for i in 0..3 {
        for j in 0..2 {
            let expected: f64 = 2.0 * (y[j] - target[j]) * x[i];
            assert!((dw[[i, j]] - expected).abs() < 1e-15);
        }
    }
}
