mod common;

use common::{random_dims, random_matrix, random_network, random_permutation};
use groupreg::model::NetworkParams;
use groupreg::prune::{active_neurons, compare_outputs, prune_network};
use groupreg::tensor::{Matrix, RngStream};
use proptest::prelude::*;

fn spectral_norm(w: &Matrix) -> f64 {
    // power iteration on WᵀW
    let mut v = vec![1.0 / (w.cols() as f64).sqrt(); w.cols()];
    let mut sigma = 0.0;
    for _ in 0..200 {
        let wv = Matrix::new(1, w.cols(), v.clone()).unwrap().matmul_t(w).unwrap();
        let wtwv = wv.matmul(w).unwrap();
        let n = wtwv.frobenius_norm();
        if n == 0.0 {
            return 0.0;
        }
        v = wtwv.data().iter().map(|x| x / n).collect();
        sigma = n.sqrt();
    }
    sigma
}

fn clamp_away_from_zero(net: &mut NetworkParams) {
    for layer in &mut net.layers {
        for w in layer.weights.data_mut() {
            *w = w.signum() * w.abs().max(0.05);
        }
    }
}

#[test]
fn exact_zero_groups_on_many_probes() {
    let mut rng = RngStream::new(4);
    let dims = [6, 8, 7, 3];
    let mut net = random_network(&dims, true, 4);
    clamp_away_from_zero(&mut net);
    net.layers[1].weights.row_mut(2).fill(0.0);
    net.layers[2].weights.row_mut(5).fill(0.0);
    for r in 0..6 {
        net.layers[0].weights.set(r, 4, 0.0);
    }
    let (pruned, report) = prune_network(&net, 0.0).unwrap();
    assert_eq!(pruned.dims(), vec![6, 6, 6, 3]);
    assert_eq!(report.layers[0].kept, vec![0, 1, 3, 5, 6, 7]);
    for l in &report.layers {
        assert_eq!(l.kept.len() + l.pruned, l.original);
    }
    let probe = random_matrix(&mut rng, 100, 6);
    assert!(compare_outputs(&net, &pruned, &probe).unwrap() <= 1e-12);
    let bn = pruned.layers[0].bn.as_ref().unwrap();
    assert_eq!(bn.gamma.len(), 6);
    assert_eq!(bn.running_var.len(), 6);
}

#[test]
fn relu_constant_absorption_example() {
    let mut net = random_network(&[2, 3, 2], false, 8);
    for r in 0..2 {
        net.layers[0].weights.set(r, 1, 0.0);
    }
    net.layers[0].bias[1] = 0.5;
    let w_row = net.layers[1].weights.row(1).to_vec();
    let b_before = net.layers[1].bias.clone();
    let (pruned, report) = prune_network(&net, 1e-3).unwrap();
    for k in 0..2 {
        assert!((pruned.layers[1].bias[k] - (b_before[k] + 0.5 * w_row[k])).abs() < 1e-15);
        assert!((report.layers[0].absorbed_bias[k] - 0.5 * w_row[k]).abs() < 1e-15);
    }
    let probe = random_matrix(&mut RngStream::new(1), 20, 2);
    assert!(compare_outputs(&net, &pruned, &probe).unwrap() <= 1e-12);
}

#[test]
fn boston_shaped_report_has_four_entries() {
    let net = random_network(&[13, 40, 30, 1], true, 0);
    assert_eq!(active_neurons(&net, 1e-3), vec![13, 40, 30, 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pruning_is_idempotent(seed in 0u64..1000, bn in any::<bool>()) {
        let mut rng = RngStream::new(seed);
        let dims = random_dims(&mut rng, 4, 2, 2);
        let mut net = random_network(&dims, bn, seed);
        for h in 1..dims.len() - 1 {
            let j = random_permutation(&mut rng, dims[h])[0];
            net.layers[h].weights.row_mut(j).fill(0.0);
        }
        let (once, _) = prune_network(&net, 1e-3).unwrap();
        let (twice, report) = prune_network(&once, 1e-3).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert!(report.layers.iter().all(|l| l.pruned == 0));
    }

    /// Removing near-zero outgoing groups of one hidden layer moves the
    /// output by at most Σ |a_j|·‖row_j‖ times the downstream operator norms.
    #[test]
    fn near_zero_pruning_is_bounded(seed in 0u64..1000, scale in 1e-6f64..1e-4) {
        let mut rng = RngStream::new(seed);
        let dims = [4, 6, 5, 3];
        let mut net = random_network(&dims, false, seed);
        clamp_away_from_zero(&mut net);
        let victims: Vec<usize> = random_permutation(&mut rng, 6).into_iter().take(2).collect();
        for &j in &victims {
            for w in net.layers[1].weights.row_mut(j) {
                *w *= scale;
            }
        }
        let probe = random_matrix(&mut rng, 50, 4);
        let (pruned, _) = prune_network(&net, 1e-3).unwrap();
        prop_assert_eq!(pruned.dims(), vec![4, 4, 5, 3]);
        let hidden = net.layers[0].weights.clone();
        let mut act = probe.matmul(&hidden).unwrap();
        act.add_row_vector(&net.layers[0].bias);
        let act = act.map(|v| v.max(0.0));
        let downstream = spectral_norm(&net.layers[2].weights);
        for r in 0..probe.rows() {
            let x = Matrix::new(1, 4, probe.row(r).to_vec()).unwrap();
            let diff = net.predict(&x).unwrap().max_abs_diff(&pruned.predict(&x).unwrap()).unwrap();
            let pert: f64 = victims
                .iter()
                .map(|&j| act.get(r, j).abs() * net.layers[1].weights.row(j).iter().map(|w| w * w).sum::<f64>().sqrt())
                .sum();
            prop_assert!(diff <= pert * downstream * (1.0 + 1e-9) + 1e-15, "{} > {}", diff, pert * downstream);
        }
    }
}
