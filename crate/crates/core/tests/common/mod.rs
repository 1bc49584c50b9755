#![allow(dead_code)]

use std::path::{Path, PathBuf};

use groupreg::model::{init_network, LayerSpec, NetworkParams};
use groupreg::tensor::{normal_draws, Matrix, RngStream};

/// Dataset root: `GROUPREG_DATA_DIR` or `<workspace>/data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("GROUPREG_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn random_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, normal_draws(rng, rows * cols, 0.0, 1.0).unwrap()).unwrap()
}

/// Network with randomized biases and batch-norm state, so that every
/// parameter array matters for the output.
pub fn random_network(dims: &[usize], batch_norm: bool, seed: u64) -> NetworkParams {
    let mut net = init_network(&LayerSpec::chain(dims, batch_norm), seed, None).unwrap();
    let mut rng = RngStream::new(seed).fork(99);
    for layer in &mut net.layers {
        for b in &mut layer.bias {
            *b = 0.3 * rng.standard_normal();
        }
        if let Some(bn) = layer.bn.as_mut() {
            for j in 0..bn.gamma.len() {
                bn.gamma[j] = 0.5 + rng.uniform();
                bn.shift[j] = 0.4 * rng.standard_normal();
                bn.running_mean[j] = 0.3 * rng.standard_normal();
                bn.running_var[j] = 0.5 + rng.uniform();
            }
        }
    }
    net
}

/// Random layer widths: `depth` hidden layers between `input` and `output`.
pub fn random_dims(rng: &mut RngStream, input: usize, depth: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    for _ in 0..depth {
        dims.push(3 + (rng.uniform() * 6.0) as usize);
    }
    dims.push(output);
    dims
}

pub fn random_permutation(rng: &mut RngStream, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut p);
    p
}
