use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{Shape, ShapeModel};

/// Model with a random orthonormal basis, random descending eigenvalues and a
/// random mean.
pub(crate) fn random_model(rng: &mut ChaCha8Rng, d: usize, n: usize, q: usize) -> ShapeModel {
    let dim = d * n;
    let g = DMatrix::from_fn(dim, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dirs = if q == 0 {
        DMatrix::zeros(dim, 0)
    } else {
        g.qr().q().columns(0, q).into_owned()
    };
    let mut eig: Vec<f64> = (0..q).map(|_| rng.random_range(0.1..4.0)).collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let mean = Shape::new(DVector::from_fn(dim, |_, _| rng.sample(StandardNormal)), d, n).unwrap();
    ShapeModel::from_orthonormal(mean, dirs, DVector::from_vec(eig)).unwrap()
}
