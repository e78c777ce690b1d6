//! Subspace distances, reconstruction errors and the union baseline.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::avg_distance;
use crate::model::{build_pca, QPolicy, Shape, ShapeModel};

/// Tolerance on `BᵀB = I` accepted by [`AffineSubspace::new`].
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-10;

/// Displacements whose component outside the span is shorter than this are
/// treated as lying in the span.
pub const DISPLACEMENT_TOLERANCE: f64 = 1e-10;

/// Sines below this are round-off from projecting a span onto itself and are
/// reported as zero angles.
pub const ANGLE_TOLERANCE: f64 = 1e-12;

/// `{ displacement + basis·t }` with orthonormal basis columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSubspace {
    basis: DMatrix<f64>,
    displacement: DVector<f64>,
}

impl AffineSubspace {
    pub fn new(basis: DMatrix<f64>, displacement: DVector<f64>) -> Result<Self> {
        if basis.nrows() != displacement.len() {
            return Err(Error::Dimension(format!(
                "basis has {} rows but displacement has length {}",
                basis.nrows(),
                displacement.len()
            )));
        }
        let gram = basis.transpose() * &basis;
        let k = basis.ncols();
        let off = (gram - DMatrix::<f64>::identity(k, k)).abs().max();
        if k > 0 && off > ORTHONORMAL_TOLERANCE {
            return Err(Error::Input(format!(
                "basis columns are not orthonormal (max |BᵀB − I| = {off:e})"
            )));
        }
        Ok(AffineSubspace {
            basis,
            displacement,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn displacement(&self) -> &DVector<f64> {
        &self.displacement
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn ambient(&self) -> usize {
        self.displacement.len()
    }

    /// Keeps the first `k` basis columns.
    pub fn leading(&self, k: usize) -> Result<AffineSubspace> {
        if k > self.k() {
            return Err(Error::Dimension(format!("cannot keep {k} of {} directions", self.k())));
        }
        Ok(AffineSubspace {
            basis: self.basis.columns(0, k).into_owned(),
            displacement: self.displacement.clone(),
        })
    }

    /// Orthonormal `(ambient+1) × (k+1)` embedding of the affine subspace as a
    /// linear one.
    pub fn stiefel_coordinates(&self) -> DMatrix<f64> {
        let (n, k) = (self.ambient(), self.k());
        let b = &self.displacement;
        let residual = b - &self.basis * (self.basis.transpose() * b);
        let rnorm = residual.norm();
        let b0 = if rnorm < DISPLACEMENT_TOLERANCE {
            DVector::zeros(n)
        } else {
            residual / rnorm
        };
        let scale = (1.0 + b0.norm_squared()).sqrt();
        let mut y = DMatrix::zeros(n + 1, k + 1);
        y.view_mut((0, 0), (n, k)).copy_from(&self.basis);
        y.view_mut((0, k), (n, 1)).copy_from(&(b0 / scale));
        y[(n, k)] = 1.0 / scale;
        y
    }
}

/// Unit eigenvectors as basis, mean as displacement.
pub fn to_affine_subspace(model: &ShapeModel) -> AffineSubspace {
    AffineSubspace {
        basis: model.unit_basis(),
        displacement: model.mean().data().clone(),
    }
}

/// Principal angles (ascending) between the column spans of two matrices with
/// orthonormal columns and equal column count.
///
/// Angles come from the cosines `svd(Q₁ᵀQ₂)`, clamped to `[−1, 1]`. Where the
/// cosine is close to 1 the arccosine loses half the digits, so those angles
/// are taken from the sines `svd(Q₂ − Q₁Q₁ᵀQ₂)` instead.
pub fn principal_angles_orthonormal(q1: &DMatrix<f64>, q2: &DMatrix<f64>) -> Vec<f64> {
    let cross = q1.transpose() * q2;
    let mut cos: Vec<f64> = cross.singular_values().iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    cos.sort_by(|a, b| b.total_cmp(a));
    let residual = q2 - q1 * &cross;
    let mut sin: Vec<f64> = residual.singular_values().iter().map(|s| s.clamp(-1.0, 1.0)).collect();
    sin.sort_by(|a, b| a.total_cmp(b));
    cos.iter()
        .zip(&sin)
        .map(|(&c, &s)| match (c * c >= 0.5, s < ANGLE_TOLERANCE) {
            (true, true) => 0.0,
            (true, false) => s.asin(),
            _ => c.acos(),
        })
        .collect()
}

/// The `k + 1` principal angles between two affine subspaces of equal `k`.
pub fn affine_principal_angles(s1: &AffineSubspace, s2: &AffineSubspace) -> Result<Vec<f64>> {
    if s1.ambient() != s2.ambient() {
        return Err(Error::Dimension(format!(
            "ambient dimensions differ ({} vs {})",
            s1.ambient(),
            s2.ambient()
        )));
    }
    if s1.k() != s2.k() {
        return Err(Error::Dimension(format!(
            "subspace dimensions differ ({} vs {}); truncate to a common k first",
            s1.k(),
            s2.k()
        )));
    }
    Ok(principal_angles_orthonormal(
        &s1.stiefel_coordinates(),
        &s2.stiefel_coordinates(),
    ))
}

/// Affine Grassmann distance: Euclidean norm of the principal angles between
/// the Stiefel embeddings.
pub fn grassmann_distance(s1: &AffineSubspace, s2: &AffineSubspace) -> Result<f64> {
    let angles = affine_principal_angles(s1, s2)?;
    Ok(angles.iter().map(|a| a * a).sum::<f64>().sqrt())
}

/// Grassmann distance between two models after truncating both to the
/// smaller number of components.
pub fn model_distance(m1: &ShapeModel, m2: &ShapeModel) -> Result<f64> {
    let k = m1.q().min(m2.q());
    grassmann_distance(
        &to_affine_subspace(m1).leading(k)?,
        &to_affine_subspace(m2).leading(k)?,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionError {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

/// Average per-vertex distance between every sample and its reconstruction
/// by `reference`, summarised by mean and standard deviation.
pub fn reconstruction_error(samples: &[Shape], reference: &ShapeModel) -> Result<ReconstructionError> {
    if samples.is_empty() {
        return Err(Error::Input("reconstruction error needs at least one sample".into()));
    }
    let errors = samples
        .iter()
        .map(|x| avg_distance(&reference.project_shape(x)?, x))
        .collect::<Result<Vec<f64>>>()?;
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(ReconstructionError {
        mean,
        stddev: var.sqrt(),
    })
}

/// PCA over random draws from both models (the extra draw of an odd count
/// goes to `m1`).
pub fn union_model(
    m1: &ShapeModel,
    m2: &ShapeModel,
    n_samples: usize,
    policy: QPolicy,
    seed: u64,
) -> Result<ShapeModel> {
    m1.check_compatible(m2)?;
    if n_samples < 2 {
        return Err(Error::Input("union needs at least two samples".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n1 = n_samples - n_samples / 2;
    let mut samples = Vec::with_capacity(n_samples);
    samples.extend((0..n1).map(|_| m1.sample(&mut rng)));
    samples.extend((0..n_samples / 2).map(|_| m2.sample(&mut rng)));
    build_pca(&samples, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_model;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn line(dir: &[f64], through: &[f64]) -> AffineSubspace {
        let u = DVector::from_column_slice(dir).normalize();
        AffineSubspace::new(DMatrix::from_columns(&[u]), DVector::from_column_slice(through)).unwrap()
    }

    fn axis_model(dir: [f64; 2], lambda: f64) -> ShapeModel {
        let mean = Shape::new(vec![0.0, 0.0], 2, 1).unwrap();
        let u = DVector::from_column_slice(&dir).normalize() * lambda.sqrt();
        ShapeModel::new(mean, DMatrix::from_columns(&[u]), DVector::from_vec(vec![lambda])).unwrap()
    }

    fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() - 0.5);
        g.qr().q().columns(0, k).into_owned()
    }

    #[test]
    fn to_affine_normalises_columns() {
        let s = to_affine_subspace(&axis_model([1.0, 0.0], 4.0));
        assert_relative_eq!(s.basis()[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.basis()[(1, 0)], 0.0, epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 3, 6, 4);
        let s = to_affine_subspace(&m);
        for j in 0..4 {
            assert!((s.basis().column(j).norm() - 1.0).abs() < 1e-12);
        }
        // Mutual projection residuals.
        let p = s.basis() * s.basis().transpose();
        assert!((m.basis() - &p * m.basis()).norm() < 1e-10);
        let scaled = m.basis().clone();
        let pq = &scaled * (scaled.transpose() * &scaled).try_inverse().unwrap() * scaled.transpose();
        assert!((s.basis() - pq * s.basis()).norm() < 1e-10);
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = to_affine_subspace(&random_model(&mut rng, 3, 10, 5));
        assert_eq!(grassmann_distance(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn perpendicular_lines_through_origin() {
        let x = line(&[1.0, 0.0], &[0.0, 0.0]);
        let y = line(&[0.0, 1.0], &[0.0, 0.0]);
        assert_relative_eq!(grassmann_distance(&x, &y).unwrap(), FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(model_distance(&axis_model([1.0, 0.0], 1.0), &axis_model([0.0, 1.0], 3.0)).unwrap(), FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn parallel_lines_differ_by_affine_angle() {
        // y = 0 and y = 1 in the plane: embedded as planes spanned by
        // (1,0,0) and (0,1,1)/√2, an angle of π/4 to (0,0,1).
        let a = line(&[1.0, 0.0], &[0.0, 0.0]);
        let b = line(&[1.0, 0.0], &[5.0, 1.0]);
        assert_relative_eq!(grassmann_distance(&a, &b).unwrap(), std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
    }

    #[test]
    fn displacement_inside_span_is_ignored() {
        let a = line(&[1.0, 0.0], &[0.0, 0.0]);
        let b = line(&[1.0, 0.0], &[3.0, 0.0]);
        assert!(grassmann_distance(&a, &b).unwrap() < 1e-12);
        let y = a.stiefel_coordinates();
        assert_relative_eq!(y[(2, 1)], 1.0);
    }

    #[test]
    fn unequal_dimension_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = to_affine_subspace(&random_model(&mut rng, 2, 5, 3));
        let b = to_affine_subspace(&random_model(&mut rng, 2, 5, 2));
        assert!(matches!(grassmann_distance(&a, &b), Err(Error::Dimension(_))));
        assert!(AffineSubspace::new(DMatrix::from_element(2, 1, 1.0), DVector::zeros(2)).is_err());
    }

    #[test]
    fn linear_angles_match_direct_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(6..40);
            let k = rng.random_range(1..=n / 2);
            let a = random_orthonormal(&mut rng, n, k);
            let b = random_orthonormal(&mut rng, n, k);
            let s1 = AffineSubspace::new(a.clone(), DVector::zeros(n)).unwrap();
            let s2 = AffineSubspace::new(b.clone(), DVector::zeros(n)).unwrap();
            let mut direct: Vec<f64> = (b.transpose() * &a).singular_values().iter().map(|c| c.min(1.0).acos()).collect();
            direct.push(0.0);
            direct.sort_by(|x, y| x.total_cmp(y));
            let angles = affine_principal_angles(&s1, &s2).unwrap();
            for (x, y) in angles.iter().zip(&direct) {
                // arccos itself is only accurate to ~1e-8 near zero.
                assert!((x - y).abs() < 1e-7, "{angles:?} vs {direct:?}");
            }
        }
    }

    #[test]
    fn rotation_invariance_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = 12;
            let k = 3;
            let mk = |rng: &mut ChaCha8Rng| {
                let basis = random_orthonormal(rng, n, k);
                let disp = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                AffineSubspace::new(basis, disp).unwrap()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let rot = random_orthonormal(&mut rng, n, n);
            let rotate = |s: &AffineSubspace| AffineSubspace::new(&rot * s.basis(), &rot * s.displacement()).unwrap();
            let dab = grassmann_distance(&a, &b).unwrap();
            assert!((dab - grassmann_distance(&b, &a).unwrap()).abs() < 1e-10);
            assert!((dab - grassmann_distance(&rotate(&a), &rotate(&b)).unwrap()).abs() < 1e-8);
            let dbc = grassmann_distance(&b, &c).unwrap();
            let dac = grassmann_distance(&a, &c).unwrap();
            assert!(dac <= dab + dbc + 1e-8);
        }
    }

    #[test]
    fn reconstruction_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_model(&mut rng, 3, 8, 3);
        let inside: Vec<Shape> = (0..50).map(|_| m.sample(&mut rng)).collect();
        assert!(reconstruction_error(&inside, &m).unwrap().mean < 1e-10);

        // Point (3, 4) against the x-axis model: distance 4.
        let x_axis = axis_model([1.0, 0.0], 1.0);
        let p = Shape::new(vec![3.0, 4.0], 2, 1).unwrap();
        let r = reconstruction_error(std::slice::from_ref(&p), &x_axis).unwrap();
        assert_relative_eq!(r.mean, 4.0, epsilon = 1e-12);
        assert_eq!(r.stddev, 0.0);

        let q = Shape::new(vec![-1.0, -2.0], 2, 1).unwrap();
        let r1 = reconstruction_error(&[p.clone(), q.clone()], &x_axis).unwrap();
        let r2 = reconstruction_error(&[q, p], &x_axis).unwrap();
        assert_eq!(r1, r2);
        assert_relative_eq!(r1.mean, 3.0, epsilon = 1e-12);
        assert_relative_eq!(r1.stddev, 1.0, epsilon = 1e-12);
        assert!(reconstruction_error(&[], &x_axis).is_err());
    }

    #[test]
    fn union_with_self_and_orthogonal_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = random_model(&mut rng, 3, 6, 3);
        let u = union_model(&m, &m, 4000, QPolicy::Fixed(3), 1).unwrap();
        assert!(model_distance(&u, &m).unwrap() < 0.05);

        let x = axis_model([1.0, 0.0], 1.0);
        let y = axis_model([0.0, 1.0], 1.0);
        let u = union_model(&x, &y, 2000, QPolicy::ALL, 2).unwrap();
        assert_eq!(u.q(), 2);
        let plane = AffineSubspace::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(grassmann_distance(&to_affine_subspace(&u), &plane).unwrap() < 0.05);

        let again = union_model(&x, &y, 2000, QPolicy::ALL, 2).unwrap();
        assert_eq!(u, again);
    }
}
