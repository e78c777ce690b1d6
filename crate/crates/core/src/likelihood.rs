//! Likelihoods that encode membership of a shape in the intersection of, or
//! the difference between, two models. Everything is in log space with
//! normalising constants dropped; only ratios matter to the sampler.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_prior, Coefficients, Shape, ShapeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// Distance likelihood times projection likelihood.
    Intersection,
    /// Inverted distance likelihood only.
    Difference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    /// Standard deviation of the distance likelihood, in model units.
    pub sigma: f64,
    pub mode: LikelihoodMode,
}

impl LikelihoodConfig {
    pub fn new(sigma: f64, mode: LikelihoodMode) -> Result<Self> {
        let cfg = LikelihoodConfig { sigma, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn intersection(sigma: f64) -> Result<Self> {
        Self::new(sigma, LikelihoodMode::Intersection)
    }

    pub fn difference(sigma: f64) -> Result<Self> {
        Self::new(sigma, LikelihoodMode::Difference)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive and finite, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Mean over vertices of the Euclidean distance between corresponding points.
pub fn avg_distance(x: &Shape, x_prime: &Shape) -> Result<f64> {
    x_prime.check_layout(x.d(), x.n())?;
    Ok(mean_point_norm(
        x.as_slice().iter().zip(x_prime.as_slice()).map(|(a, b)| a - b),
        x.d(),
        x.n(),
    ))
}

/// Mean per-vertex norm of a flattened displacement field.
fn mean_point_norm(values: impl Iterator<Item = f64>, d: usize, n: usize) -> f64 {
    let mut total = 0.0;
    let mut acc = 0.0;
    for (i, v) in values.enumerate() {
        acc += v * v;
        if (i + 1) % d == 0 {
            total += acc.sqrt();
            acc = 0.0;
        }
    }
    total / n as f64
}

/// `−½ (dist/σ)²`.
pub fn log_distance_likelihood(dist: f64, cfg: &LikelihoodConfig) -> f64 {
    let z = dist / cfg.sigma;
    -0.5 * z * z
}

/// `log(1 − exp(−½ (dist/σ)²))`, which is `−∞` at `dist = 0`.
pub fn log_inverted_distance_likelihood(dist: f64, cfg: &LikelihoodConfig) -> f64 {
    let z = dist / cfg.sigma;
    let t = 0.5 * z * z;
    if t < std::f64::consts::LN_2 {
        (-(-t).exp_m1()).ln()
    } else {
        (-(-t).exp()).ln_1p()
    }
}

/// Unnormalised density of the projected shape in the other model.
pub fn log_projection_likelihood(alpha_prime: &Coefficients) -> f64 {
    log_prior(alpha_prime)
}

/// Log-likelihood of `x` given the other model, evaluated through an explicit
/// projection. [`PairLikelihood`] computes the same quantity faster for the
/// sampler's inner loop.
pub fn log_likelihood(x: &Shape, other: &ShapeModel, cfg: &LikelihoodConfig) -> Result<f64> {
    let alpha_prime = other.project(x)?;
    let x_prime = other.synthesize(&alpha_prime)?;
    let dist = avg_distance(x, &x_prime)?;
    Ok(match cfg.mode {
        LikelihoodMode::Intersection => {
            log_distance_likelihood(dist, cfg) + log_projection_likelihood(&alpha_prime)
        }
        LikelihoodMode::Difference => log_inverted_distance_likelihood(dist, cfg),
    })
}

/// Result of evaluating a likelihood at a latent point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub log_likelihood: f64,
    /// Average distance between the shape and its projection into the other
    /// model; the sampler's empirical-ε diagnostic.
    pub distance: f64,
}

/// Relative size below which a residual component counts as lying in the
/// other model's span.
pub const SPAN_TOLERANCE: f64 = 1e-10;

/// A likelihood over the latent space of a source model.
pub trait LatentLikelihood: Sync {
    /// Latent dimension the likelihood is defined on.
    fn dim(&self) -> usize;

    fn evaluate(&self, alpha: &Coefficients) -> Evaluation;
}

/// Likelihood of source-model coefficients with respect to another model.
///
/// Precomputes the affine maps `α ↦ α'` (projection coefficients in the other
/// model) and `α ↦ x − x'` (residual to the other model's span), so each
/// evaluation costs one `dim × q` matrix-vector product and never touches the
/// other model's basis.
#[derive(Debug, Clone)]
pub struct PairLikelihood {
    cfg: LikelihoodConfig,
    d: usize,
    n: usize,
    /// `α' = proj_offset + proj_map · α`.
    proj_offset: DVector<f64>,
    proj_map: DMatrix<f64>,
    /// `x − x' = residual_offset + residual_map · α`.
    residual_offset: DVector<f64>,
    residual_map: DMatrix<f64>,
}

impl PairLikelihood {
    pub fn new(source: &ShapeModel, other: &ShapeModel, cfg: LikelihoodConfig) -> Result<Self> {
        cfg.validate()?;
        source.check_compatible(other)?;
        let delta = source.mean().data() - other.mean().data();
        let mut proj_offset = other.basis().tr_mul(&delta);
        proj_offset.component_div_assign(other.eigenvalues());
        let mut proj_map = other.basis().tr_mul(source.basis());
        for (mut row, l) in proj_map.row_iter_mut().zip(other.eigenvalues().iter()) {
            row /= *l;
        }
        let mut residual_offset = &delta - other.basis() * &proj_offset;
        let mut residual_map = source.basis() - other.basis() * &proj_map;
        // Round-off must not make an in-span component look like a small but
        // non-zero distance; the inverted likelihood tells the two apart.
        for (mut col, src) in residual_map.column_iter_mut().zip(source.basis().column_iter()) {
            if col.norm() <= SPAN_TOLERANCE * src.norm() {
                col.fill(0.0);
            }
        }
        let scale = source.mean().data().norm() + other.mean().data().norm();
        if residual_offset.norm() <= SPAN_TOLERANCE * scale {
            residual_offset.fill(0.0);
        }
        Ok(PairLikelihood {
            cfg,
            d: source.d(),
            n: source.n(),
            proj_offset,
            proj_map,
            residual_offset,
            residual_map,
        })
    }

    pub fn config(&self) -> &LikelihoodConfig {
        &self.cfg
    }

    /// Projection coefficients of `f_source(α)` in the other model.
    pub fn projected_coefficients(&self, alpha: &Coefficients) -> Coefficients {
        let mut a = self.proj_offset.clone();
        a.gemv(1.0, &self.proj_map, alpha.values(), 1.0);
        Coefficients::new(a)
    }

    /// Average distance between `f_source(α)` and its projection.
    pub fn distance(&self, alpha: &Coefficients) -> f64 {
        let mut r = self.residual_offset.clone();
        r.gemv(1.0, &self.residual_map, alpha.values(), 1.0);
        mean_point_norm(r.iter().copied(), self.d, self.n)
    }
}

impl LatentLikelihood for PairLikelihood {
    fn dim(&self) -> usize {
        self.residual_map.ncols()
    }

    fn evaluate(&self, alpha: &Coefficients) -> Evaluation {
        let distance = self.distance(alpha);
        let log_likelihood = match self.cfg.mode {
            LikelihoodMode::Intersection => {
                log_distance_likelihood(distance, &self.cfg)
                    + log_projection_likelihood(&self.projected_coefficients(alpha))
            }
            LikelihoodMode::Difference => log_inverted_distance_likelihood(distance, &self.cfg),
        };
        Evaluation {
            log_likelihood,
            distance,
        }
    }
}

/// Constant likelihood: the posterior equals the standard normal prior.
#[derive(Debug, Clone, Copy)]
pub struct FlatLikelihood {
    pub q: usize,
}

impl LatentLikelihood for FlatLikelihood {
    fn dim(&self) -> usize {
        self.q
    }

    fn evaluate(&self, _alpha: &Coefficients) -> Evaluation {
        Evaluation {
            log_likelihood: 0.0,
            distance: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn axis_model(dir: [f64; 2]) -> ShapeModel {
        let mean = Shape::new(vec![0.0, 0.0], 2, 1).unwrap();
        ShapeModel::new(mean, DMatrix::from_column_slice(2, 1, &dir), DVector::from_vec(vec![1.0])).unwrap()
    }

    fn cfg(sigma: f64) -> LikelihoodConfig {
        LikelihoodConfig::intersection(sigma).unwrap()
    }

    #[test]
    fn sigma_must_be_positive() {
        assert!(LikelihoodConfig::intersection(0.0).is_err());
        assert!(LikelihoodConfig::difference(-1.0).is_err());
        assert!(LikelihoodConfig::difference(f64::NAN).is_err());
    }

    #[test]
    fn avg_distance_examples() {
        let x = Shape::new(vec![0.0, 0.0, 0.0, 0.0], 2, 2).unwrap();
        assert_eq!(avg_distance(&x, &x).unwrap(), 0.0);
        let y = Shape::new(vec![3.0, 4.0, 0.0, 0.0], 2, 2).unwrap();
        assert_relative_eq!(avg_distance(&x, &y).unwrap(), 2.5);
        let z = Shape::new(vec![0.0; 6], 3, 2).unwrap();
        assert!(avg_distance(&x, &z).is_err());
    }

    #[test]
    fn avg_distance_matches_per_vertex_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(d, n) in &[(2usize, 5usize), (3, 40)] {
            let a: Vec<f64> = (0..d * n).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..d * n).map(|_| rng.sample(StandardNormal)).collect();
            let mut brute = 0.0;
            for i in 0..n {
                let mut s = 0.0;
                for k in 0..d {
                    s += (a[i * d + k] - b[i * d + k]).powi(2);
                }
                brute += s.sqrt();
            }
            brute /= n as f64;
            let x = Shape::new(a, d, n).unwrap();
            let y = Shape::new(b, d, n).unwrap();
            assert!((avg_distance(&x, &y).unwrap() - brute).abs() <= 1e-12);
        }
    }

    #[test]
    fn distance_likelihood_values() {
        let c = cfg(0.5);
        assert_eq!(log_distance_likelihood(0.0, &c), 0.0);
        assert_relative_eq!(log_distance_likelihood(0.5, &c), -0.5);
        assert_relative_eq!(log_distance_likelihood(1.5, &c), -4.5);
    }

    #[test]
    fn inverted_distance_likelihood_values() {
        let c = LikelihoodConfig::difference(0.3).unwrap();
        assert_eq!(log_inverted_distance_likelihood(0.0, &c), f64::NEG_INFINITY);
        let half = 0.3 * (2.0 * std::f64::consts::LN_2).sqrt();
        assert_relative_eq!(log_inverted_distance_likelihood(half, &c), -std::f64::consts::LN_2, epsilon = 1e-14);
        let far = log_inverted_distance_likelihood(30.0, &c);
        assert!(far <= 0.0 && far > -1e-300);
        // Tiny distances stay finite and accurate: log(1 - e^{-t}) ≈ log t.
        let tiny = 1e-9 * 0.3;
        let t: f64 = 0.5 * 1e-18;
        assert_relative_eq!(log_inverted_distance_likelihood(tiny, &c), t.ln(), max_relative = 1e-12);
    }

    #[test]
    fn projection_likelihood_is_prior() {
        assert_eq!(log_projection_likelihood(&Coefficients::zeros(4)), 0.0);
        assert_relative_eq!(log_projection_likelihood(&Coefficients::from_slice(&[2.0, 0.0])), -2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let a = Coefficients::standard_normal(6, &mut rng);
            assert_eq!(log_projection_likelihood(&a), log_prior(&a));
        }
    }

    #[test]
    fn log_likelihood_on_axis_toys() {
        let x_axis = axis_model([1.0, 0.0]);
        let y_axis = axis_model([0.0, 1.0]);
        let sigma = 0.2;
        let c = cfg(sigma);
        assert_eq!(log_likelihood(y_axis.mean(), &y_axis, &c).unwrap(), 0.0);
        let d = LikelihoodConfig::difference(sigma).unwrap();
        assert_eq!(log_likelihood(y_axis.mean(), &y_axis, &d).unwrap(), f64::NEG_INFINITY);
        // x = (ε, 0) on the x-axis: its projection onto the y-axis is the
        // origin, so dist = ε (single vertex) and α' = 0.
        let eps = 0.13;
        let x = x_axis.synthesize(&Coefficients::from_slice(&[eps])).unwrap();
        let expected = -0.5 * (eps / sigma).powi(2);
        assert_relative_eq!(log_likelihood(&x, &y_axis, &c).unwrap(), expected, epsilon = 1e-15);
        let pair = PairLikelihood::new(&x_axis, &y_axis, c).unwrap();
        assert_relative_eq!(pair.evaluate(&Coefficients::from_slice(&[eps])).log_likelihood, expected, epsilon = 1e-15);
    }

    #[test]
    fn pair_likelihood_matches_explicit_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = crate::testutil::random_model(&mut rng, 3, 7, 4);
        let b = crate::testutil::random_model(&mut rng, 3, 7, 5);
        for mode in [LikelihoodMode::Intersection, LikelihoodMode::Difference] {
            let c = LikelihoodConfig::new(0.7, mode).unwrap();
            let pair = PairLikelihood::new(&a, &b, c).unwrap();
            for _ in 0..20 {
                let alpha = Coefficients::standard_normal(4, &mut rng);
                let x = a.synthesize(&alpha).unwrap();
                let direct = log_likelihood(&x, &b, &c).unwrap();
                let fast = pair.evaluate(&alpha).log_likelihood;
                assert!((direct - fast).abs() <= 1e-9 * direct.abs().max(1.0), "{direct} vs {fast}");
                let xp = b.project_shape(&x).unwrap();
                assert!((pair.distance(&alpha) - avg_distance(&x, &xp).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn intersection_likelihood_peaks_at_other_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = crate::testutil::random_model(&mut rng, 2, 4, 3);
        let c = cfg(0.1);
        assert_eq!(log_likelihood(m.mean(), &m, &c).unwrap(), 0.0);
        for _ in 0..20 {
            let x = m.sample(&mut rng);
            assert!(log_likelihood(&x, &m, &c).unwrap() < 0.0);
        }
    }

    proptest! {
        #[test]
        fn likelihoods_are_monotone(mut dists in proptest::collection::vec(0.0f64..5.0, 2..40), sigma in 0.01f64..2.0) {
            dists.sort_by(f64::total_cmp);
            let c = cfg(sigma);
            for w in dists.windows(2) {
                prop_assert!(log_distance_likelihood(w[1], &c) <= log_distance_likelihood(w[0], &c));
                prop_assert!(log_inverted_distance_likelihood(w[1], &c) >= log_inverted_distance_likelihood(w[0], &c));
            }
        }

        #[test]
        fn likelihood_and_inverse_sum_to_one(dist in 1e-6f64..10.0, sigma in 0.01f64..2.0) {
            let c = cfg(sigma);
            let inv = log_inverted_distance_likelihood(dist, &c);
            prop_assume!(inv.is_finite());
            let total = log_distance_likelihood(dist, &c).exp() + inv.exp();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
