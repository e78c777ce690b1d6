//! Linear statistical shape models.
//!
//! A model is the affine map `f(α) = mean + U α` where the columns of `U` are
//! eigenvectors scaled by the square roots of their eigenvalues. Under the
//! standard normal prior on `α` this induces a Gaussian over shapes whose
//! covariance `U Uᵀ` is never formed explicitly; every density and projection
//! computation happens in coefficient space.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for the orthogonality and column-norm checks on a basis.
pub const BASIS_TOLERANCE: f64 = 1e-8;

/// Components whose eigenvalue falls below this fraction of the largest are
/// treated as numerically zero by [`build_pca`].
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// A point set in dense correspondence, flattened as `x₀, y₀[, z₀], x₁, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    data: DVector<f64>,
    d: usize,
    n: usize,
}

impl Shape {
    pub fn new(data: impl Into<DVector<f64>>, d: usize, n: usize) -> Result<Self> {
        let data = data.into();
        if d != 2 && d != 3 {
            return Err(Error::Input(format!("spatial dimension must be 2 or 3, got {d}")));
        }
        if n == 0 {
            return Err(Error::Input("a shape needs at least one point".into()));
        }
        if data.len() != d * n {
            return Err(Error::Dimension(format!(
                "shape data has {} entries, expected d·n = {}",
                data.len(),
                d * n
            )));
        }
        Ok(Shape { data, d, n })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let d = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Dimension("points have differing dimension".into()));
        }
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        Shape::new(flat, d, points.len())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Ambient dimension `d·n`.
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data.as_slice()[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.as_slice().chunks_exact(self.d)
    }

    pub fn into_data(self) -> DVector<f64> {
        self.data
    }

    pub(crate) fn with_data(&self, data: DVector<f64>) -> Shape {
        debug_assert_eq!(data.len(), self.data.len());
        Shape {
            data,
            d: self.d,
            n: self.n,
        }
    }

    pub fn same_layout(&self, other: &Shape) -> bool {
        self.d == other.d && self.n == other.n
    }

    pub(crate) fn check_layout(&self, d: usize, n: usize) -> Result<()> {
        if self.d != d || self.n != n {
            return Err(Error::Dimension(format!(
                "shape has layout (d={}, n={}), expected (d={d}, n={n})",
                self.d, self.n
            )));
        }
        Ok(())
    }
}

/// Latent coordinates `α` of a shape in some model.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients(DVector<f64>);

impl Coefficients {
    pub fn new(values: impl Into<DVector<f64>>) -> Self {
        Coefficients(values.into())
    }

    pub fn zeros(q: usize) -> Self {
        Coefficients(DVector::zeros(q))
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Coefficients(DVector::from_column_slice(values))
    }

    /// Draws `α ~ N(0, I)`.
    pub fn standard_normal<R: Rng + ?Sized>(q: usize, rng: &mut R) -> Self {
        Coefficients(DVector::from_fn(q, |_, _| rng.sample(StandardNormal)))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Coefficients {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Log of the unnormalized standard normal density of a coefficient vector.
pub fn log_prior(alpha: &Coefficients) -> f64 {
    -0.5 * alpha.norm_squared()
}

/// How many principal components [`build_pca`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum QPolicy {
    /// Keep at most this many leading components.
    Fixed(usize),
    /// Keep the fewest leading components whose eigenvalues account for at
    /// least this fraction of the retained variance. `1.0` keeps everything
    /// above the numerical floor.
    Variance(f64),
}

impl QPolicy {
    pub const ALL: QPolicy = QPolicy::Variance(1.0);

    pub fn validate(&self) -> Result<()> {
        match *self {
            QPolicy::Fixed(0) => Err(Error::Input("fixed q policy needs at least one component".into())),
            QPolicy::Variance(f) if !(f > 0.0 && f <= 1.0) => {
                Err(Error::Input(format!("variance fraction must lie in (0, 1], got {f}")))
            }
            _ => Ok(()),
        }
    }

    fn retain(&self, eigenvalues: &[f64]) -> usize {
        match *self {
            QPolicy::Fixed(k) => k.min(eigenvalues.len()),
            QPolicy::Variance(fraction) => {
                let total: f64 = eigenvalues.iter().sum();
                let mut acc = 0.0;
                for (i, l) in eigenvalues.iter().enumerate() {
                    acc += l;
                    if acc >= fraction * total * (1.0 - 1e-12) {
                        return i + 1;
                    }
                }
                eigenvalues.len()
            }
        }
    }
}

impl fmt::Display for QPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QPolicy::Fixed(k) => write!(f, "fixed:{k}"),
            QPolicy::Variance(v) if *v == 1.0 => write!(f, "all"),
            QPolicy::Variance(v) => write!(f, "variance:{v}"),
        }
    }
}

impl FromStr for QPolicy {
    type Err = Error;

    /// Accepts `all`, `fixed:<k>` or `variance:<fraction>`.
    fn from_str(s: &str) -> Result<Self> {
        let policy = match s.split_once(':') {
            None if s == "all" => QPolicy::ALL,
            Some(("fixed", k)) => QPolicy::Fixed(
                k.parse()
                    .map_err(|_| Error::Input(format!("bad component count in q policy '{s}'")))?,
            ),
            Some(("variance", v)) => QPolicy::Variance(
                v.parse()
                    .map_err(|_| Error::Input(format!("bad variance fraction in q policy '{s}'")))?,
            ),
            _ => {
                return Err(Error::Input(format!(
                    "unknown q policy '{s}' (expected all, fixed:<k> or variance:<fraction>)"
                )))
            }
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Affine subspace `mean + span(basis)` equipped with the Gaussian
/// `N(mean, basis·basisᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    mean: Shape,
    /// Scaled eigenvectors `√λᵢ uᵢ`, one per column.
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl ShapeModel {
    /// Builds a model from a mean, a basis of scaled eigenvectors and the
    /// matching eigenvalues, validating every structural invariant.
    pub fn new(mean: Shape, basis: DMatrix<f64>, eigenvalues: DVector<f64>) -> Result<Self> {
        let dim = mean.dim();
        let q = eigenvalues.len();
        if basis.nrows() != dim {
            return Err(Error::Dimension(format!(
                "basis has {} rows, mean has {dim} entries",
                basis.nrows()
            )));
        }
        if basis.ncols() != q {
            return Err(Error::Dimension(format!(
                "basis has {} columns but {q} eigenvalues were given",
                basis.ncols()
            )));
        }
        if q > dim {
            return Err(Error::Dimension(format!("q = {q} exceeds ambient dimension {dim}")));
        }
        for (i, &l) in eigenvalues.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Construction(format!("eigenvalue {i} is not strictly positive: {l}")));
            }
            if i > 0 && l > eigenvalues[i - 1] {
                return Err(Error::Construction("eigenvalues must be sorted in descending order".into()));
            }
        }
        if basis.iter().chain(mean.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::Construction("model contains non-finite values".into()));
        }
        for i in 0..q {
            let ci = basis.column(i);
            let ni = ci.norm_squared();
            if (ni - eigenvalues[i]).abs() > BASIS_TOLERANCE * eigenvalues[i] {
                return Err(Error::Construction(format!(
                    "basis column {i} has squared norm {ni}, expected eigenvalue {}",
                    eigenvalues[i]
                )));
            }
            for j in 0..i {
                let cj = basis.column(j);
                let dot = ci.dot(&cj);
                if dot.abs() > BASIS_TOLERANCE * (ni * cj.norm_squared()).sqrt() {
                    return Err(Error::Construction(format!(
                        "basis columns {j} and {i} are not orthogonal (dot = {dot:e})"
                    )));
                }
            }
        }
        Ok(ShapeModel {
            mean,
            basis,
            eigenvalues,
        })
    }

    /// Builds a model from orthonormal directions, scaling column `i` by `√λᵢ`.
    pub fn from_orthonormal(mean: Shape, directions: DMatrix<f64>, eigenvalues: DVector<f64>) -> Result<Self> {
        if directions.ncols() != eigenvalues.len() {
            return Err(Error::Dimension(format!(
                "{} directions but {} eigenvalues",
                directions.ncols(),
                eigenvalues.len()
            )));
        }
        let mut basis = directions;
        for (mut col, l) in basis.column_iter_mut().zip(eigenvalues.iter()) {
            col *= l.max(0.0).sqrt();
        }
        ShapeModel::new(mean, basis, eigenvalues)
    }

    pub fn mean(&self) -> &Shape {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn d(&self) -> usize {
        self.mean.d()
    }

    pub fn n(&self) -> usize {
        self.mean.n()
    }

    pub fn q(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    /// Unit-length eigenvectors `uᵢ`.
    pub fn unit_basis(&self) -> DMatrix<f64> {
        let mut u = self.basis.clone();
        for (mut col, l) in u.column_iter_mut().zip(self.eigenvalues.iter()) {
            col /= l.sqrt();
        }
        u
    }

    pub fn same_layout(&self, other: &ShapeModel) -> bool {
        self.mean.same_layout(&other.mean)
    }

    pub(crate) fn check_compatible(&self, other: &ShapeModel) -> Result<()> {
        other.mean.check_layout(self.d(), self.n())
    }

    fn check_coefficients(&self, alpha: &Coefficients) -> Result<()> {
        if alpha.len() != self.q() {
            return Err(Error::Dimension(format!(
                "model has q = {} but {} coefficients were given",
                self.q(),
                alpha.len()
            )));
        }
        Ok(())
    }

    /// `mean + U α`.
    pub fn synthesize(&self, alpha: &Coefficients) -> Result<Shape> {
        self.check_coefficients(alpha)?;
        let mut data = self.mean.data().clone();
        data.gemv(1.0, &self.basis, alpha.values(), 1.0);
        Ok(self.mean.with_data(data))
    }

    /// Coefficients of the orthogonal projection of `x` onto the model's
    /// affine span: `α'ᵢ = uᵢᵀ(x − mean) / √λᵢ`, the pseudo-inverse of `U`.
    pub fn project(&self, x: &Shape) -> Result<Coefficients> {
        x.check_layout(self.d(), self.n())?;
        let centered = x.data() - self.mean.data();
        let mut alpha = self.basis.tr_mul(&centered);
        alpha.component_div_assign(&self.eigenvalues);
        Ok(Coefficients(alpha))
    }

    /// Closest shape to `x` inside the model's span.
    pub fn project_shape(&self, x: &Shape) -> Result<Shape> {
        self.synthesize(&self.project(x)?)
    }

    /// Draws a shape from the model's Gaussian.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Shape {
        let alpha = Coefficients::standard_normal(self.q(), rng);
        self.synthesize(&alpha).expect("coefficient length matches q")
    }

    /// Keeps the leading `q_new` components.
    pub fn truncate(&self, q_new: usize) -> Result<ShapeModel> {
        if q_new == 0 || q_new > self.q() {
            return Err(Error::Input(format!(
                "cannot truncate a q = {} model to {q_new} components",
                self.q()
            )));
        }
        Ok(ShapeModel {
            mean: self.mean.clone(),
            basis: self.basis.columns(0, q_new).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, q_new).into_owned(),
        })
    }

    /// Applies `x ↦ s R x + t` point-wise to the mean and `s R` to every
    /// basis column. Eigenvalues scale by `s²`.
    pub fn transformed(&self, similarity: &Similarity) -> Result<ShapeModel> {
        if similarity.rotation.nrows() != self.d() {
            return Err(Error::Dimension(format!(
                "similarity acts on {}-d points, model has d = {}",
                similarity.rotation.nrows(),
                self.d()
            )));
        }
        let d = self.d();
        let sr = &similarity.rotation * similarity.scale;
        let apply_linear = |v: &mut [f64]| {
            for chunk in v.chunks_exact_mut(d) {
                let p = DVector::from_column_slice(chunk);
                let q = &sr * p;
                chunk.copy_from_slice(q.as_slice());
            }
        };
        let mut mean = self.mean.data().clone();
        apply_linear(mean.as_mut_slice());
        for chunk in mean.as_mut_slice().chunks_exact_mut(d) {
            for (c, t) in chunk.iter_mut().zip(similarity.translation.iter()) {
                *c += t;
            }
        }
        let mut basis = self.basis.clone();
        for mut col in basis.column_iter_mut() {
            apply_linear(col.as_mut_slice());
        }
        let s2 = similarity.scale * similarity.scale;
        Ok(ShapeModel {
            mean: self.mean.with_data(mean),
            basis,
            eigenvalues: &self.eigenvalues * s2,
        })
    }
}

fn check_samples(samples: &[Shape], min: usize) -> Result<(usize, usize)> {
    if samples.len() < min {
        return Err(Error::Input(format!(
            "need at least {min} samples, got {}",
            samples.len()
        )));
    }
    let (d, n) = (samples[0].d(), samples[0].n());
    for s in samples {
        s.check_layout(d, n)?;
    }
    Ok((d, n))
}

fn sample_mean(samples: &[Shape]) -> DVector<f64> {
    let mut mean = DVector::zeros(samples[0].dim());
    for s in samples {
        mean += s.data();
    }
    mean / samples.len() as f64
}

/// Orthonormal basis of the span of `vectors`, built by Gram-Schmidt with one
/// reorthogonalisation pass. Vectors whose residual is below `rel_tol` times
/// the largest input norm are treated as already spanned.
fn span_basis(vectors: &[DVector<f64>], rel_tol: f64) -> Vec<DVector<f64>> {
    let dim = vectors.first().map_or(0, |v| v.len());
    let scale = vectors.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    if scale == 0.0 {
        return basis;
    }
    for v in vectors {
        if basis.len() == dim {
            break;
        }
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&r);
                r.axpy(-c, b, 1.0);
            }
        }
        let norm = r.norm();
        if norm > rel_tol * scale {
            basis.push(r / norm);
        }
    }
    basis
}

/// Principal component analysis of a set of shapes.
///
/// The centred samples are first expressed in an orthonormal basis of their
/// own span, so the eigenproblem is only as large as the data's rank. This
/// keeps PCA of a few thousand samples in a ~10⁴-dimensional ambient space
/// cheap whenever the samples are low-rank, which posterior samples always are.
pub fn build_pca(samples: &[Shape], policy: QPolicy) -> Result<ShapeModel> {
    if samples.len() < 2 {
        return Err(Error::Construction(format!(
            "PCA needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    policy.validate()?;
    check_samples(samples, 2)?;
    let mean = sample_mean(samples);
    let centred: Vec<DVector<f64>> = samples.iter().map(|s| s.data() - &mean).collect();
    let span = span_basis(&centred, 1e-9);
    if span.is_empty() {
        return Err(Error::Construction("samples are identical; covariance has rank 0".into()));
    }
    let r = span.len();
    let dim = mean.len();
    let mut w = DMatrix::zeros(dim, r);
    for (j, b) in span.iter().enumerate() {
        w.set_column(j, b);
    }
    let mut coords = DMatrix::zeros(r, samples.len());
    for (j, c) in centred.iter().enumerate() {
        coords.set_column(j, &w.tr_mul(c));
    }
    let cov = (&coords * coords.transpose()) / (samples.len() - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    if !(top > 0.0) {
        return Err(Error::Construction("covariance has rank 0".into()));
    }
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] >= EIGENVALUE_FLOOR * top)
        .collect();
    let values: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q = policy.retain(&values);
    let mut directions = DMatrix::zeros(dim, q);
    for (col, &i) in kept.iter().take(q).enumerate() {
        let mut u = &w * eig.eigenvectors.column(i);
        u /= u.norm();
        // Deterministic sign: largest-magnitude entry positive.
        let imax = u.iamax();
        if u[imax] < 0.0 {
            u.neg_mut();
        }
        directions.set_column(col, &u);
    }
    let mean = samples[0].with_data(mean);
    ShapeModel::from_orthonormal(mean, directions, DVector::from_vec(values[..q].to_vec()))
}

/// Point-wise similarity transform `p ↦ scale · rotation · p + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub rotation: DMatrix<f64>,
    pub scale: f64,
    pub translation: DVector<f64>,
}

impl Similarity {
    pub fn identity(d: usize) -> Self {
        Similarity {
            rotation: DMatrix::identity(d, d),
            scale: 1.0,
            translation: DVector::zeros(d),
        }
    }

    pub fn apply(&self, shape: &Shape) -> Shape {
        let d = shape.d();
        let mut data = shape.data().clone();
        for chunk in data.as_mut_slice().chunks_exact_mut(d) {
            let p = DVector::from_column_slice(chunk);
            let q = &self.rotation * p * self.scale + &self.translation;
            chunk.copy_from_slice(q.as_slice());
        }
        shape.with_data(data)
    }

    /// Rotation angle in radians (2-d) or about the rotation axis (3-d).
    pub fn rotation_angle(&self) -> f64 {
        let trace = self.rotation.trace();
        let d = self.rotation.nrows() as f64;
        // 2-d: trace = 2cosθ; 3-d: trace = 1 + 2cosθ.
        let c = if d == 2.0 { trace / 2.0 } else { (trace - 1.0) / 2.0 };
        c.clamp(-1.0, 1.0).acos()
    }
}

/// Least-squares similarity transform mapping the points of `moving` onto
/// those of `fixed` (Umeyama's method, reflections excluded).
pub fn similarity_transform(moving: &Shape, fixed: &Shape) -> Result<Similarity> {
    fixed.check_layout(moving.d(), moving.n())?;
    let d = moving.d();
    let n = moving.n();
    let m = DMatrix::from_column_slice(d, n, moving.as_slice());
    let f = DMatrix::from_column_slice(d, n, fixed.as_slice());
    let m_bar = m.column_mean();
    let f_bar = f.column_mean();
    let mc = DMatrix::from_fn(d, n, |i, j| m[(i, j)] - m_bar[i]);
    let fc = DMatrix::from_fn(d, n, |i, j| f[(i, j)] - f_bar[i]);
    let var_m = mc.norm_squared();
    let var_f = fc.norm_squared();
    let scale_ref = m_bar.norm_squared().max(f_bar.norm_squared()).max(1.0);
    if var_m <= 1e-24 * scale_ref || var_f <= 1e-24 * scale_ref {
        return Err(Error::Alignment("mean shape points are all coincident".into()));
    }
    let h = &fc * mc.transpose();
    let (u, sigma, v_t) = match d {
        2 => {
            let svd = Matrix2::from_iterator(h.iter().copied()).svd(true, true);
            (
                DMatrix::from_iterator(2, 2, svd.u.unwrap().iter().copied()),
                DVector::from_iterator(2, svd.singular_values.iter().copied()),
                DMatrix::from_iterator(2, 2, svd.v_t.unwrap().iter().copied()),
            )
        }
        3 => {
            let svd = Matrix3::from_iterator(h.iter().copied()).svd(true, true);
            (
                DMatrix::from_iterator(3, 3, svd.u.unwrap().iter().copied()),
                DVector::from_iterator(3, svd.singular_values.iter().copied()),
                DMatrix::from_iterator(3, 3, svd.v_t.unwrap().iter().copied()),
            )
        }
        _ => return Err(Error::Unsupported(format!("alignment in {d} dimensions"))),
    };
    let mut correction = DVector::from_element(d, 1.0);
    if (&u * &v_t).determinant() < 0.0 {
        correction[d - 1] = -1.0;
    }
    let rotation = &u * DMatrix::from_diagonal(&correction) * &v_t;
    let scale = sigma.dot(&correction) / var_m;
    let translation = &f_bar - &rotation * &m_bar * scale;
    Ok(Similarity {
        rotation,
        scale,
        translation,
    })
}

/// Aligns `moving` to `fixed` by the similarity transform that best maps
/// `moving`'s mean onto `fixed`'s mean.
pub fn align_procrustes(moving: &ShapeModel, fixed: &ShapeModel) -> Result<ShapeModel> {
    moving.check_compatible(fixed)?;
    let t = similarity_transform(moving.mean(), fixed.mean())?;
    moving.transformed(&t)
}

/// Per-vertex variance: the unbiased sample variance of each coordinate,
/// summed over the `d` coordinates of the vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct PerVertexVariance(pub Vec<f64>);

impl PerVertexVariance {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn per_vertex_variance(samples: &[Shape]) -> Result<PerVertexVariance> {
    let (d, n) = check_samples(samples, 2)?;
    let mean = sample_mean(samples);
    let mut sq = DVector::<f64>::zeros(d * n);
    for s in samples {
        let c = s.data() - &mean;
        sq += c.component_mul(&c);
    }
    sq /= (samples.len() - 1) as f64;
    Ok(PerVertexVariance(
        sq.as_slice().chunks_exact(d).map(|c| c.iter().sum()).collect(),
    ))
}
