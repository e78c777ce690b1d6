//! Synthetic ground truth: five-pointed stars and random basis splits.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_pca, QPolicy, Shape, ShapeModel};

/// Endpoints of half-open angular intervals are excluded by this many degrees.
pub const HALF_OPEN_MARGIN_DEG: f64 = 1e-6;

/// θᵢ = 90° + i·144°, reduced to [0°, 360°).
pub const DEFAULT_BASE_ANGLES: [f64; 5] = [90.0, 234.0, 18.0, 162.0, 306.0];

/// `(a, b, c)` half-widths in degrees for the six reference configurations.
pub const STAR_ROWS: [(f64, f64, f64); 6] = [
    (5.0, 40.0, 20.0),
    (5.0, 20.0, 20.0),
    (10.0, 40.0, 20.0),
    (10.0, 20.0, 20.0),
    (20.0, 60.0, 30.0),
    (40.0, 80.0, 50.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Regular grid over the varied-angle box, endpoints included.
    UniformGrid,
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StarSpec {
    pub r: f64,
    pub base_angles: [f64; 5],
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Shapes per training set. Grids use `⌈√n⌉` steps per varied angle.
    pub n_train: usize,
    pub sampling: Sampling,
    pub seed: u64,
    pub q_policy: QPolicy,
}

impl StarSpec {
    pub const DEFAULT_RADIUS: f64 = 3.0;
    pub const DEFAULT_TRAIN: usize = 2000;

    pub fn new(a: f64, b: f64, c: f64) -> Self {
        StarSpec {
            r: Self::DEFAULT_RADIUS,
            base_angles: DEFAULT_BASE_ANGLES,
            a,
            b,
            c,
            n_train: Self::DEFAULT_TRAIN,
            sampling: Sampling::UniformGrid,
            seed: 0,
            q_policy: QPolicy::ALL,
        }
    }

    /// Reference configuration `row` (1-based, see [`STAR_ROWS`]).
    pub fn row(row: usize) -> Result<Self> {
        let (a, b, c) = *STAR_ROWS
            .get(row.wrapping_sub(1))
            .ok_or_else(|| Error::Spec(format!("star row must be 1..={}, got {row}", STAR_ROWS.len())))?;
        Ok(StarSpec::new(a, b, c))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::Spec(format!("radius must be positive, got {}", self.r)));
        }
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Spec(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.a < self.b && self.a < self.c) {
            return Err(Error::Spec(format!(
                "need a < b and a < c for non-empty differences (a={}, b={}, c={})",
                self.a, self.b, self.c
            )));
        }
        if self.base_angles.iter().any(|t| !t.is_finite()) {
            return Err(Error::Spec("base angles must be finite".into()));
        }
        if self.n_train < 2 {
            return Err(Error::Spec("n_train must be at least 2".into()));
        }
        self.q_policy.validate()
    }
}

/// Star with point `i` at `(r cos θᵢ, r sin θᵢ)`, angles in degrees.
pub fn star_shape(r: f64, angles_deg: &[f64; 5]) -> Shape {
    let data: Vec<f64> = angles_deg
        .iter()
        .flat_map(|t| {
            let t = t.to_radians();
            [r * t.cos(), r * t.sin()]
        })
        .collect();
    Shape::new(data, 2, 5).expect("five 2-D points")
}

/// Angle of point `i` in degrees, in `(−180°, 180°]`.
pub fn point_angle_deg(shape: &Shape, i: usize) -> f64 {
    let p = shape.point(i);
    p[1].atan2(p[0]).to_degrees()
}

/// Signed difference `angle − reference` wrapped into `(−180°, 180°]`.
pub fn angle_offset_deg(angle: f64, reference: f64) -> f64 {
    let mut d = (angle - reference) % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d <= -180.0 {
        d += 360.0;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn closed(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }
    fn open_lo(lo: f64, hi: f64) -> Self {
        Interval {
            lo: lo + HALF_OPEN_MARGIN_DEG,
            hi,
        }
    }
    fn open_hi(lo: f64, hi: f64) -> Self {
        Interval {
            lo,
            hi: hi - HALF_OPEN_MARGIN_DEG,
        }
    }
    fn grid(&self, steps: usize) -> Vec<f64> {
        (0..steps)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / (steps - 1) as f64)
            .collect()
    }
}

/// Offsets (relative to base) for the varied points, one entry per varied point.
fn angle_sets<R: Rng>(spec: &StarSpec, boxes: &[Interval], rng: &mut R) -> Vec<Vec<f64>> {
    match spec.sampling {
        Sampling::UniformRandom => (0..spec.n_train)
            .map(|_| boxes.iter().map(|b| rng.random_range(b.lo..=b.hi)).collect())
            .collect(),
        Sampling::UniformGrid => {
            let steps = if boxes.len() == 1 {
                spec.n_train
            } else {
                (spec.n_train as f64).powf(1.0 / boxes.len() as f64).ceil() as usize
            }
            .max(2);
            let axes: Vec<Vec<f64>> = boxes.iter().map(|b| b.grid(steps)).collect();
            let mut out = vec![Vec::new()];
            for axis in &axes {
                out = out
                    .into_iter()
                    .flat_map(|prefix| {
                        axis.iter().map(move |&v| {
                            let mut p = prefix.clone();
                            p.push(v);
                            p
                        })
                    })
                    .collect();
            }
            out
        }
    }
}

fn star_set<R: Rng>(spec: &StarSpec, varied: &[(usize, Interval)], rng: &mut R) -> Vec<Shape> {
    let boxes: Vec<Interval> = varied.iter().map(|(_, b)| *b).collect();
    angle_sets(spec, &boxes, rng)
        .into_iter()
        .map(|offsets| {
            let mut angles = spec.base_angles;
            for ((i, _), off) in varied.iter().zip(offsets) {
                angles[*i] += off;
            }
            star_shape(spec.r, &angles)
        })
        .collect()
}

/// Training models and ground truth for one star configuration.
#[derive(Debug, Clone)]
pub struct StarModels {
    pub m1: ShapeModel,
    pub m2: ShapeModel,
    pub intersection: ShapeModel,
    /// Shapes of `m1`'s range that lie outside `m2`'s.
    pub diff12: Vec<Shape>,
    /// Shapes of `m2`'s range that lie outside `m1`'s.
    pub diff21: Vec<Shape>,
}

/// Angular ranges (offsets from base, degrees) per generated set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarRanges {
    pub m1_point0: (f64, f64),
    pub m1_point2: (f64, f64),
    pub m2_point0: (f64, f64),
    pub m2_point3: (f64, f64),
    pub intersection_point0: (f64, f64),
}

impl StarSpec {
    pub fn ranges(&self) -> StarRanges {
        StarRanges {
            m1_point0: (-self.a, self.b),
            m1_point2: (-self.a, self.b),
            m2_point0: (-self.c, self.a),
            m2_point3: (-self.c, self.a),
            intersection_point0: (-self.a, self.a),
        }
    }
}

/// `m1` varies points 0 and 2 over `[θ−a, θ+b]`; `m2` varies points 0 and 3
/// over `[θ−c, θ+a]`; the intersection varies point 0 over `[θ₀−a, θ₀+a]`
/// with every other point at its base angle.
pub fn generate_star_models(spec: &StarSpec) -> Result<StarModels> {
    spec.validate()?;
    let (a, b, c) = (spec.a, spec.b, spec.c);
    let rng_for = |stream: u64| {
        let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        rng
    };
    let train1 = star_set(
        spec,
        &[(0, Interval::closed(-a, b)), (2, Interval::closed(-a, b))],
        &mut rng_for(1),
    );
    let train2 = star_set(
        spec,
        &[(0, Interval::closed(-c, a)), (3, Interval::closed(-c, a))],
        &mut rng_for(2),
    );
    let train_i = star_set(spec, &[(0, Interval::closed(-a, a))], &mut rng_for(3));
    let diff12 = star_set(
        spec,
        &[(0, Interval::open_lo(a, b)), (2, Interval::closed(-a, b))],
        &mut rng_for(4),
    );
    let diff21 = star_set(
        spec,
        &[(0, Interval::open_hi(-c, -a)), (3, Interval::closed(-c, a))],
        &mut rng_for(5),
    );
    Ok(StarModels {
        m1: build_pca(&train1, spec.q_policy)?,
        m2: build_pca(&train2, spec.q_policy)?,
        intersection: build_pca(&train_i, spec.q_policy)?,
        diff12,
        diff21,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Point dimension of the generated models.
    pub d: usize,
    /// Total coordinates `d·n`.
    pub ambient_dim: usize,
    /// `(q₁ unique, q₂ unique, shared)` basis sizes.
    pub dims: (usize, usize, usize),
    pub seed: u64,
    /// Eigenvalues for the drawn directions in the order unique-1, unique-2,
    /// shared. `None` gives unit eigenvalues.
    pub eigenvalues: Option<Vec<f64>>,
}

impl SplitSpec {
    /// Eigenvalue used by the evaluation pipeline (stddev 100 per direction).
    /// Unit eigenvalues make σ = 0.3 far wider than the models' spread in
    /// high ambient dimension, so the likelihood barely constrains anything.
    pub const EVAL_EIGENVALUE: f64 = 1e4;

    pub fn new(ambient_dim: usize, dims: (usize, usize, usize), seed: u64) -> Self {
        SplitSpec {
            d: 3,
            ambient_dim,
            dims,
            seed,
            eigenvalues: None,
        }
    }

    /// Same eigenvalue for every direction.
    pub fn with_constant_eigenvalue(mut self, lambda: f64) -> Self {
        self.eigenvalues = Some(vec![lambda; self.total()]);
        self
    }

    fn total(&self) -> usize {
        self.dims.0 + self.dims.1 + self.dims.2
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.d, 2 | 3) {
            return Err(Error::Spec(format!("d must be 2 or 3, got {}", self.d)));
        }
        if self.ambient_dim == 0 || !self.ambient_dim.is_multiple_of(self.d) {
            return Err(Error::Spec(format!(
                "ambient dimension {} is not a positive multiple of d={}",
                self.ambient_dim, self.d
            )));
        }
        if self.total() > self.ambient_dim {
            return Err(Error::Spec(format!(
                "{} basis vectors do not fit in ambient dimension {}",
                self.total(),
                self.ambient_dim
            )));
        }
        if self.dims.0 + self.dims.2 == 0 || self.dims.1 + self.dims.2 == 0 {
            return Err(Error::Spec("each model needs at least one basis vector".into()));
        }
        if let Some(ev) = &self.eigenvalues {
            if ev.len() != self.total() {
                return Err(Error::Spec(format!(
                    "expected {} eigenvalues, got {}",
                    self.total(),
                    ev.len()
                )));
            }
            if ev.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Spec("eigenvalues must be positive and finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SplitModels {
    pub m1: ShapeModel,
    pub m2: ShapeModel,
    pub intersection: ShapeModel,
}

fn model_from_parts(mean: &Shape, dirs: &DMatrix<f64>, lambdas: &[f64], cols: &[usize]) -> Result<ShapeModel> {
    let mut order: Vec<usize> = cols.to_vec();
    order.sort_by(|&i, &j| lambdas[j].total_cmp(&lambdas[i]));
    let directions = DMatrix::from_fn(mean.dim(), order.len(), |r, c| dirs[(r, order[c])]);
    let eigenvalues = DVector::from_iterator(order.len(), order.iter().map(|&i| lambdas[i]));
    ShapeModel::from_orthonormal(mean.clone(), directions, eigenvalues)
}

/// Splits a random orthonormal set into unique and shared parts; the models'
/// bases are `S₁ ∪ S_I` and `S₂ ∪ S_I` around a common random mean.
pub fn generate_split_models(spec: &SplitSpec) -> Result<SplitModels> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let (q1, q2, _) = spec.dims;
    let total = spec.total();
    let gaussian = DMatrix::from_fn(spec.ambient_dim, total, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dirs = gaussian.qr().q();
    let mean_data = DVector::from_fn(spec.ambient_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mean = Shape::new(mean_data, spec.d, spec.ambient_dim / spec.d)?;
    let lambdas = spec.eigenvalues.clone().unwrap_or_else(|| vec![1.0; total]);
    let s1: Vec<usize> = (0..q1).collect();
    let s2: Vec<usize> = (q1..q1 + q2).collect();
    let si: Vec<usize> = (q1 + q2..total).collect();
    let join = |a: &[usize]| a.iter().chain(&si).copied().collect::<Vec<_>>();
    Ok(SplitModels {
        m1: model_from_parts(&mean, &dirs, &lambdas, &join(&s1))?,
        m2: model_from_parts(&mean, &dirs, &lambdas, &join(&s2))?,
        intersection: model_from_parts(&mean, &dirs, &lambdas, &si)?,
    })
}
