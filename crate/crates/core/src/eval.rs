//! End-to-end evaluation protocols on synthetic ground truth.

use serde::Serialize;

use crate::datagen::{
    angle_offset_deg, generate_split_models, generate_star_models, point_angle_deg, SplitModels,
    SplitSpec, StarModels, StarSpec,
};
use crate::error::Result;
use crate::likelihood::LikelihoodConfig;
use crate::metrics::{model_distance, reconstruction_error};
use crate::model::QPolicy;
use crate::sampler::{ChainConfig, ProposalSpec};
use crate::spaces::{
    compute_difference_directed, compute_intersection, derive_seed, DifferenceResult, Direction,
    IntersectionResult,
};

pub const STAR_SIGMA: f64 = 0.003;
pub const SPLIT_SIGMA: f64 = 0.3;
pub const SPLIT_AMBIENT: usize = 5238;

#[derive(Debug, Clone)]
pub struct StarEvalConfig {
    pub spec: StarSpec,
    pub sigma: f64,
    pub chains: ChainConfig,
    pub proposal: ProposalSpec,
    pub q_policy: QPolicy,
    pub differences: bool,
}

impl StarEvalConfig {
    /// Reference settings for star `row` (1-based).
    pub fn defaults(row: usize, seed: u64) -> Result<Self> {
        Ok(StarEvalConfig {
            spec: StarSpec::row(row)?,
            sigma: STAR_SIGMA,
            chains: ChainConfig::star_defaults(seed),
            proposal: ProposalSpec::default(),
            q_policy: QPolicy::ALL,
            differences: true,
        })
    }
}

/// Metric values of one star evaluation; `None` where not computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StarMetrics {
    pub dg_estimate_truth: f64,
    pub dg_q1_truth: f64,
    pub dg_q2_truth: f64,
    pub dg_q1_q2: f64,
    pub dr_intersection_samples: f64,
    pub dr_diff12_estimate: Option<f64>,
    pub dr_diff21_estimate: Option<f64>,
    pub dr_diff12_truth: f64,
    pub dr_diff21_truth: f64,
    /// Fraction of intersection samples whose point 0 lies within `θ₀ ± a`.
    pub point0_within_bounds: f64,
    pub epsilon_estimate: f64,
    pub acceptance_min: f64,
    pub acceptance_max: f64,
}

impl StarMetrics {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("dg_estimate_truth", self.dg_estimate_truth),
            ("dg_q1_truth", self.dg_q1_truth),
            ("dg_q2_truth", self.dg_q2_truth),
            ("dg_q1_q2", self.dg_q1_q2),
            ("dr_intersection_samples", self.dr_intersection_samples),
            ("dr_diff12_truth", self.dr_diff12_truth),
            ("dr_diff21_truth", self.dr_diff21_truth),
            ("point0_within_bounds", self.point0_within_bounds),
            ("epsilon_estimate", self.epsilon_estimate),
            ("acceptance_min", self.acceptance_min),
            ("acceptance_max", self.acceptance_max),
        ];
        if let Some(x) = self.dr_diff12_estimate {
            v.push(("dr_diff12_estimate", x));
        }
        if let Some(x) = self.dr_diff21_estimate {
            v.push(("dr_diff21_estimate", x));
        }
        v
    }
}

pub struct StarEvaluation {
    pub models: StarModels,
    pub intersection: IntersectionResult,
    pub diff12: Option<DifferenceResult>,
    pub diff21: Option<DifferenceResult>,
    pub metrics: StarMetrics,
}

fn acceptance_range<'a>(rates: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    rates.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)))
}

/// Generates the star models, computes Î (and optionally both differences)
/// and compares everything against ground truth.
pub fn evaluate_star(cfg: &StarEvalConfig) -> Result<StarEvaluation> {
    let models = generate_star_models(&cfg.spec)?;
    let lik = LikelihoodConfig::intersection(cfg.sigma)?;
    let intersection = compute_intersection(&models.m1, &models.m2, &lik, &cfg.chains, &cfg.proposal, cfg.q_policy)?;

    let (diff12, diff21) = if cfg.differences {
        let dlik = LikelihoodConfig::difference(cfg.sigma)?;
        let mut c12 = cfg.chains.clone();
        c12.seed = derive_seed(cfg.chains.seed, 2);
        let mut c21 = cfg.chains.clone();
        c21.seed = derive_seed(cfg.chains.seed, 3);
        (
            Some(compute_difference_directed(&models.m1, &models.m2, Direction::OneMinusTwo, &dlik, &c12, &cfg.proposal)?),
            Some(compute_difference_directed(&models.m1, &models.m2, Direction::TwoMinusOne, &dlik, &c21, &cfg.proposal)?),
        )
    } else {
        (None, None)
    };

    let truth = &models.intersection;
    let theta0 = cfg.spec.base_angles[0];
    let within = intersection
        .samples
        .iter()
        .filter(|s| angle_offset_deg(point_angle_deg(s, 0), theta0).abs() <= cfg.spec.a)
        .count();
    let (acceptance_min, acceptance_max) =
        acceptance_range(intersection.sides.iter().flat_map(|s| &s.result.acceptance_rate));
    let metrics = StarMetrics {
        dg_estimate_truth: model_distance(&intersection.model, truth)?,
        dg_q1_truth: model_distance(&models.m1, truth)?,
        dg_q2_truth: model_distance(&models.m2, truth)?,
        dg_q1_q2: model_distance(&models.m1, &models.m2)?,
        dr_intersection_samples: reconstruction_error(&intersection.samples, truth)?.mean,
        dr_diff12_estimate: diff12
            .as_ref()
            .map(|d| reconstruction_error(&d.samples, truth).map(|r| r.mean))
            .transpose()?,
        dr_diff21_estimate: diff21
            .as_ref()
            .map(|d| reconstruction_error(&d.samples, truth).map(|r| r.mean))
            .transpose()?,
        dr_diff12_truth: reconstruction_error(&models.diff12, truth)?.mean,
        dr_diff21_truth: reconstruction_error(&models.diff21, truth)?.mean,
        point0_within_bounds: within as f64 / intersection.samples.len() as f64,
        epsilon_estimate: intersection.epsilon_estimate,
        acceptance_min,
        acceptance_max,
    };
    Ok(StarEvaluation {
        models,
        intersection,
        diff12,
        diff21,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct SplitEvalConfig {
    pub spec: SplitSpec,
    pub sigma: f64,
    pub chains: ChainConfig,
    pub proposal: ProposalSpec,
    pub q_policy: QPolicy,
}

impl SplitEvalConfig {
    /// Reference settings with every eigenvalue set to
    /// [`SplitSpec::EVAL_EIGENVALUE`].
    pub fn defaults(dims: (usize, usize, usize), seed: u64) -> Self {
        SplitEvalConfig {
            spec: SplitSpec::new(SPLIT_AMBIENT, dims, seed).with_constant_eigenvalue(SplitSpec::EVAL_EIGENVALUE),
            sigma: SPLIT_SIGMA,
            chains: ChainConfig::split_defaults(seed),
            proposal: ProposalSpec::default(),
            q_policy: QPolicy::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub dg_estimate_truth: f64,
    pub dg_q1_truth: f64,
    pub dg_q2_truth: f64,
    pub dg_q1_q2: f64,
    pub epsilon_estimate: f64,
    pub acceptance_min: f64,
    pub acceptance_max: f64,
}

impl SplitMetrics {
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("dg_estimate_truth", self.dg_estimate_truth),
            ("dg_q1_truth", self.dg_q1_truth),
            ("dg_q2_truth", self.dg_q2_truth),
            ("dg_q1_q2", self.dg_q1_q2),
            ("epsilon_estimate", self.epsilon_estimate),
            ("acceptance_min", self.acceptance_min),
            ("acceptance_max", self.acceptance_max),
        ]
    }
}

pub struct SplitEvaluation {
    pub models: SplitModels,
    pub intersection: IntersectionResult,
    pub metrics: SplitMetrics,
}

pub fn evaluate_split(cfg: &SplitEvalConfig) -> Result<SplitEvaluation> {
    let models = generate_split_models(&cfg.spec)?;
    let lik = LikelihoodConfig::intersection(cfg.sigma)?;
    let intersection = compute_intersection(&models.m1, &models.m2, &lik, &cfg.chains, &cfg.proposal, cfg.q_policy)?;
    let truth = &models.intersection;
    let (acceptance_min, acceptance_max) =
        acceptance_range(intersection.sides.iter().flat_map(|s| &s.result.acceptance_rate));
    let metrics = SplitMetrics {
        dg_estimate_truth: model_distance(&intersection.model, truth)?,
        dg_q1_truth: model_distance(&models.m1, truth)?,
        dg_q2_truth: model_distance(&models.m2, truth)?,
        dg_q1_q2: model_distance(&models.m1, &models.m2)?,
        epsilon_estimate: intersection.epsilon_estimate,
        acceptance_min,
        acceptance_max,
    };
    Ok(SplitEvaluation {
        models,
        intersection,
        metrics,
    })
}
