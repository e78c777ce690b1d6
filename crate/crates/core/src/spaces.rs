//! Intersection and difference pipelines.

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{avg_distance, LikelihoodConfig, LikelihoodMode};
use crate::model::{build_pca, QPolicy, Shape, ShapeModel};
use crate::sampler::{run_ensemble, ChainConfig, ChainResult, ProposalSpec};

/// Pooled acceptance below this marks a run as degenerate.
pub const DEGENERATE_ACCEPTANCE: f64 = 0.01;

/// Means further apart than this multiple of the models' combined per-vertex
/// RMS spread trigger an alignment warning.
pub const MEAN_DISTANCE_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    OneMinusTwo,
    TwoMinusOne,
}

/// Samples run on one model's latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct SideRun {
    pub source: Source,
    pub chains: ChainConfig,
    pub result: ChainResult,
}

#[derive(Debug, Clone)]
pub struct IntersectionResult {
    pub model: ShapeModel,
    pub samples: Vec<Shape>,
    /// Which model's latent space produced each sample.
    pub provenance: Vec<Source>,
    pub epsilon_estimate: f64,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    pub sides: Vec<SideRun>,
}

impl IntersectionResult {
    pub fn pooled_acceptance(&self) -> f64 {
        pooled_acceptance(&self.sides)
    }
}

#[derive(Debug, Clone)]
pub struct DifferenceResult {
    pub samples: Vec<Shape>,
    pub direction: Direction,
    pub epsilon_estimate: f64,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    pub side: SideRun,
}

fn pooled_acceptance(sides: &[SideRun]) -> f64 {
    let (a, p) = sides
        .iter()
        .flat_map(|s| &s.result.trace_summary)
        .fold((0, 0), |(a, p), t| (a + t.accepted, p + t.proposed));
    if p == 0 {
        0.0
    } else {
        a as f64 / p as f64
    }
}

/// Per-vertex RMS spread `sqrt(Σλ / n)` of a model.
pub fn rms_spread(model: &ShapeModel) -> f64 {
    (model.eigenvalues().sum() / model.n() as f64).sqrt()
}

/// Warning text when the models' means are far apart relative to their spread.
pub fn mean_alignment_warning(m1: &ShapeModel, m2: &ShapeModel) -> Result<Option<String>> {
    let gap = avg_distance(m1.mean(), m2.mean())?;
    let limit = MEAN_DISTANCE_FACTOR * (rms_spread(m1) + rms_spread(m2));
    Ok((gap > limit).then(|| {
        format!(
            "model means are {gap:.4} apart (limit {limit:.4}); align the models before intersecting"
        )
    }))
}

/// splitmix64 finaliser, used to derive independent seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Chain budgets for the two sides: chains and retention split evenly, the
/// odd one going to the first side. The second side gets a derived seed.
pub fn split_budget(chains: &ChainConfig) -> (ChainConfig, ChainConfig) {
    let mut first = chains.clone();
    let mut second = chains.clone();
    first.n_chains = chains.n_chains - chains.n_chains / 2;
    second.n_chains = chains.n_chains / 2;
    first.thin_to = chains.thin_to - chains.thin_to / 2;
    second.thin_to = chains.thin_to / 2;
    second.seed = derive_seed(chains.seed, 1);
    (first, second)
}

fn check_mode(lik: &LikelihoodConfig, expected: LikelihoodMode) -> Result<()> {
    lik.validate()?;
    if lik.mode != expected {
        return Err(Error::Config(format!(
            "likelihood mode {:?} cannot be used here; expected {:?}",
            lik.mode, expected
        )));
    }
    Ok(())
}

fn synthesize_all(model: &ShapeModel, result: &ChainResult) -> Result<Vec<Shape>> {
    result.retained.iter().map(|a| model.synthesize(a)).collect()
}

/// Samples the approximate intersection from both models' latent spaces and
/// fits a PCA model to the pooled samples.
pub fn compute_intersection(
    m1: &ShapeModel,
    m2: &ShapeModel,
    lik: &LikelihoodConfig,
    chains: &ChainConfig,
    proposal: &ProposalSpec,
    q_policy: QPolicy,
) -> Result<IntersectionResult> {
    m1.check_compatible(m2)?;
    check_mode(lik, LikelihoodMode::Intersection)?;
    chains.validate()?;
    q_policy.validate()?;
    let mut warnings = Vec::new();
    if let Some(w) = mean_alignment_warning(m1, m2)? {
        warn!("{w}");
        warnings.push(w);
    }

    let (cfg1, cfg2) = split_budget(chains);
    let mut sides = Vec::with_capacity(2);
    for (source, own, other, cfg) in [(Source::First, m1, m2, cfg1), (Source::Second, m2, m1, cfg2)] {
        if cfg.n_chains == 0 || cfg.thin_to == 0 {
            continue;
        }
        info!("sampling {source:?} side: {} chains", cfg.n_chains);
        let result = run_ensemble(own, other, lik, &cfg, proposal)?;
        sides.push(SideRun {
            source,
            chains: cfg,
            result,
        });
    }

    let mut samples = Vec::with_capacity(chains.thin_to);
    let mut provenance = Vec::with_capacity(chains.thin_to);
    let mut distance_sum = 0.0;
    for side in &sides {
        let own = if side.source == Source::First { m1 } else { m2 };
        samples.extend(synthesize_all(own, &side.result)?);
        provenance.extend(std::iter::repeat_n(side.source, side.result.retained.len()));
        distance_sum += side.result.retained_distance.iter().sum::<f64>();
    }
    let epsilon_estimate = distance_sum / samples.len() as f64;
    let acceptance = pooled_acceptance(&sides);
    let degenerate = acceptance < DEGENERATE_ACCEPTANCE;
    if degenerate {
        let w = format!(
            "pooled acceptance {acceptance:.4} is below {DEGENERATE_ACCEPTANCE}; the intersection may be empty or σ too small"
        );
        warn!("{w}");
        warnings.push(w);
    }
    if sides.iter().any(|s| s.result.start_separation_warning) {
        warnings.push("some chain starts could not be separated".into());
    }
    let model = build_pca(&samples, q_policy)?;
    Ok(IntersectionResult {
        model,
        samples,
        provenance,
        epsilon_estimate,
        degenerate,
        warnings,
        sides,
    })
}

/// Samples shapes of `m1` that lie away from `m2`'s span (`m1 − m2`).
pub fn compute_difference(
    m1: &ShapeModel,
    m2: &ShapeModel,
    lik: &LikelihoodConfig,
    chains: &ChainConfig,
    proposal: &ProposalSpec,
) -> Result<DifferenceResult> {
    compute_difference_directed(m1, m2, Direction::OneMinusTwo, lik, chains, proposal)
}

/// `m1 − m2` or `m2 − m1` depending on `direction`.
pub fn compute_difference_directed(
    m1: &ShapeModel,
    m2: &ShapeModel,
    direction: Direction,
    lik: &LikelihoodConfig,
    chains: &ChainConfig,
    proposal: &ProposalSpec,
) -> Result<DifferenceResult> {
    m1.check_compatible(m2)?;
    check_mode(lik, LikelihoodMode::Difference)?;
    let (own, other, source) = match direction {
        Direction::OneMinusTwo => (m1, m2, Source::First),
        Direction::TwoMinusOne => (m2, m1, Source::Second),
    };
    let mut warnings = Vec::new();
    if let Some(w) = mean_alignment_warning(m1, m2)? {
        warn!("{w}");
        warnings.push(w);
    }
    let result = run_ensemble(own, other, lik, chains, proposal)?;
    let samples = synthesize_all(own, &result)?;
    let acceptance = result.pooled_acceptance();
    let degenerate = acceptance < DEGENERATE_ACCEPTANCE;
    if degenerate {
        let w = format!(
            "acceptance {acceptance:.4} is below {DEGENERATE_ACCEPTANCE}; the difference may be empty"
        );
        warn!("{w}");
        warnings.push(w);
    }
    if result.start_separation_warning {
        warnings.push("some chain starts could not be separated".into());
    }
    Ok(DifferenceResult {
        samples,
        direction,
        epsilon_estimate: result.mean_projection_distance,
        degenerate,
        warnings,
        side: SideRun {
            source,
            chains: chains.clone(),
            result,
        },
    })
}
