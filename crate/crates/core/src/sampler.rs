//! Metropolis-Hastings over latent coefficients.
//!
//! Proposals come from a random-walk mixture; an ensemble of independently
//! seeded chains is run, burn-in is discarded per chain and the concatenated
//! traces are thinned by a uniform stride.
//!
//! Random streams: every chain owns a ChaCha20 generator seeded with the
//! ensemble seed and switched to stream `chain_index + 1`. Stream 0 is
//! reserved for drawing starting points. Results therefore depend only on the
//! seed and configuration, never on scheduling.

use log::{info, warn};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{LatentLikelihood, LikelihoodConfig, PairLikelihood};
use crate::model::{log_prior, Coefficients, ShapeModel};

/// Acceptance-rate band recommended for tuning σ.
pub const ACCEPTANCE_BAND: (f64, f64) = (0.25, 0.5);

/// Starts closer than this to an earlier start are redrawn up to
/// [`MAX_START_TRIES`] times.
pub const DEFAULT_START_SEPARATION: f64 = 0.5;
pub const MAX_START_TRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// `α' = α + stddev · z`, `z ~ N(0, I)`.
    IsotropicStep,
    /// Rescales `α` to a norm drawn from `N(‖α‖, stddev)`, keeping its direction.
    NormStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalComponent {
    pub kind: ProposalKind,
    pub stddev: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub components: Vec<ProposalComponent>,
}

impl Default for ProposalSpec {
    /// Four-component mixture: isotropic steps of 0.2, 0.1 and 0.025 with
    /// weights 0.1, 0.5 and 0.2, plus a norm step of 0.2 with weight 0.2.
    fn default() -> Self {
        use ProposalKind::*;
        let c = |kind, stddev, weight| ProposalComponent { kind, stddev, weight };
        ProposalSpec {
            components: vec![
                c(IsotropicStep, 0.2, 0.1),
                c(IsotropicStep, 0.1, 0.5),
                c(IsotropicStep, 0.025, 0.2),
                c(NormStep, 0.2, 0.2),
            ],
        }
    }
}

impl ProposalSpec {
    pub fn single(kind: ProposalKind, stddev: f64) -> Self {
        ProposalSpec {
            components: vec![ProposalComponent {
                kind,
                stddev,
                weight: 1.0,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("proposal mixture has no components".into()));
        }
        for c in &self.components {
            if !(c.stddev.is_finite() && c.stddev > 0.0) {
                return Err(Error::Config(format!("proposal stddev must be positive, got {}", c.stddev)));
            }
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::Config(format!("proposal weight must lie in (0, 1], got {}", c.weight)));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("proposal weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> &ProposalComponent {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                return c;
            }
        }
        self.components.last().expect("validated non-empty")
    }
}

/// Rescales `alpha` to norm `s` along its own direction (`s < 0` flips it).
pub fn rescale_norm(alpha: &Coefficients, s: f64) -> Coefficients {
    let norm = alpha.norm();
    Coefficients::new(alpha.values() * (s / norm))
}

/// Draws a proposal `α'` given the current state.
pub fn propose<R: Rng + ?Sized>(current: &Coefficients, spec: &ProposalSpec, rng: &mut R) -> Coefficients {
    propose_with_correction(current, spec, rng).0
}

/// Like [`propose`], also returning the log Hastings correction
/// `log q(α | α') − log q(α' | α)`.
///
/// Isotropic steps are symmetric (correction 0). A norm step is symmetric in
/// the radius only; with respect to volume in `q` dimensions the reverse move
/// is more likely by `(|s| / ‖α‖)^(q-1)`.
pub fn propose_with_correction<R: Rng + ?Sized>(
    current: &Coefficients,
    spec: &ProposalSpec,
    rng: &mut R,
) -> (Coefficients, f64) {
    let component = spec.choose(rng);
    let isotropic = |rng: &mut R| {
        let step = DVector::from_fn(current.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Coefficients::new(current.values() + step * component.stddev)
    };
    match component.kind {
        ProposalKind::IsotropicStep => (isotropic(rng), 0.0),
        ProposalKind::NormStep => {
            let norm = current.norm();
            if norm == 0.0 {
                return (isotropic(rng), 0.0);
            }
            let s = Normal::new(norm, component.stddev)
                .expect("validated stddev")
                .sample(rng);
            let correction = (current.len() as f64 - 1.0) * (s.abs() / norm).ln();
            (rescale_norm(current, s), correction)
        }
    }
}

/// A chain state with its cached log-posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub alpha: Coefficients,
    pub log_posterior: f64,
    /// Projection distance at `alpha`, kept for the ε̂ diagnostic.
    pub distance: f64,
}

impl ChainState {
    pub fn new<L: LatentLikelihood + ?Sized>(alpha: Coefficients, target: &L) -> Self {
        let eval = target.evaluate(&alpha);
        ChainState {
            log_posterior: eval.log_likelihood + log_prior(&alpha),
            distance: eval.distance,
            alpha,
        }
    }
}

/// One Metropolis-Hastings transition. The current state's log-posterior is
/// taken from the cache, so each step evaluates the likelihood once.
/// Norm steps carry their Hastings correction; all other moves are symmetric.
pub fn mh_step<L: LatentLikelihood + ?Sized, R: Rng + ?Sized>(
    current: &ChainState,
    target: &L,
    spec: &ProposalSpec,
    rng: &mut R,
) -> (ChainState, bool) {
    let (alpha, correction) = propose_with_correction(&current.alpha, spec, rng);
    let candidate = ChainState::new(alpha, target);
    let u: f64 = rng.random();
    // A non-finite candidate is never accepted; a finite candidate always
    // replaces a -inf current state (log t = +inf).
    let accept = if !candidate.log_posterior.is_finite() {
        false
    } else {
        let log_t = candidate.log_posterior - current.log_posterior + correction;
        u.ln() < log_t
    };
    if accept {
        (candidate, true)
    } else {
        (current.clone(), false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_chains: usize,
    /// Metropolis-Hastings steps per chain.
    pub n_samples: usize,
    /// Leading steps of each chain that are discarded.
    pub burn_in: usize,
    /// Total number of samples kept across all chains.
    pub thin_to: usize,
    pub seed: u64,
    pub min_start_separation: f64,
}

impl ChainConfig {
    /// 15 chains × 2 500 steps, 1 000 burn-in, 5 000 retained.
    pub fn star_defaults(seed: u64) -> Self {
        ChainConfig {
            n_chains: 15,
            n_samples: 2500,
            burn_in: 1000,
            thin_to: 5000,
            seed,
            min_start_separation: DEFAULT_START_SEPARATION,
        }
    }

    /// 25 chains × 5 000 steps, 2 000 burn-in, 5 000 retained.
    pub fn split_defaults(seed: u64) -> Self {
        ChainConfig {
            n_chains: 25,
            n_samples: 5000,
            burn_in: 2000,
            thin_to: 5000,
            seed,
            min_start_separation: DEFAULT_START_SEPARATION,
        }
    }

    /// Post-burn-in samples available across the ensemble.
    pub fn available(&self) -> usize {
        self.n_chains * self.n_samples.saturating_sub(self.burn_in)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.burn_in >= self.n_samples {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than n_samples ({})",
                self.burn_in, self.n_samples
            )));
        }
        if self.thin_to == 0 {
            return Err(Error::Config("thin_to must be at least 1".into()));
        }
        if self.thin_to > self.available() {
            return Err(Error::Config(format!(
                "thin_to ({}) exceeds the {} post-burn-in samples available",
                self.thin_to,
                self.available()
            )));
        }
        if !(self.min_start_separation >= 0.0 && self.min_start_separation.is_finite()) {
            return Err(Error::Config("min_start_separation must be a finite non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub accepted: usize,
    pub proposed: usize,
}

impl ChainTrace {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    /// Thinned post-burn-in samples, chain 0 first.
    pub retained: Vec<Coefficients>,
    /// Chain index of every retained sample.
    pub retained_chain: Vec<usize>,
    /// Projection distance of every retained sample.
    pub retained_distance: Vec<f64>,
    pub acceptance_rate: Vec<f64>,
    /// Mean projection distance over the retained samples (ε̂).
    pub mean_projection_distance: f64,
    pub trace_summary: Vec<ChainTrace>,
    /// Set when some starting point could not be separated from the others.
    pub start_separation_warning: bool,
}

impl ChainResult {
    /// Acceptance rate over all chains.
    pub fn pooled_acceptance(&self) -> f64 {
        let (a, p) = self
            .trace_summary
            .iter()
            .fold((0, 0), |(a, p), t| (a + t.accepted, p + t.proposed));
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }

    /// Chains whose acceptance rate falls outside `[lo, hi]`.
    pub fn chains_outside_band(&self, (lo, hi): (f64, f64)) -> Vec<usize> {
        self.acceptance_rate
            .iter()
            .enumerate()
            .filter(|(_, &r)| r < lo || r > hi)
            .map(|(i, _)| i)
            .collect()
    }
}

fn chain_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n` starting points from `N(0, I)`, redrawing any start within
/// `min_sep` of an earlier one. Returns the starts and whether some start had
/// to be accepted despite being too close.
pub fn draw_starts(q: usize, n: usize, min_sep: f64, seed: u64) -> (Vec<Coefficients>, bool) {
    let mut rng = chain_rng(seed, 0);
    let mut starts: Vec<Coefficients> = Vec::with_capacity(n);
    let mut warned = false;
    for _ in 0..n {
        let mut tries = 0;
        loop {
            let alpha = Coefficients::standard_normal(q, &mut rng);
            tries += 1;
            let separated = starts
                .iter()
                .all(|s| (s.values() - alpha.values()).norm() >= min_sep);
            if separated {
                starts.push(alpha);
                break;
            }
            if tries >= MAX_START_TRIES {
                warned = true;
                starts.push(alpha);
                break;
            }
        }
    }
    (starts, warned)
}

/// Global indices (into the concatenated post-burn-in traces) kept by thinning.
pub fn thinning_indices(available: usize, keep: usize) -> Vec<usize> {
    (0..keep)
        .map(|j| ((j as u128 * available as u128) / keep as u128) as usize)
        .collect()
}

struct ChainOutput {
    retained: Vec<(Coefficients, f64)>,
    trace: ChainTrace,
}

fn run_chain<L: LatentLikelihood + ?Sized>(
    start: Coefficients,
    target: &L,
    cfg: &ChainConfig,
    proposal: &ProposalSpec,
    chain: usize,
    keep: &[usize],
) -> ChainOutput {
    let mut rng = chain_rng(cfg.seed, chain as u64 + 1);
    let mut state = ChainState::new(start, target);
    let mut trace = ChainTrace {
        accepted: 0,
        proposed: 0,
    };
    let mut retained = Vec::with_capacity(keep.len());
    let mut next_keep = keep.iter().peekable();
    for step in 0..cfg.n_samples {
        let (next, accepted) = mh_step(&state, target, proposal, &mut rng);
        state = next;
        trace.proposed += 1;
        trace.accepted += accepted as usize;
        if step >= cfg.burn_in {
            let local = step - cfg.burn_in;
            while next_keep.peek() == Some(&&local) {
                retained.push((state.alpha.clone(), state.distance));
                next_keep.next();
            }
        }
    }
    ChainOutput { retained, trace }
}

/// Runs an ensemble of chains targeting `prior × target` over `target.dim()`
/// latent coordinates. Chains run in parallel on the current rayon pool.
pub fn run_ensemble_with<L: LatentLikelihood + ?Sized>(
    target: &L,
    cfg: &ChainConfig,
    proposal: &ProposalSpec,
) -> Result<ChainResult> {
    cfg.validate()?;
    proposal.validate()?;
    let q = target.dim();
    let (starts, start_separation_warning) =
        draw_starts(q, cfg.n_chains, cfg.min_start_separation, cfg.seed);
    if start_separation_warning {
        warn!(
            "could not separate all {} chain starts by {}; continuing with close starts",
            cfg.n_chains, cfg.min_start_separation
        );
    }
    let per_chain = cfg.n_samples - cfg.burn_in;
    let global = thinning_indices(cfg.available(), cfg.thin_to);
    let keep: Vec<Vec<usize>> = (0..cfg.n_chains)
        .map(|c| {
            global
                .iter()
                .filter(|&&g| g / per_chain == c)
                .map(|&g| g % per_chain)
                .collect()
        })
        .collect();
    let outputs: Vec<ChainOutput> = starts
        .into_par_iter()
        .enumerate()
        .map(|(c, start)| {
            let out = run_chain(start, target, cfg, proposal, c, &keep[c]);
            info!(
                "chain {c} finished: acceptance {:.3}",
                out.trace.acceptance_rate()
            );
            out
        })
        .collect();

    let mut result = ChainResult {
        retained: Vec::with_capacity(cfg.thin_to),
        retained_chain: Vec::with_capacity(cfg.thin_to),
        retained_distance: Vec::with_capacity(cfg.thin_to),
        acceptance_rate: Vec::with_capacity(cfg.n_chains),
        mean_projection_distance: 0.0,
        trace_summary: Vec::with_capacity(cfg.n_chains),
        start_separation_warning,
    };
    for (c, out) in outputs.into_iter().enumerate() {
        result.acceptance_rate.push(out.trace.acceptance_rate());
        result.trace_summary.push(out.trace);
        for (alpha, dist) in out.retained {
            result.retained.push(alpha);
            result.retained_chain.push(c);
            result.retained_distance.push(dist);
        }
    }
    result.mean_projection_distance =
        result.retained_distance.iter().sum::<f64>() / result.retained_distance.len() as f64;
    Ok(result)
}

/// Samples `source`'s latent space under the likelihood induced by `other`.
pub fn run_ensemble(
    source: &ShapeModel,
    other: &ShapeModel,
    lik_cfg: &LikelihoodConfig,
    chain_cfg: &ChainConfig,
    proposal: &ProposalSpec,
) -> Result<ChainResult> {
    let target = PairLikelihood::new(source, other, *lik_cfg)?;
    run_ensemble_with(&target, chain_cfg, proposal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{Evaluation, FlatLikelihood};
    use crate::model::Shape;
    use nalgebra::DMatrix;
    use rand_chacha::ChaCha8Rng;

    struct FnLikelihood<F: Fn(&Coefficients) -> f64 + Sync> {
        q: usize,
        f: F,
    }

    impl<F: Fn(&Coefficients) -> f64 + Sync> LatentLikelihood for FnLikelihood<F> {
        fn dim(&self) -> usize {
            self.q
        }
        fn evaluate(&self, alpha: &Coefficients) -> Evaluation {
            Evaluation {
                log_likelihood: (self.f)(alpha),
                distance: 0.0,
            }
        }
    }

    fn config(n_chains: usize, n_samples: usize, burn_in: usize, thin_to: usize, seed: u64) -> ChainConfig {
        ChainConfig {
            n_chains,
            n_samples,
            burn_in,
            thin_to,
            seed,
            min_start_separation: DEFAULT_START_SEPARATION,
        }
    }

    #[test]
    fn default_proposal_is_valid() {
        let spec = ProposalSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.components.len(), 4);
        let mut bad = spec.clone();
        bad.components[0].weight = 0.3;
        assert!(bad.validate().is_err());
        assert!(ProposalSpec::single(ProposalKind::IsotropicStep, 0.0).validate().is_err());
    }

    #[test]
    fn chain_config_validation() {
        config(2, 10, 5, 10, 0).validate().unwrap();
        assert!(config(2, 10, 10, 1, 0).validate().is_err());
        assert!(config(2, 10, 5, 11, 0).validate().is_err());
        assert!(config(0, 10, 5, 1, 0).validate().is_err());
        ChainConfig::star_defaults(1).validate().unwrap();
        ChainConfig::split_defaults(1).validate().unwrap();
    }

    #[test]
    fn tiny_isotropic_step_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let alpha = Coefficients::from_slice(&[0.3, -1.2, 2.0]);
        let spec = ProposalSpec::single(ProposalKind::IsotropicStep, 1e-14);
        let next = propose(&alpha, &spec, &mut rng);
        assert!((next.values() - alpha.values()).norm() < 1e-12);
    }

    #[test]
    fn norm_step_identity_rescale() {
        let alpha = Coefficients::from_slice(&[3.0, 4.0]);
        let same = rescale_norm(&alpha, alpha.norm());
        assert!((same.values() - alpha.values()).norm() < 1e-15);
        let longer = rescale_norm(&alpha, 10.0);
        assert!((longer.values() - alpha.values() * 2.0).norm() < 1e-14);
    }

    #[test]
    fn norm_step_preserves_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let alpha = Coefficients::from_slice(&[1.0, 2.0, -2.0]);
        let spec = ProposalSpec::single(ProposalKind::NormStep, 0.2);
        for _ in 0..100 {
            let next = propose(&alpha, &spec, &mut rng);
            let cos = next.values().dot(alpha.values()) / (next.norm() * alpha.norm());
            assert!((cos.abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn norm_step_falls_back_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ProposalSpec::single(ProposalKind::NormStep, 0.2);
        let next = propose(&Coefficients::zeros(4), &spec, &mut rng);
        assert!(next.norm() > 0.0 && next.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn isotropic_step_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ProposalSpec::single(ProposalKind::IsotropicStep, 0.1);
        let origin = Coefficients::zeros(2);
        let n = 1_000_000;
        let mut sum = [0.0f64; 2];
        let mut sq = [0.0f64; 2];
        for _ in 0..n {
            let p = propose(&origin, &spec, &mut rng);
            for k in 0..2 {
                sum[k] += p[k];
                sq[k] += p[k] * p[k];
            }
        }
        for k in 0..2 {
            let mean = sum[k] / n as f64;
            let sd = (sq[k] / n as f64 - mean * mean).sqrt();
            assert!((sd - 0.1).abs() < 0.001, "stddev {sd}");
        }
    }

    #[test]
    fn neg_infinite_proposal_is_rejected() {
        // Finite only at the exact starting point.
        let start = Coefficients::from_slice(&[0.5, 0.5]);
        let target = FnLikelihood {
            q: 2,
            f: |a: &Coefficients| if a.as_slice() == [0.5, 0.5] { 0.0 } else { f64::NEG_INFINITY },
        };
        let spec = ProposalSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut state = ChainState::new(start.clone(), &target);
        for _ in 0..500 {
            let (next, accepted) = mh_step(&state, &target, &spec, &mut rng);
            assert!(!accepted);
            state = next;
        }
        assert_eq!(state.alpha, start);
    }

    #[test]
    fn non_decreasing_posterior_is_always_accepted() {
        // log L = +½‖α‖² cancels the prior: every ratio is exactly 1.
        let target = FnLikelihood {
            q: 3,
            f: |a: &Coefficients| 0.5 * a.norm_squared(),
        };
        let spec = ProposalSpec::single(ProposalKind::IsotropicStep, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut state = ChainState::new(Coefficients::zeros(3), &target);
        for _ in 0..500 {
            let (next, accepted) = mh_step(&state, &target, &spec, &mut rng);
            assert!(accepted);
            state = next;
        }
    }

    #[test]
    fn finite_proposal_replaces_infinite_start() {
        let target = FnLikelihood {
            q: 1,
            f: |a: &Coefficients| if a[0] > 1.0 { f64::NEG_INFINITY } else { 0.0 },
        };
        let spec = ProposalSpec::single(ProposalKind::IsotropicStep, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut state = ChainState::new(Coefficients::from_slice(&[1.2]), &target);
        assert_eq!(state.log_posterior, f64::NEG_INFINITY);
        for _ in 0..200 {
            state = mh_step(&state, &target, &spec, &mut rng).0;
        }
        assert!(state.log_posterior.is_finite());
    }

    #[test]
    fn flat_ensemble_targets_standard_normal() {
        // Small steps mix slowly (integrated autocorrelation of a few hundred
        // steps), so the ensemble must be long for a ±0.05 check.
        let q = 3;
        let cfg = config(20, 100_000, 0, 100_000, 99);
        let result = run_ensemble_with(&FlatLikelihood { q }, &cfg, &ProposalSpec::default()).unwrap();
        let n = result.retained.len() as f64;
        let mut mean = DVector::<f64>::zeros(q);
        for a in &result.retained {
            mean += a.values();
        }
        mean /= n;
        let mut cov = DMatrix::<f64>::zeros(q, q);
        for a in &result.retained {
            let c = a.values() - &mean;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        for i in 0..q {
            assert!(mean[i].abs() < 0.05, "mean {mean}");
            for j in 0..q {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - expected).abs() < 0.1, "cov {cov}");
            }
        }
    }

    #[test]
    fn single_retained_sample_boundary() {
        let cfg = config(1, 11, 10, 1, 3);
        let result = run_ensemble_with(&FlatLikelihood { q: 2 }, &cfg, &ProposalSpec::default()).unwrap();
        assert_eq!(result.retained.len(), 1);
        assert_eq!(result.trace_summary[0].proposed, 11);
    }

    #[test]
    fn thinning_uses_every_chain_in_order() {
        let idx = thinning_indices(4 * 100, 40);
        assert_eq!(idx.len(), 40);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let cfg = config(4, 150, 50, 40, 8);
        let result = run_ensemble_with(&FlatLikelihood { q: 3 }, &cfg, &ProposalSpec::default()).unwrap();
        assert_eq!(result.retained.len(), 40);
        assert!(result.retained_chain.windows(2).all(|w| w[0] <= w[1]));
        for c in 0..4 {
            assert_eq!(result.retained_chain.iter().filter(|&&x| x == c).count(), 10);
        }
        let too_many = config(2, 10, 5, 11, 0);
        assert!(run_ensemble_with(&FlatLikelihood { q: 1 }, &too_many, &ProposalSpec::default()).is_err());
    }

    #[test]
    fn ensemble_is_deterministic_across_thread_counts() {
        let cfg = config(6, 300, 100, 120, 42);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ensemble_with(&FlatLikelihood { q: 4 }, &cfg, &ProposalSpec::default()).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 43;
        assert_ne!(run_ensemble_with(&FlatLikelihood { q: 4 }, &other, &ProposalSpec::default()).unwrap(), a);
    }

    #[test]
    fn starts_are_separated() {
        let (starts, warned) = draw_starts(3, 15, 0.5, 1);
        assert!(!warned);
        for i in 0..starts.len() {
            for j in 0..i {
                assert!((starts[i].values() - starts[j].values()).norm() >= 0.5);
            }
        }
        // Impossible separation in one dimension: gives up and flags it.
        let (starts, warned) = draw_starts(1, 20, 10.0, 1);
        assert!(warned);
        assert_eq!(starts.len(), 20);
    }

    #[test]
    fn identical_models_intersection_diagnostics() {
        let mean = Shape::new(vec![0.0, 0.0], 2, 1).unwrap();
        let m = ShapeModel::new(mean, DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), DVector::from_vec(vec![1.0])).unwrap();
        let lik = LikelihoodConfig::intersection(0.01).unwrap();
        let cfg = config(4, 1000, 200, 400, 5);
        let result = run_ensemble(&m, &m, &lik, &cfg, &ProposalSpec::default()).unwrap();
        assert!(result.mean_projection_distance < 0.01);
        for &r in &result.acceptance_rate {
            assert!(r > 0.0 && r < 1.0, "acceptance {r}");
        }
    }
}
