//! Command-line front end. [`run`] returns the process exit code:
//! 0 on success, 1 on invalid input, 2 when `--strict` escalates a warning.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::datagen::{generate_split_models, generate_star_models, Sampling, SplitSpec, StarSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, evaluate_star, SplitEvalConfig, StarEvalConfig, SPLIT_AMBIENT, SPLIT_SIGMA, STAR_SIGMA};
use crate::io::container::Triangle;
use crate::io::export::{export_mesh, export_star_plot, AngularBound};
use crate::io::{load_model, load_model_file, read_samples, save_model_with, save_report, write_samples, ModelMeta, RunReport, SideReport};
use crate::likelihood::LikelihoodConfig;
use crate::metrics::{model_distance, reconstruction_error, union_model};
use crate::model::{align_procrustes, build_pca, QPolicy, ShapeModel};
use crate::sampler::{ChainConfig, ProposalSpec, ACCEPTANCE_BAND, DEFAULT_START_SEPARATION};
use crate::spaces::{compute_difference_directed, compute_intersection, Direction, SideRun};

pub const THREADS_ENV: &str = "SSM_SPACES_THREADS";

const SIGMA_GUIDANCE: &str = "--sigma is required. Choose it empirically: start small, run with \
--check-acceptance, and increase σ until every chain's acceptance rate lies within [0.25, 0.5]. \
Reference values: 0.003 for the star models, 0.3 for the split models.";

#[derive(Debug, Parser)]
#[command(name = "ssm-spaces", version, about = "Intersections and differences of linear shape models")]
pub struct Cli {
    /// Worker threads for chain sampling (falls back to SSM_SPACES_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate star models and ground truth.
    StarGen(StarGenArgs),
    /// Generate models from a random split of an orthonormal basis.
    SplitGen(SplitGenArgs),
    /// Build a PCA model from a CSV sample set.
    Build(BuildArgs),
    /// Estimate the intersection model of two models.
    Intersect(IntersectArgs),
    /// Sample the difference of two models.
    Difference(DifferenceArgs),
    /// Affine Grassmann distance between two models.
    Grassmann(GrassmannArgs),
    /// Reconstruction error of samples in a model.
    ReconError(ReconArgs),
    /// PCA model of random draws from two models.
    Union(UnionArgs),
    /// Export a mesh (OBJ) or a star plot (SVG).
    Export(ExportArgs),
    /// Run the star evaluation protocol for one configuration.
    EvalStar(EvalStarArgs),
    /// Run the split evaluation protocol for one configuration.
    EvalSplit(EvalSplitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplingArg {
    Grid,
    Random,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Grid => Sampling::UniformGrid,
            SamplingArg::Random => Sampling::UniformRandom,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    #[value(name = "1-2")]
    OneMinusTwo,
    #[value(name = "2-1")]
    TwoMinusOne,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::OneMinusTwo => Direction::OneMinusTwo,
            DirectionArg::TwoMinusOne => Direction::TwoMinusOne,
        }
    }
}

#[derive(Debug, Args)]
struct StarArgs {
    /// Reference configuration 1..=6; overridden by --a/--b/--c.
    #[arg(long)]
    row: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    b: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    c: Option<f64>,
    #[arg(long, allow_negative_numbers = true, default_value_t = StarSpec::DEFAULT_RADIUS)]
    radius: f64,
    #[arg(long, default_value_t = StarSpec::DEFAULT_TRAIN)]
    n_train: usize,
    #[arg(long, value_enum, default_value_t = SamplingArg::Grid)]
    sampling: SamplingArg,
    /// Seed for random training sets.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Retained-dimension policy for the generated models.
    #[arg(long, default_value = "all")]
    model_q: QPolicy,
}

impl StarArgs {
    fn spec(&self) -> Result<StarSpec> {
        let mut spec = match self.row {
            Some(r) => StarSpec::row(r).map_err(|e| flag_err("--row", e))?,
            None => StarSpec::row(1).expect("row 1 exists"),
        };
        if self.row.is_none() && (self.a.is_none() || self.b.is_none() || self.c.is_none()) {
            return Err(Error::Config("give --row or all of --a, --b and --c".into()));
        }
        spec.a = self.a.unwrap_or(spec.a);
        spec.b = self.b.unwrap_or(spec.b);
        spec.c = self.c.unwrap_or(spec.c);
        spec.r = self.radius;
        spec.n_train = self.n_train;
        spec.sampling = self.sampling.into();
        spec.seed = self.data_seed;
        spec.q_policy = self.model_q;
        spec.validate().map_err(|e| flag_err("--row/--a/--b/--c/--radius/--n-train", e))?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
struct StarGenArgs {
    #[command(flatten)]
    star: StarArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long, default_value_t = SPLIT_AMBIENT)]
    ambient: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    /// Unique-1, unique-2 and shared basis sizes, e.g. 3,3,1.
    #[arg(long, value_delimiter = ',', default_value = "3,3,1")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

impl SplitArgs {
    fn spec(&self, eigenvalue: f64) -> Result<SplitSpec> {
        if self.dims.len() != 3 {
            return Err(Error::Config(format!("--dims expects three counts a,b,c, got {:?}", self.dims)));
        }
        if !(eigenvalue.is_finite() && eigenvalue > 0.0) {
            return Err(Error::Config(format!("--eigenvalue must be positive, got {eigenvalue}")));
        }
        let mut spec = SplitSpec::new(self.ambient, (self.dims[0], self.dims[1], self.dims[2]), self.data_seed)
            .with_constant_eigenvalue(eigenvalue);
        spec.d = self.d;
        spec.validate().map_err(|e| flag_err("--ambient/--d/--dims", e))?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
struct SplitGenArgs {
    #[command(flatten)]
    split: SplitArgs,
    /// Eigenvalue of every drawn direction.
    #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
    eigenvalue: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, default_value = "all")]
    q_policy: QPolicy,
    #[arg(long, default_value = "")]
    label: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Preset {
    Star,
    Split,
}

#[derive(Debug, Args)]
struct ChainArgs {
    /// Default chain settings: star (15 × 2500, burn-in 1000) or split (25 × 5000, burn-in 2000).
    #[arg(long, value_enum, default_value_t = Preset::Star)]
    preset: Preset,
    #[arg(long)]
    chains: Option<usize>,
    /// Metropolis-Hastings steps per chain.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    /// Samples retained across all chains.
    #[arg(long)]
    retain: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_START_SEPARATION)]
    start_separation: f64,
}

impl ChainArgs {
    fn config(&self) -> Result<ChainConfig> {
        let base = match self.preset {
            Preset::Star => ChainConfig::star_defaults(self.seed),
            Preset::Split => ChainConfig::split_defaults(self.seed),
        };
        self.apply(base)
    }

    fn apply(&self, base: ChainConfig) -> Result<ChainConfig> {
        let cfg = ChainConfig {
            n_chains: self.chains.unwrap_or(base.n_chains),
            n_samples: self.steps.unwrap_or(base.n_samples),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            thin_to: self.retain.unwrap_or(base.thin_to),
            seed: self.seed,
            min_start_separation: self.start_separation,
        };
        if cfg.n_chains == 0 {
            return Err(Error::Config("--chains must be at least 1".into()));
        }
        if cfg.burn_in >= cfg.n_samples {
            return Err(Error::Config(format!(
                "--burn-in ({}) must be smaller than --steps ({})",
                cfg.burn_in, cfg.n_samples
            )));
        }
        if cfg.thin_to == 0 || cfg.thin_to > cfg.available() {
            return Err(Error::Config(format!(
                "--retain ({}) must lie in 1..={} (chains × (steps − burn-in))",
                cfg.thin_to,
                cfg.available()
            )));
        }
        cfg.validate().map_err(|e| flag_err("--start-separation", e))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct GateArgs {
    /// Exit with code 2 when a degeneracy warning fires.
    #[arg(long)]
    strict: bool,
    /// Also warn when a chain's acceptance rate is outside [0.25, 0.5].
    #[arg(long)]
    check_acceptance: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Store wall-clock time in the report (makes it non-reproducible).
    #[arg(long)]
    record_timing: bool,
}

#[derive(Debug, Args)]
struct IntersectArgs {
    #[arg(long)]
    m1: PathBuf,
    #[arg(long)]
    m2: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Similarity-align m2 onto m1 before sampling.
    #[arg(long)]
    align: bool,
    #[arg(long, default_value = "all")]
    q_policy: QPolicy,
    #[command(flatten)]
    chains: ChainArgs,
    #[command(flatten)]
    gate: GateArgs,
    /// Intersection model output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    samples_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DifferenceArgs {
    #[arg(long)]
    m1: PathBuf,
    #[arg(long)]
    m2: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    #[arg(long, value_enum, default_value_t = DirectionArg::OneMinusTwo)]
    direction: DirectionArg,
    #[arg(long)]
    align: bool,
    #[command(flatten)]
    chains: ChainArgs,
    #[command(flatten)]
    gate: GateArgs,
    #[arg(long)]
    samples_out: PathBuf,
}

#[derive(Debug, Args)]
struct GrassmannArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Debug, Args)]
struct ReconArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct UnionArgs {
    #[arg(long)]
    m1: PathBuf,
    #[arg(long)]
    m2: PathBuf,
    #[arg(long, default_value_t = 5000)]
    n_samples: usize,
    #[arg(long, default_value = "all")]
    q_policy: QPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum ExportFormat {
    Obj,
    Svg,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long, value_enum)]
    format: ExportFormat,
    /// Model whose mean is exported (OBJ) and whose topology is used.
    #[arg(long)]
    model: Option<PathBuf>,
    /// CSV sample set (SVG, or OBJ together with --index).
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Row of --samples exported as a mesh.
    #[arg(long)]
    index: Option<usize>,
    /// Angular bound `point:lo:hi` in degrees (SVG), repeatable.
    #[arg(long = "bound")]
    bounds: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalStarArgs {
    #[command(flatten)]
    star: StarArgs,
    #[arg(long, allow_negative_numbers = true, default_value_t = STAR_SIGMA)]
    sigma: f64,
    #[arg(long, default_value = "all")]
    q_policy: QPolicy,
    /// Skip the two difference runs.
    #[arg(long)]
    no_differences: bool,
    #[command(flatten)]
    chains: ChainArgs,
    #[command(flatten)]
    gate: GateArgs,
    /// Also write models, samples and a star plot here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalSplitArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, allow_negative_numbers = true, default_value_t = SplitSpec::EVAL_EIGENVALUE)]
    eigenvalue: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = SPLIT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value = "all")]
    q_policy: QPolicy,
    #[command(flatten)]
    chains: ChainArgs,
    #[command(flatten)]
    gate: GateArgs,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn flag_err(flag: &str, e: Error) -> Error {
    Error::Config(format!("{flag}: {e}"))
}

/// Creation stamp for written models: `SOURCE_DATE_EPOCH` when set, so that
/// output stays reproducible.
fn created_stamp() -> String {
    std::env::var("SOURCE_DATE_EPOCH").unwrap_or_else(|_| "unspecified".into())
}

fn meta(label: &str, topology: Option<Vec<Triangle>>) -> ModelMeta {
    ModelMeta {
        label: label.into(),
        created: created_stamp(),
        topology,
    }
}

fn sigma_config(sigma: Option<f64>, difference: bool) -> Result<LikelihoodConfig> {
    let sigma = sigma.ok_or_else(|| Error::Config(SIGMA_GUIDANCE.into()))?;
    let cfg = if difference {
        LikelihoodConfig::difference(sigma)
    } else {
        LikelihoodConfig::intersection(sigma)
    };
    cfg.map_err(|e| flag_err("--sigma", e))
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if n == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    Ok(n)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Warnings that `--strict` turns into exit code 2.
struct Gate {
    escalate: Vec<String>,
}

impl Gate {
    fn new() -> Self {
        Gate { escalate: Vec::new() }
    }

    fn check_sides(&mut self, sides: &[SideRun], degenerate: bool, check_acceptance: bool, report: &mut RunReport) {
        if degenerate {
            self.escalate.push("pooled acceptance below 0.01 (degenerate run)".into());
        }
        if check_acceptance {
            for side in sides {
                let outside = side.result.chains_outside_band(ACCEPTANCE_BAND);
                if !outside.is_empty() {
                    let w = format!(
                        "{:?} side: chains {:?} have acceptance outside [{}, {}]",
                        side.source, outside, ACCEPTANCE_BAND.0, ACCEPTANCE_BAND.1
                    );
                    warn!("{w}");
                    report.warnings.push(w.clone());
                    self.escalate.push(w);
                }
            }
        }
    }

    fn exit_code(&self, strict: bool) -> i32 {
        if strict && !self.escalate.is_empty() {
            for w in &self.escalate {
                eprintln!("strict: {w}");
            }
            2
        } else {
            0
        }
    }
}

fn finish_report(report: &mut RunReport, gate: &GateArgs, started: std::time::Instant) -> Result<()> {
    if gate.record_timing {
        report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    }
    if let Some(path) = &gate.report {
        save_report(path, report)?;
    }
    Ok(())
}

fn parse_bound(s: &str) -> Result<AngularBound> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("--bound expects point:lo:hi, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok(AngularBound {
        point: parts[0].parse().map_err(|_| bad())?,
        lo_deg: parts[1].parse().map_err(|_| bad())?,
        hi_deg: parts[2].parse().map_err(|_| bad())?,
    })
}

fn load_pair(m1: &Path, m2: &Path, align: bool) -> Result<(ShapeModel, ShapeModel)> {
    let a = load_model(m1)?;
    let mut b = load_model(m2)?;
    if align {
        b = align_procrustes(&b, &a)?;
    }
    Ok((a, b))
}

fn cmd_star_gen(args: &StarGenArgs, report: &mut RunReport) -> Result<i32> {
    let spec = args.star.spec()?;
    let models = generate_star_models(&spec)?;
    ensure_dir(&args.out_dir)?;
    let dir = &args.out_dir;
    save_model_with(dir.join("m1.ssm"), &models.m1, &meta("star m1", None))?;
    save_model_with(dir.join("m2.ssm"), &models.m2, &meta("star m2", None))?;
    save_model_with(dir.join("intersection.ssm"), &models.intersection, &meta("star intersection", None))?;
    write_samples(dir.join("diff12.csv"), &models.diff12)?;
    write_samples(dir.join("diff21.csv"), &models.diff21)?;
    report.setting("star", &spec)?;
    report.seeds.insert("data".into(), spec.seed);
    println!("wrote star models to {}", dir.display());
    Ok(0)
}

fn cmd_split_gen(args: &SplitGenArgs, report: &mut RunReport) -> Result<i32> {
    let spec = args.split.spec(args.eigenvalue)?;
    let models = generate_split_models(&spec)?;
    ensure_dir(&args.out_dir)?;
    let dir = &args.out_dir;
    save_model_with(dir.join("m1.ssm"), &models.m1, &meta("split m1", None))?;
    save_model_with(dir.join("m2.ssm"), &models.m2, &meta("split m2", None))?;
    save_model_with(dir.join("intersection.ssm"), &models.intersection, &meta("split intersection", None))?;
    report.setting("split", &spec)?;
    report.seeds.insert("data".into(), spec.seed);
    println!("wrote split models to {}", dir.display());
    Ok(0)
}

fn cmd_build(args: &BuildArgs) -> Result<i32> {
    args.q_policy.validate().map_err(|e| flag_err("--q-policy", e))?;
    let samples = read_samples(&args.samples)?;
    let model = build_pca(&samples, args.q_policy)?;
    save_model_with(&args.out, &model, &meta(&args.label, None))?;
    println!("built model with q = {} from {} samples", model.q(), samples.len());
    Ok(0)
}

fn side_reports(sides: &[SideRun]) -> Vec<SideReport> {
    sides.iter().map(SideReport::from).collect()
}

fn cmd_intersect(args: &IntersectArgs, report: &mut RunReport) -> Result<i32> {
    let lik = sigma_config(args.sigma, false)?;
    let chains = args.chains.config()?;
    args.q_policy.validate().map_err(|e| flag_err("--q-policy", e))?;
    let proposal = ProposalSpec::default();
    let (m1, m2) = load_pair(&args.m1, &args.m2, args.align)?;
    let result = compute_intersection(&m1, &m2, &lik, &chains, &proposal, args.q_policy)?;

    save_model_with(&args.out, &result.model, &meta("intersection", None))?;
    if let Some(path) = &args.samples_out {
        write_samples(path, &result.samples)?;
    }
    report.likelihood = Some(lik);
    report.chains = Some(chains.clone());
    report.proposal = Some(proposal);
    report.q_policy = Some(args.q_policy);
    for side in &result.sides {
        report.seeds.insert(format!("{:?}", side.source).to_lowercase(), side.chains.seed);
    }
    report.sides = side_reports(&result.sides);
    report.epsilon_estimate = Some(result.epsilon_estimate);
    report.degenerate = result.degenerate;
    report.warnings.extend(result.warnings.iter().cloned());
    report.metrics.insert("intersection_q".into(), result.model.q() as f64);
    let mut gate = Gate::new();
    gate.check_sides(&result.sides, result.degenerate, args.gate.check_acceptance, report);
    println!(
        "intersection model: q = {}, ε̂ = {:.6}, pooled acceptance = {:.4}",
        result.model.q(),
        result.epsilon_estimate,
        result.pooled_acceptance()
    );
    Ok(gate.exit_code(args.gate.strict))
}

fn cmd_difference(args: &DifferenceArgs, report: &mut RunReport) -> Result<i32> {
    let lik = sigma_config(args.sigma, true)?;
    let chains = args.chains.config()?;
    let proposal = ProposalSpec::default();
    let (m1, m2) = load_pair(&args.m1, &args.m2, args.align)?;
    let result = compute_difference_directed(&m1, &m2, args.direction.into(), &lik, &chains, &proposal)?;
    write_samples(&args.samples_out, &result.samples)?;
    report.likelihood = Some(lik);
    report.chains = Some(chains.clone());
    report.proposal = Some(proposal);
    report.seeds.insert("chains".into(), chains.seed);
    report.setting("direction", result.direction)?;
    report.sides = side_reports(std::slice::from_ref(&result.side));
    report.epsilon_estimate = Some(result.epsilon_estimate);
    report.degenerate = result.degenerate;
    report.warnings.extend(result.warnings.iter().cloned());
    let mut gate = Gate::new();
    gate.check_sides(std::slice::from_ref(&result.side), result.degenerate, args.gate.check_acceptance, report);
    println!(
        "difference samples: {}, ε̂ = {:.6}, acceptance = {:.4}",
        result.samples.len(),
        result.epsilon_estimate,
        result.side.result.pooled_acceptance()
    );
    Ok(gate.exit_code(args.gate.strict))
}

fn cmd_grassmann(args: &GrassmannArgs) -> Result<i32> {
    let a = load_model(&args.a)?;
    let b = load_model(&args.b)?;
    let d = model_distance(&a, &b)?;
    if a.q() != b.q() {
        eprintln!("note: models truncated to q = {} for comparison", a.q().min(b.q()));
    }
    println!("{d:?}");
    Ok(0)
}

fn cmd_recon(args: &ReconArgs) -> Result<i32> {
    let samples = read_samples(&args.samples)?;
    let model = load_model(&args.model)?;
    let r = reconstruction_error(&samples, &model)?;
    println!("mean {:?} stddev {:?}", r.mean, r.stddev);
    Ok(0)
}

fn cmd_union(args: &UnionArgs) -> Result<i32> {
    args.q_policy.validate().map_err(|e| flag_err("--q-policy", e))?;
    if args.n_samples < 2 {
        return Err(Error::Config("--n-samples must be at least 2".into()));
    }
    let a = load_model(&args.m1)?;
    let b = load_model(&args.m2)?;
    let u = union_model(&a, &b, args.n_samples, args.q_policy, args.seed)?;
    save_model_with(&args.out, &u, &meta("union", None))?;
    println!("union model: q = {}", u.q());
    Ok(0)
}

fn cmd_export(args: &ExportArgs) -> Result<i32> {
    let bounds = args.bounds.iter().map(|b| parse_bound(b)).collect::<Result<Vec<_>>>()?;
    match args.format {
        ExportFormat::Obj => {
            let file = args
                .model
                .as_ref()
                .map(load_model_file)
                .transpose()?
                .ok_or_else(|| Error::Config("--format obj needs --model (for topology)".into()))?;
            let topology = file.meta.topology.clone().unwrap_or_default();
            let shape = match (&args.samples, args.index) {
                (Some(path), Some(i)) => {
                    let samples = read_samples(path)?;
                    samples
                        .get(i)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("--index {i} is out of range ({} samples)", samples.len())))?
                }
                (Some(_), None) => return Err(Error::Config("--samples with --format obj needs --index".into())),
                _ => file.model.mean().clone(),
            };
            export_mesh(&shape, &topology, &args.out)?;
        }
        ExportFormat::Svg => {
            let path = args
                .samples
                .as_ref()
                .ok_or_else(|| Error::Config("--format svg needs --samples".into()))?;
            let samples = read_samples(path)?;
            export_star_plot(&samples, &bounds, &args.out)?;
        }
    }
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn cmd_eval_star(args: &EvalStarArgs, report: &mut RunReport) -> Result<i32> {
    let spec = args.star.spec()?;
    let base = ChainConfig::star_defaults(args.chains.seed);
    let chains = args.chains.apply(base)?;
    let lik = LikelihoodConfig::intersection(args.sigma).map_err(|e| flag_err("--sigma", e))?;
    args.q_policy.validate().map_err(|e| flag_err("--q-policy", e))?;
    let cfg = StarEvalConfig {
        spec: spec.clone(),
        sigma: args.sigma,
        chains: chains.clone(),
        proposal: ProposalSpec::default(),
        q_policy: args.q_policy,
        differences: !args.no_differences,
    };
    let eval = evaluate_star(&cfg)?;

    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        save_model_with(dir.join("intersection_estimate.ssm"), &eval.intersection.model, &meta("estimated intersection", None))?;
        save_model_with(dir.join("intersection_truth.ssm"), &eval.models.intersection, &meta("ground-truth intersection", None))?;
        write_samples(dir.join("intersection_samples.csv"), &eval.intersection.samples)?;
        if let Some(d) = &eval.diff12 {
            write_samples(dir.join("diff12_samples.csv"), &d.samples)?;
        }
        if let Some(d) = &eval.diff21 {
            write_samples(dir.join("diff21_samples.csv"), &d.samples)?;
        }
        let theta0 = spec.base_angles[0];
        let bound = AngularBound {
            point: 0,
            lo_deg: theta0 - spec.a,
            hi_deg: theta0 + spec.a,
        };
        export_star_plot(&eval.intersection.samples, &[bound], dir.join("intersection_plot.svg"))?;
    }

    report.likelihood = Some(lik);
    report.chains = Some(chains.clone());
    report.proposal = Some(cfg.proposal.clone());
    report.q_policy = Some(cfg.q_policy);
    report.setting("star", &spec)?;
    report.seeds.insert("data".into(), spec.seed);
    for side in &eval.intersection.sides {
        report.seeds.insert(format!("intersection_{:?}", side.source).to_lowercase(), side.chains.seed);
    }
    let mut sides: Vec<SideRun> = eval.intersection.sides.clone();
    for (name, d) in [("diff12", &eval.diff12), ("diff21", &eval.diff21)] {
        if let Some(d) = d {
            report.seeds.insert(name.into(), d.side.chains.seed);
            report.warnings.extend(d.warnings.iter().map(|w| format!("{name}: {w}")));
            sides.push(d.side.clone());
        }
    }
    report.sides = side_reports(&sides);
    report.epsilon_estimate = Some(eval.intersection.epsilon_estimate);
    report.degenerate = eval.intersection.degenerate;
    report.warnings.extend(eval.intersection.warnings.iter().cloned());
    report.metrics.extend(eval.metrics.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
    report.notes.push(format!(
        "Grassmann distances compare the leading min(q1, q2) components (estimate q = {}, truth q = {})",
        eval.intersection.model.q(),
        eval.models.intersection.q()
    ));
    let mut gate = Gate::new();
    gate.check_sides(&eval.intersection.sides, eval.intersection.degenerate, args.gate.check_acceptance, report);
    println!("d_G(estimate, truth) = {:.6}", eval.metrics.dg_estimate_truth);
    println!(
        "baselines: d_G(Q1, I) = {:.4}, d_G(Q2, I) = {:.4}, d_G(Q1, Q2) = {:.4}",
        eval.metrics.dg_q1_truth, eval.metrics.dg_q2_truth, eval.metrics.dg_q1_q2
    );
    if let (Some(a), Some(b)) = (eval.metrics.dr_diff12_estimate, eval.metrics.dr_diff21_estimate) {
        println!(
            "d_R into truth: diff12 {:.4} (truth {:.4}), diff21 {:.4} (truth {:.4})",
            a, eval.metrics.dr_diff12_truth, b, eval.metrics.dr_diff21_truth
        );
    }
    Ok(gate.exit_code(args.gate.strict))
}

fn cmd_eval_split(args: &EvalSplitArgs, report: &mut RunReport) -> Result<i32> {
    let spec = args.split.spec(args.eigenvalue)?;
    let base = ChainConfig::split_defaults(args.chains.seed);
    let chains = args.chains.apply(base)?;
    let lik = LikelihoodConfig::intersection(args.sigma).map_err(|e| flag_err("--sigma", e))?;
    args.q_policy.validate().map_err(|e| flag_err("--q-policy", e))?;
    let cfg = SplitEvalConfig {
        spec: spec.clone(),
        sigma: args.sigma,
        chains: chains.clone(),
        proposal: ProposalSpec::default(),
        q_policy: args.q_policy,
    };
    let eval = evaluate_split(&cfg)?;
    if let Some(dir) = &args.out_dir {
        ensure_dir(dir)?;
        save_model_with(dir.join("intersection_estimate.ssm"), &eval.intersection.model, &meta("estimated intersection", None))?;
        save_model_with(dir.join("intersection_truth.ssm"), &eval.models.intersection, &meta("ground-truth intersection", None))?;
    }
    report.likelihood = Some(lik);
    report.chains = Some(chains);
    report.proposal = Some(cfg.proposal.clone());
    report.q_policy = Some(cfg.q_policy);
    report.setting("split", &spec)?;
    report.seeds.insert("data".into(), spec.seed);
    report.sides = side_reports(&eval.intersection.sides);
    report.epsilon_estimate = Some(eval.intersection.epsilon_estimate);
    report.degenerate = eval.intersection.degenerate;
    report.warnings.extend(eval.intersection.warnings.iter().cloned());
    report.metrics.extend(eval.metrics.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
    let mut gate = Gate::new();
    gate.check_sides(&eval.intersection.sides, eval.intersection.degenerate, args.gate.check_acceptance, report);
    println!("d_G(estimate, truth) = {:.6}", eval.metrics.dg_estimate_truth);
    Ok(gate.exit_code(args.gate.strict))
}

/// Arguments stored in reports. Flags that cannot change results (thread
/// count, verbosity) are dropped so reports compare equal across machines.
fn recorded_arguments(argv: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    let mut args = argv.iter().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--threads" => {
                args.next();
            }
            "--quiet" | "-q" => {}
            _ if a.starts_with("--threads=") => {}
            _ => out.push(a.clone()),
        }
    }
    out
}

fn dispatch(cli: &Cli, argv: &[String]) -> Result<i32> {
    let started = std::time::Instant::now();
    let args = recorded_arguments(argv);
    let mut report = RunReport::new(
        args.first().cloned().unwrap_or_default(),
        args,
    );
    let (code, gate) = match &cli.command {
        Command::StarGen(a) => {
            let code = cmd_star_gen(a, &mut report)?;
            save_report(a.out_dir.join("report.json"), &report)?;
            (code, None)
        }
        Command::SplitGen(a) => {
            let code = cmd_split_gen(a, &mut report)?;
            save_report(a.out_dir.join("report.json"), &report)?;
            (code, None)
        }
        Command::Build(a) => (cmd_build(a)?, None),
        Command::Intersect(a) => (cmd_intersect(a, &mut report)?, Some(&a.gate)),
        Command::Difference(a) => (cmd_difference(a, &mut report)?, Some(&a.gate)),
        Command::Grassmann(a) => (cmd_grassmann(a)?, None),
        Command::ReconError(a) => (cmd_recon(a)?, None),
        Command::Union(a) => (cmd_union(a)?, None),
        Command::Export(a) => (cmd_export(a)?, None),
        Command::EvalStar(a) => (cmd_eval_star(a, &mut report)?, Some(&a.gate)),
        Command::EvalSplit(a) => (cmd_eval_split(a, &mut report)?, Some(&a.gate)),
    };
    if let Some(gate) = gate {
        finish_report(&mut report, gate, started)?;
    }
    Ok(code)
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.quiet);
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    info!("running {:?} on {} threads", argv.get(1), pool.current_num_threads());
    match pool.install(|| dispatch(&cli, &argv)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
