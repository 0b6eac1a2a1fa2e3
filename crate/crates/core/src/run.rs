//! Sampler dispatch and the `fit` pipeline: chain, weights and diagnostics
//! files for one configuration.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::ars::{ArsSampler, ArsStats};
use crate::data::{validate_params, BaseMeasure, GroupedCounts, ModelParams};
use crate::diagnostics::{summarize, ChainSummary};
use crate::elicitation::solve_hcrv_params;
use crate::error::{Error, Result};
use crate::exact::{ars_draw, build_plan, exact_draw, RejectionStats};
use crate::hdp::{franchise_step, ConcentrationUpdate, FranchiseState, FranchiseWriter};
use crate::mcmc::{AcceptanceStats, ChainWriter, LatentState, McmcKernel, ProposalConfig, ProposalKind};
use crate::measures::{normalized_weights, posterior_random_mean, PosteriorAtoms, WeightsWriter, DEFAULT_TRUNCATION};
use crate::rng::Streams;
use crate::simulate::{simulate_data, SimSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Metropolis-within-Gibbs with gamma proposals.
    Mh,
    /// Metropolis-within-Gibbs with log-scale Gaussian proposals.
    Mhlog,
    Exact,
    Ars,
    /// Restaurant franchise with the gamma hyperprior on `α̃`.
    Hdppr,
    /// Restaurant franchise with `α̃ = α` fixed.
    Hdpfixed,
}

impl Sampler {
    pub const ALL: [Sampler; 6] = [Sampler::Mh, Sampler::Mhlog, Sampler::Exact, Sampler::Ars, Sampler::Hdppr, Sampler::Hdpfixed];

    pub fn name(&self) -> &'static str {
        match self {
            Sampler::Mh => "mh",
            Sampler::Mhlog => "mhlog",
            Sampler::Exact => "exact",
            Sampler::Ars => "ars",
            Sampler::Hdppr => "hdppr",
            Sampler::Hdpfixed => "hdpfixed",
        }
    }

    pub fn is_iid(&self) -> bool {
        matches!(self, Sampler::Exact | Sampler::Ars)
    }

    pub fn is_franchise(&self) -> bool {
        matches!(self, Sampler::Hdppr | Sampler::Hdpfixed)
    }

    /// Name of the scalar chain used for ESS.
    pub fn ess_scalar(&self) -> &'static str {
        match self {
            Sampler::Hdpfixed => "tables_total",
            _ => "alpha_t",
        }
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sampler::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| Error::Config(format!("unknown sampler `{s}`")))
    }
}

impl std::fmt::Display for Sampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One kept draw handed to the caller.
#[allow(clippy::large_enum_variant)]
pub enum DrawRef<'a> {
    Atoms { sweep: usize, v: &'a [f64], atoms: PosteriorAtoms },
    Franchise { sweep: usize, state: &'a FranchiseState },
}

impl DrawRef<'_> {
    /// Designated scalar: `αT`, `α̃`, or the total table count for fixed `α̃`.
    pub fn scalar(&self) -> f64 {
        match self {
            DrawRef::Atoms { atoms, .. } => atoms.latent.alpha_t.unwrap_or(f64::NAN),
            DrawRef::Franchise { state, .. } => match state.concentration {
                crate::hdp::Concentration::Fixed { .. } => state.total_tables() as f64,
                _ => state.alpha_tilde(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlanSummary {
    pub r_opt: f64,
    pub t_star: f64,
    pub log_sup: f64,
    pub stationarity_residual: f64,
    pub m: usize,
}

/// Timing split and sampler statistics of one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChainStats {
    pub setup_seconds: f64,
    pub burnin_seconds: f64,
    /// Time spent in the sampler for kept draws, callbacks excluded.
    pub sampling_seconds: f64,
    pub mcmc_acceptance: Option<AcceptanceStats>,
    pub rejection: Option<RejectionStats>,
    pub ars: Option<ArsStats>,
    pub plan: Option<PlanSummary>,
}

/// Length and thinning of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainShape {
    pub draws: usize,
    pub burnin: usize,
    pub thin: usize,
}

/// Runs `sampler` and hands every kept draw to `keep`. For i.i.d. samplers
/// burn-in and thinning are ignored.
#[allow(clippy::too_many_arguments)]
pub fn sample_chain<F>(
    data: &GroupedCounts,
    params: &ModelParams,
    sampler: Sampler,
    shape: ChainShape,
    proposal: Option<ProposalConfig>,
    update: ConcentrationUpdate,
    streams: &Streams,
    mut keep: F,
) -> Result<ChainStats>
where
    F: FnMut(DrawRef<'_>) -> Result<()>,
{
    let mut rng = streams.stream("chain", 0);
    let mut stats = ChainStats::default();
    let thin = shape.thin.max(1);
    let mut busy = Duration::ZERO;
    let t0 = Instant::now();
    match sampler {
        Sampler::Mh | Sampler::Mhlog => {
            let mut cfg = proposal.unwrap_or_default();
            cfg.kind = if sampler == Sampler::Mh { ProposalKind::Gamma } else { ProposalKind::LogWalk };
            let mut kernel = McmcKernel::new(data, params, cfg)?;
            let mut state = LatentState::initial(data, params);
            stats.setup_seconds = t0.elapsed().as_secs_f64();
            let tb = Instant::now();
            for _ in 0..shape.burnin {
                kernel.gibbs_sweep(&mut state, &mut rng);
            }
            stats.burnin_seconds = tb.elapsed().as_secs_f64();
            let mut sweep = shape.burnin;
            for _ in 0..shape.draws {
                let ts = Instant::now();
                let mut atoms = None;
                for _ in 0..thin {
                    atoms = Some(kernel.gibbs_sweep(&mut state, &mut rng));
                    sweep += 1;
                }
                busy += ts.elapsed();
                keep(DrawRef::Atoms { sweep, v: &state.v, atoms: atoms.expect("thin >= 1") })?;
            }
            stats.mcmc_acceptance = Some(kernel.stats);
        }
        Sampler::Exact | Sampler::Ars => {
            let mut plan = build_plan(data, params)?;
            let mut ars = (sampler == Sampler::Ars).then(|| ArsSampler::new(&plan));
            stats.setup_seconds = t0.elapsed().as_secs_f64();
            for draw in 0..shape.draws {
                let ts = Instant::now();
                let atoms = match ars.as_mut() {
                    Some(a) => ars_draw(&mut plan, a, data, &mut rng)?,
                    None => exact_draw(&mut plan, data, &mut rng)?,
                };
                busy += ts.elapsed();
                keep(DrawRef::Atoms { sweep: draw + 1, v: &[], atoms })?;
            }
            stats.rejection = Some(plan.stats);
            stats.ars = ars.map(|a| a.stats);
            stats.plan = Some(PlanSummary {
                r_opt: plan.r_opt,
                t_star: plan.t_star,
                log_sup: plan.log_sup,
                stationarity_residual: plan.stationarity_residual,
                m: plan.m,
            });
        }
        Sampler::Hdppr | Sampler::Hdpfixed => {
            let random = (sampler == Sampler::Hdppr).then_some(update);
            let mut state = FranchiseState::new(data, params, random)?;
            let sizes = data.group_sizes();
            stats.setup_seconds = t0.elapsed().as_secs_f64();
            let tb = Instant::now();
            for _ in 0..shape.burnin {
                franchise_step(&mut state, &sizes, &mut rng);
            }
            stats.burnin_seconds = tb.elapsed().as_secs_f64();
            let mut sweep = shape.burnin;
            for _ in 0..shape.draws {
                let ts = Instant::now();
                for _ in 0..thin {
                    franchise_step(&mut state, &sizes, &mut rng);
                    sweep += 1;
                }
                busy += ts.elapsed();
                keep(DrawRef::Franchise { sweep, state: &state })?;
            }
        }
    }
    stats.sampling_seconds = busy.as_secs_f64();
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Path(PathBuf),
    Simulate(SimSpec),
}

/// Target prior moments: `var(P̃ᵢ(A)) = σ² P₀(A)(1 − P₀(A))`, correlation `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElicitationSpec {
    pub sigma2: f64,
    pub rho: f64,
    #[serde(default)]
    pub base: BaseMeasure,
}

// ignored by the i.i.d. samplers
fn default_burnin() -> usize {
    100
}

fn default_thin() -> usize {
    10
}

fn default_trunc() -> usize {
    DEFAULT_TRUNCATION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub sampler: Sampler,
    pub draws: usize,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_trunc", rename = "trunc_L")]
    pub trunc_l: usize,
    pub data: DataSource,
    #[serde(default)]
    pub params: Option<ModelParams>,
    #[serde(default)]
    pub elicitation: Option<ElicitationSpec>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub proposal: Option<ProposalConfig>,
    #[serde(default)]
    pub concentration_update: ConcentrationUpdate,
    /// Write every residual atom instead of one residual total per group.
    #[serde(default)]
    pub residual_detail: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("draws must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        match (&self.params, &self.elicitation) {
            (Some(p), None) => validate_params(p).map(|_| ()),
            (None, Some(_)) => Ok(()),
            _ => Err(Error::Config("exactly one of `params` and `elicitation` is required".into())),
        }
    }

    /// Model parameters, solving the moment equations when elicited.
    pub fn resolve_params(&self) -> Result<ModelParams> {
        self.validate()?;
        match (&self.params, &self.elicitation) {
            (Some(p), _) => Ok(*p),
            (None, Some(e)) => {
                let sol = solve_hcrv_params(e.sigma2, e.rho)?;
                Ok(ModelParams::new(sol.alpha, sol.alpha0).with_base(e.base))
            }
            _ => unreachable!("validated"),
        }
    }

    pub fn load_data(&self) -> Result<GroupedCounts> {
        match &self.data {
            DataSource::Path(p) => GroupedCounts::load(p),
            DataSource::Simulate(spec) => simulate_data(spec, &mut Streams::new(self.seed).stream("sim", 0))?.counts(),
        }
    }

    pub fn shape(&self) -> ChainShape {
        ChainShape { draws: self.draws, burnin: self.burnin, thin: self.thin }
    }
}

/// Contents of `diag.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub status: &'static str,
    pub error: Option<String>,
    pub sampler: Sampler,
    pub seed: u64,
    pub d: usize,
    pub k: usize,
    pub n: u32,
    pub params: ModelParams,
    pub draws_written: usize,
    pub setup_seconds: f64,
    pub burnin_seconds: f64,
    pub sampling_seconds: f64,
    pub total_seconds: f64,
    pub chains: Vec<ChainSummary>,
    /// `E(π_ij | X)` over kept draws.
    pub posterior_mean_weights: Vec<Vec<f64>>,
    /// `E(∫ x dP̃ᵢ | X)` over kept draws.
    pub posterior_random_means: Vec<f64>,
    pub stats: ChainStats,
}

/// Scalar traces collected while fitting.
#[derive(Debug, Default)]
struct Traces {
    names: Vec<&'static str>,
    values: Vec<Vec<f64>>,
}

impl Traces {
    fn push(&mut self, name: &'static str, v: f64) {
        match self.names.iter().position(|n| *n == name) {
            Some(i) => self.values[i].push(v),
            None => {
                self.names.push(name);
                self.values.push(vec![v]);
            }
        }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Runs one configuration and writes `chain.csv`, `weights.csv` and
/// `diag.json` under `out_dir`. On a sampler error the files written so far
/// are flushed and `diag.json` carries `"status": "failed"`.
pub fn run_fit(config: &RunConfig) -> Result<FitReport> {
    let start = Instant::now();
    let params = config.resolve_params()?;
    let data = config.load_data()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let streams = Streams::new(config.seed);
    let mut wrng = streams.stream("weights", 0);
    let (d, k) = (data.d(), data.k());

    enum Chain {
        Atoms(ChainWriter<BufWriter<File>>),
        Franchise(FranchiseWriter<BufWriter<File>>),
    }
    let mut chain = if config.sampler.is_franchise() {
        Chain::Franchise(FranchiseWriter::new(create(&config.out_dir, "chain.csv")?, d, k)?)
    } else {
        Chain::Atoms(ChainWriter::new(create(&config.out_dir, "chain.csv")?, d, k)?)
    };
    let mut weights_out = WeightsWriter::new(create(&config.out_dir, "weights.csv")?, config.residual_detail)?;
    let mut traces = Traces::default();
    let mut mean_w = vec![vec![0.0; k]; d];
    let mut mean_rm = vec![0.0; d];
    let mut written = 0usize;

    let result =
        sample_chain(&data, &params, config.sampler, config.shape(), config.proposal, config.concentration_update, &streams, |draw| {
            let (w, rm) = match &draw {
                DrawRef::Atoms { sweep, v, atoms } => {
                    let mut atoms = atoms.clone();
                    atoms.attach_residual(&params, config.trunc_l, &mut wrng)?;
                    atoms.root_residual.draw_atoms(&params.base, &mut wrng);
                    let w = normalized_weights(&atoms, &mut wrng);
                    let rm = posterior_random_mean(&w, &atoms)?;
                    if let Chain::Atoms(c) = &mut chain {
                        c.write(*sweep, v, &atoms)?;
                    }
                    weights_out.write(written + 1, &w, &atoms.fixed_atoms, &atoms.root_residual.atoms)?;
                    traces.push("alpha_t", atoms.latent.alpha_t.unwrap_or(f64::NAN));
                    traces.push("lambda", atoms.latent.lambda);
                    (w, rm)
                }
                DrawRef::Franchise { sweep, state } => {
                    let w = state.posterior_weights(&data, config.trunc_l, &mut wrng)?;
                    let atoms: Vec<f64> = (0..config.trunc_l).map(|_| params.base.sample(&mut wrng)).collect();
                    let rm: Vec<f64> = (0..d)
                        .map(|i| {
                            let f: f64 = w.fixed[i].iter().zip(data.distinct()).map(|(p, x)| p * x).sum();
                            f + w.residual[i].iter().zip(&atoms).map(|(p, y)| p * y).sum::<f64>()
                        })
                        .collect();
                    if let Chain::Franchise(c) = &mut chain {
                        c.write(*sweep, state)?;
                    }
                    weights_out.write(written + 1, &w, data.distinct(), &atoms)?;
                    traces.push("alpha_t", state.alpha_tilde());
                    traces.push("tables_total", state.total_tables() as f64);
                    (w, rm)
                }
            };
            for i in 0..d {
                for j in 0..k {
                    mean_w[i][j] += w.fixed[i][j];
                }
                mean_rm[i] += rm[i];
            }
            written += 1;
            Ok(())
        });

    match &mut chain {
        Chain::Atoms(c) => c.flush()?,
        Chain::Franchise(c) => c.flush()?,
    }
    weights_out.flush()?;
    let nw = written.max(1) as f64;
    let chains = traces
        .names
        .iter()
        .zip(&traces.values)
        .filter(|(n, _)| !(config.sampler == Sampler::Hdpfixed && **n == "alpha_t"))
        .map(|(n, v)| summarize(n, v))
        .collect();
    let (status, error, stats) = match result {
        Ok(s) => ("ok", None, s),
        Err(e) => ("failed", Some(e.to_string()), ChainStats::default()),
    };
    let report = FitReport {
        status,
        error: error.clone(),
        sampler: config.sampler,
        seed: config.seed,
        d,
        k,
        n: data.n(),
        params,
        draws_written: written,
        setup_seconds: stats.setup_seconds,
        burnin_seconds: stats.burnin_seconds,
        sampling_seconds: stats.sampling_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
        chains,
        posterior_mean_weights: mean_w.iter().map(|r| r.iter().map(|v| v / nw).collect()).collect(),
        posterior_random_means: mean_rm.iter().map(|v| v / nw).collect(),
        stats,
    };
    serde_json::to_writer_pretty(create(&config.out_dir, "diag.json")?, &report)?;
    match error {
        Some(e) => Err(Error::NumericalFailure(format!("sampler failed after {written} draws: {e}"))),
        None => Ok(report),
    }
}
