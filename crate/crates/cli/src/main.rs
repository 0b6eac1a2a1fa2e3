use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use hcrv::bench::{run_bench, summarize_bench, write_bench_csv, write_summary_csv, BenchSpec};
use hcrv::diagnostics::{ks_two_sample, summarize};
use hcrv::elicitation::{elicitation_grid, hcrv_moments, hdp_moments, prior_moment_check, write_grid, Model};
use hcrv::run::{run_fit, RunConfig, Sampler};
use hcrv::simulate::{simulate_data, SimSpec};
use hcrv::Streams;

#[derive(Parser)]
#[command(name = "hcrv", version, about = "Posterior inference for the normalized gamma-gamma hierarchical CRV")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a grouped dataset and write `data.json`.
    Simulate(SimulateArgs),
    /// Fit a dataset; writes `chain.csv`, `weights.csv` and `diag.json`.
    Fit(FitArgs),
    /// Run a benchmark grid; writes `bench.csv` and `bench_summary.csv`.
    Bench(BenchArgs),
    /// Solve for `(alpha, alpha0)` from target variance and correlation.
    Elicit(ElicitArgs),
    /// Prior moments of `(P1(A), P2(A))`.
    Moments(MomentsArgs),
    /// ESS, autocorrelation and two-sample KS on chain CSV columns.
    Diag(DiagArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    PoissonGroups,
    HdpCrf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "hdp-crf")]
    generator: Generator,
    /// Poisson means, one per group.
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 3.0, 4.0])]
    means: Vec<f64>,
    /// Poisson group sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [10, 10, 10])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long = "n", default_value_t = 10)]
    n_per_group: usize,
    #[arg(long, default_value_t = 5.0)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    alpha0: f64,
    #[arg(long = "out")]
    out: PathBuf,
    /// JSON file whose keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct SimulatePlan {
    seed: u64,
    spec: SimSpec,
    out_dir: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "exact")]
    sampler: Sampler,
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    /// Ignored by `exact` and `ars`
    #[arg(long, default_value_t = 100)]
    burnin: usize,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long = "trunc-L", default_value_t = hcrv::measures::DEFAULT_TRUNCATION)]
    trunc_l: usize,
    /// Dataset file (JSON or CSV).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 1.0)]
    b0: f64,
    /// Target prior variance factor; use with `--rho` instead of parameters.
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Mean and sd of the normal base measure.
    #[arg(long, default_value_t = 0.0)]
    base_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    base_sd: f64,
    /// Write every residual atom to `weights.csv`.
    #[arg(long)]
    residual_detail: bool,
    #[arg(long = "out")]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// groups, obs, clusters or all.
    #[arg(long, default_value = "all")]
    grid: String,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, value_delimiter = ',')]
    samplers: Vec<Sampler>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long = "out")]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Hcrv,
    Hdp,
}

impl From<ModelArg> for Model {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Hcrv => Model::Hcrv,
            ModelArg::Hdp => Model::Hdp,
        }
    }
}

#[derive(Args)]
struct ElicitArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_value = "hcrv")]
    model: Vec<ModelArg>,
    #[arg(long, value_delimiter = ',', required = true)]
    sigma2: Vec<f64>,
    #[arg(long, value_delimiter = ',', required = true)]
    rho: Vec<f64>,
    /// Directory for `grid.csv`; rows are printed either way.
    #[arg(long = "out")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MomentsArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    alpha0: f64,
    /// Base-measure mass `P0(A)`.
    #[arg(long, default_value_t = 0.5)]
    p0a: f64,
    #[arg(long, value_enum, default_value = "hcrv")]
    model: ModelArg,
    /// Add a Monte Carlo check with this many prior draws (hcrv only).
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long = "trunc-L", default_value_t = 2000)]
    trunc_l: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DiagArgs {
    /// Chain CSV written by `fit`.
    #[arg(long)]
    chain: PathBuf,
    /// Columns to summarize; all numeric columns except `sweep` by default.
    #[arg(long, value_delimiter = ',')]
    columns: Vec<String>,
    /// Second chain to compare column by column with a two-sample KS test.
    #[arg(long)]
    against: Option<PathBuf>,
    /// Leading rows to drop.
    #[arg(long, default_value_t = 0)]
    burnin: usize,
}

fn main() {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::Bench(a) => bench(a),
        Command::Elicit(a) => elicit(a),
        Command::Moments(a) => moments(a),
        Command::Diag(a) => diag(a),
    };
    if let Err(e) = res {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Recursive object merge; `over` wins.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn with_config<T: DeserializeOwned>(mut flags: Value, config: Option<&Path>) -> Result<T> {
    if let Some(path) = config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let over: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut flags, over);
    }
    Ok(serde_json::from_value(flags)?)
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = match a.generator {
        Generator::PoissonGroups => json!({"generator": "poisson-groups", "means": a.means, "sizes": a.sizes}),
        Generator::HdpCrf => json!({
            "generator": "hdp-crf", "d": a.d, "n_per_group": a.n_per_group, "alpha": a.alpha, "alpha0": a.alpha0,
        }),
    };
    let plan: SimulatePlan = with_config(json!({"seed": a.seed, "spec": spec, "out_dir": a.out}), a.config.as_deref())?;
    let data = simulate_data(&plan.spec, &mut Streams::new(plan.seed).stream("sim", 0))?;
    std::fs::create_dir_all(&plan.out_dir)?;
    let path = plan.out_dir.join("data.json");
    let mut f = BufWriter::new(File::create(&path)?);
    data.write_json(&mut f)?;
    f.flush()?;
    let c = data.counts()?;
    print_json(&json!({"path": path, "d": c.d(), "n": c.n(), "k": data.k}))
}

fn fit(a: FitArgs) -> Result<()> {
    let mut flags = json!({
        "seed": a.seed,
        "sampler": a.sampler,
        "draws": a.draws,
        "burnin": a.burnin,
        "thin": a.thin,
        "trunc_L": a.trunc_l,
        "residual_detail": a.residual_detail,
    });
    let base = json!({"kind": "normal", "mean": a.base_mean, "sd": a.base_sd});
    if let Some(p) = &a.data {
        flags["data"] = json!({"path": p});
    }
    if let Some(o) = &a.out {
        flags["out_dir"] = json!(o);
    }
    match (a.alpha, a.alpha0, a.sigma2, a.rho) {
        (Some(alpha), Some(alpha0), None, None) => {
            flags["params"] = json!({"alpha": alpha, "alpha0": alpha0, "b": a.b, "b0": a.b0, "base": base});
        }
        (None, None, Some(sigma2), Some(rho)) => {
            flags["elicitation"] = json!({"sigma2": sigma2, "rho": rho, "base": base});
        }
        (None, None, None, None) => {}
        _ => bail!("give both --alpha and --alpha0, or both --sigma2 and --rho"),
    }
    let config: RunConfig = with_config(flags, a.config.as_deref()).context("building the run configuration")?;
    let report = run_fit(&config)?;
    print_json(&json!({
        "status": report.status,
        "out_dir": config.out_dir,
        "sampler": report.sampler,
        "d": report.d,
        "k": report.k,
        "draws_written": report.draws_written,
        "setup_seconds": report.setup_seconds,
        "sampling_seconds": report.sampling_seconds,
        "chains": report.chains,
    }))
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut spec = BenchSpec::preset(&a.grid, a.replicates, a.seed)?;
    if !a.samplers.is_empty() {
        spec.samplers = a.samplers.clone();
    }
    spec.shape.draws = a.draws.unwrap_or(spec.shape.draws);
    spec.shape.burnin = a.burnin.unwrap_or(spec.shape.burnin);
    spec.shape.thin = a.thin.unwrap_or(spec.shape.thin);
    let spec: BenchSpec = with_config(serde_json::to_value(&spec)?, a.config.as_deref())?;
    let records = run_bench(&spec, a.jobs);
    let summary = summarize_bench(&records);
    std::fs::create_dir_all(&a.out)?;
    let mut f = BufWriter::new(File::create(a.out.join("bench.csv"))?);
    write_bench_csv(&mut f, &records)?;
    f.flush()?;
    let mut f = BufWriter::new(File::create(a.out.join("bench_summary.csv"))?);
    write_summary_csv(&mut f, &summary)?;
    f.flush()?;
    let failed = records.iter().filter(|r| !r.ok()).count();
    print_json(&json!({"records": records.len(), "failed": failed, "summary": summary}))
}

fn elicit(a: ElicitArgs) -> Result<()> {
    let mut rows = Vec::new();
    for m in &a.model {
        rows.extend(elicitation_grid(&a.sigma2, &a.rho, (*m).into())?);
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        let mut f = BufWriter::new(File::create(dir.join("grid.csv"))?);
        write_grid(&mut f, &rows)?;
        f.flush()?;
    }
    print_json(&rows)
}

fn moments(a: MomentsArgs) -> Result<()> {
    let report = match a.model {
        ModelArg::Hcrv => hcrv_moments(a.alpha, a.alpha0, a.p0a)?,
        ModelArg::Hdp => hdp_moments(a.alpha, a.alpha0, a.p0a)?,
    };
    let mut out = json!({"model": Model::from(a.model).name(), "moments": report});
    if let Some(reps) = a.mc {
        if matches!(a.model, ModelArg::Hdp) {
            bail!("--mc is only available for the hcrv model");
        }
        let mut rng = Streams::new(a.seed).stream("prior-mc", 0);
        out["monte_carlo"] = serde_json::to_value(prior_moment_check(a.alpha, a.alpha0, a.p0a, a.trunc_l, reps, &mut rng)?)?;
    }
    print_json(&out)
}

/// Numeric columns of a chain CSV; empty fields are skipped.
fn read_columns(path: &Path, burnin: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if row < burnin {
            continue;
        }
        for (j, field) in rec.iter().enumerate() {
            if field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().with_context(|| format!("{}: column {} row {}", path.display(), names[j], row + 1))?;
            cols[j].push(v);
        }
    }
    Ok(names.into_iter().zip(cols).collect())
}

fn diag(a: DiagArgs) -> Result<()> {
    let cols = read_columns(&a.chain, a.burnin)?;
    let wanted: Vec<String> = if a.columns.is_empty() {
        cols.iter().filter(|(n, v)| n != "sweep" && !v.is_empty()).map(|(n, _)| n.clone()).collect()
    } else {
        a.columns.clone()
    };
    let find = |cols: &[(String, Vec<f64>)], name: &str, path: &Path| -> Result<Vec<f64>> {
        match cols.iter().find(|(n, _)| n == name) {
            Some((_, v)) => Ok(v.clone()),
            None => bail!("{} has no column `{name}`", path.display()),
        }
    };
    let mut summaries = Vec::new();
    for name in &wanted {
        summaries.push(summarize(name, &find(&cols, name, &a.chain)?));
    }
    let mut out = json!({"chain": a.chain, "summaries": summaries});
    if let Some(other) = &a.against {
        let ocols = read_columns(other, a.burnin)?;
        let mut ks = Vec::new();
        for name in &wanted {
            let r = ks_two_sample(&find(&cols, name, &a.chain)?, &find(&ocols, name, other)?)?;
            ks.push(json!({"column": name, "statistic": r.statistic, "p_value": r.p_value}));
        }
        out["against"] = json!(other);
        out["ks"] = Value::Array(ks);
    }
    print_json(&out)
}
