//! CPU time per effective sample over grids of simulated datasets.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{BaseMeasure, ModelParams};
use crate::diagnostics::ess;
use crate::error::{Error, Result};
use crate::hdp::ConcentrationUpdate;
use crate::rng::Streams;
use crate::run::{sample_chain, ChainShape, Sampler};
use crate::simulate::{simulate_data, SimSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    /// Grid axis this cell belongs to, e.g. `groups`.
    pub axis: String,
    pub spec: SimSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub seed: u64,
    pub samplers: Vec<Sampler>,
    pub replicates: usize,
    pub shape: ChainShape,
    /// Parameters used for fitting every dataset.
    pub fit_params: ModelParams,
    pub cells: Vec<BenchCell>,
}

fn hdp_cell(axis: &str, d: usize, n: usize, alpha0: f64) -> BenchCell {
    BenchCell { axis: axis.into(), spec: SimSpec::HdpCrf { d, n_per_group: n, alpha: 5.0, alpha0, base: BaseMeasure::default() } }
}

impl BenchSpec {
    /// Named grids: `groups` (n = 10, growing d), `obs` (d = 4, growing n),
    /// `clusters` (d = 5, n = 12, α₀ from 2 to 4) and `all`.
    pub fn preset(name: &str, replicates: usize, seed: u64) -> Result<Self> {
        let groups = || (2..=8).step_by(2).map(|d| hdp_cell("groups", d, 10, 3.0)).collect::<Vec<_>>();
        let obs = || [10, 20, 30, 40].into_iter().map(|n| hdp_cell("obs", 4, n, 3.0)).collect::<Vec<_>>();
        let clusters = || [2.0, 2.5, 3.0, 3.5, 4.0].into_iter().map(|a| hdp_cell("clusters", 5, 12, a)).collect::<Vec<_>>();
        let cells = match name {
            "groups" => groups(),
            "obs" => obs(),
            "clusters" => clusters(),
            "all" => [groups(), obs(), clusters()].concat(),
            other => return Err(Error::Config(format!("unknown bench grid `{other}`"))),
        };
        Ok(Self {
            seed,
            samplers: vec![Sampler::Mh, Sampler::Mhlog, Sampler::Exact, Sampler::Ars, Sampler::Hdppr],
            replicates,
            shape: ChainShape { draws: 2000, burnin: 500, thin: 1 },
            fit_params: ModelParams::new(1.0, 1.0),
            cells,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub axis: String,
    pub cell: usize,
    pub sampler: Sampler,
    pub replicate: usize,
    pub d: usize,
    pub n_per_group: usize,
    pub k: usize,
    pub setup_seconds: f64,
    pub burnin_seconds: f64,
    /// Sampling time with setup and burn-in excluded.
    pub cpu_seconds: f64,
    pub ess: f64,
    pub cpu_per_ess: f64,
    /// Empty on success.
    pub error: String,
}

impl BenchRecord {
    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub axis: String,
    pub cell: usize,
    pub sampler: Sampler,
    pub median_k: f64,
    pub median_cpu_per_ess: f64,
    pub succeeded: usize,
    pub failed: usize,
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_unit(spec: &BenchSpec, cell_idx: usize, rep: usize) -> Vec<BenchRecord> {
    let cell = &spec.cells[cell_idx];
    let streams = Streams::new(spec.seed).child("bench", (cell_idx * spec.replicates + rep) as u64);
    let (d, n) = match &cell.spec {
        SimSpec::HdpCrf { d, n_per_group, .. } => (*d, *n_per_group),
        SimSpec::PoissonGroups { sizes, .. } => (sizes.len(), sizes.first().copied().unwrap_or(0)),
    };
    let base = BenchRecord {
        axis: cell.axis.clone(),
        cell: cell_idx,
        sampler: Sampler::Exact,
        replicate: rep,
        d,
        n_per_group: n,
        k: 0,
        setup_seconds: f64::NAN,
        burnin_seconds: f64::NAN,
        cpu_seconds: f64::NAN,
        ess: f64::NAN,
        cpu_per_ess: f64::NAN,
        error: String::new(),
    };
    let data = match simulate_data(&cell.spec, &mut streams.stream("data", 0)).and_then(|s| s.counts()) {
        Ok(x) => x,
        Err(e) => return spec.samplers.iter().map(|&s| BenchRecord { sampler: s, error: e.to_string(), ..base.clone() }).collect(),
    };
    spec.samplers
        .iter()
        .enumerate()
        .map(|(si, &sampler)| {
            let mut rec = BenchRecord { sampler, k: data.k(), ..base.clone() };
            let mut trace = Vec::with_capacity(spec.shape.draws);
            let res = sample_chain(
                &data,
                &spec.fit_params,
                sampler,
                spec.shape,
                None,
                ConcentrationUpdate::Auxiliary,
                &streams.child("sampler", si as u64),
                |draw| {
                    trace.push(draw.scalar());
                    Ok(())
                },
            );
            match res.and_then(|st| ess(&trace).map(|e| (st, e))) {
                Ok((st, e)) => {
                    rec.setup_seconds = st.setup_seconds;
                    rec.burnin_seconds = st.burnin_seconds;
                    rec.cpu_seconds = st.sampling_seconds;
                    rec.ess = e;
                    rec.cpu_per_ess = st.sampling_seconds / e;
                }
                Err(e) => rec.error = e.to_string(),
            }
            rec
        })
        .collect()
}

/// Runs every `(cell, replicate)` unit on `jobs` worker threads. Each unit owns
/// its random streams, so results do not depend on `jobs` apart from timings.
/// Failures are recorded and the run continues.
pub fn run_bench(spec: &BenchSpec, jobs: usize) -> Vec<BenchRecord> {
    let units: Vec<(usize, usize)> = (0..spec.cells.len()).flat_map(|c| (0..spec.replicates).map(move |r| (c, r))).collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Vec<BenchRecord>)>> = Mutex::new(Vec::with_capacity(units.len()));
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1) {
            s.spawn(|| loop {
                let u = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(c, r)) = units.get(u) else { break };
                let recs = run_unit(spec, c, r);
                results.lock().expect("collector").push((u, recs));
            });
        }
    });
    let mut all = results.into_inner().expect("collector");
    all.sort_by_key(|x| x.0);
    all.into_iter().flat_map(|x| x.1).collect()
}

/// Per `(cell, sampler)` medians over replicates.
pub fn summarize_bench(records: &[BenchRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, usize, Sampler)> = Vec::new();
    for r in records {
        let key = (r.axis.clone(), r.cell, r.sampler);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(axis, cell, sampler)| {
            let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.cell == cell && r.sampler == sampler).collect();
            let ok: Vec<&&BenchRecord> = rs.iter().filter(|r| r.ok()).collect();
            CellSummary {
                axis,
                cell,
                sampler,
                median_k: median(&mut ok.iter().map(|r| r.k as f64).collect::<Vec<_>>()),
                median_cpu_per_ess: median(&mut ok.iter().map(|r| r.cpu_per_ess).collect::<Vec<_>>()),
                succeeded: ok.len(),
                failed: rs.len() - ok.len(),
            }
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(mut sink: W, records: &[BenchRecord]) -> Result<()> {
    writeln!(sink, "{}", crate::SCHEMA_HEADER)?;
    let mut out = csv::Writer::from_writer(sink);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut sink: W, rows: &[CellSummary]) -> Result<()> {
    writeln!(sink, "{}", crate::SCHEMA_HEADER)?;
    let mut out = csv::Writer::from_writer(sink);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
