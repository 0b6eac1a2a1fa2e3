//! Synthetic grouped datasets.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{ingest_groups, BaseMeasure, GroupedCounts};
use crate::dist;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum SimSpec {
    /// Independent Poisson samples, one mean and size per group.
    PoissonGroups { means: Vec<f64>, sizes: Vec<usize> },
    /// Draws from an HDP via the restaurant franchise: group concentration
    /// `alpha`, root concentration `alpha0`.
    HdpCrf {
        d: usize,
        n_per_group: usize,
        alpha: f64,
        alpha0: f64,
        #[serde(default)]
        base: BaseMeasure,
    },
}

/// Dataset file as written by [`simulate_data`]; loads as a plain dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDataset {
    pub groups: Vec<Vec<f64>>,
    pub k: usize,
    pub spec: SimSpec,
}

impl SimulatedDataset {
    pub fn counts(&self) -> Result<GroupedCounts> {
        ingest_groups(&self.groups)
    }

    pub fn write_json<W: Write>(&self, sink: W) -> Result<()> {
        serde_json::to_writer_pretty(sink, self)?;
        Ok(())
    }
}

fn check_spec(spec: &SimSpec) -> Result<()> {
    match spec {
        SimSpec::PoissonGroups { means, sizes } => {
            if means.is_empty() || means.len() != sizes.len() {
                return Err(Error::Config("poisson-groups needs one mean per size".into()));
            }
            if let Some(&m) = means.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
                return Err(Error::InvalidParam { field: "means", value: m });
            }
            if sizes.contains(&0) {
                return Err(Error::Config("group sizes must be positive".into()));
            }
        }
        SimSpec::HdpCrf { d, n_per_group, alpha, alpha0, .. } => {
            if *d == 0 || *n_per_group == 0 {
                return Err(Error::Config("hdp-crf needs d >= 1 and n_per_group >= 1".into()));
            }
            if !(*alpha > 0.0) {
                return Err(Error::InvalidParam { field: "alpha", value: *alpha });
            }
            if !(*alpha0 > 0.0) {
                return Err(Error::InvalidParam { field: "alpha0", value: *alpha0 });
            }
        }
    }
    Ok(())
}

pub fn simulate_data<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SimulatedDataset> {
    check_spec(spec)?;
    let groups = match spec {
        SimSpec::PoissonGroups { means, sizes } => means
            .iter()
            .zip(sizes)
            .map(|(&m, &n)| {
                let p = Poisson::new(m).map_err(|_| Error::InvalidParam { field: "means", value: m })?;
                Ok((0..n).map(|_| p.sample(rng)).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?,
        SimSpec::HdpCrf { d, n_per_group, alpha, alpha0, base } => {
            let mut dishes: Vec<f64> = Vec::new();
            let mut dish_tables: Vec<f64> = Vec::new();
            let mut groups = Vec::with_capacity(*d);
            for _ in 0..*d {
                let mut tables: Vec<(usize, f64)> = Vec::new();
                let mut g = Vec::with_capacity(*n_per_group);
                for _ in 0..*n_per_group {
                    let mut w: Vec<f64> = tables.iter().map(|t| t.1).collect();
                    w.push(*alpha);
                    let t = dist::categorical(&w, rng);
                    if t == tables.len() {
                        let mut dw = dish_tables.clone();
                        dw.push(*alpha0);
                        let j = dist::categorical(&dw, rng);
                        if j == dishes.len() {
                            dishes.push(base.sample(rng));
                            dish_tables.push(0.0);
                        }
                        dish_tables[j] += 1.0;
                        tables.push((j, 0.0));
                    }
                    tables[t].1 += 1.0;
                    g.push(dishes[tables[t].0]);
                }
                groups.push(g);
            }
            groups
        }
    };
    let k = ingest_groups(&groups)?.k();
    Ok(SimulatedDataset { groups, k, spec: spec.clone() })
}
