//! Marginal restaurant-franchise Gibbs sampler for the HDP, with an optional
//! gamma prior on the group-level concentration `α̃`.
//!
//! Observations are exact atoms of the distinct values, so a table can only
//! serve the dish equal to its customers' value and the seating splits into
//! independent partitions of each cell `n_ij`. A customer whose dish is served
//! nowhere else must open a table for it.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{validate_params, GroupedCounts, ModelParams};
use crate::dist;
use crate::error::{Error, Result};
use crate::measures::{ferguson_klass_log, NormalizedWeights};
use crate::specfun::ln_rising;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConcentrationUpdate {
    /// Auxiliary beta/Bernoulli variables.
    #[default]
    Auxiliary,
    /// Gaussian random walk on `log α̃`.
    Metropolis { sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Concentration {
    /// `α̃ ~ Gamma(α₀, b₀/α)`, refreshed every sweep.
    Random {
        value: f64,
        update: ConcentrationUpdate,
    },
    Fixed {
        value: f64,
    },
}

impl Concentration {
    pub fn value(&self) -> f64 {
        match *self {
            Concentration::Random { value, .. } | Concentration::Fixed { value } => value,
        }
    }
}

/// Seating of every restaurant.
#[derive(Debug, Clone, PartialEq)]
pub struct FranchiseState {
    /// `tables[i][j]`: customer counts of the tables serving dish `j` in group `i`
    tables: Vec<Vec<Vec<u32>>>,
    /// `seat[i][j][c]`: table of the `c`-th customer of cell `(i, j)`
    seat: Vec<Vec<Vec<usize>>>,
    /// `m_·j`
    dish_tables: Vec<u32>,
    pub concentration: Concentration,
    pub alpha0: f64,
    prior_shape: f64,
    prior_rate: f64,
}

/// Counts of bookkeeping problems found by [`FranchiseState::audit`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub group_size_mismatch: usize,
    pub empty_tables: usize,
    pub dish_count_mismatch: usize,
    pub unserved_dishes: usize,
    pub seat_mismatch: usize,
    pub table_bound_violations: usize,
}

impl AuditReport {
    pub fn violations(&self) -> usize {
        self.group_size_mismatch
            + self.empty_tables
            + self.dish_count_mismatch
            + self.unserved_dishes
            + self.seat_mismatch
            + self.table_bound_violations
    }
}

impl FranchiseState {
    /// One table per nonempty cell; `α̃` starts at its prior mean in random mode.
    pub fn new(data: &GroupedCounts, params: &ModelParams, random: Option<ConcentrationUpdate>) -> Result<Self> {
        validate_params(params)?;
        let (d, k) = (data.d(), data.k());
        let mut tables = vec![vec![Vec::new(); k]; d];
        let mut seat = vec![vec![Vec::new(); k]; d];
        for i in 0..d {
            for j in 0..k {
                let n = data.count(i, j);
                if n > 0 {
                    tables[i][j].push(n);
                    seat[i][j] = vec![0; n as usize];
                }
            }
        }
        let dish_tables = data.column_indicator_totals();
        let prior_rate = params.prior_rate();
        let concentration = match random {
            Some(update) => Concentration::Random { value: params.alpha0 / prior_rate, update },
            None => Concentration::Fixed { value: params.alpha },
        };
        Ok(Self { tables, seat, dish_tables, concentration, alpha0: params.alpha0, prior_shape: params.alpha0, prior_rate })
    }

    pub fn d(&self) -> usize {
        self.tables.len()
    }

    pub fn k(&self) -> usize {
        self.dish_tables.len()
    }

    pub fn alpha_tilde(&self) -> f64 {
        self.concentration.value()
    }

    /// `m_·j`
    pub fn dish_tables(&self) -> &[u32] {
        &self.dish_tables
    }

    /// `m_··`
    pub fn total_tables(&self) -> u32 {
        self.dish_tables.iter().sum()
    }

    /// Occupied tables in each group.
    pub fn group_tables(&self) -> Vec<u32> {
        self.tables.iter().map(|g| g.iter().map(|c| c.len() as u32).sum()).collect()
    }

    /// Table sizes for dish `j` in group `i`.
    pub fn cell_tables(&self, i: usize, j: usize) -> &[u32] {
        &self.tables[i][j]
    }

    pub fn audit(&self, data: &GroupedCounts) -> AuditReport {
        let mut rep = AuditReport::default();
        let sizes = data.group_sizes();
        let distinct_per_group: Vec<u32> = data.indicators().iter().map(|r| r.iter().sum()).collect();
        let mut dish = vec![0u32; self.k()];
        for i in 0..self.d() {
            let mut seated = 0u32;
            for j in 0..self.k() {
                let cell = &self.tables[i][j];
                seated += cell.iter().sum::<u32>();
                rep.empty_tables += cell.iter().filter(|&&c| c == 0).count();
                dish[j] += cell.len() as u32;
                let mut tally = vec![0u32; cell.len()];
                for &t in &self.seat[i][j] {
                    match tally.get_mut(t) {
                        Some(x) => *x += 1,
                        None => rep.seat_mismatch += 1,
                    }
                }
                if tally != *cell || cell.iter().sum::<u32>() != data.count(i, j) {
                    rep.seat_mismatch += 1;
                }
            }
            if seated != sizes[i] {
                rep.group_size_mismatch += 1;
            }
            let m_i: u32 = self.tables[i].iter().map(|c| c.len() as u32).sum();
            if m_i < distinct_per_group[i] || m_i > sizes[i] {
                rep.table_bound_violations += 1;
            }
        }
        for j in 0..self.k() {
            if dish[j] != self.dish_tables[j] {
                rep.dish_count_mismatch += 1;
            }
            if dish[j] == 0 {
                rep.unserved_dishes += 1;
            }
        }
        rep
    }

    fn reseat<R: Rng + ?Sized>(&mut self, i: usize, j: usize, c: usize, rng: &mut R, weights: &mut Vec<f64>) {
        let t = self.seat[i][j][c];
        let cell = &mut self.tables[i][j];
        cell[t] -= 1;
        if cell[t] == 0 {
            let last = cell.len() - 1;
            cell.swap_remove(t);
            self.dish_tables[j] -= 1;
            if t != last {
                for s in self.seat[i][j].iter_mut() {
                    if *s == last {
                        *s = t;
                    }
                }
            }
        }
        let cell = &mut self.tables[i][j];
        let m_j = self.dish_tables[j];
        let new = if m_j == 0 {
            cell.len()
        } else {
            let m_all: u32 = self.dish_tables.iter().sum();
            weights.clear();
            weights.extend(cell.iter().map(|&n| n as f64));
            weights.push(self.concentration.value() * m_j as f64 / (m_all as f64 + self.alpha0));
            dist::categorical(weights, rng)
        };
        if new == cell.len() {
            cell.push(1);
            self.dish_tables[j] += 1;
        } else {
            cell[new] += 1;
        }
        self.seat[i][j][c] = new;
    }

    /// `log p(α̃ | tables)` up to a constant.
    pub fn log_concentration_target(&self, t: f64, group_sizes: &[u32]) -> f64 {
        if !(t > 0.0) {
            return f64::NEG_INFINITY;
        }
        let m = self.total_tables() as f64;
        (self.prior_shape + m - 1.0) * t.ln() - self.prior_rate * t - group_sizes.iter().map(|&n| ln_rising(t, n)).sum::<f64>()
    }

    /// Refreshes `α̃` from its full conditional given the table counts.
    pub fn resample_concentration<R: Rng + ?Sized>(&mut self, group_sizes: &[u32], rng: &mut R) -> Result<f64> {
        let (value, update) = match self.concentration {
            Concentration::Fixed { .. } => return Err(Error::ModeError),
            Concentration::Random { value, update } => (value, update),
        };
        let next = match update {
            ConcentrationUpdate::Auxiliary => {
                let mut shape = self.prior_shape + self.total_tables() as f64;
                let mut rate = self.prior_rate;
                for &n in group_sizes.iter().filter(|&&n| n > 0) {
                    let n = n as f64;
                    rate -= dist::beta(value + 1.0, n, rng).ln();
                    if rng.random::<f64>() < n / (n + value) {
                        shape -= 1.0;
                    }
                }
                dist::gamma(shape, rate, rng)
            }
            ConcentrationUpdate::Metropolis { sigma } => {
                let eps = sigma * dist::std_normal(rng);
                let prop = value * eps.exp();
                let log_r = self.log_concentration_target(prop, group_sizes) - self.log_concentration_target(value, group_sizes) + eps;
                if dist::open_uniform(rng).ln() < log_r {
                    prop
                } else {
                    value
                }
            }
        };
        self.concentration = Concentration::Random { value: next, update };
        Ok(next)
    }

    /// Draws `β ~ Dir(m_·1, …, m_·k, α₀)` and then each
    /// `πᵢ ~ Dir(α̃β_j + n_ij, α̃β_resid w_ℓ)`, where the residual root mass is
    /// split over `L` series atoms `w_ℓ` of a `DP(α₀)`.
    pub fn posterior_weights<R: Rng + ?Sized>(&self, data: &GroupedCounts, l: usize, rng: &mut R) -> Result<NormalizedWeights> {
        let k = self.k();
        let mut root_shapes: Vec<f64> = self.dish_tables.iter().map(|&m| (m as f64).ln()).collect();
        root_shapes.push(self.alpha0.ln());
        let beta = dist::dirichlet_from_log_shapes(&root_shapes, rng);
        let (log_x, _) = ferguson_klass_log(self.alpha0, l, rng)?;
        let z = crate::specfun::log_sum_exp(&log_x);
        let a = self.concentration.value();
        let log_resid = (a * beta[k]).ln();
        let mut fixed = Vec::with_capacity(self.d());
        let mut residual = Vec::with_capacity(self.d());
        let mut shapes = Vec::with_capacity(k + l);
        for i in 0..self.d() {
            shapes.clear();
            shapes.extend((0..k).map(|j| (a * beta[j] + data.count(i, j) as f64).ln()));
            shapes.extend(log_x.iter().map(|x| log_resid + x - z));
            let mut w = dist::dirichlet_from_log_shapes(&shapes, rng);
            residual.push(w.split_off(k));
            fixed.push(w);
        }
        Ok(NormalizedWeights { fixed, residual })
    }
}

/// Reseats every customer in `(group, dish, customer)` order. Table dishes are
/// pinned to their customers' value, so the dish update is the identity.
pub fn crf_gibbs_sweep<R: Rng + ?Sized>(state: &mut FranchiseState, rng: &mut R) {
    let mut weights = Vec::new();
    for i in 0..state.d() {
        for j in 0..state.k() {
            for c in 0..state.seat[i][j].len() {
                state.reseat(i, j, c, rng, &mut weights);
            }
        }
    }
}

/// Seating sweep followed by a concentration refresh in random mode.
pub fn franchise_step<R: Rng + ?Sized>(state: &mut FranchiseState, group_sizes: &[u32], rng: &mut R) {
    crf_gibbs_sweep(state, rng);
    if matches!(state.concentration, Concentration::Random { .. }) {
        state.resample_concentration(group_sizes, rng).expect("random mode");
    }
}

/// Chain CSV for the franchise sampler: `sweep, alpha_t, tables_total,
/// tables_1..k, tables_group_1..d`.
pub struct FranchiseWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> FranchiseWriter<W> {
    pub fn new(mut sink: W, d: usize, k: usize) -> Result<Self> {
        writeln!(sink, "{}", crate::SCHEMA_HEADER)?;
        let mut out = csv::Writer::from_writer(sink);
        let mut header = vec!["sweep".to_string(), "alpha_t".into(), "tables_total".into()];
        header.extend((1..=k).map(|j| format!("tables_{j}")));
        header.extend((1..=d).map(|i| format!("tables_group_{i}")));
        out.write_record(&header)?;
        Ok(Self { out })
    }

    pub fn write(&mut self, sweep: usize, state: &FranchiseState) -> Result<()> {
        let mut row = vec![sweep.to_string(), state.alpha_tilde().to_string(), state.total_tables().to_string()];
        row.extend(state.dish_tables().iter().map(|m| m.to_string()));
        row.extend(state.group_tables().iter().map(|m| m.to_string()));
        self.out.write_record(&row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
