//! Metropolis-within-Gibbs sampler on `(αT, V, αJ₀)`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coeffs::{mixture_weights, stirling_column, StirlingColumn};
use crate::data::{validate_params, GroupedCounts, ModelParams};
use crate::dist;
use crate::error::{Error, Result};
use crate::measures::{LatentRecord, PosteriorAtoms};
use crate::specfun::ln_rising;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    /// `x* ~ Gamma(δ, δ/x)`
    Gamma,
    /// `x* = x e^ε`, `ε ~ N(0, σ²)`
    LogWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub kind: ProposalKind,
    pub delta: f64,
    pub sigma: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self { kind: ProposalKind::LogWalk, delta: 2.0, sigma: 0.5 }
    }
}

impl ProposalConfig {
    pub fn gamma() -> Self {
        Self { kind: ProposalKind::Gamma, ..Self::default() }
    }

    pub fn log_walk() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 1.0) || !self.delta.is_finite() {
            return Err(Error::InvalidParam { field: "delta", value: self.delta });
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParam { field: "sigma", value: self.sigma });
        }
        Ok(())
    }

    /// Proposed value and the log Hastings correction.
    pub fn propose<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> (f64, f64) {
        match self.kind {
            ProposalKind::Gamma => {
                let y = dist::gamma(self.delta, self.delta / x, rng);
                (y, self.gamma_correction(x, y))
            }
            ProposalKind::LogWalk => {
                let eps = self.sigma * dist::std_normal(rng);
                (x * eps.exp(), eps)
            }
        }
    }

    /// `log Gamma(x; δ, δ/y) − log Gamma(y; δ, δ/x)`.
    pub fn gamma_correction(&self, x: f64, y: f64) -> f64 {
        let d = self.delta;
        (2.0 * d - 1.0) * (x.ln() - y.ln()) + d * (y / x - x / y)
    }
}

/// `(αT, V, αJ₀)` plus the per-sweep quantities `bβ`, `U/b` and `λ(U)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentState {
    pub alpha_t: f64,
    /// `(V₀, V₁, …, V_k)`
    pub v: Vec<f64>,
    pub alpha_j0: Vec<f64>,
    pub beta: Vec<f64>,
    pub u: Vec<f64>,
    /// `log(1 + Uᵢ/b)`
    pub log1p_u: Vec<f64>,
    pub lambda: f64,
}

impl LatentState {
    /// `V` at the centre of the simplex, `αT` at its prior mean and `αJ₀ⱼ`
    /// at `n_•j / λ` with `U = 0`.
    pub fn initial(data: &GroupedCounts, params: &ModelParams) -> Self {
        let k = data.k();
        let rate = params.prior_rate();
        Self {
            alpha_t: params.alpha0 / rate,
            v: vec![1.0 / (k + 1) as f64; k + 1],
            alpha_j0: data.column_totals().iter().map(|&n| n as f64 / rate).collect(),
            beta: vec![0.0; data.d()],
            u: vec![0.0; data.d()],
            log1p_u: vec![0.0; data.d()],
            lambda: rate,
        }
    }

    /// Number of free coordinates, `2k + 1`.
    pub fn dimension(&self) -> usize {
        1 + (self.v.len() - 1) + self.alpha_j0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.v.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.v.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("V is not an interior simplex point (sum {sum})")));
        }
        if !(self.alpha_t > 0.0) || self.alpha_j0.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Domain("non-positive latent scalar".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AcceptCounter {
    pub accepted: u64,
    pub proposed: u64,
}

impl AcceptCounter {
    fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += accepted as u64;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AcceptanceStats {
    pub v_pair: AcceptCounter,
    pub alpha_t: AcceptCounter,
}

/// Transition kernel bound to one dataset and parameter set.
#[derive(Debug, Clone)]
pub struct McmcKernel<'a> {
    data: &'a GroupedCounts,
    alpha0: f64,
    prior_rate: f64,
    b: f64,
    cfg: ProposalConfig,
    // non-zero counts of each column
    column_counts: Vec<Vec<u32>>,
    group_sizes: Vec<u32>,
    column_totals: Vec<u32>,
    bypass: Vec<bool>,
    // table-count coefficients, `None` on bypass columns
    tables: Vec<Option<StirlingColumn>>,
    pub stats: AcceptanceStats,
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || dist::open_uniform(rng).ln() < log_ratio
}

impl<'a> McmcKernel<'a> {
    pub fn new(data: &'a GroupedCounts, params: &ModelParams, cfg: ProposalConfig) -> Result<Self> {
        validate_params(params)?;
        cfg.validate()?;
        let column_counts: Vec<Vec<u32>> = (0..data.k()).map(|j| data.column(j).into_iter().filter(|&c| c > 0).collect()).collect();
        let bypass: Vec<bool> = column_counts.iter().map(|c| c.iter().all(|&x| x <= 1)).collect();
        let tables = column_counts
            .iter()
            .zip(&bypass)
            .map(|(c, &by)| if by { Ok(None) } else { stirling_column(c).map(Some) })
            .collect::<Result<_>>()?;
        Ok(Self {
            data,
            alpha0: params.alpha0,
            prior_rate: params.prior_rate(),
            b: params.b,
            cfg,
            column_counts,
            group_sizes: data.group_sizes(),
            column_totals: data.column_totals(),
            bypass,
            tables,
            stats: AcceptanceStats::default(),
        })
    }

    pub fn config(&self) -> &ProposalConfig {
        &self.cfg
    }

    pub fn data(&self) -> &GroupedCounts {
        self.data
    }

    /// `log f(αT = t | V)` up to a constant.
    pub fn log_target_alpha_t(&self, t: f64, v: &[f64]) -> f64 {
        let mut acc = (self.alpha0 - 1.0) * t.ln() - self.prior_rate * t;
        for (j, col) in self.column_counts.iter().enumerate() {
            let tv = t * v[j + 1];
            for &c in col {
                acc += ln_rising(tv, c);
            }
        }
        for &n in &self.group_sizes {
            acc -= ln_rising(t, n);
        }
        acc
    }

    fn column_term(&self, j: usize, tv: f64) -> f64 {
        self.column_counts[j].iter().map(|&c| ln_rising(tv, c)).sum()
    }

    /// `log f(αJ₀ⱼ = t | U)` up to a constant.
    pub fn log_target_alpha_j0(&self, j: usize, t: f64, lambda: f64) -> f64 {
        -t.ln() - lambda * t + self.column_term(j, t)
    }

    /// Log acceptance ratio for moving `(V₀, V_{j+1})` to `(v0_new, vj_new)`.
    pub fn v_pair_log_ratio(&self, state: &LatentState, j: usize, v0_new: f64, vj_new: f64) -> f64 {
        let (v0, vj) = (state.v[0], state.v[j + 1]);
        let t = state.alpha_t;
        (self.alpha0 - 1.0) * (v0_new.ln() - v0.ln()) - (vj_new.ln() - vj.ln()) + self.column_term(j, t * vj_new)
            - self.column_term(j, t * vj)
    }

    /// Update of the pair `(V₀, V_{j+1})` for column `j` (zero based).
    pub fn step_v_pair<R: Rng + ?Sized>(&mut self, state: &mut LatentState, j: usize, rng: &mut R) -> bool {
        let (v0, vj) = (state.v[0], state.v[j + 1]);
        let s = v0 + vj;
        let eps = dist::open_uniform(rng);
        let vj_new = eps * s;
        let v0_new = s - vj_new;
        let ok = v0_new > 0.0 && vj_new > 0.0 && accept(self.v_pair_log_ratio(state, j, v0_new, vj_new), rng);
        if ok {
            state.v[0] = v0_new;
            state.v[j + 1] = vj_new;
        }
        self.stats.v_pair.record(ok);
        ok
    }

    pub fn step_alpha_t<R: Rng + ?Sized>(&mut self, state: &mut LatentState, rng: &mut R) -> bool {
        let x = state.alpha_t;
        let (y, corr) = self.cfg.propose(x, rng);
        let ok =
            y > 0.0 && y.is_finite() && accept(self.log_target_alpha_t(y, &state.v) - self.log_target_alpha_t(x, &state.v) + corr, rng);
        if ok {
            state.alpha_t = y;
        }
        self.stats.alpha_t.record(ok);
        ok
    }

    /// Exact draw of `αJ₀ⱼ | λ`: `Gamma(n_•j, λ)` when every `n_ij ≤ 1`,
    /// otherwise `h` from the table-count weights then `Gamma(h, λ)`.
    pub fn step_alpha_j0<R: Rng + ?Sized>(&mut self, state: &mut LatentState, j: usize, rng: &mut R) {
        let lambda = state.lambda;
        state.alpha_j0[j] = match &self.tables[j] {
            None => dist::gamma(self.column_totals[j] as f64, lambda, rng),
            Some(col) => {
                let w = mixture_weights(col, lambda).expect("λ is positive and finite");
                let h = col.h_min + dist::categorical(&w, rng);
                dist::gamma(h as f64, lambda, rng)
            }
        };
    }

    pub fn uses_bypass(&self, j: usize) -> bool {
        self.bypass[j]
    }

    /// `bβᵢ ~ Gamma(αT, 1)`, `Uᵢ/b ~ Gamma(nᵢ, bβᵢ)` and `λ(U)`.
    pub fn refresh_latent<R: Rng + ?Sized>(&self, state: &mut LatentState, rng: &mut R) {
        for i in 0..self.group_sizes.len() {
            (state.beta[i], state.u[i], state.log1p_u[i]) = draw_u(state.alpha_t, self.group_sizes[i], rng);
        }
        state.lambda = lambda_of(self.prior_rate, &state.log1p_u);
    }

    /// `log J_ij` with `J_ij ~ Gamma(n_ij + αJ₀ⱼ, b(1 + Uᵢ/b))`.
    pub fn draw_fixed_jumps<R: Rng + ?Sized>(&self, log1p_u: &[f64], alpha_j0: &[f64], rng: &mut R) -> Vec<Vec<f64>> {
        draw_fixed_jumps(self.data, self.b, log1p_u, alpha_j0, rng)
    }

    /// One sweep in the order V pairs, αT, (β, U, λ), αJ₀, J.
    pub fn gibbs_sweep<R: Rng + ?Sized>(&mut self, state: &mut LatentState, rng: &mut R) -> PosteriorAtoms {
        for j in 0..self.data.k() {
            self.step_v_pair(state, j, rng);
        }
        self.step_alpha_t(state, rng);
        self.refresh_latent(state, rng);
        for j in 0..self.data.k() {
            self.step_alpha_j0(state, j, rng);
        }
        let jumps = self.draw_fixed_jumps(&state.log1p_u, &state.alpha_j0, rng);
        PosteriorAtoms::fixed(
            self.data,
            jumps,
            LatentRecord {
                alpha_t: Some(state.alpha_t),
                u: state.u.clone(),
                log1p_u: state.log1p_u.clone(),
                lambda: state.lambda,
                alpha_j0: state.alpha_j0.clone(),
            },
        )
    }
}

/// `λ(U) = b₀/α + Σ log(1 + Uᵢ/b)`.
pub fn lambda_of(prior_rate: f64, log1p_u: &[f64]) -> f64 {
    prior_rate + log1p_u.iter().sum::<f64>()
}

/// `(bβ, U/b, log(1 + U/b))` for one group of size `n`, drawn in logs so a
/// tiny `bβ` (small `αT`) does not overflow `U/b`. `U/b` saturates at `f64::MAX`.
pub fn draw_u<R: Rng + ?Sized>(alpha_t: f64, n: u32, rng: &mut R) -> (f64, f64, f64) {
    let ln_beta = dist::ln_gamma_unit(alpha_t, rng);
    let ln_u = dist::ln_gamma_unit(n as f64, rng) - ln_beta;
    (ln_beta.exp(), ln_u.exp().min(f64::MAX), softplus(ln_u))
}

/// `log(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 36.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn draw_fixed_jumps<R: Rng + ?Sized>(
    data: &GroupedCounts,
    b: f64,
    log1p_u: &[f64],
    alpha_j0: &[f64],
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..data.d())
        .map(|i| {
            let log_rate = b.ln() + log1p_u[i];
            (0..data.k()).map(|j| dist::ln_gamma_unit(data.count(i, j) as f64 + alpha_j0[j], rng) - log_rate).collect()
        })
        .collect()
}

/// Burn-in, then `draws` states kept every `thin` sweeps.
pub fn run_chain<R, F>(
    kernel: &mut McmcKernel<'_>,
    state: &mut LatentState,
    burnin: usize,
    thin: usize,
    draws: usize,
    rng: &mut R,
    mut keep: F,
) where
    R: Rng + ?Sized,
    F: FnMut(usize, &LatentState, PosteriorAtoms),
{
    for _ in 0..burnin {
        kernel.gibbs_sweep(state, rng);
    }
    let thin = thin.max(1);
    let mut sweep = burnin;
    for _ in 0..draws {
        let mut atoms = None;
        for _ in 0..thin {
            atoms = Some(kernel.gibbs_sweep(state, rng));
            sweep += 1;
        }
        keep(sweep, state, atoms.expect("thin >= 1"));
    }
}

/// Chain CSV writer: `sweep, alpha_t, v_0..v_k, alpha_j0_1..k, lambda, J_i_j`.
pub struct ChainWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> ChainWriter<W> {
    pub fn new(mut sink: W, d: usize, k: usize) -> Result<Self> {
        writeln!(sink, "{}", crate::SCHEMA_HEADER)?;
        let mut out = csv::Writer::from_writer(sink);
        let mut header = vec!["sweep".to_string(), "alpha_t".to_string()];
        header.extend((0..=k).map(|j| format!("v_{j}")));
        header.extend((1..=k).map(|j| format!("alpha_j0_{j}")));
        header.push("lambda".into());
        for i in 1..=d {
            header.extend((1..=k).map(|j| format!("J_{i}_{j}")));
        }
        out.write_record(&header)?;
        Ok(Self { out })
    }

    /// `v` may be empty for samplers without the auxiliary simplex; missing
    /// values are written as empty fields.
    pub fn write(&mut self, sweep: usize, v: &[f64], atoms: &PosteriorAtoms) -> Result<()> {
        let k = atoms.fixed_atoms.len();
        let mut row = Vec::with_capacity(3 + 2 * k + atoms.fixed_jumps.len() * k);
        row.push(sweep.to_string());
        row.push(atoms.latent.alpha_t.map(|x| x.to_string()).unwrap_or_default());
        if v.is_empty() {
            row.extend(std::iter::repeat_n(String::new(), k + 1));
        } else {
            row.extend(v.iter().map(|x| x.to_string()));
        }
        row.extend(atoms.latent.alpha_j0.iter().map(|x| x.to_string()));
        row.push(atoms.latent.lambda.to_string());
        for r in &atoms.fixed_jumps {
            row.extend(r.iter().map(|x| x.to_string()));
        }
        self.out.write_record(&row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    fn toy() -> GroupedCounts {
        GroupedCounts::from_counts(vec![1.0, 2.0, 3.0], vec![vec![2, 1, 0], vec![1, 3, 1]]).unwrap()
    }

    #[test]
    fn initial_state_shape() {
        let data = toy();
        let p = ModelParams::new(2.0, 1.5);
        let s = LatentState::initial(&data, &p);
        assert_eq!(s.dimension(), 2 * 3 + 1);
        assert!((s.alpha_t - 1.5 * 2.0).abs() < 1e-15);
        assert!((s.v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((s.lambda - 0.5).abs() < 1e-15);
        s.validate().unwrap();
    }

    #[test]
    fn identity_proposals_have_zero_log_ratio() {
        let data = toy();
        let p = ModelParams::new(1.0, 1.0);
        let k = McmcKernel::new(&data, &p, ProposalConfig::gamma()).unwrap();
        let s = LatentState::initial(&data, &p);
        assert_eq!(k.v_pair_log_ratio(&s, 1, s.v[0], s.v[2]), 0.0);
        assert_eq!(k.config().gamma_correction(1.7, 1.7), 0.0);
        let x = 0.9;
        assert_eq!(k.log_target_alpha_t(x, &s.v) - k.log_target_alpha_t(x, &s.v), 0.0);
    }

    #[test]
    fn gamma_correction_matches_densities() {
        let cfg = ProposalConfig::gamma();
        let lg = |x: f64, a: f64, r: f64| a * r.ln() - crate::specfun::ln_gamma(a) + (a - 1.0) * x.ln() - r * x;
        let (x, y) = (1.3, 0.4);
        let direct = lg(x, 2.0, 2.0 / y) - lg(y, 2.0, 2.0 / x);
        assert!((cfg.gamma_correction(x, y) - direct).abs() < 1e-12);
    }

    #[test]
    fn bypass_column_draws_gamma() {
        let data = GroupedCounts::from_counts(vec![1.0, 2.0], vec![vec![1, 2], vec![0, 1], vec![1, 0], vec![0, 3]]).unwrap();
        let p = ModelParams::new(1.0, 1.0);
        let mut k = McmcKernel::new(&data, &p, ProposalConfig::default()).unwrap();
        assert!(k.uses_bypass(0));
        assert!(!k.uses_bypass(1));
        let mut s = LatentState::initial(&data, &p);
        s.lambda = 2.0;
        let mut rng = Streams::new(9).stream("t", 0);
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            k.step_alpha_j0(&mut s, 0, &mut rng);
            sum += s.alpha_j0[0];
        }
        // Gamma(2, 2) has mean 1 and sd 1/√2
        assert!((sum / n as f64 - 1.0).abs() < 4.0 * (0.5 / n as f64).sqrt());
    }

    #[test]
    fn mixture_column_matches_target_mean() {
        // column (2, 1): density ∝ t^{-1} e^{-λt} t(t+1) t, mean from direct quadrature
        let data = GroupedCounts::from_counts(vec![1.0], vec![vec![2], vec![1]]).unwrap();
        let p = ModelParams::new(1.0, 1.0);
        let mut k = McmcKernel::new(&data, &p, ProposalConfig::default()).unwrap();
        assert!(!k.uses_bypass(0));
        let lambda = 1.5;
        let f = |t: f64| k.log_target_alpha_j0(0, t, lambda).exp();
        let (mut z, mut m) = (0.0, 0.0);
        let h = 1e-3;
        for i in 0..40_000 {
            let t = (i as f64 + 0.5) * h;
            z += f(t);
            m += t * f(t);
        }
        let target = m / z;
        let mut s = LatentState::initial(&data, &p);
        s.lambda = lambda;
        let mut rng = Streams::new(3).stream("t", 0);
        let n = 40_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            k.step_alpha_j0(&mut s, 0, &mut rng);
            sum += s.alpha_j0[0];
            sq += s.alpha_j0[0].powi(2);
        }
        let mean = sum / n as f64;
        let sd = (sq / n as f64 - mean * mean).sqrt();
        assert!((mean - target).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {target}");
    }

    #[test]
    fn sweeps_keep_invariants() {
        let data = toy();
        let p = ModelParams::new(1.0, 1.0).with_rates(3.0, 2.0);
        for cfg in [ProposalConfig::gamma(), ProposalConfig::log_walk()] {
            let mut k = McmcKernel::new(&data, &p, cfg).unwrap();
            let mut s = LatentState::initial(&data, &p);
            let mut rng = Streams::new(5).stream("t", 0);
            for _ in 0..500 {
                let a = k.gibbs_sweep(&mut s, &mut rng);
                assert!((s.v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(s.lambda >= p.prior_rate());
                assert!(a.fixed_jumps.iter().flatten().all(|&x| x > 0.0 && x.is_finite()));
                s.validate().unwrap();
            }
            assert!(k.stats.alpha_t.rate() > 0.05);
        }
    }

    #[test]
    fn zero_u_gives_prior_rate() {
        assert_eq!(lambda_of(0.7, &[0.0, 0.0]), 0.7);
    }

    #[test]
    fn chain_csv_layout() {
        let data = toy();
        let p = ModelParams::new(1.0, 1.0);
        let mut k = McmcKernel::new(&data, &p, ProposalConfig::default()).unwrap();
        let mut s = LatentState::initial(&data, &p);
        let mut rng = Streams::new(1).stream("t", 0);
        let mut buf = Vec::new();
        {
            let mut w = ChainWriter::new(&mut buf, 2, 3).unwrap();
            run_chain(&mut k, &mut s, 5, 2, 3, &mut rng, |sweep, st, a| w.write(sweep, &st.v, &a).unwrap());
            w.flush().unwrap();
        }
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# hcrv-schema v1");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 2 + 4 + 3 + 1 + 6);
        assert!(lines[4].starts_with("11,"));
    }
}
