//! Exact i.i.d. posterior sampling: rejection sampling of `αT` with the
//! optimal gamma proposal, gamma-mixture draws of `αJ₀ⱼ`, and the
//! fixed-location jumps.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::ars::ArsSampler;
use crate::coeffs::{mixture_weights, StirlingTable};
use crate::data::{validate_params, GroupedCounts, ModelParams};
use crate::dist;
use crate::error::{Error, Result};
use crate::mcmc::{draw_fixed_jumps, draw_u, lambda_of};
use crate::measures::{LatentRecord, PosteriorAtoms};
use crate::specfun::{digamma, ln_gamma, ln_rising};

/// Default cap on proposals for a single draw.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

const LOG_T_LO: f64 = -23.025_850_929_940_457; // ln 1e-10
const LOG_T_HI: f64 = 23.025_850_929_940_457;
const GRID: usize = 241;

/// `log R(t)` as a function of `x = log t`.
#[derive(Debug, Clone, Serialize)]
pub struct LogRatio {
    /// `m`
    pub h_min: usize,
    /// `log c_h − log((α₀))_h`
    pub coef: Vec<f64>,
    pub group_sizes: Vec<u32>,
}

impl LogRatio {
    pub fn new(table: &StirlingTable, alpha0: f64, group_sizes: Vec<u32>) -> Self {
        let coef = table.log_c.iter().enumerate().map(|(i, c)| c - ln_rising(alpha0, (table.m + i) as u32)).collect();
        Self { h_min: table.m, coef, group_sizes }
    }

    pub fn d(&self) -> usize {
        self.group_sizes.len()
    }

    /// `log R(e^x)`.
    pub fn value(&self, x: f64) -> f64 {
        self.value_and_slope(x).0
    }

    /// `log R(e^x)` and its derivative in `x`.
    pub fn value_and_slope(&self, x: f64) -> (f64, f64) {
        let t = x.exp();
        let mut max = f64::NEG_INFINITY;
        for (i, c) in self.coef.iter().enumerate() {
            max = max.max(c + (self.h_min + i) as f64 * x);
        }
        let (mut z, mut zh) = (0.0, 0.0);
        for (i, c) in self.coef.iter().enumerate() {
            let h = (self.h_min + i) as f64;
            let w = (c + h * x - max).exp();
            z += w;
            zh += w * h;
        }
        let mut value = max + z.ln();
        let mut slope = zh / z;
        for &n in &self.group_sizes {
            value -= ln_rising(t, n);
            slope -= rising_log_slope(t, n);
        }
        (value, slope)
    }

    /// `lim_{t→∞} log R(t) = log c_n − log((α₀))_n`.
    pub fn log_limit_inf(&self) -> f64 {
        *self.coef.last().expect("non-empty coefficients")
    }

    /// `lim_{t→0} log(t^{d−m} R(t)) = log c_m − log((α₀))_m − Σ log (nᵢ−1)!`.
    pub fn log_limit_zero(&self) -> f64 {
        self.coef[0] - self.group_sizes.iter().map(|&n| ln_gamma(n as f64)).sum::<f64>()
    }
}

// d/dx log((e^x))_n = Σ_{l<n} t/(t+l)
fn rising_log_slope(t: f64, n: u32) -> f64 {
    if n <= 64 {
        (0..n).map(|l| t / (t + l as f64)).sum()
    } else {
        t * (digamma(t + n as f64) - digamma(t))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RejectionStats {
    pub proposals: u64,
    pub accepted: u64,
    /// Proposals whose ratio exceeded the stored supremum.
    pub bound_violations: u64,
    pub max_log_excess: f64,
}

impl RejectionStats {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }

    pub fn merge(&mut self, other: &RejectionStats) {
        self.proposals += other.proposals;
        self.accepted += other.accepted;
        self.bound_violations += other.bound_violations;
        self.max_log_excess = self.max_log_excess.max(other.max_log_excess);
    }
}

/// Supremum of `x ↦ log R(e^x) − r x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Supremum {
    /// `log t*`; `±∞` when the supremum is a limit.
    pub log_t_star: f64,
    pub log_sup: f64,
}

/// Everything precomputed for exact sampling on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct ExactSamplerPlan {
    #[serde(skip)]
    pub stirling: StirlingTable,
    pub log_ratio: LogRatio,
    pub alpha0: f64,
    /// `b₀/α`
    pub prior_rate: f64,
    pub b: f64,
    pub m: usize,
    pub d: usize,
    pub r_opt: f64,
    pub t_star: f64,
    pub log_sup: f64,
    /// `log t* + log(b₀/α) − ψ(α₀ + r)` at `r_opt`.
    pub stationarity_residual: f64,
    pub proposal_shape: f64,
    pub proposal_rate: f64,
    pub budget: u64,
    pub stats: RejectionStats,
}

fn phi(lr: &LogRatio, r: f64, x: f64) -> f64 {
    lr.value(x) - r * x
}

fn phi_slope(lr: &LogRatio, r: f64, x: f64) -> f64 {
    lr.value_and_slope(x).1 - r
}

// Maximizer of phi between lo and hi, given phi'(lo) >= 0 >= phi'(hi).
fn refine_stationary(lr: &LogRatio, r: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi_slope(lr, r, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// Golden-section maximization of phi on [lo, hi].
fn golden_max(lr: &LogRatio, r: f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (phi(lr, r, a), phi(lr, r, b));
    while (hi - lo) > 1e-10 * (1.0 + lo.abs().max(hi.abs())) {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = phi(lr, r, b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = phi(lr, r, a);
        }
    }
    0.5 * (lo + hi)
}

/// `sup_t t^{−r} R(t)` in logs: grid scan in `log t`, local refinement on the
/// derivative, and the boundary limits for `r = 0` and `r = m − d`.
pub fn supremum(lr: &LogRatio, r: f64, r_max: f64) -> Supremum {
    let step = (LOG_T_HI - LOG_T_LO) / (GRID - 1) as f64;
    let mut lo_edge = LOG_T_LO;
    let mut hi_edge = LOG_T_HI;
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut xs: Vec<f64> = (0..GRID).map(|i| LOG_T_LO + step * i as f64).collect();
    for (i, &x) in xs.iter().enumerate() {
        let v = phi(lr, r, x);
        if v > best.1 {
            best = (i, v);
        }
    }
    // widen while the maximum sits on an edge and phi keeps increasing
    while best.0 == 0 && lo_edge > -700.0 && r < r_max {
        let x = lo_edge - 4.0;
        let v = phi(lr, r, x);
        if !(v > best.1) {
            break;
        }
        lo_edge = x;
        xs.insert(0, x);
        best = (0, v);
    }
    while best.0 == xs.len() - 1 && hi_edge < 700.0 && r > 0.0 {
        let x = hi_edge + 4.0;
        let v = phi(lr, r, x);
        if !(v > best.1) {
            break;
        }
        hi_edge = x;
        xs.push(x);
        best = (xs.len() - 1, v);
    }
    let i = best.0;
    let lo = xs[i.saturating_sub(1)];
    let hi = xs[(i + 1).min(xs.len() - 1)];
    let x_star = if phi_slope(lr, r, lo) >= 0.0 && phi_slope(lr, r, hi) <= 0.0 && lo < hi {
        refine_stationary(lr, r, lo, hi)
    } else {
        golden_max(lr, r, lo, hi)
    };
    let mut sup = Supremum { log_t_star: x_star, log_sup: phi(lr, r, x_star).max(best.1) };
    if r == 0.0 {
        let lim = lr.log_limit_inf();
        if lim >= sup.log_sup {
            sup = Supremum { log_t_star: f64::INFINITY, log_sup: lim };
        }
    }
    if r >= r_max {
        let lim = lr.log_limit_zero();
        if lim >= sup.log_sup {
            sup = Supremum { log_t_star: f64::NEG_INFINITY, log_sup: lim };
        }
    }
    sup
}

/// Log acceptance objective `r log t* − log R(t*) + (α₀+r) log(b₀/α) − log Γ(α₀+r)`.
pub fn acceptance_objective(sup: &Supremum, r: f64, alpha0: f64, prior_rate: f64) -> f64 {
    -sup.log_sup + (alpha0 + r) * prior_rate.ln() - ln_gamma(alpha0 + r)
}

fn objective_slope(sup: &Supremum, r: f64, alpha0: f64, prior_rate: f64) -> f64 {
    sup.log_t_star + prior_rate.ln() - digamma(alpha0 + r)
}

/// Builds the coefficient table and the optimal rejection sampler.
///
/// The objective is concave in `r`, and by the envelope theorem its slope is
/// `log t*(r) + log(b₀/α) − ψ(α₀+r)`; the optimum is the boundary when the
/// slope does not change sign and the bisection root otherwise.
pub fn build_plan(data: &GroupedCounts, params: &ModelParams) -> Result<ExactSamplerPlan> {
    validate_params(params)?;
    let stirling = StirlingTable::build(data)?;
    let lr = LogRatio::new(&stirling, params.alpha0, data.group_sizes());
    let (alpha0, rate) = (params.alpha0, params.prior_rate());
    let m = data.m() as usize;
    let d = data.d();
    let r_max = (m - d) as f64;
    let eval = |r: f64| {
        let s = supremum(&lr, r, r_max);
        (s, acceptance_objective(&s, r, alpha0, rate), objective_slope(&s, r, alpha0, rate))
    };
    let (s0, a0, g0) = eval(0.0);
    let mut best = (0.0, s0, a0);
    if r_max > 0.0 {
        let (s1, a1, g1) = eval(r_max);
        if a1 > best.2 {
            best = (r_max, s1, a1);
        }
        if g0 > 0.0 && g1 < 0.0 {
            let (mut lo, mut hi) = (0.0, r_max);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if eval(mid).2 > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let r = 0.5 * (lo + hi);
            let (s, a, _) = eval(r);
            if a >= best.2 {
                best = (r, s, a);
            }
        }
    }
    let (r_opt, sup, _) = best;
    if !sup.log_sup.is_finite() {
        return Err(Error::NumericalFailure("no finite bound for the rejection sampler".into()));
    }
    Ok(ExactSamplerPlan {
        stirling,
        alpha0,
        prior_rate: rate,
        b: params.b,
        m,
        d,
        r_opt,
        t_star: sup.log_t_star.exp(),
        log_sup: sup.log_sup,
        stationarity_residual: objective_slope(&sup, r_opt, alpha0, rate),
        proposal_shape: alpha0 + r_opt,
        proposal_rate: rate,
        budget: DEFAULT_BUDGET,
        stats: RejectionStats::default(),
        log_ratio: lr,
    })
}

impl ExactSamplerPlan {
    /// `log t^{−r} R(t) − log_sup`, the log acceptance probability at `t`.
    pub fn log_acceptance(&self, t: f64) -> f64 {
        let x = t.ln();
        self.log_ratio.value(x) - self.r_opt * x - self.log_sup
    }

    /// Unnormalized `log f_{αT}(t)`.
    pub fn log_density(&self, t: f64) -> f64 {
        let x = t.ln();
        (self.alpha0 - 1.0) * x - self.prior_rate * t + self.log_ratio.value(x)
    }

    /// Plan summary as JSON; mixture weights are given at `λ = b₀/α`.
    pub fn write_summary<W: Write>(&self, w: W) -> Result<()> {
        let weights: Vec<Vec<f64>> = self.stirling.columns.iter().map(|c| mixture_weights(c, self.prior_rate)).collect::<Result<_>>()?;
        let summary = serde_json::json!({
            "r_opt": self.r_opt,
            "t_star": if self.t_star.is_finite() { serde_json::json!(self.t_star) } else { serde_json::json!("inf") },
            "log_sup": self.log_sup,
            "stationarity_residual": self.stationarity_residual,
            "proposal": { "shape": self.proposal_shape, "rate": self.proposal_rate },
            "mixture_weights_at_prior_rate": weights,
            "column_ranges": self.stirling.columns.iter().map(|c| [c.h_min, c.h_max]).collect::<Vec<_>>(),
            "acceptance": self.stats,
        });
        serde_json::to_writer_pretty(w, &summary)?;
        Ok(())
    }
}

/// One exact draw of `αT` by rejection from `Gamma(α₀ + r, b₀/α)`.
pub fn sample_alpha_t_exact<R: Rng + ?Sized>(plan: &mut ExactSamplerPlan, rng: &mut R) -> Result<f64> {
    let tol = 1e-9 * plan.log_sup.abs().max(1.0);
    for _ in 0..plan.budget {
        let t = dist::gamma(plan.proposal_shape, plan.proposal_rate, rng);
        plan.stats.proposals += 1;
        let la = plan.log_acceptance(t);
        if la > tol {
            plan.stats.bound_violations += 1;
            plan.stats.max_log_excess = plan.stats.max_log_excess.max(la);
        }
        if dist::open_uniform(rng).ln() < la {
            plan.stats.accepted += 1;
            return Ok(t);
        }
    }
    Err(Error::BudgetExceeded { proposals: plan.budget })
}

/// Given `αT`, draws `(bβ, U/b)`, `λ(U)`, `H`, `αJ₀` and `J`.
pub fn complete_draw<R: Rng + ?Sized>(plan: &ExactSamplerPlan, data: &GroupedCounts, alpha_t: f64, rng: &mut R) -> Result<PosteriorAtoms> {
    let sizes = data.group_sizes();
    let (mut u, mut log1p_u) = (Vec::with_capacity(sizes.len()), Vec::with_capacity(sizes.len()));
    for &n in &sizes {
        let (_, ui, li) = draw_u(alpha_t, n, rng);
        u.push(ui);
        log1p_u.push(li);
    }
    let lambda = lambda_of(plan.prior_rate, &log1p_u);
    let mut alpha_j0 = Vec::with_capacity(data.k());
    for col in &plan.stirling.columns {
        let w = mixture_weights(col, lambda)?;
        let h = col.h_min + if w.len() == 1 { 0 } else { dist::categorical(&w, rng) };
        alpha_j0.push(dist::gamma(h as f64, lambda, rng));
    }
    let jumps = draw_fixed_jumps(data, plan.b, &log1p_u, &alpha_j0, rng);
    Ok(PosteriorAtoms::fixed(data, jumps, LatentRecord { alpha_t: Some(alpha_t), u, log1p_u, lambda, alpha_j0 }))
}

/// One i.i.d. posterior draw of the fixed-location jumps.
pub fn exact_draw<R: Rng + ?Sized>(plan: &mut ExactSamplerPlan, data: &GroupedCounts, rng: &mut R) -> Result<PosteriorAtoms> {
    let t = sample_alpha_t_exact(plan, rng)?;
    complete_draw(plan, data, t, rng)
}

/// Exact draw using the adaptive rejection sampler for `αT`.
pub fn ars_draw<R: Rng + ?Sized>(
    plan: &mut ExactSamplerPlan,
    ars: &mut ArsSampler,
    data: &GroupedCounts,
    rng: &mut R,
) -> Result<PosteriorAtoms> {
    let t = ars.sample(plan, rng)?;
    complete_draw(plan, data, t, rng)
}
