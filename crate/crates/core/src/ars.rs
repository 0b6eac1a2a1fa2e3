//! Tangent-based adaptive rejection sampling of `αT`, run on `x = log αT`
//! where both tails of the target are exponential.

use rand::Rng;
use serde::Serialize;

use crate::dist;
use crate::error::Result;
use crate::exact::{sample_alpha_t_exact, ExactSamplerPlan};
use crate::specfun::log_sum_exp;

const REFRESH_BELOW: f64 = 0.8;
const CONCAVITY_TOL: f64 = 1e-8;
const MAX_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ArsStats {
    pub proposals: u64,
    pub accepted: u64,
    pub envelope_points: usize,
    pub log_concavity_violations: u64,
    /// Draws delegated to the plain rejection sampler.
    pub fallback_draws: u64,
}

impl ArsStats {
    pub fn rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Point {
    x: f64,
    h: f64,
    s: f64,
}

/// Persistent envelope for repeated draws from one plan.
#[derive(Debug, Clone)]
pub struct ArsSampler {
    points: Vec<Point>,
    // breakpoints z_0 < … < z_{K-2} between consecutive tangents
    z: Vec<f64>,
    log_mass: Vec<f64>,
    /// Set once a log-concavity violation has been observed.
    pub violated: bool,
    pub stats: ArsStats,
}

fn eval(plan: &ExactSamplerPlan, x: f64) -> Point {
    let t = x.exp();
    let (v, s) = plan.log_ratio.value_and_slope(x);
    Point { x, h: plan.alpha0 * x - plan.prior_rate * t + v, s: plan.alpha0 - plan.prior_rate * t + s }
}

// log ∫_a^b exp(h + s (y − x)) dy
fn piece_log_mass(p: &Point, a: f64, b: f64) -> f64 {
    let s = p.s;
    if a == f64::NEG_INFINITY {
        return p.h + s * (b - p.x) - s.ln();
    }
    if b == f64::INFINITY {
        return p.h + s * (a - p.x) - (-s).ln();
    }
    let len = b - a;
    if s.abs() * len < 1e-10 {
        return p.h + s * (0.5 * (a + b) - p.x) + len.ln();
    }
    if s > 0.0 {
        p.h + s * (b - p.x) + (-libm::expm1(-s * len)).ln() - s.ln()
    } else {
        p.h + s * (a - p.x) + (-libm::expm1(s * len)).ln() - (-s).ln()
    }
}

// Draw from density ∝ exp(s y) on [a, b].
fn piece_sample(s: f64, a: f64, b: f64, u: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b + u.ln() / s;
    }
    if b == f64::INFINITY {
        return a + u.ln() / s;
    }
    let len = b - a;
    if s.abs() * len < 1e-10 {
        return a + u * len;
    }
    if s > 0.0 {
        // from the right end: b + log(u + (1-u) e^{-s len}) / s
        b + (u + (1.0 - u) * (-s * len).exp()).ln() / s
    } else {
        a + (u + (1.0 - u) * (s * len).exp()).ln() / s
    }
}

impl ArsSampler {
    /// Envelope seeded around the mode of `log f` in `log t`.
    pub fn new(plan: &ExactSamplerPlan) -> Self {
        let mut lo = -23.0;
        let mut hi = 23.0;
        while eval(plan, lo).s <= 0.0 && lo > -700.0 {
            lo -= 10.0;
        }
        while eval(plan, hi).s >= 0.0 && hi < 700.0 {
            hi += 10.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if eval(plan, mid).s > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mode = 0.5 * (lo + hi);
        let eps = 1e-4;
        let curv = -(eval(plan, mode + eps).s - eval(plan, mode - eps).s) / (2.0 * eps);
        let delta = if curv > 0.0 { 1.0 / curv.sqrt() } else { 1.0 };
        let mut left = mode - delta;
        while eval(plan, left).s <= 0.0 && left > mode - 700.0 {
            left -= delta;
        }
        let mut right = mode + delta;
        while eval(plan, right).s >= 0.0 && right < mode + 700.0 {
            right += delta;
        }
        let mut sampler = Self {
            points: vec![eval(plan, left), eval(plan, mode), eval(plan, right)],
            z: Vec::new(),
            log_mass: Vec::new(),
            violated: false,
            stats: ArsStats::default(),
        };
        sampler.rebuild();
        sampler
    }

    fn rebuild(&mut self) {
        let p = &self.points;
        self.z.clear();
        for w in p.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ds = a.s - b.s;
            let z = if ds.abs() < 1e-12 { 0.5 * (a.x + b.x) } else { (b.h - a.h - b.x * b.s + a.x * a.s) / ds };
            self.z.push(z.clamp(a.x, b.x));
        }
        self.log_mass = (0..p.len())
            .map(|i| {
                let a = if i == 0 { f64::NEG_INFINITY } else { self.z[i - 1] };
                let b = if i == p.len() - 1 { f64::INFINITY } else { self.z[i] };
                piece_log_mass(&p[i], a, b)
            })
            .collect();
        self.stats.envelope_points = p.len();
    }

    fn upper(&self, x: f64) -> f64 {
        let i = self.z.partition_point(|&z| z < x);
        let p = &self.points[i];
        p.h + p.s * (x - p.x)
    }

    fn concave_ok(&self) -> bool {
        let p = &self.points;
        p.first().is_some_and(|q| q.s > 0.0)
            && p.last().is_some_and(|q| q.s < 0.0)
            && p.windows(2).all(|w| w[1].s - w[0].s <= CONCAVITY_TOL)
    }

    fn insert(&mut self, q: Point) {
        if self.points.len() >= MAX_POINTS || !q.h.is_finite() {
            return;
        }
        let i = self.points.partition_point(|p| p.x < q.x);
        if self.points.get(i).is_some_and(|p| p.x == q.x) {
            return;
        }
        self.points.insert(i, q);
        self.rebuild();
    }

    /// One draw of `αT`; delegates to plain rejection after a violation.
    pub fn sample<R: Rng + ?Sized>(&mut self, plan: &mut ExactSamplerPlan, rng: &mut R) -> Result<f64> {
        if self.violated || !self.concave_ok() {
            if !self.violated {
                self.violated = true;
                self.stats.log_concavity_violations += 1;
            }
            self.stats.fallback_draws += 1;
            return sample_alpha_t_exact(plan, rng);
        }
        for _ in 0..plan.budget {
            let z = log_sum_exp(&self.log_mass);
            let probs: Vec<f64> = self.log_mass.iter().map(|m| (m - z).exp()).collect();
            let i = dist::categorical(&probs, rng);
            let a = if i == 0 { f64::NEG_INFINITY } else { self.z[i - 1] };
            let b = if i == self.points.len() - 1 { f64::INFINITY } else { self.z[i] };
            let x = piece_sample(self.points[i].s, a, b, dist::open_uniform(rng)).clamp(-745.0, 709.0);
            self.stats.proposals += 1;
            let q = eval(plan, x);
            let gap = q.h - self.upper(x);
            if gap > CONCAVITY_TOL * q.h.abs().max(1.0) {
                self.violated = true;
                self.stats.log_concavity_violations += 1;
                self.stats.fallback_draws += 1;
                return sample_alpha_t_exact(plan, rng);
            }
            let accept = dist::open_uniform(rng).ln() < gap;
            if gap.exp() < REFRESH_BELOW {
                self.insert(q);
                if !self.concave_ok() {
                    self.violated = true;
                    self.stats.log_concavity_violations += 1;
                    if !accept {
                        self.stats.fallback_draws += 1;
                        return sample_alpha_t_exact(plan, rng);
                    }
                }
            }
            if accept {
                self.stats.accepted += 1;
                return Ok(x.exp());
            }
        }
        Err(crate::error::Error::BudgetExceeded { proposals: plan.budget })
    }
}
