//! Prior moments of `P̃ᵢ(A)` for the normalized gamma-gamma hCRV and for the
//! HDP, inverse maps from `(σ², ρ)` to `(α, α₀)`, and Laplace exponents.
//!
//! All closed forms assume `b = b₀ = 1`. The factor
//! `(α₀/α) e^{1/α} E_{α₀}(1/α)` is evaluated as `α₀ ∫ (1 + αu)^{-α₀} e^{-u} du`,
//! which stays finite for every `α > 0`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{ferguson_klass_root, sample_group_log_jumps};
use crate::specfun::{log_sum_exp, tilted_moment, tilted_power_integral};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnnormalizedMoments {
    pub mean: f64,
    pub variance: f64,
    pub covariance: f64,
    pub correlation: f64,
}

/// Moments of `(P̃ᵢ(A), P̃ⱼ(A))`, `i ≠ j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub mean: f64,
    pub variance: f64,
    pub covariance: f64,
    pub correlation: f64,
    /// `σ² = var / (P₀(A)(1 − P₀(A)))`
    pub sigma2: f64,
    pub unnormalized: Option<UnnormalizedMoments>,
}

fn check_positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParam { field, value: v })
    }
}

fn check_unit(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{field} must lie in (0, 1), got {v}")))
    }
}

/// `1 + (α₀/α) e^{1/α} E_{α₀}(1/α)`, the inverse of the hCRV correlation.
pub fn hcrv_inverse_correlation(alpha: f64, alpha0: f64) -> f64 {
    1.0 + alpha0 * tilted_power_integral(alpha, alpha0)
}

pub fn hcrv_moments(alpha: f64, alpha0: f64, p0a: f64) -> Result<MomentReport> {
    check_positive("alpha", alpha)?;
    check_positive("alpha0", alpha0)?;
    check_unit("P0(A)", p0a)?;
    let q = p0a * (1.0 - p0a);
    let inv = hcrv_inverse_correlation(alpha, alpha0);
    let covariance = q / (1.0 + alpha0);
    let variance = inv * covariance;
    let un = UnnormalizedMoments {
        mean: alpha0 * alpha * p0a,
        variance: alpha0 * alpha * (1.0 + alpha) * p0a,
        covariance: alpha0 * alpha * alpha * p0a,
        correlation: alpha / (1.0 + alpha),
    };
    Ok(MomentReport { mean: p0a, variance, covariance, correlation: 1.0 / inv, sigma2: variance / q, unnormalized: Some(un) })
}

pub fn hdp_moments(alpha: f64, alpha0: f64, p0a: f64) -> Result<MomentReport> {
    check_positive("alpha", alpha)?;
    check_positive("alpha0", alpha0)?;
    check_unit("P0(A)", p0a)?;
    let q = p0a * (1.0 - p0a);
    let sigma2 = (1.0 + alpha + alpha0) / ((1.0 + alpha0) * (1.0 + alpha));
    let correlation = (1.0 + alpha) / (1.0 + alpha + alpha0);
    let variance = sigma2 * q;
    Ok(MomentReport { mean: p0a, variance, covariance: correlation * variance, correlation, sigma2, unnormalized: None })
}

/// Solution of the hCRV moment equations with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Elicited {
    pub alpha: f64,
    pub alpha0: f64,
    pub residual: f64,
    pub iterations: usize,
}

const ALPHA_LO: f64 = 1e-8;
const ALPHA_HI: f64 = 1e8;

/// `(α, α₀)` with `var(P̃ᵢ(A)) = σ² P₀(A)(1−P₀(A))` and correlation `ρ`.
/// `α₀` is explicit; `α` solves `α₀ I(α) = 1/ρ − 1` by bisection in `log α`
/// followed by Newton steps.
pub fn solve_hcrv_params(sigma2: f64, rho: f64) -> Result<Elicited> {
    check_unit("sigma2", sigma2)?;
    check_unit("rho", rho)?;
    let alpha0 = 1.0 / (rho * sigma2) - 1.0;
    let target = 1.0 / rho - 1.0;
    let f = |a: f64| alpha0 * tilted_power_integral(a, alpha0) - target;
    let (mut lo, mut hi) = (ALPHA_LO.ln(), ALPHA_HI.ln());
    let (f_lo, f_hi) = (f(ALPHA_LO), f(ALPHA_HI));
    // f decreases in α
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::NoSolution { lo: ALPHA_LO, hi: ALPHA_HI, f_lo, f_hi });
    }
    let mut iterations = 0;
    while hi - lo > 1e-6 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if f(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut a = (0.5 * (lo + hi)).exp();
    for _ in 0..20 {
        iterations += 1;
        let r = f(a);
        // dI/dα = −α₀ ∫ u (1 + αu)^{-α₀-1} e^{-u} du
        let df = -alpha0 * alpha0 * tilted_moment(a, alpha0 + 1.0, 1);
        let next = a - r / df;
        let next = if next > lo.exp() * 0.5 && next < hi.exp() * 2.0 { next } else { a };
        let done = (next - a).abs() <= 1e-14 * a;
        a = next;
        if done {
            break;
        }
    }
    Ok(Elicited { alpha: a, alpha0, residual: f(a), iterations })
}

/// HDP parameters matching `(σ², ρ)` in closed form.
pub fn hdp_params_from(sigma2: f64, rho: f64) -> Result<(f64, f64)> {
    check_unit("sigma2", sigma2)?;
    check_unit("rho", rho)?;
    Ok(((1.0 / sigma2 - 1.0) / (1.0 - rho), 1.0 / (rho * sigma2) - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum LaplaceFamily {
    GammaGamma { alpha: f64, alpha0: f64, b: f64, b0: f64 },
    StableStable { alpha: f64, alpha0: f64, sigma: f64, sigma0: f64 },
}

/// `ψ(λ₁, …, λ_d) = −log E exp(−Σ λᵢ μ̃ᵢ(𝕏))` for a unit-mass base measure.
pub fn laplace_exponent(family: &LaplaceFamily, lambdas: &[f64]) -> Result<f64> {
    if let Some(&bad) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::Domain(format!("lambda must be non-negative, got {bad}")));
    }
    match *family {
        LaplaceFamily::GammaGamma { alpha, alpha0, b, b0 } => {
            for (f, v) in [("alpha", alpha), ("alpha0", alpha0), ("b", b), ("b0", b0)] {
                check_positive(f, v)?;
            }
            let inner: f64 = lambdas.iter().map(|l| (l / b).ln_1p()).sum();
            Ok(alpha0 * (alpha / b0 * inner).ln_1p())
        }
        LaplaceFamily::StableStable { alpha, alpha0, sigma, sigma0 } => {
            check_positive("alpha", alpha)?;
            check_positive("alpha0", alpha0)?;
            check_unit("sigma", sigma)?;
            check_unit("sigma0", sigma0)?;
            let inner: f64 = lambdas.iter().map(|l| l.powf(sigma)).sum();
            Ok(alpha0 * alpha.powf(sigma0) * inner.powf(sigma0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Hcrv,
    Hdp,
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Hcrv => "hcrv",
            Model::Hdp => "hdp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridRow {
    pub sigma2: f64,
    pub rho: f64,
    pub alpha: f64,
    pub alpha0: f64,
    pub model: Model,
}

/// Parameters over the product of the given `σ²` and `ρ` values.
pub fn elicitation_grid(sigma2: &[f64], rho: &[f64], model: Model) -> Result<Vec<GridRow>> {
    let mut rows = Vec::with_capacity(sigma2.len() * rho.len());
    for &s in sigma2 {
        for &r in rho {
            let (alpha, alpha0) = match model {
                Model::Hcrv => {
                    let e = solve_hcrv_params(s, r)?;
                    (e.alpha, e.alpha0)
                }
                Model::Hdp => hdp_params_from(s, r)?,
            };
            rows.push(GridRow { sigma2: s, rho: r, alpha, alpha0, model });
        }
    }
    Ok(rows)
}

/// CSV `sigma2, rho, alpha, alpha0, model` under the schema header.
pub fn write_grid<W: Write>(mut sink: W, rows: &[GridRow]) -> Result<()> {
    writeln!(sink, "{}", crate::SCHEMA_HEADER)?;
    let mut out = csv::Writer::from_writer(sink);
    out.write_record(["sigma2", "rho", "alpha", "alpha0", "model"])?;
    for r in rows {
        out.write_record([r.sigma2.to_string(), r.rho.to_string(), r.alpha.to_string(), r.alpha0.to_string(), r.model.name().into()])?;
    }
    out.flush()?;
    Ok(())
}

/// Sample mean, variance and correlation of `(P̃₁(A), P̃₂(A))` from truncated
/// prior draws of the gamma-gamma hCRV with `b = b₀ = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriorCheck {
    pub mean: f64,
    pub variance: f64,
    pub correlation: f64,
    pub replicates: usize,
}

pub fn prior_moment_check<R: Rng + ?Sized>(
    alpha: f64,
    alpha0: f64,
    p0a: f64,
    l: usize,
    replicates: usize,
    rng: &mut R,
) -> Result<PriorCheck> {
    check_positive("alpha", alpha)?;
    check_unit("P0(A)", p0a)?;
    let (mut s1, mut s11, mut s12) = (0.0, 0.0, 0.0);
    for _ in 0..replicates {
        let root = ferguson_klass_root(1.0 / alpha, alpha0, l, rng)?;
        let in_a: Vec<bool> = (0..l).map(|_| rng.random::<f64>() < p0a).collect();
        let jumps = sample_group_log_jumps(&root.log_jumps, &[0.0, 0.0], 1.0, rng);
        let p: Vec<f64> = jumps
            .iter()
            .map(|w| {
                let sel: Vec<f64> = w.iter().zip(&in_a).filter(|(_, a)| **a).map(|(x, _)| *x).collect();
                (log_sum_exp(&sel) - log_sum_exp(w)).exp()
            })
            .collect();
        s1 += 0.5 * (p[0] + p[1]);
        s11 += 0.5 * (p[0] * p[0] + p[1] * p[1]);
        s12 += p[0] * p[1];
    }
    let n = replicates as f64;
    let mean = s1 / n;
    let variance = s11 / n - mean * mean;
    let covariance = s12 / n - mean * mean;
    Ok(PriorCheck { mean, variance, correlation: covariance / variance, replicates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use crate::rng::Streams;
    use crate::specfun::exp_integral_e1;

    // E_ν(x) straight from its defining integral, substituted t = 1 + s.
    fn e_nu_direct(nu: f64, x: f64) -> f64 {
        quad::integrate(|s: f64| (1.0 + s).powf(-nu) * (-x * (1.0 + s)).exp(), 0.0, 60.0 / x, 1e-13, 0.0)
    }

    #[test]
    fn hcrv_moments_match_integral_form() {
        for &(a, a0) in &[(1.0, 1.0), (0.5, 3.0), (2.0, 0.7), (0.2, 5.0)] {
            let m = hcrv_moments(a, a0, 0.5).unwrap();
            let inv = 1.0 + a0 / a * (1.0 / a).exp() * e_nu_direct(a0, 1.0 / a);
            assert!((m.correlation - 1.0 / inv).abs() < 1e-10, "a={a} a0={a0}");
            assert!((m.covariance - m.correlation * m.variance).abs() < 1e-15);
        }
        // α = α₀ = 1: e·E₁(1)
        let m = hcrv_moments(1.0, 1.0, 0.5).unwrap();
        let inv = 1.0 + std::f64::consts::E * exp_integral_e1(1.0).unwrap();
        assert!((m.variance - inv * 0.125).abs() < 1e-14);
        assert!((m.variance - 0.199_543_420_290_399).abs() < 1e-12);
    }

    #[test]
    fn covariance_closed_form() {
        let m = hcrv_moments(0.7, 3.0, 0.5).unwrap();
        assert!((m.covariance - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn correlation_limits() {
        let m = hcrv_moments(1.0, 1e4, 0.5).unwrap();
        assert!((m.correlation - 0.5).abs() < 1e-2);
        let a0 = 2.0;
        assert!((hcrv_moments(1e-4, a0, 0.5).unwrap().correlation - 1.0 / (1.0 + a0)).abs() < 1e-3);
        assert!(hcrv_moments(1e4, a0, 0.5).unwrap().correlation > 0.999);
        let c: Vec<f64> = [0.1, 0.5, 0.9].iter().map(|&p| hcrv_moments(0.8, 1.7, p).unwrap().correlation).collect();
        assert!((c[0] - c[1]).abs() < 1e-12 && (c[1] - c[2]).abs() < 1e-12);
    }

    #[test]
    fn extreme_alpha_stays_finite() {
        for &a in &[1e-8, 1e-3, 1e3, 1e8] {
            let m = hcrv_moments(a, 2.0, 0.5).unwrap();
            assert!(m.variance.is_finite() && m.correlation > 0.0 && m.correlation < 1.0);
        }
    }

    #[test]
    fn hdp_moment_values() {
        let m = hdp_moments(1.0, 1.0, 0.5).unwrap();
        assert!((m.variance - 3.0 / 16.0).abs() < 1e-15);
        assert!((m.correlation - 2.0 / 3.0).abs() < 1e-15);
        assert!(hdp_moments(1e6, 2.0, 0.5).unwrap().correlation > 0.9999);
        assert!(hdp_moments(1.0, 1e6, 0.5).unwrap().correlation < 1e-5);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(hcrv_moments(1.0, 1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(hdp_moments(1.0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(solve_hcrv_params(1.0, 0.5).is_err());
    }

    #[test]
    fn solver_round_trip() {
        let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
        for &s in &grid {
            for &r in &grid {
                let e = solve_hcrv_params(s, r).unwrap();
                let m = hcrv_moments(e.alpha, e.alpha0, 0.5).unwrap();
                assert!((m.correlation - r).abs() < 1e-8, "s={s} r={r}");
                assert!((m.sigma2 - s).abs() < 1e-8, "s={s} r={r}");
            }
        }
        assert!((solve_hcrv_params(0.5, 0.5).unwrap().alpha0 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn alpha_increases_with_rho() {
        let a: Vec<f64> = [0.2, 0.4, 0.6, 0.8].iter().map(|&r| solve_hcrv_params(0.5, r).unwrap().alpha).collect();
        assert!(a.windows(2).all(|w| w[1] > w[0]), "{a:?}");
    }

    #[test]
    fn hdp_round_trip() {
        assert_eq!(hdp_params_from(0.5, 0.5).unwrap(), (2.0, 3.0));
        let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
        for &s in &grid {
            for &r in &grid {
                let (a, a0) = hdp_params_from(s, r).unwrap();
                let m = hdp_moments(a, a0, 0.5).unwrap();
                assert!((m.sigma2 - s).abs() < 1e-12 && (m.correlation - r).abs() < 1e-12);
            }
        }
        let a: Vec<f64> = [0.9, 0.99, 0.999].iter().map(|&r| hdp_params_from(0.5, r).unwrap().0).collect();
        assert!(a[2] > 9.0 * a[1] && a[1] > 9.0 * a[0]);
    }

    #[test]
    fn laplace_exponent_values() {
        let gg = LaplaceFamily::GammaGamma { alpha: 1.0, alpha0: 2.0, b: 1.0, b0: 1.0 };
        let ss = LaplaceFamily::StableStable { alpha: 1.5, alpha0: 2.0, sigma: 0.5, sigma0: 0.4 };
        assert_eq!(laplace_exponent(&gg, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(laplace_exponent(&ss, &[0.0, 0.0]).unwrap(), 0.0);
        let v = laplace_exponent(&gg, &[std::f64::consts::E - 1.0]).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
        for &l in &[0.1, 1.0, 7.5] {
            let v = laplace_exponent(&ss, &[l]).unwrap();
            let direct = 2.0 * 1.5f64.powf(0.4) * l.powf(0.5 * 0.4);
            assert!((v - direct).abs() < 1e-13 * direct);
        }
        let bad = LaplaceFamily::StableStable { alpha: 1.0, alpha0: 1.0, sigma: 1.2, sigma0: 0.5 };
        assert!(laplace_exponent(&bad, &[1.0]).is_err());
    }

    #[test]
    fn grid_dump_has_header() {
        let rows = elicitation_grid(&[0.3, 0.6], &[0.5], Model::Hdp).unwrap();
        let mut buf = Vec::new();
        write_grid(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(crate::SCHEMA_HEADER));
        assert_eq!(lines.next(), Some("sigma2,rho,alpha,alpha0,model"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn prior_simulation_matches_closed_form_variance() {
        let mut rng = Streams::new(11).stream("prior", 0);
        let c = prior_moment_check(1.0, 1.0, 0.5, 2000, 5000, &mut rng).unwrap();
        let m = hcrv_moments(1.0, 1.0, 0.5).unwrap();
        assert!((c.variance / m.variance - 1.0).abs() < 0.05, "{} vs {}", c.variance, m.variance);
        assert!((c.mean - 0.5).abs() < 0.02);
    }
}
