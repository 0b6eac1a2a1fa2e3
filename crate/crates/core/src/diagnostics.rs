//! Chain diagnostics: autocorrelation, effective sample size, potential scale
//! reduction and the two-sample Kolmogorov–Smirnov test.

use serde::Serialize;

use crate::error::{Error, Result};

pub const MIN_ESS_LENGTH: usize = 10;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample autocovariances `γ_0..γ_max_lag` (divisor `n`).
fn autocovariance(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..=max_lag.min(n - 1)).map(|k| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64).collect()
}

/// Autocorrelations up to `max_lag`; `NaN` for a constant chain.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let g = autocovariance(x, max_lag);
    g.iter().map(|v| v / g[0]).collect()
}

/// Geyer initial positive sequence estimate, clipped to `(0, n]`.
pub fn ess(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < MIN_ESS_LENGTH {
        return Err(Error::DegenerateChain(format!("need at least {MIN_ESS_LENGTH} values, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateChain("non-finite value".into()));
    }
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let gamma = |k: usize| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let g0 = gamma(0);
    if !(g0 > 0.0) {
        return Err(Error::DegenerateChain("zero variance".into()));
    }
    // Γ_k = ρ_{2k} + ρ_{2k+1}, kept while positive and made monotone
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (gamma(2 * k) + gamma(2 * k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Ok((n as f64 / tau).clamp(f64::MIN_POSITIVE, n as f64))
}

/// Split-free Gelman–Rubin `R̂` over equal-length chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    let n = chains.first().map_or(0, |c| c.len());
    if m < 2 || n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::DegenerateChain("need at least two chains of equal length >= 2".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let grand = mean(&means);
    let b = n as f64 / (m as f64 - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w =
        chains.iter().zip(&means).map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sum::<f64>() / m as f64;
    if !(w > 0.0) {
        return Err(Error::DegenerateChain("zero within-chain variance".into()));
    }
    let var = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Ok((var / w).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // small-x form converges faster here
        let s: f64 = (1..=50)
            .map(|k| {
                let a = (2 * k - 1) as f64;
                (-(a * a) * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp()
            })
            .sum();
        return 1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s;
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let kf = k as f64;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * kf * kf * x * x).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample KS test with the asymptotic p-value and the small-sample
/// correction `(√n_e + 0.12 + 0.11/√n_e) D`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::DegenerateChain("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    if x.iter().chain(&y).any(|v| v.is_nan()) {
        return Err(Error::DegenerateChain("NaN in sample".into()));
    }
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    Ok(KsResult { statistic: d, p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d) })
}

/// Summary of one scalar chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub name: String,
    pub length: usize,
    pub mean: f64,
    pub sd: f64,
    pub ess: Option<f64>,
    pub lag1_autocorrelation: f64,
}

pub fn summarize(name: &str, x: &[f64]) -> ChainSummary {
    let n = x.len();
    let mu = if n > 0 { mean(x) } else { f64::NAN };
    let sd = if n > 1 { (x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt() } else { f64::NAN };
    let lag1 = if n > 1 { autocorrelation(x, 1).get(1).copied().unwrap_or(f64::NAN) } else { f64::NAN };
    ChainSummary { name: name.to_string(), length: n, mean: mu, sd, ess: ess(x).ok(), lag1_autocorrelation: lag1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist;
    use crate::rng::Streams;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Streams::new(seed).stream("n", 0);
        (0..n).map(|_| dist::std_normal(&mut rng)).collect()
    }

    #[test]
    fn iid_chain_has_full_ess() {
        let e = ess(&normals(10_000, 1)).unwrap();
        assert!((8000.0..=12000.0).contains(&e), "{e}");
    }

    #[test]
    fn ar1_chain_has_small_ess() {
        let z = normals(10_000, 2);
        let mut x = vec![5.0; z.len()];
        let mut s = 0.0;
        for (v, e) in x.iter_mut().zip(&z) {
            s = 0.99 * s + e;
            *v += s;
        }
        let e = ess(&x).unwrap();
        assert!(e < 500.0, "{e}");
        assert!(e > 0.0);
    }

    #[test]
    fn short_or_constant_chains_are_rejected() {
        assert!(matches!(ess(&[1.0; 9]), Err(Error::DegenerateChain(_))));
        assert!(matches!(ess(&[1.0; 20]), Err(Error::DegenerateChain(_))));
    }

    #[test]
    fn ess_is_clipped_to_length() {
        // strongly anti-correlated chain
        let x: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = ess(&x).unwrap();
        assert!(e <= 100.0 && e > 0.0);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // P(K > 1.36) ≈ 0.05, P(K > 1.63) ≈ 0.01
        assert!((kolmogorov_sf(1.358_1) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(1.627_6) - 0.01).abs() < 2e-4);
        // both series agree at the switch point
        let lo = {
            let x: f64 = 1.0;
            let s: f64 = (1..=50)
                .map(|k| {
                    let a = (2 * k - 1) as f64;
                    (-(a * a) * std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp()
                })
                .sum();
            1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s
        };
        assert!((lo - kolmogorov_sf(1.0)).abs() < 1e-12);
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let a = normals(2000, 3);
        let b = normals(2000, 4);
        assert!(ks_two_sample(&a, &b).unwrap().p_value > 0.01);
        let c: Vec<f64> = b.iter().map(|v| v + 0.3).collect();
        assert!(ks_two_sample(&a, &c).unwrap().p_value < 1e-6);
        let same = ks_two_sample(&a, &a).unwrap();
        assert_eq!(same.statistic, 0.0);
    }

    #[test]
    fn gelman_rubin_near_one_for_mixed_chains() {
        let r = gelman_rubin(&[normals(1000, 5), normals(1000, 6), normals(1000, 7)]).unwrap();
        assert!((r - 1.0).abs() < 0.01);
        let shifted: Vec<f64> = normals(1000, 8).iter().map(|v| v + 3.0).collect();
        assert!(gelman_rubin(&[normals(1000, 9), shifted]).unwrap() > 1.5);
    }
}
