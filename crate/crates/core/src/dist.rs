//! Sampling helpers on top of `rand_distr`, with log-space variants for the
//! very small gamma shapes produced by series truncations.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::specfun::log_sum_exp;

/// Uniform on `(0, 1]`, safe to take the log of.
#[inline]
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `log G` with `G ~ Gamma(shape, 1)`; `-∞` for zero shape.
pub fn ln_gamma_unit<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if shape >= 1.0 {
        return gamma_unit(shape, rng).ln();
    }
    // G_a = G_{a+1} U^{1/a}
    gamma_unit(shape + 1.0, rng).ln() + open_uniform(rng).ln() / shape
}

/// As [`ln_gamma_unit`] with the shape given as `log shape`.
pub fn ln_gamma_unit_log_shape<R: Rng + ?Sized>(log_shape: f64, rng: &mut R) -> f64 {
    if log_shape >= 0.0 {
        return ln_gamma_unit(log_shape.exp(), rng);
    }
    let shape = log_shape.exp();
    let e = -open_uniform(rng).ln();
    gamma_unit(shape + 1.0, rng).ln() - (e.ln() - log_shape).exp()
}

fn gamma_unit<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0).expect("positive finite shape").sample(rng)
}

/// `Gamma(shape, rate)`; zero for zero shape. Draws that would underflow are
/// clamped to the smallest positive normal value.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    let x = if shape < 1.0 { (ln_gamma_unit(shape, rng) - rate.ln()).exp() } else { gamma_unit(shape, rng) / rate };
    x.max(f64::MIN_POSITIVE)
}

pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let x = ln_gamma_unit(a, rng);
    let y = ln_gamma_unit(b, rng);
    let m = x.max(y);
    let (ex, ey) = ((x - m).exp(), (y - m).exp());
    ex / (ex + ey)
}

/// Index drawn with probability proportional to `weights`.
pub fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Dirichlet draw from log-shapes, normalized in log space.
/// Shapes of `-∞` give exact zeros.
pub fn dirichlet_from_log_shapes<R: Rng + ?Sized>(log_shapes: &[f64], rng: &mut R) -> Vec<f64> {
    let lg: Vec<f64> =
        log_shapes.iter().map(|&ls| if ls == f64::NEG_INFINITY { f64::NEG_INFINITY } else { ln_gamma_unit_log_shape(ls, rng) }).collect();
    let z = log_sum_exp(&lg);
    let mut w: Vec<f64> = lg.iter().map(|&v| (v - z).exp()).collect();
    let s: f64 = w.iter().sum();
    for x in &mut w {
        *x /= s;
    }
    w
}
