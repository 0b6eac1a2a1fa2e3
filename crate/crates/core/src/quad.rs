//! Adaptive Gauss–Kronrod (7/15) quadrature.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut fv = [0.0f64; 15];
    fv[7] = f(c);
    for i in 0..7 {
        let dx = h * XGK[i];
        fv[i] = f(c - dx);
        fv[14 - i] = f(c + dx);
    }
    let mut kron = WGK[7] * fv[7];
    let mut gauss = WG[3] * fv[7];
    let mut abs = WGK[7] * fv[7].abs();
    for i in 0..7 {
        let s = fv[i] + fv[14 - i];
        kron += WGK[i] * s;
        abs += WGK[i] * (fv[i].abs() + fv[14 - i].abs());
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    let mean = 0.5 * kron;
    let mut asc = WGK[7] * (fv[7] - mean).abs();
    for i in 0..7 {
        asc += WGK[i] * ((fv[i] - mean).abs() + (fv[14 - i] - mean).abs());
    }
    let (res, abs, asc) = (kron * h, abs * h.abs(), asc * h.abs());
    let mut err = ((kron - gauss) * h).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    if abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * abs);
    }
    (res, err)
}

const MAX_INTERVALS: usize = 2000;

/// `∫_a^b f` to the requested relative tolerance (with an absolute floor).
///
/// Globally adaptive: the interval with the largest error estimate is bisected
/// until the summed estimate meets the tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    let (whole, err) = kronrod(&f, a, b);
    let mut parts = vec![(a, b, whole, err)];
    let (mut total, mut total_err) = (whole, err);
    // the per-interval roundoff floor is 50 eps
    let rel_tol = rel_tol.max(100.0 * f64::EPSILON);
    while total_err > (rel_tol * total.abs()).max(abs_tol) && parts.len() < MAX_INTERVALS {
        let worst = (0..parts.len()).max_by(|&i, &j| parts[i].3.total_cmp(&parts[j].3)).expect("non-empty");
        let (lo, hi, v, e) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            parts.push((lo, hi, v, 0.0));
            continue;
        }
        let (l, el) = kronrod(&f, lo, mid);
        let (r, er) = kronrod(&f, mid, hi);
        total += l + r - v;
        total_err += el + er - e;
        parts.push((lo, mid, l, el));
        parts.push((mid, hi, r, er));
    }
    parts.iter().map(|p| p.2).sum()
}

/// `∫_0^∞ f` for integrands with characteristic scale `scale` near the origin
/// and negligible mass beyond `upper`. Panels grow geometrically so that both
/// the scale near zero and a slowly decaying tail are resolved.
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, scale: f64, upper: f64, rel_tol: f64) -> f64 {
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut hi = scale;
    loop {
        let abs_tol = (0.1 * rel_tol * total).max(1e-300);
        let part = integrate(&f, lo, hi, rel_tol, abs_tol);
        total += part;
        if hi >= upper || part.abs() < 1e-3 * f64::EPSILON * total.abs() {
            break;
        }
        lo = hi;
        hi = (2.0 * hi).min(upper);
    }
    total
}
