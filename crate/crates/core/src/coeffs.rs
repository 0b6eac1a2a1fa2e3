//! Generalized Stirling coefficients, their cross-column convolution and the
//! gamma-mixture weights of the fixed-location jumps.

use std::io::Write;

use num_bigint::BigUint;
use serde::Serialize;

use crate::data::GroupedCounts;
use crate::error::{Error, Result};
use crate::specfun::{ln_gamma, log_add_exp, log_sum_exp};

/// `log S(q₁,…,q_d; h)` for `h = h_min..=h_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StirlingColumn {
    /// `#{i : q_i > 0}`.
    pub h_min: usize,
    /// `Σ q_i`.
    pub h_max: usize,
    pub log_s: Vec<f64>,
}

impl StirlingColumn {
    pub fn log_at(&self, h: usize) -> f64 {
        if h < self.h_min || h > self.h_max {
            f64::NEG_INFINITY
        } else {
            self.log_s[h - self.h_min]
        }
    }

    /// `log a(h) = log Γ(h) + log S(…; h)`.
    pub fn log_a(&self) -> Vec<f64> {
        (self.h_min..=self.h_max).zip(&self.log_s).map(|(h, s)| ln_gamma(h as f64) + s).collect()
    }
}

fn check_q(q: &[u32]) -> Result<()> {
    if q.iter().all(|&x| x == 0) {
        return Err(Error::Domain("stirling column needs at least one positive count".into()));
    }
    Ok(())
}

/// Column of generalized Stirling numbers via
/// `S(q + e_ℓ; h) = q_ℓ S(q; h) + S(q; h−1)`, `S(0,…,0; 0) = 1`,
/// adding observations one at a time in group order.
pub fn stirling_column(q: &[u32]) -> Result<StirlingColumn> {
    check_q(q)?;
    let n: usize = q.iter().map(|&x| x as usize).sum();
    let mut cur = vec![f64::NEG_INFINITY; n + 1];
    cur[0] = 0.0;
    let mut added = 0usize;
    for &qi in q {
        for t in 0..qi {
            let lt = (t as f64).ln();
            for h in (1..=added + 1).rev() {
                let stay = if t > 0 { lt + cur[h] } else { f64::NEG_INFINITY };
                cur[h] = log_add_exp(stay, cur[h - 1]);
            }
            cur[0] = if t > 0 { lt + cur[0] } else { f64::NEG_INFINITY };
            added += 1;
        }
    }
    let h_min = q.iter().filter(|&&x| x > 0).count();
    Ok(StirlingColumn { h_min, h_max: n, log_s: cur[h_min..=n].to_vec() })
}

/// Same recursion in exact integers; entry `h - h_min`. Test oracle only.
pub fn stirling_column_exact(q: &[u32]) -> Result<(usize, Vec<BigUint>)> {
    check_q(q)?;
    let n: usize = q.iter().map(|&x| x as usize).sum();
    let mut cur = vec![BigUint::from(0u32); n + 1];
    cur[0] = BigUint::from(1u32);
    let mut added = 0usize;
    for &qi in q {
        for t in 0..qi {
            for h in (1..=added + 1).rev() {
                let v = &cur[h] * t + &cur[h - 1];
                cur[h] = v;
            }
            cur[0] = &cur[0] * t;
            added += 1;
        }
    }
    let h_min = q.iter().filter(|&&x| x > 0).count();
    Ok((h_min, cur[h_min..].to_vec()))
}

// Log-space convolution of two sequences starting at offsets lo_a, lo_b.
fn log_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; a.len() + b.len() - 1];
    let mut terms = Vec::with_capacity(a.len().min(b.len()));
    for (s, slot) in out.iter_mut().enumerate() {
        terms.clear();
        let lo = s.saturating_sub(b.len() - 1);
        let hi = s.min(a.len() - 1);
        for i in lo..=hi {
            terms.push(a[i] + b[s - i]);
        }
        *slot = log_sum_exp(&terms);
    }
    out
}

/// `log c_h` for `h = m..=n`: the convolution of `a(j; h) = Γ(h) S(…; h)` over columns.
pub fn convolve_columns(columns: &[StirlingColumn]) -> Result<(usize, Vec<f64>)> {
    let first = columns.first().ok_or_else(|| Error::Domain("no columns to convolve".into()))?;
    let mut lo = first.h_min;
    let mut acc = first.log_a();
    for col in &columns[1..] {
        acc = log_convolve(&acc, &col.log_a());
        lo += col.h_min;
    }
    Ok((lo, acc))
}

/// `p_h ∝ λ^{-h} Γ(h) S(…; h)` over `h = h_min..=h_max`.
pub fn mixture_weights(column: &StirlingColumn, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParam { field: "lambda", value: lambda });
    }
    let ll = lambda.ln();
    let mut w: Vec<f64> = (column.h_min..=column.h_max).zip(column.log_a()).map(|(h, a)| a - h as f64 * ll).collect();
    let z = log_sum_exp(&w);
    for v in &mut w {
        *v = (*v - z).exp();
    }
    Ok(w)
}

/// Per-column coefficients and their convolution for a dataset.
#[derive(Debug, Clone, Serialize)]
pub struct StirlingTable {
    pub columns: Vec<StirlingColumn>,
    /// `m = Σ_j m_•j`
    pub m: usize,
    /// `log c_h` for `h = m..=n`
    pub log_c: Vec<f64>,
}

#[derive(Serialize)]
struct DumpRow {
    column: Option<usize>,
    h: usize,
    log_coefficient: f64,
}

impl StirlingTable {
    pub fn build(data: &GroupedCounts) -> Result<Self> {
        let columns = (0..data.k()).map(|j| stirling_column(&data.column(j))).collect::<Result<Vec<_>>>()?;
        let (m, log_c) = convolve_columns(&columns)?;
        Ok(Self { columns, m, log_c })
    }

    pub fn n(&self) -> usize {
        self.m + self.log_c.len() - 1
    }

    /// Debug dump: one row per `(column, h)`; convolved rows have `column: null`.
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        let mut rows = Vec::new();
        for (j, col) in self.columns.iter().enumerate() {
            for (i, &v) in col.log_s.iter().enumerate() {
                rows.push(DumpRow { column: Some(j), h: col.h_min + i, log_coefficient: v });
            }
        }
        for (i, &v) in self.log_c.iter().enumerate() {
            rows.push(DumpRow { column: None, h: self.m + i, log_coefficient: v });
        }
        serde_json::to_writer_pretty(w, &rows)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exp_col(c: &StirlingColumn) -> Vec<f64> {
        c.log_s.iter().map(|v| v.exp()).collect()
    }

    // number of cycles of each permutation of 0..n
    fn cycle_counts(n: usize) -> Vec<usize> {
        fn rec(perm: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<usize>) {
            let n = used.len();
            if perm.len() == n {
                let mut seen = vec![false; n];
                let mut cycles = 0;
                for s in 0..n {
                    if !seen[s] {
                        cycles += 1;
                        let mut x = s;
                        while !seen[x] {
                            seen[x] = true;
                            x = perm[x];
                        }
                    }
                }
                out.push(cycles);
                return;
            }
            for v in 0..n {
                if !used[v] {
                    used[v] = true;
                    perm.push(v);
                    rec(perm, used, out);
                    perm.pop();
                    used[v] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    // cycle-count histogram over the Young subgroup S_{q1} × … × S_{qd}
    fn young_histogram(q: &[u32]) -> Vec<u64> {
        let n: usize = q.iter().map(|&x| x as usize).sum();
        let mut hist = vec![0u64; n + 1];
        hist[0] = 1;
        for &qi in q {
            let mut group = vec![0u64; qi as usize + 1];
            for c in cycle_counts(qi as usize) {
                group[c] += 1;
            }
            let mut next = vec![0u64; n + 1];
            for (a, &x) in hist.iter().enumerate() {
                for (b, &y) in group.iter().enumerate() {
                    if x > 0 && y > 0 {
                        next[a + b] += x * y;
                    }
                }
            }
            hist = next;
        }
        hist
    }

    #[test]
    fn column_examples() {
        let c = stirling_column(&[3]).unwrap();
        assert_eq!((c.h_min, c.h_max), (1, 3));
        let v = exp_col(&c);
        for (a, b) in v.iter().zip([2.0, 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = stirling_column(&[2, 1]).unwrap();
        assert_eq!(c.h_min, 2);
        let v = exp_col(&c);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
        let c = stirling_column(&[1, 1]).unwrap();
        assert_eq!((c.h_min, c.h_max, c.log_s.len()), (2, 2, 1));
        assert!(c.log_s[0].abs() < 1e-15);
        assert!(stirling_column(&[0, 0]).is_err());
        assert_eq!(stirling_column(&[0, 2, 0]).unwrap().h_min, 1);
    }

    #[test]
    fn brute_force_small_young_subgroups() {
        let mut qs: Vec<Vec<u32>> = Vec::new();
        for a in 0..=5u32 {
            for b in 0..=5u32 {
                for c in 0..=3u32 {
                    if a + b + c >= 1 && a + b + c <= 7 {
                        qs.push(vec![a, b, c]);
                    }
                }
            }
        }
        for q in qs {
            let hist = young_histogram(&q);
            let (h_min, exact) = stirling_column_exact(&q).unwrap();
            let col = stirling_column(&q).unwrap();
            for (h, &count) in hist.iter().enumerate() {
                let e = if h >= h_min { exact[h - h_min].clone() } else { BigUint::from(0u32) };
                assert_eq!(e, BigUint::from(count), "q={q:?} h={h}");
                let lv = col.log_at(h);
                if count == 0 {
                    assert_eq!(lv, f64::NEG_INFINITY);
                } else {
                    assert!((lv - (count as f64).ln()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn convolution_examples() {
        let c = stirling_column(&[1]).unwrap();
        let (m, lc) = convolve_columns(&[c.clone(), c]).unwrap();
        assert_eq!(m, 2);
        assert_eq!(lc.len(), 1);
        assert!(lc[0].abs() < 1e-15);
        let c = stirling_column(&[2, 3]).unwrap();
        let (m, lc) = convolve_columns(std::slice::from_ref(&c)).unwrap();
        assert_eq!(m, c.h_min);
        assert_eq!(lc, c.log_a());
    }

    #[test]
    fn mixture_weight_example() {
        let c = stirling_column(&[3]).unwrap();
        let w = mixture_weights(&c, 2.0).unwrap();
        let raw = [2.0 * 1.0 / 2.0, 3.0 * 1.0 / 4.0, 1.0 * 2.0 / 8.0];
        let z: f64 = raw.iter().sum();
        for (a, b) in w.iter().zip(raw) {
            assert!((a - b / z).abs() < 1e-14);
        }
        let c = stirling_column(&[1, 0, 1, 1]).unwrap();
        assert_eq!(mixture_weights(&c, 0.3).unwrap(), vec![1.0]);
        assert!(mixture_weights(&c, 0.0).is_err());
    }

    #[test]
    fn json_dump_has_all_rows() {
        let data = GroupedCounts::from_counts(vec![1.0, 2.0], vec![vec![2, 1], vec![0, 3]]).unwrap();
        let t = StirlingTable::build(&data).unwrap();
        let mut buf = Vec::new();
        t.write_json(&mut buf).unwrap();
        let rows: Vec<serde_json::Value> = serde_json::from_slice(&buf).unwrap();
        let expected = t.columns.iter().map(|c| c.log_s.len()).sum::<usize>() + t.log_c.len();
        assert_eq!(rows.len(), expected);
        assert_eq!(t.n(), 6);
    }

    proptest! {
        #[test]
        fn row_sum_identity(q in proptest::collection::vec(0u32..25, 1..5)) {
            prop_assume!(q.iter().any(|&x| x > 0));
            let col = stirling_column(&q).unwrap();
            let lhs = log_sum_exp(&col.log_s);
            let rhs: f64 = q.iter().map(|&x| ln_gamma(x as f64 + 1.0)).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
            let (_, exact) = stirling_column_exact(&q).unwrap();
            let total: BigUint = exact.iter().sum();
            let fact: BigUint = q.iter().map(|&x| (1..=x as u64).map(BigUint::from).product::<BigUint>()).product();
            prop_assert_eq!(total, fact);
            prop_assert!(col.log_s.iter().all(|v| v.is_finite()));
        }

        #[test]
        fn convolution_commutes(qs in proptest::collection::vec(proptest::collection::vec(0u32..7, 2), 2..4)) {
            prop_assume!(qs.iter().all(|q| q.iter().any(|&x| x > 0)));
            let cols: Vec<_> = qs.iter().map(|q| stirling_column(q).unwrap()).collect();
            let mut rev = cols.clone();
            rev.reverse();
            let (m1, a) = convolve_columns(&cols).unwrap();
            let (m2, b) = convolve_columns(&rev).unwrap();
            prop_assert_eq!(m1, m2);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn weights_are_a_distribution(q in proptest::collection::vec(0u32..12, 1..4), lambda in 1e-3f64..1e3) {
            prop_assume!(q.iter().any(|&x| x > 0));
            let col = stirling_column(&q).unwrap();
            let w = mixture_weights(&col, lambda).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&p| p >= 0.0));
        }
    }
}
