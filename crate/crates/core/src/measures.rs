//! Posterior random measures: fixed-location jumps, Ferguson–Klass truncation
//! of the root gamma CRM, group-level residual jumps, exact residual masses,
//! normalized weights and random means.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::data::{BaseMeasure, GroupedCounts, ModelParams};
use crate::dist;
use crate::error::{Error, Result};
use crate::specfun::{inverse_e1_from, log_sum_exp};

/// Default number of root jumps kept by the series truncation.
pub const DEFAULT_TRUNCATION: usize = 1000;

/// Latent quantities behind one posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentRecord {
    /// `αT`; absent for samplers that do not track it.
    pub alpha_t: Option<f64>,
    /// `Uᵢ/b`
    pub u: Vec<f64>,
    /// `log(1 + Uᵢ/b)`, exact even where `u` saturates
    pub log1p_u: Vec<f64>,
    pub lambda: f64,
    /// `αJ₀ⱼ`
    pub alpha_j0: Vec<f64>,
}

/// Jumps `αω₀ℓ` of the root CRM, largest first, stored as logarithms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootResidual {
    pub log_jumps: Vec<f64>,
    /// Unit-rate Poisson arrival times `ξℓ`.
    pub arrivals: Vec<f64>,
    /// Atoms `Yℓ ~ P₀`; empty until requested.
    pub atoms: Vec<f64>,
}

impl RootResidual {
    pub fn len(&self) -> usize {
        self.log_jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_jumps.is_empty()
    }

    pub fn jumps(&self) -> Vec<f64> {
        self.log_jumps.iter().map(|v| v.exp()).collect()
    }

    pub fn draw_atoms<R: Rng + ?Sized>(&mut self, base: &BaseMeasure, rng: &mut R) {
        if self.atoms.len() != self.log_jumps.len() {
            self.atoms = (0..self.log_jumps.len()).map(|_| base.sample(rng)).collect();
        }
    }
}

/// One posterior draw of the random measures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorAtoms {
    /// `J_ij`, `d × k`
    pub fixed_jumps: Vec<Vec<f64>>,
    pub log_fixed_jumps: Vec<Vec<f64>>,
    pub fixed_atoms: Vec<f64>,
    pub counts: Vec<Vec<u32>>,
    pub root_residual: RootResidual,
    /// `ω_iℓ`, `d × L`
    pub group_residual: Vec<Vec<f64>>,
    pub log_group_residual: Vec<Vec<f64>>,
    /// Exact `μ*ᵢ(𝕏)`; empty until the residual part is attached.
    pub residual_masses: Vec<f64>,
    pub log_residual_masses: Vec<f64>,
    /// Exact root residual mass `ω₀(𝕏)`.
    pub root_mass: Option<f64>,
    pub latent: LatentRecord,
}

/// Normalized weights per group: fixed atoms then residual atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedWeights {
    pub fixed: Vec<Vec<f64>>,
    pub residual: Vec<Vec<f64>>,
}

impl NormalizedWeights {
    pub fn d(&self) -> usize {
        self.fixed.len()
    }

    pub fn group_total(&self, i: usize) -> f64 {
        self.fixed[i].iter().sum::<f64>() + self.residual[i].iter().sum::<f64>()
    }

    pub fn residual_total(&self, i: usize) -> f64 {
        self.residual[i].iter().sum()
    }
}

impl PosteriorAtoms {
    /// Draw with only the fixed-location part filled in, from `log J_ij`.
    pub fn fixed(data: &GroupedCounts, log_fixed_jumps: Vec<Vec<f64>>, latent: LatentRecord) -> Self {
        Self {
            fixed_jumps: log_fixed_jumps.iter().map(|r| r.iter().map(|&x| positive_exp(x)).collect()).collect(),
            log_fixed_jumps,
            fixed_atoms: data.distinct().to_vec(),
            counts: data.counts().to_vec(),
            root_residual: RootResidual { log_jumps: Vec::new(), arrivals: Vec::new(), atoms: Vec::new() },
            group_residual: vec![Vec::new(); data.d()],
            log_group_residual: vec![Vec::new(); data.d()],
            residual_masses: Vec::new(),
            log_residual_masses: Vec::new(),
            root_mass: None,
            latent,
        }
    }

    pub fn d(&self) -> usize {
        self.fixed_jumps.len()
    }

    /// Fills the root series (`L` jumps), group residual jumps and the exact
    /// residual masses.
    pub fn attach_residual<R: Rng + ?Sized>(&mut self, params: &ModelParams, l: usize, rng: &mut R) -> Result<()> {
        let lambda = self.latent.lambda;
        self.root_residual = ferguson_klass_root(lambda, params.alpha0, l, rng)?;
        self.log_group_residual = sample_group_log_jumps(&self.root_residual.log_jumps, &self.latent.log1p_u, params.b, rng);
        self.group_residual = exp_rows(&self.log_group_residual);
        let masses = residual_log_masses(&self.latent.log1p_u, lambda, params, rng);
        self.residual_masses = masses.groups;
        self.log_residual_masses = masses.log_groups;
        self.root_mass = Some(masses.root);
        Ok(())
    }

    /// Jump-based normalization: fixed jumps over `Σⱼ J_ij + μ*ᵢ(𝕏)`, with
    /// the truncated residual jumps rescaled to the exact residual mass.
    /// Computed from logarithms, so it is exact when the jumps underflow.
    pub fn normalize(&self) -> Result<NormalizedWeights> {
        if self.log_residual_masses.len() != self.d() {
            return Err(Error::Domain("residual masses not attached".into()));
        }
        let mut fixed = Vec::with_capacity(self.d());
        let mut residual = Vec::with_capacity(self.d());
        for i in 0..self.d() {
            let log_mass = self.log_residual_masses[i];
            let mut terms = self.log_fixed_jumps[i].clone();
            terms.push(log_mass);
            let log_total = log_sum_exp(&terms);
            fixed.push(self.log_fixed_jumps[i].iter().map(|lj| (lj - log_total).exp()).collect());
            let share = (log_mass - log_total).exp();
            let logs = if self.log_group_residual[i].is_empty() { &self.root_residual.log_jumps } else { &self.log_group_residual[i] };
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let rel: Vec<f64> = logs.iter().map(|lw| (lw - top).exp()).collect();
            let z: f64 = rel.iter().sum();
            let row: Vec<f64> = if top.is_finite() { rel.iter().map(|w| share * w / z).collect() } else { vec![0.0; logs.len()] };
            residual.push(row);
        }
        Ok(NormalizedWeights { fixed, residual })
    }
}

/// Largest `L` jumps of the root CRM with Lévy density `α₀ s⁻¹ e^{-αλs}`,
/// returned as `log(αω₀ℓ)`, from `ξℓ/α₀ = E₁(αλ ω₀ℓ)`.
pub fn ferguson_klass_root<R: Rng + ?Sized>(lambda: f64, alpha0: f64, l: usize, rng: &mut R) -> Result<RootResidual> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParam { field: "lambda", value: lambda });
    }
    let (log_x, arrivals) = ferguson_klass_log(alpha0, l, rng)?;
    let ll = lambda.ln();
    Ok(RootResidual { log_jumps: log_x.iter().map(|z| z - ll).collect(), arrivals, atoms: Vec::new() })
}

/// Solutions `log xℓ` of `E₁(xℓ) = ξℓ/α₀` for the first `L` arrivals.
pub fn ferguson_klass_log<R: Rng + ?Sized>(alpha0: f64, l: usize, rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(alpha0 > 0.0) {
        return Err(Error::InvalidParam { field: "alpha0", value: alpha0 });
    }
    let mut xi = 0.0;
    let mut warm = None;
    let mut logs = Vec::with_capacity(l);
    let mut arrivals = Vec::with_capacity(l);
    for _ in 0..l {
        xi -= dist::open_uniform(rng).ln();
        let rep = inverse_e1_from(xi / alpha0, warm)?;
        warm = Some(rep.log_solution);
        logs.push(rep.log_solution);
        arrivals.push(xi);
    }
    Ok((logs, arrivals))
}

/// `ω_iℓ ~ Gamma(αω₀ℓ, b(1 + Uᵢ/b))`, shapes given as logs and the rates
/// through `log(1 + Uᵢ/b)`.
pub fn sample_group_jumps<R: Rng + ?Sized>(root_log: &[f64], log1p_u: &[f64], b: f64, rng: &mut R) -> Vec<Vec<f64>> {
    exp_rows(&sample_group_log_jumps(root_log, log1p_u, b, rng))
}

/// As [`sample_group_jumps`], returning `log ω_iℓ`.
pub fn sample_group_log_jumps<R: Rng + ?Sized>(root_log: &[f64], log1p_u: &[f64], b: f64, rng: &mut R) -> Vec<Vec<f64>> {
    log1p_u
        .iter()
        .map(|&l| {
            let lr = b.ln() + l;
            root_log.iter().map(|&ls| dist::ln_gamma_unit_log_shape(ls, rng) - lr).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualMasses {
    /// `ω₀(𝕏) ~ Gamma(α₀, αλ)`
    pub root: f64,
    /// `μ*ᵢ(𝕏) ~ Gamma(α ω₀(𝕏), b(1 + Uᵢ/b))`
    pub groups: Vec<f64>,
    pub log_groups: Vec<f64>,
}

pub fn residual_total_mass<R: Rng + ?Sized>(u: &[f64], lambda: f64, params: &ModelParams, rng: &mut R) -> ResidualMasses {
    let log1p_u: Vec<f64> = u.iter().map(|x| x.ln_1p()).collect();
    residual_log_masses(&log1p_u, lambda, params, rng)
}

/// As [`residual_total_mass`] with the rates given through `log(1 + Uᵢ/b)`.
pub fn residual_log_masses<R: Rng + ?Sized>(log1p_u: &[f64], lambda: f64, params: &ModelParams, rng: &mut R) -> ResidualMasses {
    let root = dist::gamma(params.alpha0, params.alpha * lambda, rng);
    let log_shape = params.alpha.ln() + root.ln();
    let log_groups: Vec<f64> = log1p_u.iter().map(|&l| dist::ln_gamma_unit_log_shape(log_shape, rng) - params.b.ln() - l).collect();
    ResidualMasses { root, groups: log_groups.iter().map(|&x| positive_exp(x)).collect(), log_groups }
}

// linear values are floored at the smallest normal; the logs stay exact
fn positive_exp(x: f64) -> f64 {
    x.exp().max(f64::MIN_POSITIVE)
}

fn exp_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| r.iter().map(|x| x.exp()).collect()).collect()
}

/// Per group `Dirichlet(n_i1 + αJ₀₁, …, n_ik + αJ₀ₖ, αω₀₁, …, αω₀L)`.
pub fn normalized_weights<R: Rng + ?Sized>(atoms: &PosteriorAtoms, rng: &mut R) -> NormalizedWeights {
    let k = atoms.fixed_atoms.len();
    let mut fixed = Vec::with_capacity(atoms.d());
    let mut residual = Vec::with_capacity(atoms.d());
    let mut shapes = Vec::with_capacity(k + atoms.root_residual.len());
    for i in 0..atoms.d() {
        shapes.clear();
        shapes.extend((0..k).map(|j| (atoms.counts[i][j] as f64 + atoms.latent.alpha_j0[j]).ln()));
        shapes.extend_from_slice(&atoms.root_residual.log_jumps);
        let mut w = dist::dirichlet_from_log_shapes(&shapes, rng);
        residual.push(w.split_off(k));
        fixed.push(w);
    }
    NormalizedWeights { fixed, residual }
}

/// `Σⱼ π_ij X*ⱼ + Σℓ π*_iℓ Yℓ` per group.
pub fn posterior_random_mean(weights: &NormalizedWeights, atoms: &PosteriorAtoms) -> Result<Vec<f64>> {
    let l = weights.residual.first().map_or(0, |r| r.len());
    if l > 0 && atoms.root_residual.atoms.len() != l {
        return Err(Error::Domain("residual atoms have not been drawn".into()));
    }
    Ok((0..weights.d())
        .map(|i| {
            let fixed: f64 = weights.fixed[i].iter().zip(&atoms.fixed_atoms).map(|(p, x)| p * x).sum();
            let res: f64 = weights.residual[i].iter().zip(&atoms.root_residual.atoms).map(|(p, y)| p * y).sum();
            fixed + res
        })
        .collect())
}

/// Long-format weights CSV: `draw, group, atom_kind, atom_value, weight`.
///
/// Residual atoms are written individually when `residual_detail` is set and
/// as a single `residual-total` row otherwise.
pub struct WeightsWriter<W: Write> {
    out: csv::Writer<W>,
    residual_detail: bool,
}

impl<W: Write> WeightsWriter<W> {
    pub fn new(mut sink: W, residual_detail: bool) -> Result<Self> {
        writeln!(sink, "{}", crate::SCHEMA_HEADER)?;
        let mut out = csv::Writer::from_writer(sink);
        out.write_record(["draw", "group", "atom_kind", "atom_value", "weight"])?;
        Ok(Self { out, residual_detail })
    }

    pub fn write(&mut self, draw: usize, weights: &NormalizedWeights, fixed_atoms: &[f64], residual_atoms: &[f64]) -> Result<()> {
        for i in 0..weights.d() {
            let g = (i + 1).to_string();
            let d = draw.to_string();
            for (p, x) in weights.fixed[i].iter().zip(fixed_atoms) {
                self.out.write_record([d.as_str(), &g, "fixed", &x.to_string(), &p.to_string()])?;
            }
            if self.residual_detail {
                for (l, p) in weights.residual[i].iter().enumerate() {
                    let y = residual_atoms.get(l).map(|v| v.to_string()).unwrap_or_default();
                    self.out.write_record([d.as_str(), &g, "residual", &y, &p.to_string()])?;
                }
            } else {
                self.out.write_record([d.as_str(), &g, "residual-total", "", &weights.residual_total(i).to_string()])?;
            }
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
