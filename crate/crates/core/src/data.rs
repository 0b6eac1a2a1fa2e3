//! Observation summaries and model parameters.
//!
//! Grouped observations are reduced to the distinct values shared across all
//! groups and the `d × k` matrix of counts `n_ij`. Ties are exact: two values
//! are the same atom only if their bit patterns agree.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of distinct values per group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedCounts {
    distinct: Vec<f64>,
    /// Row-major `d × k`.
    counts: Vec<Vec<u32>>,
}

impl GroupedCounts {
    /// Builds the summary directly from a count matrix. Columns must be
    /// non-empty and rows must have at least one observation.
    pub fn from_counts(distinct: Vec<f64>, counts: Vec<Vec<u32>>) -> Result<Self> {
        let k = distinct.len();
        if counts.is_empty() {
            return Err(Error::Config("at least one group is required".into()));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Config(format!("row {i} has {} columns, expected {k}", row.len())));
            }
            if row.iter().all(|&c| c == 0) {
                return Err(Error::EmptyGroup { group: i });
            }
        }
        for j in 0..k {
            if counts.iter().all(|row| row[j] == 0) {
                return Err(Error::Config(format!("column {j} has no observations")));
            }
            if !distinct[j].is_finite() {
                return Err(Error::NonFinite { group: 0, index: j });
            }
        }
        let mut seen = HashMap::new();
        for (j, x) in distinct.iter().enumerate() {
            if let Some(prev) = seen.insert(x.to_bits(), j) {
                return Err(Error::Config(format!("columns {prev} and {j} share the value {x}")));
            }
        }
        Ok(Self { distinct, counts })
    }

    /// Number of groups `d`.
    pub fn d(&self) -> usize {
        self.counts.len()
    }

    /// Number of distinct values `k`.
    pub fn k(&self) -> usize {
        self.distinct.len()
    }

    pub fn distinct(&self) -> &[f64] {
        &self.distinct
    }

    pub fn counts(&self) -> &[Vec<u32>] {
        &self.counts
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i][j]
    }

    /// Counts of column `j` across groups, `(n_1j, …, n_dj)`.
    pub fn column(&self, j: usize) -> Vec<u32> {
        self.counts.iter().map(|row| row[j]).collect()
    }

    /// `n_i`.
    pub fn group_sizes(&self) -> Vec<u32> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    /// `n_•j`.
    pub fn column_totals(&self) -> Vec<u32> {
        (0..self.k()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// `m_ij = min(1, n_ij)`.
    pub fn indicators(&self) -> Vec<Vec<u32>> {
        self.counts.iter().map(|row| row.iter().map(|&c| c.min(1)).collect()).collect()
    }

    /// `m_•j`, the number of groups in which value `j` appears.
    pub fn column_indicator_totals(&self) -> Vec<u32> {
        (0..self.k()).map(|j| self.counts.iter().filter(|r| r[j] > 0).count() as u32).collect()
    }

    /// `m = Σ_j m_•j`.
    pub fn m(&self) -> u32 {
        self.column_indicator_totals().iter().sum()
    }

    /// Total number of observations `n`.
    pub fn n(&self) -> u32 {
        self.group_sizes().iter().sum()
    }

    /// Expands the counts back into one multiset per group, sorted ascending.
    pub fn expand(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| row.iter().zip(&self.distinct).flat_map(|(&c, &x)| std::iter::repeat_n(x, c as usize)).collect())
            .collect()
    }

    /// Reads `{"groups": [[...], ...]}`.
    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        let file: DatasetFile = serde_json::from_reader(reader)?;
        ingest_groups(&file.groups)
    }

    /// Reads a CSV with columns `group_id,value`. Group ids are mapped to rows
    /// in order of first appearance after sorting numerically when possible.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let gcol = headers.iter().position(|h| h == "group_id");
        let vcol = headers.iter().position(|h| h == "value");
        let (gcol, vcol) = match (gcol, vcol) {
            (Some(g), Some(v)) => (g, v),
            _ => return Err(Error::SchemaMismatch("dataset CSV needs `group_id` and `value` columns".into())),
        };
        let mut ids: Vec<String> = Vec::new();
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec[gcol].to_string();
            let value: f64 = rec[vcol].parse().map_err(|_| Error::SchemaMismatch(format!("bad value `{}`", &rec[vcol])))?;
            let slot = match ids.iter().position(|g| *g == id) {
                Some(p) => p,
                None => {
                    ids.push(id);
                    groups.push(Vec::new());
                    ids.len() - 1
                }
            };
            groups[slot].push(value);
        }
        // numeric ids sort numerically, everything else keeps first appearance
        if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
            let mut order: Vec<usize> = (0..ids.len()).collect();
            order.sort_by_key(|&p| ids[p].parse::<i64>().unwrap());
            groups = order.into_iter().map(|p| std::mem::take(&mut groups[p])).collect();
        }
        ingest_groups(&groups)
    }

    /// Loads a dataset by file extension (`.csv` or JSON otherwise).
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::from_csv_reader(file),
            _ => Self::from_json_reader(file),
        }
    }
}

/// On-disk dataset layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetFile {
    pub groups: Vec<Vec<f64>>,
}

/// Reduces grouped observations to shared distinct values and counts.
///
/// Distinct values are sorted ascending so column indices do not depend on the
/// order in which observations arrive.
pub fn ingest_groups(groups: &[Vec<f64>]) -> Result<GroupedCounts> {
    if groups.is_empty() {
        return Err(Error::Config("at least one group is required".into()));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::EmptyGroup { group: i });
        }
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { group: i, index });
        }
    }
    let mut distinct: Vec<f64> = groups.iter().flatten().copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let column: HashMap<u64, usize> = distinct.iter().enumerate().map(|(j, x)| (x.to_bits(), j)).collect();
    let counts = groups
        .iter()
        .map(|g| {
            let mut row = vec![0u32; distinct.len()];
            for x in g {
                row[column[&x.to_bits()]] += 1;
            }
            row
        })
        .collect();
    Ok(GroupedCounts { distinct, counts })
}

/// Diffuse base measure `P₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BaseMeasure {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for BaseMeasure {
    fn default() -> Self {
        BaseMeasure::Normal { mean: 0.0, sd: 1.0 }
    }
}

impl BaseMeasure {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BaseMeasure::Normal { mean, sd } => Normal::new(mean, sd).expect("validated normal base measure").sample(rng),
            BaseMeasure::Uniform { lo, hi } => Uniform::new(lo, hi).expect("validated uniform base measure").sample(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            BaseMeasure::Normal { mean, .. } => mean,
            BaseMeasure::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BaseMeasure::Normal { mean, sd } => {
                if !mean.is_finite() {
                    return Err(Error::InvalidParam { field: "base.mean", value: mean });
                }
                if !(sd > 0.0 && sd.is_finite()) {
                    return Err(Error::InvalidParam { field: "base.sd", value: sd });
                }
            }
            BaseMeasure::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidParam { field: "base.hi", value: hi });
                }
            }
        }
        Ok(())
    }
}

/// Shapes `α, α₀`, rates `b, b₀` and base measure of the gamma-gamma model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub alpha0: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "one")]
    pub b0: f64,
    #[serde(default)]
    pub base: BaseMeasure,
}

fn one() -> f64 {
    1.0
}

/// The parameters the normalized law actually depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Identifiable {
    pub alpha0: f64,
    pub alpha_over_b0: f64,
}

impl ModelParams {
    /// Unit rates and a standard normal base measure.
    pub fn new(alpha: f64, alpha0: f64) -> Self {
        Self { alpha, alpha0, b: 1.0, b0: 1.0, base: BaseMeasure::default() }
    }

    pub fn with_rates(mut self, b: f64, b0: f64) -> Self {
        self.b = b;
        self.b0 = b0;
        self
    }

    pub fn with_base(mut self, base: BaseMeasure) -> Self {
        self.base = base;
        self
    }

    /// Rate of the `αT` prior, `b₀/α`.
    pub fn prior_rate(&self) -> f64 {
        self.b0 / self.alpha
    }

    pub fn identifiable(&self) -> Identifiable {
        Identifiable { alpha0: self.alpha0, alpha_over_b0: self.alpha / self.b0 }
    }
}

/// Checks every parameter and reports the identifiable pair `(α₀, α/b₀)`.
pub fn validate_params(p: &ModelParams) -> Result<Identifiable> {
    for (field, value) in [("alpha", p.alpha), ("alpha0", p.alpha0), ("b", p.b), ("b0", p.b0)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParam { field, value });
        }
    }
    p.base.validate()?;
    Ok(p.identifiable())
}
