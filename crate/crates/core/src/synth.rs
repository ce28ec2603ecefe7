//! Synthetic training runs drawn from a known loss function.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::ScalingLawCoeffs;
use crate::model::NaRule;
use crate::rng::stream_rng;
use crate::runs::{RunRecord, RunTable, DEFAULT_BUDGETS};
use crate::surface::{SizeVariable, SurfaceFit};

const NOISE_STREAM: u64 = 1;
const THIN_STREAM: u64 = 2;

pub const STANDARD_SPARSITIES: [f64; 7] = [0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 0.98];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    Law(ScalingLawCoeffs),
    Surface(SurfaceFit),
}

impl Truth {
    pub fn loss(&self, n_total: f64, n_active: f64, tokens: f64, sparsity: f64) -> Result<f64> {
        match self {
            Truth::Law(c) => c.predict(n_total, tokens, sparsity),
            Truth::Surface(s) => {
                let size = match s.size_variable {
                    SizeVariable::Total => n_total,
                    SizeVariable::Active => n_active,
                };
                Ok(s.predict(size, sparsity)?.loss)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `L * exp(eps)`
    Multiplicative,
    /// `L + eps`
    Additive,
}

/// Everything about a design except the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthGrid {
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
    #[serde(default = "default_sparsities")]
    pub sparsities: Vec<f64>,
    pub sizes_per_cell: usize,
    pub size_span: (f64, f64),
    #[serde(default)]
    pub noise_sigma: f64,
    /// Defaults to multiplicative for a law truth and additive for a surface.
    #[serde(default)]
    pub noise_model: Option<NoiseModel>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub na_rule: NaRule,
    /// Seeded thinning of the generated table to at most this many records.
    #[serde(default)]
    pub max_records: Option<usize>,
}

fn default_budgets() -> Vec<f64> {
    DEFAULT_BUDGETS.to_vec()
}

fn default_sparsities() -> Vec<f64> {
    STANDARD_SPARSITIES.to_vec()
}

impl SynthGrid {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() || self.budgets.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig("budgets must be a nonempty list of positive values".into()));
        }
        if self.sparsities.is_empty() || self.sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
            return Err(Error::InvalidConfig("sparsities must be a nonempty subset of [0, 1)".into()));
        }
        if self.sizes_per_cell == 0 {
            return Err(Error::InvalidConfig("sizes_per_cell must be >= 1".into()));
        }
        let (lo, hi) = self.size_span;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || (self.sizes_per_cell > 1 && hi == lo) {
            return Err(Error::InvalidConfig(format!("size span ({lo}, {hi}) must be positive and ordered")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        if self.max_records == Some(0) {
            return Err(Error::InvalidConfig("max_records must be >= 1".into()));
        }
        self.na_rule.validate()
    }

    /// Log-spaced total sizes shared by every cell.
    pub fn sizes(&self) -> Vec<f64> {
        let (lo, hi) = self.size_span;
        let k = self.sizes_per_cell;
        if k == 1 {
            return vec![(lo * hi).sqrt()];
        }
        let (a, b) = (lo.ln(), hi.ln());
        (0..k)
            .map(|i| match i {
                0 => lo,
                _ if i == k - 1 => hi,
                _ => (a + (b - a) * i as f64 / (k - 1) as f64).exp(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDesign {
    pub truth: Truth,
    #[serde(flatten)]
    pub grid: SynthGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub budget: f64,
    pub sparsity: f64,
    pub n_total: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SynthRuns {
    pub table: RunTable,
    pub skipped: Vec<SkippedCell>,
}

/// One record per (budget, sparsity, size) cell in that nesting order, with
/// `N_a` from the design's rule and `D = C / (6 N_a)`.
pub fn generate_runs(design: &SynthDesign) -> Result<SynthRuns> {
    let g = &design.grid;
    g.validate()?;
    let noise_model = g.noise_model.unwrap_or(match design.truth {
        Truth::Law(_) => NoiseModel::Multiplicative,
        Truth::Surface(_) => NoiseModel::Additive,
    });
    let normal = Normal::new(0.0, g.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = stream_rng(g.seed, NOISE_STREAM);
    let sizes = g.sizes();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (ci, &budget) in g.budgets.iter().enumerate() {
        for (si, &sparsity) in g.sparsities.iter().enumerate() {
            for (ni, &n_total) in sizes.iter().enumerate() {
                let n_active = g.na_rule.active(n_total, sparsity)?;
                let tokens = budget / (6.0 * n_active);
                if !(tokens >= 1.0) {
                    skipped.push(SkippedCell {
                        budget,
                        sparsity,
                        n_total,
                        reason: format!("budget yields {tokens:e} tokens (< 1)"),
                    });
                    continue;
                }
                let clean = design.truth.loss(n_total, n_active, tokens, sparsity)?;
                let loss = if g.noise_sigma > 0.0 {
                    let eps = normal.sample(&mut rng);
                    match noise_model {
                        NoiseModel::Multiplicative => clean * eps.exp(),
                        NoiseModel::Additive => clean + eps,
                    }
                } else {
                    clean
                };
                records.push(RunRecord {
                    run_id: format!("c{ci}_s{si}_n{ni}"),
                    n_total,
                    n_active,
                    sparsity,
                    tokens,
                    compute: 6.0 * n_active * tokens,
                    loss,
                    extras: Default::default(),
                    compute_synthetic: false,
                });
            }
        }
    }
    if let Some(cap) = g.max_records.filter(|&cap| cap < records.len()) {
        let mut keep = rand::seq::index::sample(&mut stream_rng(g.seed, THIN_STREAM), records.len(), cap).into_vec();
        keep.sort_unstable();
        records = keep.into_iter().map(|i| records[i].clone()).collect();
    }
    Ok(SynthRuns { table: RunTable::from_records(records)?, skipped })
}
