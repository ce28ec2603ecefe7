//! IsoFLOP surfaces: polynomial regression of loss on log model size and
//! log-transformed sparsity at a fixed compute budget.
//!
//! With `n = ln N` and `s = -ln(1 - S)` the surface is
//!
//! ```text
//! L(N, S) = sum_{i=1..p} a_i n^i + sum_{i=1..q} b_i s^i + sum_{i=1..r} c_i (n s)^i + d
//! ```
//!
//! Interaction features are powers of the product, not the full bilinear basis.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstsq::fit_linear;
use crate::rng::stream_rng;
use crate::runs::{RunRecord, RunTable};

pub const MAX_DEGREE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeVariable {
    /// Total parameters `N`.
    Total,
    /// Active parameters `N_a`.
    Active,
}

impl SizeVariable {
    pub fn of(self, r: &RunRecord) -> f64 {
        match self {
            SizeVariable::Total => r.n_total,
            SizeVariable::Active => r.n_active,
        }
    }
}

impl std::str::FromStr for SizeVariable {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" | "total_params" => Ok(SizeVariable::Total),
            "active" | "active_params" => Ok(SizeVariable::Active),
            other => Err(Error::Domain(format!("unknown size variable `{other}`"))),
        }
    }
}

/// Polynomial degrees for the size, sparsity and interaction sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Degrees {
    pub size: usize,
    pub sparsity: usize,
    pub interaction: usize,
}

impl Degrees {
    pub const fn new(size: usize, sparsity: usize, interaction: usize) -> Self {
        Degrees { size, sparsity, interaction }
    }

    pub fn total(&self) -> usize {
        self.size + self.sparsity + self.interaction
    }

    /// Free coefficients including the intercept.
    pub fn n_coefficients(&self) -> usize {
        self.total() + 1
    }

    pub fn all(max: usize) -> impl Iterator<Item = Degrees> {
        (0..=max).flat_map(move |a| (0..=max).flat_map(move |b| (0..=max).map(move |c| Degrees::new(a, b, c))))
    }
}

impl From<[usize; 3]> for Degrees {
    fn from(d: [usize; 3]) -> Self {
        Degrees::new(d[0], d[1], d[2])
    }
}

impl From<Degrees> for [usize; 3] {
    fn from(d: Degrees) -> Self {
        [d.size, d.sparsity, d.interaction]
    }
}

impl std::fmt::Display for Degrees {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.size, self.sparsity, self.interaction)
    }
}

impl std::str::FromStr for Degrees {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .trim_matches(|c| c == '(' || c == ')')
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Domain(format!("degrees `{s}` must look like a,b,c")))?;
        match parts.as_slice() {
            &[a, b, c] if a.max(b).max(c) <= MAX_DEGREE => Ok(Degrees::new(a, b, c)),
            _ => Err(Error::Domain(format!("degrees `{s}` must be three integers in 0..={MAX_DEGREE}"))),
        }
    }
}

/// `(ln size, -ln(1 - sparsity))`.
pub fn transform_features(size: f64, sparsity: f64) -> Result<(f64, f64)> {
    if !(size > 0.0) {
        return Err(Error::Domain(format!("size {size} must be positive")));
    }
    if sparsity >= 1.0 {
        return Err(Error::SingularTransform(sparsity));
    }
    if sparsity < 0.0 {
        return Err(Error::Domain(format!("sparsity {sparsity} must be >= 0")));
    }
    Ok((size.ln(), -(-sparsity).ln_1p()))
}

/// Inverse of [`transform_features`].
pub fn inverse_transform(size_hat: f64, sparsity_hat: f64) -> (f64, f64) {
    (size_hat.exp(), -(-sparsity_hat).exp_m1())
}

/// Observed ranges of size and sparsity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDomain {
    pub size_min: f64,
    pub size_max: f64,
    pub sparsity_min: f64,
    pub sparsity_max: f64,
}

impl FitDomain {
    pub fn contains(&self, size: f64, sparsity: f64) -> bool {
        (self.size_min..=self.size_max).contains(&size) && (self.sparsity_min..=self.sparsity_max).contains(&sparsity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFit {
    pub size_variable: SizeVariable,
    pub degrees: Degrees,
    pub coeffs_size: Vec<f64>,
    pub coeffs_sparsity: Vec<f64>,
    pub coeffs_interaction: Vec<f64>,
    pub intercept: f64,
    /// Compute budget the runs belong to.
    pub budget: f64,
    pub fit_domain: FitDomain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub loss: f64,
    /// The query lies outside the fit domain.
    pub extrapolated: bool,
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    // sum_{i>=1} coeffs[i-1] x^i by Horner
    coeffs.iter().rev().fold(0.0, |acc, c| (acc + c) * x)
}

impl SurfaceFit {
    /// Builds a surface from coefficients; lengths define the degrees.
    pub fn from_coefficients(
        size_variable: SizeVariable,
        coeffs_size: Vec<f64>,
        coeffs_sparsity: Vec<f64>,
        coeffs_interaction: Vec<f64>,
        intercept: f64,
        budget: f64,
        fit_domain: FitDomain,
    ) -> Self {
        SurfaceFit {
            size_variable,
            degrees: Degrees::new(coeffs_size.len(), coeffs_sparsity.len(), coeffs_interaction.len()),
            coeffs_size,
            coeffs_sparsity,
            coeffs_interaction,
            intercept,
            budget,
            fit_domain,
        }
    }

    /// Evaluates the polynomial at transformed coordinates.
    pub fn eval_transformed(&self, size_hat: f64, sparsity_hat: f64) -> f64 {
        poly(&self.coeffs_size, size_hat)
            + poly(&self.coeffs_sparsity, sparsity_hat)
            + poly(&self.coeffs_interaction, size_hat * sparsity_hat)
            + self.intercept
    }

    pub fn predict(&self, size: f64, sparsity: f64) -> Result<Prediction> {
        let (n, s) = transform_features(size, sparsity)?;
        Ok(Prediction { loss: self.eval_transformed(n, s), extrapolated: !self.fit_domain.contains(size, sparsity) })
    }
}

/// Loss predicted by `fit` at `(size, sparsity)`.
pub fn predict_loss(fit: &SurfaceFit, size: f64, sparsity: f64) -> Result<Prediction> {
    fit.predict(size, sparsity)
}

type FeatureGroup = (usize, &'static str, fn(f64, f64) -> f64);

fn feature_columns(points: &[(f64, f64)], degrees: Degrees) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut cols = Vec::with_capacity(degrees.total());
    let mut names = Vec::with_capacity(degrees.total());
    let groups: [FeatureGroup; 3] = [
        (degrees.size, "size", |n, _| n),
        (degrees.sparsity, "sparsity", |_, s| s),
        (degrees.interaction, "interaction", |n, s| n * s),
    ];
    for (deg, label, base) in groups {
        for i in 1..=deg {
            cols.push(points.iter().map(|&(n, s)| base(n, s).powi(i as i32)).collect());
            names.push(format!("{label}^{i}"));
        }
    }
    (cols, names)
}

fn transformed_points(records: &[&RunRecord], size_variable: SizeVariable) -> Result<Vec<(f64, f64)>> {
    records.iter().map(|r| transform_features(size_variable.of(r), r.sparsity)).collect()
}

fn domain_of(records: &[&RunRecord], size_variable: SizeVariable) -> FitDomain {
    let mut d = FitDomain {
        size_min: f64::INFINITY,
        size_max: f64::NEG_INFINITY,
        sparsity_min: f64::INFINITY,
        sparsity_max: f64::NEG_INFINITY,
    };
    for r in records {
        let size = size_variable.of(r);
        d.size_min = d.size_min.min(size);
        d.size_max = d.size_max.max(size);
        d.sparsity_min = d.sparsity_min.min(r.sparsity);
        d.sparsity_max = d.sparsity_max.max(r.sparsity);
    }
    d
}

/// Largest ratio between compute values accepted as one budget bucket.
const MAX_BUDGET_SPREAD: f64 = 3.0;

fn fit_records(records: &[&RunRecord], degrees: Degrees, size_variable: SizeVariable) -> Result<SurfaceFit> {
    let need = degrees.n_coefficients();
    if records.len() < need {
        return Err(Error::InsufficientData(format!(
            "{} records for {need} coefficients at degrees {degrees}",
            records.len()
        )));
    }
    let (lo, hi) = records
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.compute), hi.max(r.compute)));
    if hi / lo > MAX_BUDGET_SPREAD {
        return Err(Error::Domain(format!(
            "records span compute {lo:e}..{hi:e}; fit one budget bucket at a time"
        )));
    }
    let budget = (records.iter().map(|r| r.compute.ln()).sum::<f64>() / records.len() as f64).exp();

    let points = transformed_points(records, size_variable)?;
    let (cols, names) = feature_columns(&points, degrees);
    let y: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let lin = fit_linear(&cols, &names, &y)?;
    let mut coeffs = lin.coefficients.into_iter();
    let mut take = |k: usize| coeffs.by_ref().take(k).collect::<Vec<_>>();
    Ok(SurfaceFit {
        size_variable,
        degrees,
        coeffs_size: take(degrees.size),
        coeffs_sparsity: take(degrees.sparsity),
        coeffs_interaction: take(degrees.interaction),
        intercept: lin.intercept,
        budget,
        fit_domain: domain_of(records, size_variable),
    })
}

/// Least-squares isoFLOP surface over every record in `records`.
pub fn fit_surface(records: &RunTable, degrees: Degrees, size_variable: SizeVariable) -> Result<SurfaceFit> {
    let refs: Vec<&RunRecord> = records.iter().collect();
    fit_records(&refs, degrees, size_variable)
}

/// Sum of squared residuals of `fit` over `records`.
pub fn residual_sum_of_squares(fit: &SurfaceFit, records: &RunTable) -> Result<f64> {
    records.iter().try_fold(0.0, |acc, r| {
        let p = fit.predict(fit.size_variable.of(r), r.sparsity)?;
        Ok(acc + (p.loss - r.loss).powi(2))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    pub max_degree: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { folds: 5, seed: 0, max_degree: MAX_DEGREE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegreeScore {
    pub degrees: Degrees,
    pub cv_error: f64,
    /// Standard error of `cv_error` over records.
    pub cv_se: f64,
}

/// Mean squared out-of-fold error for one degree triple.
pub fn cross_validate(records: &RunTable, degrees: Degrees, size_variable: SizeVariable, opts: &CvOptions) -> Result<f64> {
    let folds = fold_assignment(records.len(), opts)?;
    Ok(cv_score(records, &folds, opts.folds, degrees, size_variable)?.cv_error)
}

fn fold_assignment(n: usize, opts: &CvOptions) -> Result<Vec<usize>> {
    if opts.folds < 2 || n < opts.folds {
        return Err(Error::InsufficientData(format!("{n} records for {}-fold cross validation", opts.folds)));
    }
    let mut rng = stream_rng(opts.seed, 0);
    let order = index::sample(&mut rng, n, n).into_vec();
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % opts.folds;
    }
    Ok(fold_of)
}

fn cv_score(records: &RunTable, fold_of: &[usize], folds: usize, degrees: Degrees, size_variable: SizeVariable) -> Result<DegreeScore> {
    let mut sq = vec![0.0; records.len()];
    for k in 0..folds {
        let train: Vec<&RunRecord> = records.iter().zip(fold_of).filter(|(_, &f)| f != k).map(|(r, _)| r).collect();
        let fit = fit_records(&train, degrees, size_variable)?;
        for (i, r) in records.iter().enumerate().filter(|(i, _)| fold_of[*i] == k) {
            let p = fit.predict(size_variable.of(r), r.sparsity)?;
            sq[i] = (p.loss - r.loss).powi(2);
        }
    }
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(DegreeScore { degrees, cv_error: mean, cv_se: (var / n).sqrt() })
}

/// Scores every degree triple in `0..=max_degree`^3 by k-fold cross
/// validation. Candidates that cannot be fitted on some fold are dropped.
pub fn score_degrees(records: &RunTable, size_variable: SizeVariable, opts: &CvOptions) -> Result<Vec<DegreeScore>> {
    let folds = fold_assignment(records.len(), opts)?;
    let candidates: Vec<Degrees> = Degrees::all(opts.max_degree).collect();
    Ok(candidates
        .par_iter()
        .map(|&d| cv_score(records, &folds, opts.folds, d, size_variable))
        .collect::<Vec<_>>()
        .into_iter()
        .filter_map(|r| r.ok())
        .filter(|s| s.cv_error.is_finite())
        .collect())
}

/// One-standard-error rule: among candidates whose CV error is within one
/// standard error of the minimum, the lowest total degree wins, then the
/// lower CV error, then lexicographic order.
pub fn select_degrees(scores: &[DegreeScore]) -> Option<DegreeScore> {
    let best = scores.iter().min_by(|a, b| a.cv_error.total_cmp(&b.cv_error).then(a.degrees.cmp(&b.degrees)))?;
    let threshold = best.cv_error + best.cv_se;
    scores
        .iter()
        .filter(|s| s.cv_error <= threshold)
        .min_by(|a, b| {
            a.degrees
                .total()
                .cmp(&b.degrees.total())
                .then(a.cv_error.total_cmp(&b.cv_error))
                .then(a.degrees.cmp(&b.degrees))
        })
        .copied()
}

/// Cross-validated degree choice; see [`select_degrees`].
pub fn grid_search_degrees(records: &RunTable, size_variable: SizeVariable, opts: &CvOptions) -> Result<DegreeScore> {
    let scores = score_degrees(records, size_variable, opts)?;
    select_degrees(&scores).ok_or_else(|| Error::Fit("no degree candidate could be fitted".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEnsemble {
    pub fits: Vec<SurfaceFit>,
    pub seed: u64,
    pub subsample_fraction: f64,
}

const BOOTSTRAP_RETRIES: usize = 10;

/// Refits the surface `k` times on seeded random subsets (without
/// replacement, original order kept) of `round(fraction * n)` records.
pub fn bootstrap(
    records: &RunTable,
    degrees: Degrees,
    size_variable: SizeVariable,
    k: usize,
    subsample_fraction: f64,
    seed: u64,
) -> Result<FitEnsemble> {
    if k == 0 {
        return Err(Error::Domain("bootstrap needs k >= 1".into()));
    }
    if !(subsample_fraction > 0.0 && subsample_fraction <= 1.0) {
        return Err(Error::Domain(format!("subsample fraction {subsample_fraction} must be in (0, 1]")));
    }
    let n = records.len();
    let m = ((subsample_fraction * n as f64).round() as usize).min(n);
    if m < degrees.n_coefficients() {
        return Err(Error::InsufficientData(format!(
            "subsample of {m} records for {} coefficients",
            degrees.n_coefficients()
        )));
    }
    let all: Vec<&RunRecord> = records.iter().collect();
    let fits = (0..k)
        .into_par_iter()
        .map(|replica| {
            let mut rng = stream_rng(seed, replica as u64 + 1);
            let mut last = None;
            for _ in 0..BOOTSTRAP_RETRIES {
                let mut idx = index::sample(&mut rng, n, m).into_vec();
                idx.sort_unstable();
                let subset: Vec<&RunRecord> = idx.iter().map(|&i| all[i]).collect();
                match fit_records(&subset, degrees, size_variable) {
                    Ok(fit) => return Ok(fit),
                    Err(e @ Error::SingularFit(_)) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(Error::Fit(format!(
                "bootstrap replica {replica} stayed singular after {BOOTSTRAP_RETRIES} draws: {}",
                last.map(|e| e.to_string()).unwrap_or_default()
            )))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FitEnsemble { fits, seed, subsample_fraction })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutMetrics {
    pub mse: f64,
    /// `None` when predictions or targets are constant.
    pub pearson_r: Option<f64>,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean squared error and Pearson correlation of true vs predicted loss.
pub fn holdout_metrics(fit: &SurfaceFit, holdout: &RunTable) -> Result<HoldoutMetrics> {
    if holdout.is_empty() {
        return Err(Error::InsufficientData("empty holdout set".into()));
    }
    let truth: Vec<f64> = holdout.iter().map(|r| r.loss).collect();
    let pred: Vec<f64> = holdout
        .iter()
        .map(|r| fit.predict(fit.size_variable.of(r), r.sparsity).map(|p| p.loss))
        .collect::<Result<_>>()?;
    Ok(metrics_from(&truth, &pred))
}

pub(crate) fn metrics_from(truth: &[f64], pred: &[f64]) -> HoldoutMetrics {
    let mse = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / truth.len() as f64;
    HoldoutMetrics { mse, pearson_r: pearson(truth, pred), n: truth.len() }
}

/// Row of a gridded surface table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub size: f64,
    pub sparsity: f64,
    pub loss: f64,
}

/// Predictions on a log-size by transformed-sparsity grid spanning the fit domain.
pub fn grid_table(fit: &SurfaceFit, n_size: usize, n_sparsity: usize) -> Result<Vec<GridRow>> {
    let d = fit.fit_domain;
    let (n_lo, s_lo) = transform_features(d.size_min, d.sparsity_min)?;
    let (n_hi, s_hi) = transform_features(d.size_max, d.sparsity_max)?;
    let lin = |lo: f64, hi: f64, k: usize, i: usize| if k <= 1 { lo } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 };
    let mut rows = Vec::with_capacity(n_size * n_sparsity);
    for i in 0..n_size {
        for j in 0..n_sparsity {
            let (nh, sh) = (lin(n_lo, n_hi, n_size, i), lin(s_lo, s_hi, n_sparsity, j));
            let (size, sparsity) = inverse_transform(nh, sh);
            rows.push(GridRow { size, sparsity, loss: fit.eval_transformed(nh, sh) });
        }
    }
    Ok(rows)
}
