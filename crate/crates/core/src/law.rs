//! Sparsity-aware parametric loss law
//!
//! `L(N, D, S) = a/N^α + b/D^β + c/(1-S)^λ + d/((1-S)^δ N^γ) + e`
//!
//! and its dense special case `a/N^α + b/D^β + e`, fit by L-BFGS on a Huber
//! objective from a grid of initializations.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontier::{minimize_scalar, power_law_fit, LossSurface, REFINE_TOL, SCAN_POINTS};
use crate::model::NaRule;
use crate::optim::{lbfgs_minimize, LbfgsOptions, OptimError, OptimizerReport};
use crate::rng::stream_rng;
use crate::runs::RunTable;
use crate::surface::SizeVariable;

pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;
const START_SUBSAMPLE_STREAM: u64 = 0x006c_6177;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawForm {
    Dense,
    Moe,
}

impl LawForm {
    pub fn n_params(self) -> usize {
        match self {
            LawForm::Dense => 5,
            LawForm::Moe => 10,
        }
    }

    /// Parameter names in optimizer order.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            LawForm::Dense => &["log_a", "log_b", "log_e", "alpha", "beta"],
            LawForm::Moe => &["log_a", "log_b", "log_c", "log_d", "log_e", "alpha", "beta", "gamma", "lambda", "delta_exp"],
        }
    }
}

impl std::str::FromStr for LawForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(LawForm::Dense),
            "moe" => Ok(LawForm::Moe),
            other => Err(Error::InvalidConfig(format!("unknown law form {other:?}; expected dense or moe"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSpace {
    /// `ln L_pred - ln L_obs`
    #[default]
    Log,
    /// `L_pred - L_obs`
    Raw,
}

/// Coefficients with `a..e` stored as logarithms. A dense law carries zeros
/// in the sparsity-only slots and ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingLawCoeffs {
    pub form: LawForm,
    pub log_a: f64,
    pub log_b: f64,
    pub log_c: f64,
    pub log_d: f64,
    pub log_e: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub delta_exp: f64,
}

impl ScalingLawCoeffs {
    /// Published fit of the sparsity-aware law.
    pub fn published() -> Self {
        ScalingLawCoeffs::moe_from_linear(16612.50, 5455.67, 0.4598, 17.26, 0.94, 0.5962, 0.3954, 0.1595, -0.1666, 0.1603)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn moe_from_linear(a: f64, b: f64, c: f64, d: f64, e: f64, alpha: f64, beta: f64, gamma: f64, lambda: f64, delta_exp: f64) -> Self {
        ScalingLawCoeffs {
            form: LawForm::Moe,
            log_a: a.ln(),
            log_b: b.ln(),
            log_c: c.ln(),
            log_d: d.ln(),
            log_e: e.ln(),
            alpha,
            beta,
            gamma,
            lambda,
            delta_exp,
        }
    }

    pub fn dense_from_linear(a: f64, b: f64, e: f64, alpha: f64, beta: f64) -> Self {
        ScalingLawCoeffs {
            form: LawForm::Dense,
            log_a: a.ln(),
            log_b: b.ln(),
            log_c: 0.0,
            log_d: 0.0,
            log_e: e.ln(),
            alpha,
            beta,
            gamma: 0.0,
            lambda: 0.0,
            delta_exp: 0.0,
        }
    }

    /// The dense subset `(a, b, e, α, β)`.
    pub fn dense_part(&self) -> Self {
        ScalingLawCoeffs::dense_from_linear(self.log_a.exp(), self.log_b.exp(), self.log_e.exp(), self.alpha, self.beta)
    }

    pub fn to_vector(&self) -> Vec<f64> {
        match self.form {
            LawForm::Dense => vec![self.log_a, self.log_b, self.log_e, self.alpha, self.beta],
            LawForm::Moe => vec![
                self.log_a,
                self.log_b,
                self.log_c,
                self.log_d,
                self.log_e,
                self.alpha,
                self.beta,
                self.gamma,
                self.lambda,
                self.delta_exp,
            ],
        }
    }

    pub fn from_vector(form: LawForm, x: &[f64]) -> Self {
        assert_eq!(x.len(), form.n_params());
        match form {
            LawForm::Dense => ScalingLawCoeffs {
                form,
                log_a: x[0],
                log_b: x[1],
                log_c: 0.0,
                log_d: 0.0,
                log_e: x[2],
                alpha: x[3],
                beta: x[4],
                gamma: 0.0,
                lambda: 0.0,
                delta_exp: 0.0,
            },
            LawForm::Moe => ScalingLawCoeffs {
                form,
                log_a: x[0],
                log_b: x[1],
                log_c: x[2],
                log_d: x[3],
                log_e: x[4],
                alpha: x[5],
                beta: x[6],
                gamma: x[7],
                lambda: x[8],
                delta_exp: x[9],
            },
        }
    }

    pub fn predict(&self, n: f64, d: f64, sparsity: f64) -> Result<f64> {
        match self.form {
            LawForm::Dense => predict_loss_dense(self, n, d),
            LawForm::Moe => predict_loss_moe(self, n, d, sparsity),
        }
    }
}

fn check_nd(n: f64, d: f64) -> Result<()> {
    if !(n > 0.0 && d > 0.0) {
        return Err(Error::Domain(format!("parameter count {n} and token count {d} must be positive")));
    }
    Ok(())
}

/// `a/n^α + b/d^β + e`.
pub fn predict_loss_dense(coeffs: &ScalingLawCoeffs, n: f64, d: f64) -> Result<f64> {
    check_nd(n, d)?;
    Ok(coeffs.log_a.exp() / n.powf(coeffs.alpha) + coeffs.log_b.exp() / d.powf(coeffs.beta) + coeffs.log_e.exp())
}

/// Full sparsity-aware law. A dense-form `coeffs` has no sparsity terms.
pub fn predict_loss_moe(coeffs: &ScalingLawCoeffs, n: f64, d: f64, sparsity: f64) -> Result<f64> {
    check_nd(n, d)?;
    if sparsity >= 1.0 {
        return Err(Error::SingularTransform(sparsity));
    }
    if !(sparsity >= 0.0) {
        return Err(Error::Domain(format!("sparsity {sparsity} must be in [0, 1)")));
    }
    let dense = predict_loss_dense(coeffs, n, d)?;
    if coeffs.form == LawForm::Dense {
        return Ok(dense);
    }
    let dense_frac = 1.0 - sparsity;
    Ok(dense
        + coeffs.log_c.exp() / dense_frac.powf(coeffs.lambda)
        + coeffs.log_d.exp() / (dense_frac.powf(coeffs.delta_exp) * n.powf(coeffs.gamma)))
}

pub fn huber_loss(residual: f64, huber_delta: f64) -> f64 {
    let r = residual.abs();
    if r <= huber_delta {
        0.5 * r * r
    } else {
        huber_delta * (r - 0.5 * huber_delta)
    }
}

pub fn huber_derivative(residual: f64, huber_delta: f64) -> f64 {
    residual.clamp(-huber_delta, huber_delta)
}

/// Per-record logarithms the objective needs.
#[derive(Debug, Clone)]
pub struct LawData {
    ln_n: Vec<f64>,
    ln_d: Vec<f64>,
    ln_dense_frac: Vec<f64>,
    loss: Vec<f64>,
    ln_loss: Vec<f64>,
}

impl LawData {
    pub fn new(records: &RunTable) -> Result<Self> {
        let mut data = LawData {
            ln_n: Vec::with_capacity(records.len()),
            ln_d: Vec::with_capacity(records.len()),
            ln_dense_frac: Vec::with_capacity(records.len()),
            loss: Vec::with_capacity(records.len()),
            ln_loss: Vec::with_capacity(records.len()),
        };
        for r in records {
            check_nd(r.n_total, r.tokens)?;
            if !(0.0..1.0).contains(&r.sparsity) {
                return Err(Error::Domain(format!("run {}: sparsity {} outside [0, 1)", r.run_id, r.sparsity)));
            }
            if !(r.loss > 0.0) {
                return Err(Error::Domain(format!("run {}: loss {} must be positive", r.run_id, r.loss)));
            }
            data.ln_n.push(r.n_total.ln());
            data.ln_d.push(r.tokens.ln());
            data.ln_dense_frac.push((-r.sparsity).ln_1p());
            data.loss.push(r.loss);
            data.ln_loss.push(r.loss.ln());
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveOptions {
    pub huber_delta: f64,
    pub residual_space: ResidualSpace,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions { huber_delta: DEFAULT_HUBER_DELTA, residual_space: ResidualSpace::Log }
    }
}

/// Total Huber objective at optimizer vector `x`; writes the gradient.
/// The predicted loss is assembled by log-sum-exp over the law's terms.
pub fn law_objective(form: LawForm, x: &[f64], grad: &mut [f64], data: &LawData, opts: &ObjectiveOptions) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    let mut t = [0.0f64; 5];
    for i in 0..data.len() {
        let (ln_n, ln_d, ln_f) = (data.ln_n[i], data.ln_d[i], data.ln_dense_frac[i]);
        let k = match form {
            LawForm::Dense => {
                t[0] = x[0] - x[3] * ln_n;
                t[1] = x[1] - x[4] * ln_d;
                t[2] = x[2];
                3
            }
            LawForm::Moe => {
                t[0] = x[0] - x[5] * ln_n;
                t[1] = x[1] - x[6] * ln_d;
                t[2] = x[2] - x[8] * ln_f;
                t[3] = x[3] - x[9] * ln_f - x[7] * ln_n;
                t[4] = x[4];
                5
            }
        };
        let m = t[..k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for tj in t[..k].iter_mut() {
            *tj = (*tj - m).exp();
            sum += *tj;
        }
        let ln_pred = m + sum.ln();
        // weights: d(output)/d(t_j)
        let (residual, scale) = match opts.residual_space {
            ResidualSpace::Log => (ln_pred - data.ln_loss[i], 1.0 / sum),
            ResidualSpace::Raw => {
                let pred = ln_pred.exp();
                (pred - data.loss[i], m.exp())
            }
        };
        total += huber_loss(residual, opts.huber_delta);
        let h = huber_derivative(residual, opts.huber_delta) * scale;
        match form {
            LawForm::Dense => {
                let (w0, w1, w2) = (h * t[0], h * t[1], h * t[2]);
                grad[0] += w0;
                grad[1] += w1;
                grad[2] += w2;
                grad[3] -= w0 * ln_n;
                grad[4] -= w1 * ln_d;
            }
            LawForm::Moe => {
                let (w0, w1, w2, w3, w4) = (h * t[0], h * t[1], h * t[2], h * t[3], h * t[4]);
                grad[0] += w0;
                grad[1] += w1;
                grad[2] += w2;
                grad[3] += w3;
                grad[4] += w4;
                grad[5] -= w0 * ln_n;
                grad[6] -= w1 * ln_d;
                grad[7] -= w3 * ln_n;
                grad[8] -= w2 * ln_f;
                grad[9] -= w3 * ln_f;
            }
        }
    }
    total
}

/// Per-parameter initial value lists; starts are their Cartesian product in
/// lexicographic order (first parameter varies slowest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitGrid {
    pub form: LawForm,
    pub values: Vec<Vec<f64>>,
}

impl InitGrid {
    pub fn default_for(form: LawForm) -> Self {
        let logs = vec![0.0, 10.0, 20.0];
        let exps = vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25];
        let signed = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
        let log_e = vec![1.5];
        let values = match form {
            LawForm::Dense => vec![logs.clone(), logs, log_e, exps.clone(), exps],
            LawForm::Moe => vec![
                logs.clone(),
                logs.clone(),
                logs.clone(),
                logs,
                log_e,
                exps.clone(),
                exps.clone(),
                exps,
                signed.clone(),
                signed,
            ],
        };
        InitGrid { form, values }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.form.n_params() {
            return Err(Error::InvalidConfig(format!(
                "init grid has {} value lists; {:?} form needs {}",
                self.values.len(),
                self.form,
                self.form.n_params()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| v.is_empty() || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "init grid list for {} must be nonempty and finite",
                self.form.param_names()[i]
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Start number `index` in lexicographic order.
    pub fn start(&self, mut index: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.values.len()];
        for (j, list) in self.values.iter().enumerate().rev() {
            x[j] = list[index % list.len()];
            index /= list.len();
        }
        x
    }

    /// Indices of the starts to run: all of them, or a seeded sorted subset of
    /// `round(fraction * len)` (at least one).
    pub fn select(&self, fraction: f64, seed: u64) -> Result<Vec<usize>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("starts fraction {fraction} must be in (0, 1]")));
        }
        let total = self.len();
        if fraction == 1.0 {
            return Ok((0..total).collect());
        }
        let k = ((fraction * total as f64).round() as usize).clamp(1, total);
        let mut rng = stream_rng(seed, START_SUBSAMPLE_STREAM);
        let mut picked = index::sample(&mut rng, total, k).into_vec();
        picked.sort_unstable();
        Ok(picked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitLawOptions {
    pub objective: ObjectiveOptions,
    pub lbfgs: LbfgsOptions,
    pub grid: Option<InitGrid>,
    pub starts_fraction: f64,
    pub seed: u64,
}

impl Default for FitLawOptions {
    fn default() -> Self {
        FitLawOptions {
            objective: ObjectiveOptions::default(),
            lbfgs: LbfgsOptions::default(),
            grid: None,
            starts_fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawMetrics {
    pub mse: f64,
    /// Mean Huber loss per record.
    pub huber: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestStart {
    pub index: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingLawFit {
    pub form: LawForm,
    pub coeffs: ScalingLawCoeffs,
    /// Total Huber objective at `coeffs`.
    pub objective_value: f64,
    pub fit_metrics: LawMetrics,
    pub holdout_metrics: Option<LawMetrics>,
    pub starts_evaluated: usize,
    pub starts_failed: usize,
    pub best_start: BestStart,
    pub optimizer: OptimizerReport,
    pub huber_delta: f64,
    pub residual_space: ResidualSpace,
}

impl ScalingLawFit {
    pub fn attach_holdout(&mut self, holdout: &RunTable) -> Result<()> {
        self.holdout_metrics = Some(evaluate_law_in(&self.coeffs, holdout, self.huber_delta, self.residual_space)?);
        Ok(())
    }
}

fn distinct_count(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

fn check_variation(records: &RunTable, form: LawForm) -> Result<()> {
    let need = form.n_params() + 2;
    if records.len() < need {
        return Err(Error::InsufficientVariation(format!(
            "{} records; the {:?} law needs at least {need}",
            records.len(),
            form
        )));
    }
    let spans = [
        ("parameter count", distinct_count(records.iter().map(|r| r.n_total))),
        ("token count", distinct_count(records.iter().map(|r| r.tokens))),
        ("sparsity", if form == LawForm::Moe { distinct_count(records.iter().map(|r| r.sparsity)) } else { 2 }),
    ];
    for (name, count) in spans {
        if count < 2 {
            return Err(Error::InsufficientVariation(format!("records have a single distinct {name}")));
        }
    }
    Ok(())
}

struct StartResult {
    index: usize,
    x: Vec<f64>,
    value: f64,
    report: OptimizerReport,
}

/// Runs L-BFGS from every selected grid start and keeps the lowest objective
/// (ties: lowest start index).
pub fn fit_law(records: &RunTable, form: LawForm, opts: &FitLawOptions) -> Result<ScalingLawFit> {
    check_variation(records, form)?;
    let grid = opts.grid.clone().unwrap_or_else(|| InitGrid::default_for(form));
    if grid.form != form {
        return Err(Error::InvalidConfig(format!("init grid is for {:?}, fit requested {:?}", grid.form, form)));
    }
    grid.validate()?;
    if !(opts.objective.huber_delta > 0.0) {
        return Err(Error::InvalidConfig(format!("huber delta {} must be positive", opts.objective.huber_delta)));
    }
    let data = LawData::new(records)?;
    let starts = grid.select(opts.starts_fraction, opts.seed)?;
    log::info!("fit_law: {:?} form, {} records, {} starts", form, data.len(), starts.len());

    let results: Vec<Option<StartResult>> = starts
        .par_iter()
        .map(|&index| {
            let x0 = grid.start(index);
            let f = |x: &[f64], g: &mut [f64]| law_objective(form, x, g, &data, &opts.objective);
            match lbfgs_minimize(f, &x0, &opts.lbfgs) {
                Ok((x, report)) => Some(StartResult { index, x, value: report.final_value, report }),
                Err(OptimError::LineSearch { value, last_x, report, .. }) if value.is_finite() => {
                    Some(StartResult { index, x: last_x, value, report })
                }
                Err(_) => None,
            }
        })
        .collect();

    let starts_evaluated = results.len();
    let starts_failed = results.iter().filter(|r| r.is_none()).count();
    let best = results
        .into_iter()
        .flatten()
        .filter(|r| r.value.is_finite())
        .min_by(|a, b| a.value.total_cmp(&b.value).then(a.index.cmp(&b.index)))
        .ok_or_else(|| Error::Fit(format!("all {starts_evaluated} starts failed")))?;

    let coeffs = ScalingLawCoeffs::from_vector(form, &best.x);
    let mut scratch = vec![0.0; form.n_params()];
    let objective_value = law_objective(form, &best.x, &mut scratch, &data, &opts.objective);
    let fit_metrics = evaluate_law_in(&coeffs, records, opts.objective.huber_delta, opts.objective.residual_space)?;
    Ok(ScalingLawFit {
        form,
        coeffs,
        objective_value,
        fit_metrics,
        holdout_metrics: None,
        starts_evaluated,
        starts_failed,
        best_start: BestStart { index: best.index, values: grid.start(best.index) },
        optimizer: best.report,
        huber_delta: opts.objective.huber_delta,
        residual_space: opts.objective.residual_space,
    })
}

/// Mean squared residual and mean Huber loss with log-space residuals.
pub fn evaluate_law(coeffs: &ScalingLawCoeffs, records: &RunTable, huber_delta: f64) -> Result<LawMetrics> {
    evaluate_law_in(coeffs, records, huber_delta, ResidualSpace::Log)
}

pub fn evaluate_law_in(coeffs: &ScalingLawCoeffs, records: &RunTable, huber_delta: f64, space: ResidualSpace) -> Result<LawMetrics> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records to evaluate".into()));
    }
    let mut sq = 0.0;
    let mut hub = 0.0;
    for r in records {
        let pred = coeffs.predict(r.n_total, r.tokens, r.sparsity)?;
        let res = match space {
            ResidualSpace::Log => pred.ln() - r.loss.ln(),
            ResidualSpace::Raw => pred - r.loss,
        };
        sq += res * res;
        hub += huber_loss(res, huber_delta);
    }
    let n = records.len();
    Ok(LawMetrics { mse: sq / n as f64, huber: hub / n as f64, n })
}

/// The parametric law viewed as an isoFLOP surface at one budget:
/// tokens follow from `D = C / (6 N_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoFlopLaw {
    pub coeffs: ScalingLawCoeffs,
    pub budget: f64,
    pub na_rule: NaRule,
    pub size_variable: SizeVariable,
}

impl IsoFlopLaw {
    pub fn new(coeffs: ScalingLawCoeffs, budget: f64, na_rule: NaRule) -> Self {
        IsoFlopLaw { coeffs, budget, na_rule, size_variable: SizeVariable::Total }
    }

    /// Total and active parameter counts for a size in this surface's variable.
    pub fn sizes(&self, size: f64, sparsity: f64) -> Result<(f64, f64)> {
        match self.size_variable {
            SizeVariable::Total => Ok((size, self.na_rule.active(size, sparsity)?)),
            SizeVariable::Active => Ok((self.na_rule.total(size, sparsity)?, size)),
        }
    }
}

impl LossSurface for IsoFlopLaw {
    fn loss(&self, size: f64, sparsity: f64) -> Result<f64> {
        let (n, n_active) = self.sizes(size, sparsity)?;
        let tokens = self.budget / (6.0 * n_active);
        self.coeffs.predict(n, tokens, sparsity)
    }

    fn size_variable(&self) -> SizeVariable {
        self.size_variable
    }

    fn budget(&self) -> f64 {
        self.budget
    }

    fn label(&self) -> String {
        format!("parametric_law@{:e}", self.budget)
    }
}

/// Default search range for compute-optimal size.
pub const EXPONENT_SIZE_INTERVAL: (f64, f64) = (1e5, 1e15);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumRow {
    pub budget: f64,
    pub n_opt: f64,
    pub n_active_opt: f64,
    pub loss: f64,
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalExponent {
    /// `β / (α + β)`, only for a dense law with positive exponents.
    pub closed_form: Option<f64>,
    /// Slope of `ln N*` against `ln C`.
    pub numeric: f64,
    pub prefactor: f64,
    pub table: Vec<OptimumRow>,
    pub any_boundary: bool,
}

/// `N* ∝ C^a` for the law at fixed sparsity: numerically through per-budget
/// size minimization, and in closed form for the dense law.
pub fn compute_optimal_exponent(
    coeffs: &ScalingLawCoeffs,
    sparsity: f64,
    na_rule: &NaRule,
    budgets: &[f64],
    size_interval: Option<(f64, f64)>,
) -> Result<OptimalExponent> {
    na_rule.validate()?;
    if budgets.len() < 2 {
        return Err(Error::InsufficientData(format!("{} budgets; need at least 2", budgets.len())));
    }
    let (lo, hi) = size_interval.unwrap_or(EXPONENT_SIZE_INTERVAL);
    let closed_form =
        (coeffs.form == LawForm::Dense && coeffs.alpha > 0.0 && coeffs.beta > 0.0).then(|| coeffs.beta / (coeffs.alpha + coeffs.beta));
    let table = budgets
        .iter()
        .map(|&budget| {
            let surface = IsoFlopLaw::new(*coeffs, budget, *na_rule);
            let m = minimize_scalar(|u| surface.loss(u.exp(), sparsity), lo.ln(), hi.ln(), SCAN_POINTS, REFINE_TOL)?;
            let n_opt = m.x.exp();
            Ok(OptimumRow {
                budget,
                n_opt,
                n_active_opt: na_rule.active(n_opt, sparsity)?,
                loss: m.value,
                at_boundary: m.at_boundary,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = power_law_fit(&table.iter().map(|r| (r.budget, r.n_opt)).collect::<Vec<_>>())?;
    Ok(OptimalExponent {
        closed_form,
        numeric: fit.exponent,
        prefactor: fit.prefactor,
        any_boundary: table.iter().any(|r| r.at_boundary),
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_prediction_with_published_values() {
        let c = ScalingLawCoeffs::published();
        let l = predict_loss_dense(&c, 1e9, 2e10).unwrap();
        let by_hand = 16612.50 / 1e9f64.powf(0.5962) + 5455.67 / 2e10f64.powf(0.3954) + 0.94;
        assert!((l - by_hand).abs() < 1e-12);
        assert!((l - 1.4727).abs() < 0.005, "{l}");
    }

    #[test]
    fn moe_prediction_with_published_values() {
        let c = ScalingLawCoeffs::published();
        let l = predict_loss_moe(&c, 1e9, 2e10, 0.9).unwrap();
        assert!((l - 2.702).abs() < 0.01, "{l}");
        let far = predict_loss_moe(&c, 1e300, 1e300, 0.0).unwrap();
        assert!((far - 1.3998).abs() < 1e-12, "{far}");
        assert!(matches!(predict_loss_moe(&c, 1e9, 2e10, 1.0), Err(Error::SingularTransform(_))));
    }

    #[test]
    fn zero_exponents_give_constant() {
        let c = ScalingLawCoeffs::dense_from_linear(2.0, 3.0, 0.5, 0.0, 0.0);
        assert!((predict_loss_dense(&c, 7.0, 11.0).unwrap() - 5.5).abs() < 1e-15);
    }

    #[test]
    fn sparsity_zero_collapse() {
        let c = ScalingLawCoeffs::published();
        let (n, d) = (3.3e9, 7.1e10);
        let moe = predict_loss_moe(&c, n, d, 0.0).unwrap();
        let dense = predict_loss_dense(&c, n, d).unwrap();
        let extra = c.log_c.exp() + c.log_d.exp() / n.powf(c.gamma);
        assert!((moe - (dense + extra)).abs() <= 1e-15 * moe);
    }

    #[test]
    fn huber_examples() {
        assert!((huber_loss(0.0005, 1e-3) - 1.25e-7).abs() < 1e-20);
        assert!((huber_loss(0.01, 1e-3) - 9.5e-6).abs() < 1e-18);
        assert!((huber_loss(-0.01, 1e-3) - 9.5e-6).abs() < 1e-18);
        assert_eq!(huber_loss(1e-3, 1e-3), 5e-7);
        assert!((1e-3 * (1e-3 - 0.5e-3) - 5e-7f64).abs() < 1e-20);
    }

    #[test]
    fn grid_sizes_and_order() {
        let g = InitGrid::default_for(LawForm::Moe);
        assert_eq!(g.len(), 437_400);
        assert_eq!(InitGrid::default_for(LawForm::Dense).len(), 324);
        assert_eq!(g.start(0), vec![0.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, -1.0, -1.0]);
        assert_eq!(g.start(1), vec![0.0, 0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, -1.0, -0.5]);
        assert_eq!(g.start(g.len() - 1), vec![20.0, 20.0, 20.0, 20.0, 1.5, 1.25, 1.25, 1.25, 1.0, 1.0]);
        let pick = g.select(0.02, 0).unwrap();
        assert_eq!(pick.len(), 8748);
        assert!(pick.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(pick, g.select(0.02, 0).unwrap());
        assert_ne!(pick, g.select(0.02, 1).unwrap());
        assert!(g.select(0.0, 0).is_err());
    }

    #[test]
    fn empty_table_lacks_variation() {
        let empty = RunTable::from_records(Vec::new()).unwrap();
        let err = fit_law(&empty, LawForm::Moe, &FitLawOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientVariation(_)));
    }

    #[test]
    fn evaluate_constant_residual() {
        use crate::runs::RunRecord;
        let c = ScalingLawCoeffs::published();
        let records: Vec<RunRecord> = (0..4)
            .map(|i| {
                let n = 1e9 * (i + 1) as f64;
                let d = 2e10;
                let truth = predict_loss_moe(&c, n, d, 0.5).unwrap();
                RunRecord {
                    run_id: format!("r{i}"),
                    n_total: n,
                    n_active: n / 2.0,
                    sparsity: 0.5,
                    tokens: d,
                    compute: 6.0 * n / 2.0 * d,
                    loss: truth,
                    extras: Default::default(),
                    compute_synthetic: false,
                }
            })
            .collect();
        let t = RunTable::from_records(records.clone()).unwrap();
        assert_eq!(evaluate_law(&c, &t, 1e-3).unwrap().mse, 0.0);
        let shifted: Vec<RunRecord> = records
            .into_iter()
            .map(|mut r| {
                r.loss = c.predict(r.n_total, r.tokens, r.sparsity).unwrap() - 0.01;
                r
            })
            .collect();
        let m = evaluate_law_in(&c, &RunTable::from_records(shifted).unwrap(), 1e-3, ResidualSpace::Raw).unwrap();
        assert!((m.mse - 1e-4).abs() < 1e-15);
        assert!((m.huber - 9.5e-6).abs() < 1e-15);
    }

    #[test]
    fn dense_closed_form_and_symmetry() {
        let c = ScalingLawCoeffs::dense_from_linear(400.0, 400.0, 1.7, 0.34, 0.34);
        let r = compute_optimal_exponent(&c, 0.0, &NaRule::Identity, &[1e19, 1e20, 1e21, 1e22], None).unwrap();
        assert_eq!(r.closed_form, Some(0.5));
        assert!((r.numeric - 0.5).abs() < 1e-6, "{}", r.numeric);
    }
}
