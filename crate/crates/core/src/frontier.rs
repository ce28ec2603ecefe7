//! Compute-optimal quantities: optimal size at fixed sparsity, optimal
//! sparsity at fixed size, per-budget parabola vertices, and power laws
//! relating the optima to the compute budget.
//!
//! One-dimensional searches run in transformed coordinates (`ln N` for
//! size, `-ln(1 - S)` for sparsity): a dense uniform scan locates the basin,
//! golden-section search narrows it, and a three-point parabola polishes the
//! result. The refined point is only kept if it is no worse than the best
//! scan point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstsq::fit_linear;
use crate::runs::RunTable;
use crate::surface::{inverse_transform, transform_features, FitDomain, SizeVariable, SurfaceFit};

pub const SCAN_POINTS: usize = 512;
pub const REFINE_TOL: f64 = 1e-6;
/// Upper end of the default sparsity search interval.
pub const DEFAULT_MAX_SPARSITY: f64 = 0.99;
/// Default size interval is the fit domain widened by this many decades per side.
pub const DEFAULT_DOMAIN_PADDING_DECADES: f64 = 0.5;

/// A loss landscape over (size, sparsity) at one compute budget.
pub trait LossSurface: Sync {
    fn loss(&self, size: f64, sparsity: f64) -> Result<f64>;

    fn size_variable(&self) -> SizeVariable;

    fn budget(&self) -> f64;

    /// Region backed by observations, if any.
    fn domain(&self) -> Option<FitDomain> {
        None
    }

    fn label(&self) -> String;
}

impl LossSurface for SurfaceFit {
    fn loss(&self, size: f64, sparsity: f64) -> Result<f64> {
        Ok(self.predict(size, sparsity)?.loss)
    }

    fn size_variable(&self) -> SizeVariable {
        self.size_variable
    }

    fn budget(&self) -> f64 {
        self.budget
    }

    fn domain(&self) -> Option<FitDomain> {
        Some(self.fit_domain)
    }

    fn label(&self) -> String {
        format!("isoflop_surface{}@{:e}", self.degrees, self.budget)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Constraint {
    FixedSparsity(f64),
    FixedSize(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub budget: f64,
    pub constraint: Constraint,
    pub size_variable: SizeVariable,
    pub opt_size: f64,
    pub opt_sparsity: f64,
    pub opt_loss: f64,
    /// The optimum sits on an edge of the search interval.
    pub at_boundary: bool,
    /// The optimum lies outside the observed fit domain.
    pub extrapolated: bool,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub at_boundary: bool,
}

fn finite(v: Result<f64>, x: f64) -> Result<f64> {
    let v = v?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Evaluation(format!("non-finite loss {v} at coordinate {x}")))
    }
}

fn golden_section(phi: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = finite(phi(c), c)?;
    let mut fd = finite(phi(d), d)?;
    while (b - a) > tol * c.abs().max(1.0) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = finite(phi(c), c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = finite(phi(d), d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Minimizes `phi` over `[lo, hi]`: uniform scan of `scan_points`, then
/// golden-section refinement around the best scan point to relative width
/// `tol`, then a parabolic polish. Ties go to the smaller coordinate.
pub fn minimize_scalar(phi: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64, scan_points: usize, tol: f64) -> Result<Minimum> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Domain(format!("search interval [{lo}, {hi}] is empty or not finite")));
    }
    let n = scan_points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let grid = |i: usize| if i == n - 1 { hi } else { lo + step * i as f64 };
    let mut best = (0usize, f64::INFINITY);
    for i in 0..n {
        let x = grid(i);
        let v = finite(phi(x), x)?;
        if v < best.1 {
            best = (i, v);
        }
    }
    let (i_best, f_best) = best;
    let x_best = grid(i_best);

    let (a, b) = (grid(i_best.saturating_sub(1)), grid((i_best + 1).min(n - 1)));
    let (mut x_ref, mut f_ref) = golden_section(&phi, a, b, tol)?;

    let h = step / 8.0;
    if x_ref - h >= lo && x_ref + h <= hi {
        let fm = finite(phi(x_ref - h), x_ref - h)?;
        let fp = finite(phi(x_ref + h), x_ref + h)?;
        let curvature = fp - 2.0 * f_ref + fm;
        if curvature > 0.0 {
            let x_par = x_ref - h * (fp - fm) / (2.0 * curvature);
            if (x_par - x_ref).abs() <= h {
                let f_par = finite(phi(x_par), x_par)?;
                if f_par <= f_ref {
                    x_ref = x_par;
                    f_ref = f_par;
                }
            }
        }
    }

    let edge = i_best == 0 || i_best == n - 1;
    let (x, value) = if f_ref < f_best || (f_ref == f_best && !edge) { (x_ref, f_ref) } else { (x_best, f_best) };
    let near = |e: f64| (x - e).abs() <= tol * e.abs().max(1.0);
    Ok(Minimum { x, value, at_boundary: near(lo) || near(hi) })
}

/// Default size search interval: the fit domain widened half a decade per side.
pub fn default_size_interval(surface: &impl LossSurface) -> Result<(f64, f64)> {
    let d = surface
        .domain()
        .ok_or_else(|| Error::Domain("surface has no fit domain; pass an explicit size interval".into()))?;
    let pad = 10f64.powf(DEFAULT_DOMAIN_PADDING_DECADES);
    Ok((d.size_min / pad, d.size_max * pad))
}

fn is_extrapolated(surface: &impl LossSurface, size: f64, sparsity: f64) -> bool {
    surface.domain().is_some_and(|d| !d.contains(size, sparsity))
}

/// `argmin_N L(N; C, S)` over a size interval (default: padded fit domain).
pub fn optimal_size_given_sparsity(
    surface: &impl LossSurface,
    sparsity: f64,
    interval: Option<(f64, f64)>,
) -> Result<FrontierPoint> {
    transform_features(1.0, sparsity)?;
    let (lo, hi) = match interval {
        Some(iv) => iv,
        None => default_size_interval(surface)?,
    };
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Domain(format!("size interval [{lo}, {hi}] must be positive and ordered")));
    }
    let m = minimize_scalar(|u| surface.loss(u.exp(), sparsity), lo.ln(), hi.ln(), SCAN_POINTS, REFINE_TOL)?;
    let size = m.x.exp();
    Ok(FrontierPoint {
        budget: surface.budget(),
        constraint: Constraint::FixedSparsity(sparsity),
        size_variable: surface.size_variable(),
        opt_size: size,
        opt_sparsity: sparsity,
        opt_loss: m.value,
        at_boundary: m.at_boundary,
        extrapolated: is_extrapolated(surface, size, sparsity),
        source: surface.label(),
    })
}

/// `argmin_S L(S; C, N)` over a sparsity interval within `[0, 1)`
/// (default `[0, 0.99]`).
pub fn optimal_sparsity_given_size(
    surface: &impl LossSurface,
    size: f64,
    interval: Option<(f64, f64)>,
) -> Result<FrontierPoint> {
    let (lo, hi) = interval.unwrap_or((0.0, DEFAULT_MAX_SPARSITY));
    if !(lo >= 0.0 && hi > lo && hi < 1.0) {
        return Err(Error::Domain(format!("sparsity interval [{lo}, {hi}] must lie in [0, 1)")));
    }
    let (_, u_lo) = transform_features(size, lo)?;
    let (_, u_hi) = transform_features(size, hi)?;
    let m = minimize_scalar(|u| surface.loss(size, inverse_transform(0.0, u).1), u_lo, u_hi, SCAN_POINTS, REFINE_TOL)?;
    let sparsity = if m.x == u_lo {
        lo
    } else if m.x == u_hi {
        hi
    } else {
        inverse_transform(0.0, m.x).1
    };
    Ok(FrontierPoint {
        budget: surface.budget(),
        constraint: Constraint::FixedSize(size),
        size_variable: surface.size_variable(),
        opt_size: size,
        opt_sparsity: sparsity,
        opt_loss: m.value,
        at_boundary: m.at_boundary,
        extrapolated: is_extrapolated(surface, size, sparsity),
        source: surface.label(),
    })
}

/// `L = c0 + c1 n + c2 n^2` with `n = ln size`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// `exp(-c1 / (2 c2))` when `c2 != 0`.
    pub vertex_size: Option<f64>,
    pub is_minimum: bool,
}

impl QuadraticFit {
    pub fn from_coefficients(c0: f64, c1: f64, c2: f64) -> Self {
        let vertex_size = (c2 != 0.0).then(|| (-c1 / (2.0 * c2)).exp());
        QuadraticFit { c0, c1, c2, vertex_size, is_minimum: c2 > 0.0 }
    }

    pub fn eval(&self, size: f64) -> f64 {
        let n = size.ln();
        self.c0 + n * (self.c1 + n * self.c2)
    }
}

/// Curvature below this fraction of the loss scale (over the observed
/// log-size span) is treated as exactly zero.
const FLAT_CURVATURE_TOL: f64 = 1e-9;

/// Least-squares parabola in `ln size` over runs sharing one budget and sparsity.
pub fn approach2_fit(records: &RunTable, size_variable: SizeVariable) -> Result<QuadraticFit> {
    let xs: Vec<f64> = records.iter().map(|r| size_variable.of(r)).collect();
    if xs.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::Domain("sizes must be positive".into()));
    }
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if records.len() < 3 || distinct.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} runs with {} distinct sizes; need at least 3 of each",
            records.len(),
            distinct.len()
        )));
    }
    let n: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let n2: Vec<f64> = n.iter().map(|v| v * v).collect();
    let y: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let lin = fit_linear(&[n.clone(), n2], &["size^1".into(), "size^2".into()], &y)?;
    let (c1, mut c2) = (lin.coefficients[0], lin.coefficients[1]);
    let span = distinct.last().unwrap().ln() - distinct[0].ln();
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if (c2 * span * span).abs() <= FLAT_CURVATURE_TOL * scale {
        c2 = 0.0;
    }
    Ok(QuadraticFit::from_coefficients(lin.intercept, c1, c2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub exponent: f64,
    pub prefactor: f64,
}

impl PowerLaw {
    pub fn eval(&self, x: f64) -> f64 {
        self.prefactor * x.powf(self.exponent)
    }
}

/// Least squares of `ln y` on `ln x`: `y ~ prefactor * x^exponent`.
pub fn power_law_fit(points: &[(f64, f64)]) -> Result<PowerLaw> {
    if let Some((x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::Domain(format!("power-law points must be positive, got ({x}, {y})")));
    }
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!("{} points for a power-law fit", points.len())));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let lin = fit_linear(&[lx], &["ln x".into()], &ly).map_err(|e| match e {
        Error::SingularFit(_) => Error::InsufficientData("power-law x values are not distinct".into()),
        other => other,
    })?;
    Ok(PowerLaw { exponent: lin.coefficients[0], prefactor: lin.intercept.exp() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityCell {
    pub budget: f64,
    pub size: f64,
    pub opt_sparsity: Option<f64>,
    pub opt_loss: Option<f64>,
    pub at_boundary: bool,
    pub error: Option<String>,
}

/// `S*` for every (surface, size) pair, sorted by budget then size.
/// Cells that fail to evaluate are kept with the reason.
pub fn optimal_sparsity_map<S: LossSurface>(surfaces: &[S], size_grid: &[f64], interval: Option<(f64, f64)>) -> Result<Vec<SparsityCell>> {
    if let Some(s) = surfaces.iter().find(|s| s.size_variable() != SizeVariable::Total) {
        return Err(Error::Domain(format!("{} is not parameterized by total parameters", s.label())));
    }
    let jobs: Vec<(usize, f64)> = (0..surfaces.len()).flat_map(|i| size_grid.iter().map(move |&n| (i, n))).collect();
    let mut cells: Vec<SparsityCell> = jobs
        .par_iter()
        .map(|&(i, size)| {
            let s = &surfaces[i];
            match optimal_sparsity_given_size(s, size, interval) {
                Ok(p) => SparsityCell {
                    budget: s.budget(),
                    size,
                    opt_sparsity: Some(p.opt_sparsity),
                    opt_loss: Some(p.opt_loss),
                    at_boundary: p.at_boundary,
                    error: None,
                },
                Err(e) => SparsityCell {
                    budget: s.budget(),
                    size,
                    opt_sparsity: None,
                    opt_loss: None,
                    at_boundary: false,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    cells.sort_by(|a, b| a.budget.total_cmp(&b.budget).then(a.size.total_cmp(&b.size)));
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentRow {
    pub sparsity: f64,
    pub exponent: Option<f64>,
    pub prefactor: Option<f64>,
    /// `(budget, optimal size)` pairs that entered the fit.
    pub optima: Vec<(f64, f64)>,
    pub reason: Option<String>,
}

const SPARSITY_MATCH_TOL: f64 = 1e-9;

/// For each sparsity level, collects Approach-II vertices across budgets and
/// fits `N* = k C^a`.
pub fn scaling_exponent_vs_sparsity(
    grouped: &[(f64, RunTable)],
    sparsities: &[f64],
    size_variable: SizeVariable,
) -> Vec<ExponentRow> {
    sparsities
        .iter()
        .map(|&s| {
            let mut optima = Vec::new();
            let mut problems = Vec::new();
            for (budget, table) in grouped {
                let slice = table.filter(|r| (r.sparsity - s).abs() <= SPARSITY_MATCH_TOL);
                match approach2_fit(&slice, size_variable) {
                    Ok(q) if q.is_minimum => optima.push((*budget, q.vertex_size.unwrap())),
                    Ok(_) => problems.push(format!("{budget:e}: no interior minimum")),
                    Err(e) => problems.push(format!("{budget:e}: {e}")),
                }
            }
            if optima.len() < 2 {
                let mut reason = format!("insufficient data: {} budget(s) with a vertex", optima.len());
                if !problems.is_empty() {
                    reason.push_str(&format!(" ({})", problems.join("; ")));
                }
                return ExponentRow { sparsity: s, exponent: None, prefactor: None, optima, reason: Some(reason) };
            }
            match power_law_fit(&optima) {
                Ok(p) => ExponentRow {
                    sparsity: s,
                    exponent: Some(p.exponent),
                    prefactor: Some(p.prefactor),
                    optima,
                    reason: None,
                },
                Err(e) => ExponentRow { sparsity: s, exponent: None, prefactor: None, optima, reason: Some(e.to_string()) },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runs::RunRecord;
    use std::collections::BTreeMap;

    fn domain() -> FitDomain {
        FitDomain { size_min: 1e7, size_max: 1e11, sparsity_min: 0.0, sparsity_max: 0.95 }
    }

    fn surface(size: Vec<f64>, sparsity: Vec<f64>, inter: Vec<f64>, d: f64) -> SurfaceFit {
        SurfaceFit::from_coefficients(SizeVariable::Total, size, sparsity, inter, d, 1e20, domain())
    }

    fn runs(points: &[(f64, f64)]) -> RunTable {
        RunTable::from_records(
            points
                .iter()
                .enumerate()
                .map(|(i, &(size, loss))| RunRecord {
                    run_id: format!("r{i}"),
                    n_total: size,
                    n_active: size,
                    sparsity: 0.0,
                    tokens: 1e20 / (6.0 * size),
                    compute: 1e20,
                    loss,
                    extras: BTreeMap::new(),
                    compute_synthetic: false,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn quadratic_size_vertex() {
        // 2 + (n - 20)^2 = 402 - 40 n + n^2
        let s = surface(vec![-40.0, 1.0], vec![], vec![], 402.0);
        let p = optimal_size_given_sparsity(&s, 0.5, Some((1e6, 1e12))).unwrap();
        assert!((p.opt_size / 20f64.exp() - 1.0).abs() < 1e-9, "{}", p.opt_size);
        assert!(!p.at_boundary);
        assert!((p.opt_loss - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_surface_hits_upper_edge() {
        let s = surface(vec![-0.1], vec![], vec![], 5.0);
        let p = optimal_size_given_sparsity(&s, 0.0, Some((1e8, 1e10))).unwrap();
        assert_eq!(p.opt_size, 1e10f64.ln().exp());
        assert!(p.at_boundary);
    }

    #[test]
    fn sparsity_vertex_and_edges() {
        let s = surface(vec![], vec![-0.2, 0.05], vec![], 3.0);
        let p = optimal_sparsity_given_size(&s, 1e9, None).unwrap();
        let expected = 1.0 - (-2.0f64).exp();
        assert!((p.opt_sparsity - expected).abs() / expected < 1e-9);
        assert!(!p.at_boundary);

        let down = surface(vec![], vec![-0.2], vec![], 3.0);
        let p = optimal_sparsity_given_size(&down, 1e9, None).unwrap();
        assert_eq!(p.opt_sparsity, DEFAULT_MAX_SPARSITY);
        assert!(p.at_boundary);

        let up = surface(vec![], vec![0.2], vec![], 3.0);
        let p = optimal_sparsity_given_size(&up, 1e9, None).unwrap();
        assert_eq!(p.opt_sparsity, 0.0);
        assert!(p.at_boundary);
    }

    #[test]
    fn flat_surface_prefers_smallest() {
        let s = surface(vec![], vec![], vec![], 2.0);
        let p = optimal_size_given_sparsity(&s, 0.0, Some((1e8, 1e10))).unwrap();
        assert_eq!(p.opt_size, 1e8f64.ln().exp());
        let p = optimal_sparsity_given_size(&s, 1e9, None).unwrap();
        assert_eq!(p.opt_sparsity, 0.0);
    }

    #[test]
    fn default_interval_pads_domain() {
        let s = surface(vec![-40.0, 1.0], vec![], vec![], 402.0);
        let (lo, hi) = default_size_interval(&s).unwrap();
        assert!((lo - 1e7 / 10f64.sqrt()).abs() < 1e-3);
        assert!((hi / (1e11 * 10f64.sqrt()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonfinite_surface_is_an_evaluation_error() {
        struct Bad;
        impl LossSurface for Bad {
            fn loss(&self, size: f64, _: f64) -> Result<f64> {
                Ok(if size > 1e9 { f64::NAN } else { 1.0 })
            }
            fn size_variable(&self) -> SizeVariable {
                SizeVariable::Total
            }
            fn budget(&self) -> f64 {
                1e20
            }
            fn label(&self) -> String {
                "bad".into()
            }
        }
        assert!(matches!(optimal_size_given_sparsity(&Bad, 0.0, Some((1e8, 1e10))), Err(Error::Evaluation(_))));
        assert!(optimal_size_given_sparsity(&Bad, 0.0, None).is_err());
    }

    #[test]
    fn approach2_exact_parabola() {
        let pts: Vec<(f64, f64)> = [18.0, 19.0, 19.5, 20.5, 21.0, 22.5]
            .iter()
            .map(|&n: &f64| (n.exp(), 2.0 + (n - 20.0).powi(2)))
            .collect();
        let q = approach2_fit(&runs(&pts), SizeVariable::Total).unwrap();
        assert!(q.is_minimum);
        assert!((q.vertex_size.unwrap() / 20f64.exp() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn approach2_degenerate_inputs() {
        let line: Vec<(f64, f64)> = [18.0, 19.0, 20.0, 21.0].iter().map(|&n: &f64| (n.exp(), 5.0 - 0.1 * n)).collect();
        let q = approach2_fit(&runs(&line), SizeVariable::Total).unwrap();
        assert!(!q.is_minimum);
        assert_eq!(q.c2, 0.0);
        assert!(q.vertex_size.is_none());

        let two = [(1e9, 2.0), (2e9, 1.9), (2e9, 1.95)];
        assert!(matches!(approach2_fit(&runs(&two), SizeVariable::Total), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn power_law_cases() {
        let p = power_law_fit(&[(1e19, 1e9), (1e21, 1e10)]).unwrap();
        assert!((p.exponent - 0.5).abs() < 1e-12);
        let p = power_law_fit(&[(1.0, 4.0), (10.0, 4.0), (100.0, 4.0)]).unwrap();
        assert_eq!(p.exponent, 0.0);
        assert!(matches!(power_law_fit(&[(1.0, 0.0), (2.0, 1.0)]), Err(Error::Domain(_))));
        assert!(matches!(power_law_fit(&[(1.0, 1.0)]), Err(Error::InsufficientData(_))));
        assert!(matches!(power_law_fit(&[(2.0, 1.0), (2.0, 3.0)]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn sparsity_map_single_cell_matches_direct_call() {
        let s = surface(vec![-40.0, 1.0], vec![-0.2, 0.05], vec![0.001], 402.0);
        let cells = optimal_sparsity_map(std::slice::from_ref(&s), &[1e9], None).unwrap();
        let direct = optimal_sparsity_given_size(&s, 1e9, None).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].opt_sparsity, Some(direct.opt_sparsity));
    }

    #[test]
    fn sparsity_map_rejects_active_surfaces() {
        let mut s = surface(vec![-0.1], vec![], vec![], 5.0);
        s.size_variable = SizeVariable::Active;
        assert!(optimal_sparsity_map(&[s], &[1e9], None).is_err());
    }

    #[test]
    fn exponent_rows_need_two_budgets() {
        let pts: Vec<(f64, f64)> = [18.0, 19.0, 20.0, 21.0].iter().map(|&n: &f64| (n.exp(), 2.0 + (n - 19.5).powi(2))).collect();
        let rows = scaling_exponent_vs_sparsity(&[(1e20, runs(&pts))], &[0.0], SizeVariable::Total);
        assert!(rows[0].exponent.is_none());
        assert!(rows[0].reason.as_ref().unwrap().contains("insufficient"));
    }
}
