//! Built-in checks on bundled synthetic designs. Every artifact written here
//! is a pure function of the seed and the `--full` flag.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use moescale::artifact::{format_float, write_atomic, write_json, LawArtifact, ReportBundle, SurfaceArtifact};
use moescale::flops::{estimator_ratio, flops_breakdown, flops_per_token};
use moescale::frontier::{optimal_size_given_sparsity, optimal_sparsity_given_size, power_law_fit};
use moescale::law::{
    compute_optimal_exponent, fit_law, law_objective, FitLawOptions, IsoFlopLaw, LawData, LawForm, ObjectiveOptions,
    ScalingLawCoeffs,
};
use moescale::model::{MoeConfig, NaRule};
use moescale::optim::{lbfgs_minimize, LbfgsOptions};
use moescale::rng::stream_rng;
use moescale::runs::{split_holdout_by_sparsity, RunTable, DEFAULT_BUDGETS};
use moescale::surface::{fit_surface, grid_search_degrees, holdout_metrics, CvOptions, Degrees, FitDomain, SizeVariable, SurfaceFit};
use moescale::synth::{generate_runs, SynthDesign, SynthGrid, Truth, STANDARD_SPARSITIES};

use crate::{CliError, CliResult, Context};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Directory for the artifact tree
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Full-size law fits (500 records, 2% of the default start grid)
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: BTreeMap<String, Value>,
}

struct Checks(Vec<CheckResult>);

impl Checks {
    fn push(&mut self, name: &str, passed: bool, detail: Value) {
        let detail = match detail {
            Value::Object(m) => m.into_iter().collect(),
            other => BTreeMap::from([("value".to_string(), other)]),
        };
        self.0.push(CheckResult { name: name.into(), passed, detail });
    }
}

fn write_runs(dir: &Path, name: &str, table: &RunTable, outputs: &mut Vec<String>) -> CliResult<()> {
    let mut bytes = Vec::new();
    table.write_csv(&mut bytes)?;
    write_atomic(&dir.join(name), &bytes)?;
    outputs.push(name.into());
    Ok(())
}

fn law_design(full: bool, sigma: f64, sparsities: Vec<f64>, seed: u64) -> SynthDesign {
    SynthDesign {
        truth: Truth::Law(ScalingLawCoeffs::published()),
        grid: SynthGrid {
            budgets: DEFAULT_BUDGETS.to_vec(),
            sparsities,
            sizes_per_cell: if full { 17 } else { 7 },
            size_span: (1e8, 3e10),
            noise_sigma: sigma,
            noise_model: None,
            seed,
            na_rule: NaRule::default(),
            max_records: full.then_some(500),
        },
    }
}

fn law_options(full: bool, seed: u64) -> FitLawOptions {
    FitLawOptions { starts_fraction: if full { 0.02 } else { 0.001 }, seed, ..Default::default() }
}

fn exponent_errors(fit: &ScalingLawCoeffs, truth: &ScalingLawCoeffs) -> [f64; 5] {
    [
        (fit.alpha - truth.alpha).abs(),
        (fit.beta - truth.beta).abs(),
        (fit.gamma - truth.gamma).abs(),
        (fit.lambda - truth.lambda).abs(),
        (fit.delta_exp - truth.delta_exp).abs(),
    ]
}

fn check_law(full: bool, ctx: &Context, dir: &Path, outputs: &mut Vec<String>, checks: &mut Checks) -> CliResult<()> {
    let truth = ScalingLawCoeffs::published();
    let sparsities = vec![0.0, 0.25, 0.5, 0.75, 0.9, 0.95];
    let runs = generate_runs(&law_design(full, 0.0, sparsities.clone(), ctx.seed))?.table;
    write_runs(dir, "runs_law.csv", &runs, outputs)?;
    let fit = fit_law(&runs, LawForm::Moe, &law_options(full, ctx.seed))?;
    let errs = exponent_errors(&fit.coeffs, &truth);
    let max_err = runs
        .iter()
        .map(|r| Ok((fit.coeffs.predict(r.n_total, r.tokens, r.sparsity)? - truth.predict(r.n_total, r.tokens, r.sparsity)?).abs()))
        .collect::<moescale::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let exp_max = errs.iter().copied().fold(0.0, f64::max);
    checks.push(
        "law_round_trip",
        exp_max <= 0.05 && max_err <= 1e-3,
        json!({"records": runs.len(), "max_exponent_error": exp_max, "max_loss_error": max_err, "starts": fit.starts_evaluated}),
    );
    write_json(&dir.join("law_fit.json"), &LawArtifact::new(fit))?;
    outputs.push("law_fit.json".into());

    let mut with_holdout = sparsities;
    with_holdout.push(0.98);
    let noisy = generate_runs(&law_design(full, 0.01, with_holdout, ctx.seed))?.table;
    write_runs(dir, "runs_law_noisy.csv", &noisy, outputs)?;
    let (fit_set, holdout) = split_holdout_by_sparsity(&noisy, 0.98)?;
    let mut fit = fit_law(&fit_set, LawForm::Moe, &law_options(full, ctx.seed))?;
    fit.attach_holdout(&holdout)?;
    let h = fit.holdout_metrics.expect("holdout attached");
    checks.push(
        "law_holdout",
        h.mse <= 5.0 * fit.fit_metrics.mse,
        json!({"fit_mse": fit.fit_metrics.mse, "holdout_mse": h.mse, "ratio": h.mse / fit.fit_metrics.mse}),
    );
    write_json(&dir.join("law_fit_holdout.json"), &LawArtifact::new(fit))?;
    outputs.push("law_fit_holdout.json".into());
    Ok(())
}

/// Degree-(2,2,2) generator surface used by the surface checks.
pub fn reference_surface() -> SurfaceFit {
    let domain = FitDomain { size_min: 1e8, size_max: 3e10, sparsity_min: 0.0, sparsity_max: 0.98 };
    SurfaceFit::from_coefficients(SizeVariable::Total, vec![-1.26, 0.03], vec![-0.45, 0.06], vec![0.012, -0.00005], 16.0, 1e20, domain)
}

pub fn surface_design(sigma: f64, seed: u64) -> SynthDesign {
    SynthDesign {
        truth: Truth::Surface(reference_surface()),
        grid: SynthGrid {
            budgets: vec![1e20],
            sparsities: STANDARD_SPARSITIES.to_vec(),
            sizes_per_cell: 10,
            size_span: (1e8, 3e10),
            noise_sigma: sigma,
            noise_model: None,
            seed,
            na_rule: NaRule::default(),
            max_records: None,
        },
    }
}

/// Off-grid points for scoring a fit to [`surface_design`].
pub fn surface_holdout_design(sigma: f64, seed: u64) -> SynthDesign {
    let mut d = surface_design(sigma, seed);
    d.grid.sparsities = vec![0.1, 0.6, 0.85, 0.97];
    d.grid.sizes_per_cell = 9;
    d.grid.size_span = (1.3e8, 2.5e10);
    d
}

fn coefficient_error(a: &SurfaceFit, b: &SurfaceFit) -> f64 {
    let flat = |f: &SurfaceFit| -> Vec<f64> {
        f.coeffs_size.iter().chain(&f.coeffs_sparsity).chain(&f.coeffs_interaction).copied().chain([f.intercept]).collect()
    };
    flat(a).iter().zip(flat(b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_surface(ctx: &Context, dir: &Path, outputs: &mut Vec<String>, checks: &mut Checks) -> CliResult<()> {
    let truth = reference_surface();
    let d = Degrees::new(2, 2, 2);
    let clean = generate_runs(&surface_design(0.0, ctx.seed))?.table;
    let clean_holdout = generate_runs(&surface_holdout_design(0.0, ctx.seed))?.table;
    write_runs(dir, "runs_surface.csv", &clean, outputs)?;
    let fit = fit_surface(&clean, d, SizeVariable::Total)?;
    let coef_err = coefficient_error(&fit, &truth);
    let clean_mse = holdout_metrics(&fit, &clean_holdout)?.mse;

    let noisy = generate_runs(&surface_design(0.01, ctx.seed))?.table;
    let fresh = generate_runs(&surface_holdout_design(0.01, ctx.seed + 1000))?.table;
    let noisy_fit = fit_surface(&noisy, d, SizeVariable::Total)?;
    let noisy_mse = holdout_metrics(&noisy_fit, &fresh)?.mse;

    let mut hits = 0;
    for trial in 0..20u64 {
        let seed = ctx.seed.wrapping_add(trial);
        let t = generate_runs(&surface_design(0.01, seed))?.table;
        let best = grid_search_degrees(&t, SizeVariable::Total, &CvOptions { seed, ..Default::default() })?;
        hits += usize::from(best.degrees == d);
    }
    checks.push(
        "surface_recovery",
        coef_err <= 1e-6 && clean_mse <= 1e-10 && noisy_mse <= 2e-4 && hits >= 19,
        json!({"coefficient_error": coef_err, "noiseless_holdout_mse": clean_mse, "noisy_holdout_mse": noisy_mse, "degree_hits": hits}),
    );
    write_json(&dir.join("surface_fit.json"), &SurfaceArtifact::from_fit(&noisy_fit, BTreeMap::new()))?;
    outputs.push("surface_fit.json".into());
    Ok(())
}

fn check_flops(checks: &mut Checks) -> CliResult<()> {
    let worked = MoeConfig::new(4, 512, 64, 8, 2, 1, 2048, 50_432)?;
    let b = flops_breakdown(&worked)?;
    let identity = flops_per_token(&worked)? == b.total - b.router;
    let ratio = estimator_ratio(&worked)?;
    let ladder: Vec<f64> = (0..6)
        .map(|k| estimator_ratio(&MoeConfig::new(4, 512 << k, 64, 8, 2, 1, 2048, 50_432)?))
        .collect::<moescale::Result<_>>()?;
    let decreasing = ladder.windows(2).all(|w| w[1] < w[0]);
    checks.push(
        "flops",
        identity && (ratio - 1.1517).abs() <= 1e-4 && decreasing,
        json!({"ratio": ratio, "ladder": ladder, "router_identity": identity}),
    );
    Ok(())
}

fn brute_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let step = (hi - lo) / (n - 1) as f64;
    let mut best = (lo, f64::INFINITY);
    for i in 0..n {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    (best.0, step)
}

fn check_frontier(ctx: &Context, checks: &mut Checks) -> CliResult<()> {
    let mut rng = stream_rng(ctx.seed, 11);
    let domain = FitDomain { size_min: 1e8, size_max: 1e11, sparsity_min: 0.0, sparsity_max: 0.98 };
    let (lo, hi) = (1e7f64, 1e12f64);
    let mut worst_steps: f64 = 0.0;
    for _ in 0..50 {
        let c2 = rng.random_range(0.005..0.05);
        let s2 = rng.random_range(0.01..0.1);
        let i2 = rng.random_range(0.0..1e-4);
        let n0 = rng.random_range(17.0..29.0);
        let sh0 = rng.random_range(-0.5..4.5);
        let i1 = rng.random_range(-0.01..0.01);
        let s = SurfaceFit::from_coefficients(
            SizeVariable::Total,
            vec![-2.0 * c2 * n0, c2],
            vec![-2.0 * s2 * sh0, s2],
            vec![i1, i2],
            3.0,
            1e20,
            domain,
        );
        let sp = rng.random_range(0.0..0.95);
        let p = optimal_size_given_sparsity(&s, sp, Some((lo, hi)))?;
        let sh = -(-sp as f64).ln_1p();
        let (u, step) = brute_argmin(|u| s.eval_transformed(u, sh), lo.ln(), hi.ln(), 10_000);
        worst_steps = worst_steps.max((p.opt_size.ln() - u).abs() / step);

        let n = (rng.random_range(lo.ln()..hi.ln()) as f64).exp();
        let q = optimal_sparsity_given_size(&s, n, None)?;
        let (v, step) = brute_argmin(|v| s.eval_transformed(n.ln(), v), 0.0, -(-0.99f64).ln_1p(), 10_000);
        worst_steps = worst_steps.max((-(-q.opt_sparsity).ln_1p() - v).abs() / step);
    }
    let vertex = SurfaceFit::from_coefficients(SizeVariable::Total, vec![-40.0, 1.0], vec![-0.2, 0.05], vec![], 402.0, 1e20, domain);
    let p = optimal_size_given_sparsity(&vertex, 0.5, Some((lo, hi)))?;
    let q = optimal_sparsity_given_size(&vertex, 1e9, None)?;
    let size_rel = (p.opt_size / 20f64.exp() - 1.0).abs();
    let s_star = 1.0 - (-2.0f64).exp();
    let sparsity_rel = ((q.opt_sparsity - s_star) / s_star).abs();
    checks.push(
        "frontier_oracle",
        worst_steps <= 1.0 && size_rel <= 1e-9 && sparsity_rel <= 1e-9,
        json!({"worst_grid_steps": worst_steps, "vertex_size_rel_error": size_rel, "vertex_sparsity_rel_error": sparsity_rel}),
    );
    Ok(())
}

/// Relative slack for monotonicity comparisons of refined optima.
const TREND_SLACK: f64 = 1e-6;

fn check_trends(dir: &Path, outputs: &mut Vec<String>, checks: &mut Checks) -> CliResult<()> {
    let truth = ScalingLawCoeffs::published();
    let rule = NaRule::default();
    let interval = (1e6, 1e14);
    let sizes: Vec<f64> = (0..13).map(|i| (1e8f64.ln() + (3e10f64 / 1e8).ln() * i as f64 / 12.0).exp()).collect();
    let mut rows = vec!["budget,kind,fixed,size,n_active,sparsity,loss,at_boundary".to_string()];
    let (mut n_ok, mut na_ok, mut s_ok) = (true, true, true);
    for &c in &DEFAULT_BUDGETS {
        let surface = IsoFlopLaw::new(truth, c, rule);
        let mut prev: Option<(f64, f64)> = None;
        for &sp in &STANDARD_SPARSITIES {
            let p = optimal_size_given_sparsity(&surface, sp, Some(interval))?;
            let na = rule.active(p.opt_size, sp)?;
            if let Some((n0, na0)) = prev {
                n_ok &= p.opt_size >= n0 * (1.0 - TREND_SLACK);
                na_ok &= na <= na0 * (1.0 + TREND_SLACK);
            }
            prev = Some((p.opt_size, na));
            rows.push(format!(
                "{},fix_sparsity,{},{},{},{},{},{}",
                format_float(c),
                format_float(sp),
                format_float(p.opt_size),
                format_float(na),
                format_float(sp),
                format_float(p.opt_loss),
                p.at_boundary
            ));
        }
        let mut prev_s: Option<f64> = None;
        for &n in &sizes {
            let q = optimal_sparsity_given_size(&surface, n, None)?;
            if let Some(s0) = prev_s {
                s_ok &= q.opt_sparsity >= s0 - TREND_SLACK;
            }
            prev_s = Some(q.opt_sparsity);
            rows.push(format!(
                "{},fix_size,{},{},{},{},{},{}",
                format_float(c),
                format_float(n),
                format_float(n),
                format_float(rule.active(n, q.opt_sparsity)?),
                format_float(q.opt_sparsity),
                format_float(q.opt_loss),
                q.at_boundary
            ));
        }
    }
    let mut text = rows.join("\n");
    text.push('\n');
    write_atomic(&dir.join("frontier_trends.csv"), text.as_bytes())?;
    outputs.push("frontier_trends.csv".into());
    checks.push(
        "trends",
        n_ok && na_ok && s_ok,
        json!({"n_opt_nondecreasing": n_ok, "n_active_opt_nonincreasing": na_ok, "s_opt_nondecreasing": s_ok}),
    );
    Ok(())
}

fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
    g.iter_mut().for_each(|v| *v = 0.0);
    let mut f = 0.0;
    for i in 0..x.len() - 1 {
        let a = x[i + 1] - x[i] * x[i];
        let b = 1.0 - x[i];
        f += 100.0 * a * a + b * b;
        g[i] += -400.0 * x[i] * a - 2.0 * b;
        g[i + 1] += 200.0 * a;
    }
    f
}

fn check_optimizer(ctx: &Context, checks: &mut Checks) -> CliResult<()> {
    let opts = LbfgsOptions { max_iter: 1000, grad_tol: 1e-7, ..Default::default() };
    let mut norms = Vec::new();
    for dim in [2usize, 10] {
        let x0: Vec<f64> = (0..dim).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect();
        let (_, report) = lbfgs_minimize(rosenbrock, &x0, &opts).map_err(moescale::Error::from)?;
        norms.push(report.final_gradient_norm);
    }

    let runs = generate_runs(&law_design(false, 0.0, vec![0.0, 0.5, 0.9], ctx.seed))?.table;
    let data = LawData::new(&runs)?;
    let mut rng = stream_rng(ctx.seed, 12);
    let mut worst: f64 = 0.0;
    for point in 0..100 {
        let x: Vec<f64> = (0..10)
            .map(|j| match j {
                0..=4 => rng.random_range(-1.0..6.0),
                5..=7 => rng.random_range(0.0..1.0),
                _ => rng.random_range(-1.0..1.0),
            })
            .collect();
        let obj = ObjectiveOptions { huber_delta: if point % 2 == 0 { 1e-3 } else { 50.0 }, ..Default::default() };
        let mut g = vec![0.0; 10];
        law_objective(LawForm::Moe, &x, &mut g, &data, &obj);
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let mut scratch = vec![0.0; 10];
        for j in 0..10 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += 1e-6;
            xm[j] -= 1e-6;
            let fd = (law_objective(LawForm::Moe, &xp, &mut scratch, &data, &obj)
                - law_objective(LawForm::Moe, &xm, &mut scratch, &data, &obj))
                / 2e-6;
            worst = worst.max((fd - g[j]).abs() / scale);
        }
    }
    checks.push(
        "optimizer",
        norms.iter().all(|n| *n <= 1e-6) && worst <= 1e-5,
        json!({"rosenbrock_gradient_norms": norms, "law_gradient_rel_error": worst}),
    );
    Ok(())
}

fn check_exponents(checks: &mut Checks) -> CliResult<()> {
    let dense = ScalingLawCoeffs::published().dense_part();
    let budgets: Vec<f64> = (0..7).map(|k| 1e18 * 10f64.powi(k)).collect();
    let e = compute_optimal_exponent(&dense, 0.0, &NaRule::Identity, &budgets, None)?;
    let closed = e.closed_form.unwrap_or(f64::NAN);
    let pts: Vec<(f64, f64)> = (1..6).map(|k| (10f64.powi(k), 3.0 * 10f64.powi(k).powf(0.7))).collect();
    let p = power_law_fit(&pts)?;
    checks.push(
        "exponents",
        (closed - e.numeric).abs() <= 0.01 && (p.exponent - 0.7).abs() <= 1e-12 && (p.prefactor - 3.0).abs() <= 1e-10,
        json!({"closed_form": closed, "numeric": e.numeric, "power_law_exponent": p.exponent}),
    );
    Ok(())
}

pub(crate) fn validate(a: &ValidateArgs, ctx: &Context) -> CliResult<ReportBundle> {
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(moescale::Error::from)?;
    let mut outputs = Vec::new();
    let mut checks = Checks(Vec::new());
    check_flops(&mut checks)?;
    check_optimizer(ctx, &mut checks)?;
    check_exponents(&mut checks)?;
    check_frontier(ctx, &mut checks)?;
    check_trends(dir, &mut outputs, &mut checks)?;
    check_surface(ctx, dir, &mut outputs, &mut checks)?;
    check_law(a.full, ctx, dir, &mut outputs, &mut checks)?;

    write_json(&dir.join("checks.json"), &checks.0)?;
    outputs.push("checks.json".into());
    for c in &checks.0 {
        println!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }

    let mut bundle = ReportBundle::new(if a.full { "validate --full" } else { "validate" });
    for c in &checks.0 {
        bundle.metric(format!("{}.passed", c.name), c.passed);
        for (k, v) in &c.detail {
            bundle.metric(format!("{}.{k}", c.name), v.clone());
        }
    }
    bundle.metric("seed", ctx.seed);
    bundle.outputs = outputs;
    write_json(&dir.join("bundle.json"), &bundle)?;
    bundle.outputs.push("bundle.json".into());

    let failed: Vec<&str> = checks.0.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(CliError::Validation(format!("{} of {} checks failed: {}", failed.len(), checks.0.len(), failed.join(", "))));
    }
    Ok(bundle)
}
