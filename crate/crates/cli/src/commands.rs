use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::{json, Value};

use moescale::artifact::{
    format_float, format_human, sha256_hex, to_json_bytes, write_atomic, write_json, FitArtifact, LawArtifact, ReportBundle, SurfaceArtifact,
    SurfaceSetArtifact, SURFACE_SET_KIND,
};
use moescale::flops::{estimator_ratio, flops_breakdown, flops_per_token, training_flops, Estimator};
use moescale::frontier::{
    optimal_size_given_sparsity, optimal_sparsity_given_size, optimal_sparsity_map, power_law_fit, FrontierPoint, LossSurface,
};
use moescale::law::{
    compute_optimal_exponent, fit_law as fit_law_core, FitLawOptions, InitGrid, IsoFlopLaw, LawForm, ObjectiveOptions,
    ResidualSpace, ScalingLawCoeffs, EXPONENT_SIZE_INTERVAL,
};
use moescale::model::{count_params, MoeConfig, NaRule};
use moescale::runs::{group_by_budget, load_runs, split_holdout_by_sparsity, DEFAULT_BUDGETS};
use moescale::surface::{
    bootstrap, fit_surface as fit_surface_core, grid_search_degrees, grid_table, holdout_metrics, residual_sum_of_squares, CvOptions,
    Degrees, SizeVariable, SurfaceFit,
};
use moescale::synth::{generate_runs, SynthDesign, SynthGrid, Truth, STANDARD_SPARSITIES};

use crate::{CliError, CliResult, Context};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    moescale::Error::Format { path: path.to_path_buf(), message: message.into() }.into()
}

fn read_json(path: &Path) -> CliResult<Value> {
    let bytes = std::fs::read(path).map_err(|e| format_err(path, e.to_string()))?;
    serde_json::from_slice(&bytes).map_err(|e| format_err(path, e.to_string()))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("artifact types serialize")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_csv_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn opt_float(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn is_csv(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

// ---------------------------------------------------------------- flops

#[derive(Args, Debug)]
pub struct FlopsArgs {
    /// Architecture config (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Print the per-module FLOP breakdown
    #[arg(long)]
    pub breakdown: bool,
    /// Use the 6 * N_a * D proxy for training FLOPs
    #[arg(long)]
    pub proxy: bool,
    /// Training tokens; adds total training FLOPs
    #[arg(long)]
    pub tokens: Option<f64>,
    /// Count the input embedding in N and N_a
    #[arg(long)]
    pub include_input_embedding: bool,
    /// Also write the numbers as JSON
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub(crate) fn flops(a: &FlopsArgs) -> CliResult<ReportBundle> {
    let config = MoeConfig::load(&a.config)?;
    let params = count_params(&config, a.include_input_embedding)?;
    let breakdown = flops_breakdown(&config)?;
    let per_token = flops_per_token(&config)?;
    let ratio = estimator_ratio(&config)?;
    let estimator = if a.proxy { Estimator::Proxy } else { Estimator::Exact };
    let training = a.tokens.map(|d| training_flops(&config, d, estimator)).transpose()?;

    let mut lines: Vec<(&str, String)> = vec![
        ("n_total", params.n_total.to_string()),
        ("n_active", params.n_active.to_string()),
        ("sparsity", format_human(config.sparsity())),
        ("flops_per_token", format_human(per_token)),
        ("estimator_ratio", format_human(ratio)),
    ];
    if a.breakdown {
        lines.extend([
            ("qkv_proj", format_human(breakdown.qkv_proj)),
            ("attn_logits", format_human(breakdown.attn_logits)),
            ("attn_values", format_human(breakdown.attn_values)),
            ("router", format_human(breakdown.router)),
            ("experts", format_human(breakdown.experts)),
            ("unembedding", format_human(breakdown.unembedding)),
            ("total_with_router", format_human(breakdown.total)),
        ]);
    }
    if let (Some(d), Some(t)) = (a.tokens, training) {
        lines.push(("tokens", format_human(d)));
        lines.push((if a.proxy { "training_flops_6nad" } else { "training_flops" }, format_human(t)));
    }
    for (k, v) in &lines {
        println!("{k:<20} {v}");
    }

    let doc = json!({
        "config": config,
        "include_input_embedding": a.include_input_embedding,
        "params": params,
        "flops_breakdown": breakdown,
        "flops_per_token": per_token,
        "estimator_ratio": ratio,
        "tokens": a.tokens,
        "training_flops": training,
        "estimator": estimator,
    });
    let mut bundle = ReportBundle::new("flops");
    bundle.add_input(&a.config)?;
    if let Some(path) = &a.json {
        write_json(path, &doc)?;
        bundle.outputs.push(path.display().to_string());
    }
    bundle.metric("flops_per_token", per_token);
    bundle.metric("estimator_ratio", ratio);
    bundle.metric("n_total", params.n_total);
    bundle.metric("n_active", params.n_active);
    Ok(bundle)
}

// ---------------------------------------------------------- fit-surface

#[derive(Args, Debug)]
pub struct FitSurfaceArgs {
    /// Runs table (CSV, or JSON by extension)
    #[arg(long)]
    pub runs: PathBuf,
    /// Budget(s) to fit; default: every standard budget that has runs
    #[arg(long, value_delimiter = ',')]
    pub budget: Vec<f64>,
    /// Relative tolerance when assigning runs to budgets
    #[arg(long, default_value_t = 0.25)]
    pub rel_tol: f64,
    /// Polynomial degrees `size,sparsity,interaction` [default: 2,2,2]
    #[arg(long, conflicts_with = "grid_search")]
    pub degrees: Option<Degrees>,
    /// Choose degrees by cross validation
    #[arg(long)]
    pub grid_search: bool,
    /// Largest degree tried by --grid-search
    #[arg(long, default_value_t = moescale::surface::MAX_DEGREE)]
    pub max_degree: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Size variable: total or active
    #[arg(long = "size-var", default_value = "total")]
    pub size_var: SizeVariable,
    /// Number of subsample refits
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Share of runs drawn for each subsample refit
    #[arg(long, default_value_t = 0.8)]
    pub bootstrap_fraction: f64,
    /// Exclude runs at this sparsity from fitting and score them instead
    #[arg(long)]
    pub holdout_sparsity: Option<f64>,
    /// Write gridded predictions (CSV) for plotting
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    pub grid_points: usize,
    /// Output artifact (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

fn coefficient_std(fits: &[SurfaceFit]) -> Value {
    let std_of = |get: &dyn Fn(&SurfaceFit) -> &Vec<f64>| -> Vec<f64> {
        let width = get(&fits[0]).len();
        (0..width)
            .map(|j| {
                let xs: Vec<f64> = fits.iter().map(|f| get(f)[j]).collect();
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
            })
            .collect()
    };
    let intercepts: Vec<f64> = fits.iter().map(|f| f.intercept).collect();
    let m = intercepts.iter().sum::<f64>() / intercepts.len() as f64;
    json!({
        "size": std_of(&|f| &f.coeffs_size),
        "sparsity": std_of(&|f| &f.coeffs_sparsity),
        "interaction": std_of(&|f| &f.coeffs_interaction),
        "intercept": (intercepts.iter().map(|x| (x - m).powi(2)).sum::<f64>() / intercepts.len() as f64).sqrt(),
    })
}

pub(crate) fn fit_surface(a: &FitSurfaceArgs, ctx: &Context) -> CliResult<ReportBundle> {
    let table = load_runs(&a.runs)?;
    let (fit_table, holdout) = match a.holdout_sparsity {
        Some(s) => {
            let (f, h) = split_holdout_by_sparsity(&table, s)?;
            (f, Some(h))
        }
        None => (table, None),
    };
    let centers: Vec<f64> = if a.budget.is_empty() { DEFAULT_BUDGETS.to_vec() } else { a.budget.clone() };
    let groups = group_by_budget(&fit_table, &centers, a.rel_tol)?;
    if groups.groups.is_empty() {
        return Err(moescale::Error::InsufficientData(format!("no runs within {} of budgets {:?}", a.rel_tol, centers)).into());
    }
    if !groups.unassigned.is_empty() {
        log::warn!("{} runs matched no budget and were ignored", groups.unassigned.len());
    }
    let holdout_groups = holdout.as_ref().map(|h| group_by_budget(h, &centers, a.rel_tol)).transpose()?;

    let mut artifacts = Vec::new();
    let mut grid_rows = Vec::new();
    for (budget, runs) in &groups.groups {
        let mut metrics: BTreeMap<String, Value> = BTreeMap::new();
        let degrees = if a.grid_search {
            let opts = CvOptions { folds: a.folds, seed: ctx.seed, max_degree: a.max_degree };
            let best = grid_search_degrees(runs, a.size_var, &opts)?;
            metrics.insert("cv_error".into(), json!(best.cv_error));
            metrics.insert("cv_se".into(), json!(best.cv_se));
            best.degrees
        } else {
            a.degrees.unwrap_or(Degrees::new(2, 2, 2))
        };
        let fit = fit_surface_core(runs, degrees, a.size_var)?;
        let rss = residual_sum_of_squares(&fit, runs)?;
        metrics.insert("n_fit".into(), json!(runs.len()));
        metrics.insert("rss".into(), json!(rss));
        metrics.insert("mse".into(), json!(rss / runs.len() as f64));
        if let Some(hg) = &holdout_groups {
            if let Some((_, h)) = hg.groups.iter().find(|(c, _)| c == budget) {
                let m = holdout_metrics(&fit, h)?;
                metrics.insert("holdout_mse".into(), json!(m.mse));
                metrics.insert("holdout_pearson_r".into(), json!(m.pearson_r));
                metrics.insert("n_holdout".into(), json!(m.n));
            }
        }
        if let Some(k) = a.bootstrap {
            let ens = bootstrap(runs, degrees, a.size_var, k, a.bootstrap_fraction, ctx.seed)?;
            metrics.insert("bootstrap_k".into(), json!(k));
            metrics.insert("bootstrap_fraction".into(), json!(a.bootstrap_fraction));
            metrics.insert("bootstrap_coefficient_std".into(), coefficient_std(&ens.fits));
        }
        if a.grid_out.is_some() {
            for row in grid_table(&fit, a.grid_points, a.grid_points)? {
                grid_rows.push(vec![format_float(*budget), format_float(row.size), format_float(row.sparsity), format_float(row.loss)]);
            }
        }
        artifacts.push(SurfaceArtifact::from_fit(&fit, metrics));
    }

    let mut bundle = ReportBundle::new("fit-surface");
    bundle.add_input(&a.runs)?;
    for s in &artifacts {
        bundle.metric(format!("mse@{}", format_float(s.budget)), s.metrics["mse"].clone());
        bundle.metric(format!("degrees@{}", format_float(s.budget)), s.degrees.to_string());
    }
    if artifacts.len() == 1 {
        write_json(&a.out, &artifacts[0])?;
    } else {
        write_json(&a.out, &SurfaceSetArtifact { kind: SURFACE_SET_KIND.into(), surfaces: artifacts })?;
    }
    bundle.outputs.push(a.out.display().to_string());
    if let Some(path) = &a.grid_out {
        write_csv_rows(path, &["budget", "size", "sparsity", "loss"], &grid_rows)?;
        bundle.outputs.push(path.display().to_string());
    }
    Ok(bundle)
}

// -------------------------------------------------------------- fit-law

#[derive(Args, Debug)]
pub struct FitLawArgs {
    /// Runs table (CSV, or JSON by extension)
    #[arg(long)]
    pub runs: PathBuf,
    /// Law form: dense or moe
    #[arg(long)]
    pub form: LawForm,
    /// Exclude runs at this sparsity from fitting and score them instead
    #[arg(long)]
    pub holdout_sparsity: Option<f64>,
    /// Initialization grid: `default` or a JSON file of per-parameter value lists
    #[arg(long, default_value = "default")]
    pub grid: String,
    /// Huber threshold on residuals
    #[arg(long, default_value_t = moescale::law::DEFAULT_HUBER_DELTA)]
    pub huber_delta: f64,
    /// Residuals in log or raw loss space
    #[arg(long, default_value = "log", value_parser = ["log", "raw"])]
    pub residual_space: String,
    /// Seeded fraction of grid starts to run
    #[arg(long, default_value_t = 1.0)]
    pub starts_fraction: f64,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output artifact (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

fn load_grid(arg: &str, form: LawForm) -> CliResult<InitGrid> {
    if arg == "default" {
        return Ok(InitGrid::default_for(form));
    }
    let path = Path::new(arg);
    let value = read_json(path)?;
    let grid = match value.get("values") {
        Some(_) => serde_json::from_value::<InitGrid>(value),
        None => serde_json::from_value::<Vec<Vec<f64>>>(value).map(|values| InitGrid { form, values }),
    }
    .map_err(|e| format_err(path, e.to_string()))?;
    grid.validate()?;
    Ok(grid)
}

pub(crate) fn fit_law(a: &FitLawArgs, ctx: &Context) -> CliResult<ReportBundle> {
    let table = load_runs(&a.runs)?;
    let (fit_table, holdout) = match a.holdout_sparsity {
        Some(s) => {
            let (f, h) = split_holdout_by_sparsity(&table, s)?;
            (f, Some(h))
        }
        None => (table, None),
    };
    if a.form == LawForm::Dense && fit_table.iter().any(|r| r.sparsity != 0.0) {
        log::warn!("dense law fitted to runs with nonzero sparsity");
    }
    let mut opts = FitLawOptions {
        objective: ObjectiveOptions {
            huber_delta: a.huber_delta,
            residual_space: if a.residual_space == "raw" { ResidualSpace::Raw } else { ResidualSpace::Log },
        },
        grid: Some(load_grid(&a.grid, a.form)?),
        starts_fraction: a.starts_fraction,
        seed: ctx.seed,
        ..Default::default()
    };
    if let Some(m) = a.max_iter {
        opts.lbfgs.max_iter = m;
    }
    let mut fit = fit_law_core(&fit_table, a.form, &opts)?;
    if let Some(h) = holdout.filter(|h| !h.is_empty()) {
        fit.attach_holdout(&h)?;
    }

    let mut bundle = ReportBundle::new("fit-law");
    bundle.add_input(&a.runs)?;
    if a.grid != "default" {
        bundle.add_input(Path::new(&a.grid))?;
    }
    bundle.metric("objective_value", fit.objective_value);
    bundle.metric("fit_mse", fit.fit_metrics.mse);
    bundle.metric("fit_huber", fit.fit_metrics.huber);
    if let Some(h) = fit.holdout_metrics {
        bundle.metric("holdout_mse", h.mse);
        bundle.metric("holdout_huber", h.huber);
    }
    bundle.metric("starts_evaluated", fit.starts_evaluated);
    write_json(&a.out, &LawArtifact::new(fit))?;
    bundle.outputs.push(a.out.display().to_string());
    Ok(bundle)
}

// ------------------------------------------------------------- frontier

#[derive(Args, Debug)]
pub struct FrontierArgs {
    /// Surface, surface-set or scaling-law artifact
    #[arg(long)]
    pub fit: PathBuf,
    /// Optimal size at these sparsities
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["fix_size", "map"])]
    pub fix_sparsity: Vec<f64>,
    /// Optimal sparsity at these sizes (total parameters)
    #[arg(long, value_delimiter = ',', conflicts_with = "map")]
    pub fix_size: Vec<f64>,
    /// Optimal sparsity over a grid of sizes and budgets
    #[arg(long)]
    pub map: bool,
    /// Sizes for --map [default: 13 log-spaced sizes over 1e8..3e10]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<f64>,
    /// Budgets when --fit is a scaling law
    #[arg(long, value_delimiter = ',')]
    pub budgets: Vec<f64>,
    /// Fraction of a law surface's parameters in experts (N_a rule)
    #[arg(long, default_value_t = 1.0)]
    pub expert_fraction: f64,
    /// Size search interval lower end
    #[arg(long)]
    pub size_min: Option<f64>,
    /// Size search interval upper end
    #[arg(long)]
    pub size_max: Option<f64>,
    /// Output path; `.csv` writes the rows only, anything else JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrontierRow {
    pub mode: &'static str,
    pub budget: f64,
    pub fixed: f64,
    pub size: Option<f64>,
    pub n_active: Option<f64>,
    pub sparsity: Option<f64>,
    pub loss: Option<f64>,
    pub at_boundary: bool,
    pub extrapolated: bool,
    pub note: Option<String>,
}

impl FrontierRow {
    fn from_point(mode: &'static str, p: &FrontierPoint, fixed: f64, n_active: Option<f64>) -> Self {
        FrontierRow {
            mode,
            budget: p.budget,
            fixed,
            size: Some(p.opt_size),
            n_active,
            sparsity: Some(p.opt_sparsity),
            loss: Some(p.opt_loss),
            at_boundary: p.at_boundary,
            extrapolated: p.extrapolated,
            note: None,
        }
    }

    fn csv(&self) -> Vec<String> {
        vec![
            self.mode.to_string(),
            format_float(self.budget),
            format_float(self.fixed),
            opt_float(self.size),
            opt_float(self.n_active),
            opt_float(self.sparsity),
            opt_float(self.loss),
            self.at_boundary.to_string(),
            self.extrapolated.to_string(),
            self.note.clone().unwrap_or_default(),
        ]
    }
}

const FRONTIER_HEADER: [&str; 10] =
    ["mode", "budget", "fixed", "size", "n_active", "sparsity", "loss", "at_boundary", "extrapolated", "note"];

fn default_map_sizes() -> Vec<f64> {
    let (lo, hi) = (1e8f64.ln(), 3e10f64.ln());
    (0..13).map(|i| (lo + (hi - lo) * i as f64 / 12.0).exp()).collect()
}

fn frontier_rows<S: LossSurface>(
    surfaces: &[S],
    a: &FrontierArgs,
    sparsities: &[f64],
    interval: Option<(f64, f64)>,
    active: &dyn Fn(f64, f64) -> Option<f64>,
) -> CliResult<Vec<FrontierRow>> {
    let mut rows = Vec::new();
    if a.map {
        let sizes = if a.sizes.is_empty() { default_map_sizes() } else { a.sizes.clone() };
        for cell in optimal_sparsity_map(surfaces, &sizes, None)? {
            rows.push(FrontierRow {
                mode: "map",
                budget: cell.budget,
                fixed: cell.size,
                size: Some(cell.size),
                n_active: cell.opt_sparsity.and_then(|s| active(cell.size, s)),
                sparsity: cell.opt_sparsity,
                loss: cell.opt_loss,
                at_boundary: cell.at_boundary,
                extrapolated: false,
                note: cell.error,
            });
        }
    } else if !a.fix_size.is_empty() {
        for s in surfaces {
            for &n in &a.fix_size {
                let p = optimal_sparsity_given_size(s, n, None)?;
                rows.push(FrontierRow::from_point("fix_size", &p, n, active(n, p.opt_sparsity)));
            }
        }
    } else {
        for s in surfaces {
            for &sp in sparsities {
                let p = optimal_size_given_sparsity(s, sp, interval)?;
                rows.push(FrontierRow::from_point("fix_sparsity", &p, sp, active(p.opt_size, sp)));
            }
        }
    }
    Ok(rows)
}

pub(crate) fn frontier(a: &FrontierArgs) -> CliResult<ReportBundle> {
    let artifact = FitArtifact::load(&a.fit)?;
    let interval = match (a.size_min, a.size_max) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        _ => return Err(usage("--size-min and --size-max must be given together")),
    };
    let mut exponents = Vec::new();
    let rows = match &artifact {
        FitArtifact::Law(law) => {
            let coeffs = law.fit.coeffs;
            let rule = NaRule::Structural { expert_fraction: a.expert_fraction };
            rule.validate()?;
            let budgets = if a.budgets.is_empty() { DEFAULT_BUDGETS.to_vec() } else { a.budgets.clone() };
            let surfaces: Vec<IsoFlopLaw> = budgets.iter().map(|&c| IsoFlopLaw::new(coeffs, c, rule)).collect();
            let sparsities = if a.fix_sparsity.is_empty() { STANDARD_SPARSITIES.to_vec() } else { a.fix_sparsity.clone() };
            let interval = interval.unwrap_or(EXPONENT_SIZE_INTERVAL);
            if !a.map && a.fix_size.is_empty() && budgets.len() >= 2 {
                for &s in &sparsities {
                    let e = compute_optimal_exponent(&coeffs, s, &rule, &budgets, Some(interval))?;
                    exponents.push(json!({
                        "sparsity": s,
                        "exponent": e.numeric,
                        "prefactor": e.prefactor,
                        "closed_form": e.closed_form,
                        "any_boundary": e.any_boundary,
                    }));
                }
            }
            frontier_rows(&surfaces, a, &sparsities, Some(interval), &|n, s| rule.active(n, s).ok())?
        }
        _ => {
            let surfaces = artifact.surfaces()?;
            let sparsities = if a.fix_sparsity.is_empty() {
                let max = surfaces.iter().map(|s| s.fit_domain.sparsity_max).fold(0.0, f64::max);
                STANDARD_SPARSITIES.iter().copied().filter(|s| *s <= max).collect()
            } else {
                a.fix_sparsity.clone()
            };
            let rows = frontier_rows(&surfaces, a, &sparsities, interval, &|_, _| None)?;
            if !a.map && a.fix_size.is_empty() && surfaces.len() >= 2 {
                for &s in &sparsities {
                    let pts: Vec<(f64, f64)> = rows
                        .iter()
                        .filter(|r| r.fixed == s && !r.at_boundary)
                        .filter_map(|r| r.size.map(|n| (r.budget, n)))
                        .collect();
                    let entry = match power_law_fit(&pts) {
                        Ok(p) => json!({"sparsity": s, "exponent": p.exponent, "prefactor": p.prefactor, "n_budgets": pts.len()}),
                        Err(e) => json!({"sparsity": s, "exponent": null, "reason": e.to_string(), "n_budgets": pts.len()}),
                    };
                    exponents.push(entry);
                }
            }
            rows
        }
    };

    if is_csv(&a.out) {
        write_csv_rows(&a.out, &FRONTIER_HEADER, &rows.iter().map(FrontierRow::csv).collect::<Vec<_>>())?;
    } else {
        write_json(
            &a.out,
            &json!({
                "kind": "frontier",
                "fit": a.fit.display().to_string(),
                "fit_sha256": sha256_hex(&std::fs::read(&a.fit).map_err(moescale::Error::from)?),
                "rows": rows,
                "exponents": exponents,
            }),
        )?;
    }
    let mut bundle = ReportBundle::new("frontier");
    bundle.add_input(&a.fit)?;
    bundle.outputs.push(a.out.display().to_string());
    bundle.metric("rows", rows.len());
    bundle.metric("boundary_rows", rows.iter().filter(|r| r.at_boundary).count());
    Ok(bundle)
}

// ---------------------------------------------------------------- synth

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Ground truth: `published`, a scaling-law or surface artifact, or bare law coefficients (JSON)
    #[arg(long)]
    pub truth: String,
    /// Design (JSON): budgets, sparsities, sizes_per_cell, size_span, noise_sigma, ...
    #[arg(long)]
    pub design: PathBuf,
    /// Output runs table (CSV)
    #[arg(long)]
    pub out: PathBuf,
}

fn load_truth(arg: &str) -> CliResult<Truth> {
    if arg == "published" {
        return Ok(Truth::Law(ScalingLawCoeffs::published()));
    }
    let path = Path::new(arg);
    let value = read_json(path)?;
    if value.get("kind").is_some() {
        let bytes = to_json_bytes(&value)?;
        return match FitArtifact::from_json_bytes(path, &bytes)? {
            FitArtifact::Law(l) => Ok(Truth::Law(l.fit.coeffs)),
            FitArtifact::Surface(s) => Ok(Truth::Surface(s.to_fit()?)),
            FitArtifact::SurfaceSet(_) => Err(format_err(path, "a surface set cannot be a single ground truth")),
        };
    }
    serde_json::from_value::<ScalingLawCoeffs>(value).map(Truth::Law).map_err(|e| format_err(path, e.to_string()))
}

pub(crate) fn synth(a: &SynthArgs, ctx: &Context) -> CliResult<ReportBundle> {
    let truth = load_truth(&a.truth)?;
    let mut grid: SynthGrid =
        serde_json::from_value(read_json(&a.design)?).map_err(|e| format_err(&a.design, e.to_string()))?;
    if ctx.seed_given {
        grid.seed = ctx.seed;
    }
    let out = generate_runs(&SynthDesign { truth, grid })?;
    for s in &out.skipped {
        log::warn!("skipped C={} S={} N={}: {}", s.budget, s.sparsity, s.n_total, s.reason);
    }
    let mut bytes = Vec::new();
    out.table.write_csv(&mut bytes)?;
    write_atomic(&a.out, &bytes)?;

    let mut bundle = ReportBundle::new("synth");
    if a.truth != "published" {
        bundle.add_input(Path::new(&a.truth))?;
    }
    bundle.add_input(&a.design)?;
    bundle.outputs.push(a.out.display().to_string());
    bundle.metric("records", out.table.len());
    bundle.metric("skipped", out.skipped.len());
    Ok(bundle)
}

// --------------------------------------------------------------- report

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Fit artifact or report bundle (repeatable)
    #[arg(long = "fit", required = true)]
    pub fits: Vec<PathBuf>,
    /// Write the merged table (`.csv`, otherwise JSON)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn surface_metrics(s: &SurfaceArtifact, prefix: &str, out: &mut BTreeMap<String, Value>) {
    out.insert(format!("{prefix}budget"), json!(s.budget));
    out.insert(format!("{prefix}degrees"), json!(s.degrees.to_string()));
    flatten(prefix.trim_end_matches('.'), &to_value(&s.metrics), out);
}

fn metrics_of(path: &Path) -> CliResult<BTreeMap<String, Value>> {
    let value = read_json(path)?;
    let mut out = BTreeMap::new();
    if value.get("command").is_some() && value.get("metrics").is_some() {
        flatten("", &value["metrics"], &mut out);
        return Ok(out);
    }
    let bytes = to_json_bytes(&value)?;
    match FitArtifact::from_json_bytes(path, &bytes)? {
        FitArtifact::Surface(s) => surface_metrics(&s, "", &mut out),
        FitArtifact::SurfaceSet(set) => {
            for s in &set.surfaces {
                surface_metrics(s, &format!("surface@{}.", format_float(s.budget)), &mut out);
            }
        }
        FitArtifact::Law(l) => {
            let f = &l.fit;
            out.insert("form".into(), to_value(&f.form));
            out.insert("objective_value".into(), json!(f.objective_value));
            out.insert("fit_mse".into(), json!(f.fit_metrics.mse));
            out.insert("fit_huber".into(), json!(f.fit_metrics.huber));
            if let Some(h) = f.holdout_metrics {
                out.insert("holdout_mse".into(), json!(h.mse));
                out.insert("holdout_huber".into(), json!(h.huber));
            }
            out.insert("starts_evaluated".into(), json!(f.starts_evaluated));
            out.insert("starts_failed".into(), json!(f.starts_failed));
            flatten("coeffs", &to_value(&f.coeffs), &mut out);
            out.remove("coeffs.form");
        }
    }
    Ok(out)
}

fn value_text(v: &Value) -> String {
    match v {
        Value::Number(n) => n.as_f64().map(format_float).unwrap_or_else(|| n.to_string()),
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

pub(crate) fn report(a: &ReportArgs) -> CliResult<ReportBundle> {
    let mut rows: Vec<(String, String, Value)> = Vec::new();
    let mut bundle = ReportBundle::new("report");
    for path in &a.fits {
        let source = path.display().to_string();
        for (k, v) in metrics_of(path)? {
            rows.push((source.clone(), k, v));
        }
        bundle.add_input(path)?;
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
    let key_width = rows.iter().map(|r| r.1.len()).max().unwrap_or(6).max(6);
    println!("{:<width$}  {:<key_width$}  value", "source", "metric");
    for (s, k, v) in &rows {
        let text = match v {
            Value::Number(n) => n.as_f64().map(format_human).unwrap_or_else(|| n.to_string()),
            other => value_text(other),
        };
        println!("{s:<width$}  {k:<key_width$}  {text}");
    }
    if let Some(out) = &a.out {
        if is_csv(out) {
            let table: Vec<Vec<String>> = rows.iter().map(|(s, k, v)| vec![s.clone(), k.clone(), value_text(v)]).collect();
            write_csv_rows(out, &["source", "metric", "value"], &table)?;
        } else {
            let doc: Vec<Value> = rows.iter().map(|(s, k, v)| json!({"source": s, "metric": k, "value": v})).collect();
            write_json(out, &doc)?;
        }
        bundle.outputs.push(out.display().to_string());
    }
    bundle.metric("rows", rows.len());
    Ok(bundle)
}
