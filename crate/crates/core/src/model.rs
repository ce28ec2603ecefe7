//! MoE architecture descriptions, sparsity, and parameter counting.
//!
//! Expert counts are always *granular* counts: a model with expansion factor
//! `E` and granularity `G` has `e_total = E * G` experts, each `1/G` the size
//! of the dense GLU block. Counts omit biases, norms and positional tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of a decoder-only MoE transformer where every FFN is an MoE layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MoeConfig {
    pub n_layers: u64,
    pub d_model: u64,
    pub n_heads: u64,
    pub d_head: u64,
    pub e_total: u64,
    pub e_active: u64,
    pub granularity: u64,
    pub n_ctx: u64,
    pub n_vocab: u64,
    pub d_ffn: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    n_layers: u64,
    d_model: u64,
    n_heads: u64,
    d_head: u64,
    e_total: u64,
    e_active: u64,
    #[serde(default = "one")]
    granularity: u64,
    n_ctx: u64,
    n_vocab: u64,
    d_ffn: Option<u64>,
}

fn one() -> u64 {
    1
}

impl<'de> Deserialize<'de> for MoeConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawConfig::deserialize(deserializer)?;
        Ok(MoeConfig {
            n_layers: raw.n_layers,
            d_model: raw.d_model,
            n_heads: raw.n_heads,
            d_head: raw.d_head,
            e_total: raw.e_total,
            e_active: raw.e_active,
            granularity: raw.granularity,
            n_ctx: raw.n_ctx,
            n_vocab: raw.n_vocab,
            d_ffn: raw.d_ffn.unwrap_or(4 * raw.d_model),
        })
    }
}

impl MoeConfig {
    /// Builds a config with `d_ffn = 4 * d_model` and `n_heads = d_model / d_head`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_layers: u64,
        d_model: u64,
        d_head: u64,
        e_total: u64,
        e_active: u64,
        granularity: u64,
        n_ctx: u64,
        n_vocab: u64,
    ) -> Result<Self> {
        if d_head == 0 {
            return Err(Error::InvalidConfig("d_head must be >= 1".into()));
        }
        let config = MoeConfig {
            n_layers,
            d_model,
            n_heads: d_model / d_head,
            d_head,
            e_total,
            e_active,
            granularity,
            n_ctx,
            n_vocab,
            d_ffn: 4 * d_model,
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks the structural invariants.
    ///
    /// `n_ctx` and `n_vocab` may be zero so that the attention and unembedding
    /// shares can be switched off in analytic checks.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_head", self.d_head),
            ("e_total", self.e_total),
            ("granularity", self.granularity),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        sparsity_of(self.e_total, self.e_active)?;
        if self.n_heads.checked_mul(self.d_head) != Some(self.d_model) {
            return fail(format!(
                "n_heads * d_head = {} * {} != d_model = {}",
                self.n_heads, self.d_head, self.d_model
            ));
        }
        if self.d_ffn != 4 * self.d_model {
            return fail(format!("d_ffn = {} must equal 4 * d_model = {}", self.d_ffn, 4 * self.d_model));
        }
        if !self.d_ffn.is_multiple_of(self.granularity) {
            return fail(format!(
                "granularity {} must divide d_ffn = {}",
                self.granularity, self.d_ffn
            ));
        }
        Ok(())
    }

    pub fn sparsity(&self) -> f64 {
        (self.e_total - self.e_active) as f64 / self.e_total as f64
    }

    /// Expansion factor `E = e_total / G`.
    pub fn expansion(&self) -> f64 {
        self.e_total as f64 / self.granularity as f64
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let config: MoeConfig = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Fraction of experts that are inactive for a token: `(e_total - e_active) / e_total`.
pub fn sparsity_of(e_total: u64, e_active: u64) -> Result<f64> {
    if e_total == 0 {
        return Err(Error::InvalidConfig("e_total must be >= 1".into()));
    }
    if e_active == 0 {
        return Err(Error::InvalidConfig("e_active must be >= 1".into()));
    }
    if e_active > e_total {
        return Err(Error::InvalidConfig(format!(
            "e_active = {e_active} exceeds e_total = {e_total}"
        )));
    }
    Ok((e_total - e_active) as f64 / e_total as f64)
}

/// Per-component parameter counts, summed over layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub attention: u64,
    pub experts_total: u64,
    pub experts_active: u64,
    pub router: u64,
    pub embedding: u64,
    pub unembedding: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub n_total: u64,
    pub n_active: u64,
    pub breakdown: ParamBreakdown,
}

impl ParamCount {
    /// Size of one granular expert (three GLU projections).
    pub fn per_expert(config: &MoeConfig) -> Result<u64> {
        3u64.checked_mul(config.d_ffn / config.granularity)
            .and_then(|v| v.checked_mul(config.d_model))
            .ok_or(Error::Range("per-expert parameters"))
    }
}

/// Counts total and active parameters. The input embedding is a table lookup
/// and is only included when `include_input_embedding` is set.
pub fn count_params(config: &MoeConfig, include_input_embedding: bool) -> Result<ParamCount> {
    config.validate()?;
    let overflow = |what| Error::Range(what);
    let per_expert = ParamCount::per_expert(config)?;
    let layers = config.n_layers;
    let mul = |a: u64, b: u64, what| a.checked_mul(b).ok_or(overflow(what));

    let attention = mul(mul(4 * config.d_model, config.d_model, "attention")?, layers, "attention")?;
    let experts_total = mul(mul(per_expert, config.e_total, "experts")?, layers, "experts")?;
    let experts_active = mul(mul(per_expert, config.e_active, "experts")?, layers, "experts")?;
    let router = mul(mul(config.d_model, config.e_total, "router")?, layers, "router")?;
    let unembedding = mul(config.n_vocab, config.d_model, "unembedding")?;
    let embedding = if include_input_embedding { unembedding } else { 0 };

    let shared = [attention, router, unembedding, embedding]
        .into_iter()
        .try_fold(0u64, |acc, v| acc.checked_add(v))
        .ok_or(overflow("parameter total"))?;
    let n_total = shared.checked_add(experts_total).ok_or(overflow("parameter total"))?;
    let n_active = shared.checked_add(experts_active).ok_or(overflow("parameter total"))?;

    Ok(ParamCount {
        n_total,
        n_active,
        breakdown: ParamBreakdown {
            attention,
            experts_total,
            experts_active,
            router,
            embedding,
            unembedding,
        },
    })
}

/// How [`derive_config`] lays out depth, width, and expert counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeRule {
    /// Target `d_model / n_layers`.
    pub aspect_ratio: f64,
    pub d_head: u64,
    /// Smallest acceptable `e_total`.
    pub min_experts: u64,
    pub max_experts: u64,
    pub power_of_two_experts: bool,
    pub n_ctx: u64,
    pub n_vocab: u64,
}

impl Default for ShapeRule {
    fn default() -> Self {
        ShapeRule {
            aspect_ratio: 128.0,
            d_head: 64,
            min_experts: 1,
            max_experts: 4096,
            power_of_two_experts: false,
            n_ctx: 2048,
            n_vocab: 50_432,
        }
    }
}

const SPARSITY_MATCH_TOL: f64 = 1e-12;

fn expert_counts(sparsity: f64, granularity: u64, rule: &ShapeRule) -> Result<(u64, u64)> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::NoFeasibleConfig(format!("sparsity {sparsity} outside [0, 1)")));
    }
    let candidates: Box<dyn Iterator<Item = u64>> = if rule.power_of_two_experts {
        Box::new((0..63).map(|k| 1u64 << k).take_while(|&e| e <= rule.max_experts))
    } else {
        Box::new(1..=rule.max_experts)
    };
    for e_total in candidates {
        if e_total < rule.min_experts.max(1) || e_total % granularity != 0 {
            continue;
        }
        let e_active = ((1.0 - sparsity) * e_total as f64).round() as u64;
        if e_active == 0 || e_active > e_total {
            continue;
        }
        let s = (e_total - e_active) as f64 / e_total as f64;
        if (s - sparsity).abs() <= SPARSITY_MATCH_TOL {
            return Ok((e_total, e_active));
        }
    }
    Err(Error::NoFeasibleConfig(format!(
        "sparsity {sparsity} is not representable with integer experts under the shape rule"
    )))
}

/// Finds a config with roughly `n_target` total parameters (input embedding
/// excluded) and exactly the requested sparsity. Expert counts are fixed
/// first; width is then searched over multiples of `d_head`.
pub fn derive_config(n_target: f64, sparsity: f64, granularity: u64, rule: &ShapeRule) -> Result<MoeConfig> {
    if granularity == 0 || rule.d_head == 0 || rule.aspect_ratio <= 0.0 {
        return Err(Error::InvalidConfig("granularity, d_head and aspect ratio must be positive".into()));
    }
    if !(n_target.is_finite() && n_target > 0.0) {
        return Err(Error::NoFeasibleConfig(format!("target size {n_target} must be positive")));
    }
    let (e_total, e_active) = expert_counts(sparsity, granularity, rule)?;

    let build = |d_model: u64| -> Option<MoeConfig> {
        let n_layers = ((d_model as f64 / rule.aspect_ratio).round() as u64).max(1);
        let config = MoeConfig::new(n_layers, d_model, rule.d_head, e_total, e_active, granularity, rule.n_ctx, rule.n_vocab).ok()?;
        Some(config)
    };

    let mut best: Option<(f64, MoeConfig)> = None;
    let mut d_model = rule.d_head;
    loop {
        if let Some(config) = build(d_model) {
            let n = match count_params(&config, false) {
                Ok(p) => p.n_total as f64,
                Err(_) => break,
            };
            let gap = (n - n_target).abs() / n_target;
            if best.as_ref().is_none_or(|(g, _)| gap < *g) {
                best = Some((gap, config));
            }
            if n > n_target {
                break;
            }
        }
        d_model = match d_model.checked_add(rule.d_head) {
            Some(d) => d,
            None => break,
        };
    }
    match best {
        Some((gap, config)) if gap <= 0.05 => Ok(config),
        Some((gap, _)) => Err(Error::NoFeasibleConfig(format!(
            "closest width misses target {n_target:e} by {:.1}%",
            gap * 100.0
        ))),
        None => Err(Error::NoFeasibleConfig(format!("no valid width for target {n_target:e}"))),
    }
}

/// Maps total parameters and sparsity to active parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NaRule {
    /// `N_a = N (1 - S) f + N (1 - f)` where `f` is the fraction of parameters
    /// that live in experts.
    Structural { expert_fraction: f64 },
    /// `N_a = N`.
    Identity,
    /// Exact counting through [`derive_config`] and [`count_params`].
    Config { granularity: u64, shape: ShapeRule },
}

impl Default for NaRule {
    fn default() -> Self {
        NaRule::Structural { expert_fraction: 1.0 }
    }
}

impl NaRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NaRule::Structural { expert_fraction } if !(0.0..=1.0).contains(&expert_fraction) => Err(
                Error::InvalidConfig(format!("expert fraction {expert_fraction} outside [0, 1]")),
            ),
            NaRule::Config { granularity: 0, .. } => Err(Error::InvalidConfig("granularity must be >= 1".into())),
            _ => Ok(()),
        }
    }

    pub fn active(&self, n_total: f64, sparsity: f64) -> Result<f64> {
        match *self {
            NaRule::Structural { expert_fraction: f } => Ok(n_total * (1.0 - sparsity) * f + n_total * (1.0 - f)),
            NaRule::Identity => Ok(n_total),
            NaRule::Config { granularity, shape } => {
                let config = derive_config(n_total, sparsity, granularity, &shape)?;
                Ok(count_params(&config, false)?.n_active as f64)
            }
        }
    }

    /// Inverse of [`NaRule::active`] in `N`, for the rules where it is linear.
    pub fn total(&self, n_active: f64, sparsity: f64) -> Result<f64> {
        match *self {
            NaRule::Structural { expert_fraction: f } => Ok(n_active / (1.0 - f * sparsity)),
            NaRule::Identity => Ok(n_active),
            NaRule::Config { .. } => Err(Error::Domain("config-backed rule has no closed-form inverse".into())),
        }
    }
}
