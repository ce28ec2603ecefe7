//! Theoretical training FLOPs per token for MoE transformers.
//!
//! Every linear module costs `linear_c` FLOPs per parameter per token for the
//! forward and backward pass; the router costs `router_r` per router weight.
//! Non-leading terms (norms, biases, non-linearities) are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_params, MoeConfig};

/// Add-multiply operations per linear parameter for a forward and backward pass.
pub const LINEAR_C: u64 = 6;
/// Add-multiply-route operations per router parameter.
pub const ROUTER_R: u64 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopConstants {
    pub linear_c: u64,
    pub router_r: u64,
}

impl Default for FlopConstants {
    fn default() -> Self {
        FlopConstants { linear_c: LINEAR_C, router_r: ROUTER_R }
    }
}

/// Per-token FLOPs by module. Layer-wise terms are already multiplied by `n_layers`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub qkv_proj: f64,
    pub attn_logits: f64,
    pub attn_values: f64,
    pub router: f64,
    pub experts: f64,
    pub unembedding: f64,
    pub total: f64,
    pub constants: FlopConstants,
}

/// Exact per-token terms, each scaled by `granularity` so that the expert
/// term stays integral.
struct ScaledTerms {
    qkv_proj: u128,
    attn_logits: u128,
    attn_values: u128,
    router: u128,
    experts: u128,
    unembedding: u128,
    scale: u128,
}

impl ScaledTerms {
    fn new(config: &MoeConfig, k: FlopConstants) -> Result<Self> {
        config.validate()?;
        let c = k.linear_c as u128;
        let g = config.granularity as u128;
        let layers = config.n_layers as u128;
        let d = config.d_model as u128;
        let ctx = config.n_ctx as u128;
        let prod = |xs: &[u128]| -> Result<u128> {
            xs.iter()
                .try_fold(1u128, |acc, &x| acc.checked_mul(x))
                .ok_or(Error::Range("FLOPs per token"))
        };
        Ok(ScaledTerms {
            qkv_proj: prod(&[4, c, d, d, layers, g])?,
            attn_logits: prod(&[c, ctx, d, layers, g])?,
            attn_values: prod(&[c, ctx, d, layers, g])?,
            router: prod(&[k.router_r as u128, d, config.e_total as u128, layers, g])?,
            experts: prod(&[12, c, config.e_active as u128, d, d, layers])?,
            unembedding: prod(&[c, config.n_vocab as u128, d, g])?,
            scale: g,
        })
    }

    fn to_f64(&self, v: u128) -> f64 {
        if v.is_multiple_of(self.scale) {
            (v / self.scale) as f64
        } else {
            v as f64 / self.scale as f64
        }
    }

    fn without_router(&self) -> Result<u128> {
        [self.qkv_proj, self.attn_logits, self.attn_values, self.experts, self.unembedding]
            .into_iter()
            .try_fold(0u128, |acc, v| acc.checked_add(v))
            .ok_or(Error::Range("FLOPs per token"))
    }
}

pub fn flops_breakdown_with(config: &MoeConfig, constants: FlopConstants) -> Result<FlopBreakdown> {
    let t = ScaledTerms::new(config, constants)?;
    let total = t.without_router()?.checked_add(t.router).ok_or(Error::Range("FLOPs per token"))?;
    Ok(FlopBreakdown {
        qkv_proj: t.to_f64(t.qkv_proj),
        attn_logits: t.to_f64(t.attn_logits),
        attn_values: t.to_f64(t.attn_values),
        router: t.to_f64(t.router),
        experts: t.to_f64(t.experts),
        unembedding: t.to_f64(t.unembedding),
        total: t.to_f64(total),
        constants,
    })
}

/// Module-level FLOPs per token including routing.
pub fn flops_breakdown(config: &MoeConfig) -> Result<FlopBreakdown> {
    flops_breakdown_with(config, FlopConstants::default())
}

/// Closed-form FLOPs per token with routing dropped:
/// `C * n_layers * d_model^2 * (4 + 2 n_ctx / d_model + 12 e_active / G + n_vocab / (d_model n_layers))`.
pub fn flops_per_token(config: &MoeConfig) -> Result<f64> {
    let t = ScaledTerms::new(config, FlopConstants::default())?;
    Ok(t.to_f64(t.without_router()?))
}

/// The `6 * N_a * D` proxy.
pub fn flops_6nad(n_active: f64, tokens: f64) -> Result<f64> {
    if !(n_active > 0.0 && tokens > 0.0) {
        return Err(Error::Domain(format!(
            "n_active ({n_active}) and tokens ({tokens}) must be positive"
        )));
    }
    Ok(LINEAR_C as f64 * n_active * tokens)
}

/// `flops_per_token / (6 * N_a)` with `N_a` counted without the input embedding.
pub fn estimator_ratio(config: &MoeConfig) -> Result<f64> {
    let n_active = count_params(config, false)?.n_active;
    let per_token = flops_per_token(config)?;
    Ok(per_token / (LINEAR_C as f64 * n_active as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Closed-form per-token FLOPs times tokens.
    Exact,
    /// `6 * N_a * D`.
    Proxy,
}

/// Total training FLOPs for `tokens` tokens.
pub fn training_flops(config: &MoeConfig, tokens: f64, estimator: Estimator) -> Result<f64> {
    if !(tokens > 0.0) {
        return Err(Error::Domain(format!("token count {tokens} must be positive")));
    }
    match estimator {
        Estimator::Exact => Ok(flops_per_token(config)? * tokens),
        Estimator::Proxy => flops_6nad(count_params(config, false)?.n_active as f64, tokens),
    }
}
