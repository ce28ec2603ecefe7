//! Artifact plumbing: number formatting, atomic writes, digests and report bundles.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::law::ScalingLawFit;
use crate::surface::{Degrees, FitDomain, SizeVariable, SurfaceFit};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Shortest decimal text that parses back to exactly `x`. Scientific notation
/// is used outside `[1e-4, 1e16)`.
pub fn format_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Six significant digits for human-facing tables.
pub fn format_human(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if (1e-3..1e6).contains(&a) {
        let digits = (5 - a.log10().floor() as i32).max(0) as usize;
        format!("{x:.digits$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Summary of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportBundle {
    pub command: String,
    /// Input path to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub tool_version: String,
}

impl ReportBundle {
    pub fn new(command: impl Into<String>) -> Self {
        ReportBundle { command: command.into(), tool_version: TOOL_VERSION.to_string(), ..Default::default() }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn metric(&mut self, key: impl Into<String>, value: impl Into<serde_json::Value>) {
        self.metrics.insert(key.into(), value.into());
    }
}

pub const SURFACE_KIND: &str = "isoflop_surface";
pub const SURFACE_SET_KIND: &str = "isoflop_surface_set";
pub const LAW_KIND: &str = "scaling_law";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCoefficients {
    pub size: Vec<f64>,
    pub sparsity: Vec<f64>,
    pub interaction: Vec<f64>,
}

/// On-disk form of an isoFLOP surface fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceArtifact {
    pub kind: String,
    pub size_variable: SizeVariable,
    pub degrees: Degrees,
    pub coefficients: SurfaceCoefficients,
    pub intercept: f64,
    pub budget: f64,
    pub fit_domain: FitDomain,
    pub log_base: String,
    #[serde(default)]
    pub metrics: BTreeMap<String, serde_json::Value>,
}

impl SurfaceArtifact {
    pub fn from_fit(fit: &SurfaceFit, metrics: BTreeMap<String, serde_json::Value>) -> Self {
        SurfaceArtifact {
            kind: SURFACE_KIND.into(),
            size_variable: fit.size_variable,
            degrees: fit.degrees,
            coefficients: SurfaceCoefficients {
                size: fit.coeffs_size.clone(),
                sparsity: fit.coeffs_sparsity.clone(),
                interaction: fit.coeffs_interaction.clone(),
            },
            intercept: fit.intercept,
            budget: fit.budget,
            fit_domain: fit.fit_domain,
            log_base: "e".into(),
            metrics,
        }
    }

    pub fn to_fit(&self) -> Result<SurfaceFit> {
        if self.kind != SURFACE_KIND || self.log_base != "e" {
            return Err(Error::Format {
                path: PathBuf::new(),
                message: format!("expected kind {SURFACE_KIND:?} with log_base \"e\", got {:?} / {:?}", self.kind, self.log_base),
            });
        }
        let c = &self.coefficients;
        let fit = SurfaceFit::from_coefficients(
            self.size_variable,
            c.size.clone(),
            c.sparsity.clone(),
            c.interaction.clone(),
            self.intercept,
            self.budget,
            self.fit_domain,
        );
        if fit.degrees != self.degrees {
            return Err(Error::Format {
                path: PathBuf::new(),
                message: format!("coefficient counts imply degrees {} but artifact says {}", fit.degrees, self.degrees),
            });
        }
        Ok(fit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSetArtifact {
    pub kind: String,
    pub surfaces: Vec<SurfaceArtifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawArtifact {
    pub kind: String,
    #[serde(flatten)]
    pub fit: ScalingLawFit,
}

impl LawArtifact {
    pub fn new(fit: ScalingLawFit) -> Self {
        LawArtifact { kind: LAW_KIND.into(), fit }
    }
}

/// Any fit artifact, recognized by its `kind` field.
#[derive(Debug, Clone, PartialEq)]
pub enum FitArtifact {
    Surface(SurfaceArtifact),
    SurfaceSet(SurfaceSetArtifact),
    Law(LawArtifact),
}

impl FitArtifact {
    pub fn from_json_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let fmt = |message: String| Error::Format { path: path.to_path_buf(), message };
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| fmt(e.to_string()))?;
        let kind = value.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string();
        let parsed = match kind.as_str() {
            SURFACE_KIND => serde_json::from_value(value).map(FitArtifact::Surface),
            SURFACE_SET_KIND => serde_json::from_value(value).map(FitArtifact::SurfaceSet),
            LAW_KIND => serde_json::from_value(value).map(FitArtifact::Law),
            other => return Err(fmt(format!("unknown artifact kind {other:?}"))),
        };
        parsed.map_err(|e| fmt(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_json_bytes(path, &bytes)
    }

    /// Every surface in the artifact, sorted by budget.
    pub fn surfaces(&self) -> Result<Vec<SurfaceFit>> {
        let mut fits = match self {
            FitArtifact::Surface(s) => vec![s.to_fit()?],
            FitArtifact::SurfaceSet(set) => set.surfaces.iter().map(|s| s.to_fit()).collect::<Result<_>>()?,
            FitArtifact::Law(_) => Vec::new(),
        };
        fits.sort_by(|a, b| a.budget.total_cmp(&b.budget));
        Ok(fits)
    }
}
