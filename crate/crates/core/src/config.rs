//! Experiment files: one TOML document describes one experiment.
//!
//! Every table rejects unknown keys, and values are checked before anything
//! runs. Units are SI throughout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actuator::CALIBRATION_WEIGHTS;
use crate::error::{Error, Result};
use crate::mud::{catalog_lookup, CatalogEntry, MudCatalog, MudCoefficients, MudSegment};
use crate::sim::{GaitMode, Trackway, TrialConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Calibrate,
    SingleFlipper,
    TrackwayMap,
    Adapt,
    Sweep,
}

impl Scenario {
    pub fn label(self) -> &'static str {
        match self {
            Scenario::Calibrate => "calibrate",
            Scenario::SingleFlipper => "single-flipper",
            Scenario::TrackwayMap => "trackway-map",
            Scenario::Adapt => "adapt",
            Scenario::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnotConfig {
    pub w: f64,
    pub kp: f64,
    pub ks: f64,
    pub ke: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogConfig {
    /// Empty means the built-in five-mixture catalog.
    pub knots: Vec<KnotConfig>,
    /// Multiplier on every coefficient.
    pub scale: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self { knots: Vec::new(), scale: 1.0 }
    }
}

impl CatalogConfig {
    pub fn build(&self) -> Result<MudCatalog> {
        let base = if self.knots.is_empty() {
            MudCatalog::default()
        } else {
            MudCatalog::new(
                self.knots
                    .iter()
                    .map(|k| CatalogEntry { w: k.w, coeffs: MudCoefficients::new(k.kp, k.ks, k.ke) })
                    .collect(),
            )?
        };
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config("catalog.scale must be > 0"));
        }
        base.scaled(self.scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub id: String,
    pub length: f64,
    /// Water content; coefficients come from the catalog unless overridden.
    pub w: f64,
    pub kp: Option<f64>,
    pub ks: Option<f64>,
    pub ke: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackwayConfig {
    pub segments: Vec<SegmentConfig>,
}

impl Default for TrackwayConfig {
    /// Firm, soft, then stiff mud, one metre each.
    fn default() -> Self {
        let seg = |id: &str, w| SegmentConfig { id: id.into(), length: 1.0, w, kp: None, ks: None, ke: None };
        Self { segments: vec![seg("firm", 0.495), seg("soft", 0.512), seg("stiff", 0.476)] }
    }
}

impl TrackwayConfig {
    pub fn build(&self, catalog: &MudCatalog) -> Result<Trackway> {
        let mut x = 0.0;
        let mut segments = Vec::with_capacity(self.segments.len());
        for s in &self.segments {
            if !(s.length > 0.0 && s.length.is_finite()) {
                return Err(Error::config(format!("segment {}: length must be > 0", s.id)));
            }
            let base = catalog_lookup(catalog, s.w)?;
            let coeffs =
                MudCoefficients::new(s.kp.unwrap_or(base.kp), s.ks.unwrap_or(base.ks), s.ke.unwrap_or(base.ke));
            segments.push(MudSegment { id: s.id.clone(), x_start: x, x_end: x + s.length, w: s.w, coeffs });
            x += s.length;
        }
        Trackway::new(segments)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Suspended masses, kg.
    pub weights: Vec<f64>,
    pub trials: usize,
    /// Lever arm; defaults to the flipper arm length.
    pub moment_arm: Option<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { weights: CALIBRATION_WEIGHTS.to_vec(), trials: 5, moment_arm: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub modes: Vec<GaitMode>,
    pub catalog_scales: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            modes: vec![GaitMode::Fixed { depth: 0.03 }, GaitMode::Fixed { depth: 0.05 }, GaitMode::Adaptive],
            catalog_scales: vec![1.0],
            noise: vec![0.032],
        }
    }
}

impl SweepConfig {
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &mode in &self.modes {
            for &scale in &self.catalog_scales {
                for &noise in &self.noise {
                    out.push(SweepCell { index: out.len(), mode, scale, noise });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub mode: GaitMode,
    pub scale: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub plots: bool,
    #[serde(default)]
    pub catalog: CatalogConfig,
    #[serde(default)]
    pub trackway: TrackwayConfig,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            seed: 0,
            output: None,
            plots: false,
            catalog: CatalogConfig::default(),
            trackway: TrackwayConfig::default(),
            trial: TrialConfig::default(),
            calibration: CalibrationConfig::default(),
            sweep: SweepConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.trial.validate()?;
        let catalog = self.catalog.build()?;
        if self.scenario != Scenario::Calibrate {
            self.trackway.build(&catalog)?;
        }
        let c = &self.calibration;
        if c.trials == 0 || c.weights.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::config("calibration needs trials >= 1 and positive weights"));
        }
        if let Some(arm) = c.moment_arm {
            if !(arm > 0.0) {
                return Err(Error::config("calibration.moment_arm must be > 0"));
            }
        }
        let s = &self.sweep;
        if s.catalog_scales.iter().any(|&x| !(x > 0.0)) || s.noise.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::config("sweep scales must be > 0 and noise >= 0"));
        }
        for m in &s.modes {
            let mut t = self.trial;
            t.mode = *m;
            t.validate()?;
        }
        Ok(())
    }

    pub fn catalog(&self) -> Result<MudCatalog> {
        self.catalog.build()
    }

    pub fn trackway(&self) -> Result<Trackway> {
        self.trackway.build(&self.catalog()?)
    }
}
