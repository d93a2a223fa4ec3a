//! Run configuration: a TOML file plus command-line overrides, resolved
//! into one validated structure. Precedence is flags > config file >
//! defaults; the seed has no default and must come from one of the first
//! two.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use aquaspec::data::ParameterKind;
use aquaspec::eval::{Arm, ModelKind, SplitConfig};
use aquaspec::synth::ParameterRanges;

/// Configuration problems exit with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

// --------------------------------------------------------------------------
// File schema (everything optional; defaults applied during resolution)
// --------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: FileData,
    #[serde(default)]
    pub bands: FileBands,
    #[serde(default)]
    pub split: FileSplit,
    #[serde(default)]
    pub models: FileModels,
    #[serde(default)]
    pub report: FileReport,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    /// "synth" (default) or "files".
    pub source: Option<String>,
    pub n_samples: Option<usize>,
    pub noise_sd: Option<f64>,
    /// Per-parameter `[low, high]` sampling ranges for the generator.
    pub ranges: Option<std::collections::BTreeMap<String, [f64; 2]>>,
    pub spectra: Option<PathBuf>,
    /// Parameter key -> reference CSV path.
    pub references: Option<std::collections::BTreeMap<String, PathBuf>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBands {
    pub low_nm: Option<f64>,
    pub high_nm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSplit {
    pub train_fraction: Option<f64>,
    pub n_bins: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileModels {
    pub list: Option<Vec<String>>,
    pub arms: Option<Vec<String>>,
    pub pca_components: Option<usize>,
    pub cv_folds: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileReport {
    pub timing: Option<bool>,
    pub svg: Option<bool>,
    pub hist_bins: Option<usize>,
}

// --------------------------------------------------------------------------
// Command-line overrides
// --------------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub models: Option<String>,
    pub arms: Option<String>,
    pub pca_components: Option<usize>,
    pub timing: bool,
}

// --------------------------------------------------------------------------
// Resolved configuration
// --------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub enum DataSource {
    Synth {
        n_samples: usize,
        noise_sd: f64,
        ranges: RangesEcho,
    },
    Files {
        spectra: PathBuf,
        references: Vec<(ParameterKind, PathBuf)>,
    },
}

/// Serializable echo of the generator ranges for the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RangesEcho {
    pub chlorophyll_a: (f64, f64),
    pub green_algae: (f64, f64),
    pub diatoms: (f64, f64),
    pub cdom: (f64, f64),
    pub turbidity: (f64, f64),
}

impl From<ParameterRanges> for RangesEcho {
    fn from(r: ParameterRanges) -> Self {
        Self {
            chlorophyll_a: r.chlorophyll_a,
            green_algae: r.green_algae,
            diatoms: r.diatoms,
            cdom: r.cdom,
            turbidity: r.turbidity,
        }
    }
}

impl RangesEcho {
    pub fn to_ranges(&self) -> ParameterRanges {
        ParameterRanges {
            chlorophyll_a: self.chlorophyll_a,
            green_algae: self.green_algae,
            diatoms: self.diatoms,
            cdom: self.cdom,
            turbidity: self.turbidity,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSource,
    pub band_low_nm: f64,
    pub band_high_nm: f64,
    pub train_fraction: f64,
    pub split_bins: usize,
    pub models: Vec<ModelKind>,
    pub arms: Vec<Arm>,
    pub pca_components: usize,
    pub cv_folds: usize,
    pub timing: bool,
    pub svg: bool,
    pub hist_bins: usize,
}

impl RunConfig {
    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            train_fraction: self.train_fraction,
            n_bins: self.split_bins,
            seed: self.seed,
        }
    }
}

fn parse_models(raw: &str) -> Result<Vec<ModelKind>, ConfigError> {
    let models: Vec<ModelKind> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| ModelKind::from_key(s).ok_or_else(|| err(format!("unknown model {s:?}"))))
        .collect::<Result<_, _>>()?;
    Ok(models)
}

fn parse_arms(raw: &str) -> Result<Vec<Arm>, ConfigError> {
    let arms: Vec<Arm> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Arm::from_key(s).ok_or_else(|| err(format!("unknown arm {s:?}"))))
        .collect::<Result<_, _>>()?;
    Ok(arms)
}

/// Loads the optional config file, applies overrides and defaults, and
/// validates the result.
pub fn resolve(config_path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let file: FileConfig = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let seed = overrides
        .seed
        .or(file.seed)
        .ok_or_else(|| err("a seed is required (--seed or `seed` in the config file)"))?;

    let out_dir = overrides
        .out_dir
        .clone()
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("out"));

    let source = file.data.source.as_deref().unwrap_or("synth");
    let data = match source {
        "synth" => {
            let n_samples = file.data.n_samples.unwrap_or(1000);
            if n_samples == 0 {
                return Err(err("data.n_samples must be positive"));
            }
            let noise_sd = file.data.noise_sd.unwrap_or(0.02);
            if !(noise_sd.is_finite() && noise_sd >= 0.0) {
                return Err(err(format!("data.noise_sd must be nonnegative, got {noise_sd}")));
            }
            let mut ranges = ParameterRanges::default();
            if let Some(map) = &file.data.ranges {
                for (key, [lo, hi]) in map {
                    let kind = ParameterKind::from_key(key)
                        .ok_or_else(|| err(format!("unknown parameter {key:?} in data.ranges")))?;
                    let slot = match kind {
                        ParameterKind::ChlorophyllA => &mut ranges.chlorophyll_a,
                        ParameterKind::GreenAlgae => &mut ranges.green_algae,
                        ParameterKind::Diatoms => &mut ranges.diatoms,
                        ParameterKind::Cdom => &mut ranges.cdom,
                        ParameterKind::Turbidity => &mut ranges.turbidity,
                    };
                    *slot = (*lo, *hi);
                }
            }
            DataSource::Synth {
                n_samples,
                noise_sd,
                ranges: ranges.into(),
            }
        }
        "files" => {
            let spectra = file
                .data
                .spectra
                .ok_or_else(|| err("data.spectra is required when data.source = \"files\""))?;
            if !spectra.exists() {
                return Err(err(format!("spectra file {} does not exist", spectra.display())));
            }
            let map = file
                .data
                .references
                .ok_or_else(|| err("data.references is required when data.source = \"files\""))?;
            let mut references = Vec::new();
            for (key, path) in map {
                let kind = ParameterKind::from_key(&key)
                    .ok_or_else(|| err(format!("unknown parameter {key:?} in data.references")))?;
                if !path.exists() {
                    return Err(err(format!(
                        "reference file {} for {key} does not exist",
                        path.display()
                    )));
                }
                references.push((kind, path));
            }
            if references.is_empty() {
                return Err(err("data.references lists no parameters"));
            }
            DataSource::Files { spectra, references }
        }
        other => return Err(err(format!("unknown data.source {other:?}"))),
    };

    let band_low_nm = file.bands.low_nm.unwrap_or(470.0);
    let band_high_nm = file.bands.high_nm.unwrap_or(910.0);
    if band_low_nm >= band_high_nm {
        return Err(err(format!(
            "band window [{band_low_nm}, {band_high_nm}] is empty"
        )));
    }

    let train_fraction = file.split.train_fraction.unwrap_or(0.3);
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(err(format!(
            "split.train_fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let split_bins = file.split.n_bins.unwrap_or(10);
    if split_bins == 0 {
        return Err(err("split.n_bins must be positive"));
    }

    let models = match (&overrides.models, &file.models.list) {
        (Some(raw), _) => parse_models(raw)?,
        (None, Some(list)) => parse_models(&list.join(","))?,
        (None, None) => ModelKind::ALL.to_vec(),
    };
    let arms = match (&overrides.arms, &file.models.arms) {
        (Some(raw), _) => parse_arms(raw)?,
        (None, Some(list)) => parse_arms(&list.join(","))?,
        (None, None) => Arm::ALL.to_vec(),
    };

    let pca_components = overrides
        .pca_components
        .or(file.models.pca_components)
        .unwrap_or(8);
    if pca_components == 0 {
        return Err(err("pca_components must be positive"));
    }
    let cv_folds = file.models.cv_folds.unwrap_or(5);
    if cv_folds < 2 {
        return Err(err("models.cv_folds must be at least 2"));
    }

    let hist_bins = file.report.hist_bins.unwrap_or(10);
    if hist_bins == 0 {
        return Err(err("report.hist_bins must be positive"));
    }

    Ok(RunConfig {
        seed,
        out_dir,
        data,
        band_low_nm,
        band_high_nm,
        train_fraction,
        split_bins,
        models,
        arms,
        pca_components,
        cv_folds,
        timing: overrides.timing || file.report.timing.unwrap_or(false),
        svg: file.report.svg.unwrap_or(true),
        hist_bins,
    })
}
