//! Deterministic bio-optical forward model. Generates labeled reflectance
//! spectra so the whole pipeline can be exercised end to end against a
//! known ground truth.
//!
//! The model is a stylized additive composition, not radiative transfer:
//!
//! ```text
//! R(w) = clamp+[ B(w)
//!                + TURBIDITY_BACKSCATTER * turbidity
//!                - CHL_ABS * g(w; 670, 20) * chl_total
//!                - GREEN_ALGAE_ABS * g(w; 650, 18) * green_algae
//!                - DIATOM_ABS * g(w; 545, 18) * diatoms
//!                - CDOM_ABS * exp(-CDOM_SLOPE * (w - 450)) * cdom
//!                + chl_total * (PEAK_550 * g(w; 550, 25) + PEAK_700 * g(w; 700, 15))
//!                + noise_sd * B(w) * N(0, 1) ]
//! ```
//!
//! with `g(w; c, s) = exp(-(w-c)^2 / (2 s^2))`, the clear-water baseline
//! `B(w) = BASELINE_OFFSET + BASELINE_AMPLITUDE * g(w; 560, 130)`, and
//! `chl_total = chlorophyll_a + 0.5 * green_algae + 0.5 * diatoms`.
//!
//! Chlorophyll deepens the 670 nm absorption dip while raising the
//! reflectance shoulder near 700 nm; CDOM absorbs hardest at short
//! wavelengths; turbidity lifts backscatter flatly across the spectrum.
//! The small 650 nm / 545 nm lobes keep green algae and diatoms separable
//! from total pigment. Every constant is fixed here so the ground truth
//! can be regenerated exactly in any language. Default parameter ranges
//! are chosen so the zero clamp never activates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use thiserror::Error;

use crate::data::{DataError, Matrix, ParameterKind, SampleTable, Spectrum, WavelengthGrid};
use crate::stream::substream_seed;

/// Clear-water baseline: flat offset plus a broad green-peaked lobe.
pub const BASELINE_OFFSET: f64 = 0.028;
pub const BASELINE_AMPLITUDE: f64 = 0.035;
pub const BASELINE_CENTER_NM: f64 = 560.0;
pub const BASELINE_WIDTH_NM: f64 = 130.0;

/// Chlorophyll absorption lobe (per ug/L of total pigment) at 670 nm.
pub const CHL_ABS: f64 = 1.2e-4;
pub const CHL_ABS_CENTER_NM: f64 = 670.0;
pub const CHL_ABS_SIGMA_NM: f64 = 20.0;

/// Reflectance lobes that grow with total pigment.
pub const PEAK_550: f64 = 6.0e-5;
pub const PEAK_550_SIGMA_NM: f64 = 25.0;
pub const PEAK_700: f64 = 8.0e-5;
pub const PEAK_700_SIGMA_NM: f64 = 15.0;

/// Distinct secondary absorption lobes separating the algal groups.
pub const GREEN_ALGAE_ABS: f64 = 1.0e-4;
pub const GREEN_ALGAE_CENTER_NM: f64 = 650.0;
pub const DIATOM_ABS: f64 = 1.0e-4;
pub const DIATOM_CENTER_NM: f64 = 545.0;
pub const ALGAE_SIGMA_NM: f64 = 18.0;

/// Pigment contribution of the algal groups to `chl_total`.
pub const GREEN_ALGAE_PIGMENT_WEIGHT: f64 = 0.5;
pub const DIATOM_PIGMENT_WEIGHT: f64 = 0.5;

/// CDOM exponential absorption (per ppb_QS), anchored at 450 nm.
pub const CDOM_ABS: f64 = 2.0e-3;
pub const CDOM_SLOPE_PER_NM: f64 = 0.012;

/// Flat backscatter lift per FTU of turbidity.
pub const TURBIDITY_BACKSCATTER: f64 = 0.010;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scene parameter {name} = {value} must be finite and nonnegative")]
    BadParameter { name: &'static str, value: f64 },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One scene's ground-truth water parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub chlorophyll_a: f64,
    pub green_algae: f64,
    pub diatoms: f64,
    pub cdom: f64,
    pub turbidity: f64,
}

impl SceneParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fields = [
            ("chlorophyll_a", self.chlorophyll_a),
            ("green_algae", self.green_algae),
            ("diatoms", self.diatoms),
            ("cdom", self.cdom),
            ("turbidity", self.turbidity),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(SynthError::BadParameter { name, value });
            }
        }
        Ok(())
    }

    pub fn get(&self, kind: ParameterKind) -> f64 {
        match kind {
            ParameterKind::ChlorophyllA => self.chlorophyll_a,
            ParameterKind::GreenAlgae => self.green_algae,
            ParameterKind::Diatoms => self.diatoms,
            ParameterKind::Cdom => self.cdom,
            ParameterKind::Turbidity => self.turbidity,
        }
    }
}

/// Uniform sampling ranges for the five parameters. Defaults cover the
/// magnitudes the reported per-parameter error scales imply, and keep the
/// zero clamp of the forward model inactive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterRanges {
    pub chlorophyll_a: (f64, f64),
    pub green_algae: (f64, f64),
    pub diatoms: (f64, f64),
    pub cdom: (f64, f64),
    pub turbidity: (f64, f64),
}

impl Default for ParameterRanges {
    fn default() -> Self {
        Self {
            chlorophyll_a: (0.0, 150.0),
            green_algae: (0.0, 100.0),
            diatoms: (0.0, 80.0),
            cdom: (0.0, 10.0),
            turbidity: (0.0, 4.0),
        }
    }
}

impl ParameterRanges {
    pub fn get(&self, kind: ParameterKind) -> (f64, f64) {
        match kind {
            ParameterKind::ChlorophyllA => self.chlorophyll_a,
            ParameterKind::GreenAlgae => self.green_algae,
            ParameterKind::Diatoms => self.diatoms,
            ParameterKind::Cdom => self.cdom,
            ParameterKind::Turbidity => self.turbidity,
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        for kind in ParameterKind::ALL {
            let (lo, hi) = self.get(kind);
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
                return Err(SynthError::BadConfig(format!(
                    "bad range [{lo}, {hi}] for {kind}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub grid: WavelengthGrid,
    /// Gaussian noise stdev as a fraction of the baseline, per channel.
    pub noise_sd: f64,
    pub seed: u64,
    pub ranges: ParameterRanges,
}

impl GenConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            grid: WavelengthGrid::new(450.0, 4.0, 125).expect("sensor grid is valid"),
            noise_sd: 0.02,
            seed,
            ranges: ParameterRanges::default(),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(SynthError::BadConfig(format!(
                "noise_sd must be nonnegative, got {}",
                self.noise_sd
            )));
        }
        self.ranges.validate()
    }
}

/// Clear-water baseline reflectance.
pub fn baseline(wavelength_nm: f64) -> f64 {
    let t = (wavelength_nm - BASELINE_CENTER_NM) / BASELINE_WIDTH_NM;
    BASELINE_OFFSET + BASELINE_AMPLITUDE * (-t * t).exp()
}

fn gauss(wavelength_nm: f64, center: f64, sigma: f64) -> f64 {
    let t = wavelength_nm - center;
    (-t * t / (2.0 * sigma * sigma)).exp()
}

/// Noise-free reflectance at one wavelength, before clamping.
fn signal(wavelength_nm: f64, p: &SceneParams) -> f64 {
    let chl_total = p.chlorophyll_a
        + GREEN_ALGAE_PIGMENT_WEIGHT * p.green_algae
        + DIATOM_PIGMENT_WEIGHT * p.diatoms;
    baseline(wavelength_nm) + TURBIDITY_BACKSCATTER * p.turbidity
        - CHL_ABS * gauss(wavelength_nm, CHL_ABS_CENTER_NM, CHL_ABS_SIGMA_NM) * chl_total
        - GREEN_ALGAE_ABS
            * gauss(wavelength_nm, GREEN_ALGAE_CENTER_NM, ALGAE_SIGMA_NM)
            * p.green_algae
        - DIATOM_ABS * gauss(wavelength_nm, DIATOM_CENTER_NM, ALGAE_SIGMA_NM) * p.diatoms
        - CDOM_ABS * (-CDOM_SLOPE_PER_NM * (wavelength_nm - 450.0)).exp() * p.cdom
        + chl_total
            * (PEAK_550 * gauss(wavelength_nm, 550.0, PEAK_550_SIGMA_NM)
                + PEAK_700 * gauss(wavelength_nm, 700.0, PEAK_700_SIGMA_NM))
}

fn spectrum_with_rng(
    p: &SceneParams,
    config: &GenConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Spectrum, SynthError> {
    p.validate()?;
    config.validate()?;
    let values: Vec<f64> = config
        .grid
        .wavelengths()
        .map(|w| {
            let mut v = signal(w, p);
            if config.noise_sd > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                v += config.noise_sd * baseline(w) * z;
            }
            v.max(0.0)
        })
        .collect();
    Ok(Spectrum::new(config.grid, values)?)
}

/// Reflectance spectrum for one scene. Deterministic given
/// `(params, config)`; the noise stream is seeded from `config.seed`.
pub fn forward_spectrum(p: &SceneParams, config: &GenConfig) -> Result<Spectrum, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    spectrum_with_rng(p, config, &mut rng)
}

/// A generated dataset: the shared spectra (one per scene, with a time
/// axis of whole seconds) and one table per water parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub scenes: Vec<SceneParams>,
    pub spectra: Vec<Spectrum>,
    pub tables: Vec<SampleTable>,
}

impl SyntheticDataset {
    pub fn table(&self, kind: ParameterKind) -> &SampleTable {
        &self.tables[ParameterKind::ALL
            .iter()
            .position(|&p| p == kind)
            .expect("all parameter kinds present")]
    }
}

/// Draws `n` scenes uniformly from the configured ranges and emits five
/// sample tables sharing one feature matrix. Each scene consumes its own
/// RNG substream, so output is bitwise reproducible for a given seed
/// regardless of evaluation order.
pub fn generate_dataset(n: usize, config: &GenConfig) -> Result<SyntheticDataset, SynthError> {
    if n == 0 {
        return Err(SynthError::BadConfig("dataset size must be positive".into()));
    }
    config.validate()?;

    let uniform = |range: (f64, f64)| {
        Uniform::new_inclusive(range.0, range.1)
            .map_err(|e| SynthError::BadConfig(format!("bad range: {e}")))
    };
    let dists = [
        uniform(config.ranges.chlorophyll_a)?,
        uniform(config.ranges.green_algae)?,
        uniform(config.ranges.diatoms)?,
        uniform(config.ranges.cdom)?,
        uniform(config.ranges.turbidity)?,
    ];

    let mut scenes = Vec::with_capacity(n);
    let mut spectra = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(config.seed, i as u64));
        let p = SceneParams {
            chlorophyll_a: dists[0].sample(&mut rng),
            green_algae: dists[1].sample(&mut rng),
            diatoms: dists[2].sample(&mut rng),
            cdom: dists[3].sample(&mut rng),
            turbidity: dists[4].sample(&mut rng),
        };
        let spectrum = spectrum_with_rng(&p, config, &mut rng)?;
        scenes.push(p);
        spectra.push(spectrum);
    }

    let rows: Vec<Vec<f64>> = spectra.iter().map(|s| s.reflectance().to_vec()).collect();
    let features = Matrix::from_rows(&rows)?;
    let tables = ParameterKind::ALL
        .iter()
        .map(|&kind| {
            SampleTable::new(
                features.clone(),
                Some(config.grid),
                scenes.iter().map(|p| p.get(kind)).collect(),
                kind,
            )
            .map_err(SynthError::from)
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(SyntheticDataset {
        scenes,
        spectra,
        tables,
    })
}

/// Renders the spectra CSV consumed by `ingest::parse_spectra_file`.
/// Sample `i` is stamped at time `i` seconds.
pub fn spectra_csv(dataset: &SyntheticDataset) -> String {
    let grid = dataset.spectra[0].grid();
    let mut out = String::from("time_s");
    for w in grid.wavelengths() {
        out.push_str(&format!(",wl_{w}"));
    }
    out.push('\n');
    for (i, s) in dataset.spectra.iter().enumerate() {
        out.push_str(&format!("{i}"));
        for v in s.reflectance() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Renders the reference CSV (`time_s,value`) for one parameter.
pub fn reference_csv(dataset: &SyntheticDataset, kind: ParameterKind) -> String {
    let mut out = String::from("time_s,value\n");
    for (i, p) in dataset.scenes.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", p.get(kind)));
    }
    out
}
