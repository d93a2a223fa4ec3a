//! Shared domain types: the spectral axis, spectra, sample tables and the
//! metric pair reported by the evaluation harness.
//!
//! Everything here is immutable after construction and safe to share across
//! threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance (in nm) when snapping a wavelength onto a grid. Grids are
/// synthesized exactly; this only absorbs decimal parsing noise.
pub const GRID_TOLERANCE_NM: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),
    #[error("wavelength {wavelength_nm} nm is not on the grid (start {start_nm}, step {step_nm}, count {count})")]
    OffGrid {
        wavelength_nm: f64,
        start_nm: f64,
        step_nm: f64,
        count: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("non-finite target value at row {row}")]
    NonFiniteTarget { row: usize },
    #[error("negative reflectance {value} at channel {channel}")]
    NegativeReflectance { channel: usize, value: f64 },
    #[error("empty input: {0}")]
    Empty(String),
}

/// Uniform spectral axis shared by all spectra: `wavelength(i) = start + i*step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavelengthGrid {
    start_nm: f64,
    step_nm: f64,
    count: usize,
}

impl WavelengthGrid {
    pub fn new(start_nm: f64, step_nm: f64, count: usize) -> Result<Self, DataError> {
        if !start_nm.is_finite() || !step_nm.is_finite() {
            return Err(DataError::InvalidGrid("non-finite start or step".into()));
        }
        if step_nm <= 0.0 {
            return Err(DataError::InvalidGrid(format!(
                "step must be positive, got {step_nm}"
            )));
        }
        if count == 0 {
            return Err(DataError::InvalidGrid("count must be at least 1".into()));
        }
        Ok(Self {
            start_nm,
            step_nm,
            count,
        })
    }

    pub fn start_nm(&self) -> f64 {
        self.start_nm
    }

    pub fn step_nm(&self) -> f64 {
        self.step_nm
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Wavelength of channel `i`. Panics if `i` is out of range.
    pub fn wavelength(&self, i: usize) -> f64 {
        assert!(i < self.count, "channel {i} out of range ({})", self.count);
        self.start_nm + i as f64 * self.step_nm
    }

    /// Iterator over all channel wavelengths.
    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.wavelength(i))
    }

    /// Index of the channel at `wavelength_nm`, within [`GRID_TOLERANCE_NM`].
    pub fn index_of(&self, wavelength_nm: f64) -> Result<usize, DataError> {
        let off_grid = || DataError::OffGrid {
            wavelength_nm,
            start_nm: self.start_nm,
            step_nm: self.step_nm,
            count: self.count,
        };
        let pos = (wavelength_nm - self.start_nm) / self.step_nm;
        let idx = pos.round();
        if idx < 0.0 || idx as usize >= self.count {
            return Err(off_grid());
        }
        let snapped = self.start_nm + idx * self.step_nm;
        if (snapped - wavelength_nm).abs() > GRID_TOLERANCE_NM {
            return Err(off_grid());
        }
        Ok(idx as usize)
    }
}

/// One reflectance spectrum on a grid. Reflectance is stored as a
/// dimensionless fraction; negative values are rejected rather than clamped
/// so sensor artifacts stay visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    grid: WavelengthGrid,
    reflectance: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: WavelengthGrid, reflectance: Vec<f64>) -> Result<Self, DataError> {
        if reflectance.len() != grid.count() {
            return Err(DataError::DimensionMismatch(format!(
                "spectrum has {} values but grid has {} channels",
                reflectance.len(),
                grid.count()
            )));
        }
        for (channel, &value) in reflectance.iter().enumerate() {
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    row: 0,
                    col: channel,
                });
            }
            if value < 0.0 {
                return Err(DataError::NegativeReflectance { channel, value });
            }
        }
        Ok(Self { grid, reflectance })
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn reflectance(&self) -> &[f64] {
        &self.reflectance
    }

    pub fn into_reflectance(self) -> Vec<f64> {
        self.reflectance
    }
}

/// The five regression targets, each with its fixed reporting unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParameterKind {
    ChlorophyllA,
    GreenAlgae,
    Diatoms,
    Cdom,
    Turbidity,
}

impl ParameterKind {
    pub const ALL: [ParameterKind; 5] = [
        ParameterKind::ChlorophyllA,
        ParameterKind::GreenAlgae,
        ParameterKind::Diatoms,
        ParameterKind::Cdom,
        ParameterKind::Turbidity,
    ];

    /// Stable machine-readable name used in file names and CSV columns.
    pub fn key(&self) -> &'static str {
        match self {
            ParameterKind::ChlorophyllA => "chlorophyll_a",
            ParameterKind::GreenAlgae => "green_algae",
            ParameterKind::Diatoms => "diatoms",
            ParameterKind::Cdom => "cdom",
            ParameterKind::Turbidity => "turbidity",
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            ParameterKind::ChlorophyllA | ParameterKind::GreenAlgae | ParameterKind::Diatoms => {
                "ug/L"
            }
            // Parts per billion calibrated against Quinine Sulfate.
            ParameterKind::Cdom => "ppb_QS",
            // Formazin Turbidity Unit.
            ParameterKind::Turbidity => "FTU",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.key() == key)
    }
}

impl std::fmt::Display for ParameterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

/// Dense row-major matrix of `f64`. Thin domain type: feature tables and
/// model internals only need row access and a few bulk operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if data.len() != rows * cols {
            return Err(DataError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::Empty("matrix with zero rows".into()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(DataError::DimensionMismatch(format!(
                    "row {i} has {} values, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// New matrix made of the given columns, in the given order.
    pub fn select_cols(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * indices.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(indices.iter().map(|&c| row[c]));
        }
        Matrix {
            rows: self.rows,
            cols: indices.len(),
            data,
        }
    }

    /// First (row, col) holding a non-finite value, if any.
    pub fn find_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|pos| (pos / self.cols, pos % self.cols))
    }
}

/// Feature matrix paired with one named target vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTable {
    features: Matrix,
    feature_grid: Option<WavelengthGrid>,
    target: Vec<f64>,
    parameter: ParameterKind,
}

impl SampleTable {
    pub fn new(
        features: Matrix,
        feature_grid: Option<WavelengthGrid>,
        target: Vec<f64>,
        parameter: ParameterKind,
    ) -> Result<Self, DataError> {
        let table = Self {
            features,
            feature_grid,
            target,
            parameter,
        };
        table.validate()?;
        Ok(table)
    }

    /// Checks every table invariant and returns the table unchanged on
    /// success. Validation is idempotent.
    pub fn validate(&self) -> Result<&Self, DataError> {
        if self.features.rows() == 0 {
            return Err(DataError::Empty("sample table with zero rows".into()));
        }
        if self.features.cols() == 0 {
            return Err(DataError::Empty("sample table with zero features".into()));
        }
        if self.target.len() != self.features.rows() {
            return Err(DataError::DimensionMismatch(format!(
                "{} target values for {} rows",
                self.target.len(),
                self.features.rows()
            )));
        }
        if let Some(grid) = &self.feature_grid {
            if grid.count() != self.features.cols() {
                return Err(DataError::DimensionMismatch(format!(
                    "grid has {} channels but features have {} columns",
                    grid.count(),
                    self.features.cols()
                )));
            }
        }
        if let Some((row, col)) = self.features.find_non_finite() {
            return Err(DataError::NonFinite { row, col });
        }
        if let Some(row) = self.target.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteTarget { row });
        }
        Ok(self)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature_grid(&self) -> Option<&WavelengthGrid> {
        self.feature_grid.as_ref()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn parameter(&self) -> ParameterKind {
        self.parameter
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Sub-table with the given rows, preserving grid and parameter.
    pub fn select_rows(&self, indices: &[usize]) -> SampleTable {
        SampleTable {
            features: self.features.select_rows(indices),
            feature_grid: self.feature_grid,
            target: indices.iter().map(|&i| self.target[i]).collect(),
            parameter: self.parameter,
        }
    }
}

/// Coefficient of determination and root mean squared error for one
/// evaluation. `r_squared` may be negative (predictor worse than the test
/// mean); `rmse` is in the target's unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub r_squared: f64,
    pub rmse: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sensor_grid() -> WavelengthGrid {
        WavelengthGrid::new(450.0, 4.0, 125).unwrap()
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(WavelengthGrid::new(450.0, 0.0, 10).is_err());
        assert!(WavelengthGrid::new(450.0, -1.0, 10).is_err());
        assert!(WavelengthGrid::new(450.0, 4.0, 0).is_err());
    }

    #[test]
    fn wavelength_index_on_sensor_grid() {
        let grid = sensor_grid();
        assert_eq!(grid.index_of(470.0).unwrap(), 5);
        assert_eq!(grid.index_of(450.0).unwrap(), 0);
        assert_eq!(grid.index_of(946.0).unwrap(), 124);
        assert!(matches!(
            grid.index_of(471.0),
            Err(DataError::OffGrid { .. })
        ));
        assert!(matches!(
            grid.index_of(950.0),
            Err(DataError::OffGrid { .. })
        ));
        assert!(matches!(
            grid.index_of(446.0),
            Err(DataError::OffGrid { .. })
        ));
    }

    #[test]
    fn spectrum_rejects_negative_and_non_finite() {
        let grid = WavelengthGrid::new(450.0, 4.0, 3).unwrap();
        assert!(Spectrum::new(grid, vec![0.1, 0.2, 0.3]).is_ok());
        assert_eq!(
            Spectrum::new(grid, vec![0.1, -0.2, 0.3]),
            Err(DataError::NegativeReflectance {
                channel: 1,
                value: -0.2
            })
        );
        assert!(Spectrum::new(grid, vec![0.1, f64::NAN, 0.3]).is_err());
        assert!(Spectrum::new(grid, vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn parameter_units_are_fixed() {
        assert_eq!(ParameterKind::ChlorophyllA.unit(), "ug/L");
        assert_eq!(ParameterKind::GreenAlgae.unit(), "ug/L");
        assert_eq!(ParameterKind::Diatoms.unit(), "ug/L");
        assert_eq!(ParameterKind::Cdom.unit(), "ppb_QS");
        assert_eq!(ParameterKind::Turbidity.unit(), "FTU");
        for p in ParameterKind::ALL {
            assert_eq!(ParameterKind::from_key(p.key()), Some(p));
        }
    }

    #[test]
    fn validate_accepts_well_formed_table() {
        let features = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let table =
            SampleTable::new(features, None, vec![1.0, 2.0], ParameterKind::Cdom).unwrap();
        // Idempotent: a second validation sees the same result.
        assert!(table.validate().is_ok());
        assert!(table.validate().is_ok());
    }

    #[test]
    fn validate_reports_nan_position() {
        let mut features = Matrix::zeros(2, 3);
        features.set(1, 2, f64::NAN);
        let err = SampleTable::new(features, None, vec![1.0, 2.0], ParameterKind::Cdom)
            .unwrap_err();
        assert_eq!(err, DataError::NonFinite { row: 1, col: 2 });
    }

    #[test]
    fn validate_catches_grid_mismatch() {
        let grid = WavelengthGrid::new(450.0, 4.0, 5).unwrap();
        let features = Matrix::zeros(2, 4);
        let err = SampleTable::new(features, Some(grid), vec![1.0, 2.0], ParameterKind::Cdom)
            .unwrap_err();
        assert!(matches!(err, DataError::DimensionMismatch(_)));
    }

    #[test]
    fn matrix_select_rows_and_cols() {
        let m = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let picked = m.select_rows(&[2, 0]);
        assert_eq!(picked.row(0), &[5.0, 6.0]);
        assert_eq!(picked.row(1), &[1.0, 2.0]);
        let cols = m.select_cols(&[1]);
        assert_eq!(cols.column(0), vec![2.0, 4.0, 6.0]);
    }

    proptest! {
        #[test]
        fn wavelength_index_round_trips(
            start in 100.0f64..1000.0,
            step in 0.5f64..10.0,
            count in 1usize..200,
            pick in 0usize..200,
        ) {
            let grid = WavelengthGrid::new(start, step, count).unwrap();
            let i = pick % count;
            prop_assert_eq!(grid.index_of(grid.wavelength(i)).unwrap(), i);
        }
    }
}
