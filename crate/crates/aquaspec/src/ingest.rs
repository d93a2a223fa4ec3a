//! Dataset construction from raw inputs: hyperspectral cube files, ROI
//! masks, spectra CSVs and time-stamped reference logs.
//!
//! File formats (all defined by this crate, see README for the full
//! reference):
//!
//! * Spectra CSV — header `time_s,wl_<w0>,wl_<w1>,...` with wavelengths in
//!   nm, then one numeric row per spectrum. UTF-8, `.` decimal, `,`
//!   separator.
//! * Reference CSV — header `time_s,value`, strictly increasing times.
//! * Cube file — text header `width height start_nm step_nm count\n`
//!   followed by little-endian f32 voxels in channel-major, row-major pixel
//!   order.
//! * ROI mask — text: `width height\n` followed by `height` rows of
//!   space-separated 0/1 tokens (1 = selected).

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use thiserror::Error;

use crate::data::{
    DataError, Matrix, ParameterKind, SampleTable, Spectrum, WavelengthGrid, GRID_TOLERANCE_NM,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cube is {cube_w}x{cube_h} but mask is {mask_w}x{mask_h}")]
    MaskMismatch {
        cube_w: usize,
        cube_h: usize,
        mask_w: usize,
        mask_h: usize,
    },
    #[error("query time {time} outside reference log range [{first}, {last}]")]
    OutOfRange { time: f64, first: f64, last: f64 },
    #[error("spectra use differing wavelength grids")]
    MixedGrids,
    #[error("{0}")]
    Invalid(String),
}

impl IngestError {
    fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        IngestError::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One hyperspectral snapshot: `width x height` pixels, each a spectrum.
#[derive(Debug, Clone)]
pub struct CubeImage {
    width: usize,
    height: usize,
    grid: WavelengthGrid,
    /// Channel-major, row-major pixels: `voxels[c*w*h + y*w + x]`.
    voxels: Vec<f64>,
}

impl CubeImage {
    pub fn new(
        width: usize,
        height: usize,
        grid: WavelengthGrid,
        voxels: Vec<f64>,
    ) -> Result<Self, IngestError> {
        let expected = width * height * grid.count();
        if voxels.len() != expected {
            return Err(IngestError::Invalid(format!(
                "cube needs {expected} voxels ({width}x{height}x{}), got {}",
                grid.count(),
                voxels.len()
            )));
        }
        if width == 0 || height == 0 {
            return Err(IngestError::Invalid("cube with zero pixels".into()));
        }
        if let Some(pos) = voxels.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::Invalid(format!(
                "non-finite voxel at flat index {pos}"
            )));
        }
        Ok(Self {
            width,
            height,
            grid,
            voxels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn grid(&self) -> &WavelengthGrid {
        &self.grid
    }

    pub fn voxel(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.voxels[channel * self.width * self.height + y * self.width + x]
    }
}

/// Pixel selection mask; at least one pixel must be selected.
#[derive(Debug, Clone)]
pub struct RoiMask {
    width: usize,
    height: usize,
    selected: Vec<bool>,
}

impl RoiMask {
    pub fn new(width: usize, height: usize, selected: Vec<bool>) -> Result<Self, IngestError> {
        if selected.len() != width * height {
            return Err(IngestError::Invalid(format!(
                "mask needs {} flags, got {}",
                width * height,
                selected.len()
            )));
        }
        if !selected.iter().any(|&s| s) {
            return Err(IngestError::Invalid("mask selects no pixels".into()));
        }
        Ok(Self {
            width,
            height,
            selected,
        })
    }

    /// Mask selecting every pixel.
    pub fn full(width: usize, height: usize) -> Result<Self, IngestError> {
        Self::new(width, height, vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_selected(&self, x: usize, y: usize) -> bool {
        self.selected[y * self.width + x]
    }

    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }
}

/// Time-stamped in-situ measurements of one parameter, strictly increasing
/// in time.
#[derive(Debug, Clone)]
pub struct ReferenceLog {
    timestamps: Vec<f64>,
    values: Vec<f64>,
    parameter: ParameterKind,
}

impl ReferenceLog {
    pub fn new(
        timestamps: Vec<f64>,
        values: Vec<f64>,
        parameter: ParameterKind,
    ) -> Result<Self, IngestError> {
        if timestamps.is_empty() {
            return Err(IngestError::Invalid("empty reference log".into()));
        }
        if timestamps.len() != values.len() {
            return Err(IngestError::Invalid(format!(
                "{} timestamps but {} values",
                timestamps.len(),
                values.len()
            )));
        }
        for w in timestamps.windows(2) {
            if !(w[1] > w[0]) {
                return Err(IngestError::Invalid(format!(
                    "timestamps not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if timestamps.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(IngestError::Invalid("non-finite log entry".into()));
        }
        Ok(Self {
            timestamps,
            values,
            parameter,
        })
    }

    pub fn parameter(&self) -> ParameterKind {
        self.parameter
    }

    pub fn first_time(&self) -> f64 {
        self.timestamps[0]
    }

    pub fn last_time(&self) -> f64 {
        *self.timestamps.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Per-channel arithmetic mean over the selected pixels.
pub fn roi_mean_spectrum(cube: &CubeImage, mask: &RoiMask) -> Result<Spectrum, IngestError> {
    if cube.width != mask.width || cube.height != mask.height {
        return Err(IngestError::MaskMismatch {
            cube_w: cube.width,
            cube_h: cube.height,
            mask_w: mask.width,
            mask_h: mask.height,
        });
    }
    let n = mask.selected_count() as f64;
    let mut mean = vec![0.0; cube.grid.count()];
    for (c, slot) in mean.iter_mut().enumerate() {
        let plane = &cube.voxels[c * cube.width * cube.height..(c + 1) * cube.width * cube.height];
        let mut sum = 0.0;
        for (i, &v) in plane.iter().enumerate() {
            if mask.selected[i] {
                sum += v;
            }
        }
        *slot = sum / n;
    }
    Ok(Spectrum::new(cube.grid, mean)?)
}

/// Piecewise-linear interpolation of the log at `query_times`. Queries must
/// lie within the log range; there is no extrapolation.
pub fn interpolate_reference(
    log: &ReferenceLog,
    query_times: &[f64],
) -> Result<Vec<f64>, IngestError> {
    query_times.iter().map(|&t| interpolate_one(log, t)).collect()
}

fn interpolate_one(log: &ReferenceLog, time: f64) -> Result<f64, IngestError> {
    let first = log.first_time();
    let last = log.last_time();
    if time < first || time > last {
        return Err(IngestError::OutOfRange { time, first, last });
    }
    // partition_point: first index with timestamp >= time.
    let idx = log.timestamps.partition_point(|&t| t < time);
    if log.timestamps[idx] == time {
        return Ok(log.values[idx]);
    }
    let (t0, t1) = (log.timestamps[idx - 1], log.timestamps[idx]);
    let (v0, v1) = (log.values[idx - 1], log.values[idx]);
    let frac = (time - t0) / (t1 - t0);
    Ok(v0 + frac * (v1 - v0))
}

/// Parses a spectra CSV into `(time, spectrum)` records. The wavelength grid
/// is recovered from the header and must be uniform.
pub fn parse_spectra_file(path: &Path) -> Result<Vec<(f64, Spectrum)>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| IngestError::parse(path, 1, "no header"))?;
    let header = header.map_err(|e| IngestError::io(path, e))?;
    let grid = parse_spectra_header(path, &header)?;

    let mut records = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(grid.count() + 1);
        for (col, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                IngestError::parse(path, line_no, format!("non-numeric cell {:?} in column {col}", cell.trim()))
            })?;
            values.push(v);
        }
        if values.len() != grid.count() + 1 {
            return Err(IngestError::parse(
                path,
                line_no,
                format!(
                    "expected {} values (time + {} channels), got {}",
                    grid.count() + 1,
                    grid.count(),
                    values.len()
                ),
            ));
        }
        let time = values[0];
        let spectrum = Spectrum::new(grid, values[1..].to_vec()).map_err(|e| {
            IngestError::parse(path, line_no, e.to_string())
        })?;
        records.push((time, spectrum));
    }
    Ok(records)
}

fn parse_spectra_header(path: &Path, header: &str) -> Result<WavelengthGrid, IngestError> {
    let mut fields = header.split(',');
    match fields.next() {
        Some("time_s") => {}
        other => {
            return Err(IngestError::parse(
                path,
                1,
                format!("expected first header field 'time_s', got {other:?}"),
            ))
        }
    }
    let mut wavelengths = Vec::new();
    for (i, field) in fields.enumerate() {
        let rest = field.trim().strip_prefix("wl_").ok_or_else(|| {
            IngestError::parse(path, 1, format!("header field {} is not wl_<nm>", i + 1))
        })?;
        let nm: f64 = rest.parse().map_err(|_| {
            IngestError::parse(path, 1, format!("bad wavelength {rest:?} in header"))
        })?;
        wavelengths.push(nm);
    }
    if wavelengths.is_empty() {
        return Err(IngestError::parse(path, 1, "header lists no channels"));
    }
    if wavelengths.len() == 1 {
        return WavelengthGrid::new(wavelengths[0], 1.0, 1).map_err(IngestError::from);
    }
    let step = wavelengths[1] - wavelengths[0];
    if step <= 0.0 {
        return Err(IngestError::parse(path, 1, "wavelengths not increasing"));
    }
    for (i, w) in wavelengths.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > GRID_TOLERANCE_NM {
            return Err(IngestError::parse(
                path,
                1,
                format!("non-uniform wavelength step between channels {i} and {}", i + 1),
            ));
        }
    }
    WavelengthGrid::new(wavelengths[0], step, wavelengths.len()).map_err(IngestError::from)
}

/// Parses a reference CSV (`time_s,value`) into a [`ReferenceLog`].
pub fn parse_reference_file(
    path: &Path,
    parameter: ParameterKind,
) -> Result<ReferenceLog, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| IngestError::parse(path, 1, "no header"))?;
    let header = header.map_err(|e| IngestError::io(path, e))?;
    if header.trim() != "time_s,value" {
        return Err(IngestError::parse(
            path,
            1,
            format!("expected header 'time_s,value', got {:?}", header.trim()),
        ));
    }
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let (t, v) = match (cells.next(), cells.next(), cells.next()) {
            (Some(t), Some(v), None) => (t, v),
            _ => {
                return Err(IngestError::parse(
                    path,
                    line_no,
                    "expected exactly two fields",
                ))
            }
        };
        let t: f64 = t.trim().parse().map_err(|_| {
            IngestError::parse(path, line_no, format!("non-numeric time {:?}", t.trim()))
        })?;
        let v: f64 = v.trim().parse().map_err(|_| {
            IngestError::parse(path, line_no, format!("non-numeric value {:?}", v.trim()))
        })?;
        timestamps.push(t);
        values.push(v);
    }
    ReferenceLog::new(timestamps, values, parameter)
}

/// Reads a cube file: text header `width height start_nm step_nm count\n`
/// then little-endian f32 voxels, channel-major.
pub fn parse_cube_file(path: &Path) -> Result<CubeImage, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| IngestError::io(path, e))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(IngestError::parse(
            path,
            1,
            format!("cube header needs 5 fields, got {}", fields.len()),
        ));
    }
    let width: usize = fields[0]
        .parse()
        .map_err(|_| IngestError::parse(path, 1, "bad width"))?;
    let height: usize = fields[1]
        .parse()
        .map_err(|_| IngestError::parse(path, 1, "bad height"))?;
    let start_nm: f64 = fields[2]
        .parse()
        .map_err(|_| IngestError::parse(path, 1, "bad start_nm"))?;
    let step_nm: f64 = fields[3]
        .parse()
        .map_err(|_| IngestError::parse(path, 1, "bad step_nm"))?;
    let count: usize = fields[4]
        .parse()
        .map_err(|_| IngestError::parse(path, 1, "bad count"))?;
    let grid = WavelengthGrid::new(start_nm, step_nm, count)?;

    let expected = width * height * count;
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| IngestError::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(IngestError::Invalid(format!(
            "cube body has {} bytes, expected {} ({expected} f32 voxels)",
            bytes.len(),
            expected * 4
        )));
    }
    let voxels = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    CubeImage::new(width, height, grid, voxels)
}

/// Reads an ROI mask: `width height\n` then `height` rows of 0/1 tokens.
pub fn parse_roi_file(path: &Path) -> Result<RoiMask, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| IngestError::parse(path, 1, "no header"))?;
    let header = header.map_err(|e| IngestError::io(path, e))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(IngestError::parse(path, 1, "mask header needs 'width height'"));
    }
    let width: usize = dims[0]
        .parse()
        .map_err(|_| IngestError::parse(path, 1, "bad width"))?;
    let height: usize = dims[1]
        .parse()
        .map_err(|_| IngestError::parse(path, 1, "bad height"))?;
    let mut selected = Vec::with_capacity(width * height);
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        for token in line.split_whitespace() {
            match token {
                "0" => selected.push(false),
                "1" => selected.push(true),
                other => {
                    return Err(IngestError::parse(
                        path,
                        line_no,
                        format!("mask token must be 0 or 1, got {other:?}"),
                    ))
                }
            }
        }
    }
    if selected.len() != width * height {
        return Err(IngestError::Invalid(format!(
            "mask lists {} pixels, expected {}",
            selected.len(),
            width * height
        )));
    }
    RoiMask::new(width, height, selected)
}

/// Result of [`build_sample_table`]: the table plus the number of spectra
/// that fell outside the reference log and were dropped.
#[derive(Debug)]
pub struct TableBuild {
    pub table: SampleTable,
    pub dropped_out_of_range: usize,
}

/// Pairs each spectrum with the reference value interpolated at its time.
/// Spectra outside the log's time range are dropped (no extrapolation) and
/// counted in the result.
pub fn build_sample_table(
    spectra: &[(f64, Spectrum)],
    log: &ReferenceLog,
) -> Result<TableBuild, IngestError> {
    if spectra.is_empty() {
        return Err(IngestError::Invalid("no spectra".into()));
    }
    let grid = *spectra[0].1.grid();
    if spectra.iter().any(|(_, s)| *s.grid() != grid) {
        return Err(IngestError::MixedGrids);
    }
    let first = log.first_time();
    let last = log.last_time();
    let in_range: Vec<&(f64, Spectrum)> = spectra
        .iter()
        .filter(|(t, _)| *t >= first && *t <= last)
        .collect();
    let dropped = spectra.len() - in_range.len();
    if dropped > 0 {
        log::warn!(
            "dropped {dropped} of {} spectra outside reference log range [{first}, {last}]",
            spectra.len()
        );
    }
    if in_range.is_empty() {
        return Err(IngestError::Invalid(
            "all spectra outside reference log range".into(),
        ));
    }
    let times: Vec<f64> = in_range.iter().map(|(t, _)| *t).collect();
    let targets = interpolate_reference(log, &times)?;
    let rows: Vec<Vec<f64>> = in_range
        .iter()
        .map(|(_, s)| s.reflectance().to_vec())
        .collect();
    let features = Matrix::from_rows(&rows)?;
    let table = SampleTable::new(features, Some(grid), targets, log.parameter())?;
    Ok(TableBuild {
        table,
        dropped_out_of_range: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn grid(count: usize) -> WavelengthGrid {
        WavelengthGrid::new(450.0, 4.0, count).unwrap()
    }

    fn log2pts() -> ReferenceLog {
        ReferenceLog::new(vec![0.0, 10.0], vec![10.0, 20.0], ParameterKind::Cdom).unwrap()
    }

    #[test]
    fn roi_mean_of_identical_pixels_is_that_spectrum() {
        let g = grid(3);
        let spectrum = [0.1, 0.2, 0.3];
        let mut voxels = vec![0.0; 2 * 2 * 3];
        for c in 0..3 {
            for p in 0..4 {
                voxels[c * 4 + p] = spectrum[c];
            }
        }
        let cube = CubeImage::new(2, 2, g, voxels).unwrap();
        let mask = RoiMask::new(2, 2, vec![true, false, true, false]).unwrap();
        let mean = roi_mean_spectrum(&cube, &mask).unwrap();
        assert_eq!(mean.reflectance(), &spectrum);
    }

    #[test]
    fn roi_mean_two_pixel_average() {
        let g = grid(1);
        // 2x1 cube, single channel with values 0.1 and 0.3.
        let cube = CubeImage::new(2, 1, g, vec![0.1, 0.3]).unwrap();
        let mask = RoiMask::full(2, 1).unwrap();
        let mean = roi_mean_spectrum(&cube, &mask).unwrap();
        assert!((mean.reflectance()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn roi_singleton_mask_returns_pixel_exactly() {
        let g = grid(2);
        let cube = CubeImage::new(2, 1, g, vec![0.1, 0.3, 0.5, 0.7]).unwrap();
        let mask = RoiMask::new(2, 1, vec![false, true]).unwrap();
        let mean = roi_mean_spectrum(&cube, &mask).unwrap();
        assert_eq!(mean.reflectance(), &[0.3, 0.7]);
    }

    #[test]
    fn roi_dimension_mismatch_and_empty_mask() {
        let g = grid(1);
        let cube = CubeImage::new(2, 1, g, vec![0.1, 0.3]).unwrap();
        let mask = RoiMask::full(3, 1).unwrap();
        assert!(matches!(
            roi_mean_spectrum(&cube, &mask),
            Err(IngestError::MaskMismatch { .. })
        ));
        assert!(RoiMask::new(2, 1, vec![false, false]).is_err());
    }

    #[test]
    fn interpolation_midpoint_endpoint_and_range() {
        let log = log2pts();
        assert_eq!(interpolate_reference(&log, &[5.0]).unwrap(), vec![15.0]);
        assert_eq!(interpolate_reference(&log, &[10.0]).unwrap(), vec![20.0]);
        assert_eq!(interpolate_reference(&log, &[0.0]).unwrap(), vec![10.0]);
        assert!(matches!(
            interpolate_reference(&log, &[11.0]),
            Err(IngestError::OutOfRange { .. })
        ));
    }

    #[test]
    fn reference_log_rejects_unsorted_times() {
        assert!(
            ReferenceLog::new(vec![0.0, 0.0], vec![1.0, 2.0], ParameterKind::Cdom).is_err()
        );
        assert!(
            ReferenceLog::new(vec![1.0, 0.0], vec![1.0, 2.0], ParameterKind::Cdom).is_err()
        );
    }

    fn write_temp(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn parse_spectra_well_formed() {
        let f = write_temp(
            b"time_s,wl_450,wl_454,wl_458\n0,0.1,0.2,0.3\n1,0.4,0.5,0.6\n2,0.7,0.8,0.9\n",
        );
        let records = parse_spectra_file(f.path()).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[1].0, 1.0);
        assert_eq!(records[1].1.reflectance(), &[0.4, 0.5, 0.6]);
        assert_eq!(records[0].1.grid().step_nm(), 4.0);
    }

    #[test]
    fn parse_spectra_short_row_reports_line() {
        let f = write_temp(b"time_s,wl_450,wl_454\n0,0.1,0.2\n1,0.1\n");
        match parse_spectra_file(f.path()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_spectra_non_numeric_cell_reports_line() {
        let f = write_temp(b"time_s,wl_450\n0,0.1\nbad,0.2\n");
        match parse_spectra_file(f.path()) {
            Err(IngestError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("non-numeric"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_spectra_empty_file_is_no_header() {
        let f = write_temp(b"");
        match parse_spectra_file(f.path()) {
            Err(IngestError::Parse { line, message, .. }) => {
                assert_eq!(line, 1);
                assert!(message.contains("no header"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_reference_file_round_trip() {
        let f = write_temp(b"time_s,value\n0,10\n10,20\n");
        let log = parse_reference_file(f.path(), ParameterKind::Turbidity).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(log.parameter(), ParameterKind::Turbidity);
    }

    #[test]
    fn parse_cube_round_trip() {
        let mut content = b"2 1 450 4 2\n".to_vec();
        for v in [0.1f32, 0.3, 0.5, 0.7] {
            content.extend_from_slice(&v.to_le_bytes());
        }
        let f = write_temp(&content);
        let cube = parse_cube_file(f.path()).unwrap();
        assert_eq!(cube.width(), 2);
        assert_eq!(cube.height(), 1);
        assert!((cube.voxel(0, 0, 0) - 0.1).abs() < 1e-7);
        assert!((cube.voxel(1, 0, 1) - 0.7).abs() < 1e-7);
    }

    #[test]
    fn parse_roi_round_trip() {
        let f = write_temp(b"3 2\n0 1 0\n1 1 0\n");
        let mask = parse_roi_file(f.path()).unwrap();
        assert_eq!(mask.selected_count(), 3);
        assert!(mask.is_selected(1, 0));
        assert!(!mask.is_selected(2, 1));
    }

    fn flat_spectrum(g: WavelengthGrid, v: f64) -> Spectrum {
        Spectrum::new(g, vec![v; g.count()]).unwrap()
    }

    #[test]
    fn build_table_interpolates_targets() {
        let g = grid(2);
        let log = ReferenceLog::new(vec![0.0, 10.0], vec![0.0, 10.0], ParameterKind::Cdom)
            .unwrap();
        let spectra = vec![
            (0.0, flat_spectrum(g, 0.1)),
            (5.0, flat_spectrum(g, 0.2)),
            (10.0, flat_spectrum(g, 0.3)),
        ];
        let build = build_sample_table(&spectra, &log).unwrap();
        assert_eq!(build.table.target(), &[0.0, 5.0, 10.0]);
        assert_eq!(build.table.len(), 3);
        assert_eq!(build.dropped_out_of_range, 0);
    }

    #[test]
    fn build_table_drops_out_of_range_spectra() {
        let g = grid(2);
        let log = log2pts();
        let spectra = vec![
            (-1.0, flat_spectrum(g, 0.1)),
            (5.0, flat_spectrum(g, 0.2)),
            (11.0, flat_spectrum(g, 0.3)),
        ];
        let build = build_sample_table(&spectra, &log).unwrap();
        assert_eq!(build.table.len(), 1);
        assert_eq!(build.dropped_out_of_range, 2);
        assert_eq!(build.table.target(), &[15.0]);
    }

    #[test]
    fn build_table_rejects_mixed_grids() {
        let log = log2pts();
        let spectra = vec![
            (0.0, flat_spectrum(grid(2), 0.1)),
            (5.0, flat_spectrum(grid(3), 0.2)),
        ];
        assert!(matches!(
            build_sample_table(&spectra, &log),
            Err(IngestError::MixedGrids)
        ));
    }

    proptest! {
        // Between two consecutive log points the interpolant stays within
        // the segment's value range (monotone along the segment).
        #[test]
        fn interpolation_bounded_on_segment(
            v0 in -100.0f64..100.0,
            v1 in -100.0f64..100.0,
            frac in 0.0f64..1.0,
        ) {
            let log = ReferenceLog::new(
                vec![0.0, 10.0],
                vec![v0, v1],
                ParameterKind::Cdom,
            ).unwrap();
            let t = 10.0 * frac;
            let y = interpolate_reference(&log, &[t]).unwrap()[0];
            let (lo, hi) = if v0 <= v1 { (v0, v1) } else { (v1, v0) };
            prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
        }

        // Mean spectrum is bounded by per-channel min/max over selected pixels.
        #[test]
        fn roi_mean_bounded(values in proptest::collection::vec(0.0f64..1.0, 8)) {
            let g = grid(2);
            let cube = CubeImage::new(2, 2, g, values.clone()).unwrap();
            let mask = RoiMask::new(2, 2, vec![true, true, false, true]).unwrap();
            let mean = roi_mean_spectrum(&cube, &mask).unwrap();
            for c in 0..2 {
                let sel: Vec<f64> = [0, 1, 3].iter().map(|&p| values[c * 4 + p]).collect();
                let lo = sel.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = sel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(mean.reflectance()[c] >= lo - 1e-12);
                prop_assert!(mean.reflectance()[c] <= hi + 1e-12);
            }
        }
    }
}
