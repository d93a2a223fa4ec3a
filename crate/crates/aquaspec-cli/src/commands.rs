//! The four subcommands: `synth`, `run`, `histogram`, `inspect-pca`.
//! Output files are written atomically (temp file + rename) so a crashed
//! run never leaves half-written reports behind.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aquaspec::data::{ParameterKind, SampleTable};
use aquaspec::eval::{
    histogram_counts, r2_bar_chart, run_framework, stratified_indices, Arm, EvalReport, RunSpec,
    SplitConfig,
};
use aquaspec::ingest;
use aquaspec::preprocess::{select_bands, PcaModel};
use aquaspec::stream::substream_seed;
use aquaspec::synth::{generate_dataset, reference_csv, spectra_csv, GenConfig, SyntheticDataset};

use crate::config::{DataSource, RunConfig};

/// Runtime failures exit with code 1.
#[derive(Debug)]
pub struct RunError(pub String);

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for RunError {}

fn fail(msg: impl Into<String>) -> RunError {
    RunError(msg.into())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes).map_err(|e| fail(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| fail(format!("cannot move {} into place: {e}", path.display())))?;
    Ok(())
}

fn ensure_out_dir(config: &RunConfig) -> Result<(), RunError> {
    fs::create_dir_all(&config.out_dir)
        .map_err(|e| fail(format!("cannot create {}: {e}", config.out_dir.display())))
}

fn synth_config(config: &RunConfig) -> Result<GenConfig, RunError> {
    match &config.data {
        DataSource::Synth {
            noise_sd, ranges, ..
        } => Ok(GenConfig {
            noise_sd: *noise_sd,
            ranges: ranges.to_ranges(),
            ..GenConfig::new(config.seed)
        }),
        DataSource::Files { .. } => Err(fail(
            "this command requires data.source = \"synth\"".to_string(),
        )),
    }
}

fn generate(config: &RunConfig) -> Result<SyntheticDataset, RunError> {
    let DataSource::Synth { n_samples, .. } = &config.data else {
        return Err(fail("this command requires data.source = \"synth\""));
    };
    let gen = synth_config(config)?;
    generate_dataset(*n_samples, &gen).map_err(|e| fail(e.to_string()))
}

/// Loads the band-selected sample tables from either source.
pub fn load_tables(config: &RunConfig) -> Result<Vec<SampleTable>, RunError> {
    let tables = match &config.data {
        DataSource::Synth { .. } => generate(config)?.tables,
        DataSource::Files {
            spectra,
            references,
        } => {
            let records =
                ingest::parse_spectra_file(spectra).map_err(|e| fail(e.to_string()))?;
            let mut tables = Vec::new();
            for (kind, path) in references {
                let log = ingest::parse_reference_file(path, *kind)
                    .map_err(|e| fail(e.to_string()))?;
                let build = ingest::build_sample_table(&records, &log)
                    .map_err(|e| fail(format!("{kind}: {e}")))?;
                if build.dropped_out_of_range > 0 {
                    eprintln!(
                        "warning: {kind}: dropped {} spectra outside the reference log range",
                        build.dropped_out_of_range
                    );
                }
                tables.push(build.table);
            }
            // Canonical parameter order regardless of map order.
            tables.sort_by_key(|t| {
                ParameterKind::ALL
                    .iter()
                    .position(|&p| p == t.parameter())
                    .unwrap_or(usize::MAX)
            });
            tables
        }
    };
    tables
        .iter()
        .map(|t| {
            select_bands(t, config.band_low_nm, config.band_high_nm)
                .map_err(|e| fail(format!("{}: {e}", t.parameter())))
        })
        .collect()
}

/// `synth`: writes the spectra CSV and one reference CSV per parameter.
pub fn cmd_synth(config: &RunConfig) -> Result<(), RunError> {
    ensure_out_dir(config)?;
    let dataset = generate(config)?;
    atomic_write(
        &config.out_dir.join("spectra.csv"),
        spectra_csv(&dataset).as_bytes(),
    )?;
    for kind in ParameterKind::ALL {
        atomic_write(
            &config.out_dir.join(format!("reference_{kind}.csv")),
            reference_csv(&dataset, kind).as_bytes(),
        )?;
    }
    println!(
        "wrote spectra.csv and {} reference files to {}",
        ParameterKind::ALL.len(),
        config.out_dir.display()
    );
    Ok(())
}

fn run_specs(config: &RunConfig) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &model in &config.models {
        for &arm in &config.arms {
            let mut spec = RunSpec::new(model, arm, config.seed);
            spec.pca_components = config.pca_components;
            spec.cv_folds = config.cv_folds;
            specs.push(spec);
        }
    }
    specs
}

fn write_manifest(
    config: &RunConfig,
    report: &EvalReport,
    tables: &[SampleTable],
) -> Result<(), RunError> {
    let mut m = String::new();
    let _ = writeln!(m, "# aquaspec run manifest");
    let _ = writeln!(m, "# library version: {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        m,
        "# reproduce: rerun `aquaspec run` with the config echoed below;"
    );
    let _ = writeln!(
        m,
        "# report.csv is byte-identical across reruns (timings below are not)."
    );
    let _ = writeln!(m);
    let _ = writeln!(m, "## resolved configuration");
    let echo = toml::to_string(config).unwrap_or_else(|e| format!("<serialization failed: {e}>"));
    let _ = writeln!(m, "{echo}");
    let _ = writeln!(m, "## realized splits");
    for (pi, table) in tables.iter().enumerate() {
        let split = SplitConfig {
            seed: substream_seed(config.seed, pi as u64),
            train_fraction: config.train_fraction,
            n_bins: config.split_bins,
        };
        if let Ok(idx) = stratified_indices(table.target(), &split) {
            let _ = writeln!(
                m,
                "{}: n={} train={} test={}",
                table.parameter(),
                table.len(),
                idx.train.len(),
                idx.test.len()
            );
        }
    }
    let _ = writeln!(m);
    let _ = writeln!(
        m,
        "## cells (parameter, model, arm, r2, rmse, pearson_r2, hyperparams, pca_cumvar, seconds)"
    );
    for cell in &report.cells {
        match &cell.outcome {
            Ok(o) => {
                let _ = writeln!(
                    m,
                    "{},{},{},{:.6},{:.6},{},{},{},{:.3}",
                    cell.key.parameter,
                    cell.key.model,
                    cell.key.arm,
                    o.metrics.r_squared,
                    o.metrics.rmse,
                    o.pearson_r2
                        .map(|v| format!("{v:.6}"))
                        .unwrap_or_else(|| "undefined".into()),
                    o.hyperparams,
                    o.pca_cumulative_variance
                        .map(|v| format!("{v:.6}"))
                        .unwrap_or_default(),
                    o.seconds
                );
            }
            Err(e) => {
                let _ = writeln!(
                    m,
                    "{},{},{},FAILED: {e}",
                    cell.key.parameter, cell.key.model, cell.key.arm
                );
            }
        }
    }
    atomic_write(&config.out_dir.join("manifest.txt"), m.as_bytes())
}

/// `run`: executes the evaluation grid and writes report.csv, per-parameter
/// SVG charts, and the run manifest. Individual cell failures are reported
/// and leave the exit code at 0; only a fully failed run errors.
pub fn cmd_run(config: &RunConfig) -> Result<(), RunError> {
    ensure_out_dir(config)?;
    let tables = load_tables(config)?;
    let specs = run_specs(config);
    if specs.is_empty() {
        return Err(fail("no (model, arm) combinations requested"));
    }
    let split = config.split_config();
    let report = run_framework(&tables, &specs, &split).map_err(|e| fail(e.to_string()))?;

    for (key, error) in report.failures() {
        eprintln!(
            "warning: cell {}/{}/{} failed: {error}",
            key.parameter, key.model, key.arm
        );
    }
    if report.all_failed() {
        return Err(fail("every report cell failed"));
    }

    atomic_write(
        &config.out_dir.join("report.csv"),
        report.to_csv(config.timing).as_bytes(),
    )?;

    if config.svg {
        for table in &tables {
            let parameter = table.parameter();
            let entries: Vec<(String, Option<f64>, Option<f64>)> = config
                .models
                .iter()
                .map(|&model| {
                    let r2 = |arm: Arm| {
                        report
                            .cell(parameter, model, arm)
                            .and_then(|c| c.outcome.as_ref().ok())
                            .map(|o| 100.0 * o.metrics.r_squared)
                    };
                    (model.to_string(), r2(Arm::RawBands), r2(Arm::Pca))
                })
                .collect();
            let svg = r2_bar_chart(parameter.key(), &entries);
            atomic_write(
                &config.out_dir.join(format!("r2_{parameter}.svg")),
                svg.as_bytes(),
            )?;
        }
    }

    write_manifest(config, &report, &tables)?;

    let ok = report.cells.iter().filter(|c| c.outcome.is_ok()).count();
    println!(
        "wrote report.csv ({ok}/{} cells) to {}",
        report.cells.len(),
        config.out_dir.display()
    );
    Ok(())
}

/// `histogram`: writes per-parameter binned target counts for the train
/// and test subsets, using the same splits as `run`.
pub fn cmd_histogram(config: &RunConfig) -> Result<(), RunError> {
    ensure_out_dir(config)?;
    let tables = load_tables(config)?;
    for (pi, table) in tables.iter().enumerate() {
        let split = SplitConfig {
            seed: substream_seed(config.seed, pi as u64),
            train_fraction: config.train_fraction,
            n_bins: config.split_bins,
        };
        let idx = stratified_indices(table.target(), &split).map_err(|e| fail(e.to_string()))?;
        let targets = table.target();
        let lo = targets.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let train_values: Vec<f64> = idx.train.iter().map(|&i| targets[i]).collect();
        let test_values: Vec<f64> = idx.test.iter().map(|&i| targets[i]).collect();
        let train_counts = histogram_counts(&train_values, lo, hi, config.hist_bins);
        let test_counts = histogram_counts(&test_values, lo, hi, config.hist_bins);

        let width = (hi - lo) / config.hist_bins as f64;
        let mut csv = String::from("bin_low,bin_high,train_count,test_count\n");
        for b in 0..config.hist_bins {
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                lo + b as f64 * width,
                lo + (b + 1) as f64 * width,
                train_counts[b],
                test_counts[b]
            );
        }
        atomic_write(
            &config.out_dir.join(format!("hist_{}.csv", table.parameter())),
            csv.as_bytes(),
        )?;
    }
    println!(
        "wrote {} histogram files to {}",
        tables.len(),
        config.out_dir.display()
    );
    Ok(())
}

/// `inspect-pca`: fits PCA on the training subset of one parameter's table
/// and prints per-component and cumulative variance ratios, plus the
/// smallest component count covering 99.9% of the variance.
pub fn cmd_inspect_pca(config: &RunConfig, parameter: ParameterKind) -> Result<(), RunError> {
    let tables = load_tables(config)?;
    let (pi, table) = tables
        .iter()
        .enumerate()
        .find(|(_, t)| t.parameter() == parameter)
        .ok_or_else(|| fail(format!("parameter {parameter} not in the dataset")))?;
    let split = SplitConfig {
        seed: substream_seed(config.seed, pi as u64),
        train_fraction: config.train_fraction,
        n_bins: config.split_bins,
    };
    let idx = stratified_indices(table.target(), &split).map_err(|e| fail(e.to_string()))?;
    let train = table.features().select_rows(&idx.train);

    let max_k = (train.rows() - 1).min(train.cols());
    let k = config.pca_components.max(max_k.min(20));
    let pca = PcaModel::fit(&train, k.min(max_k)).map_err(|e| fail(e.to_string()))?;

    println!(
        "pca on {} training rows of {parameter} ({} bands)",
        train.rows(),
        train.cols()
    );
    println!("component,variance_ratio,cumulative");
    let ratios = pca.variance_ratio();
    let mut cumulative = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cumulative += r;
        println!("{},{r:.6},{cumulative:.6}", i + 1);
    }
    if pca.cumulative_variance_ratio() >= 0.999 {
        println!(
            "components needed for 99.9% of variance: {}",
            pca.components_for_ratio(0.999)
        );
    } else {
        println!(
            "99.9% of variance not reached within {} components (cumulative {:.6})",
            pca.n_components(),
            pca.cumulative_variance_ratio()
        );
    }
    println!(
        "cumulative ratio of the first {} components: {:.6}",
        config.pca_components.min(ratios.len()),
        ratios
            .iter()
            .take(config.pca_components)
            .sum::<f64>()
    );
    Ok(())
}
