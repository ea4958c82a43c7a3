//! Experiment harness: SNR and CSIT-quality sweeps with CSV, plot series,
//! and a replayable run manifest.
//!
//! A run writes into its output directory:
//!
//! * `manifest.json` — seed, config hash, schema version, file list; it is
//!   written with `"complete": false` before any compute so an aborted run
//!   is never mistaken for a finished one.
//! * `config.cfg` — the canonical serialization of the scenario actually
//!   used (after CLI overrides), enough for an exact replay.
//! * `results.csv` — one row per (sweep value × precoder label).
//! * `series/<label>.dat` — whitespace-delimited `sweep_value esr
//!   esr_stderr` per precoder, plus `series/series.json`.
//!
//! Work is parallelized over (sweep point × precoder) tasks and within each
//! task over outer Monte Carlo draws; results are reduced in task order, so
//! output bytes do not depend on the worker count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::channel::{self, large_scale_coefficients, place_network};
use crate::config::ScenarioConfig;
use crate::metrics::{ergodic_sum_rate, EsrScenario};
use crate::precoders::PrecoderKind;
use crate::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "sweep_value,precoder,esr,esr_stderr,excluded_fraction,seed,config_hash";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Snr,
    Csit,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Snr => "snr-sweep",
            SweepKind::Csit => "csit-sweep",
        }
    }
}

/// One (sweep value, precoder) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub precoder: PrecoderKind,
    pub esr: f64,
    pub esr_stderr: f64,
    pub excluded_fraction: f64,
}

/// Full sweep outcome plus the replay identifiers every row carries.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub rows: Vec<SweepRow>,
    pub seed: u64,
    pub config_hash: String,
}

impl SweepResult {
    /// Rows for one precoder label, in sweep order.
    pub fn series(&self, kind: PrecoderKind) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.precoder == kind).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.sweep_value,
                row.precoder,
                row.esr,
                row.esr_stderr,
                row.excluded_fraction,
                self.seed,
                self.config_hash
            );
        }
        out
    }
}

fn scenario_for(config: &ScenarioConfig, sigma_e2: f64, snr_db: f64) -> Result<EsrScenario> {
    let layout = place_network(config.n_aps, config.n_users, config.side_m, config.seed)?
        .with_rf(config.f_mhz, config.h_ap_m, config.h_user_m);
    let zeta = large_scale_coefficients(
        &layout,
        config.shadow_sigma_db,
        config.d0_m,
        config.d1_m,
        config.seed,
    )?;
    Ok(EsrScenario {
        zeta,
        l_aps: config.l_aps,
        n_a: config.n_a,
        cluster_max: config.cluster_max,
        sigma_e2,
        target_snr_db: snr_db,
        sigma_n2: channel::noise_variance(
            config.t0_k,
            config.boltzmann,
            config.bandwidth_hz,
            config.noise_figure_db,
        )?,
        tau_mode: config.tau_mode,
        beta_mode: config.beta_mode,
        square_beta_d: config.square_beta_d,
        sinr_form: config.sinr_form,
    })
}

fn run_sweep(config: &ScenarioConfig, kind: SweepKind, grid: &[f64]) -> Result<SweepResult> {
    let out_dir = PathBuf::from(&config.output_dir);
    prepare_output(&out_dir, config, kind)?;

    // One geometry and shadowing draw per run; the grid reuses it so every
    // point sees the same network.
    let tasks: Vec<(f64, PrecoderKind)> = grid
        .iter()
        .flat_map(|&v| config.precoders.iter().map(move |&p| (v, p)))
        .collect();
    let rows: Vec<SweepRow> = tasks
        .par_iter()
        .map(|&(value, precoder)| {
            let (sigma_e2, snr_db) = match kind {
                SweepKind::Snr => (config.sigma_e2, value),
                SweepKind::Csit => (value, config.snr_db),
            };
            let scenario = scenario_for(config, sigma_e2, snr_db)?;
            let report = ergodic_sum_rate(
                &scenario,
                precoder,
                config.n_outer,
                config.n_inner,
                config.seed,
            )?;
            Ok(SweepRow {
                sweep_value: value,
                precoder,
                esr: report.esr,
                esr_stderr: report.esr_stderr,
                excluded_fraction: report.excluded_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let result = SweepResult {
        kind,
        rows,
        seed: config.seed,
        config_hash: config.hash(),
    };
    finalize_output(&out_dir, config, &result)?;
    Ok(result)
}

/// Sweep ergodic sum-rate over the SNR grid at the configured CSIT quality.
pub fn run_snr_sweep(config: &ScenarioConfig) -> Result<SweepResult> {
    config.validate()?;
    let grid = config
        .snr_grid_db
        .clone()
        .ok_or_else(|| Error::ConfigInvalid("snr-sweep needs snr_grid_db".into()))?;
    run_sweep(config, SweepKind::Snr, &grid)
}

/// Sweep ergodic sum-rate over CSIT quality (σ_e² grid) at the configured
/// fixed SNR.
pub fn run_csit_sweep(config: &ScenarioConfig) -> Result<SweepResult> {
    config.validate()?;
    let grid = config
        .csit_grid
        .clone()
        .ok_or_else(|| Error::ConfigInvalid("csit-sweep needs csit_grid".into()))?;
    run_sweep(config, SweepKind::Csit, &grid)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn manifest_json(
    kind: SweepKind,
    config: &ScenarioConfig,
    complete: bool,
    rows: usize,
    series: &[String],
) -> String {
    let series_list = series
        .iter()
        .map(|s| format!("\"{s}\""))
        .collect::<Vec<_>>()
        .join(", ");
    format!(
        "{{\n  \"schema_version\": {CSV_SCHEMA_VERSION},\n  \"kind\": \"{}\",\n  \"seed\": {},\n  \"config_hash\": \"{}\",\n  \"complete\": {complete},\n  \"rows\": {rows},\n  \"csv\": \"results.csv\",\n  \"config\": \"config.cfg\",\n  \"series\": [{series_list}]\n}}\n",
        kind.as_str(),
        config.seed,
        config.hash(),
    )
}

/// Create the output directory and drop an incomplete-run marker before
/// any compute happens, so an unwritable path fails fast.
fn prepare_output(dir: &Path, config: &ScenarioConfig, kind: SweepKind) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(
        &dir.join("manifest.json"),
        &manifest_json(kind, config, false, 0, &[]),
    )?;
    write_file(&dir.join("config.cfg"), &config.serialize())
}

fn finalize_output(dir: &Path, config: &ScenarioConfig, result: &SweepResult) -> Result<()> {
    write_file(&dir.join("results.csv"), &result.to_csv())?;
    let series_dir = dir.join("series");
    let series = emit_plot_data(result, &series_dir)?;
    let series_names: Vec<String> = series
        .iter()
        .map(|p| format!("series/{}", p.file_name().unwrap_or_default().to_string_lossy()))
        .collect();
    write_file(
        &dir.join("manifest.json"),
        &manifest_json(result.kind, config, true, result.rows.len(), &series_names),
    )
}

/// Write one whitespace-delimited series file per precoder label
/// (`sweep_value esr esr_stderr`) plus `series.json` describing them.
/// Returns the series file paths.
pub fn emit_plot_data(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() {
        return Err(Error::EmptyResult);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut labels: Vec<PrecoderKind> = Vec::new();
    for row in &result.rows {
        if !labels.contains(&row.precoder) {
            labels.push(row.precoder);
        }
    }
    let mut paths = Vec::with_capacity(labels.len());
    let mut index_entries = Vec::with_capacity(labels.len());
    for label in labels {
        let rows = result.series(label);
        let mut text = String::new();
        let _ = writeln!(text, "# {} {}", result.kind.as_str(), label);
        let _ = writeln!(text, "# sweep_value esr esr_stderr");
        for row in &rows {
            let _ = writeln!(text, "{} {} {}", row.sweep_value, row.esr, row.esr_stderr);
        }
        let path = dir.join(format!("{label}.dat"));
        write_file(&path, &text)?;
        index_entries.push(format!(
            "{{\"label\": \"{label}\", \"path\": \"{label}.dat\", \"points\": {}}}",
            rows.len()
        ));
        paths.push(path);
    }
    let index = format!("{{\"series\": [{}]}}\n", index_entries.join(", "));
    write_file(&dir.join("series.json"), &index)?;
    Ok(paths)
}

/// Parse a series file back into `(sweep_value, esr, esr_stderr)` rows.
/// Inverse of [`emit_plot_data`] for a single label.
pub fn parse_series(text: &str) -> Result<Vec<(f64, f64, f64)>> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::SeriesParse {
                line: idx + 1,
                message: format!("expected 3 columns, found {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 3];
        for (slot, field) in values.iter_mut().zip(&fields) {
            *slot = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::SeriesParse {
                    line: idx + 1,
                    message: format!("invalid number `{field}`"),
                })?;
        }
        rows.push((values[0], values[1], values[2]));
    }
    Ok(rows)
}
