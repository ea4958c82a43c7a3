//! Scenario configuration: a flat sectioned key-value text format.
//!
//! Grammar (line oriented, UTF-8):
//!
//! ```text
//! file    := line*
//! line    := blank | comment | section | entry
//! comment := '#' <anything>
//! section := '[' name ']'
//! entry   := key '=' value        # only inside a section
//! value   := scalar | list        # lists are comma separated
//! ```
//!
//! Unknown sections or keys, duplicate keys, and type errors are rejected
//! with the offending line number. Absent keys fall back to the paper
//! experiment defaults, except the two sweep grids which stay unset so a
//! run is driven by exactly one of them. `serialize` emits a canonical
//! form: fixed section and key order, shortest round-trip float formatting,
//! so `parse(serialize(c)) == c` and the config hash is stable.

use std::collections::HashSet;

use crate::channel::TauMode;
use crate::metrics::SinrForm;
use crate::modulation::Modulation;
use crate::precoders::{BetaMode, PrecoderKind};
use crate::{Error, Result};

/// Full description of a sweep run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    // [network]
    pub n_aps: usize,
    pub n_users: usize,
    pub side_m: f64,
    pub f_mhz: f64,
    pub h_ap_m: f64,
    pub h_user_m: f64,
    // [channel]
    pub shadow_sigma_db: f64,
    pub d0_m: f64,
    pub d1_m: f64,
    pub sigma_e2: f64,
    pub t0_k: f64,
    pub boltzmann: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub tau_mode: TauMode,
    // [clustering]
    pub l_aps: usize,
    pub cluster_max: usize,
    pub n_a: usize,
    // [precoding]
    pub modulation: Modulation,
    pub beta_mode: BetaMode,
    pub square_beta_d: bool,
    pub sinr_form: SinrForm,
    pub precoders: Vec<PrecoderKind>,
    // [sweep]
    pub snr_grid_db: Option<Vec<f64>>,
    pub csit_grid: Option<Vec<f64>>,
    pub snr_db: f64,
    // [monte_carlo]
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: u64,
    // [output]
    pub output_dir: String,
}

impl Default for ScenarioConfig {
    /// Paper experiment shape: 128 APs and 24 users on a 20 km square,
    /// |A_k| = 24, |P_k| = 10, σ_e² = 0.01, 100×100 Monte Carlo.
    fn default() -> Self {
        Self {
            n_aps: 128,
            n_users: 24,
            side_m: 20_000.0,
            f_mhz: 1900.0,
            h_ap_m: 15.0,
            h_user_m: 1.65,
            shadow_sigma_db: 8.0,
            d0_m: 10.0,
            d1_m: 50.0,
            sigma_e2: 0.01,
            t0_k: 290.0,
            boltzmann: 1.381e-23,
            bandwidth_hz: 50e6,
            noise_figure_db: 10.0,
            tau_mode: TauMode::Paper,
            l_aps: 24,
            cluster_max: 10,
            n_a: 1,
            modulation: Modulation::Qpsk,
            beta_mode: BetaMode::Paper,
            square_beta_d: false,
            sinr_form: SinrForm::Printed,
            precoders: PrecoderKind::ALL_LABELS
                .iter()
                .map(|l| l.parse().expect("built-in labels parse"))
                .collect(),
            snr_grid_db: Some(vec![0.0, 5.0, 10.0, 15.0, 20.0]),
            csit_grid: None,
            snr_db: 15.0,
            n_outer: 100,
            n_inner: 100,
            seed: 1,
            output_dir: "out".to_string(),
        }
    }
}

const SECTIONS: [&str; 7] = [
    "network",
    "channel",
    "clustering",
    "precoding",
    "sweep",
    "monte_carlo",
    "output",
];

fn parse_scalar<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| Error::ConfigParse {
        line,
        message: format!("invalid value `{}` for key `{key}`", value.trim()),
    })
}

fn parse_f64(value: &str, line: usize, key: &str) -> Result<f64> {
    let parsed: f64 = parse_scalar(value, line, key)?;
    if !parsed.is_finite() {
        return Err(Error::ConfigParse {
            line,
            message: format!("key `{key}` must be a finite number"),
        });
    }
    Ok(parsed)
}

fn parse_f64_list(value: &str, line: usize, key: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::ConfigParse {
                    line,
                    message: format!("invalid number `{s}` in list `{key}`"),
                }
            })
        })
        .collect()
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::ConfigParse {
            line,
            message: format!("invalid bool `{other}` for key `{key}` (use true/false)"),
        }),
    }
}

/// Parse a scenario from the key-value text format.
pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let mut cfg = ScenarioConfig {
        // Grids are chosen explicitly per run.
        snr_grid_db: None,
        csit_grid: None,
        ..ScenarioConfig::default()
    };
    let mut section: Option<&str> = None;
    let mut seen: HashSet<(String, String)> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: "unterminated section header".to_string(),
                });
            };
            let name = name.trim();
            match SECTIONS.iter().find(|s| **s == name) {
                Some(known) => section = Some(known),
                None => {
                    return Err(Error::ConfigParse {
                        line: line_no,
                        message: format!("unknown section `{name}`"),
                    })
                }
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let Some(section) = section else {
            return Err(Error::ConfigParse {
                line: line_no,
                message: format!("key `{key}` appears before any section header"),
            });
        };
        if !seen.insert((section.to_string(), key.to_string())) {
            return Err(Error::ConfigParse {
                line: line_no,
                message: format!("duplicate key `{key}` in section `[{section}]`"),
            });
        }

        match (section, key) {
            ("network", "n_aps") => cfg.n_aps = parse_scalar(value, line_no, key)?,
            ("network", "n_users") => cfg.n_users = parse_scalar(value, line_no, key)?,
            ("network", "side_m") => cfg.side_m = parse_f64(value, line_no, key)?,
            ("network", "f_mhz") => cfg.f_mhz = parse_f64(value, line_no, key)?,
            ("network", "h_ap_m") => cfg.h_ap_m = parse_f64(value, line_no, key)?,
            ("network", "h_user_m") => cfg.h_user_m = parse_f64(value, line_no, key)?,
            ("channel", "shadow_sigma_db") => {
                cfg.shadow_sigma_db = parse_scalar(value, line_no, key)?
            }
            ("channel", "d0_m") => cfg.d0_m = parse_f64(value, line_no, key)?,
            ("channel", "d1_m") => cfg.d1_m = parse_f64(value, line_no, key)?,
            ("channel", "sigma_e2") => cfg.sigma_e2 = parse_f64(value, line_no, key)?,
            ("channel", "t0_k") => cfg.t0_k = parse_f64(value, line_no, key)?,
            ("channel", "boltzmann") => cfg.boltzmann = parse_f64(value, line_no, key)?,
            ("channel", "bandwidth_hz") => cfg.bandwidth_hz = parse_f64(value, line_no, key)?,
            ("channel", "noise_figure_db") => {
                cfg.noise_figure_db = parse_f64(value, line_no, key)?
            }
            ("channel", "tau_mode") => {
                cfg.tau_mode = match value {
                    "paper" => TauMode::Paper,
                    "consistent" => TauMode::Consistent,
                    other => {
                        return Err(Error::ConfigParse {
                            line: line_no,
                            message: format!("invalid tau_mode `{other}` (paper|consistent)"),
                        })
                    }
                }
            }
            ("clustering", "l_aps") => cfg.l_aps = parse_scalar(value, line_no, key)?,
            ("clustering", "cluster_max") => cfg.cluster_max = parse_scalar(value, line_no, key)?,
            ("clustering", "n_a") => cfg.n_a = parse_scalar(value, line_no, key)?,
            ("precoding", "modulation") => {
                cfg.modulation = value.parse().map_err(|_| Error::ConfigParse {
                    line: line_no,
                    message: format!("invalid modulation `{value}` (qpsk|qam16)"),
                })?
            }
            ("precoding", "beta_mode") => {
                cfg.beta_mode = match value {
                    "paper" => BetaMode::Paper,
                    "classic" => BetaMode::Classic,
                    other => {
                        return Err(Error::ConfigParse {
                            line: line_no,
                            message: format!("invalid beta_mode `{other}` (paper|classic)"),
                        })
                    }
                }
            }
            ("precoding", "square_beta_d") => {
                cfg.square_beta_d = parse_bool(value, line_no, key)?
            }
            ("precoding", "sinr_form") => {
                cfg.sinr_form = match value {
                    "printed" => SinrForm::Printed,
                    "coherent" => SinrForm::Coherent,
                    other => {
                        return Err(Error::ConfigParse {
                            line: line_no,
                            message: format!("invalid sinr_form `{other}` (printed|coherent)"),
                        })
                    }
                }
            }
            ("precoding", "precoders") => {
                cfg.precoders = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<PrecoderKind>().map_err(|_| Error::ConfigParse {
                            line: line_no,
                            message: format!("unknown precoder label `{s}`"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            ("sweep", "snr_grid_db") => cfg.snr_grid_db = Some(parse_f64_list(value, line_no, key)?),
            ("sweep", "csit_grid") => cfg.csit_grid = Some(parse_f64_list(value, line_no, key)?),
            ("sweep", "snr_db") => cfg.snr_db = parse_f64(value, line_no, key)?,
            ("monte_carlo", "n_outer") => cfg.n_outer = parse_scalar(value, line_no, key)?,
            ("monte_carlo", "n_inner") => cfg.n_inner = parse_scalar(value, line_no, key)?,
            ("monte_carlo", "seed") => cfg.seed = parse_scalar(value, line_no, key)?,
            ("output", "dir") => cfg.output_dir = value.to_string(),
            (section, key) => {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("unknown key `{key}` in section `[{section}]`"),
                })
            }
        }
    }
    Ok(cfg)
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl ScenarioConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_config_str(&text)
    }

    /// Canonical text form; parsing it back yields an equal config.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let labels: Vec<&str> = self.precoders.iter().map(|p| p.label()).collect();
        out.push_str("[network]\n");
        out.push_str(&format!("n_aps = {}\n", self.n_aps));
        out.push_str(&format!("n_users = {}\n", self.n_users));
        out.push_str(&format!("side_m = {}\n", self.side_m));
        out.push_str(&format!("f_mhz = {}\n", self.f_mhz));
        out.push_str(&format!("h_ap_m = {}\n", self.h_ap_m));
        out.push_str(&format!("h_user_m = {}\n", self.h_user_m));
        out.push_str("\n[channel]\n");
        out.push_str(&format!("shadow_sigma_db = {}\n", self.shadow_sigma_db));
        out.push_str(&format!("d0_m = {}\n", self.d0_m));
        out.push_str(&format!("d1_m = {}\n", self.d1_m));
        out.push_str(&format!("sigma_e2 = {}\n", self.sigma_e2));
        out.push_str(&format!("t0_k = {}\n", self.t0_k));
        out.push_str(&format!("boltzmann = {}\n", self.boltzmann));
        out.push_str(&format!("bandwidth_hz = {}\n", self.bandwidth_hz));
        out.push_str(&format!("noise_figure_db = {}\n", self.noise_figure_db));
        out.push_str(&format!(
            "tau_mode = {}\n",
            match self.tau_mode {
                TauMode::Paper => "paper",
                TauMode::Consistent => "consistent",
            }
        ));
        out.push_str("\n[clustering]\n");
        out.push_str(&format!("l_aps = {}\n", self.l_aps));
        out.push_str(&format!("cluster_max = {}\n", self.cluster_max));
        out.push_str(&format!("n_a = {}\n", self.n_a));
        out.push_str("\n[precoding]\n");
        out.push_str(&format!("modulation = {}\n", self.modulation));
        out.push_str(&format!(
            "beta_mode = {}\n",
            match self.beta_mode {
                BetaMode::Paper => "paper",
                BetaMode::Classic => "classic",
            }
        ));
        out.push_str(&format!("square_beta_d = {}\n", self.square_beta_d));
        out.push_str(&format!(
            "sinr_form = {}\n",
            match self.sinr_form {
                SinrForm::Printed => "printed",
                SinrForm::Coherent => "coherent",
            }
        ));
        out.push_str(&format!("precoders = {}\n", labels.join(", ")));
        out.push_str("\n[sweep]\n");
        if let Some(grid) = &self.snr_grid_db {
            out.push_str(&format!("snr_grid_db = {}\n", fmt_list(grid)));
        }
        if let Some(grid) = &self.csit_grid {
            out.push_str(&format!("csit_grid = {}\n", fmt_list(grid)));
        }
        out.push_str(&format!("snr_db = {}\n", self.snr_db));
        out.push_str("\n[monte_carlo]\n");
        out.push_str(&format!("n_outer = {}\n", self.n_outer));
        out.push_str(&format!("n_inner = {}\n", self.n_inner));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str("\n[output]\n");
        out.push_str(&format!("dir = {}\n", self.output_dir));
        out
    }

    /// FNV-1a over the canonical serialization; stable across runs and
    /// platforms. The output directory is masked out so the hash
    /// identifies the experiment, not where its files land.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = "-".to_string();
        let mut h: u64 = 0xcbf29ce484222325;
        for byte in canonical.serialize().bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    /// Check the structural invariants shared by both sweeps.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.n_aps == 0 || self.n_users == 0 {
            return fail("n_aps and n_users must be at least 1".into());
        }
        if !(self.side_m > 0.0 && self.side_m.is_finite()) {
            return fail("side_m must be positive and finite".into());
        }
        if !(self.f_mhz > 0.0 && self.h_ap_m > 0.0 && self.h_user_m > 0.0) {
            return fail("f_mhz, h_ap_m, h_user_m must be positive".into());
        }
        if !(self.d0_m > 0.0 && self.d0_m < self.d1_m) {
            return fail("need 0 < d0_m < d1_m".into());
        }
        if !self.shadow_sigma_db.is_finite() || self.shadow_sigma_db < 0.0 {
            return fail("shadow_sigma_db must be a nonnegative number".into());
        }
        if !(0.0..1.0).contains(&self.sigma_e2) {
            return fail("sigma_e2 must be in [0, 1)".into());
        }
        if !(self.t0_k > 0.0 && self.boltzmann > 0.0 && self.bandwidth_hz > 0.0) {
            return fail("noise parameters must be positive".into());
        }
        if !self.noise_figure_db.is_finite() {
            return fail("noise_figure_db must be finite".into());
        }
        if self.l_aps == 0 || self.l_aps > self.n_aps {
            return fail(format!(
                "l_aps must be in 1..={}, got {}",
                self.n_aps, self.l_aps
            ));
        }
        if self.cluster_max == 0 || self.cluster_max > self.n_users {
            return fail(format!(
                "cluster_max must be in 1..={}, got {}",
                self.n_users, self.cluster_max
            ));
        }
        if self.n_a == 0 {
            return fail("n_a must be at least 1".into());
        }
        if self.precoders.is_empty() {
            return fail("precoders list must not be empty".into());
        }
        match (&self.snr_grid_db, &self.csit_grid) {
            (Some(_), Some(_)) => {
                return fail("exactly one of snr_grid_db / csit_grid may be set".into())
            }
            (None, None) => {
                return fail("one of snr_grid_db / csit_grid must be set".into())
            }
            (Some(grid), None) | (None, Some(grid)) => {
                if grid.is_empty() {
                    return fail("sweep grid must not be empty".into());
                }
                if grid.iter().any(|v| !v.is_finite()) {
                    return fail("sweep grid values must be finite".into());
                }
            }
        }
        if let Some(grid) = &self.csit_grid {
            if grid.iter().any(|v| !(0.0..1.0).contains(v)) {
                return fail("csit_grid values must be in [0, 1)".into());
            }
        }
        if !self.snr_db.is_finite() {
            return fail("snr_db must be finite".into());
        }
        if self.n_outer == 0 || self.n_inner == 0 {
            return fail("n_outer and n_inner must be at least 1".into());
        }
        if self.n_outer >= (1 << 28) || self.n_inner >= (1 << 28) {
            return fail("Monte Carlo counts must fit in 28 bits".into());
        }
        if self.output_dir.is_empty() {
            return fail("output dir must not be empty".into());
        }
        Ok(())
    }
}
