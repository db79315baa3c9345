//! Flat UTF-8 `key=value` config with `#` comments; unknown keys are
//! rejected so typos fail loudly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::TruncationPolicy;
use crate::hamiltonian::CflMode;
use crate::model::Model;
use crate::runs::RunParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("preset required")]
    MissingPreset,
    #[error("unknown key '{0}'")]
    UnknownKey(String),
    #[error("duplicate key '{0}'")]
    DuplicateKey(String),
    #[error("key '{key}': {message}")]
    Invalid { key: String, message: String },
    #[error("line {0}: expected key=value")]
    Malformed(usize),
}

const KNOWN_KEYS: &[&str] = &[
    "preset",
    "eps",
    "T",
    "dt",
    "dx",
    "lambda",
    "cfl_mode",
    "cfl_Lambda",
    "domain_halfwidth",
    "truncation",
    "snapshots",
    "eps_list",
    "dx_list",
    "dt_list",
    "dx_ref",
    "fit_eps_max",
    "tol_phi",
    "tol_J",
    "out_dir",
];

/// Fully resolved configuration with defaults filled. The reference
/// discretization `dt = 5e-4`, `dx = 5e-2`, `T = 1` applies when keys are
/// absent.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub preset: String,
    pub model: Model,
    pub eps: f64,
    pub params: RunParams,
    pub lambda: Option<f64>,
    pub eps_list: Vec<f64>,
    pub dx_list: Vec<f64>,
    pub dt_list: Vec<f64>,
    pub dx_ref: Option<f64>,
    pub fit_eps_max: f64,
    pub out_dir: PathBuf,
    pub digest: String,
    /// Keys the user set explicitly (as opposed to defaults).
    pub keys_set: BTreeSet<String>,
}

pub fn parse_config(text: &str) -> Result<ResolvedConfig, ConfigError> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Malformed(lineno + 1));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(ConfigError::DuplicateKey(key));
        }
    }

    let keys_set: BTreeSet<String> = map.keys().cloned().collect();
    let preset = map.remove("preset").ok_or(ConfigError::MissingPreset)?;
    let model = Model::preset(&preset).map_err(|e| ConfigError::Invalid {
        key: "preset".into(),
        message: e.to_string(),
    })?;

    let float = |map: &BTreeMap<String, String>, key: &str, default: f64| -> Result<f64, ConfigError> {
        match map.get(key) {
            None => Ok(default),
            Some(v) => v.parse::<f64>().map_err(|_| ConfigError::Invalid {
                key: key.into(),
                message: format!("'{v}' is not a number"),
            }),
        }
    };
    let float_opt = |map: &BTreeMap<String, String>, key: &str| -> Result<Option<f64>, ConfigError> {
        match map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| ConfigError::Invalid {
                    key: key.into(),
                    message: format!("'{v}' is not a number"),
                }),
        }
    };
    let list = |map: &BTreeMap<String, String>,
                key: &str,
                default: &[f64]|
     -> Result<Vec<f64>, ConfigError> {
        match map.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<f64>().map_err(|_| ConfigError::Invalid {
                        key: key.into(),
                        message: format!("'{s}' is not a number"),
                    })
                })
                .collect(),
        }
    };
    let positive = |key: &str, v: f64| -> Result<f64, ConfigError> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(ConfigError::Invalid {
                key: key.into(),
                message: format!("must be positive and finite, got {v}"),
            })
        }
    };

    let eps = float(&map, "eps", 1e-2)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(ConfigError::Invalid {
            key: "eps".into(),
            message: format!("must lie in (0, 1], got {eps}"),
        });
    }
    let t_final = positive("T", float(&map, "T", 1.0)?)?;
    let dt = positive("dt", float(&map, "dt", 5e-4)?)?;
    let dx = positive("dx", float(&map, "dx", 5e-2)?)?;
    let lambda = float_opt(&map, "lambda")?
        .map(|v| positive("lambda", v))
        .transpose()?;
    let cfl_mode = match map.get("cfl_mode").map(String::as_str) {
        None | Some("eps_fixed") => CflMode::EpsFixed,
        Some("ap_limit") => CflMode::ApLimit,
        Some("limit") => CflMode::Limit,
        Some(other) => {
            return Err(ConfigError::Invalid {
                key: "cfl_mode".into(),
                message: format!("expected eps_fixed | ap_limit | limit, got '{other}'"),
            })
        }
    };
    let big_lambda = float_opt(&map, "cfl_Lambda")?;
    if let Some(l) = big_lambda {
        if !(l > 0.0 && l < 1.0) {
            return Err(ConfigError::Invalid {
                key: "cfl_Lambda".into(),
                message: format!("must lie in (0, 1), got {l}"),
            });
        }
    }
    let domain_halfwidth = positive("domain_halfwidth", float(&map, "domain_halfwidth", 5.0)?)?;
    let policy = match map.get("truncation").map(String::as_str) {
        None | Some("extrapolated") => TruncationPolicy::Extrapolated,
        // padding 0 means "cover the whole run", filled in per run
        Some("shrinking") => TruncationPolicy::Shrinking { padding: 0 },
        Some(other) => {
            return Err(ConfigError::Invalid {
                key: "truncation".into(),
                message: format!("expected shrinking | extrapolated, got '{other}'"),
            })
        }
    };
    let snapshots = list(&map, "snapshots", &[])?;
    if let Some(&t) = snapshots
        .iter()
        .find(|&&t| !(0.0..=t_final * (1.0 + 1e-12)).contains(&t))
    {
        return Err(ConfigError::Invalid {
            key: "snapshots".into(),
            message: format!("time {t} outside [0, {t_final}]"),
        });
    }
    let eps_list = list(&map, "eps_list", &[1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6])?;
    let dx_list = list(&map, "dx_list", &[2e-1, 1e-1, 5e-2])?;
    let dt_list = list(&map, "dt_list", &[4e-3, 2e-3, 1e-3, 5e-4])?;
    for (key, l) in [("eps_list", &eps_list), ("dx_list", &dx_list), ("dt_list", &dt_list)] {
        if l.is_empty() {
            return Err(ConfigError::Invalid {
                key: key.into(),
                message: "list must not be empty".into(),
            });
        }
        if let Some(&v) = l.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(ConfigError::Invalid {
                key: key.into(),
                message: format!("entries must be positive, got {v}"),
            });
        }
    }
    if eps_list.iter().any(|&e| e > 1.0) {
        return Err(ConfigError::Invalid {
            key: "eps_list".into(),
            message: "entries must lie in (0, 1]".into(),
        });
    }
    let dx_ref = float_opt(&map, "dx_ref")?
        .map(|v| positive("dx_ref", v))
        .transpose()?;
    let fit_eps_max = positive("fit_eps_max", float(&map, "fit_eps_max", 1e-4)?)?;
    let mut tol = crate::trajectory::SolverTolerances::default();
    if let Some(v) = float_opt(&map, "tol_phi")? {
        tol.tol_phi_rel = positive("tol_phi", v)?;
    }
    if let Some(v) = float_opt(&map, "tol_J")? {
        tol.tol_j_rel = positive("tol_J", v)?;
    }
    let out_dir = PathBuf::from(map.get("out_dir").cloned().unwrap_or_else(|| "out".into()));

    let digest = {
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        format!("{:x}", h.finalize())
    };

    Ok(ResolvedConfig {
        preset,
        model,
        eps,
        params: RunParams {
            t_final,
            dt,
            dx,
            domain_halfwidth,
            policy,
            snapshot_times: snapshots,
            tol,
            cfl_mode,
            big_lambda,
            allow_unstable: false,
        },
        lambda,
        eps_list,
        dx_list,
        dt_list,
        dx_ref,
        fit_eps_max,
        out_dir,
        digest,
        keys_set,
    })
}
