//! Command dispatch: each CLI command maps to one experiment, writes CSV
//! artifacts plus a JSON manifest, and reports pass/fail.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{
    ap_study, convergence_study, detect_jumps, l1_time_error, truncation_compare, ua_study,
    ApStudySpec, ConvergenceStudySpec, StudyReport, TruncationCompareSpec, UaStudySpec,
};
use crate::cli::config::ResolvedConfig;
use crate::error::SolverError;
use crate::grid::{truncation_radius, TruncationPolicy};
use crate::stepper_eps::run_eps;
use crate::stepper_limit::run_limit;
use crate::trajectory::Trajectory;

/// Jump detector noise floor: scalar-solver dust sits orders of magnitude
/// below this, physical steps orders of magnitude above.
const JUMP_NOISE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    RunEps,
    RunLimit,
    ApStudy,
    ConvergenceStudy,
    UaStudy,
    Demo2d,
    CompareTruncation,
}

impl Command {
    pub fn parse(s: &str) -> Option<Command> {
        Some(match s {
            "run-eps" => Command::RunEps,
            "run-limit" => Command::RunLimit,
            "ap-study" => Command::ApStudy,
            "convergence-study" => Command::ConvergenceStudy,
            "ua-study" => Command::UaStudy,
            "demo-2d" => Command::Demo2d,
            "compare-truncation" => Command::CompareTruncation,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::RunEps => "run-eps",
            Command::RunLimit => "run-limit",
            Command::ApStudy => "ap-study",
            Command::ConvergenceStudy => "convergence-study",
            Command::UaStudy => "ua-study",
            Command::Demo2d => "demo-2d",
            Command::CompareTruncation => "compare-truncation",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

/// Manifest of one invocation; every emitted file is listed in `artifacts`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: String,
    pub config_digest: String,
    pub preset: String,
    pub resolved: serde_json::Value,
    pub artifacts: Vec<String>,
    pub duration_ms: u128,
    pub pass: bool,
    pub flags: serde_json::Value,
    pub error: Option<ErrorRecord>,
}

/// Exit status: 0 pass, 1 run failure, 2 config error, 3 study assertion
/// failure.
pub fn exit_code(manifest: &RunManifest) -> i32 {
    match &manifest.error {
        Some(e) if e.kind == "config" => 2,
        Some(_) => 1,
        None if !manifest.pass => 3,
        None => 0,
    }
}

/// Floats print with 17 significant digits so CSV artifacts round-trip
/// bit-exactly.
fn fmt_g(v: f64) -> String {
    format!("{:.16e}", v)
}

struct ArtifactWriter {
    dir: PathBuf,
    names: Vec<String>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> io::Result<ArtifactWriter> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            names: vec![],
        })
    }

    fn write_csv(
        &mut self,
        name: &str,
        header: &str,
        rows: impl IntoIterator<Item = Vec<f64>>,
    ) -> io::Result<()> {
        let mut text = String::new();
        text.push_str(header);
        text.push('\n');
        for row in rows {
            let mut first = true;
            for v in row {
                if !first {
                    text.push(',');
                }
                let _ = write!(text, "{}", fmt_g(v));
                first = false;
            }
            text.push('\n');
        }
        fs::write(self.dir.join(name), text)?;
        self.names.push(name.to_string());
        Ok(())
    }
}

fn trajectory_csvs(
    w: &mut ArtifactWriter,
    traj: &Trajectory,
    prefix: &str,
    dim: usize,
) -> io::Result<()> {
    let header = if dim == 2 {
        "t,I_or_J,argmin_x,argmin_y"
    } else {
        "t,I_or_J,argmin_x"
    };
    let rows = traj.scalar.iter().enumerate().map(|(k, &v)| {
        let t = (k + 1) as f64 * traj.dt;
        let am = traj.argmin[k + 1];
        if dim == 2 {
            vec![t, v, am[0], am[1]]
        } else {
            vec![t, v, am[0]]
        }
    });
    w.write_csv(&format!("{prefix}jtrace.csv"), header, rows)?;
    for (t, state) in &traj.snapshots {
        let name = format!("{prefix}snapshot_{t}.csv");
        let header = if dim == 2 { "x,y,u" } else { "x,u" };
        let g = state.grid();
        let rows = (0..g.len()).map(|i| {
            let p = g.point(i);
            let v = state.values()[i];
            if dim == 2 {
                vec![p[0], p[1], v]
            } else {
                vec![p[0], v]
            }
        });
        w.write_csv(&name, header, rows)?;
    }
    Ok(())
}

fn study_csv(
    w: &mut ArtifactWriter,
    name: &str,
    report: &StudyReport,
    params: &[&str],
    errors: &[&str],
) -> io::Result<()> {
    let header = params
        .iter()
        .chain(errors.iter())
        .copied()
        .collect::<Vec<_>>()
        .join(",");
    let rows = report.entries.iter().map(|e| {
        params
            .iter()
            .map(|p| e.param(p).unwrap_or(f64::NAN))
            .chain(errors.iter().map(|n| e.error(n).unwrap_or(f64::NAN)))
            .collect::<Vec<f64>>()
    });
    w.write_csv(name, &header, rows)
}

fn report_flags(report: &StudyReport) -> serde_json::Value {
    serde_json::json!({
        "slopes": report.slopes,
        "flags": report.flags,
        "reference": report.reference,
        "failures": report
            .entries
            .iter()
            .filter_map(|e| e.failure.as_ref().map(|f| (e.params.clone(), f.clone())))
            .collect::<Vec<_>>(),
    })
}

/// Execute a command against a resolved config; CSVs and `manifest.json` are
/// written under the config's `out_dir`.
pub fn dispatch(cmd: Command, cfg: &ResolvedConfig, command_line: &str, workers: usize) -> RunManifest {
    let start = Instant::now();
    let mut manifest = RunManifest {
        command: cmd.name().to_string(),
        command_line: command_line.to_string(),
        config_digest: cfg.digest.clone(),
        preset: cfg.preset.clone(),
        resolved: serde_json::Value::Null,
        artifacts: vec![],
        duration_ms: 0,
        pass: false,
        flags: serde_json::Value::Null,
        error: None,
    };
    let result = execute(cmd, cfg, workers, &mut manifest);
    if let Err(e) = result {
        let kind = match &e {
            DispatchError::Config(_) => "config",
            DispatchError::Io(_) => "io",
            DispatchError::Run(_) => "run",
        };
        manifest.error = Some(ErrorRecord {
            kind: kind.to_string(),
            message: e.to_string(),
        });
        manifest.pass = false;
    }
    manifest.duration_ms = start.elapsed().as_millis();
    let _ = write_manifest(cfg, &mut manifest);
    manifest
}

#[derive(Debug, thiserror::Error)]
enum DispatchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Run(#[from] SolverError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

fn write_manifest(cfg: &ResolvedConfig, manifest: &mut RunManifest) -> io::Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    manifest.artifacts.push("manifest.json".to_string());
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    fs::write(cfg.out_dir.join("manifest.json"), text)
}

fn resolved_json(cfg: &ResolvedConfig, extra: serde_json::Value) -> serde_json::Value {
    let p = &cfg.params;
    let mut v = serde_json::json!({
        "T": p.t_final,
        "dt": p.dt,
        "dx": p.dx,
        "eps": cfg.eps,
        "domain_halfwidth": p.domain_halfwidth,
        "truncation": match p.policy {
            TruncationPolicy::Extrapolated => "extrapolated",
            TruncationPolicy::Shrinking { .. } => "shrinking",
        },
        "tol_phi": p.tol.tol_phi_rel,
        "tol_J": p.tol.tol_j_rel,
        "snapshots": p.snapshot_times,
    });
    if let serde_json::Value::Object(dst) = &mut v {
        if let serde_json::Value::Object(src) = extra {
            dst.extend(src);
        }
    }
    v
}

fn execute(
    cmd: Command,
    cfg: &ResolvedConfig,
    workers: usize,
    manifest: &mut RunManifest,
) -> Result<(), DispatchError> {
    let mut writer = ArtifactWriter::new(&cfg.out_dir)?;
    // snapshot default: the final state
    let mut params = cfg.params.clone();
    if params.snapshot_times.is_empty() {
        params.snapshot_times = vec![params.t_final];
    }
    match cmd {
        Command::RunEps => {
            let run_cfg = params
                .eps_config(&cfg.model, cfg.eps)
                .map_err(config_err)?;
            let radius =
                truncation_radius(&cfg.model, &run_cfg.consts, cfg.eps, params.dt, params.t_final, params.dx)
                    .ok();
            manifest.resolved = resolved_json(
                cfg,
                serde_json::json!({
                    "n_t": run_cfg.cfl.n_t,
                    "lambda": run_cfg.cfl.lambda,
                    "cfl": run_cfg.cfl.conditions,
                    "constants": run_cfg.consts,
                    "truncation_radius": radius,
                    "domain_covers_radius": radius.map(|x| params.domain_halfwidth >= x),
                }),
            );
            let traj = run_eps(&run_cfg)?;
            trajectory_csvs(&mut writer, &traj, "", cfg.model.dim())?;
            manifest.flags = serde_json::json!({
                "final_I": traj.scalar.last(),
                "min_u_final": traj.min_values.last(),
                "solver": traj.stats,
            });
            manifest.pass = true;
        }
        Command::RunLimit => {
            let run_cfg = params.limit_config(&cfg.model).map_err(config_err)?;
            let radius =
                truncation_radius(&cfg.model, &run_cfg.consts, 0.0, params.dt, params.t_final, params.dx)
                    .ok();
            manifest.resolved = resolved_json(
                cfg,
                serde_json::json!({
                    "n_t": run_cfg.cfl.n_t,
                    "lambda": run_cfg.cfl.lambda,
                    "cfl": run_cfg.cfl.conditions,
                    "constants": run_cfg.consts,
                    "truncation_radius": radius,
                    "domain_covers_radius": radius.map(|x| params.domain_halfwidth >= x),
                }),
            );
            let traj = run_limit(&run_cfg)?;
            trajectory_csvs(&mut writer, &traj, "", cfg.model.dim())?;
            let jumps = detect_jumps(&traj.scalar, traj.dt, JUMP_NOISE_FLOOR);
            manifest.flags = serde_json::json!({
                "final_J": traj.scalar.last(),
                "max_abs_min_v": traj
                    .min_values
                    .iter()
                    .skip(1)
                    .fold(0.0f64, |m, v| m.max(v.abs())),
                "jumps": jumps,
                "solver": traj.stats,
            });
            manifest.pass = true;
        }
        Command::ApStudy => {
            params.snapshot_times = vec![];
            let spec = ApStudySpec {
                model: cfg.model.clone(),
                base: params,
                eps_list: cfg.eps_list.clone(),
                fit_eps_max: cfg.fit_eps_max,
                provenance: cfg.digest.clone(),
            };
            let report = ap_study(&spec, workers).map_err(DispatchError::Run)?;
            study_csv(
                &mut writer,
                "ap_errors.csv",
                &report,
                &["eps"],
                &["linf_u", "l1_I", "linf_I", "min_u"],
            )?;
            manifest.resolved = resolved_json(cfg, serde_json::json!({"eps_list": cfg.eps_list, "fit_eps_max": cfg.fit_eps_max}));
            manifest.flags = report_flags(&report);
            manifest.pass = report.all_pass();
        }
        Command::ConvergenceStudy => {
            params.snapshot_times = vec![];
            let lambda = cfg.lambda.unwrap_or(1e-2);
            let dt_ref = cfg.dt_list.iter().copied().fold(f64::INFINITY, f64::min) / 4.0;
            let spec = ConvergenceStudySpec {
                model: cfg.model.clone(),
                base: params,
                dt_list: cfg.dt_list.clone(),
                lambda,
                dt_ref,
                provenance: cfg.digest.clone(),
            };
            let report = convergence_study(&spec, workers).map_err(DispatchError::Run)?;
            study_csv(
                &mut writer,
                "convergence_errors.csv",
                &report,
                &["dt", "dx"],
                &["linf_v", "l1_J"],
            )?;
            manifest.resolved = resolved_json(
                cfg,
                serde_json::json!({"dt_list": cfg.dt_list, "lambda": lambda, "dt_ref": dt_ref}),
            );
            manifest.flags = report_flags(&report);
            manifest.pass = report.all_pass();
        }
        Command::UaStudy => {
            params.snapshot_times = vec![];
            let lambda = cfg.lambda.unwrap_or(5e-2);
            let dx_min = cfg.dx_list.iter().copied().fold(f64::INFINITY, f64::min);
            let dx_ref = cfg.dx_ref.unwrap_or(dx_min / 4.0);
            let spec = UaStudySpec {
                model: cfg.model.clone(),
                base: params,
                dx_list: cfg.dx_list.clone(),
                dx_ref,
                eps_list: cfg.eps_list.clone(),
                lambda,
                provenance: cfg.digest.clone(),
            };
            let report = ua_study(&spec, workers).map_err(DispatchError::Run)?;
            study_csv(
                &mut writer,
                "ua_errors.csv",
                &report,
                &["dx", "eps", "dt"],
                &["linf_u", "l1_I", "linf_I", "tv_I"],
            )?;
            manifest.resolved = resolved_json(
                cfg,
                serde_json::json!({"dx_list": cfg.dx_list, "dx_ref": dx_ref, "eps_list": cfg.eps_list, "lambda": lambda}),
            );
            manifest.flags = report_flags(&report);
            manifest.pass = report.all_pass();
        }
        Command::CompareTruncation => {
            params.snapshot_times = vec![];
            let spec = TruncationCompareSpec {
                model: cfg.model.clone(),
                base: params,
                eps_list: cfg.eps_list.clone(),
                provenance: cfg.digest.clone(),
            };
            let report = truncation_compare(&spec, workers).map_err(DispatchError::Run)?;
            study_csv(
                &mut writer,
                "truncation_diff.csv",
                &report,
                &["eps"],
                &["linf_u_diff", "l1_I_diff", "ref_linf_u", "ref_l1_I"],
            )?;
            manifest.resolved =
                resolved_json(cfg, serde_json::json!({"eps_list": cfg.eps_list}));
            manifest.flags = report_flags(&report);
            manifest.pass = report.all_pass();
        }
        Command::Demo2d => {
            if cfg.model.dim() != 2 {
                return Err(config_err(SolverError::Domain(format!(
                    "demo-2d needs a 2-dimensional preset, got '{}'",
                    cfg.preset
                ))));
            }
            let eps_pair = if cfg.keys_set.contains("eps_list") {
                cfg.eps_list.clone()
            } else {
                vec![1e-2, 1e-4]
            };
            let limit_cfg = params.limit_config(&cfg.model).map_err(config_err)?;
            let limit = run_limit(&limit_cfg)?;
            trajectory_csvs(&mut writer, &limit, "limit_", 2)?;
            let mut gaps = Vec::new();
            for &eps in &eps_pair {
                let run_cfg = params
                    .eps_config(&cfg.model, eps)
                    .map_err(config_err)?;
                let traj = run_eps(&run_cfg)?;
                trajectory_csvs(&mut writer, &traj, &format!("eps_{eps:e}_"), 2)?;
                let gap = l1_time_error(&traj.scalar, &limit.scalar, traj.dt)?;
                gaps.push((eps, gap));
            }
            gaps.sort_by(|a, b| b.0.total_cmp(&a.0));
            let decreasing = gaps.windows(2).all(|w| w[1].1 <= w[0].1);
            manifest.resolved = resolved_json(cfg, serde_json::json!({"eps_list": eps_pair}));
            manifest.flags = serde_json::json!({
                "l1_I_vs_J": gaps,
                "l1_gap_decreases": decreasing,
                "argmin_initial": limit.argmin.first(),
                "argmin_final": limit.argmin.last(),
                "jumps": detect_jumps(&limit.scalar, limit.dt, JUMP_NOISE_FLOOR),
            });
            manifest.pass = decreasing;
        }
    }
    manifest.artifacts = writer.names;
    Ok(())
}

fn config_err(e: SolverError) -> DispatchError {
    DispatchError::Config(e.to_string())
}
