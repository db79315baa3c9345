use std::fs;
use std::io::Read;
use std::process::ExitCode;

use clap::Parser;

use apsolve_core::cli::{dispatch, exit_code, parse_config, Command};

/// Finite-difference experiment harness for stiff Lotka-Volterra population
/// models in Hopf-Cole form and their constrained Hamilton-Jacobi limit.
#[derive(Parser)]
#[command(name = "apsolve", version, about)]
struct Args {
    /// One of: run-eps, run-limit, ap-study, convergence-study, ua-study,
    /// demo-2d, compare-truncation
    command: String,
    /// Path to a key=value config file ("-" or omitted reads stdin)
    config: Option<String>,
    /// Override the config's out_dir
    #[arg(long)]
    out_dir: Option<String>,
    /// Worker threads for study fan-out (default: APSOLVE_THREADS or all
    /// cores)
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let command_line = argv.join(" ");
    let args = Args::parse();

    let Some(cmd) = Command::parse(&args.command) else {
        eprintln!(
            "unknown command '{}'; expected one of run-eps, run-limit, ap-study, \
             convergence-study, ua-study, demo-2d, compare-truncation",
            args.command
        );
        return ExitCode::from(2);
    };

    let text = match &args.config {
        Some(path) if path != "-" => match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read config '{path}': {e}");
                return ExitCode::from(2);
            }
        },
        _ => {
            let mut buf = String::new();
            if std::io::stdin().read_to_string(&mut buf).is_err() {
                buf.clear();
            }
            buf
        }
    };

    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(dir) = args.out_dir {
        cfg.out_dir = dir.into();
    }

    let workers = args
        .workers
        .or_else(|| {
            std::env::var("APSOLVE_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1);

    let manifest = dispatch(cmd, &cfg, &command_line, workers);
    match &manifest.error {
        Some(e) => eprintln!("{}: {} error: {}", cmd.name(), e.kind, e.message),
        None => {
            println!(
                "{}: {} in {} ms; artifacts in {}",
                cmd.name(),
                if manifest.pass { "pass" } else { "FAIL" },
                manifest.duration_ms,
                cfg.out_dir.display()
            );
            if let Some(flags) = manifest.flags.as_object() {
                if let Some(slopes) = flags.get("slopes").and_then(|s| s.as_array()) {
                    for s in slopes {
                        println!(
                            "  slope {}: {} (expected {} +- {}) {}",
                            s["name"].as_str().unwrap_or("?"),
                            s["slope"],
                            s["expected"],
                            s["tolerance"],
                            if s["pass"].as_bool().unwrap_or(false) {
                                "ok"
                            } else {
                                "FAIL"
                            }
                        );
                    }
                }
                if let Some(list) = flags.get("flags").and_then(|s| s.as_array()) {
                    for f in list {
                        if let Some(pair) = f.as_array() {
                            println!(
                                "  {}: {}",
                                pair[0].as_str().unwrap_or("?"),
                                if pair[1].as_bool().unwrap_or(false) {
                                    "ok"
                                } else {
                                    "FAIL"
                                }
                            );
                        }
                    }
                }
            }
        }
    }
    ExitCode::from(exit_code(&manifest) as u8)
}
