use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crackgrowth::config::{audit_run, AuditConfig, RunConfig};
use crackgrowth::conformance::check_energy_continuity;
use crackgrowth::evolution::{energy_balance, run_evolution, EvolutionState, StateFile};
use crackgrowth::oracle::{run_case, CASES};
use crackgrowth::sif::sif_history_csv;
use crackgrowth::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "crackgrowth", version, about = "Quasi-static brittle crack growth in anti-plane shear")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an evolution and write its outputs.
    Run { config: PathBuf },
    /// Audit a saved run (state.json written by `run`).
    Audit {
        state_file: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        sampled_steps: usize,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rerun a configuration over several time steps.
    Sweep {
        config: PathBuf,
        /// Comma-separated time steps, as decimals or fractions like 1/32.
        #[arg(long, value_delimiter = ',', required = true)]
        delta_list: Vec<String>,
    },
    /// Run a built-in analytic verification case.
    Oracle {
        /// One of mode-iii, sif, release, balance, or all.
        case: String,
    },
}

fn parse_delta(s: &str) -> Result<f64, Error> {
    let bad = || Error::Config(format!("cannot parse time step {s:?}"));
    match s.trim().split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            Ok(a / b)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn prepare_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_run(cfg: &RunConfig, state: &EvolutionState, dir: &Path) -> Result<(), Error> {
    write(&dir.join("evolution.jsonl"), &state.to_jsonl())?;
    write(&dir.join("cracks.json"), &state.crack_snapshots_json())?;
    write(&dir.join("sif_history.csv"), &sif_history_csv(&state.sif_rows()))?;
    write(&dir.join("state.json"), &serde_json::to_string(&state.to_state_file())?)?;
    if cfg.output.fields {
        let fields = dir.join("fields");
        prepare_dir(&fields)?;
        for (s, u) in state.steps.iter().zip(&state.fields) {
            write(&fields.join(format!("step_{:04}.vtk", s.step)), &u.to_vtk("u"))?;
            write(&fields.join(format!("step_{:04}.csv", s.step)), &u.to_csv())?;
        }
    }
    Ok(())
}

fn cmd_run(path: &Path) -> Result<(), Error> {
    let cfg = RunConfig::load(path)?;
    let setup = cfg.setup()?;
    let dir = &cfg.output.dir;
    prepare_dir(dir)?;
    let state = match run_evolution(&setup) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("run failed: {e}");
            write(&dir.join("error.json"), &json!({ "error": e.to_string() }).to_string())?;
            return Ok(());
        }
    };
    write_run(&cfg, &state, dir)?;
    eprintln!("{} steps written to {}", state.steps.len(), dir.display());
    if cfg.audit.enabled {
        match audit_run(&state, &cfg.audit) {
            Ok(report) => {
                write(&dir.join("audit.json"), &serde_json::to_string_pretty(&report)?)?;
                eprintln!("audit {}", if report.pass { "passed" } else { "FAILED" });
            }
            Err(e) => eprintln!("audit failed to run: {e}"),
        }
    }
    Ok(())
}

fn cmd_audit(path: &Path, out: Option<&Path>, audit: AuditConfig) -> Result<(), Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: StateFile = serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad state file: {e}")))?;
    file.setup.validate()?;
    let report = EvolutionState::from_state_file(file).and_then(|state| audit_run(&state, &audit));
    let body = match report {
        Ok(r) => serde_json::to_string_pretty(&r)?,
        Err(e) => {
            eprintln!("audit failed to run: {e}");
            json!({ "error": e.to_string() }).to_string()
        }
    };
    match out {
        Some(p) => write(p, &body),
        None => {
            println!("{body}");
            Ok(())
        }
    }
}

fn cmd_sweep(path: &Path, deltas: &[String]) -> Result<(), Error> {
    let cfg = RunConfig::load(path)?;
    let deltas: Vec<f64> = deltas.iter().map(|d| parse_delta(d)).collect::<Result<_, _>>()?;
    let runs: Vec<RunConfig> = deltas.iter().map(|&d| cfg.with_delta(d)).collect();
    let setups = runs.iter().map(RunConfig::setup).collect::<Result<Vec<_>, _>>()?;
    prepare_dir(&cfg.output.dir)?;
    let mut rows = Vec::new();
    let mut prev: Option<EvolutionState> = None;
    for (delta, setup) in deltas.iter().zip(&setups) {
        match run_evolution(setup) {
            Ok(state) => {
                let b = energy_balance(&state);
                let continuity = prev.as_ref().map(|p| check_energy_continuity(p, &state));
                eprintln!("delta {delta}: largest balance residual {:.3e}", b.max_abs_residual);
                rows.push(json!({
                    "delta": delta,
                    "steps": state.steps.len(),
                    "balance": b,
                    "continuity_from_previous": continuity,
                    "final_surface": state.steps.last().map(|s| s.energy.surface),
                }));
                prev = Some(state);
            }
            Err(e) => {
                eprintln!("delta {delta}: run failed: {e}");
                rows.push(json!({ "delta": delta, "error": e.to_string() }));
                prev = None;
            }
        }
    }
    let body = serde_json::to_string_pretty(&json!({ "runs": rows }))?;
    write(&cfg.output.dir.join("sweep.json"), &body)?;
    println!("{body}");
    Ok(())
}

fn cmd_oracle(case: &str) -> Result<(), Error> {
    let cases: Vec<&str> = if case == "all" { CASES.to_vec() } else { vec![case] };
    if let Some(bad) = cases.iter().find(|c| !CASES.contains(c)) {
        return Err(Error::Config(format!("unknown oracle case {bad:?}; known: {}, all", CASES.join(", "))));
    }
    for c in cases {
        match run_case(c) {
            Ok(r) => println!("{}", serde_json::to_string_pretty(&r)?),
            Err(e) => eprintln!("oracle {c} failed to run: {e}"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Audit { state_file, out, sampled_steps, pairs, seed } => cmd_audit(
            state_file,
            out.as_deref(),
            AuditConfig { sampled_steps: *sampled_steps, monotone_pairs: *pairs, seed: *seed, ..AuditConfig::default() },
        ),
        Command::Sweep { config, delta_list } => cmd_sweep(config, delta_list),
        Command::Oracle { case } => cmd_oracle(case),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::SUCCESS
        }
    }
}
