//! One module per subcommand; [`run`] wires them to the output directory.

pub mod analyze;
pub mod solve;
pub mod sweep;
pub mod train;

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::output::OutputDir;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolveEnergy,
    SolvePerf,
    Train,
    Analyze,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveEnergy => "solve-energy",
            Command::SolvePerf => "solve-perf",
            Command::Train => "train",
            Command::Analyze => "analyze",
            Command::Sweep => "sweep",
        }
    }
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_FALLBACK: u8 = 2;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub exit_code: u8,
    /// Short human-readable result.
    pub message: String,
}

/// Computes everything first and only then creates the output directory, so
/// a failing command leaves nothing behind.
pub fn run(
    command: Command,
    cfg: &RunConfig,
    out: &std::path::Path,
    jobs: usize,
) -> CliResult<Outcome> {
    let start = Instant::now();
    let (files, exit_code, message) = match command {
        Command::SolveEnergy => {
            let o = solve::solve_energy(cfg)?;
            let code = if o.report.any_fallback {
                EXIT_FALLBACK
            } else {
                EXIT_OK
            };
            let msg = format!(
                "{} workers, total round energy {:.6} J{}",
                o.report.workers.len(),
                o.report.total_round_energy_j,
                if o.report.any_fallback {
                    ", fallback used"
                } else {
                    ""
                }
            );
            (
                vec![
                    file_json("plans.json", &o.report)?,
                    file_csv("solver_trace.csv", &o.trace)?,
                ],
                code,
                msg,
            )
        }
        Command::SolvePerf => {
            let o = solve::solve_perf(cfg)?;
            let msg = format!(
                "round time {:.6} s, proxy {:.6} ({:.4} of sweep best)",
                o.report.round_time_s, o.report.proxy_objective, o.report.relative_to_sweep
            );
            (
                vec![
                    file_json("solution.json", &o.report)?,
                    file_csv("dca_trace.csv", &o.trace)?,
                ],
                EXIT_OK,
                msg,
            )
        }
        Command::Train => {
            let data = train::load_mnist(cfg)?;
            let result = train::run(&cfg.experiment(), &data)?;
            let s = &result.summary;
            let msg = format!(
                "{} rounds, test accuracy {:.4}, mean energy {:.4} J",
                s.rounds, s.final_test_accuracy, s.mean_energy_per_worker
            );
            let summary = train::TrainSummary {
                config: cfg.to_flat_json(),
                summary: s,
            };
            (
                vec![
                    ("rounds.csv".to_string(), train::rounds_csv(&result)?),
                    file_json("summary.json", &summary)?,
                ],
                EXIT_OK,
                msg,
            )
        }
        Command::Analyze => {
            let rows = analyze::run_checks(cfg)?;
            let failed = rows.iter().filter(|r| !r.pass).count();
            let mut msg = String::new();
            for r in &rows {
                msg.push_str(&format!(
                    "{} {:<36} {:.3e} (tol {:.1e})  {}\n",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.check,
                    r.value,
                    r.tolerance,
                    r.detail
                ));
            }
            msg.push_str(&format!(
                "{} of {} checks passed",
                rows.len() - failed,
                rows.len()
            ));
            (
                vec![
                    file_json("analysis.json", &rows)?,
                    file_csv("analysis.csv", &rows)?,
                ],
                if failed == 0 { EXIT_OK } else { EXIT_ERROR },
                msg,
            )
        }
        Command::Sweep => {
            let data = train::load_mnist(cfg)?;
            let outcomes = sweep::execute(sweep::grid(cfg), &data, jobs)?;
            let status = sweep::status_rows(&outcomes);
            let plot = sweep::plot_rows(cfg, &outcomes);
            let table = sweep::energy_table(&plot);
            let failed = status.iter().filter(|s| s.status != "ok").count();
            let mut files = vec![
                file_csv("runs.csv", &status)?,
                file_csv("plot_data.csv", &plot)?,
            ];
            if !table.is_empty() {
                files.push(file_csv("energy_table.csv", &table)?);
            }
            for o in &outcomes {
                if let Ok(r) = &o.result {
                    files.push((
                        format!("runs/{}/rounds.csv", o.spec.id),
                        train::rounds_csv(r)?,
                    ));
                    files.push(file_json(
                        &format!("runs/{}/summary.json", o.spec.id),
                        &r.summary,
                    )?);
                }
            }
            let msg = format!("{} runs, {} failed", status.len(), failed);
            (files, if failed == 0 { EXIT_OK } else { EXIT_ERROR }, msg)
        }
    };
    let dir = OutputDir::create(out, command.name(), cfg)?;
    for (name, bytes) in &files {
        dir.write(name, bytes)?;
    }
    dir.write_timing(start.elapsed().as_secs_f64())?;
    Ok(Outcome {
        dir: dir.path().to_path_buf(),
        exit_code,
        message,
    })
}

fn file_json<T: Serialize + ?Sized>(name: &str, value: &T) -> CliResult<(String, Vec<u8>)> {
    Ok((name.to_string(), crate::output::json_bytes(value)?))
}

fn file_csv<T: Serialize>(name: &str, rows: &[T]) -> CliResult<(String, Vec<u8>)> {
    Ok((name.to_string(), crate::output::csv_bytes(rows)?))
}
