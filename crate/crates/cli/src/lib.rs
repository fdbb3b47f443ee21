//! Command implementations behind the `inmart` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use inmart::bench::{sweep, BenchConfig, BenchRow};
use inmart::config::{Method, Prepared, RunConfig};
use inmart::ensemble::{self, bin_averages, martingale_diagnostic, photocurrent_oracle, EnsembleEstimate};
use inmart::linalg::outer;
use inmart::master_eq::{integrate, trace_drift, DensitySeries};
use inmart::trajectory::sample_path;
use inmart::Error;

#[derive(Parser, Debug)]
#[command(name = "inmart", version, about = "Influence-martingale trajectory simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the oracle and/or the trajectory ensemble.
    Run(CommonArgs),
    /// Oracle vs trajectory timing sweep over chain sizes.
    Bench(CommonArgs),
    /// Check the model for consistency.
    Validate(CommonArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: msg.into(),
        }
    }
    fn config(e: impl std::fmt::Display) -> Self {
        let msg = e.to_string();
        let message = if msg.starts_with("configuration error") {
            msg
        } else {
            format!("configuration error: {msg}")
        };
        Self { code: 2, message }
    }
    fn simulation(e: impl std::fmt::Display) -> Self {
        Self {
            code: 3,
            message: format!("simulation failed: {e}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::simulation(format!("{e:#}"))
    }
}

pub fn execute(cli: Cli) -> Result<String, Failure> {
    match cli.command {
        Command::Run(args) => with_threads(args.threads, || cmd_run(&args)),
        Command::Bench(args) => with_threads(args.threads, || cmd_bench(&args)),
        Command::Validate(args) => cmd_validate(&args),
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T, Failure> + Send) -> Result<T, Failure> {
    match threads {
        None => f(),
        Some(0) => Err(Failure::config("--threads must be at least 1")),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Failure::simulation(e.to_string()))?
            .install(f),
    }
}

fn load(args: &CommonArgs) -> Result<RunConfig, Failure> {
    RunConfig::load(&args.config).map_err(Failure::config)
}

fn out_dir(args: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn cmd_validate(args: &CommonArgs) -> Result<String, Failure> {
    let cfg = load(args)?;
    let model = cfg.build_model().map_err(Failure::config)?;
    let report = model.validate();
    if report.is_empty() {
        Ok(format!(
            "model valid (dimension {}, {} channels)",
            model.dim(),
            model.channels().len()
        ))
    } else {
        Err(Failure::invalid(format!("model invalid:\n{report}")))
    }
}

/// In-memory output files, written only once every computation succeeded.
#[derive(Default)]
struct Outputs {
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn csv(
        &mut self,
        name: impl Into<String>,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> anyhow::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        self.files.insert(name.into(), String::from_utf8(w.into_inner()?)?);
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        self.files
            .insert(name.into(), serde_json::to_string_pretty(value)? + "\n");
        Ok(())
    }

    fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, body) in &self.files {
            fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
        }
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Observable file stem: alphanumerics, `-` and `_` kept, the rest mapped to `_`.
fn stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Serialize)]
struct ComparisonSummary {
    points: usize,
    outside_band: usize,
    fraction_outside: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a RunConfig,
    model_dim: usize,
    channels: usize,
    horizon: f64,
    method: Method,
    grid_points: usize,
    realizations: Option<u64>,
    master_seed: Option<u64>,
    martingale_diagnostic: Option<f64>,
    jump_histogram: Option<Vec<u64>>,
    oracle_trace_drift: Option<f64>,
    oracle_min_eigenvalue: Option<f64>,
    comparisons: BTreeMap<String, ComparisonSummary>,
}

#[derive(Serialize)]
struct Timing {
    oracle_ms: Option<f64>,
    trajectories_ms: Option<f64>,
    threads: usize,
}

pub fn cmd_run(args: &CommonArgs) -> Result<String, Failure> {
    let cfg = load(args)?;
    let prepared = cfg.prepare(args.seed).map_err(Failure::config)?;
    let dir = out_dir(args, &cfg);
    let outputs = run_prepared(&cfg, &prepared)?;
    outputs.write(&dir).map_err(|e| Failure::simulation(format!("{e:#}")))?;
    Ok(format!("wrote {} files to {}", outputs.files.len(), dir.display()))
}

fn run_prepared(cfg: &RunConfig, p: &Prepared) -> Result<Outputs, Failure> {
    let mut out = Outputs::default();
    let observables = &p.ensemble.observables;
    let want_oracle = p.method != Method::Trajectories;
    let want_traj = p.method != Method::Oracle;

    let mut oracle: Option<DensitySeries> = None;
    let mut oracle_ms = None;
    if want_oracle {
        let start = Instant::now();
        let rho0 = outer(&p.psi0, &p.psi0).map_err(Failure::simulation)?;
        let series = integrate(&p.model, &rho0, &p.grid, p.oracle_dt).map_err(Failure::simulation)?;
        oracle_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        let mins = series.min_eigenvalues().map_err(Failure::simulation)?;
        let mut header = vec!["t".to_string()];
        header.extend(observables.iter().map(|o| o.name.clone()));
        header.extend(["trace".to_string(), "min_eigenvalue".to_string()]);
        let rows = (0..series.len()).map(|k| {
            let mut row = vec![num(series.times[k])];
            row.extend(observables.iter().map(|o| num(o.expectation(&series.states[k]))));
            row.push(num(series.states[k].trace().re));
            row.push(num(mins[k]));
            row
        });
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.csv("oracle.csv", &header, rows)?;
        oracle = Some(series);
    }

    let mut estimate: Option<EnsembleEstimate> = None;
    let mut traj_ms = None;
    if want_traj {
        let start = Instant::now();
        let est = ensemble::run(&p.model, &p.psi0, &p.ensemble).map_err(Failure::simulation)?;
        traj_ms = Some(start.elapsed().as_secs_f64() * 1e3);
        for obs in &est.observables {
            let rows = (0..est.times.len()).map(|k| {
                vec![
                    num(est.times[k]),
                    num(obs.mean[k]),
                    num(obs.stderr[k]),
                    num(obs.stddev[k]),
                ]
            });
            out.csv(
                format!("obs_{}.csv", stem(&obs.name)),
                &["t", "mean", "stderr", "stddev"],
                rows,
            )?;
        }
        let rows = (0..est.times.len()).map(|k| {
            vec![
                num(est.times[k]),
                num(est.mean_mu[k]),
                num(est.stderr_mu[k]),
                num(est.mean_abs_mu[k]),
            ]
        });
        out.csv("martingale.csv", &["t", "mean_mu", "stderr_mu", "mean_abs_mu"], rows)?;
        for index in 0..p.dump_trajectories {
            dump_trajectory(&mut out, p, index)?;
        }
        estimate = Some(est);
    }

    let mut comparisons = BTreeMap::new();
    if let (Some(series), Some(est)) = (&oracle, &estimate) {
        for (obs, series_est) in observables.iter().zip(&est.observables) {
            let mut outside = 0;
            let rows: Vec<Vec<String>> = (0..est.times.len())
                .map(|k| {
                    let exact = obs.expectation(&series.states[k]);
                    let diff = series_est.mean[k] - exact;
                    let inside = diff.abs() <= 2.0 * series_est.stderr[k] + 1e-12;
                    outside += usize::from(!inside);
                    vec![
                        num(est.times[k]),
                        num(exact),
                        num(series_est.mean[k]),
                        num(series_est.stderr[k]),
                        num(diff),
                        u8::from(inside).to_string(),
                    ]
                })
                .collect();
            out.csv(
                format!("comparison_{}.csv", stem(&obs.name)),
                &["t", "oracle", "mean", "stderr", "diff", "inside_band"],
                rows,
            )?;
            comparisons.insert(
                obs.name.clone(),
                ComparisonSummary {
                    points: est.times.len(),
                    outside_band: outside,
                    fraction_outside: outside as f64 / est.times.len() as f64,
                },
            );
        }
    }

    if let Some(est) = &estimate {
        let oracle_bins: Option<Vec<Vec<f64>>> = oracle.as_ref().map(|series| {
            (0..p.model.channels().len())
                .map(|l| {
                    let values = photocurrent_oracle(&p.model, series, l).expect("channel exists");
                    bin_averages(&series.times, &values, &est.bin_edges)
                })
                .collect()
        });
        let mut rows = Vec::new();
        for pc in &est.photocurrents {
            for b in 0..pc.rate.len() {
                let mut row = vec![
                    num(pc.bin_start[b]),
                    num(pc.bin_end[b]),
                    pc.channel.to_string(),
                    num(pc.rate[b]),
                    num(pc.stderr[b]),
                ];
                row.push(oracle_bins.as_ref().map_or_else(String::new, |o| num(o[pc.channel][b])));
                rows.push(row);
            }
        }
        out.csv(
            "photocurrent.csv",
            &["bin_start", "bin_end", "channel", "rate", "stderr", "oracle"],
            rows,
        )?;
    }

    let summary = Summary {
        config: cfg,
        model_dim: p.model.dim(),
        channels: p.model.channels().len(),
        horizon: p.model.horizon(),
        method: p.method,
        grid_points: p.grid.len(),
        realizations: estimate.as_ref().map(|e| e.realizations),
        master_seed: estimate.as_ref().map(|_| p.ensemble.master_seed),
        martingale_diagnostic: estimate.as_ref().map(martingale_diagnostic),
        jump_histogram: estimate.as_ref().map(|e| e.jump_histogram.clone()),
        oracle_trace_drift: oracle.as_ref().map(trace_drift),
        oracle_min_eigenvalue: oracle
            .as_ref()
            .map(|s| s.min_eigenvalues().map(|v| v.into_iter().fold(f64::INFINITY, f64::min)))
            .transpose()
            .map_err(Failure::simulation)?,
        comparisons,
    };
    out.json("summary.json", &summary)?;
    out.json(
        "timing.json",
        &Timing {
            oracle_ms,
            trajectories_ms: traj_ms,
            threads: rayon::current_num_threads(),
        },
    )?;
    Ok(out)
}

/// Trajectory `index` of the ensemble: `t`, `Re/Im ψ_i`, `μ` on the grid
/// and the jump log `(channel, time)`.
fn dump_trajectory(out: &mut Outputs, p: &Prepared, index: u64) -> Result<(), Failure> {
    let path = sample_path(
        &p.model,
        &p.psi0,
        p.ensemble.scheme,
        &p.grid,
        p.ensemble.master_seed,
        index,
    )
    .map_err(Failure::simulation)?;
    let mut header = vec!["t".to_string()];
    for i in 0..p.model.dim() {
        header.extend([format!("re_{i}"), format!("im_{i}")]);
    }
    header.push("mu".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..path.times.len()).map(|k| {
        let mut row = vec![num(path.times[k])];
        for z in path.psi[k].as_slice() {
            row.extend([num(z.re), num(z.im)]);
        }
        row.push(num(path.mu[k]));
        row
    });
    out.csv(format!("trajectory_{index}.csv"), &header, rows)?;
    let jumps = path.jumps.iter().map(|j| vec![j.channel.to_string(), num(j.time)]);
    out.csv(format!("jumps_{index}.csv"), &["channel", "time"], jumps)?;
    Ok(())
}

pub fn cmd_bench(args: &CommonArgs) -> Result<String, Failure> {
    let cfg = load(args)?;
    let mut bench: BenchConfig = cfg
        .bench
        .clone()
        .ok_or_else(|| Failure::config("missing [bench] section"))?;
    if let Some(seed) = args.seed {
        bench.seed = seed;
    }
    let dir = out_dir(args, &cfg);
    let rows = sweep(&bench).map_err(|e| match e {
        Error::InvalidArgument(_) => Failure::config(e),
        other => Failure::simulation(other),
    })?;
    let mut out = Outputs::default();
    out.csv("bench.csv", &BENCH_HEADER, rows.iter().map(bench_row))?;
    out.write(&dir).map_err(|e| Failure::simulation(format!("{e:#}")))?;
    Ok(format!(
        "wrote {} bench rows to {}",
        rows.len(),
        dir.join("bench.csv").display()
    ))
}

pub const BENCH_HEADER: [&str; 7] = [
    "N",
    "dim",
    "wall_ms_oracle",
    "wall_ms_traj_1thread",
    "wall_ms_traj_parallel",
    "M",
    "rms_error",
];

fn bench_row(r: &BenchRow) -> Vec<String> {
    let opt = |x: Option<f64>| x.map_or_else(String::new, num);
    vec![
        r.n.to_string(),
        r.dim.to_string(),
        opt(r.wall_ms_oracle),
        num(r.wall_ms_traj_1thread),
        num(r.wall_ms_traj_parallel),
        r.realizations.to_string(),
        opt(r.rms_error),
    ]
}
