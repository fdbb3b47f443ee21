//! Wall-time and accuracy sweep of the oracle against the trajectory
//! ensemble on coupled-qubit chains of growing size.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ensemble::{self, EnsembleConfig, Execution, Observable};
use crate::error::{Error, Result};
use crate::linalg::outer;
use crate::master_eq::{integrate, uniform_grid};
use crate::models::{build_chain, chain_initial_state, site_population, ChainParams};
use crate::trajectory::SchemeConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub n_list: Vec<usize>,
    pub realizations: u64,
    pub seed: u64,
    pub horizon: f64,
    pub stride: f64,
    /// Oracle RK4 step.
    pub dt: f64,
    pub scheme: SchemeConfig,
    /// Timing repeats; the median is reported.
    pub repeats: usize,
    /// Skip the oracle when its working set exceeds this many bytes.
    pub memory_cap_bytes: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_list: vec![2, 3, 4, 5, 6],
            realizations: 1000,
            seed: 1,
            horizon: 1.0,
            stride: 0.05,
            dt: 0.005,
            scheme: SchemeConfig::waiting_time(0.005),
            repeats: 3,
            memory_cap_bytes: 1 << 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub dim: usize,
    /// `None` when the oracle was skipped by the memory cap.
    pub wall_ms_oracle: Option<f64>,
    pub wall_ms_traj_1thread: f64,
    pub wall_ms_traj_parallel: f64,
    pub realizations: u64,
    /// Site-population RMS error against the oracle, averaged over sites
    /// and grid times.
    pub rms_error: Option<f64>,
    pub oracle_bytes: u64,
    pub trajectory_bytes: u64,
}

const C64_BYTES: u64 = 16;

/// Oracle working set: state, four RK4 stages, two scratch matrices and the
/// recorded series.
pub fn oracle_bytes(dim: usize, records: usize) -> u64 {
    let d2 = (dim * dim) as u64;
    C64_BYTES * d2 * (7 + records as u64)
}

/// Per-realization trajectory working set: state, saved state and six RK4
/// and operator buffers.
pub fn trajectory_bytes(dim: usize) -> u64 {
    C64_BYTES * dim as u64 * 8
}

pub fn sweep(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.repeats == 0 || cfg.realizations == 0 {
        return Err(Error::invalid("bench needs at least one repeat and one realization"));
    }
    cfg.scheme.validate()?;
    let grid = uniform_grid(cfg.horizon, cfg.stride);
    let workers = rayon_threads() as u64;
    let mut rows = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let model = build_chain(&ChainParams::reference(n))?.with_horizon(cfg.horizon);
        let dim = model.dim();
        let psi0 = chain_initial_state(n);
        let traj_mem = trajectory_bytes(dim);
        if traj_mem * workers > cfg.memory_cap_bytes {
            return Err(Error::ResourceLimit(format!(
                "N = {n}: trajectories need {} bytes, cap is {}",
                traj_mem * workers,
                cfg.memory_cap_bytes
            )));
        }
        let mut ens = EnsembleConfig::new(cfg.realizations, cfg.seed, cfg.scheme, grid.clone());
        for site in 0..n {
            ens = ens.with_observable(Observable::sparse(format!("site{site}"), site_population(site, n))?);
        }

        let seq = ens.clone().with_execution(Execution::Sequential);
        let (t1, estimate) = median_time(cfg.repeats, || ensemble::run(&model, &psi0, &seq))?;
        let par = ens.with_execution(Execution::Parallel);
        let (tp, _) = median_time(cfg.repeats, || ensemble::run(&model, &psi0, &par))?;

        let oracle_mem = oracle_bytes(dim, grid.len());
        let (wall_ms_oracle, rms_error) = if oracle_mem <= cfg.memory_cap_bytes {
            let rho0 = outer(&psi0, &psi0)?;
            let (to, series) = median_time(cfg.repeats, || integrate(&model, &rho0, &grid, cfg.dt))?;
            let mut sq = 0.0;
            for site in 0..n {
                let exact = series.expectation(&site_population(site, n));
                let est = &estimate.observables[site].mean;
                sq += exact.iter().zip(est).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            (Some(to), Some((sq / (n * grid.len()) as f64).sqrt()))
        } else {
            (None, None)
        };
        rows.push(BenchRow {
            n,
            dim,
            wall_ms_oracle,
            wall_ms_traj_1thread: t1,
            wall_ms_traj_parallel: tp,
            realizations: cfg.realizations,
            rms_error,
            oracle_bytes: oracle_mem,
            trajectory_bytes: traj_mem,
        });
    }
    Ok(rows)
}

/// Runs `f` `repeats` times and returns the median wall time in
/// milliseconds with the last result.
fn median_time<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut times = Vec::with_capacity(repeats);
    let mut last = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], last.expect("at least one repeat")))
}

#[cfg(feature = "parallel")]
fn rayon_threads() -> usize {
    rayon::current_num_threads()
}

#[cfg(not(feature = "parallel"))]
fn rayon_threads() -> usize {
    1
}
