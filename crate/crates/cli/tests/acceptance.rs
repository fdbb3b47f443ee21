//! End-to-end acceptance checks. Each test prints one `criterion N ... PASS`
//! or `FAIL` line per check; run with `--nocapture` to see them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use inmart::bench::{sweep, BenchConfig};
use inmart::config::RunConfig;
use inmart::ensemble::{
    energy_balance_check, martingale_diagnostic, run, EnsembleConfig, EnsembleEstimate, Observable,
};
use inmart::linalg::outer;
use inmart::linalg::pauli::*;
use inmart::master_eq::{integrate, uniform_grid, DensitySeries};
use inmart::models::{build_redfield, controllable_initial_state, controllable_reference, RedfieldParams};
use inmart::trajectory::{
    euler_martingale_factor, factorized_martingale_factor, propagate_linear, replay_nonlinear, sample_path,
    trajectory_rng, waiting_time_mass, JumpRecord, SchemeConfig,
};
use inmart::{Channel, ComplexVector, Hamiltonian, SparseMatrix, TimeLocalModel, C64};
use rand::Rng;

/// Keeps the heavy runs from competing for cores and the report lines in order.
static SERIAL: Mutex<()> = Mutex::new(());

struct Report {
    criterion: u32,
    failures: Vec<String>,
}

impl Report {
    fn new(criterion: u32) -> Self {
        Self {
            criterion,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        let verdict = if ok { "PASS" } else { "FAIL" };
        println!("criterion {} {name}: {detail} ... {verdict}", self.criterion);
        if !ok {
            self.failures.push(format!("{name}: {detail}"));
        }
    }

    fn finish(self) {
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {} ... {verdict}", self.criterion);
        assert!(
            self.failures.is_empty(),
            "criterion {} failed: {:?}",
            self.criterion,
            self.failures
        );
    }
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn oracle_for(model: &TimeLocalModel, psi: &ComplexVector, grid: &[f64], dt: f64) -> DensitySeries {
    integrate(model, &outer(psi, psi).unwrap(), grid, dt).unwrap()
}

/// Points where the estimate leaves the `2·stderr` band around the oracle.
fn outside_band(est: &EnsembleEstimate, oracle: &DensitySeries, obs: &Observable) -> (usize, usize) {
    let series = est.observable(&obs.name).unwrap();
    let outside = (0..est.times.len())
        .filter(|&k| (series.mean[k] - obs.expectation(&oracle.states[k])).abs() > 2.0 * series.stderr[k] + 1e-12)
        .count();
    (outside, est.times.len())
}

fn decay_model(gamma: f64, horizon: f64) -> TimeLocalModel {
    TimeLocalModel::new(2, Hamiltonian::zero(), vec![Channel::from_dense(&sigma_minus(), gamma)])
        .unwrap()
        .with_horizon(horizon)
}

#[test]
fn criterion_1_oracle_correctness() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(1);
    let start = Instant::now();
    let model = decay_model(1.0, 1.0);
    let rho0 = outer(&excited(), &excited()).unwrap();
    let grid = uniform_grid(1.0, 0.05);
    let s = integrate(&model, &rho0, &grid, 1e-3).unwrap();
    let err = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| (s.population(k, 0) - (-t).exp()).abs())
        .fold(0.0, f64::max);
    report.check(
        "closed-form decay",
        err <= 1e-8,
        format!("max error {err:.2e} (tol 1e-8)"),
    );

    let end_error = |dt: f64| {
        let s = integrate(&model, &rho0, &[1.0], dt).unwrap();
        (s.population(0, 0) - (-1f64).exp()).abs()
    };
    let ratio = end_error(0.1) / end_error(0.05);
    report.check(
        "RK4 step halving",
        ratio >= 8.0,
        format!("error ratio {ratio:.2} (need >= 8)"),
    );
    let elapsed = start.elapsed().as_secs_f64();
    report.check("runtime", elapsed < 1.0, format!("{elapsed:.3} s (budget 1 s)"));
    report.finish();
}

#[test]
fn criterion_2_cp_reduction() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(2);
    let model = TimeLocalModel::new(
        2,
        Hamiltonian::constant(SparseMatrix::from_dense(&sigma_x().scale(C64::new(0.6, 0.0)))),
        vec![
            Channel::from_dense(&sigma_minus(), 1.0),
            Channel::from_dense(&sigma_z(), 0.25),
        ],
    )
    .unwrap()
    .with_horizon(1.0);
    let grid = uniform_grid(1.0, 0.05);
    let (mut mu_exact, mut worst_norm) = (true, 0.0f64);
    for index in 0..500 {
        for scheme in [SchemeConfig::bernoulli(1e-3), SchemeConfig::waiting_time(1e-2)] {
            let p = sample_path(&model, &excited(), scheme, &grid, 2, index).unwrap();
            mu_exact &= p.mu.iter().all(|&m| m == 1.0);
            for psi in &p.psi {
                worst_norm = worst_norm.max((psi.norm_sqr() - 1.0).abs());
            }
        }
    }
    report.check("pathwise mu = 1", mu_exact, "1000 paths, both schemes".into());
    report.check(
        "norm preserved",
        worst_norm <= 1e-8,
        format!("max |‖ψ‖² − 1| {worst_norm:.2e} (tol 1e-8)"),
    );

    let cfg = EnsembleConfig::new(10_000, 1, SchemeConfig::waiting_time(1e-2), vec![0.5, 1.0])
        .with_observable(Observable::population("ee", 2, 0));
    let est = run(&decay_model(1.0, 1.0), &excited(), &cfg).unwrap();
    let ee = &est.observables[0];
    let dev = (ee.mean[1] - (-1f64).exp()).abs();
    report.check(
        "ensemble rho_ee(1)",
        dev <= 3.0 * ee.stderr[1],
        format!(
            "|{:.5} − e⁻¹| = {dev:.2e}, 3·stderr = {:.2e}",
            ee.mean[1],
            3.0 * ee.stderr[1]
        ),
    );
    report.finish();
}

#[test]
fn criterion_3_controllable_positivity() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(3);
    let start = Instant::now();
    let p = RunConfig::load(&config_path("controllable.toml"))
        .unwrap()
        .prepare(None)
        .unwrap();
    report.check(
        "configuration",
        p.ensemble.realizations == 10_000 && p.grid.last() == Some(&3.0),
        format!("M = {}, grid [0, {}]", p.ensemble.realizations, p.grid.last().unwrap()),
    );
    let est = run(&p.model, &p.psi0, &p.ensemble).unwrap();
    let oracle = oracle_for(&p.model, &p.psi0, &p.grid, p.oracle_dt);
    let excited = p.ensemble.observables.iter().find(|o| o.name == "excited").unwrap();
    let (outside, points) = outside_band(&est, &oracle, excited);
    let inside = 1.0 - outside as f64 / points as f64;
    report.check(
        "excited population in 2·stderr band",
        inside >= 0.95,
        format!("{:.1}% of {points} points inside (need >= 95%)", 100.0 * inside),
    );
    let diag = martingale_diagnostic(&est);
    report.check(
        "martingale diagnostic",
        diag <= 3.0,
        format!("max |Eμ − 1|/stderr = {diag:.3} (need <= 3)"),
    );
    println!("criterion 3 runtime: {:.1} s", start.elapsed().as_secs_f64());
    report.finish();
}

#[test]
fn criterion_4_redfield() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(4);
    let start = Instant::now();
    let r = build_redfield(RedfieldParams::reference()).unwrap();
    let closed = (5.0 - 38f64.sqrt()) / 4.0;
    let lambda_err = (r.lambdas[0] - closed).abs();
    report.check(
        "lambda_1 closed form",
        lambda_err <= 1e-12,
        format!("|λ₁ − (5 − √38)/4| = {lambda_err:.1e}"),
    );

    let p = RunConfig::load(&config_path("redfield.toml"))
        .unwrap()
        .prepare(None)
        .unwrap();
    let oracle = oracle_for(&p.model, &p.psi0, &p.grid, p.oracle_dt);
    let mins = oracle.min_eigenvalues().unwrap();
    let late: Vec<(f64, f64)> = p
        .grid
        .iter()
        .zip(&mins)
        .filter(|(&t, _)| t > 3.0 + 1e-9)
        .map(|(&t, &m)| (t, m))
        .collect();
    // Eigenvalues above −1e-6 are indistinguishable from integrator error.
    let non_negative: Vec<f64> = late.iter().filter(|(_, m)| *m >= -1e-6).map(|(t, _)| *t).collect();
    let onset = p.grid.iter().zip(&mins).find(|(_, &m)| m < -1e-6).map(|(&t, _)| t);
    report.check(
        "oracle min eigenvalue negative for t > 3",
        non_negative.is_empty(),
        format!(
            "{} of {} grid points with t > 3 have λ_min >= −1e-6; first negative at t = {onset:?}",
            non_negative.len(),
            late.len()
        ),
    );

    let est = run(&p.model, &p.psi0, &p.ensemble).unwrap();
    let (mut outside, mut points) = (0, 0);
    for obs in &p.ensemble.observables {
        let (o, n) = outside_band(&est, &oracle, obs);
        outside += o;
        points += n;
    }
    let inside = 1.0 - outside as f64 / points as f64;
    report.check(
        "populations in 2·stderr band",
        inside >= 0.95 && p.ensemble.realizations == 10_000 && p.ensemble.scheme.dt() == 0.0125,
        format!(
            "{:.1}% of {points} points inside at M = {}, dt = {}",
            100.0 * inside,
            p.ensemble.realizations,
            p.ensemble.scheme.dt()
        ),
    );
    println!("criterion 4 runtime: {:.1} s", start.elapsed().as_secs_f64());
    report.finish();
}

#[test]
fn criterion_5_pathwise_equivalence() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(5);
    let model = controllable_reference();
    let psi0 = controllable_initial_state();
    let grid = uniform_grid(3.0, 0.1);
    let mut rng = trajectory_rng(2024, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n_jumps = rng.random_range(0..6);
        let mut times: Vec<f64> = (0..n_jumps).map(|_| rng.random_range(0.0..3.0)).collect();
        times.sort_by(f64::total_cmp);
        let record: Vec<JumpRecord> = times
            .into_iter()
            .map(|t| JumpRecord::new(rng.random_range(0..3), t))
            .collect();
        let lin = propagate_linear(&psi0, &model, &record, &grid, 1e-3).unwrap();
        let non = replay_nonlinear(&psi0, &model, &record, &grid, 1e-3).unwrap();
        for (a, b) in lin.psi.iter().zip(&non.psi) {
            worst = worst.max(a.max_abs_diff(b));
        }
    }
    report.check(
        "linear vs nonlinear",
        worst <= 1e-8,
        format!("sup-norm {worst:.2e} over 100 records (tol 1e-8)"),
    );

    // Sample times where at least one weight is negative; otherwise both
    // factors are exactly one.
    let mut ratios = Vec::new();
    for &t in &[0.05, 0.15, 0.25] {
        assert!(!model.is_completely_positive(&[t]));
        let psi = non_trivial_state(&mut rng);
        let err = |h: f64| {
            (euler_martingale_factor(&model, &psi, t, h) - factorized_martingale_factor(&model, &psi, t, h).unwrap())
                .abs()
        };
        ratios.push(err(0.02) / err(0.01));
    }
    let ok = ratios.iter().all(|r| (3.5..=4.5).contains(r));
    report.check(
        "Euler vs factorized mu",
        ok,
        format!("error ratios under halving {ratios:.2?} (expect ≈ 4)"),
    );
    report.finish();
}

fn non_trivial_state(rng: &mut impl Rng) -> ComplexVector {
    let v = ComplexVector::new(vec![
        C64::new(rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)),
        C64::new(rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)),
    ]);
    v.normalized().unwrap()
}

#[test]
fn criterion_6_waiting_time_normalization() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(6);
    let horizon = 1.0;
    let model = TimeLocalModel::new(
        2,
        Hamiltonian::constant(SparseMatrix::from_dense(&sigma_x().scale(C64::new(0.7, 0.0)))),
        vec![
            Channel::from_dense(&sigma_minus(), 0.4),
            Channel::from_dense(&sigma_plus(), -0.1),
        ],
    )
    .unwrap()
    .with_horizon(horizon);
    let mass = waiting_time_mass(&model, &excited(), horizon, 3, 8, 1e-2).unwrap();
    let total: f64 = mass.iter().sum();
    report.check(
        "multi-time density mass (n <= 3)",
        (total - 1.0).abs() <= 1e-4,
        format!("Σ = {total:.8} from {mass:?}"),
    );

    // Survival from the hazard Σ r_ℓ ‖L_ℓψ_t‖² along the no-jump path.
    let fine = uniform_grid(horizon, 1e-3);
    let path = replay_nonlinear(&excited(), &model, &[], &fine, 1e-3).unwrap();
    let hazard: Vec<f64> = fine
        .iter()
        .zip(&path.psi)
        .map(|(&t, psi)| {
            model
                .channels()
                .iter()
                .map(|ch| ch.weight.eval(t).abs() * ch.operator().apply_norm_sqr(psi.as_slice()))
                .sum()
        })
        .collect();
    let mut cumulative = vec![0.0];
    for k in 1..fine.len() {
        let step = 0.5 * (hazard[k] + hazard[k - 1]) * (fine[k] - fine[k - 1]);
        cumulative.push(cumulative[k - 1] + step);
    }
    let cdf = |t: f64| {
        let k = ((t / 1e-3).floor() as usize).min(fine.len() - 2);
        let frac = (t - fine[k]) / (fine[k + 1] - fine[k]);
        1.0 - (-(cumulative[k] + frac * (cumulative[k + 1] - cumulative[k]))).exp()
    };
    let m = 10_000u64;
    let mut first: Vec<f64> = (0..m)
        .filter_map(|i| {
            let p = sample_path(&model, &excited(), SchemeConfig::waiting_time(1e-2), &[horizon], 6, i).unwrap();
            p.jumps.first().map(|j| j.time)
        })
        .collect();
    first.sort_by(f64::total_cmp);
    let mut ks = 0.0f64;
    for (i, &t) in first.iter().enumerate() {
        let f = cdf(t);
        ks = ks
            .max((f - i as f64 / m as f64).abs())
            .max((f - (i + 1) as f64 / m as f64).abs());
    }
    ks = ks.max((cdf(horizon) - first.len() as f64 / m as f64).abs());
    report.check(
        "first-jump KS statistic",
        ks < 0.02,
        format!("D = {ks:.4} at {m} samples (need < 0.02)"),
    );
    report.finish();
}

#[test]
fn criterion_7_energy_balance() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(7);
    let start = Instant::now();
    let p = RunConfig::load(&config_path("energy.toml"))
        .unwrap()
        .prepare(None)
        .unwrap();
    let est = run(&p.model, &p.psi0, &p.ensemble).unwrap();
    let horizon = *p.grid.last().unwrap();
    let fine = uniform_grid(horizon, p.ensemble.grid[1] / 20.0);
    let oracle = oracle_for(&p.model, &p.psi0, &fine, 1e-3);
    let balance = energy_balance_check(&p.model, &oracle, &est).unwrap();
    report.check(
        "residual within 3·stderr",
        balance.max_ratio <= 3.0 && p.ensemble.realizations == 10_000,
        format!(
            "max |residual|/stderr = {:.3} over {} bins at M = {}",
            balance.max_ratio,
            balance.lhs.len(),
            p.ensemble.realizations
        ),
    );
    println!("criterion 7 runtime: {:.1} s", start.elapsed().as_secs_f64());
    report.finish();
}

#[test]
fn criterion_8_scaling() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(8);
    let start = Instant::now();
    let cfg = BenchConfig {
        n_list: vec![2, 3, 4, 5, 6, 8],
        realizations: 1000,
        ..BenchConfig::default()
    };
    let rows = sweep(&cfg).unwrap();
    let by_n: BTreeMap<usize, _> = rows.iter().map(|r| (r.n, r)).collect();
    let rms: Vec<f64> = (2..=6).map(|n| by_n[&n].rms_error.unwrap()).collect();
    let (lo, hi) = rms
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    report.check(
        "RMS error spread over N = 2..6",
        hi / lo < 2.0,
        format!("rms {rms:.4?}, max/min = {:.2} (need < 2)", hi / lo),
    );
    let ratio = |n: usize| by_n[&n].wall_ms_oracle.unwrap() / by_n[&n].wall_ms_traj_1thread;
    let ratios = [ratio(4), ratio(6), ratio(8)];
    report.check(
        "oracle/trajectory wall-time ratio nondecreasing over N = 4, 6, 8",
        ratios[0] <= ratios[1] && ratios[1] <= ratios[2],
        format!("ratios {ratios:.3?} (single-thread trajectories, hardware dependent)"),
    );
    println!("criterion 8 runtime: {:.1} s", start.elapsed().as_secs_f64());
    report.finish();
}

const DETERMINISM_CONFIG: &str = r#"
[model]
name = "controllable"

[simulation]
method = "both"
scheme = "waiting_time"
dt = 1e-2
stride = 0.1
realizations = 2000
seed = 5
store_density = true
dump_trajectories = 3

[[observables]]
name = "excited"
population = 0
"#;

fn run_binary(config: &Path, out: &Path, threads: usize) -> BTreeMap<String, Vec<u8>> {
    let status = Command::new(env!("CARGO_BIN_EXE_inmart"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--threads", &threads.to_string()])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_9_determinism() {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let mut report = Report::new(9);
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let first = run_binary(&config, &dir.path().join("a"), 1);
    let rerun = run_binary(&config, &dir.path().join("b"), 1);
    let threaded = run_binary(&config, &dir.path().join("c"), 4);
    let names: Vec<&String> = first.keys().collect();
    report.check(
        "outputs written",
        first.keys().any(|k| k.ends_with(".csv")) && first.contains_key("summary.json"),
        format!("{names:?}"),
    );
    report.check(
        "byte-identical across reruns",
        first == rerun,
        format!("{} files compared", first.len()),
    );
    report.check(
        "byte-identical across thread counts",
        first == threaded,
        "--threads 1 vs --threads 4".into(),
    );
    report.finish();
}
