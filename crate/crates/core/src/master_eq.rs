//! Deterministic integration of the master equation, used as the reference
//! solution for the trajectory ensemble.

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, ComplexMatrix, HermitianMatrix, SparseMatrix, C64};
use crate::model::{Coefficients, TimeLocalModel};

/// Density matrices recorded on a time grid.
#[derive(Clone, Debug)]
pub struct DensitySeries {
    pub times: Vec<f64>,
    pub states: Vec<ComplexMatrix>,
    /// Total number of accepted integration steps.
    pub steps: usize,
}

impl DensitySeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `⟨i|ρ_k|i⟩`.
    pub fn population(&self, k: usize, i: usize) -> f64 {
        self.states[k][(i, i)].re
    }

    /// `Tr(O ρ_k)` for each recorded state.
    pub fn expectation(&self, op: &SparseMatrix) -> Vec<f64> {
        self.states.iter().map(|rho| trace_product(op, rho)).collect()
    }

    pub fn min_eigenvalues(&self) -> Result<Vec<f64>> {
        self.states
            .iter()
            .map(|rho| min_eigenvalue(&HermitianMatrix::new(rho.clone())?))
            .collect()
    }
}

/// `Re Tr(O ρ)`.
pub fn trace_product(op: &SparseMatrix, rho: &ComplexMatrix) -> f64 {
    op.iter().map(|(i, j, v)| (v * rho[(j, i)]).re).sum()
}

/// Step-size control for [`integrate_with`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepControl {
    /// Classical RK4 with the largest step `≤ dt` that divides each grid interval.
    Fixed(f64),
    /// RK4 with step doubling, relative local tolerance `rtol`.
    Adaptive { rtol: f64, initial_dt: f64 },
}

pub fn integrate(model: &TimeLocalModel, rho0: &ComplexMatrix, grid: &[f64], dt: f64) -> Result<DensitySeries> {
    integrate_with(model, rho0, grid, StepControl::Fixed(dt))
}

pub fn integrate_with(
    model: &TimeLocalModel,
    rho0: &ComplexMatrix,
    grid: &[f64],
    control: StepControl,
) -> Result<DensitySeries> {
    check_inputs(model, rho0, grid)?;
    let mut rk = Rk4::new(model);
    let mut rho = rho0.clone();
    rho.hermitize();
    let mut t = 0.0;
    let mut series = DensitySeries {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        steps: 0,
    };
    let mut h_adaptive = match control {
        StepControl::Fixed(dt) | StepControl::Adaptive { initial_dt: dt, .. } => {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::invalid(format!("step size must be positive, got {dt}")));
            }
            dt
        }
    };
    for &target in grid {
        match control {
            StepControl::Fixed(dt) => {
                let span = target - t;
                if span > 0.0 {
                    let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
                    let h = span / n as f64;
                    for k in 0..n {
                        let s = t + k as f64 * h;
                        rk.step(&mut rho, s, h)?;
                    }
                    series.steps += n;
                }
            }
            StepControl::Adaptive { rtol, .. } => {
                if !(rtol > 0.0) {
                    return Err(Error::invalid("adaptive tolerance must be positive"));
                }
                let mut s = t;
                while s < target {
                    let h = h_adaptive.min(target - s);
                    let mut full = rho.clone();
                    rk.step(&mut full, s, h)?;
                    let mut half = rho.clone();
                    rk.step(&mut half, s, 0.5 * h)?;
                    rk.step(&mut half, s + 0.5 * h, 0.5 * h)?;
                    let err = half.max_abs_diff(&full) / 15.0;
                    let tol = rtol * half.max_abs().max(1e-300);
                    if err <= tol || h < 1e-14 {
                        rho = half;
                        s += h;
                        series.steps += 2;
                    }
                    let factor = if err == 0.0 { 2.0 } else { 0.9 * (tol / err).powf(0.2) };
                    let next = h * factor.clamp(0.2, 2.0);
                    if h < target - s || err > tol {
                        h_adaptive = next;
                    }
                }
            }
        }
        t = target;
        series.times.push(t);
        series.states.push(rho.clone());
    }
    Ok(series)
}

fn check_inputs(model: &TimeLocalModel, rho0: &ComplexMatrix, grid: &[f64]) -> Result<()> {
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: rho0.dim(),
        });
    }
    let tr = rho0.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > 1e-12 {
        return Err(Error::Precondition(format!("initial state has trace {tr}, expected 1")));
    }
    let defect = rho0.hermiticity_defect();
    if defect > HermitianMatrix::TOLERANCE * rho0.max_abs().max(1.0) {
        return Err(Error::NotHermitian { defect });
    }
    check_grid(grid, model.horizon())
}

pub(crate) fn check_grid(grid: &[f64], horizon: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if grid[0] < 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid(
            "time grid must be finite, non-negative and strictly increasing",
        ));
    }
    let last = grid[grid.len() - 1];
    if last > horizon * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "time grid ends at {last}, beyond the model horizon {horizon}"
        )));
    }
    Ok(())
}

/// Uniform grid `0, stride, 2·stride, …` up to `horizon` inclusive.
pub fn uniform_grid(horizon: f64, stride: f64) -> Vec<f64> {
    let n = (horizon / stride + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * stride).collect()
}

/// Largest `|Tr ρ − 1|` over the series.
pub fn trace_drift(series: &DensitySeries) -> f64 {
    series
        .states
        .iter()
        .map(|rho| (rho.trace() - C64::new(1.0, 0.0)).norm())
        .fold(0.0, f64::max)
}

struct Rk4<'a> {
    model: &'a TimeLocalModel,
    coeffs: Coefficients,
    k: [ComplexMatrix; 4],
    stage: ComplexMatrix,
    scratch: ComplexMatrix,
}

impl<'a> Rk4<'a> {
    fn new(model: &'a TimeLocalModel) -> Self {
        let d = model.dim();
        let z = || ComplexMatrix::zeros(d);
        Self {
            model,
            coeffs: Coefficients::default(),
            k: [z(), z(), z(), z()],
            stage: z(),
            scratch: z(),
        }
    }

    fn eval(&mut self, t: f64, idx: usize, from_stage: bool, rho: &ComplexMatrix) -> Result<()> {
        self.model.coefficients(t, &mut self.coeffs);
        if self
            .coeffs
            .weight
            .iter()
            .chain(&self.coeffs.hamiltonian)
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite {
                what: "model coefficient",
                t,
            });
        }
        let src = if from_stage { &self.stage } else { rho };
        self.model
            .rhs_into(src, &self.coeffs, &mut self.scratch, &mut self.k[idx]);
        Ok(())
    }

    fn set_stage(&mut self, rho: &ComplexMatrix, idx: usize, a: f64) {
        let k = &self.k[idx];
        for ((s, r), x) in self
            .stage
            .as_mut_slice()
            .iter_mut()
            .zip(rho.as_slice())
            .zip(k.as_slice())
        {
            *s = r + x * a;
        }
    }

    fn step(&mut self, rho: &mut ComplexMatrix, t: f64, h: f64) -> Result<()> {
        self.eval(t, 0, false, rho)?;
        self.set_stage(rho, 0, 0.5 * h);
        self.eval(t + 0.5 * h, 1, true, rho)?;
        self.set_stage(rho, 1, 0.5 * h);
        self.eval(t + 0.5 * h, 2, true, rho)?;
        self.set_stage(rho, 2, h);
        self.eval(t + h, 3, true, rho)?;
        let c = h / 6.0;
        let [k1, k2, k3, k4] = &self.k;
        for (i, r) in rho.as_mut_slice().iter_mut().enumerate() {
            *r += (k1.as_slice()[i] + (k2.as_slice()[i] + k3.as_slice()[i]) * 2.0 + k4.as_slice()[i]) * c;
        }
        rho.hermitize();
        if !rho.is_finite() {
            return Err(Error::NonFinite {
                what: "density matrix",
                t: t + h,
            });
        }
        Ok(())
    }
}
