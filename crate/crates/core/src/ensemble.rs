//! Monte Carlo reconstruction `ρ_t ≈ (1/M) Σ μ_t ψ_t ψ_t†` over independent
//! trajectories, with error estimates, photocurrents and the energy balance.
//!
//! Trajectory `i` draws from its own RNG stream keyed by `(master_seed, i)`.
//! Accumulators are combined by a fixed binary tree over the index range, so
//! results are bit-identical for any number of worker threads.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector, SparseMatrix, C64};
use crate::master_eq::{check_grid, trace_product, DensitySeries};
use crate::model::TimeLocalModel;
use crate::trajectory::{trajectory_rng, Sampler, SchemeConfig, TrajectoryState};

#[derive(Clone, Debug)]
enum ObservableKind {
    Operator(SparseMatrix),
    Projector(ComplexVector),
}

/// Hermitian observable, either an operator or the projector `|v⟩⟨v|`.
#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    kind: ObservableKind,
}

impl Observable {
    pub fn operator(name: impl Into<String>, op: &ComplexMatrix) -> Result<Self> {
        Self::sparse(name, SparseMatrix::from_dense(op))
    }

    pub fn sparse(name: impl Into<String>, op: SparseMatrix) -> Result<Self> {
        let defect = op
            .add(&op.adjoint().scale(C64::new(-1.0, 0.0)))
            .expect("same dimension")
            .max_abs();
        if defect > 1e-12 * op.max_abs().max(1.0) {
            return Err(Error::NotHermitian { defect });
        }
        Ok(Self {
            name: name.into(),
            kind: ObservableKind::Operator(op),
        })
    }

    pub fn projector(name: impl Into<String>, v: &ComplexVector) -> Result<Self> {
        let v = v
            .normalized()
            .ok_or_else(|| Error::invalid("projector vector must be nonzero"))?;
        Ok(Self {
            name: name.into(),
            kind: ObservableKind::Projector(v),
        })
    }

    /// Population of basis state `i`.
    pub fn population(name: impl Into<String>, dim: usize, i: usize) -> Self {
        Self {
            name: name.into(),
            kind: ObservableKind::Projector(ComplexVector::basis(dim, i)),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ObservableKind::Operator(op) => op.dim(),
            ObservableKind::Projector(v) => v.len(),
        }
    }

    /// `⟨ψ|O|ψ⟩` for a unit vector.
    pub fn value(&self, psi: &[C64]) -> f64 {
        match &self.kind {
            ObservableKind::Operator(op) => op.expectation(psi).re,
            ObservableKind::Projector(v) => v
                .as_slice()
                .iter()
                .zip(psi)
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>()
                .norm_sqr(),
        }
    }

    /// `Tr(O ρ)`.
    pub fn expectation(&self, rho: &ComplexMatrix) -> f64 {
        match &self.kind {
            ObservableKind::Operator(op) => trace_product(op, rho),
            ObservableKind::Projector(v) => rho.expectation(v).expect("same dimension").re,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Data-parallel over trajectories; falls back to sequential when the
    /// crate is built without the `parallel` feature.
    #[default]
    Parallel,
}

#[derive(Clone, Debug)]
pub struct EnsembleConfig {
    pub realizations: u64,
    pub master_seed: u64,
    pub scheme: SchemeConfig,
    /// Recording times; photocurrent bins are the intervals between them.
    pub grid: Vec<f64>,
    pub observables: Vec<Observable>,
    /// Accumulate `ρ̂` (as its positive and negative parts).
    pub store_density: bool,
    pub execution: Execution,
}

impl EnsembleConfig {
    pub fn new(realizations: u64, master_seed: u64, scheme: SchemeConfig, grid: Vec<f64>) -> Self {
        Self {
            realizations,
            master_seed,
            scheme,
            grid,
            observables: Vec::new(),
            store_density: false,
            execution: Execution::default(),
        }
    }

    pub fn with_observable(mut self, obs: Observable) -> Self {
        self.observables.push(obs);
        self
    }

    pub fn with_density(mut self, store: bool) -> Self {
        self.store_density = store;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Bin edges: `0` followed by the grid.
    pub fn bin_edges(&self) -> Vec<f64> {
        let mut edges = vec![0.0];
        edges.extend(self.grid.iter().copied().filter(|&t| t > 0.0));
        edges
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservableSeries {
    pub name: String,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub stddev: Vec<f64>,
}

/// Estimated `d E(μ ν_ℓ)/dt` averaged over each bin.
#[derive(Clone, Debug, Serialize)]
pub struct PhotocurrentSeries {
    pub channel: usize,
    pub bin_start: Vec<f64>,
    pub bin_end: Vec<f64>,
    pub rate: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `E(μ_t ν_ℓ,t)` at each bin end.
    pub cumulative: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EnsembleEstimate {
    pub times: Vec<f64>,
    /// Photocurrent bin edges: `0` followed by the positive grid times.
    pub bin_edges: Vec<f64>,
    pub realizations: u64,
    pub mean_mu: Vec<f64>,
    pub stderr_mu: Vec<f64>,
    pub mean_abs_mu: Vec<f64>,
    pub observables: Vec<ObservableSeries>,
    pub photocurrents: Vec<PhotocurrentSeries>,
    /// `Σ_ℓ ε_ℓ d E(μν_ℓ)/dt` per bin with its standard error, when every
    /// channel declares an energy quantum.
    pub energy_current: Option<(Vec<f64>, Vec<f64>)>,
    /// `histogram[n]` trajectories ended with `n` jumps.
    pub jump_histogram: Vec<u64>,
    rho_plus: Option<Vec<ComplexMatrix>>,
    rho_minus: Option<Vec<ComplexMatrix>>,
}

impl EnsembleEstimate {
    /// `ρ̂_t = ρ̂⁺_t − ρ̂⁻_t` at grid index `k`, if densities were stored.
    pub fn rho_hat(&self, k: usize) -> Option<ComplexMatrix> {
        let (p, m) = (self.rho_plus.as_ref()?, self.rho_minus.as_ref()?);
        Some(p[k].sub(&m[k]).expect("same dimension"))
    }

    /// Averages of `μ⁺ψψ†` and `μ⁻ψψ†` with `μ± = max(0, ±μ)`.
    pub fn wp_split_average(&self) -> Option<(&[ComplexMatrix], &[ComplexMatrix])> {
        Some((self.rho_plus.as_deref()?, self.rho_minus.as_deref()?))
    }

    pub fn observable(&self, name: &str) -> Option<&ObservableSeries> {
        self.observables.iter().find(|o| o.name == name)
    }

    pub fn photocurrent(&self, channel: usize) -> Option<&PhotocurrentSeries> {
        self.photocurrents.get(channel)
    }
}

/// `max_t |E μ_t − 1| / stderr(μ_t)`. Grid points with zero spread count as
/// 0 when the mean is exactly one and as infinity otherwise.
pub fn martingale_diagnostic(estimate: &EnsembleEstimate) -> f64 {
    estimate
        .mean_mu
        .iter()
        .zip(&estimate.stderr_mu)
        .map(|(&m, &s)| {
            let dev = (m - 1.0).abs();
            if s > 0.0 {
                dev / s
            } else if dev == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// Runs the ensemble.
pub fn run(model: &TimeLocalModel, psi0: &ComplexVector, config: &EnsembleConfig) -> Result<EnsembleEstimate> {
    if config.realizations == 0 {
        return Err(Error::invalid("at least one realization is required"));
    }
    if psi0.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: psi0.len(),
        });
    }
    TrajectoryState::new(psi0)?;
    config.scheme.validate()?;
    check_grid(&config.grid, model.horizon())?;
    for obs in &config.observables {
        if obs.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: obs.dim(),
            });
        }
    }
    let layout = Layout::new(model, config);
    let ctx = Ctx {
        model,
        psi0,
        config,
        layout: &layout,
    };
    let acc = reduce(&ctx, 0, config.realizations)?;
    Ok(layout.finish(acc, config))
}

const BLOCK: u64 = 32;

struct Ctx<'a> {
    model: &'a TimeLocalModel,
    psi0: &'a ComplexVector,
    config: &'a EnsembleConfig,
    layout: &'a Layout,
}

fn reduce(ctx: &Ctx<'_>, lo: u64, hi: u64) -> Result<Acc> {
    if hi - lo <= BLOCK {
        return run_block(ctx, lo, hi);
    }
    let mid = lo + (hi - lo) / 2;
    let (left, right) = join(ctx.config.execution, || reduce(ctx, lo, mid), || reduce(ctx, mid, hi));
    let mut left = left?;
    left.merge(&right?);
    Ok(left)
}

#[cfg(feature = "parallel")]
fn join<A, B>(execution: Execution, a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B)
where
    A: Send,
    B: Send,
{
    match execution {
        Execution::Parallel => rayon::join(a, b),
        Execution::Sequential => (a(), b()),
    }
}

#[cfg(not(feature = "parallel"))]
fn join<A, B>(_: Execution, a: impl FnOnce() -> A, b: impl FnOnce() -> B) -> (A, B) {
    (a(), b())
}

fn run_block(ctx: &Ctx<'_>, lo: u64, hi: u64) -> Result<Acc> {
    let layout = ctx.layout;
    let mut acc = layout.zeros();
    let mut sampler = Sampler::new(ctx.model, ctx.config.scheme)?;
    let mut currents = vec![0.0; layout.bins * layout.channels];
    for index in lo..hi {
        let failed = |source: Error| Error::TrajectoryFailed {
            index,
            seed: ctx.config.master_seed,
            source: Box::new(source),
        };
        let mut rng = trajectory_rng(ctx.config.master_seed, index);
        let mut state = TrajectoryState::new(ctx.psi0).map_err(failed)?;
        currents.fill(0.0);
        let mut seen_jumps = 0;
        let mut bin = 0;
        for (k, &t) in ctx.config.grid.iter().enumerate() {
            sampler.advance_to(&mut state, t, &mut rng).map_err(failed)?;
            let mu = state.mu();
            if !mu.is_finite() {
                return Err(failed(Error::NonFinite { what: "martingale", t }));
            }
            if t > 0.0 {
                for (j, &w) in state.jumps()[seen_jumps..]
                    .iter()
                    .zip(&state.jump_weights()[seen_jumps..])
                {
                    currents[bin * layout.channels + j.channel] += w;
                }
                seen_jumps = state.jumps().len();
                bin += 1;
            }
            acc.record(layout, k, mu, state.psi().as_slice(), &ctx.config.observables);
        }
        acc.record_currents(layout, &currents);
        let n = state.jumps().len();
        if acc.hist.len() <= n {
            acc.hist.resize(n + 1, 0);
        }
        acc.hist[n] += 1;
        acc.n += 1;
    }
    Ok(acc)
}

struct Layout {
    grid: usize,
    observables: usize,
    dim: usize,
    tri: usize,
    bins: usize,
    channels: usize,
    energies: Option<Vec<f64>>,
    edges: Vec<f64>,
}

impl Layout {
    fn new(model: &TimeLocalModel, config: &EnsembleConfig) -> Self {
        let d = model.dim();
        let edges = config.bin_edges();
        let energies: Option<Vec<f64>> = model.channels().iter().map(|c| c.energy).collect();
        Self {
            grid: config.grid.len(),
            observables: config.observables.len(),
            dim: d,
            tri: if config.store_density { d * (d + 1) / 2 } else { 0 },
            bins: edges.len() - 1,
            channels: model.channels().len(),
            energies,
            edges,
        }
    }

    fn zeros(&self) -> Acc {
        let g = self.grid;
        let e = if self.energies.is_some() { self.bins } else { 0 };
        Acc {
            n: 0,
            mu: Moments::zeros(g),
            abs_mu: vec![0.0; g],
            obs: Moments::zeros(g * self.observables),
            rho_plus: vec![C64::new(0.0, 0.0); g * self.tri],
            rho_minus: vec![C64::new(0.0, 0.0); g * self.tri],
            pc: Moments::zeros(self.bins * self.channels),
            en: Moments::zeros(e),
            hist: Vec::new(),
        }
    }

    fn finish(&self, acc: Acc, config: &EnsembleConfig) -> EnsembleEstimate {
        let m = acc.n as f64;
        let stats = |mean: &[f64], m2: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let sd: Vec<f64> = m2
                .iter()
                .map(|&x| {
                    if acc.n < 2 {
                        0.0
                    } else {
                        (x / (m - 1.0)).max(0.0).sqrt()
                    }
                })
                .collect();
            let se = sd.iter().map(|x| x / m.sqrt()).collect();
            (mean.to_vec(), se, sd)
        };
        let (mean_mu, stderr_mu, _) = stats(&acc.mu.mean, &acc.mu.m2);
        let observables = config
            .observables
            .iter()
            .enumerate()
            .map(|(o, obs)| {
                let r = o * self.grid..(o + 1) * self.grid;
                let (mean, stderr, stddev) = stats(&acc.obs.mean[r.clone()], &acc.obs.m2[r]);
                ObservableSeries {
                    name: obs.name.clone(),
                    mean,
                    stderr,
                    stddev,
                }
            })
            .collect();
        let photocurrents = (0..self.channels)
            .map(|l| {
                let s: Vec<f64> = (0..self.bins).map(|b| acc.pc.mean[b * self.channels + l]).collect();
                let s2: Vec<f64> = (0..self.bins).map(|b| acc.pc.m2[b * self.channels + l]).collect();
                let (mean, se, _) = stats(&s, &s2);
                let widths: Vec<f64> = self.edges.windows(2).map(|w| w[1] - w[0]).collect();
                let mut total = 0.0;
                let cumulative = mean
                    .iter()
                    .map(|x| {
                        total += x;
                        total
                    })
                    .collect();
                PhotocurrentSeries {
                    channel: l,
                    bin_start: self.edges[..self.bins].to_vec(),
                    bin_end: self.edges[1..].to_vec(),
                    rate: mean.iter().zip(&widths).map(|(x, w)| x / w).collect(),
                    stderr: se.iter().zip(&widths).map(|(x, w)| x / w).collect(),
                    cumulative,
                }
            })
            .collect();
        let energy_current = self.energies.as_ref().map(|_| {
            let (mean, se, _) = stats(&acc.en.mean, &acc.en.m2);
            let widths = self.edges.windows(2).map(|w| w[1] - w[0]);
            widths
                .zip(mean.iter().zip(&se))
                .map(|(w, (x, s))| (x / w, s / w))
                .unzip()
        });
        let (rho_plus, rho_minus) = if self.tri > 0 {
            let unpack = |data: &[C64]| -> Vec<ComplexMatrix> {
                (0..self.grid)
                    .map(|k| unpack_upper(&data[k * self.tri..(k + 1) * self.tri], self.dim, m))
                    .collect()
            };
            (Some(unpack(&acc.rho_plus)), Some(unpack(&acc.rho_minus)))
        } else {
            (None, None)
        };
        EnsembleEstimate {
            times: config.grid.clone(),
            bin_edges: self.edges.clone(),
            realizations: acc.n,
            mean_mu,
            stderr_mu,
            mean_abs_mu: acc.abs_mu.iter().map(|s| s / m).collect(),
            observables,
            photocurrents,
            energy_current,
            jump_histogram: acc.hist,
            rho_plus,
            rho_minus,
        }
    }
}

fn unpack_upper(tri: &[C64], d: usize, m: f64) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(d);
    let mut idx = 0;
    for i in 0..d {
        for j in i..d {
            let v = tri[idx] / m;
            out[(i, j)] = v;
            if i != j {
                out[(j, i)] = v.conj();
            } else {
                out[(i, i)] = C64::new(v.re, 0.0);
            }
            idx += 1;
        }
    }
    out
}

/// Running means and centred second moments, one slot per statistic.
struct Moments {
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    /// Adds sample `x` to slot `i`; `n` counts samples including this one.
    fn push(&mut self, i: usize, x: f64, n: f64) {
        let d = x - self.mean[i];
        self.mean[i] += d / n;
        self.m2[i] += d * (x - self.mean[i]);
    }

    fn merge(&mut self, other: &Moments, na: f64, nb: f64) {
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
    }
}

struct Acc {
    n: u64,
    mu: Moments,
    abs_mu: Vec<f64>,
    obs: Moments,
    rho_plus: Vec<C64>,
    rho_minus: Vec<C64>,
    pc: Moments,
    en: Moments,
    hist: Vec<u64>,
}

impl Acc {
    /// Records grid point `k` of trajectory number `self.n + 1`.
    fn record(&mut self, layout: &Layout, k: usize, mu: f64, psi: &[C64], observables: &[Observable]) {
        let n = (self.n + 1) as f64;
        self.mu.push(k, mu, n);
        self.abs_mu[k] += mu.abs();
        for (o, obs) in observables.iter().enumerate() {
            self.obs.push(o * layout.grid + k, mu * obs.value(psi), n);
        }
        if layout.tri > 0 && mu != 0.0 {
            let target = if mu > 0.0 {
                &mut self.rho_plus
            } else {
                &mut self.rho_minus
            };
            let w = mu.abs();
            let block = &mut target[k * layout.tri..(k + 1) * layout.tri];
            let mut idx = 0;
            for i in 0..layout.dim {
                let a = psi[i] * w;
                for b in &psi[i..] {
                    block[idx] += a * b.conj();
                    idx += 1;
                }
            }
        }
    }

    fn record_currents(&mut self, layout: &Layout, currents: &[f64]) {
        let n = (self.n + 1) as f64;
        for (i, &x) in currents.iter().enumerate() {
            self.pc.push(i, x, n);
        }
        if let Some(eps) = &layout.energies {
            for b in 0..layout.bins {
                let x: f64 = eps
                    .iter()
                    .enumerate()
                    .map(|(l, e)| e * currents[b * layout.channels + l])
                    .sum();
                self.en.push(b, x, n);
            }
        }
    }

    fn merge(&mut self, other: &Acc) {
        fn add<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        self.mu.merge(&other.mu, na, nb);
        self.obs.merge(&other.obs, na, nb);
        self.pc.merge(&other.pc, na, nb);
        self.en.merge(&other.en, na, nb);
        self.n += other.n;
        add(&mut self.abs_mu, &other.abs_mu);
        add(&mut self.rho_plus, &other.rho_plus);
        add(&mut self.rho_minus, &other.rho_minus);
        if self.hist.len() < other.hist.len() {
            self.hist.resize(other.hist.len(), 0);
        }
        add(&mut self.hist, &other.hist);
    }
}

/// Instantaneous photocurrent `Γ_ℓ,t Tr(L_ℓ ρ_t L_ℓ†)` along an oracle series.
pub fn photocurrent_oracle(model: &TimeLocalModel, series: &DensitySeries, channel: usize) -> Result<Vec<f64>> {
    let ch = model
        .channels()
        .get(channel)
        .ok_or_else(|| Error::invalid(format!("no channel {channel}")))?;
    Ok(series
        .times
        .iter()
        .zip(&series.states)
        .map(|(&t, rho)| ch.weight.eval(t) * trace_product(ch.op_dag_op(), rho))
        .collect())
}

/// Averages of `values` (sampled at `times`) over each `[a, b]` bin, by the
/// trapezoid rule on the samples and linear interpolation at bin edges.
pub fn bin_averages(times: &[f64], values: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    for k in 0..times.len() {
        if k > 0 {
            acc += 0.5 * (values[k] + values[k - 1]) * (times[k] - times[k - 1]);
        }
        cumulative.push(acc);
    }
    let at = |t: f64| -> f64 {
        let k = times.partition_point(|&s| s < t);
        if k == 0 {
            return cumulative[0];
        }
        if k >= times.len() {
            return cumulative[times.len() - 1];
        }
        let (t0, t1) = (times[k - 1], times[k]);
        let v = values[k - 1] + (values[k] - values[k - 1]) * (t - t0) / (t1 - t0);
        cumulative[k - 1] + 0.5 * (values[k - 1] + v) * (t - t0)
    };
    edges
        .windows(2)
        .map(|w| (at(w[1]) - at(w[0])) / (w[1] - w[0]))
        .collect()
}

/// Comparison of both sides of the energy balance on the photocurrent bins.
#[derive(Clone, Debug, Serialize)]
pub struct EnergyBalance {
    pub bin_start: Vec<f64>,
    pub bin_end: Vec<f64>,
    /// `ΔTr(H₀ρ)/Δt` from the oracle.
    pub lhs: Vec<f64>,
    /// Bin average of `Tr([H₀, H_t]ρ_t)/i` from the oracle.
    pub commutator: Vec<f64>,
    /// `Σ_ℓ ε_ℓ d E(μν_ℓ)/dt` from the ensemble.
    pub photocurrent: Vec<f64>,
    pub stderr: Vec<f64>,
    pub residual: Vec<f64>,
    /// `max |residual| / stderr`.
    pub max_ratio: f64,
}

/// Largest `‖[H₀, L_ℓ] − ε_ℓ L_ℓ‖_max` over channels.
pub fn eigenoperator_defect(model: &TimeLocalModel) -> Result<f64> {
    let h0 = model
        .bare_hamiltonian()
        .ok_or_else(|| Error::Precondition("model has no bare Hamiltonian".into()))?;
    let mut worst = 0.0f64;
    for (l, ch) in model.channels().iter().enumerate() {
        let eps = ch
            .energy
            .ok_or_else(|| Error::Precondition(format!("channel {l} has no energy quantum")))?;
        let op = ch.operator().to_dense();
        let defect = h0.commutator(&op)?.sub(&op.scale(C64::new(eps, 0.0)))?.max_abs();
        worst = worst.max(defect);
    }
    Ok(worst)
}

fn commutator_term(model: &TimeLocalModel, t: f64, rho: &ComplexMatrix) -> Result<f64> {
    let h0 = model.bare_hamiltonian().expect("checked");
    let h = crate::model::dense_hamiltonian(model, t);
    let c = h0.commutator(&h)?.matmul(rho)?.trace();
    Ok((c / C64::new(0.0, 1.0)).re)
}

/// Both sides of `d Tr(H₀ρ)/dt = Tr([H₀,H_t]ρ)/i + Σ ε_ℓ Γ_ℓ Tr(L_ℓρL_ℓ†)`
/// evaluated from a density matrix alone.
pub fn energy_balance_oracle(model: &TimeLocalModel, rho: &ComplexMatrix, t: f64) -> Result<(f64, f64)> {
    if eigenoperator_defect(model)? > 1e-10 {
        return Err(Error::Precondition(
            "jump operators are not eigenoperators of H₀".into(),
        ));
    }
    let h0 = SparseMatrix::from_dense(model.bare_hamiltonian().expect("checked"));
    let lhs = trace_product(&h0, &model.lgks_rhs(rho, t)?);
    let mut rhs = commutator_term(model, t, rho)?;
    for ch in model.channels() {
        rhs += ch.energy.expect("checked") * ch.weight.eval(t) * trace_product(ch.op_dag_op(), rho);
    }
    Ok((lhs, rhs))
}

/// Energy balance with the oracle on the left and the empirical
/// photocurrents on the right. `oracle` must contain every bin edge; a
/// finer series makes the commutator average more accurate.
pub fn energy_balance_check(
    model: &TimeLocalModel,
    oracle: &DensitySeries,
    estimate: &EnsembleEstimate,
) -> Result<EnergyBalance> {
    let defect = eigenoperator_defect(model)?;
    if defect > 1e-10 {
        return Err(Error::Precondition(format!(
            "jump operators are not eigenoperators of H₀ (defect {defect:e})"
        )));
    }
    let (current, stderr) = estimate
        .energy_current
        .clone()
        .ok_or_else(|| Error::Precondition("ensemble ran without channel energies".into()))?;
    let h0 = SparseMatrix::from_dense(model.bare_hamiltonian().expect("checked"));
    let energy = oracle.expectation(&h0);
    let comm: Vec<f64> = oracle
        .times
        .iter()
        .zip(&oracle.states)
        .map(|(&t, rho)| commutator_term(model, t, rho))
        .collect::<Result<_>>()?;
    let edges = &estimate.bin_edges;
    let bin_start = edges[..edges.len() - 1].to_vec();
    let bin_end = edges[1..].to_vec();
    let index_of = |t: f64| -> Result<usize> {
        oracle
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| Error::invalid(format!("oracle series lacks bin edge t = {t}")))
    };
    let commutator = bin_averages(&oracle.times, &comm, edges);
    let mut lhs = Vec::with_capacity(current.len());
    let mut residual = Vec::with_capacity(current.len());
    let mut max_ratio = 0.0f64;
    for b in 0..current.len() {
        let (a, z) = (index_of(bin_start[b])?, index_of(bin_end[b])?);
        let l = (energy[z] - energy[a]) / (bin_end[b] - bin_start[b]);
        let r = l - commutator[b] - current[b];
        let ratio = if stderr[b] > 0.0 {
            r.abs() / stderr[b]
        } else if r.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        max_ratio = max_ratio.max(ratio);
        lhs.push(l);
        residual.push(r);
    }
    Ok(EnergyBalance {
        bin_start,
        bin_end,
        lhs,
        commutator,
        photocurrent: current,
        stderr,
        residual,
        max_ratio,
    })
}
