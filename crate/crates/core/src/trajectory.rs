//! Single quantum trajectories: a unit state vector driven by the jump
//! stochastic Schrödinger equation, together with the influence martingale
//! `μ_t` that reweights it.
//!
//! Between jumps the state follows
//! `dψ = [−iH_t − Σ_ℓ Γ_ℓ,t (L_ℓ†L_ℓ − ‖L_ℓψ‖²)/2] ψ dt`
//! and `log|μ|` grows by `Σ_ℓ (r_ℓ,t − Γ_ℓ,t) ‖L_ℓψ‖² dt`. A jump on channel
//! `ℓ`, fired at rate `r_ℓ,t ‖L_ℓψ‖²`, maps `ψ ↦ L_ℓψ/‖L_ℓψ‖` and multiplies
//! `μ` by `Γ_ℓ,t / r_ℓ,t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm_sqr, ComplexMatrix, ComplexVector, C64, I};
use crate::model::{Coefficients, TimeLocalModel};

/// Martingale value stored as sign and log-magnitude so that long stretches
/// of negative weights cannot overflow it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Martingale {
    sign: f64,
    log_abs: f64,
}

impl Martingale {
    pub const ONE: Martingale = Martingale {
        sign: 1.0,
        log_abs: 0.0,
    };

    pub fn value(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_abs.exp()
        }
    }

    /// `+1`, `−1`, or `0` after a jump with zero weight.
    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn log_abs(&self) -> f64 {
        self.log_abs
    }

    /// `μ ← μ · factor`.
    pub fn scale(&mut self, factor: f64) {
        if factor == 0.0 {
            self.sign = 0.0;
            self.log_abs = f64::NEG_INFINITY;
        } else if self.sign != 0.0 {
            self.sign *= factor.signum();
            self.log_abs += factor.abs().ln();
        }
    }

    /// `|μ| ← |μ| · exp(delta)`.
    pub fn grow(&mut self, delta: f64) {
        if self.sign != 0.0 {
            self.log_abs += delta;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub channel: usize,
    pub time: f64,
}

impl JumpRecord {
    pub fn new(channel: usize, time: f64) -> Self {
        Self { channel, time }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Integrate the norm-preserving nonlinear equation for `ψ`.
    #[default]
    Nonlinear,
    /// Integrate the linear equation `dφ = [−iH − ½ΣΓL†L]φ dt` and normalize.
    LinearNormalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Fixed step; each active channel fires with probability
    /// `r‖Lψ‖²Δt`, which must not exceed `p_max`.
    BernoulliStep { dt: f64, p_max: f64 },
    /// Integrate the hazard until it crosses an exponential threshold.
    WaitingTime { dt: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    #[serde(default)]
    pub representation: Representation,
}

impl SchemeConfig {
    pub const DEFAULT_P_MAX: f64 = 0.1;

    pub fn bernoulli(dt: f64) -> Self {
        Self {
            scheme: Scheme::BernoulliStep {
                dt,
                p_max: Self::DEFAULT_P_MAX,
            },
            representation: Representation::Nonlinear,
        }
    }

    pub fn waiting_time(dt: f64) -> Self {
        Self {
            scheme: Scheme::WaitingTime { dt },
            representation: Representation::Nonlinear,
        }
    }

    pub fn with_representation(mut self, representation: Representation) -> Self {
        self.representation = representation;
        self
    }

    pub fn dt(&self) -> f64 {
        match self.scheme {
            Scheme::BernoulliStep { dt, .. } | Scheme::WaitingTime { dt } => dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dt = self.dt();
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {dt}")));
        }
        if let Scheme::BernoulliStep { p_max, .. } = self.scheme {
            if !(p_max > 0.0 && p_max <= 0.2) {
                return Err(Error::invalid(format!("p_max must lie in (0, 0.2], got {p_max}")));
            }
        }
        Ok(())
    }
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self::bernoulli(1e-3)
    }
}

/// Position of one trajectory.
#[derive(Clone, Debug)]
pub struct TrajectoryState {
    pub t: f64,
    psi: ComplexVector,
    mu: Martingale,
    jumps: Vec<JumpRecord>,
    /// `μ` right after each jump, parallel to `jumps`.
    jump_weights: Vec<f64>,
    /// Hazard left before the next waiting-time jump.
    threshold: Option<f64>,
}

impl TrajectoryState {
    pub fn new(psi0: &ComplexVector) -> Result<Self> {
        let n2 = psi0.norm_sqr();
        if !psi0.is_finite() || (n2 - 1.0).abs() > 1e-8 {
            return Err(Error::Precondition(format!(
                "initial state must have unit norm, got ‖ψ‖² = {n2}"
            )));
        }
        Ok(Self {
            t: 0.0,
            psi: psi0.scale(C64::new(1.0 / n2.sqrt(), 0.0)),
            mu: Martingale::ONE,
            jumps: Vec::new(),
            jump_weights: Vec::new(),
            threshold: None,
        })
    }

    pub fn psi(&self) -> &ComplexVector {
        &self.psi
    }

    pub fn mu(&self) -> f64 {
        self.mu.value()
    }

    pub fn martingale(&self) -> Martingale {
        self.mu
    }

    pub fn jumps(&self) -> &[JumpRecord] {
        &self.jumps
    }

    pub fn jump_weights(&self) -> &[f64] {
        &self.jump_weights
    }
}

/// Drift right-hand side; returns the `log|μ|` rate. Expectations are taken in the normalized state so
/// that the nonlinear flow leaves the unit sphere invariant for any vector.
pub(crate) fn drift_rhs(
    model: &TimeLocalModel,
    linear: bool,
    c: &Coefficients,
    x: &[C64],
    out: &mut [C64],
    tmp: &mut [C64],
) -> f64 {
    out.fill(C64::new(0.0, 0.0));
    for (term, &h) in model.hamiltonian().terms().iter().zip(&c.hamiltonian) {
        if h != 0.0 {
            term.operator.matvec_acc(-I * h, x, out);
        }
    }
    let n2 = norm_sqr(x);
    let mut log_mu = 0.0;
    for (l, ch) in model.channels().iter().enumerate() {
        let (w, r) = (c.weight[l], c.rate[l]);
        if w == 0.0 && r == 0.0 {
            continue;
        }
        ch.op_dag_op().matvec_into(x, tmp);
        let e = x.iter().zip(tmp.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>() / n2;
        log_mu += (r - w) * e;
        if w != 0.0 {
            let k = -0.5 * w;
            if linear {
                for (o, y) in out.iter_mut().zip(tmp.iter()) {
                    *o += y * k;
                }
            } else {
                for ((o, y), v) in out.iter_mut().zip(tmp.iter()).zip(x) {
                    *o += (y - v * e) * k;
                }
            }
        }
    }
    log_mu
}

/// Reusable RK4 workspace for one model.
pub struct Propagator<'m> {
    model: &'m TimeLocalModel,
    coeffs: Coefficients,
    k: [Vec<C64>; 4],
    stage: Vec<C64>,
    tmp: Vec<C64>,
}

impl<'m> Propagator<'m> {
    pub fn new(model: &'m TimeLocalModel) -> Self {
        let d = model.dim();
        let z = || vec![C64::new(0.0, 0.0); d];
        Self {
            model,
            coeffs: Coefficients::default(),
            k: [z(), z(), z(), z()],
            stage: z(),
            tmp: z(),
        }
    }

    pub fn model(&self) -> &'m TimeLocalModel {
        self.model
    }

    fn load(&mut self, t: f64) -> Result<()> {
        self.model.coefficients(t, &mut self.coeffs);
        let c = &self.coeffs;
        if c.weight
            .iter()
            .chain(&c.rate)
            .chain(&c.hamiltonian)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                what: "model coefficient",
                t,
            });
        }
        Ok(())
    }

    /// One RK4 step of size `h` on `x` (not renormalized). Returns the
    /// increment of `log|μ|` over the step.
    pub fn rk4(&mut self, x: &mut [C64], t: f64, h: f64, linear: bool) -> Result<f64> {
        let model = self.model;
        let mut l = [0.0; 4];
        let nodes = [(0.0, 0usize), (0.5, 1), (0.5, 2), (1.0, 3)];
        for (stage_idx, &(frac, _)) in nodes.iter().enumerate() {
            self.load(t + frac * h)?;
            if stage_idx > 0 {
                let a = nodes[stage_idx].0 * h;
                let prev = &self.k[stage_idx - 1];
                for ((s, v), k) in self.stage.iter_mut().zip(x.iter()).zip(prev) {
                    *s = v + k * a;
                }
            } else {
                self.stage.copy_from_slice(x);
            }
            let (k, tmp) = (&mut self.k[stage_idx], &mut self.tmp);
            l[stage_idx] = drift_rhs(model, linear, &self.coeffs, &self.stage, k, tmp);
        }
        let c = h / 6.0;
        let [k1, k2, k3, k4] = &self.k;
        for (i, v) in x.iter_mut().enumerate() {
            *v += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * c;
        }
        if x.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite {
                what: "state vector",
                t: t + h,
            });
        }
        Ok(c * (l[0] + 2.0 * (l[1] + l[2]) + l[3]))
    }

    /// Deterministic part of the evolution over `[t, t + h]`.
    pub fn drift(&mut self, state: &mut TrajectoryState, h: f64, repr: Representation) -> Result<()> {
        if h <= 0.0 {
            return Ok(());
        }
        let linear = repr == Representation::LinearNormalized;
        let dlog = self.rk4(state.psi.as_mut_slice(), state.t, h, linear)?;
        let n = state.psi.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::NonFinite {
                what: "state norm",
                t: state.t + h,
            });
        }
        for v in state.psi.as_mut_slice() {
            *v /= n;
        }
        state.mu.grow(dlog);
        state.t += h;
        Ok(())
    }

    /// Jump on channel `l` at the current time of `state`.
    pub fn jump(&mut self, state: &mut TrajectoryState, l: usize) -> Result<()> {
        let t = state.t;
        self.load(t)?;
        let (w, r) = (self.coeffs.weight[l], self.coeffs.rate[l]);
        let ch = &self.model.channels()[l];
        ch.operator().matvec_into(state.psi.as_slice(), &mut self.tmp);
        let n = norm_sqr(&self.tmp).sqrt();
        if n <= 1e-14 {
            return Err(Error::DarkStateJump { channel: l, t });
        }
        for (v, y) in state.psi.as_mut_slice().iter_mut().zip(&self.tmp) {
            *v = y / n;
        }
        state.mu.scale(w / r);
        state.jumps.push(JumpRecord::new(l, t));
        state.jump_weights.push(state.mu.value());
        Ok(())
    }

    /// Per-channel jump intensities `r_ℓ‖L_ℓψ‖²` at `t`; returns their sum.
    fn intensities(&mut self, psi: &[C64], t: f64, out: &mut Vec<f64>) -> Result<f64> {
        self.load(t)?;
        out.clear();
        let mut total = 0.0;
        for (l, ch) in self.model.channels().iter().enumerate() {
            let r = self.coeffs.rate[l];
            let v = if r > 0.0 {
                r * ch.operator().apply_norm_sqr(psi)
            } else {
                0.0
            };
            out.push(v);
            total += v;
        }
        Ok(total)
    }
}

/// Propagates trajectories with a fixed jump-sampling scheme.
pub struct Sampler<'m> {
    prop: Propagator<'m>,
    scheme: SchemeConfig,
    intensities: Vec<f64>,
    saved: ComplexVector,
}

impl<'m> Sampler<'m> {
    pub fn new(model: &'m TimeLocalModel, scheme: SchemeConfig) -> Result<Self> {
        scheme.validate()?;
        Ok(Self {
            prop: Propagator::new(model),
            scheme,
            intensities: Vec::with_capacity(model.channels().len()),
            saved: ComplexVector::zeros(model.dim()),
        })
    }

    pub fn scheme(&self) -> SchemeConfig {
        self.scheme
    }

    /// One step of size `h` (at most the scheme step).
    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut TrajectoryState, h: f64, rng: &mut R) -> Result<()> {
        let repr = self.scheme.representation;
        match self.scheme.scheme {
            Scheme::BernoulliStep { p_max, .. } => {
                let t = state.t;
                self.prop.load(t)?;
                let model = self.prop.model;
                for l in 0..model.channels().len() {
                    let r = self.prop.coeffs.rate[l];
                    if r <= 0.0 {
                        continue;
                    }
                    let p = r * model.channels()[l].operator().apply_norm_sqr(state.psi.as_slice()) * h;
                    if p > p_max {
                        return Err(Error::StepTooLarge {
                            channel: l,
                            t,
                            probability: p,
                            limit: p_max,
                        });
                    }
                    let u: f64 = rng.random();
                    if u < p {
                        self.prop.jump(state, l)?;
                        self.prop.load(t)?;
                    }
                }
                self.prop.drift(state, h, repr)
            }
            Scheme::WaitingTime { .. } => self.waiting_time_step(state, h, rng),
        }
    }

    fn waiting_time_step<R: Rng + ?Sized>(&mut self, state: &mut TrajectoryState, h: f64, rng: &mut R) -> Result<()> {
        let repr = self.scheme.representation;
        let end = state.t + h;
        let mut left = h;
        while left > 0.0 {
            let remaining = match state.threshold {
                Some(x) => x,
                None => {
                    let u: f64 = rng.random();
                    -(1.0 - u).ln()
                }
            };
            let t0 = state.t;
            let r0 = self.prop.intensities(state.psi.as_slice(), t0, &mut self.intensities)?;
            self.saved.as_mut_slice().copy_from_slice(state.psi.as_slice());
            let mu0 = state.mu;
            self.prop.drift(state, left, repr)?;
            let r1 = self
                .prop
                .intensities(state.psi.as_slice(), t0 + left, &mut self.intensities)?;
            let accumulated = 0.5 * (r0 + r1) * left;
            if accumulated < remaining {
                state.threshold = Some(remaining - accumulated);
                break;
            }
            // the threshold is crossed inside the step: redo the drift up to the crossing
            let dt_star = left * (remaining / accumulated);
            state.psi.as_mut_slice().copy_from_slice(self.saved.as_slice());
            state.mu = mu0;
            state.t = t0;
            self.prop.drift(state, dt_star, repr)?;
            let total = self
                .prop
                .intensities(state.psi.as_slice(), state.t, &mut self.intensities)?;
            if !(total > 0.0) {
                return Err(Error::DarkStateJump {
                    channel: usize::MAX,
                    t: state.t,
                });
            }
            let u: f64 = rng.random();
            let target = u * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (l, &w) in self.intensities.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    chosen = Some(l);
                    if target < acc {
                        break;
                    }
                }
            }
            self.prop.jump(state, chosen.expect("positive total intensity"))?;
            state.threshold = None;
            if end - state.t <= 1e-15 * end.abs().max(1.0) {
                break;
            }
            left = end - state.t;
        }
        state.t = end;
        if state.threshold.is_none() {
            let u: f64 = rng.random();
            state.threshold = Some(-(1.0 - u).ln());
        }
        Ok(())
    }

    /// Advances to `target` in equal steps no longer than the scheme step.
    pub fn advance_to<R: Rng + ?Sized>(&mut self, state: &mut TrajectoryState, target: f64, rng: &mut R) -> Result<()> {
        let span = target - state.t;
        if span <= 0.0 {
            return Ok(());
        }
        let n = ((span / self.scheme.dt()) - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        let start = state.t;
        for k in 0..n {
            let next = if k + 1 == n { target } else { start + (k + 1) as f64 * h };
            let step = next - state.t;
            self.step(state, step, rng)?;
            state.t = next;
        }
        Ok(())
    }
}

/// RNG stream of trajectory `index` under `master_seed`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Deterministic part of the evolution over one step of size `dt`.
pub fn drift_step(state: &TrajectoryState, model: &TimeLocalModel, dt: f64) -> Result<TrajectoryState> {
    let mut next = state.clone();
    Propagator::new(model).drift(&mut next, dt, Representation::Nonlinear)?;
    Ok(next)
}

/// Applies a jump on channel `l` at time `t`.
pub fn jump_apply(state: &TrajectoryState, model: &TimeLocalModel, l: usize, t: f64) -> Result<TrajectoryState> {
    if l >= model.channels().len() {
        return Err(Error::invalid(format!("no channel {l}")));
    }
    let mut next = state.clone();
    next.t = t;
    Propagator::new(model).jump(&mut next, l)?;
    Ok(next)
}

/// One scheme step from `state`.
pub fn step<R: Rng + ?Sized>(
    state: &TrajectoryState,
    model: &TimeLocalModel,
    scheme: SchemeConfig,
    rng: &mut R,
) -> Result<TrajectoryState> {
    let mut next = state.clone();
    Sampler::new(model, scheme)?.step(&mut next, scheme.dt(), rng)?;
    Ok(next)
}

/// A recorded trajectory.
#[derive(Clone, Debug)]
pub struct Path {
    pub times: Vec<f64>,
    pub psi: Vec<ComplexVector>,
    pub mu: Vec<f64>,
    pub jumps: Vec<JumpRecord>,
}

/// Samples trajectory `index` and records it on `grid`.
pub fn sample_path(
    model: &TimeLocalModel,
    psi0: &ComplexVector,
    scheme: SchemeConfig,
    grid: &[f64],
    master_seed: u64,
    index: u64,
) -> Result<Path> {
    let mut sampler = Sampler::new(model, scheme)?;
    let mut rng = trajectory_rng(master_seed, index);
    let mut state = TrajectoryState::new(psi0)?;
    let mut path = Path {
        times: Vec::with_capacity(grid.len()),
        psi: Vec::with_capacity(grid.len()),
        mu: Vec::with_capacity(grid.len()),
        jumps: Vec::new(),
    };
    for &t in grid {
        sampler.advance_to(&mut state, t, &mut rng)?;
        path.times.push(t);
        path.psi.push(state.psi.clone());
        path.mu.push(state.mu());
    }
    path.jumps = state.jumps;
    Ok(path)
}

/// Solution of the linear equation along a prescribed jump record.
#[derive(Clone, Debug)]
pub struct LinearPath {
    pub times: Vec<f64>,
    /// `φ_t = exp(log_scale) · phi`.
    pub phi: Vec<ComplexVector>,
    pub log_scale: Vec<f64>,
    /// `φ_t / ‖φ_t‖`.
    pub psi: Vec<ComplexVector>,
    /// Factorized martingale along the record.
    pub mu: Vec<f64>,
}

impl LinearPath {
    /// `φ_t` without the separate scale.
    pub fn phi_unscaled(&self, k: usize) -> ComplexVector {
        self.phi[k].scale(C64::new(self.log_scale[k].exp(), 0.0))
    }
}

const RESCALE_LOW: f64 = 1e-150;
const RESCALE_HIGH: f64 = 1e150;

fn check_record(jumps: &[JumpRecord], model: &TimeLocalModel) -> Result<()> {
    for w in jumps.windows(2) {
        if !(w[1].time > w[0].time) {
            return Err(Error::invalid("jump times must be strictly increasing"));
        }
    }
    if jumps
        .iter()
        .any(|j| j.channel >= model.channels().len() || !(j.time >= 0.0))
    {
        return Err(Error::invalid(
            "jump record refers to an unknown channel or a negative time",
        ));
    }
    Ok(())
}

/// Integrates `x` from `a` to `b` in equal RK4 substeps no longer than `dt`.
/// With `log_scale`, `x` is rescaled whenever its largest entry leaves
/// `[1e-150, 1e150]` and the logarithm of the removed factor accumulated.
fn integrate_span(
    prop: &mut Propagator<'_>,
    x: &mut [C64],
    (a, b): (f64, f64),
    dt: f64,
    linear: bool,
    mut log_scale: Option<&mut f64>,
) -> Result<f64> {
    let span = b - a;
    if span <= 0.0 {
        return Ok(0.0);
    }
    let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut dlog = 0.0;
    for k in 0..n {
        dlog += prop.rk4(x, a + k as f64 * h, h, linear)?;
        if !linear {
            let nrm = norm_sqr(x).sqrt();
            for v in x.iter_mut() {
                *v /= nrm;
            }
        } else if let Some(acc) = log_scale.as_deref_mut() {
            rescale(x, acc);
        }
    }
    Ok(dlog)
}

fn rescale(x: &mut [C64], log_scale: &mut f64) {
    let m = x.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
    if m > 0.0 && !(RESCALE_LOW..=RESCALE_HIGH).contains(&m) {
        for v in x.iter_mut() {
            *v /= m;
        }
        *log_scale += m.ln();
    }
}

/// Walks a jump record and the recording grid in time order, integrating
/// between events. Jumps coinciding with a grid time are applied first.
fn follow_record(
    model: &TimeLocalModel,
    x0: &ComplexVector,
    jumps: &[JumpRecord],
    grid: &[f64],
    dt: f64,
    linear: bool,
    mut record: impl FnMut(f64, &[C64], f64, Martingale),
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    check_record(jumps, model)?;
    let mut prop = Propagator::new(model);
    let mut x = x0.clone();
    let mut log_scale = 0.0;
    let mut mu = Martingale::ONE;
    let mut t = 0.0;
    let mut next_jump = 0;
    let mut tmp = vec![C64::new(0.0, 0.0); model.dim()];
    for &target in grid {
        loop {
            let jump_due = jumps.get(next_jump).filter(|j| j.time <= target);
            let stop = jump_due.map_or(target, |j| j.time);
            mu.grow(integrate_span(
                &mut prop,
                x.as_mut_slice(),
                (t, stop),
                dt,
                linear,
                Some(&mut log_scale),
            )?);
            t = t.max(stop);
            let Some(j) = jump_due.copied() else { break };
            let c = model.coefficients_at(j.time);
            let ch = &model.channels()[j.channel];
            ch.operator().matvec_into(x.as_slice(), &mut tmp);
            let n = norm_sqr(&tmp).sqrt();
            if n <= 1e-14 * norm_sqr(x.as_slice()).sqrt() || n == 0.0 {
                return Err(Error::DarkStateJump {
                    channel: j.channel,
                    t: j.time,
                });
            }
            let scale = if linear { 1.0 } else { 1.0 / n };
            for (v, y) in x.as_mut_slice().iter_mut().zip(&tmp) {
                *v = y * scale;
            }
            if linear {
                rescale(x.as_mut_slice(), &mut log_scale);
            }
            mu.scale(c.weight[j.channel] / c.rate[j.channel]);
            next_jump += 1;
        }
        record(target, x.as_slice(), log_scale, mu);
    }
    Ok(())
}

/// Propagates the linear equation from `phi0` along `jumps`, applying the
/// (unnormalized) jump operators, and records on `grid`.
pub fn propagate_linear(
    phi0: &ComplexVector,
    model: &TimeLocalModel,
    jumps: &[JumpRecord],
    grid: &[f64],
    dt: f64,
) -> Result<LinearPath> {
    let mut path = LinearPath {
        times: Vec::new(),
        phi: Vec::new(),
        log_scale: Vec::new(),
        psi: Vec::new(),
        mu: Vec::new(),
    };
    follow_record(model, phi0, jumps, grid, dt, true, |t, x, log_scale, mu| {
        let phi = ComplexVector::new(x.to_vec());
        path.times.push(t);
        path.psi.push(phi.normalized().unwrap_or_else(|| phi.clone()));
        path.phi.push(phi);
        path.log_scale.push(log_scale);
        path.mu.push(mu.value());
    })?;
    Ok(path)
}

/// Nonlinear propagation of a unit vector along a prescribed jump record.
pub fn replay_nonlinear(
    psi0: &ComplexVector,
    model: &TimeLocalModel,
    jumps: &[JumpRecord],
    grid: &[f64],
    dt: f64,
) -> Result<Path> {
    let start = TrajectoryState::new(psi0)?;
    let mut path = Path {
        times: Vec::new(),
        psi: Vec::new(),
        mu: Vec::new(),
        jumps: jumps.to_vec(),
    };
    follow_record(model, start.psi(), jumps, grid, dt, false, |t, x, _, mu| {
        path.times.push(t);
        path.psi.push(ComplexVector::new(x.to_vec()));
        path.mu.push(mu.value());
    })?;
    Ok(path)
}

/// Green function `G_{t,s}` of the no-jump linear dynamics.
#[derive(Clone, Debug)]
pub struct GreenPropagator {
    pub matrix: ComplexMatrix,
    pub s: f64,
    pub t: f64,
}

pub fn green_propagator(model: &TimeLocalModel, s: f64, t: f64, dt: f64) -> Result<GreenPropagator> {
    if !(s <= t) {
        return Err(Error::invalid(format!(
            "green propagator needs s ≤ t, got s = {s}, t = {t}"
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let d = model.dim();
    let mut prop = Propagator::new(model);
    let mut g = ComplexMatrix::zeros(d);
    for j in 0..d {
        let mut col = ComplexVector::basis(d, j);
        integrate_span(&mut prop, col.as_mut_slice(), (s, t), dt, true, None)?;
        for i in 0..d {
            g[(i, j)] = col[i];
        }
    }
    if !g.is_finite() {
        return Err(Error::NonFinite {
            what: "green propagator",
            t,
        });
    }
    Ok(GreenPropagator { matrix: g, s, t })
}

/// Probability density that, starting from the unit vector `z` at time 0,
/// the jumps in `record` occur (with those channels and times) and no other
/// jump occurs up to `t`.
pub fn waiting_time_density(
    model: &TimeLocalModel,
    z: &ComplexVector,
    record: &[JumpRecord],
    t: f64,
    dt: f64,
) -> Result<f64> {
    check_record(record, model)?;
    if record.last().is_some_and(|j| j.time > t) {
        return Err(Error::invalid("jump record extends beyond t"));
    }
    let mut x = TrajectoryState::new(z)?.psi;
    let mut prop = Propagator::new(model);
    let mut tmp = vec![C64::new(0.0, 0.0); model.dim()];
    let mut log_p = 0.0;
    let mut cur = 0.0;
    let mut interval = |x: &mut ComplexVector, a: f64, b: f64, log_p: &mut f64| -> Result<()> {
        // ‖G z‖² / m for a unit z equals the survival probability exp(−∫Σ r‖Lψ‖²)
        let mut log_scale = 0.0;
        let log_m = integrate_span(&mut prop, x.as_mut_slice(), (a, b), dt, true, Some(&mut log_scale))?;
        let n2 = x.norm_sqr();
        *log_p += n2.ln() + 2.0 * log_scale - log_m;
        for v in x.as_mut_slice() {
            *v /= n2.sqrt();
        }
        Ok(())
    };
    for j in record {
        interval(&mut x, cur, j.time, &mut log_p)?;
        let r = model.rate(j.channel, j.time);
        model.channels()[j.channel]
            .operator()
            .matvec_into(x.as_slice(), &mut tmp);
        let n2 = norm_sqr(&tmp);
        if !(r > 0.0) || n2 == 0.0 {
            return Ok(0.0);
        }
        log_p += (r * n2).ln();
        for (v, y) in x.as_mut_slice().iter_mut().zip(&tmp) {
            *v = y / n2.sqrt();
        }
        cur = j.time;
    }
    interval(&mut x, cur, t, &mut log_p)?;
    let p = log_p.exp();
    if !p.is_finite() {
        return Err(Error::NoConvergence("waiting-time density"));
    }
    Ok(p)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Total probability of exactly `n` jumps on `[0, t]` for `n = 0..=n_max`,
/// by nested Gauss–Legendre quadrature of [`waiting_time_density`] over the
/// ordered jump times, summed over channel sequences.
pub fn waiting_time_mass(
    model: &TimeLocalModel,
    z: &ComplexVector,
    t: f64,
    n_max: usize,
    nodes: usize,
    dt: f64,
) -> Result<Vec<f64>> {
    let (x, w) = gauss_legendre(nodes);
    let channels = model.channels().len();
    let mut out = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let mut record = Vec::with_capacity(n);
        out.push(mass_rec(model, z, t, n, channels, &x, &w, dt, 0.0, &mut record)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn mass_rec(
    model: &TimeLocalModel,
    z: &ComplexVector,
    t: f64,
    n: usize,
    channels: usize,
    x: &[f64],
    w: &[f64],
    dt: f64,
    lower: f64,
    record: &mut Vec<JumpRecord>,
) -> Result<f64> {
    if record.len() == n {
        return waiting_time_density(model, z, record, t, dt);
    }
    let half = 0.5 * (t - lower);
    let mut sum = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        let s = lower + half * (xi + 1.0);
        for l in 0..channels {
            record.push(JumpRecord::new(l, s));
            sum += half * wi * mass_rec(model, z, t, n, channels, x, w, dt, s, record)?;
            record.pop();
        }
    }
    Ok(sum)
}

/// One explicit Euler update of the martingale SDE on a jump-free step,
/// `μ(1 + Σ(r − Γ)‖Lψ‖² h)`, as a factor.
pub fn euler_martingale_factor(model: &TimeLocalModel, psi: &ComplexVector, t: f64, h: f64) -> f64 {
    let c = model.coefficients_at(t);
    let n2 = psi.norm_sqr();
    let drift: f64 = model
        .channels()
        .iter()
        .enumerate()
        .map(|(l, ch)| (c.rate[l] - c.weight[l]) * ch.operator().apply_norm_sqr(psi.as_slice()) / n2)
        .sum();
    1.0 + drift * h
}

/// Factorized martingale factor `exp ∫ Σ(r − Γ)‖Lψ‖²` over one drift step.
pub fn factorized_martingale_factor(model: &TimeLocalModel, psi: &ComplexVector, t: f64, h: f64) -> Result<f64> {
    let mut state = TrajectoryState::new(psi)?;
    state.t = t;
    Propagator::new(model).drift(&mut state, h, Representation::Nonlinear)?;
    Ok(state.mu.log_abs().exp())
}

/// Splits `μ = μ⁺ − μ⁻` with `μ± = max(0, ±μ)`.
pub fn wp_decompose(mu: &[f64]) -> (Vec<f64>, Vec<f64>) {
    mu.iter().map(|&m| (m.max(0.0), (-m).max(0.0))).unzip()
}
