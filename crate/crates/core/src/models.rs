//! Builders for the four example systems: a two-level atom in a photonic
//! band gap, a qubit with controllable positivity, a two-qubit Redfield
//! model and a driven chain of coupled qubits.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::pauli::{lift, sigma_minus, sigma_plus, sigma_x, sigma_y, sigma_z};
use crate::linalg::{hermitian_eigen, ComplexMatrix, ComplexVector, HermitianMatrix, SparseMatrix, C64};
use crate::model::{Channel, Hamiltonian, RatePolicy, Table, TimeLocalModel, TimeScalar};

// Photonic band gap

/// Qubit with Lamb shift `S_t` and weight `Γ_t`:
/// `ρ̇ = (S_t/2i)[σ₊σ₋, ρ] + Γ_t([σ₋ρ, σ₊] + [σ₋, ρσ₊])`.
///
/// The dissipator equals the standard form with `L = σ₋` and weight `2Γ_t`.
pub fn build_pbg(s: TimeScalar, gamma: TimeScalar) -> Result<TimeLocalModel> {
    let n = SparseMatrix::from_dense(&number());
    TimeLocalModel::new(
        2,
        Hamiltonian::zero().with_term(s.scaled(0.5), n),
        vec![Channel::from_dense(&sigma_minus(), gamma.scaled(2.0)).with_label("sigma_minus")],
    )
}

/// `(S_t, Γ_t)` that make `⟨e|ρ_t|g⟩ = c_t ⟨e|ρ_0|g⟩` under [`build_pbg`]:
/// `S = −2 Im(ċ/c)` and `Γ = −Re(ċ/c)`.
pub fn pbg_coefficients(c: C64, c_dot: C64) -> (f64, f64) {
    let q = c_dot / c;
    (-2.0 * q.im, -q.re)
}

/// Demo coherence `c_t = e^{−γt}(1 − a + a cos ωt) e^{−iσt}` with
/// `γ = 0.2`, `a = 0.3`, `ω = 3`, `σ = 1`, and its time derivative.
pub fn pbg_demo_amplitude(t: f64) -> (C64, C64) {
    let (g, a, w, s) = (0.2, 0.3, 3.0, 1.0);
    let env = 1.0 - a + a * (w * t).cos();
    let d_env = -a * w * (w * t).sin();
    let phase = C64::from_polar((-g * t).exp(), -s * t);
    let c = phase * env;
    let c_dot = phase * (d_env - (g + C64::new(0.0, s)) * env);
    (c, c_dot)
}

/// Tabulated `(S_t, Γ_t)` of [`pbg_demo_amplitude`] on `samples` points of
/// `[0, horizon]`. `Γ_t` dips below zero periodically.
pub fn pbg_demo_tables(horizon: f64, samples: usize) -> Result<(Table, Table)> {
    if samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let times: Vec<f64> = (0..samples)
        .map(|k| horizon * k as f64 / (samples - 1) as f64)
        .collect();
    let (s, g): (Vec<f64>, Vec<f64>) = times
        .iter()
        .map(|&t| {
            let (c, dc) = pbg_demo_amplitude(t);
            pbg_coefficients(c, dc)
        })
        .unzip();
    Ok((Table::new(times.clone(), s)?, Table::new(times, g)?))
}

/// [`build_pbg`] with the demo coefficients evaluated in closed form.
pub fn pbg_demo(horizon: f64) -> Result<TimeLocalModel> {
    let s = TimeScalar::from_fn(|t| {
        let (c, dc) = pbg_demo_amplitude(t);
        pbg_coefficients(c, dc).0
    });
    let g = TimeScalar::from_fn(|t| {
        let (c, dc) = pbg_demo_amplitude(t);
        pbg_coefficients(c, dc).1
    });
    Ok(build_pbg(s, g)?.with_horizon(horizon))
}

fn number() -> ComplexMatrix {
    sigma_plus().matmul(&sigma_minus()).expect("2x2")
}

// Controllable positivity

/// Qubit with `H = 0`, `L_ℓ = σ_ℓ` and `Γ_ℓ,t = −a_ℓ + b_ℓ tanh(c_ℓ t)`.
pub fn build_controllable(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Result<TimeLocalModel> {
    if a.iter().chain(&b).chain(&c).any(|x| !x.is_finite()) {
        return Err(Error::invalid("controllable-positivity parameters must be finite"));
    }
    let ops = [("sigma_x", sigma_x()), ("sigma_y", sigma_y()), ("sigma_z", sigma_z())];
    let channels = ops
        .into_iter()
        .enumerate()
        .map(|(l, (label, op))| {
            let (a, b, c) = (a[l], b[l], c[l]);
            let weight = TimeScalar::from_fn(move |t| -a + b * (c * t).tanh()).with_bound(a.abs() + b.abs());
            Channel::from_dense(&op, weight).with_label(label)
        })
        .collect();
    TimeLocalModel::new(2, Hamiltonian::zero(), channels)
}

/// Weights `Γ₁ = −0.5 + 2 tanh(√2 t)`, `Γ₂ = −1 + 2 tanh(√3 t)`,
/// `Γ₃ = −0.8 + 2 tanh(√5 t)` on `[0, 3]`.
pub fn controllable_reference() -> TimeLocalModel {
    build_controllable([0.5, 1.0, 0.8], [2.0; 3], [SQRT_2, 3f64.sqrt(), 5f64.sqrt()])
        .expect("finite parameters")
        .with_horizon(3.0)
}

/// `ψ₀ = (√3/2) e + (1/2) g`.
pub fn controllable_initial_state() -> ComplexVector {
    ComplexVector::from_real(&[3f64.sqrt() / 2.0, 0.5])
}

// Redfield

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedfieldParams {
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha: f64,
    pub kappa: f64,
}

impl RedfieldParams {
    /// `γ₁ = 1`, `γ₂ = 4`, `α = 3`, `κ = 1`.
    pub fn reference() -> Self {
        Self {
            gamma1: 1.0,
            gamma2: 4.0,
            alpha: 3.0,
            kappa: 1.0,
        }
    }

    pub fn a_matrix(&self) -> ComplexMatrix {
        let Self {
            gamma1: g1,
            gamma2: g2,
            alpha: a,
            kappa: k,
        } = *self;
        let off = a + k / 2.0;
        ComplexMatrix::from_rows(&[
            vec![C64::new(a, 0.0), C64::new(off, -(g2 - g1) / 4.0)],
            vec![C64::new(off, -(g1 - g2) / 4.0), C64::new(a + k, 0.0)],
        ])
        .expect("2x2")
    }

    pub fn b_matrix(&self) -> ComplexMatrix {
        let (g1, g2, k) = (self.gamma1, self.gamma2, self.kappa);
        let m = (g1 + g2) / 2.0;
        ComplexMatrix::from_rows(&[
            vec![C64::new(g1 / 2.0, 0.0), C64::new(m / 2.0, -k / 2.0)],
            vec![C64::new(m / 2.0, k / 2.0), C64::new(g2 / 2.0, 0.0)],
        ])
        .expect("2x2")
    }

    /// Closed-form eigenvalues of `B`, ascending.
    pub fn lambdas(&self) -> [f64; 2] {
        let (g1, g2, k) = (self.gamma1, self.gamma2, self.kappa);
        let r = ((g1 * g1 + g2 * g2 + 2.0 * k * k) / 8.0).sqrt();
        [(g1 + g2) / 4.0 - r, (g1 + g2) / 4.0 + r]
    }

    fn check(&self) -> Result<()> {
        let finite = [self.gamma1, self.gamma2, self.alpha, self.kappa]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.gamma1 <= 0.0 || self.gamma2 <= 0.0 {
            return Err(Error::invalid(
                "Redfield rates γ₁, γ₂ must be positive and all parameters finite",
            ));
        }
        Ok(())
    }
}

/// Diagonalized Redfield model together with `U` and `λ`.
#[derive(Clone, Debug)]
pub struct Redfield {
    pub model: TimeLocalModel,
    pub lambdas: [f64; 2],
    pub u: ComplexMatrix,
}

/// Two qubits on basis `|ee⟩, |eg⟩, |ge⟩, |gg⟩` with `H = Σ A_ij σ₊⁽ʲ⁾σ₋⁽ⁱ⁾`,
/// `L_j = Σ_i σ₋⁽ⁱ⁾ U_ij` and constant weights `λ_j` from `U†BU = diag(λ)`.
pub fn build_redfield(p: RedfieldParams) -> Result<Redfield> {
    p.check()?;
    let eig = hermitian_eigen(&HermitianMatrix::new(p.b_matrix())?)?;
    let lambdas = [eig.values[0], eig.values[1]];
    if (lambdas[1] - lambdas[0]).abs() <= 1e-12 * lambdas[1].abs().max(1.0) {
        return Err(Error::invalid("B has degenerate eigenvalues"));
    }
    let u = eig.vectors;
    let lower = [lift(&sigma_minus(), 0, 2), lift(&sigma_minus(), 1, 2)];
    let raise = [lift(&sigma_plus(), 0, 2), lift(&sigma_plus(), 1, 2)];
    let a = p.a_matrix();
    let mut h = SparseMatrix::zeros(4);
    for i in 0..2 {
        for j in 0..2 {
            h = h.add(&raise[j].matmul(&lower[i])?.scale(a[(i, j)]))?;
        }
    }
    let channels = (0..2)
        .map(|j| {
            let op = lower[0].scale(u[(0, j)]).add(&lower[1].scale(u[(1, j)]))?;
            Ok(Channel::new(op, lambdas[j]).with_label(format!("L{}", j + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let model = TimeLocalModel::new(4, Hamiltonian::constant(h), channels)?.with_horizon(5.0);
    Ok(Redfield { model, lambdas, u })
}

/// `ψ₀ = √0.2 w₁ + √0.1 w₂ + √0.7 g` with `w_j = L_j† g` and `g = |gg⟩`.
pub fn redfield_initial_state(model: &TimeLocalModel) -> Result<ComplexVector> {
    if model.dim() != 4 || model.channels().len() != 2 {
        return Err(Error::invalid("expected the two-qubit Redfield model"));
    }
    let g = ComplexVector::basis(4, 3);
    let w: Vec<ComplexVector> = model
        .channels()
        .iter()
        .map(|c| c.operator().adjoint().matvec(&g))
        .collect::<Result<_>>()?;
    let psi = w[0]
        .scale(C64::new(0.2f64.sqrt(), 0.0))
        .add(&w[1].scale(C64::new(0.1f64.sqrt(), 0.0)))?
        .add(&g.scale(C64::new(0.7f64.sqrt(), 0.0)))?;
    psi.normalized()
        .ok_or_else(|| Error::invalid("degenerate initial state"))
}

/// Commutation defects of the Redfield channels: `max ‖[L_ℓ, L_k]‖` and
/// `max ‖([L_ℓ, L_k†] − δ_ℓk) g‖` on the joint ground state `g`.
///
/// `[L_ℓ, L_k†] = −Σ_i U_iℓ conj(U_ik) σ_z⁽ⁱ⁾` acts as `δ_ℓk` only on `g`.
pub fn redfield_commutator_defects(model: &TimeLocalModel) -> Result<(f64, f64)> {
    let ops: Vec<ComplexMatrix> = model.channels().iter().map(|c| c.operator().to_dense()).collect();
    let g = ComplexVector::basis(model.dim(), model.dim() - 1);
    let (mut same, mut mixed) = (0.0f64, 0.0f64);
    for (l, a) in ops.iter().enumerate() {
        for (k, b) in ops.iter().enumerate() {
            same = same.max(a.commutator(b)?.max_abs());
            let mut c = a.commutator(&b.adjoint())?;
            if l == k {
                c = c.sub(&ComplexMatrix::identity(model.dim()))?;
            }
            mixed = mixed.max(c.matvec(&g)?.as_slice().iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
    }
    Ok((same, mixed))
}

// Coupled chain

/// How the non-positive weight `Γ₁` is moved onto positive rates of the
/// `σ₋⁽¹⁾`/`σ₊⁽¹⁾` pair while keeping the drift unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// `c_t = 2Γ₁` where `Γ₁ < 0`: `r₁ = |Γ₁|` and `r_{1+N} = δ + 2|Γ₁|`.
    #[default]
    Mirror,
    /// `c_t = −b_t r_{1+N}`, `b_t = ((1 − sign Γ₁)/2)(Γ₁ + δ/2)/(Γ₁ + δ)`.
    /// This gives `r₁ = 3Γ₁ + δ` and `r_{1+N} = 2(Γ₁ + δ)` where `Γ₁ < 0`,
    /// so it only works for dips above `−δ/3`.
    Ratio,
    /// No shifting: `r = |Γ|` on every channel.
    AbsValue,
}

#[derive(Clone, Debug)]
pub struct ChainParams {
    pub n: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub delta: f64,
    /// `Γ₁,t`.
    pub gamma1: TimeScalar,
    pub split: SplitRule,
}

impl ChainParams {
    /// `γ = 1.063/0.129`, `δ = 0.063/0.129`, `λ = 10` and
    /// `Γ₁,t = γ − 12 e^{−2t³} sin²(15t)`.
    pub fn reference(n: usize) -> Self {
        let gamma = 1.063 / 0.129;
        Self {
            n,
            lambda: 10.0,
            gamma,
            delta: 0.063 / 0.129,
            gamma1: TimeScalar::from_fn(move |t| gamma - 12.0 * (-2.0 * t.powi(3)).exp() * (15.0 * t).sin().powi(2))
                .with_bound(gamma.max(12.0 - gamma)),
            split: SplitRule::Mirror,
        }
    }
}

/// Shift `c_t` applied to both rates of the `σ₋⁽¹⁾`/`σ₊⁽¹⁾` pair.
pub fn chain_split(rule: SplitRule, gamma1: f64, delta: f64) -> f64 {
    if gamma1 >= 0.0 {
        return 0.0;
    }
    match rule {
        SplitRule::Mirror => 2.0 * gamma1,
        SplitRule::Ratio => -2.0 * gamma1 - delta,
        SplitRule::AbsValue => 0.0,
    }
}

/// `N` qubits with `H = Σ σ₊⁽ℓ⁾σ₋⁽ℓ⁾ + λ Σ (σ₊⁽ℓ⁾σ₋⁽ℓ⁺¹⁾ + h.c.)`,
/// channels `σ₋⁽ℓ⁾` (weight `γ`, or `Γ₁,t` on the first site) followed by
/// `σ₊⁽ℓ⁾` (weight `δ`). Site 0 is the most significant tensor factor.
pub fn build_chain(p: &ChainParams) -> Result<TimeLocalModel> {
    let n = p.n;
    if n < 2 {
        return Err(Error::invalid("chain needs at least two qubits"));
    }
    if n > 20 {
        return Err(Error::ResourceLimit(format!("chain of {n} qubits")));
    }
    if !(p.gamma > 0.0 && p.delta > 0.0 && p.lambda.is_finite()) {
        return Err(Error::invalid("chain weights γ, δ must be positive"));
    }
    let d = 1usize << n;
    let lower: Vec<SparseMatrix> = (0..n).map(|l| lift(&sigma_minus(), l, n)).collect();
    let raise: Vec<SparseMatrix> = (0..n).map(|l| lift(&sigma_plus(), l, n)).collect();
    let mut h = SparseMatrix::zeros(d);
    for l in 0..n {
        h = h.add(&raise[l].matmul(&lower[l])?)?;
    }
    let k = C64::new(p.lambda, 0.0);
    for l in 0..n - 1 {
        let hop = raise[l].matmul(&lower[l + 1])?;
        h = h.add(&hop.scale(k))?.add(&hop.adjoint().scale(k))?;
    }

    let mut channels = Vec::with_capacity(2 * n);
    for (l, op) in lower.into_iter().enumerate() {
        let weight = if l == 0 {
            p.gamma1.clone()
        } else {
            TimeScalar::constant(p.gamma)
        };
        channels.push(Channel::new(op, weight).with_label(format!("sigma_minus_{}", l + 1)));
    }
    for (l, op) in raise.into_iter().enumerate() {
        channels.push(Channel::new(op, p.delta).with_label(format!("sigma_plus_{}", l + 1)));
    }
    if p.split != SplitRule::AbsValue {
        let (rule, delta, g1) = (p.split, p.delta, p.gamma1.clone());
        let split = TimeScalar::from_fn(move |t| chain_split(rule, g1.eval(t), delta));
        channels[0].rate = RatePolicy::Shifted {
            partner: n,
            split: split.clone(),
        };
        channels[n].rate = RatePolicy::Shifted { partner: 0, split };
    }
    let model = TimeLocalModel::new(d, Hamiltonian::constant(h), channels)?.with_horizon(1.0);
    if p.split == SplitRule::Ratio {
        let report = model.validate();
        if !report.is_empty() {
            return Err(Error::invalid(format!("ratio split yields invalid rates: {report}")));
        }
    }
    Ok(model)
}

/// All qubits excited, `|e…e⟩`.
pub fn chain_initial_state(n: usize) -> ComplexVector {
    ComplexVector::basis(1 << n, 0)
}

/// Projector onto the excited state of site `site`.
pub fn site_population(site: usize, n: usize) -> SparseMatrix {
    lift(&number(), site, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::outer;
    use crate::linalg::pauli::{excited, ground};
    use crate::master_eq::{integrate, trace_product, uniform_grid};
    use crate::model::Coefficients;
    use crate::trajectory::drift_rhs;
    use proptest::prelude::*;

    fn rho(v: &ComplexVector) -> ComplexMatrix {
        outer(v, v).unwrap()
    }

    #[test]
    fn pbg_without_dissipation_is_unitary() {
        let model = build_pbg(TimeScalar::constant(1.3), TimeScalar::constant(0.0))
            .unwrap()
            .with_horizon(2.0);
        let plus = excited().add(&ground()).unwrap().normalized().unwrap();
        let s = integrate(&model, &rho(&plus), &[2.0], 1e-3).unwrap();
        assert!((s.states[0][(0, 0)].re - 0.5).abs() < 1e-12);
        let expected = 0.5 * C64::from_polar(1.0, -1.3);
        assert!((s.states[0][(0, 1)] - expected).norm() < 1e-10);
    }

    #[test]
    fn pbg_constant_rate_is_decay() {
        let model = build_pbg(0.0.into(), TimeScalar::constant(0.5))
            .unwrap()
            .with_horizon(1.0);
        let s = integrate(&model, &rho(&excited()), &[1.0], 1e-3).unwrap();
        assert!((s.population(0, 0) - (-1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn pbg_reproduces_supplied_coherence() {
        let model = pbg_demo(5.0).unwrap();
        assert!(model.validate().is_empty());
        let plus = excited().add(&ground()).unwrap().normalized().unwrap();
        let grid = uniform_grid(5.0, 0.5);
        let s = integrate(&model, &rho(&plus), &grid, 1e-3).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let ratio = s.states[k][(0, 1)] / 0.5;
            assert!((ratio - pbg_demo_amplitude(t).0).norm() < 1e-9, "t = {t}");
        }
        let (_, g) = pbg_demo_tables(5.0, 501).unwrap();
        assert!(g.values().iter().any(|&x| x < 0.0));
    }

    #[test]
    fn controllable_weights() {
        let m = controllable_reference();
        assert_eq!(
            [m.weight(0, 0.0), m.weight(1, 0.0), m.weight(2, 0.0)],
            [-0.5, -1.0, -0.8]
        );
        assert!((0..3).all(|l| m.weight(l, 50.0) > 0.0));
        for ch in m.channels() {
            assert!(ch.op_dag_op().to_dense().max_abs_diff(&ComplexMatrix::identity(2)) < 1e-15);
        }
        assert!(m.validate().is_empty());
        assert!((controllable_initial_state().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn redfield_lambdas() {
        let p = RedfieldParams::reference();
        let r = build_redfield(p).unwrap();
        let closed = (5.0 - 38f64.sqrt()) / 4.0;
        assert!((r.lambdas[0] - closed).abs() < 1e-12);
        assert!((r.lambdas[0] + 0.29110).abs() < 1e-5);
        assert!((r.lambdas[1] - 2.79110).abs() < 1e-5);
        assert!((r.lambdas[0] + r.lambdas[1] - 2.5).abs() < 1e-12);
        assert_eq!(
            p.lambdas().map(|x| (x * 1e9).round()),
            r.lambdas.map(|x| (x * 1e9).round())
        );
        let diag = r.u.adjoint().matmul(&p.b_matrix()).unwrap().matmul(&r.u).unwrap();
        assert!(diag[(0, 1)].norm() < 1e-12 && diag[(1, 0)].norm() < 1e-12);
        assert!(r.model.validate().is_empty());
        assert!(p.a_matrix().is_hermitian(0.0));
    }

    #[test]
    fn redfield_commutators_hold_on_ground_state() {
        let r = build_redfield(RedfieldParams::reference()).unwrap();
        let (same, mixed) = redfield_commutator_defects(&r.model).unwrap();
        assert!(same <= 1e-12);
        assert!(mixed <= 1e-12);
        // On the full space the commutator is a σ_z combination, not the identity.
        let l = r.model.channels()[0].operator().to_dense();
        let c = l
            .commutator(&l.adjoint())
            .unwrap()
            .sub(&ComplexMatrix::identity(4))
            .unwrap();
        assert!(c.max_abs() > 0.5);
    }

    #[test]
    fn redfield_initial_state_is_normalized() {
        let r = build_redfield(RedfieldParams::reference()).unwrap();
        let psi = redfield_initial_state(&r.model).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-14);
        assert!((psi.as_slice()[3].norm_sqr() - 0.7).abs() < 1e-14);
        assert!(psi.as_slice()[0].norm() < 1e-15);
    }

    #[test]
    fn redfield_rejects_bad_rates() {
        let mut p = RedfieldParams::reference();
        p.gamma1 = 0.0;
        assert!(build_redfield(p).is_err());
        let degenerate = RedfieldParams {
            gamma1: 2.0,
            gamma2: 2.0,
            alpha: 0.0,
            kappa: 0.0,
        };
        // B = [[1, 1], [1, 1]] is not degenerate; equal rates alone are fine.
        assert!(build_redfield(degenerate).is_ok());
    }

    fn random_hermitian(seed: &[f64]) -> ComplexMatrix {
        let m = ComplexMatrix::from_fn(4, |i, j| {
            C64::new(seed[(4 * i + j) % seed.len()], seed[(3 * i + 5 * j + 1) % seed.len()])
        });
        m.add(&m.adjoint()).unwrap()
    }

    proptest! {
        #[test]
        fn redfield_dissipator_matches_double_sum(seed in prop::collection::vec(-1.0f64..1.0, 16)) {
            let p = RedfieldParams::reference();
            let r = build_redfield(p).unwrap();
            let rho = random_hermitian(&seed);
            let b = p.b_matrix();
            let lower = [lift(&sigma_minus(), 0, 2).to_dense(), lift(&sigma_minus(), 1, 2).to_dense()];
            let mut reference = ComplexMatrix::zeros(4);
            for i in 0..2 {
                for j in 0..2 {
                    let (li, lj) = (&lower[i], &lower[j]);
                    let ljd = lj.adjoint();
                    let term = li.matmul(&rho).unwrap().matmul(&ljd).unwrap()
                        .sub(&ljd.matmul(li).unwrap().matmul(&rho).unwrap().scale(C64::new(0.5, 0.0))).unwrap()
                        .sub(&rho.matmul(&ljd).unwrap().matmul(li).unwrap().scale(C64::new(0.5, 0.0))).unwrap();
                    reference = reference.add(&term.scale(b[(i, j)])).unwrap();
                }
            }
            let h = r.model.hamiltonian_at(0.0).to_dense();
            let unitary = h.commutator(&rho).unwrap().scale(C64::new(0.0, -1.0));
            let got = r.model.lgks_rhs(&rho, 0.0).unwrap().sub(&unitary).unwrap();
            prop_assert!(got.max_abs_diff(&reference) < 1e-10);
        }
    }

    #[test]
    fn chain_reference_values() {
        let p = ChainParams::reference(3);
        assert!((p.gamma - 8.2403).abs() < 1e-4);
        assert!((p.delta - 0.4884).abs() < 1e-4);
        let m = build_chain(&p).unwrap();
        assert_eq!(m.dim(), 8);
        assert_eq!(m.channels().len(), 6);
        assert!(m.validate().is_empty(), "{}", m.validate());
        let times: Vec<f64> = (0..=2000).map(|k| k as f64 * 5e-4).collect();
        let mut dipped = false;
        for &t in &times {
            if m.weight(0, t) < 0.0 {
                dipped = true;
                assert!(m.rate(0, t) > 0.0 && m.rate(3, t) > 0.0);
            }
        }
        assert!(dipped);
    }

    #[test]
    fn chain_ratio_split_rejects_deep_dips() {
        let mut p = ChainParams::reference(2);
        p.split = SplitRule::Ratio;
        assert!(build_chain(&p).is_err());
        p.gamma1 = TimeScalar::parse("-0.1 + 0.2*t").unwrap();
        let m = build_chain(&p).unwrap();
        assert!((m.rate(0, 0.0) - (3.0 * -0.1 + p.delta)).abs() < 1e-12);
        assert!((m.rate(2, 0.0) - 2.0 * (p.delta - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn chain_independent_decay() {
        let p = ChainParams {
            n: 2,
            lambda: 0.0,
            gamma: 1.5,
            delta: 1e-300,
            gamma1: TimeScalar::constant(1.5),
            split: SplitRule::AbsValue,
        };
        let m = build_chain(&p).unwrap();
        let s = integrate(&m, &rho(&chain_initial_state(2)), &[0.5, 1.0], 1e-3).unwrap();
        for site in 0..2 {
            let pops = s.expectation(&site_population(site, 2));
            assert!((pops[1] - (-1.5f64).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn chain_split_keeps_drift_on_sphere() {
        let p = ChainParams::reference(3);
        let shifted = build_chain(&p).unwrap();
        let x: Vec<C64> = (0..8)
            .map(|k| C64::new((k as f64 * 0.7).sin(), (k as f64 * 0.3).cos()))
            .collect();
        let x = ComplexVector::new(x).normalized().unwrap();
        for t in [0.05, 0.1, 0.2, 0.3] {
            let g1 = shifted.weight(0, t);
            if g1 >= 0.0 {
                continue;
            }
            // Same model with the weights replaced by the rates.
            let mut q = p.clone();
            q.split = SplitRule::AbsValue;
            let r1 = shifted.rate(0, t);
            let rn = shifted.rate(3, t);
            q.gamma1 = TimeScalar::constant(r1);
            let mut by_rate = build_chain(&q).unwrap();
            let mut chans = by_rate.channels().to_vec();
            chans[3].weight = TimeScalar::constant(rn);
            by_rate = TimeLocalModel::new(8, by_rate.hamiltonian().clone(), chans).unwrap();

            let drift = |m: &TimeLocalModel| {
                let mut c = Coefficients::default();
                m.coefficients(t, &mut c);
                let mut out = vec![C64::new(0.0, 0.0); 8];
                let mut tmp = vec![C64::new(0.0, 0.0); 8];
                drift_rhs(m, false, &c, x.as_slice(), &mut out, &mut tmp);
                ComplexVector::new(out)
            };
            assert!(drift(&shifted).max_abs_diff(&drift(&by_rate)) < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn chain_rejects_bad_sizes() {
        assert!(build_chain(&ChainParams::reference(1)).is_err());
        let mut p = ChainParams::reference(2);
        p.delta = 0.0;
        assert!(build_chain(&p).is_err());
        assert!((trace_product(&site_population(0, 2), &rho(&chain_initial_state(2))) - 1.0).abs() < 1e-15);
    }
}
