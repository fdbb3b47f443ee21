//! Time-local master equations
//! `ρ̇ = −i[H_t, ρ] + Σ_ℓ Γ_ℓ,t (L_ℓ ρ L_ℓ† − ½{L_ℓ†L_ℓ, ρ})`
//! with weights `Γ_ℓ,t` of either sign, plus the jump rates used when the
//! equation is unraveled into trajectories.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{ComplexMatrix, SparseMatrix, C64, I};

#[derive(Clone)]
enum ScalarKind {
    Constant(f64),
    Expr(Arc<Expr>),
    Table(Arc<Table>),
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// Sampled function with linear interpolation, clamped outside the table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl Table {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid("table needs equally many (≥ 1) times and values"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("table times must be strictly increasing"));
        }
        if times.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::invalid("table entries must be finite"));
        }
        Ok(Self { times, values })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[k] + w * (self.values[k + 1] - self.values[k])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Real function of time (a weight, rate or coefficient) with an optional
/// user-declared bound `|f(t)| ≤ bound` on the horizon.
#[derive(Clone)]
pub struct TimeScalar {
    kind: ScalarKind,
    bound: Option<f64>,
}

impl TimeScalar {
    pub fn constant(value: f64) -> Self {
        Self {
            kind: ScalarKind::Constant(value),
            bound: Some(value.abs()),
        }
    }

    pub fn expr(e: Expr) -> Self {
        match e.as_constant() {
            Some(v) => Self::constant(v),
            None => Self {
                kind: ScalarKind::Expr(Arc::new(e)),
                bound: None,
            },
        }
    }

    pub fn parse(source: &str) -> Result<Self> {
        Ok(Self::expr(Expr::parse(source)?))
    }

    pub fn table(table: Table) -> Self {
        let bound = table.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            kind: ScalarKind::Table(Arc::new(table)),
            bound: Some(bound),
        }
    }

    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: ScalarKind::Func(Arc::new(f)),
            bound: None,
        }
    }

    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = Some(bound);
        self
    }

    pub fn bound(&self) -> Option<f64> {
        self.bound
    }

    /// `k · f(t)`.
    pub fn scaled(&self, k: f64) -> Self {
        if let ScalarKind::Constant(v) = self.kind {
            return Self::constant(k * v);
        }
        let inner = self.clone();
        Self {
            kind: ScalarKind::Func(Arc::new(move |t| k * inner.eval(t))),
            bound: self.bound.map(|b| b * k.abs()),
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match &self.kind {
            ScalarKind::Constant(v) => *v,
            ScalarKind::Expr(e) => e.eval(t),
            ScalarKind::Table(tab) => tab.eval(t),
            ScalarKind::Func(f) => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, ScalarKind::Constant(_))
    }
}

impl fmt::Debug for TimeScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ScalarKind::Constant(v) => write!(f, "Constant({v})"),
            ScalarKind::Expr(e) => write!(f, "Expr({e})"),
            ScalarKind::Table(t) => write!(f, "Table({} samples)", t.times().len()),
            ScalarKind::Func(_) => write!(f, "Func"),
        }
    }
}

impl From<f64> for TimeScalar {
    fn from(v: f64) -> Self {
        Self::constant(v)
    }
}

/// How the jump intensity `r_ℓ,t > 0` of a channel is chosen.
#[derive(Clone, Debug)]
pub enum RatePolicy {
    /// `r = |Γ|`; the channel is dormant (rate zero) at instants where `Γ = 0`.
    AbsValue,
    Constant(f64),
    /// `r = Γ − c_t` with a non-positive shift `c_t` shared with `partner`.
    /// Only drift-neutral when the two operators satisfy
    /// `L†L + L'†L' = 1`, e.g. `σ₋` and `σ₊` on one site.
    Shifted {
        partner: usize,
        split: TimeScalar,
    },
    Custom(TimeScalar),
}

#[derive(Clone, Debug)]
pub struct Channel {
    pub label: String,
    operator: SparseMatrix,
    op_dag_op: SparseMatrix,
    pub weight: TimeScalar,
    pub rate: RatePolicy,
    /// Energy quantum `ε` with `[H₀, L] = εL`.
    pub energy: Option<f64>,
}

impl Channel {
    pub fn new(operator: SparseMatrix, weight: impl Into<TimeScalar>) -> Self {
        let op_dag_op = operator.adjoint().matmul(&operator).expect("square operator");
        Self {
            label: String::new(),
            operator,
            op_dag_op,
            weight: weight.into(),
            rate: RatePolicy::AbsValue,
            energy: None,
        }
    }

    pub fn from_dense(operator: &ComplexMatrix, weight: impl Into<TimeScalar>) -> Self {
        Self::new(SparseMatrix::from_dense(operator), weight)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn with_rate(mut self, rate: RatePolicy) -> Self {
        self.rate = rate;
        self
    }

    pub fn with_energy(mut self, energy: f64) -> Self {
        self.energy = Some(energy);
        self
    }

    pub fn operator(&self) -> &SparseMatrix {
        &self.operator
    }

    /// `L†L`.
    pub fn op_dag_op(&self) -> &SparseMatrix {
        &self.op_dag_op
    }
}

#[derive(Clone, Debug)]
pub struct HamiltonianTerm {
    pub coefficient: TimeScalar,
    pub operator: SparseMatrix,
}

/// `H_t = Σ_k f_k(t) H_k`.
#[derive(Clone, Debug, Default)]
pub struct Hamiltonian {
    terms: Vec<HamiltonianTerm>,
}

impl Hamiltonian {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(h: SparseMatrix) -> Self {
        Self::zero().with_term(1.0, h)
    }

    pub fn with_term(mut self, coefficient: impl Into<TimeScalar>, operator: SparseMatrix) -> Self {
        if operator.nnz() > 0 {
            self.terms.push(HamiltonianTerm {
                coefficient: coefficient.into(),
                operator,
            });
        }
        self
    }

    pub fn terms(&self) -> &[HamiltonianTerm] {
        &self.terms
    }

    pub fn at(&self, t: f64, dim: usize) -> SparseMatrix {
        self.terms.iter().fold(SparseMatrix::zeros(dim), |acc, term| {
            acc.add(&term.operator.scale(C64::new(term.coefficient.eval(t), 0.0)))
                .expect("validated dimensions")
        })
    }
}

/// Coefficients of a model evaluated at one instant.
#[derive(Clone, Debug, Default)]
pub struct Coefficients {
    pub t: f64,
    pub hamiltonian: Vec<f64>,
    pub weight: Vec<f64>,
    pub rate: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TimeLocalModel {
    dim: usize,
    hamiltonian: Hamiltonian,
    channels: Vec<Channel>,
    bare_hamiltonian: Option<ComplexMatrix>,
    horizon: f64,
}

impl TimeLocalModel {
    pub const DEFAULT_HORIZON: f64 = 10.0;

    pub fn new(dim: usize, hamiltonian: Hamiltonian, channels: Vec<Channel>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("model dimension must be positive"));
        }
        for term in hamiltonian.terms() {
            if term.operator.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: term.operator.dim(),
                });
            }
        }
        for (l, ch) in channels.iter().enumerate() {
            if ch.operator.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: ch.operator.dim(),
                });
            }
            if ch.operator.nnz() == 0 {
                return Err(Error::invalid(format!("channel {l} has a zero Lindblad operator")));
            }
        }
        Ok(Self {
            dim,
            hamiltonian,
            channels,
            bare_hamiltonian: None,
            horizon: Self::DEFAULT_HORIZON,
        })
    }

    pub fn with_bare_hamiltonian(mut self, h0: ComplexMatrix) -> Result<Self> {
        if h0.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: h0.dim(),
            });
        }
        self.bare_hamiltonian = Some(h0);
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.hamiltonian
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn bare_hamiltonian(&self) -> Option<&ComplexMatrix> {
        self.bare_hamiltonian.as_ref()
    }

    pub fn weight(&self, l: usize, t: f64) -> f64 {
        self.channels[l].weight.eval(t)
    }

    /// Jump intensity `r_ℓ,t`; zero means the channel is dormant at `t`.
    pub fn rate(&self, l: usize, t: f64) -> f64 {
        let ch = &self.channels[l];
        match &ch.rate {
            RatePolicy::AbsValue => ch.weight.eval(t).abs(),
            RatePolicy::Constant(r) => *r,
            RatePolicy::Custom(f) => f.eval(t),
            RatePolicy::Shifted { split, .. } => ch.weight.eval(t) - split.eval(t),
        }
    }

    pub fn coefficients(&self, t: f64, out: &mut Coefficients) {
        out.t = t;
        out.hamiltonian.clear();
        out.hamiltonian
            .extend(self.hamiltonian.terms().iter().map(|term| term.coefficient.eval(t)));
        out.weight.clear();
        out.rate.clear();
        for (l, ch) in self.channels.iter().enumerate() {
            let w = ch.weight.eval(t);
            out.weight.push(w);
            out.rate.push(match &ch.rate {
                RatePolicy::AbsValue => w.abs(),
                _ => self.rate(l, t),
            });
        }
    }

    pub fn coefficients_at(&self, t: f64) -> Coefficients {
        let mut c = Coefficients::default();
        self.coefficients(t, &mut c);
        c
    }

    pub fn hamiltonian_at(&self, t: f64) -> SparseMatrix {
        self.hamiltonian.at(t, self.dim)
    }

    /// Right-hand side of the master equation at time `t`.
    pub fn lgks_rhs(&self, rho: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: rho.dim(),
            });
        }
        let c = self.coefficients_at(t);
        if c.weight.iter().chain(&c.hamiltonian).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "model coefficient",
                t,
            });
        }
        let mut out = ComplexMatrix::zeros(self.dim);
        let mut scratch = ComplexMatrix::zeros(self.dim);
        self.rhs_into(rho, &c, &mut scratch, &mut out);
        Ok(out)
    }

    pub(crate) fn rhs_into(
        &self,
        rho: &ComplexMatrix,
        c: &Coefficients,
        scratch: &mut ComplexMatrix,
        out: &mut ComplexMatrix,
    ) {
        out.as_mut_slice().fill(C64::new(0.0, 0.0));
        for (term, &h) in self.hamiltonian.terms().iter().zip(&c.hamiltonian) {
            if h == 0.0 {
                continue;
            }
            term.operator.left_mul_acc(-I * h, rho, out);
            term.operator.right_mul_acc(I * h, rho, out);
        }
        for (ch, &w) in self.channels.iter().zip(&c.weight) {
            if w == 0.0 {
                continue;
            }
            ch.operator.sandwich_acc(C64::new(w, 0.0), rho, scratch, out);
            ch.op_dag_op.left_mul_acc(C64::new(-0.5 * w, 0.0), rho, out);
            ch.op_dag_op.right_mul_acc(C64::new(-0.5 * w, 0.0), rho, out);
        }
    }

    /// True when every weight is non-negative at the sampled times.
    pub fn is_completely_positive(&self, times: &[f64]) -> bool {
        times
            .iter()
            .all(|&t| self.channels.iter().all(|ch| ch.weight.eval(t) >= 0.0))
    }

    pub fn validate(&self) -> ValidationReport {
        let n = 201;
        let times: Vec<f64> = (0..n).map(|k| self.horizon * k as f64 / (n - 1) as f64).collect();
        self.validate_on(&times)
    }

    pub fn validate_on(&self, times: &[f64]) -> ValidationReport {
        let mut report = ValidationReport::default();
        let hermiticity_tol = 1e-10;

        let constant_h = self.hamiltonian.terms().iter().all(|t| t.coefficient.is_constant());
        let h_times: &[f64] = if constant_h && !times.is_empty() {
            &times[..1]
        } else {
            times
        };
        for &t in h_times {
            let h = self.hamiltonian_at(t);
            let defect = h
                .add(&h.adjoint().scale(C64::new(-1.0, 0.0)))
                .expect("same dimension")
                .max_abs();
            if !defect.is_finite() || defect > hermiticity_tol * h.max_abs().max(1.0) {
                report.push(format!(
                    "Hamiltonian is not Hermitian at t = {t}: max |H - H†| = {defect:e}"
                ));
                break;
            }
        }
        for (k, term) in self.hamiltonian.terms().iter().enumerate() {
            if let Some(bad) = check_scalar(&term.coefficient, times) {
                report.push(format!("Hamiltonian coefficient {k}: {bad}"));
            }
        }

        for (l, ch) in self.channels.iter().enumerate() {
            if let Some(bad) = check_scalar(&ch.weight, times) {
                report.push(format!("channel {l} weight: {bad}"));
            }
            match &ch.rate {
                RatePolicy::Constant(r) if !(*r > 0.0 && r.is_finite()) => {
                    report.push(format!("channel {l}: constant rate {r} is not strictly positive"));
                    continue;
                }
                RatePolicy::Shifted { partner, .. } => {
                    let ok = self
                        .channels
                        .get(*partner)
                        .is_some_and(|p| matches!(&p.rate, RatePolicy::Shifted { partner: back, .. } if *back == l));
                    if !ok || *partner == l {
                        report.push(format!(
                            "channel {l}: shifted rate partner {partner} must be a distinct channel shifted back to {l}"
                        ));
                        continue;
                    }
                }
                _ => {}
            }
            for &t in times {
                let (w, r) = (ch.weight.eval(t), self.rate(l, t));
                if !r.is_finite() || r < 0.0 || (r == 0.0 && w != 0.0) {
                    report.push(format!(
                        "channel {l}: rate {r} at t = {t} is not strictly positive (weight {w})"
                    ));
                    break;
                }
            }
        }

        if let Some(h0) = &self.bare_hamiltonian {
            if !h0.is_hermitian(hermiticity_tol) {
                report.push("bare Hamiltonian is not Hermitian".to_string());
            }
        }
        report
    }
}

fn check_scalar(f: &TimeScalar, times: &[f64]) -> Option<String> {
    for &t in times {
        let v = f.eval(t);
        if !v.is_finite() {
            return Some(format!("non-finite value at t = {t}"));
        }
        if let Some(b) = f.bound() {
            if v.abs() > b * (1.0 + 1e-12) {
                return Some(format!("|value| = {} exceeds declared bound {b} at t = {t}", v.abs()));
            }
        }
    }
    None
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    fn push(&mut self, msg: String) {
        self.violations.push(msg);
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// `Σ_k f_k H_k` as a dense matrix; test and diagnostics helper.
pub fn dense_hamiltonian(model: &TimeLocalModel, t: f64) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(model.dim());
    for term in model.hamiltonian().terms() {
        let k = C64::new(term.coefficient.eval(t), 0.0);
        for (i, j, v) in term.operator.iter() {
            h[(i, j)] += k * v;
        }
    }
    h
}

/// `Tr(L ρ L†)`.
pub fn jump_expectation(ch: &Channel, rho: &ComplexMatrix) -> f64 {
    let mut s = C64::new(0.0, 0.0);
    for (i, j, v) in ch.op_dag_op().iter() {
        s += v * rho[(j, i)];
    }
    s.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pauli::*;
    use crate::linalg::{outer, ComplexVector};
    use proptest::prelude::*;

    fn decay(weight: f64) -> TimeLocalModel {
        TimeLocalModel::new(
            2,
            Hamiltonian::zero(),
            vec![Channel::from_dense(&sigma_minus(), weight)],
        )
        .unwrap()
    }

    fn projector(v: &ComplexVector) -> ComplexMatrix {
        outer(v, v).unwrap()
    }

    #[test]
    fn decay_rhs_from_excited() {
        let rho = projector(&excited());
        let rhs = decay(1.0).lgks_rhs(&rho, 0.0).unwrap();
        let expected = projector(&ground()).sub(&projector(&excited())).unwrap();
        assert!(rhs.max_abs_diff(&expected) < 1e-15);
        let flipped = decay(-1.0).lgks_rhs(&rho, 0.0).unwrap();
        assert!(flipped.max_abs_diff(&expected.scale(C64::new(-1.0, 0.0))) < 1e-15);
    }

    #[test]
    fn rhs_dimension_and_finiteness_errors() {
        let m = decay(1.0);
        assert!(matches!(
            m.lgks_rhs(&ComplexMatrix::zeros(3), 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = TimeLocalModel::new(
            2,
            Hamiltonian::zero(),
            vec![Channel::from_dense(&sigma_minus(), TimeScalar::parse("1/t").unwrap())],
        )
        .unwrap();
        assert!(matches!(
            bad.lgks_rhs(&projector(&excited()), 0.0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn table_interpolation() {
        let tab = Table::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, -2.0]).unwrap();
        assert_eq!(tab.eval(-1.0), 0.0);
        assert_eq!(tab.eval(0.5), 1.0);
        assert_eq!(tab.eval(2.0), 0.0);
        assert_eq!(tab.eval(10.0), -2.0);
        assert!(Table::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn abs_value_policy_dormant_at_zero_weight() {
        let m = TimeLocalModel::new(
            2,
            Hamiltonian::zero(),
            vec![Channel::from_dense(&sigma_minus(), TimeScalar::parse("t - 1").unwrap())],
        )
        .unwrap();
        assert_eq!(m.rate(0, 1.0), 0.0);
        assert_eq!(m.rate(0, 0.0), 1.0);
        assert!(m.validate().is_empty());
    }

    #[test]
    fn validation_flags_non_hermitian_hamiltonian() {
        let h = sigma_z().add(&sigma_minus().scale(C64::new(1e-3, 0.0))).unwrap();
        let m = TimeLocalModel::new(2, Hamiltonian::constant(SparseMatrix::from_dense(&h)), vec![]).unwrap();
        let report = m.validate();
        assert_eq!(report.violations.len(), 1, "{report}");
        assert!(report.violations[0].contains("not Hermitian"));
    }

    #[test]
    fn validation_flags_zero_constant_rate() {
        let m = TimeLocalModel::new(
            2,
            Hamiltonian::zero(),
            vec![Channel::from_dense(&sigma_minus(), 1.0).with_rate(RatePolicy::Constant(0.0))],
        )
        .unwrap();
        assert!(!m.validate().is_empty());
    }

    #[test]
    fn validation_flags_bound_and_partner() {
        let m = TimeLocalModel::new(
            2,
            Hamiltonian::zero(),
            vec![
                Channel::from_dense(&sigma_minus(), TimeScalar::parse("2*t").unwrap().with_bound(1.0)),
                Channel::from_dense(&sigma_plus(), 1.0).with_rate(RatePolicy::Shifted {
                    partner: 0,
                    split: TimeScalar::constant(-1.0),
                }),
            ],
        )
        .unwrap();
        let report = m.validate();
        assert_eq!(report.violations.len(), 2, "{report}");
    }

    #[test]
    fn zero_operator_rejected() {
        assert!(TimeLocalModel::new(2, Hamiltonian::zero(), vec![Channel::new(SparseMatrix::zeros(2), 1.0)]).is_err());
    }

    fn arb_state() -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec(-1.0f64..1.0, 8).prop_map(|x| {
            let mut m = ComplexMatrix::from_fn(2, |i, j| C64::new(x[2 * (2 * i + j)], x[2 * (2 * i + j) + 1]));
            m.hermitize();
            m
        })
    }

    proptest! {
        #[test]
        fn rhs_hermitian_and_traceless(rho in arb_state(), t in 0.0f64..3.0, a in -2.0f64..2.0) {
            let model = TimeLocalModel::new(
                2,
                Hamiltonian::constant(SparseMatrix::from_dense(&sigma_x())).with_term(TimeScalar::parse("cos(t)").unwrap(), SparseMatrix::from_dense(&sigma_z())),
                vec![
                    Channel::from_dense(&sigma_minus(), a),
                    Channel::from_dense(&sigma_y(), TimeScalar::parse("-0.5+2*tanh(t)").unwrap()),
                    Channel::from_dense(&sigma_plus().add(&sigma_z()).unwrap(), 0.3),
                ],
            ).unwrap();
            let out = model.lgks_rhs(&rho, t).unwrap();
            prop_assert!(out.hermiticity_defect() <= 1e-12);
            prop_assert!(out.trace().norm() <= 2e-12);
        }
    }
}
