//! TOML run configuration.
//!
//! ```toml
//! [model]
//! name = "controllable"        # pbg | controllable | redfield | chain | custom
//!
//! [simulation]
//! method = "both"              # oracle | trajectories | both
//! dt = 1e-3
//! stride = 0.05
//! realizations = 10000
//! seed = 1
//!
//! [[observables]]
//! name = "excited"
//! population = 0
//! ```
//!
//! Complex matrix and vector literals are row-major lists whose entries are
//! either plain numbers or `"re,im"` strings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::ensemble::{EnsembleConfig, Execution, Observable};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector, SparseMatrix, C64};
use crate::master_eq::{check_grid, uniform_grid};
use crate::model::{Channel, Hamiltonian, RatePolicy, TimeLocalModel, TimeScalar};
use crate::models::{self, ChainParams, RedfieldParams, SplitRule};
use crate::trajectory::{Representation, Scheme, SchemeConfig};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Text(String),
}

impl Entry {
    pub fn value(&self) -> Result<C64> {
        match self {
            Entry::Real(x) => Ok(C64::new(*x, 0.0)),
            Entry::Text(s) => {
                let parts: Vec<&str> = s.split(',').map(str::trim).collect();
                let num = |p: &str| {
                    p.parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad complex literal {s:?}")))
                };
                match parts.as_slice() {
                    [re] => Ok(C64::new(num(re)?, 0.0)),
                    [re, im] => Ok(C64::new(num(re)?, num(im)?)),
                    _ => Err(Error::Config(format!("bad complex literal {s:?}"))),
                }
            }
        }
    }
}

pub type MatrixLiteral = Vec<Vec<Entry>>;

pub fn parse_matrix(rows: &MatrixLiteral) -> Result<ComplexMatrix> {
    let rows = rows
        .iter()
        .map(|r| r.iter().map(Entry::value).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    ComplexMatrix::from_rows(&rows).map_err(|e| Error::Config(format!("matrix literal: {e}")))
}

pub fn parse_vector(entries: &[Entry]) -> Result<ComplexVector> {
    Ok(ComplexVector::new(
        entries.iter().map(Entry::value).collect::<Result<_>>()?,
    ))
}

/// Real scalar given as a number or an expression in `t`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ScalarSpec {
    Number(f64),
    Expr(String),
}

impl ScalarSpec {
    pub fn build(&self) -> Result<TimeScalar> {
        match self {
            ScalarSpec::Number(x) => Ok(TimeScalar::constant(*x)),
            ScalarSpec::Expr(s) => TimeScalar::parse(s),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum RateSpec {
    Abs,
    Constant(f64),
    Shifted { partner: usize, split: ScalarSpec },
    Custom(ScalarSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub label: String,
    pub operator: MatrixLiteral,
    pub weight: ScalarSpec,
    #[serde(default)]
    pub rate: Option<RateSpec>,
    #[serde(default)]
    pub energy: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coefficient: ScalarSpec,
    pub operator: MatrixLiteral,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Pbg {
        /// Lamb shift `S_t`; omit both to use the packaged demo coefficients.
        s: Option<ScalarSpec>,
        gamma: Option<ScalarSpec>,
        horizon: Option<f64>,
    },
    Controllable {
        #[serde(default = "default_a")]
        a: [f64; 3],
        #[serde(default = "default_b")]
        b: [f64; 3],
        #[serde(default = "default_c")]
        c: [f64; 3],
        horizon: Option<f64>,
    },
    Redfield {
        #[serde(default = "default_gamma1")]
        gamma1: f64,
        #[serde(default = "default_gamma2")]
        gamma2: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_kappa")]
        kappa: f64,
        horizon: Option<f64>,
    },
    Chain {
        n: usize,
        lambda: Option<f64>,
        gamma: Option<f64>,
        delta: Option<f64>,
        /// `Γ₁,t`; defaults to `γ − 12 e^{−2t³} sin²(15t)`.
        gamma1: Option<ScalarSpec>,
        #[serde(default)]
        split: SplitRule,
        horizon: Option<f64>,
    },
    Custom {
        dim: usize,
        #[serde(default)]
        hamiltonian: Option<MatrixLiteral>,
        #[serde(default)]
        terms: Vec<TermSpec>,
        #[serde(default)]
        channels: Vec<ChannelSpec>,
        #[serde(default)]
        bare_hamiltonian: Option<MatrixLiteral>,
        horizon: Option<f64>,
    },
}

fn default_a() -> [f64; 3] {
    [0.5, 1.0, 0.8]
}
fn default_b() -> [f64; 3] {
    [2.0; 3]
}
fn default_c() -> [f64; 3] {
    [2f64.sqrt(), 3f64.sqrt(), 5f64.sqrt()]
}
fn default_gamma1() -> f64 {
    1.0
}
fn default_gamma2() -> f64 {
    4.0
}
fn default_alpha() -> f64 {
    3.0
}
fn default_kappa() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn build(&self) -> Result<TimeLocalModel> {
        let model = match self {
            ModelSpec::Pbg { s, gamma, horizon } => match (s, gamma) {
                (None, None) => models::pbg_demo(horizon.unwrap_or(5.0))?,
                (Some(s), Some(g)) => models::build_pbg(s.build()?, g.build()?)?.with_horizon(horizon.unwrap_or(10.0)),
                _ => return Err(Error::Config("pbg needs both `s` and `gamma`, or neither".into())),
            },
            ModelSpec::Controllable { a, b, c, horizon } => {
                models::build_controllable(*a, *b, *c)?.with_horizon(horizon.unwrap_or(3.0))
            }
            ModelSpec::Redfield {
                gamma1,
                gamma2,
                alpha,
                kappa,
                horizon,
            } => {
                let p = RedfieldParams {
                    gamma1: *gamma1,
                    gamma2: *gamma2,
                    alpha: *alpha,
                    kappa: *kappa,
                };
                models::build_redfield(p)?.model.with_horizon(horizon.unwrap_or(5.0))
            }
            ModelSpec::Chain {
                n,
                lambda,
                gamma,
                delta,
                gamma1,
                split,
                horizon,
            } => {
                let mut p = ChainParams::reference(*n);
                if let Some(g) = gamma {
                    p.gamma = *g;
                    let g = *g;
                    p.gamma1 =
                        TimeScalar::from_fn(move |t| g - 12.0 * (-2.0 * t.powi(3)).exp() * (15.0 * t).sin().powi(2));
                }
                if let Some(x) = lambda {
                    p.lambda = *x;
                }
                if let Some(x) = delta {
                    p.delta = *x;
                }
                if let Some(g1) = gamma1 {
                    p.gamma1 = g1.build()?;
                }
                p.split = *split;
                models::build_chain(&p)?.with_horizon(horizon.unwrap_or(1.0))
            }
            ModelSpec::Custom {
                dim,
                hamiltonian,
                terms,
                channels,
                bare_hamiltonian,
                horizon,
            } => {
                let mut h = match hamiltonian {
                    Some(m) => Hamiltonian::constant(SparseMatrix::from_dense(&parse_matrix(m)?)),
                    None => Hamiltonian::zero(),
                };
                for term in terms {
                    h = h.with_term(
                        term.coefficient.build()?,
                        SparseMatrix::from_dense(&parse_matrix(&term.operator)?),
                    );
                }
                let chans = channels
                    .iter()
                    .map(|c| {
                        let mut ch = Channel::from_dense(&parse_matrix(&c.operator)?, c.weight.build()?)
                            .with_label(c.label.clone());
                        ch.rate = match &c.rate {
                            None | Some(RateSpec::Abs) => RatePolicy::AbsValue,
                            Some(RateSpec::Constant(r)) => RatePolicy::Constant(*r),
                            Some(RateSpec::Shifted { partner, split }) => RatePolicy::Shifted {
                                partner: *partner,
                                split: split.build()?,
                            },
                            Some(RateSpec::Custom(r)) => RatePolicy::Custom(r.build()?),
                        };
                        ch.energy = c.energy;
                        Ok(ch)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut model = TimeLocalModel::new(*dim, h, chans)?;
                if let Some(h0) = bare_hamiltonian {
                    model = model.with_bare_hamiltonian(parse_matrix(h0)?)?;
                }
                model.with_horizon(horizon.unwrap_or(10.0))
            }
        };
        Ok(model)
    }

    /// Initial state used when the config has no `[initial]` section.
    pub fn default_state(&self, model: &TimeLocalModel) -> Result<ComplexVector> {
        match self {
            ModelSpec::Pbg { .. } => Ok(ComplexVector::from_real(&[1.0, 1.0]).normalized().expect("nonzero")),
            ModelSpec::Controllable { .. } => Ok(models::controllable_initial_state()),
            ModelSpec::Redfield { .. } => models::redfield_initial_state(model),
            ModelSpec::Chain { n, .. } => Ok(models::chain_initial_state(*n)),
            ModelSpec::Custom { dim, .. } => Ok(ComplexVector::basis(*dim, 0)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Basis index.
    pub basis: Option<usize>,
    pub vector: Option<Vec<Entry>>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oracle,
    Trajectories,
    #[default]
    Both,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    Bernoulli,
    WaitingTime,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub method: Method,
    pub dt: f64,
    /// Oracle step; defaults to `dt`.
    pub oracle_dt: Option<f64>,
    pub stride: f64,
    /// Defaults to the model horizon.
    pub horizon: Option<f64>,
    #[serde(default = "one")]
    pub realizations: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scheme: SchemeKind,
    pub p_max: Option<f64>,
    #[serde(default)]
    pub representation: Representation,
    #[serde(default)]
    pub store_density: bool,
    /// Write the first `k` trajectories in full.
    #[serde(default)]
    pub dump_trajectories: u64,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub name: String,
    /// Basis-state population.
    pub population: Option<usize>,
    /// Excited-state population of a chain site (0-based).
    pub site: Option<usize>,
    pub operator: Option<MatrixLiteral>,
    pub projector: Option<Vec<Entry>>,
}

impl ObservableSpec {
    fn build(&self, model: &TimeLocalModel) -> Result<Observable> {
        let given = [
            self.population.is_some(),
            self.site.is_some(),
            self.operator.is_some(),
            self.projector.is_some(),
        ];
        if given.iter().filter(|&&x| x).count() != 1 {
            return Err(Error::Config(format!(
                "observable {:?} needs exactly one of population, site, operator, projector",
                self.name
            )));
        }
        let d = model.dim();
        if let Some(i) = self.population {
            if i >= d {
                return Err(Error::Config(format!(
                    "population index {i} out of range for dimension {d}"
                )));
            }
            return Ok(Observable::population(&self.name, d, i));
        }
        if let Some(site) = self.site {
            let n = d.trailing_zeros() as usize;
            if !d.is_power_of_two() || site >= n {
                return Err(Error::Config(format!("site {site} invalid for dimension {d}")));
            }
            return Observable::sparse(&self.name, models::site_population(site, n));
        }
        if let Some(m) = &self.operator {
            return Observable::operator(&self.name, &parse_matrix(m)?);
        }
        Observable::projector(&self.name, &parse_vector(self.projector.as_ref().expect("checked"))?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional for bench-only configs.
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub observables: Vec<ObservableSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    pub bench: Option<BenchConfig>,
}

/// Everything needed to run one configuration.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: TimeLocalModel,
    pub psi0: ComplexVector,
    pub grid: Vec<f64>,
    pub oracle_dt: f64,
    pub ensemble: EnsembleConfig,
    pub method: Method,
    pub dump_trajectories: u64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn model_spec(&self) -> Result<&ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("missing [model] section".into()))
    }

    pub fn build_model(&self) -> Result<TimeLocalModel> {
        let mut model = self.model_spec()?.build()?;
        if let Some(h) = self.simulation.as_ref().and_then(|s| s.horizon) {
            model = model.with_horizon(h);
        }
        Ok(model)
    }

    pub fn initial_state(&self, model: &TimeLocalModel) -> Result<ComplexVector> {
        let psi = match &self.initial {
            None => self.model_spec()?.default_state(model)?,
            Some(InitialSpec {
                basis: Some(i),
                vector: None,
            }) => {
                if *i >= model.dim() {
                    return Err(Error::Config(format!("initial basis index {i} out of range")));
                }
                ComplexVector::basis(model.dim(), *i)
            }
            Some(InitialSpec {
                basis: None,
                vector: Some(v),
            }) => parse_vector(v)?,
            Some(_) => return Err(Error::Config("[initial] needs exactly one of basis, vector".into())),
        };
        if psi.len() != model.dim() {
            return Err(Error::Config(format!(
                "initial state has length {}, model dimension is {}",
                psi.len(),
                model.dim()
            )));
        }
        if (psi.norm() - 1.0).abs() > 1e-8 {
            return Err(Error::Config(format!("initial state has norm {}", psi.norm())));
        }
        Ok(psi)
    }

    /// Builds and checks the model, state, grid and ensemble settings.
    pub fn prepare(&self, seed_override: Option<u64>) -> Result<Prepared> {
        let sim = self
            .simulation
            .as_ref()
            .ok_or_else(|| Error::Config("missing [simulation] section".into()))?;
        let model = self.build_model()?;
        let psi0 = self.initial_state(&model)?;
        if !(sim.dt > 0.0 && sim.stride > 0.0) {
            return Err(Error::Config("dt and stride must be positive".into()));
        }
        let grid = uniform_grid(model.horizon(), sim.stride);
        check_grid(&grid, model.horizon()).map_err(|e| Error::Config(e.to_string()))?;
        let scheme = SchemeConfig {
            scheme: match sim.scheme {
                SchemeKind::Bernoulli => Scheme::BernoulliStep {
                    dt: sim.dt,
                    p_max: sim.p_max.unwrap_or(0.1),
                },
                SchemeKind::WaitingTime => Scheme::WaitingTime { dt: sim.dt },
            },
            representation: sim.representation,
        };
        scheme.validate().map_err(|e| Error::Config(e.to_string()))?;
        if sim.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        let mut ensemble = EnsembleConfig::new(
            sim.realizations,
            seed_override.unwrap_or(sim.seed),
            scheme,
            grid.clone(),
        )
        .with_density(sim.store_density)
        .with_execution(Execution::Parallel);
        let mut names = std::collections::BTreeSet::new();
        for spec in &self.observables {
            if !names.insert(spec.name.clone()) {
                return Err(Error::Config(format!("duplicate observable name {:?}", spec.name)));
            }
            ensemble = ensemble.with_observable(spec.build(&model)?);
        }
        Ok(Prepared {
            model,
            psi0,
            grid,
            oracle_dt: sim.oracle_dt.unwrap_or(sim.dt),
            ensemble,
            method: sim.method,
            dump_trajectories: sim.dump_trajectories.min(sim.realizations),
        })
    }
}
