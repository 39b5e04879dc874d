//! Problem families: which parameters define an operator, how a
//! (condition, quantity of interest) pair is produced for it, and the corpus
//! file that stores many such pairs.

mod corpus;
mod generate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridfn::FunctionSample;
use crate::randproc::RngStream;

pub use corpus::{
    generate_corpus, read_corpus, write_corpus, Corpus, CorpusMeta, CORPUS_FORMAT_VERSION,
    MIN_RECORDS_PER_OPERATOR,
};
pub use generate::{
    generate_record, generate_record_with, nonlinear_rd_condition, pde2d_condition, solve_forward, GenSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Inverse => "inverse",
        })
    }
}

/// The equation behind a family, independent of direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    /// `u' = a1 c + a2`
    Ode1,
    /// `u' = a1 c u + a2`
    Ode2,
    /// `u' = a1 u + a2 c + a3`
    Ode3,
    /// `u = A sin(2 pi t / T + eta) exp(-k t)`, first half to second half
    DampedOscillator,
    /// `u'' = c`
    Poisson,
    /// `-lambda a u'' + k(x) u = c`, condition `k(x)`
    LinearRd,
    /// `-lambda a u'' + k u^3 = c(x)`
    NonlinearRd,
    /// `u_t + (a u^3 + b u^2 + c u)_x = 0`, periodic
    ConservationLaw,
    /// `a u_xx + b u_xt + c u_tt + d u_x + e u_t + f u = g`
    Pde2d,
    /// `u_t = k u_xx + alpha u`
    Heat,
}

impl Kind {
    /// Whether data is produced by building the solution first.
    pub fn is_solution_first(self) -> bool {
        matches!(self, Kind::DampedOscillator | Kind::NonlinearRd | Kind::Pde2d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

const fn range(name: &'static str, lo: f64, hi: f64) -> ParamRange {
    ParamRange { name, lo, hi }
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

const ODE12: &[ParamRange] = &[range("a1", -1.0, 1.0), range("a2", -1.0, 1.0), range("u0", -1.0, 1.0)];
const ODE3: &[ParamRange] = &[
    range("a1", -1.0, 1.0),
    range("a2", -1.0, 1.0),
    range("a3", -1.0, 1.0),
    range("u0", -1.0, 1.0),
];
const OSCILLATOR: &[ParamRange] = &[range("k", 0.0, 2.0)];
const POISSON: &[ParamRange] = &[range("u0", -1.0, 1.0), range("uL", -1.0, 1.0)];
const LINEAR_RD: &[ParamRange] = &[
    range("u0", -1.0, 1.0),
    range("uL", -1.0, 1.0),
    range("a", 0.5, 1.5),
    range("c", -1.0, 1.0),
];
const NONLINEAR_RD: &[ParamRange] = &[
    range("u0", -1.0, 1.0),
    range("uL", -1.0, 1.0),
    range("k", 0.5, 1.5),
    range("a", 0.5, 1.5),
];
const FLUX: &[ParamRange] = &[range("a", -1.0, 1.0), range("b", -1.0, 1.0), range("c", -1.0, 1.0)];
const PDE2D: &[ParamRange] = &[
    range("a", -0.5, 0.5),
    range("b", -0.5, 0.5),
    range("c", -0.5, 0.5),
    range("d", -0.5, 0.5),
    range("e", -0.5, 0.5),
    range("f", -0.5, 0.5),
];
const HEAT: &[ParamRange] = &[
    range("k", 0.001, 0.01),
    range("alpha", -0.01, -0.001),
    range("u0", -1.0, 1.0),
    range("uL", -1.0, 1.0),
];
const HEAT_HOMOGENEOUS: &[ParamRange] = &[
    range("k", 0.001, 0.01),
    range("alpha", 0.0, 0.0),
    range("u0", -1.0, 1.0),
    range("uL", -1.0, 1.0),
];

/// Per-record draws of the oscillator (not operator parameters).
pub(crate) const OSCILLATOR_RECORD: &[ParamRange] = &[
    range("A", 0.5, 1.5),
    range("T", 0.3, 1.0),
    range("eta", 0.0, TWO_PI),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Family {
    pub id: &'static str,
    pub kind: Kind,
    pub direction: Direction,
    pub params: &'static [ParamRange],
    /// False for families held out as out-of-distribution probes.
    pub trainable: bool,
}

const fn fam(
    id: &'static str,
    kind: Kind,
    direction: Direction,
    params: &'static [ParamRange],
) -> Family {
    Family {
        id,
        kind,
        direction,
        params,
        trainable: true,
    }
}

use Direction::{Forward, Inverse};

pub const FAMILIES: &[Family] = &[
    fam("ode1_fwd", Kind::Ode1, Forward, ODE12),
    fam("ode1_inv", Kind::Ode1, Inverse, ODE12),
    fam("ode2_fwd", Kind::Ode2, Forward, ODE12),
    fam("ode2_inv", Kind::Ode2, Inverse, ODE12),
    fam("ode3_fwd", Kind::Ode3, Forward, ODE3),
    fam("ode3_inv", Kind::Ode3, Inverse, ODE3),
    fam("damped_osc_fwd", Kind::DampedOscillator, Forward, OSCILLATOR),
    fam("damped_osc_inv", Kind::DampedOscillator, Inverse, OSCILLATOR),
    fam("poisson_fwd", Kind::Poisson, Forward, POISSON),
    fam("poisson_inv", Kind::Poisson, Inverse, POISSON),
    fam("linear_rd_fwd", Kind::LinearRd, Forward, LINEAR_RD),
    fam("linear_rd_inv", Kind::LinearRd, Inverse, LINEAR_RD),
    fam("nonlinear_rd_fwd", Kind::NonlinearRd, Forward, NONLINEAR_RD),
    fam("nonlinear_rd_inv", Kind::NonlinearRd, Inverse, NONLINEAR_RD),
    fam("conservation_fwd", Kind::ConservationLaw, Forward, FLUX),
    fam("pde2d_fwd", Kind::Pde2d, Forward, PDE2D),
    fam("pde2d_inv", Kind::Pde2d, Inverse, PDE2D),
    Family {
        trainable: false,
        ..fam("heat_fwd", Kind::Heat, Forward, HEAT)
    },
    Family {
        trainable: false,
        ..fam("heat_hom_fwd", Kind::Heat, Forward, HEAT_HOMOGENEOUS)
    },
];

pub fn family_ids() -> Vec<String> {
    FAMILIES.iter().map(|f| f.id.to_string()).collect()
}

pub fn family(id: &str) -> Result<&'static Family> {
    FAMILIES
        .iter()
        .find(|f| f.id == id)
        .ok_or_else(|| Error::UnknownFamily {
            name: id.to_string(),
            known: family_ids(),
        })
}

impl Family {
    pub fn range_of(&self, name: &str) -> Option<&ParamRange> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Checks that `params` holds exactly the declared keys with finite values.
    /// Range membership is not enforced here so callers may probe operators
    /// outside the sampling box.
    pub fn check_params(&self, params: &BTreeMap<String, f64>) -> Result<()> {
        let expected: Vec<&str> = self.params.iter().map(|p| p.name).collect();
        let mut got: Vec<&str> = params.keys().map(String::as_str).collect();
        let mut want = expected.clone();
        want.sort_unstable();
        got.sort_unstable();
        if want != got {
            return Err(Error::InvalidInput(format!(
                "family {} takes parameters [{}], got [{}]",
                self.id,
                expected.join(", "),
                got.join(", ")
            )));
        }
        if let Some((k, v)) = params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {k} = {v}")));
        }
        Ok(())
    }

    /// Whether every parameter lies inside its sampling range.
    pub fn in_ranges(&self, params: &BTreeMap<String, f64>) -> bool {
        self.params.iter().all(|r| {
            params
                .get(r.name)
                .is_some_and(|v| (r.lo..=r.hi).contains(v))
        })
    }

    pub fn ranges(&self) -> BTreeMap<String, [f64; 2]> {
        self.params
            .iter()
            .map(|r| (r.name.to_string(), [r.lo, r.hi]))
            .collect()
    }
}

/// One operator: a family plus the constants that pin it down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub family: String,
    pub direction: Direction,
    pub params: BTreeMap<String, f64>,
    pub operator_id: u64,
}

impl OperatorSpec {
    pub fn new(family_id: &str, params: BTreeMap<String, f64>, operator_id: u64) -> Result<Self> {
        let fam = family(family_id)?;
        fam.check_params(&params)?;
        Ok(Self {
            family: fam.id.to_string(),
            direction: fam.direction,
            params,
            operator_id,
        })
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn family_info(&self) -> Result<&'static Family> {
        family(&self.family)
    }
}

/// Draws every declared parameter uniformly from its range.
pub fn sample_operator(family_id: &str, rng: &mut RngStream) -> Result<OperatorSpec> {
    sample_operator_with_id(family_id, rng, 0)
}

pub fn sample_operator_with_id(
    family_id: &str,
    rng: &mut RngStream,
    operator_id: u64,
) -> Result<OperatorSpec> {
    let fam = family(family_id)?;
    let params = fam
        .params
        .iter()
        .map(|r| (r.name.to_string(), rng.uniform_range(r.lo, r.hi)))
        .collect();
    Ok(OperatorSpec {
        family: fam.id.to_string(),
        direction: fam.direction,
        params,
        operator_id,
    })
}

/// One (condition, quantity of interest) pair of an operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRecord {
    pub operator: OperatorSpec,
    pub condition: FunctionSample,
    pub qoi: FunctionSample,
    pub seed: u64,
}
