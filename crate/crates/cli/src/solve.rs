//! One-shot equation solving from a JSON request.
//!
//! A request names a family, a grid, the operator parameters and a control
//! function. Demos for that operator are generated on the fly, the model
//! predicts the QoI of the control, and the classical solver supplies a
//! reference when the family has one.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use icon_core::evalbench::relative_or_absolute;
use icon_core::families::{family, generate_record_with, solve_forward, Family, GenSettings, OperatorSpec};
use icon_core::model::forward;
use icon_core::prompt::{build_prompt, subsample_function, subsample_record, MAX_DEMOS};
use icon_core::randproc::derive_seed;
use icon_core::{Checkpoint, Coord, FunctionSample, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub start: f64,
    pub end: f64,
    pub n: usize,
}

/// The control function, either as polynomial coefficients in ascending
/// powers or as `(coordinate, value)` pairs interpolated linearly onto the
/// grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    Polynomial(Vec<f64>),
    Values(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSpec {
    pub equation_type: String,
    pub domain: DomainSpec,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    /// Boundary and initial values, merged with `parameters`.
    #[serde(default)]
    pub boundary: BTreeMap<String, f64>,
    pub control: ControlSpec,
    #[serde(default = "default_demos")]
    pub n_demos: usize,
}

fn default_demos() -> usize {
    MAX_DEMOS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub equation_type: String,
    pub n_demos: usize,
    pub flags: Vec<String>,
    pub prediction: FunctionSample,
    pub reference: Option<FunctionSample>,
    pub relative_error: Option<f64>,
    /// Set when the reference is zero and `relative_error` holds the
    /// absolute L2 error instead.
    #[serde(default)]
    pub absolute_error_fallback: bool,
}

pub const OUT_OF_DISTRIBUTION: &str = "out-of-distribution";

fn schema(fam: &Family) -> String {
    let params: Vec<String> = fam
        .params
        .iter()
        .map(|r| format!("{} in [{}, {}]", r.name, r.lo, r.hi))
        .collect();
    format!("{} expects parameters: {}", fam.id, params.join(", "))
}

impl ControlSpec {
    fn eval(&self, points: &[f64]) -> Result<Vec<f64>> {
        match self {
            ControlSpec::Polynomial(c) => {
                if c.is_empty() {
                    bail!("control polynomial needs at least one coefficient");
                }
                Ok(points
                    .iter()
                    .map(|&x| c.iter().rev().fold(0.0, |acc, &a| acc * x + a))
                    .collect())
            }
            ControlSpec::Values(pairs) => {
                let mut p = pairs.clone();
                p.sort_by(|a, b| a[0].total_cmp(&b[0]));
                if p.len() < 2 || p.windows(2).any(|w| w[0][0] == w[1][0]) {
                    bail!("control values need at least two distinct coordinates");
                }
                let (lo, hi) = (p[0][0], p[p.len() - 1][0]);
                let tol = 1e-9 * (hi - lo).abs().max(1.0);
                points
                    .iter()
                    .map(|&x| {
                        if x < lo - tol || x > hi + tol {
                            bail!("control values cover [{lo}, {hi}] but the grid reaches {x}");
                        }
                        let j = p.partition_point(|q| q[0] <= x).clamp(1, p.len() - 1);
                        let (a, b) = (p[j - 1], p[j]);
                        let w = ((x - a[0]) / (b[0] - a[0])).clamp(0.0, 1.0);
                        Ok(a[1] + w * (b[1] - a[1]))
                    })
                    .collect()
            }
        }
    }
}

/// The operator, grid settings and question condition a request describes.
pub struct Resolved {
    pub operator: OperatorSpec,
    pub settings: GenSettings,
    pub condition: FunctionSample,
    pub query: Vec<Coord>,
}

impl SolveSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let fam = family(&self.equation_type)?;
        if self.n_demos == 0 || self.n_demos > MAX_DEMOS {
            bail!("n_demos must lie in 1..={MAX_DEMOS}, got {}", self.n_demos);
        }
        let d = &self.domain;
        if !(d.start.is_finite() && d.end.is_finite() && d.start < d.end) || d.n < 3 {
            bail!("domain needs start < end and at least 3 points");
        }
        let mut params = self.parameters.clone();
        for (k, v) in &self.boundary {
            if params.insert(k.clone(), *v).is_some() {
                bail!("`{k}` given both as a parameter and a boundary value");
            }
        }
        let operator = OperatorSpec::new(fam.id, params, 0).map_err(|e| anyhow!("{e}\n{}", schema(fam)))?;
        let settings = GenSettings {
            points: d.n,
            domain: [d.start, d.end],
            ..GenSettings::default()
        };

        // Generated records fix where the condition and the QoI live.
        let template = generate_record_with(&operator, 0, &settings)?;
        let grid = settings.grid()?;
        let cc = &template.condition.coords;
        let along_t = cc.iter().all(|c| c.x == cc[0].x);
        let var: Vec<f64> = cc.iter().map(|c| if along_t { c.t } else { c.x }).collect();
        if var.len() != grid.len() || var.iter().zip(grid.points()).any(|(a, b)| (a - b).abs() > 1e-12) {
            bail!(
                "{} is sampled on its own grid; solve supports families whose condition lives on the declared domain",
                fam.id
            );
        }
        let condition = FunctionSample::new(cc.clone(), self.control.eval(&var)?)?;
        Ok(Resolved {
            operator,
            settings,
            condition,
            query: template.qoi.coords,
        })
    }
}

/// Runs a request against a trained checkpoint.
pub fn solve(spec: &SolveSpec, checkpoint: &Checkpoint, seed: u64) -> Result<SolveOutput> {
    let r = spec.resolve()?;
    let params = checkpoint.params()?;
    let k = checkpoint.tokens_per_function;
    let mut rng = RngStream::new(derive_seed(&[seed, 1]), 0);
    let demos = (0..spec.n_demos as u64)
        .map(|i| {
            let rec = generate_record_with(&r.operator, derive_seed(&[seed, 0, i]), &r.settings)?;
            subsample_record(&rec, k, &mut rng)
        })
        .collect::<icon_core::Result<Vec<_>>>()?;
    let cond = match k {
        Some(k) => subsample_function(&r.condition, k.min(r.condition.len()), &mut rng)?,
        None => r.condition.clone(),
    };
    let prompt = build_prompt(&demos, &cond, &r.query)?;
    let values = forward(&params, &prompt).context("model inference failed")?;
    let prediction = FunctionSample::new(r.query.clone(), values)?;

    let reference = solve_forward(&r.operator, &r.condition, &r.settings)?;
    let (relative_error, fallback) = match &reference {
        Some(re) => {
            let (e, f) = relative_or_absolute(&prediction.values, &re.values)?;
            (Some(e), f)
        }
        None => (None, false),
    };
    let mut flags = Vec::new();
    if !checkpoint.families.contains(&r.operator.family) {
        flags.push(OUT_OF_DISTRIBUTION.to_string());
    }
    Ok(SolveOutput {
        equation_type: r.operator.family,
        n_demos: spec.n_demos,
        flags,
        prediction,
        reference,
        relative_error,
        absolute_error_fallback: fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> SolveSpec {
        SolveSpec::from_json(text).unwrap()
    }

    #[test]
    fn polynomial_control_on_grid() {
        let s = spec(
            r#"{"equation_type":"ode3_fwd","domain":{"start":0,"end":1,"n":11},
                "parameters":{"a1":0.5,"a2":0.25,"a3":-0.3},"boundary":{"u0":0},
                "control":{"polynomial":[0,0.5]},"n_demos":3}"#,
        );
        let r = s.resolve().unwrap();
        assert_eq!(r.condition.len(), 11);
        for (c, v) in r.condition.coords.iter().zip(&r.condition.values) {
            assert!((v - 0.5 * c.t).abs() < 1e-15);
        }
    }

    #[test]
    fn value_pairs_are_interpolated() {
        let c = ControlSpec::Values(vec![[1.0, 2.0], [0.0, 0.0]]);
        assert_eq!(c.eval(&[0.0, 0.25, 1.0]).unwrap(), vec![0.0, 0.5, 2.0]);
        assert!(c.eval(&[1.5]).is_err());
    }

    #[test]
    fn mismatched_parameters_report_the_schema() {
        let s = spec(
            r#"{"equation_type":"ode1_fwd","domain":{"start":0,"end":1,"n":11},
                "parameters":{"a1":0.5},"control":{"polynomial":[1]}}"#,
        );
        let msg = format!("{:#}", s.resolve().err().unwrap());
        assert!(msg.contains("ode1_fwd expects parameters"), "{msg}");
        assert!(msg.contains("a2 in"), "{msg}");
    }

    #[test]
    fn rejects_bad_requests() {
        let base = r#""domain":{"start":0,"end":1,"n":11},"parameters":{"a1":0,"a2":1,"u0":0},"control":{"polynomial":[1]}"#;
        assert!(spec(&format!(r#"{{"equation_type":"nope",{base}}}"#)).resolve().is_err());
        assert!(spec(&format!(r#"{{"equation_type":"ode1_fwd",{base},"n_demos":6}}"#)).resolve().is_err());
        assert!(SolveSpec::from_json(r#"{"equation_type":"ode1_fwd","extra":1}"#).is_err());
        assert!(spec(&format!(r#"{{"equation_type":"pde2d_fwd",{base}}}"#)).resolve().is_err());
    }
}
