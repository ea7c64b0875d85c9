//! JSON model files.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sensprec::casestudies::{
    f16_model, f16_periodic_system, radial_range_row, satellite_model, satellite_system, Discretization,
    F16_CHANNELS,
};
use sensprec::estimation::GaussianBelief;
use sensprec::linalg::{from_row_major, to_row_major};
use sensprec::sysmodel::{NoiseFilter, Step, TimeVaryingLinearSystem};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    F16,
    Satellite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Zoh,
    Tustin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FilterSpec {
    Matrices {
        #[serde(rename = "G")]
        g: Vec<f64>,
        #[serde(rename = "H")]
        h: Vec<f64>,
        #[serde(rename = "inputVariance")]
        input_variance: Vec<f64>,
    },
    FirstOrder {
        omega_c: f64,
        variance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Row-major `n_x × n_x` covariance.
    pub cov: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nw: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<StepSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<Builtin>,
    /// Discretization of the builtin F16 plant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discretization: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    /// Measurement rows of the builtin satellite at `t_1 … t_m`, each row-major with 4 columns.
    #[serde(rename = "rangeRows", default, skip_serializing_if = "Option::is_none")]
    pub range_rows: Option<Vec<Vec<f64>>>,
}

/// A model ready for the design drivers.
#[derive(Debug, Clone)]
pub struct Model {
    pub sys: TimeVaryingLinearSystem,
    pub filter: Option<NoiseFilter>,
    pub prior: Option<GaussianBelief>,
    /// Names of the physical channels of each step, when known.
    pub channel_names: Option<Vec<String>>,
}

fn cfg(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn matrix(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>, CliError> {
    Ok(from_row_major(rows, cols, data, what)?)
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| cfg(format!("invalid model file: {e}")))
    }

    pub fn build(&self) -> Result<Model, CliError> {
        match self.builtin {
            Some(Builtin::F16) => self.build_f16(),
            Some(Builtin::Satellite) => self.build_satellite(),
            None => self.build_explicit(),
        }
    }

    fn build_f16(&self) -> Result<Model, CliError> {
        let dt = self.dt.unwrap_or(0.01);
        let m = self.m.unwrap_or(1);
        let method = match self.discretization.unwrap_or(Method::Zoh) {
            Method::Zoh => Discretization::Zoh,
            Method::Tustin => Discretization::Tustin,
        };
        let omega_c = match &self.filter {
            Some(FilterSpec::FirstOrder { omega_c, .. }) => *omega_c,
            _ => f16_model().omega_c,
        };
        let (sys, default_filter) = f16_periodic_system(dt, method, omega_c, m)?;
        let filter = match &self.filter {
            Some(spec) => parse_filter(spec, dt, 1)?,
            None => default_filter,
        };
        let prior = self.prior.as_ref().map(|p| parse_prior(p, 4)).transpose()?;
        Ok(Model {
            sys,
            filter: Some(filter),
            prior,
            channel_names: Some(F16_CHANNELS.iter().map(|s| s.to_string()).collect()),
        })
    }

    fn build_satellite(&self) -> Result<Model, CliError> {
        let dt = self.dt.unwrap_or(0.1);
        let model = satellite_model(dt)?;
        let m = model.time_grid.len() - 1;
        let rows = match &self.range_rows {
            Some(rows) => {
                if rows.len() != m {
                    return Err(cfg(format!("rangeRows needs {m} entries, one per measurement time")));
                }
                let mut out = vec![radial_range_row()];
                for (k, r) in rows.iter().enumerate() {
                    if r.is_empty() || r.len() % 4 != 0 {
                        return Err(cfg(format!("rangeRows[{k}] must hold whole rows of 4 entries")));
                    }
                    out.push(matrix(r.len() / 4, 4, r, "rangeRows entry")?);
                }
                out
            }
            None => vec![radial_range_row(); m + 1],
        };
        let sys = satellite_system(dt, |k| rows[k].clone())?;
        let prior = match &self.prior {
            Some(p) => parse_prior(p, 4)?,
            None => model.prior(),
        };
        Ok(Model {
            sys,
            filter: None,
            prior: Some(prior),
            channel_names: None,
        })
    }

    fn build_explicit(&self) -> Result<Model, CliError> {
        let nx = self.nx.ok_or_else(|| cfg("missing nx"))?;
        let nw = self.nw.ok_or_else(|| cfg("missing nw"))?;
        let m = self.m.ok_or_else(|| cfg("missing m"))?;
        let dt = self.dt.unwrap_or(1.0);
        let periodic = self.periodic.unwrap_or(true);
        let specs = self.steps.as_ref().ok_or_else(|| cfg("missing steps"))?;
        let mut steps = Vec::with_capacity(specs.len());
        for (k, s) in specs.iter().enumerate() {
            if s.c.len() % nx != 0 {
                return Err(cfg(format!("steps[{k}].C length {} is not a multiple of nx = {nx}", s.c.len())));
            }
            let ny = s.c.len() / nx;
            let mut step = Step::new(
                matrix(nx, nx, &s.a, &format!("steps[{k}].A"))?,
                matrix(nx, nw, &s.b, &format!("steps[{k}].B"))?,
                matrix(ny, nx, &s.c, &format!("steps[{k}].C"))?,
                matrix(nw, nw, &s.q, &format!("steps[{k}].Q"))?,
            );
            if let Some(d) = &s.d {
                step = step.with_feedthrough(matrix(ny, nw, d, &format!("steps[{k}].D"))?);
            }
            steps.push(step);
        }
        let sys = TimeVaryingLinearSystem::new(m, steps, periodic, dt)?;
        let filter = self.filter.as_ref().map(|f| parse_filter(f, dt, nw)).transpose()?;
        let prior = self.prior.as_ref().map(|p| parse_prior(p, nx)).transpose()?;
        Ok(Model {
            sys,
            filter,
            prior,
            channel_names: None,
        })
    }

    /// Explicit (non-builtin) form of a model.
    pub fn from_model(model: &Model) -> Self {
        let sys = &model.sys;
        let steps = sys
            .steps()
            .iter()
            .map(|s| StepSpec {
                a: to_row_major(&s.a),
                b: to_row_major(&s.b),
                c: to_row_major(&s.c),
                d: Some(to_row_major(&s.d)),
                q: to_row_major(&s.q),
            })
            .collect();
        ModelFile {
            nx: Some(sys.nx()),
            nw: Some(sys.nw()),
            m: Some(sys.m()),
            dt: Some(sys.dt()),
            periodic: Some(sys.periodic()),
            steps: Some(steps),
            filter: model.filter.as_ref().map(|f| FilterSpec::Matrices {
                g: to_row_major(&f.g),
                h: to_row_major(&f.h),
                input_variance: to_row_major(&f.input_variance),
            }),
            prior: model.prior.as_ref().map(|p| PriorSpec {
                mean: Some(p.mean.iter().cloned().collect()),
                cov: to_row_major(&p.cov),
            }),
            ..ModelFile::default()
        }
    }
}

fn parse_filter(spec: &FilterSpec, dt: f64, nw: usize) -> Result<NoiseFilter, CliError> {
    Ok(match spec {
        FilterSpec::Matrices { g, h, input_variance } => NoiseFilter::new(
            matrix(nw, nw, g, "filter.G")?,
            matrix(nw, nw, h, "filter.H")?,
            matrix(nw, nw, input_variance, "filter.inputVariance")?,
        )?,
        FilterSpec::FirstOrder { omega_c, variance } => NoiseFilter::first_order(*omega_c, dt, *variance, nw)?,
    })
}

fn parse_prior(p: &PriorSpec, nx: usize) -> Result<GaussianBelief, CliError> {
    let cov = matrix(nx, nx, &p.cov, "prior.cov")?;
    let mean = match &p.mean {
        Some(v) if v.len() == nx => DVector::from_column_slice(v),
        Some(v) => return Err(cfg(format!("prior.mean has {} entries, expected {nx}", v.len()))),
        None => DVector::zeros(nx),
    };
    Ok(GaussianBelief::new(mean, cov)?)
}

/// Prior covariance given on the command line as comma-separated row-major values.
pub fn prior_from_flag(values: &[f64], nx: usize) -> Result<GaussianBelief, CliError> {
    parse_prior(
        &PriorSpec {
            mean: None,
            cov: values.to_vec(),
        },
        nx,
    )
}
