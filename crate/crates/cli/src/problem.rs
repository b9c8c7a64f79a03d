//! The problem file: one JSON document holding the problem, the control, the
//! integrator and search settings. Every optional key is filled in on load, so
//! the canonical echo of a loaded file is a fixed point of load/echo.

use std::path::Path;

use quench_core::{
    ControlSignal, Extension, FieldKind, IntegratorConfig, Matrix2, MatrixSignal, Method,
    PiecewiseControl, ProblemSpec, RegionParams, SearchConfig, Vec2,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MatrixSpec {
    Constant {
        value: Matrix2,
    },
    Piecewise {
        breakpoints: Vec<f64>,
        matrices: Vec<Matrix2>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtensionSpec {
    #[default]
    Zero,
    Hold,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControlSpec {
    #[default]
    Zero,
    Constant {
        value: Vec2,
    },
    Piecewise {
        grid_step: f64,
        values: Vec<Vec2>,
        #[serde(default)]
        extension: ExtensionSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSpec {
    pub rtol: f64,
    pub atol: f64,
    pub delta_stop: f64,
    pub max_step: Option<f64>,
    pub t_cap: Option<f64>,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        let c = IntegratorConfig::default();
        Self {
            rtol: c.rtol,
            atol: c.atol,
            delta_stop: c.delta_stop,
            max_step: c.max_step,
            t_cap: c.t_cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodSpec {
    Brute,
    Sweep,
    Direct,
}

impl From<MethodSpec> for Method {
    fn from(m: MethodSpec) -> Method {
        match m {
            MethodSpec::Brute => Method::Brute,
            MethodSpec::Sweep => Method::Sweep,
            MethodSpec::Direct => Method::Direct,
        }
    }
}

impl From<Method> for MethodSpec {
    fn from(m: Method) -> MethodSpec {
        match m {
            Method::Brute => MethodSpec::Brute,
            Method::Sweep => MethodSpec::Sweep,
            Method::Direct => MethodSpec::Direct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpec {
    pub method: MethodSpec,
    pub n_intervals: usize,
    pub n_directions: usize,
    pub include_zero: bool,
    pub damping: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub seed: u64,
    pub n_starts: usize,
    pub direct_iters: u64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        let c = SearchConfig::default();
        Self {
            method: c.method.into(),
            n_intervals: c.n_intervals,
            n_directions: c.n_directions,
            include_zero: c.include_zero,
            damping: c.damping,
            max_iters: c.max_iters,
            conv_tol: c.conv_tol,
            seed: c.seed,
            n_starts: c.n_starts,
            direct_iters: c.direct_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub field: FieldKind,
    pub y0: Vec2,
    pub rho0: f64,
    pub matrix: MatrixSpec,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub search: SearchSpec,
    #[serde(default)]
    pub region: RegionParams,
    /// Adjoint regularization; `null` selects the default for the run.
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("invalid problem file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn matrix_signal(&self) -> Result<MatrixSignal, CliError> {
        let m = match &self.matrix {
            MatrixSpec::Constant { value } => MatrixSignal::Constant(*value),
            MatrixSpec::Piecewise {
                breakpoints,
                matrices,
            } => MatrixSignal::piecewise(breakpoints.clone(), matrices.clone())?,
        };
        Ok(m)
    }

    pub fn problem(&self) -> Result<ProblemSpec, CliError> {
        Ok(ProblemSpec::new(
            self.field,
            self.y0,
            self.rho0,
            self.matrix_signal()?,
        )?)
    }

    pub fn control(&self) -> Result<ControlSignal, CliError> {
        let u = match &self.control {
            ControlSpec::Zero => ControlSignal::Zero,
            ControlSpec::Constant { value } => ControlSignal::Constant(*value),
            ControlSpec::Piecewise {
                grid_step,
                values,
                extension,
            } => {
                let extension = match extension {
                    ExtensionSpec::Zero => Extension::Zero,
                    ExtensionSpec::Hold => Extension::Hold,
                };
                ControlSignal::Piecewise(PiecewiseControl::new(
                    *grid_step,
                    values.clone(),
                    extension,
                )?)
            }
        };
        Ok(u)
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let s = &self.integrator;
        IntegratorConfig {
            rtol: s.rtol,
            atol: s.atol,
            delta_stop: s.delta_stop,
            max_step: s.max_step,
            t_cap: s.t_cap,
        }
    }

    pub fn search(&self, parallel: bool) -> SearchConfig {
        let s = &self.search;
        SearchConfig {
            method: s.method.into(),
            n_intervals: s.n_intervals,
            n_directions: s.n_directions,
            include_zero: s.include_zero,
            damping: s.damping,
            max_iters: s.max_iters,
            conv_tol: s.conv_tol,
            seed: s.seed,
            n_starts: s.n_starts,
            direct_iters: s.direct_iters,
            parallel,
            integrator: self.integrator(),
        }
    }
}
