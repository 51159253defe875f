//! Problem definitions: forward dynamics, BSDE drivers, terminal data and
//! the structural constants the solvers rely on.

pub mod catalog;
mod gates;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

pub use catalog::{manufactured_problem, ManufacturedProblem, SmoothFunction};
pub use gates::{large_time_margin, lyapunov_margin, shifted_moment_margin, validate, GateReport, GateStatus, SampleBox, SampledResidual};

use crate::error::{invalid, Result};

/// `x -> out`, both of length `dim`.
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `x -> out`, `out` is a row-major `dim x dim` matrix.
pub type MatrixField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// `(x, z) -> psi(x, z)` with `z` a row vector.
pub type DriverFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Constants of the standing assumption on the forward SDE:
/// `<Xi(x), x> <= eta1 - eta2 |x|^2`, `|Xi(x)| <= xi1 + xi2 |x|`,
/// `|sigma(x)|_F^2 <= r1 + r2 |x|^2`, `|sigma(x)^-1| <= sigma_inv_bound`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StructuralConstants {
    pub eta1: f64,
    pub eta2: f64,
    pub r1: f64,
    pub r2: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub sigma_inv_bound: f64,
}

/// Forward diffusion `dX = Xi(X) dt + sigma(X) dW`.
#[derive(Clone)]
pub struct SdeModel {
    pub name: String,
    pub dim: usize,
    drift: VectorField,
    diffusion: MatrixField,
    pub constants: StructuralConstants,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        drift: VectorField,
        diffusion: MatrixField,
        constants: StructuralConstants,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        let c = &constants;
        let nonneg = [c.eta1, c.r1, c.r2, c.xi1, c.xi2];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("constants", "eta1, r1, r2, xi1, xi2 must be finite and >= 0"));
        }
        if !(c.eta2 > 0.0 && c.sigma_inv_bound > 0.0) {
            return Err(invalid("constants", "eta2 and sigma_inv_bound must be > 0"));
        }
        Ok(Self { name: name.into(), dim, drift, diffusion, constants })
    }

    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    pub fn diffusion(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub fn drift_1d(&self, x: f64) -> f64 {
        let mut o = [0.0];
        (self.drift)(&[x], &mut o);
        o[0]
    }

    pub fn sigma_1d(&self, x: f64) -> f64 {
        let mut o = [0.0];
        (self.diffusion)(&[x], &mut o);
        o[0]
    }

    /// `sigma(x)^-1`, row-major. `None` when singular.
    pub fn sigma_inverse(&self, x: &[f64]) -> Option<Vec<f64>> {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        self.diffusion(x, &mut s);
        invert(d, &s)
    }

    /// Row vector `z sigma(x)^-1`.
    pub fn twist(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        match self.sigma_inverse(x) {
            Some(inv) => (0..d).map(|j| (0..d).map(|i| z[i] * inv[i * d + j]).sum()).collect(),
            None => vec![f64::NAN; d],
        }
    }
}

pub(crate) fn invert(d: usize, m: &[f64]) -> Option<Vec<f64>> {
    match d {
        1 => (m[0] != 0.0).then(|| vec![1.0 / m[0]]),
        2 => {
            let det = m[0] * m[3] - m[1] * m[2];
            (det != 0.0).then(|| vec![m[3] / det, -m[1] / det, -m[2] / det, m[0] / det])
        }
        _ => nalgebra::DMatrix::from_row_slice(d, d, m)
            .try_inverse()
            .map(|inv| inv.transpose().as_slice().to_vec()),
    }
}

/// BSDE generator `psi(x, z)` with the Lipschitz/growth constants
/// `|psi(x, 0)| <= m_psi (1 + |x|)` and
/// `|psi(x, z) - psi(x', z')| <= k_x |x - x'| + k_z |z sigma(x)^-1 - z' sigma(x')^-1|`.
#[derive(Clone)]
pub struct Driver {
    pub name: String,
    psi: DriverFn,
    pub k_x: f64,
    pub k_z: f64,
    pub m_psi: f64,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("name", &self.name)
            .field("k_x", &self.k_x)
            .field("k_z", &self.k_z)
            .field("m_psi", &self.m_psi)
            .finish_non_exhaustive()
    }
}

impl Driver {
    pub fn new(name: impl Into<String>, psi: DriverFn, k_x: f64, k_z: f64, m_psi: f64) -> Self {
        Self { name: name.into(), psi, k_x, k_z, m_psi }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        (self.psi)(x, z)
    }

    pub fn eval_1d(&self, x: f64, z: f64) -> f64 {
        (self.psi)(&[x], &[z])
    }

    /// True when the driver ignores its gradient argument (`k_z == 0`).
    pub fn is_z_independent(&self) -> bool {
        self.k_z == 0.0
    }
}

/// Terminal data with `|g(x)| <= growth_const (1 + |x|^growth_exp)`.
#[derive(Clone)]
pub struct TerminalCondition {
    pub name: String,
    g: ScalarField,
    pub growth_const: f64,
    pub growth_exp: f64,
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCondition")
            .field("name", &self.name)
            .field("growth_const", &self.growth_const)
            .field("growth_exp", &self.growth_exp)
            .finish_non_exhaustive()
    }
}

impl TerminalCondition {
    pub fn new(name: impl Into<String>, g: ScalarField, growth_const: f64, growth_exp: f64) -> Result<Self> {
        if growth_exp < 2.0 {
            return Err(invalid("growth_exp", "polynomial growth exponent must be >= 2"));
        }
        Ok(Self { name: name.into(), g, growth_const, growth_exp })
    }

    pub fn zero() -> Self {
        Self { name: "zero".into(), g: Arc::new(|_| 0.0), growth_const: 0.0, growth_exp: 2.0 }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.g)(x)
    }

    pub fn eval_1d(&self, x: f64) -> f64 {
        (self.g)(&[x])
    }
}

/// Catalog parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

pub type Params = BTreeMap<String, ParamValue>;

/// Build a numeric parameter map from pairs.
pub fn params<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Params {
    pairs.into_iter().map(|(k, v)| (k.to_string(), ParamValue::Num(v))).collect()
}
