//! Sampled certification of the standing assumptions and the parameter
//! gates consulted by the solvers.

use serde::Serialize;

use super::{Driver, SdeModel};
use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, halton, norm};

/// Half-width of the box the gradient argument `z` is sampled from.
const Z_SAMPLE_RADIUS: f64 = 5.0;
/// Sampled residuals up to this value count as satisfied (rounding).
const RESIDUAL_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn cube(dim: usize, half_width: f64) -> Self {
        Self { lo: vec![-half_width; dim], hi: vec![half_width; dim] }
    }

    fn point(&self, unit: &[f64]) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).zip(unit).map(|((l, h), u)| l + (h - l) * u).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateStatus {
    pub pass: bool,
    pub margin: f64,
}

impl GateStatus {
    fn from_margin(margin: f64) -> Self {
        Self { pass: margin > 0.0, margin }
    }
}

/// Worst sampled value of `lhs - rhs` for one inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledResidual {
    pub check: String,
    pub worst: f64,
    pub at: Vec<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateReport {
    pub mu: f64,
    pub p: f64,
    pub gamma_bound: f64,
    /// `eta2 - sqrt(r2) K_z |sigma^-1| - (mu - 1) r2 / 2`, required for the
    /// large-time results.
    pub large_time_gate: GateStatus,
    /// `eta2 - sqrt(r2) |gamma| - ((p v 2) - 1) r2 / 2`, required for
    /// uniform-in-time moments under a bounded drift shift `sigma gamma`.
    pub shifted_moment_gate: GateStatus,
    /// `eta2 - (mu - 1) r2 / 2`, required for `|x|^mu` to be a Lyapunov function.
    pub lyapunov_gate: GateStatus,
    pub assumption_samples: Vec<SampledResidual>,
    pub sample_box: SampleBox,
    pub n_samples: usize,
}

impl GateReport {
    pub fn assumptions_hold(&self) -> bool {
        self.assumption_samples.iter().all(|s| s.holds)
    }

    pub fn all_pass(&self) -> bool {
        self.large_time_gate.pass && self.shifted_moment_gate.pass && self.lyapunov_gate.pass && self.assumptions_hold()
    }
}

pub fn large_time_margin(model: &SdeModel, driver: &Driver, mu: f64) -> f64 {
    let c = &model.constants;
    c.eta2 - c.r2.sqrt() * driver.k_z * c.sigma_inv_bound - (mu - 1.0) / 2.0 * c.r2
}

pub fn shifted_moment_margin(model: &SdeModel, gamma_bound: f64, p: f64) -> f64 {
    let c = &model.constants;
    c.eta2 - c.r2.sqrt() * gamma_bound - (p.max(2.0) - 1.0) / 2.0 * c.r2
}

pub fn lyapunov_margin(model: &SdeModel, mu: f64) -> f64 {
    let c = &model.constants;
    c.eta2 - (mu - 1.0) / 2.0 * c.r2
}

struct Worst {
    check: &'static str,
    worst: f64,
    at: Vec<f64>,
}

impl Worst {
    fn new(check: &'static str) -> Self {
        Self { check, worst: f64::NEG_INFINITY, at: Vec::new() }
    }

    fn update(&mut self, value: f64, x: &[f64]) {
        if value > self.worst {
            self.worst = value;
            self.at = x.to_vec();
        }
    }

    fn finish(self) -> SampledResidual {
        SampledResidual { check: self.check.into(), holds: self.worst <= RESIDUAL_SLACK, worst: self.worst, at: self.at }
    }
}

fn finite(what: &'static str, x: &[f64], values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteEvaluation { what, at: x.to_vec() })
    }
}

fn op_norm(d: usize, m: &[f64]) -> f64 {
    if d == 1 {
        return m[0].abs();
    }
    let a = nalgebra::DMatrix::from_row_slice(d, d, m);
    a.singular_values().max()
}

/// Sample every assumption on `n_samples` Halton points of `sample_box`
/// and compute the three parameter gates. A failed gate is reported, not
/// raised.
pub fn validate(
    model: &SdeModel,
    driver: &Driver,
    mu: f64,
    gamma_bound: f64,
    p: f64,
    sample_box: &SampleBox,
    n_samples: usize,
) -> Result<GateReport> {
    if n_samples < 1 {
        return Err(invalid("n_samples", "must be >= 1"));
    }
    if !(mu >= 2.0) {
        return Err(invalid("mu", "must be >= 2"));
    }
    let d = model.dim;
    if sample_box.lo.len() != d || sample_box.hi.len() != d || sample_box.lo.iter().zip(&sample_box.hi).any(|(l, h)| !(l < h)) {
        return Err(invalid("sample_box", "must be a nonempty box of the model dimension"));
    }
    let c = model.constants;
    let mut dissip = Worst::new("dissipativity");
    let mut drift_growth = Worst::new("drift_growth");
    let mut diff_growth = Worst::new("diffusion_growth");
    let mut inv_bound = Worst::new("sigma_inverse_bound");
    let mut psi_growth = Worst::new("driver_growth");
    let mut psi_lip = Worst::new("driver_lipschitz");

    let mut xi = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let zero = vec![0.0; d];
    let spread: Vec<f64> = sample_box.lo.iter().zip(&sample_box.hi).map(|(l, h)| h - l).collect();
    for k in 1..=n_samples as u64 {
        // dims: [0, d) position, [d, 2d) pair offset, [2d, 4d) two z samples
        let u = halton(k, 4 * d);
        let x = sample_box.point(&u[..d]);
        let r = norm(&x);
        model.drift(&x, &mut xi);
        model.diffusion(&x, &mut sig);
        finite("drift", &x, &xi)?;
        finite("diffusion", &x, &sig)?;
        dissip.update(dot(&xi, &x) - c.eta1 + c.eta2 * r * r, &x);
        drift_growth.update(norm(&xi) - c.xi1 - c.xi2 * r, &x);
        let frob2: f64 = sig.iter().map(|v| v * v).sum();
        diff_growth.update(frob2 - c.r1 - c.r2 * r * r, &x);
        match super::invert(d, &sig) {
            Some(inv) => inv_bound.update(op_norm(d, &inv) - c.sigma_inv_bound, &x),
            None => inv_bound.update(f64::INFINITY, &x),
        }

        let psi0 = driver.eval(&x, &zero);
        finite("driver", &x, &[psi0])?;
        psi_growth.update(psi0.abs() - driver.m_psi * (1.0 + r), &x);

        let x2: Vec<f64> = x.iter().zip(&u[d..2 * d]).zip(&spread).map(|((xv, uv), s)| xv + 0.05 * s * (uv - 0.5)).collect();
        let z1: Vec<f64> = u[2 * d..3 * d].iter().map(|v| Z_SAMPLE_RADIUS * (2.0 * v - 1.0)).collect();
        let z2: Vec<f64> = u[3 * d..4 * d].iter().map(|v| Z_SAMPLE_RADIUS * (2.0 * v - 1.0)).collect();
        let p1 = driver.eval(&x, &z1);
        let p2 = driver.eval(&x2, &z2);
        finite("driver", &x2, &[p1, p2])?;
        let dx: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| a - b).collect();
        let w1 = model.twist(&x, &z1);
        let w2 = model.twist(&x2, &z2);
        let dw: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a - b).collect();
        let mut bound = driver.k_z * norm(&dw);
        let ndx = norm(&dx);
        if ndx > 0.0 {
            bound += driver.k_x * ndx;
        }
        psi_lip.update((p1 - p2).abs() - bound, &x);
    }

    Ok(GateReport {
        mu,
        p,
        gamma_bound,
        large_time_gate: GateStatus::from_margin(large_time_margin(model, driver, mu)),
        shifted_moment_gate: GateStatus::from_margin(shifted_moment_margin(model, gamma_bound, p)),
        lyapunov_gate: GateStatus::from_margin(lyapunov_margin(model, mu)),
        assumption_samples: vec![
            dissip.finish(),
            drift_growth.finish(),
            diff_growth.finish(),
            inv_bound.finish(),
            psi_growth.finish(),
            psi_lip.finish(),
        ],
        sample_box: sample_box.clone(),
        n_samples,
    })
}
