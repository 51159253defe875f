//! Named problem instances.
//!
//! Every entry documents the closed forms used for its structural
//! constants. Catalog entries are limited to `dim <= 2`.

use std::sync::Arc;

use super::{
    Driver, ParamValue, Params, SdeModel, StructuralConstants, TerminalCondition,
};
use crate::control::{Action, ControlProblem};
use crate::error::{invalid, Error, Result};

pub const MODELS: &[&str] = &["ou", "weakdiss"];
pub const DRIVERS: &[&str] = &["cos", "cos-tanh", "const", "manufactured"];
pub const TERMINALS: &[&str] = &["zero", "quadratic", "linear", "bump", "v-star"];
pub const CONTROL_PROBLEMS: &[&str] = &["bang-control", "const-cost"];

const MAX_DIM: usize = 2;

fn num(entry: &str, p: &Params, key: &str) -> Result<f64> {
    match p.get(key) {
        Some(ParamValue::Num(v)) => Ok(*v),
        Some(ParamValue::Text(_)) => Err(invalid("params", format!("`{key}` of `{entry}` must be numeric"))),
        None => Err(Error::MissingParam { entry: entry.into(), param: key.into() }),
    }
}

fn num_or(entry: &str, p: &Params, key: &str, default: f64) -> Result<f64> {
    if p.contains_key(key) {
        num(entry, p, key)
    } else {
        Ok(default)
    }
}

fn text_or<'a>(p: &'a Params, key: &str, default: &'a str) -> Result<&'a str> {
    match p.get(key) {
        Some(ParamValue::Text(s)) => Ok(s),
        Some(ParamValue::Num(_)) => Err(invalid("params", format!("`{key}` must be text"))),
        None => Ok(default),
    }
}

fn dim_param(entry: &str, p: &Params) -> Result<usize> {
    let d = num_or(entry, p, "dim", 1.0)?;
    if d.fract() != 0.0 || d < 1.0 || d > MAX_DIM as f64 {
        return Err(invalid("dim", format!("catalog models support dim 1..={MAX_DIM}, got {d}")));
    }
    Ok(d as usize)
}

/// Forward models.
///
/// * `ou {eta, sigma}`: `Xi(x) = -eta x`, `sigma = s I`; `eta1 = 0`,
///   `eta2 = eta`, `r1 = d s^2`, `r2 = 0`, `xi1 = 0`, `xi2 = eta`,
///   `|sigma^-1| = 1/s`.
/// * `weakdiss {c, q}`: `Xi_i(x) = -x_i + c cos x_i`,
///   `sigma(x) = sqrt(1 + q|x|^2) I`; from `c|x|sqrt(d) <= c^2 d/2 + |x|^2/2`:
///   `eta1 = c^2 d / 2`, `eta2 = 1/2`, `r1 = d`, `r2 = d q`,
///   `xi1 = c sqrt(d)`, `xi2 = 1`, `|sigma^-1| = 1`.
pub fn model(name: &str, p: &Params) -> Result<SdeModel> {
    match name {
        "ou" => {
            let eta = num(name, p, "eta")?;
            let s = num(name, p, "sigma")?;
            let d = dim_param(name, p)?;
            if !(eta > 0.0 && s > 0.0) {
                return Err(invalid("params", "ou needs eta > 0 and sigma > 0"));
            }
            let drift: super::VectorField = Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -eta * xi;
                }
            });
            let diffusion: super::MatrixField = Arc::new(move |_x: &[f64], out: &mut [f64]| {
                let d = (out.len() as f64).sqrt() as usize;
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = s;
                }
            });
            let constants = StructuralConstants {
                eta1: 0.0,
                eta2: eta,
                r1: d as f64 * s * s,
                r2: 0.0,
                xi1: 0.0,
                xi2: eta,
                sigma_inv_bound: 1.0 / s,
            };
            SdeModel::new("ou", d, drift, diffusion, constants)
        }
        "weakdiss" => {
            let c = num(name, p, "c")?;
            let q = num(name, p, "q")?;
            let d = dim_param(name, p)?;
            if q < 0.0 {
                return Err(invalid("params", "weakdiss needs q >= 0"));
            }
            let drift: super::VectorField = Arc::new(move |x: &[f64], out: &mut [f64]| {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -xi + c * xi.cos();
                }
            });
            let diffusion: super::MatrixField = Arc::new(move |x: &[f64], out: &mut [f64]| {
                let d = x.len();
                let s = (1.0 + q * x.iter().map(|v| v * v).sum::<f64>()).sqrt();
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = s;
                }
            });
            let df = d as f64;
            let constants = StructuralConstants {
                eta1: c * c * df / 2.0,
                eta2: 0.5,
                r1: df,
                r2: df * q,
                xi1: c.abs() * df.sqrt(),
                xi2: 1.0,
                sigma_inv_bound: 1.0,
            };
            SdeModel::new("weakdiss", d, drift, diffusion, constants)
        }
        other => Err(Error::UnknownCatalogEntry(other.into())),
    }
}

fn mean_cos(x: &[f64]) -> f64 {
    x.iter().map(|v| v.cos()).sum::<f64>() / x.len() as f64
}

/// Drivers, paired with the forward model whose `sigma^-1` twists `z`.
///
/// * `cos`: `psi = mean_i cos x_i`; `k_x = 1`, `k_z = 0`, `m_psi = 1`.
/// * `cos-tanh {k}`: `psi = mean_i cos x_i + k mean_i tanh((z sigma^-1)_i)`;
///   tanh is 1-Lipschitz so `k_z = k`; the tanh term only sees the twisted
///   gradient so `k_x = 1`; `m_psi = 1`.
/// * `const {c}`: `psi = c`; `k_x = k_z = 0`, `m_psi = |c|`.
/// * `manufactured {lambda_star, kappa, v_star?}`: see [`manufactured_problem`].
pub fn driver(name: &str, p: &Params, model: &SdeModel) -> Result<Driver> {
    match name {
        "cos" => Ok(Driver::new("cos", Arc::new(|x: &[f64], _z: &[f64]| mean_cos(x)), 1.0, 0.0, 1.0)),
        "cos-tanh" => {
            let k = num(name, p, "k")?;
            let m = model.clone();
            let psi = Arc::new(move |x: &[f64], z: &[f64]| {
                let w = m.twist(x, z);
                mean_cos(x) + k * w.iter().map(|v| v.tanh()).sum::<f64>() / w.len() as f64
            });
            Ok(Driver::new("cos-tanh", psi, 1.0, k.abs(), 1.0))
        }
        "const" => {
            let c = num(name, p, "c")?;
            Ok(Driver::new("const", Arc::new(move |_x: &[f64], _z: &[f64]| c), 0.0, 0.0, c.abs()))
        }
        "manufactured" => {
            let lambda_star = num(name, p, "lambda_star")?;
            let kappa = num(name, p, "kappa")?;
            let v_star = smooth_function(text_or(p, "v_star", "one-minus-cos")?)?;
            Ok(manufactured_problem(model, v_star, lambda_star, kappa)?.driver)
        }
        other => Err(Error::UnknownCatalogEntry(other.into())),
    }
}

/// Terminal data.
///
/// * `zero`.
/// * `quadratic {scale?, clip?}`: `scale * min(|x|, clip)^2`.
/// * `linear`: `x_1`.
/// * `bump {height, width}`: `height * exp(-|x|^2 / (2 width^2))`.
/// * `v-star {v_star?, bump_height?, bump_width?}`: the manufactured
///   profile, optionally plus a bump.
pub fn terminal(name: &str, p: &Params) -> Result<TerminalCondition> {
    match name {
        "zero" => Ok(TerminalCondition::zero()),
        "quadratic" => {
            let scale = num_or(name, p, "scale", 1.0)?;
            let clip = num_or(name, p, "clip", f64::INFINITY)?;
            TerminalCondition::new(
                "quadratic",
                Arc::new(move |x: &[f64]| {
                    let r = crate::numerics::norm(x).min(clip);
                    scale * r * r
                }),
                scale.abs(),
                2.0,
            )
        }
        "linear" => TerminalCondition::new("linear", Arc::new(|x: &[f64]| x[0]), 1.0, 2.0),
        "bump" => {
            let h = num(name, p, "height")?;
            let w = num(name, p, "width")?;
            TerminalCondition::new("bump", bump(h, w), h.abs(), 2.0)
        }
        "v-star" => {
            let v = smooth_function(text_or(p, "v_star", "one-minus-cos")?)?;
            let h = num_or(name, p, "bump_height", 0.0)?;
            let w = num_or(name, p, "bump_width", 1.0)?;
            let b = bump(h, w);
            let value = v.value.clone();
            let growth = v.grad_bound + h.abs();
            TerminalCondition::new("v-star", Arc::new(move |x: &[f64]| value(x) + b(x)), growth, 2.0)
        }
        other => Err(Error::UnknownCatalogEntry(other.into())),
    }
}

fn bump(h: f64, w: f64) -> super::ScalarField {
    Arc::new(move |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        h * (-r2 / (2.0 * w * w)).exp()
    })
}

/// Control problems.
///
/// * `bang-control {effort?}`: actions listed `[0, -1, +1]` (ties resolve
///   to the earlier entry), `R(a) = a e_1`, `L(x, a) = mean_i cos x_i + effort |a|`
///   with `effort` defaulting to 1/2.
/// * `const-cost {c}`: single action `0`, `R = 0`, `L = c`.
pub fn control_problem(name: &str, p: &Params, dim: usize) -> Result<ControlProblem> {
    let unit = |a: f64| {
        let mut r = vec![0.0; dim];
        r[0] = a;
        r
    };
    match name {
        "bang-control" => {
            let effort = num_or(name, p, "effort", 0.5)?;
            let actions = vec![
                Action::new("0", unit(0.0)),
                Action::new("-1", unit(-1.0)),
                Action::new("+1", unit(1.0)),
            ];
            ControlProblem::new(
                "bang-control",
                actions,
                Arc::new(move |x: &[f64], a: &Action| mean_cos(x) + effort * crate::numerics::norm(&a.drift)),
                1.0,
                TerminalCondition::zero(),
            )
            .map(|cp| cp.with_cost_constants(1.0, 1.0))
        }
        "const-cost" => {
            let c = num(name, p, "c")?;
            ControlProblem::new(
                "const-cost",
                vec![Action::new("0", unit(0.0))],
                Arc::new(move |_x: &[f64], _a: &Action| c),
                0.0,
                TerminalCondition::zero(),
            )
            .map(|cp| cp.with_cost_constants(0.0, c.abs()))
        }
        other => Err(Error::UnknownCatalogEntry(other.into())),
    }
}

/// A `C^2` function with analytic derivatives, used as a manufactured
/// ergodic profile. `grad_bound` and `hess_bound` are global sup-norm bounds
/// of `|grad v|` and `|hess v|_op`.
#[derive(Clone)]
pub struct SmoothFunction {
    pub name: String,
    pub value: super::ScalarField,
    pub gradient: super::VectorField,
    pub hessian: super::MatrixField,
    pub grad_bound: f64,
    pub hess_bound: f64,
}

/// `one-minus-cos`: `sum_i (1 - cos x_i)`; `zero`.
pub fn smooth_function(name: &str) -> Result<SmoothFunction> {
    match name {
        "one-minus-cos" => Ok(SmoothFunction {
            name: name.into(),
            value: Arc::new(|x: &[f64]| x.iter().map(|v| 1.0 - v.cos()).sum()),
            gradient: Arc::new(|x: &[f64], out: &mut [f64]| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v.sin();
                }
            }),
            hessian: Arc::new(|x: &[f64], out: &mut [f64]| {
                let d = x.len();
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = x[i].cos();
                }
            }),
            // |grad| <= sqrt(d) <= sqrt(2) for catalog dimensions
            grad_bound: (MAX_DIM as f64).sqrt(),
            hess_bound: 1.0,
        }),
        "zero" => Ok(SmoothFunction {
            name: name.into(),
            value: Arc::new(|_x: &[f64]| 0.0),
            gradient: Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0)),
            hessian: Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0)),
            grad_bound: 0.0,
            hess_bound: 0.0,
        }),
        other => Err(Error::UnknownCatalogEntry(other.into())),
    }
}

/// Driver reverse-engineered so that `(v_star, lambda_star)` solves the
/// ergodic equation `L v + psi(x, grad v sigma) - lambda = 0` exactly.
pub struct ManufacturedProblem {
    pub driver: Driver,
    pub v_star: SmoothFunction,
    pub lambda_star: f64,
    /// Set when `psi(x, 0)` grows faster than linearly (`r2 > 0` with a
    /// curved `v_star`), i.e. the linear-growth bound on the driver fails.
    pub growth_violation: bool,
}

/// `psi(x, z) = lambda* - [Xi . grad v* + 1/2 tr(sigma sigma^T hess v*)]
///              + kappa mean_i tanh((z sigma^-1)_i - d_i v*)`.
pub fn manufactured_problem(
    model: &SdeModel,
    v_star: SmoothFunction,
    lambda_star: f64,
    kappa: f64,
) -> Result<ManufacturedProblem> {
    if !(kappa >= 0.0) {
        return Err(invalid("kappa", "must be >= 0"));
    }
    let d = model.dim;
    let m = model.clone();
    let vs = v_star.clone();
    let psi = Arc::new(move |x: &[f64], z: &[f64]| {
        let mut xi = [0.0; MAX_DIM];
        let mut grad = [0.0; MAX_DIM];
        let mut sig = [0.0; MAX_DIM * MAX_DIM];
        let mut hess = [0.0; MAX_DIM * MAX_DIM];
        let (xi, grad) = (&mut xi[..d], &mut grad[..d]);
        let (sig, hess) = (&mut sig[..d * d], &mut hess[..d * d]);
        m.drift(x, xi);
        m.diffusion(x, sig);
        (vs.gradient)(x, grad);
        (vs.hessian)(x, hess);
        let transport: f64 = xi.iter().zip(grad.iter()).map(|(a, b)| a * b).sum();
        // tr(sigma sigma^T H) = sum_{i,j,k} s_ik s_jk H_ij
        let mut tr = 0.0;
        for i in 0..d {
            for j in 0..d {
                let ss: f64 = (0..d).map(|k| sig[i * d + k] * sig[j * d + k]).sum();
                tr += ss * hess[i * d + j];
            }
        }
        let mut value = lambda_star - (transport + 0.5 * tr);
        if kappa != 0.0 {
            let w = m.twist(x, z);
            let t: f64 = w.iter().zip(grad.iter()).map(|(wi, gi)| (wi - gi).tanh()).sum();
            value += kappa * t / d as f64;
        }
        value
    });
    let c = model.constants;
    let g = v_star.grad_bound;
    let h = v_star.hess_bound;
    let growth_violation = c.r2 > 0.0 && h > 0.0;
    let m_psi = (lambda_star.abs() + kappa + c.xi1 * g + 0.5 * c.r1 * h).max(c.xi2 * g);
    // The transport term Xi . grad v* is not globally Lipschitz unless v* is flat.
    let k_x = if g == 0.0 && h == 0.0 { 0.0 } else { f64::INFINITY };
    let driver = Driver::new("manufactured", psi, k_x, kappa, m_psi);
    Ok(ManufacturedProblem { driver, v_star, lambda_star, growth_violation })
}
