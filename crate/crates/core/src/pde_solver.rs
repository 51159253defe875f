//! Finite-difference solver on a truncated 1D grid for
//!
//! * the backward Cauchy problem `u_t + L u + psi(x, u_x sigma) = 0`, `u(T) = g`,
//! * the discounted equation `L v + psi(x, v_x sigma) - alpha v = 0`,
//! * the ergodic residual `L v + psi(x, v_x sigma) - lambda`.
//!
//! `L = 1/2 sigma^2 d_xx + Xi d_x`. The generator is discretized with
//! centered differences wherever the centered stencil is monotone
//! (`|Xi| h <= sigma^2`) and with upwind drift elsewhere. The two boundary
//! nodes carry the drift only (`u_xx = 0` there), differenced toward the
//! interior.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{Driver, SdeModel, TerminalCondition};
use crate::numerics::Tridiagonal;

/// Closure of the stencil at the two ends of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// `u_xx = 0`: linear extrapolation, drift-only boundary rows.
    SecondDerivativeZero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_nodes: usize,
    pub boundary: Boundary,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_nodes: usize) -> Result<Self> {
        if !(x_min < 0.0 && 0.0 < x_max) {
            return Err(invalid("grid", "need x_min < 0 < x_max"));
        }
        if n_nodes < 16 {
            return Err(invalid("grid", "need at least 16 nodes"));
        }
        Ok(Self { x_min, x_max, n_nodes, boundary: Boundary::SecondDerivativeZero })
    }

    /// Symmetric grid with spacing exactly `h` and a node at 0; the half
    /// width is rounded up to a multiple of `h`.
    pub fn symmetric(half_width: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && half_width > 0.0) {
            return Err(invalid("grid", "need h > 0 and half_width > 0"));
        }
        let n_half = (half_width / h - 1e-9).ceil().max(1.0) as usize;
        let x_max = n_half as f64 * h;
        Self::new(-x_max, x_max, 2 * n_half + 1)
    }

    /// Default truncation `6 sqrt(r1 / (2 eta2 - r2)) + |x0|`, a
    /// dissipativity-scaled proxy for six standard deviations.
    pub fn default_half_width(model: &SdeModel, x0_abs: f64) -> f64 {
        let c = &model.constants;
        6.0 * (c.r1 / (2.0 * c.eta2 - c.r2)).sqrt() + x0_abs
    }

    pub fn auto(model: &SdeModel, x0_abs: f64, h: f64) -> Result<Self> {
        Self::symmetric(Self::default_half_width(model, x0_abs), h)
    }

    pub fn h(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    /// Index of the node nearest to `x` (clamped to the grid).
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.x_min) / self.h()).round();
        k.clamp(0.0, (self.n_nodes - 1) as f64) as usize
    }

    /// Normalization node: the node nearest 0.
    pub fn origin(&self) -> usize {
        self.nearest(0.0)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Piecewise-linear interpolation of nodal `values` at `x` (clamped).
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let s = ((x - self.x_min) / self.h()).clamp(0.0, (self.n_nodes - 1) as f64);
        let i = (s.floor() as usize).min(self.n_nodes - 2);
        let w = s - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    /// Nodes with `|x| <= radius`.
    pub fn window(&self, radius: f64) -> std::ops::RangeInclusive<usize> {
        let lo = (0..self.n_nodes).find(|&i| self.node(i) >= -radius - 1e-12).unwrap_or(0);
        let hi = (0..self.n_nodes).rev().find(|&i| self.node(i) <= radius + 1e-12).unwrap_or(self.n_nodes - 1);
        lo..=hi
    }
}

/// Spatial discretization of `L` and of the gradient on one grid.
#[derive(Debug, Clone)]
pub(crate) struct Discretization {
    pub x: Vec<f64>,
    pub sigma: Vec<f64>,
    pub drift: Vec<f64>,
    pub h: f64,
    /// Generator matrix.
    pub gen: Tridiagonal,
}

impl Discretization {
    pub fn new(model: &SdeModel, grid: &Grid1D) -> Result<Self> {
        if model.dim != 1 {
            return Err(invalid("model", "the grid solver is one-dimensional"));
        }
        let n = grid.n_nodes;
        let h = grid.h();
        let x = grid.nodes();
        let sigma: Vec<f64> = x.iter().map(|&v| model.sigma_1d(v)).collect();
        let drift: Vec<f64> = x.iter().map(|&v| model.drift_1d(v)).collect();
        if sigma.iter().chain(&drift).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEvaluation { what: "model on grid", at: vec![] });
        }
        let mut gen = Tridiagonal::zeros(n);
        for i in 1..n - 1 {
            let a = 0.5 * sigma[i] * sigma[i];
            let b = drift[i];
            let (lo, up) = if b.abs() * h <= 2.0 * a {
                (a / (h * h) - b / (2.0 * h), a / (h * h) + b / (2.0 * h))
            } else if b > 0.0 {
                (a / (h * h), a / (h * h) + b / h)
            } else {
                (a / (h * h) - b / h, a / (h * h))
            };
            gen.lower[i] = lo;
            gen.upper[i] = up;
            gen.diag[i] = -(lo + up);
        }
        gen.diag[0] = -drift[0] / h;
        gen.upper[0] = drift[0] / h;
        gen.lower[n - 1] = -drift[n - 1] / h;
        gen.diag[n - 1] = drift[n - 1] / h;
        Ok(Self { x, sigma, drift, h, gen })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    /// Centered difference inside, two-point one-sided at the ends.
    pub fn gradient(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        let h = self.h;
        out[0] = (u[1] - u[0]) / h;
        out[n - 1] = (u[n - 1] - u[n - 2]) / h;
        for i in 1..n - 1 {
            out[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
        }
    }

    /// `zeta = u_x sigma`.
    pub fn z_field(&self, u: &[f64], out: &mut [f64]) {
        self.gradient(u, out);
        for (o, s) in out.iter_mut().zip(&self.sigma) {
            *o *= s;
        }
    }

    /// `psi(x_i, zeta_i)` for every node.
    pub fn psi_field(&self, driver: &Driver, z: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            out[i] = driver.eval_1d(self.x[i], z[i]);
        }
    }

    /// Largest stable explicit step for the drift and driver terms.
    pub fn cfl_bound(&self) -> f64 {
        let max_drift = self.drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.h / (max_drift + 1.0)
    }
}

/// `u(t, x)` on `times x nodes`; `u[k]` is the layer at `times[k]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteHorizonSolution {
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub dt: f64,
    pub model_name: String,
    pub driver_name: String,
    pub terminal_name: String,
}

impl FiniteHorizonSolution {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Layer index at time `t` (nearest layer; `t` must be on the grid).
    pub fn layer_index(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || k as usize >= self.times.len() || (k * self.dt - t).abs() > 1e-7 * self.horizon().max(1.0) {
            return Err(Error::TimeNotOnGrid(t));
        }
        Ok(k as usize)
    }

    /// Layer holding the value function of the problem with horizon `s`
    /// (`u_s(0, .) = u_T(T - s, .)` by time homogeneity).
    pub fn at_horizon(&self, s: f64) -> Result<&[f64]> {
        let k = self.layer_index(self.horizon() - s)?;
        Ok(&self.u[k])
    }
}

/// Largest `dt` accepted by [`solve_finite_horizon`] on this grid.
pub fn max_stable_dt(model: &SdeModel, grid: &Grid1D) -> Result<f64> {
    Ok(Discretization::new(model, grid)?.cfl_bound())
}

/// A step `1/n` with `n` a multiple of 4, at most `safety * max_stable_dt`,
/// so that horizons on a quarter grid land on the time grid.
pub fn default_dt(model: &SdeModel, grid: &Grid1D, safety: f64) -> Result<f64> {
    let bound = max_stable_dt(model, grid)? * safety;
    Ok(1.0 / (4.0 * (0.25 / bound).ceil()))
}

/// Backward IMEX time stepping: generator implicit, driver explicit with
/// the centered gradient.
pub fn solve_finite_horizon(
    model: &SdeModel,
    driver: &Driver,
    terminal: &TerminalCondition,
    horizon: f64,
    grid: &Grid1D,
    dt: f64,
) -> Result<FiniteHorizonSolution> {
    let disc = Discretization::new(model, grid)?;
    if !(dt > 0.0 && horizon >= dt) {
        return Err(invalid("dt", "need dt > 0 and T >= dt"));
    }
    let bound = disc.cfl_bound();
    if dt > bound {
        return Err(Error::CflViolated { dt, bound });
    }
    let m = (horizon / dt).round();
    if (m * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(invalid("T", format!("horizon {horizon} is not a multiple of dt {dt}")));
    }
    let m = m as usize;
    let n = disc.len();

    let mut sys = disc.gen.clone();
    for i in 0..n {
        sys.lower[i] = -sys.lower[i];
        sys.upper[i] = -sys.upper[i];
        sys.diag[i] = 1.0 / dt - sys.diag[i];
    }
    let lu = sys.factor();

    let terminal_layer: Vec<f64> = disc.x.iter().map(|&x| terminal.eval_1d(x)).collect();
    if terminal_layer.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLayer { t: horizon });
    }
    let mut layers = vec![Vec::new(); m + 1];
    layers[m] = terminal_layer;
    let mut z = vec![0.0; n];
    let mut psi = vec![0.0; n];
    for k in (0..m).rev() {
        let next = &layers[k + 1];
        disc.z_field(next, &mut z);
        disc.psi_field(driver, &z, &mut psi);
        let mut cur: Vec<f64> = next.iter().zip(&psi).map(|(u, p)| u / dt + p).collect();
        lu.solve_in_place(&mut cur);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLayer { t: k as f64 * dt });
        }
        layers[k] = cur;
    }

    Ok(FiniteHorizonSolution {
        grid: grid.clone(),
        times: (0..=m).map(|k| k as f64 * dt).collect(),
        u: layers,
        dt,
        model_name: model.name.clone(),
        driver_name: driver.name.clone(),
        terminal_name: terminal.name.clone(),
    })
}

/// Discounted stationary solution `v^alpha`.
///
/// Stored as `v^alpha = level / alpha + normalized`, with
/// `normalized(origin) = 0` and `level = alpha v^alpha(origin)`, which
/// keeps the `O(1/alpha)` constant mode out of the arithmetic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySolution {
    pub grid: Grid1D,
    pub alpha: f64,
    pub level: f64,
    pub normalized: Vec<f64>,
    pub iterations: usize,
    pub pseudo_time: f64,
    /// Sup-norm of the pseudo-time derivative at the returned iterate.
    pub final_update_norm: f64,
}

impl StationarySolution {
    pub fn v_alpha(&self) -> Vec<f64> {
        self.normalized.iter().map(|v| self.level / self.alpha + v).collect()
    }
}

/// Default pseudo-time budget for [`solve_discounted`].
pub const DEFAULT_MAX_PSEUDO_TIME: f64 = 1e15;

const PSEUDO_STEP_START: f64 = 1.0;
const PSEUDO_STEP_GROWTH: f64 = 4.0;
const MAX_PSEUDO_ITERATIONS: usize = 2000;

/// Pseudo-time march `v_tau = L v + psi(x, v_x sigma) - alpha v` to its
/// equilibrium, stopping once the sup-norm of `v_tau` is at most
/// `tol * alpha`.
///
/// Each pseudo step is linearly implicit: the generator, the discount and
/// the linearization of `psi` in `z` are taken at the new level, so the
/// step size can grow geometrically and the march turns into Newton's
/// method near equilibrium. A step that increases the residual is retried
/// with a smaller pseudo step.
pub fn solve_discounted(
    model: &SdeModel,
    driver: &Driver,
    alpha: f64,
    grid: &Grid1D,
    tol: f64,
    max_pseudo_time: f64,
) -> Result<StationarySolution> {
    solve_discounted_from(model, driver, alpha, grid, tol, max_pseudo_time, None)
}

/// As [`solve_discounted`], starting from `(level, normalized)`.
pub fn solve_discounted_from(
    model: &SdeModel,
    driver: &Driver,
    alpha: f64,
    grid: &Grid1D,
    tol: f64,
    max_pseudo_time: f64,
    start: Option<(f64, &[f64])>,
) -> Result<StationarySolution> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1]"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", "must be > 0"));
    }
    let disc = Discretization::new(model, grid)?;
    let n = disc.len();
    let o = grid.origin();
    let (mut level, mut vb) = match start {
        Some((l, v)) if v.len() == n => (l, v.to_vec()),
        _ => (driver.eval_1d(0.0, 0.0), vec![0.0; n]),
    };
    let target = tol * alpha;
    let z_dependent = !driver.is_z_independent();

    let mut z = vec![0.0; n];
    let mut psi = vec![0.0; n];
    let mut lv = vec![0.0; n];
    let residual = |level: f64, vb: &[f64], z: &mut [f64], psi: &mut [f64], lv: &mut [f64]| -> Vec<f64> {
        disc.z_field(vb, z);
        disc.psi_field(driver, z, psi);
        disc.gen.apply(vb, lv);
        (0..n).map(|i| lv[i] + psi[i] - alpha * vb[i] - level).collect()
    };
    let sup = |r: &[f64]| r.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut res = residual(level, &vb, &mut z, &mut psi, &mut lv);
    let mut res_norm = sup(&res);
    if !res_norm.is_finite() {
        return Err(Error::NonFiniteLayer { t: 0.0 });
    }
    let mut dtau = PSEUDO_STEP_START;
    let mut tau = 0.0;
    let mut iterations = 0;
    let mut slope = vec![0.0; n];
    while res_norm > target {
        if tau > max_pseudo_time || iterations >= MAX_PSEUDO_ITERATIONS || dtau < 1e-14 {
            return Err(Error::MaxPseudoTimeExceeded { budget: max_pseudo_time, residual: res_norm, target });
        }
        iterations += 1;
        // d psi / d z at the current gradient, times sigma
        if z_dependent {
            for i in 0..n {
                let eps = 1e-6 * (1.0 + z[i].abs());
                let dp = driver.eval_1d(disc.x[i], z[i] + eps) - driver.eval_1d(disc.x[i], z[i] - eps);
                slope[i] = dp / (2.0 * eps) * disc.sigma[i];
            }
        }
        let mut sys = Tridiagonal::zeros(n);
        let h = disc.h;
        for i in 0..n {
            sys.diag[i] = 1.0 / dtau + alpha - disc.gen.diag[i];
            sys.lower[i] = -disc.gen.lower[i];
            sys.upper[i] = -disc.gen.upper[i];
        }
        if z_dependent {
            sys.diag[0] += slope[0] / h;
            sys.upper[0] -= slope[0] / h;
            sys.lower[n - 1] += slope[n - 1] / h;
            sys.diag[n - 1] -= slope[n - 1] / h;
            for (i, s) in slope.iter().enumerate().take(n - 1).skip(1) {
                sys.lower[i] += s / (2.0 * h);
                sys.upper[i] -= s / (2.0 * h);
            }
        }
        let lu = sys.factor();
        let mut delta = res.clone();
        lu.solve_in_place(&mut delta);
        if !lu.is_regular() || delta.iter().any(|v| !v.is_finite()) {
            dtau /= PSEUDO_STEP_GROWTH;
            continue;
        }
        let shift = delta[o];
        let new_level = level + alpha * shift;
        let new_vb: Vec<f64> = vb.iter().zip(&delta).map(|(v, d)| v + (d - shift)).collect();
        let new_res = residual(new_level, &new_vb, &mut z, &mut psi, &mut lv);
        let new_norm = sup(&new_res);
        if new_norm.is_finite() && (new_norm < res_norm || new_norm <= target) {
            tau += dtau;
            level = new_level;
            vb = new_vb;
            res = new_res;
            res_norm = new_norm;
            dtau *= PSEUDO_STEP_GROWTH;
        } else {
            // restore z at the accepted iterate before retrying
            residual(level, &vb, &mut z, &mut psi, &mut lv);
            dtau /= PSEUDO_STEP_GROWTH;
        }
    }
    Ok(StationarySolution {
        grid: grid.clone(),
        alpha,
        level,
        normalized: vb,
        iterations,
        pseudo_time: tau,
        final_update_norm: res_norm,
    })
}

/// Discretized ergodic residual `L v + psi(x, v_x sigma) - lambda`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicResidual {
    /// Sup over interior nodes.
    pub sup_residual: f64,
    /// Residual per node; the two boundary entries are 0 and excluded.
    pub field: Vec<f64>,
}

pub fn ergodic_residual(model: &SdeModel, driver: &Driver, v: &[f64], lambda: f64, grid: &Grid1D) -> Result<ErgodicResidual> {
    let disc = Discretization::new(model, grid)?;
    let n = disc.len();
    if v.len() != n {
        return Err(invalid("v", "length must match the grid"));
    }
    let mut z = vec![0.0; n];
    let mut psi = vec![0.0; n];
    let mut lv = vec![0.0; n];
    disc.z_field(v, &mut z);
    disc.psi_field(driver, &z, &mut psi);
    disc.gen.apply(v, &mut lv);
    let mut field = vec![0.0; n];
    for i in 1..n - 1 {
        field[i] = lv[i] + psi[i] - lambda;
    }
    let sup_residual = field.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    Ok(ErgodicResidual { sup_residual, field })
}

/// `zeta_i = u_x(x_i) sigma(x_i)`: centered inside, one-sided at the ends.
pub fn extract_z(values: &[f64], model: &SdeModel, grid: &Grid1D) -> Result<Vec<f64>> {
    let disc = Discretization::new(model, grid)?;
    if values.len() != disc.len() {
        return Err(invalid("values", "length must match the grid"));
    }
    let mut z = vec![0.0; values.len()];
    disc.z_field(values, &mut z);
    Ok(z)
}

/// Smallest `C` with `|v^alpha(x)| <= (C / alpha)(1 + |x|)` over every
/// node of every solution.
pub fn discounted_growth_constant(solutions: &[StationarySolution]) -> f64 {
    solutions
        .iter()
        .flat_map(|s| {
            let v = s.v_alpha();
            let grid = s.grid.clone();
            v.into_iter().enumerate().map(move |(i, val)| s.alpha * val.abs() / (1.0 + grid.node(i).abs())).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, params, Params};

    fn ou() -> SdeModel {
        catalog::model("ou", &params([("eta", 1.0), ("sigma", 1.0)])).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = Grid1D::symmetric(4.243, 0.02).unwrap();
        assert!((g.h() - 0.02).abs() < 1e-15);
        assert_eq!(g.node(g.origin()), 0.0);
        assert!(g.x_max >= 4.243);
        assert!(Grid1D::new(0.0, 1.0, 20).is_err());
        assert!(Grid1D::new(-1.0, 1.0, 8).is_err());
        let vals: Vec<f64> = g.nodes().iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((g.interpolate(&vals, 0.013) - 1.026).abs() < 1e-12);
    }

    #[test]
    fn constant_driver_is_exact() {
        let m = ou();
        let d = catalog::driver("const", &params([("c", 0.3)]), &m).unwrap();
        let g = Grid1D::auto(&m, 0.0, 0.05).unwrap();
        let sol = solve_finite_horizon(&m, &d, &crate::model::TerminalCondition::zero(), 2.0, &g, 0.005).unwrap();
        for (k, layer) in sol.u.iter().enumerate() {
            let expect = 0.3 * (2.0 - sol.times[k]);
            assert!(layer.iter().all(|u| (u - expect).abs() < 1e-10));
        }
    }

    #[test]
    fn cfl_is_enforced() {
        let m = ou();
        let d = catalog::driver("cos", &Params::new(), &m).unwrap();
        let g = Grid1D::auto(&m, 0.0, 0.02).unwrap();
        let r = solve_finite_horizon(&m, &d, &crate::model::TerminalCondition::zero(), 1.0, &g, 0.1);
        assert!(matches!(r, Err(Error::CflViolated { .. })));
    }

    #[test]
    fn discounted_constant_fixed_point() {
        let m = ou();
        let d = catalog::driver("const", &params([("c", 0.3)]), &m).unwrap();
        let g = Grid1D::auto(&m, 0.0, 0.05).unwrap();
        let s = solve_discounted(&m, &d, 0.25, &g, 1e-8, DEFAULT_MAX_PSEUDO_TIME).unwrap();
        assert!(s.final_update_norm <= 1e-8 * 0.25);
        for v in s.v_alpha() {
            assert!((v - 1.2).abs() < 1e-9);
        }
    }

    #[test]
    fn tight_tolerance_exhausts_budget() {
        let m = ou();
        let d = catalog::driver("cos-tanh", &params([("k", 0.5)]), &m).unwrap();
        let g = Grid1D::auto(&m, 0.0, 0.1).unwrap();
        let r = solve_discounted(&m, &d, 0.5, &g, 1e-30, 1e6);
        assert!(matches!(r, Err(Error::MaxPseudoTimeExceeded { .. })));
    }

    #[test]
    fn residual_of_zero_profile() {
        let m = ou();
        let g = Grid1D::auto(&m, 0.0, 0.05).unwrap();
        let c = catalog::driver("const", &params([("c", 0.7)]), &m).unwrap();
        let r = ergodic_residual(&m, &c, &vec![0.0; g.n_nodes], 0.7, &g).unwrap();
        assert_eq!(r.sup_residual, 0.0);
        let cos = catalog::driver("cos", &Params::new(), &m).unwrap();
        let r = ergodic_residual(&m, &cos, &vec![0.0; g.n_nodes], 0.0, &g).unwrap();
        for i in 1..g.n_nodes - 1 {
            assert_eq!(r.field[i], g.node(i).cos());
        }
    }

    #[test]
    fn z_extraction() {
        let m = ou();
        let g = Grid1D::auto(&m, 0.0, 0.02).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|x| 1.0 - x.cos()).collect();
        let z = extract_z(&v, &m, &g).unwrap();
        for (i, zi) in z.iter().enumerate().take(g.n_nodes - 1).skip(1) {
            // centered error h^2/6 |sin'''| <= 6.7e-5
            assert!((zi - g.node(i).sin()).abs() < 7e-5);
        }
        let z = extract_z(&vec![3.0; g.n_nodes], &m, &g).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));

        let wd = catalog::model("weakdiss", &params([("c", 1.0), ("q", 0.01)])).unwrap();
        let g = Grid1D::auto(&wd, 0.0, 0.02).unwrap();
        let z = extract_z(&g.nodes(), &wd, &g).unwrap();
        for (i, x) in g.nodes().iter().enumerate() {
            assert!((z[i] - (1.0 + 0.01 * x * x).sqrt()).abs() < 1e-12);
        }
    }
}
