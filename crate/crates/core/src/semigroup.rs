//! Monte Carlo Kolmogorov semigroup `P_t[phi](x) = E[phi(X_t^x)]`, the
//! Lyapunov drift inequality for `V = |x|^mu`, and fitted exponential
//! contraction of `P_t[phi](x) - P_t[phi](y)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{lyapunov_margin, SdeModel};
use crate::numerics::{fit_line, mean_ci, norm};
use crate::rng::PathStream;
use crate::sde_sim::{euler_step, shift_drift, simulate, DriftShift, SimConfig};

/// `(estimate, half_width_95)` of `E[phi(X_t^x)]`; `cfg.horizon` is `t`.
pub fn apply(
    model: &SdeModel,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    cfg: &SimConfig,
    shift: Option<&DriftShift>,
) -> Result<(f64, f64)> {
    let ens = simulate(model, x, &cfg.endpoints_only(), shift)?;
    let last = ens.times.len() - 1;
    let values: Vec<f64> = (0..ens.n_paths).map(|p| phi(ens.state(p, last))).collect();
    Ok(mean_ci(&values))
}

/// Constants of `L V <= -a V + b 1_{|x| <= R}` for `V = |x|^mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovConstants {
    pub mu: f64,
    pub r: f64,
    pub a: f64,
    pub b: f64,
}

/// `R = sqrt((eta1 + (mu-1) r1 / 2) / (eta2 - (mu-1) r2 / 2)) + 1`,
/// `b = mu eta1 + mu (mu-1) r1 / 2`, `a = mu eta2 - mu (mu-1) r2 / 2 - b / R^2`.
pub fn lyapunov_constants(model: &SdeModel, mu: f64) -> Result<LyapunovConstants> {
    if !(mu >= 2.0) {
        return Err(invalid("mu", "must be >= 2"));
    }
    let margin = lyapunov_margin(model, mu);
    if !(margin > 0.0) {
        return Err(Error::GateViolated(format!("eta2 - (mu-1) r2 / 2 = {margin} <= 0")));
    }
    let c = &model.constants;
    let half = (mu - 1.0) / 2.0;
    let r = ((c.eta1 + half * c.r1) / (c.eta2 - half * c.r2)).sqrt() + 1.0;
    let b = mu * c.eta1 + mu * half * c.r1;
    let a = mu * c.eta2 - mu * half * c.r2 - b / (r * r);
    Ok(LyapunovConstants { mu, r, a, b })
}

/// `L V(x)` for `V = |x|^mu`:
/// `mu |x|^{mu-2} <x, Xi> + mu/2 |x|^{mu-2} |sigma|_F^2
///  + mu (mu-2)/2 |x|^{mu-4} sum_i (sum_j x_j sigma_ij)^2`.
pub fn generator_of_power(model: &SdeModel, mu: f64, x: &[f64]) -> f64 {
    let d = model.dim;
    let mut xi = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    model.drift(x, &mut xi);
    model.diffusion(x, &mut sig);
    let r = norm(x);
    let frob: f64 = sig.iter().map(|s| s * s).sum();
    if r == 0.0 {
        // only the trace term survives, and only for mu = 2
        return if mu == 2.0 { frob } else { 0.0 };
    }
    let inner: f64 = x.iter().zip(&xi).map(|(a, b)| a * b).sum();
    let proj: f64 = (0..d).map(|i| (0..d).map(|j| x[j] * sig[i * d + j]).sum::<f64>().powi(2)).sum();
    let rm2 = r.powf(mu - 2.0);
    let mut lv = mu * rm2 * inner + 0.5 * mu * rm2 * frob;
    if mu != 2.0 {
        lv += 0.5 * mu * (mu - 2.0) * r.powf(mu - 4.0) * proj;
    }
    lv
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub mu: f64,
    pub r: f64,
    pub a: f64,
    pub b: f64,
    /// `max LV + a V` over nodes with `|x| > R` (`-inf` if there are none).
    pub worst_residual_outside: f64,
    pub nodes_outside: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_nodes: usize,
}

impl LyapunovReport {
    pub fn holds(&self) -> bool {
        self.worst_residual_outside <= 0.0
    }
}

/// Evaluate `L V + a V` on the nodes `x e_1` and report the worst value
/// outside the ball of radius `R`.
pub fn lyapunov_check(model: &SdeModel, mu: f64, nodes: &[f64]) -> Result<LyapunovReport> {
    let k = lyapunov_constants(model, mu)?;
    if nodes.is_empty() {
        return Err(invalid("grid", "need at least one node"));
    }
    let mut x = vec![0.0; model.dim];
    let mut worst = f64::NEG_INFINITY;
    let mut outside = 0;
    for &s in nodes {
        if s.abs() <= k.r {
            continue;
        }
        x[0] = s;
        let res = generator_of_power(model, mu, &x) + k.a * s.abs().powf(mu);
        if !res.is_finite() {
            return Err(Error::NonFiniteEvaluation { what: "LV", at: x.clone() });
        }
        worst = worst.max(res);
        outside += 1;
    }
    Ok(LyapunovReport {
        mu,
        r: k.r,
        a: k.a,
        b: k.b,
        worst_residual_outside: worst,
        nodes_outside: outside,
        grid_min: nodes.iter().copied().fold(f64::INFINITY, f64::min),
        grid_max: nodes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        grid_nodes: nodes.len(),
    })
}

/// Monte Carlo size and step of a semigroup estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McParams {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapPoint {
    pub t: f64,
    pub gap: f64,
    pub half_width_95: f64,
    /// Survived the `|gap| > 3 half_width` filter.
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionFit {
    pub c_hat: f64,
    pub nu_hat: f64,
    pub r2_fit: f64,
    pub t_grid: Vec<f64>,
    pub gaps: Vec<GapPoint>,
}

/// Common-random-number estimates of `P_t phi(x) - P_t phi(y)` on
/// `t_grid`: both starts share the Brownian increments of each path, and
/// the half-width is that of the per-path differences.
pub fn semigroup_gaps(
    model: &SdeModel,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    x: &[f64],
    y: &[f64],
    t_grid: &[f64],
    mc: &McParams,
    shift: Option<&DriftShift>,
) -> Result<Vec<GapPoint>> {
    let d = model.dim;
    if x.len() != d || y.len() != d {
        return Err(invalid("x", "start dimension must match the model"));
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(invalid("t_grid", "must be positive and strictly increasing"));
    }
    let steps: Vec<usize> = t_grid
        .iter()
        .map(|&t| {
            let k = (t / mc.dt).round();
            if (k * mc.dt - t).abs() > 1e-9 * t.max(1.0) {
                Err(Error::TimeNotOnGrid(t))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<_>>()?;
    let n_steps = *steps.last().unwrap();
    let sqrt_dt = mc.dt.sqrt();
    let guard = crate::sde_sim::DEFAULT_GUARD_RADIUS;

    let diffs: Vec<Vec<f64>> = (0..mc.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut stream = PathStream::new(mc.seed, path, d);
            let (mut a, mut b) = (x.to_vec(), y.to_vec());
            let mut noise = vec![0.0; d];
            let (mut ea, mut eb) = (vec![0.0; d], vec![0.0; d]);
            let mut scratch = vec![0.0; d + d * d];
            let mut out = Vec::with_capacity(steps.len());
            let mut slot = 0;
            for k in 1..=n_steps {
                let t = (k - 1) as f64 * mc.dt;
                if let Some(s) = shift {
                    shift_drift(model, s, t, &a, &mut ea, &mut scratch);
                    shift_drift(model, s, t, &b, &mut eb, &mut scratch);
                }
                stream.fill_normals(&mut noise);
                euler_step(model, &mut a, &ea, &noise, mc.dt, sqrt_dt, &mut scratch);
                euler_step(model, &mut b, &eb, &noise, mc.dt, sqrt_dt, &mut scratch);
                if !(norm(&a) <= guard && norm(&b) <= guard) {
                    return Err(Error::BlowUp { path, t: k as f64 * mc.dt, radius: guard });
                }
                while slot < steps.len() && steps[slot] == k {
                    out.push(phi(&a) - phi(&b));
                    slot += 1;
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    Ok(t_grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let col: Vec<f64> = diffs.iter().map(|p| p[j]).collect();
            let (gap, hw) = mean_ci(&col);
            GapPoint { t, gap, half_width_95: hw, kept: gap.abs() > 3.0 * hw && gap != 0.0 }
        })
        .collect())
}

/// Least-squares fit of `log |P_t phi(x) - P_t phi(y)|` against `t` on the
/// points whose gap exceeds three CI half-widths. `nu_hat = -slope`,
/// `c_hat = exp(intercept) / (c_phi (1 + |x|^mu + |y|^mu))`.
#[allow(clippy::too_many_arguments)]
pub fn contraction_fit(
    model: &SdeModel,
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    c_phi: f64,
    mu: f64,
    x: &[f64],
    y: &[f64],
    t_grid: &[f64],
    mc: &McParams,
    shift: Option<&DriftShift>,
) -> Result<ContractionFit> {
    if t_grid.len() < 4 {
        return Err(invalid("t_grid", "need at least 4 points"));
    }
    if !(c_phi > 0.0) {
        return Err(invalid("c_phi", "must be > 0"));
    }
    let gaps = semigroup_gaps(model, phi, x, y, t_grid, mc, shift)?;
    let kept: Vec<&GapPoint> = gaps.iter().filter(|g| g.kept).collect();
    if kept.len() < 4 {
        return Err(Error::InsufficientSignal { kept: kept.len(), total: gaps.len() });
    }
    let ts: Vec<f64> = kept.iter().map(|g| g.t).collect();
    let ls: Vec<f64> = kept.iter().map(|g| g.gap.abs().ln()).collect();
    let fit = fit_line(&ts, &ls).ok_or(Error::InsufficientSignal { kept: kept.len(), total: gaps.len() })?;
    let weight = c_phi * (1.0 + norm(x).powf(mu) + norm(y).powf(mu));
    Ok(ContractionFit { c_hat: fit.intercept.exp() / weight, nu_hat: -fit.slope, r2_fit: fit.r2, t_grid: ts, gaps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, params};

    fn ou() -> SdeModel {
        catalog::model("ou", &params([("eta", 1.0), ("sigma", 1.0)])).unwrap()
    }

    #[test]
    fn constant_function_is_exact() {
        let (m, hw) = apply(&ou(), &|_x| 1.0, &[0.3], &SimConfig::new(1.0, 0.01, 500, 2), None).unwrap();
        assert_eq!((m, hw), (1.0, 0.0));
    }

    #[test]
    fn lyapunov_constants_by_hand() {
        let k = lyapunov_constants(&ou(), 2.0).unwrap();
        let r = 0.5f64.sqrt() + 1.0;
        assert!((k.r - r).abs() < 1e-15);
        assert_eq!(k.b, 1.0);
        assert!((k.a - (2.0 - 1.0 / (r * r))).abs() < 1e-15);
        let wd = catalog::model("weakdiss", &params([("c", 1.0), ("q", 0.01)])).unwrap();
        assert!(matches!(lyapunov_constants(&wd, 101.0), Err(Error::GateViolated(_))));
    }

    #[test]
    fn generator_matches_finite_differences() {
        // 1D: L V = Xi V' + 1/2 sigma^2 V''
        let wd = catalog::model("weakdiss", &params([("c", 1.0), ("q", 0.01)])).unwrap();
        for mu in [2.0, 3.0, 4.5] {
            for x in [-2.7f64, 0.4, 1.3, 5.0] {
                let h = 1e-4;
                let v = |s: f64| s.abs().powf(mu);
                let d1 = (v(x + h) - v(x - h)) / (2.0 * h);
                let d2 = (v(x + h) - 2.0 * v(x) + v(x - h)) / (h * h);
                let s = wd.sigma_1d(x);
                let fd = wd.drift_1d(x) * d1 + 0.5 * s * s * d2;
                let lv = generator_of_power(&wd, mu, &[x]);
                assert!((fd - lv).abs() < 1e-5 * (1.0 + lv.abs()), "mu {mu} x {x}: {fd} vs {lv}");
            }
        }
        assert_eq!(generator_of_power(&ou(), 2.0, &[0.0]), 1.0);
        assert_eq!(generator_of_power(&ou(), 3.0, &[0.0]), 0.0);
    }

    #[test]
    fn equal_starts_have_no_signal() {
        let mc = McParams { dt: 0.01, n_paths: 200, seed: 1 };
        let r = contraction_fit(&ou(), &|x| x[0].cos(), 1.0, 2.0, &[1.0], &[1.0], &[1.0, 2.0, 3.0, 4.0], &mc, None);
        assert!(matches!(r, Err(Error::InsufficientSignal { kept: 0, total: 4 })));
    }
}
