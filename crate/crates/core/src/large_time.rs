//! Large-time diagnostics of `u(T, x) - lambda T - v(x)`: the `O(1/T)`
//! first behavior and exponential convergence to a constant `L`.

use serde::Serialize;

use crate::ebsde::ErgodicSolution;
use crate::error::{invalid, Error, Result};
use crate::model::{Driver, SdeModel, TerminalCondition};
use crate::pde_solver::{solve_finite_horizon, FiniteHorizonSolution, Grid1D};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LargeTimeProfile {
    pub t_list: Vec<f64>,
    pub x_list: Vec<f64>,
    /// `w[j][i] = u(T_j, x_i) - lambda T_j - v(x_i)`.
    pub w: Vec<Vec<f64>>,
    pub l_hat: f64,
    pub nu_hat: f64,
    pub fit_r2: f64,
    /// Smallest `C` with `|w - L| <= C (1 + |x|^mu) e^{-nu T}` on the fitted points.
    pub c_hat: f64,
    pub mu: f64,
    /// Points with `|w - L| <= floor` are left out of the fit.
    pub floor: f64,
    pub points_fitted: usize,
}

/// Common-slope fit of `log |w - L|`: one decay rate, one intercept per
/// `x`. Returns `(nu, r2, intercepts, n_points)`; `r2` is the within-`x`
/// coefficient of determination.
fn decay_fit(t: &[f64], w: &[Vec<f64>], l: f64, floor: f64) -> Option<(f64, f64, Vec<Option<f64>>, usize)> {
    let nx = w[0].len();
    let mut cols = Vec::with_capacity(nx);
    for i in 0..nx {
        let pts: Vec<(f64, f64)> =
            t.iter().zip(w).filter(|(_, row)| (row[i] - l).abs() > floor).map(|(&tj, row)| (tj, (row[i] - l).abs().ln())).collect();
        cols.push(pts);
    }
    let (mut sxy, mut sxx, mut syy, mut n) = (0.0, 0.0, 0.0, 0);
    let mut means = Vec::with_capacity(nx);
    for pts in &cols {
        if pts.len() < 2 {
            means.push(None);
            continue;
        }
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        for &(a, b) in pts {
            sxy += (a - mt) * (b - my);
            sxx += (a - mt) * (a - mt);
            syy += (b - my) * (b - my);
        }
        n += pts.len();
        means.push(Some((mt, my)));
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 1.0 };
    let intercepts = means.iter().map(|m| m.map(|(mt, my)| my - slope * mt)).collect();
    Some((-slope, r2, intercepts, n))
}

/// Assemble `w` from one finite-horizon solve at `max(T_list)` and fit
/// `L` and the decay rate. `L` starts as the mean of the last row and is
/// re-estimated once from the fitted per-`x` decay curves.
#[allow(clippy::too_many_arguments)]
pub fn profile(
    model: &SdeModel,
    driver: &Driver,
    terminal: &TerminalCondition,
    grid: &Grid1D,
    t_list: &[f64],
    x_list: &[f64],
    ergodic: &ErgodicSolution,
    dt: f64,
    floor: f64,
) -> Result<LargeTimeProfile> {
    if t_list.len() < 5 || t_list.windows(2).any(|p| p[1] <= p[0]) {
        return Err(invalid("T_list", "need at least 5 strictly increasing horizons"));
    }
    if x_list.is_empty() || x_list.iter().any(|x| !grid.contains(*x) || !ergodic.grid.contains(*x)) {
        return Err(invalid("x_list", "every x must lie inside the grid"));
    }
    let t_max = *t_list.last().unwrap();
    let u = solve_finite_horizon(model, driver, terminal, t_max, grid, dt)?;
    profile_from_solution(&u, t_list, x_list, ergodic, floor)
}

/// `w[j][i] = u(T_j, x_i) - lambda T_j - v(x_i)`.
pub fn w_table(u: &FiniteHorizonSolution, t_list: &[f64], x_list: &[f64], ergodic: &ErgodicSolution) -> Result<Vec<Vec<f64>>> {
    t_list
        .iter()
        .map(|&t| {
            let layer = u.at_horizon(t)?;
            Ok(x_list.iter().map(|&x| u.grid.interpolate(layer, x) - ergodic.lambda * t - ergodic.v_at(x)).collect())
        })
        .collect()
}

/// As [`profile`], reading an existing solution.
pub fn profile_from_solution(
    u: &FiniteHorizonSolution,
    t_list: &[f64],
    x_list: &[f64],
    ergodic: &ErgodicSolution,
    floor: f64,
) -> Result<LargeTimeProfile> {
    let w = w_table(u, t_list, x_list, ergodic)?;
    let last = w.last().unwrap();
    let mut l_hat = last.iter().sum::<f64>() / last.len() as f64;
    let mut fit = decay_fit(t_list, &w, l_hat, floor).ok_or(Error::FitDegenerate { floor })?;

    // refit L from the decay curves: w(T_last, x) - sign * e^{b_x - nu T_last}
    let t_last = *t_list.last().unwrap();
    let (nu, _, ref intercepts, _) = fit;
    let mut est = Vec::new();
    for (i, b) in intercepts.iter().enumerate() {
        if let Some(b) = b {
            let sign = w.iter().rev().map(|row| row[i] - l_hat).find(|d| d.abs() > floor).map_or(1.0, f64::signum);
            est.push(last[i] - sign * (b - nu * t_last).exp());
        } else {
            est.push(last[i]);
        }
    }
    let refit = est.iter().sum::<f64>() / est.len() as f64;
    if let Some(f) = decay_fit(t_list, &w, refit, floor) {
        l_hat = refit;
        fit = f;
    }
    let (nu_hat, fit_r2, _, points_fitted) = fit;
    let mut prof = LargeTimeProfile {
        t_list: t_list.to_vec(),
        x_list: x_list.to_vec(),
        w,
        l_hat,
        nu_hat,
        fit_r2,
        c_hat: 0.0,
        mu: 2.0,
        floor,
        points_fitted,
    };
    prof.c_hat = envelope_constant(&prof, 2.0);
    Ok(prof)
}

fn envelope_constant(p: &LargeTimeProfile, mu: f64) -> f64 {
    let mut c: f64 = 0.0;
    for (j, &t) in p.t_list.iter().enumerate() {
        for (i, &x) in p.x_list.iter().enumerate() {
            let gap = (p.w[j][i] - p.l_hat).abs();
            if gap > p.floor {
                c = c.max(gap / ((1.0 + x.abs().powf(mu)) * (-p.nu_hat * t).exp()));
            }
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub mu: f64,
    pub c_hat: f64,
    /// Largest `|w - L| - C (1 + |x|^mu) e^{-nu T} - floor` over all points.
    pub worst_excess: f64,
    pub holds: bool,
}

/// Smallest global `C` making `|w - L| <= C (1 + |x|^mu) e^{-nu T}` hold on
/// every profiled point above the floor; points below the floor are
/// checked against `C (...) + floor`.
pub fn rate_vs_x_check(p: &LargeTimeProfile, mu: f64) -> RateReport {
    let c_hat = envelope_constant(p, mu);
    let mut worst = f64::NEG_INFINITY;
    for (j, &t) in p.t_list.iter().enumerate() {
        for (i, &x) in p.x_list.iter().enumerate() {
            let env = c_hat * (1.0 + x.abs().powf(mu)) * (-p.nu_hat * t).exp() + p.floor;
            worst = worst.max((p.w[j][i] - p.l_hat).abs() - env);
        }
    }
    let tiny = 1e-12 * (1.0 + c_hat);
    RateReport { mu, c_hat, worst_excess: worst, holds: c_hat.is_finite() && worst <= tiny }
}

/// `Ĉ` is stable under a refinement when the two values are within a
/// factor of 2 of each other.
pub fn rate_constant_stable(coarse: f64, fine: f64) -> bool {
    if coarse == 0.0 && fine == 0.0 {
        return true;
    }
    coarse.is_finite() && fine.is_finite() && fine <= 2.0 * coarse && coarse <= 2.0 * fine
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstBehaviorTable {
    pub t_list: Vec<f64>,
    pub x_list: Vec<f64>,
    /// `products[j][i] = T_j |u(T_j, x_i) / T_j - lambda|`.
    pub products: Vec<Vec<f64>>,
    /// No column shows a growth trend: the change of the product over
    /// each doubling of `T` does not exceed the change over the previous
    /// doubling by more than `FIRST_BEHAVIOR_SLACK (1 + x^2)`. A bounded
    /// column has shrinking increments, linear growth doubles them.
    pub pass: bool,
}

pub const FIRST_BEHAVIOR_SLACK: f64 = 1e-2;

/// Largest `(|p_{k+2} - p_{k+1}| - |p_{k+1} - p_k|) / (1 + x^2)` over all
/// columns; `-inf` with fewer than three horizons.
pub fn growth_excess(products: &[Vec<f64>], x_list: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for w in products.windows(3) {
        for (i, x) in x_list.iter().enumerate() {
            let d0 = (w[1][i] - w[0][i]).abs();
            let d1 = (w[2][i] - w[1][i]).abs();
            worst = worst.max((d1 - d0) / (1.0 + x * x));
        }
    }
    worst
}

pub fn first_behavior_check(u: &FiniteHorizonSolution, lambda: f64, x_list: &[f64], t_list: &[f64]) -> Result<FirstBehaviorTable> {
    let products: Vec<Vec<f64>> = t_list
        .iter()
        .map(|&t| {
            let layer = u.at_horizon(t)?;
            Ok(x_list.iter().map(|&x| (u.grid.interpolate(layer, x) - lambda * t).abs()).collect())
        })
        .collect::<Result<_>>()?;
    let pass = growth_excess(&products, x_list) <= FIRST_BEHAVIOR_SLACK;
    Ok(FirstBehaviorTable { t_list: t_list.to_vec(), x_list: x_list.to_vec(), products, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn common_slope_fit_recovers_rate() {
        let t: Vec<f64> = (2..=10).map(f64::from).collect();
        let w: Vec<Vec<f64>> = t.iter().map(|&s| vec![0.5 + 3.0 * (-2.0 * s).exp(), 0.5 - 0.2 * (-2.0 * s).exp()]).collect();
        let (nu, r2, b, n) = decay_fit(&t, &w, 0.5, 1e-12).unwrap();
        assert!((nu - 2.0).abs() < 1e-6);
        assert!(r2 > 1.0 - 1e-9);
        assert!((b[0].unwrap() - 3f64.ln()).abs() < 1e-5);
        assert_eq!(n, 18);
        assert!(decay_fit(&t, &w, 0.5, 10.0).is_none());
    }

    #[test]
    fn stability_rule() {
        assert!(rate_constant_stable(1.0, 1.9));
        assert!(!rate_constant_stable(1.0, 2.1));
        assert!(rate_constant_stable(0.0, 0.0));
    }

    #[test]
    fn growth_trend_separates_bounded_from_linear() {
        let t = [2.0, 4.0, 8.0, 16.0];
        let x = [0.0, -3.0];
        // a transient crossing zero, then settling
        let bounded: Vec<Vec<f64>> = t.iter().map(|&s: &f64| vec![(0.7 - 1.2 * (-s).exp()).abs(), 0.5]).collect();
        assert!(growth_excess(&bounded, &x) <= FIRST_BEHAVIOR_SLACK);
        // lambda off by 0.01: products grow like 0.01 T
        let linear: Vec<Vec<f64>> = t.iter().map(|&s| vec![0.3 + 0.01 * s, 0.5]).collect();
        assert!(growth_excess(&linear, &x) > FIRST_BEHAVIOR_SLACK);
    }
}
