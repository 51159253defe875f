//! The ergodic triple `(lambda, v, zeta)` by vanishing discount, plus the
//! independent routes used to cross-check `lambda`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{Driver, SdeModel};
use crate::numerics::{fit_line, mean_ci};
use crate::pde_solver::{
    ergodic_residual, extract_z, solve_discounted_from, solve_finite_horizon, FiniteHorizonSolution, Grid1D,
    StationarySolution, DEFAULT_MAX_PSEUDO_TIME,
};
use crate::model::TerminalCondition;
use crate::rng::PathStream;
use crate::sde_sim::{euler_step, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicSolution {
    pub grid: Grid1D,
    pub lambda: f64,
    /// `v` on the grid, exactly 0 at the node nearest 0.
    pub v: Vec<f64>,
    pub zeta: Vec<f64>,
    pub alpha_schedule: Vec<f64>,
    /// `alpha_k v^{alpha_k}(0)`.
    pub lambda_trace: Vec<f64>,
    /// `sup |vbar^{alpha_k} - vbar^{alpha_{k+1}}|` on the reporting window.
    pub v_trace_gaps: Vec<f64>,
    /// Sup ergodic residual of `(v, lambda)` over interior nodes.
    pub residual: f64,
    /// `max |v(x)| / (1 + x^2)` over the grid.
    pub growth_constant: f64,
}

impl ErgodicSolution {
    /// `v` interpolated at `x`.
    pub fn v_at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.v, x)
    }
}

/// Knobs of the vanishing-discount sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VanishingDiscountConfig {
    /// Strictly decreasing, in (0, 1], at least 4 entries.
    pub schedule: Vec<f64>,
    /// Stopping rule of each discounted solve: residual <= tol * alpha.
    pub tol: f64,
    /// The schedule is extended by halving while the last `v` gap exceeds
    /// `v_tol` and is still shrinking.
    pub v_tol: f64,
    /// Smallest discount the extension may reach; further limited to
    /// `1e-12 / tol` so the stopping rule stays above round-off.
    pub alpha_min: f64,
    /// Half-width of the window on which `v` gaps are measured.
    pub window: f64,
    pub max_pseudo_time: f64,
}

impl Default for VanishingDiscountConfig {
    fn default() -> Self {
        Self {
            schedule: dyadic_schedule(1.0, 7),
            tol: 1e-6,
            v_tol: 1e-6,
            alpha_min: 2f64.powi(-20),
            window: 3.0,
            max_pseudo_time: DEFAULT_MAX_PSEUDO_TIME,
        }
    }
}

/// `start * 2^-k`, `k = 0..n`.
pub fn dyadic_schedule(start: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| start * 0.5f64.powi(k as i32)).collect()
}

/// Gaps below this are treated as converged when judging monotonicity.
const GAP_FLOOR: f64 = 1e-10;

fn window_gap(a: &StationarySolution, b: &StationarySolution, window: std::ops::RangeInclusive<usize>) -> f64 {
    window.map(|i| (a.normalized[i] - b.normalized[i]).abs()).fold(0.0, f64::max)
}

/// Vanishing-discount construction with the default knobs and the given
/// schedule and solver tolerance.
pub fn vanishing_discount(model: &SdeModel, driver: &Driver, grid: &Grid1D, schedule: &[f64], tol: f64) -> Result<ErgodicSolution> {
    let cfg = VanishingDiscountConfig { schedule: schedule.to_vec(), tol, ..Default::default() };
    vanishing_discount_with(model, driver, grid, &cfg)
}

/// Solve the discounted equation along the schedule; `lambda` is the
/// intercept of the least-squares line through the last three
/// `(alpha, alpha v^alpha(0))`, `v = vbar^{alpha_last}`, `zeta = v_x sigma`.
pub fn vanishing_discount_with(model: &SdeModel, driver: &Driver, grid: &Grid1D, cfg: &VanishingDiscountConfig) -> Result<ErgodicSolution> {
    let s = &cfg.schedule;
    if s.len() < 4 {
        return Err(invalid("alpha_schedule", "need at least 4 entries"));
    }
    if s.windows(2).any(|w| w[1] >= w[0]) || s[0] > 1.0 || *s.last().unwrap() <= 0.0 {
        return Err(invalid("alpha_schedule", "must be strictly decreasing in (0, 1]"));
    }
    let window = grid.window(cfg.window);

    // the listed discounts are independent solves
    let mut sols: Vec<StationarySolution> = s
        .par_iter()
        .map(|&a| solve_discounted_from(model, driver, a, grid, cfg.tol, cfg.max_pseudo_time, None))
        .collect::<Result<_>>()?;
    let mut gaps: Vec<f64> = sols.windows(2).map(|w| window_gap(&w[0], &w[1], window.clone())).collect();

    let alpha_min = cfg.alpha_min.max(1e-12 / cfg.tol);
    loop {
        let n = gaps.len();
        let last = gaps[n - 1];
        let shrinking = last < gaps[n - 2];
        let prev = sols.last().unwrap();
        let next_alpha = prev.alpha / 2.0;
        if last <= cfg.v_tol || !shrinking || next_alpha < alpha_min {
            break;
        }
        // the extension stops where round-off prevents meeting tol * alpha
        let next = match solve_discounted_from(
            model,
            driver,
            next_alpha,
            grid,
            cfg.tol,
            cfg.max_pseudo_time,
            Some((prev.level, &prev.normalized)),
        ) {
            Ok(next) => next,
            Err(Error::MaxPseudoTimeExceeded { .. }) => break,
            Err(e) => return Err(e),
        };
        gaps.push(window_gap(prev, &next, window.clone()));
        sols.push(next);
    }

    let n = gaps.len();
    let tail = &gaps[n - 3..];
    let decreasing = tail[1] < tail[0] && tail[2] < tail[1];
    if !decreasing && tail.iter().any(|g| *g > GAP_FLOOR) {
        return Err(Error::NonConvergent(gaps));
    }

    let alphas: Vec<f64> = sols.iter().map(|s| s.alpha).collect();
    let levels: Vec<f64> = sols.iter().map(|s| s.level).collect();
    let k = sols.len();
    let lambda = lambda_extrapolate(&alphas[k - 3..], &levels[k - 3..]);
    let last = sols.last().unwrap();
    let v = last.normalized.clone();
    let zeta = extract_z(&v, model, grid)?;
    let residual = ergodic_residual(model, driver, &v, lambda, grid)?.sup_residual;
    let growth_constant = v.iter().enumerate().map(|(i, val)| val.abs() / (1.0 + grid.node(i).powi(2))).fold(0.0, f64::max);
    Ok(ErgodicSolution {
        grid: grid.clone(),
        lambda,
        v,
        zeta,
        alpha_schedule: alphas,
        lambda_trace: levels,
        v_trace_gaps: gaps,
        residual,
        growth_constant,
    })
}

fn lambda_extrapolate(alphas: &[f64], levels: &[f64]) -> f64 {
    if levels.iter().all(|l| *l == levels[0]) {
        return levels[0];
    }
    fit_line(alphas, levels).map_or(*levels.last().unwrap(), |f| f.intercept)
}

/// Least-squares slope of `s -> u_s(0)` for horizons `s` in `[t1, t2]`,
/// read from the layers of one solve (time homogeneity).
pub fn lambda_from_slope(u: &FiniteHorizonSolution, window: (f64, f64)) -> Result<f64> {
    let (t1, t2) = window;
    let horizon = u.horizon();
    if !(t1 >= 0.0 && t2 <= horizon * (1.0 + 1e-12) && t2 - t1 >= 1.0) {
        return Err(Error::WindowOutOfRange { t1, t2, horizon });
    }
    let o = u.grid.origin();
    let (mut s, mut val) = (Vec::new(), Vec::new());
    for (k, &t) in u.times.iter().enumerate() {
        let h = horizon - t;
        if h >= t1 - 1e-9 && h <= t2 + 1e-9 {
            s.push(h);
            val.push(u.u[k][o]);
        }
    }
    let fit = fit_line(&s, &val).ok_or(Error::WindowOutOfRange { t1, t2, horizon })?;
    Ok(fit.slope)
}

/// Long-run average of `psi(X_t, 0)` along simulated paths started at
/// `x0`, after discarding `burn_in` time units; the half-width is over
/// per-path averages. Only meaningful for drivers that ignore `z`.
pub fn invariant_average(model: &SdeModel, driver: &Driver, x0: &[f64], cfg: &SimConfig, burn_in: f64) -> Result<(f64, f64)> {
    if !driver.is_z_independent() {
        return Err(invalid("driver", "the invariant-measure route needs a z-independent driver"));
    }
    if x0.len() != model.dim {
        return Err(invalid("x0", "dimension mismatch"));
    }
    let n_steps = cfg.n_steps()?;
    let from = (burn_in / cfg.dt).round() as usize;
    if from >= n_steps {
        return Err(invalid("burn_in", "must be shorter than the horizon"));
    }
    let d = model.dim;
    let zero = vec![0.0; d];
    let sqrt_dt = cfg.dt.sqrt();
    let per_path: Vec<f64> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut stream = PathStream::new(cfg.seed, path, d);
            let mut x = x0.to_vec();
            let mut noise = vec![0.0; d];
            let mut scratch = vec![0.0; d + d * d];
            let mut acc = 0.0;
            for k in 1..=n_steps {
                stream.fill_normals(&mut noise);
                euler_step(model, &mut x, &zero, &noise, cfg.dt, sqrt_dt, &mut scratch);
                if k > from {
                    acc += driver.eval(&x, &zero);
                }
            }
            acc / (n_steps - from) as f64
        })
        .collect();
    Ok(mean_ci(&per_path))
}

/// One independent way of computing `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Route {
    VanishingDiscount { label: String, schedule: Vec<f64>, tol: f64 },
    FiniteHorizonSlope { horizon: f64, dt: f64, window: (f64, f64) },
    InvariantAverage { x0: f64, horizon: f64, dt: f64, burn_in: f64, n_paths: usize, seed: u64 },
}

impl Route {
    pub fn label(&self) -> String {
        match self {
            Route::VanishingDiscount { label, .. } => format!("discount:{label}"),
            Route::FiniteHorizonSlope { .. } => "slope".into(),
            Route::InvariantAverage { .. } => "invariant-average".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RouteValue {
    pub route: String,
    pub lambda: f64,
    /// Monte Carlo half-width, 0 for deterministic routes.
    pub half_width_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairGap {
    pub a: String,
    pub b: String,
    pub lambda_gap: f64,
    /// Sup `|v_a - v_b|` on the reporting window, discount routes only.
    pub v_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrosscheckReport {
    pub values: Vec<RouteValue>,
    pub pairs: Vec<PairGap>,
    pub lambda_tol: f64,
    pub v_tol: f64,
    pub pass: bool,
}

/// Compute `lambda` by every route and tabulate pairwise gaps.
pub fn uniqueness_crosscheck(
    model: &SdeModel,
    driver: &Driver,
    grid: &Grid1D,
    routes: &[Route],
    lambda_tol: f64,
    v_tol: f64,
) -> Result<CrosscheckReport> {
    if routes.len() < 2 {
        return Err(invalid("routes", "need at least two routes"));
    }
    let mut values = Vec::new();
    let mut profiles: Vec<Option<ErgodicSolution>> = Vec::new();
    for r in routes {
        let (lambda, hw, prof) = match r {
            Route::VanishingDiscount { schedule, tol, .. } => {
                let e = vanishing_discount(model, driver, grid, schedule, *tol)?;
                (e.lambda, 0.0, Some(e))
            }
            Route::FiniteHorizonSlope { horizon, dt, window } => {
                let u = solve_finite_horizon(model, driver, &TerminalCondition::zero(), *horizon, grid, *dt)?;
                (lambda_from_slope(&u, *window)?, 0.0, None)
            }
            Route::InvariantAverage { x0, horizon, dt, burn_in, n_paths, seed } => {
                let cfg = SimConfig::new(*horizon, *dt, *n_paths, *seed);
                let (m, hw) = invariant_average(model, driver, &[*x0], &cfg, *burn_in)?;
                (m, hw, None)
            }
        };
        values.push(RouteValue { route: r.label(), lambda, half_width_95: hw });
        profiles.push(prof);
    }
    let win = grid.window(3.0);
    let mut pairs = Vec::new();
    for i in 0..routes.len() {
        for j in i + 1..routes.len() {
            let v_gap = match (&profiles[i], &profiles[j]) {
                (Some(a), Some(b)) => Some(win.clone().map(|k| (a.v[k] - b.v[k]).abs()).fold(0.0, f64::max)),
                _ => None,
            };
            pairs.push(PairGap {
                a: values[i].route.clone(),
                b: values[j].route.clone(),
                lambda_gap: (values[i].lambda - values[j].lambda).abs(),
                v_gap,
            });
        }
    }
    let pass = pairs.iter().all(|p| p.lambda_gap <= lambda_tol && p.v_gap.is_none_or(|g| g <= v_tol));
    Ok(CrosscheckReport { values, pairs, lambda_tol, v_tol, pass })
}
