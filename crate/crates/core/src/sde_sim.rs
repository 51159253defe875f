//! Euler-Maruyama simulation of the forward diffusion, optionally with a
//! bounded Girsanov shift `Xi + sigma gamma`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{SdeModel, StructuralConstants};
use crate::numerics::{mean_ci, norm};
use crate::rng::PathStream;

pub const DEFAULT_GUARD_RADIUS: f64 = 1e6;

/// `gamma(t, x, out)`.
pub type ShiftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Bounded drift shift `gamma(t, x)`; the simulated drift becomes
/// `Xi(x) + sigma(x) gamma(t, x)`.
#[derive(Clone)]
pub struct DriftShift {
    pub name: String,
    gamma: ShiftFn,
    /// Declared `sup |gamma|`.
    pub bound: f64,
}

impl DriftShift {
    pub fn new(name: impl Into<String>, gamma: ShiftFn, bound: f64) -> Result<Self> {
        if !bound.is_finite() || bound < 0.0 {
            return Err(invalid("drift_shift", "declared bound must be finite and >= 0"));
        }
        Ok(Self { name: name.into(), gamma, bound })
    }

    pub fn constant(value: Vec<f64>) -> Self {
        let bound = norm(&value);
        let name = format!("const{value:?}");
        Self {
            name,
            gamma: Arc::new(move |_t: f64, _x: &[f64], out: &mut [f64]| out.copy_from_slice(&value)),
            bound,
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.gamma)(t, x, out)
    }
}

/// Time discretization and Monte Carlo size of a simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep every `record_every`-th step (the final step is always kept).
    pub record_every: usize,
    pub guard_radius: f64,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        Self { horizon, dt, n_paths, seed, record_every: 1, guard_radius: DEFAULT_GUARD_RADIUS }
    }

    pub fn record_every(mut self, stride: usize) -> Self {
        self.record_every = stride.max(1);
        self
    }

    /// Record only the start and the end.
    pub fn endpoints_only(mut self) -> Self {
        self.record_every = usize::MAX;
        self
    }

    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) {
            return Err(invalid("dt", "must be > 0"));
        }
        if !(self.horizon >= self.dt) {
            return Err(invalid("T", "must be >= dt"));
        }
        if self.n_paths < 1 {
            return Err(invalid("n_paths", "must be >= 1"));
        }
        let n = (self.horizon / self.dt).round();
        if (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(invalid("T", format!("horizon {} is not a multiple of dt {}", self.horizon, self.dt)));
        }
        Ok(n as usize)
    }

    fn recorded_steps(&self, n_steps: usize) -> Vec<usize> {
        (0..=n_steps).filter(|k| k % self.record_every == 0 || *k == n_steps).collect()
    }
}

/// Simulated paths on the recorded time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub model_name: String,
    pub drift_shift_name: String,
    /// `[path][time][dim]`, row-major.
    states: Vec<f64>,
}

impl PathEnsemble {
    pub fn state(&self, path: usize, time_index: usize) -> &[f64] {
        let stride = self.times.len() * self.dim;
        let o = path * stride + time_index * self.dim;
        &self.states[o..o + self.dim]
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.times.iter().position(|s| (s - t).abs() <= tol).ok_or(Error::TimeNotOnGrid(t))
    }

    /// Coordinate `coord` of every path at recorded time `time_index`.
    pub fn column(&self, time_index: usize, coord: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.state(p, time_index)[coord]).collect()
    }
}

/// `E[|X_t|^p]` with its 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub p: f64,
    pub t: f64,
    pub value: f64,
    pub half_width_95: f64,
    pub n_paths: usize,
}

/// One Euler-Maruyama step in place. `extra` is added to the drift;
/// `noise` holds standard normals; `scratch` has room for `d + d*d`.
pub(crate) fn euler_step(model: &SdeModel, x: &mut [f64], extra: &[f64], noise: &[f64], dt: f64, sqrt_dt: f64, scratch: &mut [f64]) {
    let d = x.len();
    let (drift, sig) = scratch.split_at_mut(d);
    model.drift(x, drift);
    model.diffusion(x, &mut sig[..d * d]);
    for i in 0..d {
        let mut diff = 0.0;
        for j in 0..d {
            diff += sig[i * d + j] * noise[j];
        }
        x[i] += (drift[i] + extra[i]) * dt + diff * sqrt_dt;
    }
}

/// `sigma(x) gamma(t, x)` written to `out`.
pub(crate) fn shift_drift(model: &SdeModel, shift: &DriftShift, t: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    let d = x.len();
    let (gamma, sig) = scratch.split_at_mut(d);
    shift.eval(t, x, gamma);
    model.diffusion(x, &mut sig[..d * d]);
    for i in 0..d {
        out[i] = (0..d).map(|j| sig[i * d + j] * gamma[j]).sum();
    }
}

fn check_start(model: &SdeModel, x0: &[f64]) -> Result<()> {
    if x0.len() != model.dim {
        return Err(invalid("x0", format!("expected dimension {}, got {}", model.dim, x0.len())));
    }
    Ok(())
}

fn first_error(results: Vec<Result<()>>) -> Result<()> {
    results.into_iter().collect()
}

/// Euler-Maruyama paths of `dX = [Xi(X) + sigma(X) gamma(t, X)] dt + sigma(X) dW`.
/// Path `i` draws from stream `(seed, i)`, so any subset of paths is
/// reproducible and the ensemble is bit-identical across thread counts.
pub fn simulate(model: &SdeModel, x0: &[f64], cfg: &SimConfig, shift: Option<&DriftShift>) -> Result<PathEnsemble> {
    check_start(model, x0)?;
    let n_steps = cfg.n_steps()?;
    let rec = cfg.recorded_steps(n_steps);
    let d = model.dim;
    let n_rec = rec.len();
    let mut states = vec![0.0; cfg.n_paths * n_rec * d];
    let sqrt_dt = cfg.dt.sqrt();

    let results: Vec<Result<()>> = states
        .par_chunks_mut(n_rec * d)
        .enumerate()
        .map(|(path, out)| {
            let mut stream = PathStream::new(cfg.seed, path, d);
            let mut x = x0.to_vec();
            let mut noise = vec![0.0; d];
            let mut extra = vec![0.0; d];
            let mut scratch = vec![0.0; d + d * d];
            let mut scratch2 = vec![0.0; d + d * d];
            out[..d].copy_from_slice(&x);
            let mut slot = 1;
            for k in 1..=n_steps {
                let t = (k - 1) as f64 * cfg.dt;
                if let Some(s) = shift {
                    shift_drift(model, s, t, &x, &mut extra, &mut scratch2);
                }
                stream.fill_normals(&mut noise);
                euler_step(model, &mut x, &extra, &noise, cfg.dt, sqrt_dt, &mut scratch);
                if !(norm(&x) <= cfg.guard_radius) {
                    return Err(Error::BlowUp { path, t: k as f64 * cfg.dt, radius: cfg.guard_radius });
                }
                if slot < n_rec && rec[slot] == k {
                    out[slot * d..(slot + 1) * d].copy_from_slice(&x);
                    slot += 1;
                }
            }
            Ok(())
        })
        .collect();
    first_error(results)?;

    Ok(PathEnsemble {
        times: rec.iter().map(|&k| k as f64 * cfg.dt).collect(),
        dim: d,
        n_paths: cfg.n_paths,
        seed: cfg.seed,
        model_name: model.name.clone(),
        drift_shift_name: shift.map_or_else(|| "none".to_string(), |s| s.name.clone()),
        states,
    })
}

/// Monte Carlo `E[|X_t|^p]` with a normal-approximation 95% half-width.
pub fn moment(ens: &PathEnsemble, p: f64, t: f64) -> Result<MomentEstimate> {
    if !(p > 0.0) {
        return Err(invalid("p", "must be > 0"));
    }
    let k = ens.time_index(t)?;
    let values: Vec<f64> = (0..ens.n_paths).map(|i| norm(ens.state(i, k)).powf(p)).collect();
    let (value, half_width_95) = mean_ci(&values);
    Ok(MomentEstimate { p, t: ens.times[k], value, half_width_95, n_paths: ens.n_paths })
}

/// Mean synchronous-coupling distance at one recorded time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingPoint {
    pub t: f64,
    pub mean_distance: f64,
    pub half_width_95: f64,
}

/// Per-path `|X_t^x - X_t^y|` under synchronous coupling (identical
/// Brownian increments), `[path][recorded time]`, plus the recorded times.
pub fn coupled_path_distances(model: &SdeModel, x: &[f64], y: &[f64], cfg: &SimConfig) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    check_start(model, x)?;
    check_start(model, y)?;
    let n_steps = cfg.n_steps()?;
    let rec = cfg.recorded_steps(n_steps);
    let d = model.dim;
    let sqrt_dt = cfg.dt.sqrt();
    let zero = vec![0.0; d];
    let per_path: Vec<Result<Vec<f64>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut stream = PathStream::new(cfg.seed, path, d);
            let (mut a, mut b) = (x.to_vec(), y.to_vec());
            let mut noise = vec![0.0; d];
            let mut scratch = vec![0.0; d + d * d];
            let mut out = Vec::with_capacity(rec.len());
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            out.push(dist(&a, &b));
            let mut slot = 1;
            for k in 1..=n_steps {
                stream.fill_normals(&mut noise);
                euler_step(model, &mut a, &zero, &noise, cfg.dt, sqrt_dt, &mut scratch);
                euler_step(model, &mut b, &zero, &noise, cfg.dt, sqrt_dt, &mut scratch);
                if !(norm(&a) <= cfg.guard_radius && norm(&b) <= cfg.guard_radius) {
                    return Err(Error::BlowUp { path, t: k as f64 * cfg.dt, radius: cfg.guard_radius });
                }
                if slot < rec.len() && rec[slot] == k {
                    out.push(dist(&a, &b));
                    slot += 1;
                }
            }
            Ok(out)
        })
        .collect();
    let per_path = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((rec.iter().map(|&k| k as f64 * cfg.dt).collect(), per_path))
}

/// Mean synchronous-coupling distance `E|X_t^x - X_t^y|` on the recorded grid.
pub fn coupled_simulate(model: &SdeModel, x: &[f64], y: &[f64], cfg: &SimConfig) -> Result<Vec<CouplingPoint>> {
    let (times, per_path) = coupled_path_distances(model, x, y, cfg)?;
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let col: Vec<f64> = per_path.iter().map(|p| p[k]).collect();
            let (m, h) = mean_ci(&col);
            CouplingPoint { t, mean_distance: m, half_width_95: h }
        })
        .collect())
}

/// Fraction of paths with `|X_t^x - z| < r`. A positivity smoke test for
/// irreducibility, not a certified probability.
pub fn hitting_fraction(model: &SdeModel, x: &[f64], z: &[f64], r: f64, cfg: &SimConfig) -> Result<f64> {
    if !(r > 0.0) {
        return Err(invalid("r", "must be > 0"));
    }
    let ens = simulate(model, x, &cfg.endpoints_only(), None)?;
    let last = ens.times.len() - 1;
    let hits = (0..ens.n_paths)
        .filter(|&p| {
            let s = ens.state(p, last);
            s.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < r
        })
        .count();
    Ok(hits as f64 / ens.n_paths as f64)
}

/// Uniform-in-time bound on `E|X_t|^2` under a drift shift bounded by
/// `gamma_bound`, from the comparison ODE
/// `m' <= -k m + c1 sqrt(m) + c0` with `k = 2 eta2 - 2 sqrt(r2) gamma - r2`,
/// `c1 = 2 sqrt(r1) gamma`, `c0 = 2 eta1 + r1`. `None` when `k <= 0`.
pub fn shifted_second_moment_cap(c: &StructuralConstants, gamma_bound: f64, x0_norm: f64) -> Option<f64> {
    let k = 2.0 * c.eta2 - 2.0 * c.r2.sqrt() * gamma_bound - c.r2;
    if !(k > 0.0) {
        return None;
    }
    let c1 = 2.0 * c.r1.sqrt() * gamma_bound;
    let c0 = 2.0 * c.eta1 + c.r1;
    let root = (c1 + (c1 * c1 + 4.0 * k * c0).sqrt()) / (2.0 * k);
    Some((root * root).max(x0_norm * x0_norm))
}

/// Closed-form OU marginal `N(x0 e^{-eta t}, s^2 (1 - e^{-2 eta t}) / (2 eta))`
/// mean and variance, used as an oracle in tests.
pub fn ou_marginal(eta: f64, s: f64, x0: f64, t: f64) -> (f64, f64) {
    let e = (-eta * t).exp();
    (x0 * e, s * s * (1.0 - e * e) / (2.0 * eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{catalog, params};
    use crate::numerics::Z95;

    fn ou() -> SdeModel {
        catalog::model("ou", &params([("eta", 1.0), ("sigma", 1.0)])).unwrap()
    }

    #[test]
    fn start_layer_is_x0_and_deterministic() {
        let m = ou();
        let cfg = SimConfig::new(0.5, 0.01, 64, 5).record_every(10);
        let a = simulate(&m, &[0.7], &cfg, None).unwrap();
        let b = simulate(&m, &[0.7], &cfg, None).unwrap();
        assert_eq!(a, b);
        for p in 0..a.n_paths {
            assert_eq!(a.state(p, 0), &[0.7]);
        }
        assert_eq!(a.times.len(), 6);
    }

    #[test]
    fn subset_reproducibility() {
        let m = ou();
        let small = simulate(&m, &[0.0], &SimConfig::new(1.0, 0.01, 10, 9), None).unwrap();
        let big = simulate(&m, &[0.0], &SimConfig::new(1.0, 0.01, 40, 9), None).unwrap();
        for p in 0..10 {
            for k in 0..small.times.len() {
                assert_eq!(small.state(p, k), big.state(p, k));
            }
        }
    }

    #[test]
    fn moment_at_deterministic_start() {
        let m = ou();
        let ens = simulate(&m, &[3.0], &SimConfig::new(0.1, 0.01, 100, 1), None).unwrap();
        let est = moment(&ens, 2.0, 0.0).unwrap();
        assert_eq!(est.value, 9.0);
        assert_eq!(est.half_width_95, 0.0);
        assert!(matches!(moment(&ens, 2.0, 0.055), Err(Error::TimeNotOnGrid(_))));
    }

    #[test]
    fn ou_mean_from_two() {
        let m = ou();
        let cfg = SimConfig::new(1.0, 1e-3, 100_000, 3).endpoints_only();
        let ens = simulate(&m, &[2.0], &cfg, None).unwrap();
        let xs = ens.column(1, 0);
        let (mean, hw) = mean_ci(&xs);
        let se = hw / Z95;
        // closed-form e^{-1} x0; Euler bias (1 - dt)^{1/dt} - e^{-1} ~ 4e-4 is inside 3 se
        assert!((mean - 2.0 * (-1.0f64).exp()).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn blow_up_is_reported() {
        let good = ou();
        let mut c = good.constants;
        c.eta2 = 1.0;
        let unstable = SdeModel::new(
            "explode",
            1,
            Arc::new(|x: &[f64], o: &mut [f64]| o[0] = 5.0 * x[0]),
            Arc::new(|_x: &[f64], o: &mut [f64]| o[0] = 1.0),
            c,
        )
        .unwrap();
        let cfg = SimConfig::new(10.0, 0.01, 4, 0);
        assert!(matches!(simulate(&unstable, &[1.0], &cfg, None), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn coupling_of_equal_starts_is_zero() {
        let m = catalog::model("weakdiss", &params([("c", 1.0), ("q", 0.01)])).unwrap();
        let pts = coupled_simulate(&m, &[0.4], &[0.4], &SimConfig::new(1.0, 0.01, 50, 2)).unwrap();
        assert!(pts.iter().all(|p| p.mean_distance == 0.0));
    }

    #[test]
    fn rejects_bad_configs() {
        let m = ou();
        assert!(simulate(&m, &[0.0], &SimConfig::new(1.0, 0.0, 10, 0), None).is_err());
        assert!(simulate(&m, &[0.0], &SimConfig::new(0.001, 0.01, 10, 0), None).is_err());
        assert!(simulate(&m, &[0.0, 1.0], &SimConfig::new(1.0, 0.01, 10, 0), None).is_err());
        assert!(simulate(&m, &[0.0], &SimConfig::new(1.0, 0.3, 10, 0), None).is_err());
    }

    #[test]
    fn moment_cap_matches_hand_computation() {
        let m = catalog::model("weakdiss", &params([("c", 1.0), ("q", 0.01)])).unwrap();
        let cap = shifted_second_moment_cap(&m.constants, 0.1, 0.0).unwrap();
        // k = 0.97, c1 = 0.2, c0 = 2
        let root = (0.2 + (0.04f64 + 8.0 * 0.97).sqrt()) / 1.94;
        assert!((cap - root * root).abs() < 1e-14);
    }
}
