//! Least-squares Monte Carlo for the finite-horizon BSDE
//! `Y_t = g(X_T) + int_t^T psi(X_s, Z_s) ds - int_t^T Z_s dW_s` and for the
//! discounted BSDE on a truncated horizon. One-dimensional state.
//!
//! Paths are not stored in full: states are kept at every `~sqrt(M)`-th
//! step and each segment is regenerated from its checkpoint during the
//! backward sweep, which the counter-based streams make exact.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{Driver, SdeModel, TerminalCondition};
use crate::numerics::{mean_ci, Z95};
use crate::pde_solver::{extract_z, FiniteHorizonSolution};
use crate::rng::PathStream;
use crate::sde_sim::{euler_step, DEFAULT_GUARD_RADIUS};

const MAX_DEGREE: usize = 15;
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BasisKind {
    Polynomial,
    LocalBins,
}

/// Regression basis on `domain`. Each layer rescales the basis to the
/// part of the domain its sample occupies; samples outside the domain are
/// clipped onto it for the regression only and counted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionBasis {
    pub kind: BasisKind,
    /// Polynomial degree or number of bins.
    pub size: usize,
    pub domain: (f64, f64),
}

impl RegressionBasis {
    /// Legendre polynomials up to `degree`.
    pub fn polynomial(degree: usize, lo: f64, hi: f64) -> Result<Self> {
        if degree > MAX_DEGREE {
            return Err(invalid("basis", format!("degree at most {MAX_DEGREE}")));
        }
        Self::checked(BasisKind::Polynomial, degree, lo, hi)
    }

    pub fn local_bins(bins: usize, lo: f64, hi: f64) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("basis", "need at least one bin"));
        }
        Self::checked(BasisKind::LocalBins, bins, lo, hi)
    }

    fn checked(kind: BasisKind, size: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(invalid("basis", "empty domain"));
        }
        Ok(Self { kind, size, domain: (lo, hi) })
    }

    /// Degree-6 polynomial on `[-half_width, half_width]`.
    pub fn default_for(half_width: f64) -> Self {
        Self { kind: BasisKind::Polynomial, size: 6, domain: (-half_width, half_width) }
    }
}

/// Conditional expectations of several targets given `x`, by least squares
/// on the basis; returns the fitted values at the sample points.
struct Regressor<'a> {
    basis: &'a RegressionBasis,
    lo: f64,
    hi: f64,
}

impl<'a> Regressor<'a> {
    fn new(basis: &'a RegressionBasis, xs: &[f64]) -> Self {
        let (dlo, dhi) = basis.domain;
        let mn = xs.iter().copied().fold(f64::INFINITY, f64::min).max(dlo);
        let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(dhi);
        Self { basis, lo: mn, hi: mx }
    }

    fn degenerate(&self) -> bool {
        !(self.hi - self.lo > 1e-12 * (1.0 + self.hi.abs()))
    }

    fn scaled(&self, x: f64) -> f64 {
        (2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0).clamp(-1.0, 1.0)
    }

    fn legendre(&self, x: f64, out: &mut [f64]) {
        let s = self.scaled(x);
        out[0] = 1.0;
        if out.len() > 1 {
            out[1] = s;
        }
        for n in 1..out.len().saturating_sub(1) {
            let nf = n as f64;
            out[n + 1] = ((2.0 * nf + 1.0) * s * out[n] - nf * out[n - 1]) / (nf + 1.0);
        }
    }

    fn bin(&self, x: f64) -> usize {
        let k = ((self.scaled(x) + 1.0) / 2.0 * self.basis.size as f64).floor() as usize;
        k.min(self.basis.size - 1)
    }

    fn fit(&self, xs: &[f64], target: &[f64], layer: usize) -> Result<Vec<f64>> {
        let n = xs.len();
        if self.degenerate() {
            let m = target.iter().sum::<f64>() / n as f64;
            return Ok(vec![m; n]);
        }
        match self.basis.kind {
            BasisKind::Polynomial => {
                let p = self.basis.size + 1;
                let partial: Vec<(Vec<f64>, Vec<f64>)> = xs
                    .par_chunks(CHUNK)
                    .zip(target.par_chunks(CHUNK))
                    .map(|(xc, tc)| {
                        let mut g = vec![0.0; p * p];
                        let mut r = vec![0.0; p];
                        let mut b = [0.0; MAX_DEGREE + 1];
                        for (&x, &t) in xc.iter().zip(tc) {
                            self.legendre(x, &mut b[..p]);
                            for i in 0..p {
                                r[i] += b[i] * t;
                                for j in 0..=i {
                                    g[i * p + j] += b[i] * b[j];
                                }
                            }
                        }
                        (g, r)
                    })
                    .collect();
                let mut g = DMatrix::<f64>::zeros(p, p);
                let mut r = DVector::<f64>::zeros(p);
                for (gc, rc) in &partial {
                    for i in 0..p {
                        r[i] += rc[i];
                        for j in 0..=i {
                            g[(i, j)] += gc[i * p + j];
                        }
                    }
                }
                for i in 0..p {
                    for j in 0..i {
                        g[(j, i)] = g[(i, j)];
                    }
                }
                let chol = g.cholesky().ok_or(Error::SingularRegression { layer })?;
                let c = chol.solve(&r);
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::SingularRegression { layer });
                }
                Ok(xs
                    .par_iter()
                    .map(|&x| {
                        let mut b = [0.0; MAX_DEGREE + 1];
                        self.legendre(x, &mut b[..p]);
                        (0..p).map(|i| c[i] * b[i]).sum()
                    })
                    .collect())
            }
            BasisKind::LocalBins => {
                let nb = self.basis.size;
                let mut sum = vec![0.0; nb];
                let mut cnt = vec![0usize; nb];
                for (&x, &t) in xs.iter().zip(target) {
                    let k = self.bin(x);
                    sum[k] += t;
                    cnt[k] += 1;
                }
                Ok(xs.iter().map(|&x| {
                    let k = self.bin(x);
                    sum[k] / cnt[k] as f64
                }).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZLayerSummary {
    pub t: f64,
    pub mean_abs_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BsdeMcSolution {
    /// Mean of the pathwise estimator
    /// `e^{-alpha T} g(X_T) + sum_k e^{-alpha t_k} psi(X_k, Z_k) w`.
    pub y0: f64,
    pub y0_ci: f64,
    /// `Y_0` from the regression recursion itself.
    pub y0_regression: f64,
    pub z_path_summary: Vec<ZLayerSummary>,
    /// Fraction of regression samples that fell outside the basis domain.
    pub clipped_fraction: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
}

/// Monte Carlo and basis settings shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub basis: RegressionBasis,
}

/// Per-bin record of the representation check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZBinRow {
    pub t: f64,
    pub bin_center: f64,
    pub count: usize,
    /// Mean regression `Z` over the paths in the bin.
    pub z_mc: f64,
    /// Mean of the reference `Z` at the same paths.
    pub z_pde: f64,
    /// 95% half-width of the raw `Z` samples' mean in the bin.
    pub ci: f64,
}

struct ZBinSpec<'a> {
    lo: f64,
    hi: f64,
    bins: usize,
    stride: usize,
    min_count: usize,
    reference: &'a (dyn Fn(usize, f64) -> f64 + Sync),
}

struct Sweep {
    solution: BsdeMcSolution,
    rows: Vec<ZBinRow>,
    dropped: usize,
}

#[allow(clippy::too_many_arguments)]
fn backward_sweep(
    model: &SdeModel,
    driver: &Driver,
    terminal: &TerminalCondition,
    alpha: f64,
    x0: f64,
    horizon: f64,
    mc: &McConfig,
    zbins: Option<ZBinSpec<'_>>,
) -> Result<Sweep> {
    if model.dim != 1 {
        return Err(invalid("model", "the Monte Carlo BSDE solver is one-dimensional"));
    }
    if !(mc.dt > 0.0 && horizon >= mc.dt && mc.n_paths >= 2) {
        return Err(invalid("mc", "need dt > 0, T >= dt and at least 2 paths"));
    }
    let m = (horizon / mc.dt).round();
    if (m * mc.dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(invalid("T", format!("horizon {horizon} is not a multiple of dt {}", mc.dt)));
    }
    let m = m as usize;
    let n = mc.n_paths;
    let dt = mc.dt;
    let sqrt_dt = dt.sqrt();
    let seg = (m as f64).sqrt().ceil() as usize;
    let n_ck = m.div_ceil(seg);
    let zero = [0.0];

    let step = |x: &mut [f64; 1], xi: f64, scratch: &mut [f64; 2]| euler_step(model, x, &zero, &[xi], dt, sqrt_dt, scratch);

    // forward pass: checkpoints [path][ck] and terminal states
    let mut ck = vec![0.0; n * n_ck];
    let mut x_term = vec![0.0; n];
    ck.par_chunks_mut(n_ck)
        .zip(x_term.par_iter_mut())
        .enumerate()
        .map(|(p, (c, xt))| {
            let mut s = PathStream::new(mc.seed, p, 1);
            let mut x = [x0];
            let mut scratch = [0.0; 2];
            for k in 0..m {
                if k % seg == 0 {
                    c[k / seg] = x[0];
                }
                step(&mut x, s.next_normal_1d(), &mut scratch);
                if !(x[0].abs() <= DEFAULT_GUARD_RADIUS) {
                    return Err(Error::BlowUp { path: p, t: (k + 1) as f64 * dt, radius: DEFAULT_GUARD_RADIUS });
                }
            }
            *xt = x[0];
            Ok(())
        })
        .collect::<Result<()>>()?;

    let decay = (-alpha * dt).exp();
    let weight = if alpha > 0.0 { (1.0 - decay) / alpha } else { dt };
    let mut y: Vec<f64> = x_term.iter().map(|&x| terminal.eval_1d(x)).collect();
    let mut pathwise: Vec<f64> = y.iter().map(|v| v * (-alpha * horizon).exp()).collect();
    let (dlo, dhi) = mc.basis.domain;
    let mut clipped = 0usize;
    let mut samples = 0usize;
    let mut z_summary = Vec::with_capacity(m);
    let mut rows = Vec::new();
    let mut dropped = 0;
    let mut y0_regression = f64::NAN;

    let mut seg_x = vec![0.0; n * seg];
    let mut seg_w = vec![0.0; n * seg];
    let mut xs = vec![0.0; n];
    let mut dw = vec![0.0; n];
    for s in (0..n_ck).rev() {
        let a = s * seg;
        let b = (a + seg).min(m);
        seg_x
            .par_chunks_mut(seg)
            .zip(seg_w.par_chunks_mut(seg))
            .enumerate()
            .for_each(|(p, (sx, sw))| {
                let mut st = PathStream::new(mc.seed, p, 1);
                st.seek(a);
                let mut x = [ck[p * n_ck + s]];
                let mut scratch = [0.0; 2];
                for k in a..b {
                    let xi = st.next_normal_1d();
                    sx[k - a] = x[0];
                    sw[k - a] = xi * sqrt_dt;
                    step(&mut x, xi, &mut scratch);
                }
            });
        for k in (a..b).rev() {
            let j = k - a;
            for p in 0..n {
                xs[p] = seg_x[p * seg + j];
                dw[p] = seg_w[p * seg + j];
            }
            let t = k as f64 * dt;
            let disc_t = (-alpha * t).exp();
            if k == 0 {
                let ey = y.iter().sum::<f64>() / n as f64;
                let z0 = y.iter().zip(&dw).map(|(v, w)| (v - ey) * w).sum::<f64>() / (n as f64 * dt);
                let psi = driver.eval_1d(x0, z0);
                for acc in pathwise.iter_mut() {
                    *acc += disc_t * psi * weight;
                }
                y0_regression = decay * ey + psi * weight;
                z_summary.push(ZLayerSummary { t, mean_abs_z: z0.abs() });
                continue;
            }
            clipped += xs.iter().filter(|&&x| x < dlo || x > dhi).count();
            samples += n;
            let reg = Regressor::new(&mc.basis, &xs);
            let ey = reg.fit(&xs, &y, k)?;
            let raw: Vec<f64> = (0..n).map(|p| (y[p] - ey[p]) * dw[p] / dt).collect();
            let z = reg.fit(&xs, &raw, k)?;
            let new_y: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|p| decay * ey[p] + driver.eval_1d(xs[p], z[p]) * weight)
                .collect();
            pathwise.par_iter_mut().enumerate().for_each(|(p, acc)| {
                *acc += disc_t * (new_y[p] - decay * ey[p]);
            });
            if new_y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLayer { t });
            }
            y = new_y;
            z_summary.push(ZLayerSummary { t, mean_abs_z: z.iter().map(|v| v.abs()).sum::<f64>() / n as f64 });

            if let Some(spec) = &zbins {
                if k % spec.stride == 0 {
                    let width = (spec.hi - spec.lo) / spec.bins as f64;
                    let mut members: Vec<Vec<usize>> = vec![Vec::new(); spec.bins];
                    for (p, &x) in xs.iter().enumerate() {
                        if x >= spec.lo && x < spec.hi {
                            members[((x - spec.lo) / width) as usize].push(p);
                        }
                    }
                    for (bi, idx) in members.iter().enumerate() {
                        if idx.len() < spec.min_count {
                            dropped += 1;
                            continue;
                        }
                        let zs: Vec<f64> = idx.iter().map(|&p| z[p]).collect();
                        let raws: Vec<f64> = idx.iter().map(|&p| raw[p]).collect();
                        let refs: f64 = idx.iter().map(|&p| (spec.reference)(k, xs[p])).sum::<f64>() / idx.len() as f64;
                        let (_, ci) = mean_ci(&raws);
                        rows.push(ZBinRow {
                            t,
                            bin_center: spec.lo + (bi as f64 + 0.5) * width,
                            count: idx.len(),
                            z_mc: zs.iter().sum::<f64>() / zs.len() as f64,
                            z_pde: refs,
                            ci,
                        });
                    }
                }
            }
        }
    }
    z_summary.reverse();
    rows.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.bin_center.total_cmp(&b.bin_center)));
    let (y0, y0_ci) = mean_ci(&pathwise);
    Ok(Sweep {
        solution: BsdeMcSolution {
            y0,
            y0_ci,
            y0_regression,
            z_path_summary: z_summary,
            clipped_fraction: if samples > 0 { clipped as f64 / samples as f64 } else { 0.0 },
            n_paths: n,
            dt,
            horizon,
            seed: mc.seed,
        },
        rows,
        dropped,
    })
}

/// Finite-horizon BSDE at `x0` by least-squares Monte Carlo. Each layer
/// regresses `E[Y_{k+1} | X_k]`, then `Z_k` as the regression of
/// `(Y_{k+1} - E[Y_{k+1} | X_k]) dW_k / dt`, and sets
/// `Y_k = E[Y_{k+1} | X_k] + psi(X_k, Z_k) dt`. Layer 0 uses sample means.
pub fn solve_finite_mc(
    model: &SdeModel,
    driver: &Driver,
    terminal: &TerminalCondition,
    x0: f64,
    horizon: f64,
    mc: &McConfig,
) -> Result<BsdeMcSolution> {
    Ok(backward_sweep(model, driver, terminal, 0.0, x0, horizon, mc, None)?.solution)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscountedMcSolution {
    pub alpha: f64,
    pub value: f64,
    pub half_width_95: f64,
    /// Truncation horizon `(1/alpha) ln(c_pilot / (alpha tol))`, rounded up to the grid.
    pub horizon: f64,
    pub c_pilot: f64,
    pub tol: f64,
    pub diagnostics: BsdeMcSolution,
}

/// Discounted BSDE with driver `psi(x, z) - alpha y`, truncated at
/// `T_alpha = (1/alpha) ln(c_pilot / (alpha tol))` with terminal value 0;
/// `|Y^alpha| <= (c_pilot / alpha)(1 + |X|)` bounds the truncation error.
/// The discount is integrated exactly over each step.
pub fn solve_discounted_mc(
    model: &SdeModel,
    driver: &Driver,
    alpha: f64,
    x0: f64,
    tol: f64,
    c_pilot: f64,
    mc: &McConfig,
) -> Result<DiscountedMcSolution> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha", "must lie in (0, 1]"));
    }
    if !(tol > 0.0 && c_pilot > 0.0) {
        return Err(invalid("tol", "tol and c_pilot must be > 0"));
    }
    let raw = (c_pilot / (alpha * tol)).ln() / alpha;
    let horizon = ((raw / mc.dt).ceil().max(1.0)) * mc.dt;
    let sweep = backward_sweep(model, driver, &TerminalCondition::zero(), alpha, x0, horizon, mc, None)?;
    Ok(DiscountedMcSolution {
        alpha,
        value: sweep.solution.y0,
        half_width_95: sweep.solution.y0_ci,
        horizon,
        c_pilot,
        tol,
        diagnostics: sweep.solution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZRepresentationReport {
    pub rows: Vec<ZBinRow>,
    pub sup_discrepancy: f64,
    /// Count-weighted root mean square discrepancy.
    pub l2_discrepancy: f64,
    pub dropped_bins: usize,
    pub mc: BsdeMcSolution,
}

impl ZRepresentationReport {
    /// Every kept bin agrees within `max(2 ci, tol)`.
    pub fn within(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| (r.z_mc - r.z_pde).abs() <= (2.0 * r.ci).max(tol))
    }
}

/// Bin settings of the representation check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZBins {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
    /// Compare every `stride`-th time layer.
    pub stride: usize,
    pub min_count: usize,
}

/// Compare the regression `Z` of the Monte Carlo sweep with `u_x sigma`
/// from the grid solution layer at the same time, averaged over the paths
/// of each state bin.
pub fn z_representation_check(
    model: &SdeModel,
    driver: &Driver,
    terminal: &TerminalCondition,
    x0: f64,
    pde: &FiniteHorizonSolution,
    mc: &McConfig,
    bins: &ZBins,
) -> Result<ZRepresentationReport> {
    let horizon = pde.horizon();
    if !(bins.lo < bins.hi && bins.bins > 0 && bins.stride > 0) {
        return Err(invalid("bins", "need lo < hi, bins > 0 and stride > 0"));
    }
    if !(pde.grid.contains(bins.lo) && pde.grid.contains(bins.hi)) {
        return Err(invalid("bins", "bin range must lie inside the grid"));
    }
    let m = (horizon / mc.dt).round() as usize;
    let mut z_layers: Vec<Option<Vec<f64>>> = vec![None; m + 1];
    for (k, slot) in z_layers.iter_mut().enumerate() {
        if k > 0 && k % bins.stride == 0 {
            let layer = pde.layer_index(k as f64 * mc.dt)?;
            *slot = Some(extract_z(&pde.u[layer], model, &pde.grid)?);
        }
    }
    let reference = |k: usize, x: f64| pde.grid.interpolate(z_layers[k].as_ref().expect("sampled layer"), x);
    let spec = ZBinSpec { lo: bins.lo, hi: bins.hi, bins: bins.bins, stride: bins.stride, min_count: bins.min_count, reference: &reference };
    let sweep = backward_sweep(model, driver, terminal, 0.0, x0, horizon, mc, Some(spec))?;
    let diffs: Vec<(f64, usize)> = sweep.rows.iter().map(|r| ((r.z_mc - r.z_pde).abs(), r.count)).collect();
    let sup = diffs.iter().map(|d| d.0).fold(0.0, f64::max);
    let total: usize = diffs.iter().map(|d| d.1).sum();
    let l2 = if total > 0 { (diffs.iter().map(|(d, c)| d * d * *c as f64).sum::<f64>() / total as f64).sqrt() } else { 0.0 };
    Ok(ZRepresentationReport { rows: sweep.rows, sup_discrepancy: sup, l2_discrepancy: l2, dropped_bins: sweep.dropped, mc: sweep.solution })
}

/// 95% half-width helper for callers comparing against analytic values.
pub fn ci_from_sd(sd: f64, n: usize) -> f64 {
    Z95 * sd / (n as f64).sqrt()
}
