//! Ergodic control over a finite action set: the Hamiltonian
//! `psi(x, z) = min_a { L(x, a) + z sigma^-1 R(a) }`, feedback policies, and
//! Monte Carlo cost evaluation under the controlled dynamics
//! `dX = [Xi(X) + R(a)] dt + sigma(X) dW`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ebsde::ErgodicSolution;
use crate::error::{invalid, Error, Result};
use crate::model::{Driver, SdeModel, TerminalCondition};
use crate::numerics::{mean_ci, norm};
use crate::pde_solver::{extract_z, FiniteHorizonSolution, Grid1D};
use crate::rng::PathStream;
use crate::sde_sim::{euler_step, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Action {
    pub label: String,
    /// `R(a)`.
    pub drift: Vec<f64>,
}

impl Action {
    pub fn new(label: impl Into<String>, drift: Vec<f64>) -> Self {
        Self { label: label.into(), drift }
    }
}

pub type RunningCost = Arc<dyn Fn(&[f64], &Action) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    pub actions: Vec<Action>,
    running_cost: RunningCost,
    /// Declared `sup_a |R(a)|`.
    pub r_bound: f64,
    pub terminal: TerminalCondition,
    /// x-Lipschitz constant of `L`, uniform in `a`.
    pub cost_lipschitz: f64,
    /// `sup_x |min_a L(x, a)| / (1 + |x|)`.
    pub cost_growth: f64,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("actions", &self.actions)
            .field("r_bound", &self.r_bound)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn new(
        name: impl Into<String>,
        actions: Vec<Action>,
        running_cost: RunningCost,
        r_bound: f64,
        terminal: TerminalCondition,
    ) -> Result<Self> {
        if actions.is_empty() {
            return Err(invalid("actions", "need at least one action"));
        }
        let d = actions[0].drift.len();
        if actions.iter().any(|a| a.drift.len() != d) {
            return Err(invalid("actions", "all R(a) must have the same dimension"));
        }
        if let Some(a) = actions.iter().find(|a| norm(&a.drift) > r_bound * (1.0 + 1e-12)) {
            return Err(invalid("actions", format!("|R({})| exceeds the declared bound {r_bound}", a.label)));
        }
        Ok(Self {
            name: name.into(),
            actions,
            running_cost,
            r_bound,
            terminal,
            cost_lipschitz: f64::INFINITY,
            cost_growth: f64::INFINITY,
        })
    }

    /// Declare the regularity constants of the running cost.
    pub fn with_cost_constants(mut self, lipschitz: f64, growth: f64) -> Self {
        self.cost_lipschitz = lipschitz;
        self.cost_growth = growth;
        self
    }

    pub fn dim(&self) -> usize {
        self.actions[0].drift.len()
    }

    pub fn running_cost(&self, x: &[f64], action: usize) -> f64 {
        (self.running_cost)(x, &self.actions[action])
    }
}

/// Value and minimizing action index of the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HamiltonianValue {
    pub value: f64,
    pub action: usize,
}

/// Exact minimum over the action list. A later action replaces the
/// incumbent only when strictly smaller beyond a `1e-12` relative margin,
/// so ties go to the first-listed action.
pub fn hamiltonian(cp: &ControlProblem, model: &SdeModel, x: &[f64], z: &[f64]) -> HamiltonianValue {
    let w = model.twist(x, z);
    hamiltonian_twisted(cp, x, &w)
}

fn hamiltonian_twisted(cp: &ControlProblem, x: &[f64], w: &[f64]) -> HamiltonianValue {
    let mut best = HamiltonianValue { value: f64::INFINITY, action: 0 };
    for (k, a) in cp.actions.iter().enumerate() {
        let v = cp.running_cost(x, k) + w.iter().zip(&a.drift).map(|(p, q)| p * q).sum::<f64>();
        if k == 0 || v < best.value - 1e-12 * (1.0 + v.abs()) {
            best = HamiltonianValue { value: v, action: k };
        }
    }
    best
}

/// The Hamiltonian as a BSDE driver, `K_z = R_bound`.
pub fn hamiltonian_driver(cp: &ControlProblem, model: &SdeModel) -> Driver {
    let c = cp.clone();
    let m = model.clone();
    Driver::new(
        format!("hamiltonian[{}]", cp.name),
        Arc::new(move |x: &[f64], z: &[f64]| hamiltonian(&c, &m, x, z).value),
        cp.cost_lipschitz,
        cp.r_bound,
        cp.cost_growth,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PolicyProvenance {
    Constant,
    Random { seed: u64 },
    ErgodicArgmin,
    FiniteHorizonArgmin,
}

/// Feedback rule tabulated on a grid with nearest-node lookup in the first
/// coordinate. `layers` holds one table for stationary policies and one
/// table per time step `[t_k, t_k + dt)` for time-dependent ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackPolicy {
    pub grid: Grid1D,
    pub layers: Vec<Vec<usize>>,
    pub dt: Option<f64>,
    pub provenance: PolicyProvenance,
}

impl FeedbackPolicy {
    pub fn constant(grid: &Grid1D, action: usize) -> Self {
        Self {
            grid: grid.clone(),
            layers: vec![vec![action; grid.n_nodes]],
            dt: None,
            provenance: PolicyProvenance::Constant,
        }
    }

    /// Stationary random policy: an independent uniform action on each of
    /// `n_cells` equal cells of the grid.
    pub fn random(grid: &Grid1D, n_actions: usize, n_cells: usize, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n_cells = n_cells.clamp(1, grid.n_nodes);
        let cells: Vec<usize> = (0..n_cells).map(|_| rng.gen_range(0..n_actions)).collect();
        let table = (0..grid.n_nodes).map(|i| cells[i * n_cells / grid.n_nodes]).collect();
        Self { grid: grid.clone(), layers: vec![table], dt: None, provenance: PolicyProvenance::Random { seed } }
    }

    pub fn is_stationary(&self) -> bool {
        self.layers.len() == 1
    }

    pub fn action(&self, t: f64, x: &[f64]) -> usize {
        let layer = match self.dt {
            Some(dt) if !self.is_stationary() => ((t / dt + 1e-9).floor() as usize).min(self.layers.len() - 1),
            _ => 0,
        };
        self.layers[layer][self.grid.nearest(x[0])]
    }
}

/// Stationary argmin of the Hamiltonian at `(x_i, zeta(x_i))`.
pub fn optimal_feedback(cp: &ControlProblem, model: &SdeModel, ergodic: &ErgodicSolution) -> FeedbackPolicy {
    let g = &ergodic.grid;
    let table = (0..g.n_nodes).map(|i| hamiltonian(cp, model, &[g.node(i)], &[ergodic.zeta[i]]).action).collect();
    FeedbackPolicy { grid: g.clone(), layers: vec![table], dt: None, provenance: PolicyProvenance::ErgodicArgmin }
}

/// Time-dependent argmin from a finite-horizon solution of the Hamiltonian
/// driver; on `[t_k, t_{k+1})` it uses the gradient of layer `k + 1`, the
/// same gradient the backward scheme feeds to the driver on that step.
pub fn optimal_feedback_finite(cp: &ControlProblem, model: &SdeModel, sol: &FiniteHorizonSolution) -> Result<FeedbackPolicy> {
    let g = &sol.grid;
    let layers = (0..sol.u.len() - 1)
        .map(|k| {
            let z = extract_z(&sol.u[k + 1], model, g)?;
            Ok((0..g.n_nodes).map(|i| hamiltonian(cp, model, &[g.node(i)], &[z[i]]).action).collect())
        })
        .collect::<Result<Vec<Vec<usize>>>>()?;
    Ok(FeedbackPolicy { grid: g.clone(), layers, dt: Some(sol.dt), provenance: PolicyProvenance::FiniteHorizonArgmin })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEstimate {
    pub value: f64,
    pub half_width_95: f64,
    pub n_paths: usize,
}

/// Fraction of the horizon discarded before averaging the ergodic cost.
pub const ERGODIC_BURN_IN: f64 = 0.2;

/// Per-path `(integral of L over [t_from, T], X_T)` under the controlled
/// dynamics, left-point rule.
fn controlled_paths(cp: &ControlProblem, model: &SdeModel, policy: &FeedbackPolicy, x0: &[f64], cfg: &SimConfig, from_step: usize) -> Result<Vec<(f64, Vec<f64>)>> {
    if x0.len() != model.dim || cp.dim() != model.dim {
        return Err(invalid("x0", "dimension mismatch between start, model and actions"));
    }
    let n_steps = cfg.n_steps()?;
    let d = model.dim;
    let sqrt_dt = cfg.dt.sqrt();
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut stream = PathStream::new(cfg.seed, path, d);
            let mut x = x0.to_vec();
            let mut noise = vec![0.0; d];
            let mut scratch = vec![0.0; d + d * d];
            let mut cost = 0.0;
            for k in 0..n_steps {
                let t = k as f64 * cfg.dt;
                let a = policy.action(t, &x);
                if k >= from_step {
                    cost += cp.running_cost(&x, a) * cfg.dt;
                }
                stream.fill_normals(&mut noise);
                euler_step(model, &mut x, &cp.actions[a].drift, &noise, cfg.dt, sqrt_dt, &mut scratch);
                if !(norm(&x) <= cfg.guard_radius) {
                    return Err(Error::BlowUp { path, t: t + cfg.dt, radius: cfg.guard_radius });
                }
            }
            Ok((cost, x))
        })
        .collect()
}

/// `J^T = E[int_0^T L(X_t, a_t) dt + g(X_T)]` by direct simulation.
pub fn evaluate_cost_finite(cp: &ControlProblem, model: &SdeModel, policy: &FeedbackPolicy, x0: &[f64], cfg: &SimConfig) -> Result<CostEstimate> {
    let paths = controlled_paths(cp, model, policy, x0, cfg, 0)?;
    let values: Vec<f64> = paths.iter().map(|(c, x)| c + cp.terminal.eval(x)).collect();
    let (value, half_width_95) = mean_ci(&values);
    Ok(CostEstimate { value, half_width_95, n_paths: cfg.n_paths })
}

/// Long-run average cost: per-path time average of `L` after discarding
/// the first [`ERGODIC_BURN_IN`] of the horizon.
pub fn evaluate_cost_ergodic(cp: &ControlProblem, model: &SdeModel, policy: &FeedbackPolicy, x0: &[f64], cfg: &SimConfig) -> Result<CostEstimate> {
    if cfg.horizon < 20.0 {
        return Err(invalid("T", "ergodic cost needs a horizon of at least 20"));
    }
    let n_steps = cfg.n_steps()?;
    let from = (ERGODIC_BURN_IN * n_steps as f64).round() as usize;
    let window = (n_steps - from) as f64 * cfg.dt;
    let paths = controlled_paths(cp, model, policy, x0, cfg, from)?;
    let values: Vec<f64> = paths.iter().map(|(c, _)| c / window).collect();
    let (value, half_width_95) = mean_ci(&values);
    Ok(CostEstimate { value, half_width_95, n_paths: cfg.n_paths })
}
