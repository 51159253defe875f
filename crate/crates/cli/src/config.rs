//! TOML experiment configuration.
//!
//! Every numeric knob lives in the file; the command line only picks the
//! subcommand, the file and a thread cap. See `configs/annotated.toml` for a
//! complete example.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ebsde_core::control::ControlProblem;
use ebsde_core::model::{catalog, Driver, ParamValue, Params, SdeModel, TerminalCondition};
use ebsde_core::pde_solver::Grid1D;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Discount ladder of the vanishing-discount sweep; defaults to `2^-k`, `k = 0..6`.
    #[serde(default)]
    pub alpha_schedule: Option<Vec<f64>>,
    pub model: CatalogRef,
    #[serde(default)]
    pub driver: Option<CatalogRef>,
    #[serde(default)]
    pub control_problem: Option<CatalogRef>,
    #[serde(default)]
    pub terminal: Option<CatalogRef>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub horizon: HorizonConfig,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub ergodic: ErgodicSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub contraction: ContractionSection,
    #[serde(default)]
    pub control: ControlSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogRef {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, toml::Value>,
}

/// A grid edge: a number or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Edge {
    Auto,
    At(f64),
}

impl<'de> Deserialize<'de> for Edge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Edge::At(v)),
            Raw::Int(v) => Ok(Edge::At(v as f64)),
            Raw::Text(s) if s == "auto" => Ok(Edge::Auto),
            Raw::Text(s) => Err(serde::de::Error::custom(format!("expected a number or \"auto\", got \"{s}\""))),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "auto")]
    pub x_min: Edge,
    #[serde(default = "auto")]
    pub x_max: Edge,
    /// Overrides `h` when given.
    #[serde(default)]
    pub n_nodes: Option<usize>,
    #[serde(default = "default_h")]
    pub h: f64,
}

fn auto() -> Edge {
    Edge::Auto
}

fn default_h() -> f64 {
    0.02
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { x_min: Edge::Auto, x_max: Edge::Auto, n_nodes: None, h: default_h() }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    #[serde(rename = "T", default = "default_t")]
    pub t: f64,
    /// PDE time step; `None` picks a stable `1/n` step.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(rename = "T_list", default = "default_t_list")]
    pub t_list: Vec<f64>,
    #[serde(default = "default_x_list")]
    pub x_list: Vec<f64>,
    /// Slope window for `lambda` from the finite-horizon solution.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    /// Spacing of the time layers written by `solve-finite`.
    #[serde(default = "default_output_every")]
    pub output_every: f64,
}

fn default_t() -> f64 {
    10.0
}

fn default_t_list() -> Vec<f64> {
    (4..=20).map(|k| k as f64 * 0.5).collect()
}

fn default_x_list() -> Vec<f64> {
    (-6..=6).map(|k| k as f64 * 0.5).collect()
}

fn default_output_every() -> f64 {
    0.5
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            t: default_t(),
            dt: None,
            t_list: default_t_list(),
            x_list: default_x_list(),
            window: None,
            output_every: default_output_every(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_mc_dt")]
    pub dt: f64,
    #[serde(default)]
    pub x0: f64,
    /// Horizon of the least-squares Monte Carlo run.
    #[serde(rename = "T", default = "default_mc_t")]
    pub t: f64,
    /// `"polynomial"` or `"local-bins"`.
    #[serde(default = "default_basis")]
    pub basis: String,
    /// Polynomial degree or number of bins.
    #[serde(default = "default_basis_size")]
    pub basis_size: usize,
    /// Enables the invariant-average route in `verify-all` (z-independent drivers).
    #[serde(default)]
    pub invariant_average: bool,
    #[serde(rename = "invariant_T", default = "default_invariant_t")]
    pub invariant_t: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    /// Adds a least-squares Monte Carlo solve at `x0` to `solve-finite`.
    #[serde(default)]
    pub lsmc: bool,
}

fn default_invariant_t() -> f64 {
    100.0
}

fn default_paths() -> usize {
    10_000
}

fn default_mc_dt() -> f64 {
    0.01
}

fn default_mc_t() -> f64 {
    2.0
}

fn default_basis() -> String {
    "polynomial".into()
}

fn default_basis_size() -> usize {
    6
}

fn default_burn_in() -> f64 {
    5.0
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            n_paths: default_paths(),
            dt: default_mc_dt(),
            x0: 0.0,
            t: default_mc_t(),
            basis: default_basis(),
            basis_size: default_basis_size(),
            invariant_average: false,
            invariant_t: default_invariant_t(),
            burn_in: default_burn_in(),
            lsmc: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicSection {
    /// Stopping tolerance of each discounted solve (relative to alpha).
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Target gap of successive normalized profiles.
    #[serde(default = "default_tol")]
    pub v_tol: f64,
    /// Discounts written by `solve-discounted`.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_alphas() -> Vec<f64> {
    vec![1.0, 0.5, 0.25, 0.125]
}

impl Default for ErgodicSection {
    fn default() -> Self {
        Self { tol: default_tol(), v_tol: default_tol(), alphas: default_alphas() }
    }
}

/// Thresholds of the checks run by `verify-all`.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed gap between `lambda` routes.
    #[serde(default = "default_lambda_tol")]
    pub lambda: f64,
    /// Allowed sup gap between normalized profiles of discount routes.
    #[serde(default = "default_v_tol")]
    pub v: f64,
    #[serde(default = "default_residual_tol")]
    pub residual: f64,
    /// When set, `lambda` must be within `expected_lambda_tol` of this.
    #[serde(default)]
    pub expected_lambda: Option<f64>,
    #[serde(default = "default_lambda_tol")]
    pub expected_lambda_tol: f64,
    /// `|J - lambda|` of the optimal stationary feedback.
    #[serde(default = "default_control_tol")]
    pub control: f64,
    /// Floor of `max(2 CI, .)` in the finite-horizon cost comparison.
    #[serde(default = "default_control_finite_tol")]
    pub control_finite: f64,
}

fn default_control_tol() -> f64 {
    0.02
}

fn default_control_finite_tol() -> f64 {
    0.03
}

fn default_lambda_tol() -> f64 {
    0.01
}

fn default_v_tol() -> f64 {
    0.01
}

fn default_residual_tol() -> f64 {
    0.01
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            lambda: default_lambda_tol(),
            v: default_v_tol(),
            residual: default_residual_tol(),
            expected_lambda: None,
            expected_lambda_tol: default_lambda_tol(),
            control: default_control_tol(),
            control_finite: default_control_finite_tol(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    #[serde(default = "two")]
    pub mu: f64,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default)]
    pub gamma_bound: f64,
    #[serde(default = "default_box")]
    pub half_width: f64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
}

fn two() -> f64 {
    2.0
}

fn default_box() -> f64 {
    10.0
}

fn default_samples() -> usize {
    10_000
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self { mu: 2.0, p: 2.0, gamma_bound: 0.0, half_width: default_box(), n_samples: default_samples() }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "T", default = "default_t")]
    pub t: f64,
    #[serde(default = "default_mc_dt")]
    pub dt: f64,
    #[serde(default = "default_sim_paths")]
    pub n_paths: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Constant drift shift `gamma e_1`; 0 disables it.
    #[serde(default)]
    pub shift: f64,
    #[serde(default = "two")]
    pub moment_p: f64,
}

fn default_sim_paths() -> usize {
    100
}

fn default_record_every() -> usize {
    10
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            x0: None,
            t: default_t(),
            dt: default_mc_dt(),
            n_paths: default_sim_paths(),
            record_every: default_record_every(),
            shift: 0.0,
            moment_p: 2.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    #[serde(default = "default_cx")]
    pub x: f64,
    #[serde(default = "default_cy")]
    pub y: f64,
    /// Test function: a smooth catalog name such as `"cos"`.
    #[serde(default = "default_phi")]
    pub phi: String,
    /// Lipschitz constant of `phi`.
    #[serde(default = "one")]
    pub c_phi: f64,
    #[serde(default = "two")]
    pub mu: f64,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default = "default_mc_dt")]
    pub dt: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
}

fn default_cx() -> f64 {
    2.0
}

fn default_cy() -> f64 {
    0.0
}

fn default_phi() -> String {
    "cos".into()
}

fn one() -> f64 {
    1.0
}

fn default_t_grid() -> Vec<f64> {
    (1..=8).map(|k| k as f64 * 0.5).collect()
}

impl Default for ContractionSection {
    fn default() -> Self {
        Self {
            x: default_cx(),
            y: default_cy(),
            phi: default_phi(),
            c_phi: 1.0,
            mu: 2.0,
            t_grid: default_t_grid(),
            dt: default_mc_dt(),
            n_paths: default_paths(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    /// Horizon of the long-run average cost simulation.
    #[serde(rename = "ergodic_T", default = "default_ergodic_t")]
    pub ergodic_t: f64,
    /// Horizon of the finite-horizon cost comparison.
    #[serde(rename = "finite_T", default = "default_finite_t")]
    pub finite_t: f64,
    /// Seeded random stationary policies evaluated next to the optimum.
    #[serde(default)]
    pub random_policies: usize,
    #[serde(default = "default_cells")]
    pub random_cells: usize,
}

fn default_ergodic_t() -> f64 {
    50.0
}

fn default_finite_t() -> f64 {
    4.0
}

fn default_cells() -> usize {
    12
}

impl Default for ControlSection {
    fn default() -> Self {
        Self { ergodic_t: default_ergodic_t(), finite_t: default_finite_t(), random_policies: 0, random_cells: default_cells() }
    }
}

/// The source text and its parse.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: ExperimentConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn field_of(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

pub fn parse(path: &Path, text: &str) -> Result<ExperimentConfig, CliError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        CliError::Config {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)),
            field: field_of(&message),
            message,
        }
    })?;
    config.check(path)?;
    Ok(config)
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { context: format!("reading {}", path.display()), source: e })?;
    let config = parse(path, &text)?;
    Ok(LoadedConfig { path: path.to_path_buf(), text, config })
}

fn to_params(path: &Path, section: &str, r: &CatalogRef) -> Result<Params, CliError> {
    r.params
        .iter()
        .map(|(k, v)| {
            let value = match v {
                toml::Value::Float(f) => ParamValue::Num(*f),
                toml::Value::Integer(i) => ParamValue::Num(*i as f64),
                toml::Value::String(s) => ParamValue::Text(s.clone()),
                other => {
                    return Err(CliError::config(path, format!("{section}.params.{k}"), format!("unsupported value type `{}`", other.type_str())))
                }
            };
            Ok((k.clone(), value))
        })
        .collect()
}

impl ExperimentConfig {
    fn check(&self, path: &Path) -> Result<(), CliError> {
        let known = |field: &str, name: &str, list: &[&str]| -> Result<(), CliError> {
            if list.contains(&name) {
                Ok(())
            } else {
                Err(CliError::config(path, field, format!("unknown catalog entry `{name}`; expected one of {list:?}")))
            }
        };
        known("model.name", &self.model.name, catalog::MODELS)?;
        if let Some(d) = &self.driver {
            known("driver.name", &d.name, catalog::DRIVERS)?;
        }
        if let Some(c) = &self.control_problem {
            known("control_problem.name", &c.name, catalog::CONTROL_PROBLEMS)?;
        }
        if self.driver.is_some() && self.control_problem.is_some() {
            return Err(CliError::config(path, "control_problem", "give either [driver] or [control_problem], not both"));
        }
        if let Some(t) = &self.terminal {
            known("terminal.name", &t.name, catalog::TERMINALS)?;
        }
        if !(self.grid.h > 0.0) {
            return Err(CliError::config(path, "grid.h", "must be positive"));
        }
        if let Some(s) = &self.alpha_schedule {
            if s.len() < 4 || s.windows(2).any(|w| !(w[1] < w[0])) || s.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
                return Err(CliError::config(path, "alpha_schedule", "need at least 4 strictly decreasing values in (0, 1]"));
            }
        }
        if !(self.horizon.t > 0.0) {
            return Err(CliError::config(path, "horizon.T", "must be positive"));
        }
        if self.mc.basis != "polynomial" && self.mc.basis != "local-bins" {
            return Err(CliError::config(path, "mc.basis", "expected \"polynomial\" or \"local-bins\""));
        }
        Ok(())
    }
}

/// Catalog objects built from a config.
pub struct Problem {
    pub model: SdeModel,
    pub driver: Driver,
    pub terminal: TerminalCondition,
    pub control: Option<ControlProblem>,
}

impl LoadedConfig {
    pub fn model(&self) -> Result<SdeModel, CliError> {
        let c = &self.config;
        let p = to_params(&self.path, "model", &c.model)?;
        catalog::model(&c.model.name, &p).map_err(|e| CliError::core("building the model", e))
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let c = &self.config;
        let model = self.model()?;
        let terminal = match &c.terminal {
            Some(t) => catalog::terminal(&t.name, &to_params(&self.path, "terminal", t)?).map_err(|e| CliError::core("building the terminal", e))?,
            None => TerminalCondition::zero(),
        };
        let (driver, control) = match (&c.driver, &c.control_problem) {
            (Some(d), None) => {
                let p = to_params(&self.path, "driver", d)?;
                (catalog::driver(&d.name, &p, &model).map_err(|e| CliError::core("building the driver", e))?, None)
            }
            (None, Some(cp)) => {
                let p = to_params(&self.path, "control_problem", cp)?;
                let cp = catalog::control_problem(&cp.name, &p, model.dim).map_err(|e| CliError::core("building the control problem", e))?;
                let driver = ebsde_core::control::hamiltonian_driver(&cp, &model);
                (driver, Some(cp))
            }
            _ => return Err(CliError::config(&self.path, "driver", "a [driver] or [control_problem] section is required")),
        };
        Ok(Problem { model, driver, terminal, control })
    }

    /// Grid for the PDE backends; `"auto"` edges use the dissipativity
    /// scale around `mc.x0`.
    pub fn grid(&self, model: &SdeModel) -> Result<Grid1D, CliError> {
        let g = &self.config.grid;
        let hw = Grid1D::default_half_width(model, self.config.mc.x0.abs());
        let grid = match (g.x_min, g.x_max, g.n_nodes) {
            (Edge::Auto, Edge::Auto, None) => Grid1D::symmetric(hw, g.h),
            (lo, hi, n) => {
                let lo = match lo {
                    Edge::Auto => -hw,
                    Edge::At(v) => v,
                };
                let hi = match hi {
                    Edge::Auto => hw,
                    Edge::At(v) => v,
                };
                let n = n.unwrap_or_else(|| ((hi - lo) / g.h).round() as usize + 1);
                Grid1D::new(lo, hi, n)
            }
        };
        grid.map_err(|e| CliError::core("building the grid", e))
    }

    pub fn schedule(&self) -> Vec<f64> {
        self.config.alpha_schedule.clone().unwrap_or_else(|| ebsde_core::ebsde::dyadic_schedule(1.0, 7))
    }
}
