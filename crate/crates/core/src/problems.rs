//! Built-in problems and the JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::kernel::{constant_fn, param_fn, WeakFormKernel};
use crate::fe::problem::{ProblemDef, ProblemSpec};
use crate::fe::solver::SolverOptions;
use crate::param_space::Sampling;
use crate::rom::{InnerProduct, ReductionConfig};

pub const PROBLEMS: [&str; 3] = ["poisson2d", "heat2d", "nonlinear_reaction2d"];

/// Instantiates a registered problem.
///
/// * `poisson2d`: `-∇·((μ₁ + μ₂x₁)∇u) = 1`, `u = x₂` on the boundary.
/// * `heat2d`: `u_t - Δu = f`, `g = t(μ₁x₁² + μ₂x₂²)`, `f = -Δg`, `u(0) = 0`.
/// * `nonlinear_reaction2d`: `-Δu + μ₁u³ = 10μ₂`, `u = 0` on the boundary.
pub fn build_problem(spec: ProblemSpec) -> Result<ProblemDef> {
    if !PROBLEMS.contains(&spec.name.as_str()) {
        return Err(Error::Config(format!(
            "unknown problem '{}' (expected one of {})",
            spec.name,
            PROBLEMS.join(", ")
        )));
    }
    if spec.domain.len() != 2 || spec.cells.len() != 2 {
        return Err(Error::Config(format!("problem '{}' is two-dimensional", spec.name)));
    }
    if spec.pdomain.len() != 2 {
        return Err(Error::Config(format!("problem '{}' has two parameters", spec.name)));
    }
    let transient = spec.name == "heat2d";
    if transient != spec.tdomain.is_some() {
        return Err(Error::Config(format!(
            "problem '{}' {} a time domain",
            spec.name,
            if transient { "needs" } else { "does not take" }
        )));
    }
    let mut pb = ProblemDef::skeleton(spec).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    match pb.name.as_str() {
        "poisson2d" => {
            pb.stiffness = WeakFormKernel::stiffness(param_fn(|mu, _, x| mu[0] + mu[1] * x[0]));
            pb.source = WeakFormKernel::load(constant_fn(1.0));
            pb.dirichlet = param_fn(|_, _, x| x[1]);
        }
        "heat2d" => {
            pb.stiffness = WeakFormKernel::stiffness(constant_fn(1.0));
            pb.mass = Some(WeakFormKernel::mass(constant_fn(1.0)));
            pb.source = WeakFormKernel::load(param_fn(|mu, t, _| -2.0 * t * (mu[0] + mu[1])));
            pb.dirichlet = param_fn(|mu, t, x| t * (mu[0] * x[0] * x[0] + mu[1] * x[1] * x[1]));
            pb.initial = constant_fn(0.0);
        }
        _ => {
            pb.stiffness = WeakFormKernel::stiffness(constant_fn(1.0));
            pb.reaction = Some(WeakFormKernel::reaction(param_fn(|mu, _, _| mu[0])));
            pb.source = WeakFormKernel::load(param_fn(|mu, _, _| 10.0 * mu[1]));
        }
    }
    pb.validate()?;
    Ok(pb)
}

fn default_theta() -> f64 {
    1.0
}

/// Everything an offline/online/eval run needs; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    pub domain: Vec<(f64, f64)>,
    pub cells: Vec<usize>,
    pub pdomain: Vec<(f64, f64)>,
    /// `(t0, dt, nsteps)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdomain: Option<(f64, f64, usize)>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    pub tol: f64,
    pub nparams: usize,
    pub nparams_res: usize,
    pub nparams_jac: usize,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub inner_product: InnerProduct,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
}

impl RunConfig {
    /// Heat equation on a 10×10 mesh, `Δt = 0.01`, 10 steps, `D = [1, 5]²`,
    /// `tol = 1e-4`, 20/20/1 snapshots, backward Euler.
    pub fn heat2d() -> Self {
        Self {
            problem: "heat2d".into(),
            domain: vec![(0.0, 1.0), (0.0, 1.0)],
            cells: vec![10, 10],
            pdomain: vec![(1.0, 5.0), (1.0, 5.0)],
            tdomain: Some((0.0, 0.01, 10)),
            theta: 1.0,
            tol: 1e-4,
            nparams: 20,
            nparams_res: 20,
            nparams_jac: 1,
            sampling: Sampling::Halton,
            seed: 0,
            out: None,
            inner_product: InnerProduct::H1,
            hr_tol: None,
            newton_tol: None,
            max_iter: None,
        }
    }

    /// Variable-conductivity Poisson problem, 16×16 mesh.
    pub fn poisson2d() -> Self {
        Self {
            problem: "poisson2d".into(),
            cells: vec![16, 16],
            pdomain: vec![(1.0, 2.0), (0.0, 1.0)],
            tdomain: None,
            nparams: 10,
            nparams_res: 10,
            nparams_jac: 3,
            ..Self::heat2d()
        }
    }

    /// Cubic reaction problem, 12×12 mesh.
    pub fn nonlinear_reaction2d() -> Self {
        Self {
            problem: "nonlinear_reaction2d".into(),
            cells: vec![12, 12],
            pdomain: vec![(1.0, 5.0), (0.5, 2.0)],
            tdomain: None,
            nparams: 20,
            nparams_res: 20,
            nparams_jac: 20,
            ..Self::heat2d()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.to_path_buf())),
            Err(e) => return Err(e.into()),
        };
        Self::from_json(&text)
    }

    pub fn problem_spec(&self) -> ProblemSpec {
        ProblemSpec {
            name: self.problem.clone(),
            domain: self.domain.clone(),
            cells: self.cells.clone(),
            pdomain: self.pdomain.clone(),
            tdomain: self.tdomain,
            theta: self.theta,
        }
    }

    pub fn reduction_config(&self) -> ReductionConfig {
        ReductionConfig {
            tol: self.tol,
            nparams: self.nparams,
            nparams_res: self.nparams_res,
            nparams_jac: self.nparams_jac,
            inner_product: self.inner_product,
            sampling: self.sampling,
            seed: self.seed,
            hr_tol: self.hr_tol,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            tol: self.newton_tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
        }
    }

    /// Checks every field; all failures are configuration errors.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.reduction_config().validate().map_err(cfg)?;
        if let Some(t) = self.newton_tol {
            if !(t > 0.0) {
                return Err(Error::Config(format!("newton_tol = {t} must be positive")));
            }
        }
        if self.max_iter == Some(0) {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if self.cells.iter().any(|&c| c == 0) {
            return Err(Error::Config("cell counts must be positive".into()));
        }
        if let Some((_, dt, n)) = self.tdomain {
            if !(dt > 0.0) || n == 0 {
                return Err(Error::Config(format!("tdomain needs dt > 0 and nsteps ≥ 1, got dt = {dt}, nsteps = {n}")));
            }
        }
        build_problem(self.problem_spec())?;
        Ok(())
    }

    pub fn build_problem(&self) -> Result<ProblemDef> {
        build_problem(self.problem_spec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [RunConfig::heat2d(), RunConfig::poisson2d(), RunConfig::nonlinear_reaction2d()] {
            cfg.validate().unwrap();
            let pb = cfg.build_problem().unwrap();
            assert_eq!(pb.is_transient(), cfg.problem == "heat2d");
            assert_eq!(pb.is_nonlinear(), cfg.problem == "nonlinear_reaction2d");
        }
    }

    #[test]
    fn json_round_trip_and_strictness() {
        let cfg = RunConfig::heat2d();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        let bad = text.replacen('{', "{\"bogus\": 1,", 1);
        assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_fields_are_config_errors() {
        let mut c = RunConfig::heat2d();
        c.nparams_jac = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::heat2d();
        c.problem = "wave3d".into();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::heat2d();
        c.tdomain = None;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::poisson2d();
        c.tol = 1.5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
