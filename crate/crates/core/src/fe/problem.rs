use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::kernel::{ParamFn, WeakFormKernel};
use crate::fe::space::{build_mesh_and_space, DirichletTag, FESpaceDef};
use crate::param_space::{ParamDomain, ParamSpace, TransientParamSpace};

/// Serializable description of a registered problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: Vec<(f64, f64)>,
    pub cells: Vec<usize>,
    pub pdomain: Vec<(f64, f64)>,
    /// `(t0, dt, nsteps)` for transient problems.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdomain: Option<(f64, f64, usize)>,
    #[serde(default = "default_theta")]
    pub theta: f64,
}

fn default_theta() -> f64 {
    1.0
}

/// Forms and data of a parameterized problem
/// `m(u_t, v) + a(u, v) + n(u; v) = f(v)` with `u = g` on the Dirichlet boundary.
#[derive(Clone)]
pub struct ProblemDef {
    pub name: String,
    pub space: Arc<FESpaceDef>,
    pub domain: ProblemDomain,
    pub theta: f64,
    pub stiffness: WeakFormKernel,
    pub mass: Option<WeakFormKernel>,
    pub source: WeakFormKernel,
    pub reaction: Option<WeakFormKernel>,
    pub dirichlet: ParamFn,
    pub initial: ParamFn,
    pub spec: ProblemSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemDomain {
    Steady(ParamSpace),
    Transient(TransientParamSpace),
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("name", &self.name)
            .field("spec", &self.spec)
            .field("nfree", &self.space.nfree())
            .finish_non_exhaustive()
    }
}

impl ProblemDef {
    /// Builds mesh, space and parameter domain from `spec`; forms start as
    /// `a = ∇u·∇v`, `f = 0`, `g = 0`, `u0 = 0`.
    pub fn skeleton(spec: ProblemSpec) -> Result<Self> {
        let (_, space) = build_mesh_and_space(&spec.domain, &spec.cells, DirichletTag::Boundary)?;
        let params = ParamSpace::new(spec.pdomain.clone())?;
        let domain = match spec.tdomain {
            Some((t0, dt, n)) => ProblemDomain::Transient(TransientParamSpace::new(params, t0, dt, n)?),
            None => ProblemDomain::Steady(params),
        };
        if !(spec.theta > 0.0 && spec.theta <= 1.0) {
            return Err(Error::Config(format!("theta = {} outside (0, 1]", spec.theta)));
        }
        let zero: ParamFn = Arc::new(|_, _, _| 0.0);
        Ok(Self {
            name: spec.name.clone(),
            space,
            domain,
            theta: spec.theta,
            stiffness: WeakFormKernel::stiffness(Arc::new(|_, _, _| 1.0)),
            mass: None,
            source: WeakFormKernel::load(zero.clone()),
            reaction: None,
            dirichlet: zero.clone(),
            initial: zero,
            spec,
        })
    }

    pub fn is_transient(&self) -> bool {
        matches!(self.domain, ProblemDomain::Transient(_))
    }

    pub fn is_nonlinear(&self) -> bool {
        self.reaction.is_some()
    }

    pub fn param_space(&self) -> &ParamSpace {
        match &self.domain {
            ProblemDomain::Steady(p) => p,
            ProblemDomain::Transient(t) => t.space(),
        }
    }

    pub fn time_grid(&self) -> Option<&[f64]> {
        match &self.domain {
            ProblemDomain::Steady(_) => None,
            ProblemDomain::Transient(t) => Some(t.times()),
        }
    }

    /// Checks that transient problems carry a mass form.
    pub fn validate(&self) -> Result<()> {
        if self.is_transient() && self.mass.is_none() {
            return Err(Error::Config(format!("transient problem '{}' has no mass form", self.name)));
        }
        Ok(())
    }
}

impl ParamDomain for ProblemDef {
    fn param_space(&self) -> &ParamSpace {
        ProblemDef::param_space(self)
    }

    fn time_grid(&self) -> Option<&[f64]> {
        ProblemDef::time_grid(self)
    }
}
