//! Full-order finite elements: Cartesian meshes, Q1/P1 spaces, parametric
//! kernels and the steady/transient solvers.

pub mod kernel;
pub mod mesh;
pub mod problem;
pub mod solver;
pub mod space;

pub use kernel::{
    constant_fn, elemental_eval, param_fn, CellEvaluator, CellField, Form, KernelKind, NodalField,
    ParamBlock, ParamFn, ParamPoints, ReferenceElement, Term, WeakFormKernel,
};
pub use mesh::CartesianMesh;
pub use problem::{ProblemDef, ProblemDomain, ProblemSpec};
pub use solver::{fom_solve_steady, fom_solve_transient, interpolate_dirichlet, SolverOptions};
pub use space::{build_mesh_and_space, AssemblyMaps, DirichletTag, DofKind, FESpaceDef, NO_SLOT};
