//! Reduced operators: offline construction, online hyper-reduced solves,
//! reconstruction of full-order fields and the `RBOP` operator file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alloc::{measure, RunStats};
use crate::assembly::{assemble_batched, assemble_sampled, BatchedVector, SampledEntry, SamplePlan};
use crate::error::{Error, Result};
use crate::fe::kernel::{CellEvaluator, CellField, Form, NodalField, ParamFn, ParamPoints, Term};
use crate::fe::problem::{ProblemDef, ProblemSpec};
use crate::fe::solver::{fom_solve_steady, fom_solve_transient, interpolate_dirichlet, SolverOptions};
use crate::fe::space::FESpaceDef;
use crate::hyper::{
    add_reduced_term, hyperreduce_matrix, hyperreduce_vector, nonzero_snapshots, online_coefficients, BasisRef,
    HrBasis, HrKind, HyperReduction,
};
use crate::linalg::{kron, kron_apply, norm2, CscMatrix};
use crate::param_space::{sample_realization, Realization, Sampling};
use crate::reduction::{pod, strb, Projection, TransientProjection};
use crate::snapshots::{encode_f64s, Axis, Reader, RealizationEcho, SnapshotTensor};

const RBOP_MAGIC: &[u8; 4] = b"RBOP";
const RBOP_VERSION: u32 = 1;

/// Discrete inner product defining the reduced-basis norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerProduct {
    /// `∫ ∇u·∇v` on the free dofs.
    #[default]
    H1,
    /// `∫ u v` on the free dofs.
    L2,
    Euclidean,
}

/// Norm matrix on the free dofs (`None` for the Euclidean product).
pub fn inner_product_matrix(space: &FESpaceDef, ip: InnerProduct) -> Result<Option<CscMatrix>> {
    let kernel = match ip {
        InnerProduct::H1 => crate::fe::WeakFormKernel::stiffness(crate::fe::constant_fn(1.0)),
        InnerProduct::L2 => crate::fe::WeakFormKernel::mass(crate::fe::constant_fn(1.0)),
        InnerProduct::Euclidean => return Ok(None),
    };
    let points = ParamPoints::single(&[], 0.0);
    let m = assemble_batched(&Form::matrix(&kernel), &points, space, None)?.into_matrix()?;
    Ok(Some(m.matrix(0)))
}

/// Offline settings of a reduction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    pub tol: f64,
    /// Solution snapshots used for the basis.
    pub nparams: usize,
    /// Residual (and nonlinear-term) snapshots.
    pub nparams_res: usize,
    /// Jacobian snapshots.
    pub nparams_jac: usize,
    #[serde(default)]
    pub inner_product: InnerProduct,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
    /// Hyper-reduction tolerance; `tol` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_tol: Option<f64>,
}

impl ReductionConfig {
    pub fn new(tol: f64, nparams: usize, nparams_res: usize, nparams_jac: usize) -> Self {
        Self {
            tol,
            nparams,
            nparams_res,
            nparams_jac,
            inner_product: InnerProduct::H1,
            sampling: Sampling::Halton,
            seed: 0,
            hr_tol: None,
        }
    }

    pub fn hr_tol(&self) -> f64 {
        self.hr_tol.unwrap_or(self.tol)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Argument(format!("tol = {} outside (0, 1)", self.tol)));
        }
        if let Some(t) = self.hr_tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Argument(format!("hr_tol = {t} outside (0, 1)")));
            }
        }
        for (name, v) in [
            ("nparams", self.nparams),
            ("nparams_res", self.nparams_res),
            ("nparams_jac", self.nparams_jac),
        ] {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    fn max_params(&self) -> usize {
        self.nparams.max(self.nparams_res).max(self.nparams_jac)
    }
}

/// Spatial or space-time reduced basis.
#[derive(Clone, Debug, PartialEq)]
pub enum RbProjection {
    Steady(Projection),
    SpaceTime(TransientProjection),
}

impl RbProjection {
    pub fn as_ref(&self) -> BasisRef<'_> {
        match self {
            RbProjection::Steady(p) => BasisRef::Steady(p),
            RbProjection::SpaceTime(p) => BasisRef::SpaceTime(p),
        }
    }

    pub fn spatial(&self) -> &Projection {
        match self {
            RbProjection::Steady(p) => p,
            RbProjection::SpaceTime(p) => p.spatial(),
        }
    }

    pub fn temporal(&self) -> Option<&Projection> {
        match self {
            RbProjection::Steady(_) => None,
            RbProjection::SpaceTime(p) => Some(p.temporal()),
        }
    }

    pub fn rank(&self) -> usize {
        self.spatial().rank() * self.temporal().map_or(1, Projection::rank)
    }
}

/// Reduced version of a finite-element space.
#[derive(Clone, Debug)]
pub struct RBSpace {
    pub fe_space: Arc<FESpaceDef>,
    pub projection: RbProjection,
}

impl RBSpace {
    pub fn new(fe_space: Arc<FESpaceDef>, projection: RbProjection) -> Result<Self> {
        if projection.spatial().full_dim() != fe_space.nfree() {
            return Err(Error::Shape(format!(
                "basis with {} rows for {} free dofs",
                projection.spatial().full_dim(),
                fe_space.nfree()
            )));
        }
        Ok(Self { fe_space, projection })
    }

    pub fn rank(&self) -> usize {
        self.projection.rank()
    }
}

/// What produced an operator; compared on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorEcho {
    pub problem: ProblemSpec,
    pub config: ReductionConfig,
}

/// Basis rows restricted to the dofs of a reduced integration domain.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LocalBasis {
    dofs: Vec<usize>,
    rows: DMatrix<f64>,
}

impl LocalBasis {
    fn new(space: &FESpaceDef, basis: &DMatrix<f64>, cells: &[usize]) -> Self {
        let mut dofs: Vec<usize> = cells.iter().flat_map(|&c| space.cell_dofs(c).iter().copied()).collect();
        dofs.sort_unstable();
        dofs.dedup();
        let rows = DMatrix::from_fn(dofs.len(), basis.ncols(), |i, k| match space.free_index(dofs[i]) {
            Some(f) => basis[(f, k)],
            None => 0.0,
        });
        Self { dofs, rows }
    }
}

/// Hyper-reductions of the cubic reaction term and its Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NonlinearParts {
    res: HyperReduction,
    jac: HyperReduction,
    local: LocalBasis,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Parts {
    Steady {
        jac: HyperReduction,
        res: HyperReduction,
        nonlinear: Option<NonlinearParts>,
    },
    Transient {
        jac: HyperReduction,
        res: HyperReduction,
        mass: DMatrix<f64>,
        t0: DMatrix<f64>,
        t1: DMatrix<f64>,
        time_lhs: DMatrix<f64>,
    },
}

#[derive(Clone, Debug)]
struct Plans {
    jac: SamplePlan,
    res: SamplePlan,
    nl: Option<(SamplePlan, SamplePlan)>,
}

/// Trial and test reduced spaces together with the hyper-reduced forms.
#[derive(Clone, Debug)]
pub struct ReducedOperator {
    trial: RBSpace,
    test: RBSpace,
    parts: Parts,
    echo: OperatorEcho,
    problem: ProblemDef,
    plans: Plans,
}

impl PartialEq for ReducedOperator {
    fn eq(&self, o: &Self) -> bool {
        self.trial.projection == o.trial.projection
            && self.test.projection == o.test.projection
            && self.parts == o.parts
            && self.echo == o.echo
    }
}

impl ReducedOperator {
    fn assemble(trial: RBSpace, test: RBSpace, parts: Parts, echo: OperatorEcho, problem: ProblemDef) -> Result<Self> {
        let space = &*problem.space;
        let plans = match &parts {
            Parts::Steady { jac, res, nonlinear } => Plans {
                jac: SamplePlan::new(space, jac.entries())?,
                res: SamplePlan::new(space, res.entries())?,
                nl: match nonlinear {
                    Some(nl) => Some((SamplePlan::new(space, nl.res.entries())?, SamplePlan::new(space, nl.jac.entries())?)),
                    None => None,
                },
            },
            Parts::Transient { jac, res, .. } => Plans {
                jac: SamplePlan::new(space, jac.entries())?,
                res: SamplePlan::new(space, res.entries())?,
                nl: None,
            },
        };
        Ok(Self {
            trial,
            test,
            parts,
            echo,
            problem,
            plans,
        })
    }

    pub fn trial(&self) -> &RBSpace {
        &self.trial
    }

    pub fn test(&self) -> &RBSpace {
        &self.test
    }

    pub fn echo(&self) -> &OperatorEcho {
        &self.echo
    }

    pub fn problem(&self) -> &ProblemDef {
        &self.problem
    }

    pub fn is_transient(&self) -> bool {
        matches!(self.parts, Parts::Transient { .. })
    }

    pub fn rank(&self) -> usize {
        self.trial.rank()
    }

    /// Jacobian and residual hyper-reductions.
    pub fn hyper_reductions(&self) -> (&HyperReduction, &HyperReduction) {
        match &self.parts {
            Parts::Steady { jac, res, .. } | Parts::Transient { jac, res, .. } => (jac, res),
        }
    }

    /// Hyper-reductions of the reaction term and its Jacobian, if any.
    pub fn nonlinear_reductions(&self) -> Option<(&HyperReduction, &HyperReduction)> {
        match &self.parts {
            Parts::Steady {
                nonlinear: Some(nl), ..
            } => Some((&nl.res, &nl.jac)),
            _ => None,
        }
    }

    /// `(M̂, T̂₀, T̂₁)` of a transient operator.
    pub fn time_blocks(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>)> {
        match &self.parts {
            Parts::Transient { mass, t0, t1, .. } => Some((mass, t0, t1)),
            Parts::Steady { .. } => None,
        }
    }
}

/// Nodal values of the lifting: Dirichlet data on constrained dofs, and on
/// free dofs either zero or the initial condition.
pub struct StateField<'a> {
    space: &'a FESpaceDef,
    dirichlet: &'a ParamFn,
    initial: &'a ParamFn,
    points: ParamPoints,
    with_initial: Vec<bool>,
}

impl<'a> StateField<'a> {
    /// `points` gives the `(μ, t)` at which member `m` is evaluated.
    pub fn new(problem: &'a ProblemDef, points: ParamPoints, with_initial: Vec<bool>) -> Result<Self> {
        if with_initial.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} initial flags for {} members",
                with_initial.len(),
                points.len()
            )));
        }
        Ok(Self {
            space: &problem.space,
            dirichlet: &problem.dirichlet,
            initial: &problem.initial,
            points,
            with_initial,
        })
    }

    /// Pure lifting (zero free values) at every member.
    pub fn lifting(problem: &'a ProblemDef, points: ParamPoints) -> Self {
        let n = points.len();
        Self {
            space: &problem.space,
            dirichlet: &problem.dirichlet,
            initial: &problem.initial,
            points,
            with_initial: vec![false; n],
        }
    }
}

impl CellField for StateField<'_> {
    fn gather(&self, member: usize, _cell: usize, dofs: &[usize], out: &mut [f64]) {
        let mesh = self.space.mesh();
        let dim = mesh.dim();
        let (mu, t) = (self.points.mu(member), self.points.t(member));
        for (o, &d) in out.iter_mut().zip(dofs) {
            let x = mesh.vertex_coord(d);
            *o = if self.space.free_index(d).is_some() {
                if self.with_initial[member] {
                    (self.initial)(mu, t, &x[..dim])
                } else {
                    0.0
                }
            } else {
                (self.dirichlet)(mu, t, &x[..dim])
            };
        }
    }
}

/// Reduced state `Φ ŵ + g` on the dofs of a reduced integration domain (one member).
pub struct ReducedStateField<'a> {
    dofs: &'a [usize],
    values: Vec<f64>,
}

impl<'a> ReducedStateField<'a> {
    fn new(local: &'a LocalBasis) -> Self {
        Self {
            dofs: &local.dofs,
            values: vec![0.0; local.dofs.len()],
        }
    }

    fn update(&mut self, local: &LocalBasis, lift: &[f64], w: &DVector<f64>) {
        for (i, v) in self.values.iter_mut().enumerate() {
            *v = lift[i] + local.rows.row(i).dot(&w.transpose());
        }
    }
}

impl CellField for ReducedStateField<'_> {
    fn gather(&self, _member: usize, _cell: usize, dofs: &[usize], out: &mut [f64]) {
        for (o, d) in out.iter_mut().zip(dofs) {
            *o = match self.dofs.binary_search(d) {
                Ok(i) => self.values[i],
                Err(_) => f64::NAN,
            };
        }
    }
}

/// Solution snapshots and FOM statistics gathered while building an operator.
#[derive(Clone, Debug)]
pub struct OfflineReport {
    pub snapshots: SnapshotTensor,
    pub fom_stats: RunStats,
    pub wall_ns: u64,
}

/// Samples the offline realization from `cfg` and builds a Galerkin operator.
pub fn build_reduced_operator(
    cfg: &ReductionConfig,
    problem: &ProblemDef,
    opts: &SolverOptions,
) -> Result<(ReducedOperator, OfflineReport)> {
    cfg.validate()?;
    let r = sample_realization(problem, cfg.max_params(), cfg.sampling, cfg.seed)?;
    build_reduced_operator_with(cfg, problem, &r, None, opts)
}

/// Linear residual at the lifting; with `prev = (field, Δt)` the
/// backward-Euler step residual `M(u_n − u_{n−1})/Δt + A u_n − F`.
fn residual_form<'a>(problem: &'a ProblemDef, cur: &'a dyn CellField, prev: Option<(&'a dyn CellField, f64)>) -> Result<Form<'a>> {
    let mut terms = Vec::with_capacity(4);
    if let Some((prev, dt)) = prev {
        let mass = problem
            .mass
            .as_ref()
            .ok_or_else(|| Error::Config(format!("transient problem '{}' has no mass form", problem.name)))?;
        terms.push(Term::scaled(mass, 1.0 / dt).with_field(cur));
        terms.push(Term::scaled(mass, -1.0 / dt).with_field(prev));
    }
    terms.push(Term::new(&problem.stiffness).with_field(cur));
    terms.push(Term::scaled(&problem.source, -1.0));
    Ok(Form::Vector(terms))
}

/// `(μ, t_k)` for every `μ` of `mus` and step `k` of `steps`, steps fastest.
fn step_points(mus: &[&[f64]], steps: &[usize], times: &[f64]) -> Result<ParamPoints> {
    let pdim = mus.first().map_or(0, |m| m.len());
    let mut m = Vec::with_capacity(mus.len() * steps.len() * pdim);
    let mut t = Vec::with_capacity(mus.len() * steps.len());
    for mu in mus {
        for &k in steps {
            m.extend_from_slice(mu);
            t.push(times[k]);
        }
    }
    ParamPoints::new(pdim, m, t)
}

fn grid_dt(times: &[f64]) -> f64 {
    let nt = times.len() - 1;
    (times[nt] - times[0]) / nt as f64
}

/// Builds an operator from the first `nparams`, `nparams_res` and
/// `nparams_jac` parameters of `r`; `test` defaults to the trial basis.
pub fn build_reduced_operator_with(
    cfg: &ReductionConfig,
    problem: &ProblemDef,
    r: &Realization,
    test: Option<RbProjection>,
    opts: &SolverOptions,
) -> Result<(ReducedOperator, OfflineReport)> {
    cfg.validate()?;
    problem.validate()?;
    if r.nparams() < cfg.max_params() {
        return Err(Error::Argument(format!(
            "realization has {} parameters, {} needed",
            r.nparams(),
            cfg.max_params()
        )));
    }
    let (res, wall_ns, _) = measure(|| {
        if problem.is_transient() {
            build_transient(cfg, problem, r, test, opts)
        } else {
            build_steady(cfg, problem, r, test, opts)
        }
    });
    let (op, snapshots, fom_stats) = res?;
    Ok((
        op,
        OfflineReport {
            snapshots,
            fom_stats,
            wall_ns,
        },
    ))
}

fn echo(cfg: &ReductionConfig, problem: &ProblemDef) -> OperatorEcho {
    OperatorEcho {
        problem: problem.spec.clone(),
        config: cfg.clone(),
    }
}

fn build_steady(
    cfg: &ReductionConfig,
    problem: &ProblemDef,
    r: &Realization,
    test: Option<RbProjection>,
    opts: &SolverOptions,
) -> Result<(ReducedOperator, SnapshotTensor, RunStats)> {
    let space = &*problem.space;
    let n = space.nfree();
    let nonlinear = problem.is_nonlinear();
    let nsol = if nonlinear { cfg.max_params() } else { cfg.nparams };
    let (sol, stats) = fom_solve_steady(problem, &r.truncated(nsol), opts)?;
    let x = inner_product_matrix(space, cfg.inner_product)?;
    let umat = DMatrix::from_column_slice(n, cfg.nparams, &sol.values()[..n * cfg.nparams]);
    let trial = RbProjection::Steady(pod(&umat, cfg.tol, x.as_ref())?);
    let test = test.unwrap_or_else(|| trial.clone());
    if matches!(test, RbProjection::SpaceTime(_)) || test.spatial().full_dim() != n {
        return Err(Error::Shape("test basis does not match the steady trial basis".into()));
    }
    let hr_tol = cfg.hr_tol();

    let r_jac = r.truncated(cfg.nparams_jac);
    let pj = ParamPoints::steady(&r_jac);
    let jac_b = assemble_batched(&Form::matrix(&problem.stiffness), &pj, space, None)?.into_matrix()?;
    let (jsnap, pattern) = nonzero_snapshots(&[&jac_b])?;
    let jac = hyperreduce_matrix(&jsnap, &pattern, trial.as_ref(), test.as_ref(), hr_tol, space)?;

    let r_res = r.truncated(cfg.nparams_res);
    let pr = ParamPoints::steady(&r_res);
    let lift = StateField::lifting(problem, pr.clone());
    let rv = assemble_batched(&residual_form(problem, &lift, None)?, &pr, space, None)?.into_vector()?;
    let rsnap = vector_snapshots(rv, None)?;
    let res = hyperreduce_vector(&rsnap, test.as_ref(), hr_tol, space)?;

    let nonlinear = match &problem.reaction {
        Some(react) => {
            let m = cfg.nparams_res.max(cfg.nparams_jac);
            let pts = ParamPoints::steady(&r.truncated(m));
            let g = interpolate_dirichlet(&problem.dirichlet, &pts, space)?;
            let field = NodalField::from_parts(space, &sol.values()[..n * m], g.values(), m);
            let nv = assemble_batched(&Form::Vector(vec![Term::new(react).with_field(&field)]), &pts, space, None)?
                .into_vector()?;
            let nv = BatchedVector::from_parts(n, cfg.nparams_res, nv.values()[..n * cfg.nparams_res].to_vec())?;
            let nres = hyperreduce_vector(&vector_snapshots(nv, None)?, test.as_ref(), hr_tol, space)?;
            let nm = assemble_batched(&Form::Matrix(vec![Term::new(react).with_field(&field)]), &pts, space, None)?
                .into_matrix()?;
            let nnz = nm.nnz();
            let nm = crate::assembly::BatchedSparseCSC::from_parts(
                nm.pattern().clone(),
                cfg.nparams_jac,
                nm.values()[..nnz * cfg.nparams_jac].to_vec(),
            )?;
            let (nsnap, npat) = nonzero_snapshots(&[&nm])?;
            let njac = hyperreduce_matrix(&nsnap, &npat, trial.as_ref(), test.as_ref(), hr_tol, space)?;
            let mut cells = nres.reduced_cells().to_vec();
            cells.extend_from_slice(njac.reduced_cells());
            let local = LocalBasis::new(space, trial.spatial().basis(), &cells);
            Some(NonlinearParts {
                res: nres,
                jac: njac,
                local,
            })
        }
        None => None,
    };

    let snaps = SnapshotTensor::steady(n, cfg.nparams, umat.as_slice().to_vec(), (&r.truncated(cfg.nparams)).into())?;
    let op = ReducedOperator::assemble(
        RBSpace::new(problem.space.clone(), trial)?,
        RBSpace::new(problem.space.clone(), test)?,
        Parts::Steady { jac, res, nonlinear },
        echo(cfg, problem),
        problem.clone(),
    )?;
    Ok((op, snaps, stats))
}

fn vector_snapshots(v: BatchedVector, nt: Option<usize>) -> Result<SnapshotTensor> {
    let (n, p) = (v.len(), v.nparams());
    match nt {
        Some(nt) => SnapshotTensor::transient(n, nt, p / nt, v.into_values(), RealizationEcho::default()),
        None => SnapshotTensor::steady(n, p, v.into_values(), RealizationEcho::default()),
    }
}

/// Evaluation points and lifting fields of the step residual at grid steps
/// `steps` (each ≥ 1): the state at `t_k` and the previous state at `t_{k-1}`.
fn step_fields<'a>(problem: &'a ProblemDef, mus: &[&[f64]], steps: &[usize], times: &[f64]) -> Result<(ParamPoints, StateField<'a>, StateField<'a>)> {
    let pdim = mus.first().map_or(0, |m| m.len());
    let cap = mus.len() * steps.len();
    let (mut m, mut tc, mut tp, mut init) = (
        Vec::with_capacity(cap * pdim),
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
    );
    for mu in mus {
        for &k in steps {
            m.extend_from_slice(mu);
            tc.push(times[k]);
            tp.push(times[k - 1]);
            init.push(k == 1);
        }
    }
    let cur = ParamPoints::new(pdim, m.clone(), tc)?;
    let prev = ParamPoints::new(pdim, m, tp)?;
    let ncur = cur.len();
    Ok((
        cur.clone(),
        StateField::new(problem, cur, vec![false; ncur])?,
        StateField::new(problem, prev, init)?,
    ))
}

fn build_transient(
    cfg: &ReductionConfig,
    problem: &ProblemDef,
    r: &Realization,
    test: Option<RbProjection>,
    opts: &SolverOptions,
) -> Result<(ReducedOperator, SnapshotTensor, RunStats)> {
    let space = &*problem.space;
    let times = r
        .times()
        .ok_or_else(|| Error::Argument("transient reduction needs a time grid".into()))?;
    let nt = times.len() - 1;
    let dt = grid_dt(times);
    let (snaps, stats) = fom_solve_transient(problem, &r.truncated(cfg.nparams), opts)?;
    let x = inner_product_matrix(space, cfg.inner_product)?;
    let trial = RbProjection::SpaceTime(strb(&snaps, x.as_ref(), cfg.tol)?);
    let test = test.unwrap_or_else(|| trial.clone());
    let (phi1, phi2) = (trial.spatial().basis(), trial.temporal().expect("space-time").basis());
    let (psi1, psi2) = match &test {
        RbProjection::SpaceTime(p) => (p.spatial().basis(), p.temporal().basis()),
        RbProjection::Steady(_) => return Err(Error::Shape("steady test basis for a transient problem".into())),
    };
    if psi1.nrows() != phi1.nrows() || psi2.nrows() != nt {
        return Err(Error::Shape("test basis does not match the trial basis".into()));
    }
    let hr_tol = cfg.hr_tol();
    let steps: Vec<usize> = (1..=nt).collect();

    let r_jac = r.truncated(cfg.nparams_jac);
    let mus_jac: Vec<&[f64]> = r_jac.params().iter().map(Vec::as_slice).collect();
    let pj = step_points(&mus_jac, &steps, times)?;
    let jac_b = assemble_batched(&Form::matrix(&problem.stiffness), &pj, space, None)?.into_matrix()?;
    let (jflat, pattern) = nonzero_snapshots(&[&jac_b])?;
    let jsnap = SnapshotTensor::new(
        vec![(Axis::SpaceNnz, pattern.nnz()), (Axis::Time, nt), (Axis::Param, cfg.nparams_jac)],
        jflat.into_data(),
        RealizationEcho::default(),
    )?;
    let jac = hyperreduce_matrix(&jsnap, &pattern, trial.as_ref(), test.as_ref(), hr_tol, space)?;

    let r_res = r.truncated(cfg.nparams_res);
    let mus: Vec<&[f64]> = r_res.params().iter().map(Vec::as_slice).collect();
    let (pr, cur, prev) = step_fields(problem, &mus, &steps, times)?;
    let rv = assemble_batched(&residual_form(problem, &cur, Some((&prev, dt)))?, &pr, space, None)?.into_vector()?;
    let res = hyperreduce_vector(&vector_snapshots(rv, Some(nt))?, test.as_ref(), hr_tol, space)?;

    let mass_k = problem.mass.as_ref().expect("validated");
    let pm = ParamPoints::single(r.param(0), times[0]);
    let m = assemble_batched(&Form::matrix(mass_k), &pm, space, None)?.into_matrix()?.matrix(0);
    let mass = psi1.transpose() * m.mul_dense(phi1);
    let t0 = psi2.transpose() * phi2;
    let shifted = DMatrix::from_fn(nt, phi2.ncols(), |n, k| if n == 0 { 0.0 } else { phi2[(n - 1, k)] });
    let t1 = psi2.transpose() * shifted;
    let time_lhs = kron(&(&t0 - &t1), &mass) / dt;

    let op = ReducedOperator::assemble(
        RBSpace::new(problem.space.clone(), trial)?,
        RBSpace::new(problem.space.clone(), test)?,
        Parts::Transient {
            jac,
            res,
            mass,
            t0,
            t1,
            time_lhs,
        },
        echo(cfg, problem),
        problem.clone(),
    )?;
    Ok((op, snaps, stats))
}

/// Reduced coordinates (one column per parameter) and solve statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct OnlineSolution {
    pub coords: DMatrix<f64>,
    pub stats: RunStats,
}

/// Hyper-reduced solves at every parameter of `r`.
pub fn online_solve(op: &ReducedOperator, r: &Realization, opts: &SolverOptions) -> Result<OnlineSolution> {
    let n = op.rank();
    if op.is_transient() {
        let times = r
            .times()
            .ok_or_else(|| Error::Argument("transient operator needs a realization with a time grid".into()))?;
        let nt = op.trial.projection.temporal().expect("space-time").full_dim();
        if times.len() != nt + 1 {
            return Err(Error::Argument(format!(
                "realization has {} time steps, operator was built for {nt}",
                times.len() - 1
            )));
        }
    }
    let (res, wall_ns, alloc_bytes) = measure(|| -> Result<(DMatrix<f64>, Vec<usize>)> {
        let mut coords = DMatrix::zeros(n, r.nparams());
        let mut iterations = Vec::with_capacity(r.nparams());
        for (j, mu) in r.params().iter().enumerate() {
            let (w, it) = match &op.parts {
                Parts::Transient { .. } => solve_transient(op, mu, r.times().expect("checked")),
                Parts::Steady { nonlinear: None, .. } => solve_steady_linear(op, mu),
                Parts::Steady { nonlinear: Some(_), .. } => solve_steady_newton(op, mu, opts),
            }
            .map_err(|e| e.at_param(j))?;
            coords.column_mut(j).copy_from(&w);
            iterations.push(it);
        }
        Ok((coords, iterations))
    });
    let (coords, iterations) = res?;
    Ok(OnlineSolution {
        coords,
        stats: RunStats {
            wall_ns,
            alloc_bytes,
            iterations,
            nparams: r.nparams(),
        },
    })
}

fn sample_coefficients(
    hr: &HyperReduction,
    plan: &SamplePlan,
    space: &FESpaceDef,
    points: &ParamPoints,
    form: &Form<'_>,
) -> Result<Vec<f64>> {
    let mut ev = CellEvaluator::new(space, points, form)?;
    let mut buf = vec![0.0; hr.nterms()];
    assemble_sampled(&mut ev, plan, &mut buf)?;
    online_coefficients(hr, &buf)
}

fn dense_solve(a: DMatrix<f64>, mut b: DVector<f64>) -> Result<DVector<f64>> {
    if !a.lu().solve_mut(&mut b) {
        return Err(Error::LinearSolve("singular reduced matrix".into()));
    }
    Ok(b)
}

fn linear_terms(op: &ReducedOperator, points: &ParamPoints) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let Parts::Steady { jac, res, .. } = &op.parts else {
        unreachable!("steady operator")
    };
    let pb = &op.problem;
    let space = &*pb.space;
    let cj = sample_coefficients(jac, &op.plans.jac, space, points, &Form::matrix(&pb.stiffness))?;
    let lift = StateField::lifting(pb, points.clone());
    let cr = sample_coefficients(res, &op.plans.res, space, points, &residual_form(pb, &lift, None)?)?;
    let (nt, nr) = (op.test.rank(), op.trial.rank());
    let mut a = DMatrix::zeros(nt, nr);
    add_reduced_term(jac, &cj, 1.0, &mut a)?;
    let mut rhs = DMatrix::zeros(nt, 1);
    add_reduced_term(res, &cr, 1.0, &mut rhs)?;
    Ok((a, DVector::from_column_slice(rhs.as_slice())))
}

fn solve_steady_linear(op: &ReducedOperator, mu: &[f64]) -> Result<(DVector<f64>, usize)> {
    let points = ParamPoints::single(mu, 0.0);
    let (a, r0) = linear_terms(op, &points)?;
    Ok((dense_solve(a, -r0)?, 1))
}

fn solve_steady_newton(op: &ReducedOperator, mu: &[f64], opts: &SolverOptions) -> Result<(DVector<f64>, usize)> {
    let Parts::Steady {
        nonlinear: Some(nl), ..
    } = &op.parts
    else {
        unreachable!("nonlinear operator")
    };
    let (nres_plan, njac_plan) = op.plans.nl.as_ref().expect("nonlinear plans");
    let pb = &op.problem;
    let react = pb.reaction.as_ref().expect("nonlinear problem");
    let space = &*pb.space;
    let points = ParamPoints::single(mu, 0.0);
    let (a, r0) = linear_terms(op, &points)?;

    let mesh = space.mesh();
    let dim = mesh.dim();
    let lift: Vec<f64> = nl
        .local
        .dofs
        .iter()
        .map(|&d| {
            if space.free_index(d).is_some() {
                0.0
            } else {
                (pb.dirichlet)(mu, 0.0, &mesh.vertex_coord(d)[..dim])
            }
        })
        .collect();
    let n = op.trial.rank();
    let mut w = DVector::zeros(n);
    let mut field = ReducedStateField::new(&nl.local);
    let mut history = Vec::new();
    for it in 1..=opts.max_iter.max(1) {
        field.update(&nl.local, &lift, &w);
        let cn = {
            let form = Form::Vector(vec![Term::new(react).with_field(&field)]);
            sample_coefficients(&nl.res, nres_plan, space, &points, &form)?
        };
        let cj = {
            let form = Form::Matrix(vec![Term::new(react).with_field(&field)]);
            sample_coefficients(&nl.jac, njac_plan, space, &points, &form)?
        };
        let mut jm = a.clone();
        add_reduced_term(&nl.jac, &cj, 1.0, &mut jm)?;
        let mut rhs = DMatrix::from_column_slice(r0.len(), 1, r0.as_slice());
        rhs.gemm(1.0, &a, &DMatrix::from_column_slice(n, 1, w.as_slice()), 1.0);
        add_reduced_term(&nl.res, &cn, 1.0, &mut rhs)?;
        let delta = dense_solve(jm, -DVector::from_column_slice(rhs.as_slice()))?;
        let norm = norm2(delta.as_slice());
        w += &delta;
        history.push(norm);
        if norm < opts.tol {
            return Ok((w, it));
        }
    }
    Err(Error::NonConvergence {
        iterations: history.len(),
        last_norm: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

/// Hyper-reduced space-time system `(LHS, RHS)` of a transient operator at
/// `mu`: `LHS = Δt⁻¹ Kron(T̂₀ − T̂₁, M̂) + Σ ĉ Kron(W, C)`, `RHS = −ρ̂`.
pub fn space_time_system(op: &ReducedOperator, mu: &[f64], times: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let Parts::Transient { jac, res, time_lhs, .. } = &op.parts else {
        return Err(Error::Argument("space-time system of a steady operator".into()));
    };
    let nt = op.trial.projection.temporal().map_or(0, |p| p.full_dim());
    if times.len() != nt + 1 {
        return Err(Error::Argument(format!("{} time steps for an operator built on {nt}", times.len().saturating_sub(1))));
    }
    let pb = &op.problem;
    let space = &*pb.space;
    let dt = grid_dt(times);

    let jsteps: Vec<usize> = jac.reduced_times().iter().map(|k| k + 1).collect();
    let pj = step_points(&[mu], &jsteps, times)?;
    let cj = sample_coefficients(jac, &op.plans.jac, space, &pj, &Form::matrix(&pb.stiffness))?;

    let rsteps: Vec<usize> = res.reduced_times().iter().map(|k| k + 1).collect();
    let (pr, cur, prev) = step_fields(pb, &[mu], &rsteps, times)?;
    let cr = sample_coefficients(res, &op.plans.res, space, &pr, &residual_form(pb, &cur, Some((&prev, dt)))?)?;

    let mut lhs = time_lhs.clone();
    add_reduced_term(jac, &cj, 1.0, &mut lhs)?;
    let mut rhs = DMatrix::zeros(lhs.nrows(), 1);
    add_reduced_term(res, &cr, -1.0, &mut rhs)?;
    Ok((lhs, DVector::from_column_slice(rhs.as_slice())))
}

fn solve_transient(op: &ReducedOperator, mu: &[f64], times: &[f64]) -> Result<(DVector<f64>, usize)> {
    let (lhs, rhs) = space_time_system(op, mu, times)?;
    Ok((dense_solve(lhs, rhs)?, 1))
}

/// Full-order reconstruction: free dofs `Φ ŵ` and Dirichlet values `g(μ, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// `(N_free, [N_t,] N_mu)`.
    pub free: SnapshotTensor,
    /// `(N_dir, [N_t,] N_mu)`.
    pub dirichlet: SnapshotTensor,
}

pub fn reconstruct(op: &ReducedOperator, coords: &DMatrix<f64>, r: &Realization) -> Result<Reconstruction> {
    if coords.nrows() != op.rank() || coords.ncols() != r.nparams() {
        return Err(Error::Shape(format!(
            "coordinates of shape {:?} for rank {} and {} parameters",
            coords.shape(),
            op.rank(),
            r.nparams()
        )));
    }
    let space = &*op.problem.space;
    let (nf, nd, p) = (space.nfree(), space.dirichlet_dofs().len(), r.nparams());
    let echo = RealizationEcho::from(r);
    match &op.trial.projection {
        RbProjection::Steady(proj) => {
            let free = proj.basis() * coords;
            let g = interpolate_dirichlet(&op.problem.dirichlet, &ParamPoints::steady(r), space)?;
            Ok(Reconstruction {
                free: SnapshotTensor::steady(nf, p, free.as_slice().to_vec(), echo.clone())?,
                dirichlet: SnapshotTensor::steady(nd, p, g.into_values(), echo)?,
            })
        }
        RbProjection::SpaceTime(tp) => {
            let times = r
                .times()
                .ok_or_else(|| Error::Argument("space-time reconstruction needs a time grid".into()))?;
            let nt = tp.nsteps();
            if times.len() != nt + 1 {
                return Err(Error::Shape(format!("{} time steps for a basis of {nt}", times.len() - 1)));
            }
            let mut free = Vec::with_capacity(nf * nt * p);
            for j in 0..p {
                free.extend(kron_apply(tp.temporal().basis(), tp.spatial().basis(), coords.column(j).as_slice()));
            }
            let steps: Vec<usize> = (1..=nt).collect();
            let g = interpolate_dirichlet(&op.problem.dirichlet, &ParamPoints::transient(r, &steps)?, space)?;
            Ok(Reconstruction {
                free: SnapshotTensor::transient(nf, nt, p, free, echo.clone())?,
                dirichlet: SnapshotTensor::transient(nd, nt, p, g.into_values(), echo)?,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum PartsKind {
    Steady,
    SteadyNonlinear,
    Transient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct HrMeta {
    kind: HrKind,
    space_time: bool,
    indices: Vec<usize>,
    entries: Vec<SampledEntry>,
    reduced_cells: Vec<usize>,
    reduced_times: Vec<usize>,
    ncores: usize,
    nweights: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SectionMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    echo: OperatorEcho,
    parts: PartsKind,
    ranks: Vec<usize>,
    hyper: BTreeMap<String, HrMeta>,
    #[serde(default)]
    local_dofs: Vec<usize>,
    sections: Vec<SectionMeta>,
}

#[derive(Default)]
struct Sections {
    list: Vec<(String, DMatrix<f64>)>,
}

impl Sections {
    fn put(&mut self, name: impl Into<String>, m: DMatrix<f64>) {
        self.list.push((name.into(), m));
    }

    fn put_projection(&mut self, prefix: &str, p: &Projection) {
        self.put(format!("{prefix}.basis"), p.basis().clone());
        let sv = p.singular_values();
        self.put(format!("{prefix}.sv"), DMatrix::from_column_slice(sv.len(), 1, sv));
        self.put(format!("{prefix}.tol"), DMatrix::from_element(1, 1, p.tol()));
    }

    fn put_rb(&mut self, prefix: &str, p: &RbProjection) {
        self.put_projection(&format!("{prefix}.spatial"), p.spatial());
        if let Some(t) = p.temporal() {
            self.put_projection(&format!("{prefix}.temporal"), t);
        }
    }

    fn put_hr(&mut self, name: &str, hr: &HyperReduction, meta: &mut BTreeMap<String, HrMeta>) {
        match hr.basis() {
            HrBasis::Steady(phi) => self.put(format!("{name}.basis"), phi.clone()),
            HrBasis::SpaceTime { spatial, temporal } => {
                self.put(format!("{name}.basis_space"), spatial.clone());
                self.put(format!("{name}.basis_time"), temporal.clone());
            }
        }
        for (k, c) in hr.cores().iter().enumerate() {
            self.put(format!("{name}.core.{k}"), c.clone());
        }
        for (k, w) in hr.weights().iter().enumerate() {
            self.put(format!("{name}.weight.{k}"), w.clone());
        }
        meta.insert(
            name.to_string(),
            HrMeta {
                kind: hr.kind(),
                space_time: hr.is_space_time(),
                indices: hr.indices().to_vec(),
                entries: hr.entries().to_vec(),
                reduced_cells: hr.reduced_cells().to_vec(),
                reduced_times: hr.reduced_times().to_vec(),
                ncores: hr.cores().len(),
                nweights: hr.weights().len(),
            },
        );
    }
}

struct Loaded {
    map: BTreeMap<String, DMatrix<f64>>,
}

impl Loaded {
    fn take(&mut self, name: &str) -> Result<DMatrix<f64>> {
        self.map
            .remove(name)
            .ok_or_else(|| Error::Corrupt(format!("missing section '{name}'")))
    }

    fn projection(&mut self, prefix: &str, norm: Option<CscMatrix>) -> Result<Projection> {
        let basis = self.take(&format!("{prefix}.basis"))?;
        let sv = self.take(&format!("{prefix}.sv"))?.as_slice().to_vec();
        let tol = self.take(&format!("{prefix}.tol"))?[(0, 0)];
        Ok(Projection::from_parts(basis, norm, sv, tol))
    }

    fn rb(&mut self, prefix: &str, transient: bool, norm: Option<CscMatrix>) -> Result<RbProjection> {
        let spatial = self.projection(&format!("{prefix}.spatial"), norm)?;
        Ok(if transient {
            let temporal = self.projection(&format!("{prefix}.temporal"), None)?;
            RbProjection::SpaceTime(TransientProjection::new(spatial, temporal))
        } else {
            RbProjection::Steady(spatial)
        })
    }

    fn hr(&mut self, name: &str, meta: &BTreeMap<String, HrMeta>) -> Result<HyperReduction> {
        let m = meta
            .get(name)
            .ok_or_else(|| Error::Corrupt(format!("missing hyper-reduction '{name}'")))?;
        let basis = if m.space_time {
            HrBasis::SpaceTime {
                spatial: self.take(&format!("{name}.basis_space"))?,
                temporal: self.take(&format!("{name}.basis_time"))?,
            }
        } else {
            HrBasis::Steady(self.take(&format!("{name}.basis"))?)
        };
        let cores = (0..m.ncores)
            .map(|k| self.take(&format!("{name}.core.{k}")))
            .collect::<Result<Vec<_>>>()?;
        let weights = (0..m.nweights)
            .map(|k| self.take(&format!("{name}.weight.{k}")))
            .collect::<Result<Vec<_>>>()?;
        HyperReduction::from_parts(
            m.kind,
            basis,
            m.indices.clone(),
            m.entries.clone(),
            m.reduced_cells.clone(),
            m.reduced_times.clone(),
            cores,
            weights,
        )
        .map_err(|e| Error::Corrupt(format!("hyper-reduction '{name}': {e}")))
    }
}

impl ReducedOperator {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut s = Sections::default();
        let mut hyper = BTreeMap::new();
        s.put_rb("trial", &self.trial.projection);
        s.put_rb("test", &self.test.projection);
        let mut local_dofs = Vec::new();
        let parts = match &self.parts {
            Parts::Steady { jac, res, nonlinear } => {
                s.put_hr("jac", jac, &mut hyper);
                s.put_hr("res", res, &mut hyper);
                match nonlinear {
                    Some(nl) => {
                        s.put_hr("nl_res", &nl.res, &mut hyper);
                        s.put_hr("nl_jac", &nl.jac, &mut hyper);
                        s.put("local_rows", nl.local.rows.clone());
                        local_dofs = nl.local.dofs.clone();
                        PartsKind::SteadyNonlinear
                    }
                    None => PartsKind::Steady,
                }
            }
            Parts::Transient {
                jac,
                res,
                mass,
                t0,
                t1,
                time_lhs,
            } => {
                s.put_hr("jac", jac, &mut hyper);
                s.put_hr("res", res, &mut hyper);
                s.put("mass", mass.clone());
                s.put("t0", t0.clone());
                s.put("t1", t1.clone());
                s.put("time_lhs", time_lhs.clone());
                PartsKind::Transient
            }
        };
        let manifest = Manifest {
            echo: self.echo.clone(),
            parts,
            ranks: vec![self.trial.rank(), self.test.rank()],
            hyper,
            local_dofs,
            sections: s
                .list
                .iter()
                .map(|(name, m)| SectionMeta {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(RBOP_MAGIC);
        out.extend_from_slice(&RBOP_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &s.list {
            encode_f64s(m.as_slice(), &mut out);
        }
        Ok(out)
    }

    /// Decodes an operator for `problem`; a differing problem echo (or
    /// reduction config, when given) is an incompatibility.
    pub fn from_bytes(bytes: &[u8], problem: &ProblemDef, cfg: Option<&ReductionConfig>) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != RBOP_MAGIC {
            return Err(Error::Format("not an RBOP file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != RBOP_VERSION {
            return Err(Error::Format(format!("unsupported RBOP version {version}")));
        }
        let len = r.u64()? as usize;
        let manifest: Manifest =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
        if manifest.echo.problem != problem.spec {
            return Err(Error::Incompatible(format!(
                "operator was built for {:?}, requested {:?}",
                manifest.echo.problem, problem.spec
            )));
        }
        if let Some(cfg) = cfg {
            if &manifest.echo.config != cfg {
                return Err(Error::Incompatible(format!(
                    "operator was built with {:?}, requested {:?}",
                    manifest.echo.config, cfg
                )));
            }
        }
        let mut map = BTreeMap::new();
        for sec in &manifest.sections {
            let n = sec
                .rows
                .checked_mul(sec.cols)
                .ok_or_else(|| Error::Corrupt("section size overflow".into()))?;
            map.insert(sec.name.clone(), DMatrix::from_vec(sec.rows, sec.cols, r.f64s(n)?));
        }
        if !r.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        let mut l = Loaded { map };
        let space = &*problem.space;
        let transient = manifest.parts == PartsKind::Transient;
        if transient != problem.is_transient() || (manifest.parts == PartsKind::SteadyNonlinear) != problem.is_nonlinear() {
            return Err(Error::Incompatible("operator kind does not match the problem".into()));
        }
        let norm = inner_product_matrix(space, manifest.echo.config.inner_product)?;
        let trial = l.rb("trial", transient, norm.clone())?;
        let test = l.rb("test", transient, norm)?;
        let jac = l.hr("jac", &manifest.hyper)?;
        let res = l.hr("res", &manifest.hyper)?;
        let parts = match manifest.parts {
            PartsKind::Transient => Parts::Transient {
                jac,
                res,
                mass: l.take("mass")?,
                t0: l.take("t0")?,
                t1: l.take("t1")?,
                time_lhs: l.take("time_lhs")?,
            },
            PartsKind::Steady => Parts::Steady {
                jac,
                res,
                nonlinear: None,
            },
            PartsKind::SteadyNonlinear => Parts::Steady {
                jac,
                res,
                nonlinear: Some(NonlinearParts {
                    res: l.hr("nl_res", &manifest.hyper)?,
                    jac: l.hr("nl_jac", &manifest.hyper)?,
                    local: LocalBasis {
                        dofs: manifest.local_dofs.clone(),
                        rows: l.take("local_rows")?,
                    },
                }),
            },
        };
        let op = Self::assemble(
            RBSpace::new(problem.space.clone(), trial).map_err(|e| Error::Incompatible(e.to_string()))?,
            RBSpace::new(problem.space.clone(), test).map_err(|e| Error::Incompatible(e.to_string()))?,
            parts,
            manifest.echo,
            problem.clone(),
        )
        .map_err(|e| Error::Corrupt(e.to_string()))?;
        if op.trial.rank() != manifest.ranks[0] || op.test.rank() != manifest.ranks[1] {
            return Err(Error::Corrupt("rank mismatch between manifest and sections".into()));
        }
        Ok(op)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path, problem: &ProblemDef, cfg: Option<&ReductionConfig>) -> Result<Self> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NotFound(path.to_path_buf())),
            Err(e) => return Err(e.into()),
        };
        Self::from_bytes(&bytes, problem, cfg)
    }
}
