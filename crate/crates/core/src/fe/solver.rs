//! Full-order Newton and θ-method solvers, batched over parameters.

use crate::alloc::{measure, RunStats};
use crate::assembly::{assemble_matrix_into, assemble_vector_into, BatchedSparseCSC, BatchedVector};
use crate::error::{Error, Result};
use crate::fe::kernel::{CellEvaluator, Form, NodalField, ParamFn, ParamPoints, Term};
use crate::fe::problem::ProblemDef;
use crate::fe::space::FESpaceDef;
use crate::linalg::{norm2, BandLu};
use crate::param_space::{check_uniform_grid, Realization};
use crate::snapshots::SnapshotTensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Newton stops once the Euclidean norm of the update drops below `tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20,
        }
    }
}

fn eval_nodal(f: &ParamFn, points: &ParamPoints, space: &FESpaceDef, dofs: &[usize]) -> Result<BatchedVector> {
    let mesh = space.mesh();
    let dim = mesh.dim();
    let mut out = BatchedVector::zeros(dofs.len(), points.len());
    for m in 0..points.len() {
        let (mu, t) = (points.mu(m), points.t(m));
        for (k, &d) in dofs.iter().enumerate() {
            let x = mesh.vertex_coord(d);
            let v = f(mu, t, &x[..dim]);
            if !v.is_finite() {
                return Err(Error::Evaluation {
                    cell: usize::MAX,
                    param: m,
                    msg: format!("nodal value at dof {d} is not finite ({v})"),
                });
            }
            out.column_mut(m)[k] = v;
        }
    }
    Ok(out)
}

/// Nodal values of `g` at the constrained dofs, one column per member.
pub fn interpolate_dirichlet(g: &ParamFn, points: &ParamPoints, space: &FESpaceDef) -> Result<BatchedVector> {
    eval_nodal(g, points, space, space.dirichlet_dofs())
}

/// Nodal values of `f` at the free dofs, one column per member.
pub fn interpolate_free(f: &ParamFn, points: &ParamPoints, space: &FESpaceDef) -> Result<BatchedVector> {
    eval_nodal(f, points, space, space.free_dofs())
}

/// Solves every member's sparse system in place (`rhs` becomes the solution).
fn solve_members(jac: &BatchedSparseCSC, rhs: &mut BatchedVector, active: &[bool]) -> Result<()> {
    for j in 0..jac.nparams() {
        if !active[j] {
            continue;
        }
        let lu = BandLu::factor_parts(jac.pattern(), jac.param_values(j)).map_err(|e| e.at_param(j))?;
        lu.solve_in_place(rhs.column_mut(j));
    }
    Ok(())
}

/// Steady solve `r(u; mu) = 0` for every parameter of `r`, starting from zero.
///
/// Linear problems take exactly one Newton step. Returns free-dof solutions.
pub fn fom_solve_steady(problem: &ProblemDef, r: &Realization, opts: &SolverOptions) -> Result<(BatchedVector, RunStats)> {
    let (res, wall_ns, alloc_bytes) = measure(|| steady_inner(problem, r, opts));
    let (sol, iterations) = res?;
    Ok((
        sol,
        RunStats {
            wall_ns,
            alloc_bytes,
            iterations,
            nparams: r.nparams(),
        },
    ))
}

fn steady_inner(problem: &ProblemDef, r: &Realization, opts: &SolverOptions) -> Result<(BatchedVector, Vec<usize>)> {
    let space = &*problem.space;
    let points = ParamPoints::steady(r);
    let p = points.len();
    let g = interpolate_dirichlet(&problem.dirichlet, &points, space)?;
    let mut u = BatchedVector::zeros(space.nfree(), p);
    let mut jac = BatchedSparseCSC::zeros(space.pattern().clone(), p);
    let mut rhs = BatchedVector::zeros(space.nfree(), p);
    let mut iterations = vec![0usize; p];
    let mut active = vec![true; p];
    let mut history: Vec<Vec<f64>> = vec![Vec::new(); p];
    let nonlinear = problem.is_nonlinear();

    for _ in 0..opts.max_iter.max(1) {
        let field = NodalField::from_parts(space, u.values(), g.values(), p);
        let mut rterms = vec![Term::new(&problem.stiffness).with_field(&field), Term::scaled(&problem.source, -1.0)];
        let mut jterms = vec![Term::new(&problem.stiffness)];
        if let Some(react) = &problem.reaction {
            rterms.push(Term::new(react).with_field(&field));
            jterms.push(Term::new(react).with_field(&field));
        }
        let mut rev = CellEvaluator::new(space, &points, &Form::Vector(rterms))?;
        assemble_vector_into(&mut rev, space, None, &mut rhs)?;
        let mut jev = CellEvaluator::new(space, &points, &Form::Matrix(jterms))?;
        assemble_matrix_into(&mut jev, space, None, &mut jac)?;
        rhs.values_mut().iter_mut().for_each(|v| *v = -*v);
        solve_members(&jac, &mut rhs, &active)?;
        for j in 0..p {
            if !active[j] {
                continue;
            }
            let delta = rhs.column(j);
            let norm = norm2(delta);
            for (x, d) in u.column_mut(j).iter_mut().zip(delta) {
                *x += d;
            }
            iterations[j] += 1;
            history[j].push(norm);
            if !nonlinear || norm < opts.tol {
                active[j] = false;
            }
        }
        if !active.iter().any(|&a| a) {
            return Ok((u, iterations));
        }
    }
    let j = active.iter().position(|&a| a).expect("an unconverged member");
    Err(Error::NonConvergence {
        iterations: iterations[j],
        last_norm: *history[j].last().unwrap_or(&f64::NAN),
        history: history[j].clone(),
    }
    .at_param(j))
}

/// θ-method time marching for every parameter of `r`:
/// `M (u_n - u_{n-1}) / Δt + a(u_θ) + n(u_θ) = f(t_θ)` with
/// `u_θ = θ u_n + (1 - θ) u_{n-1}`, `t_θ = θ t_n + (1 - θ) t_{n-1}`.
///
/// Returns the `(N_free, N_t, N_mu)` tensor of states `u_1 .. u_{N_t}`.
pub fn fom_solve_transient(problem: &ProblemDef, r: &Realization, opts: &SolverOptions) -> Result<(SnapshotTensor, RunStats)> {
    let times = r
        .times()
        .ok_or_else(|| Error::Argument("transient solve needs a time grid".into()))?;
    check_uniform_grid(times)?;
    let (res, wall_ns, alloc_bytes) = measure(|| transient_inner(problem, r, times, problem.theta, opts));
    let (data, iterations) = res?;
    let (n, nt, p) = (problem.space.nfree(), times.len() - 1, r.nparams());
    Ok((
        SnapshotTensor::transient(n, nt, p, data, r.into())?,
        RunStats {
            wall_ns,
            alloc_bytes,
            iterations,
            nparams: p,
        },
    ))
}

/// [`fom_solve_transient`] with an explicit θ, ignoring the problem's own.
pub fn fom_solve_transient_theta(
    problem: &ProblemDef,
    r: &Realization,
    theta: f64,
    opts: &SolverOptions,
) -> Result<(SnapshotTensor, RunStats)> {
    let mut pb = problem.clone();
    pb.theta = theta;
    fom_solve_transient(&pb, r, opts)
}

fn transient_inner(
    problem: &ProblemDef,
    r: &Realization,
    times: &[f64],
    theta: f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Argument(format!("theta = {theta} outside (0, 1]")));
    }
    let mass = problem
        .mass
        .as_ref()
        .ok_or_else(|| Error::Argument("transient solve needs a mass form".into()))?;
    let space = &*problem.space;
    let (n, nt, p) = (space.nfree(), times.len() - 1, r.nparams());
    let dt = (times[nt] - times[0]) / nt as f64;
    let nonlinear = problem.is_nonlinear();

    let start = ParamPoints::at_time(r, times[0]);
    let mut g_prev = interpolate_dirichlet(&problem.dirichlet, &start, space)?;
    let mut u_prev = interpolate_free(&problem.initial, &start, space)?;
    let mut u = u_prev.clone();
    let mut jac = BatchedSparseCSC::zeros(space.pattern().clone(), p);
    let mut rhs = BatchedVector::zeros(n, p);
    let mut data = vec![0.0; n * nt * p];
    let mut iterations = vec![0usize; p];

    for step in 1..=nt {
        let t_theta = theta * times[step] + (1.0 - theta) * times[step - 1];
        let now = ParamPoints::at_time(r, times[step]);
        let g = interpolate_dirichlet(&problem.dirichlet, &now, space)?;
        let points = ParamPoints::at_time(r, t_theta);
        let prev = NodalField::from_parts(space, u_prev.values(), g_prev.values(), p);
        let mut active = vec![true; p];
        let mut history: Vec<Vec<f64>> = vec![Vec::new(); p];
        let mut converged = false;
        for _ in 0..opts.max_iter.max(1) {
            let cur = NodalField::from_parts(space, u.values(), g.values(), p);
            let mid = cur.combine(theta, &prev, 1.0 - theta);
            let mut rterms = vec![
                Term::scaled(mass, 1.0 / dt).with_field(&cur),
                Term::scaled(mass, -1.0 / dt).with_field(&prev),
                Term::new(&problem.stiffness).with_field(&mid),
                Term::scaled(&problem.source, -1.0),
            ];
            let mut jterms = vec![Term::scaled(mass, 1.0 / dt), Term::scaled(&problem.stiffness, theta)];
            if let Some(react) = &problem.reaction {
                rterms.push(Term::new(react).with_field(&mid));
                jterms.push(Term::scaled(react, theta).with_field(&mid));
            }
            let mut rev = CellEvaluator::new(space, &points, &Form::Vector(rterms))?;
            assemble_vector_into(&mut rev, space, None, &mut rhs)?;
            let mut jev = CellEvaluator::new(space, &points, &Form::Matrix(jterms))?;
            assemble_matrix_into(&mut jev, space, None, &mut jac)?;
            rhs.values_mut().iter_mut().for_each(|v| *v = -*v);
            solve_members(&jac, &mut rhs, &active)?;
            for j in 0..p {
                if !active[j] {
                    continue;
                }
                let delta = rhs.column(j);
                let norm = norm2(delta);
                for (x, d) in u.column_mut(j).iter_mut().zip(delta) {
                    *x += d;
                }
                iterations[j] += 1;
                history[j].push(norm);
                if !nonlinear || norm < opts.tol {
                    active[j] = false;
                }
            }
            if !active.iter().any(|&a| a) {
                converged = true;
                break;
            }
        }
        if !converged {
            let j = active.iter().position(|&a| a).expect("an unconverged member");
            return Err(Error::NonConvergence {
                iterations: history[j].len(),
                last_norm: *history[j].last().unwrap_or(&f64::NAN),
                history: history[j].clone(),
            }
            .at_param(j));
        }
        for j in 0..p {
            let off = n * ((step - 1) + nt * j);
            data[off..off + n].copy_from_slice(u.column(j));
        }
        u_prev.values_mut().copy_from_slice(u.values());
        g_prev = g;
    }
    Ok((data, iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::kernel::{constant_fn, param_fn, WeakFormKernel};
    use crate::fe::problem::ProblemSpec;
    use crate::param_space::ParamSpace;

    fn spec(cells: usize, tdomain: Option<(f64, f64, usize)>) -> ProblemSpec {
        ProblemSpec {
            name: "test".into(),
            domain: vec![(0.0, 1.0), (0.0, 1.0)],
            cells: vec![cells, cells],
            pdomain: vec![(1.0, 2.0)],
            tdomain,
            theta: 1.0,
        }
    }

    fn one_param(problem: &ProblemDef, mu: f64) -> Realization {
        Realization::from_params(
            &ParamSpace::new(vec![(1.0, 2.0)]).unwrap(),
            vec![vec![mu]],
            problem.time_grid().map(<[f64]>::to_vec),
        )
        .unwrap()
    }

    #[test]
    fn linear_field_is_reproduced() {
        let mut pb = ProblemDef::skeleton(spec(5, None)).unwrap();
        pb.stiffness = WeakFormKernel::stiffness(param_fn(|mu, _, _| mu[0]));
        pb.dirichlet = param_fn(|_, _, x| x[0]);
        let r = one_param(&pb, 1.5);
        let (u, stats) = fom_solve_steady(&pb, &r, &SolverOptions::default()).unwrap();
        assert_eq!(stats.iterations, vec![1]);
        for (i, &d) in pb.space.free_dofs().iter().enumerate() {
            let x = pb.space.mesh().vertex_coord(d);
            assert!((u.column(0)[i] - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_interpolation() {
        let pb = ProblemDef::skeleton(spec(2, None)).unwrap();
        let pts = ParamPoints::single(&[1.0], 0.0);
        let g = interpolate_dirichlet(&param_fn(|_, _, x| x[0]), &pts, &pb.space).unwrap();
        assert_eq!(g.len(), 8);
        for (k, &d) in pb.space.dirichlet_dofs().iter().enumerate() {
            assert_eq!(g.column(0)[k], pb.space.mesh().vertex_coord(d)[0]);
        }
        let z = interpolate_dirichlet(&constant_fn(0.0), &pts, &pb.space).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let mut pb = ProblemDef::skeleton(spec(3, Some((0.0, 0.1, 4)))).unwrap();
        pb.mass = Some(WeakFormKernel::mass(constant_fn(1.0)));
        let r = one_param(&pb, 1.0);
        let (u, _) = fom_solve_transient(&pb, &r, &SolverOptions::default()).unwrap();
        assert_eq!(u.dims(), vec![4, 4, 1]);
        assert!(u.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_dof_backward_euler_recursion() {
        // 2x2 mesh: one free dof at the centre
        let mut pb = ProblemDef::skeleton(spec(2, Some((0.0, 0.05, 6)))).unwrap();
        pb.mass = Some(WeakFormKernel::mass(constant_fn(1.0)));
        pb.source = WeakFormKernel::load(param_fn(|mu, t, _| mu[0] * (1.0 + t)));
        let r = one_param(&pb, 1.3);
        let (u, _) = fom_solve_transient(&pb, &r, &SolverOptions::default()).unwrap();
        let space = &pb.space;
        let pts = ParamPoints::single(&[1.3], 0.0);
        let m = crate::assembly::assemble_kernel(pb.mass.as_ref().unwrap(), &pts, space)
            .unwrap()
            .into_matrix()
            .unwrap()
            .param_values(0)[0];
        let k = crate::assembly::assemble_kernel(&pb.stiffness, &pts, space)
            .unwrap()
            .into_matrix()
            .unwrap()
            .param_values(0)[0];
        // load integrates the constant against the hat function of area 1/4
        let dt = 0.05;
        let mut w = 0.0;
        for n in 1..=6 {
            let f = 1.3 * (1.0 + n as f64 * dt) * 0.25;
            w = (m / dt * w + f) / (m / dt + k);
            assert!((u.data()[n - 1] - w).abs() < 1e-14 * w.abs().max(1.0));
        }
    }

    #[test]
    fn nonconvergence_reports_history() {
        let mut pb = ProblemDef::skeleton(spec(3, None)).unwrap();
        pb.reaction = Some(WeakFormKernel::reaction(constant_fn(1.0)));
        pb.source = WeakFormKernel::load(constant_fn(50.0));
        let r = one_param(&pb, 1.0);
        let err = fom_solve_steady(&pb, &r, &SolverOptions { tol: 1e-30, max_iter: 3 }).unwrap_err();
        match err {
            Error::AtParameter { param: 0, source } => match *source {
                Error::NonConvergence { iterations: 3, history, .. } => assert_eq!(history.len(), 3),
                e => panic!("unexpected {e:?}"),
            },
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn nonuniform_grid_is_rejected() {
        let mut pb = ProblemDef::skeleton(spec(2, Some((0.0, 0.1, 3)))).unwrap();
        pb.mass = Some(WeakFormKernel::mass(constant_fn(1.0)));
        let steady = Realization::from_params(&ParamSpace::new(vec![(1.0, 2.0)]).unwrap(), vec![vec![1.0]], None)
            .unwrap();
        assert!(matches!(
            fom_solve_transient(&pb, &steady, &SolverOptions::default()),
            Err(Error::Argument(_))
        ));
        let mut v = serde_json::to_value(&steady).unwrap();
        v["times"] = serde_json::json!([0.0, 0.1, 0.25, 0.3]);
        let r: Realization = serde_json::from_value(v).unwrap();
        assert!(matches!(
            fom_solve_transient(&pb, &r, &SolverOptions::default()),
            Err(Error::Argument(_))
        ));
    }
}
