//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use romkit::alloc::{measure, CountingAllocator};
use romkit::assembly::{assemble_batched, assemble_naive_reference, assemble_sampled, SamplePlan};
use romkit::eval::{eval_performance, orthonormality_defect};
use romkit::fe::solver::interpolate_free;
use romkit::fe::{
    build_mesh_and_space, constant_fn, fom_solve_steady, fom_solve_transient, interpolate_dirichlet, param_fn,
    CellEvaluator, DirichletTag, FESpaceDef, Form, NodalField, ParamPoints, ProblemDef, ProblemSpec, SolverOptions,
    Term, WeakFormKernel,
};
use romkit::hyper::{deim_indices, online_coefficients, online_reduced_term};
use romkit::param_space::{sample_realization, Realization, Sampling};
use romkit::problems::RunConfig;
use romkit::reduction::strb_detailed;
use romkit::rom::{
    build_reduced_operator, build_reduced_operator_with, inner_product_matrix, online_solve, reconstruct,
    space_time_system, InnerProduct, ReductionConfig,
};
use romkit::snapshots::{mode_reshape, SnapshotTensor};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

type Outcome = Result<String, String>;

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn heat_end_to_end() -> Outcome {
    let cfg = RunConfig::heat2d();
    let pb = cfg.build_problem().map_err(err)?;
    let opts = cfg.solver_options();
    let (op, _) = build_reduced_operator(&cfg.reduction_config(), &pb, &opts).map_err(err)?;
    let r = sample_realization(&pb, 10, Sampling::Uniform, 4242).map_err(err)?;
    let (fom, fom_stats) = fom_solve_transient(&pb, &r, &opts).map_err(err)?;
    let on = online_solve(&op, &r, &opts).map_err(err)?;
    let rec = reconstruct(&op, &on.coords, &r).map_err(err)?;
    let x = inner_product_matrix(&pb.space, InnerProduct::H1).map_err(err)?;
    let rep = eval_performance(&fom_stats, &fom, &on.stats, &rec.free, x.as_ref(), serde_json::Value::Null)
        .map_err(err)?;
    let line = format!(
        "error {:.3e}, su_time {:.1}, su_mem {:.1}, rank {}",
        rep.error,
        rep.speedup_time,
        rep.speedup_memory,
        op.rank()
    );
    check(rep.error <= 1e-3, format!("{line}: error above 1e-3"))?;
    check(rep.speedup_time >= 10.0, format!("{line}: su_time below 10"))?;
    check(rep.speedup_memory >= 5.0, format!("{line}: su_mem below 5"))?;
    Ok(line)
}

struct AssemblyCase {
    space: Arc<FESpaceDef>,
    label: String,
}

fn batched_equals_naive() -> Outcome {
    let mut cases = Vec::new();
    for n in [4usize, 32] {
        let (_, s) = build_mesh_and_space(&[(0.0, 1.0)], &[n], DirichletTag::Boundary).map_err(err)?;
        cases.push(AssemblyCase { space: s, label: format!("1D {n}") });
    }
    for n in [4usize, 16, 32] {
        let (_, s) =
            build_mesh_and_space(&[(0.0, 1.0), (0.0, 1.0)], &[n, n], DirichletTag::Boundary).map_err(err)?;
        cases.push(AssemblyCase { space: s, label: format!("2D {n}x{n}") });
    }
    let stiff = WeakFormKernel::stiffness(param_fn(|mu, _, x| mu[0] + mu[1] * x[0]));
    let mass = WeakFormKernel::mass(param_fn(|mu, _, x| 1.0 + mu[1] * x[x.len() - 1]));
    let load = WeakFormKernel::load(param_fn(|mu, _, x| mu[0] * x[0] - mu[1]));
    let react = WeakFormKernel::reaction(param_fn(|mu, _, _| mu[0]));
    let ps = [1usize, 2, 4, 8];
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in &cases {
        let space = &*case.space;
        let _ = space.pattern();
        let mut bytes: Vec<Vec<f64>> = vec![Vec::new(); 5];
        for &p in &ps {
            let params: Vec<Vec<f64>> = (0..p).map(|_| vec![rng.random_range(1.0..5.0), rng.random_range(1.0..5.0)]).collect();
            let flat: Vec<f64> = params.concat();
            let points = ParamPoints::new(2, flat, vec![0.0; p]).map_err(err)?;
            let free: Vec<f64> = (0..space.nfree() * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dir: Vec<f64> = (0..space.dirichlet_dofs().len() * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let field = NodalField::from_parts(space, &free, &dir, p);
            let forms = [
                ("stiffness", Form::matrix(&stiff)),
                ("mass", Form::matrix(&mass)),
                ("load", Form::vector(&load)),
                ("nonlinear", Form::Matrix(vec![Term::new(&react).with_field(&field)])),
                ("nonlinear_residual", Form::Vector(vec![Term::new(&react).with_field(&field)])),
            ];
            for (f, (name, form)) in forms.iter().enumerate() {
                let (b, bb) = {
                    let (res, _, bytes) = measure(|| assemble_batched(form, &points, space, None));
                    (res.map_err(err)?, bytes)
                };
                let (n, nb) = {
                    let (res, _, bytes) = measure(|| assemble_naive_reference(form, &points, space));
                    (res.map_err(err)?, bytes)
                };
                let d = rel(b.values(), n.values());
                worst = worst.max(d);
                check(d <= 1e-14, format!("{} P={p} {name}: relative difference {d:e}", case.label))?;
                if p >= 2 {
                    check(bb <= nb, format!("{} P={p} {name}: batched {bb} B > naive {nb} B", case.label))?;
                }
                bytes[f].push(bb as f64);
            }
        }
        for (f, b) in bytes.iter().enumerate() {
            let slope = (b[3] - b[0]) / 7.0;
            for (k, &p) in ps.iter().enumerate() {
                let fit = b[0] + slope * (p - 1) as f64;
                check(
                    (b[k] - fit).abs() <= 1e-9 * b[k],
                    format!("{} kernel {f}: allocation at P={p} is {} B, affine fit {fit}", case.label, b[k]),
                )?;
            }
        }
    }
    Ok(format!("{} meshes x P in {{1,2,4,8}} x 5 kernels, worst relative difference {worst:.1e}", cases.len()))
}

fn affine_problem() -> Result<ProblemDef, String> {
    let spec = ProblemSpec {
        name: "affine".into(),
        domain: vec![(0.0, 1.0), (0.0, 1.0)],
        cells: vec![6, 6],
        pdomain: vec![(1.0, 2.0), (0.5, 1.5)],
        tdomain: None,
        theta: 1.0,
    };
    let mut pb = ProblemDef::skeleton(spec).map_err(err)?;
    pb.stiffness = WeakFormKernel::stiffness(param_fn(|mu, _, x| mu[0] + mu[1] * x[0]));
    pb.source = WeakFormKernel::load(param_fn(|mu, _, x| mu[0] * x[1] + mu[1]));
    Ok(pb)
}

fn hyper_reduction_exactness() -> Outcome {
    let pb = affine_problem()?;
    let space = &*pb.space;
    let cfg = ReductionConfig {
        hr_tol: Some(1e-12),
        ..ReductionConfig::new(1e-10, 3, 3, 3)
    };
    let r = sample_realization(&pb, 3, Sampling::Halton, 11).map_err(err)?;
    let (op, _) = build_reduced_operator_with(&cfg, &pb, &r, None, &SolverOptions::default()).map_err(err)?;
    let (jac, res) = op.hyper_reductions();
    check(jac.nterms() == 2 && res.nterms() == 2, format!("terms {} / {}, expected 2 / 2", jac.nterms(), res.nterms()))?;
    let phi = op.trial().projection.spatial().basis().clone();
    let held = sample_realization(&pb, 4, Sampling::Uniform, 777).map_err(err)?;
    let mut worst = 0.0f64;
    for j in 0..held.nparams() {
        let pts = ParamPoints::single(held.param(j), 0.0);
        let a = assemble_batched(&Form::matrix(&pb.stiffness), &pts, space, None)
            .map_err(err)?
            .into_matrix()
            .map_err(err)?;
        let f = assemble_batched(&Form::vector(&pb.source), &pts, space, None)
            .map_err(err)?
            .into_vector()
            .map_err(err)?;
        let rho: Vec<f64> = f.values().iter().map(|v| -v).collect();

        let sampled_a: Vec<f64> = jac.indices().iter().map(|&g| a.values()[g]).collect();
        let ca = online_coefficients(jac, &sampled_a).map_err(err)?;
        let sampled_r: Vec<f64> = res.indices().iter().map(|&g| rho[g]).collect();
        let cr = online_coefficients(res, &sampled_r).map_err(err)?;

        let mut ev = CellEvaluator::new(space, &pts, &Form::matrix(&pb.stiffness)).map_err(err)?;
        let plan = SamplePlan::new(space, jac.entries()).map_err(err)?;
        let mut from_cells = vec![0.0; jac.nterms()];
        assemble_sampled(&mut ev, &plan, &mut from_cells).map_err(err)?;
        check(from_cells == sampled_a, "reduced-cell Jacobian entries differ from full assembly")?;
        let mut ev = CellEvaluator::new(space, &pts, &Form::vector(&pb.source)).map_err(err)?;
        let plan = SamplePlan::new(space, res.entries()).map_err(err)?;
        let mut from_cells = vec![0.0; res.nterms()];
        assemble_sampled(&mut ev, &plan, &mut from_cells).map_err(err)?;
        let expect: Vec<f64> = res.indices().iter().map(|&g| f.values()[g]).collect();
        check(from_cells == expect, "reduced-cell residual entries differ from full assembly")?;

        worst = worst.max(rel(&jac.expand(&ca), a.values()));
        worst = worst.max(rel(&res.expand(&cr), &rho));
        let am = a.matrix(0);
        let ar = phi.transpose() * am.mul_dense(&phi);
        let rr = phi.transpose() * DVector::from_vec(rho.clone());
        worst = worst.max(rel(online_reduced_term(jac, &ca).map_err(err)?.as_slice(), ar.as_slice()));
        worst = worst.max(rel(online_reduced_term(res, &cr).map_err(err)?.as_slice(), rr.as_slice()));
    }
    check(worst <= 1e-10, format!("held-out relative error {worst:e}"))?;
    Ok(format!("2-term Jacobian and residual, held-out relative error {worst:.1e}, reduced cells exact"))
}

fn brute_force_greedy(phi: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = phi.shape();
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for l in 0..m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in (0..n).filter(|i| !chosen.contains(i)) {
            let rows: Vec<usize> = chosen.iter().copied().chain([i]).collect();
            let sub = DMatrix::from_fn(l + 1, l + 1, |a, b| phi[(rows[a], b)]);
            let d = sub.determinant().abs();
            if d > best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

fn deim_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let rows = rng.random_range(8..=20);
        let cols = rng.random_range(1..=8.min(rows));
        let phi = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let got = deim_indices(&phi).map_err(err)?;
        let expect = brute_force_greedy(&phi);
        check(got == expect, format!("matrix {case} ({rows}x{cols}): {got:?} vs {expect:?}"))?;
    }
    Ok("50 random matrices up to 20x8 match index for index".into())
}

fn strb_invariants() -> Outcome {
    let cfg = RunConfig::heat2d();
    let pb = cfg.build_problem().map_err(err)?;
    let r = sample_realization(&pb, 12, Sampling::Halton, 3).map_err(err)?;
    let (snaps, _) = fom_solve_transient(&pb, &r, &SolverOptions::default()).map_err(err)?;
    let x = inner_product_matrix(&pb.space, InnerProduct::H1).map_err(err)?.expect("H1 norm");
    let u1 = mode_reshape(&snaps, 1).map_err(err)?;
    let mut summary = Vec::new();
    for tol in [1e-2, 1e-4] {
        let (tp, stages) = strb_detailed(&snaps, Some(&x), tol).map_err(err)?;
        let (phi1, phi2) = (tp.spatial().basis(), tp.temporal().basis());
        let d1 = orthonormality_defect(phi1, Some(&x));
        let d2 = orthonormality_defect(phi2, None);
        check(d1 <= 1e-10 && d2 <= 1e-10, format!("tol {tol}: orthonormality defects {d1:e}, {d2:e}"))?;
        let (n, nt) = (phi1.nrows(), phi2.nrows());
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..snaps.nparams() {
            let u = DMatrix::from_column_slice(n, nt, snaps.param_block(j));
            let w = phi1.transpose() * x.mul_dense(&u) * phi2;
            let diff = &u - phi1 * w * phi2.transpose();
            for k in 0..nt {
                num += x.quad_form(diff.column(k).as_slice());
                den += x.quad_form(u.column(k).as_slice());
            }
        }
        let e = (num / den).sqrt();
        check(e <= 2.0 * tol, format!("tol {tol}: training reconstruction error {e:e}"))?;
        let h = stages.h.as_ref().expect("weighted stage");
        let alt = stages.rescaled_spatial.transpose() * (h * &u1);
        let d = (&stages.contracted - &alt).amax() / stages.contracted.amax();
        check(d <= 1e-10, format!("tol {tol}: contraction identity off by {d:e}"))?;
        summary.push(format!("tol {tol:e}: ranks {:?}, error {e:.1e}", tp.ranks()));
    }
    Ok(summary.join("; "))
}

fn small_heat(cells: usize, nt: usize) -> Result<RunConfig, String> {
    let cfg = RunConfig {
        cells: vec![cells, cells],
        tdomain: Some((0.0, 0.02, nt)),
        nparams: 4,
        nparams_res: 4,
        nparams_jac: 1,
        tol: 1e-10,
        hr_tol: Some(1e-12),
        ..RunConfig::heat2d()
    };
    cfg.validate().map_err(err)?;
    Ok(cfg)
}

/// Free/Dirichlet nodal data of `ū_n = [0; g(t_n)]` (`ū_0 = [u0; g(t_0)]`) for one parameter.
fn lifted_state(pb: &ProblemDef, mu: &[f64], t: f64, initial: bool) -> Result<(Vec<f64>, Vec<f64>), String> {
    let r = Realization::from_params(pb.param_space(), vec![mu.to_vec()], None).map_err(err)?;
    let pts = ParamPoints::at_time(&r, t);
    let g = interpolate_dirichlet(&pb.dirichlet, &pts, &pb.space).map_err(err)?.into_values();
    let free = if initial {
        interpolate_free(&pb.initial, &pts, &pb.space).map_err(err)?.into_values()
    } else {
        vec![0.0; pb.space.nfree()]
    };
    Ok((free, g))
}

/// Explicit backward-Euler block system `(K, ρ)` of all steps for one parameter.
fn explicit_block_system(pb: &ProblemDef, mu: &[f64], times: &[f64]) -> Result<(DMatrix<f64>, DVector<f64>), String> {
    let space = &*pb.space;
    let n = space.nfree();
    let nt = times.len() - 1;
    let dt = (times[nt] - times[0]) / nt as f64;
    let mass = pb.mass.as_ref().expect("transient problem");
    let mut k = DMatrix::zeros(n * nt, n * nt);
    let mut rho = DVector::zeros(n * nt);
    let m = assemble_batched(&Form::matrix(mass), &ParamPoints::single(mu, times[0]), space, None)
        .map_err(err)?
        .into_matrix()
        .map_err(err)?
        .matrix(0)
        .to_dense();
    let mut prev = lifted_state(pb, mu, times[0], true)?;
    for step in 1..=nt {
        let pts = ParamPoints::single(mu, times[step]);
        let a = assemble_batched(&Form::matrix(&pb.stiffness), &pts, space, None)
            .map_err(err)?
            .into_matrix()
            .map_err(err)?
            .matrix(0)
            .to_dense();
        let b = step - 1;
        k.view_mut((b * n, b * n), (n, n)).copy_from(&(&m / dt + a));
        if step > 1 {
            k.view_mut((b * n, (b - 1) * n), (n, n)).copy_from(&(-&m / dt));
        }
        let cur = lifted_state(pb, mu, times[step], false)?;
        let fc = NodalField::from_parts(space, &cur.0, &cur.1, 1);
        let fp = NodalField::from_parts(space, &prev.0, &prev.1, 1);
        let form = Form::Vector(vec![
            Term::scaled(mass, 1.0 / dt).with_field(&fc),
            Term::scaled(mass, -1.0 / dt).with_field(&fp),
            Term::new(&pb.stiffness).with_field(&fc),
            Term::scaled(&pb.source, -1.0),
        ]);
        let v = assemble_batched(&form, &pts, space, None).map_err(err)?.into_vector().map_err(err)?;
        rho.rows_mut(b * n, n).copy_from_slice(v.values());
        prev = cur;
    }
    Ok((k, rho))
}

fn space_time_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for (cells, nt) in [(3usize, 4usize), (5, 6)] {
        let cfg = small_heat(cells, nt)?;
        let pb = cfg.build_problem().map_err(err)?;
        let (op, _) = build_reduced_operator(&cfg.reduction_config(), &pb, &cfg.solver_options()).map_err(err)?;
        let times = pb.time_grid().expect("transient").to_vec();
        let kb = match &op.trial().projection {
            romkit::rom::RbProjection::SpaceTime(tp) => tp.kron_basis(),
            _ => return Err("space-time basis expected".into()),
        };
        let held = sample_realization(&pb, 3, Sampling::Uniform, 31).map_err(err)?;
        for j in 0..held.nparams() {
            let mu = held.param(j);
            let (k, rho) = explicit_block_system(&pb, mu, &times)?;
            let (fom, _) = fom_solve_transient(&pb, &held.truncated(j + 1), &SolverOptions::default()).map_err(err)?;
            let direct = k.clone().lu().solve(&(-&rho)).ok_or("singular block system")?;
            let d = rel(direct.as_slice(), fom.param_block(j));
            check(d <= 1e-10, format!("block system disagrees with the time-marching solver ({d:e})"))?;
            let lhs_bf = kb.transpose() * &k * &kb;
            let rhs_bf = -(kb.transpose() * &rho);
            let (lhs, rhs) = space_time_system(&op, mu, &times).map_err(err)?;
            let dl = rel(lhs.as_slice(), lhs_bf.as_slice());
            let dr = rel(rhs.as_slice(), rhs_bf.as_slice());
            worst = worst.max(dl).max(dr);
            check(dl <= 1e-9 && dr <= 1e-9, format!("{cells}x{cells}, N_t={nt}: LHS {dl:e}, RHS {dr:e}"))?;
        }
    }
    Ok(format!("3x3/N_t=4 and 5x5/N_t=6, worst relative difference {worst:.1e}"))
}

fn nonlinear_path() -> Outcome {
    let cfg = RunConfig::nonlinear_reaction2d();
    let pb = cfg.build_problem().map_err(err)?;
    let opts = cfg.solver_options();
    let (op, _) = build_reduced_operator(&cfg.reduction_config(), &pb, &opts).map_err(err)?;
    let r = sample_realization(&pb, 10, Sampling::Uniform, 4242).map_err(err)?;
    let (sol, fom_stats) = fom_solve_steady(&pb, &r, &opts).map_err(err)?;
    let fom = SnapshotTensor::steady(sol.len(), r.nparams(), sol.into_values(), (&r).into()).map_err(err)?;
    let on = online_solve(&op, &r, &opts).map_err(err)?;
    let rec = reconstruct(&op, &on.coords, &r).map_err(err)?;
    let x = inner_product_matrix(&pb.space, InnerProduct::H1).map_err(err)?;
    let rep = eval_performance(&fom_stats, &fom, &on.stats, &rec.free, x.as_ref(), serde_json::Value::Null)
        .map_err(err)?;
    let max_it = on.stats.iterations.iter().copied().max().unwrap_or(0);
    let max_err = rep.per_param_errors.iter().copied().fold(0.0, f64::max);
    let line = format!("max Newton iterations {max_it}, mean error {:.2e}, max error {max_err:.2e}", rep.error);
    check(max_it <= 10, format!("{line}: too many iterations"))?;
    check(max_err <= 10.0 * cfg.tol, format!("{line}: error above 10 tol"))?;
    Ok(line)
}

fn patch_test() -> Result<f64, String> {
    let spec = ProblemSpec {
        name: "patch".into(),
        domain: vec![(0.0, 2.0), (-1.0, 0.5)],
        cells: vec![5, 3],
        pdomain: vec![(1.0, 2.0)],
        tdomain: None,
        theta: 1.0,
    };
    let mut pb = ProblemDef::skeleton(spec).map_err(err)?;
    let exact = |mu: &[f64], x: &[f64]| 1.0 + 2.0 * x[0] - 3.0 * mu[0] * x[1] + 0.5 * x[0] * x[1];
    pb.stiffness = WeakFormKernel::stiffness(constant_fn(2.5));
    pb.dirichlet = param_fn(move |mu, _, x| exact(mu, x));
    let r = sample_realization(&pb, 3, Sampling::Uniform, 1).map_err(err)?;
    let (sol, _) = fom_solve_steady(&pb, &r, &SolverOptions::default()).map_err(err)?;
    let space = &*pb.space;
    let mut worst = 0.0f64;
    for j in 0..r.nparams() {
        for (i, &d) in space.free_dofs().iter().enumerate() {
            let x = space.mesh().vertex_coord(d);
            worst = worst.max((sol.column(j)[i] - exact(r.param(j), &x)).abs());
        }
    }
    Ok(worst)
}

fn theta_error(theta: f64, nsteps: usize) -> Result<f64, String> {
    let spec = ProblemSpec {
        name: "theta".into(),
        domain: vec![(0.0, 1.0), (0.0, 1.0)],
        cells: vec![4, 4],
        pdomain: vec![(1.0, 2.0)],
        tdomain: Some((0.0, 1.0 / nsteps as f64, nsteps)),
        theta,
    };
    let mut pb = ProblemDef::skeleton(spec).map_err(err)?;
    pb.mass = Some(WeakFormKernel::mass(constant_fn(1.0)));
    pb.dirichlet = param_fn(|mu, t, x| (mu[0] * t).sin() * (1.0 + x[0] + 2.0 * x[1]));
    pb.source = WeakFormKernel::load(param_fn(|mu, t, x| mu[0] * (mu[0] * t).cos() * (1.0 + x[0] + 2.0 * x[1])));
    let r = Realization::from_params(pb.param_space(), vec![vec![2.0]], pb.time_grid().map(<[f64]>::to_vec))
        .map_err(err)?;
    let (sol, _) = fom_solve_transient(&pb, &r, &SolverOptions::default()).map_err(err)?;
    let space = &*pb.space;
    let n = space.nfree();
    let last = &sol.param_block(0)[(nsteps - 1) * n..nsteps * n];
    let g = &pb.dirichlet;
    Ok(space
        .free_dofs()
        .iter()
        .zip(last)
        .map(|(&d, u)| (u - g(&[2.0], 1.0, &space.mesh().vertex_coord(d))).abs())
        .fold(0.0, f64::max))
}

fn fom_correctness() -> Outcome {
    let patch = patch_test()?;
    check(patch <= 1e-12, format!("patch test error {patch:e}"))?;
    let mut parts = vec![format!("patch error {patch:.1e}")];
    for (theta, order) in [(1.0, 1.0), (0.5, 2.0)] {
        let errs = [10usize, 20, 40]
            .iter()
            .map(|&n| theta_error(theta, n))
            .collect::<Result<Vec<_>, _>>()?;
        let slopes = [(errs[0] / errs[1]).log2(), (errs[1] / errs[2]).log2()];
        for s in slopes {
            check(
                (s - order).abs() <= 0.15 * order,
                format!("theta {theta}: observed orders {slopes:?}, nominal {order}"),
            )?;
        }
        parts.push(format!("theta {theta}: orders {:.2}, {:.2}", slopes[0], slopes[1]));
    }
    Ok(parts.join("; "))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("heat equation end-to-end", 60.0, heat_end_to_end),
        ("batched equals naive assembly", 30.0, batched_equals_naive),
        ("hyper-reduction exactness", 10.0, hyper_reduction_exactness),
        ("DEIM brute-force oracle", 5.0, deim_oracle),
        ("space-time basis invariants", 10.0, strb_invariants),
        ("space-time Galerkin equivalence", 10.0, space_time_equivalence),
        ("nonlinear steady path", 20.0, nonlinear_path),
        ("full-order model correctness", 20.0, fom_correctness),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let out = run();
        let secs = t0.elapsed().as_secs_f64();
        let out = match out {
            Ok(s) if secs > *budget => Err(format!("{s}; took {secs:.2} s, budget {budget} s")),
            other => other,
        };
        match out {
            Ok(s) => println!("PASS criterion {} ({name}): {s} [{secs:.2} s]", k + 1),
            Err(s) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {s} [{secs:.2} s]", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
