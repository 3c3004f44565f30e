//! Reduced Newton solves of the cubic reaction problem.

use romkit::alloc::CountingAllocator;
use romkit::eval::eval_performance;
use romkit::fe::fom_solve_steady;
use romkit::param_space::{sample_realization, Sampling};
use romkit::problems::RunConfig;
use romkit::rom::{build_reduced_operator, inner_product_matrix, online_solve, reconstruct, InnerProduct};
use romkit::snapshots::SnapshotTensor;

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

fn main() -> romkit::error::Result<()> {
    let cfg = RunConfig::nonlinear_reaction2d();
    let pb = cfg.build_problem()?;
    let opts = cfg.solver_options();
    let (op, _) = build_reduced_operator(&cfg.reduction_config(), &pb, &opts)?;
    let r = sample_realization(&pb, 10, Sampling::Uniform, 7)?;
    let (sol, fom_stats) = fom_solve_steady(&pb, &r, &opts)?;
    let fom = SnapshotTensor::steady(sol.len(), r.nparams(), sol.into_values(), (&r).into())?;
    let on = online_solve(&op, &r, &opts)?;
    let rec = reconstruct(&op, &on.coords, &r)?;
    let x = inner_product_matrix(&pb.space, InnerProduct::H1)?;
    let rep = eval_performance(&fom_stats, &fom, &on.stats, &rec.free, x.as_ref(), serde_json::Value::Null)?;
    println!("rank {}, Newton iterations {:?}", op.rank(), on.stats.iterations);
    for (mu, e) in r.params().iter().zip(&rep.per_param_errors) {
        println!("  mu = [{:.3}, {:.3}]  error {e:.2e}", mu[0], mu[1]);
    }
    println!("time speedup {:.1}, memory speedup {:.1}", rep.speedup_time, rep.speedup_memory);
    Ok(())
}
