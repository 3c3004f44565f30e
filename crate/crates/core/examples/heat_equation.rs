//! Offline and online phases of the transient heat problem.

use romkit::alloc::CountingAllocator;
use romkit::eval::eval_performance;
use romkit::fe::fom_solve_transient;
use romkit::param_space::{sample_realization, Sampling};
use romkit::problems::RunConfig;
use romkit::rom::{build_reduced_operator, inner_product_matrix, online_solve, reconstruct, InnerProduct, ReducedOperator};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

fn main() -> romkit::error::Result<()> {
    let cfg = RunConfig::heat2d();
    let pb = cfg.build_problem()?;
    let opts = cfg.solver_options();
    let (op, offline) = build_reduced_operator(&cfg.reduction_config(), &pb, &opts)?;
    println!("offline: rank {}, {:.2} s", op.rank(), offline.wall_ns as f64 * 1e-9);

    let path = std::env::temp_dir().join("heat_equation_example.rbop");
    op.save(&path)?;
    let op = ReducedOperator::load(&path, &pb, Some(&cfg.reduction_config()))?;

    let r = sample_realization(&pb, 10, Sampling::Uniform, 7)?;
    let (fom, fom_stats) = fom_solve_transient(&pb, &r, &opts)?;
    let on = online_solve(&op, &r, &opts)?;
    let rec = reconstruct(&op, &on.coords, &r)?;
    let x = inner_product_matrix(&pb.space, InnerProduct::H1)?;
    let rep = eval_performance(&fom_stats, &fom, &on.stats, &rec.free, x.as_ref(), serde_json::Value::Null)?;
    println!(
        "error {:.3e}, time speedup {:.1}, memory speedup {:.1}",
        rep.error, rep.speedup_time, rep.speedup_memory
    );
    Ok(())
}
