//! Space-time basis of heat equation snapshots.

use romkit::fe::fom_solve_transient;
use romkit::param_space::{sample_realization, Sampling};
use romkit::problems::RunConfig;
use romkit::reduction::strb;
use romkit::rom::{inner_product_matrix, InnerProduct};

fn main() -> romkit::error::Result<()> {
    let cfg = RunConfig::heat2d();
    let pb = cfg.build_problem()?;
    let r = sample_realization(&pb, 10, Sampling::Halton, 0)?;
    let (u, _) = fom_solve_transient(&pb, &r, &cfg.solver_options())?;
    println!("snapshot tensor {:?}", u.dims());
    let x = inner_product_matrix(&pb.space, InnerProduct::H1)?;
    for tol in [1e-2, 1e-4, 1e-6] {
        let b = strb(&u, x.as_ref(), tol)?;
        let sv = b.spatial().singular_values();
        println!(
            "tol {tol:.0e}: ranks {:?}, leading spatial singular values {:.3e} {:.3e} {:.3e}",
            b.ranks(),
            sv[0],
            sv[1],
            sv[2]
        );
    }
    Ok(())
}
