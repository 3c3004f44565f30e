//! Greedy interpolation indices of a random basis.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use romkit::hyper::deim_indices;

fn main() -> romkit::error::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let phi = DMatrix::from_fn(40, 6, |_, _| StandardNormal.sample(&mut rng));
    let idx = deim_indices(&phi)?;
    println!("indices {idx:?}");
    let p = DMatrix::from_fn(idx.len(), phi.ncols(), |i, j| phi[(idx[i], j)]);
    println!("|det P^T Phi| = {:.4e}", p.determinant().abs());
    Ok(())
}
