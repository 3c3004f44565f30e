//! Draws a few parameter sets with every sampling strategy.

use romkit::param_space::{sample_realization, ParamSpace, Sampling};

fn main() -> romkit::error::Result<()> {
    let space = ParamSpace::new(vec![(1.0, 5.0), (0.0, 1.0)])?;
    for s in Sampling::ALL {
        let r = sample_realization(&space, 4, s, 42)?;
        println!("{}", s.name());
        for mu in r.params() {
            println!("  [{:.4}, {:.4}]", mu[0], mu[1]);
        }
    }
    Ok(())
}
