//! Sweeps the Klibanov-type pointwise estimate over s and checks the weight
//! stays above its floor.

use maglab::carleman::{build_beta, check_klibanov, random_space_time};
use maglab::grid::Grid;
use maglab::rng::substream;

fn main() -> maglab::Result<()> {
    let g = Grid::new_1d(129, 1.0)?;
    let base = build_beta(&g, &[-0.5], 2.0)?;
    let p = random_space_time(&g, &mut substream(2, "klibanov-example"), 1.0, 64);
    let rep = check_klibanov(&base, 0.1, &p, &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0])?;
    for r in &rep.rows {
        println!("s = {:>4}  lhs = {:.3e}  rhs = {:.3e}  s*lhs/rhs = {:.4}", r.s, r.lhs, r.rhs, r.scaled);
    }
    println!("alpha min {:.4e} vs floor {:.4e}: {}", rep.alpha_min, rep.alpha_floor, if rep.alpha_ok { "ok" } else { "below" });
    Ok(())
}
