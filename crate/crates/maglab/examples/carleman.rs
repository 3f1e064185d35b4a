//! Certifies a Carleman weight centred outside the square and sweeps the
//! estimate ratio over s for a random time-symmetric field.

use maglab::carleman::{build_beta, check_carleman, compute_gamma_plus, random_space_time, verify_assumption};
use maglab::grid::Grid;
use maglab::rng::substream;

fn main() -> maglab::Result<()> {
    let g = Grid::new_2d(25, 25, 1.0, 1.0)?;
    let base = build_beta(&g, &[-0.5, -0.5], 2.0)?;
    let cert = verify_assumption(&base, 0.1);
    println!("C0 = {:.3}, epsilon = {:.3}, certificate passes: {}", cert.c0, cert.eps, cert.pass());
    let (gamma, _) = compute_gamma_plus(&base)?;
    println!("observed boundary: {} of {} nodes", gamma.nodes.len(), g.boundary().len());

    let q = random_space_time(&g, &mut substream(1, "carleman-example"), 1.0, 64);
    let rep = check_carleman(&base, &q, &gamma, &[1.0, 2.0, 4.0, 8.0, 16.0], &[0.1])?;
    for r in &rep.rows {
        println!("s = {:>4}  I = {:.3e}  bracket = {:.3e}  ratio = {:.4}", r.s, r.i, r.boundary + r.source, r.ratio);
    }
    println!("knee at s = {}, violations {}", rep.series(0.1)[rep.knee(0.1)].s, rep.violations());
    Ok(())
}
