//! Propagates a sine mode under a divergence-free potential on a 2D grid and
//! prints the charge and energy-like norms every few steps.

use maglab::grid::{Grid, C64};
use maglab::hamiltonian::solve_ibvp;
use maglab::inverse::{make_potential_pair, PairSpec};
use std::f64::consts::PI;

fn main() -> maglab::Result<()> {
    let g = Grid::new_2d(33, 33, 1.0, 1.0)?;
    let spec = PairSpec { seed: 7, delta: 0.0, bound: 3.0, a0: vec![0.5, -0.25], collar: g.collar_width(), t_final: 1.0, modes: 3 };
    let p = make_potential_pair(&g, &spec)?.a;
    let u0 = g.sample(|x| C64::new((PI * x[0]).sin() * (2.0 * PI * x[1]).sin(), 0.0));
    let traj = solve_ibvp(&p, &u0, None, 1.0, 128)?;
    println!("gauge {:?}, sup |a| = {:.3}", p.gauge(), p.field().sup_norm());
    for k in (0..=128).step_by(16) {
        let u = &traj.snaps[k];
        let q = maglab::grid::inner(u, u, &g).re;
        println!("t = {:.3}  charge = {:.12}", traj.time(k), q);
    }
    println!("charge drift {:.2e}", traj.charge_drift(&g));
    Ok(())
}
