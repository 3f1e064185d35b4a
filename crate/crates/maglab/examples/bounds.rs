//! Checks the a priori bounds (charge, energy, time derivatives, B_j symmetry
//! and the operator chain) for one random sourced problem.

use maglab::diagnostics::{
    check_bj_symmetry, check_charge_bound, check_derivative_bounds, check_energy_bound, check_operator_bound, check_triangle_chain,
    SeparableSource,
};
use maglab::grid::Grid;
use maglab::hamiltonian::{solve_derivative_systems, solve_ibvp};
use maglab::inverse::{make_potential_pair, PairSpec};
use maglab::rng::{smooth_complex, substream};

fn main() -> maglab::Result<()> {
    let (t_final, nt) = (1.0, 64);
    let g = Grid::new_2d(25, 25, 1.0, 1.0)?;
    let spec = PairSpec { seed: 3, delta: 0.0, bound: 3.0, a0: vec![0.3, 0.2], collar: g.collar_width(), t_final, modes: 3 };
    let p = make_potential_pair(&g, &spec)?.a;
    let mut rng = substream(11, "bounds-example");
    let u0 = smooth_complex(&g, &mut rng, 4);
    let src = SeparableSource::random(&g, &mut rng, 2, 5.0);
    let f_mid = src.midpoints(t_final, nt);
    let traj = solve_ibvp(&p, &u0, Some(&f_mid), t_final, nt)?;

    let mut reps = vec![check_charge_bound(&g, &traj, &u0, Some(&f_mid))];
    reps.push(check_energy_bound(&g, &traj, &u0, Some((&src.nodes(t_final, nt), &src.nodes_dt(t_final, nt))))?);
    reps.extend(check_derivative_bounds(&g, &solve_derivative_systems(&p, &u0, t_final, nt)?, &u0)?);
    reps.push(check_bj_symmetry(&p, 0.5, 10, &mut rng));
    reps.push(check_triangle_chain(&p, 0.5, &u0)?);
    for j in 1..=3 {
        reps.push(check_operator_bound(&p, j, 0.5, &u0)?);
    }
    for r in &reps {
        println!("{:<40} lhs {:>11.4e}  rhs {:>11.4e}  ratio {:.3}  {}", r.name, r.lhs, r.rhs, r.ratio(), if r.pass { "ok" } else { "FAIL" });
    }
    Ok(())
}
