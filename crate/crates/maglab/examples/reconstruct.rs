//! Recovers a perturbed potential from noisy boundary traces, first by the
//! linearized initial-trace inversion and then by adjoint descent.

use maglab::carleman::{build_beta, compute_gamma_plus};
use maglab::grid::{Grid, C64};
use maglab::inverse::{
    adjoint_reconstruct, linearized_reconstruct, make_initial_family, make_potential_pair, region_error, simulate_observations, AdjointProblem,
    FamilyPreset, PairSpec, ReconstructOptions,
};
use maglab::run::recovery_error;

fn main() -> maglab::Result<()> {
    let g = Grid::new_1d(65, 1.0)?;
    let collar = g.collar_width();
    let spec = PairSpec { seed: 43, delta: 0.1, bound: 3.0, a0: vec![0.5], collar, t_final: 1.0, modes: 3 };
    let pair = make_potential_pair(&g, &spec)?;
    let fam = make_initial_family(&g, 2, FamilyPreset::Spanning, collar)?;
    let (gamma, _) = compute_gamma_plus(&build_beta(&g, &[-0.5], 2.0)?)?;
    let (obs, chains) = simulate_observations(&fam, &pair, &gamma, 128, 1e-3, 5)?;

    let y0: Vec<Vec<C64>> = chains.iter().map(|c| c.y0().to_vec()).collect();
    let lin = linearized_reconstruct(&g, &fam, &y0, pair.a.chi().deriv(1, 0.0))?;
    println!("linearized error on the interior region: {:.4}", region_error(&g, &fam.region, &lin.d, &pair.difference()));

    let problem = AdjointProblem::new(&pair.a, &fam, &obs, None)?;
    let rec = adjoint_reconstruct(&problem, pair.a.field(), &ReconstructOptions::default())?;
    for (k, (j, gn)) in rec.history.iter().zip(&rec.grad_norms).enumerate().step_by(20) {
        println!("iter {k:>3}  objective {j:.4e}  |grad| {gn:.3e}");
    }
    println!("adjoint relative error {:.4}, converged {}", recovery_error(&g, &pair, &rec.estimate), rec.converged);
    Ok(())
}
