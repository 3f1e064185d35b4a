//! Samples potential pairs at two perturbation sizes and prints the ratio of
//! the potential difference to the boundary data it produces.

use maglab::carleman::{build_beta, compute_gamma_plus};
use maglab::grid::Grid;
use maglab::inverse::{make_initial_family, make_potential_pair, simulate_observations, stability_ratio, FamilyPreset, PairSpec};

fn main() -> maglab::Result<()> {
    let g = Grid::new_1d(65, 1.0)?;
    let collar = g.collar_width();
    let fam = make_initial_family(&g, 2, FamilyPreset::Spanning, collar)?;
    let (gamma, _) = compute_gamma_plus(&build_beta(&g, &[-0.5], 2.0)?)?;
    println!("family mu = {:.3}", fam.mu);
    for delta in [0.1, 0.01] {
        for seed in 0..5 {
            let spec = PairSpec { seed, delta, bound: 3.0, a0: vec![0.5], collar, t_final: 1.0, modes: 3 };
            let pair = make_potential_pair(&g, &spec)?;
            let (obs, _) = simulate_observations(&fam, &pair, &gamma, 64, 0.0, seed)?;
            let r = stability_ratio(&pair, &obs, seed);
            println!("delta {delta:<5} seed {seed}  |d|^2 = {:.3e}  data = {:.3e}  R_lin = {:.3e}", r.d_sq, r.numerator, r.r_lin);
        }
    }
    Ok(())
}
