mod common;

use common::random_potential;
use maglab::diagnostics::*;
use maglab::grid::{h1_norm, l2_norm, Grid};
use maglab::hamiltonian::{solve_derivative_systems, solve_ibvp, MagneticPotential, TimeProfile};
use maglab::rng::{smooth_complex, substream, sym};
use maglab::C64;
use std::f64::consts::PI;

fn const_potential(g: &Grid, c: f64) -> MagneticPotential {
    MagneticPotential::constant(g, &[c], TimeProfile::default_for(1.0), 1.0).unwrap()
}

#[test]
fn charge_bound_without_source_is_unitary() {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let p = const_potential(&g, 0.9);
    let u0 = smooth_complex(&g, &mut substream(1, "u0"), 4);
    let traj = solve_ibvp(&p, &u0, None, 1.0, 64).unwrap();
    let r = check_charge_bound(&g, &traj, &u0, None);
    let n0 = l2_norm(&u0, &g);
    assert!(r.pass);
    assert!((r.lhs - n0).abs() < 1e-10 * n0);
    assert!((r.margin - (0.5f64.exp() - 1.0) * n0).abs() < 1e-9 * n0);
}

#[test]
fn charge_bound_zero_data() {
    let g = Grid::new_1d(33, 1.0).unwrap();
    let p = const_potential(&g, 0.5);
    let z = vec![C64::new(0.0, 0.0); g.nodes()];
    let traj = solve_ibvp(&p, &z, None, 1.0, 16).unwrap();
    let r = check_charge_bound(&g, &traj, &z, None);
    assert_eq!((r.lhs, r.rhs, r.pass), (0.0, 0.0, true));
}

#[test]
fn charge_bound_ensemble() {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let mut rng = substream(2, "charge");
    for _ in 0..20 {
        let p = const_potential(&g, 2.0 * sym(&mut rng));
        let u0 = smooth_complex(&g, &mut rng, 4);
        let f = SeparableSource::random(&g, &mut rng, 2, 5.0).midpoints(1.0, 128);
        let traj = solve_ibvp(&p, &u0, Some(&f), 1.0, 128).unwrap();
        let r = check_charge_bound(&g, &traj, &u0, Some(&f));
        assert!(r.pass, "{r:?}");
    }
}

#[test]
fn energy_ratio_zero_data() {
    let g = Grid::new_1d(33, 1.0).unwrap();
    let p = const_potential(&g, 0.5);
    let z = vec![C64::new(0.0, 0.0); g.nodes()];
    let traj = solve_ibvp(&p, &z, None, 1.0, 16).unwrap();
    assert_eq!(check_energy_bound(&g, &traj, &z, None).unwrap().ratio(), 0.0);
}

#[test]
fn energy_constant_is_grid_independent() {
    let ratio = |n: usize, nt: usize| {
        let g = Grid::new_1d(n, 1.0).unwrap();
        let p = const_potential(&g, 1.2);
        let u0 = g.sample(|x| C64::new((PI * x[0]).sin() + 0.3 * (3.0 * PI * x[0]).sin(), 0.0));
        let traj = solve_ibvp(&p, &u0, None, 1.0, nt).unwrap();
        check_energy_bound(&g, &traj, &u0, None).unwrap().ratio()
    };
    let r: Vec<f64> = [(33, 64), (65, 128), (129, 256)].iter().map(|&(n, nt)| ratio(n, nt)).collect();
    let (lo, hi) = (r.iter().cloned().fold(f64::MAX, f64::min), r.iter().cloned().fold(0.0, f64::max));
    assert!(hi / lo < 1.2, "{r:?}");
}

#[test]
fn energy_ensemble_is_bounded() {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let mut rng = substream(3, "energy");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let p = const_potential(&g, 2.0 * sym(&mut rng));
        let u0 = smooth_complex(&g, &mut rng, 4);
        let src = SeparableSource::random(&g, &mut rng, 2, 5.0);
        let traj = solve_ibvp(&p, &u0, Some(&src.midpoints(1.0, 128)), 1.0, 128).unwrap();
        let (f, df) = (src.nodes(1.0, 128), src.nodes_dt(1.0, 128));
        let r = check_energy_bound(&g, &traj, &u0, Some((&f, &df))).unwrap();
        assert!(r.pass);
        worst = worst.max(r.ratio());
    }
    assert!(worst.is_finite() && worst > 0.0);
}

#[test]
fn dual_norm_of_an_eigenmode() {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let u = g.sample(|x| C64::new((2.0 * PI * x[0]).sin(), 0.0));
    let h = g.h();
    let mu = 4.0 / (h * h) * (PI * h).sin().powi(2);
    let z = DualNorm::new(&g).unwrap().riesz(&u).unwrap();
    for q in g.interior() {
        assert!((z[*q] - u[*q] / (1.0 + mu)).norm() < 1e-12);
    }
}

#[test]
fn derivative_bounds_on_an_eigenmode() {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let p = const_potential(&g, 0.0);
    let u0 = g.sample(|x| C64::new((PI * x[0]).sin(), 0.0));
    let h = g.h();
    let mu = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
    let sol = solve_derivative_systems(&p, &u0, 1.0, 64).unwrap();
    let r = check_derivative_bounds(&g, &sol, &u0).unwrap();
    assert!((r[0].ratio() - 1.0).abs() < 1e-10);
    assert!((r[1].ratio() - mu / (1.0 + mu)).abs() < 1e-10);
    assert!(r[1].ratio() < 1.0);
    assert!((r[2].ratio() - mu * mu / (1.0 + mu + mu * mu)).abs() < 1e-8);
}

#[test]
fn derivative_bounds_zero_data() {
    let g = Grid::new_1d(33, 1.0).unwrap();
    let p = const_potential(&g, 1.0);
    let z = vec![C64::new(0.0, 0.0); g.nodes()];
    let sol = solve_derivative_systems(&p, &z, 1.0, 8).unwrap();
    assert!(check_derivative_bounds(&g, &sol, &z).unwrap().iter().all(|r| r.lhs == 0.0 && r.ratio() == 0.0));
}

#[test]
fn derivative_constants_stable_under_time_refinement() {
    let g = Grid::new_2d(25, 25, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 4, 2.0, &[0.3, 0.2], 1.0);
    let u0 = g.sample(|x| C64::new((PI * x[0]).sin() * (PI * x[1]).sin(), 0.0));
    let run = |nt| {
        let sol = solve_derivative_systems(&p, &u0, 1.0, nt).unwrap();
        check_derivative_bounds(&g, &sol, &u0).unwrap().iter().map(|r| r.ratio()).collect::<Vec<_>>()
    };
    let (a, b) = (run(64), run(128));
    for j in 0..3 {
        assert!(a[j].is_finite() && (a[j] / b[j] - 1.0).abs() < 0.1, "{a:?} {b:?}");
    }
}

#[test]
fn symmetry_report() {
    let g = Grid::new_1d(129, 1.0).unwrap();
    let mut rng = substream(5, "sym");
    let p = const_potential(&g, 1.3);
    let r = check_bj_symmetry(&p, 0.4, 50, &mut rng);
    assert!(r.pass, "{r:?}");
    assert!(r.constants[0].1 <= 1e-10);
    let z = const_potential(&g, 0.0);
    assert_eq!(check_bj_symmetry(&z, 0.4, 3, &mut rng).lhs, 0.0);
    let g2 = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p2 = random_potential(&g2, 5, 2.0, &[0.2, -0.1], 1.0);
    assert!(check_bj_symmetry(&p2, 0.7, 10, &mut rng).pass);
}

#[test]
fn operator_inequalities_hold_samplewise() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 6, 2.0, &[0.4, 0.4], 1.0);
    let mut rng = substream(6, "u");
    for s in 0..20 {
        let u = smooth_complex(&g, &mut rng, 4);
        let t = s as f64 / 19.0;
        assert!(check_triangle_chain(&p, t, &u).unwrap().pass);
        for j in 1..=3 {
            assert!(check_operator_bound(&p, j, t, &u).unwrap().pass);
        }
    }
    assert!(h1_norm(&smooth_complex(&g, &mut rng, 2), &g) > 0.0);
}

#[test]
fn reports_csv() {
    let r = BoundReport::explicit("charge", 1.0, 2.0, Vec::new());
    let mut buf = Vec::new();
    write_reports_csv(&mut buf, &[("run-0".into(), r)]).unwrap();
    let s = String::from_utf8(buf).unwrap();
    assert_eq!(s.lines().count(), 2);
    assert!(s.lines().nth(1).unwrap().starts_with("run-0,charge,1e0,2e0,5e-1,true"));
}
