mod common;

use common::{random_potential, rel_err};
use maglab::grid::{self, gradient, inner, l2_norm, laplacian, Grid};
use maglab::hamiltonian::*;
use maglab::rng::{smooth_complex, substream};
use maglab::{Error, VectorField, C64};
use std::f64::consts::PI;

fn zero_potential(g: &Grid, t: f64) -> MagneticPotential {
    MagneticPotential::constant(g, &vec![0.0; g.dim()], TimeProfile::default_for(t), t).unwrap()
}

fn neg_lap(u: &[C64], g: &Grid) -> Vec<C64> {
    laplacian(u, g).unwrap().iter().map(|v| -v).collect()
}

fn dirichlet_mode(g: &Grid, k: usize) -> (Vec<C64>, f64) {
    let u = g.sample(|x| C64::new((k as f64 * PI * x[0]).sin(), 0.0));
    let h = g.h();
    (u, 4.0 / (h * h) * (k as f64 * PI * h / 2.0).sin().powi(2))
}

#[test]
fn free_hamiltonian_is_minus_laplacian() {
    let g = Grid::new_2d(17, 17, 1.0, 1.0).unwrap();
    let p = zero_potential(&g, 1.0);
    let u = smooth_complex(&g, &mut substream(1, "u"), 3);
    assert!(rel_err(&p.apply_h(0.37, &u), &neg_lap(&u, &g)) < 1e-14);
}

#[test]
fn hamiltonian_at_time_zero_ignores_potential() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 3, 1.5, &[0.4, -0.2], 1.0);
    let u = smooth_complex(&g, &mut substream(2, "u"), 4);
    assert!(rel_err(&p.apply_h(0.0, &u), &neg_lap(&u, &g)) < 1e-13);
}

#[test]
fn constant_potential_matches_closed_form() {
    let c = 0.8;
    let err = |n: usize| {
        let g = Grid::new_1d(n, 1.0).unwrap();
        let p = MagneticPotential::constant(&g, &[c], TimeProfile::default_for(1.0), 1.0).unwrap();
        let u = g.sample(|x| C64::new((PI * x[0]).sin(), 0.0));
        let exact = g.sample(|x| C64::new((PI * PI + c * c) * (PI * x[0]).sin(), 2.0 * c * PI * (PI * x[0]).cos()));
        // χ(T) = 1 for the default profile.
        let hu = p.apply_h(1.0, &u);
        let d: Vec<C64> = g.interior().iter().map(|&q| hu[q] - exact[q]).collect();
        d.iter().map(|v| v.norm()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(65), err(129));
    assert!(e1 < 1e-2, "{e1}");
    assert!((3.5..4.5).contains(&(e1 / e2)), "{}", e1 / e2);
}

#[test]
fn hamiltonian_is_self_adjoint() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 4, 2.0, &[0.3, 0.1], 1.0);
    let mut rng = substream(4, "pairs");
    for _ in 0..10 {
        let u = smooth_complex(&g, &mut rng, 5);
        let v = smooth_complex(&g, &mut rng, 5);
        let t = 0.61;
        let lhs = inner(&p.apply_h(t, &u), &v, &g);
        let rhs = inner(&u, &p.apply_h(t, &v), &g);
        assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }
}

#[test]
fn b_operators_vanish_with_profile_derivative_or_potential() {
    let g = Grid::new_1d(33, 1.0).unwrap();
    let u = smooth_complex(&g, &mut substream(5, "u"), 3);
    let p = MagneticPotential::constant(&g, &[0.5], TimeProfile::default_for(1.0), 1.0).unwrap();
    // χ′(T) = cos(π/2) = 0 up to rounding.
    let b = p.apply_b(1, 1.0, &u).unwrap();
    assert!(l2_norm(&b, &g) < 1e-14);
    let z = zero_potential(&g, 1.0);
    for j in 1..=3 {
        assert!(z.apply_b(j, 0.4, &u).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(z.apply_h_deriv(j, 0.4, &u).unwrap().iter().all(|v| v.norm() == 0.0));
    }
    assert!(matches!(p.apply_b(4, 0.1, &u), Err(Error::Domain(_))));
}

#[test]
fn first_derivative_is_twice_b1() {
    let g = Grid::new_2d(25, 25, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 6, 1.0, &[0.2, 0.2], 1.0);
    let u = smooth_complex(&g, &mut substream(6, "u"), 4);
    let b: Vec<C64> = p.apply_b(1, 0.3, &u).unwrap().iter().map(|v| v * 2.0).collect();
    assert!(rel_err(&p.apply_h_deriv(1, 0.3, &u).unwrap(), &b) < 1e-14);
}

#[test]
fn b_and_derivative_operators_are_symmetric() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 7, 1.5, &[0.5, 0.0], 1.0);
    let mut rng = substream(7, "pairs");
    for _ in 0..10 {
        let u = smooth_complex(&g, &mut rng, 4);
        let v = smooth_complex(&g, &mut rng, 4);
        let den = grid::h1_norm(&u, &g) * grid::h1_norm(&v, &g);
        for j in 1..=3 {
            for op in [Op::B(j), Op::Deriv(j)] {
                let ap = |w: &[C64]| match op {
                    Op::B(j) => p.apply_b(j, 0.45, w).unwrap(),
                    _ => p.apply_h_deriv(j, 0.45, w).unwrap(),
                };
                let d = inner(&ap(&u), &v, &g) - inner(&u, &ap(&v), &g);
                assert!(d.norm() / den <= 1e-8, "{op:?} {}", d.norm() / den);
            }
        }
        let bu = p.apply_b(2, 0.45, &u).unwrap();
        assert!(inner(&bu, &u, &g).im.abs() <= 1e-10 * grid::h1_norm(&u, &g).powi(2));
    }
}

#[test]
fn derivative_operators_obey_operator_norm_bound() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 8, 2.0, &[0.3, 0.3], 1.0);
    let k = p.constants();
    let mut rng = substream(8, "u");
    for s in 0..50 {
        let u = smooth_complex(&g, &mut rng, 6);
        let t = s as f64 / 49.0;
        for j in 1..=3 {
            let lhs = l2_norm(&p.apply_h_deriv(j, t, &u).unwrap(), &g);
            assert!(lhs <= k.ell(j) * grid::h1_norm(&u, &g), "j={j} t={t}");
        }
    }
}

#[test]
fn crank_nicolson_eigenmode_phase() {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let p = zero_potential(&g, 1.0);
    let (u, mu) = dirichlet_mode(&g, 3);
    let tau = 0.01;
    let next = cn_step(&p, 0.2, tau, &u, None).unwrap();
    let theta = -2.0 * (tau * mu / 2.0).atan();
    let expect: Vec<C64> = u.iter().map(|v| v * C64::from_polar(1.0, theta)).collect();
    assert!(rel_err(&next, &expect) < 1e-12);
    assert!((l2_norm(&next, &g) / l2_norm(&u, &g) - 1.0).abs() < 1e-12);
}

#[test]
fn crank_nicolson_is_unitary() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 9, 2.0, &[0.1, -0.4], 1.0);
    let u0 = smooth_complex(&g, &mut substream(9, "u0"), 5);
    let u1 = cn_step(&p, 0.3, 0.02, &u0, None).unwrap();
    assert!((l2_norm(&u1, &g) / l2_norm(&u0, &g) - 1.0).abs() < 1e-12);
    let traj = solve_ibvp(&p, &u0, None, 1.0, 64).unwrap();
    assert!(traj.charge_drift(&g) <= 1e-10);
    assert!(traj.snaps.iter().all(|s| g.boundary().iter().all(|&b| s[b].norm() == 0.0)));
}

#[test]
fn zero_data_gives_zero_trajectory() {
    let g = Grid::new_1d(33, 1.0).unwrap();
    let p = MagneticPotential::constant(&g, &[1.0], TimeProfile::default_for(1.0), 1.0).unwrap();
    let traj = solve_ibvp(&p, &vec![C64::new(0.0, 0.0); g.nodes()], None, 1.0, 10).unwrap();
    assert!(traj.snaps.iter().flatten().all(|v| v.norm() == 0.0));
    assert_eq!(traj.snaps.len(), 11);
}

#[test]
fn crank_nicolson_second_order_in_time() {
    let g = Grid::new_2d(25, 25, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 10, 2.0, &[0.2, 0.0], 0.5);
    let u0: Vec<C64> = g.sample(|x| C64::new((PI * x[1]).sin() * ((PI * x[0]).sin() + 0.5 * (2.0 * PI * x[0]).sin()), 0.0));
    let fin = |nt| solve_ibvp(&p, &u0, None, 0.5, nt).unwrap().snaps.pop().unwrap();
    let (a, b, c) = (fin(64), fin(128), fin(256));
    let e1 = rel_err(&a, &b);
    let e2 = rel_err(&b, &c);
    assert!((3.5..4.5).contains(&(e1 / e2)), "{}", e1 / e2);
}

#[test]
fn manufactured_solution_converges_second_order() {
    let c = 0.7;
    let shape = |x: f64| [(PI * x).sin() * (1.0 + x), PI * (PI * x).cos() * (1.0 + x) + (PI * x).sin(), -PI * PI * (PI * x).sin() * (1.0 + x) + 2.0 * PI * (PI * x).cos()];
    let theta = |t: f64| C64::from_polar(1.0 + t, -2.0 * t);
    let dtheta = |t: f64| C64::from_polar(1.0, -2.0 * t) * C64::new(1.0, -2.0 * (1.0 + t));
    let err = |n: usize, nt: usize| {
        let g = Grid::new_1d(n, 1.0).unwrap();
        let chi = TimeProfile::default_for(1.0);
        let p = MagneticPotential::constant(&g, &[c], chi, 1.0).unwrap();
        let tau = 1.0 / nt as f64;
        let f: Vec<Vec<C64>> = (0..nt)
            .map(|k| {
                let t = (k as f64 + 0.5) * tau;
                let x = chi.chi(t);
                g.sample(|y| {
                    let [s, s1, s2] = shape(y[0]);
                    let hs = C64::new(-s2 + x * x * c * c * s, 2.0 * x * c * s1);
                    -C64::i() * s * dtheta(t) + hs * theta(t)
                })
            })
            .collect();
        let u0 = g.sample(|y| C64::new(shape(y[0])[0], 0.0));
        let traj = solve_ibvp(&p, &u0, Some(&f), 1.0, nt).unwrap();
        traj.snaps
            .iter()
            .enumerate()
            .map(|(k, u)| {
                let ex = g.sample(|y| theta(k as f64 * tau) * shape(y[0])[0]);
                rel_err(u, &ex)
            })
            .fold(0.0, f64::max)
    };
    let (e1, e2, e3) = (err(33, 32), err(65, 64), err(129, 128));
    assert!(e3 < 1e-3, "{e3}");
    assert!((3.5..4.5).contains(&(e1 / e2)), "{}", e1 / e2);
    assert!((3.5..4.5).contains(&(e2 / e3)), "{}", e2 / e3);
}

#[test]
fn derivative_systems_on_an_eigenmode() {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let p = zero_potential(&g, 1.0);
    let (u0, mu) = dirichlet_mode(&g, 2);
    let nt = 128;
    let sol = solve_derivative_systems(&p, &u0, 1.0, nt).unwrap();
    for k in [0, 17, nt] {
        let du: Vec<C64> = sol.u.snaps[k].iter().map(|v| v * C64::new(0.0, -mu)).collect();
        assert!(rel_err(&sol.du.snaps[k], &du) < 1e-10);
        let d2u: Vec<C64> = sol.u.snaps[k].iter().map(|v| v * (-mu * mu)).collect();
        assert!(rel_err(&sol.d2u.snaps[k], &d2u) < 1e-10);
        // Analytic derivative of the discrete phase e^{ikθ}.
        let rate = -2.0 * (sol.u.tau * mu / 2.0).atan() / sol.u.tau;
        let dphase: Vec<C64> = sol.u.snaps[k].iter().map(|v| v * C64::new(0.0, rate)).collect();
        assert!(rel_err(&sol.du.snaps[k], &dphase) < (sol.u.tau * mu).powi(2));
    }
    assert!(sol.crosscheck_ok(), "{} > {}", sol.crosscheck, sol.crosscheck_bound);
}

#[test]
fn derivative_systems_are_consistent() {
    let g = Grid::new_2d(25, 25, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 11, 2.0, &[0.3, -0.3], 0.5);
    let u0: Vec<C64> = g.sample(|x| C64::new((PI * x[1]).sin() * ((PI * x[0]).sin() + 0.5 * (2.0 * PI * x[0]).sin()), 0.0));
    let disc = |nt| {
        let s = solve_derivative_systems(&p, &u0, 0.5, nt).unwrap();
        assert!(s.crosscheck_ok(), "{} > {}", s.crosscheck, s.crosscheck_bound);
        centered_discrepancy(&s.du, &s.d2u, &g)
    };
    let (e1, e2) = (disc(64), disc(128));
    assert!((3.0..5.0).contains(&(e1 / e2)), "{}", e1 / e2);
}

#[test]
fn time_symmetric_extension() {
    let g = Grid::new_1d(17, 1.0).unwrap();
    let real: Vec<C64> = g.sample(|x| C64::new(x[0] * (1.0 - x[0]), 0.0));
    let traj = Trajectory { tau: 0.1, interval: Interval::Forward, snaps: vec![real.clone(); 4] };
    let ext = extend_time_symmetric(&traj, Parity::Even).unwrap();
    assert_eq!(ext.snaps.len(), 7);
    assert!(ext.snaps.iter().all(|s| *s == real));
    assert_eq!(ext.time(0), -0.30000000000000004);
    let imag: Vec<C64> = real.iter().map(|v| v * C64::i()).collect();
    let bad = Trajectory { tau: 0.1, interval: Interval::Forward, snaps: vec![imag; 2] };
    assert!(matches!(extend_time_symmetric(&bad, Parity::Even), Err(Error::Data(_))));
    assert!(extend_time_symmetric(&bad, Parity::Odd).is_ok());
}

#[test]
fn extended_solution_solves_the_negative_time_problem() {
    let g = Grid::new_2d(21, 21, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 12, 1.5, &[0.2, 0.1], 1.0);
    let u0: Vec<C64> = g.sample(|x| C64::new((PI * x[0]).sin() * (2.0 * PI * x[1]).sin(), 0.0));
    let nt = 20;
    let ext = extend_time_symmetric(&solve_ibvp(&p, &u0, None, 1.0, nt).unwrap(), Parity::Even).unwrap();
    let m = p.map();
    for k in 0..nt {
        let t_mid = ext.time(k) + 0.5 * ext.tau;
        assert!(t_mid < 0.0);
        let step = CnStep::new(&p, t_mid, ext.tau).unwrap();
        let lhs = step.a.mul(&m.restrict(&ext.snaps[k + 1]));
        let rhs = step.explicit(&p, &m.restrict(&ext.snaps[k]));
        assert!(rel_err(&lhs, &rhs) < 1e-10);
    }
}

#[test]
fn triangle_chain_for_the_hamiltonian() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p = random_potential(&g, 13, 2.5, &[0.5, 0.5], 1.0);
    let a0 = p.constants().a[0];
    let mut rng = substream(13, "u");
    for s in 0..20 {
        let u = smooth_complex(&g, &mut rng, 4);
        let t = s as f64 / 19.0;
        let lhs = l2_norm(&p.apply_h(t, &u), &g);
        let grad = gradient(&u, &g).unwrap();
        let gn = grad.iter().map(|c| l2_norm(c, &g).powi(2)).sum::<f64>().sqrt();
        let rhs = l2_norm(&laplacian(&u, &g).unwrap(), &g) + 2.0 * a0 * gn + 2.0 * a0 * a0 * l2_norm(&u, &g);
        assert!(lhs <= rhs, "{lhs} > {rhs}");
    }
}

#[test]
fn gauge_violation_is_rejected() {
    let g = Grid::new_2d(17, 17, 1.0, 1.0).unwrap();
    let mut a = VectorField::constant(&g, &[0.0, 0.0]);
    let centre = g.index(8, 8);
    a.comps[0][centre] = 0.5;
    let r = MagneticPotential::new(&g, a, 1.0, &[0.0, 0.0], TimeProfile::default_for(1.0), 1.0, Gauge::Coulomb, g.collar_width());
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn norms_csv_has_one_row_per_snapshot() {
    let g = Grid::new_1d(9, 1.0).unwrap();
    let p = zero_potential(&g, 1.0);
    let (u0, _) = dirichlet_mode(&g, 1);
    let traj = solve_ibvp(&p, &u0, None, 1.0, 4).unwrap();
    let mut buf = Vec::new();
    write_norms_csv(&mut buf, &g, &traj).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
}
