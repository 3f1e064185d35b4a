use maglab::grid::*;
use maglab::rng::{smooth_vector, substream};
use std::f64::consts::PI;

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn gradient_of_constant_is_zero() {
    let g = Grid::new_2d(9, 9, 1.0, 1.0).unwrap();
    let f = vec![3.5; g.nodes()];
    for c in gradient(&f, &g).unwrap() {
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn gradient_exact_on_affine() {
    let g = Grid::new_1d(9, 1.0).unwrap();
    let f = g.sample(|x| x[0]);
    let d = &gradient(&f, &g).unwrap()[0];
    assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn gradient_sine_second_order() {
    let err = |n: usize| {
        let g = Grid::new_1d(n, 1.0).unwrap();
        let f = g.sample(|x| (PI * x[0]).sin());
        let exact = g.sample(|x| PI * (PI * x[0]).cos());
        max_err(&gradient(&f, &g).unwrap()[0], &exact)
    };
    let (e1, e2) = (err(129), err(257));
    assert!(e1 < 1e-3, "{e1}");
    let ratio = e1 / e2;
    assert!((3.5..4.5).contains(&ratio), "{ratio}");
}

#[test]
fn gradient_rejects_wrong_length() {
    let g = Grid::new_1d(9, 1.0).unwrap();
    assert!(gradient(&[0.0; 5], &g).is_err());
}

#[test]
fn laplacian_exact_on_quadratic() {
    let g = Grid::new_1d(9, 1.0).unwrap();
    let f = g.sample(|x| x[0] * (1.0 - x[0]));
    let l = laplacian(&f, &g).unwrap();
    for &p in g.interior() {
        assert!((l[p] + 2.0).abs() < 1e-12);
    }
    assert_eq!(l[0], 0.0);
    assert!(laplacian(&[0.0; 9], &g).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn laplacian_eigenfunction_second_order() {
    let err = |n: usize| {
        let g = Grid::new_1d(n, 1.0).unwrap();
        let f = g.sample(|x| (PI * x[0]).sin());
        let l = laplacian(&f, &g).unwrap();
        let r: Vec<f64> = l.iter().zip(&f).map(|(a, b)| a + PI * PI * b).collect();
        l2_norm(&r, &g) / (PI * PI * l2_norm(&f, &g))
    };
    let ratio = err(65) / err(129);
    assert!((3.5..4.5).contains(&ratio), "{ratio}");
}

#[test]
fn laplacian_2d_exact_on_quadratic() {
    let g = Grid::new_2d(9, 9, 1.0, 1.0).unwrap();
    let f = g.sample(|x| x[0] * x[0] + 3.0 * x[1] * x[1] - x[0] * x[1]);
    let l = laplacian(&f, &g).unwrap();
    for &p in g.interior() {
        assert!((l[p] - 8.0).abs() < 1e-10);
    }
}

#[test]
fn divergence_of_constant_and_gradient() {
    let g = Grid::new_2d(17, 17, 1.0, 1.0).unwrap();
    let c = VectorField::constant(&g, &[1.0, -2.0]);
    assert!(divergence(&c, &g).unwrap().iter().all(|v| v.abs() < 1e-12));
    let g1 = Grid::new_1d(17, 1.0).unwrap();
    let v = VectorField { comps: vec![g1.sample(|x| 2.0 * x[0])] };
    assert!(divergence(&v, &g1).unwrap().iter().all(|d| (d - 2.0).abs() < 1e-12));
}

#[test]
fn divergence_of_discrete_curl_is_small() {
    let err = |n: usize| {
        let g = Grid::new_2d(n, n, 1.0, 1.0).unwrap();
        let psi = g.sample(|x| (PI * x[0]).sin().powi(2) * (2.0 * PI * x[1]).cos() + x[0] * x[1] * x[1]);
        let d = gradient(&psi, &g).unwrap();
        let v = VectorField { comps: vec![d[1].clone(), d[0].iter().map(|x| -x).collect()] };
        let div = divergence(&v, &g).unwrap();
        l2_norm(&div, &g)
    };
    // Axis stencils commute, so the discrete curl is exactly divergence-free.
    assert!(err(33) < 1e-10);
    assert!(err(65) < 1e-10);
}

#[test]
fn neumann_trace_examples() {
    let g = Grid::new_1d(129, 1.0).unwrap();
    let right = BoundarySubset::new(&g, vec![128]);
    let f = g.sample(|x| x[0]);
    assert!((neumann_trace(&f, &g, &right).unwrap()[0] - 1.0).abs() < 1e-12);
    let c = vec![2.0; g.nodes()];
    assert!(neumann_trace(&c, &g, &right).unwrap()[0].abs() < 1e-12);
    let err = |n: usize| {
        let g = Grid::new_1d(n, 1.0).unwrap();
        let s = g.sample(|x| (PI * x[0]).sin());
        (neumann_trace(&s, &g, &BoundarySubset::new(&g, vec![n - 1])).unwrap()[0] + PI).abs()
    };
    let (e1, e2) = (err(129), err(257));
    assert!(e1 < 1e-3);
    assert!((3.5..4.5).contains(&(e1 / e2)));
    assert!(neumann_trace(&f, &g, &BoundarySubset::new(&g, vec![])).is_err());
}

#[test]
fn norms_examples() {
    let g = Grid::new_1d(129, 1.0).unwrap();
    let z = vec![0.0; g.nodes()];
    assert_eq!(norms(&z, &g), Norms { l2: 0.0, h1: 0.0 });
    let one = vec![1.0; g.nodes()];
    assert!((l2_norm(&one, &g) - 1.0).abs() < 1e-14);
    let s = g.sample(|x| (PI * x[0]).sin());
    assert!((l2_norm(&s, &g).powi(2) - 0.5).abs() < 1e-4);
    let grad2 = h1_norm(&s, &g).powi(2) - l2_norm(&s, &g).powi(2);
    assert!((grad2 - PI * PI / 2.0).abs() < 1e-3 * PI * PI);
}

#[test]
fn discrete_integration_by_parts() {
    let g = Grid::new_1d(129, 1.0).unwrap();
    let f = g.sample(|x| (PI * x[0]).sin() * (1.0 + x[0]));
    let h = g.sample(|x| (2.0 * PI * x[0]).sin() + (PI * x[0]).sin());
    let lf = laplacian(&f, &g).unwrap();
    let lhs: f64 = lf.iter().zip(&h).zip(g.weights()).map(|((a, b), w)| a * b * w).sum();
    let gf = gradient(&f, &g).unwrap();
    let gh = gradient(&h, &g).unwrap();
    let rhs: f64 = -gf[0].iter().zip(&gh[0]).zip(g.weights()).map(|((a, b), w)| a * b * w).sum::<f64>();
    assert!((lhs - rhs).abs() / lhs.abs() < 1e-3);
}

#[test]
fn leray_random_field_32() {
    let g = Grid::new_2d(32, 32, 1.0, 1.0).unwrap();
    for seed in 0..3 {
        let v = smooth_vector(&g, &mut substream(seed, "leray"), 8);
        let p = leray_project(&v, &g).unwrap();
        let div = divergence(&p, &g).unwrap();
        assert!(l2_norm(&div, &g) <= 1e-8 * v.l2(&g));
        let pp = leray_project(&p, &g).unwrap();
        assert!(pp.sub(&p).l2(&g) <= 1e-10 * p.l2(&g));
    }
}

#[test]
fn leray_fixes_divergence_free_fields() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let c = VectorField::constant(&g, &[0.3, -0.1]);
    assert!(leray_project(&c, &g).unwrap().sub(&c).l2(&g) < 1e-10);
    let psi = g.sample(|x| (PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + x[0] * x[1]);
    let d = gradient(&psi, &g).unwrap();
    let curl = VectorField { comps: vec![d[1].clone(), d[0].iter().map(|x| -x).collect()] };
    assert!(leray_project(&curl, &g).unwrap().sub(&curl).l2(&g) < 1e-9 * curl.l2(&g));
}

#[test]
fn leray_annihilates_gradients_of_interior_potentials() {
    let err = |n: usize| {
        let g = Grid::new_2d(n, n, 1.0, 1.0).unwrap();
        let bump = |t: f64| if t > 0.1 && t < 0.9 { ((t - 0.1) * (0.9 - t) * 6.25).powi(4) } else { 0.0 };
        let phi = g.sample(|x| bump(x[0]) * bump(x[1]) * (1.0 + x[0]));
        let v = VectorField { comps: gradient(&phi, &g).unwrap() };
        leray_project(&v, &g).unwrap().l2(&g) / v.l2(&g)
    };
    // Away from the boundary the central gradient is exactly minus the
    // transposed divergence, so such gradients are removed to round-off.
    for n in [33, 65] {
        let e = err(n);
        assert!(e < 1e-8, "{e}");
    }
}

#[test]
fn collar_constrained_projection() {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let mask = g.collar_mask(g.collar_width());
    let v = smooth_vector(&g, &mut substream(5, "collar"), 5);
    let p = project_div_free(&v, &g, Some(&mask)).unwrap();
    let div = divergence(&p, &g).unwrap();
    assert!(l2_norm(&div, &g) <= 1e-8 * v.l2(&g));
    for (q, &m) in mask.iter().enumerate() {
        if m {
            assert_eq!(p.at(q), [0.0, 0.0]);
        }
    }
    assert!(p.l2(&g) > 1e-3 * v.l2(&g));
}
