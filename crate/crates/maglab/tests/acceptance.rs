//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
//! Runs without the libtest harness so the lines always reach stdout.

use maglab::carleman::*;
use maglab::config::{parse_config, Command};
use maglab::diagnostics::*;
use maglab::grid::{BoundarySubset, Grid, VectorField};
use maglab::hamiltonian::{solve_derivative_systems, solve_ibvp, MagneticPotential, TimeProfile};
use maglab::inverse::*;
use maglab::rng::{smooth_complex, substream, sym};
use maglab::run::run;
use maglab::C64;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

type Outcome = (bool, String);

const BOUND: f64 = 3.0;

fn spec(seed: u64, delta: f64, g: &Grid) -> PairSpec {
    PairSpec { seed, delta, bound: BOUND, a0: vec![0.5; g.dim()], collar: g.collar_width(), t_final: 1.0, modes: 3 }
}

fn gamma_plus(g: &Grid) -> BoundarySubset {
    compute_gamma_plus(&build_beta(g, &[-0.5], 2.0).unwrap()).unwrap().0
}

fn family(g: &Grid) -> InitialFamily {
    make_initial_family(g, g.dim() + 1, FamilyPreset::Spanning, g.collar_width()).unwrap()
}

/// Divergence-free in 1D means constant, so admissible 1D potentials are
/// constants with |c| < M.
fn admissible_1d(g: &Grid, rng: &mut maglab::rng::Stream) -> MagneticPotential {
    MagneticPotential::constant(g, &[BOUND * sym(rng)], TimeProfile::default_for(1.0), 1.0).unwrap()
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = (xs.iter().map(|x| x.ln()).collect(), ys.iter().map(|y| y.ln()).collect());
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    num / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ")
}

fn spread(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::MAX, f64::min)
}

fn unitarity() -> Outcome {
    let g = Grid::new_1d(129, 1.0).unwrap();
    let mut rng = substream(1, "acceptance-unitarity");
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let p = admissible_1d(&g, &mut rng);
        let u0 = smooth_complex(&g, &mut rng, 5);
        worst = worst.max(solve_ibvp(&p, &u0, None, 1.0, 256).unwrap().charge_drift(&g));
    }
    (worst <= 1e-10, format!("max relative charge drift {worst:.2e} over 5 potentials (N=129, N_t=256)"))
}

fn charge_bound() -> Outcome {
    let g = Grid::new_1d(129, 1.0).unwrap();
    let mut rng = substream(2, "acceptance-charge");
    let (mut fails, mut worst) = (0, 0.0f64);
    for _ in 0..20 {
        let p = admissible_1d(&g, &mut rng);
        let u0 = smooth_complex(&g, &mut rng, 4);
        let f = SeparableSource::random(&g, &mut rng, 2, 5.0).midpoints(1.0, 256);
        let r = check_charge_bound(&g, &solve_ibvp(&p, &u0, Some(&f), 1.0, 256).unwrap(), &u0, Some(&f));
        fails += usize::from(!r.pass);
        worst = worst.max(r.ratio());
    }
    (fails == 0, format!("{fails} failures in 20 runs, max lhs/rhs {worst:.4}"))
}

fn energy_bounds() -> Outcome {
    let ensemble = |n: usize, nt: usize| {
        let g = Grid::new_1d(n, 1.0).unwrap();
        let mut rng = substream(3, "acceptance-energy");
        let mut worst = [0.0f64; 4];
        for _ in 0..20 {
            let p = admissible_1d(&g, &mut rng);
            let u0 = smooth_complex(&g, &mut rng, 4);
            let src = SeparableSource::random(&g, &mut rng, 2, 5.0);
            let traj = solve_ibvp(&p, &u0, Some(&src.midpoints(1.0, nt)), 1.0, nt).unwrap();
            let e = check_energy_bound(&g, &traj, &u0, Some((&src.nodes(1.0, nt), &src.nodes_dt(1.0, nt)))).unwrap();
            let d = check_derivative_bounds(&g, &solve_derivative_systems(&p, &u0, 1.0, nt).unwrap(), &u0).unwrap();
            for (w, r) in worst.iter_mut().zip(std::iter::once(&e).chain(&d)) {
                *w = w.max(r.ratio());
            }
        }
        worst
    };
    let (a, b) = (ensemble(65, 128), ensemble(129, 256));
    let change: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y / x - 1.0).collect();
    let ok = a.iter().chain(&b).all(|x| x.is_finite()) && change.iter().all(|c| c.abs() <= 0.2);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    (ok, format!("energy/d0/d1/d2 constants {} -> {} under halving, max change {:.1}%", fmt(&a), fmt(&b), 100.0 * change.iter().fold(0.0f64, |m, c| m.max(c.abs()))))
}

fn operator_symmetry() -> Outcome {
    let g = Grid::new_1d(129, 1.0).unwrap();
    let mut rng = substream(4, "acceptance-symmetry");
    let p = admissible_1d(&g, &mut rng);
    let r = check_bj_symmetry(&p, 0.45, 50, &mut rng);
    let g2 = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let p2 = make_potential_pair(&g2, &spec(4, 0.0, &g2)).unwrap().a;
    let r2 = check_bj_symmetry(&p2, 0.45, 10, &mut rng);
    (r.pass && r2.pass, format!("max asymmetry {:.2e} (1D N=129, 50 pairs), {:.2e} (2D 33x33 div-free, 10 pairs)", r.lhs, r2.lhs))
}

fn conjugation() -> Outcome {
    let res = |n: usize, nt: usize| {
        let g = Grid::new_1d(n, 1.0).unwrap();
        let q = space_time(&g, 1.0, nt, |t, x| C64::new((PI * x[0]).sin() * (1.0 + t * t), (2.0 * PI * x[0]).sin() * (2.0 * t).cos()));
        let w = build_beta(&g, &[-0.5], 2.0).unwrap().with_params(0.1, 1.0, 1.0).unwrap();
        conjugation_residual(&w, &q).unwrap()
    };
    let (a, b) = (res(129, 256), res(257, 512));
    (a <= 5e-2 && (3.0..=5.0).contains(&(a / b)), format!("residual {a:.3e} at (129, 256), {b:.3e} at (257, 512), factor {:.2}", a / b))
}

fn certificate() -> Outcome {
    let g = Grid::new_2d(33, 33, 1.0, 1.0).unwrap();
    let x0 = [-0.3, -0.4];
    let c = verify_assumption(&build_beta(&g, &x0, 2.0).unwrap(), 0.1);
    let dist = 0.5;
    let constant = verify_assumption(&constant_beta(&g, 1.0, 2.0).unwrap(), 0.1);
    let ok = c.pass() && (c.c0 - 2.0 * dist).abs() < 1e-12 && c.eps == 2.0 && !constant.pass_a;
    (ok, format!("quadratic weight passes={} C0={:.6} (2*dist={}), eps={}; constant weight fails gradient floor={}", c.pass(), c.c0, 2.0 * dist, c.eps, !constant.pass_a))
}

fn klibanov() -> Outcome {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let base = build_beta(&g, &[-0.5], 2.0).unwrap();
    let mut rng = substream(7, "acceptance-klibanov");
    let s_list: Vec<f64> = (1..=64).map(f64::from).collect();
    let mut worst: f64 = 1.0;
    let mut alpha_ok = true;
    for _ in 0..10 {
        let p = random_space_time(&g, &mut rng, 1.0, 128);
        let r = check_klibanov(&base, 0.1, &p, &s_list).unwrap();
        let (a, b) = (r.scaled_at(8.0).unwrap(), r.scaled_at(64.0).unwrap());
        worst = worst.max(b / a).max(a / b);
        alpha_ok &= r.alpha_ok && r.kappa().is_finite();
    }
    (worst <= 2.0 && alpha_ok, format!("worst s=64 vs s=8 factor {worst:.3} over 10 fields, s = 1..64"))
}

fn carleman_ratio() -> Outcome {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let base = build_beta(&g, &[-0.5], 2.0).unwrap();
    let gp = gamma_plus(&g);
    let mut rng = substream(8, "acceptance-carleman");
    let (mut max, mut violations, mut monotone) = (0.0f64, 0, true);
    for _ in 0..10 {
        let q = random_space_time(&g, &mut rng, 1.0, 128);
        let r = check_carleman(&base, &q, &gp, &[1.0, 2.0, 4.0, 8.0, 16.0], &[0.1, 0.2, 0.5]).unwrap();
        max = max.max(r.max_ratio());
        violations += r.violations();
        monotone &= r.non_increasing_past_knee();
    }
    (max.is_finite() && violations == 0 && monotone, format!("max ratio {max:.4}, {violations} violations, non-increasing past knee: {monotone}"))
}

fn chain_keystone() -> Outcome {
    let errs: Vec<f64> = [65, 129, 257]
        .iter()
        .map(|&n| {
            let g = Grid::new_1d(n, 1.0).unwrap();
            let pair = make_potential_pair(&g, &spec(7, 0.2, &g)).unwrap();
            let fam = family(&g);
            solve_difference_chain(&pair, &fam.fields[0], &fam.grads[0], 2 * (n - 1)).unwrap().y0_error
        })
        .collect();
    let ex: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    (ex.iter().all(|e| (1.7..=2.3).contains(e)), format!("y(0) errors {} at N=65/129/257, exponents {ex:.2?}", sci(&errs)))
}

fn linearized() -> Outcome {
    let errs: Vec<f64> = [65, 129, 257]
        .iter()
        .map(|&n| {
            let g = Grid::new_1d(n, 1.0).unwrap();
            let pair = make_potential_pair(&g, &spec(13, 0.1, &g)).unwrap();
            let fam = family(&g);
            let y0: Vec<Vec<C64>> =
                (0..fam.n()).map(|j| solve_difference_chain(&pair, &fam.fields[j], &fam.grads[j], 64).unwrap().y0().to_vec()).collect();
            let est = linearized_reconstruct(&g, &fam, &y0, pair.a.chi().deriv(1, 0.0)).unwrap();
            region_error(&g, &fam.region, &est.d, &pair.difference())
        })
        .collect();
    let order = (errs[1] / errs[2]).log2();
    (errs[1] <= 0.05 && (1.7..=2.3).contains(&order), format!("region errors {} at N=65/129/257, order {order:.2}", sci(&errs)))
}

fn scale_invariance() -> Outcome {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let (fam, gp) = (family(&g), gamma_plus(&g));
    let deltas = [1e-1, 1e-2, 1e-3];
    let reps: Vec<StabilityReport> = deltas
        .iter()
        .map(|&d| {
            let pair = make_potential_pair(&g, &spec(21, d, &g)).unwrap();
            let (obs, _) = simulate_observations(&fam, &pair, &gp, 128, 0.0, 21).unwrap();
            stability_ratio(&pair, &obs, 21)
        })
        .collect();
    let lin: Vec<f64> = reps.iter().map(|r| r.r_lin).collect();
    let k = slope(&deltas, &reps.iter().map(|r| r.r_sq).collect::<Vec<_>>());
    (spread(&lin) <= 2.0 && (-1.3..=-0.7).contains(&k), format!("R_lin {} (spread {:.3}), R_sq log-log slope {k:.3}", sci(&lin), spread(&lin)))
}

fn out_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn stability_ensemble() -> Outcome {
    let dir = out_dir("stability-ensemble");
    let mut cfg = parse_config(r#"{"seed": 12, "grid": {"n": [65]}, "time": {"nt": 128}, "sweep": {"pairs": 30, "deltas": [0.1]}}"#).unwrap();
    cfg.command = Some(Command::StabilitySweep);
    let m = run(&cfg, &dir).unwrap();
    let max = m.summary["max_r_lin"].as_f64();
    let ok = max.is_some_and(f64::is_finite) && m.summary["pairs"] == 30;
    (ok, format!("max R_lin {:.4e} over 30 pairs (seeds {}..{}), table and manifest in {}", max.unwrap_or(f64::NAN), m.potential_seed, m.potential_seed + 29, dir.display()))
}

fn adjoint_gradient() -> Outcome {
    let g = Grid::new_1d(33, 1.0).unwrap();
    let pair = make_potential_pair(&g, &spec(29, 0.1, &g)).unwrap();
    let fam = family(&g);
    let (obs, _) = simulate_observations(&fam, &pair, &gamma_plus(&g), 64, 0.0, 1).unwrap();
    let prob = AdjointProblem::new(&pair.a, &fam, &obs, None).unwrap();
    let b = pair.a.field().clone();
    let (_, grad) = prob.gradient(&b).unwrap();
    let mut rng = substream(13, "acceptance-directions");
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let coef: Vec<f64> = (0..4).map(|_| sym(&mut rng)).collect();
        let raw = VectorField { comps: vec![g.sample(|x| coef.iter().enumerate().map(|(k, c)| c * ((k + 1) as f64 * PI * x[0]).sin()).sum())] };
        let dir = prob.project_direction(&raw).unwrap();
        let eps = 1e-4;
        let fd = (prob.objective(&b.axpy(eps, &dir)).unwrap().total() - prob.objective(&b.axpy(-eps, &dir)).unwrap().total()) / (2.0 * eps);
        let ad = grad.dot(&dir);
        worst = worst.max((fd - ad).abs() / fd.abs().max(ad.abs()));
    }
    (worst <= 1e-5, format!("max relative gradient error {worst:.2e} over 5 directions"))
}

fn end_to_end() -> Outcome {
    let g = Grid::new_1d(65, 1.0).unwrap();
    let pair = make_potential_pair(&g, &spec(43, 0.1, &g)).unwrap();
    let fam = family(&g);
    let err = |noise: f64| {
        let (obs, _) = simulate_observations(&fam, &pair, &gamma_plus(&g), 128, noise, 43).unwrap();
        let prob = AdjointProblem::new(&pair.a, &fam, &obs, None).unwrap();
        let rec = adjoint_reconstruct(&prob, pair.a.field(), &ReconstructOptions::default()).unwrap();
        (rec.estimate.sub(pair.at.field()).l2(&g) / pair.difference().l2(&g), rec.history.len() - 1)
    };
    let ((e0, i0), (e1, i1)) = (err(0.0), err(1e-3));
    (e0 <= 0.1 && e1 <= 0.3 && i0 <= 200, format!("relative error {e0:.4} noiseless ({i0} iterations), {e1:.4} with 1e-3 noise ({i1} iterations)"))
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn determinism() -> Outcome {
    let text = r#"{"seed": 15, "grid": {"n": [33]}, "time": {"nt": 64}, "noise": 0.001, "sweep": {"pairs": 3},
                   "reconstruct": {"iterations": 20}, "bounds": {"samples": 3}, "carleman": {"samples": 3}, "klibanov": {"samples": 3}}"#;
    let mut files = 0;
    let mut differing = Vec::new();
    for cmd in Command::ALL {
        let mut cfg = parse_config(text).unwrap();
        cfg.command = Some(cmd);
        let (a, b) = (out_dir(&format!("rerun-{cmd}-a")), out_dir(&format!("rerun-{cmd}-b")));
        run(&cfg, &a).unwrap();
        run(&cfg, &b).unwrap();
        let (x, y) = (csvs(&a), csvs(&b));
        files += x.len();
        if x != y || x.is_empty() {
            differing.push(cmd.to_string());
        }
    }
    (differing.is_empty(), format!("{files} CSV files from 6 commands byte-identical on rerun; differing: {differing:?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 15] = [
        ("unitarity", unitarity),
        ("charge bound", charge_bound),
        ("energy and derivative bounds", energy_bounds),
        ("operator symmetry", operator_symmetry),
        ("conjugation identity", conjugation),
        ("weight certificate", certificate),
        ("pointwise weighted estimate", klibanov),
        ("Carleman ratio", carleman_ratio),
        ("difference-chain initial trace", chain_keystone),
        ("linearized reconstruction", linearized),
        ("stability scale invariance", scale_invariance),
        ("stability ensemble", stability_ensemble),
        ("adjoint gradient", adjoint_gradient),
        ("end-to-end reconstruction", end_to_end),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!ok);
        println!("criterion {:>2} {:<32} {}  {}  [{:.1}s]", k + 1, name, if ok { "PASS" } else { "FAIL" }, detail, t.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of 15 criteria pass", 15 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
