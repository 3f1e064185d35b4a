//! Pipeline runner behind the `maglab` binary. Each command writes its CSV
//! tables (and binary fields where relevant) into the output directory and
//! finishes with `manifest.json`; a run that stops on an error leaves no
//! manifest, which marks its outputs as partial.

use crate::carleman::{
    build_beta, check_carleman, check_klibanov, compute_gamma_plus, random_space_time, verify_assumption, write_klibanov_csv, write_sweep_csv,
    AssumptionCertificate,
};
use crate::config::{Command, ForwardInitial, ForwardPotential, RunConfig};
use crate::diagnostics::{
    check_bj_symmetry, check_charge_bound, check_derivative_bounds, check_energy_bound, check_operator_bound, check_triangle_chain,
    write_reports_csv, BoundReport, SeparableSource,
};
use crate::error::{Error, Result};
use crate::grid::{BoundarySubset, Grid, VectorField, C64};
use crate::hamiltonian::{fmt, solve_derivative_systems, solve_ibvp, write_binary, write_norms_csv, Interval, MagneticPotential, TimeProfile, Trajectory};
use crate::inverse::{
    adjoint_reconstruct, linearized_reconstruct, make_initial_family, make_potential_pair, region_error, simulate_observations, stability_ratio,
    write_fields_csv, write_history_csv, write_observations_csv, write_stability_csv, AdjointProblem, InitialFamily, PairSpec, PotentialPair,
    ReconstructOptions, StabilityReport,
};
use crate::rng::{smooth_complex, substream, sym, Stream};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MANIFEST: &str = "manifest.json";

/// Version string recorded in every manifest.
pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Debug, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub version: String,
    pub command: Command,
    pub seed: u64,
    pub potential_seed: u64,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    pub stages: Vec<Stage>,
    pub summary: Map<String, Value>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    outputs: Vec<String>,
    stages: Vec<Stage>,
    summary: Map<String, Value>,
}

impl Ctx<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f()?;
        self.stages.push(Stage { name: name.into(), seconds: t.elapsed().as_secs_f64() });
        Ok(r)
    }

    fn file(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn note(&mut self, key: &str, v: impl Into<Value>) {
        self.summary.insert(key.into(), v.into());
    }
}

/// Runs `cfg.command` into `out`. Returns the manifest that was written.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let command = cfg.command.ok_or_else(|| Error::config("no command given"))?;
    fs::create_dir_all(out)?;
    let manifest_path = out.join(MANIFEST);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path)?;
    }
    let mut ctx = Ctx { cfg, out, outputs: Vec::new(), stages: Vec::new(), summary: Map::new() };
    let t = Instant::now();
    match command {
        Command::Forward => forward(&mut ctx)?,
        Command::Bounds => bounds(&mut ctx)?,
        Command::Carleman => carleman(&mut ctx)?,
        Command::Klibanov => klibanov(&mut ctx)?,
        Command::StabilitySweep => stability_sweep(&mut ctx)?,
        Command::Reconstruct => reconstruct(&mut ctx)?,
    }
    ctx.stages.push(Stage { name: "total".into(), seconds: t.elapsed().as_secs_f64() });
    let manifest = Manifest {
        version: version(),
        command,
        seed: cfg.seed,
        potential_seed: cfg.potential_seed(),
        config: cfg.clone(),
        outputs: ctx.outputs,
        stages: ctx.stages,
        summary: ctx.summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(&manifest_path, text + "\n")?;
    Ok(manifest)
}

/// Output directory: the override, else the configured one.
pub fn output_dir(cfg: &RunConfig, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.output))
}

fn pair_spec(cfg: &RunConfig, g: &Grid, seed: u64, delta: f64) -> PairSpec {
    PairSpec {
        seed,
        delta,
        bound: cfg.potential.bound,
        a0: cfg.a0(),
        collar: cfg.collar(g),
        t_final: cfg.time.t_final,
        modes: cfg.potential.modes,
    }
}

fn family(cfg: &RunConfig, g: &Grid) -> Result<InitialFamily> {
    make_initial_family(g, cfg.family_size(), cfg.family.preset, cfg.collar(g))
}

fn gamma_plus(cfg: &RunConfig, g: &Grid) -> Result<BoundarySubset> {
    Ok(compute_gamma_plus(&build_beta(g, &cfg.x0(), cfg.weights.m)?)?.0)
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn forward(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let g = cfg.build_grid()?;
    let (t_final, nt) = (cfg.time.t_final, cfg.time.nt);
    let p = match cfg.forward.potential {
        ForwardPotential::Constant => MagneticPotential::constant(&g, &cfg.a0(), TimeProfile::default_for(t_final), t_final)?,
        ForwardPotential::Random => make_potential_pair(&g, &pair_spec(cfg, &g, cfg.potential_seed(), 0.0))?.a,
    };
    let u0: Vec<C64> = match cfg.forward.initial {
        ForwardInitial::Eigenmode => {
            let k = cfg.forward.mode as f64;
            g.sample(|x| C64::new((0..g.dim()).map(|a| (k * std::f64::consts::PI * x[a] / g.len(a)).sin()).product(), 0.0))
        }
        ForwardInitial::Random => smooth_complex(&g, &mut substream(cfg.seed, "initial"), 4),
    };
    let traj = ctx.stage("propagate", || solve_ibvp(&p, &u0, None, t_final, nt))?;
    ctx.file("norms.csv", |w| write_norms_csv(w, &g, &traj))?;
    ctx.file("trajectory.mslb", |w| write_binary(w, &g, &traj))?;
    ctx.note("charge_drift", traj.charge_drift(&g));
    ctx.note("gauge", format!("{:?}", p.gauge()).to_lowercase());
    ctx.note("snapshots", traj.snaps.len());
    Ok(())
}

/// A potential in the Coulomb class, where H(t) and B_j are Hermitian: a
/// random divergence-free field in 2D, a random constant |c| < M in 1D.
fn coulomb_potential(cfg: &RunConfig, g: &Grid, seed: u64, rng: &mut Stream) -> Result<MagneticPotential> {
    let t_final = cfg.time.t_final;
    if g.dim() == 1 {
        let c = cfg.potential.bound * sym(rng);
        MagneticPotential::constant(g, &[c], TimeProfile::default_for(t_final), t_final)
    } else {
        Ok(make_potential_pair(g, &pair_spec(cfg, g, seed, 0.0))?.a)
    }
}

fn bounds(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let g = cfg.build_grid()?;
    let (t_final, nt) = (cfg.time.t_final, cfg.time.nt);
    let rows: Vec<Vec<(String, BoundReport)>> = ctx.stage("ensemble", || {
        (0..cfg.bounds.samples)
            .into_par_iter()
            .map(|i| {
                let run = format!("sample-{i}");
                let mut rng = substream(cfg.seed, &format!("bounds-{i}"));
                let p = coulomb_potential(cfg, &g, cfg.potential_seed().wrapping_add(i as u64), &mut rng)?;
                let u0 = smooth_complex(&g, &mut rng, 4);
                let src = SeparableSource::random(&g, &mut rng, 2, 5.0);
                let traj = solve_ibvp(&p, &u0, Some(&src.midpoints(t_final, nt)), t_final, nt)?;
                let (f, df) = (src.nodes(t_final, nt), src.nodes_dt(t_final, nt));
                let mut reps = vec![check_charge_bound(&g, &traj, &u0, Some(&src.midpoints(t_final, nt)))];
                reps.push(check_energy_bound(&g, &traj, &u0, Some((&f, &df)))?);
                reps.extend(check_derivative_bounds(&g, &solve_derivative_systems(&p, &u0, t_final, nt)?, &u0)?);
                let t = 0.5 * t_final;
                reps.push(check_bj_symmetry(&p, t, 10, &mut rng));
                reps.push(check_triangle_chain(&p, t, &u0)?);
                for j in 1..=3 {
                    reps.push(check_operator_bound(&p, j, t, &u0)?);
                }
                Ok(reps.into_iter().map(|r| (run.clone(), r)).collect())
            })
            .collect()
    })?;
    let rows: Vec<(String, BoundReport)> = rows.into_iter().flatten().collect();
    ctx.file("bounds.csv", |w| write_reports_csv(w, &rows))?;
    let failures = rows.iter().filter(|(_, r)| !r.pass).count();
    let mut worst: Map<String, Value> = Map::new();
    for (_, r) in &rows {
        let e = worst.entry(r.name.clone()).or_insert(json!(0.0));
        if r.ratio() > e.as_f64().unwrap_or(0.0) {
            *e = finite_or_null(r.ratio());
        }
    }
    ctx.note("rows", rows.len());
    ctx.note("failures", failures);
    ctx.note("max_ratio_by_bound", worst);
    if failures > 0 {
        return Err(Error::Invariant(format!("{failures} bound checks failed; see bounds.csv")));
    }
    Ok(())
}

fn write_certificate(w: &mut impl Write, c: &AssumptionCertificate) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let list = |v: &[usize]| v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ");
    wr.write_record(["item", "value"]).map_err(io)?;
    let rows = [
        ("gradient floor C0 [length]", fmt(c.c0)),
        ("lambda [1]", fmt(c.lambda)),
        ("convexity margin epsilon [1]", fmt(c.eps)),
        ("max normal derivative on unobserved boundary [length]", fmt(c.max_dnu_minus)),
        ("direction samples", c.zeta_samples.to_string()),
        ("exact hessian", c.exact_hessian.to_string()),
        ("observed boundary nodes", list(&c.gamma_plus)),
        ("unobserved boundary nodes", list(&c.gamma_minus)),
        ("ambiguous corner nodes", list(&c.ambiguous_corners)),
        ("pass gradient floor", c.pass_a.to_string()),
        ("pass convexity", c.pass_b.to_string()),
        ("pass boundary sign", c.pass_c.to_string()),
    ];
    for (k, v) in rows {
        wr.write_record([k.to_string(), v]).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

fn carleman(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let g = cfg.build_grid()?;
    let (t_final, nt) = (cfg.time.t_final, cfg.time.nt);
    let base = build_beta(&g, &cfg.x0(), cfg.weights.m)?;
    let cert = verify_assumption(&base, cfg.weights.lambdas[0]);
    ctx.file("certificate.csv", |w| write_certificate(w, &cert))?;
    ctx.note("certificate_pass", cert.pass());
    if !cert.pass() {
        return Err(Error::Invariant("weight fails its assumption certificate; see certificate.csv".into()));
    }
    let (gamma, _) = compute_gamma_plus(&base)?;
    let reps = ctx.stage("sweep", || {
        (0..cfg.carleman.samples)
            .into_par_iter()
            .map(|i| {
                let q = random_space_time(&g, &mut substream(cfg.seed, &format!("carleman-q-{i}")), t_final, nt);
                Ok((format!("q-{i}"), check_carleman(&base, &q, &gamma, &cfg.weights.s_list, &cfg.weights.lambdas)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    ctx.file("carleman.csv", |w| write_sweep_csv(w, &reps))?;
    let max = reps.iter().map(|(_, r)| r.max_ratio()).fold(0.0, f64::max);
    let violations: usize = reps.iter().map(|(_, r)| r.violations()).sum();
    ctx.note("max_ratio", finite_or_null(max));
    ctx.note("violations", violations);
    ctx.note("non_increasing_past_knee", reps.iter().all(|(_, r)| r.non_increasing_past_knee()));
    if violations > 0 {
        return Err(Error::Invariant(format!("{violations} Carleman ratio violations; see carleman.csv")));
    }
    Ok(())
}

fn klibanov(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let g = cfg.build_grid()?;
    let (t_final, nt) = (cfg.time.t_final, cfg.time.nt);
    let base = build_beta(&g, &cfg.x0(), cfg.weights.m)?;
    let lambda = cfg.weights.lambdas[0];
    let reps = ctx.stage("sweep", || {
        (0..cfg.klibanov.samples)
            .into_par_iter()
            .map(|i| {
                let p = random_space_time(&g, &mut substream(cfg.seed, &format!("klibanov-p-{i}")), t_final, nt);
                Ok((format!("p-{i}"), check_klibanov(&base, lambda, &p, &cfg.weights.s_list)?))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    ctx.file("klibanov.csv", |w| write_klibanov_csv(w, &reps))?;
    let kappa = reps.iter().map(|(_, r)| r.kappa()).fold(0.0, f64::max);
    ctx.note("max_scaled_ratio", finite_or_null(kappa));
    let alpha_ok = reps.iter().all(|(_, r)| r.alpha_ok);
    ctx.note("alpha_floor_ok", alpha_ok);
    if !alpha_ok {
        return Err(Error::Invariant("alpha fell below its floor; see klibanov.csv".into()));
    }
    Ok(())
}

fn stability_sweep(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let g = cfg.build_grid()?;
    let nt = cfg.time.nt;
    let jobs: Vec<(u64, f64)> = (0..cfg.sweep.pairs as u64)
        .flat_map(|i| cfg.sweep.deltas.iter().map(move |&d| (cfg.potential_seed().wrapping_add(i), d)))
        .collect();
    let rows: Vec<StabilityReport> = if jobs.is_empty() {
        Vec::new()
    } else {
        let fam = family(cfg, &g)?;
        let gamma = gamma_plus(cfg, &g)?;
        ctx.stage("ensemble", || {
            jobs.par_iter()
                .map(|&(seed, delta)| {
                    let pair = make_potential_pair(&g, &pair_spec(cfg, &g, seed, delta))?;
                    let (obs, _) = simulate_observations(&fam, &pair, &gamma, nt, cfg.noise, seed)?;
                    Ok(stability_ratio(&pair, &obs, seed))
                })
                .collect::<Result<Vec<_>>>()
        })?
    };
    ctx.file("stability.csv", |w| write_stability_csv(w, &rows))?;
    let max = rows.iter().map(|r| r.r_lin).fold(f64::NEG_INFINITY, f64::max);
    ctx.note("pairs", rows.len());
    ctx.note("max_r_lin", if rows.is_empty() { Value::Null } else { finite_or_null(max) });
    let violations = rows.iter().filter(|r| r.violation).count();
    ctx.note("violations", violations);
    if violations > 0 {
        return Err(Error::Invariant(format!("{violations} pairs with zero data and nonzero difference; see stability.csv")));
    }
    Ok(())
}

/// ‖est − ã‖/‖ã − a‖ over the whole grid (absolute when ã = a).
pub fn recovery_error(g: &Grid, pair: &PotentialPair, est: &VectorField) -> f64 {
    let num = est.sub(pair.at.field()).l2(g);
    let den = pair.difference().l2(g);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn field_as_trajectory(v: &VectorField) -> Trajectory {
    Trajectory { tau: 1.0, interval: Interval::Forward, snaps: v.comps.iter().map(|c| c.iter().map(|&x| C64::new(x, 0.0)).collect()).collect() }
}

fn reconstruct(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let g = cfg.build_grid()?;
    let nt = cfg.time.nt;
    let pair = make_potential_pair(&g, &pair_spec(cfg, &g, cfg.potential_seed(), cfg.potential.delta))?;
    let fam = family(cfg, &g)?;
    let gamma = gamma_plus(cfg, &g)?;
    let (obs, chains) = ctx.stage("observe", || simulate_observations(&fam, &pair, &gamma, nt, cfg.noise, cfg.seed))?;
    ctx.file("observations.csv", |w| write_observations_csv(w, &g, &obs))?;
    let stab = stability_ratio(&pair, &obs, cfg.potential_seed());
    ctx.file("stability.csv", |w| write_stability_csv(w, std::slice::from_ref(&stab)))?;
    let y0: Vec<Vec<C64>> = chains.iter().map(|c| c.y0().to_vec()).collect();
    let lin = linearized_reconstruct(&g, &fam, &y0, pair.a.chi().deriv(1, 0.0))?;
    let lin_field = pair.a.field().add(&lin.d);
    let problem = ctx.stage("adjoint setup", || AdjointProblem::new(&pair.a, &fam, &obs, cfg.reconstruct.alpha_reg))?;
    let opts = ReconstructOptions { iterations: cfg.reconstruct.iterations, ..ReconstructOptions::default() };
    let rec = ctx.stage("optimize", || adjoint_reconstruct(&problem, pair.a.field(), &opts))?;
    ctx.file("history.csv", |w| write_history_csv(w, &rec))?;
    ctx.file("potentials.csv", |w| {
        write_fields_csv(w, &g, &["reference a", "perturbed a~", "linearized estimate", "adjoint estimate"], &[
            pair.a.field(),
            pair.at.field(),
            &lin_field,
            &rec.estimate,
        ])
    })?;
    ctx.file("estimate.mslb", |w| write_binary(w, &g, &field_as_trajectory(&rec.estimate)))?;
    ctx.note("linearized_region_error", finite_or_null(region_error(&g, &fam.region, &lin.d, &pair.difference())));
    ctx.note("linearized_flagged_nodes", lin.flagged.len());
    ctx.note("adjoint_error", finite_or_null(recovery_error(&g, &pair, &rec.estimate)));
    ctx.note("iterations", rec.history.len() - 1);
    ctx.note("converged", rec.converged);
    ctx.note("line_search_failed", rec.line_search_failed);
    ctx.note("final_objective", finite_or_null(*rec.history.last().unwrap_or(&0.0)));
    ctx.note("r_lin", finite_or_null(stab.r_lin));
    ctx.note("clamped", pair.clamped);
    Ok(())
}
