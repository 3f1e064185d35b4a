//! Recovery of the vector potential from Neumann traces of ∂t(u − ũ) and
//! ∂t²(u − ũ): admissible potential pairs, the difference chain (v, w, y),
//! synthetic observations, stability ratios, the pointwise linearized
//! inversion of y(0) = −2χ′(0)(ã − a)·∇u₀ and a discrete-adjoint least-squares
//! reconstruction.

use crate::carleman::{boundary_integral, initial_damping, WeightBase};
use crate::error::{Error, Result};
use crate::grid::{axis_derivative, axis_derivative_transpose, gradient, normal_derivative_at, BoundarySubset, DivFreeProjector, Grid, VectorField, C64};
use crate::hamiltonian::{
    extend_time_symmetric, fmt, solve_chain, solve_derivative_systems, ChainSource, CnStep, Gauge, InteriorMap, MagneticPotential, Op, Parity,
    TimeProfile, Trajectory,
};
use crate::rng::{substream, sym, Stream};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Smallest admissible singular-value floor of DU₀ on the reconstruction region.
pub const MU_MIN: f64 = 1e-3;

/// Nodewise condition number above which the linearized inversion is not trusted.
pub const COND_MAX: f64 = 1e8;

/// Interior nodes farther than `collar` from Γ.
pub fn reconstruction_region(g: &Grid, collar: f64) -> Vec<bool> {
    let mask = g.collar_mask(collar);
    (0..g.nodes()).map(|p| !g.is_boundary(p) && !mask[p]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyPreset {
    /// Sine products with wavenumbers (1,1), (2,1), (1,2), (2,2), …; the
    /// gradients jointly span ℝⁿ at every interior node once n > dim.
    Spanning,
    /// sin(πx_j/L_j)(1 + ½cos(πx_j/L_j))·Π_{i≠j} sin(πx_i/L_i), one per axis.
    Product,
}

/// Real initial states u_{0,j} with closed-form gradients, DU₀ and its
/// smallest singular value on the reconstruction region.
#[derive(Clone, Debug)]
pub struct InitialFamily {
    pub fields: Vec<Vec<f64>>,
    pub grads: Vec<VectorField>,
    pub region: Vec<bool>,
    /// Smallest singular value of DU₀ at each node (0 outside the region).
    pub mu1: Vec<f64>,
    /// min of `mu1` over the region.
    pub mu: f64,
}

impl InitialFamily {
    pub fn n(&self) -> usize {
        self.fields.len()
    }

    /// Rows ∇u_{0,j}(x_p).
    pub fn jacobian(&self, p: usize) -> Vec<[f64; 2]> {
        self.grads.iter().map(|g| g.at(p)).collect()
    }

    pub fn complex(&self, j: usize) -> Vec<C64> {
        self.fields[j].iter().map(|&v| C64::new(v, 0.0)).collect()
    }

    pub fn scaled(&self, c: f64) -> InitialFamily {
        InitialFamily {
            fields: self.fields.iter().map(|f| f.iter().map(|v| v * c).collect()).collect(),
            grads: self.grads.iter().map(|g| g.scale(c)).collect(),
            region: self.region.clone(),
            mu1: self.mu1.iter().map(|m| m * c.abs()).collect(),
            mu: self.mu * c.abs(),
        }
    }
}

/// Smallest and largest singular values of an n×dim matrix given by rows.
pub fn singular_range(rows: &[[f64; 2]], dim: usize) -> (f64, f64) {
    if dim == 1 {
        let s = rows.iter().map(|r| r[0] * r[0]).sum::<f64>().sqrt();
        return (s, s);
    }
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for r in rows {
        a += r[0] * r[0];
        b += r[0] * r[1];
        c += r[1] * r[1];
    }
    let m = 0.5 * (a + c);
    let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    ((m - d).max(0.0).sqrt(), (m + d).sqrt())
}

/// Builds a family from sampled fields and their exact gradients, rejecting
/// it when μ ≤ `mu_min` on the reconstruction region.
pub fn family_from_fields(g: &Grid, fields: Vec<Vec<f64>>, grads: Vec<VectorField>, collar: f64, mu_min: f64) -> Result<InitialFamily> {
    if fields.is_empty() || fields.len() != grads.len() {
        return Err(Error::config("initial family needs at least one field and one gradient per field"));
    }
    for (f, d) in fields.iter().zip(&grads) {
        g.check_len(f.len(), "initial family")?;
        if d.dim() != g.dim() || d.nodes() != g.nodes() {
            return Err(Error::config("initial family gradient does not match the grid"));
        }
    }
    let region = reconstruction_region(g, collar);
    let mut mu1 = vec![0.0; g.nodes()];
    let mut mu = f64::INFINITY;
    let mut bad = Vec::new();
    let square = fields.len() == g.dim();
    let det = |p: usize| {
        let r: Vec<[f64; 2]> = grads.iter().map(|d| d.at(p)).collect();
        if g.dim() == 1 {
            r[0][0]
        } else {
            r[0][0] * r[1][1] - r[0][1] * r[1][0]
        }
    };
    for p in (0..g.nodes()).filter(|&p| region[p]) {
        let rows: Vec<[f64; 2]> = grads.iter().map(|d| d.at(p)).collect();
        let mut s = singular_range(&rows, g.dim()).0;
        // A sign change of det DU₀ between neighbours means it vanishes
        // between the nodes even if no node sees it.
        if square {
            let dp = det(p);
            for a in 0..g.dim() {
                let q = p + g.stride(a);
                if q < g.nodes() && region[q] && dp * det(q) <= 0.0 {
                    s = 0.0;
                }
            }
        }
        mu1[p] = s;
        mu = mu.min(s);
        if s <= mu_min {
            bad.push(p);
        }
    }
    if mu == f64::INFINITY {
        return Err(Error::config("reconstruction region is empty; grid too coarse for the collar"));
    }
    if !bad.is_empty() {
        let pts: Vec<String> = bad.iter().take(5).map(|&p| format!("{p} at {:?}", &g.point(p)[..g.dim()])).collect();
        return Err(Error::config(format!(
            "initial family degenerate: smallest singular value of DU0 is {mu:.3e} <= {mu_min:e} at {} nodes, e.g. {}",
            bad.len(),
            pts.join(", ")
        )));
    }
    Ok(InitialFamily { fields, grads, region, mu1, mu })
}

fn spanning_modes(dim: usize, n: usize) -> Vec<[usize; 2]> {
    if dim == 1 {
        return (1..=n).map(|k| [k, 1]).collect();
    }
    let mut m = Vec::new();
    let mut total = 2;
    while m.len() < n {
        for kx in (1..total).rev() {
            m.push([kx, total - kx]);
        }
        total += 1;
    }
    m.sort_by_key(|k| (k[0] + k[1], k[1]));
    m.truncate(n);
    m
}

pub fn make_initial_family(g: &Grid, n: usize, preset: FamilyPreset, collar: f64) -> Result<InitialFamily> {
    let dim = g.dim();
    let w = |a: usize| PI / g.len(a);
    let mut fields = Vec::new();
    let mut grads = Vec::new();
    match preset {
        FamilyPreset::Spanning => {
            if n < dim {
                return Err(Error::config(format!("spanning family needs n >= {dim}")));
            }
            for k in spanning_modes(dim, n) {
                let f = |x: [f64; 2], a: usize| (k[a] as f64 * w(a) * x[a]).sin();
                let df = |x: [f64; 2], a: usize| k[a] as f64 * w(a) * (k[a] as f64 * w(a) * x[a]).cos();
                let prod = |x: [f64; 2], skip: Option<usize>| (0..dim).filter(|&a| Some(a) != skip).map(|a| f(x, a)).product::<f64>();
                fields.push(g.sample(|x| prod(x, None)));
                grads.push(VectorField { comps: (0..dim).map(|a| g.sample(|x| df(x, a) * prod(x, Some(a)))).collect() });
            }
        }
        FamilyPreset::Product => {
            if n != dim {
                return Err(Error::config(format!("product family needs n = dim = {dim}")));
            }
            for j in 0..dim {
                let base = |x: [f64; 2], a: usize| (w(a) * x[a]).sin();
                let val = move |x: [f64; 2]| {
                    let c = (w(j) * x[j]).cos();
                    (0..dim).map(|a| base(x, a)).product::<f64>() * (1.0 + 0.5 * c)
                };
                let d = move |x: [f64; 2], a: usize| {
                    let others: f64 = (0..dim).filter(|&b| b != a).map(|b| base(x, b)).product();
                    let (s, c) = ((w(a) * x[a]).sin(), (w(a) * x[a]).cos());
                    if a == j {
                        w(a) * (c * (1.0 + 0.5 * c) - 0.5 * s * s) * others
                    } else {
                        let cj = (w(j) * x[j]).cos();
                        w(a) * c * others * (1.0 + 0.5 * cj)
                    }
                };
                fields.push(g.sample(val));
                grads.push(VectorField { comps: (0..dim).map(|a| g.sample(|x| d(x, a))).collect() });
            }
        }
    }
    family_from_fields(g, fields, grads, collar, MU_MIN)
}

/// Class data and perturbation parameters for a potential pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSpec {
    pub seed: u64,
    pub delta: f64,
    pub bound: f64,
    pub a0: Vec<f64>,
    pub collar: f64,
    pub t_final: f64,
    pub modes: usize,
}

/// A reference potential and its perturbation ã = a + δ·direction.
#[derive(Clone, Debug)]
pub struct PotentialPair {
    pub a: MagneticPotential,
    pub at: MagneticPotential,
    /// Perturbation direction with unit sup-norm.
    pub direction: VectorField,
    pub delta: f64,
    /// Whether ã had to be scaled back into the sup-norm ball.
    pub clamped: bool,
}

impl PotentialPair {
    pub fn difference(&self) -> VectorField {
        self.at.field().sub(self.a.field())
    }
}

fn smooth_step(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / z).exp();
    let b = (-1.0 / (1.0 - z)).exp();
    a / (a + b)
}

/// Fraction of each axis over which the collar cutoff ramps from 0 to 1.
/// A steep ramp inflates the O(h²) constants of every discrete identity.
const RAMP: f64 = 0.25;

/// C^∞ cutoff: 0 within `w` of Γ, 1 beyond w + RAMP·L.
fn collar_cutoff(g: &Grid, w: f64) -> Vec<f64> {
    g.sample(|x| {
        (0..g.dim())
            .map(|a| {
                let r = RAMP * g.len(a);
                smooth_step((x[a] - w) / r) * smooth_step((g.len(a) - x[a] - w) / r)
            })
            .product()
    })
}

/// Random smooth variation vanishing on the collar, unit sup-norm. In 2D it
/// is projected onto discrete divergence-free fields fixed to zero on the
/// collar; in 1D the divergence constraint would force a constant, so only
/// the cutoff is applied.
fn collar_variation(g: &Grid, rng: &mut Stream, modes: usize, collar: f64) -> Result<VectorField> {
    let cut = collar_cutoff(g, collar);
    let mut comps = Vec::new();
    for _ in 0..g.dim() {
        let coef: Vec<(usize, usize, f64, f64)> = (1..=modes)
            .flat_map(|kx| (1..=if g.dim() == 2 { modes } else { 1 }).map(move |ky| (kx, ky)))
            .map(|(kx, ky)| (kx, ky, sym(rng), 2.0 * PI * sym(rng)))
            .collect();
        let f = g.sample(|x| {
            coef.iter()
                .map(|&(kx, ky, c, ph)| {
                    let arg = kx as f64 * PI * x[0] / g.len(0) + if g.dim() == 2 { ky as f64 * PI * x[1] / g.len(1) } else { 0.0 };
                    c * (arg + ph).cos() / ((kx * kx + ky * ky) as f64)
                })
                .sum::<f64>()
        });
        comps.push(f.iter().zip(&cut).map(|(v, c)| v * c).collect());
    }
    let mut v = VectorField { comps };
    if g.dim() == 2 {
        v = DivFreeProjector::new(g, Some(&g.collar_mask(collar)))?.apply(&v)?;
    }
    let s = v.sup_norm();
    if !(s > 0.0) {
        return Err(Error::config("random potential variation vanished; grid too coarse for the collar"));
    }
    Ok(v.scale(1.0 / s))
}

/// Gauge used for a grid: the discrete Coulomb gauge in 2D, relaxed in 1D.
pub fn gauge_for(g: &Grid) -> Gauge {
    if g.dim() == 1 {
        Gauge::Relaxed
    } else {
        Gauge::Coulomb
    }
}

/// Deterministic admissible pair. The variation of a takes half of the
/// headroom M − |a₀|; ã = a + δ·direction is scaled back into the ball if
/// needed.
pub fn make_potential_pair(g: &Grid, spec: &PairSpec) -> Result<PotentialPair> {
    if !(spec.delta >= 0.0) {
        return Err(Error::config("perturbation scale delta must be nonnegative"));
    }
    if spec.a0.len() != g.dim() {
        return Err(Error::config("a0 has the wrong dimension"));
    }
    let a0n = spec.a0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let room = spec.bound - a0n;
    if !(room > 0.0) {
        return Err(Error::config(format!("bound M = {} leaves no room above |a0| = {a0n}", spec.bound)));
    }
    let base = collar_variation(g, &mut substream(spec.seed, "potential"), spec.modes, spec.collar)?;
    let dir = collar_variation(g, &mut substream(spec.seed, "perturbation"), spec.modes, spec.collar)?;
    let c0 = VectorField::constant(g, &spec.a0);
    let a = c0.axpy(0.5 * room, &base);
    let mut var = a.sub(&c0).axpy(spec.delta, &dir);
    let mut clamped = false;
    for _ in 0..10 {
        let s = var.sup_norm();
        if a0n + s <= spec.bound * (1.0 - 1e-12) {
            break;
        }
        var = var.scale(room * (1.0 - 1e-9) / s);
        clamped = true;
    }
    let at = c0.add(&var);
    if at.sup_norm() > spec.bound {
        return Err(Error::config("sup-norm clamp did not converge"));
    }
    let chi = TimeProfile::default_for(spec.t_final);
    let gauge = gauge_for(g);
    let pa = MagneticPotential::new(g, a, spec.bound, &spec.a0, chi, spec.t_final, gauge, spec.collar)?;
    let pt = pa.with_field(at)?;
    Ok(PotentialPair { a: pa, at: pt, direction: dir, delta: spec.delta, clamped })
}

/// f, f′, f″ of the source (H_ã − H_a)ũ assembled pointwise from the
/// closed-form expressions, with χ^(j) exact and ∇ central.
pub fn compute_source_derivatives(
    g: &Grid,
    a: &VectorField,
    at: &VectorField,
    chi: TimeProfile,
    ut: [&Trajectory; 3],
) -> Result<[Trajectory; 3]> {
    let d = at.sub(a);
    let s = at.add(a);
    let dim = g.dim();
    let mut out = [ut[0].zeros_like(), ut[0].zeros_like(), ut[0].zeros_like()];
    for k in 0..ut[0].snaps.len() {
        let t = ut[0].time(k);
        let (x0, x1, x2) = (chi.deriv(0, t), chi.deriv(1, t), chi.deriv(2, t));
        let u = [&ut[0].snaps[k], &ut[1].snaps[k], &ut[2].snaps[k]];
        let gr: Vec<Vec<Vec<C64>>> = u.iter().map(|f| gradient(f, g)).collect::<Result<_>>()?;
        let (mut f0, mut f1, mut f2) = (Vec::with_capacity(g.nodes()), Vec::with_capacity(g.nodes()), Vec::with_capacity(g.nodes()));
        for p in 0..g.nodes() {
            let (mut dg0, mut dg1, mut dg2) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            let mut ds = 0.0;
            for c in 0..dim {
                let dc = d.comps[c][p];
                dg0 += gr[0][c][p] * dc;
                dg1 += gr[1][c][p] * dc;
                dg2 += gr[2][c][p] * dc;
                ds += dc * s.comps[c][p];
            }
            let (v0, v1, v2) = (u[0][p], u[1][p], u[2][p]);
            f0.push(x0 * (2.0 * I * dg0 + x0 * ds * v0));
            f1.push(ds * x0 * (2.0 * x1 * v0 + x0 * v1) + 2.0 * I * (x1 * dg0 + x0 * dg1));
            f2.push(
                2.0 * I * (x2 * dg0 + 2.0 * x1 * dg1 + x0 * dg2)
                    + ds * ((2.0 * x1 * x1 + 2.0 * x0 * x2) * v0 + 4.0 * x0 * x1 * v1 + x0 * x0 * v2),
            );
        }
        out[0].snaps[k] = f0;
        out[1].snaps[k] = f1;
        out[2].snaps[k] = f2;
    }
    Ok(out)
}

/// Node-sampled f, f′, f″ fed to the chained solver as step averages.
struct NodalSource<'a> {
    map: &'a InteriorMap,
    f: &'a [Trajectory; 3],
}

impl ChainSource for NodalSource<'_> {
    fn midpoint(&self, k: usize, order: usize) -> [Vec<C64>; 3] {
        let mid = |l: usize| {
            if l > order {
                return Vec::new();
            }
            let (a, b) = (&self.f[l].snaps[k], &self.f[l].snaps[k + 1]);
            self.map.restrict(&a.iter().zip(b).map(|(x, y)| (x + y) * 0.5).collect::<Vec<_>>())
        };
        [mid(0), mid(1), mid(2)]
    }

    fn initial(&self) -> [Vec<C64>; 2] {
        [self.map.restrict(&self.f[0].snaps[0]), self.map.restrict(&self.f[1].snaps[0])]
    }
}

/// v = u − ũ, w = v′, y = v″ on [−T, T], plus route diagnostics.
#[derive(Clone, Debug)]
pub struct DifferenceChain {
    pub v: Trajectory,
    pub w: Trajectory,
    pub y: Trajectory,
    /// Relative L²(0,T; L²) gaps between the direct and chained routes.
    pub route_gap: [f64; 3],
    /// Relative L² mismatch of y(0) against −2χ′(0)(ã − a)·∇u₀.
    pub y0_error: f64,
    /// The closed-form y(0).
    pub y0_exact: Vec<C64>,
}

/// −2χ′(0)(ã − a)·∇u₀ with the exact gradient of u₀.
pub fn initial_trace(d: &VectorField, grad_u0: &VectorField, chi: TimeProfile) -> Vec<C64> {
    let c = -2.0 * chi.deriv(1, 0.0);
    (0..d.nodes())
        .map(|p| {
            let (dp, gp) = (d.at(p), grad_u0.at(p));
            C64::new(c * (dp[0] * gp[0] + dp[1] * gp[1]), 0.0)
        })
        .collect()
}

fn rel_l2(g: &Grid, a: &[C64], b: &[C64]) -> f64 {
    let w = g.weights();
    let num: f64 = a.iter().zip(b).zip(w).map(|((x, y), w)| w * (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().zip(w).map(|(y, w)| w * y.norm_sqr()).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn rel_gap(g: &Grid, a: &Trajectory, b: &Trajectory) -> f64 {
    let den = b.l2_time(g);
    let num = a.sub(b).l2_time(g);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Tolerance on the relative y(0) mismatch.
pub fn y0_tolerance(g: &Grid) -> f64 {
    200.0 * g.h() * g.h()
}

/// Solves the difference chain by both routes, checks the t = 0 identity and
/// extends to [−T, T] (v even, w odd, y even).
pub fn solve_difference_chain(pair: &PotentialPair, u0: &[f64], grad_u0: &VectorField, nt: usize) -> Result<DifferenceChain> {
    let (pa, pt) = (&pair.a, &pair.at);
    let g = pa.grid();
    let t_final = pa.t_final();
    let uc: Vec<C64> = u0.iter().map(|&v| C64::new(v, 0.0)).collect();
    let (sa, st) = rayon::join(|| solve_derivative_systems(pa, &uc, t_final, nt), || solve_derivative_systems(pt, &uc, t_final, nt));
    let (sa, st) = (sa?, st?);
    let v = sa.u.sub(&st.u);
    let w = sa.du.sub(&st.du);
    let y = sa.d2u.sub(&st.d2u);
    let f = compute_source_derivatives(g, pa.field(), pt.field(), pa.chi(), [&st.u, &st.du, &st.d2u])?;
    let zero = vec![C64::new(0.0, 0.0); g.nodes()];
    let src = NodalSource { map: pa.map(), f: &f };
    let chained = solve_chain(pa, &zero, t_final, nt, 2, Some(&src))?;
    let route_gap = [rel_gap(g, &chained[0], &v), rel_gap(g, &chained[1], &w), rel_gap(g, &chained[2], &y)];
    let d = pair.difference();
    let y0_exact = initial_trace(&d, grad_u0, pa.chi());
    let y0_error = rel_l2(g, &y.snaps[0], &y0_exact);
    if v.snaps[0].iter().chain(&w.snaps[0]).any(|z| z.norm() != 0.0) {
        return Err(Error::Invariant("difference chain does not start from v(0) = w(0) = 0".into()));
    }
    let scale = y0_exact.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale > 0.0 && y0_error > y0_tolerance(g) {
        return Err(Error::Invariant(format!("y(0) identity mismatch {y0_error:.3e} exceeds {:.3e}", y0_tolerance(g))));
    }
    Ok(DifferenceChain {
        v: extend_time_symmetric(&v, Parity::Even)?,
        w: extend_time_symmetric(&w, Parity::Odd)?,
        y: extend_time_symmetric(&y, Parity::Even)?,
        route_gap,
        y0_error,
        y0_exact,
    })
}

impl DifferenceChain {
    /// y(0, ·).
    pub fn y0(&self) -> &[C64] {
        &self.y.snaps[self.y.origin()]
    }
}

/// Neumann traces of ∂t(u − ũ) and ∂t²(u − ũ) on Γ⁺ for t ∈ [0, T].
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub gamma: BoundarySubset,
    pub tau: f64,
    /// traces[j][k−1][time level][boundary node], k = 1, 2.
    pub traces: Vec<[Vec<Vec<C64>>; 2]>,
    pub noise: f64,
}

/// ‖·‖²_{L²(0,T;Γ⁺)} of one trace (trapezoid in time).
pub fn trace_norm2(tr: &[Vec<C64>], gamma: &BoundarySubset, tau: f64) -> f64 {
    let last = tr.len() - 1;
    tr.iter()
        .enumerate()
        .map(|(k, row)| {
            let wt = if k == 0 || k == last { 0.5 * tau } else { tau };
            wt * row.iter().zip(&gamma.weights).map(|(z, w)| w * z.norm_sqr()).sum::<f64>()
        })
        .sum()
}

impl ObservationSet {
    pub fn norm2(&self, j: usize, k: usize) -> f64 {
        trace_norm2(&self.traces[j][k - 1], &self.gamma, self.tau)
    }

    /// Σ_j Σ_k ‖trace‖².
    pub fn total_norm2(&self) -> f64 {
        (0..self.traces.len()).map(|j| self.norm2(j, 1) + self.norm2(j, 2)).sum()
    }
}

fn forward_traces(g: &Grid, traj: &Trajectory, gamma: &BoundarySubset) -> Vec<Vec<C64>> {
    let start = traj.origin();
    traj.snaps[start..].iter().map(|u| gamma.nodes.iter().map(|&p| normal_derivative_at(u, g, p)).collect()).collect()
}

/// Adds Gaussian noise of relative level `noise` (per-trace RMS).
fn add_noise(tr: &mut [Vec<C64>], noise: f64, rng: &mut Stream) {
    let cnt: usize = tr.iter().map(|r| r.len()).sum();
    let rms = (tr.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>() / cnt.max(1) as f64).sqrt();
    let sd = noise * rms / std::f64::consts::SQRT_2;
    for z in tr.iter_mut().flatten() {
        let (a, b): (f64, f64) = (StandardNormal.sample(rng), StandardNormal.sample(rng));
        *z += C64::new(a, b) * sd;
    }
}

/// Solves the chain for every experiment and samples its traces on Γ⁺.
pub fn simulate_observations(
    family: &InitialFamily,
    pair: &PotentialPair,
    gamma: &BoundarySubset,
    nt: usize,
    noise: f64,
    seed: u64,
) -> Result<(ObservationSet, Vec<DifferenceChain>)> {
    if !(noise >= 0.0) {
        return Err(Error::config("noise level must be nonnegative"));
    }
    let g = pair.a.grid();
    let chains: Vec<DifferenceChain> =
        (0..family.n()).into_par_iter().map(|j| solve_difference_chain(pair, &family.fields[j], &family.grads[j], nt)).collect::<Result<_>>()?;
    let mut traces = Vec::new();
    for (j, c) in chains.iter().enumerate() {
        let mut t1 = forward_traces(g, &c.w, gamma);
        let mut t2 = forward_traces(g, &c.y, gamma);
        if noise > 0.0 {
            add_noise(&mut t1, noise, &mut substream(seed, &format!("noise-{j}-1")));
            add_noise(&mut t2, noise, &mut substream(seed, &format!("noise-{j}-2")));
        }
        traces.push([t1, t2]);
    }
    Ok((ObservationSet { gamma: gamma.clone(), tau: chains[0].y.tau, traces, noise }, chains))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub seed: u64,
    pub delta: f64,
    /// ‖ã − a‖_{L²(Ω)}.
    pub numerator: f64,
    /// Σ_j (‖∂ν w_j‖² + ‖∂ν y_j‖²).
    pub d_sq: f64,
    pub d_lin: f64,
    pub r_sq: f64,
    pub r_lin: f64,
    pub violation: bool,
}

pub fn stability_ratio(pair: &PotentialPair, obs: &ObservationSet, seed: u64) -> StabilityReport {
    let g = pair.a.grid();
    let numerator = pair.difference().l2(g);
    let d_sq = obs.total_norm2();
    let d_lin = d_sq.sqrt();
    let r = |den: f64| if numerator == 0.0 { 0.0 } else { numerator / den };
    StabilityReport {
        seed,
        delta: pair.delta,
        numerator,
        d_sq,
        d_lin,
        r_sq: r(d_sq),
        r_lin: r(d_lin),
        violation: numerator > 0.0 && d_sq == 0.0,
    }
}

/// Least squares for an n×dim system (dim ≤ 2) by modified Gram–Schmidt.
/// Returns None when the columns are dependent.
pub fn lstsq_small(rows: &[[f64; 2]], dim: usize, rhs: &[f64]) -> Option<[f64; 2]> {
    let n = rows.len();
    let mut q: Vec<Vec<f64>> = (0..dim).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let mut r = [[0.0; 2]; 2];
    for c in 0..dim {
        for prev in 0..c {
            let dot: f64 = (0..n).map(|i| q[prev][i] * q[c][i]).sum();
            r[prev][c] = dot;
            for i in 0..n {
                q[c][i] -= dot * q[prev][i];
            }
        }
        let nrm = q[c].iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return None;
        }
        r[c][c] = nrm;
        q[c].iter_mut().for_each(|v| *v /= nrm);
    }
    let qb: Vec<f64> = (0..dim).map(|c| (0..n).map(|i| q[c][i] * rhs[i]).sum()).collect();
    let mut x = [0.0; 2];
    for c in (0..dim).rev() {
        let s: f64 = (c + 1..dim).map(|k| r[c][k] * x[k]).sum();
        x[c] = (qb[c] - s) / r[c][c];
    }
    Some(x)
}

/// Closed-form inverse of a 2×2 system.
pub fn solve_2x2(m: [[f64; 2]; 2], b: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det == 0.0 {
        return None;
    }
    Some([(m[1][1] * b[0] - m[0][1] * b[1]) / det, (m[0][0] * b[1] - m[1][0] * b[0]) / det])
}

#[derive(Clone, Debug)]
pub struct LinearizedEstimate {
    pub d: VectorField,
    /// Region nodes whose DU₀ condition number exceeded the cutoff.
    pub flagged: Vec<usize>,
}

/// Solves DU₀(x)·d(x) = −y(0,x)/(2χ′(0)) nodewise on the reconstruction
/// region (least squares when n > dim); zero elsewhere.
pub fn linearized_reconstruct(g: &Grid, family: &InitialFamily, y0: &[Vec<C64>], chi_prime0: f64) -> Result<LinearizedEstimate> {
    if y0.len() != family.n() {
        return Err(Error::config("one y(0) field per experiment is required"));
    }
    if chi_prime0 == 0.0 {
        return Err(Error::config("chi'(0) must be nonzero"));
    }
    let dim = g.dim();
    let mut d = VectorField::zeros(g);
    let mut ok = vec![false; g.nodes()];
    let mut flagged = Vec::new();
    for p in (0..g.nodes()).filter(|&p| family.region[p]) {
        let rows = family.jacobian(p);
        let (lo, hi) = singular_range(&rows, dim);
        if lo == 0.0 || hi / lo > COND_MAX {
            flagged.push(p);
            continue;
        }
        let rhs: Vec<f64> = y0.iter().map(|y| -y[p].re / (2.0 * chi_prime0)).collect();
        let x = if rows.len() == 2 && dim == 2 {
            solve_2x2([rows[0], rows[1]], [rhs[0], rhs[1]])
        } else {
            lstsq_small(&rows, dim, &rhs)
        };
        match x {
            Some(x) => {
                for c in 0..dim {
                    d.comps[c][p] = x[c];
                }
                ok[p] = true;
            }
            None => flagged.push(p),
        }
    }
    let good: Vec<usize> = (0..g.nodes()).filter(|&p| ok[p]).collect();
    for &p in &flagged {
        let x = g.point(p);
        let near = good.iter().min_by(|&&a, &&b| {
            let da = dist2(g.point(a), x);
            let db = dist2(g.point(b), x);
            da.total_cmp(&db)
        });
        if let Some(&q) = near {
            for c in 0..dim {
                d.comps[c][p] = d.comps[c][q];
            }
        }
    }
    Ok(LinearizedEstimate { d, flagged })
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Relative L² error of an estimate of ã − a on the reconstruction region.
pub fn region_error(g: &Grid, region: &[bool], est: &VectorField, exact: &VectorField) -> f64 {
    let w = g.weights();
    let (mut num, mut den) = (0.0, 0.0);
    for p in (0..g.nodes()).filter(|&p| region[p]) {
        let (e, x) = (est.at(p), exact.at(p));
        num += w[p] * ((e[0] - x[0]).powi(2) + (e[1] - x[1]).powi(2));
        den += w[p] * (x[0] * x[0] + x[1] * x[1]);
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceBoundRow {
    pub s: f64,
    pub lambda: f64,
    /// ‖e^{−sη(0,·)}y(0,·)‖² from the solved y(0), summed over experiments.
    pub i_direct: f64,
    /// The same through y(0) = −2χ′(0)(ã − a)·∇u₀.
    pub i_identity: f64,
    pub bracket: f64,
    pub ratio: f64,
    /// ratio · s^{1/2} λ.
    pub normalized: f64,
    pub log_scale: f64,
}

/// 𝓘 = Σ_j ‖e^{−sη(0)}y_j(0)‖² against Σ_j Σ_{ρ=w,y} ∫∫_{Γ⁺} e^{−2sη}φ∂νβ|∂νρ|²
/// + s^{−1}λ^{−1}‖e^{−sη(0)}(ã − a)‖², over an (s, λ) sweep.
pub fn check_initial_trace_bound(
    base: &WeightBase,
    chains: &[DifferenceChain],
    gamma: &BoundarySubset,
    d: &VectorField,
    s_list: &[f64],
    lambdas: &[f64],
) -> Result<Vec<TraceBoundRow>> {
    let g = &base.grid;
    let t_final = chains.first().map(|c| c.y.tau * c.y.steps() as f64).ok_or_else(|| Error::config("no chains"))?;
    let wts = g.weights();
    let pts: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| s_list.iter().map(move |&s| (s, l))).collect();
    pts.par_iter()
        .map(|&(s, l)| {
            let w = base.with_params(l, s, t_final)?;
            let damp = initial_damping(&w);
            let (mut i_direct, mut i_identity, mut bnd) = (0.0, 0.0, 0.0);
            for c in chains {
                for p in 0..g.nodes() {
                    let e2 = damp[p] * damp[p] * wts[p];
                    i_direct += e2 * c.y0()[p].norm_sqr();
                    i_identity += e2 * c.y0_exact[p].norm_sqr();
                }
                bnd += boundary_integral(&w, &c.y, gamma)? + boundary_integral(&w, &c.w, gamma)?;
            }
            let dn: f64 = (0..g.nodes()).map(|p| damp[p] * damp[p] * wts[p] * d.abs2_at(p)).sum();
            let bracket = bnd + dn / (s * l);
            let ratio = if i_direct == 0.0 { 0.0 } else { i_direct / bracket };
            Ok(TraceBoundRow { s, lambda: l, i_direct, i_identity, bracket, ratio, normalized: ratio * s.sqrt() * l, log_scale: w.log_scale() })
        })
        .collect()
}

/// Sparse Neumann-trace rows on interior unknowns.
struct TraceMap {
    rows: Vec<Vec<(usize, f64)>>,
    weights: Vec<f64>,
}

impl TraceMap {
    fn new(g: &Grid, map: &InteriorMap, gamma: &BoundarySubset) -> Self {
        let rows = gamma
            .nodes
            .iter()
            .map(|&p| {
                let mut e = vec![0.0; g.nodes()];
                let mut row = Vec::new();
                // The one-sided stencil touches p and two inward neighbours.
                let face = g.face(p).expect("boundary node");
                let s = g.stride(face.axis());
                let inward: Vec<usize> = match face.normal()[face.axis()] > 0.0 {
                    true => vec![p - s, p - 2 * s],
                    false => vec![p + s, p + 2 * s],
                };
                for q in inward {
                    if let Some(k) = map.index(q) {
                        e[q] = 1.0;
                        row.push((k, normal_derivative_at(&e, g, p)));
                        e[q] = 0.0;
                    }
                }
                row
            })
            .collect();
        TraceMap { rows, weights: gamma.weights.clone() }
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.rows.iter().map(|r| r.iter().map(|&(k, c)| x[k] * c).sum()).collect()
    }

    /// Nᵀ W r on interior unknowns.
    fn adjoint(&self, r: &[C64], n: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); n];
        for ((row, w), v) in self.rows.iter().zip(&self.weights).zip(r) {
            for &(k, c) in row {
                out[k] += v * (c * w);
            }
        }
        out
    }
}

/// Least-squares misfit of boundary traces as a function of the potential,
/// with an H¹ penalty towards a₀, and its discrete adjoint gradient.
pub struct AdjointProblem {
    reference: MagneticPotential,
    family: InitialFamily,
    gamma: BoundarySubset,
    trace: TraceMap,
    nt: usize,
    /// Target traces of ∂ν∂tᵏu_j[b] for k = 1, 2.
    targets: Vec<[Vec<Vec<C64>>; 2]>,
    /// Nodes where b may differ from a₀.
    pub free: Vec<bool>,
    pub alpha_reg: f64,
    projector: Option<DivFreeProjector>,
}

/// Objective value split into misfit and penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub misfit: f64,
    pub penalty: f64,
}

impl Objective {
    pub fn total(&self) -> f64 {
        self.misfit + self.penalty
    }
}

impl AdjointProblem {
    /// Targets are ∂ν∂tᵏu_j[a] − observation, i.e. the traces under ã. With
    /// `alpha_reg = None` the default 1e−6·‖data‖² is used.
    pub fn new(reference: &MagneticPotential, family: &InitialFamily, obs: &ObservationSet, alpha_reg: Option<f64>) -> Result<Self> {
        let g = reference.grid().clone();
        let nt = obs.traces.first().map(|t| t[0].len() - 1).ok_or_else(|| Error::config("observation set is empty"))?;
        if obs.traces.len() != family.n() {
            return Err(Error::config("observation set and initial family disagree on the number of experiments"));
        }
        let trace = TraceMap::new(&g, reference.map(), &obs.gamma);
        let t_final = obs.tau * nt as f64;
        if (t_final - reference.t_final()).abs() > 1e-12 * t_final {
            return Err(Error::config("observation horizon differs from the potential's final time"));
        }
        let targets = (0..family.n())
            .into_par_iter()
            .map(|j| {
                let chain = solve_chain(reference, &family.complex(j), t_final, nt, 2, None)?;
                let mut out: [Vec<Vec<C64>>; 2] = [Vec::new(), Vec::new()];
                for l in 1..=2 {
                    out[l - 1] = chain[l]
                        .snaps
                        .iter()
                        .zip(&obs.traces[j][l - 1])
                        .map(|(u, o)| trace.apply(&reference.map().restrict(u)).iter().zip(o).map(|(a, b)| a - b).collect())
                        .collect();
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let free = reconstruction_region(&g, reference.collar());
        let projector = if g.dim() == 2 { Some(DivFreeProjector::new(&g, Some(&g.collar_mask(reference.collar())))?) } else { None };
        let alpha_reg = alpha_reg.unwrap_or(1e-6 * obs.total_norm2());
        Ok(AdjointProblem { reference: reference.clone(), family: family.clone(), gamma: obs.gamma.clone(), trace, nt, targets, free, alpha_reg, projector })
    }

    pub fn grid(&self) -> &Grid {
        self.reference.grid()
    }

    pub fn gamma(&self) -> &BoundarySubset {
        &self.gamma
    }

    fn a0_field(&self) -> VectorField {
        VectorField::constant(self.grid(), self.reference.a0())
    }

    /// Projects a direction onto admissible variations (zero off the free
    /// set; discretely divergence-free in 2D).
    pub fn project_direction(&self, v: &VectorField) -> Result<VectorField> {
        let mut out = v.clone();
        for c in out.comps.iter_mut() {
            for (x, &f) in c.iter_mut().zip(&self.free) {
                if !f {
                    *x = 0.0;
                }
            }
        }
        match &self.projector {
            Some(p) => p.apply(&out),
            None => Ok(out),
        }
    }

    /// Maps a candidate into the admissible class: project the variation,
    /// then scale it back into the sup-norm ball.
    pub fn admissible(&self, b: &VectorField) -> Result<VectorField> {
        let a0 = self.a0_field();
        let var = self.project_direction(&b.sub(&a0))?;
        let a0n = self.reference.a0().iter().map(|v| v * v).sum::<f64>().sqrt();
        let room = self.reference.bound() - a0n;
        let s = var.sup_norm();
        let var = if a0n + s > self.reference.bound() { var.scale(room * (1.0 - 1e-9) / s) } else { var };
        Ok(a0.add(&var))
    }

    fn penalty(&self, b: &VectorField) -> (f64, VectorField) {
        let g = self.grid();
        let e = b.sub(&self.a0_field());
        let w = g.weights();
        let mut val = 0.0;
        let mut grad = VectorField::zeros(g);
        for (c, ec) in e.comps.iter().enumerate() {
            for p in 0..g.nodes() {
                val += w[p] * ec[p] * ec[p];
                grad.comps[c][p] += 2.0 * w[p] * ec[p];
            }
            for ax in 0..g.dim() {
                let d = axis_derivative(ec, g, ax);
                let wd: Vec<f64> = d.iter().zip(w).map(|(x, w)| w * x).collect();
                val += d.iter().zip(&wd).map(|(x, y)| x * y).sum::<f64>();
                for (gv, t) in grad.comps[c].iter_mut().zip(axis_derivative_transpose(&wd, g, ax)) {
                    *gv += 2.0 * t;
                }
            }
        }
        (self.alpha_reg * val, grad.scale(self.alpha_reg))
    }

    fn weights_t(&self, k: usize) -> f64 {
        let tau = self.reference.t_final() / self.nt as f64;
        if k == 0 || k == self.nt {
            0.5 * tau
        } else {
            tau
        }
    }

    /// Forward chains of every experiment on interior unknowns.
    fn forward(&self, p: &MagneticPotential) -> Result<Vec<[Vec<Vec<C64>>; 3]>> {
        let t_final = p.t_final();
        (0..self.family.n())
            .into_par_iter()
            .map(|j| {
                let c = solve_chain(p, &self.family.complex(j), t_final, self.nt, 2, None)?;
                let m = p.map();
                let r = |t: &Trajectory| t.snaps.iter().map(|u| m.restrict(u)).collect::<Vec<_>>();
                Ok([r(&c[0]), r(&c[1]), r(&c[2])])
            })
            .collect()
    }

    fn misfit_of(&self, j: usize, x: &[Vec<Vec<C64>>; 3]) -> f64 {
        let mut acc = 0.0;
        for l in 1..=2 {
            for k in 0..=self.nt {
                let r = self.trace.apply(&x[l][k]);
                let s: f64 = r.iter().zip(&self.targets[j][l - 1][k]).zip(&self.trace.weights).map(|((a, b), w)| w * (a - b).norm_sqr()).sum();
                acc += 0.5 * self.weights_t(k) * s;
            }
        }
        acc
    }

    pub fn objective(&self, b: &VectorField) -> Result<Objective> {
        let p = self.reference.with_field(b.clone())?;
        let xs = self.forward(&p)?;
        let misfit = xs.iter().enumerate().map(|(j, x)| self.misfit_of(j, x)).sum();
        Ok(Objective { misfit, penalty: self.penalty(b).0 })
    }

    /// Objective and its gradient with respect to nodal values of b (before
    /// projection onto admissible directions).
    pub fn gradient(&self, b: &VectorField) -> Result<(Objective, VectorField)> {
        let p = self.reference.with_field(b.clone())?;
        let xs = self.forward(&p)?;
        let parts: Vec<(f64, VectorField)> =
            xs.par_iter().enumerate().map(|(j, x)| self.adjoint_one(&p, j, x)).collect::<Result<_>>()?;
        let g = self.grid();
        let mut grad = VectorField::zeros(g);
        let mut misfit = 0.0;
        for (m, gr) in parts {
            misfit += m;
            grad = grad.add(&gr);
        }
        let (pen, pg) = self.penalty(b);
        Ok((Objective { misfit, penalty: pen }, grad.add(&pg)))
    }

    fn adjoint_one(&self, p: &MagneticPotential, j: usize, x: &[Vec<Vec<C64>>; 3]) -> Result<(f64, VectorField)> {
        let g = self.grid();
        let nt = self.nt;
        let n = p.map().len();
        let tau = p.t_final() / nt as f64;
        let misfit = self.misfit_of(j, x);
        let gj = |l: usize, k: usize| -> Vec<C64> {
            let r: Vec<C64> = self.trace.apply(&x[l][k]).iter().zip(&self.targets[j][l - 1][k]).map(|(a, b)| (a - b) * self.weights_t(k)).collect();
            self.trace.adjoint(&r, n)
        };
        let tm = |k: usize| (k as f64 + 0.5) * tau;
        let steps: Vec<CnStep> = (0..nt).map(|k| CnStep::new(p, tm(k), tau)).collect::<Result<_>>()?;
        let hmat: Vec<_> = (0..nt).map(|k| p.matrix(Op::H, tm(k))).collect();
        let d1: Vec<_> = (0..nt).map(|k| p.matrix(Op::Deriv(1), tm(k))).collect();
        let d2: Vec<_> = (0..nt).map(|k| p.matrix(Op::Deriv(2), tm(k))).collect();
        // E*_k μ = μ + iτ/2 H*_k μ.
        let e_adj = |k: usize, mu: &[C64]| -> Vec<C64> { mu.iter().zip(hmat[k].mul_adjoint(mu)).map(|(m, h)| m + I * (0.5 * tau) * h).collect() };
        let zero = vec![C64::new(0.0, 0.0); n];
        let mut mu: [Vec<Vec<C64>>; 3] = [vec![zero.clone(); nt], vec![zero.clone(); nt], vec![zero.clone(); nt]];
        for k in (1..=nt).rev() {
            let km = k - 1;
            let has_next = k < nt;
            let mut r2: Vec<C64> = gj(2, k).iter().map(|v| -v).collect();
            if has_next {
                axpy(&mut r2, C64::new(1.0, 0.0), &e_adj(k, &mu[2][k]));
            }
            mu[2][km] = steps[km].solve_adjoint(&r2)?;
            let mut r1: Vec<C64> = gj(1, k).iter().map(|v| -v).collect();
            axpy(&mut r1, I * tau, &d1[km].mul_adjoint(&mu[2][km]));
            if has_next {
                axpy(&mut r1, C64::new(1.0, 0.0), &e_adj(k, &mu[1][k]));
                axpy(&mut r1, I * tau, &d1[k].mul_adjoint(&mu[2][k]));
            }
            mu[1][km] = steps[km].solve_adjoint(&r1)?;
            let mut r0 = zero.clone();
            axpy(&mut r0, I * (0.5 * tau), &d1[km].mul_adjoint(&mu[1][km]));
            axpy(&mut r0, I * (0.5 * tau), &d2[km].mul_adjoint(&mu[2][km]));
            if has_next {
                axpy(&mut r0, C64::new(1.0, 0.0), &e_adj(k, &mu[0][k]));
                axpy(&mut r0, I * (0.5 * tau), &d1[k].mul_adjoint(&mu[1][k]));
                axpy(&mut r0, I * (0.5 * tau), &d2[k].mul_adjoint(&mu[2][k]));
            }
            mu[0][km] = steps[km].solve_adjoint(&r0)?;
        }
        let mut acc = Sensitivity::new(g);
        let sum = |l: usize, k: usize| -> Vec<C64> { x[l][k].iter().zip(&x[l][k + 1]).map(|(a, b)| a + b).collect() };
        for k in 0..nt {
            let t = tm(k);
            let (s0, s1, s2) = (sum(0, k), sum(1, k), sum(2, k));
            let half = I * (0.5 * tau);
            acc.add(p, Op::H, t, &mu[0][k], &s0, half);
            acc.add(p, Op::H, t, &mu[1][k], &s1, half);
            acc.add(p, Op::Deriv(1), t, &mu[1][k], &s0, half);
            acc.add(p, Op::H, t, &mu[2][k], &s2, half);
            acc.add(p, Op::Deriv(2), t, &mu[2][k], &s0, half);
            acc.add(p, Op::Deriv(1), t, &mu[2][k], &s1, I * tau);
        }
        // x2(0) = −i(H′(0)u₀ + H(0)x1(0)); H(0) carries no potential since χ(0) = 0.
        let mut rho = gj(2, 0);
        axpy(&mut rho, C64::new(-1.0, 0.0), &e_adj(0, &mu[2][0]));
        acc.add(p, Op::Deriv(1), 0.0, &rho, &x[0][0], -I);
        Ok((misfit, acc.grad))
    }
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Accumulates Re(c·⟨μ, (∂Op/∂b) x⟩) for every nodal value of b.
struct Sensitivity {
    grad: VectorField,
}

impl Sensitivity {
    fn new(g: &Grid) -> Self {
        Sensitivity { grad: VectorField::zeros(g) }
    }

    fn add(&mut self, p: &MagneticPotential, op: Op, t: f64, mu: &[C64], x: &[C64], c: C64) {
        let (_, cc, cm) = p.coeffs(op, t);
        if cc == 0.0 && cm == 0.0 {
            return;
        }
        let g = p.grid();
        let map = p.map();
        let b = p.field();
        let q = 1.0 / (4.0 * g.h());
        let fc = c * I * cc;
        let fm = c * cm;
        for k in 0..map.len() {
            let node = map.node(k);
            let m = mu[k].conj();
            for d in 0..g.dim() {
                let s = g.stride(d);
                let (pp, pm) = (node + s, node - s);
                let gd = &mut self.grad.comps[d];
                if let Some(kk) = map.index(pp) {
                    let v = (fc * m * x[kk]).re * q;
                    gd[node] += v;
                    gd[pp] += v;
                }
                if let Some(kk) = map.index(pm) {
                    let v = -(fc * m * x[kk]).re * q;
                    gd[node] += v;
                    gd[pm] += v;
                }
                let v = (fc * m * x[k]).re * q;
                gd[pp] -= v;
                gd[pm] += v;
                gd[node] += (fm * m * x[k]).re * 2.0 * b.comps[d][node];
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructOptions {
    pub iterations: usize,
    pub grad_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions { iterations: 200, grad_tol: 1e-6, armijo: 1e-4, max_backtracks: 40 }
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub estimate: VectorField,
    /// Objective after each accepted iterate (index 0 is the start).
    pub history: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub converged: bool,
    pub line_search_failed: bool,
}

/// Projected gradient descent with Barzilai–Borwein trial steps and Armijo
/// backtracking, starting from `start` (projected into the admissible class).
pub fn adjoint_reconstruct(problem: &AdjointProblem, start: &VectorField, opts: &ReconstructOptions) -> Result<Reconstruction> {
    let mut b = problem.admissible(start)?;
    let (obj, raw) = problem.gradient(&b)?;
    let mut j = obj.total();
    let mut grad = problem.project_direction(&raw)?;
    let g0 = grad.dot(&grad).sqrt();
    let mut history = vec![j];
    let mut grad_norms = vec![g0];
    let mut step = if g0 > 0.0 { 1.0 / g0 } else { 0.0 };
    let mut converged = j == 0.0 || g0 == 0.0;
    let mut line_search_failed = false;
    let mut it = 0;
    while !converged && it < opts.iterations {
        it += 1;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let trial = problem.admissible(&b.axpy(-t, &grad))?;
            let jt = problem.objective(&trial)?.total();
            let decrease = grad.dot(&b.sub(&trial));
            if jt <= j - opts.armijo * decrease && jt.is_finite() {
                accepted = Some((trial, jt));
                break;
            }
            t *= 0.5;
        }
        let Some((nb, nj)) = accepted else {
            line_search_failed = true;
            break;
        };
        if nj > j {
            return Err(Error::numerical(format!("objective increased at iteration {it}: history {history:?}"), nj));
        }
        let (_, raw) = problem.gradient(&nb)?;
        let ng = problem.project_direction(&raw)?;
        let s = nb.sub(&b);
        let yv = ng.sub(&grad);
        let sy = s.dot(&yv);
        step = if sy > 0.0 { s.dot(&s) / sy } else { 2.0 * t };
        b = nb;
        j = nj;
        grad = ng;
        let gn = grad.dot(&grad).sqrt();
        history.push(j);
        grad_norms.push(gn);
        if gn <= opts.grad_tol * g0 || j == 0.0 {
            converged = true;
        }
    }
    Ok(Reconstruction { estimate: b, history, grad_norms, converged, line_search_failed })
}

/// Observation table: experiment, k, t, boundary node, re, im.
pub fn write_observations_csv(w: impl Write, g: &Grid, obs: &ObservationSet) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record([
        "experiment",
        "time derivative order k",
        "t [time]",
        "boundary node",
        "x",
        "y",
        "Re normal derivative of k-th time derivative of u-u~ [amplitude/length]",
        "Im normal derivative of k-th time derivative of u-u~ [amplitude/length]",
    ])
    .map_err(io)?;
    for (j, tr) in obs.traces.iter().enumerate() {
        for (k, series) in tr.iter().enumerate() {
            for (ti, row) in series.iter().enumerate() {
                for (z, &p) in row.iter().zip(&obs.gamma.nodes) {
                    let x = g.point(p);
                    wr.write_record([
                        j.to_string(),
                        (k + 1).to_string(),
                        fmt(ti as f64 * obs.tau),
                        p.to_string(),
                        fmt(x[0]),
                        fmt(x[1]),
                        fmt(z.re),
                        fmt(z.im),
                    ])
                    .map_err(io)?;
                }
            }
        }
    }
    wr.flush()?;
    Ok(())
}

/// Stability table: seed, δ, numerator, both denominators and ratios.
pub fn write_stability_csv(w: impl Write, rows: &[StabilityReport]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record([
        "seed",
        "delta [potential]",
        "L2 norm of potential difference [potential*length^(n/2)]",
        "sum of squared boundary trace norms D_sq [data^2]",
        "square root D_lin [data]",
        "R_sq = numerator/D_sq",
        "R_lin = numerator/D_lin",
        "violation",
    ])
    .map_err(io)?;
    for r in rows {
        wr.write_record([
            r.seed.to_string(),
            fmt(r.delta),
            fmt(r.numerator),
            fmt(r.d_sq),
            fmt(r.d_lin),
            fmt(r.r_sq),
            fmt(r.r_lin),
            r.violation.to_string(),
        ])
        .map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reconstruction history: iteration, objective, projected gradient norm.
pub fn write_history_csv(w: impl Write, rec: &Reconstruction) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    wr.write_record(["iteration", "least-squares objective J [data^2*time]", "projected gradient norm [data^2*time/potential]"]).map_err(io)?;
    for (i, (j, gn)) in rec.history.iter().zip(&rec.grad_norms).enumerate() {
        wr.write_record([i.to_string(), fmt(*j), fmt(*gn)]).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Nodal potential table: node, coordinates, components of each field.
pub fn write_fields_csv(w: impl Write, g: &Grid, names: &[&str], fields: &[&VectorField]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut head = vec!["node".to_string(), "x [length]".to_string(), "y [length]".to_string()];
    for n in names {
        for c in 0..g.dim() {
            head.push(format!("{n} component {c} [potential]"));
        }
    }
    wr.write_record(&head).map_err(io)?;
    for p in 0..g.nodes() {
        let x = g.point(p);
        let mut row = vec![p.to_string(), fmt(x[0]), fmt(x[1])];
        for f in fields {
            for c in 0..g.dim() {
                row.push(fmt(f.comps[c][p]));
            }
        }
        wr.write_record(&row).map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}
